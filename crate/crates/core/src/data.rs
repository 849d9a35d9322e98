//! Tabular data: CSV ingestion, preprocessing, stratified splits and a
//! synthetic generator with controllable label bias and attribute leakage.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{PfaError, Result};
use crate::nn::DenseMatrix;

/// Preprocessed dataset: standardized features, binary task label `y` and
/// binary sensitive attribute `s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularDataset {
    pub x: DenseMatrix,
    pub y: Vec<u8>,
    pub s: Vec<u8>,
    pub feature_names: Vec<String>,
    pub manifest: Manifest,
}

impl TabularDataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            x: self.x.select_rows(idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            s: idx.iter().map(|&i| self.s[i]).collect(),
            feature_names: self.feature_names.clone(),
            manifest: self.manifest.clone(),
        }
    }

    pub fn y_f64(&self) -> Vec<f64> {
        self.y.iter().map(|&v| f64::from(v)).collect()
    }

    pub fn s_f64(&self) -> Vec<f64> {
        self.s.iter().map(|&v| f64::from(v)).collect()
    }

    pub fn group_sizes(&self) -> [usize; 2] {
        let ones = self.s.iter().filter(|&&v| v != 0).count();
        [self.len() - ones, ones]
    }
}

/// How one raw column becomes model features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnTransform {
    Numeric {
        name: String,
        mean: f64,
        std: f64,
        fill: f64,
    },
    Categorical {
        name: String,
        levels: Vec<String>,
        fill: String,
    },
    /// The sensitive attribute fed to the model as a standardized 0/1 column.
    Sensitive { name: String, mean: f64, std: f64 },
}

/// Everything needed to replay preprocessing on raw rows.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub columns: Vec<ColumnTransform>,
}

fn default_true() -> bool {
    true
}

/// Describes how to read a CSV corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub csv_path: PathBuf,
    pub label_column: String,
    /// Raw values mapped to `y = 1`.
    pub positive_values: Vec<String>,
    pub sensitive_column: String,
    /// Raw values mapped to `s = 1`.
    pub group1_values: Vec<String>,
    #[serde(default)]
    pub categorical: Vec<String>,
    #[serde(default)]
    pub drop: Vec<String>,
    /// Whether the sensitive attribute is also a model input.
    #[serde(default = "default_true")]
    pub include_sensitive_feature: bool,
    /// Tokens treated as missing in addition to the empty string.
    #[serde(default)]
    pub missing_tokens: Vec<String>,
}

impl DatasetSpec {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            PfaError::Data(format!("cannot read dataset spec {}: {e}", path.display()))
        })?;
        let mut spec: DatasetSpec = serde_json::from_str(&text)
            .map_err(|e| PfaError::Data(format!("dataset spec {}: {e}", path.display())))?;
        if spec.csv_path.is_relative() {
            if let Some(dir) = path.parent() {
                spec.csv_path = dir.join(&spec.csv_path);
            }
        }
        Ok(spec)
    }

    fn is_missing(&self, v: &str) -> bool {
        let t = v.trim();
        t.is_empty() || self.missing_tokens.iter().any(|m| m == t)
    }
}

/// Parsed CSV with raw string cells; rows lacking label or group are dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub headers: Vec<String>,
    /// Feature columns (label, sensitive and dropped columns removed), row-major.
    pub feature_columns: Vec<String>,
    pub rows: Vec<Vec<Option<String>>>,
    pub sensitive_raw: Vec<f64>,
    pub y: Vec<u8>,
    pub s: Vec<u8>,
}

impl RawTable {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

pub fn load_csv(spec: &DatasetSpec) -> Result<RawTable> {
    let file = std::fs::File::open(&spec.csv_path)
        .map_err(|e| PfaError::Data(format!("cannot open {}: {e}", spec.csv_path.display())))?;
    read_csv(file, spec)
}

/// Reads RFC-4180 CSV with a header row from any reader.
pub fn read_csv<R: std::io::Read>(reader: R, spec: &DatasetSpec) -> Result<RawTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| PfaError::Data(format!("column `{name}` not found")))
    };
    let label_idx = find(&spec.label_column)?;
    let sens_idx = find(&spec.sensitive_column)?;
    for c in spec.categorical.iter().chain(&spec.drop) {
        find(c)?;
    }
    let feature_idx: Vec<usize> = (0..headers.len())
        .filter(|&i| i != label_idx && i != sens_idx && !spec.drop.contains(&headers[i]))
        .collect();

    let mut rows = Vec::new();
    let (mut y, mut s) = (Vec::new(), Vec::new());
    for record in rdr.records() {
        let record = record?;
        let label = record.get(label_idx).unwrap_or("");
        let group = record.get(sens_idx).unwrap_or("");
        if spec.is_missing(label) || spec.is_missing(group) {
            continue;
        }
        y.push(u8::from(
            spec.positive_values.iter().any(|p| p == label.trim()),
        ));
        s.push(u8::from(
            spec.group1_values.iter().any(|p| p == group.trim()),
        ));
        rows.push(
            feature_idx
                .iter()
                .map(|&i| {
                    let v = record.get(i).unwrap_or("");
                    (!spec.is_missing(v)).then(|| v.trim().to_owned())
                })
                .collect(),
        );
    }
    if rows.is_empty() {
        return Err(PfaError::Data("dataset has no usable rows".into()));
    }
    for (name, values) in [("label", &y), ("sensitive", &s)] {
        let ones = values.iter().filter(|&&v| v == 1).count();
        if ones == 0 || ones == values.len() {
            return Err(PfaError::Data(format!(
                "{name} column does not binarize into two classes"
            )));
        }
    }
    Ok(RawTable {
        feature_columns: feature_idx.iter().map(|&i| headers[i].clone()).collect(),
        headers,
        rows,
        sensitive_raw: s.iter().map(|&v| f64::from(v)).collect(),
        y,
        s,
    })
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    (mean, if std > 0.0 { std } else { 1.0 })
}

fn median(mut values: Vec<f64>) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Fits the preprocessing manifest on the rows in `fit_on`.
pub fn fit_manifest(raw: &RawTable, spec: &DatasetSpec, fit_on: &[usize]) -> Result<Manifest> {
    if fit_on.is_empty() {
        return Err(PfaError::Data("no rows to fit preprocessing on".into()));
    }
    let mut columns = Vec::new();
    for (j, name) in raw.feature_columns.iter().enumerate() {
        if spec.categorical.contains(name) {
            let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
            for &i in fit_on {
                if let Some(v) = &raw.rows[i][j] {
                    *counts.entry(v.as_str()).or_default() += 1;
                }
            }
            let fill = counts
                .iter()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                .map(|(k, _)| (*k).to_owned())
                .unwrap_or_default();
            columns.push(ColumnTransform::Categorical {
                name: name.clone(),
                levels: counts.keys().map(|k| (*k).to_owned()).collect(),
                fill,
            });
        } else {
            let mut present = Vec::with_capacity(fit_on.len());
            for &i in fit_on {
                if let Some(v) = &raw.rows[i][j] {
                    present.push(parse_number(v, name)?);
                }
            }
            let fill = median(present.clone());
            let filled: Vec<f64> = fit_on
                .iter()
                .map(|&i| match &raw.rows[i][j] {
                    Some(v) => parse_number(v, name),
                    None => Ok(fill),
                })
                .collect::<Result<_>>()?;
            let (mean, std) = mean_std(&filled);
            columns.push(ColumnTransform::Numeric {
                name: name.clone(),
                mean,
                std,
                fill,
            });
        }
    }
    if spec.include_sensitive_feature {
        let vals: Vec<f64> = fit_on.iter().map(|&i| raw.sensitive_raw[i]).collect();
        let (mean, std) = mean_std(&vals);
        columns.push(ColumnTransform::Sensitive {
            name: spec.sensitive_column.clone(),
            mean,
            std,
        });
    }
    Ok(Manifest { columns })
}

fn parse_number(v: &str, column: &str) -> Result<f64> {
    v.parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| PfaError::Data(format!("column `{column}`: `{v}` is not numeric")))
}

/// Applies a fitted manifest to every row of the raw table.
pub fn apply_manifest(raw: &RawTable, manifest: &Manifest) -> Result<TabularDataset> {
    let mut feature_names = Vec::new();
    for c in &manifest.columns {
        match c {
            ColumnTransform::Numeric { name, .. } | ColumnTransform::Sensitive { name, .. } => {
                feature_names.push(name.clone())
            }
            ColumnTransform::Categorical { name, levels, .. } => {
                feature_names.extend(levels.iter().map(|l| format!("{name}={l}")))
            }
        }
    }
    let d = feature_names.len();
    let mut x = DenseMatrix::zeros(raw.len(), d);
    let mut raw_j = 0;
    let mut out_j = 0;
    for c in &manifest.columns {
        match c {
            ColumnTransform::Numeric {
                name,
                mean,
                std,
                fill,
            } => {
                for i in 0..raw.len() {
                    let v = match &raw.rows[i][raw_j] {
                        Some(v) => parse_number(v, name)?,
                        None => *fill,
                    };
                    x.set(i, out_j, (v - mean) / std);
                }
                raw_j += 1;
                out_j += 1;
            }
            ColumnTransform::Categorical { levels, fill, .. } => {
                for i in 0..raw.len() {
                    let v = raw.rows[i][raw_j].as_deref().unwrap_or(fill);
                    // Unseen levels encode as all zeros.
                    if let Ok(k) = levels.binary_search_by(|l| l.as_str().cmp(v)) {
                        x.set(i, out_j + k, 1.0);
                    }
                }
                raw_j += 1;
                out_j += levels.len();
            }
            ColumnTransform::Sensitive { mean, std, .. } => {
                for i in 0..raw.len() {
                    x.set(i, out_j, (raw.sensitive_raw[i] - mean) / std);
                }
                out_j += 1;
            }
        }
    }
    if raw_j != raw.feature_columns.len() {
        return Err(PfaError::Data(
            "manifest does not match the table's columns".into(),
        ));
    }
    Ok(TabularDataset {
        x,
        y: raw.y.clone(),
        s: raw.s.clone(),
        feature_names,
        manifest: manifest.clone(),
    })
}

/// One-hot encodes and standardizes the table with statistics from `fit_on`.
pub fn preprocess(raw: &RawTable, spec: &DatasetSpec, fit_on: &[usize]) -> Result<TabularDataset> {
    let manifest = fit_manifest(raw, spec, fit_on)?;
    apply_manifest(raw, &manifest)
}

/// Index split stratified on the four `(y, s)` cells.
pub fn stratified_split_indices(
    y: &[u8],
    s: &[u8],
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(PfaError::Argument(format!(
            "test fraction {test_fraction} must lie strictly between 0 and 1"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cells: [Vec<usize>; 4] = Default::default();
    for i in 0..y.len() {
        cells[usize::from(y[i] != 0) * 2 + usize::from(s[i] != 0)].push(i);
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for cell in cells.iter_mut() {
        cell.shuffle(&mut rng);
        let mut n_test = (cell.len() as f64 * test_fraction).round() as usize;
        if cell.len() >= 2 {
            n_test = n_test.clamp(1, cell.len() - 1);
        }
        test.extend_from_slice(&cell[..n_test]);
        train.extend_from_slice(&cell[n_test..]);
    }
    if train.is_empty() || test.is_empty() {
        return Err(PfaError::Data("split produced an empty partition".into()));
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

pub fn stratified_split(
    ds: &TabularDataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(TabularDataset, TabularDataset)> {
    let (train, test) = stratified_split_indices(&ds.y, &ds.s, test_fraction, seed)?;
    Ok((ds.subset(&train), ds.subset(&test)))
}

/// Loads, splits and preprocesses a CSV corpus, fitting on the train split.
pub fn prepare(
    spec: &DatasetSpec,
    test_fraction: f64,
    seed: u64,
) -> Result<(TabularDataset, TabularDataset)> {
    let raw = load_csv(spec)?;
    let (train_idx, test_idx) = stratified_split_indices(&raw.y, &raw.s, test_fraction, seed)?;
    let full = preprocess(&raw, spec, &train_idx)?;
    Ok((full.subset(&train_idx), full.subset(&test_idx)))
}

/// Settings of [`synth_biased`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n: usize,
    pub d: usize,
    /// Gap between the groups' positive-label rates.
    pub bias: f64,
    /// Fraction of feature columns shifted by the sensitive attribute.
    pub leak: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: 5000,
            d: 20,
            bias: 0.2,
            leak: 0.3,
            seed: 0,
        }
    }
}

/// Mean separation (in σ) between the two groups on leaky columns.
pub const LEAK_SEPARATION: f64 = 1.5;
/// Mean separation (in σ) between the two classes on predictive columns.
pub const LABEL_SEPARATION: f64 = 0.5;

/// Synthetic biased data. `s ~ Bernoulli(0.5)`, `P(y=1 | s) = 0.5 ± bias/2`
/// (group 1 favoured). The first `round(leak·d)` columns are Gaussians shifted
/// by `s`; the rest are Gaussians shifted by `y`. The sensitive attribute is
/// not itself a column.
pub fn synth_biased(cfg: &SynthConfig) -> Result<TabularDataset> {
    if !(0.0..1.0).contains(&cfg.bias) {
        return Err(PfaError::Argument(format!(
            "bias {} outside [0, 1)",
            cfg.bias
        )));
    }
    if !(0.0..=1.0).contains(&cfg.leak) {
        return Err(PfaError::Argument(format!(
            "leak {} outside [0, 1]",
            cfg.leak
        )));
    }
    if cfg.n == 0 || cfg.d == 0 {
        return Err(PfaError::Argument("synthetic data needs n, d >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_leak = (cfg.leak * cfg.d as f64).round() as usize;
    let mut x = DenseMatrix::zeros(cfg.n, cfg.d);
    let mut y = Vec::with_capacity(cfg.n);
    let mut s = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        let si = u8::from(rng.random::<f64>() < 0.5);
        let p_pos = 0.5
            + if si == 1 {
                cfg.bias / 2.0
            } else {
                -cfg.bias / 2.0
            };
        let yi = u8::from(rng.random::<f64>() < p_pos);
        for j in 0..cfg.d {
            let z: f64 = StandardNormal.sample(&mut rng);
            let shift = if j < n_leak {
                LEAK_SEPARATION * (f64::from(si) - 0.5)
            } else {
                LABEL_SEPARATION * (f64::from(yi) - 0.5)
            };
            x.set(i, j, z + shift);
        }
        y.push(yi);
        s.push(si);
    }
    let feature_names: Vec<String> = (0..cfg.d).map(|j| format!("x{j}")).collect();
    let mut columns = Vec::with_capacity(cfg.d);
    for (j, name) in feature_names.iter().enumerate() {
        let (mean, std) = mean_std(&x.col_values(j));
        for i in 0..cfg.n {
            x.set(i, j, (x.get(i, j) - mean) / std);
        }
        columns.push(ColumnTransform::Numeric {
            name: name.clone(),
            mean,
            std,
            fill: mean,
        });
    }
    Ok(TabularDataset {
        x,
        y,
        s,
        feature_names,
        manifest: Manifest { columns },
    })
}

/// Writes a dataset in the raw CSV layout understood by [`read_csv`]
/// (feature columns, then `y`, then `s`) together with a matching spec.
pub fn write_csv(ds: &TabularDataset, csv_path: &Path) -> Result<DatasetSpec> {
    let mut w = csv::Writer::from_path(csv_path)?;
    let mut header = ds.feature_names.clone();
    header.push("y".into());
    header.push("s".into());
    w.write_record(&header)?;
    for i in 0..ds.len() {
        let mut rec: Vec<String> = ds.x.row(i).iter().map(|v| format!("{v:?}")).collect();
        rec.push(ds.y[i].to_string());
        rec.push(ds.s[i].to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(DatasetSpec {
        csv_path: csv_path.file_name().map(PathBuf::from).unwrap_or_default(),
        label_column: "y".into(),
        positive_values: vec!["1".into()],
        sensitive_column: "s".into(),
        group1_values: vec!["1".into()],
        categorical: Vec::new(),
        drop: Vec::new(),
        include_sensitive_feature: false,
        missing_tokens: Vec::new(),
    })
}

/// Specs for the public benchmark corpora. The files are not shipped; see the
/// README for download and conversion steps. Paths are relative to `dir`.
pub mod presets {
    use super::*;

    /// UCI German Credit (`german.data` converted to CSV with the header
    /// listed in the README). Label: credit risk good (1); sensitive
    /// attribute: gender from `personal_status` (A92/A95 = female = 1).
    pub fn german_credit(dir: &Path) -> DatasetSpec {
        DatasetSpec {
            csv_path: dir.join("german_credit.csv"),
            label_column: "credit_risk".into(),
            positive_values: vec!["1".into()],
            sensitive_column: "personal_status".into(),
            group1_values: vec!["A92".into(), "A95".into()],
            categorical: [
                "checking_status",
                "credit_history",
                "purpose",
                "savings",
                "employment",
                "other_debtors",
                "property",
                "other_installment_plans",
                "housing",
                "job",
                "telephone",
                "foreign_worker",
            ]
            .map(String::from)
            .to_vec(),
            drop: Vec::new(),
            include_sensitive_feature: true,
            missing_tokens: vec!["?".into()],
        }
    }

    /// UCI Adult (`adult.data` with header). Label `income` `>50K`; sensitive `sex` (Male = 1).
    pub fn adult(dir: &Path) -> DatasetSpec {
        DatasetSpec {
            csv_path: dir.join("adult.csv"),
            label_column: "income".into(),
            positive_values: vec![">50K".into(), ">50K.".into()],
            sensitive_column: "sex".into(),
            group1_values: vec!["Male".into()],
            categorical: [
                "workclass",
                "education",
                "marital-status",
                "occupation",
                "relationship",
                "race",
                "native-country",
            ]
            .map(String::from)
            .to_vec(),
            drop: vec!["fnlwgt".into()],
            include_sensitive_feature: true,
            missing_tokens: vec!["?".into()],
        }
    }

    /// ProPublica `compas-scores-two-years.csv` reduced to the usual columns.
    /// Label `two_year_recid` = 1; sensitive `sex` (Male = 1).
    pub fn compas(dir: &Path) -> DatasetSpec {
        DatasetSpec {
            csv_path: dir.join("compas.csv"),
            label_column: "two_year_recid".into(),
            positive_values: vec!["1".into()],
            sensitive_column: "sex".into(),
            group1_values: vec!["Male".into()],
            categorical: ["race", "age_cat", "c_charge_degree"]
                .map(String::from)
                .to_vec(),
            drop: Vec::new(),
            include_sensitive_feature: true,
            missing_tokens: Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::baseline_bias;

    fn spec_for(csv: &str) -> (tempfile::TempDir, DatasetSpec) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        std::fs::write(&path, csv).unwrap();
        let spec = DatasetSpec {
            csv_path: path,
            label_column: "label".into(),
            positive_values: vec!["yes".into()],
            sensitive_column: "sex".into(),
            group1_values: vec!["F".into()],
            categorical: vec!["color".into()],
            drop: vec![],
            include_sensitive_feature: false,
            missing_tokens: vec!["?".into()],
        };
        (dir, spec)
    }

    const FIXTURE: &str = "age,color,note,label,sex\n\
        30,red,\"a, b\",yes,F\n\
        40,blue,c,no,M\n\
        ,red,d,yes,M\n\
        50,?,e,no,F\n\
        60,red,f,,F\n";

    #[test]
    fn header_only_is_an_error() {
        let (_d, mut spec) = spec_for("age,color,label,sex\n");
        spec.categorical = vec!["color".into()];
        assert!(matches!(load_csv(&spec), Err(PfaError::Data(_))));
    }

    #[test]
    fn quoted_fields_and_missing_values() {
        let (_d, mut spec) = spec_for(FIXTURE);
        spec.categorical.push("note".into());
        let raw = load_csv(&spec).unwrap();
        // Row with a missing label is dropped.
        assert_eq!(raw.len(), 4);
        assert_eq!(raw.rows[0][2].as_deref(), Some("a, b"));
        assert_eq!(raw.y, vec![1, 0, 1, 0]);
        assert_eq!(raw.s, vec![1, 0, 0, 1]);
        let all: Vec<usize> = (0..raw.len()).collect();
        let ds = preprocess(&raw, &spec, &all).unwrap();
        // age (1) + color levels blue/red (2) + note levels (4).
        assert_eq!(ds.dim(), 7);
        // Missing age is the median of 30, 40, 50.
        let age_raw: Vec<f64> = (0..4).map(|i| ds.x.get(i, 0)).collect();
        assert!((age_raw[2]).abs() < 1e-12);
        // Missing colour takes the mode (red).
        assert_eq!(ds.x.row(3)[1..3], [0.0, 1.0]);
    }

    #[test]
    fn missing_column_is_an_error() {
        let (_d, mut spec) = spec_for(FIXTURE);
        spec.label_column = "nope".into();
        assert!(load_csv(&spec).is_err());
    }

    #[test]
    fn all_numeric_keeps_dimension_and_standardizes() {
        let (_d, mut spec) = spec_for("a,b,label,sex\n1,2,yes,F\n2,4,no,M\n3,9,no,F\n4,1,yes,M\n");
        spec.categorical.clear();
        let raw = load_csv(&spec).unwrap();
        let ds = preprocess(&raw, &spec, &[0, 1, 2, 3]).unwrap();
        assert_eq!(ds.dim(), 2);
        for j in 0..2 {
            let col = ds.x.col_values(j);
            let mean = col.iter().sum::<f64>() / 4.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-9 && (var - 1.0).abs() < 1e-9);
        }
        spec.include_sensitive_feature = true;
        let ds = preprocess(&raw, &spec, &[0, 1, 2, 3]).unwrap();
        assert_eq!(ds.dim(), 3);
        assert_eq!(ds.feature_names[2], "sex");
    }

    #[test]
    fn standardization_is_fit_on_train_only() {
        let (_d, mut spec) = spec_for("a,label,sex\n0,yes,F\n2,no,M\n10,yes,M\n12,no,F\n");
        spec.categorical.clear();
        let raw = load_csv(&spec).unwrap();
        let ds = preprocess(&raw, &spec, &[0, 1]).unwrap();
        let train_mean = (ds.x.get(0, 0) + ds.x.get(1, 0)) / 2.0;
        let test_mean = (ds.x.get(2, 0) + ds.x.get(3, 0)) / 2.0;
        assert!(train_mean.abs() < 1e-12);
        assert!((test_mean - 10.0).abs() < 1e-12);
    }

    #[test]
    fn manifest_replay_is_bit_identical() {
        let (_d, mut spec) = spec_for(FIXTURE);
        spec.categorical.push("note".into());
        let raw = load_csv(&spec).unwrap();
        let ds = preprocess(&raw, &spec, &[0, 1, 3]).unwrap();
        let json = serde_json::to_string(&ds.manifest).unwrap();
        let manifest: Manifest = serde_json::from_str(&json).unwrap();
        let again = apply_manifest(&load_csv(&spec).unwrap(), &manifest).unwrap();
        assert_eq!(again, ds);
    }

    #[test]
    fn split_guards_and_determinism() {
        let ds = synth_biased(&SynthConfig {
            n: 400,
            ..SynthConfig::default()
        })
        .unwrap();
        assert!(stratified_split(&ds, 0.0, 1).is_err());
        assert!(stratified_split(&ds, 1.0, 1).is_err());
        let (a, b) = stratified_split_indices(&ds.y, &ds.s, 0.2, 7).unwrap();
        let (c, d) = stratified_split_indices(&ds.y, &ds.s, 0.2, 7).unwrap();
        assert_eq!((a.clone(), b.clone()), (c, d));
        assert_eq!(a.len() + b.len(), 400);
    }

    #[test]
    fn split_preserves_cell_proportions() {
        // Cells of sizes 10, 23, 41, 6.
        let mut y = Vec::new();
        let mut s = Vec::new();
        for (cell, size) in [(0u8, 10), (1, 23), (2, 41), (3, 6)] {
            for _ in 0..size {
                y.push(cell / 2);
                s.push(cell % 2);
            }
        }
        let (_, test) = stratified_split_indices(&y, &s, 0.25, 3).unwrap();
        for (cell, size) in [(0u8, 10usize), (1, 23), (2, 41), (3, 6)] {
            let got = test
                .iter()
                .filter(|&&i| y[i] == cell / 2 && s[i] == cell % 2)
                .count();
            let want = size as f64 * 0.25;
            assert!(
                (got as f64 - want).abs() <= 1.0,
                "cell {cell}: {got} vs {want}"
            );
        }
    }

    #[test]
    fn synth_validation() {
        let bad = |bias, leak| {
            synth_biased(&SynthConfig {
                bias,
                leak,
                ..SynthConfig::default()
            })
        };
        assert!(bad(1.0, 0.3).is_err());
        assert!(bad(-0.1, 0.3).is_err());
        assert!(bad(0.2, 1.5).is_err());
    }

    #[test]
    fn synth_bias_converges() {
        let n = 50_000;
        let ds = synth_biased(&SynthConfig {
            n,
            bias: 0.19,
            ..SynthConfig::default()
        })
        .unwrap();
        let b = baseline_bias(&ds.y, &ds.s).unwrap();
        assert!((b - 0.19).abs() < 0.01, "bias {b}");
        let ds = synth_biased(&SynthConfig {
            n: 10_000,
            bias: 0.0,
            seed: 3,
            ..SynthConfig::default()
        })
        .unwrap();
        let b = baseline_bias(&ds.y, &ds.s).unwrap();
        assert!(b < 3.0 / (10_000f64).sqrt(), "bias {b}");
    }

    #[test]
    fn synth_bias_large_sample() {
        let ds = synth_biased(&SynthConfig {
            n: 100_000,
            bias: 0.2,
            seed: 11,
            ..SynthConfig::default()
        })
        .unwrap();
        let b = baseline_bias(&ds.y, &ds.s).unwrap();
        assert!((b - 0.2).abs() < 0.01, "bias {b}");
    }

    #[test]
    fn csv_round_trip_through_spec() {
        let ds = synth_biased(&SynthConfig {
            n: 50,
            d: 3,
            ..SynthConfig::default()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let spec = write_csv(&ds, &dir.path().join("synth.csv")).unwrap();
        let spec_path = dir.path().join("spec.json");
        std::fs::write(&spec_path, serde_json::to_string(&spec).unwrap()).unwrap();
        let spec = DatasetSpec::from_json_file(&spec_path).unwrap();
        let raw = load_csv(&spec).unwrap();
        assert_eq!(raw.y, ds.y);
        assert_eq!(raw.s, ds.s);
        assert_eq!(raw.feature_columns.len(), 3);
        assert_eq!(
            raw.rows[7][1].as_deref().map(|v| v.parse::<f64>().unwrap()),
            Some(ds.x.get(7, 1))
        );
    }
}
