use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_matrix(rows: usize, cols: usize, r: &mut ChaCha8Rng) -> DenseMatrix {
    let data = (0..rows * cols)
        .map(|_| r.random_range(-1.5..1.5))
        .collect();
    DenseMatrix::from_vec(rows, cols, data).unwrap()
}

fn net(layers: Vec<LayerSpec>, seed: u64) -> NetworkState {
    NetworkState::new(Architecture::new(layers).unwrap(), &mut rng(seed)).unwrap()
}

/// Loss = Σ output ⊙ weights, evaluated with a fixed dropout stream.
fn weighted_output(net: &NetworkState, x: &DenseMatrix, w: &DenseMatrix, train: bool) -> f64 {
    let (out, _) = net.forward(x, train, &mut rng(99)).unwrap();
    out.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(1e-8)
}

/// Compares analytic gradients with central differences (step 1e-5).
fn check_gradients(net: &NetworkState, x: &DenseMatrix, train: bool, seed: u64) {
    let mut r = rng(seed);
    let (out, tape) = net.forward(x, train, &mut rng(99)).unwrap();
    let w = random_matrix(out.rows(), out.cols(), &mut r);
    let (grads, dx) = net.backward(&tape, &w).unwrap();
    let h = 1e-5;

    let mut probe = net.clone();
    for k in 0..net.params.len() {
        for p in 0..net.params[k].len() {
            for i in 0..net.params[k][p].value.len() {
                let orig = net.params[k][p].value.data()[i];
                probe.params[k][p].value.data_mut()[i] = orig + h;
                let up = weighted_output(&probe, x, &w, train);
                probe.params[k][p].value.data_mut()[i] = orig - h;
                let down = weighted_output(&probe, x, &w, train);
                probe.params[k][p].value.data_mut()[i] = orig;
                let numeric = (up - down) / (2.0 * h);
                let analytic = grads.per_layer[k][p].data()[i];
                assert!(
                    rel_err(analytic, numeric) < 1e-4,
                    "layer {k} param {p}[{i}]: analytic {analytic} numeric {numeric}"
                );
            }
        }
    }
    let mut xp = x.clone();
    for i in 0..x.len() {
        let orig = x.data()[i];
        xp.data_mut()[i] = orig + h;
        let up = weighted_output(net, &xp, &w, train);
        xp.data_mut()[i] = orig - h;
        let down = weighted_output(net, &xp, &w, train);
        xp.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        assert!(
            rel_err(dx.data()[i], numeric) < 1e-4,
            "input[{i}]: analytic {} numeric {numeric}",
            dx.data()[i]
        );
    }
}

#[test]
fn identity_affine_reproduces_input() {
    let mut n = net(
        vec![LayerSpec::Affine {
            in_dim: 3,
            out_dim: 3,
        }],
        0,
    );
    let mut eye = DenseMatrix::zeros(3, 3);
    (0..3).for_each(|i| eye.set(i, i, 1.0));
    n.params[0][0].value = eye;
    let b = random_matrix(4, 3, &mut rng(1));
    assert_eq!(n.predict(&b).unwrap(), b);
}

#[test]
fn sigmoid_of_zero_is_half() {
    let n = net(
        vec![LayerSpec::Activation {
            dim: 1,
            activation: Activation::Sigmoid,
        }],
        0,
    );
    let out = n.predict(&DenseMatrix::column(vec![0.0])).unwrap();
    assert_eq!(out.data(), &[0.5]);
}

#[test]
fn hand_affine_then_leaky_relu() {
    let mut n = net(
        vec![
            LayerSpec::Affine {
                in_dim: 2,
                out_dim: 2,
            },
            LayerSpec::Activation {
                dim: 2,
                activation: Activation::LeakyRelu { slope: 0.01 },
            },
        ],
        0,
    );
    // W = [[1,2],[3,4]] acting on column vectors, stored transposed.
    n.params[0][0].value = DenseMatrix::from_rows(&[vec![1.0, 3.0], vec![2.0, 4.0]]).unwrap();
    n.params[0][1].value = DenseMatrix::from_rows(&[vec![0.5, -0.5]]).unwrap();
    let out = n
        .predict(&DenseMatrix::from_rows(&[vec![1.0, 1.0]]).unwrap())
        .unwrap();
    assert_eq!(out.data(), &[3.5, 6.5]);
}

#[test]
fn zero_upstream_gives_zero_gradients() {
    let n = net(
        vec![
            LayerSpec::Affine {
                in_dim: 3,
                out_dim: 4,
            },
            LayerSpec::LayerNorm { dim: 4 },
            LayerSpec::AttentionGate { dim: 4 },
            LayerSpec::Affine {
                in_dim: 4,
                out_dim: 2,
            },
        ],
        3,
    );
    let x = random_matrix(5, 3, &mut rng(4));
    let (out, tape) = n.forward(&x, false, &mut rng(0)).unwrap();
    let zero = DenseMatrix::zeros(out.rows(), out.cols());
    let (g, dx) = n.backward(&tape, &zero).unwrap();
    assert!(g.flatten().iter().all(|&v| v == 0.0));
    assert!(dx.data().iter().all(|&v| v == 0.0));
}

#[test]
fn scalar_affine_chain_rule() {
    let mut n = net(
        vec![LayerSpec::Affine {
            in_dim: 1,
            out_dim: 1,
        }],
        0,
    );
    n.params[0][0].value = DenseMatrix::column(vec![2.0]);
    let (_, tape) = n
        .forward(&DenseMatrix::column(vec![3.0]), false, &mut rng(0))
        .unwrap();
    let (g, dx) = n.backward(&tape, &DenseMatrix::column(vec![1.0])).unwrap();
    assert_eq!(g.per_layer[0][0].data(), &[3.0]);
    assert_eq!(g.per_layer[0][1].data(), &[1.0]);
    assert_eq!(dx.data(), &[2.0]);
}

#[test]
fn finite_differences_per_layer_kind() {
    let act = |activation| LayerSpec::Activation { dim: 4, activation };
    let cases: Vec<(Vec<LayerSpec>, bool)> = vec![
        (
            vec![LayerSpec::Affine {
                in_dim: 3,
                out_dim: 4,
            }],
            false,
        ),
        (
            vec![
                LayerSpec::Affine {
                    in_dim: 3,
                    out_dim: 4,
                },
                act(Activation::Relu),
            ],
            false,
        ),
        (
            vec![
                LayerSpec::Affine {
                    in_dim: 3,
                    out_dim: 4,
                },
                act(Activation::LeakyRelu { slope: 0.01 }),
            ],
            false,
        ),
        (
            vec![
                LayerSpec::Affine {
                    in_dim: 3,
                    out_dim: 4,
                },
                act(Activation::Sigmoid),
            ],
            false,
        ),
        (
            vec![
                LayerSpec::Affine {
                    in_dim: 3,
                    out_dim: 4,
                },
                act(Activation::Identity),
            ],
            false,
        ),
        (
            vec![
                LayerSpec::Affine {
                    in_dim: 3,
                    out_dim: 4,
                },
                LayerSpec::LayerNorm { dim: 4 },
            ],
            false,
        ),
        (
            vec![
                LayerSpec::Affine {
                    in_dim: 3,
                    out_dim: 4,
                },
                LayerSpec::Dropout { dim: 4, rate: 0.3 },
            ],
            true,
        ),
        (
            vec![
                LayerSpec::Affine {
                    in_dim: 3,
                    out_dim: 4,
                },
                LayerSpec::AttentionGate { dim: 4 },
            ],
            false,
        ),
        (
            vec![
                LayerSpec::Affine {
                    in_dim: 3,
                    out_dim: 4,
                },
                act(Activation::Sigmoid),
                LayerSpec::Affine {
                    in_dim: 4,
                    out_dim: 4,
                },
                LayerSpec::ResidualAdd { dim: 4, from: 1 },
            ],
            false,
        ),
    ];
    for (case, (layers, train)) in cases.into_iter().enumerate() {
        for seed in 0..5 {
            let mut n = net(layers.clone(), seed);
            // Perturb layer-norm scale/shift and gate bias away from their init.
            let mut r = rng(seed + 100);
            for p in n.params.iter_mut().flatten() {
                for v in p.value.data_mut() {
                    *v += r.random_range(-0.3..0.3);
                }
            }
            let x = random_matrix(6, 3, &mut r);
            check_gradients(&n, &x, train, case as u64 * 31 + seed);
        }
    }
}

#[test]
fn layer_norm_constant_row_maps_to_shift() {
    let n = net(vec![LayerSpec::LayerNorm { dim: 4 }], 0);
    let out = n.predict(&DenseMatrix::filled(2, 4, 3.7)).unwrap();
    assert!(out.data().iter().all(|&v| v == 0.0));
}

#[test]
fn saturated_gate_is_identity() {
    let mut n = net(vec![LayerSpec::AttentionGate { dim: 3 }], 0);
    n.params[0][0].value.fill(0.0);
    n.params[0][1].value.fill(40.0);
    let x = random_matrix(4, 3, &mut rng(2));
    assert_eq!(n.predict(&x).unwrap(), x);
}

#[test]
fn inverted_dropout_preserves_expectation() {
    let n = net(
        vec![
            LayerSpec::Affine {
                in_dim: 3,
                out_dim: 5,
            },
            LayerSpec::Dropout { dim: 5, rate: 0.2 },
        ],
        7,
    );
    let x = random_matrix(3, 3, &mut rng(8));
    let eval = n.predict(&x).unwrap();
    let mut acc = DenseMatrix::zeros(eval.rows(), eval.cols());
    let mut r = rng(9);
    let draws = 10_000;
    for _ in 0..draws {
        let (out, _) = n.forward(&x, true, &mut r).unwrap();
        acc.add_assign(&out);
    }
    acc.scale(1.0 / draws as f64);
    for (m, e) in acc.data().iter().zip(eval.data()) {
        assert!((m - e).abs() <= 0.02 * e.abs(), "mean {m} vs eval {e}");
    }
}

#[test]
fn forward_is_seed_deterministic() {
    let n = net(
        vec![
            LayerSpec::Affine {
                in_dim: 3,
                out_dim: 8,
            },
            LayerSpec::Dropout { dim: 8, rate: 0.5 },
        ],
        1,
    );
    let x = random_matrix(4, 3, &mut rng(1));
    let a = n.forward(&x, true, &mut rng(5)).unwrap().0;
    let b = n.forward(&x, true, &mut rng(5)).unwrap().0;
    assert_eq!(a.data(), b.data());
    let c = n.forward(&x, true, &mut rng(6)).unwrap().0;
    assert_ne!(a.data(), c.data());
}

#[test]
fn adam_zero_gradient_keeps_params() {
    let mut n = net(
        vec![LayerSpec::Affine {
            in_dim: 2,
            out_dim: 2,
        }],
        0,
    );
    let before = n.flat_params();
    let g = n.zero_gradients();
    n.adam_step(&g, &AdamConfig::default()).unwrap();
    assert_eq!(n.flat_params(), before);
    assert_eq!(n.t, 1);
}

#[test]
fn adam_single_step_by_hand() {
    let mut n = net(
        vec![LayerSpec::Affine {
            in_dim: 1,
            out_dim: 1,
        }],
        0,
    );
    n.params[0][0].value = DenseMatrix::column(vec![0.0]);
    let mut g = n.zero_gradients();
    g.per_layer[0][0] = DenseMatrix::column(vec![1.0]);
    let cfg = AdamConfig::with_eta(0.1);
    n.adam_step(&g, &cfg).unwrap();
    let p = &n.params[0][0];
    assert!((p.m.data()[0] - 0.1).abs() < 1e-15);
    assert!((p.v.data()[0] - 0.001).abs() < 1e-15);
    assert!((p.value.data()[0] + 0.1).abs() < 1e-8);
    let first = p.value.data()[0];
    n.adam_step(&g, &cfg).unwrap();
    assert!(n.params[0][0].value.data()[0] < first);
}

#[test]
fn adam_rejects_non_finite_gradient() {
    let mut n = net(
        vec![LayerSpec::Affine {
            in_dim: 1,
            out_dim: 1,
        }],
        0,
    );
    let mut g = n.zero_gradients();
    g.per_layer[0][1] = DenseMatrix::column(vec![f64::NAN]);
    assert!(n.adam_step(&g, &AdamConfig::default()).is_err());
    assert_eq!(n.t, 0);
}

#[test]
fn architecture_validation() {
    assert!(Architecture::new(vec![
        LayerSpec::Affine {
            in_dim: 2,
            out_dim: 3
        },
        LayerSpec::Affine {
            in_dim: 4,
            out_dim: 1
        },
    ])
    .is_err());
    assert!(Architecture::new(vec![LayerSpec::Dropout { dim: 2, rate: 1.0 }]).is_err());
    assert!(Architecture::new(vec![
        LayerSpec::Affine {
            in_dim: 2,
            out_dim: 3
        },
        LayerSpec::ResidualAdd { dim: 3, from: 1 },
    ])
    .is_err());
    assert!(Architecture::new(vec![LayerSpec::Affine {
        in_dim: 0,
        out_dim: 1
    }])
    .is_err());
}

#[test]
fn architecture_json_round_trip() {
    let arch = Architecture::new(vec![
        LayerSpec::Affine {
            in_dim: 2,
            out_dim: 3,
        },
        LayerSpec::Activation {
            dim: 3,
            activation: Activation::LeakyRelu { slope: 0.01 },
        },
        LayerSpec::Dropout { dim: 3, rate: 0.2 },
        LayerSpec::ResidualAdd { dim: 3, from: 0 },
    ])
    .unwrap();
    let json = serde_json::to_string(&arch).unwrap();
    assert!(json.contains("\"kind\":\"leaky_relu\"") || json.contains("\"type\":\"leaky_relu\""));
    let back: Architecture = serde_json::from_str(&json).unwrap();
    assert_eq!(back, arch);
}

#[test]
fn shape_mismatch_is_an_error() {
    let n = net(
        vec![LayerSpec::Affine {
            in_dim: 3,
            out_dim: 1,
        }],
        0,
    );
    assert!(n.predict(&DenseMatrix::zeros(2, 4)).is_err());
}
