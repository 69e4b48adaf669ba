use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use trase_node::diffnet::{init_params, HiddenLayer, InputNormalization};
use trase_node::{Activation, DiffNet, ModelInput, NetSpec, ParamVector};

const H: f64 = 1e-6;

fn net(n: usize, m: usize, width: usize, act: Activation) -> DiffNet {
    DiffNet::new(NetSpec::single_hidden(n, m, width, act)).unwrap()
}

fn random_vec(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-scale..scale)).collect()
}

/// Central difference of a vector-valued map along coordinate `j` of `v`.
fn fd<F: Fn(&[f64]) -> Array1<f64>>(f: F, v: &[f64], j: usize) -> Array1<f64> {
    let mut p = v.to_vec();
    let mut m = v.to_vec();
    p[j] += H;
    m[j] -= H;
    (f(&p) - f(&m)) / (2.0 * H)
}

fn assert_close(a: f64, b: f64, tol: f64, what: &str) {
    let err = (a - b).abs() / b.abs().max(1.0);
    assert!(err < tol, "{what}: {a} vs {b} (rel {err:e})");
}

/// Direct implementation of a one-hidden-layer MLP from the documented
/// parameter layout: W1 (h×in, row-major), b1, W2 (n×h), b2.
fn reference_forward(
    theta: &[f64],
    input: &[f64],
    h: usize,
    n: usize,
    act: Activation,
) -> Vec<f64> {
    let k = input.len();
    let (w1, rest) = theta.split_at(h * k);
    let (b1, rest) = rest.split_at(h);
    let (w2, b2) = rest.split_at(n * h);
    let sigma = |a: f64| match act {
        Activation::Tanh => a.tanh(),
        Activation::LeakyRelu { slope } => {
            if a > 0.0 {
                a
            } else {
                slope * a
            }
        }
    };
    let hidden: Vec<f64> = (0..h)
        .map(|r| sigma((0..k).map(|c| w1[r * k + c] * input[c]).sum::<f64>() + b1[r]))
        .collect();
    (0..n)
        .map(|r| (0..h).map(|c| w2[r * h + c] * hidden[c]).sum::<f64>() + b2[r])
        .collect()
}

#[test]
fn forward_matches_hand_rolled_mlp() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for act in [Activation::Tanh, Activation::leaky_relu()] {
        let net = net(2, 1, 7, act);
        for seed in 0..10 {
            let theta = net.init_params(seed);
            let x = random_vec(&mut rng, 2, 2.0);
            let y = random_vec(&mut rng, 1, 1.0);
            let u: f64 = rng.gen_range(0.0..5.0);
            let f = net
                .eval_f(&theta, &ModelInput::new(&x, 0.3, u, &y))
                .unwrap();
            let expect = reference_forward(&theta, &[x[0], x[1], u, y[0]], 7, 2, act);
            for (a, b) in f.iter().zip(&expect) {
                assert!((a - b).abs() < 1e-14, "{a} vs {b}");
            }
        }
    }
}

#[test]
fn normalization_is_applied_to_raw_inputs() {
    let norm = InputNormalization {
        offset: vec![1.0, -2.0, 0.5],
        scale: vec![2.0, 0.5, 4.0],
    };
    let spec = NetSpec::single_hidden(2, 0, 5, Activation::Tanh).with_normalization(norm.clone());
    let net = DiffNet::new(spec.clone()).unwrap();
    let theta = net.init_params(3);
    let (x, u) = ([0.7, -1.2], 2.5);
    let f = net
        .eval_f(&theta, &ModelInput::new(&x, 0.0, u, &[]))
        .unwrap();
    let z: Vec<f64> = [x[0], x[1], u]
        .iter()
        .zip(norm.offset.iter().zip(&norm.scale))
        .map(|(v, (o, s))| (v - o) / s)
        .collect();
    let expect = reference_forward(&theta, &z, 5, 2, Activation::Tanh);
    for (a, b) in f.iter().zip(&expect) {
        assert!((a - b).abs() < 1e-14);
    }
    // Jacobians stay consistent with the normalized map.
    let jx = net
        .jac_x(&theta, &ModelInput::new(&x, 0.0, u, &[]))
        .unwrap();
    let col = fd(
        |v| {
            net.eval_f(&theta, &ModelInput::new(v, 0.0, u, &[]))
                .unwrap()
        },
        &x,
        1,
    );
    for i in 0..2 {
        assert_close(jx[[i, 1]], col[i], 1e-7, "normalized jac_x");
    }
}

#[test]
fn jacobians_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for act in [Activation::Tanh, Activation::leaky_relu()] {
        let net = net(2, 2, 16, act);
        for seed in 0..5 {
            let theta = net.init_params(seed);
            let x = random_vec(&mut rng, 2, 2.0);
            let y = random_vec(&mut rng, 2, 1.0);
            let u: f64 = rng.gen_range(0.5..3.0);
            let input = ModelInput::new(&x, 0.0, u, &y);
            let jx = net.jac_x(&theta, &input).unwrap();
            let ju = net.jac_u(&theta, &input).unwrap();
            let jt = net.jac_theta(&theta, &input).unwrap();

            for j in 0..2 {
                let col = fd(
                    |v| net.eval_f(&theta, &ModelInput::new(v, 0.0, u, &y)).unwrap(),
                    &x,
                    j,
                );
                for i in 0..2 {
                    assert_close(jx[[i, j]], col[i], 1e-6, "jac_x");
                }
            }
            let col = fd(
                |v| {
                    net.eval_f(&theta, &ModelInput::new(&x, 0.0, v[0], &y))
                        .unwrap()
                },
                &[u],
                0,
            );
            for i in 0..2 {
                assert_close(ju[i], col[i], 1e-6, "jac_u");
            }
            for j in (0..net.param_count()).step_by(3) {
                let col = fd(
                    |v| {
                        net.eval_f(&ParamVector::new(v.to_vec()).unwrap(), &input)
                            .unwrap()
                    },
                    &theta,
                    j,
                );
                for i in 0..2 {
                    assert_close(jt[[i, j]], col[i], 1e-6, "jac_theta");
                }
            }
        }
    }
}

#[test]
fn sens_rhs_jacobians_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let net = net(2, 1, 12, Activation::Tanh);
    for seed in 0..5 {
        let theta = net.init_params(seed);
        let x = random_vec(&mut rng, 2, 1.5);
        let s = random_vec(&mut rng, 2, 1.0);
        let y = [0.3];
        let u = 1.7;
        let input = ModelInput::new(&x, 0.0, u, &y);
        let jac = net.sens_rhs_jacobians(&theta, &input, &s).unwrap();
        for j in 0..2 {
            let col = fd(
                |v| {
                    net.sens_rhs(&theta, &ModelInput::new(v, 0.0, u, &y), &s)
                        .unwrap()
                },
                &x,
                j,
            );
            for i in 0..2 {
                assert_close(jac.d_x[[i, j]], col[i], 1e-6, "d_x");
            }
            let col = fd(|v| net.sens_rhs(&theta, &input, v).unwrap(), &s, j);
            for i in 0..2 {
                assert_close(jac.d_s[[i, j]], col[i], 1e-6, "d_s");
            }
        }
        for j in (0..net.param_count()).step_by(2) {
            let col = fd(
                |v| {
                    net.sens_rhs(&ParamVector::new(v.to_vec()).unwrap(), &input, &s)
                        .unwrap()
                },
                &theta,
                j,
            );
            for i in 0..2 {
                assert_close(jac.d_theta[[i, j]], col[i], 1e-6, "d_theta");
            }
        }
        // ∂(J_u + J_x s)/∂s = J_x
        let jx = net.jac_x(&theta, &input).unwrap();
        assert!((&jac.d_s - &jx).iter().all(|v| v.abs() < 1e-14));
    }
}

#[test]
fn sens_rhs_is_directional_derivative() {
    let net = net(3, 0, 10, Activation::Tanh);
    let theta = net.init_params(5);
    let x = [0.2, -0.4, 1.0];
    let s = [0.5, 1.5, -0.7];
    let u = 0.9;
    let got = net
        .sens_rhs(&theta, &ModelInput::new(&x, 0.0, u, &[]), &s)
        .unwrap();
    // d/dε f(x + εs, u + ε)
    let along = |e: f64| {
        let xe: Vec<f64> = x.iter().zip(&s).map(|(a, b)| a + e * b).collect();
        net.eval_f(&theta, &ModelInput::new(&xe, 0.0, u + e, &[]))
            .unwrap()
    };
    let expect = (along(H) - along(-H)) / (2.0 * H);
    for i in 0..3 {
        assert_close(got[i], expect[i], 1e-7, "directional");
    }
}

#[test]
fn tanh_hessian_is_symmetric() {
    let net = net(3, 0, 9, Activation::Tanh);
    let theta = net.init_params(11);
    let x = [0.3, -0.1, 0.8];
    let input = ModelInput::new(&x, 0.0, 1.2, &[]);
    let zero = net.sens_rhs_jacobians(&theta, &input, &[0.0; 3]).unwrap();
    // With s = e_k, d_x − d_x(s = 0) is the Hessian slice ∂²f_i/∂x_k∂x_j.
    let slices: Vec<Array2<f64>> = (0..3)
        .map(|k| {
            let mut s = [0.0; 3];
            s[k] = 1.0;
            net.sens_rhs_jacobians(&theta, &input, &s).unwrap().d_x - &zero.d_x
        })
        .collect();
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                let a = slices[k][[i, j]];
                let b = slices[j][[i, k]];
                assert!((a - b).abs() < 1e-12, "H_{i}[{k},{j}] = {a} vs {b}");
            }
        }
    }
}

#[test]
fn leaky_relu_second_order_terms_vanish_off_kinks() {
    // Piecewise linear hidden units: ∂(J_x s)/∂x = 0 away from kinks.
    let net = net(2, 0, 8, Activation::leaky_relu());
    let theta = net.init_params(4);
    let input = ModelInput::new(&[0.37, -0.81], 0.0, 1.3, &[]);
    let jac = net
        .sens_rhs_jacobians(&theta, &input, &[2.0, -3.0])
        .unwrap();
    assert!(jac.d_x.iter().all(|v| *v == 0.0));
}

#[test]
fn linear_network_has_constant_jacobian() {
    // Width-1 LeakyReLU net with a positive pre-activation everywhere tested
    // reduces to f = w2·(w1·[x; u] + b1) + b2.
    let spec = NetSpec::new(
        1,
        0,
        vec![HiddenLayer {
            width: 1,
            activation: Activation::leaky_relu(),
        }],
    );
    let net = DiffNet::new(spec).unwrap();
    let theta = ParamVector::new(vec![2.0, 3.0, 10.0, -0.5, 0.25]).unwrap();
    for x in [-1.0, 0.0, 1.5] {
        let xs = [x];
        let input = ModelInput::new(&xs, 0.0, 1.0, &[]);
        let f = net.eval_f(&theta, &input).unwrap()[0];
        assert_eq!(f, -0.5 * (2.0 * x + 3.0 + 10.0) + 0.25);
        assert_eq!(net.jac_x(&theta, &input).unwrap()[[0, 0]], -1.0);
        assert_eq!(net.jac_u(&theta, &input).unwrap()[0], -1.5);
    }
}

#[test]
fn zero_parameters_give_zero_field() {
    let net = net(2, 0, 4, Activation::Tanh);
    let theta = ParamVector::zeros(net.param_count());
    let input = ModelInput::new(&[1.0, 2.0], 0.0, 3.0, &[]);
    assert!(net
        .eval_f(&theta, &input)
        .unwrap()
        .iter()
        .all(|v| *v == 0.0));
    // Only the output bias columns are non-zero in ∂f/∂θ at θ = 0.
    let jt = net.jac_theta(&theta, &input).unwrap();
    let p = net.param_count();
    for i in 0..2 {
        for j in 0..p {
            let expect = if j == p - 2 + i { 1.0 } else { 0.0 };
            assert_eq!(jt[[i, j]], expect, "({i},{j})");
        }
    }
}

#[test]
fn vjps_agree_with_materialized_jacobians_100_draws() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for draw in 0..100 {
        let act = if draw % 2 == 0 {
            Activation::Tanh
        } else {
            Activation::leaky_relu()
        };
        let net = net(2, 1, 6, act);
        let theta = init_params(net.spec(), draw);
        let x = random_vec(&mut rng, 2, 2.0);
        let s = random_vec(&mut rng, 2, 2.0);
        let y = random_vec(&mut rng, 1, 1.0);
        let a_x = random_vec(&mut rng, 2, 1.0);
        let a_s = random_vec(&mut rng, 2, 1.0);
        let u: f64 = rng.gen_range(0.0..8.0);
        let input = ModelInput::new(&x, 0.0, u, &y);

        let jx = net.jac_x(&theta, &input).unwrap();
        let jt = net.jac_theta(&theta, &input).unwrap();
        let sj = net.sens_rhs_jacobians(&theta, &input, &s).unwrap();
        let p = net.param_count();
        let (mut f, mut sd, mut xb, mut sb, mut tb) = (
            vec![0.0; 2],
            vec![0.0; 2],
            vec![0.0; 2],
            vec![0.0; 2],
            vec![0.0; p],
        );

        net.vjp_into(&theta, &input, &a_x, &mut f, &mut xb, &mut tb);
        let ax = Array1::from(a_x.clone());
        let asv = Array1::from(a_s.clone());
        let xb_ref = ax.dot(&jx);
        let tb_ref = ax.dot(&jt);
        for j in 0..2 {
            assert!((xb[j] - xb_ref[j]).abs() < 1e-12);
        }
        for j in 0..p {
            assert!((tb[j] - tb_ref[j]).abs() < 1e-12);
        }

        net.aug_vjp_into(
            &theta, &input, &s, &a_x, &a_s, &mut f, &mut sd, &mut xb, &mut sb, &mut tb,
        );
        let xb_ref = ax.dot(&jx) + asv.dot(&sj.d_x);
        let sb_ref = asv.dot(&jx);
        let tb_ref = ax.dot(&jt) + asv.dot(&sj.d_theta);
        for j in 0..2 {
            assert!((xb[j] - xb_ref[j]).abs() < 1e-12);
            assert!((sb[j] - sb_ref[j]).abs() < 1e-12);
        }
        for j in 0..p {
            assert!((tb[j] - tb_ref[j]).abs() < 1e-12);
        }
        let g = net.eval_f(&theta, &input).unwrap();
        let sr = net.sens_rhs(&theta, &input, &s).unwrap();
        assert_eq!(f, g.to_vec());
        assert_eq!(sd, sr.to_vec());
    }
}

#[test]
fn deeper_network_gradients() {
    let spec = NetSpec::new(
        2,
        0,
        vec![
            HiddenLayer {
                width: 6,
                activation: Activation::Tanh,
            },
            HiddenLayer {
                width: 5,
                activation: Activation::Tanh,
            },
        ],
    )
    .with_time_input();
    let net = DiffNet::new(spec).unwrap();
    let theta = net.init_params(8);
    let x = [0.4, -0.9];
    let s = [1.0, 0.5];
    let input = ModelInput::new(&x, 0.6, 1.1, &[]);
    let jac = net.sens_rhs_jacobians(&theta, &input, &s).unwrap();
    for j in 0..2 {
        let col = fd(
            |v| {
                net.sens_rhs(&theta, &ModelInput::new(v, 0.6, 1.1, &[]), &s)
                    .unwrap()
            },
            &x,
            j,
        );
        for i in 0..2 {
            assert_close(jac.d_x[[i, j]], col[i], 1e-6, "deep d_x");
        }
    }
    for j in 0..net.param_count() {
        let col = fd(
            |v| {
                net.sens_rhs(&ParamVector::new(v.to_vec()).unwrap(), &input, &s)
                    .unwrap()
            },
            &theta,
            j,
        );
        for i in 0..2 {
            assert_close(jac.d_theta[[i, j]], col[i], 1e-6, "deep d_theta");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn evaluation_is_pure(seed in 0u64..1000, x0 in -3.0f64..3.0, x1 in -3.0f64..3.0, u in 0.0f64..8.0) {
        let net = net(2, 0, 8, Activation::Tanh);
        let theta = net.init_params(seed);
        let xs = [x0, x1];
        let input = ModelInput::new(&xs, 0.0, u, &[]);
        let a = net.eval_f(&theta, &input).unwrap();
        let b = net.eval_f(&theta, &input).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn sens_rhs_is_affine_in_s(seed in 0u64..1000, s0 in -3.0f64..3.0, s1 in -3.0f64..3.0, c in -2.0f64..2.0) {
        let net = net(2, 0, 8, Activation::Tanh);
        let theta = net.init_params(seed);
        let input = ModelInput::new(&[0.1, 0.2], 0.0, 1.0, &[]);
        let base = net.sens_rhs(&theta, &input, &[0.0, 0.0]).unwrap();
        let one = net.sens_rhs(&theta, &input, &[s0, s1]).unwrap();
        let scaled = net.sens_rhs(&theta, &input, &[c * s0, c * s1]).unwrap();
        for i in 0..2 {
            let expect = base[i] + c * (one[i] - base[i]);
            prop_assert!((scaled[i] - expect).abs() < 1e-12 * (1.0 + expect.abs()));
        }
    }

    #[test]
    fn init_is_deterministic_and_bounded(seed in 0u64..10_000) {
        let spec = NetSpec::single_hidden(2, 1, 16, Activation::leaky_relu());
        let a = init_params(&spec, seed);
        prop_assert_eq!(&a, &init_params(&spec, seed));
        // first layer fan-in 4, second 16
        let first = 16 * 4;
        prop_assert!(a[..first].iter().all(|w| w.abs() <= 0.5));
        prop_assert!(a[first..first + 16].iter().all(|b| *b == 0.0));
        prop_assert!(a[first + 16..first + 16 + 32].iter().all(|w| w.abs() <= 0.25));
    }
}
