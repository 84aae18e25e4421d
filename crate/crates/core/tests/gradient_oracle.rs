//! Central finite differences as an independent oracle for reverse-mode
//! gradients: every graph primitive, a hand-composed LSTM cell, and the
//! trained model's input gradients. The oracle only ever calls `forward`.

use faultlens::autodiff::{Bindings, Graph, NodeId, Tensor};
use faultlens::model::{ChannelStats, ModelConfig, SequenceModel, TimeSeriesWindow};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FD_H: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;

fn rel_err(autodiff: f64, fd: f64) -> f64 {
    (autodiff - fd).abs() / (fd.abs() + 1e-8)
}

/// Central finite difference of a scalar-valued function at `x`.
fn finite_difference(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut grad = Vec::with_capacity(x.len());
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let original = probe[i];
        probe[i] = original + FD_H;
        let plus = f(&probe);
        probe[i] = original - FD_H;
        let minus = f(&probe);
        probe[i] = original;
        grad.push((plus - minus) / (2.0 * FD_H));
    }
    grad
}

/// A scalar graph function of one leaf: all other leaves are held at fixed
/// values, the checked leaf is rebound per evaluation.
struct ScalarFn<'g> {
    graph: &'g Graph,
    checked: NodeId,
    fixed: Vec<(NodeId, Tensor)>,
    output: NodeId,
}

impl ScalarFn<'_> {
    fn eval(&self, x: &[f64]) -> f64 {
        let mut bindings = Bindings::new(self.graph);
        let shape = self.graph.shape(self.checked).to_vec();
        bindings
            .set(self.checked, Tensor::new(shape, x.to_vec()).unwrap())
            .unwrap();
        for (id, value) in &self.fixed {
            bindings.set(*id, value.clone()).unwrap();
        }
        let eval = self.graph.forward(&bindings).unwrap();
        eval.value(self.output).scalar_value()
    }

    fn autodiff_grad(&self, x: &[f64]) -> Vec<f64> {
        let mut bindings = Bindings::new(self.graph);
        let shape = self.graph.shape(self.checked).to_vec();
        bindings
            .set(self.checked, Tensor::new(shape, x.to_vec()).unwrap())
            .unwrap();
        for (id, value) in &self.fixed {
            bindings.set(*id, value.clone()).unwrap();
        }
        let eval = self.graph.forward(&bindings).unwrap();
        let grads = self.graph.backward(&eval, self.output, &[self.checked]).unwrap();
        grads.expect(self.checked).data().to_vec()
    }

    fn check_at(&self, x: &[f64], context: &str) {
        let fd = finite_difference(|v| self.eval(v), x);
        let ad = self.autodiff_grad(x);
        for (i, (a, f)) in ad.iter().zip(&fd).enumerate() {
            assert!(
                rel_err(*a, *f) <= REL_TOL,
                "{context}: entry {i} autodiff {a} vs fd {f}"
            );
        }
    }
}

fn random_vec(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-1.5..1.5)).collect()
}

/// Project any node to a scalar through fixed random weights so the seed
/// node exercises a non-trivial adjoint.
fn project(
    g: &mut Graph,
    node: NodeId,
    rng: &mut ChaCha8Rng,
) -> (NodeId, Vec<(NodeId, Tensor)>) {
    let shape = g.shape(node).to_vec();
    let w = g.leaf("projection", &shape).unwrap();
    let prod = g.mul(node, w).unwrap();
    let out = g.sum(prod).unwrap();
    let weights = Tensor::new(shape.clone(), random_vec(rng, shape.iter().product())).unwrap();
    (out, vec![(w, weights)])
}

fn check_unary(build: impl Fn(&mut Graph, NodeId) -> NodeId, name: &str, shape: &[usize]) {
    let mut rng = ChaCha8Rng::seed_from_u64(0xBEEF);
    for point in 0..12 {
        let mut g = Graph::new();
        let x = g.leaf("x", shape).unwrap();
        let y = build(&mut g, x);
        let (out, fixed) = project(&mut g, y, &mut rng);
        let f = ScalarFn {
            graph: &g,
            checked: x,
            fixed,
            output: out,
        };
        let x0 = random_vec(&mut rng, shape.iter().product());
        f.check_at(&x0, &format!("{name} point {point}"));
    }
}

#[test]
fn primitive_sigmoid_matches_fd() {
    check_unary(|g, x| g.sigmoid(x).unwrap(), "sigmoid", &[2, 3]);
}

#[test]
fn primitive_tanh_matches_fd() {
    check_unary(|g, x| g.tanh(x).unwrap(), "tanh", &[2, 3]);
}

#[test]
fn primitive_softmax_matches_fd() {
    check_unary(|g, x| g.softmax(x).unwrap(), "softmax", &[2, 4]);
}

#[test]
fn primitive_sum_matches_fd() {
    check_unary(|g, x| g.sum(x).unwrap(), "sum", &[3, 2]);
}

#[test]
fn primitive_slice_matches_fd() {
    check_unary(|g, x| g.slice(x, 1, 2, 1, 2).unwrap(), "slice", &[4, 3]);
}

#[test]
fn primitive_add_and_mul_match_fd() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xCAFE);
    for point in 0..12 {
        for op in ["add", "mul"] {
            let mut g = Graph::new();
            let x = g.leaf("x", &[2, 3]).unwrap();
            let y = g.leaf("y", &[2, 3]).unwrap();
            let z = match op {
                "add" => g.add(x, y).unwrap(),
                _ => g.mul(x, y).unwrap(),
            };
            let (out, mut fixed) = project(&mut g, z, &mut rng);
            fixed.push((y, Tensor::new(vec![2, 3], random_vec(&mut rng, 6)).unwrap()));
            let f = ScalarFn {
                graph: &g,
                checked: x,
                fixed,
                output: out,
            };
            f.check_at(&random_vec(&mut rng, 6), &format!("{op} point {point}"));
        }
    }
}

#[test]
fn primitive_matmul_matches_fd_for_both_operands() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xF00D);
    for point in 0..12 {
        for checked_side in 0..2 {
            let mut g = Graph::new();
            let a = g.leaf("a", &[2, 3]).unwrap();
            let b = g.leaf("b", &[3, 2]).unwrap();
            let z = g.matmul(a, b).unwrap();
            let (out, mut fixed) = project(&mut g, z, &mut rng);
            let (checked, checked_len) = if checked_side == 0 {
                fixed.push((b, Tensor::new(vec![3, 2], random_vec(&mut rng, 6)).unwrap()));
                (a, 6)
            } else {
                fixed.push((a, Tensor::new(vec![2, 3], random_vec(&mut rng, 6)).unwrap()));
                (b, 6)
            };
            let f = ScalarFn {
                graph: &g,
                checked,
                fixed,
                output: out,
            };
            f.check_at(
                &random_vec(&mut rng, checked_len),
                &format!("matmul side {checked_side} point {point}"),
            );
        }
    }
}

#[test]
fn primitive_add_bias_matches_fd() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xBEAD);
    for point in 0..12 {
        let mut g = Graph::new();
        let m = g.leaf("m", &[3, 2]).unwrap();
        let b = g.leaf("bias", &[2]).unwrap();
        let z = g.add_bias(m, b).unwrap();
        let (out, mut fixed) = project(&mut g, z, &mut rng);
        fixed.push((m, Tensor::new(vec![3, 2], random_vec(&mut rng, 6)).unwrap()));
        let f = ScalarFn {
            graph: &g,
            checked: b,
            fixed,
            output: out,
        };
        f.check_at(&random_vec(&mut rng, 2), &format!("add_bias point {point}"));
    }
}

#[test]
fn primitive_concat_matches_fd() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xABCD);
    for point in 0..12 {
        let mut g = Graph::new();
        let x = g.leaf("x", &[1, 3]).unwrap();
        let y = g.leaf("y", &[2, 3]).unwrap();
        let z = g.concat(&[x, y]).unwrap();
        let (out, mut fixed) = project(&mut g, z, &mut rng);
        fixed.push((y, Tensor::new(vec![2, 3], random_vec(&mut rng, 6)).unwrap()));
        let f = ScalarFn {
            graph: &g,
            checked: x,
            fixed,
            output: out,
        };
        f.check_at(&random_vec(&mut rng, 3), &format!("concat point {point}"));
    }
}

/// One LSTM cell composed by hand (slice/matmul/add_bias/sigmoid/tanh/mul),
/// checked against finite differences at 100 random points spread over the
/// cell input, previous hidden state and previous cell state.
#[test]
fn lstm_cell_gradient_matches_fd_at_100_random_points() {
    let (m, h) = (3, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(0x157A);

    for point in 0..100 {
        let mut g = Graph::new();
        let x = g.leaf("x", &[1, m]).unwrap();
        let h_prev = g.leaf("h_prev", &[1, h]).unwrap();
        let c_prev = g.leaf("c_prev", &[1, h]).unwrap();
        let w_x = g.leaf("w_x", &[m, 4 * h]).unwrap();
        let w_h = g.leaf("w_h", &[h, 4 * h]).unwrap();
        let bias = g.leaf("bias", &[4 * h]).unwrap();

        let from_x = g.matmul(x, w_x).unwrap();
        let from_h = g.matmul(h_prev, w_h).unwrap();
        let lin = g.add(from_x, from_h).unwrap();
        let pre = g.add_bias(lin, bias).unwrap();
        let i_g = {
            let s = g.slice(pre, 0, 1, 0, h).unwrap();
            g.sigmoid(s).unwrap()
        };
        let f_g = {
            let s = g.slice(pre, 0, 1, h, h).unwrap();
            g.sigmoid(s).unwrap()
        };
        let g_g = {
            let s = g.slice(pre, 0, 1, 2 * h, h).unwrap();
            g.tanh(s).unwrap()
        };
        let o_g = {
            let s = g.slice(pre, 0, 1, 3 * h, h).unwrap();
            g.sigmoid(s).unwrap()
        };
        let keep = g.mul(f_g, c_prev).unwrap();
        let write = g.mul(i_g, g_g).unwrap();
        let c_t = g.add(keep, write).unwrap();
        let c_act = g.tanh(c_t).unwrap();
        let h_t = g.mul(o_g, c_act).unwrap();
        let (out, mut fixed) = project(&mut g, h_t, &mut rng);

        fixed.push((w_x, Tensor::new(vec![m, 4 * h], random_vec(&mut rng, m * 4 * h)).unwrap()));
        fixed.push((w_h, Tensor::new(vec![h, 4 * h], random_vec(&mut rng, h * 4 * h)).unwrap()));
        fixed.push((bias, Tensor::new(vec![4 * h], random_vec(&mut rng, 4 * h)).unwrap()));

        // Rotate which leaf is checked so all cell inputs get covered.
        let (checked, len, others): (NodeId, usize, [(NodeId, usize); 2]) = match point % 3 {
            0 => (x, m, [(h_prev, h), (c_prev, h)]),
            1 => (h_prev, h, [(x, m), (c_prev, h)]),
            _ => (c_prev, h, [(x, m), (h_prev, h)]),
        };
        for (id, olen) in others {
            let shape = g.shape(id).to_vec();
            fixed.push((id, Tensor::new(shape, random_vec(&mut rng, olen)).unwrap()));
        }
        let f = ScalarFn {
            graph: &g,
            checked,
            fixed,
            output: out,
        };
        f.check_at(&random_vec(&mut rng, len), &format!("lstm cell point {point}"));
    }
}

/// Linearity of the backward pass: the gradient of `α·f + β·g` equals
/// `α·grad(f) + β·grad(g)` elementwise.
#[test]
fn backward_is_linear_in_the_seed() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x11CE);
    for _ in 0..20 {
        let mut g = Graph::new();
        let x = g.leaf("x", &[1, 3]).unwrap();
        let wf = g.leaf("wf", &[3, 1]).unwrap();
        let wg = g.leaf("wg", &[3, 1]).unwrap();
        let alpha = g.leaf("alpha", &[1]).unwrap();
        let beta = g.leaf("beta", &[1]).unwrap();

        let fx = {
            let prod = g.matmul(x, wf).unwrap();
            let act = g.tanh(prod).unwrap();
            g.sum(act).unwrap()
        };
        let gx = {
            let prod = g.matmul(x, wg).unwrap();
            let act = g.sigmoid(prod).unwrap();
            g.sum(act).unwrap()
        };
        let af = g.mul(alpha, fx).unwrap();
        let bg = g.mul(beta, gx).unwrap();
        let combined = g.add(af, bg).unwrap();

        let (a_val, b_val) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let x0 = random_vec(&mut rng, 3);
        let wf0 = random_vec(&mut rng, 3);
        let wg0 = random_vec(&mut rng, 3);

        let grad_of = |seed: NodeId| {
            let mut bind = Bindings::new(&g);
            bind.set(x, Tensor::new(vec![1, 3], x0.clone()).unwrap()).unwrap();
            bind.set(wf, Tensor::new(vec![3, 1], wf0.clone()).unwrap()).unwrap();
            bind.set(wg, Tensor::new(vec![3, 1], wg0.clone()).unwrap()).unwrap();
            bind.set(alpha, Tensor::scalar(a_val).unwrap()).unwrap();
            bind.set(beta, Tensor::scalar(b_val).unwrap()).unwrap();
            let eval = g.forward(&bind).unwrap();
            let grads = g.backward(&eval, seed, &[x]).unwrap();
            grads.expect(x).data().to_vec()
        };

        let grad_f = grad_of(fx);
        let grad_g = grad_of(gx);
        let grad_combined = grad_of(combined);
        for i in 0..3 {
            let expected = a_val * grad_f[i] + b_val * grad_g[i];
            assert!(
                (grad_combined[i] - expected).abs() <= 1e-12,
                "entry {i}: {} vs {}",
                grad_combined[i],
                expected
            );
        }
    }
}

/// The model-level contract: gradients of a class logit w.r.t. raw window
/// entries match finite differences through `logit_for_values`.
#[test]
fn model_input_gradient_matches_fd_at_20_entries() {
    let cfg = ModelConfig {
        num_features: 4,
        window_len: 6,
        hidden_size: 8,
        num_classes: 3,
        learning_rate: 0.01,
        epochs: 1,
        batch_size: 1,
        weight_decay: 1e-3,
        input_jitter: 0.0,
        max_col_norm: 1.0,
        rng_seed: 21,
    };
    let stats = ChannelStats {
        mean: vec![0.5, -1.0, 2.0, 0.0],
        std: vec![1.5, 0.7, 2.2, 1.0],
    };
    let model = SequenceModel::initialized(
        cfg.clone(),
        vec!["normal".into(), "a".into(), "b".into()],
        stats,
        false,
    )
    .unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(0x909);
    let raw: Vec<f64> = (0..cfg.window_len * cfg.num_features)
        .map(|_| rng.random_range(-2.0..2.0))
        .collect();
    let window = TimeSeriesWindow::new(raw.clone(), cfg.window_len, cfg.num_features).unwrap();

    for class in 0..cfg.num_classes {
        let grad = model.input_gradient(&window, class).unwrap();
        assert!(grad.iter().all(|g| g.is_finite()));
        for _ in 0..20 {
            let idx = rng.random_range(0..raw.len());
            let mut probe = raw.clone();
            probe[idx] += FD_H;
            let plus = model.logit_for_values(&probe, class).unwrap();
            probe[idx] -= 2.0 * FD_H;
            let minus = model.logit_for_values(&probe, class).unwrap();
            let fd = (plus - minus) / (2.0 * FD_H);
            assert!(
                rel_err(grad[idx], fd) <= REL_TOL,
                "class {class} entry {idx}: autodiff {} vs fd {fd}",
                grad[idx]
            );
        }
    }
}

/// Graphs and models are immutable after construction; concurrent
/// evaluations with per-call workspaces must agree with the sequential
/// result bit for bit.
#[test]
fn concurrent_evaluations_are_safe_and_identical() {
    let cfg = ModelConfig {
        num_features: 3,
        window_len: 5,
        hidden_size: 6,
        num_classes: 2,
        learning_rate: 0.01,
        epochs: 1,
        batch_size: 1,
        weight_decay: 1e-3,
        input_jitter: 0.0,
        max_col_norm: 1.0,
        rng_seed: 77,
    };
    let model = SequenceModel::initialized(
        cfg.clone(),
        vec!["normal".into(), "fault".into()],
        ChannelStats::identity(3),
        false,
    )
    .unwrap();

    let windows: Vec<TimeSeriesWindow> = (0..8)
        .map(|i| {
            let values = (0..15).map(|j| ((i * 15 + j) as f64 * 0.21).sin()).collect();
            TimeSeriesWindow::new(values, 5, 3).unwrap()
        })
        .collect();
    let sequential: Vec<(Vec<f64>, Vec<f64>)> = windows
        .iter()
        .map(|w| {
            (
                model.predict(w).unwrap(),
                model.input_gradient(w, 1).unwrap(),
            )
        })
        .collect();

    std::thread::scope(|scope| {
        let handles: Vec<_> = windows
            .iter()
            .map(|w| {
                let model = &model;
                scope.spawn(move || {
                    (
                        model.predict(w).unwrap(),
                        model.input_gradient(w, 1).unwrap(),
                    )
                })
            })
            .collect();
        for (handle, (probs, grad)) in handles.into_iter().zip(&sequential) {
            let (t_probs, t_grad) = handle.join().unwrap();
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&t_probs), bits(probs));
            assert_eq!(bits(&t_grad), bits(grad));
        }
    });
}
