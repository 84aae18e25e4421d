//! Unrolled single-layer LSTM + dense head as a static autodiff graph.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, NodeId, Tensor};

use super::{LstmParams, ModelConfig, ModelError};

/// Graph plus the leaf/output handles the model needs at call time.
#[derive(Debug)]
pub(crate) struct LstmGraph {
    pub graph: Graph,
    pub input: NodeId,
    pub h0: NodeId,
    pub c0: NodeId,
    pub w_x: NodeId,
    pub w_h: NodeId,
    pub b: NodeId,
    pub w_out: NodeId,
    pub b_out: NodeId,
    /// `[1 × num_classes]` pre-softmax logits.
    pub logits: NodeId,
    /// `[1 × num_classes]` class probabilities.
    pub probs: NodeId,
    /// One scalar node per class, for gradient seeds.
    pub class_logits: Vec<NodeId>,
}

impl LstmGraph {
    pub fn build(cfg: &ModelConfig) -> Result<Self, ModelError> {
        let (t_len, m, h, k) = (
            cfg.window_len,
            cfg.num_features,
            cfg.hidden_size,
            cfg.num_classes,
        );
        let mut g = Graph::new();
        let input = g.leaf("input", &[t_len, m])?;
        let h0 = g.leaf("h0", &[1, h])?;
        let c0 = g.leaf("c0", &[1, h])?;
        let w_x = g.leaf("w_x", &[m, 4 * h])?;
        let w_h = g.leaf("w_h", &[h, 4 * h])?;
        let b = g.leaf("b", &[4 * h])?;
        let w_out = g.leaf("w_out", &[h, k])?;
        let b_out = g.leaf("b_out", &[k])?;

        let (mut h_prev, mut c_prev) = (h0, c0);
        for t in 0..t_len {
            let x_t = g.slice(input, t, 1, 0, m)?;
            let from_x = g.matmul(x_t, w_x)?;
            let from_h = g.matmul(h_prev, w_h)?;
            let pre_lin = g.add(from_x, from_h)?;
            let pre = g.add_bias(pre_lin, b)?;
            let i_gate = {
                let s = g.slice(pre, 0, 1, 0, h)?;
                g.sigmoid(s)?
            };
            let f_gate = {
                let s = g.slice(pre, 0, 1, h, h)?;
                g.sigmoid(s)?
            };
            let g_gate = {
                let s = g.slice(pre, 0, 1, 2 * h, h)?;
                g.tanh(s)?
            };
            let o_gate = {
                let s = g.slice(pre, 0, 1, 3 * h, h)?;
                g.sigmoid(s)?
            };
            let keep = g.mul(f_gate, c_prev)?;
            let write = g.mul(i_gate, g_gate)?;
            let c_t = g.add(keep, write)?;
            let c_act = g.tanh(c_t)?;
            let h_t = g.mul(o_gate, c_act)?;
            h_prev = h_t;
            c_prev = c_t;
        }

        let head = g.matmul(h_prev, w_out)?;
        let logits = g.add_bias(head, b_out)?;
        let probs = g.softmax(logits)?;
        let mut class_logits = Vec::with_capacity(k);
        for class in 0..k {
            let cell = g.slice(logits, 0, 1, class, 1)?;
            class_logits.push(g.sum(cell)?);
        }

        Ok(Self {
            graph: g,
            input,
            h0,
            c0,
            w_x,
            w_h,
            b,
            w_out,
            b_out,
            logits,
            probs,
            class_logits,
        })
    }

    pub fn check_params(&self, params: &LstmParams, cfg: &ModelConfig) -> Result<(), ModelError> {
        let (m, h, k) = (cfg.num_features, cfg.hidden_size, cfg.num_classes);
        let checks: [(&str, &Tensor, [usize; 2]); 3] = [
            ("w_x", &params.w_x, [m, 4 * h]),
            ("w_h", &params.w_h, [h, 4 * h]),
            ("w_out", &params.w_out, [h, k]),
        ];
        for (name, tensor, expected) in checks {
            if tensor.shape() != expected {
                return Err(ModelError::Config(format!(
                    "parameter {name} has shape {:?}, expected {expected:?}",
                    tensor.shape()
                )));
            }
        }
        if params.b.shape() != [4 * h] || params.b_out.shape() != [k] {
            return Err(ModelError::Config("bias shapes inconsistent with config".into()));
        }
        Ok(())
    }
}

/// Xavier-uniform weights, zero biases except the forget gate (kept at 1.0
/// so early cell state survives long enough to train).
pub(crate) fn init_params(cfg: &ModelConfig) -> LstmParams {
    let (m, h, k) = (cfg.num_features, cfg.hidden_size, cfg.num_classes);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut uniform = |rows: usize, cols: usize| {
        let scale = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-scale..scale))
            .collect();
        Tensor::new(vec![rows, cols], data).expect("finite init")
    };
    let w_x = uniform(m, 4 * h);
    let w_h = uniform(h, 4 * h);
    let w_out = uniform(h, k);
    let mut bias = vec![0.0; 4 * h];
    for v in bias.iter_mut().take(2 * h).skip(h) {
        *v = 1.0;
    }
    LstmParams {
        w_x,
        w_h,
        b: Tensor::new(vec![4 * h], bias).expect("finite init"),
        w_out,
        b_out: Tensor::zeros(&[k]),
    }
}
