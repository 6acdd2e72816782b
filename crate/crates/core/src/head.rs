//! Aspect masking, retrieval attention, fusion with the transformer
//! summary, and the softmax classifier with its loss.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Axis, Decay, Graph, ParamId, ParameterStore, Var};
use crate::corpus::Polarity;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Floor applied to the gold-class probability inside the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Zeroes every row of `h` outside `[start, start + len)`.
pub fn aspect_mask(g: &mut Graph, h: Var, start: usize, len: usize) -> Result<Var> {
    let n = g.shape(h).0;
    if len == 0 || start + len > n {
        return Err(Error::shape(
            "aspect_mask",
            format!("span [{start}, {}) outside {n} rows", start + len),
        ));
    }
    let keep: Vec<bool> = (0..n).map(|i| i >= start && i < start + len).collect();
    g.mask_rows(h, &keep)
}

/// Attention of each state against the summed masked features.
///
/// `beta_i = states_i · Σ_j mask_j`, `alpha = softmax(beta)`, and the pooled
/// vector is `Σ_i alpha_i states_i`. Returns `(alpha: 1 × n, pooled: 1 × d)`.
pub fn aspect_attention(g: &mut Graph, states: Var, h_mask: Var) -> Result<(Var, Var)> {
    let (n, d) = g.shape(states);
    let (m, d_mask) = g.shape(h_mask);
    if n != m || d != d_mask {
        return Err(Error::shape(
            "aspect_attention",
            format!("states {:?} vs masked features {:?}", (n, d), (m, d_mask)),
        ));
    }
    let summary = g.sum(h_mask, Axis::Rows);
    let states_t = g.transpose(states);
    let beta = g.matmul(summary, states_t)?;
    let alpha = g.softmax(beta, Axis::Cols);
    let pooled = g.matmul(alpha, states)?;
    Ok((alpha, pooled))
}

/// Projection of the mean transformer row into the pooled space.
#[derive(Debug, Clone, Copy)]
pub struct FuseParams {
    pub w: ParamId,
    pub b: ParamId,
}

impl FuseParams {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParameterStore,
        prefix: &str,
        d_model: usize,
        d_pooled: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let bound = 1.0 / (d_model as f64).sqrt();
        Ok(FuseParams {
            w: store.register(
                format!("{prefix}.w"),
                Matrix::uniform(d_model, d_pooled, bound, rng),
                Decay::Weight,
            )?,
            b: store.register(
                format!("{prefix}.b"),
                Matrix::uniform(1, d_pooled, bound, rng),
                Decay::Exempt,
            )?,
        })
    }
}

/// `pooled + mean_rows(z_out) · W + b`.
pub fn fuse(g: &mut Graph, pooled: Var, z_out: Var, params: &FuseParams) -> Result<Var> {
    let summary = g.mean(z_out, Axis::Rows);
    let (w, b) = (g.param(params.w), g.param(params.b));
    let projected = g.linear(summary, w, b)?;
    g.add(pooled, projected)
}

#[derive(Debug, Clone, Copy)]
pub struct ClassifierParams {
    pub w: ParamId,
    pub b: ParamId,
}

impl ClassifierParams {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParameterStore,
        prefix: &str,
        d_in: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let bound = 1.0 / (d_in as f64).sqrt();
        let classes = Polarity::ALL.len();
        Ok(ClassifierParams {
            w: store.register(
                format!("{prefix}.w"),
                Matrix::uniform(d_in, classes, bound, rng),
                Decay::Weight,
            )?,
            b: store.register(
                format!("{prefix}.b"),
                Matrix::uniform(1, classes, bound, rng),
                Decay::Exempt,
            )?,
        })
    }
}

/// Class probabilities `softmax(res_out · W + b)` as a `1 × 3` node.
pub fn classify(g: &mut Graph, res_out: Var, params: &ClassifierParams) -> Result<Var> {
    let (w, b) = (g.param(params.w), g.param(params.b));
    let logits = g.linear(res_out, w, b)?;
    Ok(g.softmax(logits, Axis::Cols))
}

/// `−log(max(prob[label], PROB_FLOOR))` as a scalar node.
pub fn cross_entropy(g: &mut Graph, prob: Var, label: Polarity) -> Result<Var> {
    let p = g.slice_cols(prob, label.index(), 1)?;
    let p = g.clamp_min(p, PROB_FLOOR);
    let lp = g.log(p);
    Ok(g.scale(lp, -1.0))
}

/// Cross-entropy plus `lambda` times the squared norm of every decayed
/// parameter in `store`.
pub fn compute_loss(prob: &[f64; 3], label: Polarity, store: &ParameterStore, lambda: f64) -> f64 {
    -prob[label.index()].max(PROB_FLOOR).ln() + lambda * store.decayed_sum_squares()
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub prob: [f64; 3],
    pub predicted_label: Polarity,
    pub res_out: Vec<f64>,
}

impl Prediction {
    pub fn new(prob: [f64; 3], res_out: Vec<f64>) -> Self {
        let predicted_label = Polarity::from_index(argmax(&prob)).expect("three classes");
        Prediction {
            prob,
            predicted_label,
            res_out,
        }
    }

    pub fn from_graph(g: &Graph, prob: Var, res_out: Var) -> Self {
        let p = g.value(prob).as_slice();
        Prediction::new([p[0], p[1], p[2]], g.value(res_out).as_slice().to_vec())
    }
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub index: usize,
    pub prob: [f64; 3],
    pub predicted: Polarity,
    pub gold: Polarity,
}
