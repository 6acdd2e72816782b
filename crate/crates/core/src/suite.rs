//! Finite-difference checks over every graph primitive and over the
//! complete model loss, for the `gradcheck` command and the acceptance
//! run.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{
    check_inputs, check_parameters, finite_diff_check, Axis, Decay, GradCheckReport, Graph,
    ParameterStore, Var,
};
use crate::corpus::{EmbeddingTable, Vocab};
use crate::error::Result;
use crate::bigcn::{bigcn_stack, GcnStats};
use crate::head::{aspect_attention, aspect_mask, classify, cross_entropy, fuse};
use crate::model::{prepare_sample, Model, PreparedSample};
use crate::rng;
use crate::synthetic::random_tree_sample;
use crate::syntax::{SdiOptions, SdiTable};
use crate::tensor::Matrix;
use crate::training::{AttentionStates, TrainConfig, Variant};

pub const EPS: f64 = 1e-5;

/// Model size used for the composed checks.
pub fn suite_config(seed: u64) -> TrainConfig {
    TrainConfig {
        d_w: 8,
        d_h: 8,
        gcn_layers: 1,
        heads: 2,
        ffn_width: 16,
        lambda_l2: 1e-3,
        seed,
        ..TrainConfig::default()
    }
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub checks: Vec<(String, GradCheckReport)>,
}

impl SuiteReport {
    pub fn max_rel_error(&self) -> f64 {
        self.checks
            .iter()
            .map(|(_, r)| r.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&(String, GradCheckReport)> {
        self.checks
            .iter()
            .max_by(|a, b| a.1.max_rel_error.total_cmp(&b.1.max_rel_error))
    }

    pub fn checked(&self) -> usize {
        self.checks.iter().map(|(_, r)| r.checked).sum()
    }
}

/// Weighted sum with fixed pseudo-random weights, so that every output
/// entry reaches the loss with a different coefficient.
fn project(g: &mut Graph, x: Var) -> Result<Var> {
    let (r, c) = g.shape(x);
    let w = Matrix::from_vec(r, c, (0..r * c).map(|k| ((k * 7 + 3) % 11) as f64 / 5.0 - 1.0).collect());
    let w = g.constant(w);
    let p = g.mul(x, w)?;
    Ok(g.sum_all(p))
}

type Primitive = fn(&mut Graph, &[Var]) -> Result<Var>;

fn primitives() -> Vec<(&'static str, Vec<(usize, usize)>, Primitive)> {
    vec![
        ("matmul", vec![(3, 4), (4, 5)], |g, v| g.matmul(v[0], v[1])),
        ("add", vec![(4, 3), (4, 3)], |g, v| g.add(v[0], v[1])),
        ("sub", vec![(4, 3), (4, 3)], |g, v| g.sub(v[0], v[1])),
        ("mul", vec![(4, 3), (4, 3)], |g, v| g.mul(v[0], v[1])),
        ("add_row", vec![(4, 3), (1, 3)], |g, v| g.add_row(v[0], v[1])),
        ("linear", vec![(4, 3), (3, 5), (1, 5)], |g, v| g.linear(v[0], v[1], v[2])),
        ("concat_cols", vec![(4, 2), (4, 3)], |g, v| g.concat_cols(&[v[0], v[1]])),
        ("concat_rows", vec![(2, 3), (3, 3)], |g, v| g.concat_rows(&[v[0], v[1]])),
        ("slice_rows", vec![(5, 3)], |g, v| g.slice_rows(v[0], 1, 3)),
        ("slice_cols", vec![(3, 6)], |g, v| g.slice_cols(v[0], 2, 3)),
        ("transpose", vec![(3, 5)], |g, v| Ok(g.transpose(v[0]))),
        ("tanh", vec![(4, 3)], |g, v| Ok(g.tanh(v[0]))),
        ("sigmoid", vec![(4, 3)], |g, v| Ok(g.sigmoid(v[0]))),
        ("relu", vec![(4, 3)], |g, v| Ok(g.relu(v[0]))),
        ("exp", vec![(4, 3)], |g, v| Ok(g.exp(v[0]))),
        ("log", vec![(4, 3)], |g, v| {
            let pos = g.exp(v[0]);
            Ok(g.log(pos))
        }),
        ("scale", vec![(4, 3)], |g, v| Ok(g.scale(v[0], -2.5))),
        ("clamp_min", vec![(4, 3)], |g, v| Ok(g.clamp_min(v[0], 0.1))),
        ("scale_rows", vec![(4, 3)], |g, v| g.scale_rows(v[0], &[0.5, -1.0, 2.0, 0.25])),
        ("mask_rows", vec![(4, 3)], |g, v| g.mask_rows(v[0], &[false, true, true, false])),
        ("softmax_rows", vec![(4, 3)], |g, v| Ok(g.softmax(v[0], Axis::Rows))),
        ("softmax_cols", vec![(4, 3)], |g, v| Ok(g.softmax(v[0], Axis::Cols))),
        ("sum_rows", vec![(4, 3)], |g, v| Ok(g.sum(v[0], Axis::Rows))),
        ("sum_cols", vec![(4, 3)], |g, v| Ok(g.sum(v[0], Axis::Cols))),
        ("mean_rows", vec![(4, 3)], |g, v| Ok(g.mean(v[0], Axis::Rows))),
        ("mean_cols", vec![(4, 3)], |g, v| Ok(g.mean(v[0], Axis::Cols))),
        ("sum_all", vec![(4, 3)], |g, v| Ok(g.sum_all(v[0]))),
        ("sum_squares", vec![(4, 3)], |g, v| Ok(g.sum_squares(v[0]))),
        ("layer_norm", vec![(4, 6), (1, 6), (1, 6)], |g, v| g.layer_norm(v[0], v[1], v[2], 1e-12)),
    ]
}

fn check_primitives(rng: &mut ChaCha8Rng, out: &mut Vec<(String, GradCheckReport)>) -> Result<()> {
    for (name, shapes, op) in primitives() {
        let inputs: Vec<Matrix> = shapes
            .iter()
            .map(|&(r, c)| Matrix::uniform(r, c, 1.5, rng))
            .collect();
        let report = finite_diff_check(
            |g, v| {
                let y = op(g, v)?;
                project(g, y)
            },
            &inputs,
            EPS,
        )?;
        out.push((name.to_string(), report));
    }

    let mut store = ParameterStore::new();
    let table = store.register("table", Matrix::uniform(5, 3, 1.0, rng), Decay::Weight)?;
    let w = store.register("w", Matrix::uniform(3, 3, 1.0, rng), Decay::Weight)?;
    out.push((
        "gather_rows".into(),
        check_parameters(
            &store,
            |g| {
                let e = g.gather_rows(table, &[4, 0, 4, 2])?;
                let wv = g.param(w);
                let y = g.matmul(e, wv)?;
                project(g, y)
            },
            EPS,
            |_| true,
        )?,
    ));
    Ok(())
}

/// Cross-entropy plus the explicit L2 term, through the full model.
fn model_loss(model: &Model, lambda: f64, g: &mut Graph, sample: &PreparedSample) -> Result<Var> {
    let pass = model.layout.forward(g, sample)?;
    let mut loss = cross_entropy(g, pass.prob, sample.label)?;
    let decayed: Vec<_> = model
        .store
        .iter()
        .filter(|(_, p)| p.decay == Decay::Weight)
        .map(|(id, _)| id)
        .collect();
    for id in decayed {
        let p = g.param(id);
        let sq = g.sum_squares(p);
        let term = g.scale(sq, lambda);
        loss = g.add(loss, term)?;
    }
    Ok(loss)
}

fn check_model(
    config: &TrainConfig,
    label: &str,
    rng: &mut ChaCha8Rng,
    out: &mut Vec<(String, GradCheckReport)>,
) -> Result<()> {
    const WORDS: [&str; 6] = ["the", "soup", "was", "cold", "but", "fine"];
    const RELATIONS: [&str; 4] = ["nsubj", "amod", "det", "conj"];
    let corpus: Vec<_> = (0..8)
        .map(|_| random_tree_sample(rng, 5, &WORDS, &RELATIONS))
        .collect();
    let vocab = Vocab::build(&corpus, 1)?;
    let sdi = SdiTable::collect(&corpus, SdiOptions::default())?;
    let table = EmbeddingTable::random(&vocab, config.d_w, &mut rng::stream(config.seed, rng::OOV));
    let model = Model::new(config, table, &mut rng::stream(config.seed, rng::INIT))?;
    let sample = prepare_sample(&corpus[0], &vocab, Some(&sdi), config.flags)?;

    let report = check_parameters(
        &model.store,
        |g| model_loss(&model, config.lambda_l2, g, &sample),
        EPS,
        |_| true,
    )?;
    out.push((format!("model[{label}] parameters"), report));

    // The same loss as a function of the GCN input and of the transformer
    // input, with the encoders cut off.
    let mut g = Graph::with_params(&model.store);
    let pass = model.layout.forward(&mut g, &sample)?;
    let h_lstm = g.value(pass.h_lstm).clone();
    let z_out = g.value(pass.z_out).clone();
    drop(g);
    let layout = &model.layout;
    let report = check_inputs(
        &model.store,
        |g, v| {
            let mut stats = GcnStats::default();
            let h = bigcn_stack(g, v[0], &sample.adjacency, &sample.degrees, &layout.gcn, &mut stats)?;
            let m = aspect_mask(g, h, sample.aspect_start, sample.aspect_len)?;
            let states = match layout.attention_states {
                AttentionStates::Lstm => v[0],
                AttentionStates::Gcn => h,
            };
            let (_, pooled) = aspect_attention(g, states, m)?;
            let r = fuse(g, pooled, v[1], &layout.fuse)?;
            let p = classify(g, r, &layout.classifier)?;
            cross_entropy(g, p, sample.label)
        },
        &[h_lstm, z_out],
        EPS,
    )?;
    out.push((format!("model[{label}] encoder outputs"), report));
    Ok(())
}

/// Runs every check with inputs drawn from `seed`.
pub fn run_gradient_suite(seed: u64) -> Result<SuiteReport> {
    let mut rng = rng::stream(seed, "gradcheck");
    let mut checks = Vec::new();
    check_primitives(&mut rng, &mut checks)?;
    let base = suite_config(seed);
    for v in Variant::ALL {
        check_model(&v.apply(&base), v.name(), &mut rng, &mut checks)?;
    }
    let gcn_states = TrainConfig {
        attention_states: AttentionStates::Gcn,
        ..base.clone()
    };
    check_model(&gcn_states, "gcn-states", &mut rng, &mut checks)?;
    let two_layers = TrainConfig {
        gcn_layers: 2,
        ..base
    };
    check_model(&two_layers, "two-layers", &mut rng, &mut checks)?;
    Ok(SuiteReport { checks })
}
