use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::Serialize;

use super::{evaluate, train, MetricsReport, TrainConfig, TrainOutcome, Variant};
use crate::corpus::{AspectSample, EmbeddingTable, Vocab};
use crate::error::{Error, Result};
use crate::head::{Prediction, PredictionRecord};
use crate::model::{prepare_samples, Model, PreparedSample};
use crate::rng;
use crate::syntax::SdiTable;

/// Splits off `fraction` of `samples` (at least one, at most all but one)
/// as a dev set, choosing members with the `split` stream of `seed`.
/// With fewer than two samples or a zero fraction the dev set is the
/// training set itself.
pub fn holdout_split(
    samples: &[AspectSample],
    fraction: f64,
    seed: u64,
) -> (Vec<AspectSample>, Vec<AspectSample>) {
    if samples.len() < 2 || fraction <= 0.0 {
        return (samples.to_vec(), samples.to_vec());
    }
    let dev_len = ((samples.len() as f64 * fraction).round() as usize).clamp(1, samples.len() - 1);
    let mut idx: Vec<usize> = (0..samples.len()).collect();
    idx.shuffle(&mut rng::stream(seed, rng::SPLIT));
    let mut is_dev = vec![false; samples.len()];
    for &i in &idx[..dev_len] {
        is_dev[i] = true;
    }
    let (dev, train): (Vec<_>, Vec<_>) = samples
        .iter()
        .cloned()
        .zip(is_dev)
        .partition(|(_, d)| *d);
    (
        train.into_iter().map(|(s, _)| s).collect(),
        dev.into_iter().map(|(s, _)| s).collect(),
    )
}

/// A fresh model for `vocab`: embedding rows come from `embeddings` when
/// given (out-of-vocabulary rows from the `oov` stream), everything else
/// from the `init` stream.
pub fn init_model(config: &TrainConfig, vocab: &Vocab, embeddings: Option<&Path>) -> Result<Model> {
    let mut oov = rng::stream(config.seed, rng::OOV);
    let table = match embeddings {
        Some(path) => EmbeddingTable::load_pretrained(path, vocab, config.d_w, &mut oov)?,
        None => EmbeddingTable::random(vocab, config.d_w, &mut oov),
    };
    if embeddings.is_some() {
        log::info!("{} of {} vocabulary rows pretrained", table.pretrained_rows, vocab.len());
    }
    Model::new(config, table, &mut rng::stream(config.seed, rng::INIT))
}

/// Everything a finished run produced.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: TrainConfig,
    pub vocab: Vocab,
    pub sdi: SdiTable,
    pub outcome: TrainOutcome,
    /// Best-dev model on the test split, when one was given.
    pub test: Option<MetricsReport>,
    /// Final-epoch model on the test split.
    pub test_final: Option<MetricsReport>,
    pub test_predictions: Vec<Prediction>,
}

impl Experiment {
    /// Test metrics when available, otherwise the best dev metrics.
    pub fn headline(&self) -> &MetricsReport {
        self.test.as_ref().unwrap_or(&self.outcome.best_dev)
    }
}

/// Trains one model. Vocabulary and relation statistics come from the
/// training split only; without `dev`, a hold-out is cut from `train_raw`.
pub fn run_experiment(
    config: &TrainConfig,
    train_raw: &[AspectSample],
    dev_raw: Option<&[AspectSample]>,
    test_raw: Option<&[AspectSample]>,
    embeddings: Option<&Path>,
) -> Result<Experiment> {
    config.validate()?;
    if train_raw.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let (train_raw, dev_raw) = match dev_raw {
        Some(dev) => (train_raw.to_vec(), dev.to_vec()),
        None => holdout_split(train_raw, config.dev_fraction, config.seed),
    };
    let vocab = Vocab::build(&train_raw, config.min_freq)?;
    let sdi = SdiTable::collect(&train_raw, config.sdi)?;
    let prep = |s: &[AspectSample]| prepare_samples(s, &vocab, Some(&sdi), config.flags);
    let (train_set, dev_set) = (prep(&train_raw)?, prep(&dev_raw)?);
    let test_set: Option<Vec<PreparedSample>> = test_raw.map(prep).transpose()?;

    let model = init_model(config, &vocab, embeddings)?;
    let outcome = train(config, model, &train_set, &dev_set)?;
    let (test, test_final, test_predictions) = match &test_set {
        Some(t) => {
            let (best, preds) = evaluate(&outcome.best, t)?;
            let (last, _) = evaluate(&outcome.final_model(), t)?;
            (Some(best), Some(last), preds)
        }
        None => (None, None, Vec::new()),
    };
    Ok(Experiment {
        config: config.clone(),
        vocab,
        sdi,
        outcome,
        test,
        test_final,
        test_predictions,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub accuracy: f64,
    pub macro_f1: f64,
    /// Times the reverse-direction GCN path ran during training.
    pub transpose_path_evals: usize,
}

pub fn run_ablation(
    config: &TrainConfig,
    variants: &[Variant],
    train_raw: &[AspectSample],
    dev_raw: Option<&[AspectSample]>,
    test_raw: Option<&[AspectSample]>,
    embeddings: Option<&Path>,
) -> Result<Vec<AblationRow>> {
    variants
        .iter()
        .map(|v| {
            log::info!("ablation variant {v}");
            let exp = run_experiment(&v.apply(config), train_raw, dev_raw, test_raw, embeddings)?;
            let m = exp.headline();
            Ok(AblationRow {
                variant: v.name().to_string(),
                accuracy: m.accuracy,
                macro_f1: m.macro_f1,
                transpose_path_evals: exp.outcome.gcn_stats.transpose_path_evals,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub layers: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
}

pub fn layer_sweep(
    config: &TrainConfig,
    layers: &[usize],
    train_raw: &[AspectSample],
    dev_raw: Option<&[AspectSample]>,
    test_raw: Option<&[AspectSample]>,
    embeddings: Option<&Path>,
) -> Result<Vec<SweepRow>> {
    if layers.is_empty() {
        return Err(Error::Empty("layer range"));
    }
    layers
        .iter()
        .map(|&k| {
            log::info!("sweep: {k} graph convolution layers");
            let c = TrainConfig {
                gcn_layers: k,
                ..config.clone()
            };
            let exp = run_experiment(&c, train_raw, dev_raw, test_raw, embeddings)?;
            let m = exp.headline();
            Ok(SweepRow {
                layers: k,
                accuracy: m.accuracy,
                macro_f1: m.macro_f1,
            })
        })
        .collect()
}

pub fn write_epoch_log<W: Write>(mut w: W, epochs: &[super::EpochRecord]) -> std::io::Result<()> {
    writeln!(w, "epoch\ttrain_loss\tdev_acc\tdev_f1")?;
    for e in epochs {
        writeln!(w, "{}\t{:e}\t{}\t{}", e.epoch, e.train_loss, e.dev_acc, e.dev_f1)?;
    }
    Ok(())
}

pub fn write_sweep_series<W: Write>(mut w: W, rows: &[SweepRow]) -> std::io::Result<()> {
    writeln!(w, "layers\taccuracy\tmacro_f1")?;
    for r in rows {
        writeln!(w, "{}\t{}\t{}", r.layers, r.accuracy, r.macro_f1)?;
    }
    Ok(())
}

pub fn write_ablation_table<W: Write>(mut w: W, rows: &[AblationRow]) -> std::io::Result<()> {
    writeln!(w, "variant\taccuracy\tmacro_f1")?;
    for r in rows {
        writeln!(w, "{}\t{}\t{}", r.variant, r.accuracy, r.macro_f1)?;
    }
    Ok(())
}

/// One JSON object per line, in sample order.
pub fn write_predictions<W: Write>(
    mut w: W,
    predictions: &[Prediction],
    samples: &[PreparedSample],
) -> Result<()> {
    if predictions.len() != samples.len() {
        return Err(Error::shape(
            "write_predictions",
            format!("{} predictions for {} samples", predictions.len(), samples.len()),
        ));
    }
    for (index, (p, s)) in predictions.iter().zip(samples).enumerate() {
        let record = PredictionRecord {
            index,
            prob: p.prob,
            predicted: p.predicted_label,
            gold: s.label,
        };
        serde_json::to_writer(&mut w, &record)?;
        writeln!(w).map_err(|e| Error::io("<predictions>", e))?;
    }
    Ok(())
}
