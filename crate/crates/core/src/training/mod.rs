//! Mini-batch Adam training, evaluation, ablation runs and the GCN depth
//! sweep.
//!
//! Each sample in a batch gets its own graph; gradients are computed in
//! parallel but always folded into the store in sample order, so results
//! do not depend on the thread count.

mod config;
mod experiment;
mod metrics;
mod optim;

pub use config::{AblationFlags, AttentionStates, TrainConfig, Variant};
pub use experiment::{
    holdout_split, init_model, layer_sweep, run_ablation, run_experiment, write_ablation_table,
    write_epoch_log, write_predictions, write_sweep_series, AblationRow, Experiment, SweepRow,
};
pub use metrics::MetricsReport;
pub use optim::Adam;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::autodiff::ParameterStore;
use crate::bigcn::GcnStats;
use crate::error::{Error, Result};
use crate::head::Prediction;
use crate::model::{Model, PreparedSample};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean over batches of `mean cross-entropy + λ Σθ²`.
    pub train_loss: f64,
    pub dev_acc: f64,
    pub dev_f1: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best dev accuracy (earliest on ties).
    pub best: Model,
    pub final_store: ParameterStore,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_dev: MetricsReport,
    pub final_dev: MetricsReport,
    pub gcn_stats: GcnStats,
}

impl TrainOutcome {
    pub fn final_model(&self) -> Model {
        Model {
            store: self.final_store.clone(),
            layout: self.best.layout.clone(),
        }
    }
}

pub fn evaluate(model: &Model, samples: &[PreparedSample]) -> Result<(MetricsReport, Vec<Prediction>)> {
    let preds = samples
        .par_iter()
        .map(|s| model.predict(s))
        .collect::<Result<Vec<_>>>()?;
    let gold: Vec<_> = samples.iter().map(|s| s.label).collect();
    let predicted: Vec<_> = preds.iter().map(|p| p.predicted_label).collect();
    Ok((MetricsReport::from_pairs(&gold, &predicted)?, preds))
}

/// One optimiser step on `batch`; returns the batch objective before the
/// update.
pub fn train_batch(
    model: &mut Model,
    batch: &[&PreparedSample],
    lambda: f64,
    adam: &mut Adam,
    stats: &mut GcnStats,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Empty("training batch"));
    }
    model.store.zero_grads();
    let scale = 1.0 / batch.len() as f64;
    let group = rayon::current_num_threads().max(1);
    let mut cross_entropy = 0.0;
    for chunk in batch.chunks(group) {
        let results = chunk
            .par_iter()
            .map(|s| model.sample_gradient(s))
            .collect::<Result<Vec<_>>>()?;
        for r in results {
            cross_entropy += r.loss;
            r.grads.accumulate_into(&mut model.store, scale);
            stats.transpose_path_evals += r.stats.transpose_path_evals;
        }
    }
    let objective = cross_entropy * scale + lambda * model.store.decayed_sum_squares();
    model.store.add_l2_grad(lambda);
    adam.step(&mut model.store);
    if !model.store.all_finite() {
        return Err(Error::NonFinite("parameters after optimiser step".into()));
    }
    Ok(objective)
}

pub fn train(
    config: &TrainConfig,
    model: Model,
    train_set: &[PreparedSample],
    dev: &[PreparedSample],
) -> Result<TrainOutcome> {
    train_observed(config, model, train_set, dev, |_, _| true)
}

/// As [`train`], calling `observe` after every epoch; returning `false`
/// ends training after that epoch.
pub fn train_observed<F>(
    config: &TrainConfig,
    mut model: Model,
    train_set: &[PreparedSample],
    dev: &[PreparedSample],
    mut observe: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&EpochRecord, &Model) -> bool,
{
    if train_set.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if dev.is_empty() {
        return Err(Error::Empty("dev set"));
    }
    let mut adam = Adam::new(&model.store, config.learning_rate);
    let mut shuffle = rng::stream(config.seed, rng::SHUFFLE);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut stats = GcnStats::default();
    let mut epochs = Vec::with_capacity(config.max_epochs);
    let mut best: Option<(usize, ParameterStore, MetricsReport)> = None;
    let mut final_dev = None;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut shuffle);
        let mut total = 0.0;
        let mut batches = 0;
        for idx in order.chunks(config.batch_size) {
            let batch: Vec<&PreparedSample> = idx.iter().map(|&i| &train_set[i]).collect();
            total += train_batch(&mut model, &batch, config.lambda_l2, &mut adam, &mut stats)?;
            batches += 1;
        }
        let (dev_metrics, _) = evaluate(&model, dev)?;
        let record = EpochRecord {
            epoch,
            train_loss: total / batches as f64,
            dev_acc: dev_metrics.accuracy,
            dev_f1: dev_metrics.macro_f1,
        };
        log::info!(
            "epoch {epoch}: loss {:.6} dev acc {:.4} dev f1 {:.4}",
            record.train_loss,
            record.dev_acc,
            record.dev_f1
        );
        epochs.push(record);
        if best.as_ref().is_none_or(|(_, _, m)| dev_metrics.accuracy > m.accuracy) {
            best = Some((epoch, model.store.clone(), dev_metrics.clone()));
        }
        final_dev = Some(dev_metrics);
        if !observe(&record, &model) {
            break;
        }
    }

    let (best_epoch, best_store, best_dev) =
        best.ok_or_else(|| Error::Config("max_epochs must be at least 1".into()))?;
    let final_store = std::mem::replace(&mut model.store, best_store);
    Ok(TrainOutcome {
        best: model,
        final_store,
        epochs,
        best_epoch,
        best_dev,
        final_dev: final_dev.expect("at least one epoch ran"),
        gcn_stats: stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{EmbeddingTable, Vocab};
    use crate::model::prepare_samples;
    use crate::synthetic::{synthetic_corpus, SyntheticOptions};
    use crate::syntax::SdiTable;

    fn small_config() -> TrainConfig {
        TrainConfig {
            d_w: 8,
            d_h: 4,
            gcn_layers: 1,
            heads: 2,
            ffn_width: 8,
            max_epochs: 4,
            batch_size: 4,
            seed: 11,
            ..TrainConfig::default()
        }
    }

    fn setup(config: &TrainConfig, n: usize) -> (Model, Vec<PreparedSample>) {
        let corpus = synthetic_corpus(&SyntheticOptions { samples: n, seed: 5 });
        let vocab = Vocab::build(&corpus, 1).unwrap();
        let sdi = SdiTable::collect(&corpus, config.sdi).unwrap();
        let table = EmbeddingTable::random(&vocab, config.d_w, &mut rng::stream(config.seed, rng::OOV));
        let model = Model::new(config, table, &mut rng::stream(config.seed, rng::INIT)).unwrap();
        let prepared = prepare_samples(&corpus, &vocab, Some(&sdi), config.flags).unwrap();
        (model, prepared)
    }

    #[test]
    fn same_seed_same_losses() {
        let config = small_config();
        let run = || {
            let (model, data) = setup(&config, 12);
            let out = train(&config, model, &data, &data).unwrap();
            let (_, preds) = evaluate(&out.best, &data).unwrap();
            (out.epochs, preds)
        };
        let (a, pa) = run();
        let (b, pb) = run();
        for (x, y) in a.iter().zip(&b) {
            assert!((x.train_loss - y.train_loss).abs() < 1e-10);
        }
        assert_eq!(pa, pb);
    }

    #[test]
    fn results_do_not_depend_on_thread_count() {
        let config = small_config();
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| {
                let (model, data) = setup(&config, 10);
                train(&config, model, &data, &data).unwrap().epochs
            })
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn heavy_l2_shrinks_parameters() {
        let config = TrainConfig {
            lambda_l2: 10.0,
            learning_rate: 0.01,
            max_epochs: 6,
            ..small_config()
        };
        let (model, data) = setup(&config, 8);
        let mut norms = vec![model.store.decayed_sum_squares()];
        train_observed(&config, model, &data, &data, |_, m| {
            norms.push(m.store.decayed_sum_squares());
            true
        })
        .unwrap();
        for w in norms.windows(2) {
            assert!(w[1] < w[0], "{norms:?}");
        }
    }

    #[test]
    fn single_sample_loss_decreases() {
        let config = TrainConfig {
            max_epochs: 10,
            ..small_config()
        };
        let (model, data) = setup(&config, 1);
        let out = train(&config, model, &data[..1], &data[..1]).unwrap();
        for w in out.epochs.windows(2) {
            assert!(w[1].train_loss < w[0].train_loss, "{:?}", out.epochs);
        }
    }

    #[test]
    fn best_epoch_is_earliest_maximum() {
        let config = small_config();
        let (model, data) = setup(&config, 6);
        let out = train(&config, model, &data, &data).unwrap();
        let best = out.epochs.iter().map(|e| e.dev_acc).fold(f64::MIN, f64::max);
        let first = out.epochs.iter().find(|e| e.dev_acc == best).unwrap().epoch;
        assert_eq!(out.best_epoch, first);
        let (m, _) = evaluate(&out.best, &data).unwrap();
        assert_eq!(m, out.best_dev);
    }

    #[test]
    fn batch_gradient_matches_mean_of_samples() {
        let config = small_config();
        let (mut model, data) = setup(&config, 3);
        let batch: Vec<&PreparedSample> = data.iter().collect();
        let mut expected = model.store.clone();
        expected.zero_grads();
        for s in &data {
            model.sample_gradient(s).unwrap().grads.accumulate_into(&mut expected, 1.0 / 3.0);
        }
        expected.add_l2_grad(config.lambda_l2);
        let mut adam = Adam::new(&model.store, config.learning_rate);
        train_batch(&mut model, &batch, config.lambda_l2, &mut adam, &mut GcnStats::default()).unwrap();
        for ((_, a), (_, b)) in model.store.iter().zip(expected.iter()) {
            assert!(a.tensor.grad.max_abs_diff(&b.tensor.grad) < 1e-15, "{}", a.name);
        }
    }

    #[test]
    fn empty_training_set_is_an_error() {
        let config = small_config();
        let (model, data) = setup(&config, 2);
        assert!(matches!(train(&config, model, &[], &data), Err(Error::Empty(_))));
    }
}
