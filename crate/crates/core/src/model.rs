//! The full classifier: embeddings, both encoders, the graph convolution
//! stack and the aspect head, with all parameters in one store.

use rand::Rng;

use crate::autodiff::{Decay, Gradients, Graph, ParamId, ParameterStore, Var};
use crate::bigcn::{bigcn_stack, GcnLayerParams, GcnStats};
use crate::corpus::{AspectSample, EmbeddingTable, Polarity, Vocab};
use crate::encoders::{
    bilstm_encode, embed_sequence, transformer_encode, BiLstmParams, TransformerParams,
    TransformerShape,
};
use crate::error::{Error, Result};
use crate::head::{
    aspect_attention, aspect_mask, classify, cross_entropy, fuse, ClassifierParams, FuseParams,
    Prediction,
};
use crate::syntax::{binary_adjacency, out_degrees, sdi_adjacency, SdiTable};
use crate::tensor::Matrix;
use crate::training::{AblationFlags, AttentionStates, TrainConfig};

/// A sample reduced to what the forward pass consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSample {
    pub token_ids: Vec<usize>,
    pub adjacency: Matrix,
    /// Out-degrees in the binary adjacency, self-loop excluded.
    pub degrees: Vec<f64>,
    pub aspect_start: usize,
    pub aspect_len: usize,
    pub label: Polarity,
}

/// Adjacency for one sample under the given variant flags. `sdi` is only
/// read when both dependency and edge weights are enabled.
pub fn variant_adjacency(
    sample: &AspectSample,
    sdi: Option<&SdiTable>,
    flags: AblationFlags,
) -> Result<(Matrix, Vec<f64>)> {
    if !flags.use_dependency {
        return Ok((Matrix::identity(sample.len()), vec![0.0; sample.len()]));
    }
    let binary = binary_adjacency(sample);
    let degrees = out_degrees(&binary);
    if !flags.use_sdi_weights {
        return Ok((binary, degrees));
    }
    let sdi = sdi.ok_or_else(|| Error::Config("edge-weighted adjacency needs an SDI table".into()))?;
    Ok((sdi_adjacency(sample, sdi), degrees))
}

pub fn prepare_sample(
    sample: &AspectSample,
    vocab: &Vocab,
    sdi: Option<&SdiTable>,
    flags: AblationFlags,
) -> Result<PreparedSample> {
    let (adjacency, degrees) = variant_adjacency(sample, sdi, flags)?;
    Ok(PreparedSample {
        token_ids: vocab.encode(&sample.tokens),
        adjacency,
        degrees,
        aspect_start: sample.aspect_start,
        aspect_len: sample.aspect_len,
        label: sample.label,
    })
}

pub fn prepare_samples(
    samples: &[AspectSample],
    vocab: &Vocab,
    sdi: Option<&SdiTable>,
    flags: AblationFlags,
) -> Result<Vec<PreparedSample>> {
    samples
        .iter()
        .map(|s| prepare_sample(s, vocab, sdi, flags))
        .collect()
}

/// Parameter handles for every component.
#[derive(Debug, Clone)]
pub struct Layout {
    pub embedding: ParamId,
    pub lstm: BiLstmParams,
    pub transformer: TransformerParams,
    pub gcn: Vec<GcnLayerParams>,
    pub fuse: FuseParams,
    pub classifier: ClassifierParams,
    pub attention_states: AttentionStates,
}

/// Every intermediate of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardPass {
    pub embedded: Var,
    pub h_lstm: Var,
    pub z_out: Var,
    pub h_gcn: Var,
    pub h_mask: Var,
    pub alpha: Var,
    pub pooled: Var,
    pub res_out: Var,
    pub prob: Var,
    pub stats: GcnStats,
}

impl Layout {
    pub fn forward(&self, g: &mut Graph, sample: &PreparedSample) -> Result<ForwardPass> {
        let embedded = embed_sequence(g, self.embedding, &sample.token_ids)?;
        let h_lstm = bilstm_encode(g, embedded, &self.lstm)?;
        let z_out = transformer_encode(g, embedded, &self.transformer, true)?;
        let mut stats = GcnStats::default();
        let h_gcn = bigcn_stack(
            g,
            h_lstm,
            &sample.adjacency,
            &sample.degrees,
            &self.gcn,
            &mut stats,
        )?;
        let h_mask = aspect_mask(g, h_gcn, sample.aspect_start, sample.aspect_len)?;
        let states = match self.attention_states {
            AttentionStates::Lstm => h_lstm,
            AttentionStates::Gcn => h_gcn,
        };
        let (alpha, pooled) = aspect_attention(g, states, h_mask)?;
        let res_out = fuse(g, pooled, z_out, &self.fuse)?;
        let prob = classify(g, res_out, &self.classifier)?;
        Ok(ForwardPass {
            embedded,
            h_lstm,
            z_out,
            h_gcn,
            h_mask,
            alpha,
            pooled,
            res_out,
            prob,
            stats,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub store: ParameterStore,
    pub layout: Layout,
}

/// Loss and gradients of one sample (cross-entropy only).
#[derive(Debug, Clone)]
pub struct SampleGradient {
    pub loss: f64,
    pub grads: Gradients,
    pub stats: GcnStats,
}

impl Model {
    /// Registers all parameters. `embeddings` supplies the initial table and
    /// fixes the vocabulary size; the other components draw from `rng` in
    /// a fixed order.
    pub fn new<R: Rng + ?Sized>(
        config: &TrainConfig,
        embeddings: EmbeddingTable,
        rng: &mut R,
    ) -> Result<Model> {
        config.validate()?;
        if embeddings.dim() != config.d_w {
            return Err(Error::Config(format!(
                "embedding width {} differs from d_w = {}",
                embeddings.dim(),
                config.d_w
            )));
        }
        let mut store = ParameterStore::new();
        let embedding = store.register("embedding", embeddings.matrix, Decay::Weight)?;
        let lstm = BiLstmParams::init(&mut store, "lstm", config.d_w, config.d_h, rng)?;
        let transformer = TransformerParams::init(
            &mut store,
            "transformer",
            TransformerShape {
                d_model: config.d_w,
                heads: config.heads,
                ffn_width: config.ffn_width,
                layer_norm_eps: config.layer_norm_eps,
            },
            rng,
        )?;
        let width = config.gcn_width();
        let mut gcn = Vec::with_capacity(config.gcn_layers);
        for l in 0..config.gcn_layers {
            let d_in = if l == 0 { lstm.output_width() } else { width };
            gcn.push(GcnLayerParams::init(
                &mut store,
                &format!("gcn.{l}"),
                d_in,
                width,
                config.flags.use_bidirectional_gcn,
                rng,
            )?);
        }
        let pooled = match config.attention_states {
            AttentionStates::Lstm => lstm.output_width(),
            AttentionStates::Gcn => width,
        };
        let fuse = FuseParams::init(&mut store, "fuse", config.d_w, pooled, rng)?;
        let classifier = ClassifierParams::init(&mut store, "classifier", pooled, rng)?;
        Ok(Model {
            store,
            layout: Layout {
                embedding,
                lstm,
                transformer,
                gcn,
                fuse,
                classifier,
                attention_states: config.attention_states,
            },
        })
    }

    /// A model with a zero embedding table of `vocab_len` rows, ready to
    /// receive checkpointed values.
    pub fn skeleton<R: Rng + ?Sized>(config: &TrainConfig, vocab_len: usize, rng: &mut R) -> Result<Model> {
        let table = EmbeddingTable {
            matrix: Matrix::zeros(vocab_len, config.d_w),
            pretrained_rows: 0,
        };
        Model::new(config, table, rng)
    }

    pub fn vocab_len(&self) -> usize {
        self.store.value(self.layout.embedding).rows()
    }

    pub fn predict(&self, sample: &PreparedSample) -> Result<Prediction> {
        let mut g = Graph::with_params(&self.store);
        let pass = self.layout.forward(&mut g, sample)?;
        Ok(Prediction::from_graph(&g, pass.prob, pass.res_out))
    }

    pub fn sample_gradient(&self, sample: &PreparedSample) -> Result<SampleGradient> {
        let mut g = Graph::with_params(&self.store);
        let pass = self.layout.forward(&mut g, sample)?;
        let loss = cross_entropy(&mut g, pass.prob, sample.label)?;
        let value = g.scalar(loss);
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("sample loss {value}")));
        }
        Ok(SampleGradient {
            loss: value,
            grads: g.backward(loss)?,
            stats: pass.stats,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::check_parameters;
    use crate::corpus::Dependency;
    use crate::syntax::SdiOptions;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn tiny_config() -> TrainConfig {
        TrainConfig {
            d_w: 8,
            d_h: 4,
            gcn_layers: 1,
            heads: 2,
            ffn_width: 8,
            ..TrainConfig::default()
        }
    }

    fn sample() -> AspectSample {
        let tokens = ["the", "soup", "was", "very", "good"];
        AspectSample {
            tokens: tokens.iter().map(|t| t.to_string()).collect(),
            aspect_start: 1,
            aspect_len: 1,
            label: Polarity::Positive,
            deps: vec![
                Dependency::new(Some(1), 0, "det"),
                Dependency::new(Some(4), 1, "nsubj"),
                Dependency::new(Some(4), 2, "cop"),
                Dependency::new(Some(4), 3, "advmod"),
                Dependency::new(None, 4, "root"),
            ],
        }
    }

    fn build(config: &TrainConfig) -> (Model, Vocab, PreparedSample) {
        let s = sample();
        let vocab = Vocab::build(std::slice::from_ref(&s), 1).unwrap();
        let sdi = SdiTable::collect(std::slice::from_ref(&s), SdiOptions::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let table = EmbeddingTable::random(&vocab, config.d_w, &mut rng);
        let model = Model::new(config, table, &mut rng).unwrap();
        let p = prepare_sample(&s, &vocab, Some(&sdi), config.flags).unwrap();
        (model, vocab, p)
    }

    #[test]
    fn forward_shapes_and_probabilities() {
        let config = tiny_config();
        let (model, _, p) = build(&config);
        let mut g = Graph::with_params(&model.store);
        let pass = model.layout.forward(&mut g, &p).unwrap();
        assert_eq!(g.shape(pass.h_lstm), (5, 8));
        assert_eq!(g.shape(pass.z_out), (5, 8));
        assert_eq!(g.shape(pass.h_gcn), (5, 8));
        assert_eq!(g.shape(pass.res_out), (1, 8));
        let prob = g.value(pass.prob);
        assert!((prob.sum() - 1.0).abs() < 1e-12);
        assert_eq!(pass.stats.transpose_path_evals, 1);
    }

    #[test]
    fn parameter_names_are_stable() {
        let config = tiny_config();
        let (model, _, _) = build(&config);
        let names: Vec<&str> = model.store.names().collect();
        assert_eq!(names[0], "embedding");
        assert!(names.contains(&"gcn.0.w_bwd"));
        assert!(names.contains(&"classifier.b"));
        assert!(names.contains(&"fuse.w"));
    }

    #[test]
    fn gcn_state_attention_variant() {
        let config = TrainConfig {
            attention_states: AttentionStates::Gcn,
            gcn_hidden: Some(6),
            ..tiny_config()
        };
        let (model, _, p) = build(&config);
        let pred = model.predict(&p).unwrap();
        assert_eq!(pred.res_out.len(), 6);
    }

    #[test]
    fn variant_adjacencies() {
        let s = sample();
        let sdi = SdiTable::collect(std::slice::from_ref(&s), SdiOptions::default()).unwrap();
        let (id, deg) = variant_adjacency(&s, Some(&sdi), AblationFlags {
            use_dependency: false,
            ..AblationFlags::default()
        })
        .unwrap();
        assert_eq!(id, Matrix::identity(5));
        assert_eq!(deg, vec![0.0; 5]);
        let (bin, deg) = variant_adjacency(&s, None, AblationFlags {
            use_sdi_weights: false,
            ..AblationFlags::default()
        })
        .unwrap();
        assert_eq!(bin, binary_adjacency(&s));
        assert_eq!(deg, vec![0.0, 1.0, 0.0, 0.0, 3.0]);
        let (weighted, _) = variant_adjacency(&s, Some(&sdi), AblationFlags::default()).unwrap();
        assert_eq!(weighted[(4, 1)], 0.25);
        assert!(variant_adjacency(&s, None, AblationFlags::default()).is_err());
    }

    #[test]
    fn forward_only_variant_never_uses_transpose() {
        let config = TrainConfig {
            flags: AblationFlags {
                use_bidirectional_gcn: false,
                ..AblationFlags::default()
            },
            gcn_layers: 2,
            ..tiny_config()
        };
        let (model, _, p) = build(&config);
        assert!(model.store.id("gcn.0.w_bwd").is_none());
        let sg = model.sample_gradient(&p).unwrap();
        assert_eq!(sg.stats.transpose_path_evals, 0);
    }

    #[test]
    fn end_to_end_gradient_check() {
        let config = tiny_config();
        let (model, _, p) = build(&config);
        let report = check_parameters(
            &model.store,
            |g| {
                let pass = model.layout.forward(g, &p)?;
                cross_entropy(g, pass.prob, p.label)
            },
            1e-5,
            |_| true,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
        assert!(report.checked > 500);
    }

    #[test]
    fn skeleton_matches_layout() {
        let config = tiny_config();
        let (model, vocab, _) = build(&config);
        let skel = Model::skeleton(&config, vocab.len(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let a: Vec<_> = model.store.iter().map(|(_, p)| (p.name.clone(), p.tensor.shape())).collect();
        let b: Vec<_> = skel.store.iter().map(|(_, p)| (p.name.clone(), p.tensor.shape())).collect();
        assert_eq!(a, b);
    }
}
