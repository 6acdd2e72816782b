use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::syntax::SdiOptions;

/// Which hidden states the aspect attention reads and pools.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionStates {
    Lstm,
    Gcn,
}

impl AttentionStates {
    fn as_str(self) -> &'static str {
        match self {
            AttentionStates::Lstm => "lstm",
            AttentionStates::Gcn => "gcn",
        }
    }
}

impl FromStr for AttentionStates {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lstm" => Ok(AttentionStates::Lstm),
            "gcn" => Ok(AttentionStates::Gcn),
            other => Err(Error::Config(format!(
                "attention_states must be `lstm` or `gcn`, got `{other}`"
            ))),
        }
    }
}

/// How the per-sentence adjacency is built and which GCN paths run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AblationFlags {
    /// Off: every adjacency is the identity.
    pub use_dependency: bool,
    /// Off: arcs weigh 1 instead of their relation ratio.
    pub use_sdi_weights: bool,
    /// Off: the reverse-direction path is dropped.
    pub use_bidirectional_gcn: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        AblationFlags {
            use_dependency: true,
            use_sdi_weights: true,
            use_bidirectional_gcn: true,
        }
    }
}

/// Every hyperparameter of a run. The text form is one `key = value` per
/// line; `#` starts a comment.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub d_w: usize,
    pub d_h: usize,
    pub gcn_layers: usize,
    /// Width of every GCN layer; `None` means `2 · d_h`.
    pub gcn_hidden: Option<usize>,
    pub heads: usize,
    pub ffn_width: usize,
    pub layer_norm_eps: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub lambda_l2: f64,
    pub seed: u64,
    pub min_freq: usize,
    /// Share of the training split held out when no dev split is given.
    pub dev_fraction: f64,
    pub attention_states: AttentionStates,
    pub flags: AblationFlags,
    pub sdi: SdiOptions,
    pub layer_sweep_range: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            d_w: 300,
            d_h: 300,
            gcn_layers: 3,
            gcn_hidden: None,
            heads: 6,
            ffn_width: 600,
            layer_norm_eps: 1e-12,
            learning_rate: 0.001,
            batch_size: 32,
            max_epochs: 100,
            lambda_l2: 1e-5,
            seed: 1,
            min_freq: 1,
            dev_fraction: 0.1,
            attention_states: AttentionStates::Lstm,
            flags: AblationFlags::default(),
            sdi: SdiOptions::default(),
            layer_sweep_range: vec![1, 2, 3, 4],
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!(
            "`{key}` must be `true` or `false`, got `{value}`"
        ))),
    }
}

fn parse_range(key: &str, value: &str) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for part in value.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((lo, hi)) => {
                let (lo, hi): (usize, usize) = (parse(key, lo.trim())?, parse(key, hi.trim())?);
                if lo > hi {
                    return Err(Error::Config(format!("empty range `{part}` in `{key}`")));
                }
                out.extend(lo..=hi);
            }
            None => out.push(parse(key, part)?),
        }
    }
    Ok(out)
}

impl TrainConfig {
    pub const KEYS: [&'static str; 22] = [
        "d_w",
        "d_h",
        "gcn_layers",
        "gcn_hidden",
        "heads",
        "ffn_width",
        "layer_norm_eps",
        "learning_rate",
        "batch_size",
        "max_epochs",
        "lambda_l2",
        "seed",
        "min_freq",
        "dev_fraction",
        "attention_states",
        "use_dependency",
        "use_sdi_weights",
        "use_bidirectional_gcn",
        "sdi_count_root",
        "sdi_count_punct",
        "layer_sweep_range",
        "variant",
    ];

    pub fn gcn_width(&self) -> usize {
        self.gcn_hidden.unwrap_or(2 * self.d_h)
    }

    /// Sets one field from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "d_w" => self.d_w = parse(key, value)?,
            "d_h" => self.d_h = parse(key, value)?,
            "gcn_layers" => self.gcn_layers = parse(key, value)?,
            "gcn_hidden" => {
                self.gcn_hidden = match value {
                    "auto" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "heads" => self.heads = parse(key, value)?,
            "ffn_width" => self.ffn_width = parse(key, value)?,
            "layer_norm_eps" => self.layer_norm_eps = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "max_epochs" => self.max_epochs = parse(key, value)?,
            "lambda_l2" => self.lambda_l2 = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "min_freq" => self.min_freq = parse(key, value)?,
            "dev_fraction" => self.dev_fraction = parse(key, value)?,
            "attention_states" => self.attention_states = value.parse()?,
            "use_dependency" => self.flags.use_dependency = parse_bool(key, value)?,
            "use_sdi_weights" => self.flags.use_sdi_weights = parse_bool(key, value)?,
            "use_bidirectional_gcn" => self.flags.use_bidirectional_gcn = parse_bool(key, value)?,
            "sdi_count_root" => self.sdi.count_root = parse_bool(key, value)?,
            "sdi_count_punct" => self.sdi.count_punct = parse_bool(key, value)?,
            "layer_sweep_range" => self.layer_sweep_range = parse_range(key, value)?,
            "variant" => *self = value.parse::<Variant>()?.apply(self),
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Applies every `key = value` line of `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`, got `{raw}`", i + 1))
            })?;
            self.set(key.trim(), value)
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<TrainConfig> {
        let mut config = TrainConfig::default();
        config.apply_text(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_w", self.d_w),
            ("d_h", self.d_h),
            ("gcn_layers", self.gcn_layers),
            ("heads", self.heads),
            ("ffn_width", self.ffn_width),
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("gcn_hidden", self.gcn_width()),
        ];
        if let Some((key, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("`{key}` must be at least 1")));
        }
        if self.d_w % 2 != 0 {
            return Err(Error::Config(format!(
                "d_w = {} must be even for the positional encoding",
                self.d_w
            )));
        }
        if self.d_w % self.heads != 0 {
            return Err(Error::Config(format!(
                "d_w = {} is not divisible into {} heads",
                self.d_w, self.heads
            )));
        }
        if self.attention_states == AttentionStates::Lstm && self.gcn_width() != 2 * self.d_h {
            return Err(Error::Config(format!(
                "attention over LSTM states needs gcn_hidden = 2·d_h = {}, got {}",
                2 * self.d_h,
                self.gcn_width()
            )));
        }
        if !(self.learning_rate > 0.0) || !(self.layer_norm_eps > 0.0) {
            return Err(Error::Config("learning_rate and layer_norm_eps must be positive".into()));
        }
        if !(self.lambda_l2 >= 0.0) {
            return Err(Error::Config("lambda_l2 must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.dev_fraction) {
            return Err(Error::Config("dev_fraction must lie in [0, 1)".into()));
        }
        if self.layer_sweep_range.is_empty() || self.layer_sweep_range.contains(&0) {
            return Err(Error::Config(
                "layer_sweep_range must list at least one layer count ≥ 1".into(),
            ));
        }
        Ok(())
    }
}

impl fmt::Display for TrainConfig {
    /// The text form read by [`TrainConfig::from_text`].
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let hidden = self
            .gcn_hidden
            .map_or_else(|| "auto".to_string(), |h| h.to_string());
        let range: Vec<String> = self.layer_sweep_range.iter().map(usize::to_string).collect();
        writeln!(f, "d_w = {}", self.d_w)?;
        writeln!(f, "d_h = {}", self.d_h)?;
        writeln!(f, "gcn_layers = {}", self.gcn_layers)?;
        writeln!(f, "gcn_hidden = {hidden}")?;
        writeln!(f, "heads = {}", self.heads)?;
        writeln!(f, "ffn_width = {}", self.ffn_width)?;
        writeln!(f, "layer_norm_eps = {:e}", self.layer_norm_eps)?;
        writeln!(f, "learning_rate = {}", self.learning_rate)?;
        writeln!(f, "batch_size = {}", self.batch_size)?;
        writeln!(f, "max_epochs = {}", self.max_epochs)?;
        writeln!(f, "lambda_l2 = {:e}", self.lambda_l2)?;
        writeln!(f, "seed = {}", self.seed)?;
        writeln!(f, "min_freq = {}", self.min_freq)?;
        writeln!(f, "dev_fraction = {}", self.dev_fraction)?;
        writeln!(f, "attention_states = {}", self.attention_states.as_str())?;
        writeln!(f, "use_dependency = {}", self.flags.use_dependency)?;
        writeln!(f, "use_sdi_weights = {}", self.flags.use_sdi_weights)?;
        writeln!(f, "use_bidirectional_gcn = {}", self.flags.use_bidirectional_gcn)?;
        writeln!(f, "sdi_count_root = {}", self.sdi.count_root)?;
        writeln!(f, "sdi_count_punct = {}", self.sdi.count_punct)?;
        writeln!(f, "layer_sweep_range = {}", range.join(","))
    }
}

/// The four model variants compared in the ablation table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Full,
    /// Identity adjacency.
    NoDependency,
    /// Binary adjacency.
    NoEdgeWeights,
    /// Forward GCN path only.
    NoBidirectional,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Full,
        Variant::NoDependency,
        Variant::NoEdgeWeights,
        Variant::NoBidirectional,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoDependency => "d-wo",
            Variant::NoEdgeWeights => "ew-wo",
            Variant::NoBidirectional => "bi-wo",
        }
    }

    pub fn flags(self) -> AblationFlags {
        let full = AblationFlags::default();
        match self {
            Variant::Full => full,
            Variant::NoDependency => AblationFlags {
                use_dependency: false,
                ..full
            },
            Variant::NoEdgeWeights => AblationFlags {
                use_sdi_weights: false,
                ..full
            },
            Variant::NoBidirectional => AblationFlags {
                use_bidirectional_gcn: false,
                ..full
            },
        }
    }

    pub fn apply(self, config: &TrainConfig) -> TrainConfig {
        TrainConfig {
            flags: self.flags(),
            ..config.clone()
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown variant `{s}` (expected one of full, d-wo, ew-wo, bi-wo)"
                ))
            })
    }
}
