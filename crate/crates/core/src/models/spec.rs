use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attention::{AutoCorrelationConfig, EtsAttentionConfig, LshConfig, ProbSparseConfig};
use crate::error::{Error, Result};

/// Calendar covariates appended to every input row.
pub const TIME_FEATURES: usize = 4;

/// Forecast horizons evaluated in the experiment grid (hours).
pub const HORIZONS: [usize; 4] = [96, 192, 336, 720];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Vanilla,
    Informer,
    Autoformer,
    Reformer,
    Etsformer,
    Lstm,
    Cnn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 7] = [
        ModelKind::Vanilla,
        ModelKind::Informer,
        ModelKind::Autoformer,
        ModelKind::Reformer,
        ModelKind::Etsformer,
        ModelKind::Lstm,
        ModelKind::Cnn,
    ];

    pub fn is_transformer(self) -> bool {
        !matches!(self, ModelKind::Lstm | ModelKind::Cnn)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Vanilla => "vanilla",
            ModelKind::Informer => "informer",
            ModelKind::Autoformer => "autoformer",
            ModelKind::Reformer => "reformer",
            ModelKind::Etsformer => "etsformer",
            ModelKind::Lstm => "lstm",
            ModelKind::Cnn => "cnn",
        }
    }

    /// Row label used in report tables.
    pub fn display_name(self) -> &'static str {
        match self {
            ModelKind::Vanilla => "Transformer",
            ModelKind::Informer => "Informer",
            ModelKind::Autoformer => "Autoformer",
            ModelKind::Reformer => "Reformer",
            ModelKind::Etsformer => "ETSformer",
            ModelKind::Lstm => "LSTM",
            ModelKind::Cnn => "CNN",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::InvalidSpec(format!(
                    "unknown model kind `{s}` (expected one of vanilla, informer, autoformer, reformer, etsformer, lstm, cnn)"
                ))
            })
    }
}

fn d25() -> usize {
    25
}
fn cnn_default() -> Vec<usize> {
    vec![32, 64]
}
fn d3() -> usize {
    3
}
fn d64() -> usize {
    64
}
fn d2() -> usize {
    2
}

/// Architecture of one forecasting model.
///
/// Input rows are laid out as `[features (n_features) | target | calendar (4)]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_encoder_layers: usize,
    pub n_decoder_layers: usize,
    pub d_ff: usize,
    pub lookback: usize,
    pub label_len: usize,
    pub horizon: usize,
    pub n_features: usize,
    #[serde(default)]
    pub lsh: LshConfig,
    #[serde(default)]
    pub prob_sparse: ProbSparseConfig,
    #[serde(default)]
    pub ets: EtsAttentionConfig,
    #[serde(default)]
    pub auto_correlation: AutoCorrelationConfig,
    #[serde(default = "d25")]
    pub decomp_kernel: usize,
    #[serde(default = "cnn_default")]
    pub cnn_channels: Vec<usize>,
    #[serde(default = "d3")]
    pub cnn_kernel: usize,
    #[serde(default = "d64")]
    pub lstm_units: usize,
    #[serde(default = "d2")]
    pub lstm_layers: usize,
}

impl ModelSpec {
    /// Default desk-scale architecture.
    pub fn new(kind: ModelKind, n_features: usize, horizon: usize) -> Self {
        Self {
            kind,
            d_model: 64,
            n_heads: 4,
            n_encoder_layers: 2,
            n_decoder_layers: 1,
            d_ff: 128,
            lookback: 96,
            label_len: 48,
            horizon,
            n_features,
            lsh: LshConfig::default(),
            prob_sparse: ProbSparseConfig::default(),
            ets: EtsAttentionConfig::default(),
            auto_correlation: AutoCorrelationConfig::default(),
            decomp_kernel: 25,
            cnn_channels: cnn_default(),
            cnn_kernel: 3,
            lstm_units: 64,
            lstm_layers: 2,
        }
    }

    /// Small architecture for smoke tests and quick runs.
    pub fn tiny(kind: ModelKind, n_features: usize, lookback: usize, horizon: usize) -> Self {
        Self {
            d_model: 8,
            n_heads: 2,
            n_encoder_layers: 1,
            n_decoder_layers: 1,
            d_ff: 16,
            lookback,
            label_len: lookback / 2,
            lsh: LshConfig { n_buckets: 4, n_rounds: 1, chunk_len: 8.min(lookback), seed: 0 },
            prob_sparse: ProbSparseConfig { factor: 3.0, ..ProbSparseConfig::default() },
            ets: EtsAttentionConfig { top_k_freq: 2.min(lookback / 2).max(1), ..EtsAttentionConfig::default() },
            decomp_kernel: if lookback > 25 { 25 } else { 3 },
            cnn_channels: vec![8, 16],
            lstm_units: 16,
            lstm_layers: 2,
            ..Self::new(kind, n_features, horizon)
        }
    }

    pub fn n_inputs(&self) -> usize {
        self.n_features + 1 + TIME_FEATURES
    }

    pub fn target_channel(&self) -> usize {
        self.n_features
    }

    /// Structural checks; any horizon `≥ 1` is accepted.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidSpec(m));
        if self.lookback == 0 || self.horizon == 0 {
            return fail("lookback and horizon must be at least 1".into());
        }
        if self.label_len > self.lookback {
            return fail(format!("label_len {} exceeds lookback {}", self.label_len, self.lookback));
        }
        if self.kind.is_transformer() {
            if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
                return fail(format!(
                    "d_model {} is not divisible by n_heads {}",
                    self.d_model, self.n_heads
                ));
            }
            if !self.d_model.is_multiple_of(2) {
                return fail(format!("d_model {} must be even", self.d_model));
            }
            if self.d_ff == 0 || self.n_encoder_layers == 0 {
                return fail("d_ff and n_encoder_layers must be at least 1".into());
            }
            let needs_decoder = matches!(self.kind, ModelKind::Vanilla | ModelKind::Informer | ModelKind::Autoformer);
            if needs_decoder && self.n_decoder_layers == 0 {
                return fail("encoder-decoder models need n_decoder_layers ≥ 1".into());
            }
        }
        match self.kind {
            ModelKind::Informer => self.prob_sparse.validate()?,
            ModelKind::Reformer => self.lsh.validate()?,
            ModelKind::Autoformer => {
                if self.decomp_kernel.is_multiple_of(2) {
                    return fail(format!("decomp_kernel must be odd, got {}", self.decomp_kernel));
                }
                if self.lookback < 2 {
                    return fail("autoformer needs lookback ≥ 2".into());
                }
            }
            ModelKind::Etsformer => {
                self.ets.validate()?;
                if self.ets.top_k_freq > self.lookback / 2 {
                    return fail(format!(
                        "top_k_freq {} exceeds lookback/2 = {}",
                        self.ets.top_k_freq,
                        self.lookback / 2
                    ));
                }
                if self.lookback < 2 {
                    return fail("etsformer needs lookback ≥ 2".into());
                }
            }
            ModelKind::Cnn => {
                if self.cnn_channels.is_empty() || self.cnn_channels.contains(&0) {
                    return fail("cnn_channels must be non-empty and positive".into());
                }
                if self.cnn_kernel.is_multiple_of(2) {
                    return fail(format!("cnn_kernel must be odd for same padding, got {}", self.cnn_kernel));
                }
            }
            ModelKind::Lstm => {
                if self.lstm_units == 0 || self.lstm_layers == 0 {
                    return fail("lstm_units and lstm_layers must be at least 1".into());
                }
            }
            ModelKind::Vanilla => {}
        }
        Ok(())
    }

    /// [`validate`](Self::validate) plus the experiment's horizon set.
    pub fn validate_experiment(&self) -> Result<()> {
        self.validate()?;
        if !HORIZONS.contains(&self.horizon) {
            return Err(Error::InvalidSpec(format!(
                "horizon {} is not one of {HORIZONS:?}",
                self.horizon
            )));
        }
        Ok(())
    }
}
