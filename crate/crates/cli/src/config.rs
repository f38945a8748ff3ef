//! The `RunConfig` TOML document. Every table rejects unknown keys.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use soilcast::data::{CleanConfig, ColumnMap, SplitSpec, SyntheticConfig, STATIONS};
use soilcast::models::{ModelKind, ModelSpec, HORIZONS};
use soilcast::train::{TrainConfig, BENCH_LENGTHS};

use crate::CliError;

/// Length of the generated stand-in station, in hours.
pub const SYNTHETIC_HOURS: usize = 17_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Grid pool size; `SOILCAST_JOBS` takes precedence.
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default = "default_stations")]
    pub stations: Vec<StationConfig>,
    #[serde(default)]
    pub columns: ColumnMap,
    #[serde(default)]
    pub clean: CleanConfig,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default)]
    pub window: WindowConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub models: ModelsSection,
    #[serde(default)]
    pub benchmark: BenchmarkConfig,
}

fn default_out() -> PathBuf {
    PathBuf::from("soilcast-out")
}

fn default_stations() -> Vec<StationConfig> {
    STATIONS.iter().map(|id| StationConfig { id: id.to_string(), path: None, synthetic: None }).collect()
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: default_out(),
            workers: None,
            stations: default_stations(),
            columns: ColumnMap::default(),
            clean: CleanConfig::default(),
            split: SplitSpec::default(),
            window: WindowConfig::default(),
            grid: GridConfig::default(),
            train: TrainSection::default(),
            models: ModelsSection::default(),
            benchmark: BenchmarkConfig::default(),
        }
    }
}

/// A station read from `path`, or generated when no path is given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationConfig {
    pub id: String,
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub synthetic: Option<SyntheticSection>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSection {
    pub hours: usize,
    pub noise: f64,
    pub trend_per_year: f64,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        let base = SyntheticConfig::new("", SYNTHETIC_HOURS);
        Self { hours: SYNTHETIC_HOURS, noise: base.noise, trend_per_year: base.trend_per_year }
    }
}

impl StationConfig {
    pub fn synthetic_config(&self, seed: u64) -> SyntheticConfig {
        let s = self.synthetic.clone().unwrap_or_default();
        SyntheticConfig {
            noise: s.noise,
            trend_per_year: s.trend_per_year,
            seed,
            ..SyntheticConfig::new(&self.id, s.hours)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowConfig {
    pub lookback: usize,
    pub stride: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self { lookback: 96, stride: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub kinds: Vec<ModelKind>,
    pub horizons: Vec<usize>,
    /// Window stride for grid cells; the `[window]` stride when absent.
    pub stride: Option<usize>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { kinds: ModelKind::ALL.to_vec(), horizons: HORIZONS.to_vec(), stride: None }
    }
}

/// Partial [`TrainConfig`]; absent fields keep the family default.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainOverride {
    pub learning_rate: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
}

impl TrainOverride {
    fn apply(&self, mut cfg: TrainConfig) -> TrainConfig {
        if let Some(v) = self.learning_rate {
            cfg.learning_rate = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        cfg
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub transformer: TrainOverride,
    pub deep_learning: TrainOverride,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    #[default]
    Default,
    Tiny,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelOverride {
    pub d_model: Option<usize>,
    pub n_heads: Option<usize>,
    pub n_encoder_layers: Option<usize>,
    pub n_decoder_layers: Option<usize>,
    pub d_ff: Option<usize>,
    pub label_len: Option<usize>,
    pub decomp_kernel: Option<usize>,
    pub lstm_units: Option<usize>,
    pub lstm_layers: Option<usize>,
    pub cnn_channels: Option<Vec<usize>>,
    pub cnn_kernel: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelsSection {
    pub preset: Preset,
    pub kinds: BTreeMap<ModelKind, ModelOverride>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkConfig {
    pub lengths: Vec<usize>,
    pub trials: usize,
    pub d_model: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self { lengths: BENCH_LENGTHS.to_vec(), trials: 3, d_model: 16 }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Structural checks plus existence of every referenced input file.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.stations.is_empty() {
            return bad("no stations configured".into());
        }
        let mut ids: Vec<&str> = self.stations.iter().map(|s| s.id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return bad("station ids must be unique".into());
        }
        for s in &self.stations {
            if let Some(p) = &s.path {
                if !p.is_file() {
                    return bad(format!("station {}: file {} does not exist", s.id, p.display()));
                }
                if s.synthetic.is_some() {
                    return bad(format!("station {}: give either path or synthetic, not both", s.id));
                }
            }
        }
        if self.window.lookback == 0 || self.window.stride == 0 || self.grid.stride == Some(0) {
            return bad("lookback and stride must be at least 1".into());
        }
        if self.grid.kinds.is_empty() || self.grid.horizons.is_empty() || self.grid.horizons.contains(&0) {
            return bad("grid needs at least one kind and positive horizons".into());
        }
        for kind in [ModelKind::Vanilla, ModelKind::Lstm] {
            self.train_config(kind).validate().map_err(|e| CliError::Config(e.to_string()))?;
        }
        Ok(())
    }

    pub fn station(&self, id: &str) -> Result<&StationConfig, CliError> {
        self.stations
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| CliError::Config(format!("station {id} is not in the config")))
    }

    /// Table 3 defaults for the kind's family, overridden by `[train]`.
    pub fn train_config(&self, kind: ModelKind) -> TrainConfig {
        let o = if kind.is_transformer() { &self.train.transformer } else { &self.train.deep_learning };
        o.apply(TrainConfig::for_kind(kind)).with_seed(self.seed)
    }

    pub fn model_spec(&self, kind: ModelKind, n_features: usize, horizon: usize) -> ModelSpec {
        let l = self.window.lookback;
        let mut spec = match self.models.preset {
            Preset::Default => ModelSpec { lookback: l, label_len: l / 2, ..ModelSpec::new(kind, n_features, horizon) },
            Preset::Tiny => ModelSpec::tiny(kind, n_features, l, horizon),
        };
        if let Some(o) = self.models.kinds.get(&kind) {
            macro_rules! set {
                ($($f:ident),*) => { $(if let Some(v) = o.$f.clone() { spec.$f = v; })* };
            }
            set!(d_model, n_heads, n_encoder_layers, n_decoder_layers, d_ff, label_len, decomp_kernel, lstm_units, lstm_layers, cnn_channels, cnn_kernel);
        }
        spec
    }

    pub fn grid_stride(&self) -> usize {
        self.grid.stride.unwrap_or(self.window.stride)
    }
}
