//! Station ingestion, cleaning, statistics, chronological splits,
//! normalization and windowing.

mod cache;
mod clean;
mod load;
mod series;
mod split;
mod stats;
mod summary;
mod synthetic;
mod window;

pub use cache::{
    decode_series, encode_series, read_series_cache, sha256_hex, write_series_cache, CACHE_MAGIC, CACHE_VERSION,
};
pub use clean::{clean, CleanConfig, CleanReport};
pub use load::{load_csv, parse_timestamp, read_csv, write_csv, ColumnMap, TimestampFormat};
pub use series::{Column, StationSeries, FEATURE_NAMES, STATIONS, TARGET_NAME};
pub use split::{chronological_split, split_by_fractions, SplitRanges, SplitSpec, MIN_SPLIT_ROWS};
pub use stats::{compute_stats, ColumnStats, FeatureStats};
pub use summary::{feature_table, FEATURE_LABELS};
pub use synthetic::{synthetic_station, SiteProfile, SyntheticConfig};
pub use window::{denormalize, make_windows, normalize, time_features, NormalizedSeries, WindowSample, WindowSet};
