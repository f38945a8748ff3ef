//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Every export has a plain Rust twin in [`ops`] so the numerics can be
//! tested natively.

use wasm_bindgen::prelude::*;

pub mod ops {
    use soilcast::attention::{frequency_attention, holt_winters_forecast, HoltWintersInit};
    use soilcast::autodiff::Tape;
    use soilcast::data::{synthetic_station, SyntheticConfig, STATIONS};
    use soilcast::models::series_decompose;
    use soilcast::Tensor;

    pub type Result<T> = std::result::Result<T, String>;

    fn column(series: &[f64]) -> Result<Tensor> {
        if series.is_empty() {
            return Err("empty series".into());
        }
        Tensor::new(vec![series.len(), 1], series.to_vec()).map_err(|e| e.to_string())
    }

    /// Hourly 5 cm soil temperature of a generated station.
    pub fn soil_temperature(station: &str, hours: usize, noise: f64) -> Result<Vec<f64>> {
        if !STATIONS.contains(&station) {
            return Err(format!("unknown station {station}"));
        }
        if hours == 0 || hours > 100_000 {
            return Err("hours must be in 1..=100000".into());
        }
        let cfg = SyntheticConfig { noise, ..SyntheticConfig::new(station, hours) };
        Ok(synthetic_station(&cfg).target.values)
    }

    /// `trend ++ seasonal`, each as long as `series`.
    pub fn decompose(series: &[f64], kernel: usize) -> Result<Vec<f64>> {
        let (seasonal, trend) = series_decompose(&column(series)?, kernel).map_err(|e| e.to_string())?;
        let mut out = trend.data().to_vec();
        out.extend_from_slice(seasonal.data());
        Ok(out)
    }

    /// Forecasts for `h = 1..=horizon`, seeded from the first period.
    pub fn holt_winters(series: &[f64], alpha: f64, beta: f64, gamma: f64, period: usize, horizon: usize) -> Result<Vec<f64>> {
        let init = HoltWintersInit::from_first_period(series, period).map_err(|e| e.to_string())?;
        (1..=horizon)
            .map(|h| holt_winters_forecast(series, alpha, beta, gamma, period, h, &init).map_err(|e| e.to_string()))
            .collect()
    }

    /// Top-`top_k` spectral fit over the series followed by its
    /// continuation over `horizon`, both shifted by the series mean.
    pub fn frequency_forecast(series: &[f64], top_k: usize, horizon: usize) -> Result<Vec<f64>> {
        let x = column(series)?;
        let mean = series.iter().sum::<f64>() / series.len() as f64;
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let (inside, ahead) = frequency_attention(&mut tape, xv, top_k, horizon).map_err(|e| e.to_string())?;
        Ok(tape.value(inside).data().iter().chain(tape.value(ahead).data()).map(|v| v + mean).collect())
    }
}

fn js<T>(r: ops::Result<T>) -> Result<T, JsError> {
    r.map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn stations() -> Vec<String> {
    soilcast::data::STATIONS.iter().map(|s| s.to_string()).collect()
}

#[wasm_bindgen]
pub fn soil_temperature(station: &str, hours: usize, noise: f64) -> Result<Vec<f64>, JsError> {
    js(ops::soil_temperature(station, hours, noise))
}

#[wasm_bindgen]
pub fn decompose(series: &[f64], kernel: usize) -> Result<Vec<f64>, JsError> {
    js(ops::decompose(series, kernel))
}

#[wasm_bindgen]
pub fn holt_winters(
    series: &[f64],
    alpha: f64,
    beta: f64,
    gamma: f64,
    period: usize,
    horizon: usize,
) -> Result<Vec<f64>, JsError> {
    js(ops::holt_winters(series, alpha, beta, gamma, period, horizon))
}

#[wasm_bindgen]
pub fn frequency_forecast(series: &[f64], top_k: usize, horizon: usize) -> Result<Vec<f64>, JsError> {
    js(ops::frequency_forecast(series, top_k, horizon))
}
