//! Error metrics and the benchmark report.
//!
//! All metric functions take full-length masked arrays indexed by absolute
//! sample index, plus the range of forecast origins `t` that may contribute.
//! Errors are read at `t + h` and the normalizer at `t`; a pair contributes
//! only when `actual(t)`, `actual(t + h)` and the prediction are all valid.

use std::fmt::Write as _;
use std::io::Write;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{ForecastSeries, ModelId};
use crate::scalar::Scalar;
use crate::series::NightMode;
use crate::stats::Masked;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("no valid (origin, target) pairs")]
    NoValidPairs,
    #[error("normalizer sum is not positive")]
    ZeroNormalizer,
    #[error("seasonal-naive denominator is zero")]
    ZeroDenominator,
    #[error("arrays differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("forecast for {model} at horizon {horizon} is missing")]
    MissingForecast { model: ModelId, horizon: usize },
    #[error("report format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Seasonal lag for MASE: 13 for hourly data, scaled with the sampling step.
pub fn default_mase_m(step_minutes: u32) -> usize {
    ((13.0 * 60.0 / step_minutes.max(1) as f64).round() as usize).max(1)
}

struct Sums<T> {
    abs: T,
    sq: T,
    norm: T,
    pairs: usize,
}

fn pair_sums<T: Scalar>(
    actual: Masked<'_, T>,
    predicted: Masked<'_, T>,
    origins: Range<usize>,
    h: usize,
) -> Result<Sums<T>, MetricError> {
    if actual.len() != predicted.len() {
        return Err(MetricError::LengthMismatch(actual.len(), predicted.len()));
    }
    let mut s = Sums {
        abs: T::zero(),
        sq: T::zero(),
        norm: T::zero(),
        pairs: 0,
    };
    let end = origins.end.min(actual.len().saturating_sub(h));
    for t in origins.start..end {
        if let (Some(a0), Some(a), Some(p)) = (actual.get(t), actual.get(t + h), predicted.get(t + h)) {
            let e = a - p;
            s.abs = s.abs + e.abs();
            s.sq = s.sq + e * e;
            s.norm = s.norm + a0;
            s.pairs += 1;
        }
    }
    if s.pairs == 0 {
        return Err(MetricError::NoValidPairs);
    }
    if !(s.norm > T::zero()) {
        return Err(MetricError::ZeroNormalizer);
    }
    Ok(s)
}

/// `100 · Σ|a(t+h) − p(t+h)| / Σ a(t)`.
pub fn nmae<T: Scalar>(
    actual: Masked<'_, T>,
    predicted: Masked<'_, T>,
    origins: Range<usize>,
    h: usize,
) -> Result<T, MetricError> {
    let s = pair_sums(actual, predicted, origins, h)?;
    Ok(T::lit(100.0) * s.abs / s.norm)
}

/// `100 · √n · √Σ(a(t+h) − p(t+h))² / Σ a(t)` over `n` valid pairs.
pub fn nrmse<T: Scalar>(
    actual: Masked<'_, T>,
    predicted: Masked<'_, T>,
    origins: Range<usize>,
    h: usize,
) -> Result<T, MetricError> {
    let s = pair_sums(actual, predicted, origins, h)?;
    Ok(T::lit(100.0) * (T::from_count(s.pairs) * s.sq).sqrt() / s.norm)
}

/// All-horizon MASE against the seasonal naive forecast at lag `m` (`m = 0`
/// selects the non-periodic variant, lag 1). `forecasts` holds one
/// `(horizon, predictions)` entry per horizon; the sum is scaled by
/// `100 / forecasts.len()`.
///
/// The seasonal lag counts valid samples, not grid steps: on a
/// daylight-filtered series the naive reference at `t` is the value `m`
/// valid samples earlier, so the night gap does not break the pairing.
pub fn mase<T: Scalar>(
    actual: Masked<'_, T>,
    forecasts: &[(usize, Masked<'_, T>)],
    origins: Range<usize>,
    m: usize,
) -> Result<T, MetricError> {
    if forecasts.is_empty() {
        return Err(MetricError::NoValidPairs);
    }
    if let Some((_, p)) = forecasts.iter().find(|(_, p)| p.len() != actual.len()) {
        return Err(MetricError::LengthMismatch(actual.len(), p.len()));
    }
    let lag = m.max(1);
    let n = actual.len();
    let valid_idx: Vec<usize> = (0..n).filter(|&i| actual.get(i).is_some()).collect();
    let mut num = T::zero();
    let mut den = T::zero();
    let mut terms = 0usize;
    for (k, &t) in valid_idx.iter().enumerate() {
        if !origins.contains(&t) {
            continue;
        }
        let a0 = actual.values()[t];
        for (h, p) in forecasts {
            let target = t + h;
            if target >= n {
                continue;
            }
            if let (Some(a), Some(f)) = (actual.get(target), p.get(target)) {
                num = num + (a - f).abs();
                terms += 1;
            }
        }
        if let Some(&prev) = k.checked_sub(lag).map(|j| &valid_idx[j]) {
            den = den + (a0 - actual.values()[prev]).abs();
        }
    }
    if terms == 0 {
        return Err(MetricError::NoValidPairs);
    }
    if !(den > T::zero()) {
        return Err(MetricError::ZeroDenominator);
    }
    Ok(T::lit(100.0) / T::from_count(forecasts.len()) * num / den)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonScore {
    pub horizon: usize,
    pub nmae: f64,
    pub nrmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub model: ModelId,
    pub horizons: Vec<HorizonScore>,
    pub mase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub site: String,
    pub length: usize,
    pub split: usize,
    pub horizons: Vec<usize>,
    pub r: f64,
    pub epsilon: f64,
    pub beta: f64,
    pub night_mode: NightMode,
    pub mase_m: usize,
    pub seed: u64,
}

/// Per-model, per-horizon nMAE/nRMSE plus all-horizon MASE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub metadata: ReportMetadata,
    pub models: Vec<ModelReport>,
}

/// Expand a forecast series to the full index range of `len` samples.
pub fn expand<T: Scalar>(series: &ForecastSeries<T>, len: usize) -> (Vec<T>, Vec<bool>) {
    let mut values = vec![T::zero(); len];
    let mut valid = vec![false; len];
    for (k, (&v, &ok)) in series.values.iter().zip(&series.valid).enumerate() {
        let i = series.first_target + k;
        if i < len {
            values[i] = v;
            valid[i] = ok;
        }
    }
    (values, valid)
}

/// Score backtest output against `actual` over origins `[split, len)`.
pub fn build_report<T: Scalar>(
    actual: Masked<'_, T>,
    forecasts: &[(ModelId, Vec<ForecastSeries<T>>)],
    metadata: ReportMetadata,
) -> Result<BenchmarkReport, MetricError> {
    let n = actual.len();
    let origins = metadata.split..n;
    let mut models = Vec::with_capacity(forecasts.len());
    for (model, per_h) in forecasts {
        let expanded: Vec<(usize, Vec<T>, Vec<bool>)> = metadata
            .horizons
            .iter()
            .map(|&h| {
                let s = per_h.iter().find(|s| s.horizon == h).ok_or(MetricError::MissingForecast {
                    model: *model,
                    horizon: h,
                })?;
                let (v, m) = expand(s, n);
                Ok((h, v, m))
            })
            .collect::<Result<_, MetricError>>()?;
        let views: Vec<(usize, Masked<'_, T>)> =
            expanded.iter().map(|(h, v, m)| (*h, Masked::new(v, m))).collect();
        let horizons = views
            .iter()
            .map(|&(h, p)| {
                Ok(HorizonScore {
                    horizon: h,
                    nmae: nmae(actual, p, origins.clone(), h)?.to_f64_lossy(),
                    nrmse: nrmse(actual, p, origins.clone(), h)?.to_f64_lossy(),
                })
            })
            .collect::<Result<_, MetricError>>()?;
        let mase = mase(actual, &views, origins.clone(), metadata.mase_m)?.to_f64_lossy();
        models.push(ModelReport {
            model: *model,
            horizons,
            mase,
        });
    }
    Ok(BenchmarkReport { metadata, models })
}

impl BenchmarkReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is always serializable")
    }

    pub fn from_json(s: &str) -> Result<Self, MetricError> {
        serde_json::from_str(s).map_err(|e| MetricError::Format(e.to_string()))
    }

    /// Two CSV blocks separated by a blank line: `model,horizon,nmae,nrmse`
    /// and `model,mase`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<(), MetricError> {
        writeln!(out, "model,horizon,nmae,nrmse")?;
        for m in &self.models {
            for s in &m.horizons {
                writeln!(out, "{},{},{},{}", m.model, s.horizon, s.nmae, s.nrmse)?;
            }
        }
        writeln!(out)?;
        writeln!(out, "model,mase")?;
        for m in &self.models {
            writeln!(out, "{},{}", m.model, m.mase)?;
        }
        Ok(())
    }

    /// Models × horizons table with an nRMSE and an nMAE row per model.
    pub fn summary_table(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<8}{:<8}", "metric", "model");
        for h in &self.metadata.horizons {
            let _ = write!(out, "{:>8}", format!("h={h}"));
        }
        let _ = writeln!(out, "{:>9}", "MASE");
        for (label, pick) in [("nRMSE", true), ("nMAE", false)] {
            for m in &self.models {
                let _ = write!(out, "{:<8}{:<8}", label, m.model.name());
                for s in &m.horizons {
                    let v = if pick { s.nrmse } else { s.nmae };
                    let _ = write!(out, "{v:>8.1}");
                }
                let _ = writeln!(out, "{:>9.1}", m.mase);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn all(n: usize) -> Vec<bool> {
        vec![true; n]
    }

    #[test]
    fn constant_offset_gives_ten() {
        let a = vec![100.0; 50];
        let p = vec![90.0; 50];
        let m = all(50);
        for h in [0, 1, 5] {
            assert_eq!(nmae(Masked::new(&a, &m), Masked::new(&p, &m), 0..50, h).unwrap(), 10.0);
            assert_abs_diff_eq!(
                nrmse(Masked::new(&a, &m), Masked::new(&p, &m), 0..50, h).unwrap(),
                10.0,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn matching_index_sets() {
        let a = [100.0, 200.0];
        let p = [110.0, 180.0];
        let m = all(2);
        assert_abs_diff_eq!(
            nmae(Masked::new(&a, &m), Masked::new(&p, &m), 0..2, 0).unwrap(),
            10.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn mase_toy_series_is_fifty() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let p = [0.0, 0.0, 2.5, 3.5, 4.5, 5.5];
        let va = all(6);
        let vp = [false, false, true, true, true, true];
        let f = [(1, Masked::new(&p, &vp))];
        let v = mase(Masked::new(&a, &va), &f, 1..5, 1).unwrap();
        assert_abs_diff_eq!(v, 50.0, epsilon = 1e-12);
    }

    #[test]
    fn mase_lag_skips_masked_samples() {
        // day/night alternation: lag 1 over valid samples pairs consecutive days
        let a = [5.0, 0.0, 7.0, 0.0, 4.0, 0.0, 6.0];
        let va = [true, false, true, false, true, false, true];
        let f = [(2, Masked::new(&a, &va))];
        let v = mase(Masked::new(&a, &va), &f, 0..5, 0);
        assert!(matches!(v, Ok(x) if x == 0.0));
        let p = [0.0, 0.0, 8.0, 0.0, 5.0, 0.0, 7.0];
        let f = [(2, Masked::new(&p, &va))];
        // errors 1+1+1 over |7-5| + |4-7|
        assert_abs_diff_eq!(mase(Masked::new(&a, &va), &f, 0..5, 0).unwrap(), 60.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_normalizer_and_denominator() {
        let a = [0.0; 4];
        let m = all(4);
        assert!(matches!(
            nmae(Masked::new(&a, &m), Masked::new(&a, &m), 0..4, 0),
            Err(MetricError::ZeroNormalizer)
        ));
        let f = [(1, Masked::new(&a, &m))];
        assert!(matches!(
            mase(Masked::new(&a, &m), &f, 1..3, 1),
            Err(MetricError::ZeroDenominator)
        ));
    }

    #[test]
    fn default_m_by_step() {
        assert_eq!(default_mase_m(60), 13);
        assert_eq!(default_mase_m(15), 52);
    }
}
