//! Ingestion, quality control and deseasonalization of meteorological series.
//!
//! A [`MeteoSeries`] lives on a regular UTC time grid; missing or rejected
//! samples are carried as masked entries rather than removed, so indices stay
//! aligned with the matching [`TrendSeries`] (clear-sky irradiance or a
//! mean-profile reference). Dividing one by the other yields a
//! [`KappaSeries`], the approximately stationary input of every forecaster.

use std::io::Read;
use std::str::FromStr;

use chrono::{DateTime, Duration, NaiveDateTime, Utc};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::stats::{self, Masked, StatsError};

/// Zenith angle above which a sample is excluded from evaluation.
pub const MAX_ZENITH_DEG: f64 = 85.0;
pub const DEFAULT_EPSILON: f64 = 10.0;
pub const DEFAULT_BETA: f64 = 1.2;
/// Seed used by [`seasonality_test`] when the caller has no preference.
pub const DEFAULT_SUBSAMPLE_SEED: u64 = 0x5eed_2021;

#[derive(Debug, Error)]
pub enum SeriesError {
    #[error("series needs at least 2 samples, got {0}")]
    TooShort(usize),
    #[error("values and mask differ in length ({values} vs {mask})")]
    MaskLength { values: usize, mask: usize },
    #[error("time step must be positive")]
    ZeroStep,
    #[error("malformed CSV row at line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("timestamps not strictly increasing at line {line}")]
    NonMonotonicTimestamps { line: u64 },
    #[error("row spacing at line {line} is not a multiple of the {step_minutes}-minute step")]
    StepMismatch { line: u64, step_minutes: u32 },
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("series and trend are not aligned on the same time grid")]
    AlignmentError,
    #[error("parameter {name} = {value} outside [{min}, {max}]")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("need at least {needed} samples of history, got {got}")]
    InsufficientHistory { needed: usize, got: usize },
    #[error("need at least {needed} valid entries, found {found}")]
    NotEnoughValidData { needed: usize, found: usize },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// Physical unit of a measured quantity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Unit {
    /// Wh/m²; negative readings are rejected at ingestion.
    #[default]
    Irradiance,
    Celsius,
    MetresPerSecond,
    Dimensionless,
}

impl Unit {
    pub fn is_irradiance(self) -> bool {
        matches!(self, Unit::Irradiance)
    }
}

impl FromStr for Unit {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "irradiance" | "wh/m2" | "wh/m²" => Ok(Unit::Irradiance),
            "celsius" | "c" | "°c" => Ok(Unit::Celsius),
            "m/s" | "metres-per-second" | "wind" => Ok(Unit::MetresPerSecond),
            "dimensionless" | "none" => Ok(Unit::Dimensionless),
            other => Err(format!("unknown unit `{other}`")),
        }
    }
}

/// How samples whose trend falls below the daylight threshold are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NightMode {
    /// Night samples become κ = 1 and take part in the statistics.
    #[default]
    SetToOne,
    /// Night samples are masked.
    Exclude,
}

impl FromStr for NightMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "set-to-one" | "one" | "settoone" => Ok(NightMode::SetToOne),
            "exclude" | "none" => Ok(NightMode::Exclude),
            other => Err(format!("unknown night mode `{other}` (set-to-one|exclude)")),
        }
    }
}

/// Regular UTC sampling grid: sample `i` sits at `start + i * step`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub start: DateTime<Utc>,
    pub step_minutes: u32,
}

impl TimeGrid {
    pub fn new(start: DateTime<Utc>, step_minutes: u32) -> Result<Self, SeriesError> {
        if step_minutes == 0 {
            return Err(SeriesError::ZeroStep);
        }
        Ok(Self { start, step_minutes })
    }

    pub fn at(&self, index: usize) -> DateTime<Utc> {
        self.start + Duration::minutes(self.step_minutes as i64 * index as i64)
    }

    /// First index at or after `t`.
    pub fn index_at_or_after(&self, t: DateTime<Utc>) -> usize {
        let minutes = (t - self.start).num_minutes();
        if minutes <= 0 {
            return 0;
        }
        let step = self.step_minutes as i64;
        ((minutes + step - 1) / step) as usize
    }
}

fn check_mask_len(values: usize, mask: usize) -> Result<(), SeriesError> {
    if values != mask {
        return Err(SeriesError::MaskLength { values, mask });
    }
    if values < 2 {
        return Err(SeriesError::TooShort(values));
    }
    Ok(())
}

/// Regularly spaced observations of one meteorological variable.
#[derive(Debug, Clone, PartialEq)]
pub struct MeteoSeries<T> {
    grid: TimeGrid,
    unit: Unit,
    values: Vec<T>,
    valid: Vec<bool>,
}

impl<T: Scalar> MeteoSeries<T> {
    /// Non-finite values are masked on construction.
    pub fn new(
        grid: TimeGrid,
        unit: Unit,
        values: Vec<T>,
        mut valid: Vec<bool>,
    ) -> Result<Self, SeriesError> {
        check_mask_len(values.len(), valid.len())?;
        for (ok, v) in valid.iter_mut().zip(&values) {
            *ok &= v.is_finite();
        }
        Ok(Self {
            grid,
            unit,
            values,
            valid,
        })
    }

    pub fn from_values(grid: TimeGrid, unit: Unit, values: Vec<T>) -> Result<Self, SeriesError> {
        let valid = vec![true; values.len()];
        Self::new(grid, unit, values, valid)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn unit(&self) -> Unit {
        self.unit
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn valid_mask(&self) -> &[bool] {
        &self.valid
    }

    pub fn view(&self) -> Masked<'_, T> {
        Masked::new(&self.values, &self.valid)
    }

    #[inline]
    pub fn get(&self, i: usize) -> Option<T> {
        self.valid[i].then(|| self.values[i])
    }

    pub fn timestamp(&self, i: usize) -> DateTime<Utc> {
        self.grid.at(i)
    }

    /// Copy with additional entries masked where `drop` is true.
    pub fn masked_where(&self, drop: &[bool]) -> Result<Self, SeriesError> {
        if drop.len() != self.len() {
            return Err(SeriesError::LengthMismatch {
                expected: self.len(),
                got: drop.len(),
            });
        }
        let valid = self
            .valid
            .iter()
            .zip(drop)
            .map(|(&ok, &d)| ok && !d)
            .collect();
        Ok(Self {
            valid,
            ..self.clone()
        })
    }
}

/// Deseasonalizing reference aligned index-for-index with a [`MeteoSeries`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrendSeries<T> {
    grid: TimeGrid,
    values: Vec<T>,
    valid: Vec<bool>,
}

impl<T: Scalar> TrendSeries<T> {
    /// Negative or non-finite entries are masked.
    pub fn new(grid: TimeGrid, values: Vec<T>, mut valid: Vec<bool>) -> Result<Self, SeriesError> {
        check_mask_len(values.len(), valid.len())?;
        for (ok, v) in valid.iter_mut().zip(&values) {
            *ok &= v.is_finite() && *v >= T::zero();
        }
        Ok(Self {
            grid,
            values,
            valid,
        })
    }

    pub fn from_values(grid: TimeGrid, values: Vec<T>) -> Result<Self, SeriesError> {
        let valid = vec![true; values.len()];
        Self::new(grid, values, valid)
    }

    pub fn constant(grid: TimeGrid, len: usize, level: T) -> Result<Self, SeriesError> {
        Self::from_values(grid, vec![level; len])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn valid_mask(&self) -> &[bool] {
        &self.valid
    }

    #[inline]
    pub fn get(&self, i: usize) -> Option<T> {
        self.valid[i].then(|| self.values[i])
    }

    /// True where the trend is valid and at or above the daylight threshold.
    #[inline]
    pub fn is_daylight(&self, i: usize, epsilon: T) -> bool {
        self.valid[i] && self.values[i] >= epsilon
    }

    /// Reinterpret the reference as a measured series (e.g. to re-derive a profile).
    pub fn to_series(&self, unit: Unit) -> MeteoSeries<T> {
        MeteoSeries {
            grid: self.grid,
            unit,
            values: self.values.clone(),
            valid: self.valid.clone(),
        }
    }

    pub fn is_aligned_with(&self, series: &MeteoSeries<T>) -> bool {
        self.len() == series.len() && self.grid == series.grid()
    }
}

/// Per-sample classification inside a [`KappaSeries`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KappaState {
    /// Measured ratio under daylight.
    Day,
    /// Trend below the daylight threshold.
    Night,
    /// Measurement or trend missing.
    Invalid,
}

/// Clear-sky index (or ratio-to-trend) series.
#[derive(Debug, Clone, PartialEq)]
pub struct KappaSeries<T> {
    values: Vec<T>,
    valid: Vec<bool>,
    state: Vec<KappaState>,
    beta_cap: T,
    epsilon: T,
    night_mode: NightMode,
}

impl<T: Scalar> KappaSeries<T> {
    /// Build directly from κ values (all daylight); used by tests and synthetic drivers.
    pub fn from_values(values: Vec<T>, beta_cap: T, night_mode: NightMode) -> Self {
        let state = values
            .iter()
            .map(|v| {
                if v.is_finite() && *v >= T::zero() {
                    KappaState::Day
                } else {
                    KappaState::Invalid
                }
            })
            .collect::<Vec<_>>();
        let values = values
            .into_iter()
            .map(|v| if v.is_finite() { v.min(beta_cap) } else { T::zero() })
            .collect();
        Self::assemble(values, state, beta_cap, T::one(), night_mode)
    }

    fn assemble(
        values: Vec<T>,
        state: Vec<KappaState>,
        beta_cap: T,
        epsilon: T,
        night_mode: NightMode,
    ) -> Self {
        let valid = state
            .iter()
            .map(|s| match s {
                KappaState::Day => true,
                KappaState::Night => night_mode == NightMode::SetToOne,
                KappaState::Invalid => false,
            })
            .collect();
        Self {
            values,
            valid,
            state,
            beta_cap,
            epsilon,
            night_mode,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn valid_mask(&self) -> &[bool] {
        &self.valid
    }

    pub fn states(&self) -> &[KappaState] {
        &self.state
    }

    pub fn beta_cap(&self) -> T {
        self.beta_cap
    }

    pub fn epsilon(&self) -> T {
        self.epsilon
    }

    pub fn night_mode(&self) -> NightMode {
        self.night_mode
    }

    pub fn view(&self) -> Masked<'_, T> {
        Masked::new(&self.values, &self.valid)
    }

    #[inline]
    pub fn get(&self, i: usize) -> Option<T> {
        self.valid[i].then(|| self.values[i])
    }

    /// Measured daylight κ at `i`, ignoring the night rule.
    #[inline]
    pub fn daylight(&self, i: usize) -> Option<T> {
        (self.state[i] == KappaState::Day).then(|| self.values[i])
    }

    /// Most recent daylight κ at or before `i`, with its index.
    pub fn last_daylight(&self, i: usize) -> Option<(usize, T)> {
        (0..=i).rev().find_map(|j| self.daylight(j).map(|v| (j, v)))
    }

    /// Most recent κ at or before `i` under the night rule: night samples
    /// count as 1 with [`NightMode::SetToOne`] and are skipped otherwise;
    /// invalid samples are always skipped.
    pub fn last_resolved(&self, i: usize) -> Option<(usize, T)> {
        (0..=i).rev().find_map(|j| self.get(j).map(|v| (j, v)))
    }

    /// Up to `count` κ values walking backwards from `i` under the night rule.
    pub fn resolved_history(&self, i: usize, count: usize) -> Vec<T> {
        (0..=i)
            .rev()
            .filter_map(|j| self.get(j))
            .take(count)
            .collect()
    }
}

fn check_range(name: &'static str, value: f64, min: f64, max: f64) -> Result<(), SeriesError> {
    if !(min..=max).contains(&value) {
        return Err(SeriesError::InvalidParameter {
            name,
            value,
            min,
            max,
        });
    }
    Ok(())
}

/// Column names for [`ingest_csv`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub timestamp: String,
    pub value: String,
    /// Optional clear-sky column; loaded when present in the header.
    pub clearsky: Option<String>,
    /// Optional zenith-angle column in degrees; loaded when present.
    pub zenith: Option<String>,
    pub unit: Unit,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            timestamp: "timestamp".into(),
            value: "value".into(),
            clearsky: Some("clearsky".into()),
            zenith: Some("zenith_deg".into()),
            unit: Unit::Irradiance,
        }
    }
}

/// Result of [`ingest_csv`].
#[derive(Debug, Clone)]
pub struct Ingested<T> {
    pub series: MeteoSeries<T>,
    pub clearsky: Option<TrendSeries<T>>,
    pub zenith: Option<Vec<T>>,
    /// Cells rejected by quality control (non-numeric, non-finite, negative irradiance).
    pub warnings: usize,
}

pub fn parse_timestamp(raw: &str) -> Option<DateTime<Utc>> {
    let s = raw.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.with_timezone(&Utc));
    }
    let s = s.trim_end_matches('Z');
    ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"]
        .iter()
        .find_map(|fmt| NaiveDateTime::parse_from_str(s, fmt).ok())
        .map(|n| n.and_utc())
}

fn parse_cell<T: Scalar>(raw: &str) -> Option<T> {
    raw.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .and_then(T::from_f64)
}

/// Read a header-led UTF-8 CSV onto a regular grid of `step_minutes`.
///
/// Timestamp gaps become masked entries. Non-numeric cells and negative
/// irradiance are masked and counted in [`Ingested::warnings`].
pub fn ingest_csv<T: Scalar, R: Read>(
    source: R,
    schema: &CsvSchema,
    step_minutes: u32,
) -> Result<Ingested<T>, SeriesError> {
    if step_minutes == 0 {
        return Err(SeriesError::ZeroStep);
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = reader
        .headers()
        .map_err(|e| SeriesError::MalformedRow {
            line: 1,
            reason: e.to_string(),
        })?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let ts_col = col(&schema.timestamp).ok_or_else(|| SeriesError::MissingColumn(schema.timestamp.clone()))?;
    let val_col = col(&schema.value).ok_or_else(|| SeriesError::MissingColumn(schema.value.clone()))?;
    let cs_col = schema.clearsky.as_deref().and_then(col);
    let zen_col = schema.zenith.as_deref().and_then(col);

    let step = step_minutes as i64;
    let mut start: Option<DateTime<Utc>> = None;
    let mut last_index: Option<usize> = None;
    let mut values: Vec<T> = Vec::new();
    let mut valid: Vec<bool> = Vec::new();
    let mut clearsky: Vec<T> = Vec::new();
    let mut cs_valid: Vec<bool> = Vec::new();
    let mut zenith: Vec<T> = Vec::new();
    let mut warnings = 0usize;

    for (row_no, record) in reader.records().enumerate() {
        let line = row_no as u64 + 2;
        let record = record.map_err(|e| SeriesError::MalformedRow {
            line: e.position().map_or(line, |p| p.line()),
            reason: e.to_string(),
        })?;
        let ts_raw = record.get(ts_col).unwrap_or_default();
        let ts = parse_timestamp(ts_raw).ok_or_else(|| SeriesError::MalformedRow {
            line,
            reason: format!("unparseable timestamp `{ts_raw}`"),
        })?;
        let origin = *start.get_or_insert(ts);
        let minutes = (ts - origin).num_minutes();
        if last_index.is_some() && minutes <= 0 {
            return Err(SeriesError::NonMonotonicTimestamps { line });
        }
        if (ts - origin).num_seconds() % 60 != 0 || minutes % step != 0 {
            return Err(SeriesError::StepMismatch { line, step_minutes });
        }
        let index = (minutes / step) as usize;
        if let Some(prev) = last_index {
            if index <= prev {
                return Err(SeriesError::NonMonotonicTimestamps { line });
            }
        }
        // gap fill
        while values.len() < index {
            values.push(T::zero());
            valid.push(false);
            clearsky.push(T::zero());
            cs_valid.push(false);
            zenith.push(T::nan());
        }
        let value = parse_cell::<T>(record.get(val_col).unwrap_or_default())
            .filter(|v| !(schema.unit.is_irradiance() && *v < T::zero()));
        if value.is_none() {
            warnings += 1;
        }
        values.push(value.unwrap_or_else(T::zero));
        valid.push(value.is_some());
        if let Some(c) = cs_col {
            let cs = parse_cell::<T>(record.get(c).unwrap_or_default()).filter(|v| *v >= T::zero());
            clearsky.push(cs.unwrap_or_else(T::zero));
            cs_valid.push(cs.is_some());
        }
        if let Some(c) = zen_col {
            zenith.push(parse_cell::<T>(record.get(c).unwrap_or_default()).unwrap_or_else(T::nan));
        }
        last_index = Some(index);
    }

    let start = start.ok_or(SeriesError::TooShort(0))?;
    let grid = TimeGrid::new(start, step_minutes)?;
    let series = MeteoSeries::new(grid, schema.unit, values, valid)?;
    let clearsky = match cs_col {
        Some(_) => Some(TrendSeries::new(grid, clearsky, cs_valid)?),
        None => None,
    };
    Ok(Ingested {
        series,
        clearsky,
        zenith: zen_col.map(|_| zenith),
        warnings,
    })
}

/// Mask every sample whose solar zenith exceeds 85° (or is unknown).
pub fn quality_filter<T: Scalar>(
    series: &MeteoSeries<T>,
    zenith_deg: &[T],
) -> Result<MeteoSeries<T>, SeriesError> {
    if zenith_deg.len() != series.len() {
        return Err(SeriesError::LengthMismatch {
            expected: series.len(),
            got: zenith_deg.len(),
        });
    }
    let limit = T::lit(MAX_ZENITH_DEG);
    let drop: Vec<bool> = zenith_deg.iter().map(|z| !(*z <= limit)).collect();
    series.masked_where(&drop)
}

/// κ = min(series / trend, β) under daylight, with the night rule elsewhere.
pub fn to_kappa<T: Scalar>(
    series: &MeteoSeries<T>,
    trend: &TrendSeries<T>,
    epsilon: T,
    beta: T,
    night_mode: NightMode,
) -> Result<KappaSeries<T>, SeriesError> {
    if !trend.is_aligned_with(series) {
        return Err(SeriesError::AlignmentError);
    }
    check_range("epsilon", epsilon.to_f64_lossy(), 1.0, 30.0)?;
    check_range("beta", beta.to_f64_lossy(), 1.0, 2.0)?;
    let mut values = Vec::with_capacity(series.len());
    let mut state = Vec::with_capacity(series.len());
    for i in 0..series.len() {
        let (v, s) = match (series.get(i), trend.get(i)) {
            (Some(_), Some(cs)) if cs < epsilon => (T::one(), KappaState::Night),
            (Some(y), Some(cs)) => {
                let ratio = y / cs;
                if ratio >= T::zero() {
                    (ratio.min(beta), KappaState::Day)
                } else {
                    (T::zero(), KappaState::Invalid)
                }
            }
            _ => (T::zero(), KappaState::Invalid),
        };
        values.push(v);
        state.push(s);
    }
    Ok(KappaSeries::assemble(values, state, beta, epsilon, night_mode))
}

/// Per-phase mean of the valid samples: the model-free trend used for
/// temperature and wind (e.g. `cycle_length = 8760` for hour-of-year).
pub fn mean_profile_trend<T: Scalar>(
    series: &MeteoSeries<T>,
    cycle_length: usize,
) -> Result<TrendSeries<T>, SeriesError> {
    let needed = 2 * cycle_length.max(1);
    if cycle_length == 0 || series.len() < needed {
        return Err(SeriesError::InsufficientHistory {
            needed,
            got: series.len(),
        });
    }
    let mut sums = vec![T::zero(); cycle_length];
    let mut counts = vec![0usize; cycle_length];
    for (i, v) in series.values().iter().enumerate() {
        if series.valid_mask()[i] {
            sums[i % cycle_length] = sums[i % cycle_length] + *v;
            counts[i % cycle_length] += 1;
        }
    }
    let profile: Vec<Option<T>> = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| (c > 0).then(|| s / T::from_count(c)))
        .collect();
    let (values, valid) = (0..series.len())
        .map(|i| match profile[i % cycle_length] {
            Some(m) => (m, true),
            None => (T::zero(), false),
        })
        .unzip();
    TrendSeries::new(series.grid(), values, valid)
}

/// Outcome of the lag-`m` seasonality check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeasonalityVerdict {
    pub m: usize,
    pub t_m: f64,
    pub rho_m: f64,
    pub n: usize,
    pub confidence: f64,
    pub deseasonalized: bool,
}

/// Two-sided standard-normal quantile for a confidence level, e.g. 0.90 → 1.645.
pub fn normal_quantile_two_sided(confidence: f64) -> f64 {
    let alpha = 1.0 - confidence;
    Normal::standard().inverse_cdf(1.0 - alpha / 2.0)
}

/// `q · sqrt((1 + 2 Σ ρ²(i)) / n)` over the autocorrelations at lags `1..m`.
pub fn bartlett_threshold<T: Scalar>(quantile: T, rho_below_m: &[T], n: usize) -> T {
    let two = T::lit(2.0);
    let spread = T::one() + two * rho_below_m.iter().map(|r| *r * *r).sum::<T>();
    quantile * (spread / T::from_count(n)).sqrt()
}

/// Test whether `kappa` still carries a seasonal cycle of period `m`.
///
/// Autocorrelations at lags `1..=m` are estimated from `n` origins drawn
/// without replacement (seeded), centred and scaled by the moments of the
/// drawn values. The series counts as deseasonalized when `|ρ(m)| < t(m)`.
pub fn seasonality_test<T: Scalar>(
    kappa: Masked<'_, T>,
    m: usize,
    n: usize,
    confidence: f64,
    seed: u64,
) -> Result<SeasonalityVerdict, SeriesError> {
    if m == 0 {
        return Err(SeriesError::InvalidParameter {
            name: "m",
            value: 0.0,
            min: 1.0,
            max: f64::INFINITY,
        });
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(SeriesError::InvalidParameter {
            name: "confidence",
            value: confidence,
            min: 0.0,
            max: 1.0,
        });
    }
    let found = kappa.valid_count();
    if found < m + n || n < 2 {
        return Err(SeriesError::NotEnoughValidData {
            needed: m + n.max(2),
            found,
        });
    }
    let origins: Vec<usize> = (0..kappa.len().saturating_sub(m))
        .filter(|&t| kappa.get(t).is_some())
        .collect();
    if origins.len() < n {
        return Err(SeriesError::NotEnoughValidData {
            needed: n,
            found: origins.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = index::sample(&mut rng, origins.len(), n)
        .into_iter()
        .map(|k| origins[k])
        .collect();
    picked.sort_unstable();

    let sample: Vec<T> = picked.iter().filter_map(|&t| kappa.get(t)).collect();
    let all = vec![true; sample.len()];
    let mu = stats::mean(Masked::new(&sample, &all))?;
    let var = stats::variance(Masked::new(&sample, &all))?;
    if var <= T::zero() {
        return Err(StatsError::ZeroVariance.into());
    }

    let mut rhos = Vec::with_capacity(m);
    for lag in 1..=m {
        let (sum, count) = picked
            .iter()
            .filter_map(|&t| Some((kappa.get(t)? - mu) * (kappa.get(t + lag)? - mu)))
            .fold((T::zero(), 0usize), |(s, c), p| (s + p, c + 1));
        if count == 0 {
            return Err(StatsError::NotEnoughValidPairs { lag, found: 0 }.into());
        }
        let rho = (sum / (T::from_count(count) * var)).max(-T::one()).min(T::one());
        rhos.push(rho);
    }
    let q = T::lit(normal_quantile_two_sided(confidence));
    let t_m = bartlett_threshold(q, &rhos[..m - 1], n);
    let rho_m = rhos[m - 1];
    Ok(SeasonalityVerdict {
        m,
        t_m: t_m.to_f64_lossy(),
        rho_m: rho_m.to_f64_lossy(),
        n,
        confidence,
        deseasonalized: rho_m.abs() < t_m,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn grid(step: u32) -> TimeGrid {
        TimeGrid::new(Utc.with_ymd_and_hms(2020, 1, 1, 0, 0, 0).unwrap(), step).unwrap()
    }

    fn ingest(csv: &str, step: u32) -> Result<Ingested<f64>, SeriesError> {
        ingest_csv(csv.as_bytes(), &CsvSchema::default(), step)
    }

    #[test]
    fn ingest_contiguous_rows() {
        let csv = "timestamp,value\n2020-01-01T00:00:00Z,100\n2020-01-01T01:00:00Z,200\n2020-01-01T02:00:00Z,300\n";
        let got = ingest(csv, 60).unwrap();
        assert_eq!(got.series.values(), &[100.0, 200.0, 300.0]);
        assert!(got.series.valid_mask().iter().all(|&v| v));
        assert!(got.clearsky.is_none());
        assert_eq!(got.warnings, 0);
    }

    #[test]
    fn ingest_fills_gaps_with_masked_entries() {
        let csv = "timestamp,value\n2020-01-01T00:00:00Z,1\n2020-01-01T02:00:00Z,3\n";
        let got = ingest(csv, 60).unwrap();
        assert_eq!(got.series.len(), 3);
        assert_eq!(got.series.valid_mask(), &[true, false, true]);
    }

    #[test]
    fn ingest_masks_negative_irradiance() {
        let csv = "timestamp,value\n2020-01-01T00:00:00Z,-5\n2020-01-01T01:00:00Z,abc\n2020-01-01T02:00:00Z,7\n";
        let got = ingest(csv, 60).unwrap();
        assert_eq!(got.series.valid_mask(), &[false, false, true]);
        assert_eq!(got.warnings, 2);
    }

    #[test]
    fn ingest_keeps_negative_temperature() {
        let csv = "timestamp,value\n2020-01-01T00:00:00Z,-5\n2020-01-01T01:00:00Z,2\n";
        let schema = CsvSchema {
            unit: Unit::Celsius,
            ..CsvSchema::default()
        };
        let got: Ingested<f64> = ingest_csv(csv.as_bytes(), &schema, 60).unwrap();
        assert_eq!(got.series.get(0), Some(-5.0));
    }

    #[test]
    fn ingest_errors() {
        let back = "timestamp,value\n2020-01-01T01:00:00Z,1\n2020-01-01T00:00:00Z,2\n";
        assert!(matches!(ingest(back, 60), Err(SeriesError::NonMonotonicTimestamps { line: 3 })));
        let odd = "timestamp,value\n2020-01-01T00:00:00Z,1\n2020-01-01T00:30:00Z,2\n";
        assert!(matches!(ingest(odd, 60), Err(SeriesError::StepMismatch { line: 3, .. })));
        let bad = "timestamp,value\n2020-01-01T00:00:00Z,1\nnot-a-time,2\n";
        assert!(matches!(ingest(bad, 60), Err(SeriesError::MalformedRow { line: 3, .. })));
        let short = "timestamp,value\n2020-01-01T00:00:00Z,1\n2020-01-01T01:00:00Z\n";
        assert!(matches!(ingest(short, 60), Err(SeriesError::MalformedRow { .. })));
        let missing = "time,value\n2020-01-01T00:00:00Z,1\n";
        assert!(matches!(ingest(missing, 60), Err(SeriesError::MissingColumn(_))));
    }

    #[test]
    fn ingest_optional_columns() {
        let csv = "timestamp,value,clearsky,zenith_deg\n2020-01-01T00:00:00Z,1,2,80\n2020-01-01T01:00:00Z,3,4,90\n";
        let got = ingest(csv, 60).unwrap();
        assert_eq!(got.clearsky.unwrap().values(), &[2.0, 4.0]);
        assert_eq!(got.zenith.unwrap(), vec![80.0, 90.0]);
    }

    #[test]
    fn zenith_filter_boundaries() {
        let s = MeteoSeries::from_values(grid(60), Unit::Irradiance, vec![1.0, 2.0, 3.0]).unwrap();
        let kept = quality_filter(&s, &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(kept.valid_mask(), &[true, true, true]);
        let none = quality_filter(&s, &[90.0, 90.0, 90.0]).unwrap();
        assert_eq!(none.valid_mask(), &[false, false, false]);
        let mixed = quality_filter(&s, &[80.0, 86.0, 85.0]).unwrap();
        assert_eq!(mixed.valid_mask(), &[true, false, true]);
        assert!(matches!(quality_filter(&s, &[1.0]), Err(SeriesError::LengthMismatch { .. })));
    }

    #[test]
    fn kappa_clear_day_and_cap() {
        let g = grid(60);
        let trend = TrendSeries::from_values(g, vec![100.0, 500.0, 800.0]).unwrap();
        let s = MeteoSeries::from_values(g, Unit::Irradiance, vec![100.0, 500.0, 800.0]).unwrap();
        let k = to_kappa(&s, &trend, 10.0, 1.2, NightMode::SetToOne).unwrap();
        assert_eq!(k.values(), &[1.0, 1.0, 1.0]);
        let s2 = MeteoSeries::from_values(g, Unit::Irradiance, vec![200.0, 1000.0, 1600.0]).unwrap();
        let k2 = to_kappa(&s2, &trend, 10.0, 1.2, NightMode::SetToOne).unwrap();
        assert_eq!(k2.values(), &[1.2, 1.2, 1.2]);
    }

    #[test]
    fn kappa_night_rule() {
        let g = grid(60);
        let trend = TrendSeries::from_values(g, vec![0.5, 500.0]).unwrap();
        let s = MeteoSeries::from_values(g, Unit::Irradiance, vec![0.0, 400.0]).unwrap();
        let one = to_kappa(&s, &trend, 10.0, 1.2, NightMode::SetToOne).unwrap();
        assert_eq!(one.get(0), Some(1.0));
        assert_eq!(one.states()[0], KappaState::Night);
        let excl = to_kappa(&s, &trend, 10.0, 1.2, NightMode::Exclude).unwrap();
        assert_eq!(excl.get(0), None);
        assert_eq!(excl.get(1), Some(0.8));
    }

    #[test]
    fn kappa_keeps_invalid_masked_in_both_modes() {
        let g = grid(60);
        let trend = TrendSeries::from_values(g, vec![0.5, 500.0]).unwrap();
        let s = MeteoSeries::new(g, Unit::Irradiance, vec![0.0, 400.0], vec![false, false]).unwrap();
        for mode in [NightMode::SetToOne, NightMode::Exclude] {
            let k = to_kappa(&s, &trend, 10.0, 1.2, mode).unwrap();
            assert_eq!(k.valid_mask(), &[false, false]);
        }
    }

    #[test]
    fn kappa_rejects_bad_parameters() {
        let g = grid(60);
        let trend = TrendSeries::from_values(g, vec![1.0, 1.0]).unwrap();
        let s = MeteoSeries::from_values(g, Unit::Irradiance, vec![1.0, 1.0]).unwrap();
        assert!(to_kappa(&s, &trend, 0.5, 1.2, NightMode::SetToOne).is_err());
        assert!(to_kappa(&s, &trend, 10.0, 2.5, NightMode::SetToOne).is_err());
        let other = TrendSeries::from_values(grid(15), vec![1.0, 1.0]).unwrap();
        assert!(matches!(
            to_kappa(&s, &other, 10.0, 1.2, NightMode::SetToOne),
            Err(SeriesError::AlignmentError)
        ));
    }

    #[test]
    fn mean_profile_examples() {
        let g = grid(60);
        let periodic: Vec<f64> = (0..12).map(|i| [1.0, 2.0, 3.0, 4.0][i % 4]).collect();
        let s = MeteoSeries::from_values(g, Unit::Celsius, periodic.clone()).unwrap();
        assert_eq!(mean_profile_trend(&s, 4).unwrap().values(), &periodic[..]);

        let s = MeteoSeries::from_values(g, Unit::Celsius, vec![7.5; 8]).unwrap();
        assert!(mean_profile_trend(&s, 4).unwrap().values().iter().all(|&v| v == 7.5));

        let s = MeteoSeries::from_values(g, Unit::Celsius, vec![1.0, 2.0, 3.0, 4.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let t = mean_profile_trend(&s, 4).unwrap();
        assert_eq!(&t.values()[..4], &[2.0, 3.0, 4.0, 5.0]);

        assert!(matches!(
            mean_profile_trend(&s, 5),
            Err(SeriesError::InsufficientHistory { .. })
        ));
    }

    #[test]
    fn mean_profile_masks_empty_phases() {
        let g = grid(60);
        let s = MeteoSeries::new(g, Unit::Celsius, vec![1.0, 9.0, 1.0, 9.0], vec![true, false, true, false]).unwrap();
        let t = mean_profile_trend(&s, 2).unwrap();
        assert_eq!(t.valid_mask(), &[true, false, true, false]);
    }

    #[test]
    fn threshold_formula_with_tabulated_quantile() {
        let t: f64 = bartlett_threshold(1.645, &[0.0; 23], 100);
        assert!((t - 0.1645).abs() < 1e-12);
        assert!((normal_quantile_two_sided(0.90) - 1.645).abs() < 1e-3);
    }

    #[test]
    fn seasonality_is_deterministic_and_detects_cycles() {
        let n = 2000;
        let cyc: Vec<f64> = (0..n).map(|i| (i as f64 * std::f64::consts::TAU / 24.0).sin()).collect();
        let mask = vec![true; n];
        let v = Masked::new(&cyc, &mask);
        let a = seasonality_test(v, 24, 100, 0.9, 7).unwrap();
        let b = seasonality_test(v, 24, 100, 0.9, 7).unwrap();
        assert_eq!(a, b);
        assert!(!a.deseasonalized);
        assert!(a.rho_m > 0.9);
        assert!(seasonality_test(v, 24, 5000, 0.9, 7).is_err());
    }
}
