//! Seeded synthetic processes following the state/observation model
//! `x(t+1) = α x(t) + ω`, `y(t) = x(t) + v`, used as oracles throughout the
//! test suite and for end-to-end runs without measured data.

use std::io::Write;

use chrono::{DateTime, TimeZone, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::series::{MeteoSeries, SeriesError, TimeGrid, TrendSeries, Unit};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("unstable process: {0}")]
    UnstableSpec(String),
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthKind {
    WhiteNoise,
    Ar1,
    Ar2,
    SeasonalAr1,
}

impl std::str::FromStr for SynthKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "white" | "white-noise" | "whitenoise" => Ok(SynthKind::WhiteNoise),
            "ar1" => Ok(SynthKind::Ar1),
            "ar2" => Ok(SynthKind::Ar2),
            "seasonal" | "seasonal-ar1" | "seasonalar1" => Ok(SynthKind::SeasonalAr1),
            other => Err(format!("unknown synth kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec<T> {
    pub kind: SynthKind,
    pub alpha: T,
    /// Second AR coefficient, used by [`SynthKind::Ar2`] only.
    pub alpha2: T,
    /// Standard deviation of the stationary state process.
    pub sigma_x: T,
    /// Measurement-noise variance as a fraction of the process variance.
    pub r: T,
    /// Constant level the zero-mean process fluctuates around.
    pub level: T,
    pub length: usize,
    pub seed: u64,
    /// Multiplicative profile tiled over the series ([`SynthKind::SeasonalAr1`]).
    pub seasonal_profile: Option<Vec<T>>,
    pub start: DateTime<Utc>,
    pub step_minutes: u32,
}

impl<T: Scalar> SynthSpec<T> {
    pub fn ar1(alpha: T, sigma_x: T, length: usize, seed: u64) -> Self {
        Self {
            kind: SynthKind::Ar1,
            alpha,
            alpha2: T::zero(),
            sigma_x,
            r: T::zero(),
            level: T::one(),
            length,
            seed,
            seasonal_profile: None,
            start: Utc.with_ymd_and_hms(2020, 1, 1, 0, 0, 0).unwrap(),
            step_minutes: 60,
        }
    }

    pub fn white_noise(sigma_x: T, length: usize, seed: u64) -> Self {
        Self {
            kind: SynthKind::WhiteNoise,
            alpha: T::zero(),
            ..Self::ar1(T::zero(), sigma_x, length, seed)
        }
    }
}

/// Clear-sky-like daily bell: zero at night, `peak` at solar noon.
pub fn daily_profile<T: Scalar>(samples_per_day: usize, peak: T) -> Vec<T> {
    (0..samples_per_day)
        .map(|i| {
            let hour = 24.0 * (i as f64 + 0.5) / samples_per_day as f64;
            let shape = (std::f64::consts::PI * (hour - 6.0) / 12.0).sin().max(0.0);
            peak * T::lit(shape)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct SynthOutput<T> {
    pub truth: MeteoSeries<T>,
    pub observed: MeteoSeries<T>,
    pub trend: TrendSeries<T>,
}

/// Largest characteristic-root modulus of the AR recursion.
fn root_modulus(a1: f64, a2: f64) -> f64 {
    let disc = a1 * a1 + 4.0 * a2;
    if disc >= 0.0 {
        let s = disc.sqrt();
        ((a1 + s) / 2.0).abs().max(((a1 - s) / 2.0).abs())
    } else {
        (-a2).sqrt()
    }
}

pub fn generate<T: Scalar>(spec: &SynthSpec<T>) -> Result<SynthOutput<T>, SynthError> {
    if spec.length < 100 {
        return Err(SynthError::InvalidSpec(format!("length {} < 100", spec.length)));
    }
    let sigma = spec.sigma_x.to_f64_lossy();
    let r = spec.r.to_f64_lossy();
    if !(sigma > 0.0) || !(r >= 0.0) {
        return Err(SynthError::InvalidSpec("need sigma_x > 0 and R >= 0".into()));
    }
    let (a1, a2) = match spec.kind {
        SynthKind::WhiteNoise => (0.0, 0.0),
        SynthKind::Ar1 | SynthKind::SeasonalAr1 => (spec.alpha.to_f64_lossy(), 0.0),
        SynthKind::Ar2 => (spec.alpha.to_f64_lossy(), spec.alpha2.to_f64_lossy()),
    };
    let stationary = a2.abs() < 1.0 && a1 + a2 < 1.0 && a2 - a1 < 1.0;
    if !stationary || !a1.is_finite() || !a2.is_finite() {
        return Err(SynthError::UnstableSpec(format!("alpha = ({a1}, {a2})")));
    }
    // innovation variance giving Var(x) = sigma²
    let innov_var = if a2 == 0.0 {
        sigma * sigma * (1.0 - a1 * a1)
    } else {
        sigma * sigma * (1.0 + a2) * ((1.0 - a2).powi(2) - a1 * a1) / (1.0 - a2)
    };
    let innov_sd = innov_var.sqrt();
    let obs_sd = (r * sigma * sigma).sqrt();

    let profile = match spec.kind {
        SynthKind::SeasonalAr1 => {
            let p = spec
                .seasonal_profile
                .clone()
                .filter(|p| !p.is_empty())
                .ok_or_else(|| SynthError::InvalidSpec("seasonal kind needs a profile".into()))?;
            Some(p)
        }
        _ => None,
    };

    let memory = (1.0 / (1.0 - root_modulus(a1, a2))).ceil().max(10.0) as usize;
    let burn_in = 10 * memory;

    let mut state_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut obs_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0xA5A5_5A5A_0F0F_F0F0);
    let draw = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };

    // start from the stationary marginal, then burn in
    let mut x1 = sigma * draw(&mut state_rng);
    let mut x2 = x1;
    let mut states = Vec::with_capacity(spec.length);
    for step in 0..burn_in + spec.length {
        let x = a1 * x1 + a2 * x2 + innov_sd * draw(&mut state_rng);
        x2 = x1;
        x1 = x;
        if step >= burn_in {
            states.push(x);
        }
    }
    let level = spec.level.to_f64_lossy();
    let mut truth = Vec::with_capacity(spec.length);
    let mut observed = Vec::with_capacity(spec.length);
    let mut trend = Vec::with_capacity(spec.length);
    for (i, x) in states.iter().enumerate() {
        let v = obs_sd * draw(&mut obs_rng);
        let scale = profile.as_ref().map_or(T::one(), |p| p[i % p.len()]);
        truth.push(scale * T::lit(level + x));
        observed.push(scale * T::lit(level + x + v));
        trend.push(scale);
    }
    let grid = TimeGrid::new(spec.start, spec.step_minutes)?;
    let unit = if profile.is_some() {
        Unit::Irradiance
    } else {
        Unit::Dimensionless
    };
    Ok(SynthOutput {
        truth: MeteoSeries::from_values(grid, unit, truth)?,
        observed: MeteoSeries::from_values(grid, unit, observed)?,
        trend: TrendSeries::from_values(grid, trend)?,
    })
}

/// Write `series` in the ingestion schema (`timestamp,value[,clearsky]`).
pub fn write_csv<T: Scalar, W: Write>(
    series: &MeteoSeries<T>,
    clearsky: Option<&TrendSeries<T>>,
    mut out: W,
) -> Result<(), SynthError> {
    match clearsky {
        Some(_) => writeln!(out, "timestamp,value,clearsky")?,
        None => writeln!(out, "timestamp,value")?,
    }
    for i in 0..series.len() {
        let ts = series.timestamp(i).format("%Y-%m-%dT%H:%M:%SZ");
        let value = series.get(i).map(|v| v.to_string()).unwrap_or_default();
        match clearsky {
            Some(cs) => {
                let c = cs.get(i).map(|v| v.to_string()).unwrap_or_default();
                writeln!(out, "{ts},{value},{c}")?;
            }
            None => writeln!(out, "{ts},{value}")?,
        }
    }
    Ok(())
}
