#![allow(dead_code)]

use chrono::{TimeZone, Utc};
use srm_core::series::{to_kappa, KappaSeries, MeteoSeries, NightMode, TimeGrid, TrendSeries};
use srm_core::synth::{daily_profile, generate, SynthKind, SynthSpec};

pub fn hourly_grid() -> TimeGrid {
    TimeGrid::new(Utc.with_ymd_and_hms(2020, 1, 1, 0, 0, 0).unwrap(), 60).unwrap()
}

pub struct Diurnal {
    pub series: MeteoSeries<f64>,
    pub trend: TrendSeries<f64>,
    pub kappa: KappaSeries<f64>,
}

/// Hourly irradiance-like series: AR(1) κ around 0.8 under a daily bell.
pub fn diurnal(len: usize, seed: u64, night_mode: NightMode) -> Diurnal {
    let spec = SynthSpec {
        kind: SynthKind::SeasonalAr1,
        level: 0.8,
        seasonal_profile: Some(daily_profile(24, 1000.0)),
        ..SynthSpec::ar1(0.8, 0.2, len, seed)
    };
    let out = generate(&spec).unwrap();
    let kappa = to_kappa(&out.observed, &out.trend, 10.0, 1.2, night_mode).unwrap();
    Diurnal {
        series: out.observed,
        trend: out.trend,
        kappa,
    }
}

/// Stationary AR(1) κ series (all daylight) with a unit trend.
pub fn ar1_kappa(alpha: f64, sigma: f64, r: f64, len: usize, seed: u64) -> (KappaSeries<f64>, TrendSeries<f64>) {
    let spec = SynthSpec {
        r,
        ..SynthSpec::ar1(alpha, sigma, len, seed)
    };
    let out = generate(&spec).unwrap();
    let kappa = KappaSeries::from_values(out.observed.values().to_vec(), 2.0, NightMode::SetToOne);
    let trend = TrendSeries::constant(hourly_grid(), len, 1.0).unwrap();
    (kappa, trend)
}

/// Mean squared error of out-sample predictions against `actual` at the targets.
pub fn out_sample_mse(actual: &[f64], s: &srm_core::models::ForecastSeries<f64>) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (k, (&v, &ok)) in s.values.iter().zip(&s.valid).enumerate() {
        if ok {
            let e = actual[s.first_target + k] - v;
            sum += e * e;
            n += 1;
        }
    }
    sum / n as f64
}
