//! The six reference forecasters and the backtest driver.
//!
//! Every model works in the κ domain and rescales by the trend at the target,
//! using the direct strategy: one fitted model per horizon, forecasts never
//! fed back as inputs. Fitted parameters (κ̄, ρ(h), ρ(2h), ARTU coefficients)
//! come from the in-sample prefix `[0, split)` only.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artu::{ArtuError, ArtuInputs, ArtuSolution, CoefficientSource};
use crate::scalar::Scalar;
use crate::series::{KappaSeries, TrendSeries, DEFAULT_BETA};
use crate::stats::{self, StatsError};

pub const DEFAULT_ES_WINDOW: usize = 48;
pub const DEFAULT_ARTU_R: f64 = 0.05;
/// Smallest ES smoothing constant used when ρ(1) is not positive.
pub const MIN_ES_ALPHA: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("no daylight history at or before origin {origin}")]
    NoDaylightHistory { origin: usize },
    #[error("trend missing at target index {index}")]
    MissingTrend { index: usize },
    #[error("smoothing constant {0} outside (0, 1]")]
    InvalidAlpha(f64),
    #[error("smoothing window must be at least 1")]
    InvalidWindow,
    #[error("ensemble has no members")]
    EmptyEnsemble,
    #[error("horizon {horizon} from origin {origin} leaves a series of length {len}")]
    InvalidHorizon { horizon: usize, origin: usize, len: usize },
    #[error("split {split} must leave both samples non-empty (length {len})")]
    InvalidSplit { split: usize, len: usize },
    #[error("kappa and trend are not aligned")]
    AlignmentError,
    #[error("COMB cannot be its own member")]
    RecursiveEnsemble,
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("cannot fit {model} at horizon {horizon}: {source}")]
    Fit {
        model: ModelId,
        horizon: usize,
        source: StatsError,
    },
    #[error(transparent)]
    Artu(#[from] ArtuError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ModelId {
    Per,
    Clim,
    Cliper,
    Es,
    Artu,
    Comb,
}

impl ModelId {
    pub const ALL: [ModelId; 6] = [
        ModelId::Per,
        ModelId::Clim,
        ModelId::Cliper,
        ModelId::Es,
        ModelId::Artu,
        ModelId::Comb,
    ];

    /// Default COMB membership.
    pub const COMB_MEMBERS: [ModelId; 4] = [ModelId::Cliper, ModelId::Artu, ModelId::Per, ModelId::Es];

    pub fn name(self) -> &'static str {
        match self {
            ModelId::Per => "PER",
            ModelId::Clim => "CLIM",
            ModelId::Cliper => "CLIPER",
            ModelId::Es => "ES",
            ModelId::Artu => "ARTU",
            ModelId::Comb => "COMB",
        }
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelId::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown model `{s}` (expected one of per, clim, cliper, es, artu, comb)"))
    }
}

/// One direct forecast: predict index `origin + horizon` from data up to `origin`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForecastRequest<T> {
    pub horizon: usize,
    pub origin: usize,
    /// κ cap.
    pub beta: T,
}

impl<T: Scalar> ForecastRequest<T> {
    pub fn new(horizon: usize, origin: usize, beta: T, len: usize) -> Result<Self, ModelError> {
        if horizon == 0 || origin + horizon >= len {
            return Err(ModelError::InvalidHorizon { horizon, origin, len });
        }
        Ok(Self { horizon, origin, beta })
    }

    pub fn target(&self) -> usize {
        self.origin + self.horizon
    }
}

/// One model's forecasts, one series per requested horizon.
pub type ModelForecasts<T> = (ModelId, Vec<ForecastSeries<T>>);

/// Predictions of one model at one horizon, indexed by target over `[first_target, first_target + len)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastSeries<T> {
    pub model: ModelId,
    pub horizon: usize,
    pub first_target: usize,
    pub values: Vec<T>,
    pub valid: Vec<bool>,
}

impl<T: Scalar> ForecastSeries<T> {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Prediction for absolute target index `target`.
    pub fn at(&self, target: usize) -> Option<T> {
        let k = target.checked_sub(self.first_target)?;
        (k < self.values.len() && self.valid[k]).then(|| self.values[k])
    }

    pub fn view(&self) -> stats::Masked<'_, T> {
        stats::Masked::new(&self.values, &self.valid)
    }
}

/// Scale a κ forecast by the target trend, clipped to `[0, β·trend]`.
fn finish<T: Scalar>(pred_kappa: T, trend: &TrendSeries<T>, req: &ForecastRequest<T>) -> Result<T, ModelError> {
    let target = req.target();
    let cs = trend.get(target).ok_or(ModelError::MissingTrend { index: target })?;
    Ok(pred_kappa.max(T::zero()).min(req.beta) * cs)
}

fn last_daylight<T: Scalar>(kappa: &KappaSeries<T>, origin: usize) -> Result<T, ModelError> {
    kappa
        .last_daylight(origin)
        .map(|(_, v)| v)
        .ok_or(ModelError::NoDaylightHistory { origin })
}

fn last_resolved<T: Scalar>(kappa: &KappaSeries<T>, origin: usize) -> Result<T, ModelError> {
    kappa
        .last_resolved(origin)
        .map(|(_, v)| v)
        .ok_or(ModelError::NoDaylightHistory { origin })
}

/// PER: the most recent daylight κ at or before the origin, carried to the target.
pub fn persistence<T: Scalar>(
    kappa: &KappaSeries<T>,
    trend: &TrendSeries<T>,
    req: &ForecastRequest<T>,
) -> Result<T, ModelError> {
    finish(last_daylight(kappa, req.origin)?, trend, req)
}

/// CLIM: the in-sample mean κ̄.
pub fn climatology<T: Scalar>(kappa_bar: T, trend: &TrendSeries<T>, req: &ForecastRequest<T>) -> Result<T, ModelError> {
    finish(kappa_bar, trend, req)
}

/// CLIPER: `ρ·κ(t) + (1 − ρ)·κ̄`, κ(t) backtracked to daylight.
pub fn cliper<T: Scalar>(
    kappa: &KappaSeries<T>,
    trend: &TrendSeries<T>,
    rho_h: T,
    kappa_bar: T,
    req: &ForecastRequest<T>,
) -> Result<T, ModelError> {
    let k = last_daylight(kappa, req.origin)?;
    finish(rho_h * k + (T::one() - rho_h) * kappa_bar, trend, req)
}

/// ES over the last `window` resolved κ values; the weight left over by a
/// short history goes to κ̄, so the weights always sum to one.
pub fn exp_smoothing<T: Scalar>(
    kappa: &KappaSeries<T>,
    trend: &TrendSeries<T>,
    alpha: T,
    window: usize,
    kappa_bar: T,
    req: &ForecastRequest<T>,
) -> Result<T, ModelError> {
    if !(alpha > T::zero() && alpha <= T::one()) {
        return Err(ModelError::InvalidAlpha(alpha.to_f64_lossy()));
    }
    if window == 0 {
        return Err(ModelError::InvalidWindow);
    }
    let history = kappa.resolved_history(req.origin, window);
    if history.is_empty() {
        return Err(ModelError::NoDaylightHistory { origin: req.origin });
    }
    let decay = T::one() - alpha;
    let mut weight = T::one();
    let mut acc = T::zero();
    for k in history {
        acc = acc + alpha * weight * k;
        weight = weight * decay;
    }
    finish(acc + kappa_bar * weight, trend, req)
}

/// ARTU: `S·κ(t) − P·κ(t−h) + (1 + P − S)·κ̄`, both lags resolved per the night rule.
pub fn artu_forecast<T: Scalar>(
    kappa: &KappaSeries<T>,
    trend: &TrendSeries<T>,
    sol: &ArtuSolution<T>,
    kappa_bar: T,
    req: &ForecastRequest<T>,
) -> Result<T, ModelError> {
    let now = last_resolved(kappa, req.origin)?;
    let lagged_origin = req
        .origin
        .checked_sub(req.horizon)
        .ok_or(ModelError::NoDaylightHistory { origin: req.origin })?;
    let lagged = last_resolved(kappa, lagged_origin)?;
    let pred = sol.s * now - sol.p * lagged + sol.mean_weight() * kappa_bar;
    finish(pred, trend, req)
}

/// COMB: arithmetic mean of the member forecasts.
pub fn combine<T: Scalar>(predictions: &[T]) -> Result<T, ModelError> {
    if predictions.is_empty() {
        return Err(ModelError::EmptyEnsemble);
    }
    Ok(predictions.iter().copied().sum::<T>() / T::from_count(predictions.len()))
}

/// Source of the ES smoothing constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EsAlpha<T> {
    /// In-sample ρ(1).
    Rho1,
    /// In-sample ρ(h) at each horizon.
    RhoH,
    Fixed(T),
}

#[derive(Debug, Clone)]
pub struct ModelConfig<T> {
    pub beta: T,
    /// Measurement-noise ratio handed to the ARTU solver.
    pub r: T,
    pub es_alpha: EsAlpha<T>,
    pub es_window: usize,
    pub coefficients: CoefficientSource<T>,
    pub comb_members: Vec<ModelId>,
}

impl<T: Scalar> Default for ModelConfig<T> {
    fn default() -> Self {
        Self {
            beta: T::lit(DEFAULT_BETA),
            r: T::lit(DEFAULT_ARTU_R),
            es_alpha: EsAlpha::Rho1,
            es_window: DEFAULT_ES_WINDOW,
            coefficients: CoefficientSource::default(),
            comb_members: ModelId::COMB_MEMBERS.to_vec(),
        }
    }
}

/// Parameters of one base model at one horizon, estimated in-sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Fitted<T> {
    Per,
    Clim { kappa_bar: T },
    Cliper { kappa_bar: T, rho: T },
    Es { kappa_bar: T, alpha: T, window: usize },
    Artu { kappa_bar: T, solution: ArtuSolution<T> },
}

impl<T: Scalar> Fitted<T> {
    pub fn predict(
        &self,
        kappa: &KappaSeries<T>,
        trend: &TrendSeries<T>,
        req: &ForecastRequest<T>,
    ) -> Result<T, ModelError> {
        match *self {
            Fitted::Per => persistence(kappa, trend, req),
            Fitted::Clim { kappa_bar } => climatology(kappa_bar, trend, req),
            Fitted::Cliper { kappa_bar, rho } => cliper(kappa, trend, rho, kappa_bar, req),
            Fitted::Es {
                kappa_bar,
                alpha,
                window,
            } => exp_smoothing(kappa, trend, alpha, window, kappa_bar, req),
            Fitted::Artu { kappa_bar, solution } => artu_forecast(kappa, trend, &solution, kappa_bar, req),
        }
    }
}

fn in_sample_mean<T: Scalar>(kappa: &KappaSeries<T>, split: usize) -> Result<T, ModelError> {
    Ok(stats::mean(kappa.view().slice(0..split))?)
}

fn in_sample_rho<T: Scalar>(kappa: &KappaSeries<T>, split: usize, lag: usize) -> Result<T, ModelError> {
    Ok(stats::acf(kappa.view().slice(0..split), lag)?.rho)
}

/// Estimate `model` at `horizon` from `kappa[0..split)`.
pub fn fit<T: Scalar>(
    model: ModelId,
    kappa: &KappaSeries<T>,
    split: usize,
    horizon: usize,
    cfg: &ModelConfig<T>,
) -> Result<Fitted<T>, ModelError> {
    match model {
        ModelId::Per => Ok(Fitted::Per),
        ModelId::Clim => Ok(Fitted::Clim {
            kappa_bar: in_sample_mean(kappa, split)?,
        }),
        ModelId::Cliper => Ok(Fitted::Cliper {
            kappa_bar: in_sample_mean(kappa, split)?,
            rho: in_sample_rho(kappa, split, horizon)?,
        }),
        ModelId::Es => {
            let alpha = match cfg.es_alpha {
                EsAlpha::Rho1 => in_sample_rho(kappa, split, 1)?.max(T::lit(MIN_ES_ALPHA)),
                EsAlpha::RhoH => in_sample_rho(kappa, split, horizon)?.max(T::lit(MIN_ES_ALPHA)),
                EsAlpha::Fixed(a) => a,
            };
            Ok(Fitted::Es {
                kappa_bar: in_sample_mean(kappa, split)?,
                alpha,
                window: cfg.es_window,
            })
        }
        ModelId::Artu => {
            let rho1 = in_sample_rho(kappa, split, horizon)?;
            let rho2 = in_sample_rho(kappa, split, 2 * horizon)?;
            let inputs = ArtuInputs::new(cfg.r, rho1, rho2)?;
            Ok(Fitted::Artu {
                kappa_bar: in_sample_mean(kappa, split)?,
                solution: cfg.coefficients.coefficients(&inputs)?,
            })
        }
        ModelId::Comb => Err(ModelError::RecursiveEnsemble),
    }
}

fn check_split<T: Scalar>(kappa: &KappaSeries<T>, trend: &TrendSeries<T>, split: usize) -> Result<(), ModelError> {
    if kappa.len() != trend.len() {
        return Err(ModelError::AlignmentError);
    }
    if split == 0 || split >= kappa.len() {
        return Err(ModelError::InvalidSplit {
            split,
            len: kappa.len(),
        });
    }
    Ok(())
}

/// Apply a fitted model to every out-sample target `[split, len)`; targets
/// without an origin, without daylight history or without a trend stay masked.
pub fn backtest<T: Scalar>(
    model: ModelId,
    fitted: &Fitted<T>,
    kappa: &KappaSeries<T>,
    trend: &TrendSeries<T>,
    horizon: usize,
    split: usize,
    beta: T,
) -> Result<ForecastSeries<T>, ModelError> {
    let n = kappa.len();
    let mut values = Vec::with_capacity(n - split);
    let mut valid = Vec::with_capacity(n - split);
    for target in split..n {
        let pred = match target.checked_sub(horizon) {
            Some(origin) if horizon > 0 => {
                let req = ForecastRequest { horizon, origin, beta };
                match fitted.predict(kappa, trend, &req) {
                    Ok(p) => Some(p),
                    Err(ModelError::NoDaylightHistory { .. } | ModelError::MissingTrend { .. }) => None,
                    Err(e) => return Err(e),
                }
            }
            _ => None,
        };
        values.push(pred.unwrap_or_else(T::zero));
        valid.push(pred.is_some());
    }
    Ok(ForecastSeries {
        model,
        horizon,
        first_target: split,
        values,
        valid,
    })
}

fn combine_series<T: Scalar>(horizon: usize, members: &[&ForecastSeries<T>]) -> Result<ForecastSeries<T>, ModelError> {
    let first = members.first().ok_or(ModelError::EmptyEnsemble)?;
    let len = first.len();
    let mut values = Vec::with_capacity(len);
    let mut valid = Vec::with_capacity(len);
    let mut buf = Vec::with_capacity(members.len());
    for k in 0..len {
        buf.clear();
        buf.extend(members.iter().filter(|m| m.valid[k]).map(|m| m.values[k]));
        let ok = buf.len() == members.len();
        values.push(if ok { combine(&buf)? } else { T::zero() });
        valid.push(ok);
    }
    Ok(ForecastSeries {
        model: ModelId::Comb,
        horizon,
        first_target: first.first_target,
        values,
        valid,
    })
}

/// Backtest several models over `horizons`; COMB members are computed once
/// and shared. Output order follows `models`, then `horizons`.
pub fn run_models<T: Scalar>(
    models: &[ModelId],
    kappa: &KappaSeries<T>,
    trend: &TrendSeries<T>,
    horizons: &[usize],
    split: usize,
    cfg: &ModelConfig<T>,
) -> Result<Vec<ModelForecasts<T>>, ModelError> {
    check_split(kappa, trend, split)?;
    if let Some(&h) = horizons.iter().find(|&&h| h == 0) {
        return Err(ModelError::InvalidHorizon {
            horizon: h,
            origin: 0,
            len: kappa.len(),
        });
    }
    if models.contains(&ModelId::Comb) {
        if cfg.comb_members.is_empty() {
            return Err(ModelError::EmptyEnsemble);
        }
        if cfg.comb_members.contains(&ModelId::Comb) {
            return Err(ModelError::RecursiveEnsemble);
        }
    }

    let mut base: Vec<ModelId> = models.iter().copied().filter(|m| *m != ModelId::Comb).collect();
    if models.contains(&ModelId::Comb) {
        base.extend(cfg.comb_members.iter().copied());
    }
    base.sort_unstable();
    base.dedup();

    let jobs: Vec<(ModelId, usize)> = base
        .iter()
        .flat_map(|&m| horizons.iter().map(move |&h| (m, h)))
        .collect();
    let results: Vec<ForecastSeries<T>> = jobs
        .par_iter()
        .map(|&(m, h)| {
            let fitted = fit(m, kappa, split, h, cfg).map_err(|e| match e {
                ModelError::Stats(source) => ModelError::Fit {
                    model: m,
                    horizon: h,
                    source,
                },
                other => other,
            })?;
            backtest(m, &fitted, kappa, trend, h, split, cfg.beta)
        })
        .collect::<Result<_, _>>()?;
    let by_key: BTreeMap<(ModelId, usize), ForecastSeries<T>> =
        results.into_iter().map(|s| ((s.model, s.horizon), s)).collect();

    models
        .iter()
        .map(|&m| {
            let per_h = horizons
                .iter()
                .map(|&h| match m {
                    ModelId::Comb => {
                        let members: Vec<&ForecastSeries<T>> =
                            cfg.comb_members.iter().map(|&c| &by_key[&(c, h)]).collect();
                        combine_series(h, &members)
                    }
                    _ => Ok(by_key[&(m, h)].clone()),
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok((m, per_h))
        })
        .collect()
}

/// Backtest one model over `horizons`.
pub fn run_model<T: Scalar>(
    model: ModelId,
    kappa: &KappaSeries<T>,
    trend: &TrendSeries<T>,
    horizons: &[usize],
    split: usize,
    cfg: &ModelConfig<T>,
) -> Result<Vec<ForecastSeries<T>>, ModelError> {
    Ok(run_models(&[model], kappa, trend, horizons, split, cfg)?
        .pop()
        .map(|(_, s)| s)
        .unwrap_or_default())
}
