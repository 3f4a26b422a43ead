//! Statistical reference methods for forecasting deseasonalized
//! meteorological series: persistence, climatology, CLIPER, exponential
//! smoothing, ARTU and their combination, with the ARTU coefficient solver,
//! evaluation metrics and a backtest driver.
//!
//! Everything numerical is generic over [`scalar::Scalar`] (`f32` or `f64`);
//! the aliases below fix the scalar to `f64`.

// `!(x < y)` guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod artu;
pub mod bench;
pub mod metrics;
pub mod models;
pub mod scalar;
pub mod series;
pub mod stats;
pub mod synth;

pub use scalar::Scalar;

pub type MeteoSeries = series::MeteoSeries<f64>;
pub type TrendSeries = series::TrendSeries<f64>;
pub type KappaSeries = series::KappaSeries<f64>;
pub type ArtuInputs = artu::ArtuInputs<f64>;
pub type ArtuSolution = artu::ArtuSolution<f64>;
pub type SolverConfig = artu::SolverConfig<f64>;
pub type CoefficientGrid = artu::CoefficientGrid<f64>;
pub type ForecastRequest = models::ForecastRequest<f64>;
pub type ForecastSeries = models::ForecastSeries<f64>;
pub type ModelConfig = models::ModelConfig<f64>;
pub type SynthSpec = synth::SynthSpec<f64>;
