//! End-to-end backtest: ingest, deseasonalize, run models, score, write files.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artu::{ArtuError, CoefficientGrid, CoefficientSource, SolverConfig, DEFAULT_MASTER_SEED};
use crate::metrics::{self, default_mase_m, BenchmarkReport, MetricError, ReportMetadata};
use crate::models::{self, EsAlpha, ForecastSeries, ModelConfig, ModelError, ModelId, DEFAULT_ARTU_R, DEFAULT_ES_WINDOW};
use crate::series::{
    self, parse_timestamp, CsvSchema, KappaState, MeteoSeries, NightMode, SeriesError, TrendSeries, Unit,
    DEFAULT_BETA, DEFAULT_EPSILON,
};
use crate::stats::Masked;

/// Failure classes, each with its own process exit code.
#[derive(Debug, Error)]
pub enum BenchError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error in {module}: {message}")]
    Data { module: &'static str, message: String },
    #[error("numerical failure in {module}: {message}")]
    Numerical { module: &'static str, message: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl BenchError {
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Config(_) => 2,
            BenchError::Data { .. } | BenchError::Io { .. } => 3,
            BenchError::Numerical { .. } => 4,
        }
    }

    fn io(path: &Path) -> impl FnOnce(std::io::Error) -> BenchError + '_ {
        move |source| BenchError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

impl From<SeriesError> for BenchError {
    fn from(e: SeriesError) -> Self {
        match e {
            SeriesError::InvalidParameter { .. } => BenchError::Config(e.to_string()),
            _ => BenchError::Data {
                module: "series",
                message: e.to_string(),
            },
        }
    }
}

impl From<ModelError> for BenchError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Artu(inner) => BenchError::Numerical {
                module: "artu",
                message: inner.to_string(),
            },
            ModelError::InvalidAlpha(_)
            | ModelError::InvalidWindow
            | ModelError::EmptyEnsemble
            | ModelError::RecursiveEnsemble
            | ModelError::InvalidHorizon { .. }
            | ModelError::InvalidSplit { .. } => BenchError::Config(format!("models: {e}")),
            _ => BenchError::Data {
                module: "models",
                message: e.to_string(),
            },
        }
    }
}

impl From<MetricError> for BenchError {
    fn from(e: MetricError) -> Self {
        BenchError::Data {
            module: "metrics",
            message: e.to_string(),
        }
    }
}

/// Where the deseasonalizing trend comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClearskySource {
    /// A column of the input file.
    Column(String),
    /// Per-phase mean of the in-sample series over `cycle_length` samples.
    MeanProfile { cycle_length: usize },
    /// A constant level.
    Constant(f64),
}

impl Default for ClearskySource {
    fn default() -> Self {
        ClearskySource::Column("clearsky".into())
    }
}

/// In-sample / out-sample boundary: a fraction of the length or the first
/// out-sample timestamp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Split {
    Fraction(f64),
    Date(String),
}

impl Default for Split {
    fn default() -> Self {
        Split::Fraction(0.5)
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Ok(f) = s.parse::<f64>() {
            return Ok(Split::Fraction(f));
        }
        parse_split_date(s)
            .map(|_| Split::Date(s.to_string()))
            .ok_or_else(|| format!("split `{s}` is neither a fraction nor a timestamp"))
    }
}

fn parse_split_date(s: &str) -> Option<chrono::DateTime<chrono::Utc>> {
    parse_timestamp(s).or_else(|| parse_timestamp(&format!("{s}T00:00:00")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Json,
    Csv,
}

impl FromStr for OutputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(OutputFormat::Json),
            "csv" => Ok(OutputFormat::Csv),
            other => Err(format!("unknown format `{other}` (json|csv)")),
        }
    }
}

/// Full description of one benchmark run. Every field has a default except
/// `input`, so a TOML file only needs the keys it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: PathBuf,
    /// Label stored in the report; defaults to the input file stem.
    pub site: Option<String>,
    pub step_minutes: u32,
    pub timestamp_col: String,
    pub value_col: String,
    pub zenith_col: Option<String>,
    pub unit: Unit,
    pub clearsky: ClearskySource,
    pub horizons: Vec<usize>,
    pub models: Vec<ModelId>,
    pub r: f64,
    pub epsilon: f64,
    pub beta: f64,
    pub night_mode: NightMode,
    pub split: Split,
    /// MASE seasonal lag; `None` picks the default for the sampling step, 0 is non-periodic.
    pub mase_m: Option<usize>,
    pub seed: u64,
    pub es_window: usize,
    pub es_alpha: EsAlpha<f64>,
    /// Precomputed ARTU grid; coefficients are solved directly when absent.
    pub artu_grid: Option<PathBuf>,
    pub out: PathBuf,
    pub formats: Vec<OutputFormat>,
    pub write_predictions: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            input: PathBuf::new(),
            site: None,
            step_minutes: 60,
            timestamp_col: "timestamp".into(),
            value_col: "value".into(),
            zenith_col: Some("zenith_deg".into()),
            unit: Unit::Irradiance,
            clearsky: ClearskySource::default(),
            horizons: (1..=10).collect(),
            models: ModelId::ALL.to_vec(),
            r: DEFAULT_ARTU_R,
            epsilon: DEFAULT_EPSILON,
            beta: DEFAULT_BETA,
            night_mode: NightMode::default(),
            split: Split::default(),
            mase_m: None,
            seed: DEFAULT_MASTER_SEED,
            es_window: DEFAULT_ES_WINDOW,
            es_alpha: EsAlpha::Rho1,
            artu_grid: None,
            out: PathBuf::from("out"),
            formats: vec![OutputFormat::Json, OutputFormat::Csv],
            write_predictions: true,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        if self.input.as_os_str().is_empty() {
            return Err(BenchError::Config("no input file given".into()));
        }
        if self.horizons.is_empty() || self.horizons.contains(&0) {
            return Err(BenchError::Config("horizons must be non-empty and positive".into()));
        }
        if self.models.is_empty() {
            return Err(BenchError::Config("no models selected".into()));
        }
        if self.step_minutes == 0 {
            return Err(BenchError::Config("step_minutes must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.r) {
            return Err(BenchError::Config(format!("R = {} outside [0, 1]", self.r)));
        }
        if let Split::Fraction(f) = self.split {
            if !(f > 0.0 && f < 1.0) {
                return Err(BenchError::Config(format!("split fraction {f} outside (0, 1)")));
            }
        }
        if let ClearskySource::MeanProfile { cycle_length: 0 } = self.clearsky {
            return Err(BenchError::Config("trend cycle length must be positive".into()));
        }
        if self.formats.is_empty() {
            return Err(BenchError::Config("no output format selected".into()));
        }
        Ok(())
    }

    fn schema(&self) -> CsvSchema {
        CsvSchema {
            timestamp: self.timestamp_col.clone(),
            value: self.value_col.clone(),
            clearsky: match &self.clearsky {
                ClearskySource::Column(c) => Some(c.clone()),
                _ => None,
            },
            zenith: self.zenith_col.clone(),
            unit: self.unit,
        }
    }

    fn site_label(&self) -> String {
        self.site.clone().unwrap_or_else(|| {
            self.input
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default()
        })
    }
}

/// Everything a run produced, in memory.
#[derive(Debug, Clone)]
pub struct BenchOutcome {
    pub report: BenchmarkReport,
    pub forecasts: Vec<(ModelId, Vec<ForecastSeries<f64>>)>,
    pub ingest_warnings: usize,
    pub written: Vec<PathBuf>,
}

fn split_index(cfg: &RunConfig, series: &MeteoSeries<f64>) -> Result<usize, BenchError> {
    let n = series.len();
    let split = match &cfg.split {
        Split::Fraction(f) => (n as f64 * f).floor() as usize,
        Split::Date(s) => {
            let t = parse_split_date(s).ok_or_else(|| BenchError::Config(format!("bad split date `{s}`")))?;
            series.grid().index_at_or_after(t)
        }
    };
    if split == 0 || split >= n {
        return Err(BenchError::Data {
            module: "series",
            message: format!("split index {split} leaves an empty in- or out-sample (length {n})"),
        });
    }
    Ok(split)
}

fn build_trend(
    cfg: &RunConfig,
    series: &MeteoSeries<f64>,
    column: Option<TrendSeries<f64>>,
    split: usize,
) -> Result<TrendSeries<f64>, BenchError> {
    match &cfg.clearsky {
        ClearskySource::Column(name) => column.ok_or_else(|| BenchError::Data {
            module: "series",
            message: format!("clear-sky column `{name}` not found in input"),
        }),
        ClearskySource::MeanProfile { cycle_length } => {
            // profile from the in-sample part only
            let drop: Vec<bool> = (0..series.len()).map(|i| i >= split).collect();
            let in_sample = series.masked_where(&drop)?;
            Ok(series::mean_profile_trend(&in_sample, *cycle_length)?)
        }
        ClearskySource::Constant(level) => Ok(TrendSeries::constant(series.grid(), series.len(), *level)?),
    }
}

/// Run a benchmark and write its outputs under `cfg.out`.
pub fn run_bench(cfg: &RunConfig) -> Result<BenchOutcome, BenchError> {
    cfg.validate()?;
    let file = File::open(&cfg.input).map_err(BenchError::io(&cfg.input))?;
    let ingested = series::ingest_csv::<f64, _>(BufReader::new(file), &cfg.schema(), cfg.step_minutes)?;
    let mut series = ingested.series;
    if let Some(zenith) = &ingested.zenith {
        series = series::quality_filter(&series, zenith)?;
    }
    let split = split_index(cfg, &series)?;
    let trend = build_trend(cfg, &series, ingested.clearsky, split)?;
    let kappa = series::to_kappa(&series, &trend, cfg.epsilon, cfg.beta, cfg.night_mode)?;

    let solver = SolverConfig::default().with_seed(cfg.seed);
    let coefficients = match &cfg.artu_grid {
        Some(path) => {
            let f = File::open(path).map_err(BenchError::io(path))?;
            let grid = CoefficientGrid::<f64>::read(BufReader::new(f)).map_err(|e| BenchError::Data {
                module: "artu",
                message: e.to_string(),
            })?;
            if (grid.r() - cfg.r).abs() > 1e-12 {
                return Err(BenchError::Config(format!(
                    "ARTU grid was built for R = {}, run asks for R = {}",
                    grid.r(),
                    cfg.r
                )));
            }
            CoefficientSource::Grid(grid, solver)
        }
        None => CoefficientSource::Solve(solver),
    };
    let model_cfg = ModelConfig {
        beta: cfg.beta,
        r: cfg.r,
        es_alpha: cfg.es_alpha,
        es_window: cfg.es_window,
        coefficients,
        comb_members: ModelId::COMB_MEMBERS.to_vec(),
    };
    let forecasts = models::run_models(&cfg.models, &kappa, &trend, &cfg.horizons, split, &model_cfg)?;

    // scored on measured daylight samples only
    let actual_valid: Vec<bool> = kappa.states().iter().map(|s| *s == KappaState::Day).collect();
    let actual = Masked::new(series.values(), &actual_valid);
    let metadata = ReportMetadata {
        site: cfg.site_label(),
        length: series.len(),
        split,
        horizons: cfg.horizons.clone(),
        r: cfg.r,
        epsilon: cfg.epsilon,
        beta: cfg.beta,
        night_mode: cfg.night_mode,
        mase_m: cfg.mase_m.unwrap_or_else(|| default_mase_m(cfg.step_minutes)),
        seed: cfg.seed,
    };
    let report = metrics::build_report(actual, &forecasts, metadata)?;
    let written = write_outputs(cfg, &report, &forecasts, &series)?;
    Ok(BenchOutcome {
        report,
        forecasts,
        ingest_warnings: ingested.warnings,
        written,
    })
}

fn create(path: &Path) -> Result<BufWriter<File>, BenchError> {
    File::create(path).map(BufWriter::new).map_err(BenchError::io(path))
}

fn write_outputs(
    cfg: &RunConfig,
    report: &BenchmarkReport,
    forecasts: &[(ModelId, Vec<ForecastSeries<f64>>)],
    series: &MeteoSeries<f64>,
) -> Result<Vec<PathBuf>, BenchError> {
    fs::create_dir_all(&cfg.out).map_err(BenchError::io(&cfg.out))?;
    let mut written = Vec::new();
    if cfg.formats.contains(&OutputFormat::Json) {
        let path = cfg.out.join("report.json");
        let mut w = create(&path)?;
        writeln!(w, "{}", report.to_json()).map_err(BenchError::io(&path))?;
        w.flush().map_err(BenchError::io(&path))?;
        written.push(path);
    }
    if cfg.formats.contains(&OutputFormat::Csv) {
        let path = cfg.out.join("report.csv");
        let mut w = create(&path)?;
        report.write_csv(&mut w).map_err(|e| match e {
            MetricError::Io(source) => BenchError::Io {
                path: path.clone(),
                source,
            },
            other => other.into(),
        })?;
        w.flush().map_err(BenchError::io(&path))?;
        written.push(path);
    }
    if cfg.write_predictions {
        let dir = cfg.out.join("predictions");
        fs::create_dir_all(&dir).map_err(BenchError::io(&dir))?;
        for (model, per_h) in forecasts {
            for s in per_h {
                let path = dir.join(format!("{}_h{}.csv", model.name().to_ascii_lowercase(), s.horizon));
                let mut w = create(&path)?;
                write_predictions(&mut w, s, series).map_err(BenchError::io(&path))?;
                w.flush().map_err(BenchError::io(&path))?;
                written.push(path);
            }
        }
    }
    Ok(written)
}

fn write_predictions<W: Write>(out: &mut W, s: &ForecastSeries<f64>, series: &MeteoSeries<f64>) -> std::io::Result<()> {
    writeln!(out, "timestamp,actual,prediction")?;
    for (k, (&v, &ok)) in s.values.iter().zip(&s.valid).enumerate() {
        let i = s.first_target + k;
        let ts = series.timestamp(i).format("%Y-%m-%dT%H:%M:%SZ");
        let actual = series.get(i).map(|a| a.to_string()).unwrap_or_default();
        let pred = if ok { v.to_string() } else { String::new() };
        writeln!(out, "{ts},{actual},{pred}")?;
    }
    Ok(())
}

/// Map an ARTU failure during grid generation to a [`BenchError`].
pub fn artu_failure(e: ArtuError) -> BenchError {
    match e {
        ArtuError::InvalidInputs(_) | ArtuError::InvalidStep(_) => BenchError::Config(format!("artu: {e}")),
        _ => BenchError::Numerical {
            module: "artu",
            message: e.to_string(),
        },
    }
}
