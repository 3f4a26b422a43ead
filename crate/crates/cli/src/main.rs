use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use srm_core::artu::{generate_grid, SolverConfig, DEFAULT_GRID_STEP, DEFAULT_MASTER_SEED};
use srm_core::bench::{self, artu_failure, BenchError, ClearskySource, OutputFormat, RunConfig, Split};
use srm_core::models::ModelId;
use srm_core::series::{NightMode, Unit};
use srm_core::synth::{self, daily_profile, SynthKind, SynthSpec};

#[derive(Parser)]
#[command(name = "srm", version, about = "Statistical reference methods for meteorological forecasting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Backtest the reference models on a CSV series and write report files.
    Bench(Box<BenchArgs>),
    /// Precompute an ARTU coefficient grid over (ρ(h), ρ(2h)).
    Grid(GridArgs),
    /// Write a synthetic series in the ingestion schema.
    Synth(SynthArgs),
}

#[derive(Args)]
struct BenchArgs {
    /// TOML run configuration; flags given on the command line override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input CSV file.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Site label stored in the report.
    #[arg(long)]
    site: Option<String>,
    /// Clear-sky column name.
    #[arg(long, group = "trend")]
    clearsky_col: Option<String>,
    /// Use the in-sample mean profile over this many samples as the trend.
    #[arg(long, group = "trend")]
    trend_cycle: Option<usize>,
    /// Use a constant trend.
    #[arg(long, group = "trend")]
    trend_constant: Option<f64>,
    /// Timestamp column name (default `timestamp`).
    #[arg(long)]
    timestamp_col: Option<String>,
    /// Observation column name (default `value`).
    #[arg(long)]
    value_col: Option<String>,
    /// Solar-zenith column (degrees) for the quality filter, used when present (default `zenith_deg`).
    #[arg(long)]
    zenith_col: Option<String>,
    /// Unit of the value column.
    #[arg(long)]
    unit: Option<Unit>,
    /// Sampling step of the series.
    #[arg(long)]
    step_minutes: Option<u32>,
    /// Horizons as a range (`1..10`, inclusive) or a list (`1,3,6`).
    #[arg(long, value_parser = parse_horizons)]
    horizons: Option<Horizons>,
    /// `all` or a comma-separated subset of per, clim, cliper, es, artu, comb.
    #[arg(long, value_parser = parse_models)]
    models: Option<Models>,
    /// ARTU measurement-noise ratio.
    #[arg(long)]
    r: Option<f64>,
    /// Clear-sky threshold below which a sample counts as night.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Upper cap on κ.
    #[arg(long)]
    beta: Option<f64>,
    /// `set-to-one` or `exclude`.
    #[arg(long)]
    night_mode: Option<NightMode>,
    /// In-sample fraction (`0.5`) or first out-sample timestamp (`2021-01-01`).
    #[arg(long)]
    split: Option<Split>,
    /// MASE seasonal lag; 0 selects the non-periodic variant.
    #[arg(long)]
    mase_m: Option<usize>,
    /// Seed for the ARTU solver's random starts.
    #[arg(long)]
    seed: Option<u64>,
    /// Precomputed ARTU grid file.
    #[arg(long)]
    artu_grid: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Report format; repeat for several.
    #[arg(long = "format")]
    formats: Vec<OutputFormat>,
    /// Skip the per-model prediction CSVs.
    #[arg(long)]
    no_predictions: bool,
}

#[derive(Clone)]
struct Horizons(Vec<usize>);

#[derive(Clone)]
struct Models(Vec<ModelId>);

fn parse_horizons(s: &str) -> Result<Horizons, String> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once("..") {
            let a: usize = a.trim().parse().map_err(|_| format!("bad range start in `{part}`"))?;
            let b: usize = b
                .trim()
                .trim_start_matches('=')
                .parse()
                .map_err(|_| format!("bad range end in `{part}`"))?;
            if a > b {
                return Err(format!("empty range `{part}`"));
            }
            out.extend(a..=b);
        } else {
            out.push(part.parse().map_err(|_| format!("bad horizon `{part}`"))?);
        }
    }
    if out.is_empty() || out.contains(&0) {
        return Err("horizons must be non-empty and positive".into());
    }
    Ok(Horizons(out))
}

fn parse_models(s: &str) -> Result<Models, String> {
    if s.trim().eq_ignore_ascii_case("all") {
        return Ok(Models(ModelId::ALL.to_vec()));
    }
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let m: ModelId = part.parse()?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    if out.is_empty() {
        return Err("no models given".into());
    }
    Ok(Models(out))
}

#[derive(Args)]
struct GridArgs {
    /// Measurement-noise ratio R.
    #[arg(long)]
    r: f64,
    /// Lattice spacing on both correlation axes.
    #[arg(long, default_value_t = DEFAULT_GRID_STEP)]
    step: f64,
    /// Seed for per-cell random starts.
    #[arg(long, default_value_t = DEFAULT_MASTER_SEED)]
    seed: u64,
    /// Grid file to write.
    #[arg(long)]
    out: PathBuf,
    /// Solve cells on one thread.
    #[arg(long)]
    serial: bool,
}

#[derive(Args)]
struct SynthArgs {
    /// white, ar1, ar2 or seasonal.
    #[arg(long, default_value = "ar1")]
    kind: SynthKind,
    #[arg(long, default_value_t = 0.7)]
    alpha: f64,
    /// Second AR coefficient (ar2 only).
    #[arg(long, default_value_t = 0.0)]
    alpha2: f64,
    /// Standard deviation of the state process.
    #[arg(long, default_value_t = 0.2)]
    sigma: f64,
    /// Measurement-noise ratio.
    #[arg(long, default_value_t = 0.0)]
    r: f64,
    /// Level the process fluctuates around (κ level for the seasonal kind).
    #[arg(long, default_value_t = 1.0)]
    level: f64,
    #[arg(long, default_value_t = 8760)]
    length: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 60)]
    step_minutes: u32,
    /// Noon peak of the daily clear-sky profile (seasonal only).
    #[arg(long, default_value_t = 1000.0)]
    peak: f64,
    /// CSV file to write.
    #[arg(long)]
    out: PathBuf,
}

fn load_config(args: &BenchArgs) -> Result<RunConfig, BenchError> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| BenchError::Config(format!("{}: {e}", path.display())))?;
            toml::from_str(&text).map_err(|e| BenchError::Config(format!("{}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    macro_rules! set {
        ($($field:ident),*) => {$(
            if let Some(v) = args.$field.clone() {
                cfg.$field = v;
            }
        )*};
    }
    set!(input, step_minutes, timestamp_col, value_col, unit, r, epsilon, beta, night_mode, split, seed, out);
    if args.site.is_some() {
        cfg.site = args.site.clone();
    }
    if args.zenith_col.is_some() {
        cfg.zenith_col = args.zenith_col.clone();
    }
    if args.mase_m.is_some() {
        cfg.mase_m = args.mase_m;
    }
    if args.artu_grid.is_some() {
        cfg.artu_grid = args.artu_grid.clone();
    }
    if let Some(c) = &args.clearsky_col {
        cfg.clearsky = ClearskySource::Column(c.clone());
    }
    if let Some(n) = args.trend_cycle {
        cfg.clearsky = ClearskySource::MeanProfile { cycle_length: n };
    }
    if let Some(v) = args.trend_constant {
        cfg.clearsky = ClearskySource::Constant(v);
    }
    if let Some(h) = &args.horizons {
        cfg.horizons = h.0.clone();
    }
    if let Some(m) = &args.models {
        cfg.models = m.0.clone();
    }
    if !args.formats.is_empty() {
        cfg.formats = args.formats.clone();
    }
    if args.no_predictions {
        cfg.write_predictions = false;
    }
    Ok(cfg)
}

fn cmd_bench(args: &BenchArgs) -> Result<(), BenchError> {
    let cfg = load_config(args)?;
    let outcome = bench::run_bench(&cfg)?;
    if outcome.ingest_warnings > 0 {
        eprintln!("warning: {} input cells rejected by quality control", outcome.ingest_warnings);
    }
    let meta = &outcome.report.metadata;
    println!(
        "site {} | n = {} | split = {} | R = {} | night = {:?} | MASE m = {}",
        meta.site, meta.length, meta.split, meta.r, meta.night_mode, meta.mase_m
    );
    print!("{}", outcome.report.summary_table());
    for path in &outcome.written {
        if path.file_name().is_some_and(|f| f.to_string_lossy().starts_with("report")) {
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>, BenchError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| BenchError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    File::create(path).map(BufWriter::new).map_err(|source| BenchError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn cmd_grid(args: &GridArgs) -> Result<(), BenchError> {
    let cfg = SolverConfig::<f64>::default().with_seed(args.seed);
    let grid = generate_grid(args.r, args.step, &cfg, !args.serial).map_err(artu_failure)?;
    let rate = grid.solve_rate();
    if rate.solved == 0 {
        return Err(BenchError::Numerical {
            module: "artu",
            message: "no grid cell has an admissible solution".into(),
        });
    }
    let mut w = create(&args.out)?;
    grid.write(&mut w).map_err(artu_failure)?;
    w.flush().map_err(|source| BenchError::Io {
        path: args.out.clone(),
        source,
    })?;
    let (n1, n2) = grid.dims();
    println!(
        "grid {n1}x{n2} at R = {}: solved {}/{} ({:.2}%), admissible interior {}/{} ({:.2}%)",
        args.r,
        rate.solved,
        rate.total,
        100.0 * rate.fraction(),
        rate.interior_solved,
        rate.interior,
        100.0 * rate.interior_fraction()
    );
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> Result<(), BenchError> {
    let mut spec = SynthSpec::<f64>::ar1(args.alpha, args.sigma, args.length, args.seed);
    spec.kind = args.kind;
    spec.alpha2 = args.alpha2;
    spec.r = args.r;
    spec.level = args.level;
    spec.step_minutes = args.step_minutes;
    if args.kind == SynthKind::SeasonalAr1 {
        if args.step_minutes == 0 || 1440 % args.step_minutes != 0 {
            return Err(BenchError::Config("step must divide one day".into()));
        }
        spec.seasonal_profile = Some(daily_profile((1440 / args.step_minutes) as usize, args.peak));
    }
    let out = synth::generate(&spec).map_err(|e| BenchError::Config(format!("synth: {e}")))?;
    let clearsky = (args.kind == SynthKind::SeasonalAr1).then_some(&out.trend);
    let mut w = create(&args.out)?;
    let io_err = |source| BenchError::Io {
        path: args.out.clone(),
        source,
    };
    synth::write_csv(&out.observed, clearsky, &mut w).map_err(|e| match e {
        synth::SynthError::Io(source) => io_err(source),
        other => BenchError::Config(format!("synth: {other}")),
    })?;
    w.flush().map_err(io_err)?;
    println!("wrote {} rows to {}", out.observed.len(), args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Bench(a) => cmd_bench(a),
        Command::Grid(a) => cmd_grid(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
