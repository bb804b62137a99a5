//! `disc-calib`: sample, simulate, train, calibrate and benchmark from the
//! command line.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use disc_calib::baselines::{ga_calibrate, inverse_calibrate, train_inverse, GaConfig, InverseNet, InverseNetConfig};
use disc_calib::calibrate::{calibrate, ConstraintMode, PgdConfig};
use disc_calib::harness::{run_experiment, write_report, ExperimentKind, ExperimentSpec};
use disc_calib::metrics::ScoreReport;
use disc_calib::nn::fit::LossKind;
use disc_calib::nn::{train, NetConfig, SurrogateNet};
use disc_calib::oracle::{generate_dataset, load_dataset, load_table, save_dataset};
use disc_calib::sampling::{lhs_sample, uniform_sample};
use disc_calib::{LoadGrid, MaterialBounds, N_PARAMS};

#[derive(Parser)]
#[command(name = "disc-calib", version, about = "Surrogate-based calibration of disc material parameters")]
struct Cli {
    /// Base random seed [default: 0; experiment specs keep their own]
    #[arg(long, global = true, env = "DISC_CALIB_SEED")]
    seed: Option<u64>,
    /// Worker threads for batch operations (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Material bounds file (TOML or JSON); defaults to the built-in table
    #[arg(long, global = true)]
    bounds: Option<PathBuf>,
    /// More log output (-v info, -vv debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw normalized material configurations
    Sample(SampleArgs),
    /// Generate an oracle dataset
    GenData(GenDataArgs),
    /// Train the RoM surrogate
    Train(TrainArgs),
    /// Train the direct inverse model on a surrogate
    TrainInverse(TrainInverseArgs),
    /// Calibrate material parameters to a target RoM table
    Calibrate(CalibrateArgs),
    /// Score a predicted RoM table against a target table
    Evaluate(EvaluateArgs),
    /// Run an experiment spec
    Bench(SpecArgs),
    /// Run an ablation spec
    Ablate(SpecArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum SampleMethod {
    Lhs,
    Uniform,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, value_enum, default_value = "lhs")]
    method: SampleMethod,
    /// Write physical rather than normalized values
    #[arg(long)]
    physical: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenDataArgs {
    /// Number of configurations
    #[arg(long)]
    n: usize,
    /// Comma-separated moments in Nm, or `default` for 1..5
    #[arg(long, default_value = "default")]
    grid: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    N1024,
    N128,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    L1,
    L2,
}

impl From<LossArg> for LossKind {
    fn from(v: LossArg) -> Self {
        match v {
            LossArg::L1 => LossKind::L1,
            LossArg::L2 => LossKind::L2,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "n1024")]
    preset: Preset,
    #[arg(long, value_enum, default_value = "l1")]
    loss: LossArg,
    /// Cap on training epochs
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long, default_value_t = 0.1)]
    val_fraction: f64,
    #[arg(long, default_value = "model.json")]
    out: PathBuf,
    /// Also write the training curves as JSON
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct TrainInverseArgs {
    /// Surrogate model file
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 50_000)]
    samples: usize,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long, default_value = "inverse.json")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Pgd,
    Ga,
    Inverse,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Projection,
    Penalty,
    None,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Surrogate model file
    #[arg(long)]
    model: PathBuf,
    /// Target CSV with columns load_case,moment,rom
    #[arg(long)]
    targets: PathBuf,
    #[arg(long, value_enum, default_value = "pgd")]
    method: Method,
    #[arg(long, default_value_t = 0.05)]
    eta: f64,
    #[arg(long, default_value_t = 300)]
    steps: usize,
    #[arg(long, default_value_t = 500)]
    restarts: usize,
    #[arg(long, value_enum, default_value = "projection")]
    mode: Mode,
    #[arg(long, default_value_t = 1.0)]
    penalty_weight: f64,
    #[arg(long, value_enum, default_value = "l1")]
    loss: LossArg,
    #[arg(long, default_value_t = 100)]
    max_generations: usize,
    /// Inverse model file, for `--method inverse`
    #[arg(long)]
    inverse_model: Option<PathBuf>,
    #[arg(long, default_value = "result.json")]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Predicted table CSV (load_case,moment,rom)
    #[arg(long)]
    predictions: PathBuf,
    /// Target table CSV (load_case,moment,rom)
    #[arg(long)]
    targets: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SpecArgs {
    /// Experiment TOML file
    #[arg(long)]
    spec: PathBuf,
    /// Overrides the spec's output directory
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let bounds = match &cli.bounds {
        Some(path) => MaterialBounds::load(path)?,
        None => MaterialBounds::default(),
    };
    let seed = cli.seed.unwrap_or(0);
    log::info!("seed {seed}, threads {:?}", cli.threads);
    match cli.command {
        Command::Sample(args) => sample(args, seed, &bounds),
        Command::GenData(args) => gen_data(args, seed),
        Command::Train(args) => train_surrogate(args, seed),
        Command::TrainInverse(args) => train_inverse_model(args, seed),
        Command::Calibrate(args) => calibrate_target(args, seed, &bounds),
        Command::Evaluate(args) => evaluate(args),
        Command::Bench(args) => run_spec(args, cli.seed, None),
        Command::Ablate(args) => run_spec(args, cli.seed, Some(ExperimentKind::Ablation)),
    }
}

fn write(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn sample(args: SampleArgs, seed: u64, bounds: &MaterialBounds) -> Result<()> {
    let configs = match args.method {
        SampleMethod::Lhs => lhs_sample(args.n, seed),
        SampleMethod::Uniform => uniform_sample(args.n, seed),
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    let header: Vec<String> = if args.physical {
        bounds.names().to_vec()
    } else {
        (1..=N_PARAMS).map(|j| format!("p{j}")).collect()
    };
    w.write_record(&header)?;
    for c in &configs {
        let values = if args.physical {
            bounds.to_physical(c.values())
        } else {
            *c.values()
        };
        w.write_record(values.iter().map(|v| v.to_string()))?;
    }
    write(&args.out, std::str::from_utf8(&w.into_inner()?)?)?;
    log::info!("wrote {} samples to {}", configs.len(), args.out.display());
    Ok(())
}

fn parse_grid(spec: &str) -> Result<LoadGrid> {
    if spec == "default" {
        return Ok(LoadGrid::default());
    }
    let moments = spec
        .split(',')
        .map(|m| m.trim().parse::<f64>().with_context(|| format!("bad moment {m:?} in --grid")))
        .collect::<Result<Vec<_>>>()?;
    Ok(LoadGrid::with_moments(moments)?)
}

fn gen_data(args: GenDataArgs, seed: u64) -> Result<()> {
    let grid = parse_grid(&args.grid)?;
    let ds = generate_dataset(args.n, &grid, seed)?;
    save_dataset(&ds, &args.out)?;
    log::info!("wrote {} records to {}", ds.records().len(), args.out.display());
    Ok(())
}

fn train_surrogate(args: TrainArgs, seed: u64) -> Result<()> {
    let ds = load_dataset(&args.data)?;
    let mut config = match args.preset {
        Preset::N1024 => NetConfig::n1024(),
        Preset::N128 => NetConfig::n128(),
    }
    .with_seed(seed);
    config.loss = args.loss.into();
    if let Some(cap) = args.max_epochs {
        config.max_epochs = cap;
    }
    log::info!("training with {config:?}");
    let (net, report) = train(&ds, &config, args.val_fraction)?;
    net.save(&args.out)?;
    if let Some(path) = &args.report {
        write(path, &serde_json::to_string_pretty(&report)?)?;
    }
    println!(
        "trained {} epochs, best validation loss {:.6} at epoch {}; model written to {}",
        report.epochs_run,
        report.best_val_loss,
        report.best_epoch,
        args.out.display()
    );
    Ok(())
}

fn train_inverse_model(args: TrainInverseArgs, seed: u64) -> Result<()> {
    let mut net = SurrogateNet::load(&args.model)?;
    net.freeze();
    let mut config = InverseNetConfig {
        train_set_size: args.samples,
        seed,
        ..InverseNetConfig::default()
    };
    if let Some(cap) = args.max_epochs {
        config.max_epochs = cap;
    }
    let (inverse, report) = train_inverse(&net, &config)?;
    inverse.save(&args.out)?;
    println!(
        "trained inverse model for {} epochs, best validation loss {:.6}; written to {}",
        report.epochs_run,
        report.best_val_loss,
        args.out.display()
    );
    Ok(())
}

fn calibrate_target(args: CalibrateArgs, seed: u64, bounds: &MaterialBounds) -> Result<()> {
    let mut net = SurrogateNet::load(&args.model)?;
    net.freeze();
    let targets = load_table(&args.targets)?;
    let result = match args.method {
        Method::Pgd => {
            let config = PgdConfig {
                eta: args.eta,
                steps: args.steps,
                restarts: args.restarts,
                loss: args.loss.into(),
                constraint_mode: match args.mode {
                    Mode::Projection => ConstraintMode::Projection,
                    Mode::Penalty => ConstraintMode::Penalty {
                        weight: args.penalty_weight,
                    },
                    Mode::None => ConstraintMode::None,
                },
                seed,
                ..PgdConfig::default()
            };
            log::info!("calibrating with {config:?}");
            calibrate(&net, &targets, &config)?
        }
        Method::Ga => {
            let config = GaConfig {
                max_generations: args.max_generations,
                seed,
                ..GaConfig::default()
            };
            ga_calibrate(&net, &targets, &config)?
        }
        Method::Inverse => {
            let Some(path) = &args.inverse_model else {
                bail!("--method inverse requires --inverse-model");
            };
            inverse_calibrate(&InverseNet::load(path)?, &net, &targets)?
        }
    }
    .with_bounds(bounds);
    write(&args.out, &result.to_json())?;
    println!(
        "{}: mean R2 {:.4}, MAE {:.4} deg, sum exceeding {:.4}, {:.2}s; written to {}",
        result.method,
        result.r2_mean,
        result.mae_deg,
        result.sum_exceeding,
        result.wall_time_secs,
        args.out.display()
    );
    Ok(())
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let predicted = load_table(&args.predictions)?;
    let targets = load_table(&args.targets)?;
    let report = ScoreReport::new(&targets, &predicted)?;
    let json = serde_json::to_string_pretty(&report)?;
    match &args.out {
        Some(path) => write(path, &json)?,
        None => println!("{json}"),
    }
    Ok(())
}

fn run_spec(args: SpecArgs, seed: Option<u64>, required: Option<ExperimentKind>) -> Result<()> {
    let mut spec = ExperimentSpec::load(&args.spec)?;
    if let Some(kind) = required {
        if spec.kind != kind {
            bail!("{} is a {:?} spec; this subcommand runs {:?} specs", args.spec.display(), spec.kind, kind);
        }
    }
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    if let Some(dir) = args.out_dir {
        spec.output_dir = dir;
    }
    log::info!("running {spec:?}");
    let report = run_experiment(&spec)?;
    for path in write_report(report.as_ref(), &spec.output_dir)? {
        println!("{}", path.display());
    }
    Ok(())
}
