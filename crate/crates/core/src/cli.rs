//! Command-line front end.
//!
//! Every subcommand reads one TOML document with optional sections
//! `[simulation]`, `[estimator]`, `[pco]` and `[experiment]`; unknown keys
//! are rejected. Exit codes: 0 success, 1 configuration, 2 runtime, 3 I/O.

use std::ffi::OsString;
use std::path::{Path as FsPath, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{drift_estimate, EvalGrid};
use crate::experiments::{run_experiment, ExperimentConfig, PcoConfig, SimulationConfig};
use crate::kernels::KernelKind;
use crate::pco::{pco_select, BandwidthGrid, DEFAULT_KAPPA};
use crate::sde::Ensemble;
use crate::warp::empirical_cdf;

pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "warpdrift",
    version,
    about = "Warped kernel drift estimation with PCO bandwidth selection"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate an ensemble and write `ensemble.csv` and `ensemble.json`.
    Simulate(CommonArgs),
    /// Estimate the drift at a fixed bandwidth (`drift.csv`, `drift.json`).
    Estimate(CommonArgs),
    /// Select the bandwidth by PCO (`pco.json`, plus the selected curve).
    Select(CommonArgs),
    /// Run a replication experiment (`report.csv`, `summary.json`).
    Experiment(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// TOML configuration document.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Overrides `simulation.master_seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Print a JSON summary on stdout.
    #[arg(long)]
    pub json: bool,
    /// Worker thread cap.
    #[arg(long)]
    pub threads: Option<usize>,
    /// More log output on stderr (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

fn default_kernel() -> KernelKind {
    KernelKind::Bump
}

fn default_grid() -> EvalGrid {
    EvalGrid::new(0.0, 1.5, 100)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSection {
    #[serde(default = "default_kernel")]
    pub kernel: KernelKind,
    /// Bandwidth for `estimate`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[serde(default = "default_grid")]
    pub grid: EvalGrid,
    /// Ensemble CSV to read instead of simulating.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    /// Sidecar of `input`; defaults to `input` with extension `.json`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_meta: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub replications: usize,
    #[serde(default = "default_grid")]
    pub eval_grid: EvalGrid,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimator: Option<EstimatorSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pco: Option<PcoConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<ExperimentSection>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ConfigFile = toml::from_str(text)
            .map_err(|e| Error::config("config", e.to_string().trim_end().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<FsPath>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("config", e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(s) = &self.simulation {
            s.validate()?;
        }
        if let Some(e) = &self.estimator {
            e.grid.validate("estimator.grid")?;
            if let Some(h) = e.h {
                if !(h.is_finite() && h > 0.0) {
                    return Err(Error::config(
                        "estimator.h",
                        format!("must be > 0 (got {h})"),
                    ));
                }
            }
        }
        if let Some(p) = &self.pco {
            p.validate()?;
        }
        if let Some(x) = &self.experiment {
            x.eval_grid.validate("experiment.eval_grid")?;
            if x.replications == 0 {
                return Err(Error::config("experiment.replications", "must be >= 1"));
            }
        }
        Ok(())
    }

    fn simulation(&self) -> Result<&SimulationConfig> {
        self.simulation
            .as_ref()
            .ok_or_else(|| Error::config("simulation", "section is required"))
    }

    fn estimator(&self) -> EstimatorSection {
        self.estimator.clone().unwrap_or(EstimatorSection {
            kernel: default_kernel(),
            h: None,
            grid: default_grid(),
            input: None,
            input_meta: None,
        })
    }

    fn pco(&self) -> Result<&PcoConfig> {
        self.pco
            .as_ref()
            .ok_or_else(|| Error::config("pco", "section is required"))
    }

    /// The experiment described by the `[simulation]`, `[estimator]`,
    /// `[pco]` and `[experiment]` sections.
    pub fn experiment_config(&self) -> Result<ExperimentConfig> {
        let x = self
            .experiment
            .as_ref()
            .ok_or_else(|| Error::config("experiment", "section is required"))?;
        let cfg = ExperimentConfig {
            simulation: self.simulation()?.clone(),
            kernel: self.estimator().kernel,
            pco: self.pco()?.clone(),
            replications: x.replications,
            eval_grid: x.eval_grid,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply_seed(&mut self, seed: Option<u64>) {
        if let (Some(seed), Some(sim)) = (seed, self.simulation.as_mut()) {
            sim.master_seed = seed;
        }
    }

    /// Reads `estimator.input` if given, otherwise simulates.
    fn ensemble(&self) -> Result<Ensemble> {
        let est = self.estimator();
        match &est.input {
            Some(csv) => {
                let meta = est
                    .input_meta
                    .clone()
                    .unwrap_or_else(|| csv.with_extension("json"));
                info!("reading ensemble {}", csv.display());
                Ensemble::read(csv, meta)
            }
            None => self.simulation()?.simulate(),
        }
    }
}

/// Exit code of an error under the CLI contract.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidConfig { .. } | Error::InvalidBandwidth(_) => EXIT_CONFIG,
        Error::Io { .. } | Error::Format { .. } => EXIT_IO,
        _ => EXIT_RUNTIME,
    }
}

fn create_dir(dir: &FsPath) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let text =
        serde_json::to_string_pretty(value).map_err(|e| Error::InvalidInput(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn cmd_simulate(cfg: &ConfigFile, args: &CommonArgs) -> Result<()> {
    let ens = cfg.simulation()?.simulate()?;
    create_dir(&args.out)?;
    ens.write_csv(args.out.join("ensemble.csv"))?;
    ens.write_sidecar(args.out.join("ensemble.json"))?;
    info!("wrote {} paths to {}", ens.n_paths(), args.out.display());
    if args.json {
        print_json(&ens.meta())?;
    }
    Ok(())
}

fn cmd_estimate(cfg: &ConfigFile, args: &CommonArgs) -> Result<()> {
    let est = cfg.estimator();
    let h = est
        .h
        .ok_or_else(|| Error::config("estimator.h", "is required by `estimate`"))?;
    let ens = cfg.ensemble()?;
    let t0 = ens.t0;
    let (half_width, kappa) = cfg
        .pco
        .as_ref()
        .map_or((1.0, DEFAULT_KAPPA), |p| (p.delta_half_width, p.kappa));
    let warp = empirical_cdf(&ens, t0)?;
    let d0 = BandwidthGrid::new(vec![h], kappa)?.delta0(&warp, half_width);
    if h > d0 {
        warn!("h = {h} exceeds Delta0 = {d0:.4e} (kappa = {kappa}, Delta = {half_width})");
    }
    let kernel = est.kernel.kernel();
    let curve = drift_estimate(&ens, &kernel, h, &est.grid.abscissae(), t0)?;
    create_dir(&args.out)?;
    curve.write_csv(args.out.join("drift.csv"))?;
    let meta = curve.meta(&ens, &kernel, t0);
    crate::write_json(&args.out.join("drift.json"), &meta)?;
    if args.json {
        print_json(&meta)?;
    }
    Ok(())
}

fn cmd_select(cfg: &ConfigFile, args: &CommonArgs) -> Result<()> {
    let p = cfg.pco()?;
    let est = cfg.estimator();
    let ens = cfg.ensemble()?;
    let t0 = ens.t0;
    let kernel = est.kernel.kernel();
    let result = pco_select(&ens, &kernel, &p.norm()?, &p.grid()?, t0)?;
    for msg in &result.warnings {
        warn!("{msg}");
    }
    info!("selected h = {}", result.selected_h);
    let curve = drift_estimate(&ens, &kernel, result.selected_h, &est.grid.abscissae(), t0)?;
    create_dir(&args.out)?;
    result.write_json(args.out.join("pco.json"))?;
    curve.write_csv(args.out.join("drift.csv"))?;
    crate::write_json(&args.out.join("drift.json"), &curve.meta(&ens, &kernel, t0))?;
    if args.json {
        print_json(&result)?;
    }
    Ok(())
}

fn cmd_experiment(cfg: &ConfigFile, args: &CommonArgs) -> Result<()> {
    let exp = cfg.experiment_config()?;
    let report = run_experiment(&exp)?;
    let s = &report.summary;
    info!(
        "{}: mean MSE pco {:.4e}, oracle {:.4e}, ratio {:.3} ({} of {} completed)",
        s.model, s.mean_mse_pco, s.mean_mse_oracle, s.ratio, s.completed, s.replications
    );
    create_dir(&args.out)?;
    report.write_csv(args.out.join("report.csv"))?;
    report.write_summary(args.out.join("summary.json"))?;
    if args.json {
        print_json(s)?;
    }
    Ok(())
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .try_init();
}

fn execute(cli: Cli) -> Result<()> {
    let (Command::Simulate(args)
    | Command::Estimate(args)
    | Command::Select(args)
    | Command::Experiment(args)) = &cli.command;
    init_logging(args.verbose);
    if let Some(k) = args.threads {
        if k == 0 {
            return Err(Error::config("--threads", "must be >= 1"));
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
        {
            warn!("could not size the thread pool: {e}");
        }
    }
    let mut cfg = ConfigFile::load(&args.config)?;
    cfg.apply_seed(args.seed);
    match &cli.command {
        Command::Simulate(_) => cmd_simulate(&cfg, args),
        Command::Estimate(_) => cmd_estimate(&cfg, args),
        Command::Select(_) => cmd_select(&cfg, args),
        Command::Experiment(_) => cmd_experiment(&cfg, args),
    }
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
