//! Monte Carlo replication harness: PCO against the oracle bandwidth on
//! simulated ensembles.
//!
//! Replication `r` simulates its ensemble from `split_seed(master_seed, r)`,
//! so rows do not depend on scheduling or on the number of replications.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path as FsPath;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::EvalGrid;
use crate::fmt_f64;
use crate::kernels::KernelKind;
use crate::pco::{self, BandwidthGrid, WeightedNorm};
use crate::quadrature::CompensatedSum;
use crate::sde::{self, Ensemble, ModelId};

fn default_t0() -> f64 {
    0.0
}

/// Model, horizon, sample sizes and master seed of an ensemble.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub model: ModelId,
    #[serde(rename = "N")]
    pub n_paths: usize,
    /// Euler steps per path.
    pub n: usize,
    #[serde(rename = "T")]
    pub t_end: f64,
    #[serde(default = "default_t0")]
    pub t0: f64,
    pub x0: f64,
    pub master_seed: u64,
}

impl SimulationConfig {
    /// Settings of the two reference experiments.
    pub fn reference(model: ModelId) -> Self {
        SimulationConfig {
            model,
            n_paths: 100,
            n: 50,
            t_end: 5.0,
            t0: 0.0,
            x0: 2.0,
            master_seed: 20_240_601,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_paths == 0 {
            return Err(Error::config("N", "must be >= 1"));
        }
        if self.n == 0 {
            return Err(Error::config("n", "must be >= 1"));
        }
        if !(self.t_end.is_finite() && self.t_end > 0.0) {
            return Err(Error::config(
                "T",
                format!("must be > 0 (got {})", self.t_end),
            ));
        }
        if !(self.t0.is_finite() && self.t0 >= 0.0 && self.t0 < self.t_end) {
            return Err(Error::config(
                "t0",
                format!("must lie in [0, T) (got {})", self.t0),
            ));
        }
        let dt = self.t_end / self.n as f64;
        if self.t_end - self.t0 < dt * (1.0 - 1e-12) {
            return Err(Error::config("t0", "leaves no grid point in [t0, T)"));
        }
        if !self.x0.is_finite() {
            return Err(Error::config("x0", "must be finite"));
        }
        Ok(())
    }

    pub fn simulate(&self) -> Result<Ensemble> {
        self.simulate_with_seed(self.master_seed)
    }

    pub fn simulate_with_seed(&self, seed: u64) -> Result<Ensemble> {
        let mut ens = sde::simulate_ensemble(
            &self.model.model(),
            self.x0,
            self.t_end,
            self.n,
            self.n_paths,
            seed,
        )?;
        ens.t0 = self.t0;
        Ok(ens)
    }
}

/// Bandwidth grid and weighted norm of the selection step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PcoConfig {
    pub bandwidths: Vec<f64>,
    #[serde(default = "default_delta")]
    pub delta: KernelKind,
    #[serde(default = "default_half_width")]
    pub delta_half_width: f64,
    #[serde(default = "default_quad_points")]
    pub quad_points: usize,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
}

fn default_delta() -> KernelKind {
    KernelKind::Bump
}
fn default_half_width() -> f64 {
    1.0
}
fn default_quad_points() -> usize {
    pco::DEFAULT_QUAD_POINTS
}
fn default_kappa() -> f64 {
    pco::DEFAULT_KAPPA
}

impl PcoConfig {
    /// `{step * k : k = 1..=10}` with the default norm.
    pub fn arithmetic(step: f64) -> Self {
        PcoConfig {
            bandwidths: (1..=10).map(|k| step * k as f64).collect(),
            delta: default_delta(),
            delta_half_width: default_half_width(),
            quad_points: default_quad_points(),
            kappa: default_kappa(),
        }
    }

    pub fn grid(&self) -> Result<BandwidthGrid> {
        BandwidthGrid::new(self.bandwidths.clone(), self.kappa)
    }

    pub fn norm(&self) -> Result<WeightedNorm> {
        WeightedNorm::new(self.delta.kernel(), self.delta_half_width, self.quad_points)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid()?;
        self.norm()?;
        Ok(())
    }
}

fn default_eval_grid() -> EvalGrid {
    EvalGrid::new(0.0, 1.5, 100)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub simulation: SimulationConfig,
    #[serde(default = "default_delta")]
    pub kernel: KernelKind,
    pub pco: PcoConfig,
    pub replications: usize,
    /// Abscissae of the reported MSE.
    #[serde(default = "default_eval_grid")]
    pub eval_grid: EvalGrid,
}

impl ExperimentConfig {
    /// Model 1 with `H = {0.02 k}` or Model 2 with `H = {0.01 k}`, 100
    /// replications.
    pub fn reference(model: ModelId) -> Self {
        let step = match model {
            ModelId::Langevin => 0.02,
            ModelId::Nonlinear => 0.01,
        };
        ExperimentConfig {
            simulation: SimulationConfig::reference(model),
            kernel: KernelKind::Bump,
            pco: PcoConfig::arithmetic(step),
            replications: 100,
            eval_grid: default_eval_grid(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.simulation.validate()?;
        self.pco.validate()?;
        self.eval_grid.validate("eval_grid")?;
        if self.replications == 0 {
            return Err(Error::config("replications", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRow {
    pub rep: usize,
    pub seed: u64,
    pub h_hat: f64,
    pub h_oracle: f64,
    pub mse_pco: f64,
    pub mse_oracle: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// The selection diagnostics flagged the bandwidth grid.
    #[serde(default)]
    pub grid_warning: bool,
}

impl ReplicationRow {
    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }
}

/// One replication. A simulation blow-up yields an error row instead of an
/// error; anything else is propagated.
pub fn run_replication(cfg: &ExperimentConfig, rep: usize) -> Result<ReplicationRow> {
    let seed = sde::split_seed(cfg.simulation.master_seed, rep as u64);
    let ens = match cfg.simulation.simulate_with_seed(seed) {
        Ok(e) => e,
        Err(e @ Error::SimulationBlowup { .. }) => {
            return Ok(ReplicationRow {
                rep,
                seed,
                h_hat: f64::NAN,
                h_oracle: f64::NAN,
                mse_pco: f64::NAN,
                mse_oracle: f64::NAN,
                error: Some(e.to_string()),
                grid_warning: false,
            })
        }
        Err(e) => return Err(e),
    };
    let kernel = cfg.kernel.kernel();
    let grid = cfg.pco.grid()?;
    let t0 = cfg.simulation.t0;
    let selection = pco::pco_select(&ens, &kernel, &cfg.pco.norm()?, &grid, t0)?;
    let oracle = pco::oracle_select(
        &ens,
        &kernel,
        &grid,
        cfg.simulation.model.drift_fn(),
        &cfg.eval_grid.abscissae(),
        t0,
    )?;
    let mse_at = |h: f64| {
        oracle
            .mse
            .iter()
            .find(|(g, _)| *g == h)
            .map(|&(_, m)| m)
            .expect("selected bandwidth lies on the grid")
    };
    Ok(ReplicationRow {
        rep,
        seed,
        h_hat: selection.selected_h,
        h_oracle: oracle.h_oracle,
        mse_pco: mse_at(selection.selected_h),
        mse_oracle: mse_at(oracle.h_oracle),
        error: None,
        grid_warning: !selection.warnings.is_empty(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub h: f64,
    pub pco: usize,
    pub oracle: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub model: String,
    pub replications: usize,
    pub completed: usize,
    pub failed: usize,
    pub partial: bool,
    pub mean_mse_pco: f64,
    pub mean_mse_oracle: f64,
    pub ratio: f64,
    /// Replications whose bandwidth grid violated the `Delta0` conditions.
    pub grid_warnings: usize,
    pub histogram: Vec<HistogramBin>,
    pub master_seed: u64,
    pub rng: String,
    pub runtime_seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentReport {
    pub rows: Vec<ReplicationRow>,
    pub summary: ExperimentSummary,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let mut acc = CompensatedSum::default();
    let mut n = 0usize;
    for v in values {
        acc.add(v);
        n += 1;
    }
    if n == 0 {
        f64::NAN
    } else {
        acc.value() / n as f64
    }
}

/// Aggregates rows given in replication order.
pub fn summarize(
    cfg: &ExperimentConfig,
    rows: &[ReplicationRow],
    runtime_seconds: f64,
) -> ExperimentSummary {
    let ok = || rows.iter().filter(|r| r.is_ok());
    let mean_mse_pco = mean(ok().map(|r| r.mse_pco));
    let mean_mse_oracle = mean(ok().map(|r| r.mse_oracle));
    let histogram = cfg
        .pco
        .bandwidths
        .iter()
        .map(|&h| HistogramBin {
            h,
            pco: ok().filter(|r| r.h_hat == h).count(),
            oracle: ok().filter(|r| r.h_oracle == h).count(),
        })
        .collect();
    let completed = ok().count();
    ExperimentSummary {
        model: cfg.simulation.model.name().to_string(),
        replications: rows.len(),
        completed,
        failed: rows.len() - completed,
        partial: completed < rows.len(),
        mean_mse_pco,
        mean_mse_oracle,
        ratio: mean_mse_pco / mean_mse_oracle,
        grid_warnings: ok().filter(|r| r.grid_warning).count(),
        histogram,
        master_seed: cfg.simulation.master_seed,
        rng: sde::RNG_ALGORITHM.to_string(),
        runtime_seconds,
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let start = Instant::now();
    let rows = (0..cfg.replications)
        .into_par_iter()
        .map(|rep| run_replication(cfg, rep))
        .collect::<Result<Vec<_>>>()?;
    let summary = summarize(cfg, &rows, start.elapsed().as_secs_f64());
    if summary.grid_warnings > 0 {
        log::warn!(
            "bandwidth grid violates the Delta0 conditions in {} of {} replications",
            summary.grid_warnings,
            summary.completed
        );
    }
    for row in rows.iter().filter(|r| !r.is_ok()) {
        log::warn!(
            "replication {} failed: {}",
            row.rep,
            row.error.as_deref().unwrap_or("")
        );
    }
    Ok(ExperimentReport { rows, summary })
}

impl ExperimentReport {
    /// `rep,seed,h_hat,h_oracle,mse_pco,mse_oracle`; failed replications
    /// leave the numeric fields empty.
    pub fn write_csv(&self, path: impl AsRef<FsPath>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let mut write = || -> std::io::Result<()> {
            writeln!(out, "rep,seed,h_hat,h_oracle,mse_pco,mse_oracle")?;
            for r in &self.rows {
                if r.is_ok() {
                    writeln!(
                        out,
                        "{},{},{},{},{},{}",
                        r.rep,
                        r.seed,
                        fmt_f64(r.h_hat),
                        fmt_f64(r.h_oracle),
                        fmt_f64(r.mse_pco),
                        fmt_f64(r.mse_oracle)
                    )?;
                } else {
                    writeln!(out, "{},{},,,,", r.rep, r.seed)?;
                }
            }
            out.flush()
        };
        write().map_err(|e| Error::io(path, e))
    }

    pub fn write_summary(&self, path: impl AsRef<FsPath>) -> Result<()> {
        crate::write_json(path.as_ref(), &self.summary)
    }
}
