//! Scalar diffusions `dX = b(X) dt + sigma(X) dW`, Euler–Maruyama
//! simulation and ensemble (de)serialization.
//!
//! Randomness: every path owns a 64-bit seed. The seed initializes a
//! ChaCha8 stream and standard normals are drawn from it with the Ziggurat
//! sampler of `rand_distr`. Path `i` of an ensemble uses
//! `split_seed(master_seed, i)`, so results never depend on scheduling.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path as FsPath;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmt_f64;

/// Identifier of the normal generator recorded in output metadata.
pub const RNG_ALGORITHM: &str = "chacha8+ziggurat";

type CoefficientFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct DiffusionModel {
    pub name: String,
    drift: CoefficientFn,
    diffusion: CoefficientFn,
    pub lipschitz_hint: Option<f64>,
}

impl DiffusionModel {
    pub fn new(
        name: impl Into<String>,
        drift: impl Fn(f64) -> f64 + Send + Sync + 'static,
        diffusion: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        DiffusionModel {
            name: name.into(),
            drift: Arc::new(drift),
            diffusion: Arc::new(diffusion),
            lipschitz_hint: None,
        }
    }

    pub fn with_lipschitz_hint(mut self, l: f64) -> Self {
        self.lipschitz_hint = Some(l);
        self
    }

    #[inline]
    pub fn drift(&self, x: f64) -> f64 {
        (self.drift)(x)
    }

    #[inline]
    pub fn diffusion(&self, x: f64) -> f64 {
        (self.diffusion)(x)
    }

    /// Same model with the diffusion coefficient replaced by zero.
    pub fn deterministic(&self) -> Self {
        DiffusionModel {
            name: format!("{}-deterministic", self.name),
            drift: self.drift.clone(),
            diffusion: Arc::new(|_| 0.0),
            lipschitz_hint: self.lipschitz_hint,
        }
    }
}

impl fmt::Debug for DiffusionModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiffusionModel")
            .field("name", &self.name)
            .field("lipschitz_hint", &self.lipschitz_hint)
            .finish_non_exhaustive()
    }
}

/// Langevin equation: `b(x) = -x`, `sigma = 0.1`.
pub fn model_langevin() -> DiffusionModel {
    DiffusionModel::new("langevin", |x| -x, |_| 0.1).with_lipschitz_hint(1.0)
}

/// `b(x) = -(x + sin 4x)`, `sigma(x) = 0.1 (2 + cos x)`.
pub fn model_nonlinear() -> DiffusionModel {
    DiffusionModel::new(
        "nonlinear",
        |x| -(x + (4.0 * x).sin()),
        |x| 0.1 * (2.0 + x.cos()),
    )
    .with_lipschitz_hint(5.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelId {
    #[serde(alias = "model1")]
    Langevin,
    #[serde(alias = "model2")]
    Nonlinear,
}

impl ModelId {
    pub fn model(self) -> DiffusionModel {
        match self {
            ModelId::Langevin => model_langevin(),
            ModelId::Nonlinear => model_nonlinear(),
        }
    }

    pub fn drift_fn(self) -> fn(f64) -> f64 {
        match self {
            ModelId::Langevin => |x| -x,
            ModelId::Nonlinear => |x| -(x + (4.0 * x).sin()),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelId::Langevin => "langevin",
            ModelId::Nonlinear => "nonlinear",
        }
    }
}

/// SplitMix64 finalizer applied to `master + (index + 1) * golden_gamma`.
pub fn split_seed(master_seed: u64, index: u64) -> u64 {
    let mut z = master_seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform grid `t_j = T j / n`, `j = 0..=n`, with `t_n = T` exactly.
pub fn uniform_grid(t_end: f64, n: usize) -> Vec<f64> {
    (0..=n)
        .map(|j| {
            if j == n {
                t_end
            } else {
                t_end * (j as f64 / n as f64)
            }
        })
        .collect()
}

/// One discretized trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct Path {
    pub times: Arc<[f64]>,
    pub values: Vec<f64>,
    pub seed: u64,
}

impl Path {
    pub fn new(times: Arc<[f64]>, values: Vec<f64>, seed: u64) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::InvalidInput(format!(
                "path has {} times but {} values",
                times.len(),
                values.len()
            )));
        }
        if times.len() < 2 || times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput(
                "time grid must have at least two strictly increasing points".into(),
            ));
        }
        Ok(Path {
            times,
            values,
            seed,
        })
    }

    pub fn n_steps(&self) -> usize {
        self.values.len() - 1
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().expect("non-empty grid")
    }

    pub fn dt(&self) -> f64 {
        self.t_end() / self.n_steps() as f64
    }

    /// First grid index with `t_j >= t0` (up to rounding).
    pub fn first_index(&self, t0: f64) -> usize {
        let tol = 1e-12 * self.t_end().abs().max(1.0);
        self.times.partition_point(|&t| t < t0 - tol)
    }

    /// Left-point observations and increments `(X_{t_j}, X_{t_{j+1}} - X_{t_j})`
    /// for every `t_j` in `[t0, T)`.
    pub fn left_points(&self, t0: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let start = self.first_index(t0);
        self.values[start..].windows(2).map(|w| (w[0], w[1] - w[0]))
    }
}

fn check_sim_config(x0: f64, t_end: f64, n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::config("n", "must be at least 1"));
    }
    if !(t_end.is_finite() && t_end > 0.0) {
        return Err(Error::config(
            "T",
            format!("must be finite and > 0 (got {t_end})"),
        ));
    }
    if !x0.is_finite() {
        return Err(Error::config("x0", "must be finite"));
    }
    Ok(())
}

/// Euler–Maruyama driven by explicit Brownian increments `dw[j] = W_{t_{j+1}} - W_{t_j}`
/// on the uniform grid of `[0, t_end]` with `dw.len()` steps.
pub fn euler_maruyama(
    model: &DiffusionModel,
    x0: f64,
    t_end: f64,
    dw: &[f64],
    seed: u64,
) -> Result<Path> {
    check_sim_config(x0, t_end, dw.len())?;
    let n = dw.len();
    let dt = t_end / n as f64;
    let mut values = Vec::with_capacity(n + 1);
    let mut x = x0;
    values.push(x);
    for (j, &dwj) in dw.iter().enumerate() {
        x = x + model.drift(x) * dt + model.diffusion(x) * dwj;
        if !x.is_finite() {
            return Err(Error::SimulationBlowup {
                step: j + 1,
                seed,
                value: x,
            });
        }
        values.push(x);
    }
    Ok(Path {
        times: uniform_grid(t_end, n).into(),
        values,
        seed,
    })
}

/// `n` Brownian increments of variance `t_end / n` from `seed`.
pub fn brownian_increments(t_end: f64, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sd = (t_end / n as f64).sqrt();
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            sd * z
        })
        .collect()
}

pub fn simulate_path(
    model: &DiffusionModel,
    x0: f64,
    t_end: f64,
    n: usize,
    seed: u64,
) -> Result<Path> {
    check_sim_config(x0, t_end, n)?;
    euler_maruyama(model, x0, t_end, &brownian_increments(t_end, n, seed), seed)
}

/// `N` i.i.d. paths sharing one time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    pub paths: Vec<Path>,
    pub model_name: String,
    pub x0: f64,
    pub t_end: f64,
    pub t0: f64,
    pub n_steps: usize,
    pub master_seed: u64,
}

/// JSON sidecar of an ensemble CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleMeta {
    pub model: String,
    pub x0: f64,
    #[serde(rename = "T")]
    pub t_end: f64,
    pub t0: f64,
    pub n: usize,
    #[serde(rename = "N")]
    pub n_paths: usize,
    pub master_seed: u64,
    pub rng: String,
}

pub fn simulate_ensemble(
    model: &DiffusionModel,
    x0: f64,
    t_end: f64,
    n: usize,
    n_paths: usize,
    master_seed: u64,
) -> Result<Ensemble> {
    check_sim_config(x0, t_end, n)?;
    if n_paths == 0 {
        return Err(Error::config("N", "must be at least 1"));
    }
    let times: Arc<[f64]> = uniform_grid(t_end, n).into();
    let paths = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let seed = split_seed(master_seed, i);
            let mut p = simulate_path(model, x0, t_end, n, seed)?;
            p.times = times.clone();
            Ok(p)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Ensemble {
        paths,
        model_name: model.name.clone(),
        x0,
        t_end,
        t0: 0.0,
        n_steps: n,
        master_seed,
    })
}

impl Ensemble {
    /// Builds an ensemble from paths that must share one time grid.
    pub fn from_paths(
        paths: Vec<Path>,
        model_name: impl Into<String>,
        master_seed: u64,
    ) -> Result<Self> {
        let first = paths
            .first()
            .ok_or_else(|| Error::InvalidInput("empty ensemble".into()))?;
        if paths.iter().any(|p| p.times != first.times) {
            return Err(Error::InvalidInput("paths do not share a time grid".into()));
        }
        Ok(Ensemble {
            x0: first.values[0],
            t_end: first.t_end(),
            t0: first.times[0],
            n_steps: first.n_steps(),
            model_name: model_name.into(),
            master_seed,
            paths,
        })
    }

    pub fn n_paths(&self) -> usize {
        self.paths.len()
    }

    pub fn dt(&self) -> f64 {
        self.t_end / self.n_steps as f64
    }

    pub fn times(&self) -> &[f64] {
        &self.paths[0].times
    }

    /// Paths of `self` followed by paths of `other`.
    pub fn concat(&self, other: &Ensemble) -> Result<Ensemble> {
        let mut paths = self.paths.clone();
        paths.extend(other.paths.iter().cloned());
        let mut e = Ensemble::from_paths(paths, self.model_name.clone(), self.master_seed)?;
        e.t0 = self.t0;
        e.x0 = self.x0;
        Ok(e)
    }

    pub(crate) fn validate_window(&self, t0: f64) -> Result<()> {
        if self.paths.is_empty() {
            return Err(Error::InvalidInput("empty ensemble".into()));
        }
        if !(t0.is_finite() && t0 < self.t_end) {
            return Err(Error::config(
                "t0",
                format!("must satisfy t0 < T = {}", self.t_end),
            ));
        }
        if self.paths[0].first_index(t0) >= self.n_steps {
            return Err(Error::InvalidInput(format!(
                "no grid point in [{t0}, {})",
                self.t_end
            )));
        }
        Ok(())
    }

    pub fn meta(&self) -> EnsembleMeta {
        EnsembleMeta {
            model: self.model_name.clone(),
            x0: self.x0,
            t_end: self.t_end,
            t0: self.t0,
            n: self.n_steps,
            n_paths: self.n_paths(),
            master_seed: self.master_seed,
            rng: RNG_ALGORITHM.to_string(),
        }
    }

    /// Writes `path_id,t,x` rows at 17 significant digits.
    pub fn write_csv(&self, path: impl AsRef<FsPath>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let mut write = || -> std::io::Result<()> {
            writeln!(out, "path_id,t,x")?;
            for (i, p) in self.paths.iter().enumerate() {
                for (t, x) in p.times.iter().zip(&p.values) {
                    writeln!(out, "{i},{},{}", fmt_f64(*t), fmt_f64(*x))?;
                }
            }
            out.flush()
        };
        write().map_err(|e| Error::io(path, e))
    }

    pub fn write_sidecar(&self, path: impl AsRef<FsPath>) -> Result<()> {
        crate::write_json(path.as_ref(), &self.meta())
    }

    /// Reads an ensemble written by [`Ensemble::write_csv`] and its sidecar.
    pub fn read(
        csv_path: impl AsRef<FsPath>,
        sidecar_path: impl AsRef<FsPath>,
    ) -> Result<Ensemble> {
        let csv_path = csv_path.as_ref();
        let sidecar_path = sidecar_path.as_ref();
        let text = std::fs::read_to_string(sidecar_path).map_err(|e| Error::io(sidecar_path, e))?;
        let meta: EnsembleMeta =
            serde_json::from_str(&text).map_err(|e| Error::format(sidecar_path, e))?;

        let mut reader = csv::Reader::from_path(csv_path).map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(csv_path, io),
            other => Error::format(csv_path, format!("{other:?}")),
        })?;
        let headers = reader
            .headers()
            .map_err(|e| Error::format(csv_path, e))?
            .clone();
        if headers.iter().collect::<Vec<_>>() != ["path_id", "t", "x"] {
            return Err(Error::format(csv_path, "expected header `path_id,t,x`"));
        }
        let mut grids: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::format(csv_path, e))?;
            let bad = |what: &str| Error::format(csv_path, format!("row {}: bad {what}", line + 2));
            let id: usize = record[0].trim().parse().map_err(|_| bad("path_id"))?;
            let t: f64 = record[1].trim().parse().map_err(|_| bad("t"))?;
            let x: f64 = record[2].trim().parse().map_err(|_| bad("x"))?;
            if id == grids.len() {
                grids.push((Vec::new(), Vec::new()));
            } else if id + 1 != grids.len() {
                return Err(bad("path_id ordering"));
            }
            let g = grids.last_mut().expect("pushed above");
            g.0.push(t);
            g.1.push(x);
        }
        if grids.len() != meta.n_paths {
            return Err(Error::format(
                csv_path,
                format!(
                    "sidecar declares N = {} but CSV has {} paths",
                    meta.n_paths,
                    grids.len()
                ),
            ));
        }
        let times: Arc<[f64]> = match grids.first() {
            Some(g) => g.0.clone().into(),
            None => return Err(Error::format(csv_path, "no data rows")),
        };
        let paths = grids
            .into_iter()
            .enumerate()
            .map(|(i, (t, x))| {
                if t[..] != times[..] {
                    return Err(Error::format(
                        csv_path,
                        format!("path {i} has a different grid"),
                    ));
                }
                Path::new(times.clone(), x, split_seed(meta.master_seed, i as u64))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut ens = Ensemble::from_paths(paths, meta.model, meta.master_seed)?;
        if ens.n_steps != meta.n {
            return Err(Error::format(csv_path, "step count disagrees with sidecar"));
        }
        ens.x0 = meta.x0;
        ens.t0 = meta.t0;
        ens.t_end = meta.t_end;
        Ok(ens)
    }
}
