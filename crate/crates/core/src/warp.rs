//! Warping maps `x -> F(x)` into `[0, 1]`.
//!
//! [`EmpiricalWarp`] is the occupation-time CDF of an ensemble, discretized
//! with a left-point Riemann sum. [`AnalyticOuWarp`] is the exact
//! time-averaged marginal CDF of the Langevin diffusion
//! `dX = -X dt + sigma dW`, used as a reference in tests.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmt_f64;
use crate::quadrature::composite_gauss_legendre;
use crate::sde::Ensemble;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarpKind {
    Empirical,
    Analytic,
}

/// Nondecreasing map into `[0, 1]`.
pub trait WarpFunction: Send + Sync {
    fn eval(&self, x: f64) -> f64;

    fn kind(&self) -> WarpKind;

    fn support_hint(&self) -> (f64, f64);

    /// `F^{-1}(u)` for `u` in `(0, 1)`, when the warp is invertible.
    fn inverse(&self, _u: f64) -> Result<f64> {
        Err(Error::UnsupportedWarp)
    }

    /// Density `f = F'`, when available.
    fn density(&self, _x: f64) -> Option<f64> {
        None
    }
}

/// Empirical occupation-time CDF
/// `F_N(x) = sum_i sum_j dt 1{X^i_{t_j} <= x} / (N (T - t0))`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalWarp {
    sorted: Vec<f64>,
    mass_per_sample: f64,
    // n_eff * dt == T - t0, so the value is k / sorted.len() exactly.
    spans_window: bool,
}

pub fn empirical_cdf(ens: &Ensemble, t0: f64) -> Result<EmpiricalWarp> {
    ens.validate_window(t0)?;
    let mut sorted: Vec<f64> = ens
        .paths
        .iter()
        .flat_map(|p| p.left_points(t0).map(|(x, _)| x))
        .collect();
    if sorted.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("non-finite sample in ensemble".into()));
    }
    sorted.sort_unstable_by(f64::total_cmp);

    let n_eff = sorted.len() / ens.n_paths();
    let dt = ens.dt();
    let window = ens.t_end - t0;
    let spans_window = ((n_eff as f64) * dt - window).abs() <= 1e-12 * window;
    Ok(EmpiricalWarp {
        mass_per_sample: dt / (ens.n_paths() as f64 * window),
        sorted,
        spans_window,
    })
}

impl EmpiricalWarp {
    /// Number of pooled samples `<= x`.
    #[inline]
    pub fn count_le(&self, x: f64) -> usize {
        self.sorted.partition_point(|&s| s <= x)
    }

    pub fn samples(&self) -> &[f64] {
        &self.sorted
    }

    /// Occupation mass of `k` samples.
    #[inline]
    pub fn mass_of(&self, k: usize) -> f64 {
        if self.spans_window {
            k as f64 / self.sorted.len() as f64
        } else {
            k as f64 * self.mass_per_sample
        }
    }
}

impl WarpFunction for EmpiricalWarp {
    #[inline]
    fn eval(&self, x: f64) -> f64 {
        self.mass_of(self.count_le(x))
    }

    fn kind(&self) -> WarpKind {
        WarpKind::Empirical
    }

    fn support_hint(&self) -> (f64, f64) {
        (self.sorted[0], *self.sorted.last().expect("non-empty"))
    }
}

/// Time-averaged marginal law of `dX = -X dt + sigma dW`, `X_0 = x0`,
/// over `[t0, T]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyticOuLaw {
    pub x0: f64,
    pub t_end: f64,
    pub t0: f64,
    pub sigma: f64,
    pub time_nodes: usize,
}

/// Lower cut-off of the time integral when `t0 = 0`.
pub const TIME_GUARD: f64 = 1e-6;
const NODES_PER_PANEL: usize = 10;

impl AnalyticOuLaw {
    pub fn new(x0: f64, t_end: f64, t0: f64, sigma: f64) -> Self {
        AnalyticOuLaw {
            x0,
            t_end,
            t0,
            sigma,
            time_nodes: 200,
        }
    }

    pub fn with_time_nodes(mut self, m: usize) -> Self {
        self.time_nodes = m;
        self
    }

    /// Mean and standard deviation of `X_t`.
    pub fn moments(&self, t: f64) -> (f64, f64) {
        let mean = self.x0 * (-t).exp();
        let var = self.sigma * self.sigma * (-(-2.0 * t).exp_m1()) / 2.0;
        (mean, var.sqrt())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Component {
    mean: f64,
    inv_sd: f64,
    weight: f64,
}

/// Exact warp of the Langevin model, as a mixture of Gaussians over time
/// quadrature nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct AnalyticOuWarp {
    law: AnalyticOuLaw,
    components: Vec<Component>,
    support: (f64, f64),
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * std::f64::consts::FRAC_1_SQRT_2)
}

const TAIL_CUT: f64 = 9.0;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_677_939_946_059_934_381_87;

#[inline]
fn std_normal_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Panel edges on `[a, b]`, equally spaced in `int g dt` with
/// `g = |m'| / s + s' / s + 1`, where `m`, `s` are the mean and standard
/// deviation of `X_t`. Each component then moves by a bounded number of its
/// own standard deviations within a panel.
fn time_panels(law: &AnalyticOuLaw, a: f64, b: f64, panels: usize) -> Vec<f64> {
    const TABLE: usize = 4001;
    let rate = |t: f64| {
        let (mean, sd) = law.moments(t);
        let e2 = (-2.0 * t).exp();
        mean.abs() / sd + e2 / (-(-2.0 * t).exp_m1()) + 1.0
    };
    // t = a + (b - a) v^2 tames the 1/sqrt(t) behaviour near 0.
    let span = b - a;
    let ts: Vec<f64> = (0..TABLE)
        .map(|k| {
            let v = k as f64 / (TABLE - 1) as f64;
            a + span * v * v
        })
        .collect();
    let dens: Vec<f64> = (0..TABLE)
        .map(|k| {
            let v = k as f64 / (TABLE - 1) as f64;
            rate(ts[k]) * 2.0 * span * v
        })
        .collect();
    let dv = 1.0 / (TABLE - 1) as f64;
    let mut cum = vec![0.0; TABLE];
    for k in 1..TABLE {
        cum[k] = cum[k - 1] + 0.5 * dv * (dens[k] + dens[k - 1]);
    }
    let total = cum[TABLE - 1];
    let mut edges = Vec::with_capacity(panels + 1);
    edges.push(a);
    let mut k = 1;
    for p in 1..panels {
        let level = total * p as f64 / panels as f64;
        while cum[k] < level {
            k += 1;
        }
        let frac = (level - cum[k - 1]) / (cum[k] - cum[k - 1]);
        edges.push(ts[k - 1] + frac * (ts[k] - ts[k - 1]));
    }
    edges.push(b);
    edges
}

pub fn analytic_ou_warp(law: &AnalyticOuLaw) -> Result<AnalyticOuWarp> {
    if !(law.t0.is_finite() && law.t_end.is_finite() && law.t0 < law.t_end && law.t0 >= 0.0) {
        return Err(Error::config("t0", "must satisfy 0 <= t0 < T"));
    }
    if !(law.sigma.is_finite() && law.sigma > 0.0) {
        return Err(Error::config("sigma", "must be > 0"));
    }
    if law.time_nodes < NODES_PER_PANEL {
        return Err(Error::config(
            "time_nodes",
            format!("must be >= {NODES_PER_PANEL}"),
        ));
    }
    let start = law.t0.max(TIME_GUARD);
    let edges = time_panels(law, start, law.t_end, law.time_nodes / NODES_PER_PANEL);
    let (nodes, weights) = composite_gauss_legendre(&edges, NODES_PER_PANEL);
    let total: f64 = weights.iter().sum();
    let components: Vec<Component> = nodes
        .iter()
        .zip(&weights)
        .map(|(&t, &w)| {
            let (mean, sd) = law.moments(t);
            Component {
                mean,
                inv_sd: 1.0 / sd,
                weight: w / total,
            }
        })
        .collect();
    let lo = components
        .iter()
        .map(|c| c.mean - 10.0 / c.inv_sd)
        .fold(f64::INFINITY, f64::min);
    let hi = components
        .iter()
        .map(|c| c.mean + 10.0 / c.inv_sd)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(AnalyticOuWarp {
        law: law.clone(),
        components,
        support: (lo, hi),
    })
}

impl AnalyticOuWarp {
    pub fn law(&self) -> &AnalyticOuLaw {
        &self.law
    }

    /// Components more than `TAIL_CUT` standard deviations away contribute
    /// 0 or their full weight (the neglected mass is below `1e-18`).
    pub fn cdf(&self, x: f64) -> f64 {
        self.components
            .iter()
            .map(|c| {
                let z = (x - c.mean) * c.inv_sd;
                if z <= -TAIL_CUT {
                    0.0
                } else if z >= TAIL_CUT {
                    c.weight
                } else {
                    c.weight * std_normal_cdf(z)
                }
            })
            .sum()
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.components
            .iter()
            .map(|c| c.weight * c.inv_sd * std_normal_pdf((x - c.mean) * c.inv_sd))
            .sum()
    }

    /// `f'(x)`.
    pub fn pdf_deriv(&self, x: f64) -> f64 {
        self.components
            .iter()
            .map(|c| {
                let z = (x - c.mean) * c.inv_sd;
                -c.weight * c.inv_sd * c.inv_sd * z * std_normal_pdf(z)
            })
            .sum()
    }

    /// Bracketed Newton iteration with bisection fallback; stops when the
    /// bracket is narrower than `1e-12`.
    pub fn quantile(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::Domain(u));
        }
        let (mut lo, mut hi) = self.support;
        let mut width = hi - lo;
        while self.cdf(lo) > u {
            lo -= width;
            width *= 2.0;
        }
        width = hi - lo;
        while self.cdf(hi) < u {
            hi += width;
            width *= 2.0;
        }
        let mut x = 0.5 * (lo + hi);
        for _ in 0..200 {
            let g = self.cdf(x) - u;
            if g == 0.0 {
                return Ok(x);
            }
            if g < 0.0 {
                lo = x;
            } else {
                hi = x;
            }
            if hi - lo <= 1e-12 {
                break;
            }
            let d = self.pdf(x);
            let step = g / d;
            if d > 0.0 && x - step > lo && x - step < hi {
                x -= step;
                if step.abs() < 1e-13 {
                    return Ok(x);
                }
            } else {
                x = 0.5 * (lo + hi);
            }
        }
        Ok(x)
    }
}

impl WarpFunction for AnalyticOuWarp {
    fn eval(&self, x: f64) -> f64 {
        self.cdf(x)
    }

    fn kind(&self) -> WarpKind {
        WarpKind::Analytic
    }

    fn support_hint(&self) -> (f64, f64) {
        self.support
    }

    fn inverse(&self, u: f64) -> Result<f64> {
        self.quantile(u)
    }

    fn density(&self, x: f64) -> Option<f64> {
        Some(self.pdf(x))
    }
}

/// Dumps `x,F` pairs on `grid` for plotting.
pub fn write_warp_csv(
    warp: &dyn WarpFunction,
    grid: &[f64],
    path: impl AsRef<FsPath>,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut write = || -> std::io::Result<()> {
        writeln!(out, "x,F")?;
        for &x in grid {
            writeln!(out, "{},{}", fmt_f64(x), fmt_f64(warp.eval(x)))?;
        }
        out.flush()
    };
    write().map_err(|e| Error::io(path, e))
}
