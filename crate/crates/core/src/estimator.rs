//! The warped kernel drift estimator.
//!
//! For a warp `F`, bandwidth `h` and kernel `K`,
//!
//! ```text
//! beta(z) = 1 / (N (T - t0)) * sum_i sum_{t_j in [t0, T)} K_h(z - F(X^i_{t_j})) (X^i_{t_{j+1}} - X^i_{t_j})
//! b(x)    = beta(F(x))
//! ```
//!
//! Increments are taken at the left endpoint (Itô convention); the last
//! grid point only closes the final increment.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};

use crate::error::{check_bandwidth, Error, Result};
use crate::fmt_f64;
use crate::kernels::Kernel;
use crate::quadrature::{self, CompensatedSum};
use crate::sde::{Ensemble, Path};
use crate::warp::{empirical_cdf, WarpFunction, WarpKind};

/// `points` uniform abscissae on `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalGrid {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl EvalGrid {
    pub fn new(lo: f64, hi: f64, points: usize) -> Self {
        EvalGrid { lo, hi, points }
    }

    pub fn validate(&self, field: &str) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo < self.hi) {
            return Err(Error::config(
                field,
                format!("needs lo < hi (got [{}, {}])", self.lo, self.hi),
            ));
        }
        if self.points < 2 {
            return Err(Error::config(field, "needs at least 2 points"));
        }
        Ok(())
    }

    pub fn abscissae(&self) -> Vec<f64> {
        quadrature::linspace(self.lo, self.hi, self.points)
    }
}

/// Kernel, estimation window and evaluation grid of one estimate.
#[derive(Clone, Debug)]
pub struct EstimatorConfig {
    pub kernel: Kernel,
    pub t0: f64,
    pub t_end: f64,
    pub grid: EvalGrid,
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        // Negated so a NaN fails too.
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(self.t0 < self.t_end) {
            return Err(Error::config("t0", "must be < T"));
        }
        self.grid.validate("grid")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DriftCurve {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub bandwidth: f64,
    pub warp_kind: WarpKind,
}

/// JSON sidecar of a drift curve CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveMeta {
    pub h: f64,
    #[serde(rename = "N")]
    pub n_paths: usize,
    pub n: usize,
    #[serde(rename = "T")]
    pub t_end: f64,
    pub t0: f64,
    pub kernel: String,
    pub warp: WarpKind,
    pub seed: u64,
}

impl DriftCurve {
    /// Mean squared error against `truth` over the curve's grid.
    pub fn mse(&self, truth: impl Fn(f64) -> f64) -> f64 {
        let s: f64 = self
            .grid
            .iter()
            .zip(&self.values)
            .map(|(&x, &v)| (v - truth(x)).powi(2))
            .sum();
        s / self.grid.len() as f64
    }

    pub fn write_csv(&self, path: impl AsRef<FsPath>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let mut write = || -> std::io::Result<()> {
            writeln!(out, "x,b_hat")?;
            for (x, b) in self.grid.iter().zip(&self.values) {
                writeln!(out, "{},{}", fmt_f64(*x), fmt_f64(*b))?;
            }
            out.flush()
        };
        write().map_err(|e| Error::io(path, e))
    }

    pub fn meta(&self, ens: &Ensemble, kernel: &Kernel, t0: f64) -> CurveMeta {
        CurveMeta {
            h: self.bandwidth,
            n_paths: ens.n_paths(),
            n: ens.n_steps,
            t_end: ens.t_end,
            t0,
            kernel: kernel.kind().to_string(),
            warp: self.warp_kind,
            seed: ens.master_seed,
        }
    }
}

/// Direct double loop over paths and left grid points.
pub fn beta_hat<W: WarpFunction + ?Sized>(
    ens: &Ensemble,
    warp: &W,
    kernel: &Kernel,
    h: f64,
    z: f64,
    t0: f64,
) -> Result<f64> {
    check_bandwidth(h)?;
    ens.validate_window(t0)?;
    let mut acc = CompensatedSum::default();
    for p in &ens.paths {
        for (x, dx) in p.left_points(t0) {
            acc.add(kernel.kh(h, z - warp.eval(x)) * dx);
        }
    }
    Ok(acc.value() / (ens.n_paths() as f64 * (ens.t_end - t0)))
}

/// Warped samples `F(X^i_{t_j})` with their increments, sorted by warped
/// value so that a compactly supported kernel only touches a window.
#[derive(Clone, Debug)]
pub struct WarpedIncrements {
    warped: Vec<f64>,
    increments: Vec<f64>,
    normalization: f64,
}

// Relative widening of the kernel window, so that every excluded sample has
// |argument| > radius and contributes exactly 0.
const WINDOW_SLACK: f64 = 1e-9;

impl WarpedIncrements {
    pub fn new<W: WarpFunction + ?Sized>(ens: &Ensemble, warp: &W, t0: f64) -> Result<Self> {
        Self::with_state_filter(ens, warp, t0, |_| true)
    }

    /// Keeps only samples whose *unwarped* value passes `keep`.
    fn with_state_filter<W: WarpFunction + ?Sized>(
        ens: &Ensemble,
        warp: &W,
        t0: f64,
        keep: impl Fn(f64) -> bool,
    ) -> Result<Self> {
        ens.validate_window(t0)?;
        let mut pairs: Vec<(f64, f64)> = ens
            .paths
            .iter()
            .flat_map(|p| p.left_points(t0))
            .filter(|&(x, _)| keep(x))
            .map(|(x, dx)| (warp.eval(x), dx))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (warped, increments) = pairs.into_iter().unzip();
        Ok(WarpedIncrements {
            warped,
            increments,
            normalization: ens.n_paths() as f64 * (ens.t_end - t0),
        })
    }

    /// Unnormalized `sum K_h(z - u) dX` over the kernel window around `z`.
    pub fn kernel_sum(&self, kernel: &Kernel, h: f64, z: f64) -> f64 {
        let reach = h * kernel.support_radius() * (1.0 + WINDOW_SLACK);
        let lo = self.warped.partition_point(|&u| u < z - reach);
        let hi = self.warped.partition_point(|&u| u <= z + reach);
        let mut acc = CompensatedSum::default();
        for (u, dx) in self.warped[lo..hi].iter().zip(&self.increments[lo..hi]) {
            acc.add(kernel.kh(h, z - u) * dx);
        }
        acc.value()
    }

    pub fn beta(&self, kernel: &Kernel, h: f64, z: f64) -> f64 {
        self.kernel_sum(kernel, h, z) / self.normalization
    }

    pub fn len(&self) -> usize {
        self.warped.len()
    }

    pub fn is_empty(&self) -> bool {
        self.warped.is_empty()
    }
}

/// `b~(x) = beta(F_N; F_N(x))` with the empirical warp of `ens`.
pub fn drift_estimate(
    ens: &Ensemble,
    kernel: &Kernel,
    h: f64,
    grid: &[f64],
    t0: f64,
) -> Result<DriftCurve> {
    check_bandwidth(h)?;
    let warp = empirical_cdf(ens, t0)?;
    let samples = WarpedIncrements::new(ens, &warp, t0)?;
    curve_from_samples(&samples, &warp, kernel, h, grid)
}

pub(crate) fn curve_from_samples<W: WarpFunction + ?Sized>(
    samples: &WarpedIncrements,
    warp: &W,
    kernel: &Kernel,
    h: f64,
    grid: &[f64],
) -> Result<DriftCurve> {
    check_grid(grid)?;
    let values = grid
        .iter()
        .map(|&x| samples.beta(kernel, h, warp.eval(x)))
        .collect();
    Ok(DriftCurve {
        grid: grid.to_vec(),
        values,
        bandwidth: h,
        warp_kind: warp.kind(),
    })
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty()
        || grid.windows(2).any(|w| w[1] <= w[0])
        || grid.iter().any(|x| !x.is_finite())
    {
        return Err(Error::InvalidInput(
            "evaluation grid must be finite and strictly increasing".into(),
        ));
    }
    Ok(())
}

/// `b^(x) = beta(F; F(x))` for a supplied warp.
///
/// When the warp is invertible, samples whose warped value cannot reach any
/// kernel window are discarded before warping, which avoids evaluating an
/// expensive `F` on the whole ensemble. The result is unchanged.
pub fn drift_estimate_known_warp<W: WarpFunction + ?Sized>(
    ens: &Ensemble,
    warp: &W,
    kernel: &Kernel,
    h: f64,
    grid: &[f64],
    t0: f64,
) -> Result<DriftCurve> {
    check_bandwidth(h)?;
    check_grid(grid)?;
    let targets: Vec<f64> = grid.iter().map(|&x| warp.eval(x)).collect();
    let reach = h * kernel.support_radius() * (1.0 + 1e-6);
    let u_lo = targets[0] - reach;
    let u_hi = targets[targets.len() - 1] + reach;
    let x_lo = if u_lo > 0.0 {
        warp.inverse(u_lo).ok()
    } else {
        None
    };
    let x_hi = if u_hi < 1.0 {
        warp.inverse(u_hi).ok()
    } else {
        None
    };
    let samples = WarpedIncrements::with_state_filter(ens, warp, t0, |x| {
        x_lo.is_none_or(|lo| x >= lo) && x_hi.is_none_or(|hi| x <= hi)
    })?;
    let values = targets
        .iter()
        .map(|&z| samples.beta(kernel, h, z))
        .collect();
    Ok(DriftCurve {
        grid: grid.to_vec(),
        values,
        bandwidth: h,
        warp_kind: warp.kind(),
    })
}

/// Smoothed target `b_h(x) = int_0^1 K_h(y - F(x)) b(F^{-1}(y)) dy`.
pub fn bias_target<W: WarpFunction + ?Sized>(
    drift: impl Fn(f64) -> f64,
    warp: &W,
    kernel: &Kernel,
    h: f64,
    grid: &[f64],
) -> Result<DriftCurve> {
    check_bandwidth(h)?;
    check_grid(grid)?;
    warp.inverse(0.5)?;
    let r = kernel.support_radius();
    let values = grid
        .iter()
        .map(|&x| {
            let fx = warp.eval(x);
            let lo = (fx - h * r).max(0.0);
            let hi = (fx + h * r).min(1.0);
            if lo >= hi {
                return Ok(0.0);
            }
            let mut breaks = vec![lo];
            if fx > lo && fx < hi {
                breaks.push(fx);
            }
            breaks.push(hi);
            let integrand = |y: f64| match warp.inverse(y) {
                Ok(z) => kernel.kh(h, y - fx) * drift(z),
                Err(_) => f64::NAN,
            };
            quadrature::integrate_with_breaks(integrand, &breaks, 1e-10, 1e-8).map(|q| q.value)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DriftCurve {
        grid: grid.to_vec(),
        values,
        bandwidth: h,
        warp_kind: warp.kind(),
    })
}

/// Unnormalized stochastic integral `sum_j K_h(F(x) - F(X_{t_j})) dX_j`
/// of one path.
pub fn path_kernel_integral<W: WarpFunction + ?Sized>(
    path: &Path,
    warp: &W,
    kernel: &Kernel,
    h: f64,
    x: f64,
    t0: f64,
) -> Result<f64> {
    check_bandwidth(h)?;
    let fx = warp.eval(x);
    let mut acc = CompensatedSum::default();
    for (xj, dx) in path.left_points(t0) {
        acc.add(kernel.kh(h, fx - warp.eval(xj)) * dx);
    }
    Ok(acc.value())
}

/// Itô-formula form of the path statistic:
///
/// ```text
/// Phi_h(X, x) = 1/(T - t0) [ int_{X_t0}^{X_T} K_h(F(z) - F(x)) dz
///               - 1/(2h^2) int_t0^T K'((F(X_t) - F(x))/h) sigma(X_t)^2 f(X_t) dt ]
/// ```
///
/// The space integral is adaptive, the time integral a left-point sum on
/// the path grid.
pub fn phi_representation<W: WarpFunction + ?Sized>(
    path: &Path,
    x: f64,
    h: f64,
    kernel: &Kernel,
    warp: &W,
    sigma: impl Fn(f64) -> f64,
    t0: f64,
) -> Result<f64> {
    check_bandwidth(h)?;
    let density = |z: f64| warp.density(z).ok_or(Error::UnsupportedWarp);
    density(x)?;
    let fx = warp.eval(x);
    let start = path.first_index(t0);
    let t_end = path.t_end();
    if start >= path.n_steps() {
        return Err(Error::config("t0", "must be < T"));
    }

    let a = path.values[start];
    let b = *path.values.last().expect("non-empty path");
    let (lo, hi, sign) = if a <= b { (a, b, 1.0) } else { (b, a, -1.0) };
    let reach = h * kernel.support_radius();
    let z_lo = if fx - reach > 0.0 {
        warp.inverse(fx - reach)?
    } else {
        f64::NEG_INFINITY
    };
    let z_hi = if fx + reach < 1.0 {
        warp.inverse(fx + reach)?
    } else {
        f64::INFINITY
    };
    let (lo, hi) = (lo.max(z_lo), hi.min(z_hi));
    let space = if lo < hi {
        sign * quadrature::integrate(|z| kernel.kh(h, warp.eval(z) - fx), lo, hi, 1e-12, 1e-9)?
            .value
    } else {
        0.0
    };

    let mut time = CompensatedSum::default();
    for j in start..path.n_steps() {
        let xj = path.values[j];
        let dt = path.times[j + 1] - path.times[j];
        let k = kernel.deriv((warp.eval(xj) - fx) / h);
        if k != 0.0 {
            let s = sigma(xj);
            time.add(dt * k * s * s * density(xj)?);
        }
    }
    Ok((space - time.value() / (2.0 * h * h)) / (t_end - path.times[start]))
}
