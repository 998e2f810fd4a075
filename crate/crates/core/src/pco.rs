//! Bandwidth selection by penalized comparison to overfitting (PCO).
//!
//! For a finite bandwidth grid `H` with smallest element `h0`,
//!
//! ```text
//! crit(h) = ||b_h - b_h0||_delta^2 + pen(h)
//! pen(h)  = 2 / ((T - t0)^2 N^2) * sum_i < S_h^i, S_h0^i >_delta
//! S_h^i(x) = sum_j K_h(F(x) - F(X^i_{t_j})) dX^i_j
//! ```
//!
//! and the selected bandwidth minimizes `crit` over `H`. Exact ties go to
//! the largest bandwidth.

use log::debug;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_bandwidth, Error, Result};
use crate::estimator::{curve_from_samples, DriftCurve, WarpedIncrements};
use crate::kernels::Kernel;
use crate::quadrature::{self, CompensatedSum};
use crate::sde::{Ensemble, Path};
use crate::warp::{empirical_cdf, WarpFunction};

/// Default `kappa` in `Delta0 = kappa * min(F(-Delta), 1 - F(Delta))`.
pub const DEFAULT_KAPPA: f64 = 0.9;
/// Default number of trapezoid nodes on `[-Delta, Delta]`.
pub const DEFAULT_QUAD_POINTS: usize = 201;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandwidthGrid {
    values: Vec<f64>,
    kappa: f64,
}

impl BandwidthGrid {
    pub fn new(values: Vec<f64>, kappa: f64) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::config("bandwidths", "grid is empty"));
        }
        for &h in &values {
            check_bandwidth(h)
                .map_err(|_| Error::config("bandwidths", format!("{h} is not > 0")))?;
        }
        if values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config("bandwidths", "must be strictly increasing"));
        }
        if !(kappa > 0.0 && kappa < 1.0) {
            return Err(Error::config("kappa", "must lie in (0, 1)"));
        }
        Ok(BandwidthGrid { values, kappa })
    }

    /// `{step * k : k = 1..=count}`.
    pub fn arithmetic(step: f64, count: usize) -> Result<Self> {
        Self::new(
            (1..=count).map(|k| step * k as f64).collect(),
            DEFAULT_KAPPA,
        )
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn h0(&self) -> f64 {
        self.values[0]
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// `Delta0 = kappa * min(F(-Delta), 1 - F(Delta))`.
    pub fn delta0<W: WarpFunction + ?Sized>(&self, warp: &W, half_width: f64) -> f64 {
        self.kappa * warp.eval(-half_width).min(1.0 - warp.eval(half_width))
    }

    /// Human-readable violations of `H ⊂ [h0, Delta0]` and `Delta0^3 / (N h0^3) <= 1`.
    pub fn diagnostics<W: WarpFunction + ?Sized>(
        &self,
        warp: &W,
        half_width: f64,
        n_paths: usize,
    ) -> Vec<String> {
        let d0 = self.delta0(warp, half_width);
        let mut out = Vec::new();
        let hmax = *self.values.last().expect("non-empty");
        if hmax > d0 {
            out.push(format!(
                "bandwidth grid exceeds Delta0 = {d0:.4e} (max h = {hmax}, kappa = {})",
                self.kappa
            ));
        }
        let ratio = d0.powi(3) / (n_paths as f64 * self.h0().powi(3));
        if ratio > 1.0 {
            out.push(format!("Delta0^3 / (N h0^3) = {ratio:.4e} > 1"));
        }
        out
    }
}

/// Trapezoid discretization of `<u, v>_delta = int u v delta` on
/// `[-Delta, Delta] = supp(delta)`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedNorm {
    delta: Kernel,
    half_width: f64,
    scale: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl WeightedNorm {
    /// `delta(x) = D(x / Delta) / Delta` for a unit-radius kernel `D`.
    pub fn new(delta: Kernel, half_width: f64, points: usize) -> Result<Self> {
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(Error::config("delta_half_width", "must be > 0"));
        }
        if points < 2 {
            return Err(Error::config("quad_points", "must be >= 2"));
        }
        let reach = half_width * delta.support_radius();
        let nodes = quadrature::linspace(-reach, reach, points);
        let trap = quadrature::trapezoid_weights(-reach, reach, points);
        let weights = nodes
            .iter()
            .zip(&trap)
            .map(|(&x, &w)| w * delta.eval(x / half_width) / half_width)
            .collect();
        Ok(WeightedNorm {
            delta,
            half_width,
            scale: 1.0,
            nodes,
            weights,
        })
    }

    pub fn default_bump() -> Self {
        Self::new(Kernel::bump(), 1.0, DEFAULT_QUAD_POINTS).expect("valid defaults")
    }

    /// Same nodes with the weight `delta` multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        WeightedNorm {
            scale: self.scale * c,
            weights: self.weights.iter().map(|w| w * c).collect(),
            ..self.clone()
        }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn delta(&self) -> &Kernel {
        &self.delta
    }

    pub fn inner_values(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut acc = CompensatedSum::default();
        for ((w, x), y) in self.weights.iter().zip(a).zip(b) {
            acc.add(w * x * y);
        }
        acc.value()
    }

    pub fn norm_sq_values(&self, a: &[f64]) -> f64 {
        self.inner_values(a, a)
    }

    fn distance_sq_values(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut acc = CompensatedSum::default();
        for ((w, x), y) in self.weights.iter().zip(a).zip(b) {
            acc.add(w * (x - y) * (x - y));
        }
        acc.value()
    }
}

/// `<c1, c2>_delta`; both curves must be sampled on the norm's nodes.
pub fn weighted_inner(c1: &DriftCurve, c2: &DriftCurve, w: &WeightedNorm) -> Result<f64> {
    for (name, c) in [("first", c1), ("second", c2)] {
        if c.grid != w.nodes {
            return Err(Error::IncompatibleGrid(format!(
                "{name} curve has {} points on [{}, {}], expected the {} quadrature nodes",
                c.grid.len(),
                c.grid.first().copied().unwrap_or(f64::NAN),
                c.grid.last().copied().unwrap_or(f64::NAN),
                w.nodes.len()
            )));
        }
    }
    Ok(w.inner_values(&c1.values, &c2.values))
}

/// Per-path samples sorted by warped value, for windowed evaluation.
struct PathSamples(WarpedIncrements);

impl PathSamples {
    fn new<W: WarpFunction + ?Sized>(path: &Path, warp: &W, t0: f64) -> Result<Self> {
        let single = Ensemble::from_paths(vec![path.clone()], "", 0)?;
        Ok(PathSamples(WarpedIncrements::new(&single, warp, t0)?))
    }

    fn curve(&self, kernel: &Kernel, h: f64, targets: &[f64]) -> Vec<f64> {
        targets
            .iter()
            .map(|&z| self.0.kernel_sum(kernel, h, z))
            .collect()
    }
}

/// `x -> sum_j K_h(F(x) - F(X_{t_j})) dX_j` on `grid`, without any
/// normalization.
pub fn per_path_statistic_curve<W: WarpFunction + ?Sized>(
    path: &Path,
    warp: &W,
    kernel: &Kernel,
    h: f64,
    grid: &[f64],
    t0: f64,
) -> Result<DriftCurve> {
    check_bandwidth(h)?;
    let samples = PathSamples::new(path, warp, t0)?;
    let targets: Vec<f64> = grid.iter().map(|&x| warp.eval(x)).collect();
    Ok(DriftCurve {
        grid: grid.to_vec(),
        values: samples.curve(kernel, h, &targets),
        bandwidth: h,
        warp_kind: warp.kind(),
    })
}

fn penalty_factor(ens: &Ensemble, t0: f64) -> f64 {
    let n = ens.n_paths() as f64;
    let window = ens.t_end - t0;
    2.0 / (window * window * n * n)
}

/// `pen(h) = 2 / ((T - t0)^2 N^2) * sum_i <S_h^i, S_h0^i>_delta`.
pub fn penalty<W: WarpFunction + ?Sized>(
    ens: &Ensemble,
    warp: &W,
    kernel: &Kernel,
    h: f64,
    h0: f64,
    w: &WeightedNorm,
    t0: f64,
) -> Result<f64> {
    check_bandwidth(h)?;
    check_bandwidth(h0)?;
    ens.validate_window(t0)?;
    let targets: Vec<f64> = w.nodes.iter().map(|&x| warp.eval(x)).collect();
    let mut acc = CompensatedSum::default();
    for p in &ens.paths {
        let s = PathSamples::new(p, warp, t0)?;
        acc.add(w.inner_values(
            &s.curve(kernel, h, &targets),
            &s.curve(kernel, h0, &targets),
        ));
    }
    Ok(penalty_factor(ens, t0) * acc.value())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcoRecord {
    pub h: f64,
    pub comparison: f64,
    pub penalty: f64,
    pub criterion: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcoResult {
    pub criteria: Vec<PcoRecord>,
    pub selected_h: f64,
    pub h0: f64,
    pub tie: bool,
    pub delta0: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl PcoResult {
    pub fn write_json(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        crate::write_json(path.as_ref(), self)
    }
}

/// Index of the minimum, ties resolved towards the largest index
/// (largest bandwidth). Returns `(index, tie)`.
pub(crate) fn argmin_prefer_last(values: &[f64]) -> (usize, bool) {
    let best = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hits: Vec<usize> = (0..values.len()).filter(|&i| values[i] == best).collect();
    (*hits.last().expect("non-empty"), hits.len() > 1)
}

/// PCO selection with the empirical warp of `ens`.
pub fn pco_select(
    ens: &Ensemble,
    kernel: &Kernel,
    w: &WeightedNorm,
    grid: &BandwidthGrid,
    t0: f64,
) -> Result<PcoResult> {
    let warp = empirical_cdf(ens, t0)?;
    pco_select_with_warp(ens, &warp, kernel, w, grid, t0)
}

/// PCO selection with a supplied warp (e.g. the true `F` in simulations).
pub fn pco_select_with_warp<W: WarpFunction + ?Sized>(
    ens: &Ensemble,
    warp: &W,
    kernel: &Kernel,
    w: &WeightedNorm,
    grid: &BandwidthGrid,
    t0: f64,
) -> Result<PcoResult> {
    ens.validate_window(t0)?;
    let h0 = grid.h0();
    let warnings = grid.diagnostics(warp, w.half_width, ens.n_paths());
    for msg in &warnings {
        debug!("{msg}");
    }

    let pooled = WarpedIncrements::new(ens, warp, t0)?;
    let per_path = ens
        .paths
        .iter()
        .map(|p| PathSamples::new(p, warp, t0))
        .collect::<Result<Vec<_>>>()?;
    let targets: Vec<f64> = w.nodes.iter().map(|&x| warp.eval(x)).collect();
    let curves_h0: Vec<Vec<f64>> = per_path
        .iter()
        .map(|s| s.curve(kernel, h0, &targets))
        .collect();
    let pooled_h0 = curve_from_samples(&pooled, warp, kernel, h0, &w.nodes)?.values;
    let factor = penalty_factor(ens, t0);

    let criteria = grid
        .values()
        .par_iter()
        .map(|&h| {
            let estimate = curve_from_samples(&pooled, warp, kernel, h, &w.nodes)?.values;
            let comparison = w.distance_sq_values(&estimate, &pooled_h0);
            let mut acc = CompensatedSum::default();
            for (s, c0) in per_path.iter().zip(&curves_h0) {
                acc.add(w.inner_values(&s.curve(kernel, h, &targets), c0));
            }
            let penalty = factor * acc.value();
            let criterion = comparison + penalty;
            if !criterion.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "non-finite PCO criterion at h = {h}"
                )));
            }
            Ok(PcoRecord {
                h,
                comparison,
                penalty,
                criterion,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let (best, tie) = argmin_prefer_last(&criteria.iter().map(|r| r.criterion).collect::<Vec<_>>());
    Ok(PcoResult {
        selected_h: criteria[best].h,
        criteria,
        h0,
        tie,
        delta0: grid.delta0(warp, w.half_width),
        warnings,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub h_oracle: f64,
    /// `(h, mse)` for every grid bandwidth.
    pub mse: Vec<(f64, f64)>,
}

/// Bandwidth minimizing the grid MSE of the empirical-warp estimate
/// against the known drift.
pub fn oracle_select(
    ens: &Ensemble,
    kernel: &Kernel,
    grid: &BandwidthGrid,
    true_b: impl Fn(f64) -> f64 + Sync,
    eval_grid: &[f64],
    t0: f64,
) -> Result<OracleResult> {
    let warp = empirical_cdf(ens, t0)?;
    let pooled = WarpedIncrements::new(ens, &warp, t0)?;
    let mse = grid
        .values()
        .iter()
        .map(|&h| {
            Ok((
                h,
                curve_from_samples(&pooled, &warp, kernel, h, eval_grid)?.mse(&true_b),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let (best, _) = argmin_prefer_last(&mse.iter().map(|m| m.1).collect::<Vec<_>>());
    Ok(OracleResult {
        h_oracle: mse[best].0,
        mse,
    })
}
