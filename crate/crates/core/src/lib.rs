//! Nonparametric drift estimation for diffusions observed through many
//! independent paths.
//!
//! The estimator smooths the Itô increments `dX` of the pooled paths with a
//! kernel in *warped* coordinates `u = F(x)`, where `F` is the
//! occupation-time CDF of the sample. The bandwidth is chosen by penalized
//! comparison to the smallest-bandwidth (overfitting) estimate.
//!
//! Module map:
//! - [`kernels`]: the bump kernel and rescalings
//! - [`sde`]: models, Euler–Maruyama, ensembles
//! - [`warp`]: empirical and analytic warps
//! - [`estimator`]: the warped kernel statistic and its population targets
//! - [`pco`]: weighted norms, penalty, bandwidth selection
//! - [`experiments`]: Monte Carlo replication harness
//! - [`cli`]: command-line front end

pub mod cli;
pub mod error;
pub mod estimator;
pub mod experiments;
pub mod kernels;
pub mod pco;
pub mod quadrature;
pub mod sde;
pub mod warp;

pub use error::{Error, Result};
pub use estimator::{DriftCurve, EvalGrid};
pub use kernels::{Kernel, KernelKind};
pub use sde::{DiffusionModel, Ensemble, ModelId, Path};
pub use warp::{WarpFunction, WarpKind};

use std::path::Path as FsPath;

/// Formats a float with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub(crate) fn write_json<T: serde::Serialize>(path: &FsPath, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
