//! Compactly supported smoothing kernels and their rescalings
//! `K_h(x) = K(x / h) / h`.
//!
//! The default kernel is the normalized bump
//! `rho(x) = exp(-1 / (1 - x^2)) / c_rho` on `(-1, 1)`, which is `C^inf`
//! and vanishes with all its derivatives at `|x| = 1`.

use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{check_bandwidth, Result};
use crate::quadrature;

/// Regression value of `c_rho = int_{-1}^{1} exp(-1/(1-y^2)) dy`.
pub const BUMP_NORMALIZER: f64 = 0.443_993_816_168_079_37;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Bump,
    Epanechnikov,
}

impl KernelKind {
    pub fn kernel(self) -> Kernel {
        match self {
            KernelKind::Bump => Kernel::bump(),
            KernelKind::Epanechnikov => Kernel::epanechnikov(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Bump => "bump",
            KernelKind::Epanechnikov => "epanechnikov",
        }
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A symmetric kernel supported on `[-support_radius, support_radius]`
/// with unit integral.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    kind: KernelKind,
    support_radius: f64,
    inv_normalizer: f64,
    l1_norm: f64,
    l2_norm_sq: f64,
}

fn bump_unnormalized(x: f64) -> f64 {
    if x.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - x * x)).exp()
    }
}

/// `c_rho` computed once by adaptive quadrature.
pub fn bump_normalizer() -> f64 {
    static C_RHO: OnceLock<f64> = OnceLock::new();
    *C_RHO.get_or_init(|| {
        quadrature::integrate(bump_unnormalized, -1.0, 1.0, 1e-15, 1e-12)
            .expect("bump integral converges")
            .value
    })
}

fn bump_l2_norm_sq() -> f64 {
    static L2: OnceLock<f64> = OnceLock::new();
    *L2.get_or_init(|| {
        let c = bump_normalizer();
        quadrature::integrate(
            |x| (bump_unnormalized(x) / c).powi(2),
            -1.0,
            1.0,
            1e-15,
            1e-12,
        )
        .expect("bump L2 integral converges")
        .value
    })
}

impl Kernel {
    /// The bump kernel `rho`, supported on `[-1, 1]`.
    pub fn bump() -> Self {
        Kernel {
            kind: KernelKind::Bump,
            support_radius: 1.0,
            inv_normalizer: 1.0 / bump_normalizer(),
            l1_norm: 1.0,
            l2_norm_sq: bump_l2_norm_sq(),
        }
    }

    /// `3/4 (1 - x^2)` on `[-1, 1]`.
    pub fn epanechnikov() -> Self {
        Kernel {
            kind: KernelKind::Epanechnikov,
            support_radius: 1.0,
            inv_normalizer: 1.0,
            l1_norm: 1.0,
            l2_norm_sq: 0.6,
        }
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn support_radius(&self) -> f64 {
        self.support_radius
    }

    pub fn l1_norm(&self) -> f64 {
        self.l1_norm
    }

    pub fn l2_norm_sq(&self) -> f64 {
        self.l2_norm_sq
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match self.kind {
            KernelKind::Bump => bump_unnormalized(x) * self.inv_normalizer,
            KernelKind::Epanechnikov => {
                if x.abs() >= 1.0 {
                    0.0
                } else {
                    0.75 * (1.0 - x * x)
                }
            }
        }
    }

    #[inline]
    pub fn deriv(&self, x: f64) -> f64 {
        match self.kind {
            KernelKind::Bump => {
                if x.abs() >= 1.0 {
                    0.0
                } else {
                    let s = 1.0 - x * x;
                    self.eval(x) * (-2.0 * x / (s * s))
                }
            }
            KernelKind::Epanechnikov => {
                if x.abs() >= 1.0 {
                    0.0
                } else {
                    -1.5 * x
                }
            }
        }
    }

    /// `K_h(x) = K(x / h) / h`.
    pub fn scaled_eval(&self, h: f64, x: f64) -> Result<f64> {
        check_bandwidth(h)?;
        Ok(self.eval(x / h) / h)
    }

    /// Raw `K'(x / h)`; the `1 / h^2` prefactors are left to the caller.
    pub fn scaled_deriv(&self, h: f64, x: f64) -> Result<f64> {
        check_bandwidth(h)?;
        Ok(self.deriv(x / h))
    }

    /// Unchecked `K_h(x)` for hot loops; `h` must already be validated.
    #[inline]
    pub(crate) fn kh(&self, h: f64, x: f64) -> f64 {
        self.eval(x / h) / h
    }
}

impl Default for Kernel {
    fn default() -> Self {
        Kernel::bump()
    }
}
