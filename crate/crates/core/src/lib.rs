//! Sinkhorn-type balancing for symmetric nonnegative matrices and for
//! pre-binned two-dimensional contact samples.
//!
//! * [`matrix`]: dense row/column scaling (alternating and symmetric forms).
//! * [`kernel`]: kernel density balancing on sparse weighted samples and a
//!   grid-based continuous balancer.
//! * [`selection`]: two-fold cross-validation of bandwidths and bin counts.
//! * [`sim`]: the synthetic distorted-density experiment and error metrics.
//! * [`hic_io`] and [`tsv`]: coordinate-list ingestion, binning and file formats.

// `!(x > 0.0)` style guards are used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod grid;
pub mod hic_io;
pub mod kernel;
pub mod matrix;
pub mod rng;
pub mod selection;
pub mod sim;
pub mod tsv;

use serde::{Deserialize, Serialize};

pub use error::{Error, Result};
pub use grid::{
    gaussian_kernel, hilbert_distance, quadrature_1d, Grid1D, GridFunction1D, GridFunction2D, PositiveVector,
    DEFAULT_GRID_M,
};
pub use hic_io::{bin_sample, rebin, rescale_to_unit, ChromContext, PositionConvention, RawContactRecord};
pub use kernel::{
    apply_bias, cssk_grid_balance, kde_2d, kde_2d_at, ksk_balance, marginal_kde, ContactPoint, ContactSample,
    KernelBalanceResult, WeightedSample,
};
pub use matrix::{
    balance_operator_step, histogram_bias, sk_balance, sk_scale, ssk_balance, BalanceResultMatrix, SymmetricMatrix,
};
pub use selection::{
    cvm_uniform_score, select_bandwidth, select_binsize, split_sample, CvSplit, Parameter, SelectionReport,
};

/// Stopping rule shared by every iterative balancer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BalanceConfig {
    /// Bound on the sup-norm deviation of the marginals from their targets.
    pub tol: f64,
    pub max_iter: usize,
}

impl BalanceConfig {
    pub const fn new(tol: f64, max_iter: usize) -> Self {
        Self { tol, max_iter }
    }

    /// Defaults for kernel balancing (`tol = 1e-6`, 500 iterations).
    pub const fn kernel() -> Self {
        Self { tol: 1e-6, max_iter: 500 }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || !self.tol.is_finite() {
            return Err(Error::InvalidValue(format!("tolerance must be positive, got {}", self.tol)));
        }
        Ok(())
    }
}

/// Matrix defaults: `tol = 1e-8`, 10 000 iterations.
impl Default for BalanceConfig {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 10_000 }
    }
}
