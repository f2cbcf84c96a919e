//! Dense matrix balancing.
//!
//! * [`sk_balance`] / [`sk_scale`]: alternating row and column normalization
//!   of a strictly positive square matrix towards unit (or prescribed) marginals.
//! * [`ssk_balance`]: the symmetric variant that rescales rows and columns
//!   simultaneously, `P <- R^{-1/2} P R^{-1/2}`, so every iterate stays symmetric.
//! * [`balance_operator_step`]: the vector map `x -> sqrt(x / (C x))` whose fixed
//!   point is the symmetric balancing vector.
//!
//! All loops stop on the sup-norm deviation of the marginals from their targets.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::grid::{Grid1D, GridFunction1D, PositiveVector};
use crate::BalanceConfig;

/// Dense symmetric matrix with finite nonnegative entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricMatrix {
    values: Array2<f64>,
}

impl SymmetricMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        let (r, c) = values.dim();
        if r != c {
            return Err(Error::DimensionMismatch { expected: r, found: c });
        }
        if r == 0 {
            return Err(Error::invalid("matrix is empty"));
        }
        for ((i, j), &v) in values.indexed_iter() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(format!("entry ({i}, {j}) = {v} is not a finite nonnegative number")));
            }
            if j > i && values[[j, i]] != v {
                return Err(Error::NotSymmetric { row: i, col: j });
            }
        }
        Ok(Self { values })
    }

    pub fn zeros(n: usize) -> Self {
        Self { values: Array2::zeros((n, n)) }
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[[i, j]]
    }

    /// Adds `v` at `(i, j)` and, off the diagonal, at `(j, i)`.
    pub(crate) fn add_symmetric(&mut self, i: usize, j: usize, v: f64) {
        self.values[[i, j]] += v;
        if i != j {
            self.values[[j, i]] += v;
        }
    }

    pub(crate) fn from_upper_unchecked(values: Array2<f64>) -> Self {
        Self { values }
    }

    /// Sum over the upper triangle including the diagonal.
    pub fn upper_mass(&self) -> f64 {
        let n = self.n();
        (0..n).map(|i| (i..n).map(|j| self.values[[i, j]]).sum::<f64>()).sum()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        row_sums(self.values.view())
    }
}

/// Output of the dense balancers.
#[derive(Debug, Clone, PartialEq)]
pub struct BalanceResultMatrix {
    /// `diag(d1) * C * diag(d2)`.
    pub balanced: Array2<f64>,
    pub d1: Vec<f64>,
    /// Equal to `d1` for the symmetric algorithm.
    pub d2: Vec<f64>,
    pub iterations: usize,
    /// Sup-norm deviation of the marginals from their targets.
    pub residual: f64,
}

fn row_sums(a: ArrayView2<f64>) -> Vec<f64> {
    a.rows().into_iter().map(|row| row.iter().sum()).collect()
}

fn sup_deviation(values: &[f64], target: &[f64]) -> f64 {
    values.iter().zip(target).map(|(v, t)| (v - t).abs()).fold(0.0, f64::max)
}

fn require_square(c: ArrayView2<f64>) -> Result<usize> {
    let (r, k) = c.dim();
    if r != k {
        return Err(Error::DimensionMismatch { expected: r, found: k });
    }
    if r == 0 {
        return Err(Error::invalid("matrix is empty"));
    }
    Ok(r)
}

fn require_strictly_positive(c: ArrayView2<f64>) -> Result<()> {
    for ((row, col), &value) in c.indexed_iter() {
        if !(value > 0.0) || !value.is_finite() {
            return Err(Error::NotStrictlyPositive { row, col, value });
        }
    }
    Ok(())
}

fn require_targets(target: &[f64], n: usize) -> Result<()> {
    if target.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: target.len() });
    }
    if let Some(i) = target.iter().position(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::invalid(format!("target marginal {i} = {} is not positive", target[i])));
    }
    Ok(())
}

/// Alternating Sinkhorn-Knopp balancing to a doubly stochastic matrix.
pub fn sk_balance(c: &Array2<f64>, cfg: &BalanceConfig) -> Result<BalanceResultMatrix> {
    let n = require_square(c.view())?;
    let ones = vec![1.0; n];
    sk_scale_from(c, &ones, &ones, &ones, cfg)
}

/// [`sk_balance`] started from the column scaling `d2_start` instead of ones.
pub fn sk_balance_from(c: &Array2<f64>, d2_start: &[f64], cfg: &BalanceConfig) -> Result<BalanceResultMatrix> {
    let n = require_square(c.view())?;
    let ones = vec![1.0; n];
    sk_scale_from(c, &ones, &ones, d2_start, cfg)
}

/// Scales a strictly positive matrix so that `P e = r` and `P^T e = col`.
pub fn sk_scale(c: &Array2<f64>, r: &[f64], col: &[f64], cfg: &BalanceConfig) -> Result<BalanceResultMatrix> {
    let n = require_square(c.view())?;
    sk_scale_from(c, r, col, &vec![1.0; n], cfg)
}

fn sk_scale_from(
    c: &Array2<f64>,
    r: &[f64],
    col: &[f64],
    d2_start: &[f64],
    cfg: &BalanceConfig,
) -> Result<BalanceResultMatrix> {
    cfg.validate()?;
    let n = require_square(c.view())?;
    require_targets(r, n)?;
    require_targets(col, n)?;
    require_targets(d2_start, n)?;
    let (row_total, col_total) = (r.iter().sum::<f64>(), col.iter().sum::<f64>());
    if (row_total - col_total).abs() > 1e-9 * row_total.max(col_total) {
        return Err(Error::MarginalMismatch { row_total, col_total });
    }
    require_strictly_positive(c.view())?;

    let mut d1 = vec![1.0; n];
    let mut d2 = d2_start.to_vec();
    let mut iterations = 0;
    loop {
        let rows: Vec<f64> = (0..n).map(|i| d1[i] * (0..n).map(|j| c[[i, j]] * d2[j]).sum::<f64>()).collect();
        let cols: Vec<f64> = (0..n).map(|j| d2[j] * (0..n).map(|i| c[[i, j]] * d1[i]).sum::<f64>()).collect();
        let residual = sup_deviation(&rows, r).max(sup_deviation(&cols, col));
        if residual <= cfg.tol {
            let balanced = Array2::from_shape_fn((n, n), |(i, j)| d1[i] * c[[i, j]] * d2[j]);
            return Ok(BalanceResultMatrix { balanced, d1, d2, iterations, residual });
        }
        if iterations >= cfg.max_iter {
            return Err(Error::MaxIterationsExceeded { iterations, residual });
        }
        // row normalization, then column normalization
        for i in 0..n {
            d1[i] = r[i] / (0..n).map(|j| c[[i, j]] * d2[j]).sum::<f64>();
        }
        for j in 0..n {
            d2[j] = col[j] / (0..n).map(|i| c[[i, j]] * d1[i]).sum::<f64>();
        }
        iterations += 1;
    }
}

/// Symmetric Sinkhorn-Knopp: finds `d` with `diag(d) C diag(d) e = e`.
pub fn ssk_balance(c: &SymmetricMatrix, cfg: &BalanceConfig) -> Result<BalanceResultMatrix> {
    ssk_balance_observed(c, cfg, |_, _| {})
}

/// [`ssk_balance`] calling `observe(t, P_t)` on every iterate, starting with `P_0 = C`.
pub fn ssk_balance_observed(
    c: &SymmetricMatrix,
    cfg: &BalanceConfig,
    mut observe: impl FnMut(usize, &Array2<f64>),
) -> Result<BalanceResultMatrix> {
    cfg.validate()?;
    let n = c.n();
    let sums = c.row_sums();
    if let Some(row) = sums.iter().position(|&s| s == 0.0) {
        return Err(Error::ZeroRowSum { row });
    }
    require_strictly_positive(c.values().view())?;

    let mut p = c.values().clone();
    let mut d = vec![1.0; n];
    let ones = vec![1.0; n];
    let mut iterations = 0;
    loop {
        observe(iterations, &p);
        let r = row_sums(p.view());
        let residual = sup_deviation(&r, &ones);
        if residual <= cfg.tol {
            return Ok(BalanceResultMatrix { balanced: p, d1: d.clone(), d2: d, iterations, residual });
        }
        if iterations >= cfg.max_iter {
            return Err(Error::MaxIterationsExceeded { iterations, residual });
        }
        let s: Vec<f64> = r.iter().map(|v| 1.0 / v.sqrt()).collect();
        for i in 0..n {
            for j in i..n {
                // s_i * s_j is commutative, so the mirrored entries stay bit-identical
                let v = p[[i, j]] * (s[i] * s[j]);
                p[[i, j]] = v;
                p[[j, i]] = v;
            }
            d[i] *= s[i];
        }
        iterations += 1;
    }
}

/// One application of `x -> sqrt(x / (C x))`.
pub fn balance_operator_step(c: &SymmetricMatrix, x: &PositiveVector) -> Result<PositiveVector> {
    let n = c.n();
    if x.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: x.len() });
    }
    let a = c.values();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let cx: f64 = (0..n).map(|j| a[[i, j]] * x[j]).sum();
        if cx == 0.0 {
            return Err(Error::ZeroRowSum { row: i });
        }
        out.push((x[i] / cx).sqrt());
    }
    PositiveVector::new(out)
}

/// Histogram bias estimate: cellwise `1 / d_i`, rescaled to unit mean.
pub fn histogram_bias(result: &BalanceResultMatrix, grid: Grid1D) -> Result<GridFunction1D> {
    if result.d1.len() != grid.len() {
        return Err(Error::DimensionMismatch { expected: grid.len(), found: result.d1.len() });
    }
    GridFunction1D::new(grid, result.d1.iter().map(|d| 1.0 / d).collect())?.unit_mean()
}
