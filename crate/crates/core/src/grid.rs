//! Cell-centered grids on the unit interval and the numeric primitives shared
//! by every balancer: the Gaussian kernel, midpoint quadrature and Hilbert's
//! projective metric on the positive cone.
//!
//! A grid with `m` cells represents a function by its values at the centers
//! `(2i - 1) / (2m)`, `i = 1..m`. Integrals over `[0, 1]` use the midpoint rule,
//! so cellwise-constant functions integrate exactly. All reductions run in
//! index order, which keeps results bit-reproducible.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default resolution for continuous-function residuals and error norms.
pub const DEFAULT_GRID_M: usize = 512;

/// `1 / sqrt(2 pi)`.
pub const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
#[inline]
pub fn gaussian_kernel(u: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * u * u).exp()
}

/// Equispaced cell-center grid on `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct Grid1D {
    m: usize,
}

impl Grid1D {
    pub fn new(m: usize) -> Result<Self> {
        if m < 2 {
            return Err(Error::invalid(format!("grid needs at least 2 cells, got {m}")));
        }
        Ok(Self { m })
    }

    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn width(&self) -> f64 {
        1.0 / self.m as f64
    }

    /// Center of cell `i` (zero-based).
    #[inline]
    pub fn center(&self, i: usize) -> f64 {
        (2 * i + 1) as f64 / (2 * self.m) as f64
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.m).map(|i| self.center(i)).collect()
    }

    /// Index of the cell `[i/m, (i+1)/m)` containing `x`; `x = 1` maps to the last cell.
    #[inline]
    pub fn cell_of(&self, x: f64) -> usize {
        let i = (x * self.m as f64).floor();
        if i <= 0.0 {
            0
        } else {
            (i as usize).min(self.m - 1)
        }
    }

    /// Linear interpolation stencil between neighbouring centers: the value at
    /// `x` is `(1 - t) v[i] + t v[i + 1]`. Constant in the boundary half-cells.
    #[inline]
    pub fn locate(&self, x: f64) -> (usize, f64) {
        let pos = x * self.m as f64 - 0.5;
        if pos <= 0.0 {
            return (0, 0.0);
        }
        let last = (self.m - 2) as f64;
        if pos >= last + 1.0 {
            return (self.m - 2, 1.0);
        }
        let i = pos.floor().min(last);
        (i as usize, pos - i)
    }
}

impl TryFrom<usize> for Grid1D {
    type Error = Error;

    fn try_from(m: usize) -> Result<Self> {
        Grid1D::new(m)
    }
}

impl From<Grid1D> for usize {
    fn from(g: Grid1D) -> usize {
        g.m
    }
}

/// Values of a function at the cell centers of a [`Grid1D`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction1D {
    grid: Grid1D,
    values: Vec<f64>,
}

impl GridFunction1D {
    pub fn new(grid: Grid1D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch { expected: grid.len(), found: values.len() });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("grid value {i} is not finite")));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: Grid1D, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(grid, grid.centers().into_iter().map(f).collect())
    }

    pub fn constant(grid: Grid1D, value: f64) -> Result<Self> {
        Self::new(grid, vec![value; grid.len()])
    }

    pub fn grid(&self) -> Grid1D {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Piecewise-linear interpolant through the centers, clamped at the ends.
    pub fn interpolate(&self, x: f64) -> f64 {
        let (i, t) = self.grid.locate(x);
        (1.0 - t) * self.values[i] + t * self.values[i + 1]
    }

    /// Value of the cell containing `x` (histogram reading).
    pub fn cell_value(&self, x: f64) -> f64 {
        self.values[self.grid.cell_of(x)]
    }

    /// Reads this function as cellwise constant and samples it at the centers
    /// of `target`.
    pub fn resample_cellwise(&self, target: Grid1D) -> GridFunction1D {
        let values = (0..target.len()).map(|i| self.cell_value(target.center(i))).collect();
        GridFunction1D { grid: target, values }
    }

    /// Rescales to unit integral over `[0, 1]`.
    pub fn unit_mean(&self) -> Result<Self> {
        let mean = quadrature_1d(self);
        if !(mean > 0.0) || !mean.is_finite() {
            return Err(Error::invalid(format!("cannot normalize a function with mean {mean}")));
        }
        Ok(Self { grid: self.grid, values: self.values.iter().map(|v| v / mean).collect() })
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Sup-norm distance to another function on the same grid.
    pub fn sup_distance(&self, other: &GridFunction1D) -> Result<f64> {
        if self.grid != other.grid {
            return Err(Error::DimensionMismatch { expected: self.grid.len(), found: other.grid.len() });
        }
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
    }
}

/// Values of a function on the `m x m` grid of cell-center pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction2D {
    grid: Grid1D,
    values: Array2<f64>,
    symmetric: bool,
}

impl GridFunction2D {
    /// Wraps `values`; with `symmetric` set, exact symmetry is verified.
    pub fn new(grid: Grid1D, values: Array2<f64>, symmetric: bool) -> Result<Self> {
        let m = grid.len();
        if values.dim() != (m, m) {
            let (r, c) = values.dim();
            return Err(Error::DimensionMismatch { expected: m, found: if r != m { r } else { c } });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("grid function has non-finite values"));
        }
        if symmetric {
            for i in 0..m {
                for j in (i + 1)..m {
                    if values[[i, j]] != values[[j, i]] {
                        return Err(Error::NotSymmetric { row: i, col: j });
                    }
                }
            }
        }
        Ok(Self { grid, values, symmetric })
    }

    pub fn from_fn(grid: Grid1D, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let c = grid.centers();
        let values = Array2::from_shape_fn((grid.len(), grid.len()), |(i, j)| f(c[i], c[j]));
        Self::new(grid, values, false)
    }

    pub fn grid(&self) -> Grid1D {
        self.grid
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    /// `x -> integral of f(x, y) dy` by the midpoint rule.
    pub fn row_marginal(&self) -> GridFunction1D {
        let w = self.grid.width();
        let values = self.values.rows().into_iter().map(|row| row.iter().sum::<f64>() * w).collect();
        GridFunction1D { grid: self.grid, values }
    }

    pub fn total_mass(&self) -> f64 {
        let w = self.grid.width();
        self.values.rows().into_iter().map(|row| row.iter().sum::<f64>()).sum::<f64>() * w * w
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Vector with strictly positive finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct PositiveVector(Vec<f64>);

impl PositiveVector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if let Some(i) = entries.iter().position(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::invalid(format!("entry {i} = {} is not strictly positive", entries[i])));
        }
        Ok(Self(entries))
    }

    pub fn ones(n: usize) -> Self {
        Self(vec![1.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl std::ops::Index<usize> for PositiveVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Hilbert's projective metric `log(max(x/y) / min(x/y))` (natural log).
pub fn hilbert_distance(x: &PositiveVector, y: &PositiveVector) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), found: y.len() });
    }
    if x.is_empty() {
        return Ok(0.0);
    }
    let (mut hi, mut lo) = (f64::NEG_INFINITY, f64::INFINITY);
    for (a, b) in x.as_slice().iter().zip(y.as_slice()) {
        let d = a.ln() - b.ln();
        hi = hi.max(d);
        lo = lo.min(d);
    }
    Ok(hi - lo)
}

/// Midpoint-rule integral over `[0, 1]`: `(1/m) * sum(values)`.
pub fn quadrature_1d(f: &GridFunction1D) -> f64 {
    f.values.iter().sum::<f64>() / f.grid.len() as f64
}
