//! Kernel density balancing on weighted contact samples.
//!
//! A contact sample is a list of point pairs `(x, y)` in the unit square with
//! positive multiplicities. Each stored pair stands for both `(x, y)` and
//! `(y, x)`. All estimates use the Gaussian kernel reflected at 0 and 1,
//! `K_R(x, z) = sum_k K((x - 2k - z)/h) + K((x - 2k + z)/h)`, so every
//! estimate is a density on `[0, 1]` and the marginal of the symmetrized 2D
//! product-kernel estimate is the 1D estimate over the pooled coordinates:
//!
//! ```text
//! r(x) = 1 / (2 N h) * sum_k c_k w_k [K_R(x, X_k) + K_R(x, Y_k)],   N = sum_k c_k
//! ```
//!
//! [`ksk_balance`] balances `u(x) f(x, y) u(y)` for the 2D estimate `f` while
//! only ever evaluating 1D sums: the integral of `f(x, y) u(y)` over `y`
//! splits into one kernel sum over the sample with per-point masses
//! `c_k * (K_R * u)(Y_k)` (and symmetrically for `X_k`). It updates
//! `G <- G r` and `u = 1 / sqrt(G)` until `r` is flat. [`cssk_grid_balance`]
//! solves the same problem on a dense grid density and serves as a reference.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{gaussian_kernel, Grid1D, GridFunction1D, GridFunction2D, FRAC_1_SQRT_2PI};
use crate::BalanceConfig;

/// Kernel contributions below `K(KERNEL_CUTOFF) / K(0) ~ 2.6e-18` are skipped.
const KERNEL_CUTOFF: f64 = 9.0;

/// Steps between exact re-evaluations in the kernel recurrence.
const ANCHOR_EVERY: usize = 32;

/// One observed contact, stored with `x <= y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactPoint {
    pub x: f64,
    pub y: f64,
    pub count: f64,
}

impl ContactPoint {
    pub fn new(x: f64, y: f64, count: f64) -> Self {
        Self { x, y, count }
    }
}

/// Sparse list of weighted point pairs in `[0, 1]^2`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ContactSample {
    points: Vec<ContactPoint>,
    total_count: f64,
}

impl ContactSample {
    /// Validates coordinates and counts; swaps each pair so that `x <= y`.
    pub fn new(mut points: Vec<ContactPoint>) -> Result<Self> {
        for (i, p) in points.iter_mut().enumerate() {
            if !(0.0..=1.0).contains(&p.x) || !(0.0..=1.0).contains(&p.y) {
                return Err(Error::invalid(format!("point {i} = ({}, {}) lies outside the unit square", p.x, p.y)));
            }
            if !(p.count > 0.0) || !p.count.is_finite() {
                return Err(Error::invalid(format!("point {i} has non-positive count {}", p.count)));
            }
            if p.x > p.y {
                std::mem::swap(&mut p.x, &mut p.y);
            }
        }
        let total_count = points.iter().map(|p| p.count).sum();
        Ok(Self { points, total_count })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn points(&self) -> &[ContactPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Sum of counts.
    pub fn total_count(&self) -> f64 {
        self.total_count
    }

    /// Same points with every count multiplied by `factor`.
    pub fn with_scaled_counts(&self, factor: f64) -> Result<Self> {
        Self::new(self.points.iter().map(|p| ContactPoint { count: p.count * factor, ..*p }).collect())
    }

    fn coordinates(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| [p.x, p.y]).collect()
    }
}

/// A contact sample with one positive weight per point.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSample<'a> {
    base: &'a ContactSample,
    weights: Vec<f64>,
}

impl<'a> WeightedSample<'a> {
    pub fn new(base: &'a ContactSample, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != base.len() {
            return Err(Error::DimensionMismatch { expected: base.len(), found: weights.len() });
        }
        if let Some(i) = weights.iter().position(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::invalid(format!("weight {i} = {} is not positive", weights[i])));
        }
        Ok(Self { base, weights })
    }

    pub fn uniform(base: &'a ContactSample) -> Self {
        Self { base, weights: vec![1.0; base.len()] }
    }

    pub fn base(&self) -> &'a ContactSample {
        self.base
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `c_k * w_k` for each coordinate, two entries per point.
    fn coordinate_masses(&self) -> Vec<f64> {
        self.base.points.iter().zip(&self.weights).flat_map(|(p, w)| [p.count * w, p.count * w]).collect()
    }
}

/// A positive function read at sample coordinates.
pub trait BiasFunction {
    fn value_at(&self, x: f64) -> f64;
}

impl BiasFunction for GridFunction1D {
    fn value_at(&self, x: f64) -> f64 {
        self.interpolate(x)
    }
}

impl<F: Fn(f64) -> f64> BiasFunction for F {
    fn value_at(&self, x: f64) -> f64 {
        self(x)
    }
}

/// Reweights `sample` by `w_k = 1 / sqrt(b(X_k) b(Y_k))`.
///
/// To reweight a sample by a kernel balancing run, pass its `accumulator`:
/// the weights are then `u(X_k) u(Y_k)` with `u` the balancing function.
pub fn apply_bias<'a>(sample: &'a ContactSample, bias: &impl BiasFunction) -> Result<WeightedSample<'a>> {
    let mut weights = Vec::with_capacity(sample.len());
    for p in sample.points() {
        let (bx, by) = (bias.value_at(p.x), bias.value_at(p.y));
        if !(bx > 0.0) || !(by > 0.0) || !bx.is_finite() || !by.is_finite() {
            return Err(Error::invalid(format!("bias is not positive near ({}, {})", p.x, p.y)));
        }
        weights.push(1.0 / (bx * by).sqrt());
    }
    WeightedSample::new(sample, weights)
}

fn check_bandwidth(bandwidth: f64) -> Result<()> {
    if !(bandwidth > 0.0) || !bandwidth.is_finite() {
        return Err(Error::invalid(format!("bandwidth must be positive, got {bandwidth}")));
    }
    Ok(())
}

/// Sum of `K((x - z') / h)` over `z` and its mirror images `2k +- z`, the
/// reflected kernel at `x`.
pub(crate) fn reflected_kernel(x: f64, z: f64, bandwidth: f64) -> f64 {
    let kmax = (0.5 * (1.0 + KERNEL_CUTOFF * bandwidth)).ceil() as i64 + 1;
    let k = |img: f64| gaussian_kernel((x - img) / bandwidth);
    let mut sum = k(z);
    for j in -kmax..=kmax {
        let shift = 2.0 * j as f64;
        if j != 0 {
            sum += k(shift + z);
        }
        sum += k(shift - z);
    }
    sum
}

/// Reflected Gaussian sums `sum_z mass_z K_R(x_i, z)` over grid centers for a
/// fixed set of coordinates, and the transposed gathers.
///
/// Small coordinate sets are visited image by image over a window of grid
/// cells. Along the grid the kernel obeys `K(u + s) = K(u) exp(-u s - s^2/2)`,
/// which replaces all but one `exp` in every [`ANCHOR_EVERY`] steps by two
/// multiplications. Large sets go through an [`Expansion`] around cell centers.
struct KernelSum {
    grid: Grid1D,
    bandwidth: f64,
    inv_h: f64,
    coords: Vec<f64>,
    step: f64,
    ratio_decay: f64,
    reach: usize,
    expansion: Option<Expansion>,
}

/// Largest `|t s|` for which the Taylor expansion is used.
const EXPANSION_MAX_ARG: f64 = 2.5;

/// `K(t - s) = K(t) exp(-s^2/2) sum_p (t s)^p / p!` with `t` the scaled
/// distance from a grid center to a (mirrored) cell center and `s` the scaled
/// offset of a coordinate within its cell. Sums then factor into per-cell
/// moments and a fixed list of center-to-center kernel values.
struct Expansion {
    order: usize,
    /// Cell of each coordinate.
    cells: Vec<usize>,
    /// `s` of each coordinate.
    offsets: Vec<f64>,
    /// `exp(-s^2/2)` of each coordinate.
    damping: Vec<f64>,
    /// `(target cell i, source cell c, K(t), sigma * t)`, sigma = -1 for mirrored images.
    pairs: Vec<(u32, u32, f64, f64)>,
}

impl Expansion {
    fn new(coords: &[f64], bandwidth: f64, grid: Grid1D) -> Option<Self> {
        let m = grid.len();
        let step = grid.width() / bandwidth;
        let cut = KERNEL_CUTOFF + 0.5 * step;
        let arg = cut * 0.5 * step;
        if coords.len() < m || arg > EXPANSION_MAX_ARG {
            return None;
        }
        // remainder bound arg^P / P! * exp(arg)
        let mut order = 1;
        let mut term = arg;
        while term * arg.exp() > 1e-17 && order < 48 {
            order += 1;
            term *= arg / order as f64;
        }
        let mut cells = Vec::with_capacity(coords.len());
        let mut offsets = Vec::with_capacity(coords.len());
        let mut damping = Vec::with_capacity(coords.len());
        for &z in coords {
            let c = grid.cell_of(z);
            let s = (z - grid.center(c)) / bandwidth;
            cells.push(c);
            offsets.push(s);
            damping.push((-0.5 * s * s).exp());
        }
        let pad = cut * bandwidth;
        let kmax = (0.5 * (1.0 + pad)).ceil() as i64 + 1;
        let mut pairs = Vec::new();
        for c in 0..m {
            let xc = grid.center(c);
            for j in -kmax..=kmax {
                let shift = 2.0 * j as f64;
                for (center, sigma) in [(shift + xc, 1.0), (shift - xc, -1.0)] {
                    if center < -pad || center > 1.0 + pad {
                        continue;
                    }
                    for i in 0..m {
                        let t = (grid.center(i) - center) / bandwidth;
                        if t.abs() <= cut {
                            pairs.push((i as u32, c as u32, gaussian_kernel(t), sigma * t));
                        }
                    }
                }
            }
        }
        Some(Self { order, cells, offsets, damping, pairs })
    }

    fn scatter(&self, masses: &[f64], out: &mut [f64]) {
        let p = self.order;
        let m = out.len();
        let mut moments = vec![0.0; m * p];
        for (k, &mass) in masses.iter().enumerate() {
            let row = &mut moments[self.cells[k] * p..][..p];
            let s = self.offsets[k];
            let mut a = mass * self.damping[k];
            for (q, slot) in row.iter_mut().enumerate() {
                *slot += a;
                a *= s / (q + 1) as f64;
            }
        }
        for &(i, c, kt, tau) in &self.pairs {
            let row = &moments[c as usize * p..][..p];
            let poly = row.iter().rev().fold(0.0, |acc, &v| acc * tau + v);
            out[i as usize] += kt * poly;
        }
    }

    fn gather(&self, values: &[f64]) -> Vec<f64> {
        let p = self.order;
        let m = values.len();
        let mut local = vec![0.0; m * p];
        for &(i, c, kt, tau) in &self.pairs {
            let row = &mut local[c as usize * p..][..p];
            let mut a = values[i as usize] * kt;
            for slot in row.iter_mut() {
                *slot += a;
                a *= tau;
            }
        }
        (0..self.cells.len())
            .map(|k| {
                let row = &local[self.cells[k] * p..][..p];
                let s = self.offsets[k];
                let mut a = self.damping[k];
                let mut sum = 0.0;
                for (q, &v) in row.iter().enumerate() {
                    sum += a * v;
                    a *= s / (q + 1) as f64;
                }
                sum
            })
            .collect()
    }
}

impl KernelSum {
    fn new(coords: Vec<f64>, bandwidth: f64, grid: Grid1D) -> Self {
        let step = grid.width() / bandwidth;
        let reach = (KERNEL_CUTOFF / step).ceil() as usize + 1;
        let expansion = Expansion::new(&coords, bandwidth, grid);
        Self {
            grid,
            bandwidth,
            inv_h: 1.0 / bandwidth,
            coords,
            step,
            ratio_decay: (-step * step).exp(),
            reach,
            expansion,
        }
    }

    fn nearest_center(&self, z: f64) -> usize {
        let m = self.grid.len();
        let i = (z * m as f64 - 0.5).round();
        if i <= 0.0 {
            0
        } else {
            (i as usize).min(m - 1)
        }
    }

    fn anchor(&self, i: usize, z: f64, sign: f64) -> (f64, f64) {
        let u = (self.grid.center(i) - z) * self.inv_h;
        let v = FRAC_1_SQRT_2PI * (-0.5 * u * u).exp();
        let ratio = (-sign * u * self.step - 0.5 * self.step * self.step).exp();
        (v, ratio)
    }

    /// Calls `visit(i, K((x_i - z) / h))` over the window of cells around `z`.
    #[inline]
    fn walk(&self, z: f64, mut visit: impl FnMut(usize, f64)) {
        let m = self.grid.len();
        let i0 = self.nearest_center(z);
        let hi = (i0 + self.reach).min(m - 1);
        let mut i = i0;
        while i <= hi {
            let n = (hi + 1 - i).min(ANCHOR_EVERY);
            let (mut v, mut ratio) = self.anchor(i, z, 1.0);
            for j in i..i + n {
                visit(j, v);
                v *= ratio;
                ratio *= self.ratio_decay;
            }
            i += n;
        }
        let lo = i0.saturating_sub(self.reach);
        let mut top = i0; // exclusive
        while top > lo {
            let n = (top - lo).min(ANCHOR_EVERY);
            let (mut v, mut ratio) = self.anchor(top - 1, z, -1.0);
            for j in (top - n..top).rev() {
                visit(j, v);
                v *= ratio;
                ratio *= self.ratio_decay;
            }
            top -= n;
        }
    }

    /// Visits `z` and every mirror image within kernel reach of `[0, 1]`.
    #[inline]
    fn walk_images(&self, z: f64, mut visit: impl FnMut(usize, f64)) {
        let pad = KERNEL_CUTOFF * self.bandwidth;
        let kmax = (0.5 * (1.0 + pad)).ceil() as i64 + 1;
        let near = |img: f64| img >= -pad && img <= 1.0 + pad;
        self.walk(z, &mut visit);
        for j in -kmax..=kmax {
            let shift = 2.0 * j as f64;
            if j != 0 && near(shift + z) {
                self.walk(shift + z, &mut visit);
            }
            if near(shift - z) {
                self.walk(shift - z, &mut visit);
            }
        }
    }

    /// Adds the unnormalized sums to `out` (length `m`).
    fn scatter(&self, masses: &[f64], out: &mut [f64]) {
        debug_assert_eq!(masses.len(), self.coords.len());
        if let Some(e) = &self.expansion {
            return e.scatter(masses, out);
        }
        for (&z, &mass) in self.coords.iter().zip(masses) {
            self.walk_images(z, |i, v| out[i] += mass * v);
        }
    }

    /// `sum_i values_i K_R(x_i, z)` for every coordinate `z`.
    fn gather(&self, values: &[f64]) -> Vec<f64> {
        if let Some(e) = &self.expansion {
            return e.gather(values);
        }
        self.coords
            .iter()
            .map(|&z| {
                let mut s = 0.0;
                self.walk_images(z, |i, v| s += values[i] * v);
                s
            })
            .collect()
    }

    /// Exact sum at one grid point, used where the windowed sum underflowed.
    fn exact_at(&self, i: usize, masses: &[f64]) -> f64 {
        let x = self.grid.center(i);
        self.coords.iter().zip(masses).map(|(&z, &mass)| mass * reflected_kernel(x, z, self.bandwidth)).sum()
    }

    /// `scale * sums`, strictly positive or an error.
    fn marginal(&self, masses: &[f64], scale: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.grid.len()];
        self.scatter(masses, &mut out);
        for (i, o) in out.iter_mut().enumerate() {
            if *o <= 0.0 {
                *o = self.exact_at(i, masses);
                if *o <= 0.0 {
                    return Err(Error::DegenerateMarginal { position: self.grid.center(i) });
                }
            }
            *o *= scale;
        }
        Ok(out)
    }
}

/// Weighted 1D marginal density estimate at the grid centers.
pub fn marginal_kde(sample: &WeightedSample, bandwidth: f64, grid: Grid1D) -> Result<GridFunction1D> {
    check_bandwidth(bandwidth)?;
    if sample.base.is_empty() {
        return Err(Error::EmptySample);
    }
    let sums = KernelSum::new(sample.base.coordinates(), bandwidth, grid);
    let scale = 1.0 / (2.0 * sample.base.total_count * bandwidth);
    GridFunction1D::new(grid, sums.marginal(&sample.coordinate_masses(), scale)?)
}

/// Symmetrized product-kernel estimate at a single point.
pub fn kde_2d_at(sample: &WeightedSample, bandwidth: f64, x: f64, y: f64) -> Result<f64> {
    check_bandwidth(bandwidth)?;
    if sample.base.is_empty() {
        return Err(Error::EmptySample);
    }
    let k = |a: f64, z: f64| reflected_kernel(a, z, bandwidth);
    let sum: f64 = sample
        .base
        .points
        .iter()
        .zip(&sample.weights)
        .map(|(p, w)| p.count * w * (k(x, p.x) * k(y, p.y) + k(x, p.y) * k(y, p.x)))
        .sum();
    Ok(sum / (2.0 * sample.base.total_count * bandwidth * bandwidth))
}

/// Symmetrized product-kernel estimate on the `m x m` center grid.
pub fn kde_2d(sample: &WeightedSample, bandwidth: f64, grid: Grid1D) -> Result<GridFunction2D> {
    check_bandwidth(bandwidth)?;
    if sample.base.is_empty() {
        return Err(Error::EmptySample);
    }
    let m = grid.len();
    let sums = KernelSum::new(Vec::new(), bandwidth, grid);
    // M = sum_k mass_k K(., X_k) K(., Y_k)^T, accumulated as products of
    // chunked profile matrices
    const CHUNK: usize = 512;
    let mut acc = Array2::<f64>::zeros((m, m));
    for chunk in sample.base.points.chunks(CHUNK).zip(sample.weights.chunks(CHUNK)) {
        let (points, weights) = chunk;
        let mut kx = Array2::<f64>::zeros((points.len(), m));
        let mut ky = Array2::<f64>::zeros((points.len(), m));
        for (r, (p, w)) in points.iter().zip(weights).enumerate() {
            let mass = p.count * w;
            sums.walk_images(p.x, |i, v| kx[[r, i]] += mass * v);
            sums.walk_images(p.y, |i, v| ky[[r, i]] += v);
        }
        ndarray::linalg::general_mat_mul(1.0, &kx.t(), &ky, 1.0, &mut acc);
    }
    let scale = 1.0 / (2.0 * sample.base.total_count * bandwidth * bandwidth);
    let mut values = Array2::<f64>::zeros((m, m));
    for i in 0..m {
        for j in i..m {
            let v = (acc[[i, j]] + acc[[j, i]]) * scale;
            values[[i, j]] = v;
            values[[j, i]] = v;
        }
    }
    GridFunction2D::new(grid, values, true)
}

/// Output of [`ksk_balance`].
#[derive(Debug, Clone, PartialEq)]
pub struct KernelBalanceResult {
    /// Bias estimate `g ~ sqrt(G)`, rescaled to unit mean.
    pub bias: GridFunction1D,
    /// The balancing function `u = 1 / sqrt(G)`.
    pub balancing: GridFunction1D,
    /// Raw product of marginals `G = prod_t r_t`.
    pub accumulator: GridFunction1D,
    pub bandwidth: f64,
    pub iterations: usize,
    /// `max_i |r(x_i) - 1|` at exit.
    pub residual: f64,
    /// Residual before each update, ending with the final one.
    pub residual_history: Vec<f64>,
}

/// Kernel Sinkhorn-Knopp balancing of a contact sample.
pub fn ksk_balance(
    sample: &ContactSample,
    bandwidth: f64,
    grid: Grid1D,
    cfg: &BalanceConfig,
) -> Result<KernelBalanceResult> {
    check_bandwidth(bandwidth)?;
    cfg.validate()?;
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    let m = grid.len();
    let sums = KernelSum::new(sample.coordinates(), bandwidth, grid);
    let scale = 1.0 / (2.0 * sample.total_count * bandwidth);
    let smooth = 1.0 / (m as f64 * bandwidth);

    let mut acc = vec![1.0; m];
    let mut u = vec![1.0; m];
    let mut masses = vec![0.0; 2 * sample.len()];
    let mut history = Vec::new();
    let mut iterations = 0;
    let residual = loop {
        let s = sums.gather(&u);
        for (k, p) in sample.points.iter().enumerate() {
            masses[2 * k] = p.count * smooth * s[2 * k + 1];
            masses[2 * k + 1] = p.count * smooth * s[2 * k];
        }
        let r: Vec<f64> = sums.marginal(&masses, scale)?.iter().zip(&u).map(|(a, b)| a * b).collect();
        let residual = r.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
        history.push(residual);
        if residual <= cfg.tol {
            break residual;
        }
        if iterations >= cfg.max_iter {
            return Err(Error::MaxIterationsExceeded { iterations, residual });
        }
        for ((a, ui), ri) in acc.iter_mut().zip(&mut u).zip(&r) {
            *a *= ri;
            *ui = 1.0 / a.sqrt();
        }
        iterations += 1;
    };

    let accumulator = GridFunction1D::new(grid, acc)?;
    let bias = GridFunction1D::new(grid, accumulator.values().iter().map(|g| g.sqrt()).collect())?.unit_mean()?;
    let balancing = GridFunction1D::new(grid, accumulator.values().iter().map(|g| 1.0 / g.sqrt()).collect())?;
    Ok(KernelBalanceResult {
        bias,
        balancing,
        accumulator,
        bandwidth,
        iterations,
        residual,
        residual_history: history,
    })
}

/// Symmetric balancing of a density sampled on the grid: returns `(p, h)` with
/// `p(x, y) = h(x) f(x, y) h(y)` and midpoint marginals of `p` equal to one.
pub fn cssk_grid_balance(f: &GridFunction2D, cfg: &BalanceConfig) -> Result<(GridFunction2D, GridFunction1D)> {
    cfg.validate()?;
    if !f.is_symmetric() {
        return Err(Error::invalid("density must be flagged symmetric"));
    }
    for ((row, col), &value) in f.values().indexed_iter() {
        if !(value > 0.0) {
            return Err(Error::NotStrictlyPositive { row, col, value });
        }
    }
    let grid = f.grid();
    let m = grid.len();
    let w = grid.width();
    let mut p = f.values().clone();
    let mut h = vec![1.0; m];
    let mut iterations = 0;
    loop {
        let r: Vec<f64> = p.rows().into_iter().map(|row| row.iter().sum::<f64>() * w).collect();
        let residual = r.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
        if residual <= cfg.tol {
            break;
        }
        if iterations >= cfg.max_iter {
            return Err(Error::MaxIterationsExceeded { iterations, residual });
        }
        let s: Vec<f64> = r.iter().map(|v| 1.0 / v.sqrt()).collect();
        for i in 0..m {
            for j in i..m {
                let v = p[[i, j]] * (s[i] * s[j]);
                p[[i, j]] = v;
                p[[j, i]] = v;
            }
            h[i] *= s[i];
        }
        iterations += 1;
    }
    Ok((GridFunction2D::new(grid, p, true)?, GridFunction1D::new(grid, h)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn sample(points: &[(f64, f64, f64)]) -> ContactSample {
        ContactSample::new(points.iter().map(|&(x, y, c)| ContactPoint::new(x, y, c)).collect()).unwrap()
    }

    #[test]
    fn ingest_swaps_and_validates() {
        let s = sample(&[(0.7, 0.2, 2.0)]);
        assert_eq!(s.points()[0], ContactPoint::new(0.2, 0.7, 2.0));
        assert_eq!(s.total_count(), 2.0);
        assert!(ContactSample::new(vec![ContactPoint::new(1.2, 0.1, 1.0)]).is_err());
        assert!(ContactSample::new(vec![ContactPoint::new(0.2, 0.1, 0.0)]).is_err());
    }

    #[test]
    fn marginal_hand_evaluation() {
        // r(0.5) = 1/(2 * 1 * 0.1) * [K(1) + K(-1)], mirror images are below 1e-17
        let s = sample(&[(0.4, 0.6, 1.0)]);
        let grid = Grid1D::new(2).unwrap(); // centers 0.25, 0.75
        let r = marginal_kde(&WeightedSample::uniform(&s), 0.1, grid).unwrap();
        let expect = |x: f64| 5.0 * (images_direct(x, 0.4, 0.1) + images_direct(x, 0.6, 0.1));
        assert_abs_diff_eq!(r.values()[0], expect(0.25), epsilon = 1e-13);
        let g = Grid1D::new(5).unwrap(); // 0.5 is a center
        let r = marginal_kde(&WeightedSample::uniform(&s), 0.1, g).unwrap();
        assert_abs_diff_eq!(r.values()[2], 2.419_707_245, epsilon = 1e-9);
    }

    fn images_direct(x: f64, z: f64, h: f64) -> f64 {
        // mirror images 2k +- z for |k| <= 3, enough for h <= 0.5
        (-3..=3)
            .flat_map(|k| [2.0 * k as f64 + z, 2.0 * k as f64 - z])
            .map(|img| gaussian_kernel((x - img) / h))
            .sum()
    }

    #[test]
    fn reflected_kernel_integrates_to_one_on_the_unit_interval() {
        for &(z, h) in &[(0.0, 0.05), (0.01, 0.02), (0.5, 0.3), (0.97, 0.1), (1.0, 0.4)] {
            let m = 20_000;
            let integral: f64 =
                (0..m).map(|i| reflected_kernel((i as f64 + 0.5) / m as f64, z, h)).sum::<f64>() / (m as f64 * h);
            assert_abs_diff_eq!(integral, 1.0, epsilon = 1e-9);
            assert_abs_diff_eq!(reflected_kernel(0.3, z, h), images_direct(0.3, z, h), epsilon = 1e-15);
        }
    }

    #[test]
    fn recurrence_matches_direct_evaluation() {
        let s = sample(&[(0.013, 0.52, 1.0), (0.3, 0.999, 2.0), (0.5, 0.5, 1.5), (0.0, 0.8, 1.0)]);
        let ws = WeightedSample::new(&s, vec![1.0, 0.5, 2.0, 1.0]).unwrap();
        for &h in &[0.01, 0.03, 0.4] {
            let grid = Grid1D::new(512).unwrap();
            let r = marginal_kde(&ws, h, grid).unwrap();
            // terms beyond the cutoff are below 3e-18 of the kernel peak
            let floor = 1e-16 * r.max();
            for i in 0..512 {
                let x = grid.center(i);
                let direct: f64 = s
                    .points()
                    .iter()
                    .zip(ws.weights())
                    .map(|(p, w)| p.count * w * (images_direct(x, p.x, h) + images_direct(x, p.y, h)))
                    .sum::<f64>()
                    / (2.0 * s.total_count() * h);
                assert!((r.values()[i] - direct).abs() <= 1e-12 * direct + floor, "h={h} i={i}");
            }
        }
    }

    #[test]
    fn expansion_matches_direct_sums() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut coords: Vec<f64> = (0..1200).map(|_| rng.random::<f64>()).collect();
        coords.extend([0.0, 1.0, 0.5, 1e-9]);
        let masses: Vec<f64> = coords.iter().map(|_| rng.random_range(0.1..2.0)).collect();
        let m = 512;
        let grid = Grid1D::new(m).unwrap();
        let values: Vec<f64> = (0..m).map(|i| 1.0 + (i as f64 * 0.37).sin().abs()).collect();
        for &h in &[0.004, 0.01, 0.05, 0.3] {
            let sums = KernelSum::new(coords.clone(), h, grid);
            assert!(sums.expansion.is_some(), "h={h}");
            let mut out = vec![0.0; m];
            sums.scatter(&masses, &mut out);
            let scale = out.iter().cloned().fold(0.0, f64::max);
            for (i, &v) in out.iter().enumerate() {
                let x = grid.center(i);
                let direct: f64 = coords.iter().zip(&masses).map(|(&z, &w)| w * images_direct(x, z, h)).sum();
                assert!((v - direct).abs() <= 1e-12 * direct + 1e-15 * scale, "scatter h={h} i={i}");
            }
            let gathered = sums.gather(&values);
            for (k, &z) in coords.iter().enumerate() {
                let direct: f64 = (0..m).map(|i| values[i] * images_direct(grid.center(i), z, h)).sum();
                assert!((gathered[k] - direct).abs() <= 1e-12 * direct + 1e-15, "gather h={h} k={k}");
            }
        }
    }

    #[test]
    fn sparse_sample_with_tiny_bandwidth_is_degenerate() {
        let s = sample(&[(0.013, 0.52, 1.0)]);
        let err = marginal_kde(&WeightedSample::uniform(&s), 0.001, Grid1D::new(512).unwrap()).unwrap_err();
        assert!(matches!(err, Error::DegenerateMarginal { .. }));
    }

    #[test]
    fn marginal_linear_in_weights_and_positive() {
        let s = sample(&[(0.1, 0.3, 1.0), (0.5, 0.9, 3.0)]);
        let grid = Grid1D::new(64).unwrap();
        let base = marginal_kde(&WeightedSample::new(&s, vec![1.0, 2.0]).unwrap(), 0.05, grid).unwrap();
        let scaled = marginal_kde(&WeightedSample::new(&s, vec![3.0, 6.0]).unwrap(), 0.05, grid).unwrap();
        for (a, b) in base.values().iter().zip(scaled.values()) {
            assert!(*a > 0.0);
            assert_abs_diff_eq!(3.0 * a, *b, epsilon = 1e-12 * b.abs());
        }
    }

    #[test]
    fn marginal_mirror_symmetry() {
        let s = sample(&[(0.1, 0.3, 1.0), (0.7, 0.9, 1.0), (0.2, 0.8, 2.0)]);
        let grid = Grid1D::new(50).unwrap();
        let r = marginal_kde(&WeightedSample::uniform(&s), 0.07, grid).unwrap();
        for i in 0..50 {
            assert_abs_diff_eq!(r.values()[i], r.values()[49 - i], epsilon = 1e-12);
        }
    }

    #[test]
    fn empty_and_bad_bandwidth() {
        let s = ContactSample::empty();
        let grid = Grid1D::new(8).unwrap();
        assert!(matches!(marginal_kde(&WeightedSample::uniform(&s), 0.1, grid), Err(Error::EmptySample)));
        assert!(matches!(kde_2d(&WeightedSample::uniform(&s), 0.1, grid), Err(Error::EmptySample)));
        assert!(matches!(ksk_balance(&s, 0.1, grid, &BalanceConfig::kernel()), Err(Error::EmptySample)));
        let s = sample(&[(0.1, 0.2, 1.0)]);
        assert!(marginal_kde(&WeightedSample::uniform(&s), 0.0, grid).is_err());
        assert!(marginal_kde(&WeightedSample::uniform(&s), f64::NAN, grid).is_err());
    }

    #[test]
    fn kde_2d_is_symmetric_and_matches_pointwise() {
        let s = sample(&[(0.4, 0.6, 1.0), (0.1, 0.15, 2.0)]);
        let ws = WeightedSample::uniform(&s);
        let grid = Grid1D::new(10).unwrap(); // 0.45/0.55 ... centers
        let f = kde_2d(&ws, 0.1, grid).unwrap();
        assert!(f.is_symmetric());
        for i in 0..10 {
            for j in 0..10 {
                let (x, y) = (grid.center(i), grid.center(j));
                let direct = kde_2d_at(&ws, 0.1, x, y).unwrap();
                assert!((f.values()[[i, j]] - direct).abs() <= 1e-12 * direct.max(1e-12));
            }
        }
        assert_eq!(kde_2d_at(&ws, 0.1, 0.4, 0.6).unwrap(), kde_2d_at(&ws, 0.1, 0.6, 0.4).unwrap());
    }

    #[test]
    fn apply_bias_examples() {
        let s = sample(&[(0.1, 0.2, 1.0), (0.3, 0.9, 2.0)]);
        let w = apply_bias(&s, &|_x: f64| 1.0).unwrap();
        assert_eq!(w.weights(), &[1.0, 1.0]);
        let w = apply_bias(&s, &|_x: f64| 4.0).unwrap();
        assert_eq!(w.weights(), &[0.25, 0.25]);
        assert!(apply_bias(&s, &|x: f64| x - 0.15).is_err());
    }

    #[test]
    fn ksk_converges_and_matches_grid_balance_of_the_kde() {
        let pts: Vec<(f64, f64, f64)> =
            (0..40).map(|k| ((k as f64 * 0.37) % 1.0, (k as f64 * 0.61 + 0.1) % 1.0, 1.0 + (k % 3) as f64)).collect();
        let s = sample(&pts);
        let grid = Grid1D::new(128).unwrap();
        let res = ksk_balance(&s, 0.15, grid, &BalanceConfig::new(1e-10, 500)).unwrap();
        assert!(res.residual <= 1e-10);
        assert_abs_diff_eq!(crate::quadrature_1d(&res.bias), 1.0, epsilon = 1e-9);
        assert!(res.bias.min() > 0.0);
        for ((b, a), g) in res.balancing.values().iter().zip(res.accumulator.values()).zip(res.bias.values()) {
            assert_abs_diff_eq!(b * a.sqrt(), 1.0, epsilon = 1e-12);
            assert!(*g > 0.0);
        }

        let f = kde_2d(&WeightedSample::uniform(&s), 0.15, grid).unwrap();
        let (_, h) = cssk_grid_balance(&f, &BalanceConfig::new(1e-12, 1000)).unwrap();
        let ratio: Vec<f64> = h.values().iter().zip(res.balancing.values()).map(|(a, b)| a / b).collect();
        for r in &ratio {
            assert_abs_diff_eq!(r / ratio[0], 1.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn accumulator_weights_nearly_rebalance_a_dense_sample() {
        let pts: Vec<(f64, f64, f64)> =
            (0..2000).map(|k| (((k as f64) * 0.618_034) % 1.0, ((k as f64) * 0.414_214 + 0.3) % 1.0, 1.0)).collect();
        let s = sample(&pts);
        let grid = Grid1D::new(128).unwrap();
        let res = ksk_balance(&s, 0.05, grid, &BalanceConfig::kernel()).unwrap();
        let ws = apply_bias(&s, &res.accumulator).unwrap();
        let r = marginal_kde(&ws, 0.05, grid).unwrap();
        let sup = r.values().iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
        assert!(sup <= 0.02, "sup = {sup}");
    }

    #[test]
    fn ksk_budget_error() {
        let s = sample(&[(0.1, 0.2, 1.0), (0.3, 0.9, 2.0), (0.5, 0.6, 1.0)]);
        let grid = Grid1D::new(32).unwrap();
        let err = ksk_balance(&s, 0.2, grid, &BalanceConfig::new(1e-12, 1)).unwrap_err();
        assert!(matches!(err, Error::MaxIterationsExceeded { iterations: 1, .. }));
    }

    #[test]
    fn cssk_constant_is_already_balanced() {
        let grid = Grid1D::new(16).unwrap();
        let f = GridFunction2D::new(grid, Array2::from_elem((16, 16), 1.0), true).unwrap();
        let (p, h) = cssk_grid_balance(&f, &BalanceConfig::kernel()).unwrap();
        assert_eq!(p, f);
        assert!(h.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn cssk_product_density_balances_to_uniform() {
        let grid = Grid1D::new(64).unwrap();
        let g = |x: f64| ((10.0 * std::f64::consts::PI * x).cos() + 3.5) / 3.5;
        let gv = GridFunction1D::from_fn(grid, g).unwrap();
        let mean = crate::quadrature_1d(&gv);
        let values =
            Array2::from_shape_fn((64, 64), |(i, j)| gv.values()[i] * gv.values()[j] / (mean * mean));
        let f = GridFunction2D::new(grid, values, true).unwrap();
        let (p, h) = cssk_grid_balance(&f, &BalanceConfig::new(1e-12, 1000)).unwrap();
        for v in p.values().iter() {
            assert_abs_diff_eq!(*v, 1.0, epsilon = 1e-10);
        }
        // h * g is constant
        let prod: Vec<f64> = h.values().iter().zip(gv.values()).map(|(a, b)| a * b).collect();
        for v in &prod {
            assert_abs_diff_eq!(*v, prod[0], epsilon = 1e-10);
        }
    }

    #[test]
    fn cssk_rejects_zero() {
        let grid = Grid1D::new(2).unwrap();
        let f = GridFunction2D::new(grid, ndarray::array![[1.0, 0.0], [0.0, 1.0]], true).unwrap();
        assert!(matches!(cssk_grid_balance(&f, &BalanceConfig::kernel()), Err(Error::NotStrictlyPositive { .. })));
    }
}
