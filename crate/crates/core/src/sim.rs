//! Synthetic experiment: a symmetric density with uniform marginals is
//! distorted by a known periodic bias, sampled, and the bias is recovered by
//! the histogram and kernel balancers.

use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{quadrature_1d, Grid1D, GridFunction1D, GridFunction2D, DEFAULT_GRID_M};
use crate::hic_io::bin_sample;
use crate::kernel::{cssk_grid_balance, ksk_balance, ContactPoint, ContactSample};
use crate::matrix::{histogram_bias, ssk_balance};
use crate::rng::{derive_seed, generator, stream};
use crate::selection::{select_bandwidth, select_binsize, Parameter};
use crate::BalanceConfig;

/// Bin counts searched by the oracle for the histogram estimator.
pub const ORACLE_BINS: [usize; 8] = [16, 24, 32, 48, 64, 96, 128, 160];

/// Bandwidths searched by the oracle: 15 log-spaced values in `[0.005, 0.1]`.
pub fn oracle_bandwidths() -> Vec<f64> {
    let (lo, hi, k) = (0.005f64, 0.1f64, 15);
    (0..k).map(|i| lo * (hi / lo).powf(i as f64 / (k - 1) as f64)).collect()
}

/// Parameters of the distorted-density design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimScenario {
    pub mixture_mean: [f64; 2],
    /// Covariance of the Gaussian component is `mixture_cov_scale * I`.
    pub mixture_cov_scale: f64,
    /// Ridge `exp(-(x - y)^2 / ridge_scale)`.
    pub ridge_scale: f64,
    /// Bias `g(x) = bias_amplitude * cos(2 pi bias_cycles x) + bias_offset`.
    pub bias_amplitude: f64,
    pub bias_cycles: f64,
    pub bias_offset: f64,
    pub grid_m: usize,
    pub seed: u64,
}

impl Default for SimScenario {
    fn default() -> Self {
        Self {
            mixture_mean: [0.2, 0.8],
            mixture_cov_scale: 0.1,
            ridge_scale: 0.01,
            bias_amplitude: 1.0,
            bias_cycles: 5.0,
            bias_offset: 3.5,
            grid_m: DEFAULT_GRID_M,
            seed: 0,
        }
    }
}

impl SimScenario {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    pub fn bias(&self, x: f64) -> f64 {
        self.bias_amplitude * (2.0 * std::f64::consts::PI * self.bias_cycles * x).cos() + self.bias_offset
    }

    pub fn grid(&self) -> Result<Grid1D> {
        Grid1D::new(self.grid_m)
    }

    fn validate(&self) -> Result<()> {
        if self.grid_m < 64 {
            return Err(Error::invalid(format!("simulation grid needs at least 64 cells, got {}", self.grid_m)));
        }
        if !(self.bias_offset > self.bias_amplitude.abs()) {
            return Err(Error::invalid("bias must stay strictly positive"));
        }
        if !(self.mixture_cov_scale > 0.0) || !(self.ridge_scale > 0.0) {
            return Err(Error::invalid("mixture and ridge scales must be positive"));
        }
        Ok(())
    }

    /// The unnormalized surface before symmetrization.
    fn raw_density(&self, x: f64, y: f64) -> f64 {
        let s = self.mixture_cov_scale;
        let [mx, my] = self.mixture_mean;
        let gauss = (-((x - mx).powi(2) + (y - my).powi(2)) / (2.0 * s)).exp() / (2.0 * std::f64::consts::PI * s);
        gauss + (-(x - y).powi(2) / self.ridge_scale).exp()
    }
}

/// Builds the symmetric density with uniform marginals on the scenario grid.
pub fn build_sdsd(scenario: &SimScenario) -> Result<GridFunction2D> {
    scenario.validate()?;
    let grid = scenario.grid()?;
    let m = grid.len();
    let c = grid.centers();
    let raw = Array2::from_shape_fn((m, m), |(i, j)| scenario.raw_density(c[i], c[j]));
    let mut sym = raw.clone();
    for i in 0..m {
        for j in (i + 1)..m {
            let v = 0.5 * (raw[[i, j]] + raw[[j, i]]);
            sym[[i, j]] = v;
            sym[[j, i]] = v;
        }
    }
    let f = GridFunction2D::new(grid, sym, true)?;
    let (p, _) = cssk_grid_balance(&f, &BalanceConfig::new(1e-10, 10_000))?;
    Ok(p)
}

/// `g(x) f(x, y) g(y)` renormalized to unit mass.
pub fn distort(f_star: &GridFunction2D, bias: impl Fn(f64) -> f64) -> Result<GridFunction2D> {
    let grid = f_star.grid();
    let g: Vec<f64> = grid.centers().into_iter().map(&bias).collect();
    if let Some(i) = g.iter().position(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::invalid(format!("bias is not positive at grid cell {i}")));
    }
    let mut values = Array2::from_shape_fn(f_star.values().dim(), |(i, j)| (g[i] * g[j]) * f_star.values()[[i, j]]);
    let w = grid.width();
    let mass = values.sum() * w * w;
    values.mapv_inplace(|v| v / mass);
    GridFunction2D::new(grid, values, f_star.is_symmetric())
}

/// Draws `n` unit-count points from a cellwise-constant density by rejection
/// against the uniform proposal. Points are uniform within their cell.
pub fn sample_density(f: &GridFunction2D, n: usize, seed: u64) -> Result<ContactSample> {
    let mass = f.total_mass();
    if (mass - 1.0).abs() > 1e-6 {
        return Err(Error::invalid(format!("density has mass {mass}, expected 1")));
    }
    if f.values().iter().any(|v| *v < 0.0) {
        return Err(Error::invalid("density has negative values"));
    }
    if n == 0 {
        return Ok(ContactSample::empty());
    }
    let m = f.grid().len();
    let envelope = f.max_value() * (1.0 + 1e-9);
    let mut rng = generator(seed);
    let mut points = Vec::with_capacity(n);
    while points.len() < n {
        let x: f64 = rng.random();
        let y: f64 = rng.random();
        let u: f64 = rng.random();
        let (i, j) = (((x * m as f64) as usize).min(m - 1), ((y * m as f64) as usize).min(m - 1));
        if u * envelope < f.values()[[i, j]] {
            points.push(ContactPoint::new(x.min(y), x.max(y), 1.0));
        }
    }
    ContactSample::new(points)
}

/// Distance between unit-mean versions of an estimate and the true bias.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasError {
    pub l2_error: f64,
    pub mise: f64,
}

/// Compares `estimate` with `truth` sampled on the same grid, both rescaled to
/// unit mean, by the midpoint rule.
pub fn bias_error(estimate: &GridFunction1D, truth: impl Fn(f64) -> f64) -> Result<BiasError> {
    if let Some(i) = estimate.values().iter().position(|v| !(*v > 0.0)) {
        return Err(Error::invalid(format!("estimate is not positive at grid cell {i}")));
    }
    let est = estimate.unit_mean()?;
    let tru = GridFunction1D::from_fn(estimate.grid(), truth)?.unit_mean()?;
    let diff2 = GridFunction1D::new(
        est.grid(),
        est.values().iter().zip(tru.values()).map(|(a, b)| (a - b) * (a - b)).collect(),
    )?;
    let mise = quadrature_1d(&diff2);
    Ok(BiasError { l2_error: mise.sqrt(), mise })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    SskHistogram,
    KskKernel,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::SskHistogram => "ssk_histogram",
            Method::KskKernel => "ksk_kernel",
        }
    }
}

/// How the smoothing parameter is picked in an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Two-fold cross-validation on the sample.
    Cv,
    /// The candidate with the smallest error against the true bias.
    OracleGrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub l2_error: f64,
    pub mise: f64,
    pub n: usize,
    pub method: Method,
    pub parameter: Parameter,
}

/// Candidate grids and stopping rules used by the estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorSettings {
    pub bandwidths: Vec<f64>,
    pub bins: Vec<usize>,
    pub kernel: BalanceConfig,
    pub matrix: BalanceConfig,
}

impl Default for EstimatorSettings {
    fn default() -> Self {
        Self {
            bandwidths: oracle_bandwidths(),
            bins: ORACLE_BINS.to_vec(),
            kernel: BalanceConfig::kernel(),
            matrix: BalanceConfig::default(),
        }
    }
}

impl EstimatorSettings {
    fn candidates(&self, method: Method) -> Vec<Parameter> {
        match method {
            Method::KskKernel => self.bandwidths.iter().map(|&h| Parameter::Bandwidth(h)).collect(),
            Method::SskHistogram => self.bins.iter().map(|&b| Parameter::Bins(b)).collect(),
        }
    }
}

/// Histogram bias estimate from the balanced `bins x bins` count matrix, read
/// cellwise on `eval_grid`.
pub fn estimate_ssk(sample: &ContactSample, bins: usize, eval_grid: Grid1D, cfg: &BalanceConfig) -> Result<GridFunction1D> {
    let c = bin_sample(sample, bins)?;
    let res = ssk_balance(&c, cfg)?;
    histogram_bias(&res, Grid1D::new(bins)?)?.resample_cellwise(eval_grid).unit_mean()
}

/// Kernel bias estimate on `grid`.
pub fn estimate_ksk(sample: &ContactSample, bandwidth: f64, grid: Grid1D, cfg: &BalanceConfig) -> Result<GridFunction1D> {
    Ok(ksk_balance(sample, bandwidth, grid, cfg)?.bias)
}

/// The scenario with its densities precomputed.
#[derive(Debug, Clone)]
pub struct Simulation {
    scenario: SimScenario,
    f_star: GridFunction2D,
    distorted: GridFunction2D,
}

impl Simulation {
    pub fn new(scenario: SimScenario) -> Result<Self> {
        let f_star = build_sdsd(&scenario)?;
        let distorted = distort(&f_star, |x| scenario.bias(x))?;
        Ok(Self { scenario, f_star, distorted })
    }

    pub fn scenario(&self) -> &SimScenario {
        &self.scenario
    }

    pub fn f_star(&self) -> &GridFunction2D {
        &self.f_star
    }

    pub fn distorted(&self) -> &GridFunction2D {
        &self.distorted
    }

    pub fn grid(&self) -> Grid1D {
        self.f_star.grid()
    }

    /// True bias on the grid, unit mean.
    pub fn truth(&self) -> Result<GridFunction1D> {
        GridFunction1D::from_fn(self.grid(), |x| self.scenario.bias(x))?.unit_mean()
    }

    /// Seed of replicate `rep` at sample size `n`; shared by both methods so
    /// that their errors are paired.
    pub fn replicate_seed(&self, n: usize, rep: usize) -> u64 {
        derive_seed(self.scenario.seed, &[stream::REPLICATE, n as u64, rep as u64])
    }

    /// The sample of replicate `rep` at size `n`.
    pub fn replicate_sample(&self, n: usize, rep: usize) -> Result<ContactSample> {
        sample_density(&self.distorted, n, derive_seed(self.replicate_seed(n, rep), &[stream::SAMPLE]))
    }

    pub fn estimate(
        &self,
        sample: &ContactSample,
        parameter: Parameter,
        settings: &EstimatorSettings,
    ) -> Result<GridFunction1D> {
        match parameter {
            Parameter::Bandwidth(h) => estimate_ksk(sample, h, self.grid(), &settings.kernel),
            Parameter::Bins(b) => estimate_ssk(sample, b, self.grid(), &settings.matrix),
        }
    }

    fn report(&self, sample: &ContactSample, method: Method, parameter: Parameter, err: BiasError) -> ErrorReport {
        ErrorReport { l2_error: err.l2_error, mise: err.mise, n: sample.len(), method, parameter }
    }

    /// Error of every candidate of `method` on `sample`, in candidate order.
    pub fn error_curve(
        &self,
        sample: &ContactSample,
        method: Method,
        settings: &EstimatorSettings,
    ) -> Vec<(Parameter, Result<BiasError>)> {
        settings
            .candidates(method)
            .into_par_iter()
            .map(|p| {
                let err = self.estimate(sample, p, settings).and_then(|g| bias_error(&g, |x| self.scenario.bias(x)));
                (p, err)
            })
            .collect()
    }

    /// Best candidate against the truth; ties go to the wider parameter.
    pub fn oracle(&self, sample: &ContactSample, method: Method, settings: &EstimatorSettings) -> Result<ErrorReport> {
        best_of(&self.error_curve(sample, method, settings))
            .map(|(p, e)| self.report(sample, method, p, e))
            .ok_or(Error::AllCandidatesFailed)
    }

    /// Parameter chosen by two-fold CV with the given split seed.
    pub fn cv_choice(
        &self,
        sample: &ContactSample,
        method: Method,
        settings: &EstimatorSettings,
        split_seed: u64,
    ) -> Result<Parameter> {
        let report = match method {
            Method::KskKernel => select_bandwidth(sample, &settings.bandwidths, self.grid(), &settings.kernel, split_seed)?,
            Method::SskHistogram => select_binsize(sample, &settings.bins, &settings.matrix, split_seed)?,
        };
        Ok(report.chosen)
    }

    /// Runs one replicate end to end.
    pub fn replicate(
        &self,
        n: usize,
        rep: usize,
        method: Method,
        selection: Selection,
        settings: &EstimatorSettings,
    ) -> Result<ErrorReport> {
        let sample = self.replicate_sample(n, rep)?;
        match selection {
            Selection::OracleGrid => self.oracle(&sample, method, settings),
            Selection::Cv => {
                let split_seed = derive_seed(self.replicate_seed(n, rep), &[stream::SPLIT]);
                let p = self.cv_choice(&sample, method, settings, split_seed)?;
                let err = bias_error(&self.estimate(&sample, p, settings)?, |x| self.scenario.bias(x))?;
                Ok(self.report(&sample, method, p, err))
            }
        }
    }

    /// CV choice and oracle choice on the same replicate.
    pub fn compare_cv_to_oracle(
        &self,
        n: usize,
        rep: usize,
        method: Method,
        settings: &EstimatorSettings,
    ) -> Result<CvComparison> {
        let sample = self.replicate_sample(n, rep)?;
        let curve = self.error_curve(&sample, method, settings);
        let (op, oe) = best_of(&curve).ok_or(Error::AllCandidatesFailed)?;
        let split_seed = derive_seed(self.replicate_seed(n, rep), &[stream::SPLIT]);
        let cp = self.cv_choice(&sample, method, settings, split_seed)?;
        let ce = match curve.iter().find(|(p, _)| *p == cp) {
            Some((_, Ok(e))) => *e,
            _ => bias_error(&self.estimate(&sample, cp, settings)?, |x| self.scenario.bias(x))?,
        };
        Ok(CvComparison {
            cv: self.report(&sample, method, cp, ce),
            oracle: self.report(&sample, method, op, oe),
        })
    }
}

fn best_of(curve: &[(Parameter, Result<BiasError>)]) -> Option<(Parameter, BiasError)> {
    let mut best: Option<(Parameter, BiasError)> = None;
    for (p, e) in curve {
        let Ok(e) = e else { continue };
        let better = match best {
            None => true,
            Some((bp, be)) => e.mise < be.mise || (e.mise == be.mise && p.width() > bp.width()),
        };
        if better {
            best = Some((*p, *e));
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvComparison {
    pub cv: ErrorReport,
    pub oracle: ErrorReport,
}

impl CvComparison {
    /// `MISE(cv) / MISE(oracle)`, at least one.
    pub fn mise_ratio(&self) -> f64 {
        self.cv.mise / self.oracle.mise
    }
}

/// Results at one sample size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub n: usize,
    pub method: Method,
    pub mean_l2: f64,
    /// Mean bandwidth or bin width.
    pub mean_parameter: f64,
    pub failures: usize,
    pub runs: Vec<ErrorReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateTable {
    pub method: Method,
    pub selection: Selection,
    pub reps: usize,
    pub rows: Vec<RateRow>,
    /// Least-squares slope of `log(mean_l2)` against `log(n)`, given two or
    /// more sample sizes.
    pub slope: Option<f64>,
}

/// Least-squares slope of `log y` on `log x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::invalid("need at least two points for a slope"));
    }
    let k = points.len() as f64;
    let (lx, ly): (Vec<f64>, Vec<f64>) = points.iter().map(|(x, y)| (x.ln(), y.ln())).unzip();
    let mx = lx.iter().sum::<f64>() / k;
    let my = ly.iter().sum::<f64>() / k;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    if !(sxx > 0.0) {
        return Err(Error::invalid("sample sizes must differ"));
    }
    Ok(sxy / sxx)
}

/// Mean error against sample size for one method.
///
/// Replicates run in parallel with seeds derived from `(seed, n, rep)`;
/// failed replicates are counted and left out of the means.
pub fn rate_experiment(
    sim: &Simulation,
    n_list: &[usize],
    reps: usize,
    method: Method,
    selection: Selection,
    settings: &EstimatorSettings,
) -> Result<RateTable> {
    if reps == 0 {
        return Err(Error::invalid("need at least one replicate"));
    }
    if n_list.is_empty() || n_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("sample sizes must be nonempty and increasing"));
    }
    let mut rows = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let outcomes: Vec<Result<ErrorReport>> =
            (0..reps).into_par_iter().map(|rep| sim.replicate(n, rep, method, selection, settings)).collect();
        let failures = outcomes.iter().filter(|o| o.is_err()).count();
        let runs: Vec<ErrorReport> = outcomes.into_iter().filter_map(|o| o.ok()).collect();
        if runs.is_empty() {
            return Err(Error::AllCandidatesFailed);
        }
        let k = runs.len() as f64;
        rows.push(RateRow {
            n,
            method,
            mean_l2: runs.iter().map(|r| r.l2_error).sum::<f64>() / k,
            mean_parameter: runs.iter().map(|r| r.parameter.width()).sum::<f64>() / k,
            failures,
            runs,
        });
    }
    let slope = if rows.len() >= 2 {
        Some(log_log_slope(&rows.iter().map(|r| (r.n as f64, r.mean_l2)).collect::<Vec<_>>())?)
    } else {
        None
    };
    Ok(RateTable { method, selection, reps, rows, slope })
}
