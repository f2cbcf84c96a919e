//! Two-fold cross-validation for the smoothing parameter of each balancer.
//!
//! The sample is split once by assigning every unit of count to one of two
//! folds with a fair coin. Each fold is balanced on its own and the learned
//! correction is applied to the other fold:
//!
//! * kernel bandwidths are scored with the Cramer-von Mises distance between
//!   the reweighted pooled coordinates and the uniform distribution (lower is
//!   better);
//! * bin counts are scored with the cosine similarity between the cross-fold
//!   row sums `D_a C_b D_a e` and the constant vector (higher is better).
//!
//! Failing candidates are reported and skipped. Ties go to the smoother model.

use std::cmp::Ordering;

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid1D;
use crate::hic_io::bin_sample;
use crate::kernel::{apply_bias, ksk_balance, ContactPoint, ContactSample, WeightedSample};
use crate::matrix::ssk_balance;
use crate::rng::{derive_seed, generator, stream};
use crate::BalanceConfig;

/// The two folds of a seeded split.
#[derive(Debug, Clone, PartialEq)]
pub struct CvSplit {
    pub fold_a: ContactSample,
    pub fold_b: ContactSample,
    pub seed: u64,
}

/// Splits every unit of count between two folds with independent fair coins.
///
/// Integral counts are split binomially. A fractional remainder goes whole
/// to one fold. Points left with no count in a fold are omitted from it.
pub fn split_sample(sample: &ContactSample, seed: u64) -> Result<CvSplit> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    if sample.total_count() < 2.0 {
        return Err(Error::invalid("splitting needs a total count of at least 2"));
    }
    let mut rng = generator(derive_seed(seed, &[stream::SPLIT]));
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for p in sample.points() {
        let whole = p.count.floor();
        let frac = p.count - whole;
        let mut in_a = if whole >= 1.0 {
            Binomial::new(whole as u64, 0.5).expect("valid binomial").sample(&mut rng) as f64
        } else {
            0.0
        };
        if frac > 0.0 && rng.random::<bool>() {
            in_a += frac;
        }
        let in_b = p.count - in_a;
        if in_a > 0.0 {
            a.push(ContactPoint { count: in_a, ..*p });
        }
        if in_b > 0.0 {
            b.push(ContactPoint { count: in_b, ..*p });
        }
    }
    Ok(CvSplit { fold_a: ContactSample::new(a)?, fold_b: ContactSample::new(b)?, seed })
}

/// Cramer-von Mises distance `integral_0^1 (F(u) - u)^2 du` between the
/// weighted empirical CDF of the pooled coordinates and the uniform CDF,
/// integrated exactly over the step function.
pub fn cvm_uniform_score(sample: &WeightedSample) -> Result<f64> {
    let base = sample.base();
    if base.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut atoms: Vec<(f64, f64)> = base
        .points()
        .iter()
        .zip(sample.weights())
        .flat_map(|(p, w)| [(p.x, p.count * w), (p.y, p.count * w)])
        .collect();
    atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = atoms.iter().map(|a| a.1).sum();

    // integral of (F - u)^2 over [lo, hi] with F constant
    let piece = |f: f64, lo: f64, hi: f64| ((hi - f).powi(3) - (lo - f).powi(3)) / 3.0;
    let mut score = 0.0;
    let mut cdf = 0.0;
    let mut cum = 0.0;
    let mut left = 0.0;
    for (pos, mass) in atoms {
        score += piece(cdf, left, pos);
        cum += mass;
        cdf = cum / total;
        left = pos;
    }
    score += piece(cdf, left, 1.0);
    Ok(score)
}

/// The parameter a candidate stands for.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Parameter {
    Bins(usize),
    Bandwidth(f64),
}

impl Parameter {
    /// Bandwidth, or bin width `1/B` for histograms.
    pub fn width(&self) -> f64 {
        match *self {
            Parameter::Bandwidth(h) => h,
            Parameter::Bins(b) => 1.0 / b as f64,
        }
    }

    /// Ordering by smoothness (wider is smoother).
    fn smoothness(&self) -> f64 {
        self.width()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    CramerVonMises,
    Cosine,
}

impl Criterion {
    /// `Greater` when `a` is the better score.
    fn compare(self, a: f64, b: f64) -> Ordering {
        match self {
            Criterion::CramerVonMises => b.total_cmp(&a),
            Criterion::Cosine => a.total_cmp(&b),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub parameter: Parameter,
    pub score_a: Option<f64>,
    pub score_b: Option<f64>,
    pub mean_score: Option<f64>,
    pub failed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl CandidateScore {
    fn from_outcome(parameter: Parameter, outcome: Result<(f64, f64)>) -> Self {
        match outcome {
            Ok((a, b)) => Self {
                parameter,
                score_a: Some(a),
                score_b: Some(b),
                mean_score: Some(0.5 * (a + b)),
                failed: false,
                failure: None,
            },
            Err(e) => Self {
                parameter,
                score_a: None,
                score_b: None,
                mean_score: None,
                failed: true,
                failure: Some(e.to_string()),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub criterion: Criterion,
    pub seed: u64,
    /// In input order.
    pub candidates: Vec<CandidateScore>,
    pub chosen: Parameter,
}

fn choose(criterion: Criterion, seed: u64, candidates: Vec<CandidateScore>) -> Result<SelectionReport> {
    let mut best: Option<(Parameter, f64)> = None;
    for c in &candidates {
        let Some(score) = c.mean_score else { continue };
        let better = match best {
            None => true,
            Some((p, s)) => match criterion.compare(score, s) {
                Ordering::Greater => true,
                Ordering::Less => false,
                Ordering::Equal => c.parameter.smoothness() > p.smoothness(),
            },
        };
        if better {
            best = Some((c.parameter, score));
        }
    }
    let (chosen, _) = best.ok_or(Error::AllCandidatesFailed)?;
    Ok(SelectionReport { criterion, seed, candidates, chosen })
}

/// Two-fold CV over kernel bandwidths, scored by [`cvm_uniform_score`].
pub fn select_bandwidth(
    sample: &ContactSample,
    candidates: &[f64],
    grid: Grid1D,
    cfg: &BalanceConfig,
    seed: u64,
) -> Result<SelectionReport> {
    if candidates.is_empty() {
        return Err(Error::invalid("no candidate bandwidths"));
    }
    if let Some(h) = candidates.iter().find(|h| !(**h > 0.0) || !h.is_finite()) {
        return Err(Error::invalid(format!("candidate bandwidth {h} is not positive")));
    }
    let split = split_sample(sample, seed)?;
    let scores = candidates
        .par_iter()
        .map(|&h| {
            let outcome = (|| {
                let fit_a = ksk_balance(&split.fold_a, h, grid, cfg)?;
                let fit_b = ksk_balance(&split.fold_b, h, grid, cfg)?;
                let score_a = cvm_uniform_score(&apply_bias(&split.fold_b, &fit_a.accumulator)?)?;
                let score_b = cvm_uniform_score(&apply_bias(&split.fold_a, &fit_b.accumulator)?)?;
                Ok((score_a, score_b))
            })();
            CandidateScore::from_outcome(Parameter::Bandwidth(h), outcome)
        })
        .collect();
    choose(Criterion::CramerVonMises, seed, scores)
}

/// `(r . e) / (|r| |e|)`, clamped to at most one.
pub fn cosine_to_constant(r: &[f64]) -> f64 {
    let sum: f64 = r.iter().sum();
    let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    (sum / (norm * (r.len() as f64).sqrt())).min(1.0)
}

fn cross_marginal(d: &[f64], c: &crate::matrix::SymmetricMatrix) -> Vec<f64> {
    let n = d.len();
    (0..n).map(|i| d[i] * (0..n).map(|j| c.get(i, j) * d[j]).sum::<f64>()).collect()
}

/// Two-fold CV over histogram bin counts, scored by cross-fold cosine similarity.
pub fn select_binsize(
    sample: &ContactSample,
    candidates: &[usize],
    cfg: &BalanceConfig,
    seed: u64,
) -> Result<SelectionReport> {
    if candidates.is_empty() {
        return Err(Error::invalid("no candidate bin counts"));
    }
    if let Some(b) = candidates.iter().find(|b| **b < 2) {
        return Err(Error::invalid(format!("bin count {b} is below 2")));
    }
    let split = split_sample(sample, seed)?;
    let scores = candidates
        .par_iter()
        .map(|&bins| {
            let outcome = (|| {
                let ca = bin_sample(&split.fold_a, bins)?;
                let cb = bin_sample(&split.fold_b, bins)?;
                let da = ssk_balance(&ca, cfg)?.d1;
                let db = ssk_balance(&cb, cfg)?.d1;
                Ok((cosine_to_constant(&cross_marginal(&da, &cb)), cosine_to_constant(&cross_marginal(&db, &ca))))
            })();
            CandidateScore::from_outcome(Parameter::Bins(bins), outcome)
        })
        .collect();
    choose(Criterion::Cosine, seed, scores)
}
