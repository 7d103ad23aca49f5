//! Chernoff-coefficient sweep over alpha, the implied upper bound on the
//! two-class Bayes error, and a QDA cross-validation baseline to compare
//! the bound against.

use crate::divergence::Functional;
use crate::ensemble::{EnsembleConfig, RatioEnsemble};
use crate::error::{Error, Result};
use crate::inference::{bootstrap_replicates, ci_from_replicates, CiMethod};
use crate::knn::PointSet;
use nalgebra::{Cholesky, DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Population Chernoff coefficients never exceed 1; finite-sample estimates
/// may, so they are clamped into [0, 1 + 1e-6] with the raw value retained.
pub const COEFFICIENT_CLAMP_HIGH: f64 = 1.0 + 1e-6;

/// Default alpha grid 0.01, 0.02, ..., 0.99.
pub fn default_alpha_grid() -> Vec<f64> {
    (1..=99).map(|i| i as f64 / 100.0).collect()
}

/// Ensemble index set sized for small per-class samples (k(l) stays within
/// a 25-point reference split).
pub fn small_sample_l_bar() -> Vec<f64> {
    vec![1.0, 1.5, 2.0, 2.5, 3.0]
}

/// Point set with a class label per point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPointSet {
    points: PointSet,
    labels: Vec<String>,
}

impl LabeledPointSet {
    pub fn new(points: PointSet, labels: Vec<String>) -> Result<Self> {
        if labels.len() != points.len() {
            return Err(Error::Config(format!(
                "{} labels for {} points",
                labels.len(),
                points.len()
            )));
        }
        Ok(Self { points, labels })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.dim()
    }

    pub fn points(&self) -> &PointSet {
        &self.points
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Distinct class labels in order of first appearance.
    pub fn classes(&self) -> Vec<String> {
        let mut seen = Vec::new();
        for l in &self.labels {
            if !seen.contains(l) {
                seen.push(l.clone());
            }
        }
        seen
    }

    /// Points belonging to one class.
    pub fn class_points(&self, label: &str) -> Result<PointSet> {
        let indices: Vec<usize> = self
            .labels
            .iter()
            .enumerate()
            .filter(|(_, l)| l.as_str() == label)
            .map(|(i, _)| i)
            .collect();
        if indices.is_empty() {
            return Err(Error::UnknownLabel(label.to_string()));
        }
        Ok(self.points.select(&indices))
    }
}

/// Rescales two point sets jointly so the union spans the unit cube
/// coordinate-wise. Constant coordinates map to 0.5.
pub fn min_max_scale_pair(a: &PointSet, b: &PointSet) -> Result<(PointSet, PointSet)> {
    let d = a.dim();
    if b.dim() != d {
        return Err(Error::ShapeMismatch {
            expected: d,
            got: b.dim(),
        });
    }
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for p in a.iter_points().chain(b.iter_points()) {
        for j in 0..d {
            lo[j] = lo[j].min(p[j]);
            hi[j] = hi[j].max(p[j]);
        }
    }
    let scale_one = |ps: &PointSet| -> Result<PointSet> {
        let rows: Vec<Vec<f64>> = ps
            .iter_points()
            .map(|p| {
                (0..d)
                    .map(|j| {
                        if hi[j] > lo[j] {
                            (p[j] - lo[j]) / (hi[j] - lo[j])
                        } else {
                            0.5
                        }
                    })
                    .collect()
            })
            .collect();
        PointSet::from_rows(&rows)
    };
    Ok((scale_one(a)?, scale_one(b)?))
}

/// Estimated Chernoff coefficients over an alpha grid with the minimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChernoffSweep {
    pub alphas: Vec<f64>,
    /// Clamped coefficient estimates, aligned with `alphas`.
    pub coefficients: Vec<f64>,
    /// Estimates before clamping into [0, 1 + 1e-6].
    pub raw_coefficients: Vec<f64>,
    /// Grid point attaining the minimum (smallest index on ties).
    pub alpha_star: f64,
    pub c_star: f64,
}

/// Estimates the Chernoff coefficient for every alpha on the grid. One
/// split and one set of k-NN distances is shared across the sweep; only
/// the functional changes per grid point.
pub fn chernoff_sweep(
    f1_sample: &PointSet,
    f2_sample: &PointSet,
    config: &EnsembleConfig,
    grid: &[f64],
) -> Result<ChernoffSweep> {
    if grid.is_empty() {
        return Err(Error::Config("alpha grid is empty".into()));
    }
    for &a in grid {
        if !(a > 0.0 && a < 1.0) {
            return Err(Error::AlphaOutOfRange(a));
        }
    }
    let ensemble = RatioEnsemble::build(f1_sample, f2_sample, config)?;
    let mut raw = Vec::with_capacity(grid.len());
    let mut clamped = Vec::with_capacity(grid.len());
    for &alpha in grid {
        let est = ensemble.evaluate(&Functional::chernoff(alpha)?)?;
        raw.push(est.value);
        clamped.push(est.value.clamp(0.0, COEFFICIENT_CLAMP_HIGH));
    }
    let mut best = 0usize;
    for i in 1..clamped.len() {
        if clamped[i] < clamped[best] {
            best = i;
        }
    }
    Ok(ChernoffSweep {
        alphas: grid.to_vec(),
        alpha_star: grid[best],
        c_star: clamped[best],
        coefficients: clamped,
        raw_coefficients: raw,
    })
}

/// Upper bound on the two-class Bayes error derived from a Chernoff sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BayesBoundReport {
    pub w1: f64,
    pub w2: f64,
    pub alpha_star: f64,
    pub c_star: f64,
    /// w1^a* w2^(1-a*) c*, floored at 0.
    pub bound: f64,
    /// Bootstrap interval for the bound, when computed.
    pub ci: Option<(f64, f64)>,
    pub class_pair: Option<(String, String)>,
}

/// Combines the sweep minimum with the class priors into the error bound.
pub fn bayes_error_bound(sweep: &ChernoffSweep, w1: f64) -> Result<BayesBoundReport> {
    if !(w1 > 0.0 && w1 < 1.0) {
        return Err(Error::Config(format!(
            "prior w1 must lie in (0, 1), got {w1}"
        )));
    }
    let w2 = 1.0 - w1;
    let bound = (w1.powf(sweep.alpha_star) * w2.powf(1.0 - sweep.alpha_star) * sweep.c_star).max(0.0);
    Ok(BayesBoundReport {
        w1,
        w2,
        alpha_star: sweep.alpha_star,
        c_star: sweep.c_star,
        bound,
        ci: None,
        class_pair: None,
    })
}

/// Full bound pipeline with a bootstrap confidence interval: each replicate
/// resamples both classes, reruns the sweep, and recomputes the bound.
#[allow(clippy::too_many_arguments)]
pub fn bootstrap_bayes_bound(
    f1_sample: &PointSet,
    f2_sample: &PointSet,
    config: &EnsembleConfig,
    grid: &[f64],
    w1: f64,
    b: usize,
    level: f64,
    method: CiMethod,
) -> Result<BayesBoundReport> {
    if b < 100 {
        return Err(Error::Config(format!(
            "bootstrap needs at least 100 replicates, got {b}"
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(format!(
            "confidence level must lie in (0, 1), got {level}"
        )));
    }
    let sweep = chernoff_sweep(f1_sample, f2_sample, config, grid)?;
    let mut report = bayes_error_bound(&sweep, w1)?;
    let (replicates, _failed) =
        bootstrap_replicates(f1_sample, f2_sample, config.seed, b, |r1, r2, split_seed| {
            let mut cfg = config.clone();
            cfg.seed = split_seed;
            let sweep = chernoff_sweep(r1, r2, &cfg, grid)?;
            Ok(bayes_error_bound(&sweep, w1)?.bound)
        })?;
    report.ci = Some(ci_from_replicates(&replicates, report.bound, level, method));
    Ok(report)
}

struct QdaClass {
    label: String,
    mean: DVector<f64>,
    chol: Cholesky<f64, nalgebra::Dyn>,
    log_det: f64,
    log_prior: f64,
}

/// Gaussian class-conditional classifier: per-class mean, ridge-regularized
/// covariance, and empirical log-priors.
pub struct QdaModel {
    classes: Vec<QdaClass>,
}

impl QdaModel {
    /// Fits one Gaussian per class on the given rows. The covariance gets a
    /// ridge of 1e-6 * trace(cov) / d on the diagonal.
    pub fn fit(points: &PointSet, labels: &[String]) -> Result<Self> {
        if labels.len() != points.len() {
            return Err(Error::Config(format!(
                "{} labels for {} points",
                labels.len(),
                points.len()
            )));
        }
        let d = points.dim();
        let n_total = points.len();
        let mut class_order: Vec<String> = Vec::new();
        for l in labels {
            if !class_order.contains(l) {
                class_order.push(l.clone());
            }
        }
        let mut classes = Vec::with_capacity(class_order.len());
        for label in class_order {
            let indices: Vec<usize> = labels
                .iter()
                .enumerate()
                .filter(|(_, l)| **l == label)
                .map(|(i, _)| i)
                .collect();
            let n = indices.len();
            let mut mean = DVector::zeros(d);
            for &i in &indices {
                mean += DVector::from_column_slice(points.point(i));
            }
            mean /= n as f64;
            let mut cov = DMatrix::zeros(d, d);
            for &i in &indices {
                let diff = DVector::from_column_slice(points.point(i)) - &mean;
                cov += &diff * diff.transpose();
            }
            if n > 1 {
                cov /= (n - 1) as f64;
            }
            let ridge = 1e-6 * cov.trace() / d as f64;
            for j in 0..d {
                cov[(j, j)] += ridge;
            }
            let chol = Cholesky::new(cov).ok_or_else(|| Error::SingularCovariance {
                class: label.clone(),
            })?;
            let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            classes.push(QdaClass {
                label,
                mean,
                chol,
                log_det,
                log_prior: (n as f64 / n_total as f64).ln(),
            });
        }
        Ok(Self { classes })
    }

    /// Class with the largest Gaussian discriminant
    /// log w_c - 0.5 ln|cov_c| - 0.5 (x - mu_c)' cov_c^-1 (x - mu_c).
    pub fn classify(&self, x: &[f64]) -> &str {
        let xv = DVector::from_column_slice(x);
        let mut best: Option<(f64, &str)> = None;
        for c in &self.classes {
            let diff = &xv - &c.mean;
            let solved = c.chol.solve(&diff);
            let maha = diff.dot(&solved);
            let score = c.log_prior - 0.5 * c.log_det - 0.5 * maha;
            if best.is_none_or(|(s, _)| score > s) {
                best = Some((score, &c.label));
            }
        }
        best.expect("at least one class").1
    }
}

/// Stratified k-fold cross-validated misclassification rate of the QDA
/// classifier. Folds are dealt per class after a seeded shuffle; the
/// returned rate pools errors over all held-out points.
pub fn qda_cv_error(data: &LabeledPointSet, folds: usize, seed: u64) -> Result<f64> {
    if folds < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {folds}")));
    }
    let classes = data.classes();
    let mut fold_of = vec![0usize; data.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for class in &classes {
        let mut indices: Vec<usize> = data
            .labels()
            .iter()
            .enumerate()
            .filter(|(_, l)| *l == class)
            .map(|(i, _)| i)
            .collect();
        if indices.len() < folds {
            return Err(Error::Config(format!(
                "class {class} has {} points, fewer than {folds} folds",
                indices.len()
            )));
        }
        indices.shuffle(&mut rng);
        for (pos, &i) in indices.iter().enumerate() {
            fold_of[i] = pos % folds;
        }
    }
    let mut errors = 0usize;
    for fold in 0..folds {
        let train: Vec<usize> = (0..data.len()).filter(|&i| fold_of[i] != fold).collect();
        let test: Vec<usize> = (0..data.len()).filter(|&i| fold_of[i] == fold).collect();
        let train_points = data.points().select(&train);
        let train_labels: Vec<String> = train.iter().map(|&i| data.labels()[i].clone()).collect();
        let model = QdaModel::fit(&train_points, &train_labels)?;
        for &i in &test {
            if model.classify(data.points().point(i)) != data.labels()[i] {
                errors += 1;
            }
        }
    }
    Ok(errors as f64 / data.len() as f64)
}
