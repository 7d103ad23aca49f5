//! Weighted ensembles of k-NN plug-in estimators: bias-basis construction,
//! minimum-norm and norm-budgeted weight solvers, and the end-to-end
//! ensemble estimator.
//!
//! The ensemble runs the plug-in estimator at several neighborhood scales
//! k(l) = round(l * sqrt(M2)) and combines them with weights chosen so the
//! leading bias terms (proportional to l^(i/d) for i = 1..d-1) cancel.

use crate::divergence::{clamp_ratio, Functional, SplitLayout};
use crate::error::{Error, Result};
use crate::knn::{density_from_rho, unit_ball_volume, KnnIndex, PointSet};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Bias basis evaluated on the ensemble index values: entry (i, j) holds
/// l_j^(i/d) for i in 1..=d-1.
#[derive(Debug, Clone)]
pub struct BasisMatrix {
    entries: DMatrix<f64>,
    l_bar: Vec<f64>,
    d: usize,
}

impl BasisMatrix {
    /// Number of bias terms (d - 1).
    pub fn n_terms(&self) -> usize {
        self.entries.nrows()
    }

    /// Number of ensemble members L.
    pub fn n_members(&self) -> usize {
        self.l_bar.len()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn l_bar(&self) -> &[f64] {
        &self.l_bar
    }

    /// Basis value for term index i (1-based, in 1..=d-1) and member j.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.entries[(i - 1, j)]
    }

    pub(crate) fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }
}

/// Builds the bias basis l^(i/d) for i = 1..d-1 over the index values.
/// The matrix is empty when d = 1.
pub fn basis_matrix(l_bar: &[f64], d: usize) -> Result<BasisMatrix> {
    if d == 0 {
        return Err(Error::InvalidDimension(0));
    }
    if l_bar.is_empty() {
        return Err(Error::Config("ensemble index set is empty".into()));
    }
    if let Some(&bad) = l_bar.iter().find(|&&l| !(l > 0.0) || !l.is_finite()) {
        return Err(Error::Config(format!(
            "ensemble index values must be positive finite reals, got {bad}"
        )));
    }
    let rows = d - 1;
    let cols = l_bar.len();
    let entries = DMatrix::from_fn(rows, cols, |i, j| l_bar[j].powf((i + 1) as f64 / d as f64));
    Ok(BasisMatrix {
        entries,
        l_bar: l_bar.to_vec(),
        d,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    Exact,
    Relaxed,
}

/// Solved ensemble weights plus achieved objective and residuals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSolution {
    pub w: Vec<f64>,
    /// Achieved value of the relaxed objective; absent in exact mode.
    pub epsilon: Option<f64>,
    /// |gamma_w(i)| = |sum_l w(l) * l^(i/d)| for each bias term.
    pub gamma_residuals: Vec<f64>,
    pub norm_sq: f64,
    pub mode: WeightMode,
}

impl WeightSolution {
    pub fn sum(&self) -> f64 {
        self.w.iter().sum()
    }
}

fn gamma_residuals(basis: &BasisMatrix, w: &DVector<f64>) -> Vec<f64> {
    (basis.entries() * w).iter().map(|g| g.abs()).collect()
}

/// Stacks the sum-to-one row on top of the basis rows.
fn constraint_matrix(basis: &BasisMatrix) -> (DMatrix<f64>, DVector<f64>) {
    let l = basis.n_members();
    let rows = 1 + basis.n_terms();
    let mut a = DMatrix::zeros(rows, l);
    for j in 0..l {
        a[(0, j)] = 1.0;
    }
    a.view_mut((1, 0), (basis.n_terms(), l))
        .copy_from(basis.entries());
    let mut b = DVector::zeros(rows);
    b[0] = 1.0;
    (a, b)
}

/// Minimum-Euclidean-norm weights that cancel every bias basis term while
/// summing to one. Solved through QR of the transposed constraint matrix;
/// rank deficiency (for example duplicate index values) is an error.
pub fn solve_exact_weights(basis: &BasisMatrix) -> Result<WeightSolution> {
    let l = basis.n_members();
    let d = basis.dim();
    if l + 1 <= d {
        return Err(Error::Config(format!(
            "exact weights need L > d - 1 ensemble members, got L = {l} with d = {d}"
        )));
    }
    let (a, b) = constraint_matrix(basis);
    let qr = a.transpose().qr();
    let r = qr.r();
    let rows = a.nrows();
    let max_diag = (0..rows).map(|i| r[(i, i)].abs()).fold(0.0f64, f64::max);
    if (0..rows).any(|i| r[(i, i)].abs() <= 1e-12 * max_diag) || max_diag == 0.0 {
        return Err(Error::DegenerateBasis);
    }
    // min-norm solution lies in the row space: w = Q y with R^T y = b
    let y = r
        .transpose()
        .solve_lower_triangular(&b)
        .ok_or(Error::DegenerateBasis)?;
    let w = qr.q() * y;
    let resid = (&a * &w - &b).amax();
    if resid > 1e-8 {
        return Err(Error::DegenerateBasis);
    }
    Ok(WeightSolution {
        norm_sq: w.norm_squared(),
        gamma_residuals: gamma_residuals(basis, &w),
        w: w.iter().copied().collect(),
        epsilon: None,
        mode: WeightMode::Exact,
    })
}

/// Orthonormal basis of the sum-zero subspace of R^L (Helmert columns).
/// Substituting w = uniform + basis * z keeps sum(w) = 1 exact by
/// construction and turns ||w||^2 into 1/L + ||z||^2.
fn sum_zero_basis(l: usize) -> DMatrix<f64> {
    let mut b = DMatrix::zeros(l, l - 1);
    for j in 0..l - 1 {
        let jj = (j + 1) as f64;
        let norm = (jj * (jj + 1.0)).sqrt();
        for i in 0..=j {
            b[(i, j)] = 1.0 / norm;
        }
        b[(j + 1, j)] = -jj / norm;
    }
    b
}

/// Least-norm solution of rows * z = rhs via SVD, or None when the system
/// is inconsistent (checked row by row at rounding scale).
fn least_norm_solve(rows: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let svd = rows.clone().svd(true, true);
    let max_sv = svd.singular_values.amax();
    let eps = if max_sv > 0.0 { 1e-13 * max_sv } else { 1e-300 };
    let z = svd.solve(rhs, eps).ok()?;
    let z_norm = z.norm();
    for i in 0..rows.nrows() {
        let pred = (rows.row(i) * &z)[(0, 0)];
        let tol = 1e-10 * (1.0 + rhs[i].abs() + rows.row(i).norm() * z_norm);
        if (pred - rhs[i]).abs() > tol {
            return None;
        }
    }
    Some(z)
}

/// Minimum squared norm subject to sum(w) = 1 and |scaled_i . w| <= eps for
/// every row, found by enumerating active sets (each scaled row free, tight
/// at +eps, or tight at -eps). The convex QP optimum is the minimum-norm
/// point of its own active constraints, so it appears among the candidates.
/// Cost grows as 3^(d-1); intended for the moderate dimensions where the
/// estimator itself is practical.
fn min_norm_in_box(scaled: &DMatrix<f64>, eps: f64) -> Option<(DVector<f64>, f64)> {
    let m = scaled.nrows();
    let l = scaled.ncols();
    let w0 = DVector::from_element(l, 1.0 / l as f64);
    let feas_tol = 1e-12 * (1.0 + eps);
    let residual = |w: &DVector<f64>, i: usize| (scaled.row(i) * w)[(0, 0)];

    if m == 0 {
        let nsq = w0.norm_squared();
        return Some((w0, nsq));
    }
    if l == 1 {
        // the sum constraint forces w = [1]; only feasibility is in question
        let w = DVector::from_element(1, 1.0);
        if (0..m).all(|i| residual(&w, i).abs() <= eps + feas_tol) {
            return Some((w, 1.0));
        }
        return None;
    }

    let basis = sum_zero_basis(l);
    let reduced = scaled * &basis; // m x (L-1)
    let base_resid: Vec<f64> = (0..m).map(|i| residual(&w0, i)).collect();

    // candidate for one active-set assignment: rows tight at sign * eps
    let solve_assignment = |active: &[(usize, f64)]| -> Option<DVector<f64>> {
        if active.is_empty() {
            return Some(w0.clone());
        }
        let rows = DMatrix::from_fn(active.len(), l - 1, |r, c| reduced[(active[r].0, c)]);
        let rhs = DVector::from_fn(active.len(), |r, _| {
            active[r].1 * eps - base_resid[active[r].0]
        });
        let z = least_norm_solve(&rows, &rhs)?;
        Some(&w0 + &basis * z)
    };

    if eps == 0.0 {
        // every row is forced to zero: single all-active system
        let active: Vec<(usize, f64)> = (0..m).map(|i| (i, 1.0)).collect();
        let w = solve_assignment(&active)?;
        let nsq = w.norm_squared();
        return Some((w, nsq));
    }

    let mut best: Option<(DVector<f64>, f64)> = None;
    let n_assign = 3usize.pow(m as u32);
    for code in 0..n_assign {
        let mut states = Vec::with_capacity(m);
        let mut c = code;
        for _ in 0..m {
            states.push(c % 3); // 0 free, 1 tight at +eps, 2 tight at -eps
            c /= 3;
        }
        let active: Vec<(usize, f64)> = (0..m)
            .filter(|&i| states[i] != 0)
            .map(|i| (i, if states[i] == 1 { 1.0 } else { -1.0 }))
            .collect();
        let Some(w) = solve_assignment(&active) else {
            continue;
        };
        let feasible = (0..m)
            .filter(|&i| states[i] == 0)
            .all(|i| residual(&w, i).abs() <= eps + feas_tol);
        if !feasible {
            continue;
        }
        let nsq = w.norm_squared();
        if best.as_ref().is_none_or(|(_, bn)| nsq < *bn) {
            best = Some((w, nsq));
        }
    }
    best
}

/// Norm-budgeted weights: minimizes the worst scaled bias residual
/// max_i |gamma_w(i) * T^(1/2 - i/2d)| subject to sum(w) = 1 and
/// ||w||^2 <= eta. Deterministic bisection on the objective with a
/// minimum-norm feasibility subproblem at each level.
pub fn solve_relaxed_weights(basis: &BasisMatrix, t: usize, eta: f64) -> Result<WeightSolution> {
    let l = basis.n_members();
    let d = basis.dim();
    if t < 2 {
        return Err(Error::Config(format!("need T >= 2 samples, got {t}")));
    }
    let floor = 1.0 / l as f64;
    if eta < floor {
        return Err(Error::InfeasibleBudget { eta, floor });
    }
    let m = basis.n_terms();
    // scale row i by T^(1/2 - i/2d)
    let tf = t as f64;
    let mut scaled = basis.entries().clone();
    for i in 0..m {
        let s = tf.powf(0.5 - (i + 1) as f64 / (2.0 * d as f64));
        for j in 0..l {
            scaled[(i, j)] *= s;
        }
    }

    let finish = |w: DVector<f64>| -> WeightSolution {
        let achieved = (0..m)
            .map(|i| (scaled.row(i) * &w)[(0, 0)].abs())
            .fold(0.0f64, f64::max);
        WeightSolution {
            norm_sq: w.norm_squared(),
            gamma_residuals: gamma_residuals(basis, &w),
            epsilon: Some(achieved),
            w: w.iter().copied().collect(),
            mode: WeightMode::Relaxed,
        }
    };

    // zero residual attainable within budget: done
    if let Some((w, nsq)) = min_norm_in_box(&scaled, 0.0) {
        if nsq <= eta + 1e-12 {
            return Ok(finish(w));
        }
    }
    if m == 0 {
        // no bias terms: uniform weights are the minimum-norm point
        let w = DVector::from_element(l, floor);
        return Ok(finish(w));
    }

    // uniform weights are always feasible at their own residual level
    let uniform = DVector::from_element(l, floor);
    let mut hi = (0..m)
        .map(|i| (scaled.row(i) * &uniform)[(0, 0)].abs())
        .fold(0.0f64, f64::max);
    let mut best = min_norm_in_box(&scaled, hi)
        .filter(|(_, nsq)| *nsq <= eta + 1e-12)
        .map(|(w, _)| w)
        .unwrap_or(uniform);
    let mut lo = 0.0;
    while hi - lo > 1e-9 {
        let mid = 0.5 * (lo + hi);
        match min_norm_in_box(&scaled, mid) {
            Some((w, nsq)) if nsq <= eta + 1e-12 => {
                hi = mid;
                best = w;
            }
            _ => lo = mid,
        }
    }
    Ok(finish(best))
}

/// Everything the ensemble estimator consumes: index set, split fraction,
/// norm budget, dimension, f2 sample count, and the split seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub d: usize,
    /// Total number of f2 sample points (split into evaluation and
    /// reference parts).
    pub t: usize,
    /// Ensemble index values; k(l) = round(l * sqrt(M2)).
    pub l_bar: Vec<f64>,
    /// Fraction of the f2 sample used as density reference (M2 = round(aT)).
    pub alpha_frac: f64,
    /// Norm budget for the relaxed weight problem.
    pub eta: f64,
    pub seed: u64,
    pub weight_mode: WeightMode,
}

impl EnsembleConfig {
    pub fn new(d: usize, t: usize) -> Self {
        Self {
            d,
            t,
            l_bar: Self::default_l_bar(d),
            alpha_frac: 0.5,
            eta: 1.0,
            seed: 0,
            weight_mode: WeightMode::Relaxed,
        }
    }

    /// Default index set: max(d, 5) evenly spaced values on [1.5, 3.0].
    pub fn default_l_bar(d: usize) -> Vec<f64> {
        let count = d.max(5);
        (0..count)
            .map(|j| 1.5 + 1.5 * j as f64 / (count - 1) as f64)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::InvalidDimension(0));
        }
        if self.t < 2 {
            return Err(Error::Config(format!(
                "need at least 2 f2 samples, got {}",
                self.t
            )));
        }
        if !(self.alpha_frac > 0.0 && self.alpha_frac < 1.0) {
            return Err(Error::Config(format!(
                "split fraction must lie in (0, 1), got {}",
                self.alpha_frac
            )));
        }
        let l = self.l_bar.len();
        if l + 1 <= self.d {
            return Err(Error::Config(format!(
                "ensemble needs L > d - 1 members, got L = {l} with d = {}",
                self.d
            )));
        }
        if let Some(&bad) = self.l_bar.iter().find(|&&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::Config(format!(
                "ensemble index values must be positive finite reals, got {bad}"
            )));
        }
        for i in 0..l {
            for j in (i + 1)..l {
                if self.l_bar[i] == self.l_bar[j] {
                    return Err(Error::Config(format!(
                        "ensemble index values must be distinct ({} repeats)",
                        self.l_bar[i]
                    )));
                }
            }
        }
        let floor = 1.0 / l as f64;
        if self.eta < floor {
            return Err(Error::InfeasibleBudget {
                eta: self.eta,
                floor,
            });
        }
        Ok(())
    }

    /// Reference part size M2 = round(alpha_frac * T), both parts nonempty.
    pub fn m2(&self) -> usize {
        crate::divergence::reference_count(self.t, self.alpha_frac)
    }

    pub fn n_eval(&self) -> usize {
        self.t - self.m2()
    }

    /// Neighborhood size at index value l: max(1, round(l * sqrt(M2))).
    pub fn k_of_l(&self, l: f64) -> usize {
        ((l * (self.m2() as f64).sqrt()).round() as usize).max(1)
    }
}

/// Plug-in estimate at one neighborhood scale of the ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerScaleEstimate {
    pub l: f64,
    pub k: usize,
    pub value: f64,
}

/// Ensemble estimator output: the weighted value, the per-scale plug-in
/// values it combines, and the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleEstimate {
    pub value: f64,
    pub per_scale: Vec<PerScaleEstimate>,
    pub weights: WeightSolution,
    pub n_eval: usize,
    pub m1: usize,
    pub m2: usize,
    pub ratio_clamps: usize,
    pub degenerate_rho: usize,
}

/// Shared state of one ensemble run: clamped likelihood ratios per scale and
/// evaluation point, plus the solved weights. Evaluating a functional only
/// re-applies g, so sweeps over functional parameters reuse the k-NN work.
#[derive(Debug, Clone)]
pub struct RatioEnsemble {
    ratios: Vec<Vec<f64>>,
    ks: Vec<usize>,
    l_bar: Vec<f64>,
    weights: WeightSolution,
    n_eval: usize,
    m1: usize,
    m2: usize,
    ratio_clamps: usize,
    degenerate_rho: usize,
}

impl RatioEnsemble {
    pub fn build(f1_sample: &PointSet, f2_sample: &PointSet, config: &EnsembleConfig) -> Result<Self> {
        config.validate()?;
        let d = config.d;
        if f1_sample.dim() != d || f2_sample.dim() != d {
            return Err(Error::ShapeMismatch {
                expected: d,
                got: if f1_sample.dim() != d {
                    f1_sample.dim()
                } else {
                    f2_sample.dim()
                },
            });
        }
        if f2_sample.len() != config.t {
            return Err(Error::Config(format!(
                "config claims T = {} f2 samples but {} were provided",
                config.t,
                f2_sample.len()
            )));
        }
        let m1 = f1_sample.len();
        let m2 = config.m2();
        let cap = m1.min(m2);
        let ks: Vec<usize> = config.l_bar.iter().map(|&l| config.k_of_l(l)).collect();
        for (&l, &k) in config.l_bar.iter().zip(&ks) {
            if k > cap {
                return Err(Error::Config(format!(
                    "k({l}) = {k} exceeds min(M1, M2) = {cap}; shrink l or add samples"
                )));
            }
        }
        let k_max = *ks.iter().max().expect("nonempty l_bar");

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let layout = SplitLayout::random(config.t, config.alpha_frac, &mut rng)?;
        let ref2 = f2_sample.select(layout.ref2_indices());
        let idx1 = KnnIndex::build(f1_sample);
        let idx2 = KnnIndex::build(&ref2);
        let ball = unit_ball_volume(d)?;

        struct PointRow {
            ratios: Vec<f64>,
            clamps: usize,
            degenerate: usize,
        }

        let rows: Result<Vec<PointRow>> = layout
            .eval_indices()
            .par_iter()
            .map(|&i| {
                let x = f2_sample.point(i);
                let d1 = idx1.k_nearest_sorted(x, k_max)?;
                let d2 = idx2.k_nearest_sorted(x, k_max)?;
                let mut clamps = 0usize;
                let mut degenerate = 0usize;
                let mut row = Vec::with_capacity(ks.len());
                for &k in &ks {
                    let dens1 = density_from_rho(d1[k - 1], k, m1, d, ball);
                    let dens2 = density_from_rho(d2[k - 1], k, m2, d, ball);
                    degenerate += dens1.degenerate as usize + dens2.degenerate as usize;
                    let ratio = clamp_ratio(dens1.value / dens2.value, &mut clamps);
                    if !ratio.is_finite() {
                        return Err(Error::NonFiniteRatio { index: i });
                    }
                    row.push(ratio);
                }
                Ok(PointRow {
                    ratios: row,
                    clamps,
                    degenerate,
                })
            })
            .collect();
        let rows = rows?;

        let n_eval = layout.n_eval();
        let mut ratios = vec![Vec::with_capacity(n_eval); ks.len()];
        let mut ratio_clamps = 0;
        let mut degenerate_rho = 0;
        for row in rows {
            ratio_clamps += row.clamps;
            degenerate_rho += row.degenerate;
            for (per_l, &r) in ratios.iter_mut().zip(row.ratios.iter()) {
                per_l.push(r);
            }
        }

        let basis = basis_matrix(&config.l_bar, d)?;
        let weights = match config.weight_mode {
            WeightMode::Exact => solve_exact_weights(&basis)?,
            WeightMode::Relaxed => solve_relaxed_weights(&basis, config.t, config.eta)?,
        };

        Ok(Self {
            ratios,
            ks,
            l_bar: config.l_bar.clone(),
            weights,
            n_eval,
            m1,
            m2,
            ratio_clamps,
            degenerate_rho,
        })
    }

    pub fn weights(&self) -> &WeightSolution {
        &self.weights
    }

    /// Applies the functional to the stored ratios. The returned value is
    /// the exact dot product of the weights with the per-scale estimates.
    pub fn evaluate(&self, f: &Functional) -> Result<EnsembleEstimate> {
        f.validate()?;
        let mut per_scale = Vec::with_capacity(self.ks.len());
        for ((&l, &k), ratios) in self.l_bar.iter().zip(&self.ks).zip(&self.ratios) {
            let mut sum = 0.0;
            for &r in ratios {
                sum += f.eval(r)?;
            }
            per_scale.push(PerScaleEstimate {
                l,
                k,
                value: sum / self.n_eval as f64,
            });
        }
        let mut value = 0.0;
        for (w, ps) in self.weights.w.iter().zip(&per_scale) {
            value += w * ps.value;
        }
        Ok(EnsembleEstimate {
            value,
            per_scale,
            weights: self.weights.clone(),
            n_eval: self.n_eval,
            m1: self.m1,
            m2: self.m2,
            ratio_clamps: self.ratio_clamps,
            degenerate_rho: self.degenerate_rho,
        })
    }
}

/// End-to-end weighted ensemble estimate: seeded split of the f2 sample,
/// per-scale plug-in estimates over a shared split, solved weights, and the
/// weighted combination.
pub fn ensemble_estimate(
    f1_sample: &PointSet,
    f2_sample: &PointSet,
    config: &EnsembleConfig,
    f: &Functional,
) -> Result<EnsembleEstimate> {
    RatioEnsemble::build(f1_sample, f2_sample, config)?.evaluate(f)
}
