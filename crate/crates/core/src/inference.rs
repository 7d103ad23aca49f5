//! Resampling-based uncertainty quantification for the ensemble estimator:
//! bootstrap confidence intervals, a permutation test of distributional
//! equality, and a Q-Q / Kolmogorov-Smirnov normality diagnostic for trial
//! batches.
//!
//! The estimator is asymptotically normal but its limiting variance is not
//! computable from data, so the bootstrap is the operational inference
//! engine and the equality test uses a permutation null.

use crate::divergence::Functional;
use crate::ensemble::{ensemble_estimate, EnsembleConfig};
use crate::error::{Error, Result};
use crate::knn::PointSet;
use crate::numeric::{derive_seed, ks_statistic_vs_normal, mean, normal_quantile, sample_sd};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

const SALT_RESAMPLE: u64 = 0x5245_5350;
const SALT_SPLIT: u64 = 0x5350_4C54;
const SALT_PERMUTE: u64 = 0x5045_524D;

/// Fraction of replicates allowed to fail before the whole run aborts.
const FAILURE_BUDGET: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiMethod {
    Percentile,
    Normal,
}

/// Bootstrap distribution of the estimator with a confidence interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    /// Surviving replicate estimates, in replicate order.
    pub replicates: Vec<f64>,
    /// Estimate on the original data.
    pub point: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub level: f64,
    pub method: CiMethod,
    /// Replicates dropped due to estimator failure (at most 1% of B).
    pub failed: usize,
}

/// Percentile interval from order statistics: the ceil(B(1-level)/2)-th and
/// ceil(B(1+level)/2)-th smallest replicates (1-indexed). Both endpoints are
/// members of the replicate multiset.
fn percentile_ci(sorted: &[f64], level: f64) -> (f64, f64) {
    let b = sorted.len();
    // snap values that are integers up to rounding noise before taking ceil
    let order_index = |x: f64| -> usize {
        let snapped = if (x - x.round()).abs() < 1e-9 {
            x.round()
        } else {
            x.ceil()
        };
        (snapped as usize).clamp(1, b)
    };
    let lo_idx = order_index(b as f64 * (1.0 - level) / 2.0);
    let hi_idx = order_index(b as f64 * (1.0 + level) / 2.0);
    (sorted[lo_idx - 1], sorted[hi_idx - 1])
}

/// Runs `b` replicates of `stat` over independently resampled copies of the
/// two samples. Replicate i draws its RNG stream from (master, i), so
/// results are independent of execution order. Fails when more than 1% of
/// replicates error; rarer failures are dropped and counted.
pub(crate) fn bootstrap_replicates<F>(
    f1_sample: &PointSet,
    f2_sample: &PointSet,
    master_seed: u64,
    b: usize,
    stat: F,
) -> Result<(Vec<f64>, usize)>
where
    F: Fn(&PointSet, &PointSet, u64) -> Result<f64> + Sync,
{
    use rand::SeedableRng;
    let master = derive_seed(master_seed, SALT_RESAMPLE);
    let outcomes: Vec<Result<f64>> = (0..b)
        .into_par_iter()
        .map(|i| {
            let rep_seed = derive_seed(master, i as u64);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(rep_seed);
            let r1 = f1_sample.resample_with_replacement(f1_sample.len(), &mut rng);
            let r2 = f2_sample.resample_with_replacement(f2_sample.len(), &mut rng);
            stat(&r1, &r2, derive_seed(rep_seed, SALT_SPLIT))
        })
        .collect();
    let threshold = (FAILURE_BUDGET * b as f64).floor() as usize;
    let failed = outcomes.iter().filter(|r| r.is_err()).count();
    if failed > threshold {
        return Err(Error::ReplicateFailures {
            failed,
            total: b,
            threshold,
        });
    }
    let replicates: Vec<f64> = outcomes.into_iter().flatten().collect();
    Ok((replicates, failed))
}

pub(crate) fn ci_from_replicates(
    replicates: &[f64],
    point: f64,
    level: f64,
    method: CiMethod,
) -> (f64, f64) {
    match method {
        CiMethod::Percentile => {
            let mut sorted = replicates.to_vec();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            percentile_ci(&sorted, level)
        }
        CiMethod::Normal => {
            let z = normal_quantile((1.0 + level) / 2.0);
            let sd = sample_sd(replicates);
            (point - z * sd, point + z * sd)
        }
    }
}

/// Bootstrap confidence interval for the ensemble divergence estimate.
/// Each replicate resamples both samples with replacement (sizes preserved)
/// and re-runs the full estimator with a replicate-specific split seed.
pub fn bootstrap_estimate(
    f1_sample: &PointSet,
    f2_sample: &PointSet,
    config: &EnsembleConfig,
    f: &Functional,
    b: usize,
    level: f64,
    method: CiMethod,
) -> Result<BootstrapResult> {
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
    let point = ensemble_estimate(f1_sample, f2_sample, config, f)?.value;
    let (replicates, failed) =
        bootstrap_replicates(f1_sample, f2_sample, config.seed, b, |r1, r2, split_seed| {
            let mut cfg = config.clone();
            cfg.seed = split_seed;
            Ok(ensemble_estimate(r1, r2, &cfg, f)?.value)
        })?;
    let (ci_low, ci_high) = ci_from_replicates(&replicates, point, level, method);
    Ok(BootstrapResult {
        replicates,
        point,
        ci_low,
        ci_high,
        level,
        method,
        failed,
    })
}

/// Trial estimates standardized by their own mean and standard deviation,
/// paired with standard-normal quantiles, plus the KS distance from the
/// standard normal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalityDiagnostic {
    /// Standardized trial estimates, sorted ascending.
    pub normalized_values: Vec<f64>,
    /// Standard-normal quantiles at (i - 0.5) / n.
    pub theoretical_quantiles: Vec<f64>,
    pub ks_statistic: f64,
}

/// Standardizes trial estimates and compares them against the standard
/// normal: sorted values paired with quantiles, and the KS statistic.
pub fn qq_diagnostic(trial_estimates: &[f64]) -> Result<NormalityDiagnostic> {
    let n = trial_estimates.len();
    if n < 20 {
        return Err(Error::Config(format!(
            "normality diagnostic needs at least 20 trials, got {n}"
        )));
    }
    let mu = mean(trial_estimates);
    let sd = sample_sd(trial_estimates);
    if sd <= 0.0 {
        return Err(Error::DegenerateTrials(n));
    }
    let mut normalized: Vec<f64> = trial_estimates.iter().map(|x| (x - mu) / sd).collect();
    normalized.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let theoretical: Vec<f64> = (1..=n)
        .map(|i| normal_quantile((i as f64 - 0.5) / n as f64))
        .collect();
    let ks = ks_statistic_vs_normal(&normalized);
    Ok(NormalityDiagnostic {
        normalized_values: normalized,
        theoretical_quantiles: theoretical,
        ks_statistic: ks,
    })
}

/// Permutation test report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    /// Divergence estimate on the original labeling.
    pub statistic: f64,
    /// (1 + #{null >= observed}) / (surviving permutations + 1).
    pub p_value: f64,
    pub permutations_used: usize,
    pub failed: usize,
}

/// Tests the null hypothesis that both samples come from one distribution.
/// Pools the samples, recomputes the divergence estimate under B random
/// relabelings, and reports the upper-tail permutation p-value.
pub fn two_sample_test(
    f1_sample: &PointSet,
    f2_sample: &PointSet,
    config: &EnsembleConfig,
    f: &Functional,
    b: usize,
) -> Result<TestReport> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    if b < 100 {
        return Err(Error::Config(format!(
            "permutation test needs at least 100 permutations, got {b}"
        )));
    }
    let observed = ensemble_estimate(f1_sample, f2_sample, config, f)?.value;

    let m1 = f1_sample.len();
    let total = m1 + f2_sample.len();
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(total);
    rows.extend(f1_sample.iter_points().map(|p| p.to_vec()));
    rows.extend(f2_sample.iter_points().map(|p| p.to_vec()));
    let pool = PointSet::from_rows(&rows)?;

    let master = derive_seed(config.seed, SALT_PERMUTE);
    let outcomes: Vec<Result<f64>> = (0..b)
        .into_par_iter()
        .map(|i| {
            let perm_seed = derive_seed(master, i as u64);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(perm_seed);
            let mut indices: Vec<usize> = (0..total).collect();
            indices.shuffle(&mut rng);
            let null_f1 = pool.select(&indices[..m1]);
            let null_f2 = pool.select(&indices[m1..]);
            let mut cfg = config.clone();
            cfg.seed = derive_seed(perm_seed, SALT_SPLIT);
            Ok(ensemble_estimate(&null_f1, &null_f2, &cfg, f)?.value)
        })
        .collect();
    let threshold = (FAILURE_BUDGET * b as f64).floor() as usize;
    let failed = outcomes.iter().filter(|r| r.is_err()).count();
    if failed > threshold {
        return Err(Error::ReplicateFailures {
            failed,
            total: b,
            threshold,
        });
    }
    let null_stats: Vec<f64> = outcomes.into_iter().flatten().collect();
    let b_eff = null_stats.len();
    let exceed = null_stats.iter().filter(|&&s| s >= observed).count();
    Ok(TestReport {
        statistic: observed,
        p_value: (1 + exceed) as f64 / (b_eff + 1) as f64,
        permutations_used: b_eff,
        failed,
    })
}
