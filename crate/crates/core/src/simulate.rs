//! Truncated-Gaussian sampling on the unit cube and Monte Carlo harnesses:
//! a normality experiment over repeated trials and an MSE convergence sweep
//! against an externally supplied truth value.

use crate::divergence::Functional;
use crate::ensemble::{ensemble_estimate, EnsembleConfig};
use crate::error::{Error, Result};
use crate::inference::{qq_diagnostic, NormalityDiagnostic};
use crate::knn::PointSet;
use crate::numeric::{adaptive_simpson, derive_seed, mean, normal_cdf, ols_slope};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Acceptance-rate floor for the rejection sampler.
const ACCEPTANCE_FLOOR: f64 = 1e-4;
const PROBE_PROPOSALS: usize = 20_000;

// salts for deriving independent RNG streams per purpose
const SALT_TRIAL: u64 = 0x7452_4941;
const SALT_SPLIT: u64 = 0x5350_4C54;
const SALT_F1: u64 = 1;
const SALT_F2: u64 = 2;

/// Isotropic Gaussian restricted and renormalized to the unit cube.
///
/// The scale parameter can be read as a variance (covariance sigma * I,
/// the default) or as a standard deviation, controlled by
/// `sigma_is_variance`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncatedGaussianSpec {
    pub mu: Vec<f64>,
    pub sigma: f64,
    pub sigma_is_variance: bool,
}

impl TruncatedGaussianSpec {
    pub fn isotropic(d: usize, mu: f64, sigma: f64, sigma_is_variance: bool) -> Self {
        Self {
            mu: vec![mu; d],
            sigma,
            sigma_is_variance,
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn std_dev(&self) -> f64 {
        if self.sigma_is_variance {
            self.sigma.sqrt()
        } else {
            self.sigma
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mu.is_empty() {
            return Err(Error::InvalidDimension(0));
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::Config(format!(
                "sigma must be a positive real, got {}",
                self.sigma
            )));
        }
        if self.mu.iter().any(|m| !m.is_finite()) {
            return Err(Error::NonFiniteCoordinate { index: 0 });
        }
        Ok(())
    }

    /// Log density at a point; -inf outside the unit cube. The density is a
    /// product of renormalized one-dimensional truncated normals.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.dim());
        let s = self.std_dev();
        let mut ld = 0.0;
        for (xi, mi) in x.iter().zip(&self.mu) {
            if !(0.0..=1.0).contains(xi) {
                return f64::NEG_INFINITY;
            }
            let z = truncation_mass_1d(*mi, s);
            let t = (xi - mi) / s;
            ld += -0.5 * t * t - (s * (2.0 * std::f64::consts::PI).sqrt() * z).ln();
        }
        ld
    }
}

/// Probability mass a Normal(mu, sd^2) places on [0, 1].
pub fn truncation_mass_1d(mu: f64, sd: f64) -> f64 {
    normal_cdf((1.0 - mu) / sd) - normal_cdf((0.0 - mu) / sd)
}

/// One-dimensional truncated normal density on [0, 1].
fn density_1d(x: f64, mu: f64, sd: f64) -> f64 {
    let z = truncation_mass_1d(mu, sd);
    let t = (x - mu) / sd;
    (-0.5 * t * t).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt() * z)
}

/// Forward KL divergence between two truncated-Gaussian specs, computed by
/// one-dimensional adaptive quadrature per coordinate (the isotropic
/// densities factorize, so the divergence is the sum over coordinates).
/// Independent of the k-NN estimation path.
pub fn true_kl(spec1: &TruncatedGaussianSpec, spec2: &TruncatedGaussianSpec) -> Result<f64> {
    spec1.validate()?;
    spec2.validate()?;
    if spec1.dim() != spec2.dim() {
        return Err(Error::ShapeMismatch {
            expected: spec1.dim(),
            got: spec2.dim(),
        });
    }
    let s1 = spec1.std_dev();
    let s2 = spec2.std_dev();
    let mut total = 0.0;
    for (m1, m2) in spec1.mu.iter().zip(&spec2.mu) {
        total += adaptive_simpson(
            |x| {
                let f1 = density_1d(x, *m1, s1);
                let f2 = density_1d(x, *m2, s2);
                f1 * (f1 / f2).ln()
            },
            0.0,
            1.0,
            1e-12,
        );
    }
    Ok(total)
}

/// Chernoff alpha-coefficient between two truncated-Gaussian specs by
/// per-coordinate quadrature (the product structure factorizes it).
pub fn true_chernoff(
    spec1: &TruncatedGaussianSpec,
    spec2: &TruncatedGaussianSpec,
    alpha: f64,
) -> Result<f64> {
    spec1.validate()?;
    spec2.validate()?;
    if spec1.dim() != spec2.dim() {
        return Err(Error::ShapeMismatch {
            expected: spec1.dim(),
            got: spec2.dim(),
        });
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::AlphaOutOfRange(alpha));
    }
    let s1 = spec1.std_dev();
    let s2 = spec2.std_dev();
    let mut prod = 1.0;
    for (m1, m2) in spec1.mu.iter().zip(&spec2.mu) {
        prod *= adaptive_simpson(
            |x| density_1d(x, *m1, s1).powf(alpha) * density_1d(x, *m2, s2).powf(1.0 - alpha),
            0.0,
            1.0,
            1e-12,
        );
    }
    Ok(prod)
}

/// Draws n i.i.d. points by rejection sampling: propose from the
/// unrestricted Gaussian, accept points inside the unit cube. Deterministic
/// under the seed. Errors when the acceptance rate over a probe batch falls
/// below 1e-4.
pub fn sample_truncated_gaussian(
    spec: &TruncatedGaussianSpec,
    n: usize,
    seed: u64,
) -> Result<PointSet> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::Config("cannot sample 0 points".into()));
    }
    let d = spec.dim();
    let sd = spec.std_dev();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * d);
    let mut accepted = 0usize;
    let mut proposals = 0usize;
    let mut candidate = vec![0.0f64; d];
    while accepted < n {
        proposals += 1;
        let mut inside = true;
        for slot in candidate.iter_mut().zip(&spec.mu) {
            let z: f64 = rng.sample(StandardNormal);
            let x = slot.1 + sd * z;
            *slot.0 = x;
            inside &= (0.0..=1.0).contains(&x);
        }
        if inside {
            data.extend_from_slice(&candidate);
            accepted += 1;
        }
        if proposals == PROBE_PROPOSALS {
            let rate = accepted as f64 / proposals as f64;
            if rate < ACCEPTANCE_FLOOR {
                return Err(Error::PathologicalSpec {
                    rate,
                    floor: ACCEPTANCE_FLOOR,
                });
            }
        }
    }
    PointSet::from_flat(data, d)
}

/// Estimates from repeated independent trials sharing one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialBatch {
    pub estimates: Vec<f64>,
    pub seeds: Vec<u64>,
    pub config: EnsembleConfig,
    pub t_per_density: usize,
}

pub(crate) type TrialEstimator<'a> =
    dyn Fn(&PointSet, &PointSet, &EnsembleConfig, &Functional) -> Result<f64> + Sync + 'a;

fn run_trials(
    spec1: &TruncatedGaussianSpec,
    spec2: &TruncatedGaussianSpec,
    t_per_density: usize,
    n_trials: usize,
    config: &EnsembleConfig,
    f: &Functional,
    estimator: &TrialEstimator,
) -> Result<TrialBatch> {
    let mut trial_config = config.clone();
    trial_config.t = t_per_density;
    trial_config.validate()?;
    let master = derive_seed(config.seed, SALT_TRIAL);
    let seeds: Vec<u64> = (0..n_trials)
        .map(|i| derive_seed(master, i as u64))
        .collect();
    let estimates: Result<Vec<f64>> = seeds
        .par_iter()
        .map(|&trial_seed| {
            let f1 = sample_truncated_gaussian(spec1, t_per_density, derive_seed(trial_seed, SALT_F1))?;
            let f2 = sample_truncated_gaussian(spec2, t_per_density, derive_seed(trial_seed, SALT_F2))?;
            let mut cfg = trial_config.clone();
            cfg.seed = derive_seed(trial_seed, SALT_SPLIT);
            estimator(&f1, &f2, &cfg, f)
        })
        .collect();
    Ok(TrialBatch {
        estimates: estimates?,
        seeds,
        config: trial_config,
        t_per_density,
    })
}

/// Runs independent end-to-end ensemble estimates with fresh samples each
/// trial and feeds the estimates to the normality diagnostic.
pub fn clt_experiment(
    spec1: &TruncatedGaussianSpec,
    spec2: &TruncatedGaussianSpec,
    t_per_density: usize,
    n_trials: usize,
    config: &EnsembleConfig,
    f: &Functional,
) -> Result<(TrialBatch, NormalityDiagnostic)> {
    let estimator: &TrialEstimator =
        &|f1, f2, cfg, func| Ok(ensemble_estimate(f1, f2, cfg, func)?.value);
    clt_experiment_with(spec1, spec2, t_per_density, n_trials, config, f, estimator)
}

pub(crate) fn clt_experiment_with(
    spec1: &TruncatedGaussianSpec,
    spec2: &TruncatedGaussianSpec,
    t_per_density: usize,
    n_trials: usize,
    config: &EnsembleConfig,
    f: &Functional,
    estimator: &TrialEstimator,
) -> Result<(TrialBatch, NormalityDiagnostic)> {
    if n_trials < 20 {
        return Err(Error::Config(format!(
            "normality diagnostic needs at least 20 trials, got {n_trials}"
        )));
    }
    let batch = run_trials(spec1, spec2, t_per_density, n_trials, config, f, estimator)?;
    let diagnostic = qq_diagnostic(&batch.estimates)?;
    Ok((batch, diagnostic))
}

/// Empirical MSE against an external truth across sample sizes, with the
/// fitted log-log slope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseSweep {
    /// (T, empirical MSE) pairs.
    pub points: Vec<(usize, f64)>,
    /// OLS slope of ln MSE against ln T; NaN when degenerate.
    pub slope: f64,
    /// Set when some MSE is exactly zero and the log-log fit is undefined.
    pub degenerate: bool,
    pub truth: f64,
    pub trials_per_t: usize,
}

/// Sweeps sample sizes, estimating the divergence `trials_per_t` times at
/// each T and recording mean squared error against `truth`. The truth value
/// must come from an external oracle, never from the estimator under test.
pub fn mse_sweep(
    spec1: &TruncatedGaussianSpec,
    spec2: &TruncatedGaussianSpec,
    t_list: &[usize],
    trials_per_t: usize,
    config: &EnsembleConfig,
    f: &Functional,
    truth: f64,
) -> Result<MseSweep> {
    let estimator: &TrialEstimator =
        &|f1, f2, cfg, func| Ok(ensemble_estimate(f1, f2, cfg, func)?.value);
    mse_sweep_with(spec1, spec2, t_list, trials_per_t, config, f, truth, estimator)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn mse_sweep_with(
    spec1: &TruncatedGaussianSpec,
    spec2: &TruncatedGaussianSpec,
    t_list: &[usize],
    trials_per_t: usize,
    config: &EnsembleConfig,
    f: &Functional,
    truth: f64,
    estimator: &TrialEstimator,
) -> Result<MseSweep> {
    if t_list.len() < 4 || t_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(
            "sample size list must be strictly increasing with at least 4 entries".into(),
        ));
    }
    if trials_per_t == 0 {
        return Err(Error::Config("need at least one trial per T".into()));
    }
    let mut points = Vec::with_capacity(t_list.len());
    for (ti, &t) in t_list.iter().enumerate() {
        let mut cfg = config.clone();
        cfg.seed = derive_seed(config.seed, 1000 + ti as u64);
        let batch = run_trials(spec1, spec2, t, trials_per_t, &cfg, f, estimator)?;
        let mse = mean(
            &batch
                .estimates
                .iter()
                .map(|e| (e - truth) * (e - truth))
                .collect::<Vec<_>>(),
        );
        points.push((t, mse));
    }
    let degenerate = points.iter().any(|(_, mse)| *mse == 0.0);
    let slope = if degenerate {
        f64::NAN
    } else {
        let ln_t: Vec<f64> = points.iter().map(|(t, _)| (*t as f64).ln()).collect();
        let ln_mse: Vec<f64> = points.iter().map(|(_, mse)| mse.ln()).collect();
        ols_slope(&ln_t, &ln_mse)
    };
    Ok(MseSweep {
        points,
        slope,
        degenerate,
        truth,
        trials_per_t,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn samples_stay_in_cube() {
        let spec = TruncatedGaussianSpec::isotropic(3, 0.7, 0.1, true);
        let ps = sample_truncated_gaussian(&spec, 500, 4).unwrap();
        assert_eq!(ps.len(), 500);
        for p in ps.iter_points() {
            for &x in p {
                assert!((0.0..=1.0).contains(&x));
            }
        }
    }

    #[test]
    fn symmetric_spec_has_mean_half() {
        let spec = TruncatedGaussianSpec::isotropic(1, 0.5, 0.1, false);
        let ps = sample_truncated_gaussian(&spec, 100_000, 9).unwrap();
        let m = mean(&ps.iter_points().map(|p| p[0]).collect::<Vec<_>>());
        assert!((m - 0.5).abs() < 0.01, "mean {m}");
    }

    #[test]
    fn sampling_is_deterministic() {
        let spec = TruncatedGaussianSpec::isotropic(2, 0.3, 0.3, true);
        let a = sample_truncated_gaussian(&spec, 50, 123).unwrap();
        let b = sample_truncated_gaussian(&spec, 50, 123).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pathological_spec_is_rejected() {
        // mean far outside the cube with tiny spread: essentially nothing lands inside
        let spec = TruncatedGaussianSpec::isotropic(1, 50.0, 0.01, false);
        assert!(matches!(
            sample_truncated_gaussian(&spec, 10, 1),
            Err(Error::PathologicalSpec { .. })
        ));
    }

    #[test]
    fn kl_of_identical_specs_is_zero() {
        let spec = TruncatedGaussianSpec::isotropic(4, 0.6, 0.2, true);
        let kl = true_kl(&spec, &spec).unwrap();
        assert!(kl.abs() < 1e-10);
    }

    #[test]
    fn chernoff_of_identical_specs_is_one() {
        let spec = TruncatedGaussianSpec::isotropic(3, 0.4, 0.25, true);
        let c = true_chernoff(&spec, &spec, 0.37).unwrap();
        assert!((c - 1.0).abs() < 1e-10);
    }

    #[test]
    fn kl_truth_matches_moment_identity_in_1d() {
        // KL(f1||f2) = ln(s2 Z2 / (s1 Z1)) + E1[(x-mu2)^2]/(2 s2^2)
        //            - E1[(x-mu1)^2]/(2 s1^2), with expectations under f1
        let spec1 = TruncatedGaussianSpec::isotropic(1, 0.7, 0.1, true);
        let spec2 = TruncatedGaussianSpec::isotropic(1, 0.3, 0.3, true);
        let (m1, s1) = (0.7, spec1.std_dev());
        let (m2, s2) = (0.3, spec2.std_dev());
        let z1 = truncation_mass_1d(m1, s1);
        let z2 = truncation_mass_1d(m2, s2);
        let e = |g: &dyn Fn(f64) -> f64| {
            adaptive_simpson(|x| g(x) * super::density_1d(x, m1, s1), 0.0, 1.0, 1e-12)
        };
        let expected = (s2 * z2 / (s1 * z1)).ln() + e(&|x| (x - m2) * (x - m2)) / (2.0 * s2 * s2)
            - e(&|x| (x - m1) * (x - m1)) / (2.0 * s1 * s1);
        let got = true_kl(&spec1, &spec2).unwrap();
        assert!((got - expected).abs() < 1e-9, "got {got} expected {expected}");
    }

    #[test]
    fn mse_sweep_degenerate_double_reports_nan() {
        let spec1 = TruncatedGaussianSpec::isotropic(2, 0.7, 0.1, true);
        let spec2 = TruncatedGaussianSpec::isotropic(2, 0.3, 0.3, true);
        let config = EnsembleConfig::new(2, 100);
        let truth = 1.25;
        let estimator: &TrialEstimator = &|_, _, _, _| Ok(truth);
        let sweep = mse_sweep_with(
            &spec1,
            &spec2,
            &[50, 100, 200, 400],
            3,
            &config,
            &Functional::kl_forward(),
            truth,
            estimator,
        )
        .unwrap();
        assert!(sweep.degenerate);
        assert!(sweep.slope.is_nan());
        for (_, mse) in sweep.points {
            assert_eq!(mse, 0.0);
        }
    }

    #[test]
    fn mse_sweep_recovers_inverse_t_rate_from_synthetic_noise() {
        use std::sync::atomic::{AtomicU64, Ordering};
        let spec1 = TruncatedGaussianSpec::isotropic(2, 0.7, 0.1, true);
        let spec2 = TruncatedGaussianSpec::isotropic(2, 0.3, 0.3, true);
        let config = EnsembleConfig::new(2, 100);
        let truth = 0.8;
        let counter = AtomicU64::new(0);
        let estimator: &TrialEstimator = &|_, _, cfg, _| {
            // deterministic pseudo-noise with sd proportional to 1/sqrt(T)
            let i = counter.fetch_add(1, Ordering::Relaxed);
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, i));
            let z: f64 = rng.sample(StandardNormal);
            Ok(truth + 3.0 * z / (cfg.t as f64).sqrt())
        };
        let sweep = mse_sweep_with(
            &spec1,
            &spec2,
            &[200, 400, 800, 1600, 3200],
            100,
            &config,
            &Functional::kl_forward(),
            truth,
            estimator,
        )
        .unwrap();
        assert!(!sweep.degenerate);
        assert!(
            (sweep.slope + 1.0).abs() < 0.15,
            "slope {} should be near -1",
            sweep.slope
        );
    }

    #[test]
    fn clt_experiment_rejects_constant_estimator() {
        let spec1 = TruncatedGaussianSpec::isotropic(2, 0.7, 0.1, true);
        let spec2 = TruncatedGaussianSpec::isotropic(2, 0.3, 0.3, true);
        let config = EnsembleConfig::new(2, 100);
        let estimator: &TrialEstimator = &|_, _, _, _| Ok(1.0);
        let err = clt_experiment_with(
            &spec1,
            &spec2,
            60,
            25,
            &config,
            &Functional::kl_forward(),
            estimator,
        )
        .unwrap_err();
        assert!(matches!(err, Error::DegenerateTrials(_)));
    }
}
