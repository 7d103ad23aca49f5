//! Smooth divergence functionals g and the k-NN plug-in estimator of
//! integral functionals of the likelihood ratio f1/f2.
//!
//! The estimated quantity is the integral of g(f1(x)/f2(x)) against f2:
//! the plug-in estimate averages g over estimated ratios at evaluation
//! points split off from the f2 sample.

use crate::error::{Error, Result};
use crate::knn::{density_from_rho, unit_ball_volume, KnnIndex, PointSet};
use serde::{Deserialize, Serialize};

/// Likelihood ratios are clamped to this interval before g is evaluated.
/// Extreme ratios are a finite-sample artifact when both densities are
/// bounded away from zero; clamps are counted in the diagnostics.
pub const RATIO_CLAMP: (f64, f64) = (1e-12, 1e12);

/// A smooth functional g of the likelihood ratio. Only functionals that are
/// smooth on compact subsets of (0, inf) are constructible; non-smooth
/// choices such as total variation are rejected by omission.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Functional {
    /// g(L) = L ln L; estimates the forward KL divergence D(f1 || f2).
    KlForward,
    /// g(L) = -ln L; estimates the reverse KL divergence D(f2 || f1).
    KlReverse,
    /// g(L) = L^alpha; estimates the alpha-integral of f1^a f2^(1-a)
    /// (take (a-1)^-1 log of it for the Renyi divergence itself).
    RenyiAlpha { alpha: f64 },
    /// g(L) = L^alpha; the Chernoff alpha-coefficient integrand.
    ChernoffAlpha { alpha: f64 },
    /// Chernoff coefficient at alpha = 1/2 (the Bhattacharyya coefficient).
    Hellinger,
}

impl Functional {
    pub fn kl_forward() -> Self {
        Functional::KlForward
    }

    pub fn kl_reverse() -> Self {
        Functional::KlReverse
    }

    pub fn renyi(alpha: f64) -> Result<Self> {
        Self::check_alpha(alpha)?;
        Ok(Functional::RenyiAlpha { alpha })
    }

    pub fn chernoff(alpha: f64) -> Result<Self> {
        Self::check_alpha(alpha)?;
        Ok(Functional::ChernoffAlpha { alpha })
    }

    pub fn hellinger() -> Self {
        Functional::Hellinger
    }

    fn check_alpha(alpha: f64) -> Result<()> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::AlphaOutOfRange(alpha));
        }
        Ok(())
    }

    /// Validates the stored parameters (useful after deserialization).
    pub fn validate(&self) -> Result<()> {
        match *self {
            Functional::RenyiAlpha { alpha } | Functional::ChernoffAlpha { alpha } => {
                Self::check_alpha(alpha)
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Functional::KlForward => "kl_forward",
            Functional::KlReverse => "kl_reverse",
            Functional::RenyiAlpha { .. } => "renyi_alpha",
            Functional::ChernoffAlpha { .. } => "chernoff_alpha",
            Functional::Hellinger => "hellinger",
        }
    }

    /// Evaluates g at a positive likelihood ratio.
    pub fn eval(&self, ratio: f64) -> Result<f64> {
        if !(ratio > 0.0) || !ratio.is_finite() {
            return Err(Error::NonPositiveRatio(ratio));
        }
        self.validate()?;
        Ok(match *self {
            Functional::KlForward => ratio * ratio.ln(),
            Functional::KlReverse => -ratio.ln(),
            Functional::RenyiAlpha { alpha } | Functional::ChernoffAlpha { alpha } => {
                ratio.powf(alpha)
            }
            Functional::Hellinger => ratio.powf(0.5),
        })
    }
}

/// Evaluates the functional g at a likelihood ratio L > 0.
pub fn eval_functional(f: &Functional, ratio: f64) -> Result<f64> {
    f.eval(ratio)
}

/// Partition of the f2 sample into N evaluation points and M2 reference
/// points. Densities are estimated at the evaluation points only, against
/// the disjoint reference part.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitLayout {
    eval_indices: Vec<usize>,
    ref2_indices: Vec<usize>,
}

impl SplitLayout {
    /// Validates that the two index sets are disjoint and exhaust 0..total.
    pub fn new(eval_indices: Vec<usize>, ref2_indices: Vec<usize>, total: usize) -> Result<Self> {
        if eval_indices.is_empty() {
            return Err(Error::Config("evaluation split is empty".into()));
        }
        if ref2_indices.is_empty() {
            return Err(Error::Config("reference split is empty".into()));
        }
        if eval_indices.len() + ref2_indices.len() != total {
            return Err(Error::Config(format!(
                "split sizes {} + {} do not partition {} points",
                eval_indices.len(),
                ref2_indices.len(),
                total
            )));
        }
        let mut seen = vec![false; total];
        for &i in eval_indices.iter().chain(ref2_indices.iter()) {
            if i >= total || seen[i] {
                return Err(Error::Config(format!(
                    "split indices are not a disjoint cover (index {i})"
                )));
            }
            seen[i] = true;
        }
        Ok(Self {
            eval_indices,
            ref2_indices,
        })
    }

    /// Seeded uniformly random split with round(alpha_frac * total) points
    /// in the reference part (clamped so both parts stay nonempty).
    pub fn random<R: rand::Rng>(total: usize, alpha_frac: f64, rng: &mut R) -> Result<Self> {
        if total < 2 {
            return Err(Error::Config(format!(
                "need at least 2 points to split, got {total}"
            )));
        }
        if !(alpha_frac > 0.0 && alpha_frac < 1.0) {
            return Err(Error::Config(format!(
                "split fraction must lie in (0, 1), got {alpha_frac}"
            )));
        }
        let m2 = reference_count(total, alpha_frac);
        let mut indices: Vec<usize> = (0..total).collect();
        use rand::seq::SliceRandom;
        indices.shuffle(rng);
        let ref2_indices = indices.split_off(total - m2);
        SplitLayout::new(indices, ref2_indices, total)
    }

    pub fn n_eval(&self) -> usize {
        self.eval_indices.len()
    }

    pub fn m2(&self) -> usize {
        self.ref2_indices.len()
    }

    pub fn eval_indices(&self) -> &[usize] {
        &self.eval_indices
    }

    pub fn ref2_indices(&self) -> &[usize] {
        &self.ref2_indices
    }
}

/// round(alpha_frac * total), clamped so both split parts are nonempty.
pub fn reference_count(total: usize, alpha_frac: f64) -> usize {
    ((alpha_frac * total as f64).round() as usize).clamp(1, total - 1)
}

/// Output of the plug-in estimator for one (k1, k2) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlugInEstimate {
    /// Mean of g over the estimated ratios at the evaluation points.
    pub value: f64,
    pub k1: usize,
    pub k2: usize,
    /// Estimated likelihood ratios per evaluation point, when retained.
    pub per_point_ratios: Option<Vec<f64>>,
    /// Number of ratios clamped into [`RATIO_CLAMP`].
    pub ratio_clamps: usize,
    /// Number of neighbor distances clamped to the distance floor.
    pub degenerate_rho: usize,
}

#[inline]
pub(crate) fn clamp_ratio(ratio: f64, clamps: &mut usize) -> f64 {
    if ratio < RATIO_CLAMP.0 {
        *clamps += 1;
        RATIO_CLAMP.0
    } else if ratio > RATIO_CLAMP.1 {
        *clamps += 1;
        RATIO_CLAMP.1
    } else {
        ratio
    }
}

/// Plug-in estimator: averages g over estimated likelihood ratios at the
/// evaluation points of the f2 sample, with f1 estimated against the whole
/// f1 sample and f2 against the reference split.
pub fn plug_in_estimate(
    f1_sample: &PointSet,
    f2_sample: &PointSet,
    layout: &SplitLayout,
    k1: usize,
    k2: usize,
    f: &Functional,
    retain_ratios: bool,
) -> Result<PlugInEstimate> {
    f.validate()?;
    let d = f2_sample.dim();
    if f1_sample.dim() != d {
        return Err(Error::ShapeMismatch {
            expected: d,
            got: f1_sample.dim(),
        });
    }
    let m1 = f1_sample.len();
    let m2 = layout.m2();
    if k1 == 0 || k1 > m1 {
        return Err(Error::InsufficientNeighbors { k: k1, m: m1 });
    }
    if k2 == 0 || k2 > m2 {
        return Err(Error::InsufficientNeighbors { k: k2, m: m2 });
    }
    if layout.eval_indices().iter().chain(layout.ref2_indices()).any(|&i| i >= f2_sample.len()) {
        return Err(Error::Config(
            "split layout indexes past the end of the f2 sample".into(),
        ));
    }

    let ref2 = f2_sample.select(layout.ref2_indices());
    let idx1 = KnnIndex::build(f1_sample);
    let idx2 = KnnIndex::build(&ref2);
    let ball = unit_ball_volume(d)?;

    let n = layout.n_eval();
    let mut ratios = Vec::with_capacity(n);
    let mut ratio_clamps = 0usize;
    let mut degenerate_rho = 0usize;
    for (pos, &i) in layout.eval_indices().iter().enumerate() {
        let x = f2_sample.point(i);
        let rho1 = idx1.kth_distance(x, k1)?;
        let rho2 = idx2.kth_distance(x, k2)?;
        let dens1 = density_from_rho(rho1, k1, m1, d, ball);
        let dens2 = density_from_rho(rho2, k2, m2, d, ball);
        degenerate_rho += dens1.degenerate as usize + dens2.degenerate as usize;
        let ratio = clamp_ratio(dens1.value / dens2.value, &mut ratio_clamps);
        if !ratio.is_finite() {
            return Err(Error::NonFiniteRatio { index: pos });
        }
        ratios.push(ratio);
    }

    // fixed summation order for bit reproducibility
    let mut sum = 0.0;
    for &r in &ratios {
        sum += f.eval(r)?;
    }
    Ok(PlugInEstimate {
        value: sum / n as f64,
        k1,
        k2,
        per_point_ratios: retain_ratios.then_some(ratios),
        ratio_clamps,
        degenerate_rho,
    })
}
