//! Two-model decision aids: normal-approximation probability, pseudo-BMA and
//! pseudo-BMA+ weights, and the rule of four.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::special::{gauss_hermite, logistic, norm_cdf};

/// Minimum Gauss–Hermite nodes used for pseudo-BMA+.
pub const DEFAULT_GH_NODES: usize = 61;

/// Node cap; beyond it the unnormalized Hermite recurrence overflows.
pub const MAX_GH_NODES: usize = 600;

/// Node count keeping pseudo-BMA+ accurate to about `1e-9`.
///
/// The logistic has complex poles at distance `π/(√2·se)` from the real axis
/// in the Hermite variable, so the rule needs `O(se²)` nodes; 61 suffice up
/// to `se = 2`.
pub fn gh_nodes_for<T: Real>(se: T) -> usize {
    let scale = (se / T::lit(2.0)).to_f64().unwrap_or(1.0);
    let n = (DEFAULT_GH_NODES as f64 * scale * scale).ceil();
    if n.is_finite() {
        (n as usize).clamp(DEFAULT_GH_NODES, MAX_GH_NODES) | 1
    } else {
        MAX_GH_NODES | 1
    }
}

/// Absolute difference at or above which selecting on the point estimate is
/// considered safe.
pub const RULE_OF_FOUR: f64 = 4.0;

fn check_se<T: Real>(se: T) -> Result<()> {
    if se > T::zero() && se.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositiveSe(se.to_f64().unwrap_or(f64::NAN)))
    }
}

/// Probability that the model ahead by `delta` is truly better, under a
/// `N(delta, se²)` approximation: `Φ(delta/se)`.
pub fn prob_better_normal<T: Real>(delta: T, se: T) -> Result<T> {
    check_se(se)?;
    Ok(norm_cdf(delta / se))
}

/// Pseudo-BMA weight of the model ahead by `delta`.
pub fn pseudo_bma<T: Real>(delta: T) -> T {
    logistic(delta)
}

/// Pseudo-BMA+ weight: the logistic weight averaged over `N(0, se²)`
/// uncertainty in the difference, by Gauss–Hermite quadrature with at least
/// 61 nodes (see [`gh_nodes_for`]).
pub fn pseudo_bma_plus<T: Real>(delta: T, se: T) -> Result<T> {
    pseudo_bma_plus_with(delta, se, gh_nodes_for(se))
}

/// [`pseudo_bma_plus`] with an explicit node count.
pub fn pseudo_bma_plus_with<T: Real>(delta: T, se: T, nodes: usize) -> Result<T> {
    check_se(se)?;
    let (x, w) = gauss_hermite::<T>(nodes);
    let half = T::lit(0.5);
    let scale = T::SQRT_2() * se;
    let norm = T::PI().sqrt();
    // logistic(u) = ½ + ½·tanh(u/2); pairing ±x keeps delta = 0 at exactly ½.
    let n = x.len();
    let mut acc = T::zero();
    for i in 0..n / 2 {
        let a = scale * x[i];
        let pair = ((delta + a) * half).tanh() + ((delta - a) * half).tanh();
        acc += w[i] * pair;
    }
    if n % 2 == 1 {
        acc += w[n / 2] * (delta * half).tanh();
    }
    Ok(half + half * acc / norm)
}

/// True when `|delta| ≥ 4`.
pub fn rule_of_four<T: Real>(delta: T) -> bool {
    delta.abs() >= T::lit(RULE_OF_FOUR)
}

/// Weights and decision aids for one pairwise difference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightReport<T> {
    pub model: String,
    pub versus: String,
    pub delta: T,
    pub se: T,
    pub prob_better: T,
    pub pseudo_bma: T,
    pub pseudo_bma_plus: T,
    pub rule_of_four_safe: bool,
}

impl<T: Real> WeightReport<T> {
    /// Builds the report; a zero standard error takes the `se → 0` limits
    /// (a step in `prob_better`, pseudo-BMA+ equal to pseudo-BMA).
    pub fn new(model: impl Into<String>, versus: impl Into<String>, delta: T, se: T) -> Result<Self> {
        if se < T::zero() || !se.is_finite() || !delta.is_finite() {
            return Err(Error::NonPositiveSe(se.to_f64().unwrap_or(f64::NAN)));
        }
        let (prob_better, plus) = if se == T::zero() {
            let step = if delta > T::zero() {
                T::one()
            } else if delta < T::zero() {
                T::zero()
            } else {
                T::lit(0.5)
            };
            (step, pseudo_bma(delta))
        } else {
            (prob_better_normal(delta, se)?, pseudo_bma_plus(delta, se)?)
        };
        Ok(Self {
            model: model.into(),
            versus: versus.into(),
            delta,
            se,
            prob_better,
            pseudo_bma: pseudo_bma(delta),
            pseudo_bma_plus: plus,
            rule_of_four_safe: rule_of_four(delta),
        })
    }
}
