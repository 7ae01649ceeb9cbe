//! Expected-maximum thresholds for elpd differences under the hypothesis
//! that no candidate beats the baseline, the half-normal scale estimate they
//! rest on, bias magnitudes, and the tail validity diagnostic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gpd::{fit_gpd, khat_threshold, split_tail, tail_size, DEFAULT_MAX_TAIL_FRACTION, MIN_TAIL_SAMPLES};
use crate::psisloo::{elpd_diff, ElpdDiff, ElpdEstimate};
use crate::scalar::Real;
use crate::special::{norm_cdf, norm_quantile};

/// Blom offset used unless configured otherwise; the conservative end of
/// `[0.39, 0.5]`.
pub const DEFAULT_ALPHA: f64 = 0.5;

/// Default ratio of bias estimate to threshold.
pub const DEFAULT_MULTIPLIER: f64 = 1.5;

/// Fewest candidates for which the tail diagnostic is computed.
pub const MIN_DIAGNOSTIC_MODELS: usize = 10;

/// Differences this close to zero count as zero in degenerate verdicts.
pub const EQUIVALENCE_TOL: f64 = 1e-12;

/// Blom's approximation to the expected maximum of `k` iid standard normals,
/// `Φ⁻¹((k − α)/(k − 2α + 1))`.
pub fn blom_max<T: Real>(k: usize, alpha: T) -> T {
    assert!(k >= 1, "expected maximum needs at least one draw");
    let kf = T::count(k);
    let p = (kf - alpha) / (kf - T::lit(2.0) * alpha + T::one());
    norm_quantile(p)
}

/// Median (mean of the two central values for even length).
pub fn median<T: Real>(xs: &[T]) -> T {
    assert!(!xs.is_empty(), "median of empty slice");
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / T::lit(2.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HalfNormalFit<T> {
    pub sigma_hat: T,
    pub median_hat: T,
}

/// Half-normal MLE of the spread of the upper half of `diffs` about their
/// median: `σ̂ = sqrt((2/K) Σ_{d ≥ m̂} (d − m̂)²)`.
pub fn halfnormal_sigma<T: Real>(diffs: &[T]) -> Result<HalfNormalFit<T>> {
    let k = diffs.len();
    if k < 2 {
        return Err(Error::TooFewModels { need: 2, got: k });
    }
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::NonFiniteInput("elpd differences".into()));
    }
    let m = median(diffs);
    let ss: T = diffs.iter().filter(|&&d| d >= m).map(|&d| (d - m) * (d - m)).sum();
    Ok(HalfNormalFit {
        sigma_hat: (T::lit(2.0) / T::count(k) * ss).sqrt(),
        median_hat: m,
    })
}

/// Threshold on the largest difference below which the candidates are
/// practically equivalent to the baseline.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Threshold<T> {
    pub k: usize,
    pub s_k: T,
    pub sigma_hat: T,
    pub median_hat: T,
    pub threshold: T,
    pub max_diff: T,
    pub all_equivalent: bool,
}

/// `S^(K) · σ̂_K` for the given difference points, with the verdict.
pub fn threshold<T: Real>(diffs: &[T], alpha: T) -> Result<Threshold<T>> {
    let hn = halfnormal_sigma(diffs)?;
    let s_k = blom_max(diffs.len(), alpha);
    Ok(assemble_threshold(diffs, s_k, hn))
}

fn assemble_threshold<T: Real>(diffs: &[T], s_k: T, hn: HalfNormalFit<T>) -> Threshold<T> {
    let threshold = s_k * hn.sigma_hat;
    let max_diff = diffs.iter().copied().fold(T::neg_infinity(), T::max);
    Threshold {
        k: diffs.len(),
        s_k,
        sigma_hat: hn.sigma_hat,
        median_hat: hn.median_hat,
        threshold,
        max_diff,
        all_equivalent: equivalent_verdict(max_diff, threshold),
    }
}

/// Strictly below the threshold, or both within tolerance of zero.
fn equivalent_verdict<T: Real>(max_diff: T, threshold: T) -> bool {
    let tol = T::lit(EQUIVALENCE_TOL);
    max_diff < threshold || (threshold <= tol && max_diff <= tol)
}

/// Selection-induced bias estimate `multiplier · S^(K) · σ̂`.
pub fn bias_estimate<T: Real>(k: usize, sigma_hat: T, multiplier: T, alpha: T) -> T {
    multiplier * blom_max(k, alpha) * sigma_hat
}

/// Generalized Pareto check on the right tail of the differences.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailDiagnostic<T> {
    pub khat: T,
    pub khat_threshold: T,
    pub tail_size: usize,
    pub reliable: bool,
}

/// Fits the right tail of `diffs` and compares `k̂` against
/// `khat_threshold(K)`.
///
/// The tail holds `max(⌈min(0.2K, 3√K)⌉, 5)` points so that the smallest
/// admissible `K = 10` still yields a fit.
pub fn diagnose_tail<T: Real>(diffs: &[T]) -> Result<TailDiagnostic<T>> {
    let k = diffs.len();
    if k < MIN_DIAGNOSTIC_MODELS {
        return Err(Error::TooFewModels {
            need: MIN_DIAGNOSTIC_MODELS,
            got: k,
        });
    }
    let m = tail_size(k, DEFAULT_MAX_TAIL_FRACTION).max(MIN_TAIL_SAMPLES);
    let split = split_tail(diffs, m)?;
    let fit = fit_gpd(&split.exceedances)?;
    let limit = khat_threshold::<T>(k);
    Ok(TailDiagnostic {
        khat: fit.k_hat,
        khat_threshold: limit,
        tail_size: split.exceedances.len(),
        reliable: fit.k_hat < limit,
    })
}

/// Index of the lower-median element of `values`; ties resolve to the lowest
/// index.
pub fn lower_median_index<T: Real>(values: &[T]) -> usize {
    assert!(!values.is_empty(), "lower median of empty slice");
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        values[a]
            .partial_cmp(&values[b])
            .expect("finite values")
            .then(a.cmp(&b))
    });
    let value = values[order[(values.len() - 1) / 2]];
    values.iter().position(|&v| v == value).expect("value present")
}

/// Picks the lower-median model by point estimate as baseline and returns
/// every other model's difference to it, in input order.
pub fn median_baseline<T: Real>(estimates: &[ElpdEstimate<T>]) -> Result<(usize, Vec<ElpdDiff<T>>)> {
    if estimates.len() < 3 {
        return Err(Error::TooFewModels {
            need: 3,
            got: estimates.len(),
        });
    }
    let points: Vec<T> = estimates.iter().map(|e| e.estimate).collect();
    let base = lower_median_index(&points);
    let diffs = diffs_to_baseline(estimates, base)?;
    Ok((base, diffs))
}

/// Differences of every model except `base` to `estimates[base]`.
pub fn diffs_to_baseline<T: Real>(estimates: &[ElpdEstimate<T>], base: usize) -> Result<Vec<ElpdDiff<T>>> {
    estimates
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != base)
        .map(|(_, e)| elpd_diff(e, &estimates[base]))
        .collect()
}

/// Probability that a `N(mu, sigma²)` difference estimate falls below zero,
/// i.e. that the worse model is selected.
pub fn prob_select_suboptimal<T: Real>(mu: T, sigma: T) -> Result<T> {
    if sigma.is_nan() || sigma <= T::zero() {
        return Err(Error::NonPositiveSigma(sigma.to_f64().unwrap_or(f64::NAN)));
    }
    Ok(norm_cdf(-mu / sigma))
}

/// Many-model comparison against a common baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElpdComparison<T> {
    pub baseline_id: String,
    pub diffs: Vec<ElpdDiff<T>>,
    #[serde(rename = "K")]
    pub k: usize,
    pub alpha: T,
    pub median_hat: T,
    pub sigma_hat: T,
    pub s_k: T,
    pub threshold: T,
    pub multiplier: T,
    pub bias_hat: T,
    pub max_diff: T,
    /// Model with the largest difference.
    pub best_model: String,
    pub all_equivalent: bool,
    pub khat_tail: Option<T>,
    pub khat_threshold: Option<T>,
    /// Tail diagnostic passed; always false below ten candidates.
    pub reliable: bool,
}

impl<T: Real> ElpdComparison<T> {
    /// Builds the comparison from candidate differences to the baseline.
    ///
    /// A single candidate has no spread to estimate; it gets `σ̂ = 0` and
    /// `S^(1) = 0`, so only the degenerate verdict applies.
    pub fn new(baseline_id: impl Into<String>, diffs: Vec<ElpdDiff<T>>, alpha: T, multiplier: T) -> Result<Self> {
        let k = diffs.len();
        if k == 0 {
            return Err(Error::TooFewModels { need: 1, got: 0 });
        }
        let points: Vec<T> = diffs.iter().map(|d| d.estimate).collect();
        let th = if k == 1 {
            assemble_threshold(
                &points,
                blom_max(1, alpha),
                HalfNormalFit {
                    sigma_hat: T::zero(),
                    median_hat: points[0],
                },
            )
        } else {
            threshold(&points, alpha)?
        };
        let best = points
            .iter()
            .enumerate()
            .fold(0, |best, (i, &v)| if v > points[best] { i } else { best });
        let diag = diagnose_tail(&points).ok();
        Ok(Self {
            baseline_id: baseline_id.into(),
            best_model: diffs[best].model_a.clone(),
            diffs,
            k,
            alpha,
            median_hat: th.median_hat,
            sigma_hat: th.sigma_hat,
            s_k: th.s_k,
            threshold: th.threshold,
            multiplier,
            bias_hat: multiplier * th.threshold,
            max_diff: th.max_diff,
            all_equivalent: th.all_equivalent,
            khat_tail: diag.map(|d| d.khat),
            khat_threshold: diag.map(|d| d.khat_threshold),
            reliable: diag.is_some_and(|d| d.reliable),
        })
    }
}
