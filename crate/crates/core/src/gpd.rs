//! Generalized Pareto tail fits and the `k̂` reliability diagnostic.
//!
//! Shape convention: `k > 0` is a heavy tail with `⌊1/k⌋` finite moments,
//! `k = 0` is exponential and `k < 0` has bounded support.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::special::log_sum_exp;

/// Smallest tail that [`fit_gpd`] accepts.
pub const MIN_TAIL_SAMPLES: usize = 5;

/// Smallest sample [`tail_cutoff`] accepts.
pub const MIN_CUTOFF_SAMPLES: usize = 10;

/// Default cap on the fraction of a sample treated as tail.
pub const DEFAULT_MAX_TAIL_FRACTION: f64 = 0.2;

/// Fitted generalized Pareto parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpdFit<T> {
    pub k_hat: T,
    pub sigma_hat: T,
    pub tail_size: usize,
    /// Threshold the exceedances were measured above.
    pub cutoff: T,
}

/// Result of splitting a sample at its tail cutoff.
#[derive(Clone, Debug, PartialEq)]
pub struct TailSplit<T> {
    pub cutoff: T,
    /// Nominal tail size `M` from the cutoff rule.
    pub tail_size: usize,
    /// Values strictly above `cutoff`, shifted by `cutoff`, ascending.
    pub exceedances: Vec<T>,
}

/// Fits a generalized Pareto distribution to positive exceedances with the
/// Zhang–Stephens posterior-mean estimator.
///
/// The profile parameter `θ = -k/σ` is integrated over a deterministic grid of
/// `30·⌈√M⌉` points; `k̂` and `σ̂` follow from the posterior mean of `θ`.
pub fn fit_gpd<T: Real>(exceedances: &[T]) -> Result<GpdFit<T>> {
    let n = exceedances.len();
    if n < MIN_TAIL_SAMPLES {
        return Err(Error::TooFewTailSamples(n));
    }
    if let Some(i) = exceedances.iter().position(|&x| !x.is_finite() || x <= T::zero()) {
        return Err(Error::NonPositiveExceedance(i));
    }
    let mut x = exceedances.to_vec();
    x.sort_by(|a, b| a.partial_cmp(b).expect("finite exceedances"));

    let (k_hat, sigma_hat) = zhang_stephens(&x);
    Ok(GpdFit {
        k_hat,
        sigma_hat,
        tail_size: n,
        cutoff: T::zero(),
    })
}

/// Core estimator on sorted, strictly positive data.
fn zhang_stephens<T: Real>(x: &[T]) -> (T, T) {
    let n = x.len();
    let nf = T::count(n);
    let grid = 30 * (n as f64).sqrt().ceil() as usize;
    let gf = T::count(grid);
    let prior = T::lit(3.0);
    let quartile_idx = ((n as f64) / 4.0 + 0.5).floor() as usize;
    let xstar = x[quartile_idx.max(1) - 1];
    let xmax = x[n - 1];

    let theta: Vec<T> = (1..=grid)
        .map(|j| {
            let jf = T::count(j) - T::lit(0.5);
            xmax.recip() + (T::one() - (gf / jf).sqrt()) / (prior * xstar)
        })
        .collect();

    let log_lik: Vec<T> = theta
        .iter()
        .map(|&t| {
            let a = -t;
            let k = x.iter().map(|&xi| (a * xi).ln_1p()).sum::<T>() / nf;
            let ll = nf * ((a / k).ln() - k - T::one());
            if ll.is_nan() {
                T::neg_infinity()
            } else {
                ll
            }
        })
        .collect();
    let norm = log_sum_exp(&log_lik);
    let theta_hat = theta
        .iter()
        .zip(&log_lik)
        .map(|(&t, &l)| t * (l - norm).exp())
        .sum::<T>();

    let k = x.iter().map(|&xi| (-theta_hat * xi).ln_1p()).sum::<T>() / nf;
    let sigma = -k / theta_hat;
    (k, sigma)
}

/// Splits `sample` at the empirical tail cutoff.
///
/// The tail size is `M = ⌈min(max_tail_fraction·S, 3√S)⌉` and the cutoff is
/// the order statistic directly below the largest `M` values.
pub fn tail_cutoff<T: Real>(sample: &[T], max_tail_fraction: f64) -> Result<TailSplit<T>> {
    let s = sample.len();
    if s < MIN_CUTOFF_SAMPLES {
        return Err(Error::TooFewSamples {
            need: MIN_CUTOFF_SAMPLES,
            got: s,
        });
    }
    let split = split_tail(sample, tail_size(s, max_tail_fraction))?;
    if split.exceedances.is_empty() {
        return Err(Error::DegenerateTail);
    }
    Ok(split)
}

/// Nominal tail size for a sample of `s` values.
pub fn tail_size(s: usize, max_tail_fraction: f64) -> usize {
    let sf = s as f64;
    let m = (max_tail_fraction * sf).min(3.0 * sf.sqrt()).ceil() as usize;
    m.clamp(1, s.saturating_sub(1).max(1))
}

/// Splits at the order statistic with `m` values above it. Ties at the cutoff
/// are excluded from the exceedances.
pub(crate) fn split_tail<T: Real>(sample: &[T], m: usize) -> Result<TailSplit<T>> {
    let s = sample.len();
    if m == 0 || m >= s {
        return Err(Error::InvalidArgument(format!("tail size {m} must be in 1..{s}")));
    }
    if sample.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("tail sample".into()));
    }
    let mut sorted = sample.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite sample"));
    let cutoff = sorted[s - m - 1];
    let exceedances = sorted[s - m..]
        .iter()
        .filter(|&&v| v > cutoff)
        .map(|&v| v - cutoff)
        .collect();
    Ok(TailSplit {
        cutoff,
        tail_size: m,
        exceedances,
    })
}

/// Splits `sample` at its tail cutoff and fits the exceedances.
pub fn fit_tail<T: Real>(sample: &[T], max_tail_fraction: f64) -> Result<GpdFit<T>> {
    let split = tail_cutoff(sample, max_tail_fraction)?;
    let mut fit = fit_gpd(&split.exceedances)?;
    fit.cutoff = split.cutoff;
    Ok(fit)
}

/// Largest `k̂` at which a tail of `sample_size` draws is still trusted:
/// `min(1 − 1/log10(S), 0.7)`.
pub fn khat_threshold<T: Real>(sample_size: usize) -> T {
    let s = T::count(sample_size.max(1));
    let raw = T::one() - s.log10().recip();
    raw.min(T::lit(0.7))
}

/// Quantile function of the generalized Pareto distribution with location 0.
pub fn gpd_quantile<T: Real>(p: T, k: T, sigma: T) -> T {
    let tail = (-p).ln_1p();
    if k.abs() < T::epsilon() {
        -sigma * tail
    } else {
        sigma * (-k * tail).exp_m1() / k
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gpd_sample(k: f64, sigma: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let u: f64 = rng.random();
                if k == 0.0 {
                    -sigma * (1.0 - u).ln()
                } else {
                    sigma * ((1.0 - u).powf(-k) - 1.0) / k
                }
            })
            .collect()
    }

    #[test]
    fn exponential_has_zero_shape() {
        let x = gpd_sample(0.0, 1.0, 10_000, 11);
        let fit = fit_gpd(&x).unwrap();
        assert!(fit.k_hat.abs() <= 0.05, "k_hat = {}", fit.k_hat);
        assert!((fit.sigma_hat - 1.0).abs() < 0.05);
    }

    #[test]
    fn recovers_heavy_tail() {
        let x = gpd_sample(0.5, 1.0, 10_000, 12);
        let fit = fit_gpd(&x).unwrap();
        assert!((0.45..=0.55).contains(&fit.k_hat), "k_hat = {}", fit.k_hat);
        assert!((0.9..=1.1).contains(&fit.sigma_hat), "sigma_hat = {}", fit.sigma_hat);
    }

    #[test]
    fn rejects_short_and_nonpositive_input() {
        assert!(matches!(
            fit_gpd(&[1.0, 2.0, 3.0, 4.0]),
            Err(Error::TooFewTailSamples(4))
        ));
        assert!(matches!(
            fit_gpd(&[1.0, 2.0, 0.0, 4.0, 5.0]),
            Err(Error::NonPositiveExceedance(2))
        ));
    }

    #[test]
    fn scale_equivariance() {
        let x = gpd_sample(0.3, 1.0, 500, 3);
        let base = fit_gpd(&x).unwrap();
        for c in [0.1, 10.0] {
            let scaled: Vec<f64> = x.iter().map(|v| v * c).collect();
            let fit = fit_gpd(&scaled).unwrap();
            assert!((fit.k_hat - base.k_hat).abs() <= 1e-6 * base.k_hat.abs().max(1e-12));
            assert!((fit.sigma_hat - c * base.sigma_hat).abs() <= 1e-6 * c * base.sigma_hat);
        }
    }

    #[test]
    fn deterministic() {
        let x = gpd_sample(0.2, 2.0, 300, 5);
        assert_eq!(fit_gpd(&x).unwrap(), fit_gpd(&x).unwrap());
    }

    #[test]
    fn f32_fit_runs() {
        let x: Vec<f32> = gpd_sample(0.3, 1.0, 2000, 8).into_iter().map(|v| v as f32).collect();
        let fit = fit_gpd(&x).unwrap();
        assert!((fit.k_hat - 0.3).abs() < 0.1);
    }

    #[test]
    fn tail_size_rule() {
        assert_eq!(tail_size(100, 0.2), 20);
        assert_eq!(tail_size(10_000, 0.2), 300);
        let sample: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let split = tail_cutoff(&sample, 0.2).unwrap();
        assert_eq!(split.exceedances.len(), 20);
        assert_eq!(split.cutoff, 79.0);
        assert_eq!(split.exceedances[0], 1.0);
    }

    #[test]
    fn tail_cutoff_edge_cases() {
        assert!(matches!(
            tail_cutoff(&[1.0; 9], 0.2),
            Err(Error::TooFewSamples { need: 10, got: 9 })
        ));
        assert!(matches!(tail_cutoff(&[3.0; 50], 0.2), Err(Error::DegenerateTail)));
    }

    #[test]
    fn threshold_values() {
        assert_eq!(khat_threshold::<f64>(10), 0.0);
        assert!((khat_threshold::<f64>(100) - 0.5).abs() < 1e-15);
        assert_eq!(khat_threshold::<f64>(10_000_000), 0.7);
        let mut prev = f64::NEG_INFINITY;
        for s in 1..5000 {
            let t = khat_threshold::<f64>(s);
            assert!(t >= prev && t <= 0.7);
            prev = t;
        }
    }

    #[test]
    fn quantile_matches_closed_form() {
        assert!((gpd_quantile(0.5, 0.0, 2.0) - 2.0 * 2f64.ln()).abs() < 1e-12);
        // k = 1: σ(1/(1-p) - 1)
        assert!((gpd_quantile(0.75f64, 1.0, 1.0) - 3.0).abs() < 1e-12);
    }
}
