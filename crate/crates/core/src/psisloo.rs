//! Leave-one-out elpd estimates, their standard errors and paired
//! differences, with Pareto-smoothed importance sampling for posterior draws.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gpd::{fit_gpd, gpd_quantile, khat_threshold, tail_size, DEFAULT_MAX_TAIL_FRACTION, MIN_TAIL_SAMPLES};
use crate::scalar::Real;
use crate::special::{log_sum_exp, mean, neumaier_sum};

/// Below this many draws PSIS still runs, but the tail fit is unstable.
pub const RECOMMENDED_MIN_DRAWS: usize = 100;

/// Pointwise log predictive densities, `draws × observations`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct LogLikMatrix<T> {
    values: Vec<T>,
    draws: usize,
    obs: usize,
    pub model_id: String,
}

impl<T: Real> LogLikMatrix<T> {
    pub fn new(model_id: impl Into<String>, values: Vec<T>, draws: usize, obs: usize) -> Result<Self> {
        if draws == 0 {
            return Err(Error::TooFewSamples { need: 1, got: 0 });
        }
        if obs < 2 {
            return Err(Error::TooFewObservations(obs));
        }
        if values.len() != draws * obs {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {draws}x{obs} matrix",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("log-likelihood matrix".into()));
        }
        Ok(Self {
            values,
            draws,
            obs,
            model_id: model_id.into(),
        })
    }

    /// Builds the matrix from one row per draw.
    pub fn from_rows(model_id: impl Into<String>, rows: &[Vec<T>]) -> Result<Self> {
        let draws = rows.len();
        let obs = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != obs) {
            return Err(Error::ShapeMismatch(format!(
                "row {bad} has {} columns, expected {obs}",
                rows[bad].len()
            )));
        }
        Self::new(model_id, rows.concat(), draws, obs)
    }

    pub fn draws(&self) -> usize {
        self.draws
    }

    pub fn obs(&self) -> usize {
        self.obs
    }

    pub fn get(&self, draw: usize, obs: usize) -> T {
        self.values[draw * self.obs + obs]
    }

    pub fn column(&self, obs: usize) -> Vec<T> {
        (0..self.draws).map(|s| self.get(s, obs)).collect()
    }
}

/// LOO elpd estimate for one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElpdEstimate<T> {
    pub model_id: String,
    pub pointwise: Vec<T>,
    pub estimate: T,
    pub se: T,
    /// Per-observation Pareto `k̂`; absent for exact LOO.
    pub khat_per_obs: Option<Vec<T>>,
    /// False when some observation's `k̂` exceeds the threshold for the
    /// number of draws.
    pub reliable: bool,
}

impl<T: Real> ElpdEstimate<T> {
    /// Wraps exact pointwise LOO values.
    pub fn from_pointwise(model_id: impl Into<String>, pointwise: Vec<T>) -> Result<Self> {
        if pointwise.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("pointwise elpd".into()));
        }
        let se = elpd_se(&pointwise)?;
        Ok(Self {
            model_id: model_id.into(),
            estimate: neumaier_sum(pointwise.iter().copied()),
            se,
            pointwise,
            khat_per_obs: None,
            reliable: true,
        })
    }

    pub fn n(&self) -> usize {
        self.pointwise.len()
    }
}

/// Paired difference `a − b` of two LOO estimates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElpdDiff<T> {
    pub model_a: String,
    pub model_b: String,
    pub pointwise_diff: Vec<T>,
    pub estimate: T,
    pub se_diff: T,
}

/// PSIS-LOO estimate from a log-likelihood matrix of posterior draws.
pub fn elpd_loo_psis<T: Real>(loglik: &LogLikMatrix<T>) -> Result<ElpdEstimate<T>> {
    let per_obs: Vec<Result<(T, T)>> = (0..loglik.obs())
        .into_par_iter()
        .map(|i| psis_loo_point(&loglik.column(i), i))
        .collect();
    let mut pointwise = Vec::with_capacity(loglik.obs());
    let mut khat = Vec::with_capacity(loglik.obs());
    for r in per_obs {
        let (elpd, k) = r?;
        pointwise.push(elpd);
        khat.push(k);
    }
    let threshold = khat_threshold::<T>(loglik.draws());
    let reliable = khat.iter().all(|&k| k < threshold);
    let mut est = ElpdEstimate::from_pointwise(loglik.model_id.clone(), pointwise)?;
    est.khat_per_obs = Some(khat);
    est.reliable = reliable;
    Ok(est)
}

fn psis_loo_point<T: Real>(ll: &[T], obs: usize) -> Result<(T, T)> {
    let first = ll[0];
    if ll.iter().all(|&v| v == first) {
        // No posterior variation: every weight is equal and the integrand constant.
        return Ok((first, T::neg_infinity()));
    }
    let mut lw: Vec<T> = ll.iter().map(|&v| -v).collect();
    let khat = psis_smooth(&mut lw);
    let joint: Vec<T> = lw.iter().zip(ll).map(|(&w, &l)| w + l).collect();
    let elpd = log_sum_exp(&joint) - log_sum_exp(&lw);
    if !elpd.is_finite() {
        return Err(Error::DegenerateWeights(obs));
    }
    Ok((elpd, khat))
}

/// Pareto-smooths log importance weights in place and returns `k̂`.
///
/// The weights are shifted so their maximum is zero. The largest
/// `M = ⌈min(0.2·S, 3√S)⌉` are replaced by expected order statistics of the
/// generalized Pareto fit to their exceedances, truncated at the raw maximum.
/// Returns `+∞` without smoothing when fewer than five values lie strictly in
/// the tail or the fit fails.
pub fn psis_smooth<T: Real>(log_weights: &mut [T]) -> T {
    let s = log_weights.len();
    let max = log_weights.iter().copied().fold(T::neg_infinity(), T::max);
    for w in log_weights.iter_mut() {
        *w -= max;
    }
    if s <= MIN_TAIL_SAMPLES {
        return T::infinity();
    }
    let m = tail_size(s, DEFAULT_MAX_TAIL_FRACTION);
    let mut order: Vec<usize> = (0..s).collect();
    order.sort_by(|&a, &b| {
        log_weights[a]
            .partial_cmp(&log_weights[b])
            .expect("finite log weights")
            .then(a.cmp(&b))
    });
    let log_cutoff = log_weights[order[s - m - 1]];
    let tail: Vec<usize> = order[s - m..]
        .iter()
        .copied()
        .filter(|&j| log_weights[j] > log_cutoff)
        .collect();
    if tail.len() < MIN_TAIL_SAMPLES {
        return T::infinity();
    }
    let cutoff = log_cutoff.exp();
    let exceedances: Vec<T> = tail.iter().map(|&j| log_weights[j].exp() - cutoff).collect();
    let fit = match fit_gpd(&exceedances) {
        Ok(f) if f.k_hat.is_finite() && f.sigma_hat.is_finite() && f.sigma_hat > T::zero() => f,
        _ => return T::infinity(),
    };
    // Shrink toward 0.5 with a weakly informative prior worth ten tail draws.
    let len = T::count(tail.len());
    let k = (fit.k_hat * len + T::lit(5.0)) / (len + T::lit(10.0));
    for (rank, &j) in tail.iter().enumerate() {
        let p = (T::count(rank) + T::lit(0.5)) / len;
        let smoothed = (gpd_quantile(p, k, fit.sigma_hat) + cutoff).ln();
        log_weights[j] = smoothed.min(T::zero());
    }
    k
}

/// Standard error of an elpd sum: `sqrt(n/(n−1) · Σ (elpdᵢ − mean)²)`.
pub fn elpd_se<T: Real>(pointwise: &[T]) -> Result<T> {
    let n = pointwise.len();
    if n < 2 {
        return Err(Error::TooFewObservations(n));
    }
    let m = mean(pointwise);
    let ss = neumaier_sum(pointwise.iter().map(|&v| (v - m) * (v - m)));
    let nf = T::count(n);
    Ok((nf / (nf - T::one()) * ss).sqrt())
}

/// Paired difference of two estimates over the same observations.
pub fn elpd_diff<T: Real>(a: &ElpdEstimate<T>, b: &ElpdEstimate<T>) -> Result<ElpdDiff<T>> {
    if a.n() != b.n() {
        return Err(Error::ShapeMismatch(format!(
            "models {} and {} have {} and {} observations",
            a.model_id,
            b.model_id,
            a.n(),
            b.n()
        )));
    }
    let pointwise_diff: Vec<T> = a.pointwise.iter().zip(&b.pointwise).map(|(&x, &y)| x - y).collect();
    let se_diff = elpd_se(&pointwise_diff)?;
    Ok(ElpdDiff {
        model_a: a.model_id.clone(),
        model_b: b.model_id.clone(),
        estimate: neumaier_sum(pointwise_diff.iter().copied()),
        pointwise_diff,
        se_diff,
    })
}

/// Mean log predictive density.
pub fn mlpd<T: Real>(pointwise: &[T]) -> Result<T> {
    if pointwise.is_empty() {
        return Err(Error::EmptyVector);
    }
    Ok(mean(pointwise))
}
