//! Special functions and numerically careful reductions shared by the
//! statistical kernels.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::scalar::Real;

const MAX_ITER: usize = 500;

/// Standard normal density.
pub fn norm_pdf<T: Real>(x: T) -> T {
    let two = T::lit(2.0);
    (-(x * x) / two).exp() / (two * T::PI()).sqrt()
}

/// Standard normal CDF.
///
/// Uses the odd power series around zero for `|x| < 3` and a continued
/// fraction in the tails, so lower-tail values keep full relative precision.
pub fn norm_cdf<T: Real>(x: T) -> T {
    if x.is_nan() {
        return x;
    }
    let three = T::lit(3.0);
    if x.abs() < three {
        let half = T::lit(0.5);
        let x2 = x * x;
        let mut term = x;
        let mut sum = x;
        for k in 0..MAX_ITER {
            term = term * x2 / T::count(2 * k + 3);
            sum += term;
            if term.abs() <= T::epsilon() * sum.abs() {
                break;
            }
        }
        half + norm_pdf(x) * sum
    } else if x < T::zero() {
        lower_tail(-x)
    } else {
        T::one() - lower_tail(x)
    }
}

/// `Φ(-t)` for `t ≥ 3`, as `½·Q(½, t²/2)` with the regularized upper
/// incomplete gamma `Q` evaluated by its Legendre continued fraction
/// (modified Lentz).
fn lower_tail<T: Real>(t: T) -> T {
    if t.is_infinite() {
        return T::zero();
    }
    let half = T::lit(0.5);
    let tiny = T::min_positive_value() / T::epsilon();
    let x = t * t * half;
    let mut b = x + half;
    let mut c = tiny.recip();
    let mut d = b.recip();
    let mut h = d;
    for i in 1..MAX_ITER {
        let fi = T::count(i);
        let an = -fi * (fi - half);
        b += T::lit(2.0);
        d = an * d + b;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + an / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = d.recip();
        let delta = d * c;
        h *= delta;
        if (delta - T::one()).abs() <= T::epsilon() {
            break;
        }
    }
    half * (-x).exp() * (x / T::PI()).sqrt() * h
}

/// Standard normal quantile `Φ⁻¹(p)`.
///
/// Starts from the rational approximation of Hastings and polishes with
/// Halley steps against [`norm_cdf`]. Returns `±∞` at the endpoints and NaN
/// outside `[0, 1]`.
pub fn norm_quantile<T: Real>(p: T) -> T {
    let half = T::lit(0.5);
    if p.is_nan() || p < T::zero() || p > T::one() {
        return T::nan();
    }
    if p == half {
        return T::zero();
    }
    if p == T::zero() {
        return T::neg_infinity();
    }
    if p == T::one() {
        return T::infinity();
    }
    let upper = p > half;
    let q = if upper { T::one() - p } else { p };

    let t = (-T::lit(2.0) * q.ln()).sqrt();
    let num = T::lit(2.515517) + t * (T::lit(0.802853) + t * T::lit(0.010328));
    let den = T::one() + t * (T::lit(1.432788) + t * (T::lit(0.189269) + t * T::lit(0.001308)));
    let mut x = -(t - num / den);

    for _ in 0..50 {
        let e = norm_cdf(x) - q;
        let u = e / norm_pdf(x);
        let step = u / (T::one() + x * u / T::lit(2.0));
        x -= step;
        if step.abs() <= T::lit(4.0) * T::epsilon() * x.abs().max(T::one()) {
            break;
        }
    }
    if upper {
        -x
    } else {
        x
    }
}

/// `log Σ exp(xᵢ)` without overflow. Empty input gives `-∞`.
pub fn log_sum_exp<T: Real>(xs: &[T]) -> T {
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() || !max.is_finite() {
        return max;
    }
    let s = neumaier_sum(xs.iter().map(|&x| (x - max).exp()));
    max + s.ln()
}

/// Compensated (Neumaier) summation. The result depends only on the order of
/// the input, never on how the caller scheduled its computation.
pub fn neumaier_sum<T: Real, I: IntoIterator<Item = T>>(xs: I) -> T {
    let mut sum = T::zero();
    let mut comp = T::zero();
    for x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Arithmetic mean via compensated summation. NaN for empty input.
pub fn mean<T: Real>(xs: &[T]) -> T {
    if xs.is_empty() {
        return T::nan();
    }
    neumaier_sum(xs.iter().copied()) / T::count(xs.len())
}

/// Logistic function `1 / (1 + e^{-x})`, stable for large `|x|`.
pub fn logistic<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Nodes and weights of the `n`-point Gauss–Hermite rule for the weight
/// `e^{-x²}`. Nodes are returned in descending order; weights sum to `√π`.
pub fn gauss_hermite<T: Real>(n: usize) -> (Vec<T>, Vec<T>) {
    assert!(n >= 1, "Gauss-Hermite rule needs at least one node");
    let rule = cached_rule(n);
    (
        rule.0.iter().map(|&v| T::lit(v)).collect(),
        rule.1.iter().map(|&v| T::lit(v)).collect(),
    )
}

type Rule = Arc<(Vec<f64>, Vec<f64>)>;

fn cached_rule(n: usize) -> Rule {
    static CACHE: OnceLock<Mutex<HashMap<usize, Rule>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    if let Some(r) = cache.lock().unwrap_or_else(|e| e.into_inner()).get(&n) {
        return r.clone();
    }
    let rule = Arc::new(hermite_rule(n));
    cache.lock().unwrap_or_else(|e| e.into_inner()).insert(n, rule.clone());
    rule
}

// Nodes are eigenvalues of the Jacobi matrix (zero diagonal, off-diagonal
// sqrt(k/2)), isolated by Sturm-sequence bisection. Weights come from the
// Christoffel sum of orthonormal polynomials, rescaled to avoid overflow.
fn hermite_rule(n: usize) -> (Vec<f64>, Vec<f64>) {
    let below = |lam: f64| -> usize {
        let mut count = 0;
        let mut q = -lam;
        for k in 1..=n {
            if k > 1 {
                let b2 = (k - 1) as f64 / 2.0;
                let prev = if q == 0.0 { f64::EPSILON * (b2.sqrt() + 1.0) } else { q };
                q = -lam - b2 / prev;
            }
            if q < 0.0 {
                count += 1;
            }
        }
        count
    };
    let bound = 2.0 * ((n as f64) / 2.0).sqrt() + 1.0;
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // i-th largest eigenvalue: the (n - i)-th smallest
        let target = n - i;
        let mut lo = -bound;
        let mut hi = if i == 0 { bound } else { x[i - 1] };
        loop {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if below(mid) >= target {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let z = 0.5 * (lo + hi);
        x[i] = z;
        x[n - 1 - i] = -z;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    for i in 0..n.div_ceil(2) {
        let z = x[i];
        let mut p1 = std::f64::consts::PI.powf(-0.25);
        let mut p2 = 0.0;
        let mut sum = p1 * p1;
        let mut log_scale = 0.0;
        for j in 1..n {
            let jf = j as f64;
            let p3 = p2;
            p2 = p1;
            p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            sum += p1 * p1;
            if sum > 1e200 {
                p1 *= 1e-100;
                p2 *= 1e-100;
                sum *= 1e-200;
                log_scale += 200.0 * std::f64::consts::LN_10;
            }
        }
        w[i] = (-(sum.ln() + log_scale)).exp();
        w[n - 1 - i] = w[i];
    }
    (x, w)
}
