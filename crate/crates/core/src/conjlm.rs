//! Conjugate normal-inverse-gamma linear regression with analytic posterior
//! predictive densities and exact leave-one-out elpd.
//!
//! Model: `y | β, σ² ~ N(Xβ, σ² I)`, `β | σ² ~ N(m₀, σ² V₀)`,
//! `σ² ~ InvGamma(a₀, b₀)`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::psisloo::{ElpdEstimate, LogLikMatrix};

/// Regression data. `x` holds predictors only; the constant column is added
/// by [`Dataset::design`] when `intercept` is set.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
    pub intercept: bool,
    pub names: Vec<String>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, intercept: bool) -> Result<Self> {
        let names = (0..x.ncols()).map(|j| format!("x{}", j + 1)).collect();
        Self::with_names(x, y, intercept, names)
    }

    pub fn with_names(x: DMatrix<f64>, y: DVector<f64>, intercept: bool, names: Vec<String>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: y.len(),
                got: x.nrows(),
            });
        }
        if names.len() != x.ncols() {
            return Err(Error::DimensionMismatch {
                expected: x.ncols(),
                got: names.len(),
            });
        }
        if y.is_empty() {
            return Err(Error::TooFewObservations(0));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("dataset".into()));
        }
        Ok(Self { x, y, intercept, names })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Number of predictors, excluding the intercept.
    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    /// Design matrix over the given predictor columns (all when `None`), with
    /// the constant column first when `intercept` is set.
    pub fn design(&self, cols: Option<&[usize]>) -> DMatrix<f64> {
        let all: Vec<usize> = (0..self.p()).collect();
        let cols = cols.unwrap_or(&all);
        let offset = usize::from(self.intercept);
        DMatrix::from_fn(self.n(), cols.len() + offset, |i, j| {
            if j < offset {
                1.0
            } else {
                self.x[(i, cols[j - offset])]
            }
        })
    }

    /// Number of coefficients in a model over `k` predictors.
    pub fn dim(&self, k: usize) -> usize {
        k + usize::from(self.intercept)
    }

    /// Dataset restricted to the given predictor columns.
    pub fn select(&self, cols: &[usize]) -> Dataset {
        let x = DMatrix::from_fn(self.n(), cols.len(), |i, j| self.x[(i, cols[j])]);
        Dataset {
            x,
            y: self.y.clone(),
            intercept: self.intercept,
            names: cols.iter().map(|&c| self.names[c].clone()).collect(),
        }
    }
}

/// Normal-inverse-gamma prior.
#[derive(Clone, Debug, PartialEq)]
pub struct NigPrior {
    pub mean: DVector<f64>,
    /// `V₀`; coefficient covariance is `σ² V₀`.
    pub scale: DMatrix<f64>,
    pub a0: f64,
    pub b0: f64,
}

impl NigPrior {
    pub fn new(mean: DVector<f64>, scale: DMatrix<f64>, a0: f64, b0: f64) -> Result<Self> {
        if scale.nrows() != scale.ncols() || scale.nrows() != mean.len() {
            return Err(Error::InvalidPrior(format!(
                "scale is {}x{} for a mean of length {}",
                scale.nrows(),
                scale.ncols(),
                mean.len()
            )));
        }
        if !(a0 > 0.0 && b0 > 0.0) {
            return Err(Error::InvalidPrior(format!("a0 = {a0}, b0 = {b0} must be positive")));
        }
        if (&scale - scale.transpose()).abs().max() > 1e-12 * scale.abs().max().max(1.0) {
            return Err(Error::InvalidPrior("scale matrix is not symmetric".into()));
        }
        if Cholesky::new(scale.clone()).is_none() {
            return Err(Error::InvalidPrior("scale matrix is not positive definite".into()));
        }
        Ok(Self { mean, scale, a0, b0 })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Prior family resolved to a concrete [`NigPrior`] once the model dimension
/// is known.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    /// Prior variance factor of the intercept.
    pub intercept_var: f64,
    /// Prior variance factor of every slope.
    pub slope_var: f64,
    pub a0: f64,
    pub b0: f64,
}

impl PriorConfig {
    /// Independent `N(0, 10²)` coefficients.
    pub fn diffuse() -> Self {
        Self {
            intercept_var: 100.0,
            slope_var: 100.0,
            a0: 1.0,
            b0: 1.0,
        }
    }

    /// Shrinks slopes with `V₀ = 0.25`; the intercept stays diffuse.
    pub fn tight() -> Self {
        Self {
            slope_var: 0.25,
            ..Self::diffuse()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "diffuse" => Some(Self::diffuse()),
            "tight" => Some(Self::tight()),
            _ => None,
        }
    }

    /// Zero-mean diagonal prior for a model over `k` predictors.
    pub fn prior_for(&self, k: usize, intercept: bool) -> NigPrior {
        let offset = usize::from(intercept);
        let diag = DVector::from_fn(
            k + offset,
            |i, _| {
                if i < offset {
                    self.intercept_var
                } else {
                    self.slope_var
                }
            },
        );
        NigPrior {
            mean: DVector::zeros(k + offset),
            scale: DMatrix::from_diagonal(&diag),
            a0: self.a0,
            b0: self.b0,
        }
    }
}

/// Posterior `β | σ², y ~ N(mean_n, σ² V_n)`, `σ² | y ~ InvGamma(a_n, b_n)`.
#[derive(Clone, Debug)]
pub struct PosteriorFit {
    pub mean_n: DVector<f64>,
    pub v_n: DMatrix<f64>,
    pub a_n: f64,
    pub b_n: f64,
    pub log_marginal: f64,
    precision_chol: Cholesky<f64, Dyn>,
}

impl PosteriorFit {
    pub fn dim(&self) -> usize {
        self.mean_n.len()
    }

    /// `xᵀ V_n x`.
    fn quad(&self, x: &DVector<f64>) -> f64 {
        let z = self
            .precision_chol
            .l_dirty()
            .solve_lower_triangular(x)
            .expect("Cholesky factor is nonsingular");
        z.norm_squared()
    }
}

/// Posterior for the full design of `data`.
pub fn fit(data: &Dataset, prior: &NigPrior) -> Result<PosteriorFit> {
    fit_design(&data.design(None), data.y(), prior)
}

/// Conjugate update for an explicit design matrix.
pub fn fit_design(x: &DMatrix<f64>, y: &DVector<f64>, prior: &NigPrior) -> Result<PosteriorFit> {
    if x.ncols() != prior.dim() {
        return Err(Error::DimensionMismatch {
            expected: prior.dim(),
            got: x.ncols(),
        });
    }
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: y.len(),
            got: x.nrows(),
        });
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("design or response".into()));
    }
    let n = y.len() as f64;
    let prior_chol = Cholesky::new(prior.scale.clone())
        .ok_or_else(|| Error::InvalidPrior("scale matrix is not positive definite".into()))?;
    let prior_prec = prior_chol.inverse();
    let precision = &prior_prec + x.transpose() * x;
    let chol = Cholesky::new(precision).ok_or_else(|| Error::InvalidPrior("posterior precision is singular".into()))?;
    let v_n = chol.inverse();
    let rhs = &prior_prec * &prior.mean + x.transpose() * y;
    let mean_n = chol.solve(&rhs);

    let resid = y - x * &mean_n;
    let dm = &mean_n - &prior.mean;
    let b_n = prior.b0 + 0.5 * (resid.norm_squared() + dm.dot(&(&prior_prec * &dm)));
    let a_n = prior.a0 + n / 2.0;

    let log_det_prec_n: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let log_det_v0: f64 = 2.0 * prior_chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let log_marginal =
        -0.5 * n * (2.0 * std::f64::consts::PI).ln() + 0.5 * (-log_det_prec_n - log_det_v0) + prior.a0 * prior.b0.ln()
            - a_n * b_n.ln()
            + ln_gamma(a_n)
            - ln_gamma(prior.a0);

    Ok(PosteriorFit {
        mean_n,
        v_n,
        a_n,
        b_n,
        log_marginal,
        precision_chol: chol,
    })
}

/// Log density of a Student-t with `df` degrees of freedom, location `loc`
/// and squared scale `scale2`.
pub fn student_t_logpdf(y: f64, df: f64, loc: f64, scale2: f64) -> f64 {
    let z2 = (y - loc) * (y - loc) / scale2;
    ln_gamma((df + 1.0) / 2.0)
        - ln_gamma(df / 2.0)
        - 0.5 * (df * std::f64::consts::PI * scale2).ln()
        - (df + 1.0) / 2.0 * (z2 / df).ln_1p()
}

/// Posterior predictive log density at `(x_new, y_new)`. `x_new` is a full
/// design row (including the constant when the model has an intercept).
pub fn log_pred(fit: &PosteriorFit, x_new: &[f64], y_new: f64) -> Result<f64> {
    if x_new.len() != fit.dim() {
        return Err(Error::DimensionMismatch {
            expected: fit.dim(),
            got: x_new.len(),
        });
    }
    let x = DVector::from_column_slice(x_new);
    let loc = x.dot(&fit.mean_n);
    let scale2 = fit.b_n / fit.a_n * (1.0 + fit.quad(&x));
    Ok(student_t_logpdf(y_new, 2.0 * fit.a_n, loc, scale2))
}

/// Pointwise predictive log densities for every row of `x` against `y`.
pub fn log_pred_design(fit: &PosteriorFit, x: &DMatrix<f64>, y: &DVector<f64>) -> Result<Vec<f64>> {
    if x.ncols() != fit.dim() {
        return Err(Error::DimensionMismatch {
            expected: fit.dim(),
            got: x.ncols(),
        });
    }
    let df = 2.0 * fit.a_n;
    let locs = x * &fit.mean_n;
    let z = fit
        .precision_chol
        .l_dirty()
        .solve_lower_triangular(&x.transpose())
        .expect("Cholesky factor is nonsingular");
    Ok((0..x.nrows())
        .map(|i| {
            let h = z.column(i).norm_squared();
            student_t_logpdf(y[i], df, locs[i], fit.b_n / fit.a_n * (1.0 + h))
        })
        .collect())
}

/// Exact LOO elpd of the full-design model.
pub fn elpd_loo_exact(data: &Dataset, prior: &NigPrior) -> Result<ElpdEstimate<f64>> {
    let pointwise = loo_pointwise(&data.design(None), data.y(), prior)?;
    ElpdEstimate::from_pointwise("full", pointwise)
}

/// Exact leave-one-out predictive log densities.
///
/// Each held-out posterior is obtained from the full one by a rank-one
/// downdate: with leverage `h = xᵢᵀ V_n xᵢ` and residual `eᵢ`, the held-out
/// predictive is Student-t with `2a_n − 1` degrees of freedom, location
/// `yᵢ − eᵢ/(1−h)` and squared scale `(b_n − eᵢ²/(2(1−h))) / ((a_n − ½)(1−h))`.
pub fn loo_pointwise(x: &DMatrix<f64>, y: &DVector<f64>, prior: &NigPrior) -> Result<Vec<f64>> {
    let n = y.len();
    if n < 3 {
        return Err(Error::TooFewObservations(n));
    }
    let fit = fit_design(x, y, prior)?;
    let z = fit
        .precision_chol
        .l_dirty()
        .solve_lower_triangular(&x.transpose())
        .expect("Cholesky factor is nonsingular");
    let fitted = x * &fit.mean_n;
    let a_loo = fit.a_n - 0.5;
    let df = 2.0 * a_loo;
    Ok((0..n)
        .map(|i| {
            let h = z.column(i).norm_squared();
            let one_minus_h = 1.0 - h;
            let e = y[i] - fitted[i];
            let b_loo = fit.b_n - 0.5 * e * e / one_minus_h;
            let loc = y[i] - e / one_minus_h;
            let scale2 = b_loo / a_loo / one_minus_h;
            student_t_logpdf(y[i], df, loc, scale2)
        })
        .collect())
}

/// One joint posterior draw.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorDraw {
    pub beta: DVector<f64>,
    pub sigma2: f64,
}

/// `s` exact posterior draws, reproducible under `seed`.
pub fn draw_posterior(fit: &PosteriorFit, s: usize, seed: u64) -> Vec<PosteriorDraw> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gamma = Gamma::new(fit.a_n, 1.0 / fit.b_n).expect("positive posterior shape and rate");
    let l = Cholesky::new(fit.v_n.clone())
        .expect("posterior covariance is positive definite")
        .unpack();
    let d = fit.dim();
    (0..s)
        .map(|_| {
            let sigma2 = 1.0 / gamma.sample(&mut rng);
            let z = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
            PosteriorDraw {
                beta: &fit.mean_n + sigma2.sqrt() * (&l * z),
                sigma2,
            }
        })
        .collect()
}

/// Gaussian pointwise log likelihood of every draw on every row of `data`.
pub fn loglik_matrix(model_id: &str, draws: &[PosteriorDraw], data: &Dataset) -> Result<LogLikMatrix<f64>> {
    let x = data.design(None);
    let y = data.y();
    let half_log_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    let mut values = Vec::with_capacity(draws.len() * data.n());
    for d in draws {
        if d.beta.len() != x.ncols() {
            return Err(Error::DimensionMismatch {
                expected: x.ncols(),
                got: d.beta.len(),
            });
        }
        let mu = &x * &d.beta;
        let log_sd = 0.5 * d.sigma2.ln();
        values.extend((0..data.n()).map(|i| {
            let r = y[i] - mu[i];
            -half_log_2pi - log_sd - 0.5 * r * r / d.sigma2
        }));
    }
    LogLikMatrix::new(model_id, values, draws.len(), data.n())
}
