//! Forward search over predictors scored by LOO elpd, with order-statistic
//! correction of the selection-induced bias along the path, and stopping
//! rules.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conjlm::{self, Dataset, PriorConfig};
use crate::error::{Error, Result};
use crate::orderstats::{blom_max, halfnormal_sigma};
use crate::psisloo::{elpd_diff, ElpdEstimate};
use crate::special::{mean, neumaier_sum};

/// Scores a predictor subset by its LOO elpd.
pub trait SubsetScorer: Sync {
    fn score(&self, data: &Dataset, cols: &[usize]) -> Result<ElpdEstimate<f64>>;
}

/// Exact conjugate LOO under a prior preset.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExactLoo(pub PriorConfig);

impl SubsetScorer for ExactLoo {
    fn score(&self, data: &Dataset, cols: &[usize]) -> Result<ElpdEstimate<f64>> {
        let prior = self.0.prior_for(cols.len(), data.intercept);
        let pointwise = conjlm::loo_pointwise(&data.design(Some(cols)), data.y(), &prior)?;
        ElpdEstimate::from_pointwise(model_label(data, cols), pointwise)
    }
}

impl<F> SubsetScorer for F
where
    F: Fn(&Dataset, &[usize]) -> Result<ElpdEstimate<f64>> + Sync,
{
    fn score(&self, data: &Dataset, cols: &[usize]) -> Result<ElpdEstimate<f64>> {
        self(data, cols)
    }
}

/// `x1+x3+...`, or `intercept` for the empty subset.
pub fn model_label(data: &Dataset, cols: &[usize]) -> String {
    if cols.is_empty() {
        return "intercept".into();
    }
    cols.iter()
        .map(|&c| data.names[c].as_str())
        .collect::<Vec<_>>()
        .join("+")
}

/// Which `K` enters `S^(K)` at each step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KMode {
    /// Number of candidates evaluated at the step.
    #[default]
    Candidates,
    /// The same `K` at every step.
    Constant(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrectionSettings {
    pub multiplier: f64,
    pub alpha: f64,
    pub k_mode: KMode,
}

/// One candidate at a search step, relative to the current model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub predictor: usize,
    pub elpd: f64,
    pub diff: f64,
    pub se_diff: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchStep {
    /// Model size after this step.
    pub size: usize,
    pub predictor_added: usize,
    pub predictor_name: String,
    pub candidates_evaluated: usize,
    pub raw_diff: f64,
    pub se_diff: f64,
    pub corrected_diff: f64,
    pub threshold_at_step: f64,
    /// Amount subtracted from `raw_diff`.
    pub bias_at_step: f64,
    pub elpd_after: f64,
    pub corrected_elpd_after: f64,
    pub test_mlpd_after: Option<f64>,
    pub test_se_after: Option<f64>,
    /// The threshold branch fired.
    pub corrected: bool,
    /// Past the raw-path maximum; left uncorrected.
    pub beyond_bulge: bool,
    pub candidates: Vec<CandidateScore>,
    #[serde(skip)]
    pub pointwise: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathRow {
    pub size: usize,
    pub predictor: String,
    pub raw_elpd: f64,
    pub corrected_elpd: f64,
    pub test_mlpd: Option<f64>,
    pub threshold: f64,
    pub bias: f64,
    pub corrected: bool,
    pub beyond_bulge: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchPath {
    pub n: usize,
    pub p: usize,
    pub max_size: usize,
    pub base_elpd: f64,
    #[serde(skip)]
    pub base_pointwise: Vec<f64>,
    pub base_test_mlpd: Option<f64>,
    pub base_test_se: Option<f64>,
    pub reference_elpd: Option<f64>,
    pub reference_test_mlpd: Option<f64>,
    pub reference_test_se: Option<f64>,
    pub correction: Option<CorrectionSettings>,
    pub steps: Vec<SearchStep>,
}

impl SearchPath {
    /// Predictors in selection order.
    pub fn selected(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.predictor_added).collect()
    }

    /// Raw LOO elpd by model size, starting at size 0.
    pub fn raw_path(&self) -> Vec<f64> {
        std::iter::once(self.base_elpd)
            .chain(self.steps.iter().map(|s| s.elpd_after))
            .collect()
    }

    /// Corrected cumulative elpd by model size, starting at size 0.
    pub fn corrected_path(&self) -> Vec<f64> {
        std::iter::once(self.base_elpd)
            .chain(self.steps.iter().map(|s| s.corrected_elpd_after))
            .collect()
    }

    /// Test mlpd by model size, if evaluated.
    pub fn test_path(&self) -> Option<Vec<f64>> {
        std::iter::once(self.base_test_mlpd)
            .chain(self.steps.iter().map(|s| s.test_mlpd_after))
            .collect()
    }

    /// Size with the best test mlpd, if evaluated.
    pub fn test_argmax_size(&self) -> Option<usize> {
        self.test_path().map(|t| argmax(&t))
    }

    /// Size maximizing the raw path.
    pub fn bulge_size(&self) -> usize {
        argmax(&self.raw_path())
    }

    /// Long-format table with one row per model size.
    pub fn rows(&self) -> Vec<PathRow> {
        let raw = self.raw_path();
        let corrected = self.corrected_path();
        (0..raw.len())
            .map(|size| {
                let step = size.checked_sub(1).map(|i| &self.steps[i]);
                PathRow {
                    size,
                    predictor: step.map_or_else(String::new, |s| s.predictor_name.clone()),
                    raw_elpd: raw[size],
                    corrected_elpd: corrected[size],
                    test_mlpd: step.map_or(self.base_test_mlpd, |s| s.test_mlpd_after),
                    threshold: step.map_or(0.0, |s| s.threshold_at_step),
                    bias: step.map_or(0.0, |s| s.bias_at_step),
                    corrected: step.is_some_and(|s| s.corrected),
                    beyond_bulge: step.is_some_and(|s| s.beyond_bulge),
                }
            })
            .collect()
    }

    fn pointwise_at(&self, size: usize) -> &[f64] {
        if size == 0 {
            &self.base_pointwise
        } else {
            &self.steps[size - 1].pointwise
        }
    }
}

/// First index of the maximum.
fn argmax(xs: &[f64]) -> usize {
    xs.iter()
        .enumerate()
        .fold(0, |best, (i, &v)| if v > xs[best] { i } else { best })
}

/// Greedy forward search from the intercept-only model.
///
/// Each step adds the remaining predictor with the largest LOO elpd gain
/// over the current model; ties go to the lowest predictor index.
pub fn forward_search<S: SubsetScorer>(data: &Dataset, max_size: usize, scorer: &S) -> Result<SearchPath> {
    let p = data.p();
    if max_size == 0 {
        return Err(Error::InvalidArgument("max_size must be positive".into()));
    }
    if max_size > p {
        return Err(Error::EmptyCandidateSet {
            requested: max_size,
            available: p,
        });
    }
    let base = scorer.score(data, &[])?;
    let mut current = base.clone();
    let mut chosen: Vec<usize> = Vec::with_capacity(max_size);
    let mut steps = Vec::with_capacity(max_size);
    for size in 1..=max_size {
        let remaining: Vec<usize> = (0..p).filter(|j| !chosen.contains(j)).collect();
        let scored = remaining
            .par_iter()
            .map(|&j| {
                let mut cols = chosen.clone();
                cols.push(j);
                scorer.score(data, &cols)
            })
            .collect::<Result<Vec<_>>>()?;
        let diffs = scored
            .iter()
            .map(|e| elpd_diff(e, &current))
            .collect::<Result<Vec<_>>>()?;
        let candidates: Vec<CandidateScore> = remaining
            .iter()
            .zip(scored.iter().zip(&diffs))
            .map(|(&j, (e, d))| CandidateScore {
                predictor: j,
                elpd: e.estimate,
                diff: d.estimate,
                se_diff: d.se_diff,
            })
            .collect();
        let best = argmax(&candidates.iter().map(|c| c.diff).collect::<Vec<_>>());
        let predictor = remaining[best];
        chosen.push(predictor);
        let raw_diff = candidates[best].diff;
        current = scored.into_iter().nth(best).expect("best candidate exists");
        steps.push(SearchStep {
            size,
            predictor_added: predictor,
            predictor_name: data.names[predictor].clone(),
            candidates_evaluated: candidates.len(),
            raw_diff,
            se_diff: candidates[best].se_diff,
            corrected_diff: raw_diff,
            threshold_at_step: 0.0,
            bias_at_step: 0.0,
            elpd_after: current.estimate,
            corrected_elpd_after: 0.0,
            test_mlpd_after: None,
            test_se_after: None,
            corrected: false,
            beyond_bulge: false,
            candidates,
            pointwise: current.pointwise.clone(),
        });
    }
    let mut path = SearchPath {
        n: data.n(),
        p,
        max_size,
        base_elpd: base.estimate,
        base_pointwise: base.pointwise,
        base_test_mlpd: None,
        base_test_se: None,
        reference_elpd: None,
        reference_test_mlpd: None,
        reference_test_se: None,
        correction: None,
        steps,
    };
    accumulate(&mut path);
    Ok(path)
}

/// `corrected_elpd_after` as the compensated running sum of corrected diffs.
fn accumulate(path: &mut SearchPath) {
    let mut terms = vec![path.base_elpd];
    for step in &mut path.steps {
        terms.push(step.corrected_diff);
        step.corrected_elpd_after = neumaier_sum(terms.iter().copied());
    }
}

/// Applies the threshold correction step by step.
///
/// At each step the threshold is `S^(K)·σ̂` over that step's candidate
/// differences; a selected gain below it is reduced by `multiplier`
/// thresholds. Steps past the raw-path maximum keep their raw gain and are
/// flagged.
pub fn correct_path(path: &SearchPath, multiplier: f64, alpha: f64, k_mode: KMode) -> Result<SearchPath> {
    if path.steps.is_empty() {
        return Err(Error::IncompletePath { need: 1, got: 0 });
    }
    if !(multiplier.is_finite() && multiplier >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "multiplier {multiplier} must be finite and nonnegative"
        )));
    }
    if !(alpha.is_finite() && (0.0..1.0).contains(&alpha)) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} must lie in [0, 1)")));
    }
    if path.steps.iter().any(|s| s.candidates.is_empty()) {
        return Err(Error::MissingCandidateDiffs);
    }
    let bulge = path.bulge_size();
    let mut out = path.clone();
    for step in &mut out.steps {
        let diffs: Vec<f64> = step.candidates.iter().map(|c| c.diff).collect();
        let k = match k_mode {
            KMode::Candidates => diffs.len(),
            KMode::Constant(k) => k.max(1),
        };
        step.threshold_at_step = if diffs.len() >= 2 {
            blom_max(k, alpha) * halfnormal_sigma(&diffs)?.sigma_hat
        } else {
            0.0
        };
        step.beyond_bulge = step.size > bulge;
        step.corrected = !step.beyond_bulge && step.raw_diff.abs() < step.threshold_at_step;
        step.bias_at_step = if step.corrected {
            multiplier * step.threshold_at_step
        } else {
            0.0
        };
        step.corrected_diff = step.raw_diff - step.bias_at_step;
    }
    out.correction = Some(CorrectionSettings {
        multiplier,
        alpha,
        k_mode,
    });
    accumulate(&mut out);
    Ok(out)
}

/// Model sizes chosen by each stopping rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StopVerdicts {
    pub bulge_size: usize,
    pub two_sigma_size: usize,
    pub corrected_max_size: usize,
    pub two_sigma_delta_size: usize,
    pub three_sigma_delta_size: usize,
}

pub fn stopping_rules(path: &SearchPath) -> Result<StopVerdicts> {
    if path.steps.len() < path.max_size || path.steps.is_empty() {
        return Err(Error::IncompletePath {
            need: path.max_size.max(1),
            got: path.steps.len(),
        });
    }
    if path.base_pointwise.is_empty()
        || path
            .steps
            .iter()
            .any(|s| s.pointwise.is_empty() || s.candidates.is_empty())
    {
        return Err(Error::MissingCandidateDiffs);
    }
    let raw = path.raw_path();
    let bulge = argmax(&raw);
    let bulge_est = ElpdEstimate::from_pointwise("bulge", path.pointwise_at(bulge).to_vec())?;
    let mut two_sigma = bulge;
    for (size, &elpd) in raw.iter().enumerate().take(bulge) {
        let other = ElpdEstimate::from_pointwise("other", path.pointwise_at(size).to_vec())?;
        let d = elpd_diff(&bulge_est, &other)?;
        if elpd >= raw[bulge] - 2.0 * d.se_diff {
            two_sigma = size;
            break;
        }
    }
    let sigma_delta = |m: f64| {
        path.steps
            .iter()
            .find(|s| !s.candidates.iter().any(|c| c.diff - m * c.se_diff >= 0.0))
            .map_or(path.steps.len(), |s| s.size - 1)
    };
    Ok(StopVerdicts {
        bulge_size: bulge,
        two_sigma_size: two_sigma,
        corrected_max_size: argmax(&path.corrected_path()),
        two_sigma_delta_size: sigma_delta(2.0),
        three_sigma_delta_size: sigma_delta(3.0),
    })
}

fn check_schema(train: &Dataset, test: &Dataset) -> Result<()> {
    if train.p() != test.p() || train.names != test.names {
        return Err(Error::SchemaMismatch(format!(
            "test columns [{}] differ from training columns [{}]",
            test.names.join(", "),
            train.names.join(", ")
        )));
    }
    if train.intercept != test.intercept {
        return Err(Error::SchemaMismatch(
            "test and training data disagree on the intercept".into(),
        ));
    }
    Ok(())
}

/// Test mlpd of the model over `cols` fit on `train`, with its standard
/// error.
pub fn test_mlpd(train: &Dataset, test: &Dataset, cols: &[usize], prior: &PriorConfig) -> Result<(f64, f64)> {
    let fit = conjlm::fit_design(
        &train.design(Some(cols)),
        train.y(),
        &prior.prior_for(cols.len(), train.intercept),
    )?;
    let lp = conjlm::log_pred_design(&fit, &test.design(Some(cols)), test.y())?;
    let m = mean(&lp);
    let se = if lp.len() < 2 {
        0.0
    } else {
        let ss = neumaier_sum(lp.iter().map(|v| (v - m) * (v - m)));
        (ss / (lp.len() - 1) as f64 / lp.len() as f64).sqrt()
    };
    Ok((m, se))
}

/// Fills the test mlpd of every model on the path.
pub fn evaluate_test(path: &SearchPath, train: &Dataset, test: &Dataset, prior: &PriorConfig) -> Result<SearchPath> {
    check_schema(train, test)?;
    if train.n() != path.n || train.p() != path.p {
        return Err(Error::SchemaMismatch(format!(
            "path was built on {} x {} data, training set is {} x {}",
            path.n,
            path.p,
            train.n(),
            train.p()
        )));
    }
    let selected = path.selected();
    let scores = (0..=selected.len())
        .into_par_iter()
        .map(|size| test_mlpd(train, test, &selected[..size], prior))
        .collect::<Result<Vec<_>>>()?;
    let mut out = path.clone();
    out.base_test_mlpd = Some(scores[0].0);
    out.base_test_se = Some(scores[0].1);
    for (step, &(m, se)) in out.steps.iter_mut().zip(&scores[1..]) {
        step.test_mlpd_after = Some(m);
        step.test_se_after = Some(se);
    }
    Ok(out)
}

/// Records the full model under `prior` as the reference: its LOO elpd on
/// `train` and, when given, its test mlpd.
pub fn attach_reference(
    path: &SearchPath,
    train: &Dataset,
    test: Option<&Dataset>,
    prior: &PriorConfig,
) -> Result<SearchPath> {
    let all: Vec<usize> = (0..train.p()).collect();
    let mut out = path.clone();
    out.reference_elpd = Some(ExactLoo(*prior).score(train, &all)?.estimate);
    if let Some(test) = test {
        check_schema(train, test)?;
        let (m, se) = test_mlpd(train, test, &all, prior)?;
        out.reference_test_mlpd = Some(m);
        out.reference_test_se = Some(se);
    }
    Ok(out)
}
