//! Seeded data generators and experiment runners for the nested-model and
//! block-correlated forward-search designs.
//!
//! Every replication draws from its own seed, derived by hashing the base
//! seed with the cell coordinates and replication index, so results do not
//! depend on scheduling or on which other cells are run.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::conjlm::{Dataset, PriorConfig};
use crate::error::{Error, Result};
use crate::orderstats::{blom_max, halfnormal_sigma, DEFAULT_ALPHA, DEFAULT_MULTIPLIER};
use crate::search::{self, ExactLoo, KMode, SubsetScorer};
use crate::special::mean;

/// Version of the result-table layouts.
pub const SCHEMA_VERSION: u32 = 1;

/// Test-set size used when a config does not give one.
pub const DEFAULT_TEST_SIZE: usize = 1000;

/// Desk-scale limits for forward experiments unless `allow_large` is set.
pub const DESK_MAX_P: usize = 30;
pub const DESK_MAX_N: usize = 400;
pub const DESK_MAX_REPLICATIONS: usize = 20;

/// First eight bytes of `sha256(base ‖ parts)`, little endian.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    for p in parts {
        h.update(p.to_le_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Hex sha256 of a serializable value's JSON form.
pub fn spec_hash<T: Serialize>(spec: &T) -> String {
    let json = serde_json::to_vec(spec).expect("config serializes");
    hex::encode(Sha256::digest(&json))
}

/// Intercept plus `k − 1` iid standard normal predictors; only the first
/// carries signal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NestedDgpSpec {
    pub n: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub beta_delta: f64,
    pub seed: u64,
}

impl NestedDgpSpec {
    /// Residual variance `1 − β_Δ²`, keeping `Var(y) = 1` beyond the intercept.
    pub fn sigma2(&self) -> f64 {
        1.0 - self.beta_delta * self.beta_delta
    }
}

pub fn gen_nested(spec: &NestedDgpSpec) -> Result<Dataset> {
    if spec.k < 2 {
        return Err(Error::InvalidArgument(format!("K = {} must be at least 2", spec.k)));
    }
    if !(0.0..1.0).contains(&spec.beta_delta) {
        return Err(Error::InvalidArgument(format!(
            "beta_delta = {} must lie in [0, 1)",
            spec.beta_delta
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let p = spec.k - 1;
    let sd = spec.sigma2().sqrt();
    let mut x = DMatrix::zeros(spec.n, p);
    let mut y = DVector::zeros(spec.n);
    for i in 0..spec.n {
        for j in 0..p {
            x[(i, j)] = StandardNormal.sample(&mut rng);
        }
        let e: f64 = StandardNormal.sample(&mut rng);
        y[i] = 1.0 + spec.beta_delta * x[(i, 0)] + sd * e;
    }
    Dataset::new(x, y, true)
}

/// Block-correlated Gaussian predictors with a decaying weight pattern over
/// the leading relevant ones.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockDgpSpec {
    pub n: usize,
    pub n_test: usize,
    pub p: usize,
    pub rho: f64,
    pub block_size: usize,
    pub xi: f64,
    pub sigma2: f64,
    pub n_relevant: usize,
    pub seed: u64,
}

impl BlockDgpSpec {
    /// 100 predictors, 15 relevant, `ξ = 0.59`, `σ² = 1`.
    pub fn full(n: usize, rho: f64, seed: u64) -> Self {
        Self {
            n,
            n_test: DEFAULT_TEST_SIZE,
            p: 100,
            rho,
            block_size: 5,
            xi: 0.59,
            sigma2: 1.0,
            n_relevant: 15,
            seed,
        }
    }

    /// 20 predictors, 6 relevant, `ξ` set for `R² = 0.7` at `ρ = 0`.
    pub fn desk(n: usize, rho: f64, seed: u64) -> Self {
        Self {
            n,
            n_test: DEFAULT_TEST_SIZE,
            p: 20,
            rho,
            block_size: 5,
            xi: xi_for_r2(6, 0.7, 1.0),
            sigma2: 1.0,
            n_relevant: 6,
            seed,
        }
    }

    /// True coefficients: thirds of the relevant predictors get `ξ`, `ξ/2`,
    /// `ξ/4`; the rest are zero.
    pub fn weights(&self) -> Vec<f64> {
        (0..self.p)
            .map(|j| {
                if j < self.n_relevant {
                    self.xi * 0.5f64.powi((3 * j / self.n_relevant) as i32)
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// Population `R²` of the linear predictor.
    pub fn r2(&self) -> f64 {
        let w = self.weights();
        let mut signal = 0.0;
        for (a, &wa) in w.iter().enumerate() {
            for (b, &wb) in w.iter().enumerate() {
                let c = if a == b {
                    1.0
                } else if a / self.block_size == b / self.block_size {
                    self.rho
                } else {
                    0.0
                };
                signal += wa * wb * c;
            }
        }
        signal / (signal + self.sigma2)
    }
}

/// `ξ` giving population `R² = r2` with uncorrelated predictors.
pub fn xi_for_r2(n_relevant: usize, r2: f64, sigma2: f64) -> f64 {
    let pattern: f64 = (0..n_relevant).map(|j| 0.25f64.powi((3 * j / n_relevant) as i32)).sum();
    (r2 / (1.0 - r2) * sigma2 / pattern).sqrt()
}

/// Training and test sets from the block design.
///
/// Each block is generated from a shared factor,
/// `x_j = √ρ·z₀ + √(1−ρ)·z_j`, giving unit variances and within-block
/// correlation `ρ`.
pub fn gen_block(spec: &BlockDgpSpec) -> Result<(Dataset, Dataset)> {
    if spec.block_size == 0 || !spec.p.is_multiple_of(spec.block_size) {
        return Err(Error::InvalidBlocking(format!(
            "p = {} is not a multiple of the block size {}",
            spec.p, spec.block_size
        )));
    }
    if !(0.0..1.0).contains(&spec.rho) {
        return Err(Error::InvalidArgument(format!("rho = {} must lie in [0, 1)", spec.rho)));
    }
    if spec.n_relevant > spec.p || spec.n_relevant == 0 {
        return Err(Error::InvalidArgument(format!(
            "n_relevant = {} must lie in 1..={}",
            spec.n_relevant, spec.p
        )));
    }
    if !(spec.sigma2 > 0.0 && spec.xi > 0.0) {
        return Err(Error::InvalidArgument("xi and sigma2 must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let w = spec.weights();
    let (shared, own) = (spec.rho.sqrt(), (1.0 - spec.rho).sqrt());
    let sd = spec.sigma2.sqrt();
    let mut draw = |n: usize| {
        let mut x = DMatrix::zeros(n, spec.p);
        let mut y = DVector::zeros(n);
        for i in 0..n {
            for b in 0..spec.p / spec.block_size {
                let z0: f64 = StandardNormal.sample(&mut rng);
                for j in b * spec.block_size..(b + 1) * spec.block_size {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    x[(i, j)] = shared * z0 + own * z;
                }
            }
            let e: f64 = StandardNormal.sample(&mut rng);
            y[i] = (0..spec.p).map(|j| w[j] * x[(i, j)]).sum::<f64>() + sd * e;
        }
        Dataset::new(x, y, true)
    };
    let train = draw(spec.n)?;
    let test = draw(spec.n_test)?;
    Ok((train, test))
}

/// Type 7 (linear interpolation) sample quantile.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

pub fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

fn resolve_prior(name: &str) -> Result<PriorConfig> {
    PriorConfig::preset(name).ok_or_else(|| Error::Config(format!("unknown prior preset `{name}`")))
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

fn default_test_size() -> usize {
    DEFAULT_TEST_SIZE
}

fn default_diffuse() -> String {
    "diffuse".into()
}

fn default_tight() -> String {
    "tight".into()
}

fn default_betas() -> Vec<f64> {
    vec![0.0]
}

fn default_multipliers() -> Vec<f64> {
    vec![DEFAULT_MULTIPLIER]
}

fn default_priors() -> Vec<String> {
    vec![default_diffuse()]
}

/// Grid of nested designs: every `K` crossed with every `β_Δ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManyKConfig {
    pub seed: u64,
    pub replications: usize,
    pub n: usize,
    pub ks: Vec<usize>,
    #[serde(default = "default_betas")]
    pub beta_deltas: Vec<f64>,
    #[serde(default = "default_test_size")]
    pub n_test: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_diffuse")]
    pub prior: String,
}

impl ManyKConfig {
    /// Cells in output order.
    pub fn grid(&self) -> Vec<(usize, f64)> {
        self.ks
            .iter()
            .flat_map(|&k| self.beta_deltas.iter().map(move |&b| (k, b)))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications < 2 {
            return Err(Error::Config(format!(
                "replications = {} must be at least 2",
                self.replications
            )));
        }
        if self.ks.is_empty() || self.ks.iter().any(|&k| k < 2) {
            return Err(Error::Config("ks must be a nonempty list of values ≥ 2".into()));
        }
        if self.beta_deltas.is_empty() || self.beta_deltas.iter().any(|b| !(0.0..1.0).contains(b)) {
            return Err(Error::Config("beta_deltas must be a nonempty list in [0, 1)".into()));
        }
        if self.n < 3 || self.n_test == 0 {
            return Err(Error::Config("n must be at least 3 and n_test positive".into()));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha = {} must lie in [0, 1)", self.alpha)));
        }
        resolve_prior(&self.prior).map(|_| ())
    }
}

/// One replication of a nested-design cell.
///
/// The best difference is over the `K − 1` one-predictor models against the
/// intercept-only model and may be negative. `σ̂` is fit to all `K`
/// differences, the baseline's zero included.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManyKRep {
    #[serde(rename = "K")]
    pub k: usize,
    pub beta_delta: f64,
    pub rep: usize,
    pub seed: u64,
    pub max_diff: f64,
    pub sigma_hat: f64,
    pub s_k: f64,
    pub predicted_threshold: f64,
    /// Model `j` adds predictor `j` to the intercept.
    pub selected: usize,
    pub true_selected: bool,
    pub selected_test_mlpd: f64,
    pub true_test_mlpd: f64,
    pub baseline_test_mlpd: f64,
    pub schema_version: u32,
    pub spec_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManyKSummary {
    #[serde(rename = "K")]
    pub k: usize,
    pub mean_max_diff: f64,
    pub predicted_threshold: f64,
    pub n_reps: usize,
    pub beta_delta: f64,
    pub sd_max_diff: f64,
    pub q25_max_diff: f64,
    pub median_max_diff: f64,
    pub q75_max_diff: f64,
    pub s_k: f64,
    pub mean_sigma_hat: f64,
    pub frac_true_selected: f64,
    pub mean_selected_test_mlpd: f64,
    pub mean_true_test_mlpd: f64,
    pub seed: u64,
    pub schema_version: u32,
    pub spec_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManyKResults {
    pub reps: Vec<ManyKRep>,
    pub summary: Vec<ManyKSummary>,
}

fn many_k_rep(cfg: &ManyKConfig, prior: &PriorConfig, k: usize, beta: f64, rep: usize, hash: &str) -> Result<ManyKRep> {
    let seed = derive_seed(cfg.seed, &[k as u64, beta.to_bits(), rep as u64]);
    let spec = NestedDgpSpec {
        n: cfg.n,
        k,
        beta_delta: beta,
        seed,
    };
    let train = gen_nested(&spec)?;
    let test = gen_nested(&NestedDgpSpec {
        n: cfg.n_test,
        seed: derive_seed(seed, &[1]),
        ..spec
    })?;
    let scorer = ExactLoo(*prior);
    let cols = |m: usize| if m == 0 { vec![] } else { vec![m - 1] };
    let elpds = (0..k)
        .map(|m| scorer.score(&train, &cols(m)).map(|e| e.estimate))
        .collect::<Result<Vec<_>>>()?;
    let diffs: Vec<f64> = elpds.iter().map(|e| e - elpds[0]).collect();
    let selected = (2..k).fold(1, |best, i| if diffs[i] > diffs[best] { i } else { best });
    let sigma_hat = halfnormal_sigma(&diffs)?.sigma_hat;
    let s_k = blom_max(k, cfg.alpha);
    let mlpd = |m: usize| search::test_mlpd(&train, &test, &cols(m), prior).map(|r| r.0);
    Ok(ManyKRep {
        k,
        beta_delta: beta,
        rep,
        seed,
        max_diff: diffs[selected],
        sigma_hat,
        s_k,
        predicted_threshold: s_k * sigma_hat,
        selected,
        true_selected: selected == 1,
        selected_test_mlpd: mlpd(selected)?,
        true_test_mlpd: mlpd(1)?,
        baseline_test_mlpd: mlpd(0)?,
        schema_version: SCHEMA_VERSION,
        spec_hash: hash.to_owned(),
    })
}

/// Maximum-difference experiment over a grid of nested designs.
pub fn run_many_k(cfg: &ManyKConfig) -> Result<ManyKResults> {
    cfg.validate()?;
    let prior = resolve_prior(&cfg.prior)?;
    let hash = spec_hash(cfg);
    let jobs: Vec<(usize, f64, usize)> = cfg
        .grid()
        .into_iter()
        .flat_map(|(k, b)| (0..cfg.replications).map(move |r| (k, b, r)))
        .collect();
    let reps = jobs
        .par_iter()
        .map(|&(k, b, r)| many_k_rep(cfg, &prior, k, b, r, &hash))
        .collect::<Result<Vec<_>>>()?;
    let summary = reps
        .chunks(cfg.replications)
        .map(|cell| {
            let max: Vec<f64> = cell.iter().map(|r| r.max_diff).collect();
            let pick = |f: fn(&ManyKRep) -> f64| mean(&cell.iter().map(f).collect::<Vec<_>>());
            ManyKSummary {
                k: cell[0].k,
                mean_max_diff: mean(&max),
                predicted_threshold: pick(|r| r.predicted_threshold),
                n_reps: cell.len(),
                beta_delta: cell[0].beta_delta,
                sd_max_diff: sample_sd(&max),
                q25_max_diff: quantile(&max, 0.25),
                median_max_diff: quantile(&max, 0.5),
                q75_max_diff: quantile(&max, 0.75),
                s_k: cell[0].s_k,
                mean_sigma_hat: pick(|r| r.sigma_hat),
                frac_true_selected: pick(|r| f64::from(u8::from(r.true_selected))),
                mean_selected_test_mlpd: pick(|r| r.selected_test_mlpd),
                mean_true_test_mlpd: pick(|r| r.true_test_mlpd),
                seed: cfg.seed,
                schema_version: SCHEMA_VERSION,
                spec_hash: hash.clone(),
            }
        })
        .collect();
    Ok(ManyKResults { reps, summary })
}

/// Grid of block designs crossed with priors and correction multipliers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForwardConfig {
    pub seed: u64,
    pub replications: usize,
    pub ns: Vec<usize>,
    pub rhos: Vec<f64>,
    pub p: usize,
    pub n_relevant: usize,
    /// Defaults to the value giving `R² = 0.7` at `ρ = 0`.
    #[serde(default)]
    pub xi: Option<f64>,
    #[serde(default = "default_sigma2")]
    pub sigma2: f64,
    #[serde(default = "default_block")]
    pub block_size: usize,
    #[serde(default = "default_test_size")]
    pub n_test: usize,
    #[serde(default = "default_multipliers")]
    pub multipliers: Vec<f64>,
    #[serde(default = "default_priors")]
    pub priors: Vec<String>,
    #[serde(default = "default_tight")]
    pub reference_prior: String,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Defaults to `p`.
    #[serde(default)]
    pub max_size: Option<usize>,
    #[serde(default)]
    pub k_mode: KMode,
    /// Lifts the desk-scale limits.
    #[serde(default)]
    pub allow_large: bool,
}

fn default_sigma2() -> f64 {
    1.0
}

fn default_block() -> usize {
    5
}

impl ForwardConfig {
    /// Desk-scale design: `p = 20`, six relevant predictors.
    pub fn desk(seed: u64, replications: usize, ns: Vec<usize>, rhos: Vec<f64>) -> Self {
        Self {
            seed,
            replications,
            ns,
            rhos,
            p: 20,
            n_relevant: 6,
            xi: None,
            sigma2: 1.0,
            block_size: 5,
            n_test: DEFAULT_TEST_SIZE,
            multipliers: default_multipliers(),
            priors: default_priors(),
            reference_prior: default_tight(),
            alpha: DEFAULT_ALPHA,
            max_size: None,
            k_mode: KMode::Candidates,
            allow_large: false,
        }
    }

    pub fn xi(&self) -> f64 {
        self.xi.unwrap_or_else(|| xi_for_r2(self.n_relevant, 0.7, self.sigma2))
    }

    pub fn max_size(&self) -> usize {
        self.max_size.unwrap_or(self.p)
    }

    pub fn block_spec(&self, n: usize, rho: f64, rep: usize) -> BlockDgpSpec {
        BlockDgpSpec {
            n,
            n_test: self.n_test,
            p: self.p,
            rho,
            block_size: self.block_size,
            xi: self.xi(),
            sigma2: self.sigma2,
            n_relevant: self.n_relevant,
            seed: derive_seed(self.seed, &[n as u64, rho.to_bits(), rep as u64]),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 || self.ns.is_empty() || self.rhos.is_empty() {
            return Err(Error::Config("replications, ns and rhos must be nonempty".into()));
        }
        if self.multipliers.is_empty() || self.multipliers.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(Error::Config(
                "multipliers must be a nonempty list of nonnegative values".into(),
            ));
        }
        if self.priors.is_empty() {
            return Err(Error::Config("priors must be nonempty".into()));
        }
        for name in self.priors.iter().chain(std::iter::once(&self.reference_prior)) {
            resolve_prior(name)?;
        }
        if self.max_size() == 0 || self.max_size() > self.p {
            return Err(Error::Config(format!("max_size must lie in 1..={}", self.p)));
        }
        if !self.allow_large {
            let n_max = self.ns.iter().copied().max().unwrap_or(0);
            if self.p > DESK_MAX_P || n_max > DESK_MAX_N || self.replications > DESK_MAX_REPLICATIONS {
                return Err(Error::Config(format!(
                    "design exceeds desk scale (p ≤ {DESK_MAX_P}, n ≤ {DESK_MAX_N}, replications ≤ {DESK_MAX_REPLICATIONS}); set allow_large = true"
                )));
            }
        }
        for &n in &self.ns {
            for &rho in &self.rhos {
                let spec = self.block_spec(n, rho, 0);
                if !spec.p.is_multiple_of(spec.block_size.max(1)) || spec.block_size == 0 {
                    return Err(Error::Config(format!(
                        "p = {} is not a multiple of block_size = {}",
                        spec.p, spec.block_size
                    )));
                }
                if !(0.0..1.0).contains(&rho) || n < 3 {
                    return Err(Error::Config(format!("invalid cell n = {n}, rho = {rho}")));
                }
            }
        }
        Ok(())
    }
}

/// Stopping-rule summary of one corrected search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForwardRun {
    pub n: usize,
    pub rho: f64,
    pub prior: String,
    pub multiplier: f64,
    pub rep: usize,
    pub seed: u64,
    pub bulge_size: usize,
    pub two_sigma_size: usize,
    pub corrected_max_size: usize,
    pub two_sigma_delta_size: usize,
    pub three_sigma_delta_size: usize,
    pub test_argmax_size: usize,
    pub raw_mlpd_at_bulge: f64,
    pub test_mlpd_at_bulge: f64,
    pub corrected_max_mlpd: f64,
    pub test_mlpd_at_corrected_max: f64,
    pub reference_test_mlpd: f64,
    pub reference_test_se: f64,
    pub schema_version: u32,
    pub spec_hash: String,
}

/// One model size on one corrected path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub n: usize,
    pub rho: f64,
    pub prior: String,
    pub multiplier: f64,
    pub rep: usize,
    pub seed: u64,
    pub size: usize,
    pub predictor: String,
    pub raw_elpd: f64,
    pub corrected_elpd: f64,
    pub raw_mlpd: f64,
    pub corrected_mlpd: f64,
    pub test_mlpd: f64,
    pub threshold: f64,
    pub bias: f64,
    pub corrected: bool,
    pub beyond_bulge: bool,
    pub schema_version: u32,
    pub spec_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForwardSummary {
    pub n: usize,
    pub rho: f64,
    pub prior: String,
    pub multiplier: f64,
    pub n_reps: usize,
    pub mean_bulge_size: f64,
    pub mean_corrected_max_size: f64,
    pub mean_test_argmax_size: f64,
    pub mean_two_sigma_size: f64,
    pub mean_two_sigma_delta_size: f64,
    pub mean_three_sigma_delta_size: f64,
    /// Median of raw minus test mlpd at the bulge.
    pub median_bulge_gap: f64,
    pub frac_bulge_optimistic: f64,
    pub frac_corrected_near_test: f64,
    pub seed: u64,
    pub schema_version: u32,
    pub spec_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForwardResults {
    pub runs: Vec<ForwardRun>,
    pub trajectories: Vec<TrajectoryRow>,
    pub summary: Vec<ForwardSummary>,
}

/// A corrected, test-evaluated search with its verdicts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForwardOutcome {
    pub path: search::SearchPath,
    pub verdicts: search::StopVerdicts,
}

/// Search, test evaluation and reference for one dataset, corrected under
/// each multiplier.
#[allow(clippy::too_many_arguments)]
pub fn forward_pipeline(
    train: &Dataset,
    test: &Dataset,
    prior: &PriorConfig,
    reference_prior: &PriorConfig,
    max_size: usize,
    multipliers: &[f64],
    alpha: f64,
    k_mode: KMode,
) -> Result<Vec<ForwardOutcome>> {
    let path = search::forward_search(train, max_size, &ExactLoo(*prior))?;
    let path = search::evaluate_test(&path, train, test, prior)?;
    let path = search::attach_reference(&path, train, Some(test), reference_prior)?;
    multipliers
        .iter()
        .map(|&m| {
            let path = search::correct_path(&path, m, alpha, k_mode)?;
            let verdicts = search::stopping_rules(&path)?;
            Ok(ForwardOutcome { path, verdicts })
        })
        .collect()
}

struct RunKey<'a> {
    n: usize,
    rho: f64,
    prior: &'a str,
    rep: usize,
    seed: u64,
}

fn run_rows(key: &RunKey, out: &ForwardOutcome, hash: &str) -> (ForwardRun, Vec<TrajectoryRow>) {
    let path = &out.path;
    let v = &out.verdicts;
    let nf = path.n as f64;
    let raw = path.raw_path();
    let corrected = path.corrected_path();
    let test = path.test_path().expect("test mlpd evaluated");
    let multiplier = path.correction.expect("path corrected").multiplier;
    let run = ForwardRun {
        n: key.n,
        rho: key.rho,
        prior: key.prior.to_owned(),
        multiplier,
        rep: key.rep,
        seed: key.seed,
        bulge_size: v.bulge_size,
        two_sigma_size: v.two_sigma_size,
        corrected_max_size: v.corrected_max_size,
        two_sigma_delta_size: v.two_sigma_delta_size,
        three_sigma_delta_size: v.three_sigma_delta_size,
        test_argmax_size: path.test_argmax_size().expect("test mlpd evaluated"),
        raw_mlpd_at_bulge: raw[v.bulge_size] / nf,
        test_mlpd_at_bulge: test[v.bulge_size],
        corrected_max_mlpd: corrected[v.corrected_max_size] / nf,
        test_mlpd_at_corrected_max: test[v.corrected_max_size],
        reference_test_mlpd: path.reference_test_mlpd.unwrap_or(f64::NAN),
        reference_test_se: path.reference_test_se.unwrap_or(f64::NAN),
        schema_version: SCHEMA_VERSION,
        spec_hash: hash.to_owned(),
    };
    let rows = (0..raw.len())
        .map(|size| {
            let step = size.checked_sub(1).map(|i| &path.steps[i]);
            TrajectoryRow {
                n: key.n,
                rho: key.rho,
                prior: key.prior.to_owned(),
                multiplier,
                rep: key.rep,
                seed: key.seed,
                size,
                predictor: step.map_or_else(String::new, |s| s.predictor_name.clone()),
                raw_elpd: raw[size],
                corrected_elpd: corrected[size],
                raw_mlpd: raw[size] / nf,
                corrected_mlpd: corrected[size] / nf,
                test_mlpd: test[size],
                threshold: step.map_or(0.0, |s| s.threshold_at_step),
                bias: step.map_or(0.0, |s| s.bias_at_step),
                corrected: step.is_some_and(|s| s.corrected),
                beyond_bulge: step.is_some_and(|s| s.beyond_bulge),
                schema_version: SCHEMA_VERSION,
                spec_hash: hash.to_owned(),
            }
        })
        .collect();
    (run, rows)
}

/// Forward-search experiment over the block-design grid.
pub fn run_forward_experiment(cfg: &ForwardConfig) -> Result<ForwardResults> {
    cfg.validate()?;
    let hash = spec_hash(cfg);
    let reference = resolve_prior(&cfg.reference_prior)?;
    let jobs: Vec<(usize, f64, usize)> = cfg
        .ns
        .iter()
        .flat_map(|&n| {
            cfg.rhos
                .iter()
                .flat_map(move |&rho| (0..cfg.replications).map(move |r| (n, rho, r)))
        })
        .collect();
    let per_job = jobs
        .par_iter()
        .map(|&(n, rho, rep)| {
            let spec = cfg.block_spec(n, rho, rep);
            let (train, test) = gen_block(&spec)?;
            let mut out = Vec::new();
            for name in &cfg.priors {
                let prior = resolve_prior(name)?;
                let outcomes = forward_pipeline(
                    &train,
                    &test,
                    &prior,
                    &reference,
                    cfg.max_size(),
                    &cfg.multipliers,
                    cfg.alpha,
                    cfg.k_mode,
                )?;
                let key = RunKey {
                    n,
                    rho,
                    prior: name,
                    rep,
                    seed: spec.seed,
                };
                out.extend(outcomes.iter().map(|o| run_rows(&key, o, &hash)));
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let (runs, trajectories): (Vec<ForwardRun>, Vec<Vec<TrajectoryRow>>) = per_job.into_iter().flatten().unzip();
    let summary = summarize_forward(&runs, cfg, &hash);
    Ok(ForwardResults {
        runs,
        trajectories: trajectories.into_iter().flatten().collect(),
        summary,
    })
}

fn summarize_forward(runs: &[ForwardRun], cfg: &ForwardConfig, hash: &str) -> Vec<ForwardSummary> {
    let mut out = Vec::new();
    for &n in &cfg.ns {
        for &rho in &cfg.rhos {
            for prior in &cfg.priors {
                for &m in &cfg.multipliers {
                    let cell: Vec<&ForwardRun> = runs
                        .iter()
                        .filter(|r| r.n == n && r.rho == rho && &r.prior == prior && r.multiplier == m)
                        .collect();
                    let avg = |f: &dyn Fn(&ForwardRun) -> f64| mean(&cell.iter().map(|r| f(r)).collect::<Vec<_>>());
                    let gaps: Vec<f64> = cell
                        .iter()
                        .map(|r| r.raw_mlpd_at_bulge - r.test_mlpd_at_bulge)
                        .collect();
                    out.push(ForwardSummary {
                        n,
                        rho,
                        prior: prior.clone(),
                        multiplier: m,
                        n_reps: cell.len(),
                        mean_bulge_size: avg(&|r| r.bulge_size as f64),
                        mean_corrected_max_size: avg(&|r| r.corrected_max_size as f64),
                        mean_test_argmax_size: avg(&|r| r.test_argmax_size as f64),
                        mean_two_sigma_size: avg(&|r| r.two_sigma_size as f64),
                        mean_two_sigma_delta_size: avg(&|r| r.two_sigma_delta_size as f64),
                        mean_three_sigma_delta_size: avg(&|r| r.three_sigma_delta_size as f64),
                        median_bulge_gap: quantile(&gaps, 0.5),
                        frac_bulge_optimistic: mean(
                            &gaps.iter().map(|&g| f64::from(u8::from(g > 0.0))).collect::<Vec<_>>(),
                        ),
                        frac_corrected_near_test: avg(&|r| {
                            f64::from(u8::from(r.corrected_max_size.abs_diff(r.test_argmax_size) <= 3))
                        }),
                        seed: cfg.seed,
                        schema_version: SCHEMA_VERSION,
                        spec_hash: hash.to_owned(),
                    });
                }
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    ManyK,
    Forward,
}

/// Experiment file: a `kind` key and the matching table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub many_k: Option<ManyKConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forward: Option<ForwardConfig>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        match cfg.kind {
            ExperimentKind::ManyK => cfg
                .many_k
                .as_ref()
                .ok_or_else(|| Error::Config("kind = \"many_k\" needs a [many_k] table".into()))?
                .validate()?,
            ExperimentKind::Forward => cfg
                .forward
                .as_ref()
                .ok_or_else(|| Error::Config("kind = \"forward\" needs a [forward] table".into()))?
                .validate()?,
        }
        Ok(cfg)
    }
}
