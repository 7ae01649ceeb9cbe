use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::Serialize;

use selbias::io::{self, write_csv, write_csv_file};
use selbias::orderstats::{self, DEFAULT_ALPHA, DEFAULT_MULTIPLIER, MIN_DIAGNOSTIC_MODELS};
use selbias::psisloo::elpd_loo_psis;
use selbias::search::{self, ExactLoo, KMode};
use selbias::sim::{self, ExperimentConfig, ExperimentKind, SCHEMA_VERSION};
use selbias::{ElpdComparison, ElpdEstimate, Error, PriorConfig, Result, WeightReport};

use crate::report::{Diagnostic, InputHash, Provenance, ReportBundle};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum InputKind {
    /// One column of pointwise LOO elpd values per file.
    Pointwise,
    /// Draws by observations log-likelihood matrix per file.
    Loglik,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Prior {
    Diffuse,
    Tight,
}

impl Prior {
    fn config(self) -> PriorConfig {
        match self {
            Prior::Diffuse => PriorConfig::diffuse(),
            Prior::Tight => PriorConfig::tight(),
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct CompareArgs {
    /// One CSV per model; the file stem is the model id.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = InputKind::Pointwise)]
    pub input_kind: InputKind,
    /// `median` or a model id.
    #[arg(long, default_value = "median")]
    pub baseline: String,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    pub alpha: f64,
    #[arg(long, default_value_t = DEFAULT_MULTIPLIER)]
    pub multiplier: f64,
    /// Recorded in provenance.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Output file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ForwardArgs {
    /// Training data CSV with a header row.
    pub data: PathBuf,
    #[arg(long)]
    pub target: String,
    /// Held-out data CSV with the same columns.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Defaults to the number of predictors.
    #[arg(long)]
    pub max_size: Option<usize>,
    #[arg(long, value_enum, default_value_t = Prior::Diffuse)]
    pub prior: Prior,
    /// Prior of the full reference model.
    #[arg(long, value_enum, default_value_t = Prior::Tight)]
    pub reference_prior: Prior,
    #[arg(long, default_value_t = DEFAULT_MULTIPLIER)]
    pub multiplier: f64,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    pub alpha: f64,
    /// Use this `K` at every step instead of the candidate count.
    #[arg(long)]
    pub constant_k: Option<usize>,
    /// Recorded in provenance.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    #[arg(long, conflicts_with = "out_dir")]
    pub out: Option<PathBuf>,
    /// Writes `path.csv` and `report.json` here.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    /// Experiment TOML file.
    pub config: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Overrides the seed in the config file.
    #[arg(long)]
    pub seed: Option<u64>,
}

fn check_tuning(alpha: f64, multiplier: f64) -> Result<()> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha = {alpha} must lie in [0, 1)")));
    }
    if !(multiplier.is_finite() && multiplier >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "multiplier = {multiplier} must be nonnegative"
        )));
    }
    Ok(())
}

fn emit(out: Option<&Path>, text: &[u8]) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text)?,
        None => std::io::stdout().lock().write_all(text)?,
    }
    Ok(())
}

fn csv_bytes<S: Serialize>(rows: &[S]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_csv(&mut buf, rows)?;
    Ok(buf)
}

fn read_estimates(args: &CompareArgs) -> Result<Vec<ElpdEstimate>> {
    args.inputs
        .iter()
        .map(|p| match args.input_kind {
            InputKind::Pointwise => io::read_pointwise_csv(p),
            InputKind::Loglik => elpd_loo_psis(&io::read_loglik_csv(p)?),
        })
        .collect()
}

pub fn compare(args: &CompareArgs) -> Result<ReportBundle> {
    check_tuning(args.alpha, args.multiplier)?;
    if args.inputs.len() < 2 {
        return Err(Error::TooFewModels {
            need: 2,
            got: args.inputs.len(),
        });
    }
    let inputs = args
        .inputs
        .iter()
        .map(|p| InputHash::of(p))
        .collect::<Result<Vec<_>>>()?;
    let estimates = read_estimates(args)?;
    let mut seen = BTreeSet::new();
    for e in &estimates {
        if !seen.insert(e.model_id.as_str()) {
            return Err(Error::SchemaMismatch(format!("duplicate model id `{}`", e.model_id)));
        }
    }
    let n = estimates[0].n();
    if let Some(e) = estimates.iter().find(|e| e.n() != n) {
        return Err(Error::SchemaMismatch(format!(
            "model `{}` has {} observations, `{}` has {n}",
            e.model_id,
            e.n(),
            estimates[0].model_id
        )));
    }
    let base = if args.baseline == "median" {
        let points: Vec<f64> = estimates.iter().map(|e| e.estimate).collect();
        orderstats::lower_median_index(&points)
    } else {
        estimates
            .iter()
            .position(|e| e.model_id == args.baseline)
            .ok_or_else(|| Error::InvalidArgument(format!("baseline model `{}` not among the inputs", args.baseline)))?
    };
    let diffs = orderstats::diffs_to_baseline(&estimates, base)?;
    let weights = diffs
        .iter()
        .map(|d| WeightReport::new(d.model_a.clone(), d.model_b.clone(), d.estimate, d.se_diff))
        .collect::<Result<Vec<_>>>()?;
    let comparison = ElpdComparison::new(estimates[base].model_id.clone(), diffs, args.alpha, args.multiplier)?;

    let mut diagnostics = vec![Diagnostic::new(
        "no_model_above_threshold",
        Some(comparison.max_diff),
        comparison.all_equivalent,
    )];
    diagnostics.push(Diagnostic::new(
        "tail_khat",
        comparison.khat_tail,
        comparison.k >= MIN_DIAGNOSTIC_MODELS && comparison.reliable,
    ));
    for e in &estimates {
        if let Some(k) = &e.khat_per_obs {
            let worst = k.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            diagnostics.push(Diagnostic::new(
                format!("psis_khat_max:{}", e.model_id),
                Some(worst),
                e.reliable,
            ));
        }
    }
    for w in &weights {
        diagnostics.push(Diagnostic::new(
            format!("rule_of_four:{}", w.model),
            Some(w.delta),
            w.rule_of_four_safe,
        ));
    }

    let mut report = ReportBundle::new(Provenance::new("compare", inputs, args, args.seed)?);
    report.comparison = Some(comparison);
    report.weights = weights;
    report.diagnostics = diagnostics;
    Ok(report)
}

pub fn run_compare(args: &CompareArgs) -> Result<()> {
    let report = compare(args)?;
    let bytes = match args.format {
        Format::Json => report.to_json()?.into_bytes(),
        Format::Csv => csv_bytes(&report.comparison_rows())?,
    };
    emit(args.out.as_deref(), &bytes)
}

pub fn forward(args: &ForwardArgs) -> Result<ReportBundle> {
    check_tuning(args.alpha, args.multiplier)?;
    let mut inputs = vec![InputHash::of(&args.data)?];
    let train = io::read_dataset_csv(&args.data, &args.target)?;
    let test = match &args.test {
        Some(p) => {
            inputs.push(InputHash::of(p)?);
            Some(io::read_dataset_csv(p, &args.target)?)
        }
        None => None,
    };
    let max_size = args.max_size.unwrap_or(train.p());
    let prior = args.prior.config();
    let k_mode = args.constant_k.map_or(KMode::Candidates, KMode::Constant);

    let mut path = search::forward_search(&train, max_size, &ExactLoo(prior))?;
    if let Some(test) = &test {
        path = search::evaluate_test(&path, &train, test, &prior)?;
    }
    path = search::attach_reference(&path, &train, test.as_ref(), &args.reference_prior.config())?;
    let path = search::correct_path(&path, args.multiplier, args.alpha, k_mode)?;
    let verdicts = search::stopping_rules(&path)?;

    let mut report = ReportBundle::new(Provenance::new("forward", inputs, args, args.seed)?);
    report.diagnostics = vec![Diagnostic::new(
        "steps_corrected",
        Some(path.steps.iter().filter(|s| s.corrected).count() as f64),
        true,
    )];
    report.path = Some(path);
    report.verdicts = Some(verdicts);
    Ok(report)
}

pub fn run_forward(args: &ForwardArgs) -> Result<()> {
    let report = forward(args)?;
    if let Some(dir) = &args.out_dir {
        fs::create_dir_all(dir)?;
        write_csv_file(&dir.join("path.csv"), &report.path_rows())?;
        fs::write(dir.join("report.json"), report.to_json()?)?;
        return Ok(());
    }
    let bytes = match args.format {
        Format::Json => report.to_json()?.into_bytes(),
        Format::Csv => csv_bytes(&report.path_rows())?,
    };
    emit(args.out.as_deref(), &bytes)
}

#[derive(Serialize)]
struct SimulationSummary<'a, S: Serialize> {
    schema_version: u32,
    kind: ExperimentKind,
    seed: u64,
    spec_hash: String,
    tables: Vec<String>,
    summary: &'a [S],
    provenance: Provenance,
}

/// Loads an experiment file, applying a seed override.
pub fn load_experiment(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|source| Error::UnreadableInput {
        path: path.display().to_string(),
        source,
    })?;
    let mut cfg = ExperimentConfig::from_toml_str(&text)?;
    if let Some(seed) = seed {
        if let Some(m) = cfg.many_k.as_mut() {
            m.seed = seed;
        }
        if let Some(f) = cfg.forward.as_mut() {
            f.seed = seed;
        }
    }
    Ok(cfg)
}

fn multiplier_tag(m: f64) -> String {
    format!("{m}")
}

pub fn run_simulate(args: &SimulateArgs) -> Result<()> {
    let cfg = load_experiment(&args.config, args.seed)?;
    let inputs = vec![InputHash::of(&args.config)?];
    fs::create_dir_all(&args.out_dir)?;
    let dir = &args.out_dir;
    match cfg.kind {
        ExperimentKind::ManyK => {
            let mk = cfg.many_k.as_ref().expect("validated config");
            let res = sim::run_many_k(mk)?;
            let tables = vec!["many_k_reps.csv".to_owned(), "many_k_summary.csv".to_owned()];
            write_csv_file(&dir.join(&tables[0]), &res.reps)?;
            write_csv_file(&dir.join(&tables[1]), &res.summary)?;
            let summary = SimulationSummary {
                schema_version: SCHEMA_VERSION,
                kind: cfg.kind,
                seed: mk.seed,
                spec_hash: sim::spec_hash(mk),
                tables,
                summary: &res.summary,
                provenance: Provenance::new("simulate", inputs, &cfg, Some(mk.seed))?,
            };
            write_json(&dir.join("summary.json"), &summary)
        }
        ExperimentKind::Forward => {
            let fc = cfg.forward.as_ref().expect("validated config");
            let res = sim::run_forward_experiment(fc)?;
            let mut tables = vec!["forward_runs.csv".to_owned(), "forward_summary.csv".to_owned()];
            write_csv_file(&dir.join(&tables[0]), &res.runs)?;
            write_csv_file(&dir.join(&tables[1]), &res.summary)?;
            for &m in &fc.multipliers {
                let name = format!("trajectory_m{}.csv", multiplier_tag(m));
                let rows: Vec<_> = res.trajectories.iter().filter(|r| r.multiplier == m).cloned().collect();
                write_csv_file(&dir.join(&name), &rows)?;
                tables.push(name);
            }
            let summary = SimulationSummary {
                schema_version: SCHEMA_VERSION,
                kind: cfg.kind,
                seed: fc.seed,
                spec_hash: sim::spec_hash(fc),
                tables,
                summary: &res.summary,
                provenance: Provenance::new("simulate", inputs, &cfg, Some(fc.seed))?,
            };
            write_json(&dir.join("summary.json"), &summary)
        }
    }
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}
