use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use selbias::search::PathRow;
use selbias::sim::SCHEMA_VERSION;
use selbias::{ElpdComparison, Result, SearchPath, StopVerdicts, WeightReport};

/// A named check carried in a report; failures are content, not errors.
#[derive(Clone, Debug, Serialize)]
pub struct Diagnostic {
    pub name: String,
    pub value: Option<f64>,
    pub pass: bool,
}

impl Diagnostic {
    pub fn new(name: impl Into<String>, value: Option<f64>, pass: bool) -> Self {
        Self {
            name: name.into(),
            value,
            pass,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct InputHash {
    pub path: String,
    pub sha256: String,
}

impl InputHash {
    pub fn of(path: &Path) -> Result<Self> {
        Ok(Self {
            path: path.display().to_string(),
            sha256: selbias::io::sha256_file(path)?,
        })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Provenance {
    pub command: String,
    pub tool_version: String,
    pub inputs: Vec<InputHash>,
    pub config: Value,
    pub seed: Option<u64>,
}

impl Provenance {
    pub fn new<C: Serialize>(command: &str, inputs: Vec<InputHash>, config: &C, seed: Option<u64>) -> Result<Self> {
        Ok(Self {
            command: command.to_owned(),
            tool_version: selbias::VERSION.to_owned(),
            inputs,
            config: serde_json::to_value(config)?,
            seed,
        })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ReportBundle {
    pub schema_version: u32,
    pub comparison: Option<ElpdComparison>,
    pub weights: Vec<WeightReport>,
    pub path: Option<SearchPath>,
    pub verdicts: Option<StopVerdicts>,
    pub diagnostics: Vec<Diagnostic>,
    pub provenance: Provenance,
}

impl ReportBundle {
    pub fn new(provenance: Provenance) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            comparison: None,
            weights: Vec::new(),
            path: None,
            verdicts: None,
            diagnostics: Vec::new(),
            provenance,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// One row per compared model, against the baseline.
    pub fn comparison_rows(&self) -> Vec<ComparisonRow> {
        let Some(c) = &self.comparison else {
            return Vec::new();
        };
        c.diffs
            .iter()
            .zip(&self.weights)
            .map(|(d, w)| ComparisonRow {
                model: d.model_a.clone(),
                baseline: d.model_b.clone(),
                diff: d.estimate,
                se_diff: d.se_diff,
                threshold: c.threshold,
                bias_hat: c.bias_hat,
                above_threshold: d.estimate > c.threshold,
                prob_better: w.prob_better,
                pseudo_bma: w.pseudo_bma,
                pseudo_bma_plus: w.pseudo_bma_plus,
                rule_of_four_safe: w.rule_of_four_safe,
                schema_version: self.schema_version,
            })
            .collect()
    }

    pub fn path_rows(&self) -> Vec<PathRow> {
        self.path.as_ref().map(SearchPath::rows).unwrap_or_default()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ComparisonRow {
    pub model: String,
    pub baseline: String,
    pub diff: f64,
    pub se_diff: f64,
    pub threshold: f64,
    pub bias_hat: f64,
    pub above_threshold: bool,
    pub prob_better: f64,
    pub pseudo_bma: f64,
    pub pseudo_bma_plus: f64,
    pub rule_of_four_safe: bool,
    pub schema_version: u32,
}
