//! Report JSON and the other files of a run directory.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use shiftex::text::Vocabulary;
use shiftex::{FeasibilityRule, LabeledDataset, RobustnessReport};

use crate::config::RunConfig;

/// Bumped whenever a report field changes meaning or disappears.
pub const SCHEMA_VERSION: u32 = 1;

pub const REPORT: &str = "report.json";
pub const EVALUATION: &str = "evaluation.json";
pub const EXPLANATION: &str = "explanation.json";
pub const DATA: &str = "data.json";
pub const RENDERED: &str = "explanation.txt";
pub const TRACE: &str = "trace.csv";
pub const PLOT_DIR: &str = "plot";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupInfo {
    pub id: usize,
    pub label: String,
    pub source_rows: usize,
    pub target_rows: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; zero for a single run.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepeatSummary {
    pub seeds: Vec<u64>,
    pub pe: MeanStd,
    pub wg_pe: MeanStd,
    pub feasible_pct: MeanStd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub run: u64,
    pub clustering: u64,
    pub optimizer: u64,
    pub perturbation: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub schema_version: u32,
    pub tool_version: String,
    pub method: String,
    pub pe: f64,
    /// Keyed by group id.
    pub per_group_pe: BTreeMap<usize, f64>,
    pub wg_pe: f64,
    pub feasible_pct: f64,
    pub feasibility_rule: FeasibilityRule,
    /// Share of rows whose counterfactual crossed the decision threshold.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flip_rate: Option<f64>,
    pub groups: Vec<GroupInfo>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repeats: Option<RepeatSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub robustness: Option<RobustnessReport>,
    pub explanation: String,
    pub seeds: Seeds,
    pub config: RunConfig,
}

impl EvaluationReport {
    /// The invariants every written report satisfies.
    pub fn validate(&self) -> Result<()> {
        ensure!(self.schema_version == SCHEMA_VERSION, "unsupported report version {}", self.schema_version);
        ensure!(!self.per_group_pe.is_empty(), "report has no groups");
        let min = self.per_group_pe.values().copied().fold(f64::INFINITY, f64::min);
        ensure!(
            min == self.wg_pe,
            "wg_pe {} differs from the smallest group PE {min}",
            self.wg_pe
        );
        let mut numbers = vec![self.pe, self.wg_pe, self.feasible_pct];
        numbers.extend(self.per_group_pe.values());
        numbers.extend(self.flip_rate);
        if let Some(r) = &self.robustness {
            numbers.extend([r.omega, r.omega_worst, r.displacement_omega, r.displacement_omega_worst]);
        }
        if let Some(r) = &self.repeats {
            numbers.extend([r.pe.mean, r.pe.std, r.wg_pe.mean, r.wg_pe.std, r.feasible_pct.mean, r.feasible_pct.std]);
        }
        if let Some(bad) = numbers.iter().find(|v| !v.is_finite()) {
            bail!("report contains a non-finite number ({bad})");
        }
        Ok(())
    }
}

/// Preprocessed inputs of a run, enough to re-evaluate without the CSVs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunData {
    pub source: LabeledDataset,
    pub target: LabeledDataset,
    pub groups: Vec<GroupInfo>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<TextData>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TextData {
    pub vocab: Vocabulary,
    pub source_docs: Vec<String>,
}

pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).with_context(|| format!("serializing {name}"))?;
    text.push('\n');
    let path = dir.join(name);
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: DeserializeOwned>(dir: &Path, name: &str) -> Result<T> {
    let path = dir.join(name);
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("{} is corrupted", path.display()))
}
