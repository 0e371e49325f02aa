//! pass@1 and maj@k over standard or randomized test sets, plus the
//! side-by-side method table.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::agentpipe::oracle_cause;
use crate::domain::CauseId;
use crate::error::{RcaError, Result};
use crate::promptkit::{parse_answer, randomize_instance, DatasetRecord};
use crate::seeding::derive_seed;
use crate::trainer::{extract_features, sample_actions, trajectory_for_actions, Policy};

const NONE_KEY: &str = "NONE";

/// Share of (instance, sample) cells whose answer equals the truth.
pub fn pass_at_1(answers: &[Vec<Option<String>>], truths: &[String]) -> Result<f64> {
    check_matrix(answers, truths)?;
    let cells = answers.len() * answers[0].len();
    let hits: usize = answers
        .iter()
        .zip(truths)
        .map(|(row, t)| row.iter().filter(|a| a.as_deref() == Some(t.as_str())).count())
        .sum();
    Ok(hits as f64 / cells as f64)
}

/// Share of instances whose modal answer equals the truth.
pub fn maj_at_k(answers: &[Vec<Option<String>>], truths: &[String]) -> Result<f64> {
    check_matrix(answers, truths)?;
    let hits = answers
        .iter()
        .zip(truths)
        .filter(|(row, t)| majority_label(row).as_deref() == Some(t.as_str()))
        .count();
    Ok(hits as f64 / answers.len() as f64)
}

/// Most frequent non-empty answer; ties go to the smallest label.
pub fn majority_label(row: &[Option<String>]) -> Option<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for a in row.iter().flatten() {
        *counts.entry(a.as_str()).or_default() += 1;
    }
    // BTreeMap iterates in label order, so the first maximum wins ties.
    let mut best: Option<(&str, usize)> = None;
    for (label, c) in counts {
        if best.is_none_or(|(_, b)| c > b) {
            best = Some((label, c));
        }
    }
    best.map(|(l, _)| l.to_string())
}

fn check_matrix(answers: &[Vec<Option<String>>], truths: &[String]) -> Result<()> {
    if answers.is_empty() {
        return Err(RcaError::Validation("no instances to score".into()));
    }
    if answers.len() != truths.len() {
        return Err(RcaError::Validation("answer rows and truths differ in length".into()));
    }
    let k = answers[0].len();
    if k == 0 || answers.iter().any(|r| r.len() != k) {
        return Err(RcaError::Validation("answer matrix is not rectangular".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Variant {
    Standard,
    Randomized,
}

impl std::str::FromStr for Variant {
    type Err = RcaError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "standard" => Ok(Variant::Standard),
            "randomized" => Ok(Variant::Randomized),
            other => Err(RcaError::Validation(format!("unknown variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub samples: usize,
    pub temperature: f64,
    pub seed: u64,
    pub variant: Variant,
    pub randomization_seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { samples: 4, temperature: 1.0, seed: 0, variant: Variant::Standard, randomization_seed: 0 }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(RcaError::Validation("eval needs at least one sample per instance".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(RcaError::Validation("temperature must be non-negative".into()));
        }
        Ok(())
    }
}

/// Anything that answers a query with display labels.
pub trait AnswerPolicy {
    fn answer(&self, record: &DatasetRecord, n: usize, temperature: f64, seed: u64) -> Result<Vec<Option<String>>>;
}

impl AnswerPolicy for Policy {
    fn answer(&self, record: &DatasetRecord, n: usize, temperature: f64, seed: u64) -> Result<Vec<Option<String>>> {
        let x = extract_features(&record.query)?;
        sample_actions(self, &x.0, n, temperature, seed)
            .into_iter()
            .map(|a| Ok(parse_answer(&trajectory_for_actions(&[a], &record.query.catalog)?.text)))
            .collect()
    }
}

/// Deterministic policy that answers with the rule oracle's choice.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleWrapper;

impl AnswerPolicy for OracleWrapper {
    fn answer(&self, record: &DatasetRecord, n: usize, _temperature: f64, _seed: u64) -> Result<Vec<Option<String>>> {
        let label = record.query.catalog.label_of(oracle_cause(&record.query)?).to_string();
        Ok(vec![Some(label); n])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceResult {
    pub instance_id: String,
    pub truth_label: String,
    pub truth_cause: CauseId,
    pub answers: Vec<Option<String>>,
    pub majority: Option<String>,
    /// Set when the policy could not process the record.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: EvalConfig,
    pub instances_total: usize,
    pub pass_at_1: f64,
    pub maj_at_k: f64,
    pub flagged: usize,
    /// truth cause -> predicted cause (or NONE) -> count, over all samples.
    pub confusion: BTreeMap<String, BTreeMap<String, usize>>,
    pub instances: Vec<InstanceResult>,
}

/// Scores a policy on a dataset; deterministic given the config seeds.
pub fn evaluate(policy: &dyn AnswerPolicy, dataset: &[DatasetRecord], config: &EvalConfig) -> Result<EvalReport> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(RcaError::Validation("empty evaluation dataset".into()));
    }
    let mut instances = Vec::with_capacity(dataset.len());
    let mut confusion: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    for (i, original) in dataset.iter().enumerate() {
        let record = match config.variant {
            Variant::Standard => original.clone(),
            Variant::Randomized => randomize_instance(original, derive_seed(config.randomization_seed, i as u64))?,
        };
        let sample_seed = derive_seed(config.seed, i as u64);
        let (answers, error) = match policy.answer(&record, config.samples, config.temperature, sample_seed) {
            Ok(a) if a.len() == config.samples => (a, None),
            Ok(a) => (vec![None; config.samples], Some(format!("policy returned {} samples", a.len()))),
            Err(e) => (vec![None; config.samples], Some(e.to_string())),
        };
        let row = confusion.entry(record.ground_truth_cause.name().to_string()).or_default();
        for a in &answers {
            let key = a
                .as_deref()
                .and_then(|l| record.query.catalog.cause_of(l))
                .map_or(NONE_KEY, |c| c.name());
            *row.entry(key.to_string()).or_default() += 1;
        }
        instances.push(InstanceResult {
            instance_id: record.instance_id.clone(),
            truth_label: record.ground_truth_label.clone(),
            truth_cause: record.ground_truth_cause,
            majority: majority_label(&answers),
            answers,
            error,
        });
    }
    let matrix: Vec<Vec<Option<String>>> = instances.iter().map(|r| r.answers.clone()).collect();
    let truths: Vec<String> = instances.iter().map(|r| r.truth_label.clone()).collect();
    Ok(EvalReport {
        config: config.clone(),
        instances_total: instances.len(),
        pass_at_1: pass_at_1(&matrix, &truths)?,
        maj_at_k: maj_at_k(&matrix, &truths)?,
        flagged: instances.iter().filter(|r| r.error.is_some()).count(),
        confusion,
        instances,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: String,
    pub variant: Variant,
    pub pass_at_1: f64,
    pub maj_at_k: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
}

impl Comparison {
    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.method.len()).max().unwrap_or(6).max(6);
        let k = self.rows.first().map_or(4, |r| r.samples);
        let mut out = format!("{:<width$}  {:<10}  {:>7}  {:>7}\n", "method", "variant", "pass@1", format!("maj@{k}"));
        for r in &self.rows {
            let variant = match r.variant {
                Variant::Standard => "standard",
                Variant::Randomized => "randomized",
            };
            out.push_str(&format!(
                "{:<width$}  {:<10}  {:>7.4}  {:>7.4}\n",
                r.method, variant, r.pass_at_1, r.maj_at_k
            ));
        }
        out
    }
}

pub fn compare_methods(reports: &[(String, EvalReport)]) -> Result<Comparison> {
    if reports.len() < 2 {
        return Err(RcaError::Validation("comparison needs at least two reports".into()));
    }
    let mut rows = Vec::with_capacity(reports.len());
    for (name, report) in reports {
        if rows.iter().any(|r: &ComparisonRow| &r.method == name) {
            return Err(RcaError::Validation(format!("duplicate method name {name:?}")));
        }
        rows.push(ComparisonRow {
            method: name.clone(),
            variant: report.config.variant,
            pass_at_1: report.pass_at_1,
            maj_at_k: report.maj_at_k,
            samples: report.config.samples,
        });
    }
    Ok(Comparison { rows })
}
