//! SFT data generation: several agents solve each query with different
//! prompting strategies, a majority vote picks one trajectory, and the
//! aggregator keeps it only if it is correct, rewriting it into the compact
//! four-section trace.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::domain::{CauseId, RootCauseCatalog, Symptom};
use crate::error::{RcaError, Result};
use crate::oracle::{self, fact_relation, CauseEvidence};
use crate::phrases::{self, fill, num};
use crate::promptkit::{answer_token, parse_query, DatasetRecord, RenderedQuery, StructuredTrace, Trajectory};

pub const ENV_BASE_URL: &str = "RCA_LLM_BASE_URL";
pub const ENV_API_KEY: &str = "RCA_LLM_API_KEY";
pub const ENV_MODEL: &str = "RCA_LLM_MODEL";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Strategy {
    Elimination,
    Contradiction,
}

impl Strategy {
    /// Instruction prepended to the query for a remote model.
    pub fn instruction(self) -> &'static str {
        match self {
            Strategy::Elimination => {
                "Evaluate each candidate root cause against the observed symptom, rule out every candidate the data \
                 does not support, and answer with the one that remains."
            }
            Strategy::Contradiction => {
                "Assume each candidate root cause in turn, look for a contradiction with the data, discard the \
                 contradicted ones, and answer with the one that survives."
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Backend {
    MockOracle,
    RemoteLlm {
        endpoint: String,
        model: String,
        #[serde(default)]
        temperature: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        api_key: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub strategy: Strategy,
    pub backend: Backend,
}

impl AgentSpec {
    pub fn validate(&self) -> Result<()> {
        if let Backend::RemoteLlm { endpoint, model, .. } = &self.backend {
            if endpoint.trim().is_empty() || model.trim().is_empty() {
                return Err(RcaError::Validation("remote agents need an endpoint and a model name".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub agents: Vec<AgentSpec>,
    pub max_in_flight: usize,
    /// Extra attempts after a failed remote request.
    pub retries: u32,
    pub timeout_s: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            agents: vec![
                AgentSpec { strategy: Strategy::Elimination, backend: Backend::MockOracle },
                AgentSpec { strategy: Strategy::Contradiction, backend: Backend::MockOracle },
            ],
            max_in_flight: 4,
            retries: 2,
            timeout_s: 60.0,
        }
    }
}

impl PipelineConfig {
    /// Two remote agents when the endpoint and model are set in the
    /// environment, otherwise the mock pair.
    pub fn from_env() -> Self {
        let base = std::env::var(ENV_BASE_URL).ok().filter(|s| !s.is_empty());
        let model = std::env::var(ENV_MODEL).ok().filter(|s| !s.is_empty());
        let mut config = Self::default();
        if let (Some(endpoint), Some(model)) = (base, model) {
            let api_key = std::env::var(ENV_API_KEY).ok().filter(|s| !s.is_empty());
            config.agents = [Strategy::Elimination, Strategy::Contradiction]
                .into_iter()
                .map(|strategy| AgentSpec {
                    strategy,
                    backend: Backend::RemoteLlm {
                        endpoint: endpoint.clone(),
                        model: model.clone(),
                        temperature: 0.0,
                        api_key: api_key.clone(),
                    },
                })
                .collect();
        }
        config
    }

    pub fn validate(&self) -> Result<()> {
        if self.agents.is_empty() {
            return Err(RcaError::Validation("pipeline needs at least one agent".into()));
        }
        if self.max_in_flight == 0 {
            return Err(RcaError::Validation("max_in_flight must be positive".into()));
        }
        if !(self.timeout_s > 0.0) {
            return Err(RcaError::Validation("timeout must be positive".into()));
        }
        self.agents.iter().try_for_each(AgentSpec::validate)
    }
}

/// What the mock agents and the aggregator read out of a query.
struct QueryFindings {
    symptom: Symptom,
    samples: usize,
    evidence: Vec<CauseEvidence>,
    chosen: crate::domain::CauseId,
}

fn analyze(query: &RenderedQuery) -> Result<QueryFindings> {
    let parsed = parse_query(&query.text)?;
    let symptom = oracle::detect_symptom(&parsed.trace)?
        .ok_or_else(|| RcaError::Validation(format!("{}: query shows no symptom", query.instance_id)))?;
    let carriers = vec![0; parsed.cells.len()];
    let evidence = oracle::evaluate_rules_on(&parsed.cells, &carriers, &parsed.trace, &symptom)?;
    let chosen = oracle::select_cause(&evidence)?;
    Ok(QueryFindings { symptom, samples: parsed.trace.samples.len(), evidence, chosen })
}

/// Cause the rule oracle selects from the query tables alone.
pub fn oracle_cause(query: &RenderedQuery) -> Result<CauseId> {
    Ok(analyze(query)?.chosen)
}

fn symptom_line(f: &QueryFindings) -> String {
    fill(
        phrases::SYMPTOM_LINE,
        &[&f.symptom.affected_indices.len().to_string(), &f.samples.to_string(), &f.symptom.onset_index.to_string()],
    )
}

fn elimination_text(f: &QueryFindings, catalog: &RootCauseCatalog) -> String {
    let mut lines = vec![phrases::ELIM_INTRO.to_string(), symptom_line(f)];
    for entry in &catalog.entries {
        let Some(ev) = f.evidence.iter().find(|e| e.cause == entry.cause) else { continue };
        lines.push(fill(phrases::ELIM_CANDIDATE, &[&entry.label, &entry.description]));
        for fact in &ev.facts {
            lines.push(fill(phrases::ELIM_CHECK, &[&fact.name, &num(fact.value), &num(fact.threshold)]));
            lines.push(fill(phrases::ELIM_VERIFY, &[&fact.name, &num(fact.value)]));
        }
        if let Some(fact) = ev.facts.first() {
            let (value, cmp, threshold) = fact_relation(fact, true);
            let template = if ev.triggered { phrases::ELIM_KEEP } else { phrases::ELIM_REJECT };
            lines.push(fill(template, &[&value, cmp, &threshold, &entry.label]));
        }
    }
    let label = catalog.label_of(f.chosen);
    lines.push(fill(phrases::ELIM_RECHECK, &[label]));
    if let Some(fact) = f.evidence.iter().find(|e| e.cause == f.chosen).and_then(|e| e.facts.first()) {
        lines.push(fill(phrases::ELIM_CHECK, &[&fact.name, &num(fact.value), &num(fact.threshold)]));
    }
    lines.push(fill(phrases::ELIM_FINAL, &[label]));
    lines.push(answer_token(label));
    lines.join("\n")
}

fn contradiction_text(f: &QueryFindings, catalog: &RootCauseCatalog) -> String {
    let mut lines = vec![phrases::CONTRA_INTRO.to_string(), symptom_line(f)];
    for entry in &catalog.entries {
        let Some(ev) = f.evidence.iter().find(|e| e.cause == entry.cause) else { continue };
        lines.push(fill(phrases::CONTRA_ASSUME, &[&entry.label, &entry.description]));
        for fact in &ev.facts {
            lines.push(fill(phrases::CONTRA_EXPECT, &[&fact.name, fact.comparator.symbol(), &num(fact.threshold)]));
            lines.push(fill(phrases::CONTRA_OBSERVE, &[&num(fact.value), &fact.name]));
            lines.push(fill(phrases::CONTRA_RECHECK, &[&fact.name, &num(fact.value)]));
        }
        let template = if ev.triggered { phrases::CONTRA_CONSISTENT } else { phrases::CONTRA_CONTRADICT };
        lines.push(fill(template, &[&entry.label]));
    }
    let label = catalog.label_of(f.chosen);
    lines.push(fill(phrases::CONTRA_FINAL, &[label]));
    lines.push(answer_token(label));
    lines.join("\n")
}

fn build_client(timeout_s: f64) -> Result<reqwest::blocking::Client> {
    reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs_f64(timeout_s))
        .build()
        .map_err(|e| RcaError::Transport { instance_id: String::new(), message: e.to_string() })
}

fn remote_solve(
    client: &reqwest::blocking::Client,
    spec: &AgentSpec,
    query: &RenderedQuery,
    retries: u32,
) -> Result<Trajectory> {
    let Backend::RemoteLlm { endpoint, model, temperature, api_key } = &spec.backend else {
        unreachable!("remote_solve called with a mock backend")
    };
    let url = format!("{}/v1/chat/completions", endpoint.trim_end_matches('/'));
    let body = serde_json::json!({
        "model": model,
        "messages": [
            {"role": "system", "content": spec.strategy.instruction()},
            {"role": "user", "content": query.text},
        ],
        "temperature": temperature,
    });
    let mut last = String::new();
    for attempt in 0..=retries {
        if attempt > 0 {
            std::thread::sleep(Duration::from_millis(100 * attempt as u64));
        }
        let mut request = client.post(&url).json(&body);
        if let Some(key) = api_key {
            request = request.bearer_auth(key);
        }
        let response = match request.send() {
            Ok(r) => r,
            Err(e) => {
                last = e.to_string();
                continue;
            }
        };
        let status = response.status();
        if !status.is_success() {
            last = format!("HTTP {status}");
            continue;
        }
        let value: serde_json::Value = match response.json() {
            Ok(v) => v,
            Err(e) => {
                last = format!("bad response body: {e}");
                continue;
            }
        };
        match value.pointer("/choices/0/message/content").and_then(|c| c.as_str()) {
            Some(text) => return Ok(Trajectory::from_free_text(text.to_string())),
            None => last = "response has no choices[0].message.content".into(),
        }
    }
    Err(RcaError::Transport {
        instance_id: query.instance_id.clone(),
        message: format!("{last} (after {} attempts)", retries + 1),
    })
}

pub fn agent_solve(spec: &AgentSpec, query: &RenderedQuery) -> Result<Trajectory> {
    agent_solve_with(spec, query, &PipelineConfig::default())
}

fn agent_solve_with(spec: &AgentSpec, query: &RenderedQuery, config: &PipelineConfig) -> Result<Trajectory> {
    spec.validate()?;
    match spec.backend {
        Backend::MockOracle => {
            let findings = analyze(query)?;
            let text = match spec.strategy {
                Strategy::Elimination => elimination_text(&findings, &query.catalog),
                Strategy::Contradiction => contradiction_text(&findings, &query.catalog),
            };
            Trajectory::from_text(text)
        }
        Backend::RemoteLlm { .. } => remote_solve(&build_client(config.timeout_s)?, spec, query, config.retries),
    }
}

/// Index of the selected trajectory: the first member, by agent index, of the
/// largest answer group; ties go to the group whose first member comes first.
pub fn majority_vote(trajectories: &[Trajectory]) -> Option<usize> {
    let mut best: Option<(usize, usize)> = None;
    for (i, t) in trajectories.iter().enumerate() {
        if trajectories[..i].iter().any(|p| p.terminal_answer == t.terminal_answer) {
            continue;
        }
        let size = trajectories.iter().filter(|p| p.terminal_answer == t.terminal_answer).count();
        if best.is_none_or(|(_, s)| size > s) {
            best = Some((i, size));
        }
    }
    best.map(|(i, _)| i)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Rejection {
    WrongAnswer { expected: String, got: Option<String> },
    /// The compact trace would not be shorter than the trajectory.
    NotCompressed { trace_tokens: usize, trajectory_tokens: usize },
    Unreadable(String),
}

/// Keeps a correct trajectory and rewrites it into the four-section format.
pub fn aggregate(selected: &Trajectory, record: &DatasetRecord) -> std::result::Result<StructuredTrace, Rejection> {
    if selected.terminal_answer.as_deref() != Some(record.ground_truth_label.as_str()) {
        return Err(Rejection::WrongAnswer {
            expected: record.ground_truth_label.clone(),
            got: selected.terminal_answer.clone(),
        });
    }
    let findings = analyze(&record.query).map_err(|e| Rejection::Unreadable(e.to_string()))?;
    let trace = oracle::build_structured_trace(&findings.evidence, record.ground_truth_cause, &record.query.catalog);
    let trace_tokens = trace.tokens().map_err(|e| Rejection::Unreadable(e.to_string()))?.len();
    if trace_tokens >= selected.tokens.len() {
        return Err(Rejection::NotCompressed { trace_tokens, trajectory_tokens: selected.tokens.len() });
    }
    Ok(trace)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureEntry {
    pub instance_id: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftDatasetReport {
    pub records: Vec<DatasetRecord>,
    pub acceptance_rate: f64,
    /// |trace| / |selected trajectory| for every emitted record.
    pub token_ratios: Vec<f64>,
    pub mean_token_ratio: f64,
    /// Token ratio histogram over ten equal bins on [0, 1].
    pub ratio_histogram: Vec<usize>,
    pub rejected: Vec<FailureEntry>,
    pub failures: Vec<FailureEntry>,
}

/// Runs every agent on every record, votes, filters and aggregates.
pub fn build_sft_dataset(records: &[DatasetRecord], config: &PipelineConfig) -> Result<SftDatasetReport> {
    if records.is_empty() {
        return Err(RcaError::Validation("no instances to process".into()));
    }
    config.validate()?;
    let m = config.agents.len();
    let jobs = records.len() * m;
    let results: Vec<Result<Trajectory>> = if config.agents.iter().all(|a| a.backend == Backend::MockOracle) {
        (0..jobs)
            .map(|j| agent_solve_with(&config.agents[j % m], &records[j / m].query, config))
            .collect()
    } else {
        let client = build_client(config.timeout_s)?;
        let slots: Vec<Mutex<Option<Result<Trajectory>>>> = (0..jobs).map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        std::thread::scope(|scope| {
            for _ in 0..config.max_in_flight.min(jobs) {
                scope.spawn(|| loop {
                    let j = next.fetch_add(1, Ordering::SeqCst);
                    if j >= jobs {
                        break;
                    }
                    let spec = &config.agents[j % m];
                    let query = &records[j / m].query;
                    let out = match spec.backend {
                        Backend::MockOracle => agent_solve_with(spec, query, config),
                        Backend::RemoteLlm { .. } => remote_solve(&client, spec, query, config.retries),
                    };
                    *slots[j].lock().expect("slot lock") = Some(out);
                });
            }
        });
        slots
            .into_iter()
            .map(|s| s.into_inner().expect("slot lock").expect("every job ran"))
            .collect()
    };

    let mut out = Vec::new();
    let mut ratios = Vec::new();
    let mut rejected = Vec::new();
    let mut failures = Vec::new();
    let mut results = results.into_iter();
    for record in records {
        let group: Vec<Result<Trajectory>> = results.by_ref().take(m).collect();
        if let Some(Err(e)) = group.iter().find(|r| r.is_err()) {
            failures.push(FailureEntry { instance_id: record.instance_id.clone(), message: e.to_string() });
            continue;
        }
        let trajectories: Vec<Trajectory> = group.into_iter().map(|r| r.expect("checked")).collect();
        let selected = &trajectories[majority_vote(&trajectories).expect("at least one agent")];
        match aggregate(selected, record) {
            Ok(trace) => {
                let trace_tokens = trace.tokens()?.len();
                ratios.push(trace_tokens as f64 / selected.tokens.len() as f64);
                let mut r = record.clone();
                r.trace = Some(trace);
                if config.agents.iter().any(|a| a.backend != Backend::MockOracle) {
                    r.raw_trajectory = Some(selected.text.clone());
                }
                out.push(r);
            }
            Err(why) => rejected.push(FailureEntry {
                instance_id: record.instance_id.clone(),
                message: format!("{why:?}"),
            }),
        }
    }
    let mut histogram = vec![0usize; 10];
    for r in &ratios {
        histogram[((r * 10.0) as usize).min(9)] += 1;
    }
    let mean = if ratios.is_empty() { f64::NAN } else { ratios.iter().sum::<f64>() / ratios.len() as f64 };
    Ok(SftDatasetReport {
        acceptance_rate: out.len() as f64 / records.len() as f64,
        records: out,
        mean_token_ratio: mean,
        token_ratios: ratios,
        ratio_histogram: histogram,
        rejected,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(answer: Option<&str>) -> Trajectory {
        Trajectory { tokens: vec![], text: String::new(), terminal_answer: answer.map(String::from) }
    }

    #[test]
    fn vote_examples() {
        assert_eq!(majority_vote(&[traj(Some("C3")), traj(Some("C3"))]), Some(0));
        assert_eq!(majority_vote(&[traj(Some("C3")), traj(Some("C1"))]), Some(0));
        assert_eq!(majority_vote(&[traj(None), traj(Some("C2")), traj(Some("C2"))]), Some(1));
        assert_eq!(majority_vote(&[traj(Some("C1")), traj(None), traj(None)]), Some(1));
        assert_eq!(majority_vote(&[]), None);
    }

    #[test]
    fn remote_spec_needs_endpoint_and_model() {
        let spec = AgentSpec {
            strategy: Strategy::Elimination,
            backend: Backend::RemoteLlm { endpoint: String::new(), model: "m".into(), temperature: 0.0, api_key: None },
        };
        assert!(spec.validate().is_err());
        assert!(PipelineConfig { agents: vec![], ..Default::default() }.validate().is_err());
    }
}
