//! Text artifacts: the diagnostic query, answer extraction, the randomized
//! test variant, reasoning traces, the token vocabulary and dataset files.

pub mod tables;
pub mod tokenizer;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{CatalogEntry, CauseId, CellConfig, DriveTrace, RootCauseCatalog};
use crate::error::{RcaError, Result};
use crate::phrases;
use crate::seeding::derive_seed;
use crate::simulator::{build_instance_with, GenerationConfig, LabeledInstance};

pub use tokenizer::{answer_token, detokenize, tokenize, tokenize_lossy, vocab_hash, vocabulary};

const INTRO: &str = "Analyze the 5G drive-test user plane data and the engineering parameters below. \
Find out why the throughput drops below 600 Mbps on parts of the route. \
Pick the most likely root cause from the 8 candidates listed and give its number enclosed in \\boxed{} as the final answer.";

const GIVEN: &str = "Given:
- A digital tilt of 255 is the default setting and stands for a downtilt of 6 degrees. Any other value is the downtilt in degrees.

Beam Scenario and Vertical Beamwidth Relationships:
- Beam Scenario DEFAULT or SCENARIO_1 to SCENARIO_5: the vertical beamwidth is 6 degrees.
- Beam Scenario SCENARIO_6 to SCENARIO_11: the vertical beamwidth is 12 degrees.
- Beam Scenario SCENARIO_12 or above: the vertical beamwidth is 25 degrees.";

pub const USER_PLANE_INTRO: &str = "User plane drive test data as follows:";
pub const ENGINEERING_INTRO: &str = "Engineering parameters data as follows:";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderedQuery {
    pub text: String,
    pub catalog: RootCauseCatalog,
    pub instance_id: String,
}

/// A token sequence produced by an agent or a policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub tokens: Vec<u32>,
    pub text: String,
    pub terminal_answer: Option<String>,
}

impl Trajectory {
    /// Tokenizes text drawn from the closed grammar.
    pub fn from_text(text: String) -> Result<Self> {
        let tokens = tokenize(&text)?;
        let terminal_answer = parse_answer(&text);
        Ok(Self { tokens, text, terminal_answer })
    }

    /// Accepts arbitrary text, counting unknown words as `<unk>`.
    pub fn from_free_text(text: String) -> Self {
        let tokens = tokenize_lossy(&text);
        let terminal_answer = parse_answer(&text);
        Self { tokens, text, terminal_answer }
    }
}

/// The compact four-section reasoning format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuredTrace {
    pub data_analysis: String,
    pub root_cause_analysis: String,
    pub identification: String,
    pub summary: String,
    pub answer_label: String,
}

impl StructuredTrace {
    pub fn to_text(&self) -> String {
        [
            phrases::TASK_DATA,
            &self.data_analysis,
            phrases::TASK_RCA,
            &self.root_cause_analysis,
            phrases::TASK_IDENT,
            &self.identification,
            phrases::TASK_SUMMARY,
            &self.summary,
            &answer_token(&self.answer_label),
        ]
        .join("\n")
    }

    pub fn tokens(&self) -> Result<Vec<u32>> {
        tokenize(&self.to_text())
    }

    pub fn sections(&self) -> [&str; 4] {
        [&self.data_analysis, &self.root_cause_analysis, &self.identification, &self.summary]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordMetadata {
    pub seed: u64,
    pub planted_cause: CauseId,
    /// Causes in label order C1..C8.
    pub catalog_permutation: Vec<CauseId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub randomization_seed: Option<u64>,
    #[serde(default)]
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub instance_id: String,
    pub query: RenderedQuery,
    pub ground_truth_label: String,
    pub ground_truth_cause: CauseId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<StructuredTrace>,
    /// Verbatim agent output kept for audit when it came from a remote model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_trajectory: Option<String>,
    pub metadata: RecordMetadata,
}

impl DatasetRecord {
    pub fn validate(&self) -> Result<()> {
        self.query.catalog.validate()?;
        if self.query.catalog.cause_of(&self.ground_truth_label) != Some(self.ground_truth_cause) {
            return Err(RcaError::Validation(format!(
                "{}: label {} does not name {}",
                self.instance_id, self.ground_truth_label, self.ground_truth_cause
            )));
        }
        Ok(())
    }
}

/// The query tables and cause list recovered from rendered text.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedQuery {
    pub catalog: RootCauseCatalog,
    pub cells: Vec<CellConfig>,
    pub trace: DriveTrace,
}

pub fn render_query(instance: &LabeledInstance) -> Result<RenderedQuery> {
    let text = render_query_text(&instance.catalog, &instance.scenario.cells, &instance.trace)?;
    Ok(RenderedQuery { text, catalog: instance.catalog.clone(), instance_id: instance.instance_id.clone() })
}

pub fn render_query_text(catalog: &RootCauseCatalog, cells: &[CellConfig], trace: &DriveTrace) -> Result<String> {
    let causes: Vec<String> = catalog.entries.iter().map(|e| format!("{}: {}", e.label, e.description)).collect();
    Ok(format!(
        "{INTRO}\n\n{}\n\n{GIVEN}\n\n{USER_PLANE_INTRO}\n\n{}\n\n{ENGINEERING_INTRO}\n\n{}\n",
        causes.join("\n"),
        tables::render_user_plane(trace)?,
        tables::render_engineering(cells),
    ))
}

fn table_after<'a>(lines: &[&'a str], intro: &str) -> Result<(Vec<&'a str>, usize)> {
    let at = lines
        .iter()
        .position(|l| *l == intro)
        .ok_or_else(|| RcaError::Parse { line: 0, message: format!("missing section {intro:?}") })?;
    let start = at + 2;
    let rows: Vec<&str> = lines.iter().skip(start).take_while(|l| !l.trim().is_empty()).copied().collect();
    Ok((rows, start + 1))
}

pub fn parse_query(text: &str) -> Result<ParsedQuery> {
    let lines: Vec<&str> = text.lines().collect();
    let mut entries = Vec::new();
    for (k, line) in lines.iter().enumerate() {
        if *line == "Given:" {
            break;
        }
        let Some((label, description)) = line.split_once(": ") else { continue };
        if label.len() < 2 || !label.starts_with('C') || !label[1..].bytes().all(|b| b.is_ascii_digit()) {
            continue;
        }
        let cause = CauseId::ALL
            .into_iter()
            .find(|c| c.description() == description)
            .ok_or_else(|| RcaError::Parse { line: k + 1, message: format!("unknown cause description for {label}") })?;
        entries.push(CatalogEntry { label: label.to_string(), cause, description: description.to_string() });
    }
    let catalog = RootCauseCatalog { entries };
    catalog.validate().map_err(|e| RcaError::Parse { line: 0, message: e.to_string() })?;
    let (up, up_line) = table_after(&lines, USER_PLANE_INTRO)?;
    let (eng, eng_line) = table_after(&lines, ENGINEERING_INTRO)?;
    Ok(ParsedQuery {
        catalog,
        cells: tables::parse_engineering(&eng, eng_line)?,
        trace: tables::parse_user_plane(&up, up_line)?,
    })
}

/// Extracts the display label from the last `\boxed{...}` in `text`.
pub fn parse_answer(text: &str) -> Option<String> {
    const TAG: &str = "\\boxed{";
    let start = text.rfind(TAG)? + TAG.len();
    let mut depth = 1usize;
    let mut end = None;
    for (i, c) in text[start..].char_indices() {
        match c {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    end = Some(start + i);
                    break;
                }
            }
            _ => {}
        }
    }
    let mut inner = text[start..end?].trim();
    loop {
        let unwrapped = ["\\text{", "\\mathrm{", "\\textbf{"]
            .iter()
            .find_map(|p| inner.strip_prefix(p).and_then(|s| s.strip_suffix('}')));
        match unwrapped {
            Some(s) => inner = s.trim(),
            None => break,
        }
    }
    let digits = inner.strip_prefix('C').or_else(|| inner.strip_prefix('c')).unwrap_or(inner);
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let n: u32 = digits.parse().ok()?;
    Some(format!("C{n}"))
}

pub fn record_from_instance(instance: &LabeledInstance) -> Result<DatasetRecord> {
    let query = render_query(instance)?;
    Ok(DatasetRecord {
        instance_id: instance.instance_id.clone(),
        ground_truth_label: instance.catalog.label_of(instance.ground_truth).to_string(),
        ground_truth_cause: instance.ground_truth,
        trace: None,
        raw_trajectory: None,
        metadata: RecordMetadata {
            seed: instance.seed,
            planted_cause: instance.ground_truth,
            catalog_permutation: instance.catalog.order(),
            randomization_seed: None,
            attempts: instance.attempts,
        },
        query,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub per_cause: BTreeMap<String, usize>,
    pub instances: usize,
    /// Simulation attempts including discarded ones.
    pub attempts: usize,
}

impl DatasetStats {
    /// Share of attempts that were discarded.
    pub fn retry_rate(&self) -> f64 {
        if self.attempts == 0 {
            return 0.0;
        }
        (self.attempts - self.instances) as f64 / self.attempts as f64
    }
}

/// `per_cause` instances of every cause, interleaved by cause, with the
/// default catalog. Instance seeds derive from `seed` and the position.
pub fn generate_dataset(config: &GenerationConfig, per_cause: usize, seed: u64) -> Result<(Vec<DatasetRecord>, DatasetStats)> {
    if per_cause == 0 {
        return Err(RcaError::Validation("per-cause count must be positive".into()));
    }
    let mut records = Vec::with_capacity(per_cause * CauseId::ALL.len());
    let mut stats = DatasetStats { per_cause: BTreeMap::new(), instances: 0, attempts: 0 };
    for i in 0..per_cause {
        for cause in CauseId::ALL {
            let position = (i * CauseId::ALL.len() + cause.index()) as u64;
            let instance = build_instance_with(config, cause, derive_seed(seed, position), None)?;
            stats.attempts += instance.attempts as usize;
            stats.instances += 1;
            *stats.per_cause.entry(cause.name().to_string()).or_default() += 1;
            records.push(record_from_instance(&instance)?);
        }
    }
    Ok((records, stats))
}

/// Seeded label re-binding and engineering-row shuffle, then a re-render.
pub fn randomize_instance(record: &DatasetRecord, seed: u64) -> Result<DatasetRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order = CauseId::ALL.to_vec();
    order.shuffle(&mut rng);
    let parsed = parse_query(&record.query.text)?;
    let mut rows: Vec<usize> = (0..parsed.cells.len()).collect();
    rows.shuffle(&mut rng);
    let mut out = randomize_parsed(record, parsed, &order, &rows)?;
    out.metadata.randomization_seed = Some(seed);
    Ok(out)
}

/// Explicit form of [`randomize_instance`]: `cause_order[k]` gets label
/// `C<k+1>` and engineering row `k` of the output is input row `row_order[k]`.
pub fn randomize_with(record: &DatasetRecord, cause_order: &[CauseId], row_order: &[usize]) -> Result<DatasetRecord> {
    randomize_parsed(record, parse_query(&record.query.text)?, cause_order, row_order)
}

fn randomize_parsed(
    record: &DatasetRecord,
    parsed: ParsedQuery,
    cause_order: &[CauseId],
    row_order: &[usize],
) -> Result<DatasetRecord> {
    let catalog = RootCauseCatalog::from_order(cause_order)?;
    let mut sorted = row_order.to_vec();
    sorted.sort_unstable();
    if sorted != (0..parsed.cells.len()).collect::<Vec<_>>() {
        return Err(RcaError::Validation("row order is not a permutation".into()));
    }
    let cells: Vec<CellConfig> = row_order.iter().map(|&i| parsed.cells[i].clone()).collect();
    let text = render_query_text(&catalog, &cells, &parsed.trace)?;
    let mut out = record.clone();
    out.ground_truth_label = catalog.label_of(record.ground_truth_cause).to_string();
    out.metadata.catalog_permutation = catalog.order();
    out.trace = None;
    out.raw_trajectory = None;
    out.query = RenderedQuery { text, catalog, instance_id: record.query.instance_id.clone() };
    Ok(out)
}

pub fn write_jsonl(path: &Path, records: &[DatasetRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<DatasetRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DatasetRecord =
            serde_json::from_str(&line).map_err(|e| RcaError::Parse { line: k + 1, message: e.to_string() })?;
        record.validate().map_err(|e| RcaError::Parse { line: k + 1, message: e.to_string() })?;
        out.push(record);
    }
    Ok(out)
}
