//! Rule-based diagnosis over the symptom window.
//!
//! Every rule produces a signed margin that is positive exactly when the rule
//! fires. Margins divided by a per-rule scale give the severity score used for
//! ranking; the same margins feed the toy policy's features.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::domain::{
    geo_distance, pci_mod30_conflict, total_downtilt, vertical_beamwidth, CauseId, CellConfig, DriveTrace,
    RootCauseCatalog, ScenarioConfig, Symptom, SymptomKind, THROUGHPUT_THRESHOLD_MBPS,
};
use crate::error::{RcaError, Result};
use crate::phrases::{self, fill, num};
use crate::promptkit::StructuredTrace;
use crate::simulator::link_geometry;

pub const SPEED_LIMIT_KMH: f64 = 40.0;
pub const WEAK_RSRP_DBM: f64 = -95.0;
pub const OVERSHOOT_DISTANCE_M: f64 = 1000.0;
pub const OVERLAP_WINDOW_DB: f64 = 6.0;
pub const HANDOVER_WINDOW_S: usize = 10;
pub const FREQUENT_HANDOVER_COUNT: usize = 3;
pub const MIN_SCHEDULED_RB: f64 = 160.0;
/// Handover parameters a correctly configured network would use.
pub const STANDARD_HYSTERESIS_DB: f64 = 3.0;
pub const STANDARD_TTT_S: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparator {
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "<=")]
    Le,
}

impl Comparator {
    pub fn symbol(self) -> &'static str {
        match self {
            Comparator::Gt => ">",
            Comparator::Lt => "<",
            Comparator::Ge => ">=",
            Comparator::Le => "<=",
        }
    }

    pub fn negation(self) -> Comparator {
        match self {
            Comparator::Gt => Comparator::Le,
            Comparator::Lt => Comparator::Ge,
            Comparator::Ge => Comparator::Lt,
            Comparator::Le => Comparator::Gt,
        }
    }

    pub fn holds(self, value: f64, threshold: f64) -> bool {
        match self {
            Comparator::Gt => value > threshold,
            Comparator::Lt => value < threshold,
            Comparator::Ge => value >= threshold,
            Comparator::Le => value <= threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fact {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    /// Relation that must hold for the rule to fire.
    pub comparator: Comparator,
}

impl Fact {
    fn new(name: &str, value: f64, threshold: f64, comparator: Comparator) -> Self {
        Self { name: name.to_string(), value, threshold, comparator }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CauseEvidence {
    pub cause: CauseId,
    pub triggered: bool,
    /// Normalized margin past the threshold; zero when not triggered.
    pub score: f64,
    /// Signed raw margin, positive iff triggered.
    pub margin: f64,
    /// The first fact decides the rule.
    pub facts: Vec<Fact>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnosis {
    pub cause: CauseId,
    pub evidence: Vec<CauseEvidence>,
    pub trace: StructuredTrace,
}

/// Divisor turning a raw margin into a score.
pub fn score_scale(cause: CauseId) -> f64 {
    match cause {
        CauseId::SpeedGt40 => SPEED_LIMIT_KMH,
        CauseId::ExcessDowntilt => 0.5,
        CauseId::OvershootGt1km => OVERSHOOT_DISTANCE_M,
        CauseId::NoncolocatedOverlap => 0.5,
        CauseId::PciMod30Conflict => 1.0,
        CauseId::FrequentHandover => FREQUENT_HANDOVER_COUNT as f64,
        CauseId::HandoverThresholdMisconfig => STANDARD_TTT_S as f64,
        CauseId::InsufficientRb => MIN_SCHEDULED_RB,
    }
}

pub fn detect_symptom(trace: &DriveTrace) -> Result<Option<Symptom>> {
    if trace.samples.is_empty() {
        return Err(RcaError::Validation("cannot detect a symptom in an empty trace".into()));
    }
    let affected: Vec<usize> = trace
        .samples
        .iter()
        .enumerate()
        .filter(|(_, s)| s.mac_dl_throughput < THROUGHPUT_THRESHOLD_MBPS)
        .map(|(i, _)| i)
        .collect();
    let onset = affected.first().copied();
    Ok(onset.map(|onset_index| Symptom {
        kind: SymptomKind::ThroughputBelowThreshold,
        threshold: THROUGHPUT_THRESHOLD_MBPS,
        onset_index,
        affected_indices: affected,
    }))
}

pub fn evaluate_rules(scenario: &ScenarioConfig, trace: &DriveTrace, symptom: &Symptom) -> Result<Vec<CauseEvidence>> {
    evaluate_rules_on(&scenario.cells, &scenario.carriers, trace, symptom)
}

/// Rule evaluation over bare engineering rows, usable on parsed query tables.
pub fn evaluate_rules_on(
    cells: &[CellConfig],
    carriers: &[u32],
    trace: &DriveTrace,
    symptom: &Symptom,
) -> Result<Vec<CauseEvidence>> {
    if carriers.len() != cells.len() {
        return Err(RcaError::Validation("one carrier entry per cell required".into()));
    }
    let window = &symptom.affected_indices;
    if window.is_empty() || window.iter().any(|&i| i >= trace.samples.len()) {
        return Err(RcaError::Validation("symptom window does not fit the trace".into()));
    }
    let by_pci: HashMap<u32, usize> = cells.iter().enumerate().map(|(i, c)| (c.pci, i)).collect();
    let serving: Vec<usize> = trace
        .samples
        .iter()
        .map(|s| {
            by_pci.get(&s.serving_pci).copied().ok_or_else(|| {
                RcaError::DataIntegrity(format!("serving PCI {} at {} has no engineering row", s.serving_pci, s.timestamp))
            })
        })
        .collect::<Result<_>>()?;
    let w = window.len() as f64;
    let samples = &trace.samples;

    let mut out = Vec::with_capacity(8);

    let max_speed = window.iter().map(|&i| samples[i].gps_speed).fold(f64::NEG_INFINITY, f64::max);
    out.push((
        CauseId::SpeedGt40,
        max_speed - SPEED_LIMIT_KMH,
        vec![Fact::new(phrases::FACT_MAX_SPEED, max_speed, SPEED_LIMIT_KMH, Comparator::Gt)],
    ));

    let mut above = 0usize;
    let mut angle_sum = 0.0;
    for &i in window {
        let cell = &cells[serving[i]];
        let g = link_geometry(cell, samples[i].position())?;
        let upper_edge = total_downtilt(cell)? - vertical_beamwidth(cell.beam_scenario) / 2.0;
        let exceed = upper_edge - g.depression;
        angle_sum += exceed;
        if exceed > 0.0 && samples[i].ss_rsrp < WEAK_RSRP_DBM {
            above += 1;
        }
    }
    let share = above as f64 / w;
    out.push((
        CauseId::ExcessDowntilt,
        share - 0.5,
        vec![
            Fact::new(phrases::FACT_LOBE_SHARE, share, 0.5, Comparator::Gt),
            Fact::new(phrases::FACT_LOBE_ANGLE, angle_sum / w, 0.0, Comparator::Gt),
        ],
    ));

    let mean_distance = window
        .iter()
        .map(|&i| geo_distance(samples[i].position(), cells[serving[i]].position()))
        .sum::<f64>()
        / w;
    out.push((
        CauseId::OvershootGt1km,
        mean_distance - OVERSHOOT_DISTANCE_M,
        vec![Fact::new(phrases::FACT_DISTANCE, mean_distance, OVERSHOOT_DISTANCE_M, Comparator::Gt)],
    ));

    let mut overlapped = 0usize;
    let mut min_gap = f64::INFINITY;
    for &i in window {
        let s = serving[i];
        let mut hit = false;
        for nb in &samples[i].neighbors {
            let Some(&c) = by_pci.get(&nb.pci) else { continue };
            if carriers[c] != carriers[s] || cells[c].gnodeb_id == cells[s].gnodeb_id {
                continue;
            }
            let gap = (nb.brsrp - samples[i].ss_rsrp).abs();
            min_gap = min_gap.min(gap);
            hit |= gap <= OVERLAP_WINDOW_DB;
        }
        overlapped += hit as usize;
    }
    let share = overlapped as f64 / w;
    let mut facts = vec![Fact::new(phrases::FACT_OVERLAP_SHARE, share, 0.5, Comparator::Gt)];
    if min_gap.is_finite() {
        facts.push(Fact::new(phrases::FACT_OVERLAP_GAP, min_gap, OVERLAP_WINDOW_DB, Comparator::Le));
    }
    out.push((CauseId::NoncolocatedOverlap, share - 0.5, facts));

    let collided = window
        .iter()
        .filter(|&&i| samples[i].neighbors.iter().any(|nb| pci_mod30_conflict(nb.pci, samples[i].serving_pci)))
        .count();
    let share = collided as f64 / w;
    out.push((
        CauseId::PciMod30Conflict,
        if collided > 0 { share } else { -1.0 },
        vec![Fact::new(phrases::FACT_PCI_SHARE, share, 0.0, Comparator::Gt)],
    ));

    let changes: Vec<usize> = (1..samples.len()).filter(|&i| samples[i].serving_pci != samples[i - 1].serving_pci).collect();
    let mut max_changes = 0usize;
    for start in 0..samples.len() {
        let end = start + HANDOVER_WINDOW_S;
        if !window.iter().any(|&i| i >= start && i < end) {
            continue;
        }
        let n = changes.iter().filter(|&&c| c >= start && c < end).count();
        max_changes = max_changes.max(n);
    }
    out.push((
        CauseId::FrequentHandover,
        max_changes as f64 - (FREQUENT_HANDOVER_COUNT as f64 - 1.0),
        vec![Fact::new(
            phrases::FACT_HANDOVERS,
            max_changes as f64,
            FREQUENT_HANDOVER_COUNT as f64,
            Comparator::Ge,
        )],
    ));

    let longest = longest_missed_handover(trace, window);
    out.push((
        CauseId::HandoverThresholdMisconfig,
        longest as f64 - STANDARD_TTT_S as f64,
        vec![Fact::new(phrases::FACT_MISSED_RUN, longest as f64, STANDARD_TTT_S as f64, Comparator::Gt)],
    ));

    let mean_rb = window.iter().map(|&i| samples[i].dl_rb_num).sum::<f64>() / w;
    out.push((
        CauseId::InsufficientRb,
        MIN_SCHEDULED_RB - mean_rb,
        vec![Fact::new(phrases::FACT_MEAN_RB, mean_rb, MIN_SCHEDULED_RB, Comparator::Lt)],
    ));

    Ok(out
        .into_iter()
        .map(|(cause, margin, facts)| {
            let triggered = margin > 0.0;
            CauseEvidence {
                cause,
                triggered,
                score: if triggered { margin / score_scale(cause) } else { 0.0 },
                margin,
                facts,
            }
        })
        .collect())
}

/// Longest run of consecutive samples, on an unchanged serving cell, in which
/// one listed neighbor beats serving by the standard hysteresis; only runs
/// touching the symptom window count. A correctly configured network hands
/// over after `STANDARD_TTT_S` such samples.
fn longest_missed_handover(trace: &DriveTrace, window: &[usize]) -> usize {
    let samples = &trace.samples;
    let mut runs: HashMap<u32, (usize, usize)> = HashMap::new();
    let mut best = 0;
    for i in 0..samples.len() {
        if i > 0 && samples[i].serving_pci != samples[i - 1].serving_pci {
            runs.clear();
        }
        let mut next = HashMap::new();
        for nb in &samples[i].neighbors {
            if nb.brsrp > samples[i].ss_rsrp + STANDARD_HYSTERESIS_DB {
                let start = runs.get(&nb.pci).map_or(i, |&(s, _)| s);
                next.insert(nb.pci, (start, i));
            }
        }
        for &(start, end) in next.values() {
            if window.iter().any(|&k| k >= start && k <= end) {
                best = best.max(end - start + 1);
            }
        }
        runs = next;
    }
    best
}

/// Picks the highest-scoring triggered cause, breaking ties by precedence.
pub fn select_cause(evidence: &[CauseEvidence]) -> Result<CauseId> {
    evidence
        .iter()
        .filter(|e| e.triggered)
        .max_by(|a, b| {
            a.score
                .total_cmp(&b.score)
                .then(b.cause.precedence_rank().cmp(&a.cause.precedence_rank()))
        })
        .map(|e| e.cause)
        .ok_or(RcaError::Undiagnosable)
}

pub fn diagnose(
    scenario: &ScenarioConfig,
    trace: &DriveTrace,
    symptom: &Symptom,
    catalog: &RootCauseCatalog,
) -> Result<Diagnosis> {
    diagnose_on(&scenario.cells, &scenario.carriers, trace, symptom, catalog)
}

pub fn diagnose_on(
    cells: &[CellConfig],
    carriers: &[u32],
    trace: &DriveTrace,
    symptom: &Symptom,
    catalog: &RootCauseCatalog,
) -> Result<Diagnosis> {
    let evidence = evaluate_rules_on(cells, carriers, trace, symptom)?;
    let cause = select_cause(&evidence)?;
    let trace = build_structured_trace(&evidence, cause, catalog);
    Ok(Diagnosis { cause, evidence, trace })
}

/// Renders a primary fact as `value <cmp> threshold`, negating the comparator
/// when the rule did not fire.
pub(crate) fn fact_relation(fact: &Fact, triggered: bool) -> (String, &'static str, String) {
    let cmp = if triggered { fact.comparator } else { fact.comparator.negation() };
    (num(fact.value), cmp.symbol(), num(fact.threshold))
}

/// Four-section explanation in catalog order, ending in the boxed label.
pub fn build_structured_trace(evidence: &[CauseEvidence], chosen: CauseId, catalog: &RootCauseCatalog) -> StructuredTrace {
    let find = |c: CauseId| evidence.iter().find(|e| e.cause == c);
    let mut data = Vec::new();
    let mut rca = Vec::new();
    for entry in &catalog.entries {
        let Some(ev) = find(entry.cause) else { continue };
        let Some(fact) = ev.facts.first() else { continue };
        data.push(fill(phrases::DATA_LINE, &[&fact.name, &num(fact.value)]));
        let (value, cmp, threshold) = fact_relation(fact, ev.triggered);
        let verdict = if ev.triggered { phrases::VERDICT_SUPPORTED } else { phrases::VERDICT_REJECTED };
        rca.push(fill(phrases::RCA_LINE, &[&entry.label, entry.cause.title(), verdict, &value, cmp, &threshold]));
    }
    let label = catalog.label_of(chosen).to_string();
    let identification = fill(phrases::IDENTIFICATION, &[&label, chosen.title()]);
    let summary = match find(chosen).and_then(|e| e.facts.first()) {
        Some(f) => fill(phrases::SUMMARY, &[&label, &f.name, &num(f.value), &num(f.threshold)]),
        None => fill(phrases::SUMMARY, &[&label, "", "", ""]),
    };
    StructuredTrace {
        data_analysis: data.join("\n"),
        root_cause_analysis: rca.join("\n"),
        identification,
        summary,
        answer_label: label,
    }
}
