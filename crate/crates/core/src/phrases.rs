//! Sentence templates for every generated reasoning text. The tokenizer
//! vocabulary is built from these, so anything emitted by the oracle or the
//! mock agents must come from here, from cause titles/descriptions, from
//! display labels, or be a number.
//!
//! Templates are whitespace-tokenized; `{}` placeholders are filled in order by
//! [`fill`] and must stand alone as words.

pub const TASK_DATA: &str = "Task 1: Data analysis";
pub const TASK_RCA: &str = "Task 2: Root cause analysis";
pub const TASK_IDENT: &str = "Task 3: Root cause identification";
pub const TASK_SUMMARY: &str = "Summary:";

pub const DATA_LINE: &str = "- {} : {}";
pub const RCA_LINE: &str = "- {} ( {} ) : {} since {} {} {} .";
pub const VERDICT_SUPPORTED: &str = "supported";
pub const VERDICT_REJECTED: &str = "ruled out";
pub const IDENTIFICATION: &str = "The most plausible root cause is {} ( {} ) .";
pub const SUMMARY: &str = "Throughput falls below 600 Mbps and only {} is supported : the {} is {} against a threshold of {} . All other candidates are ruled out .";

// Fact names, one primary fact per rule plus optional secondary facts.
pub const FACT_MAX_SPEED: &str = "max speed in the symptom window ( km/h )";
pub const FACT_LOBE_SHARE: &str = "share of symptom samples above the vertical lobe with weak RSRP";
pub const FACT_LOBE_ANGLE: &str = "mean angle above the upper lobe edge ( deg )";
pub const FACT_DISTANCE: &str = "mean serving cell distance ( m )";
pub const FACT_OVERLAP_SHARE: &str = "share of symptom samples with a non-colocated co-frequency neighbor within 6 dB";
pub const FACT_OVERLAP_GAP: &str = "smallest gap to a non-colocated co-frequency neighbor ( dB )";
pub const FACT_PCI_SHARE: &str = "share of symptom samples with a PCI mod 30 collision";
pub const FACT_HANDOVERS: &str = "max handovers in a 10 s window";
pub const FACT_MISSED_RUN: &str = "longest stretch with a stronger neighbor and no handover ( s )";
pub const FACT_MEAN_RB: &str = "mean scheduled RBs in the symptom window";

// Elimination-style agent.
pub const ELIM_INTRO: &str = "I will evaluate each candidate root cause against the observed symptom and rule out the candidates that the data does not support .";
pub const SYMPTOM_LINE: &str = "First , the symptom : throughput falls below 600 Mbps in {} of {} samples , starting at sample {} .";
pub const ELIM_CANDIDATE: &str = "Candidate {} : {}";
pub const ELIM_CHECK: &str = "To check this candidate I look at the {} . The measured value is {} and the rule threshold is {} .";
pub const ELIM_VERIFY: &str = "Let me double check by re-reading the relevant rows : the {} is indeed {} .";
pub const ELIM_REJECT: &str = "The condition {} {} {} does not hold , so {} is ruled out .";
pub const ELIM_KEEP: &str = "The condition {} {} {} holds , so {} remains plausible .";
pub const ELIM_RECHECK: &str = "Before concluding , let me re-examine the remaining candidate {} once more .";
pub const ELIM_FINAL: &str = "Every other candidate was ruled out , so the root cause is {} .";

// Contradiction-style agent.
pub const CONTRA_INTRO: &str = "I will assume each candidate root cause in turn and look for a contradiction with the observed data .";
pub const CONTRA_ASSUME: &str = "Assume {} is the root cause : {}";
pub const CONTRA_EXPECT: &str = "If this were true , the {} should satisfy {} {} .";
pub const CONTRA_OBSERVE: &str = "The data shows {} for the {} .";
pub const CONTRA_RECHECK: &str = "Checking the raw rows again , the {} is {} .";
pub const CONTRA_CONTRADICT: &str = "This contradicts the assumption , so {} is discarded .";
pub const CONTRA_CONSISTENT: &str = "This is consistent with the assumption , so {} is kept .";
pub const CONTRA_FINAL: &str = "Only {} survives without contradiction , so it is the root cause .";

pub const COMPARATORS: [&str; 4] = [">", "<", ">=", "<="];

pub const ALL_TEMPLATES: &[&str] = &[
    TASK_DATA,
    TASK_RCA,
    TASK_IDENT,
    TASK_SUMMARY,
    DATA_LINE,
    RCA_LINE,
    VERDICT_SUPPORTED,
    VERDICT_REJECTED,
    IDENTIFICATION,
    SUMMARY,
    FACT_MAX_SPEED,
    FACT_LOBE_SHARE,
    FACT_LOBE_ANGLE,
    FACT_DISTANCE,
    FACT_OVERLAP_SHARE,
    FACT_OVERLAP_GAP,
    FACT_PCI_SHARE,
    FACT_HANDOVERS,
    FACT_MISSED_RUN,
    FACT_MEAN_RB,
    ELIM_INTRO,
    SYMPTOM_LINE,
    ELIM_CANDIDATE,
    ELIM_CHECK,
    ELIM_VERIFY,
    ELIM_REJECT,
    ELIM_KEEP,
    ELIM_RECHECK,
    ELIM_FINAL,
    CONTRA_INTRO,
    CONTRA_ASSUME,
    CONTRA_EXPECT,
    CONTRA_OBSERVE,
    CONTRA_RECHECK,
    CONTRA_CONTRADICT,
    CONTRA_CONSISTENT,
    CONTRA_FINAL,
];

/// Substitutes `args` into the `{}` placeholders of `template`, in order.
pub fn fill(template: &str, args: &[&str]) -> String {
    let mut out = String::with_capacity(template.len() + 16 * args.len());
    let mut parts = template.split("{}");
    out.push_str(parts.next().unwrap_or(""));
    for (k, part) in parts.enumerate() {
        out.push_str(args.get(k).copied().unwrap_or(""));
        out.push_str(part);
    }
    out
}

/// Compact number rendering used inside reasoning text.
pub fn num(x: f64) -> String {
    format!("{}", crate::domain::quantize(x, 2))
}
