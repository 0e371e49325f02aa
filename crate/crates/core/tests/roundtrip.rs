use proptest::prelude::*;
use rca_core::domain::CauseId;
use rca_core::promptkit::{
    parse_answer, parse_query, randomize_instance, read_jsonl, render_query, render_query_text, write_jsonl,
    record_from_instance,
};
use rca_core::seeding::derive_seed;
use rca_core::simulator::build_instance;
use rca_core::RcaError;

#[test]
fn rendered_tables_round_trip_bit_exact() {
    for i in 0..100u64 {
        let cause = CauseId::ALL[(i % 8) as usize];
        let inst = build_instance(cause, derive_seed(77, i), Some(i)).unwrap();
        let q = render_query(&inst).unwrap();
        let parsed = parse_query(&q.text).unwrap();
        assert_eq!(parsed.cells, inst.scenario.cells, "{}", inst.instance_id);
        assert_eq!(parsed.trace, inst.trace, "{}", inst.instance_id);
        assert_eq!(parsed.catalog, inst.catalog);
        assert_eq!(render_query_text(&parsed.catalog, &parsed.cells, &parsed.trace).unwrap(), q.text);
    }
}

#[test]
fn randomized_record_keeps_semantics() {
    let inst = build_instance(CauseId::PciMod30Conflict, 5, None).unwrap();
    let rec = record_from_instance(&inst).unwrap();
    let r = randomize_instance(&rec, 9).unwrap();
    assert_eq!(r.ground_truth_cause, rec.ground_truth_cause);
    assert_eq!(r.query.catalog.cause_of(&r.ground_truth_label), Some(CauseId::PciMod30Conflict));
    let a = parse_query(&rec.query.text).unwrap();
    let b = parse_query(&r.query.text).unwrap();
    assert_eq!(a.trace, b.trace);
    let mut ca: Vec<_> = a.cells.iter().map(|c| c.pci).collect();
    let mut cb: Vec<_> = b.cells.iter().map(|c| c.pci).collect();
    ca.sort_unstable();
    cb.sort_unstable();
    assert_eq!(ca, cb);
    assert_eq!(randomize_instance(&rec, 9).unwrap(), r);
}

#[test]
fn answer_forms() {
    assert_eq!(parse_answer(r"so the cause is $\boxed{\text{C3}}$").as_deref(), Some("C3"));
    assert_eq!(parse_answer(r"\boxed{C7}").as_deref(), Some("C7"));
    assert_eq!(parse_answer(r"\boxed{5}").as_deref(), Some("C5"));
    assert_eq!(parse_answer("the answer is C2"), None);
    assert_eq!(parse_answer(r"first \boxed{C1}, on reflection \boxed{C4}").as_deref(), Some("C4"));
    assert_eq!(parse_answer(r"\boxed{}"), None);
}

#[test]
fn jsonl_round_trip_and_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.jsonl");
    let recs: Vec<_> = (0..3)
        .map(|i| record_from_instance(&build_instance(CauseId::ALL[i], i as u64, None).unwrap()).unwrap())
        .collect();
    write_jsonl(&path, &recs).unwrap();
    assert_eq!(read_jsonl(&path).unwrap(), recs);

    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[1] = "{not json";
    std::fs::write(&path, lines.join("\n")).unwrap();
    match read_jsonl(&path) {
        Err(RcaError::Parse { line, .. }) => assert_eq!(line, 2),
        other => panic!("expected parse error, got {other:?}"),
    }
}

proptest! {
    #[test]
    fn last_box_wins(n in 1u32..=8, m in 1u32..=8, prefix in "[a-z ]{0,20}") {
        let text = format!(r"{prefix} \boxed{{C{m}}} then \boxed{{C{n}}}");
        let expected = format!("C{n}");
        prop_assert_eq!(parse_answer(&text), Some(expected));
    }

    #[test]
    fn text_without_box_has_no_answer(s in "[^\\\\]{0,60}") {
        prop_assert_eq!(parse_answer(&s), None);
    }
}
