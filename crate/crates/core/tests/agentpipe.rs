use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rca_core::agentpipe::*;
use rca_core::domain::CauseId;
use rca_core::promptkit::{generate_dataset, parse_answer, record_from_instance, RenderedQuery};
use rca_core::simulator::{build_instance, GenerationConfig};
use rca_core::RcaError;

/// Answers chat completions with a long rambling text ending in the oracle's
/// label, or with HTTP 500 when `fail` is set.
fn serve(fail: bool) -> (String, Arc<AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming().flatten() {
            let counter = counter.clone();
            std::thread::spawn(move || handle(stream, fail, &counter));
        }
    });
    (format!("http://{addr}"), hits)
}

fn handle(mut stream: TcpStream, fail: bool, hits: &AtomicUsize) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut length = 0usize;
    let mut authorized = false;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap() == 0 || line == "\r\n" {
            break;
        }
        let lower = line.to_ascii_lowercase();
        if let Some(v) = lower.strip_prefix("content-length:") {
            length = v.trim().parse().unwrap();
        }
        authorized |= lower.starts_with("authorization: bearer secret");
    }
    let mut body = vec![0u8; length];
    reader.read_exact(&mut body).unwrap();
    hits.fetch_add(1, Ordering::SeqCst);
    let request: serde_json::Value = serde_json::from_slice(&body).unwrap();
    let (status, payload) = if fail || !authorized {
        ("500 Internal Server Error", "{}".to_string())
    } else {
        let text = request["messages"][1]["content"].as_str().unwrap().to_string();
        let query = RenderedQuery {
            catalog: rca_core::promptkit::parse_query(&text).unwrap().catalog,
            text,
            instance_id: "stub".into(),
        };
        let label = query.catalog.label_of(oracle_cause(&query).unwrap()).to_string();
        let reasoning = "checking the serving cell and its neighbors once more . ".repeat(80);
        let content = format!("{reasoning}\\boxed{{{label}}}");
        (
            "200 OK",
            serde_json::json!({ "choices": [ { "message": { "role": "assistant", "content": content } } ] }).to_string(),
        )
    };
    let _ = write!(
        stream,
        "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
        payload.len()
    );
}

fn remote(endpoint: &str, strategy: Strategy) -> AgentSpec {
    AgentSpec {
        strategy,
        backend: Backend::RemoteLlm {
            endpoint: endpoint.to_string(),
            model: "stub".into(),
            temperature: 0.0,
            api_key: Some("secret".into()),
        },
    }
}

#[test]
fn mock_pipeline_accepts_everything_and_compresses() {
    let (records, _) = generate_dataset(&GenerationConfig::default(), 13, 8).unwrap();
    let records = &records[..100];
    let report = build_sft_dataset(records, &PipelineConfig::default()).unwrap();
    assert_eq!(report.acceptance_rate, 1.0);
    assert_eq!(report.records.len(), 100);
    assert!(report.mean_token_ratio < 0.6, "{}", report.mean_token_ratio);
    assert_eq!(report.ratio_histogram.iter().sum::<usize>(), 100);
    for r in &report.records {
        let trace = r.trace.as_ref().unwrap();
        assert_eq!(trace.answer_label, r.ground_truth_label);
        assert_eq!(parse_answer(&trace.to_text()).as_deref(), Some(r.ground_truth_label.as_str()));
        assert!(r.raw_trajectory.is_none());
    }
}

#[test]
fn remote_agents_through_stub_server() {
    let (endpoint, hits) = serve(false);
    let (records, _) = generate_dataset(&GenerationConfig::default(), 1, 31).unwrap();
    let config = PipelineConfig {
        agents: vec![remote(&endpoint, Strategy::Elimination), remote(&endpoint, Strategy::Contradiction)],
        max_in_flight: 3,
        retries: 0,
        timeout_s: 10.0,
    };
    let report = build_sft_dataset(&records, &config).unwrap();
    assert_eq!(hits.load(Ordering::SeqCst), 16);
    assert!(report.failures.is_empty(), "{:?}", report.failures);
    assert_eq!(report.records.len(), 8);
    let ids: Vec<_> = report.records.iter().map(|r| &r.instance_id).collect();
    let expected: Vec<_> = records.iter().map(|r| &r.instance_id).collect();
    assert_eq!(ids, expected);
    assert!(report.records.iter().all(|r| r.raw_trajectory.as_deref().is_some_and(|t| t.contains("\\boxed"))));
}

#[test]
fn server_errors_become_failures_after_retries() {
    let (endpoint, hits) = serve(true);
    let inst = build_instance(CauseId::InsufficientRb, 2, None).unwrap();
    let records = vec![record_from_instance(&inst).unwrap()];
    let config = PipelineConfig { agents: vec![remote(&endpoint, Strategy::Elimination)], retries: 2, ..Default::default() };
    let report = build_sft_dataset(&records, &config).unwrap();
    assert_eq!(hits.load(Ordering::SeqCst), 3);
    assert_eq!(report.failures.len(), 1);
    assert_eq!(report.failures[0].instance_id, inst.instance_id);
    assert!(report.records.is_empty());
}

#[test]
fn unreachable_endpoint_names_the_instance() {
    let port = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let inst = build_instance(CauseId::SpeedGt40, 4, None).unwrap();
    let rec = record_from_instance(&inst).unwrap();
    let spec = remote(&format!("http://127.0.0.1:{port}"), Strategy::Contradiction);
    match agent_solve(&spec, &rec.query) {
        Err(RcaError::Transport { instance_id, .. }) => assert_eq!(instance_id, inst.instance_id),
        other => panic!("expected transport error, got {other:?}"),
    }
}

#[test]
fn mock_strategies_agree_with_oracle() {
    for cause in CauseId::ALL {
        let inst = build_instance(cause, 17, Some(3)).unwrap();
        let rec = record_from_instance(&inst).unwrap();
        for strategy in [Strategy::Elimination, Strategy::Contradiction] {
            let spec = AgentSpec { strategy, backend: Backend::MockOracle };
            let t = agent_solve(&spec, &rec.query).unwrap();
            assert_eq!(t.terminal_answer.as_deref(), Some(rec.ground_truth_label.as_str()));
        }
    }
}
