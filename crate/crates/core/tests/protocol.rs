use std::collections::BTreeSet;
use std::thread;
use std::time::{Duration, Instant};

use setcomp::corpus::{parse_entity_text, EntityDoc};
use setcomp::rerank::{
    doc_lookup, external_rerank, CandidatePool, PoolCandidate, Provenance, ScoreRequest,
    ScorerProtocolConfig, Transport,
};
use setcomp::Error;

fn stub(mode: &str) -> Transport {
    Transport::Subprocess(format!(
        "{} {mode}",
        env!("CARGO_BIN_EXE_setcomp-stub-scorer")
    ))
}

fn fixture() -> (Vec<EntityDoc>, CandidatePool) {
    let docs: Vec<EntityDoc> = (0..12)
        .map(|i| parse_entity_text(&format!("d{i:02}"), &format!("E{i} likes Tea.")).unwrap())
        .collect();
    let pool = CandidatePool {
        query_id: "q1".into(),
        candidates: docs
            .iter()
            .enumerate()
            .map(|(i, d)| PoolCandidate {
                doc_id: d.doc_id.clone(),
                provenance: if i % 3 == 0 {
                    Provenance::Gold
                } else {
                    Provenance::Noise
                },
                bm25_rank: if i % 4 == 0 { None } else { Some(20 - i) },
            })
            .collect(),
    };
    (docs, pool)
}

fn gold(pool: &CandidatePool) -> BTreeSet<&str> {
    pool.candidates
        .iter()
        .filter(|c| c.provenance == Provenance::Gold)
        .map(|c| c.doc_id.as_str())
        .collect()
}

/// Minimal `/score` endpoint: 4 for gold docs, 0 otherwise.
fn serve(gold: BTreeSet<String>, delay: Duration) -> (String, thread::JoinHandle<()>) {
    let server = tiny_http::Server::http("127.0.0.1:0").unwrap();
    let url = format!("http://{}", server.server_addr().to_ip().unwrap());
    let handle = thread::spawn(move || {
        while let Ok(Some(mut req)) = server.recv_timeout(Duration::from_secs(5)) {
            let mut body = String::new();
            req.as_reader().read_to_string(&mut body).unwrap();
            thread::sleep(delay);
            let (status, resp) = if req.url() != "/score" {
                (404, String::new())
            } else {
                let r: ScoreRequest = serde_json::from_str(&body).unwrap();
                let score = if gold.contains(&r.docid) { 4 } else { 0 };
                (
                    200,
                    serde_json::json!({"qid": r.qid, "docid": r.docid, "score": score}).to_string(),
                )
            };
            let _ = req.respond(tiny_http::Response::from_string(resp).with_status_code(status));
        }
    });
    (url, handle)
}

#[test]
fn http_oracle_puts_gold_first() {
    let (docs, pool) = fixture();
    let g = gold(&pool);
    let (url, _h) = serve(g.iter().map(|s| s.to_string()).collect(), Duration::ZERO);
    let cfg = ScorerProtocolConfig {
        in_flight: 3,
        ..ScorerProtocolConfig::new(Transport::Http(url))
    };
    let out = external_rerank(&pool, "Who likes Tea?", &doc_lookup(&docs), &cfg).unwrap();
    assert!(out.warnings.is_empty());
    let top: BTreeSet<&str> = out.ranking.doc_ids().take(g.len()).collect();
    assert_eq!(top, g);
}

#[test]
fn completion_order_does_not_change_ranking() {
    let (docs, pool) = fixture();
    let lookup = doc_lookup(&docs);
    let rank = |in_flight| {
        let cfg = ScorerProtocolConfig {
            in_flight,
            ..ScorerProtocolConfig::new(stub("constant:3"))
        };
        external_rerank(&pool, "Q", &lookup, &cfg).unwrap().ranking
    };
    assert_eq!(rank(1), rank(4));
}

#[test]
fn stalled_calls_time_out_to_zero() {
    let (docs, pool) = fixture();
    let cfg = ScorerProtocolConfig {
        timeout: Duration::from_millis(300),
        ..ScorerProtocolConfig::new(stub("stall:5"))
    };
    let t = Instant::now();
    let out = external_rerank(&pool, "Q", &doc_lookup(&docs), &cfg).unwrap();
    assert_eq!(out.warnings.len(), 2);
    assert!(out.warnings.iter().all(|w| w.detail == "timed out"));
    assert!(t.elapsed() < Duration::from_secs(5));
    let zeros = out
        .ranking
        .entries
        .iter()
        .filter(|e| e.score == 0.0)
        .count();
    assert_eq!(zeros, 2);
}

#[test]
fn crashed_scorer_is_restarted() {
    let (docs, pool) = fixture();
    let cfg = ScorerProtocolConfig {
        retries: 1,
        ..ScorerProtocolConfig::new(stub("crash:5"))
    };
    let out = external_rerank(&pool, "Q", &doc_lookup(&docs), &cfg).unwrap();
    assert!(out.ranking.entries.iter().all(|e| e.score == 4.0));
}

#[test]
fn unreachable_endpoints_are_transport_errors() {
    let (docs, pool) = fixture();
    let lookup = doc_lookup(&docs);
    let dead = ScorerProtocolConfig {
        retries: 2,
        ..ScorerProtocolConfig::new(stub("crash:0"))
    };
    assert!(matches!(
        external_rerank(&pool, "Q", &lookup, &dead),
        Err(Error::Transport(_))
    ));
    let nowhere = ScorerProtocolConfig {
        retries: 1,
        timeout: Duration::from_secs(2),
        ..ScorerProtocolConfig::new(Transport::Http("http://127.0.0.1:9".into()))
    };
    assert!(matches!(
        external_rerank(&pool, "Q", &lookup, &nowhere),
        Err(Error::Transport(_))
    ));
}

#[test]
fn strict_mode_rejects_malformed_payloads() {
    let (docs, pool) = fixture();
    let lookup = doc_lookup(&docs);
    let lenient = ScorerProtocolConfig::new(stub("malformed:2"));
    let out = external_rerank(&pool, "Q", &lookup, &lenient).unwrap();
    assert_eq!(out.warnings.len(), 6);
    let strict = ScorerProtocolConfig {
        strict: true,
        ..lenient
    };
    assert!(matches!(
        external_rerank(&pool, "Q", &lookup, &strict),
        Err(Error::Protocol(_))
    ));
}

#[test]
fn zero_timeout_is_rejected() {
    let (docs, pool) = fixture();
    let cfg = ScorerProtocolConfig {
        timeout: Duration::ZERO,
        ..ScorerProtocolConfig::new(stub("constant:1"))
    };
    assert!(matches!(
        external_rerank(&pool, "Q", &doc_lookup(&docs), &cfg),
        Err(Error::Config(_))
    ));
}
