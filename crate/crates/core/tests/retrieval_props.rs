mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;

use setcomp::benchgen::{BenchQuery, QueryRecord};
use setcomp::corpus::{parse_entity_text, EntityDoc};
use setcomp::eval::{evaluate_run, meta_from_queries, stratified_report, StratumKey};
use setcomp::query::{LogicalExpr, TemplateKind};
use setcomp::retrieval::{
    bm25_search, search_all, setcomp_search, Bm25Index, Bm25Params, Model, SearchIndexes,
    SetCompConfig,
};
use setcomp::trec::{write_run_to, Ranking};
use setcomp::Parallelism;

fn bm25(docs: &[EntityDoc]) -> Bm25Index {
    Bm25Index::build(docs, Bm25Params::default(), Parallelism::default()).unwrap()
}

#[test]
fn scores_match_full_scan_reference() {
    let fx = common::fixture(
        &setcomp::corpus::SynthConfig {
            n_entities: 800,
            n_attributes: 60,
            ..Default::default()
        },
        5,
    );
    let idx = bm25(&fx.docs);
    for q in fx.bench.queries.iter().take(20) {
        let reference = common::naive_bm25(&fx.docs, &q.text, 0.9, 0.4);
        let got = bm25_search(&idx, &q.query_id, &q.text, usize::MAX);
        assert_eq!(got.len(), reference.len(), "{}", q.text);
        for e in &got.entries {
            assert!(
                (e.score - reference[&e.doc_id]).abs() < 1e-9,
                "{} {}",
                q.text,
                e.doc_id
            );
        }
    }
}

#[test]
fn alpha_zero_exclusion_reduces_to_first_atom() {
    let fx = common::desk_fixture();
    let idx = bm25(&fx.docs);
    let cfg = SetCompConfig {
        neg_weight: 0.0,
        ..Default::default()
    };
    for q in fx
        .bench
        .queries
        .iter()
        .filter(|q| q.template == TemplateKind::Excl2)
        .take(30)
    {
        let s = setcomp_search(&idx, "q", &q.expr(), 1000, &cfg);
        let b = bm25_search(&idx, "q", &q.attributes[0], 1000);
        assert_eq!(
            s,
            Ranking {
                run_tag: s.run_tag.clone(),
                ..b
            }
        );
    }
}

#[test]
fn setcomp_beats_bm25_on_exclusion() {
    let fx = common::desk_fixture();
    let idx = bm25(&fx.docs);
    let queries: Vec<QueryRecord> = fx.bench.queries.iter().map(BenchQuery::record).collect();
    let indexes = SearchIndexes {
        bm25: Some(&idx),
        attributes: None,
    };
    let meta = meta_from_queries(&queries);
    let ndcg20 = |model| {
        let run = search_all(model, &queries, &indexes, 1000, Parallelism::default()).unwrap();
        let report =
            evaluate_run(&run, &fx.bench.qrels(), &[20], true, Parallelism::default()).unwrap();
        let report = stratified_report(report, &meta, &[StratumKey::Template]).unwrap();
        report
            .stratum_mean(StratumKey::Template, "Excl2", "ndcg@20")
            .unwrap()
    };
    let (sc, b) = (
        ndcg20(Model::SetComp(SetCompConfig::default())),
        ndcg20(Model::Bm25),
    );
    assert!(sc > b, "setcomp {sc:.4} vs bm25 {b:.4}");
}

#[test]
fn search_is_identical_across_modes() {
    let fx = common::fixture(
        &setcomp::corpus::SynthConfig {
            n_entities: 1000,
            n_attributes: 80,
            ..Default::default()
        },
        10,
    );
    let idx = bm25(&fx.docs);
    let queries: Vec<QueryRecord> = fx.bench.queries.iter().map(BenchQuery::record).collect();
    let indexes = SearchIndexes {
        bm25: Some(&idx),
        attributes: Some(&fx.index),
    };
    for model in [
        Model::Bm25,
        Model::SetComp(SetCompConfig::default()),
        Model::Oracle,
    ] {
        let bytes = |mode| {
            let run = search_all(model, &queries, &indexes, 1000, mode).unwrap();
            let mut buf = Vec::new();
            write_run_to(&mut buf, &run).unwrap();
            buf
        };
        assert_eq!(
            bytes(Parallelism::Sequential),
            bytes(Parallelism::Parallel),
            "{model}"
        );
    }
}

fn attr_name() -> impl Strategy<Value = String> {
    "[A-Z][a-z]{2,6}"
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ranking_invariants(
        lists in proptest::collection::vec(proptest::collection::btree_set(attr_name(), 1..5), 1..25),
        query in proptest::collection::vec(attr_name(), 1..4),
        k in 1usize..30,
    ) {
        let docs: Vec<EntityDoc> = lists
            .iter()
            .enumerate()
            .map(|(i, attrs)| {
                let attrs: Vec<String> = attrs.iter().cloned().collect();
                parse_entity_text(&format!("d{i:03}"), &setcomp::corpus::render_entity_text("Some One", &attrs)).unwrap()
            })
            .collect();
        let idx = bm25(&docs);
        let expr = match query.len() {
            1 => LogicalExpr::atom(query[0].clone()),
            _ => LogicalExpr::And(vec![
                LogicalExpr::atom(query[0].clone()),
                LogicalExpr::not(LogicalExpr::Or(query[1..].iter().cloned().map(LogicalExpr::atom).collect())),
            ]),
        };
        for r in [
            bm25_search(&idx, "q", &query.join(" "), k),
            setcomp_search(&idx, "q", &expr, k, &SetCompConfig::default()),
        ] {
            prop_assert!(r.len() <= k);
            let ids: BTreeSet<&str> = r.doc_ids().collect();
            prop_assert_eq!(ids.len(), r.len());
            for (i, w) in r.entries.windows(2).enumerate() {
                prop_assert!(w[0].score > w[1].score || (w[0].score == w[1].score && w[0].doc_id < w[1].doc_id));
                prop_assert_eq!(w[0].rank, i + 1);
            }
            if let Some(last) = r.entries.last() {
                prop_assert_eq!(last.rank, r.len());
            }
        }
    }
}
