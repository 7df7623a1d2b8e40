mod common;

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use setcomp::eval::{
    average_precision, evaluate_run, metric_names, ndcg_at_k, recall_at_k, stratified_report,
    QueryMeta, StratumKey,
};
use setcomp::query::TemplateKind;
use setcomp::trec::{Qrels, Ranking};
use setcomp::Parallelism;

fn ranking(ids: &[String]) -> Ranking {
    Ranking::from_ordered(
        "q",
        "t",
        ids.iter()
            .enumerate()
            .map(|(i, d)| (d.clone(), -(i as f64)))
            .collect(),
    )
}

/// A permutation of `d0..dn` and a non-empty gold subset.
fn case() -> impl Strategy<Value = (Vec<String>, BTreeSet<String>)> {
    (1usize..40).prop_flat_map(|n| {
        let ids: Vec<String> = (0..n).map(|i| format!("d{i:02}")).collect();
        (
            Just(ids.clone()).prop_shuffle(),
            proptest::collection::btree_set(0usize..n + 10, 1..12)
                .prop_map(|s| s.into_iter().map(|i| format!("d{i:02}")).collect()),
        )
    })
}

proptest! {
    #[test]
    fn metrics_match_reference((ids, gold) in case(), k in 1usize..50) {
        let r = ranking(&ids);
        let recall = recall_at_k(&r, &gold, k).unwrap();
        let ndcg = ndcg_at_k(&r, &gold, k).unwrap();
        let ap = average_precision(&r, &gold).unwrap();
        for v in [recall, ndcg, ap] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert!((recall - common::naive_recall(&ids, &gold, k)).abs() < 1e-12);
        prop_assert!((ndcg - common::naive_ndcg(&ids, &gold, k)).abs() < 1e-12);
        prop_assert!((ap - common::naive_ap(&ids, &gold)).abs() < 1e-12);
        prop_assert!(recall <= recall_at_k(&r, &gold, k + 1).unwrap());
    }

    #[test]
    fn ndcg_is_one_iff_prefix_is_relevant((ids, gold) in case(), k in 1usize..50) {
        let ndcg = ndcg_at_k(&ranking(&ids), &gold, k).unwrap();
        let want = k.min(gold.len());
        let perfect = ids.len() >= want && ids[..want].iter().all(|d| gold.contains(d));
        prop_assert_eq!(ndcg == 1.0, perfect);
    }

    #[test]
    fn swapping_relevant_docs_changes_nothing((ids, gold) in case(), k in 1usize..50, a in any::<prop::sample::Index>(), b in any::<prop::sample::Index>()) {
        let rel: Vec<usize> = (0..ids.len()).filter(|&i| gold.contains(&ids[i])).collect();
        prop_assume!(rel.len() >= 2);
        let mut swapped = ids.clone();
        swapped.swap(rel[a.index(rel.len())], rel[b.index(rel.len())]);
        let (r, s) = (ranking(&ids), ranking(&swapped));
        prop_assert_eq!(recall_at_k(&r, &gold, k).unwrap(), recall_at_k(&s, &gold, k).unwrap());
        prop_assert_eq!(ndcg_at_k(&r, &gold, k).unwrap(), ndcg_at_k(&s, &gold, k).unwrap());
        prop_assert_eq!(average_precision(&r, &gold).unwrap(), average_precision(&s, &gold).unwrap());
    }

    #[test]
    fn strata_recombine_to_aggregate(
        runs in proptest::collection::vec(case(), 1..30),
        templates in proptest::collection::vec(0usize..7, 30),
        dropped in proptest::collection::vec(any::<bool>(), 30),
    ) {
        let mut qrels = Qrels::default();
        let mut run = Vec::new();
        let mut meta = BTreeMap::new();
        for (i, (ids, gold)) in runs.iter().enumerate() {
            let qid = format!("q{i:02}");
            qrels.insert(&qid, gold.iter().cloned());
            if !dropped[i] {
                run.push(Ranking { query_id: qid.clone(), ..ranking(ids) });
            }
            let template = TemplateKind::ALL[templates[i]];
            meta.insert(qid, QueryMeta { template, depth: template.depth(), operator_family: template.operator_family() });
        }
        let cutoffs = [1, 5, 20];
        let report = evaluate_run(&run, &qrels, &cutoffs, true, Parallelism::default()).unwrap();
        prop_assert_eq!(report.per_query.len(), runs.len());
        for (i, m) in report.per_query.values().enumerate() {
            if dropped[i] {
                prop_assert!(m.values().iter().all(|&v| v == 0.0));
            }
        }
        let keys = [StratumKey::Template, StratumKey::Depth, StratumKey::OperatorFamily];
        let report = stratified_report(report, &meta, &keys).unwrap();
        let names = metric_names(&cutoffs);
        for key in keys {
            let block = &report.strata[key.name()];
            prop_assert_eq!(block.values().map(|s| s.count).sum::<usize>(), runs.len());
            for (value, s) in block {
                let expected = meta.values().filter(|m| match key {
                    StratumKey::Template => m.template.name() == value,
                    StratumKey::Depth => m.depth.to_string() == *value,
                    StratumKey::OperatorFamily => m.operator_family.name() == value,
                }).count();
                prop_assert_eq!(s.count, expected);
            }
            for (j, name) in names.iter().enumerate() {
                let weighted: f64 = block.values().map(|s| s.count as f64 * s.means[j]).sum::<f64>() / runs.len() as f64;
                prop_assert!((weighted - report.mean(name).unwrap()).abs() < 1e-12);
            }
        }
    }
}
