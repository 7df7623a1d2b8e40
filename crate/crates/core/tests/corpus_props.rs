mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;

use setcomp::corpus::{
    build_attribute_index, parse_entity_text, render_entity_text, synth_corpus, SynthConfig,
};

fn frequencies(cfg: &SynthConfig) -> Vec<usize> {
    let docs = synth_corpus(cfg).unwrap();
    let index = build_attribute_index(&docs).unwrap();
    let mut f: Vec<usize> = index.postings().map(|(_, p)| p.len()).collect();
    f.sort_unstable_by(|a, b| b.cmp(a));
    f
}

/// Expected inclusion probability of every rank when each entity draws `k`
/// distinct attributes by successive sampling with weights `w`
/// (order-sampling approximation: π_i = 1 − exp(−w_i τ), Σ π_i = k).
fn inclusion_probabilities(w: &[f64], k: usize) -> Vec<f64> {
    let total = |tau: f64| w.iter().map(|wi| 1.0 - (-wi * tau).exp()).sum::<f64>();
    let (mut lo, mut hi) = (0.0, 1.0);
    while total(hi) < k as f64 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if total(mid) < k as f64 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    w.iter().map(|wi| 1.0 - (-wi * hi).exp()).collect()
}

#[test]
fn zipf_rank_ratio_matches_prediction() {
    let cfg = SynthConfig {
        n_entities: 5000,
        n_attributes: 200,
        popularity_skew: 1.0,
        min_attrs: 10,
        max_attrs: 60,
        seed: 7,
    };
    let w: Vec<f64> = (0..cfg.n_attributes).map(|r| cfg.popularity(r)).collect();
    let mut expected = vec![0.0; w.len()];
    for k in cfg.min_attrs..=cfg.max_attrs {
        for (e, p) in expected.iter_mut().zip(inclusion_probabilities(&w, k)) {
            *e += p / (cfg.max_attrs - cfg.min_attrs + 1) as f64;
        }
    }
    let predicted = expected[0] / expected[9];
    let f = frequencies(&cfg);
    let observed = f[0] as f64 / f[9] as f64;
    assert!(
        (observed / predicted - 1.0).abs() <= 0.2,
        "observed {observed:.3}, predicted {predicted:.3}"
    );
}

#[test]
fn single_draw_follows_zipf() {
    // One attribute per entity: frequencies are proportional to the weights.
    let cfg = SynthConfig {
        n_entities: 50_000,
        n_attributes: 200,
        popularity_skew: 1.0,
        min_attrs: 1,
        max_attrs: 1,
        seed: 7,
    };
    let f = frequencies(&cfg);
    let observed = f[0] as f64 / f[9] as f64;
    assert!(
        (observed / 10.0 - 1.0).abs() <= 0.2,
        "observed {observed:.3}"
    );
}

#[test]
fn forced_single_attribute() {
    let cfg = SynthConfig {
        n_entities: 1,
        n_attributes: 1,
        popularity_skew: 1.0,
        min_attrs: 1,
        max_attrs: 1,
        seed: 3,
    };
    let docs = synth_corpus(&cfg).unwrap();
    assert_eq!(docs.len(), 1);
    assert_eq!(docs[0].attributes.len(), 1);
}

#[test]
fn index_sound_and_complete_on_desk_corpus() {
    let docs = synth_corpus(&SynthConfig::default()).unwrap();
    let index = build_attribute_index(&docs).unwrap();
    let mut pairs = 0;
    for d in &docs {
        for a in &d.attributes {
            assert!(index.posting_ids(a).unwrap().contains(&d.doc_id.as_str()));
            pairs += 1;
        }
    }
    let memberships: usize = index.postings().map(|(_, p)| p.len()).sum();
    assert_eq!(memberships, pairs);
    for (_, p) in index.postings() {
        assert!(p.windows(2).all(|w| w[0] < w[1]));
    }
}

#[test]
fn synthesized_text_round_trips() {
    for d in synth_corpus(&SynthConfig {
        n_entities: 500,
        ..Default::default()
    })
    .unwrap()
    {
        let back = parse_entity_text(&d.doc_id, &d.text).unwrap();
        assert_eq!(back.attribute_set(), d.attribute_set());
        assert_eq!(back.name, d.name);
    }
}

fn attribute() -> impl Strategy<Value = String> {
    "[A-Z][a-z]{1,8}( [A-Z][a-z]{1,8}){0,2}"
}

proptest! {
    #[test]
    fn render_parse_round_trip(
        name in "[A-Z][a-z]{1,8} [A-Z][a-z]{1,8}",
        attrs in proptest::collection::btree_set(attribute(), 1..8),
    ) {
        let attrs: Vec<String> = attrs.into_iter().collect();
        let text = render_entity_text(&name, &attrs);
        let doc = parse_entity_text("d", &text).unwrap();
        prop_assert_eq!(&doc.name, &name);
        let mut got = doc.attributes.clone();
        got.sort();
        prop_assert_eq!(got, attrs);
    }

    #[test]
    fn synth_is_deterministic(seed in any::<u64>()) {
        let cfg = SynthConfig { n_entities: 50, n_attributes: 20, seed, ..Default::default() };
        prop_assert_eq!(synth_corpus(&cfg).unwrap(), synth_corpus(&cfg).unwrap());
    }

    #[test]
    fn attribute_counts_within_range(seed in any::<u64>(), lo in 1usize..5, extra in 0usize..5) {
        let cfg = SynthConfig { n_entities: 40, n_attributes: 15, min_attrs: lo, max_attrs: lo + extra, seed, ..Default::default() };
        let docs = synth_corpus(&cfg).unwrap();
        prop_assert_eq!(docs.len(), 40);
        let mut seen = BTreeMap::new();
        for d in &docs {
            prop_assert!((lo..=lo + extra).contains(&d.attributes.len()));
            prop_assert_eq!(d.attribute_set().len(), d.attributes.len());
            *seen.entry(d.doc_id.clone()).or_insert(0) += 1;
        }
        prop_assert!(seen.values().all(|&n| n == 1));
    }
}
