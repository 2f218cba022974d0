mod common;

use std::collections::{HashMap, HashSet};

use common::*;
use nbra::metrics::{
    build_heuristic_relevance, build_heuristic_similarity, cas, cas_noun, evaluate, item_tuples,
    ndcg_at_k, ndcg_of, parse_relevance, query_tuples, recall_at_k, relevance_to_string,
    EvalInputs, EvalSpec, GradeKind, PositivesPredicate, RelevanceTable,
};
use nbra::retrieval::RankedList;
use nbra::shapes::{enumerate_compositions, heuristic_relevance, Composition};
use rand::seq::SliceRandom;
use rand::Rng;

fn list(qid: &str, ids: &[&str]) -> RankedList {
    RankedList::from_scores(
        qid,
        ids.iter()
            .enumerate()
            .map(|(i, id)| (id.to_string(), 1.0 - i as f64 * 0.01))
            .collect(),
    )
}

#[test]
fn ndcg_hand_cases() {
    assert!((ndcg_of(&[0.0, 4.0]) - 1.0 / 3f64.log2()).abs() < 1e-12);
    assert!((ndcg_of(&[0.0, 4.0]) - 0.6309).abs() < 1e-4);
    assert_eq!(ndcg_of(&[4.0, 0.0]), 1.0);
    assert_eq!(ndcg_of(&[0.0, 0.0, 0.0]), 0.0);
    assert_eq!(ndcg_of(&[2.0, 2.0, 2.0]), 1.0);
}

/// DCG with log2 discounts written out term by term.
fn dcg_oracle(g: &[f64]) -> f64 {
    let mut s = 0.0;
    for (i, x) in g.iter().enumerate() {
        s += x / (i as f64 + 2.0).ln() * std::f64::consts::LN_2;
    }
    s
}

#[test]
fn ndcg_matches_explicit_sum_and_rewards_swaps() {
    let mut r = rng(61);
    for _ in 0..300 {
        let n: usize = r.random_range(1..=10);
        let g: Vec<f64> = (0..n).map(|_| r.random_range(0..=4) as f64).collect();
        let mut ideal = g.clone();
        ideal.sort_by(|a, b| b.total_cmp(a));
        let want = if dcg_oracle(&ideal) == 0.0 {
            0.0
        } else {
            dcg_oracle(&g) / dcg_oracle(&ideal)
        };
        assert!((ndcg_of(&g) - want).abs() < 1e-12);
        // promoting a strictly better grade past a worse neighbour never hurts
        for i in 0..n.saturating_sub(1) {
            if g[i + 1] > g[i] {
                let mut s = g.clone();
                s.swap(i, i + 1);
                assert!(ndcg_of(&s) > ndcg_of(&g));
            }
        }
    }
}

#[test]
fn recall_is_monotone_in_k() {
    let mut r = rng(62);
    let ids: Vec<String> = (0..40).map(|i| format!("i{i}")).collect();
    let mut lists = Vec::new();
    let mut pos = HashMap::new();
    for q in 0..30 {
        let qid = format!("q{q}");
        let mut order = ids.clone();
        order.shuffle(&mut r);
        let set: HashSet<String> = (0..r.random_range(0..3))
            .map(|_| ids[r.random_range(0..40)].clone())
            .collect();
        pos.insert(qid.clone(), set);
        let refs: Vec<&str> = order.iter().map(String::as_str).collect();
        lists.push(list(&qid, &refs));
    }
    let pred = PositivesPredicate::ListedIds(pos.clone());
    let mut prev = 0.0;
    for k in 1..=40 {
        let v = recall_at_k(&lists, &pred, k).unwrap();
        assert!(v.value >= prev);
        let skipped = pos.values().filter(|s| s.is_empty()).count();
        assert_eq!(v.excluded, skipped);
        prev = v.value;
    }
    assert_eq!(prev, 1.0);
    assert!(recall_at_k(&lists, &pred, 0).is_err());
}

#[test]
fn exact_caption_predicate() {
    let comps = enumerate_compositions(1).unwrap();
    let items: Vec<_> = comps[..5]
        .iter()
        .enumerate()
        .map(|(i, c)| c.to_record(format!("i{i}")))
        .collect();
    let queries = vec![comps[2].to_record("q0"), comps[30].to_record("q1")];
    let p = PositivesPredicate::exact_caption(&queries, &items);
    assert!(p.is_positive("q0", "i2"));
    assert!(!p.is_positive("q0", "i1"));
    assert!(!p.has_positives("q1"));
    let v = recall_at_k(
        &[list("q0", &["i0", "i2"]), list("q1", &["i0"])],
        &p,
        1,
    )
    .unwrap();
    assert_eq!((v.value, v.evaluated, v.excluded), (0.0, 1, 1));
}

#[test]
fn cas_ignores_order_within_top_k() {
    let mut table = RelevanceTable::new(GradeKind::Continuous);
    let sims = [0.9, 0.1, 0.5, 0.7, 0.3];
    for (i, s) in sims.iter().enumerate() {
        table.insert("q", &format!("i{i}"), *s).unwrap();
    }
    let a = cas(&[list("q", &["i0", "i1", "i2", "i3", "i4"])], &table, 3).unwrap();
    let b = cas(&[list("q", &["i2", "i0", "i1", "i4", "i3"])], &table, 3).unwrap();
    assert!((a.value - 0.5).abs() < 1e-12);
    assert!((a.value - b.value).abs() < 1e-12);
    // short lists divide by their own length
    let c = cas(&[list("q", &["i0", "i3"])], &table, 10).unwrap();
    assert!((c.value - 0.8).abs() < 1e-12);
    let d = cas(&[list("q", &["i0", "nope"])], &table, 10).unwrap();
    assert_eq!(d.missing, 1);
}

#[test]
fn graded_relevance_examples() {
    let q = Composition::parse("blue circle, green star, red square").unwrap();
    let two = Composition::parse("blue circle, green star, yellow hexagon").unwrap();
    let none = Composition::parse("cyan pentagon, orange triangle, purple hexagon").unwrap();
    assert_eq!(heuristic_relevance(&q, &q), 4);
    assert_eq!(heuristic_relevance(&q, &two), 3);
    assert_eq!(heuristic_relevance(&q, &none), 0);
}

#[test]
fn heuristic_table_recomputes_per_pair() {
    let all = enumerate_compositions(3).unwrap();
    let mut r = rng(63);
    let pick = |r: &mut rand_chacha::ChaCha8Rng| all[r.random_range(0..all.len())].clone();
    let queries: HashMap<String, Composition> =
        (0..20).map(|i| (format!("q{i}"), pick(&mut r))).collect();
    let items: HashMap<String, Composition> =
        (0..20).map(|i| (format!("i{i}"), pick(&mut r))).collect();
    let ids: Vec<String> = (0..20).map(|i| format!("i{i}")).collect();
    let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
    let lists: Vec<RankedList> = (0..20).map(|q| list(&format!("q{q}"), &refs)).collect();
    let graded = build_heuristic_relevance(&lists, &queries, &items).unwrap();
    let cont = build_heuristic_similarity(&lists, &queries, &items).unwrap();
    assert_eq!(graded.len(), 400);
    for (qid, q) in &queries {
        for (iid, it) in &items {
            // shared primitives counted by hand as a multiset intersection
            let mut rest = it.primitives().to_vec();
            let mut shared = 0;
            for p in q.primitives() {
                if let Some(pos) = rest.iter().position(|x| x == p) {
                    rest.remove(pos);
                    shared += 1;
                }
            }
            let frac = shared as f64 / 3.0;
            assert!((cont.get(qid, iid).unwrap() - frac).abs() < 1e-12);
            assert_eq!(graded.get(qid, iid).unwrap(), (4.0 * frac).round_ties_even());
        }
    }
    let text = relevance_to_string(&graded);
    let back = parse_relevance(&text, GradeKind::Continuous).unwrap();
    assert_eq!(back.kind(), GradeKind::Graded);
    assert_eq!(relevance_to_string(&back), text);
}

#[test]
fn graded_values_are_range_checked() {
    let mut t = RelevanceTable::new(GradeKind::Graded);
    assert!(t.insert("q", "i", 5.0).is_err());
    assert!(t.insert("q", "i", 2.5).is_err());
    let mut c = RelevanceTable::new(GradeKind::Continuous);
    assert!(c.insert("q", "i", 1.5).is_err());
    assert!(c.insert("q", "i", 0.25).is_ok());
}

#[test]
fn evaluate_reports_and_hides_top1_only_depths() {
    let comps = enumerate_compositions(3).unwrap();
    let items: Vec<_> = comps[..6]
        .iter()
        .enumerate()
        .map(|(i, c)| c.to_record(format!("i{i}")))
        .collect();
    let queries = vec![comps[0].to_record("q0"), comps[4].to_record("q1")];
    let positives = PositivesPredicate::exact_caption(&queries, &items);
    let mut lists = vec![
        list("q0", &["i1", "i0", "i2", "i3", "i4", "i5"]),
        list("q1", &["i4", "i0", "i1", "i2", "i3", "i5"]),
    ];
    let by_id = |rs: &[nbra::ItemRecord]| -> HashMap<String, Composition> {
        rs.iter()
            .map(|r| (r.id.clone(), Composition::parse(&r.caption).unwrap()))
            .collect()
    };
    let graded = build_heuristic_relevance(&lists, &by_id(&queries), &by_id(&items)).unwrap();
    let qo = query_tuples(&queries);
    let it = item_tuples(&items);
    let inputs = EvalInputs {
        positives: Some(&positives),
        graded: Some(&graded),
        query_objects: Some(&qo),
        item_tuples: Some(&it),
        ..EvalInputs::default()
    };
    let rep = evaluate(&lists, &inputs, &EvalSpec::default()).unwrap();
    assert_eq!(rep.recall[&1], Some(0.5));
    assert_eq!(rep.recall[&5], Some(1.0));
    let nd = ndcg_at_k(&lists, &graded, 5).unwrap().value;
    assert!((rep.ndcg[&5].unwrap() - nd).abs() < 1e-12);
    let cn = cas_noun(&lists, &qo, &it, 10).unwrap().value;
    assert!((rep.cas_noun.unwrap() - cn).abs() < 1e-12);
    assert!(rep.to_json().contains("ndcg_convention"));

    for l in lists.iter_mut() {
        l.top1_only = true;
    }
    let rep = evaluate(&lists, &inputs, &EvalSpec::default()).unwrap();
    assert!(rep.top1_only);
    assert_eq!(rep.recall[&1], Some(0.5));
    assert_eq!(rep.recall[&5], None);
    assert_eq!(rep.ndcg[&10], None);
}
