mod common;

use common::*;
use nbra::diagnostics::{
    alpha_sweep, distance_correlation, interference_report, k_sweep, mapper_structure_report,
    Change, SweepContext, SweepPoint,
};
use nbra::mappers::{fit_ridge, steering_vector, RidgeMapper};
use nbra::metrics::{evaluate, EvalInputs, EvalSpec, PositivesPredicate};
use nbra::ot::FwConfig;
use nbra::retrieval::{run_pipeline, PipelineConfig, RankedList, Stage1};
use nbra::shapes::{BenchmarkConfig, Composition, SyntheticBenchmark};
use nbra::store::{Corpus, EmbeddingMatrix, ItemRecord, Modality};

fn pearson_oracle(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
    let sab: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let saa: f64 = a.iter().map(|x| x * x).sum();
    let sbb: f64 = b.iter().map(|x| x * x).sum();
    (n * sab - sa * sb) / ((n * saa - sa * sa).sqrt() * (n * sbb - sb * sb).sqrt())
}

fn pair_distances(c: &[Vec<f64>]) -> Vec<f64> {
    let d = cosine_distance_matrix(c);
    let mut out = Vec::new();
    for i in 0..c.len() {
        for j in i + 1..c.len() {
            out.push(d[(i, j)]);
        }
    }
    out
}

#[test]
fn correlation_matches_textbook_formula() {
    let mut r = rng(71);
    for _ in 0..50 {
        let a = cloud(&mut r, 12, 5);
        let b = cloud(&mut r, 12, 5);
        let want = pearson_oracle(&pair_distances(&a), &pair_distances(&b));
        let got = distance_correlation(&a, &b, None).unwrap();
        assert!((got - want).abs() < 1e-9);
        assert!((distance_correlation(&b, &a, None).unwrap() - got).abs() < 1e-12);
        let sub = [0, 2, 3, 7, 11];
        let sa: Vec<Vec<f64>> = sub.iter().map(|&i| a[i].clone()).collect();
        let sb: Vec<Vec<f64>> = sub.iter().map(|&i| b[i].clone()).collect();
        let want = pearson_oracle(&pair_distances(&sa), &pair_distances(&sb));
        assert!((distance_correlation(&a, &b, Some(&sub)).unwrap() - want).abs() < 1e-9);
    }
}

#[test]
fn rotated_copy_correlates_perfectly() {
    let mut r = rng(72);
    let a = cloud(&mut r, 15, 6);
    let rot = orthogonal(&mut r, 6);
    let b: Vec<Vec<f64>> = a.iter().map(|v| rotate(&rot, v)).collect();
    assert!((distance_correlation(&a, &b, None).unwrap() - 1.0).abs() < 1e-9);
}

#[test]
fn mapper_report_on_linear_data() {
    let mut r = rng(73);
    let x = cloud(&mut r, 60, 8);
    let rot = orthogonal(&mut r, 8);
    let y: Vec<Vec<f64>> = x.iter().map(|v| rotate(&rot, v)).collect();
    let m = fit_ridge(&x, &y, 1e-8).unwrap();
    let cfg = FwConfig::default();
    let rep = mapper_structure_report(&x, &y, &m, &cfg).unwrap();
    assert!(rep.distance_reduction.unwrap() >= 99.0);
    assert!((rep.gw_before - rep.gw_after).abs() < 1e-6);

    let same = mapper_structure_report(&x, &x, &RidgeMapper::identity(8), &cfg).unwrap();
    assert_eq!(same.distance_reduction, None);
}

fn bench() -> SyntheticBenchmark {
    SyntheticBenchmark::build(&BenchmarkConfig {
        seed: 9,
        arity: 3,
        n_items: 80,
        n_queries: 12,
        dim: 24,
        noise_sigma: 0.3,
        modality_rotation: false,
    })
    .unwrap()
}

#[test]
fn k_sweep_ranks_agree_with_single_runs() {
    let b = bench();
    let ctx = SweepContext {
        queries: &b.queries,
        corpus: &b.corpus,
        mapper: None,
        phrase_lookup: Some(&b.phrase_lookup),
    };
    let base = PipelineConfig::default();
    let grid = [1, 5, 20];
    let out = k_sweep(ctx, &base, &grid, &b.truth).unwrap();
    assert_eq!(out.grid, vec![1.0, 5.0, 20.0]);
    for (k, point) in grid.iter().zip(&out.points) {
        let SweepPoint::Ranks(ranks) = point else {
            panic!("expected ranks")
        };
        let lists = run_pipeline(
            &b.queries,
            &b.corpus,
            &PipelineConfig { k: *k, ..base.clone() },
            None,
            None,
        )
        .unwrap();
        for ((qid, rank), l) in ranks.iter().zip(&lists) {
            assert_eq!(qid, &l.query_id);
            assert_eq!(*rank, l.rank_of(&b.truth[qid]));
            assert!(rank.is_none_or(|r| r <= *k));
        }
    }
    assert!(out.to_tsv().starts_with("k\t"));
    assert!(k_sweep(ctx, &base, &[5, 1], &b.truth).is_err());
    assert!(k_sweep(ctx, &base, &[0, 1], &b.truth).is_err());
}

#[test]
fn alpha_sweep_zero_point_is_unsteered() {
    let b = bench();
    let x = b.queries.embeddings().to_rows_f64();
    let y: Vec<Vec<f64>> = b
        .queries
        .items()
        .iter()
        .map(|q| {
            b.corpus
                .embeddings()
                .row_f64(b.corpus.position(&b.truth[&q.id]).unwrap())
        })
        .collect();
    let mapper = fit_ridge(&x, &y, 0.5).unwrap();
    let v = steering_vector(&y[1], &y[2]).unwrap();
    let ctx = SweepContext {
        queries: &b.queries,
        corpus: &b.corpus,
        mapper: Some(&mapper),
        phrase_lookup: None,
    };
    let base = PipelineConfig {
        stage1: Stage1::RidgeMapped,
        k: 10,
        ..PipelineConfig::default()
    };
    let positives = PositivesPredicate::exact_caption(b.queries.items(), b.corpus.items());
    let eval = |lists: &[RankedList]| {
        evaluate(
            lists,
            &EvalInputs {
                positives: Some(&positives),
                ..EvalInputs::default()
            },
            &EvalSpec::default(),
        )
    };
    let out = alpha_sweep(ctx, &base, &v, &[0.0, 0.5, 2.0], eval).unwrap();
    let plain = run_pipeline(&b.queries, &b.corpus, &base, Some(&mapper), None).unwrap();
    assert_eq!(out.points[0], SweepPoint::Metrics(eval(&plain).unwrap()));
    assert!(alpha_sweep(ctx, &base, &v, &[0.5, 1.0], eval).is_err());
    let again = alpha_sweep(ctx, &base, &v, &[0.0, 0.5, 2.0], eval).unwrap();
    assert_eq!(out.to_tsv(), again.to_tsv());
}

fn tiny_corpus(captions: &[&str]) -> Corpus {
    let items: Vec<ItemRecord> = captions
        .iter()
        .enumerate()
        .map(|(i, c)| Composition::parse(c).unwrap().to_record(format!("i{i}")))
        .collect();
    let n = items.len();
    let values = (0..n)
        .flat_map(|i| (0..n).map(move |j| if i == j { 1.0f32 } else { 0.0 }))
        .collect();
    Corpus::new(
        Modality::Image,
        items,
        EmbeddingMatrix::new(n, values, true).unwrap(),
    )
    .unwrap()
}

fn ranked(qid: &str, ids: &[&str]) -> RankedList {
    RankedList::from_scores(
        qid,
        ids.iter()
            .enumerate()
            .map(|(i, id)| (id.to_string(), -(i as f64)))
            .collect(),
    )
}

#[test]
fn interference_on_hand_built_instance() {
    let corpus = tiny_corpus(&[
        "red circle, blue square",
        "red square, blue circle",
        "green star",
        "red circle",
    ]);
    let queries = vec![
        Composition::parse("red circle, blue square").unwrap().to_record("q0"),
        Composition::parse("green star").unwrap().to_record("q1"),
        Composition::parse("red circle").unwrap().to_record("q2"),
    ];
    let baseline = vec![
        ranked("q0", &["i0"]),
        ranked("q1", &["i2"]),
        ranked("q2", &["i1"]),
    ];
    let merged = vec![
        ranked("q0", &["i1"]),
        ranked("q1", &["i2"]),
        ranked("q2", &["i3"]),
    ];
    let rep = interference_report(&queries, &baseline, &merged, &corpus, 1, "shape").unwrap();
    // q0: both shapes still present, both colors now on the wrong shape
    // q1: untouched; q2: color was wrong, now right
    let shape = rep.slots["shape"];
    let color = rep.slots["color"];
    assert_eq!((shape.improved, shape.degraded, shape.unchanged), (0, 0, 4));
    assert_eq!((color.improved, color.degraded, color.unchanged), (1, 2, 1));
    assert_eq!(rep.queries_degraded_any, 1);
    assert_eq!(rep.by_object_count[&2], (1, 1));
    assert_eq!(rep.by_object_count[&1], (2, 0));
    assert_eq!(rep.per_query[0].kinds["color"], Change::Degraded);
    assert_eq!(rep.per_query[2].kinds["color"], Change::Improved);
    assert_eq!(rep.conditional["color"]["shape"], 0.0);
    assert!(rep.slots_tsv().lines().count() == 3);
    let mut missing = merged.clone();
    missing.pop();
    assert!(interference_report(&queries, &baseline, &missing, &corpus, 1, "shape").is_err());
}
