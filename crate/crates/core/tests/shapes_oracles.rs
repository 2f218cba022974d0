mod common;

use std::collections::{HashMap, HashSet};

use common::rng;
use nbra::numeric::dot;
use nbra::retrieval::RankedList;
use nbra::shapes::{
    all_primitives, caption_of, emit_svg, enumerate_compositions, heuristic_relevance,
    substitution_matrix, synth_embed, Composition, Primitive, Shape, SynthEmbedConfig,
    SynthEmbedder,
};
use rand::seq::SliceRandom;
use rand::Rng;

/// Nondecreasing index sequences of length k over 0..n.
fn brute_multisets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(n: usize, k: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(n, k, i, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, k, 0, &mut Vec::new(), &mut out);
    out
}

fn binomial(n: u64, k: u64) -> u64 {
    (1..=k).fold(1, |acc, i| acc * (n + 1 - i) / i)
}

#[test]
fn enumeration_matches_brute_force() {
    let prims = all_primitives();
    for k in 1..=4 {
        let brute = brute_multisets(42, k);
        assert_eq!(brute.len() as u64, binomial(41 + k as u64, k as u64));
        let ours = enumerate_compositions(k).unwrap();
        assert_eq!(ours.len(), brute.len());
        if k <= 2 {
            let a: HashSet<String> = ours.iter().map(|c| c.caption().to_string()).collect();
            let b: HashSet<String> = brute
                .iter()
                .map(|ix| caption_of(&ix.iter().map(|&i| prims[i]).collect::<Vec<_>>()).unwrap())
                .collect();
            assert_eq!(a, b);
        }
    }
    assert_eq!(enumerate_compositions(2).unwrap().len(), 903);
    assert_eq!(enumerate_compositions(3).unwrap().len(), 13_244);
}

#[test]
fn caption_is_permutation_invariant() {
    let mut r = rng(31);
    let prims = all_primitives();
    for _ in 0..200 {
        let mut v: Vec<Primitive> = (0..3).map(|_| prims[r.random_range(0..42)]).collect();
        let a = caption_of(&v).unwrap();
        v.shuffle(&mut r);
        assert_eq!(caption_of(&v).unwrap(), a);
        assert_eq!(Composition::parse(&a).unwrap().caption(), a);
    }
}

#[test]
fn relevance_is_symmetric_and_reflexive() {
    let all = enumerate_compositions(3).unwrap();
    let mut r = rng(32);
    for _ in 0..500 {
        let a = &all[r.random_range(0..all.len())];
        let b = &all[r.random_range(0..all.len())];
        assert_eq!(heuristic_relevance(a, b), heuristic_relevance(b, a));
        assert_eq!(heuristic_relevance(a, a), 4);
    }
}

#[test]
fn every_svg_has_three_drawables() {
    for c in enumerate_compositions(3).unwrap().iter().step_by(97) {
        let svg = emit_svg(c);
        let n = svg.matches("<circle").count()
            + svg.matches("<rect").count()
            + svg.matches("<polygon").count();
        assert_eq!(n, 3, "{}", c.caption());
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }
}

#[test]
fn shared_primitives_raise_image_similarity() {
    let base = Composition::parse("blue circle, green star, red pentagon").unwrap();
    let two = Composition::parse("blue circle, green star, yellow hexagon").unwrap();
    let none = Composition::parse("cyan square, orange triangle, purple hexagon").unwrap();
    let (mut s2, mut s0) = (0.0, 0.0);
    for seed in 0..100 {
        let m = SynthEmbedder::new(SynthEmbedConfig {
            seed,
            dim: 32,
            noise_sigma: 0.0,
            modality_rotation: false,
        })
        .unwrap();
        let b = m.embed_image(&base);
        s2 += dot(&b, &m.embed_image(&two));
        s0 += dot(&b, &m.embed_image(&none));
    }
    assert!(s2 / 100.0 > s0 / 100.0);
}

#[test]
fn synth_rows_are_unit_norm() {
    let comps = enumerate_compositions(3).unwrap()[..300].to_vec();
    let cfg = SynthEmbedConfig {
        seed: 5,
        dim: 24,
        noise_sigma: 0.4,
        modality_rotation: true,
    };
    let (t, i) = synth_embed(&comps, &cfg).unwrap();
    for m in [&t, &i] {
        for row in m.rows() {
            let n: f64 = row.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
        }
    }
}

/// Independent scan: walk every (query primitive, item primitive) pair.
fn substitution_oracle(q: &Composition, it: &Composition) -> [[u64; 6]; 6] {
    let mut qv: Vec<Option<Primitive>> = q.primitives().iter().copied().map(Some).collect();
    let mut iv: Vec<Option<Primitive>> = it.primitives().iter().copied().map(Some).collect();
    for a in qv.iter_mut() {
        if let Some(p) = *a {
            if let Some(slot) = iv.iter_mut().find(|b| **b == Some(p)) {
                *slot = None;
                *a = None;
            }
        }
    }
    let mut m = [[0u64; 6]; 6];
    for a in qv.into_iter().flatten() {
        let mut seen = HashSet::new();
        for b in iv.iter().flatten() {
            if b.color == a.color && b.shape != a.shape && seen.insert(b.shape) {
                m[a.shape.index()][b.shape.index()] += 1;
            }
        }
    }
    m
}

#[test]
fn substitution_matrix_matches_scan() {
    let all = enumerate_compositions(3).unwrap();
    let mut r = rng(33);
    let mut items = HashMap::new();
    let mut queries = HashMap::new();
    let mut lists = Vec::new();
    let mut want = [[0u64; 6]; 6];
    for i in 0..400 {
        let q = all[r.random_range(0..all.len())].clone();
        // bias toward shared colors so substitutions actually occur
        let it = if i % 2 == 0 {
            let mut p = q.primitives().to_vec();
            let j = r.random_range(0..3);
            p[j].shape = Shape::ALL[r.random_range(0..6)];
            Composition::new(p).unwrap()
        } else {
            all[r.random_range(0..all.len())].clone()
        };
        let o = substitution_oracle(&q, &it);
        for a in 0..6 {
            for b in 0..6 {
                want[a][b] += o[a][b];
            }
        }
        let (qid, iid) = (format!("q{i}"), format!("i{i}"));
        queries.insert(qid.clone(), q);
        items.insert(iid.clone(), it);
        lists.push(RankedList::from_scores(qid, vec![(iid, 1.0)]));
    }
    let got = substitution_matrix(&lists, &items, &queries).unwrap();
    assert_eq!(got, want);
    assert!(got.iter().flatten().sum::<u64>() > 50);
    for (s, row) in got.iter().enumerate() {
        assert_eq!(row[s], 0);
    }
}
