//! Geometric diagnostics, parameter sweeps and merge-interference reports.
//!
//! Tabular outputs are tab-separated with a header row.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mappers::{apply_mapper_batch, distance_reduction, RidgeMapper, SteeringVector};
use crate::metrics::MetricsReport;
use crate::numeric::{compensated_mean, dot, normalized};
use crate::ot::{gw_distance, FwConfig};
use crate::retrieval::{run_pipeline, PhraseLookup, PipelineConfig, RankedList, Stage1, Steering};
use crate::store::{Corpus, ItemRecord, ObjectAnnotation};

fn upper_distances(cloud: &[Vec<f64>], idx: &[usize]) -> Result<Vec<f64>> {
    let unit: Vec<Vec<f64>> = idx
        .iter()
        .map(|&i| {
            normalized(&cloud[i]).map_err(|_| Error::Degenerate(format!("vector {i} is zero")))
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(idx.len() * idx.len().saturating_sub(1) / 2);
    for i in 0..unit.len() {
        for j in i + 1..unit.len() {
            out.push(1.0 - dot(&unit[i], &unit[j]));
        }
    }
    Ok(out)
}

fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    let ma = compensated_mean(a).unwrap_or(0.0);
    let mb = compensated_mean(b).unwrap_or(0.0);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Undefined(
            "pairwise distances have zero variance".into(),
        ));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson correlation between the pairwise cosine distances of two paired
/// clouds, optionally restricted to a subset of row indices.
pub fn distance_correlation(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    subset: Option<&[usize]>,
) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Validation(format!(
            "clouds have {} and {} points",
            a.len(),
            b.len()
        )));
    }
    let all: Vec<usize> = (0..a.len()).collect();
    let idx = subset.unwrap_or(&all);
    if let Some(&bad) = idx.iter().find(|&&i| i >= a.len()) {
        return Err(Error::Validation(format!("subset index {bad} out of range")));
    }
    if idx.len() < 3 {
        return Err(Error::Undefined(format!(
            "correlation needs at least 3 points, got {}",
            idx.len()
        )));
    }
    pearson(&upper_distances(a, idx)?, &upper_distances(b, idx)?)
}

/// Row indices of items with at least one object of the given noun.
pub fn indices_with_noun(items: &[ItemRecord], noun: &str) -> Vec<usize> {
    items
        .iter()
        .enumerate()
        .filter(|(_, it)| it.objects.iter().any(|o| o.noun == noun))
        .map(|(i, _)| i)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapperStructureReport {
    /// `None` when the unmapped paired distance is zero.
    pub distance_reduction: Option<f64>,
    pub gw_before: f64,
    pub gw_after: f64,
}

pub fn mapper_structure_report(
    x: &[Vec<f64>],
    y: &[Vec<f64>],
    mapper: &RidgeMapper,
    config: &FwConfig,
) -> Result<MapperStructureReport> {
    let reduction = match distance_reduction(x, y, mapper) {
        Ok(r) => Some(r),
        Err(Error::Undefined(_)) => None,
        Err(e) => return Err(e),
    };
    let mapped = apply_mapper_batch(mapper, x)?;
    Ok(MapperStructureReport {
        distance_reduction: reduction,
        gw_before: gw_distance(x, y, config)?,
        gw_after: gw_distance(&mapped, y, config)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    K,
    Alpha,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SweepPoint {
    /// Per query: 1-based rank of the truth item, `None` if absent.
    Ranks(Vec<(String, Option<usize>)>),
    Metrics(MetricsReport),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub grid: Vec<f64>,
    pub points: Vec<SweepPoint>,
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    if grid.iter().any(|g| !g.is_finite()) || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(
            "sweep grid must be finite and strictly increasing".into(),
        ));
    }
    Ok(())
}

impl SweepResult {
    /// Rank sweeps: `k  query_id  rank`; metric sweeps:
    /// `alpha  metric  k  value`. Missing values print as `absent` / `-`.
    pub fn to_tsv(&self) -> String {
        let axis = match self.axis {
            SweepAxis::K => "k",
            SweepAxis::Alpha => "alpha",
        };
        let mut out = String::new();
        let ranks = matches!(self.points.first(), Some(SweepPoint::Ranks(_)));
        if ranks {
            writeln!(out, "{axis}\tquery_id\trank").unwrap();
        } else {
            writeln!(out, "{axis}\tmetric\tk\tvalue").unwrap();
        }
        for (g, p) in self.grid.iter().zip(&self.points) {
            match p {
                SweepPoint::Ranks(rs) => {
                    for (q, r) in rs {
                        let r = r.map_or("absent".to_string(), |r| r.to_string());
                        writeln!(out, "{g}\t{q}\t{r}").unwrap();
                    }
                }
                SweepPoint::Metrics(m) => {
                    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| v.to_string());
                    for (k, v) in &m.recall {
                        writeln!(out, "{g}\trecall\t{k}\t{}", fmt(*v)).unwrap();
                    }
                    for (k, v) in &m.ndcg {
                        writeln!(out, "{g}\tndcg\t{k}\t{}", fmt(*v)).unwrap();
                    }
                    writeln!(out, "{g}\tcas\t-\t{}", fmt(m.cas)).unwrap();
                    writeln!(out, "{g}\tcas_noun\t-\t{}", fmt(m.cas_noun)).unwrap();
                }
            }
        }
        out
    }
}

/// Inputs shared by every sweep point.
#[derive(Debug, Clone, Copy)]
pub struct SweepContext<'a> {
    pub queries: &'a Corpus,
    pub corpus: &'a Corpus,
    pub mapper: Option<&'a RidgeMapper>,
    pub phrase_lookup: Option<&'a PhraseLookup>,
}

/// Runs the pipeline at each shortlist size and records the truth item's rank.
pub fn k_sweep(
    ctx: SweepContext<'_>,
    base: &PipelineConfig,
    k_grid: &[usize],
    truth: &HashMap<String, String>,
) -> Result<SweepResult> {
    let grid: Vec<f64> = k_grid.iter().map(|&k| k as f64).collect();
    check_grid(&grid)?;
    if k_grid[0] == 0 {
        return Err(Error::Config("k must be positive".into()));
    }
    for q in ctx.queries.items() {
        if !truth.contains_key(&q.id) {
            return Err(Error::UnknownId(format!("no ground truth for query {}", q.id)));
        }
    }
    let points = k_grid
        .par_iter()
        .map(|&k| {
            let cfg = PipelineConfig {
                k,
                ..base.clone()
            };
            let lists = run_pipeline(ctx.queries, ctx.corpus, &cfg, ctx.mapper, ctx.phrase_lookup)?;
            Ok(SweepPoint::Ranks(
                lists
                    .iter()
                    .map(|l| (l.query_id.clone(), l.rank_of(&truth[&l.query_id])))
                    .collect(),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult {
        axis: SweepAxis::K,
        grid,
        points,
    })
}

/// Runs the mapped-then-steered pipeline at each alpha and evaluates it.
///
/// The grid must contain 0; at 0 the query is left unsteered, so that point
/// equals the plain mapped pipeline exactly.
pub fn alpha_sweep<F>(
    ctx: SweepContext<'_>,
    base: &PipelineConfig,
    steering: &SteeringVector,
    alpha_grid: &[f64],
    evaluate: F,
) -> Result<SweepResult>
where
    F: Fn(&[RankedList]) -> Result<MetricsReport> + Sync,
{
    check_grid(alpha_grid)?;
    if !alpha_grid.contains(&0.0) {
        return Err(Error::Config("alpha grid must include 0".into()));
    }
    let points = alpha_grid
        .par_iter()
        .map(|&alpha| {
            let cfg = PipelineConfig {
                stage1: Stage1::RidgePlusSteer,
                steering: Some(Steering {
                    vector: steering.clone(),
                    alpha,
                }),
                ..base.clone()
            };
            let lists = run_pipeline(ctx.queries, ctx.corpus, &cfg, ctx.mapper, ctx.phrase_lookup)?;
            Ok(SweepPoint::Metrics(evaluate(&lists)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult {
        axis: SweepAxis::Alpha,
        grid: alpha_grid.to_vec(),
        points,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotCounts {
    pub improved: usize,
    pub degraded: usize,
    pub unchanged: usize,
}

impl SlotCounts {
    pub fn total(&self) -> usize {
        self.improved + self.degraded + self.unchanged
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Change {
    Improved,
    Degraded,
    Unchanged,
}

fn classify(before: f64, after: f64) -> Change {
    if after > before {
        Change::Improved
    } else if after < before {
        Change::Degraded
    } else {
        Change::Unchanged
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryInterference {
    pub query_id: String,
    pub n_objects: usize,
    /// Per attribute kind, change of the mean slot score.
    pub kinds: BTreeMap<String, Change>,
    pub degraded_slots: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterferenceReport {
    pub top_k: usize,
    pub n_queries: usize,
    /// Slot-level counts per attribute kind.
    pub slots: BTreeMap<String, SlotCounts>,
    pub queries_degraded_any: usize,
    /// `conditional[a][b]`: among queries where kind `a` improved, the
    /// fraction where kind `b` degraded. Absent when `a` never improved.
    pub conditional: BTreeMap<String, BTreeMap<String, f64>>,
    /// Object count -> (queries, queries degraded on at least one slot).
    pub by_object_count: BTreeMap<usize, (usize, usize)>,
    pub per_query: Vec<QueryInterference>,
}

/// Fraction of `items` with an object named `noun` that also carries `attr`
/// (any attribute position when `attr` is `Some`).
fn slot_score(items: &[&[ObjectAnnotation]], noun: &str, attr: Option<&str>) -> f64 {
    if items.is_empty() {
        return 0.0;
    }
    let hits = items
        .iter()
        .filter(|objs| {
            objs.iter().any(|o| {
                o.noun == noun && attr.is_none_or(|a| o.attributes.iter().any(|x| x == a))
            })
        })
        .count();
    hits as f64 / items.len() as f64
}

/// Compares per-slot correctness of `merged` against `baseline`.
///
/// A slot is one (query object, attribute kind) pair; the noun itself is a
/// slot of kind `noun_kind`. A slot's score is the fraction of the top `k`
/// retrieved items having an object with that noun and that attribute value.
pub fn interference_report(
    queries: &[ItemRecord],
    baseline: &[RankedList],
    merged: &[RankedList],
    corpus: &Corpus,
    k: usize,
    noun_kind: &str,
) -> Result<InterferenceReport> {
    if k == 0 {
        return Err(Error::Config("k must be positive".into()));
    }
    let index = |lists: &[RankedList]| -> HashMap<String, usize> {
        lists
            .iter()
            .enumerate()
            .map(|(i, l)| (l.query_id.clone(), i))
            .collect()
    };
    let (bi, mi) = (index(baseline), index(merged));
    let objects_of = |list: &RankedList| -> Result<Vec<&[ObjectAnnotation]>> {
        list.ids()
            .take(k)
            .map(|id| {
                corpus
                    .get(id)
                    .map(|it| it.objects.as_slice())
                    .ok_or_else(|| Error::UnknownId(id.to_string()))
            })
            .collect()
    };

    let mut slots: BTreeMap<String, SlotCounts> = BTreeMap::new();
    let mut per_query = Vec::with_capacity(queries.len());
    for q in queries {
        let lookup = |m: &HashMap<String, usize>, lists: &[RankedList]| {
            m.get(&q.id)
                .map(|&i| lists[i].clone())
                .ok_or_else(|| Error::UnknownId(format!("no results for query {}", q.id)))
        };
        let b_items = objects_of(&lookup(&bi, baseline)?)?;
        let m_items = objects_of(&lookup(&mi, merged)?)?;

        let mut kind_scores: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
        let mut degraded_slots = 0;
        for o in &q.objects {
            let mut record = |kind: String, attr: Option<&str>| {
                let before = slot_score(&b_items, &o.noun, attr);
                let after = slot_score(&m_items, &o.noun, attr);
                let c = slots.entry(kind.clone()).or_default();
                match classify(before, after) {
                    Change::Improved => c.improved += 1,
                    Change::Degraded => {
                        c.degraded += 1;
                        degraded_slots += 1;
                    }
                    Change::Unchanged => c.unchanged += 1,
                }
                let e = kind_scores.entry(kind).or_default();
                e.0.push(before);
                e.1.push(after);
            };
            record(noun_kind.to_string(), None);
            for (i, a) in o.attributes.iter().enumerate() {
                record(o.kind_of(i), Some(a));
            }
        }
        let kinds = kind_scores
            .into_iter()
            .map(|(kind, (b, m))| {
                let change = classify(
                    compensated_mean(&b).unwrap_or(0.0),
                    compensated_mean(&m).unwrap_or(0.0),
                );
                (kind, change)
            })
            .collect();
        per_query.push(QueryInterference {
            query_id: q.id.clone(),
            n_objects: q.objects.len(),
            kinds,
            degraded_slots,
        });
    }

    let all_kinds: HashSet<&String> = per_query.iter().flat_map(|p| p.kinds.keys()).collect();
    let mut all_kinds: Vec<&String> = all_kinds.into_iter().collect();
    all_kinds.sort();
    let mut conditional = BTreeMap::new();
    for a in &all_kinds {
        let improved: Vec<&QueryInterference> = per_query
            .iter()
            .filter(|p| p.kinds.get(*a) == Some(&Change::Improved))
            .collect();
        if improved.is_empty() {
            continue;
        }
        let mut row = BTreeMap::new();
        for b in &all_kinds {
            if a == b {
                continue;
            }
            let both = improved
                .iter()
                .filter(|p| p.kinds.get(*b) == Some(&Change::Degraded))
                .count();
            row.insert((*b).clone(), both as f64 / improved.len() as f64);
        }
        conditional.insert((*a).clone(), row);
    }

    let mut by_object_count: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for p in &per_query {
        let e = by_object_count.entry(p.n_objects).or_default();
        e.0 += 1;
        if p.degraded_slots > 0 {
            e.1 += 1;
        }
    }

    Ok(InterferenceReport {
        top_k: k,
        n_queries: per_query.len(),
        slots,
        queries_degraded_any: per_query.iter().filter(|p| p.degraded_slots > 0).count(),
        conditional,
        by_object_count,
        per_query,
    })
}

impl InterferenceReport {
    /// `kind  improved  degraded  unchanged  total`.
    pub fn slots_tsv(&self) -> String {
        let mut out = String::from("kind\timproved\tdegraded\tunchanged\ttotal\n");
        for (kind, c) in &self.slots {
            writeln!(
                out,
                "{kind}\t{}\t{}\t{}\t{}",
                c.improved,
                c.degraded,
                c.unchanged,
                c.total()
            )
            .unwrap();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_clouds_correlate_perfectly() {
        let a = vec![
            vec![1.0, 0.0, 0.0],
            vec![0.6, 0.8, 0.0],
            vec![0.0, 0.6, 0.8],
            vec![0.5, 0.5, 0.7],
        ];
        assert!((distance_correlation(&a, &a, None).unwrap() - 1.0).abs() < 1e-12);
        assert!(distance_correlation(&a, &a, Some(&[0, 1])).is_err());
        assert!(distance_correlation(&a, &a[..3], None).is_err());
    }

    #[test]
    fn grid_checks() {
        assert!(check_grid(&[0.0, 0.5, 1.0]).is_ok());
        assert!(check_grid(&[0.0, 0.0]).is_err());
        assert!(check_grid(&[]).is_err());
    }
}
