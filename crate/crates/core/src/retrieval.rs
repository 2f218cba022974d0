//! Stage-1 cosine retrieval and stage-2 set-based reranking.

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mappers::{
    aggregate_scores, apply_mapper, apply_steering, merge_average, MergeStrategy, RidgeMapper,
    SteeringVector,
};
use crate::numeric::{dot, normalized};
use crate::ot::{cost_bundle, fgw_solve, hungarian, uniform, FwConfig};
use crate::store::{self, Corpus, ItemRecord};

#[derive(Debug, Clone, PartialEq)]
pub struct RankedEntry {
    pub item_id: String,
    pub score: f64,
    pub stage2_cost: Option<f64>,
    pub warnings: Vec<String>,
}

impl RankedEntry {
    pub fn new(item_id: impl Into<String>, score: f64) -> Self {
        RankedEntry {
            item_id: item_id.into(),
            score,
            stage2_cost: None,
            warnings: Vec::new(),
        }
    }
}

/// Items for one query, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub query_id: String,
    pub entries: Vec<RankedEntry>,
    /// Set by the Hungarian reranker when only rank 1 is meaningful.
    pub top1_only: bool,
}

fn by_score_then_id(a: &RankedEntry, b: &RankedEntry) -> std::cmp::Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.item_id.cmp(&b.item_id))
}

impl RankedList {
    /// Sorts by descending score, ties by ascending item id.
    pub fn from_scores(query_id: impl Into<String>, scores: Vec<(String, f64)>) -> Self {
        let mut entries: Vec<RankedEntry> = scores
            .into_iter()
            .map(|(id, s)| RankedEntry::new(id, s))
            .collect();
        entries.sort_by(by_score_then_id);
        RankedList {
            query_id: query_id.into(),
            entries,
            top1_only: false,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.item_id.as_str())
    }

    /// 1-based rank of `item_id`, if present.
    pub fn rank_of(&self, item_id: &str) -> Option<usize> {
        self.entries
            .iter()
            .position(|e| e.item_id == item_id)
            .map(|p| p + 1)
    }
}

/// The top-k prefix handed to a reranker.
#[derive(Debug, Clone, PartialEq)]
pub struct Shortlist {
    pub query_id: String,
    pub k: usize,
    pub entries: Vec<RankedEntry>,
}

impl Shortlist {
    pub fn from_list(list: &RankedList, k: usize) -> Self {
        Shortlist {
            query_id: list.query_id.clone(),
            k,
            entries: list.entries.iter().take(k).cloned().collect(),
        }
    }
}

/// Unit-normalized `f64` copy of a corpus for exact cosine scans.
#[derive(Debug, Clone)]
pub struct CosineIndex {
    ids: Vec<String>,
    dim: usize,
    rows: Vec<f64>,
}

impl CosineIndex {
    pub fn new(corpus: &Corpus) -> Result<Self> {
        let m = corpus.embeddings();
        let mut rows = Vec::with_capacity(m.count() * m.dim());
        for i in 0..m.count() {
            let r = normalized(&m.row_f64(i)).map_err(|_| Error::ZeroRow { row: i })?;
            rows.extend(r);
        }
        Ok(CosineIndex {
            ids: corpus.items().iter().map(|it| it.id.clone()).collect(),
            dim: m.dim(),
            rows,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    /// Cosine against every row, in corpus order.
    pub fn scores(&self, q: &[f64]) -> Result<Vec<f64>> {
        if q.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: q.len(),
            });
        }
        let q = normalized(q).map_err(|_| Error::Degenerate("query vector is zero".into()))?;
        Ok((0..self.len()).map(|i| dot(&q, self.row(i))).collect())
    }

    pub fn retrieve(&self, query_id: &str, q: &[f64], k: usize) -> Result<RankedList> {
        let scores = self.scores(q)?;
        Ok(top_k(query_id, &self.ids, scores, k))
    }
}

fn top_k(query_id: &str, ids: &[String], scores: Vec<f64>, k: usize) -> RankedList {
    let mut entries: Vec<RankedEntry> = ids
        .iter()
        .zip(scores)
        .map(|(id, s)| RankedEntry::new(id.clone(), s))
        .collect();
    let k = k.min(entries.len());
    if k > 0 && k < entries.len() {
        entries.select_nth_unstable_by(k - 1, by_score_then_id);
        entries.truncate(k);
    }
    entries.sort_by(by_score_then_id);
    entries.truncate(k);
    RankedList {
        query_id: query_id.to_string(),
        entries,
        top1_only: false,
    }
}

/// Top-`k` items of `corpus` by cosine to `q`.
pub fn cosine_retrieve(q: &[f64], corpus: &Corpus, k: usize) -> Result<RankedList> {
    if corpus.is_empty() {
        return Err(Error::Validation("corpus is empty".into()));
    }
    CosineIndex::new(corpus)?.retrieve("", q, k)
}

/// One unit vector per annotated object, for a query or an item.
#[derive(Debug, Clone, PartialEq)]
pub struct PerObjectSet {
    pub owner_id: String,
    pub vectors: Vec<Vec<f64>>,
    pub labels: Vec<store::ObjectAnnotation>,
}

pub type PhraseLookup = HashMap<String, Vec<f64>>;

pub fn build_per_object_set(item: &ItemRecord, lookup: &PhraseLookup) -> Result<PerObjectSet> {
    if item.objects.is_empty() {
        return Err(Error::Validation(format!(
            "item {:?} has no object annotations",
            item.id
        )));
    }
    let mut vectors = Vec::with_capacity(item.objects.len());
    for obj in &item.objects {
        let phrase = obj.phrase();
        let v = lookup
            .get(&phrase)
            .ok_or_else(|| Error::MissingPhrase(phrase.clone()))?;
        vectors.push(
            normalized(v)
                .map_err(|_| Error::Degenerate(format!("phrase {phrase:?} has a zero vector")))?,
        );
    }
    Ok(PerObjectSet {
        owner_id: item.id.clone(),
        vectors,
        labels: item.objects.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HungarianTiebreak {
    /// Only rank 1 is reported as meaningful.
    #[default]
    TopOnly,
    /// Full ordering, ties resolved by shortlist (cosine) order.
    Cosine,
}

fn candidate<'a>(
    sets: &'a HashMap<String, PerObjectSet>,
    id: &str,
) -> Result<&'a PerObjectSet> {
    sets.get(id)
        .ok_or_else(|| Error::UnknownId(format!("no object set for candidate {id}")))
}

/// Stable sort by descending score; equal scores keep shortlist order.
fn finish_rerank(query_id: &str, mut entries: Vec<RankedEntry>) -> RankedList {
    entries.sort_by(|a, b| b.score.total_cmp(&a.score));
    RankedList {
        query_id: query_id.to_string(),
        entries,
        top1_only: false,
    }
}

pub fn rerank_hungarian(
    shortlist: &Shortlist,
    query_set: &PerObjectSet,
    candidate_sets: &HashMap<String, PerObjectSet>,
    tiebreak: HungarianTiebreak,
) -> Result<RankedList> {
    let mut entries = Vec::with_capacity(shortlist.entries.len());
    for e in &shortlist.entries {
        let c = candidate(candidate_sets, &e.item_id)?;
        let bundle = cost_bundle(&query_set.vectors, &c.vectors)?;
        let (_, cost) = hungarian(&bundle.d)?;
        let mut out = RankedEntry::new(e.item_id.clone(), -cost);
        out.stage2_cost = Some(cost);
        entries.push(out);
    }
    let mut list = finish_rerank(&shortlist.query_id, entries);
    list.top1_only = tiebreak == HungarianTiebreak::TopOnly;
    Ok(list)
}

pub fn rerank_fgw(
    shortlist: &Shortlist,
    query_set: &PerObjectSet,
    candidate_sets: &HashMap<String, PerObjectSet>,
    config: &FwConfig,
) -> Result<RankedList> {
    config.validate()?;
    let mu = uniform(query_set.vectors.len());
    let mut entries = Vec::with_capacity(shortlist.entries.len());
    for e in &shortlist.entries {
        let c = candidate(candidate_sets, &e.item_id)?;
        let bundle = cost_bundle(&query_set.vectors, &c.vectors)?;
        let sol = fgw_solve(&bundle, &mu, &uniform(c.vectors.len()), config)?;
        let mut out = RankedEntry::new(e.item_id.clone(), -sol.cost);
        out.stage2_cost = Some(sol.cost);
        out.warnings = sol.warnings.iter().map(ToString::to_string).collect();
        out.warnings.dedup();
        entries.push(out);
    }
    Ok(finish_rerank(&shortlist.query_id, entries))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage1 {
    Raw,
    RidgeMapped,
    RidgePlusSteer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage2 {
    None,
    Hungarian,
    Fgw,
}

/// A steering direction in the corpus space together with its strength.
#[derive(Debug, Clone, PartialEq)]
pub struct Steering {
    pub vector: SteeringVector,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub stage1: Stage1,
    pub steering: Option<Steering>,
    pub stage2: Stage2,
    pub k: usize,
    pub fw: FwConfig,
    pub hungarian_tiebreak: HungarianTiebreak,
}

pub const DEFAULT_K: usize = 50;

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            stage1: Stage1::Raw,
            steering: None,
            stage2: Stage2::None,
            k: DEFAULT_K,
            fw: FwConfig::default(),
            hungarian_tiebreak: HungarianTiebreak::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self, has_mapper: bool, has_lookup: bool) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be positive".into()));
        }
        let needs_mapper = self.stage1 != Stage1::Raw;
        if needs_mapper && !has_mapper {
            return Err(Error::Config(format!(
                "stage1 {:?} needs a ridge mapper",
                self.stage1
            )));
        }
        if !needs_mapper && has_mapper {
            return Err(Error::Config(
                "a mapper was supplied but stage1 is raw".into(),
            ));
        }
        match (self.stage1, &self.steering) {
            (Stage1::RidgePlusSteer, None) => {
                return Err(Error::Config(
                    "ridge_plus_steer needs a steering vector and alpha".into(),
                ))
            }
            (Stage1::RidgePlusSteer, Some(s)) if !s.alpha.is_finite() => {
                return Err(Error::Config("alpha must be finite".into()))
            }
            (Stage1::Raw | Stage1::RidgeMapped, Some(_)) => {
                return Err(Error::Config(
                    "steering is only valid with stage1 ridge_plus_steer".into(),
                ))
            }
            _ => {}
        }
        if self.stage2 != Stage2::None && !has_lookup {
            return Err(Error::Config(
                "stage2 reranking needs a phrase lookup".into(),
            ));
        }
        if self.stage2 == Stage2::Fgw {
            self.fw.validate()?;
        }
        Ok(())
    }
}

/// Stage-1 query transform: raw, mapped, or mapped then steered.
pub fn transform_query(
    q: &[f64],
    config: &PipelineConfig,
    mapper: Option<&RidgeMapper>,
) -> Result<Vec<f64>> {
    match config.stage1 {
        Stage1::Raw => Ok(q.to_vec()),
        Stage1::RidgeMapped | Stage1::RidgePlusSteer => {
            let mapper = mapper.ok_or_else(|| Error::Config("missing mapper".into()))?;
            let mapped = normalized(&apply_mapper(mapper, q)?)
                .map_err(|_| Error::Degenerate("mapped query is zero".into()))?;
            match (&config.stage1, &config.steering) {
                (Stage1::RidgePlusSteer, Some(s)) => apply_steering(&mapped, &s.vector, s.alpha),
                _ => Ok(mapped),
            }
        }
    }
}

/// Runs both stages for every query. Output order follows `queries`.
pub fn run_pipeline(
    queries: &Corpus,
    corpus: &Corpus,
    config: &PipelineConfig,
    mapper: Option<&RidgeMapper>,
    phrase_lookup: Option<&PhraseLookup>,
) -> Result<Vec<RankedList>> {
    config.validate(mapper.is_some(), phrase_lookup.is_some())?;
    if corpus.is_empty() {
        return Err(Error::Validation("corpus is empty".into()));
    }
    let index = CosineIndex::new(corpus)?;
    (0..queries.len())
        .into_par_iter()
        .map(|i| {
            let item = &queries.items()[i];
            let q = transform_query(&queries.embeddings().row_f64(i), config, mapper)?;
            let list = index.retrieve(&item.id, &q, config.k)?;
            match config.stage2 {
                Stage2::None => Ok(list),
                stage2 => {
                    let lookup = phrase_lookup.expect("validated");
                    rerank_one(&list, item, corpus, lookup, stage2, config)
                }
            }
        })
        .collect()
}

fn rerank_one(
    list: &RankedList,
    query: &ItemRecord,
    corpus: &Corpus,
    lookup: &PhraseLookup,
    stage2: Stage2,
    config: &PipelineConfig,
) -> Result<RankedList> {
    let shortlist = Shortlist::from_list(list, config.k);
    let query_set = build_per_object_set(query, lookup)?;
    let mut sets = HashMap::with_capacity(shortlist.entries.len());
    for e in &shortlist.entries {
        let item = corpus
            .get(&e.item_id)
            .ok_or_else(|| Error::UnknownId(e.item_id.clone()))?;
        sets.insert(e.item_id.clone(), build_per_object_set(item, lookup)?);
    }
    match stage2 {
        Stage2::Hungarian => {
            rerank_hungarian(&shortlist, &query_set, &sets, config.hungarian_tiebreak)
        }
        Stage2::Fgw => rerank_fgw(&shortlist, &query_set, &sets, &config.fw),
        Stage2::None => Ok(list.clone()),
    }
}

/// Retrieval with a multi-object query collapsed by `strategy`.
///
/// `average` merges the per-object vectors into one query; `min` and
/// `softmin` score each item by aggregating its per-object cosines.
pub fn merged_retrieve(
    query_set: &PerObjectSet,
    index: &CosineIndex,
    k: usize,
    strategy: MergeStrategy,
) -> Result<RankedList> {
    match strategy {
        MergeStrategy::Average => {
            let q = merge_average(&query_set.vectors)?;
            index.retrieve(&query_set.owner_id, &q, k)
        }
        MergeStrategy::Min | MergeStrategy::Softmin { .. } => {
            strategy.validate()?;
            let per_object: Vec<Vec<f64>> = query_set
                .vectors
                .iter()
                .map(|v| index.scores(v))
                .collect::<Result<_>>()?;
            let mut scores = Vec::with_capacity(index.len());
            let mut buf = vec![0.0; per_object.len()];
            for i in 0..index.len() {
                for (b, s) in buf.iter_mut().zip(&per_object) {
                    *b = s[i];
                }
                scores.push(aggregate_scores(&buf, strategy)?);
            }
            Ok(top_k(&query_set.owner_id, &index.ids, scores, k))
        }
    }
}

/// Merged retrieval for every query, using per-object phrase vectors.
pub fn run_merged(
    queries: &[ItemRecord],
    corpus: &Corpus,
    lookup: &PhraseLookup,
    k: usize,
    strategy: MergeStrategy,
) -> Result<Vec<RankedList>> {
    let index = CosineIndex::new(corpus)?;
    queries
        .par_iter()
        .map(|q| merged_retrieve(&build_per_object_set(q, lookup)?, &index, k, strategy))
        .collect()
}

/// One line of a results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub query_id: String,
    pub rank: usize,
    pub item_id: String,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage2_cost: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub top1_only: bool,
}

pub fn results_to_string(lists: &[RankedList]) -> String {
    let mut out = String::new();
    for list in lists {
        for (i, e) in list.entries.iter().enumerate() {
            let rec = ResultRecord {
                query_id: list.query_id.clone(),
                rank: i + 1,
                item_id: e.item_id.clone(),
                score: e.score,
                stage2_cost: e.stage2_cost,
                warnings: e.warnings.clone(),
                top1_only: list.top1_only,
            };
            out.push_str(&serde_json::to_string(&rec).expect("records serialize"));
            out.push('\n');
        }
    }
    out
}

/// Groups consecutive records by query id; ranks must run 1, 2, ...
pub fn parse_results(text: &str) -> Result<Vec<RankedList>> {
    let mut lists: Vec<RankedList> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: ResultRecord = serde_json::from_str(line).map_err(|e| Error::MalformedRecord {
            line: i + 1,
            message: e.to_string(),
        })?;
        let start_new = lists
            .last()
            .is_none_or(|l| l.query_id != rec.query_id);
        if start_new {
            if lists.iter().any(|l| l.query_id == rec.query_id) {
                return Err(Error::MalformedRecord {
                    line: i + 1,
                    message: format!("records for query {:?} are not contiguous", rec.query_id),
                });
            }
            lists.push(RankedList {
                query_id: rec.query_id.clone(),
                entries: Vec::new(),
                top1_only: rec.top1_only,
            });
        }
        let list = lists.last_mut().expect("just pushed");
        if rec.rank != list.entries.len() + 1 {
            return Err(Error::MalformedRecord {
                line: i + 1,
                message: format!("expected rank {}, found {}", list.entries.len() + 1, rec.rank),
            });
        }
        list.entries.push(RankedEntry {
            item_id: rec.item_id,
            score: rec.score,
            stage2_cost: rec.stage2_cost,
            warnings: rec.warnings,
        });
    }
    Ok(lists)
}

pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<RankedList>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_results(&text)
}

pub fn write_results(lists: &[RankedList], path: impl AsRef<Path>) -> Result<()> {
    store::write_atomic(path.as_ref(), results_to_string(lists).as_bytes())
}
