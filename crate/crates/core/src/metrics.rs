//! Recall@K, CAS, CAS-noun and nDCG@K over ranked lists.
//!
//! Means over queries use compensated summation so the result does not depend
//! on accumulation order.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::compensated_mean;
use crate::retrieval::RankedList;
use crate::shapes::{heuristic_relevance, heuristic_similarity, Composition};
use crate::store::{self, ItemRecord, ObjectAnnotation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradeKind {
    /// Integers 0..=4.
    Graded,
    /// Real values in [0, 1].
    Continuous,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceTable {
    kind: GradeKind,
    entries: HashMap<String, HashMap<String, f64>>,
}

impl RelevanceTable {
    pub fn new(kind: GradeKind) -> Self {
        RelevanceTable {
            kind,
            entries: HashMap::new(),
        }
    }

    pub fn kind(&self) -> GradeKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(HashMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, query_id: &str, item_id: &str, value: f64) -> Result<()> {
        let ok = match self.kind {
            GradeKind::Graded => (0.0..=4.0).contains(&value) && value.fract() == 0.0,
            GradeKind::Continuous => (0.0..=1.0).contains(&value),
        };
        if !ok {
            return Err(Error::Validation(format!(
                "relevance {value} for ({query_id}, {item_id}) is out of range for {:?}",
                self.kind
            )));
        }
        self.entries
            .entry(query_id.to_string())
            .or_default()
            .insert(item_id.to_string(), value);
        Ok(())
    }

    pub fn get(&self, query_id: &str, item_id: &str) -> Option<f64> {
        self.entries.get(query_id)?.get(item_id).copied()
    }

    fn sorted_entries(&self) -> Vec<(&str, &str, f64)> {
        let mut v: Vec<_> = self
            .entries
            .iter()
            .flat_map(|(q, m)| m.iter().map(move |(i, v)| (q.as_str(), i.as_str(), *v)))
            .collect();
        v.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceRecord {
    pub query_id: String,
    pub item_id: String,
    pub value: f64,
    pub kind: GradeKind,
}

/// Sorted by (query_id, item_id) so output is stable.
pub fn relevance_to_string(table: &RelevanceTable) -> String {
    let mut out = String::new();
    for (q, i, v) in table.sorted_entries() {
        let rec = RelevanceRecord {
            query_id: q.to_string(),
            item_id: i.to_string(),
            value: v,
            kind: table.kind,
        };
        out.push_str(&serde_json::to_string(&rec).expect("records serialize"));
        out.push('\n');
    }
    out
}

/// Parses a relevance file. All lines must share one kind; an empty file
/// yields an empty table of `default_kind`.
pub fn parse_relevance(text: &str, default_kind: GradeKind) -> Result<RelevanceTable> {
    let mut table: Option<RelevanceTable> = None;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: RelevanceRecord =
            serde_json::from_str(line).map_err(|e| Error::MalformedRecord {
                line: i + 1,
                message: e.to_string(),
            })?;
        let t = table.get_or_insert_with(|| RelevanceTable::new(rec.kind));
        if t.kind != rec.kind {
            return Err(Error::MalformedRecord {
                line: i + 1,
                message: "mixed relevance kinds in one file".into(),
            });
        }
        t.insert(&rec.query_id, &rec.item_id, rec.value)
            .map_err(|e| Error::MalformedRecord {
                line: i + 1,
                message: e.to_string(),
            })?;
    }
    Ok(table.unwrap_or_else(|| RelevanceTable::new(default_kind)))
}

pub fn read_relevance(path: impl AsRef<Path>, default_kind: GradeKind) -> Result<RelevanceTable> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_relevance(&text, default_kind)
}

pub fn write_relevance(table: &RelevanceTable, path: impl AsRef<Path>) -> Result<()> {
    store::write_atomic(path.as_ref(), relevance_to_string(table).as_bytes())
}

/// Target of a synonym-aware positive: the noun plus acceptable attributes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynonymTarget {
    pub noun: String,
    pub synonyms: Vec<String>,
}

/// Decides which retrieved items count as positives for Recall@K.
#[derive(Debug, Clone)]
pub enum PositivesPredicate {
    /// Explicit positive ids per query.
    ListedIds(HashMap<String, HashSet<String>>),
    /// Positive iff the item caption equals the query caption.
    ExactCaption {
        queries: HashMap<String, String>,
        items: HashMap<String, String>,
    },
    /// Positive iff the item composition equals the query composition as a multiset.
    SymbolicMatch {
        queries: HashMap<String, Composition>,
        items: HashMap<String, Composition>,
    },
    /// Positive iff the item has an object with the target noun and any of
    /// the target's synonym attributes.
    SynonymSet {
        targets: HashMap<String, SynonymTarget>,
        items: HashMap<String, Vec<ObjectAnnotation>>,
    },
}

impl PositivesPredicate {
    pub fn exact_caption(queries: &[ItemRecord], items: &[ItemRecord]) -> Self {
        PositivesPredicate::ExactCaption {
            queries: queries
                .iter()
                .map(|q| (q.id.clone(), q.caption.clone()))
                .collect(),
            items: items
                .iter()
                .map(|i| (i.id.clone(), i.caption.clone()))
                .collect(),
        }
    }

    /// Whether any item in the predicate's universe is a positive for `query_id`.
    pub fn has_positives(&self, query_id: &str) -> bool {
        match self {
            PositivesPredicate::ListedIds(m) => m.get(query_id).is_some_and(|s| !s.is_empty()),
            PositivesPredicate::ExactCaption { queries, items } => queries
                .get(query_id)
                .is_some_and(|c| items.values().any(|ic| ic == c)),
            PositivesPredicate::SymbolicMatch { queries, items } => queries
                .get(query_id)
                .is_some_and(|c| items.values().any(|ic| ic == c)),
            PositivesPredicate::SynonymSet { targets, items } => {
                targets.get(query_id).is_some_and(|t| {
                    items.values().any(|objs| synonym_hit(t, objs))
                })
            }
        }
    }

    pub fn is_positive(&self, query_id: &str, item_id: &str) -> bool {
        match self {
            PositivesPredicate::ListedIds(m) => {
                m.get(query_id).is_some_and(|s| s.contains(item_id))
            }
            PositivesPredicate::ExactCaption { queries, items } => {
                matches!((queries.get(query_id), items.get(item_id)), (Some(a), Some(b)) if a == b)
            }
            PositivesPredicate::SymbolicMatch { queries, items } => {
                matches!((queries.get(query_id), items.get(item_id)), (Some(a), Some(b)) if a == b)
            }
            PositivesPredicate::SynonymSet { targets, items } => {
                match (targets.get(query_id), items.get(item_id)) {
                    (Some(t), Some(objs)) => synonym_hit(t, objs),
                    _ => false,
                }
            }
        }
    }
}

fn synonym_hit(target: &SynonymTarget, objects: &[ObjectAnnotation]) -> bool {
    objects.iter().any(|o| {
        o.noun == target.noun && o.attributes.iter().any(|a| target.synonyms.contains(a))
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Averaged {
    pub value: f64,
    /// Queries that contributed.
    pub evaluated: usize,
    /// Queries skipped (no positives, or nothing retrieved).
    pub excluded: usize,
    /// (query, item) pairs absent from the relevance table, scored as 0.
    pub missing: usize,
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Config("K must be positive".into()));
    }
    Ok(())
}

fn finish(values: Vec<f64>, excluded: usize, missing: usize) -> Result<Averaged> {
    let value = compensated_mean(&values)
        .ok_or_else(|| Error::Undefined("no query could be evaluated".into()))?;
    Ok(Averaged {
        value,
        evaluated: values.len(),
        excluded,
        missing,
    })
}

/// Fraction of queries with at least one positive in the top `k`.
pub fn recall_at_k(
    results: &[RankedList],
    positives: &PositivesPredicate,
    k: usize,
) -> Result<Averaged> {
    check_k(k)?;
    if results.is_empty() {
        return Err(Error::Validation("no results to evaluate".into()));
    }
    let mut hits = Vec::with_capacity(results.len());
    let mut excluded = 0;
    for list in results {
        if !positives.has_positives(&list.query_id) {
            excluded += 1;
            continue;
        }
        let hit = list
            .ids()
            .take(k)
            .any(|id| positives.is_positive(&list.query_id, id));
        hits.push(if hit { 1.0 } else { 0.0 });
    }
    finish(hits, excluded, 0)
}

/// Mean over queries of the mean similarity of the top `min(k, len)` items.
pub fn cas(results: &[RankedList], relevance: &RelevanceTable, k: usize) -> Result<Averaged> {
    check_k(k)?;
    let mut values = Vec::with_capacity(results.len());
    let (mut excluded, mut missing) = (0, 0);
    for list in results {
        if list.is_empty() {
            excluded += 1;
            continue;
        }
        let sims: Vec<f64> = list
            .ids()
            .take(k)
            .map(|id| {
                relevance.get(&list.query_id, id).unwrap_or_else(|| {
                    missing += 1;
                    0.0
                })
            })
            .collect();
        values.push(compensated_mean(&sims).expect("nonempty"));
    }
    finish(values, excluded, missing)
}

/// An object as a verbatim (noun, ordered attributes) tuple.
pub type ObjectTuple = (String, Vec<String>);

pub fn object_tuple(o: &ObjectAnnotation) -> ObjectTuple {
    (o.noun.clone(), o.attributes.clone())
}

/// Tuples of every item, keyed by id.
pub fn item_tuples(items: &[ItemRecord]) -> HashMap<String, HashSet<ObjectTuple>> {
    items
        .iter()
        .map(|it| (it.id.clone(), it.objects.iter().map(object_tuple).collect()))
        .collect()
}

/// Query tuples in annotation order, keyed by id.
pub fn query_tuples(queries: &[ItemRecord]) -> HashMap<String, Vec<ObjectTuple>> {
    queries
        .iter()
        .map(|q| (q.id.clone(), q.objects.iter().map(object_tuple).collect()))
        .collect()
}

fn tuple_cas(
    results: &[RankedList],
    query_objects: &HashMap<String, Vec<ObjectTuple>>,
    item_tuples: &HashMap<String, HashSet<ObjectTuple>>,
    k: usize,
    per_image: impl Fn(&[ObjectTuple], &HashSet<ObjectTuple>) -> f64,
) -> Result<Averaged> {
    check_k(k)?;
    let mut values = Vec::with_capacity(results.len());
    let mut excluded = 0;
    for list in results {
        let q = query_objects
            .get(&list.query_id)
            .ok_or_else(|| Error::UnknownId(list.query_id.clone()))?;
        if q.is_empty() || list.is_empty() {
            excluded += 1;
            continue;
        }
        let scores = list
            .ids()
            .take(k)
            .map(|id| {
                item_tuples
                    .get(id)
                    .map(|t| per_image(q, t))
                    .ok_or_else(|| Error::UnknownId(id.to_string()))
            })
            .collect::<Result<Vec<f64>>>()?;
        values.push(compensated_mean(&scores).expect("nonempty"));
    }
    finish(values, excluded, 0)
}

/// Per image: fraction of query tuples present verbatim on a single object.
pub fn cas_noun(
    results: &[RankedList],
    query_objects: &HashMap<String, Vec<ObjectTuple>>,
    item_tuples: &HashMap<String, HashSet<ObjectTuple>>,
    k: usize,
) -> Result<Averaged> {
    tuple_cas(results, query_objects, item_tuples, k, |q, t| {
        q.iter().filter(|x| t.contains(*x)).count() as f64 / q.len() as f64
    })
}

/// Attribute-level counterpart of [`cas_noun`]: per query tuple, the fraction
/// of its noun and attributes found anywhere in the image, averaged over tuples.
pub fn cas_attribute(
    results: &[RankedList],
    query_objects: &HashMap<String, Vec<ObjectTuple>>,
    item_tuples: &HashMap<String, HashSet<ObjectTuple>>,
    k: usize,
) -> Result<Averaged> {
    tuple_cas(results, query_objects, item_tuples, k, |q, t| {
        let nouns: HashSet<&str> = t.iter().map(|(n, _)| n.as_str()).collect();
        let attrs: HashSet<&str> = t.iter().flat_map(|(_, a)| a.iter().map(String::as_str)).collect();
        let per_tuple: Vec<f64> = q
            .iter()
            .map(|(n, attributes)| {
                let hits = usize::from(nouns.contains(n.as_str()))
                    + attributes.iter().filter(|a| attrs.contains(a.as_str())).count();
                hits as f64 / (1 + attributes.len()) as f64
            })
            .collect();
        compensated_mean(&per_tuple).expect("nonempty")
    })
}

fn dcg(grades: &[f64]) -> f64 {
    grades
        .iter()
        .enumerate()
        .map(|(i, g)| g / ((i + 2) as f64).log2())
        .sum()
}

/// nDCG of one retrieved grade sequence; 0 when the ideal DCG is 0.
pub fn ndcg_of(grades: &[f64]) -> f64 {
    let mut ideal = grades.to_vec();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let idcg = dcg(&ideal);
    if idcg == 0.0 {
        0.0
    } else {
        dcg(grades) / idcg
    }
}

/// Mean nDCG@K, normalizing by the best ordering of the same retrieved items.
pub fn ndcg_at_k(results: &[RankedList], relevance: &RelevanceTable, k: usize) -> Result<Averaged> {
    check_k(k)?;
    let mut values = Vec::with_capacity(results.len());
    let (mut excluded, mut missing) = (0, 0);
    for list in results {
        if list.is_empty() {
            excluded += 1;
            continue;
        }
        let grades: Vec<f64> = list
            .ids()
            .take(k)
            .map(|id| {
                relevance.get(&list.query_id, id).unwrap_or_else(|| {
                    missing += 1;
                    0.0
                })
            })
            .collect();
        values.push(ndcg_of(&grades));
    }
    finish(values, excluded, missing)
}

fn heuristic_table(
    results: &[RankedList],
    queries: &HashMap<String, Composition>,
    items: &HashMap<String, Composition>,
    kind: GradeKind,
) -> Result<RelevanceTable> {
    let mut table = RelevanceTable::new(kind);
    for list in results {
        let q = queries
            .get(&list.query_id)
            .ok_or_else(|| Error::UnknownId(list.query_id.clone()))?;
        for id in list.ids() {
            let it = items.get(id).ok_or_else(|| Error::UnknownId(id.to_string()))?;
            let v = match kind {
                GradeKind::Graded => f64::from(heuristic_relevance(q, it)),
                GradeKind::Continuous => heuristic_similarity(q, it),
            };
            table.insert(&list.query_id, id, v)?;
        }
    }
    Ok(table)
}

/// Graded 0-4 relevance for every retrieved (query, item) pair.
pub fn build_heuristic_relevance(
    results: &[RankedList],
    queries: &HashMap<String, Composition>,
    items: &HashMap<String, Composition>,
) -> Result<RelevanceTable> {
    heuristic_table(results, queries, items, GradeKind::Graded)
}

/// Overlap fraction in [0, 1] for every retrieved pair, for CAS.
pub fn build_heuristic_similarity(
    results: &[RankedList],
    queries: &HashMap<String, Composition>,
    items: &HashMap<String, Composition>,
) -> Result<RelevanceTable> {
    heuristic_table(results, queries, items, GradeKind::Continuous)
}

/// Everything [`evaluate`] may use; absent inputs skip their metric.
#[derive(Debug, Clone, Copy, Default)]
pub struct EvalInputs<'a> {
    pub positives: Option<&'a PositivesPredicate>,
    pub graded: Option<&'a RelevanceTable>,
    pub continuous: Option<&'a RelevanceTable>,
    pub query_objects: Option<&'a HashMap<String, Vec<ObjectTuple>>>,
    pub item_tuples: Option<&'a HashMap<String, HashSet<ObjectTuple>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSpec {
    pub ks: Vec<usize>,
    pub cas_k: usize,
}

impl Default for EvalSpec {
    fn default() -> Self {
        EvalSpec {
            ks: vec![1, 5, 10],
            cas_k: 10,
        }
    }
}

pub const IDCG_ZERO_CONVENTION: &str = "ndcg is 0 when the ideal DCG is 0";

/// Values keyed by K. `None` means the metric is not reported at that K
/// (for instance Hungarian lists beyond rank 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_queries: usize,
    pub recall: BTreeMap<usize, Option<f64>>,
    pub ndcg: BTreeMap<usize, Option<f64>>,
    pub cas: Option<f64>,
    pub cas_noun: Option<f64>,
    pub excluded_queries: usize,
    pub missing_relevance: usize,
    pub top1_only: bool,
    pub ndcg_convention: String,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Computes every metric the inputs allow.
pub fn evaluate(results: &[RankedList], inputs: &EvalInputs, spec: &EvalSpec) -> Result<MetricsReport> {
    if results.is_empty() {
        return Err(Error::Validation("no results to evaluate".into()));
    }
    let top1_only = results.iter().any(|l| l.top1_only);
    let mut report = MetricsReport {
        n_queries: results.len(),
        recall: BTreeMap::new(),
        ndcg: BTreeMap::new(),
        cas: None,
        cas_noun: None,
        excluded_queries: 0,
        missing_relevance: 0,
        top1_only,
        ndcg_convention: IDCG_ZERO_CONVENTION.to_string(),
    };
    let meaningful = |k: usize| !top1_only || k == 1;
    for &k in &spec.ks {
        if let Some(p) = inputs.positives {
            let v = if meaningful(k) {
                let r = recall_at_k(results, p, k)?;
                report.excluded_queries = report.excluded_queries.max(r.excluded);
                Some(r.value)
            } else {
                None
            };
            report.recall.insert(k, v);
        }
        if let Some(t) = inputs.graded {
            let v = if meaningful(k) {
                let r = ndcg_at_k(results, t, k)?;
                report.missing_relevance += r.missing;
                Some(r.value)
            } else {
                None
            };
            report.ndcg.insert(k, v);
        }
    }
    let window = meaningful(spec.cas_k);
    if let (Some(t), true) = (inputs.continuous, window) {
        let r = cas(results, t, spec.cas_k)?;
        report.missing_relevance += r.missing;
        report.cas = Some(r.value);
    }
    if let (Some(q), Some(i), true) = (inputs.query_objects, inputs.item_tuples, window) {
        report.cas_noun = Some(cas_noun(results, q, i, spec.cas_k)?.value);
    }
    Ok(report)
}
