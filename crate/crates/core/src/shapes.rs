//! Synthetic Shapes: six shapes in seven colors, composed three at a time.
//!
//! Everything here is deterministic. Compositions are enumerated in caption
//! order, SVG output is byte-stable, and the synthetic embedder derives every
//! random draw from a single seed.

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use itertools::Itertools;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::normalized;
use crate::retrieval::RankedList;
use crate::store::{Corpus, EmbeddingMatrix, ItemRecord, ObjectAnnotation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Shape {
    Circle,
    Square,
    Triangle,
    Pentagon,
    Hexagon,
    Star,
}

impl Shape {
    pub const ALL: [Shape; 6] = [
        Shape::Circle,
        Shape::Square,
        Shape::Triangle,
        Shape::Pentagon,
        Shape::Hexagon,
        Shape::Star,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Shape::Circle => "circle",
            Shape::Square => "square",
            Shape::Triangle => "triangle",
            Shape::Pentagon => "pentagon",
            Shape::Hexagon => "hexagon",
            Shape::Star => "star",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl FromStr for Shape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Shape::ALL
            .into_iter()
            .find(|sh| sh.name() == s)
            .ok_or_else(|| Error::Validation(format!("unknown shape {s:?}")))
    }
}

/// The seven-color palette. The example caption colors (blue, green, red)
/// are included; the rest are fixed here.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
    Purple,
    Orange,
    Cyan,
}

impl Color {
    pub const ALL: [Color; 7] = [
        Color::Red,
        Color::Green,
        Color::Blue,
        Color::Yellow,
        Color::Purple,
        Color::Orange,
        Color::Cyan,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
            Color::Yellow => "yellow",
            Color::Purple => "purple",
            Color::Orange => "orange",
            Color::Cyan => "cyan",
        }
    }
}

impl FromStr for Color {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Color::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Validation(format!("unknown color {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Primitive {
    pub color: Color,
    pub shape: Shape,
}

impl Primitive {
    pub fn new(color: Color, shape: Shape) -> Self {
        Primitive { color, shape }
    }

    /// `"<color> <shape>"`.
    pub fn label(&self) -> String {
        format!("{} {}", self.color.name(), self.shape.name())
    }

    /// Dense index in `0..42`, color-major.
    pub fn index(&self) -> usize {
        self.color as usize * Shape::ALL.len() + self.shape.index()
    }

    pub fn annotation(&self) -> ObjectAnnotation {
        ObjectAnnotation::new(self.shape.name(), vec![self.color.name().to_string()])
            .with_kinds(vec!["color".to_string()])
    }
}

impl fmt::Display for Primitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.color.name(), self.shape.name())
    }
}

impl FromStr for Primitive {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (color, shape) = s
            .trim()
            .split_once(' ')
            .ok_or_else(|| Error::Validation(format!("bad primitive {s:?}")))?;
        Ok(Primitive::new(color.parse()?, shape.parse()?))
    }
}

/// All 42 primitives, sorted by label.
pub fn all_primitives() -> Vec<Primitive> {
    let mut out: Vec<Primitive> = Color::ALL
        .into_iter()
        .flat_map(|c| Shape::ALL.into_iter().map(move |s| Primitive::new(c, s)))
        .collect();
    out.sort_by_key(|p| p.label());
    out
}

/// Sorted, comma-separated labels; duplicates are kept.
pub fn caption_of(primitives: &[Primitive]) -> Result<String> {
    if primitives.is_empty() {
        return Err(Error::Validation("caption of empty multiset".into()));
    }
    let mut labels: Vec<String> = primitives.iter().map(Primitive::label).collect();
    labels.sort();
    Ok(labels.join(", "))
}

/// A multiset of primitives, stored in caption order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Composition {
    primitives: Vec<Primitive>,
    caption: String,
}

impl Composition {
    pub fn new(mut primitives: Vec<Primitive>) -> Result<Self> {
        let caption = caption_of(&primitives)?;
        primitives.sort_by_key(|p| p.label());
        Ok(Composition {
            primitives,
            caption,
        })
    }

    /// Parses a caption such as `"blue circle, green star, red pentagon"`.
    pub fn parse(caption: &str) -> Result<Self> {
        let prims = caption
            .split(',')
            .map(str::parse)
            .collect::<Result<Vec<Primitive>>>()?;
        Composition::new(prims)
    }

    pub fn primitives(&self) -> &[Primitive] {
        &self.primitives
    }

    pub fn caption(&self) -> &str {
        &self.caption
    }

    pub fn arity(&self) -> usize {
        self.primitives.len()
    }

    pub fn annotations(&self) -> Vec<ObjectAnnotation> {
        self.primitives.iter().map(Primitive::annotation).collect()
    }

    pub fn to_record(&self, id: impl Into<String>) -> ItemRecord {
        ItemRecord {
            id: id.into(),
            caption: self.caption.clone(),
            objects: self.annotations(),
            split: None,
        }
    }

    /// Size of the multiset intersection with `other`.
    pub fn overlap(&self, other: &Composition) -> usize {
        let mut counts = [0usize; 42];
        for p in &other.primitives {
            counts[p.index()] += 1;
        }
        let mut hits = 0;
        for p in &self.primitives {
            if counts[p.index()] > 0 {
                counts[p.index()] -= 1;
                hits += 1;
            }
        }
        hits
    }
}

/// Every multiset of `arity` primitives, sorted by caption.
pub fn enumerate_compositions(arity: usize) -> Result<Vec<Composition>> {
    if arity == 0 {
        return Err(Error::Validation("arity must be at least 1".into()));
    }
    let prims = all_primitives();
    let mut out = prims
        .into_iter()
        .combinations_with_replacement(arity)
        .map(Composition::new)
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| a.caption.cmp(&b.caption));
    Ok(out)
}

/// Canvas edge length in pixels.
pub const CANVAS: f64 = 224.0;
/// Horizontal spacing between anchor points for up to three primitives.
pub const ANCHOR_SPACING: f64 = 72.0;
/// Circumradius of a primitive at the default spacing.
pub const PRIMITIVE_RADIUS: f64 = 30.0;
const STAR_INNER_RATIO: f64 = 0.4;

/// Anchor centers for `n` primitives on one horizontal row.
///
/// For three primitives these are (40, 112), (112, 112), (184, 112).
pub fn layout(n: usize) -> Vec<(f64, f64, f64)> {
    let spacing = ANCHOR_SPACING.min(CANVAS / n as f64);
    let radius = PRIMITIVE_RADIUS.min(spacing * 5.0 / 12.0);
    let mid = CANVAS / 2.0;
    (0..n)
        .map(|i| {
            let offset = i as f64 - (n as f64 - 1.0) / 2.0;
            (mid + offset * spacing, mid, radius)
        })
        .collect()
}

fn polygon_points(cx: f64, cy: f64, r: f64, shape: Shape) -> String {
    let vertices: Vec<(f64, f64)> = match shape {
        Shape::Triangle | Shape::Pentagon | Shape::Hexagon => {
            let k = match shape {
                Shape::Triangle => 3,
                Shape::Pentagon => 5,
                _ => 6,
            };
            (0..k)
                .map(|i| {
                    let a = -std::f64::consts::FRAC_PI_2
                        + 2.0 * std::f64::consts::PI * i as f64 / k as f64;
                    (cx + r * a.cos(), cy + r * a.sin())
                })
                .collect()
        }
        Shape::Star => (0..10)
            .map(|i| {
                let a = -std::f64::consts::FRAC_PI_2 + std::f64::consts::PI * i as f64 / 5.0;
                let rr = if i % 2 == 0 { r } else { r * STAR_INNER_RATIO };
                (cx + rr * a.cos(), cy + rr * a.sin())
            })
            .collect(),
        Shape::Circle | Shape::Square => unreachable!("not a polygon"),
    };
    vertices
        .iter()
        .map(|(x, y)| format!("{x:.2},{y:.2}"))
        .join(" ")
}

/// Renders the composition as an SVG document on a white 224x224 canvas.
///
/// The document contains one drawable element per primitive; the white
/// background is set through the root `style` attribute.
pub fn emit_svg(composition: &Composition) -> String {
    let mut out = String::new();
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="224" height="224" viewBox="0 0 224 224" style="background-color:#ffffff">"#
    )
    .unwrap();
    let anchors = layout(composition.arity());
    for (p, &(cx, cy, r)) in composition.primitives.iter().zip(&anchors) {
        let fill = p.color.name();
        match p.shape {
            Shape::Circle => {
                writeln!(
                    out,
                    r#"  <circle cx="{cx:.2}" cy="{cy:.2}" r="{r:.2}" fill="{fill}"/>"#
                )
                .unwrap();
            }
            Shape::Square => {
                let side = r * std::f64::consts::SQRT_2;
                writeln!(
                    out,
                    r#"  <rect x="{:.2}" y="{:.2}" width="{side:.2}" height="{side:.2}" fill="{fill}"/>"#,
                    cx - side / 2.0,
                    cy - side / 2.0
                )
                .unwrap();
            }
            shape => {
                writeln!(
                    out,
                    r#"  <polygon points="{}" fill="{fill}"/>"#,
                    polygon_points(cx, cy, r, shape)
                )
                .unwrap();
            }
        }
    }
    out.push_str("</svg>\n");
    out
}

/// Graded relevance in `0..=4` from multiset overlap, rounding half to even.
pub fn heuristic_relevance(query: &Composition, item: &Composition) -> u8 {
    let frac = query.overlap(item) as f64 / query.arity() as f64;
    (frac * 4.0).round_ties_even() as u8
}

/// Continuous counterpart of [`heuristic_relevance`]: overlap fraction in `[0, 1]`.
pub fn heuristic_similarity(query: &Composition, item: &Composition) -> f64 {
    query.overlap(item) as f64 / query.arity() as f64
}

/// Parses every caption in a corpus into a composition keyed by item id.
pub fn compositions_by_id(corpus: &Corpus) -> Result<HashMap<String, Composition>> {
    corpus
        .items()
        .iter()
        .map(|it| Ok((it.id.clone(), Composition::parse(&it.caption)?)))
        .collect()
}

/// 6x6 counts of color-preserving shape substitutions at rank 1.
///
/// For each query, primitives not matched exactly by the top-1 item are
/// compared with the item's unmatched primitives; every distinct shape
/// `s_j != s_i` appearing there in the same color increments `(s_i, s_j)`.
pub fn substitution_matrix(
    results: &[RankedList],
    items: &HashMap<String, Composition>,
    queries: &HashMap<String, Composition>,
) -> Result<[[u64; 6]; 6]> {
    let mut counts = [[0u64; 6]; 6];
    for list in results {
        let Some(top) = list.entries.first() else {
            continue;
        };
        let query = queries
            .get(&list.query_id)
            .ok_or_else(|| Error::UnknownId(list.query_id.clone()))?;
        let item = items
            .get(&top.item_id)
            .ok_or_else(|| Error::UnknownId(top.item_id.clone()))?;

        let mut item_left = [0usize; 42];
        for p in item.primitives() {
            item_left[p.index()] += 1;
        }
        let mut query_left = Vec::new();
        for p in query.primitives() {
            if item_left[p.index()] > 0 {
                item_left[p.index()] -= 1;
            } else {
                query_left.push(*p);
            }
        }
        for q in query_left {
            for s in Shape::ALL {
                if s != q.shape && item_left[Primitive::new(q.color, s).index()] > 0 {
                    counts[q.shape.index()][s.index()] += 1;
                }
            }
        }
    }
    Ok(counts)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthEmbedConfig {
    pub seed: u64,
    pub dim: usize,
    pub noise_sigma: f64,
    pub modality_rotation: bool,
}

impl Default for SynthEmbedConfig {
    fn default() -> Self {
        SynthEmbedConfig {
            seed: 0,
            dim: 64,
            noise_sigma: 0.0,
            modality_rotation: false,
        }
    }
}

/// Seeded stand-in for a dual encoder.
///
/// Each primitive gets a random unit concept vector. An image embedding is
/// the normalized sum of its concept vectors plus Gaussian noise; a text
/// embedding applies a fixed random rotation to the sum first (when enabled).
/// Noise for a given (modality, caption) pair is a pure function of the seed.
#[derive(Debug, Clone)]
pub struct SynthEmbedder {
    config: SynthEmbedConfig,
    concepts: Vec<Vec<f64>>,
    rotation: Option<DMatrix<f64>>,
}

const TEXT_STREAM: u64 = 0x7465_7874;
const IMAGE_STREAM: u64 = 0x696d_6167;
const ROTATION_STREAM: u64 = 0x726f_7461;

fn mix(mut h: u64, bytes: &[u8]) -> u64 {
    // FNV-1a followed by a splitmix64 finalizer
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h ^= h >> 30;
    h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h ^= h >> 27;
    h = h.wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

impl SynthEmbedder {
    pub fn new(config: SynthEmbedConfig) -> Result<Self> {
        if config.dim < 2 {
            return Err(Error::Config("synthetic embedding dim must be >= 2".into()));
        }
        if !(config.noise_sigma >= 0.0 && config.noise_sigma.is_finite()) {
            return Err(Error::Config("noise_sigma must be a nonnegative number".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut concepts = vec![Vec::new(); 42];
        for color in Color::ALL {
            for shape in Shape::ALL {
                let p = Primitive::new(color, shape);
                concepts[p.index()] = normalized(&gaussian_vec(&mut rng, config.dim))?;
            }
        }
        let rotation = config.modality_rotation.then(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ ROTATION_STREAM);
            random_orthogonal(&mut rng, config.dim)
        });
        Ok(SynthEmbedder {
            config,
            concepts,
            rotation,
        })
    }

    pub fn config(&self) -> &SynthEmbedConfig {
        &self.config
    }

    pub fn concept(&self, p: Primitive) -> &[f64] {
        &self.concepts[p.index()]
    }

    pub fn rotation(&self) -> Option<&DMatrix<f64>> {
        self.rotation.as_ref()
    }

    fn concept_sum(&self, composition: &Composition) -> Vec<f64> {
        let mut sum = vec![0.0; self.config.dim];
        for p in composition.primitives() {
            for (s, c) in sum.iter_mut().zip(self.concept(*p)) {
                *s += c;
            }
        }
        sum
    }

    fn finish(&self, mut v: Vec<f64>, stream: u64, caption: &str) -> Vec<f64> {
        if self.config.noise_sigma > 0.0 {
            let seed = mix(self.config.seed ^ stream, caption.as_bytes());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for x in v.iter_mut() {
                let g: f64 = rng.sample(StandardNormal);
                *x += self.config.noise_sigma * g;
            }
        }
        // a zero sum needs an exact cancellation of random unit vectors
        normalized(&v).expect("synthetic embedding is nonzero")
    }

    pub fn embed_image(&self, composition: &Composition) -> Vec<f64> {
        self.finish(self.concept_sum(composition), IMAGE_STREAM, composition.caption())
    }

    pub fn embed_text(&self, composition: &Composition) -> Vec<f64> {
        let sum = self.concept_sum(composition);
        let rotated = match &self.rotation {
            Some(r) => (r * nalgebra::DVector::from_vec(sum)).data.into(),
            None => sum,
        };
        self.finish(rotated, TEXT_STREAM, composition.caption())
    }

    /// Text embedding of a single-primitive phrase such as `"red circle"`.
    pub fn embed_phrase(&self, p: Primitive) -> Vec<f64> {
        self.embed_text(&Composition::new(vec![p]).expect("nonempty"))
    }

    /// Phrase lookup covering all 42 primitive labels.
    pub fn phrase_lookup(&self) -> HashMap<String, Vec<f64>> {
        all_primitives()
            .into_iter()
            .map(|p| (p.label(), self.embed_phrase(p)))
            .collect()
    }
}

fn random_orthogonal(rng: &mut ChaCha8Rng, dim: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    // fix column signs so the factorization is unique
    for j in 0..dim {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Text and image embeddings for `compositions`, in input order.
pub fn synth_embed(
    compositions: &[Composition],
    config: &SynthEmbedConfig,
) -> Result<(EmbeddingMatrix, EmbeddingMatrix)> {
    let model = SynthEmbedder::new(*config)?;
    let text: Vec<Vec<f64>> = compositions.iter().map(|c| model.embed_text(c)).collect();
    let image: Vec<Vec<f64>> = compositions.iter().map(|c| model.embed_image(c)).collect();
    Ok((
        EmbeddingMatrix::from_rows_f64(&text, config.dim, true)?,
        EmbeddingMatrix::from_rows_f64(&image, config.dim, true)?,
    ))
}

/// Parameters for a sampled retrieval benchmark over the shapes universe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub seed: u64,
    pub arity: usize,
    pub n_items: usize,
    pub n_queries: usize,
    pub dim: usize,
    pub noise_sigma: f64,
    pub modality_rotation: bool,
}

/// A seeded corpus/query split with symbolic ground truth.
///
/// Items are a random subset of all compositions (in enumeration order),
/// embedded in the image modality; queries are a random subset of the items,
/// embedded in the text modality, so every query has exactly one positive.
#[derive(Debug, Clone)]
pub struct SyntheticBenchmark {
    pub queries: Corpus,
    pub corpus: Corpus,
    pub phrase_lookup: HashMap<String, Vec<f64>>,
    /// Query id to the id of its exact-match item.
    pub truth: HashMap<String, String>,
    pub query_compositions: HashMap<String, Composition>,
    pub item_compositions: HashMap<String, Composition>,
}

/// Item id of the composition at enumeration index `i`.
pub fn item_id(i: usize) -> String {
    format!("{i:05}")
}

/// Query id for the composition at enumeration index `i`.
pub fn query_id(i: usize) -> String {
    format!("q{i:05}")
}

/// A composition with its enumeration index.
pub type Indexed = (usize, Composition);

/// Seeded corpus and query subsets of the arity-`arity` universe.
///
/// Both lists are in enumeration order and hold (enumeration index,
/// composition). Queries are drawn from the items.
pub fn sample_split(
    seed: u64,
    arity: usize,
    n_items: usize,
    n_queries: usize,
) -> Result<(Vec<Indexed>, Vec<Indexed>)> {
    let all = enumerate_compositions(arity)?;
    if n_items == 0 || n_items > all.len() {
        return Err(Error::Config(format!(
            "n_items must be in 1..={}, got {n_items}",
            all.len()
        )));
    }
    if n_queries > n_items {
        return Err(Error::Config("n_queries cannot exceed n_items".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, all.len(), n_items).into_vec();
    picked.sort_unstable();
    let mut qpick = rand::seq::index::sample(&mut rng, picked.len(), n_queries).into_vec();
    qpick.sort_unstable();
    let queries = qpick
        .iter()
        .map(|&p| (picked[p], all[picked[p]].clone()))
        .collect();
    let items = picked
        .iter()
        .map(|&i| (i, all[i].clone()))
        .collect();
    Ok((items, queries))
}

impl SyntheticBenchmark {
    pub fn build(config: &BenchmarkConfig) -> Result<Self> {
        let (items, queries) =
            sample_split(config.seed, config.arity, config.n_items, config.n_queries)?;
        let model = SynthEmbedder::new(SynthEmbedConfig {
            seed: config.seed,
            dim: config.dim,
            noise_sigma: config.noise_sigma,
            modality_rotation: config.modality_rotation,
        })?;
        let records: Vec<ItemRecord> = items.iter().map(|(i, c)| c.to_record(item_id(*i))).collect();
        let image: Vec<Vec<f64>> = items.iter().map(|(_, c)| model.embed_image(c)).collect();
        let corpus = Corpus::new(
            crate::store::Modality::Image,
            records,
            EmbeddingMatrix::from_rows_f64(&image, config.dim, true)?,
        )?;

        let mut truth = HashMap::new();
        let mut qrecords = Vec::with_capacity(queries.len());
        let mut text = Vec::with_capacity(queries.len());
        let mut query_compositions = HashMap::new();
        for (i, c) in queries {
            let qid = query_id(i);
            qrecords.push(c.to_record(qid.clone()));
            text.push(model.embed_text(&c));
            truth.insert(qid.clone(), item_id(i));
            query_compositions.insert(qid, c);
        }
        let queries = Corpus::new(
            crate::store::Modality::Text,
            qrecords,
            EmbeddingMatrix::from_rows_f64(&text, config.dim, true)?,
        )?;
        let item_compositions = items.into_iter().map(|(i, c)| (item_id(i), c)).collect();
        Ok(SyntheticBenchmark {
            queries,
            corpus,
            phrase_lookup: model.phrase_lookup(),
            truth,
            query_compositions,
            item_compositions,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn comp(caption: &str) -> Composition {
        Composition::parse(caption).unwrap()
    }

    #[test]
    fn forty_two_primitives() {
        let prims = all_primitives();
        assert_eq!(prims.len(), 42);
        let labels: std::collections::HashSet<_> = prims.iter().map(|p| p.label()).collect();
        assert_eq!(labels.len(), 42);
    }

    #[test]
    fn example_caption() {
        let prims = vec![
            "red pentagon".parse().unwrap(),
            "blue circle".parse().unwrap(),
            "green star".parse().unwrap(),
        ];
        assert_eq!(
            caption_of(&prims).unwrap(),
            "blue circle, green star, red pentagon"
        );
        assert_eq!(
            caption_of(&["red circle".parse().unwrap()]).unwrap(),
            "red circle"
        );
        assert!(caption_of(&[]).is_err());
    }

    #[test]
    fn duplicates_are_kept() {
        let c = comp("red square, blue circle, blue circle");
        assert_eq!(c.caption(), "blue circle, blue circle, red square");
    }

    #[test]
    fn enumeration_counts() {
        assert_eq!(enumerate_compositions(1).unwrap().len(), 42);
        assert_eq!(enumerate_compositions(3).unwrap().len(), 13_244);
        assert!(enumerate_compositions(0).is_err());
    }

    #[test]
    fn enumeration_is_caption_sorted_and_unique() {
        let all = enumerate_compositions(2).unwrap();
        for w in all.windows(2) {
            assert!(w[0].caption() < w[1].caption());
        }
    }

    #[test]
    fn svg_has_three_drawables_and_is_stable() {
        let c = comp("red circle, red circle, red circle");
        let svg = emit_svg(&c);
        assert_eq!(svg.matches("<circle").count(), 3);
        assert_eq!(svg.matches(r#"fill="red""#).count(), 3);
        assert_eq!(svg, emit_svg(&c));

        let mixed = comp("blue square, green star, red pentagon");
        let svg = emit_svg(&mixed);
        let drawables = svg.matches("<circle").count()
            + svg.matches("<rect").count()
            + svg.matches("<polygon").count();
        assert_eq!(drawables, 3);
        assert!(svg.contains(r#"width="224" height="224""#));
    }

    #[test]
    fn layout_for_three_is_fixed() {
        let l = layout(3);
        assert_eq!(l[0], (40.0, 112.0, 30.0));
        assert_eq!(l[1], (112.0, 112.0, 30.0));
        assert_eq!(l[2], (184.0, 112.0, 30.0));
    }

    #[test]
    fn relevance_grades() {
        let q = comp("blue circle, green star, red pentagon");
        assert_eq!(heuristic_relevance(&q, &q), 4);
        assert_eq!(
            heuristic_relevance(&q, &comp("cyan hexagon, cyan hexagon, yellow square")),
            0
        );
        assert_eq!(
            heuristic_relevance(&q, &comp("blue circle, green star, red hexagon")),
            3
        );
        // one of three: round(4/3) = 1
        assert_eq!(
            heuristic_relevance(&q, &comp("blue circle, cyan star, red hexagon")),
            1
        );
    }

    #[test]
    fn relevance_ties_round_to_even() {
        // one of two: 2.0 exactly; one of eight would be 0.5 -> 0
        let q = comp("red circle, blue star");
        assert_eq!(heuristic_relevance(&q, &comp("red circle, red star")), 2);
        let q8 = Composition::new(vec!["red circle".parse().unwrap(); 8]).unwrap();
        let one = comp("red circle");
        assert_eq!(heuristic_relevance(&q8, &one), 0);
        // three of eight: 1.5 -> 2
        let three = Composition::new(vec!["red circle".parse().unwrap(); 3]).unwrap();
        assert_eq!(heuristic_relevance(&q8, &three), 2);
    }

    #[test]
    fn synth_embed_identity_without_noise_or_rotation() {
        let comps = enumerate_compositions(1).unwrap();
        let cfg = SynthEmbedConfig {
            seed: 7,
            dim: 16,
            noise_sigma: 0.0,
            modality_rotation: false,
        };
        let (t, i) = synth_embed(&comps, &cfg).unwrap();
        for (a, b) in t.values().iter().zip(i.values()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn synth_embed_is_seeded() {
        let comps = enumerate_compositions(2).unwrap()[..50].to_vec();
        let cfg = SynthEmbedConfig {
            seed: 11,
            dim: 32,
            noise_sigma: 0.3,
            modality_rotation: true,
        };
        let a = synth_embed(&comps, &cfg).unwrap();
        let b = synth_embed(&comps, &cfg).unwrap();
        assert_eq!(a, b);
        let other = synth_embed(&comps, &SynthEmbedConfig { seed: 12, ..cfg }).unwrap();
        assert_ne!(a.0, other.0);
    }

    #[test]
    fn rotation_is_orthogonal() {
        let model = SynthEmbedder::new(SynthEmbedConfig {
            seed: 3,
            dim: 8,
            noise_sigma: 0.0,
            modality_rotation: true,
        })
        .unwrap();
        let r = model.rotation().unwrap();
        let eye = r.transpose() * r;
        for i in 0..8 {
            for j in 0..8 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((eye[(i, j)] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn substitution_counts_pentagon_for_hexagon() {
        let q = comp("blue circle, green star, red pentagon");
        let got = comp("blue circle, green star, red hexagon");
        let queries = HashMap::from([("q".to_string(), q.clone())]);
        let items = HashMap::from([("a".to_string(), got), ("b".to_string(), q)]);
        let hit = RankedList::from_scores("q", vec![("a".into(), 1.0)]);
        let m = substitution_matrix(&[hit], &items, &queries).unwrap();
        assert_eq!(m[Shape::Pentagon.index()][Shape::Hexagon.index()], 1);
        assert_eq!(m.iter().flatten().sum::<u64>(), 1);

        let perfect = RankedList::from_scores("q", vec![("b".into(), 1.0)]);
        let m = substitution_matrix(&[perfect], &items, &queries).unwrap();
        assert!(m.iter().flatten().all(|&c| c == 0));

        let missing = RankedList::from_scores("q", vec![("zz".into(), 1.0)]);
        assert!(substitution_matrix(&[missing], &items, &queries).is_err());
    }
}
