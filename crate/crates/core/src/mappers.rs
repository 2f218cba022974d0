//! Ridge mapper, steering vectors, and the merge/aggregate strategies.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{compensated_mean, dot, norm, normalized};
use crate::store::{self, EmbeddingMatrix};

/// Linear map with bias, stored as a `(d_in + 1) x d_out` matrix whose last
/// row is the bias.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeMapper {
    d_in: usize,
    d_out: usize,
    lambda: f64,
    /// Row-major `(d_in + 1) x d_out`.
    weights: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MapperMeta {
    pub lambda: f64,
    pub d_in: usize,
    pub d_out: usize,
}

impl RidgeMapper {
    pub fn from_weights(d_in: usize, d_out: usize, lambda: f64, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != (d_in + 1) * d_out {
            return Err(Error::DimensionMismatch {
                expected: (d_in + 1) * d_out,
                got: weights.len(),
            });
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Validation("mapper weights must be finite".into()));
        }
        Ok(RidgeMapper {
            d_in,
            d_out,
            lambda,
            weights,
        })
    }

    /// `v -> v + 0`, useful as a baseline and in tests.
    pub fn identity(d: usize) -> Self {
        let mut w = vec![0.0; (d + 1) * d];
        for i in 0..d {
            w[i * d + i] = 1.0;
        }
        RidgeMapper::from_weights(d, d, 0.0, w).expect("identity is valid")
    }

    /// Identity linear part with the given bias.
    pub fn with_bias(bias: &[f64]) -> Self {
        let d = bias.len();
        let mut m = RidgeMapper::identity(d);
        m.weights[d * d..].copy_from_slice(bias);
        m
    }

    pub fn zeros(d_in: usize, d_out: usize) -> Self {
        RidgeMapper::from_weights(d_in, d_out, 0.0, vec![0.0; (d_in + 1) * d_out])
            .expect("zero mapper is valid")
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.d_out + col]
    }

    pub fn bias(&self) -> &[f64] {
        &self.weights[self.d_in * self.d_out..]
    }

    /// Applies only the linear part, dropping the bias.
    pub fn apply_linear(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_input(v)?;
        let mut out = vec![0.0; self.d_out];
        for (i, &x) in v.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let row = &self.weights[i * self.d_out..(i + 1) * self.d_out];
            for (o, w) in out.iter_mut().zip(row) {
                *o += x * w;
            }
        }
        Ok(out)
    }

    fn check_input(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.d_in {
            return Err(Error::DimensionMismatch {
                expected: self.d_in,
                got: v.len(),
            });
        }
        Ok(())
    }

    pub fn meta(&self) -> MapperMeta {
        MapperMeta {
            lambda: self.lambda,
            d_in: self.d_in,
            d_out: self.d_out,
        }
    }

    /// Writes the weights (`<path>`) and a JSON sidecar (`<path>.json`).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = store::encode_f64_matrix(self.d_in + 1, self.d_out, &self.weights)?;
        store::write_atomic(path, &bytes)?;
        let meta = serde_json::to_string_pretty(&self.meta()).expect("meta serializes");
        store::write_atomic(&sidecar(path), meta.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let (rows, dim, values) = store::decode_f64_matrix(&bytes)?;
        let meta_path = sidecar(path);
        let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: MapperMeta =
            serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
        if rows != meta.d_in + 1 || dim != meta.d_out {
            return Err(Error::Format(format!(
                "weights are {rows} x {dim} but sidecar says {} x {}",
                meta.d_in + 1,
                meta.d_out
            )));
        }
        RidgeMapper::from_weights(meta.d_in, meta.d_out, meta.lambda, values)
    }
}

fn sidecar(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

fn check_rows(rows: &[Vec<f64>], what: &str) -> Result<usize> {
    let d = rows.first().map(Vec::len).unwrap_or(0);
    if d == 0 {
        return Err(Error::Validation(format!("{what} must be nonempty")));
    }
    if let Some(r) = rows.iter().find(|r| r.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: r.len(),
        });
    }
    Ok(d)
}

/// Closed-form ridge regression with an unpenalized bias.
pub fn fit_ridge(x: &[Vec<f64>], y: &[Vec<f64>], lambda: f64) -> Result<RidgeMapper> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Config(format!("lambda must be >= 0, got {lambda}")));
    }
    if x.len() != y.len() {
        return Err(Error::Validation(format!(
            "X has {} rows but Y has {}",
            x.len(),
            y.len()
        )));
    }
    let d_in = check_rows(x, "X")?;
    let d_out = check_rows(y, "Y")?;
    let n = x.len();
    let p = d_in + 1;
    if lambda == 0.0 && n < p {
        return Err(Error::RankDeficient { lambda });
    }

    // normal matrix A = X~'X~ + lambda * diag(1, .., 1, 0), rhs B = X~'Y
    let mut a = DMatrix::<f64>::zeros(p, p);
    let mut b = DMatrix::<f64>::zeros(p, d_out);
    let mut aug = vec![1.0; p];
    for (xr, yr) in x.iter().zip(y) {
        aug[..d_in].copy_from_slice(xr);
        for i in 0..p {
            let xi = aug[i];
            for j in i..p {
                a[(i, j)] += xi * aug[j];
            }
            for (k, yk) in yr.iter().enumerate() {
                b[(i, k)] += xi * yk;
            }
        }
    }
    for i in 0..p {
        for j in 0..i {
            a[(i, j)] = a[(j, i)];
        }
    }
    for i in 0..d_in {
        a[(i, i)] += lambda;
    }

    let max_diag = (0..p).map(|i| a[(i, i)]).fold(0.0f64, f64::max);
    let chol = a.cholesky().ok_or(Error::RankDeficient { lambda })?;
    let l = chol.l();
    let min_pivot = (0..p).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
    if lambda == 0.0 && min_pivot <= max_diag * 1e-13 {
        return Err(Error::RankDeficient { lambda });
    }
    let w = chol.solve(&b);

    let mut weights = Vec::with_capacity(p * d_out);
    for i in 0..p {
        for k in 0..d_out {
            weights.push(w[(i, k)]);
        }
    }
    RidgeMapper::from_weights(d_in, d_out, lambda, weights)
}

pub fn apply_mapper(mapper: &RidgeMapper, v: &[f64]) -> Result<Vec<f64>> {
    let mut out = mapper.apply_linear(v)?;
    for (o, b) in out.iter_mut().zip(mapper.bias()) {
        *o += b;
    }
    Ok(out)
}

pub fn apply_mapper_batch(mapper: &RidgeMapper, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    rows.iter().map(|v| apply_mapper(mapper, v)).collect()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Percentage reduction in mean paired Euclidean distance after mapping.
pub fn distance_reduction(x: &[Vec<f64>], y: &[Vec<f64>], mapper: &RidgeMapper) -> Result<f64> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::Validation(
            "distance reduction needs equal, nonempty paired sets".into(),
        ));
    }
    let before: Vec<f64> = x.iter().zip(y).map(|(a, b)| dist(a, b)).collect();
    let mut after = Vec::with_capacity(x.len());
    for (a, b) in x.iter().zip(y) {
        let m = apply_mapper(mapper, a)?;
        if m.len() != b.len() {
            return Err(Error::DimensionMismatch {
                expected: b.len(),
                got: m.len(),
            });
        }
        after.push(dist(&m, b));
    }
    let base = compensated_mean(&before).unwrap_or(0.0);
    if base == 0.0 {
        return Err(Error::Undefined(
            "baseline distance is zero, reduction is undefined".into(),
        ));
    }
    let mapped = compensated_mean(&after).unwrap_or(0.0);
    Ok(100.0 * (1.0 - mapped / base))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringVector {
    pub direction: Vec<f64>,
    pub source_label: String,
    pub target_label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noun_scope: Option<String>,
}

/// Metadata line stored next to the direction row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringMeta {
    pub source_label: String,
    pub target_label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noun_scope: Option<String>,
}

impl SteeringVector {
    pub fn labelled(
        mut self,
        source: impl Into<String>,
        target: impl Into<String>,
        noun_scope: Option<String>,
    ) -> Self {
        self.source_label = source.into();
        self.target_label = target.into();
        self.noun_scope = noun_scope;
        self
    }

    pub fn dim(&self) -> usize {
        self.direction.len()
    }

    pub fn meta(&self) -> SteeringMeta {
        SteeringMeta {
            source_label: self.source_label.clone(),
            target_label: self.target_label.clone(),
            noun_scope: self.noun_scope.clone(),
        }
    }

    /// Writes the direction (`<path>`, one unit row) and a JSONL metadata
    /// line (`<path>.json`).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let m = EmbeddingMatrix::from_rows_f64(std::slice::from_ref(&self.direction), self.dim(), true)?;
        store::write_embeddings(&m, path)?;
        let mut line = serde_json::to_string(&self.meta()).expect("meta serializes");
        line.push('\n');
        store::write_atomic(&sidecar(path), line.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let m = store::read_embeddings(path)?;
        if m.count() != 1 {
            return Err(Error::Format(format!(
                "steering file must hold one row, found {}",
                m.count()
            )));
        }
        let meta_path = sidecar(path);
        let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let line = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
        let meta: SteeringMeta = serde_json::from_str(line).map_err(|e| Error::MalformedRecord {
            line: 1,
            message: e.to_string(),
        })?;
        Ok(SteeringVector {
            direction: normalized(&m.row_f64(0))?,
            source_label: meta.source_label,
            target_label: meta.target_label,
            noun_scope: meta.noun_scope,
        })
    }
}

pub fn steering_vector(source: &[f64], target: &[f64]) -> Result<SteeringVector> {
    if source.len() != target.len() {
        return Err(Error::DimensionMismatch {
            expected: source.len(),
            got: target.len(),
        });
    }
    let diff: Vec<f64> = target.iter().zip(source).map(|(t, s)| t - s).collect();
    if norm(&diff) == 0.0 {
        return Err(Error::Degenerate(
            "source and target coincide; steering direction is zero".into(),
        ));
    }
    Ok(SteeringVector {
        direction: normalized(&diff)?,
        source_label: String::new(),
        target_label: String::new(),
        noun_scope: None,
    })
}

/// Mean of several local directions, renormalized.
pub fn global_steering_vector(locals: &[SteeringVector]) -> Result<SteeringVector> {
    let first = locals
        .first()
        .ok_or_else(|| Error::Validation("no local steering vectors".into()))?;
    let dirs: Vec<Vec<f64>> = locals.iter().map(|s| s.direction.clone()).collect();
    let mean = mean_rows(&dirs)?;
    Ok(SteeringVector {
        direction: normalized(&mean)
            .map_err(|_| Error::Degenerate("local steering directions cancel".into()))?,
        source_label: first.source_label.clone(),
        target_label: first.target_label.clone(),
        noun_scope: None,
    })
}

/// Pushes a text-space steering direction through the mapper's linear part.
pub fn map_steering_vector(mapper: &RidgeMapper, v: &SteeringVector) -> Result<SteeringVector> {
    let mapped = mapper.apply_linear(&v.direction)?;
    Ok(SteeringVector {
        direction: normalized(&mapped)
            .map_err(|_| Error::Degenerate("mapped steering direction is zero".into()))?,
        ..v.clone()
    })
}

/// `normalize(q + alpha * direction)`; returns `q` untouched when `alpha == 0`.
pub fn apply_steering(q: &[f64], v: &SteeringVector, alpha: f64) -> Result<Vec<f64>> {
    if q.len() != v.dim() {
        return Err(Error::DimensionMismatch {
            expected: v.dim(),
            got: q.len(),
        });
    }
    if alpha == 0.0 {
        return Ok(q.to_vec());
    }
    let moved: Vec<f64> = q
        .iter()
        .zip(&v.direction)
        .map(|(a, d)| a + alpha * d)
        .collect();
    normalized(&moved).map_err(|_| Error::Degenerate("steered query is the zero vector".into()))
}

fn mean_rows(rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    let d = check_rows(rows, "vector list")?;
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, x) in mean.iter_mut().zip(r) {
            *m += x;
        }
    }
    let n = rows.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(mean)
}

pub fn merge_average(vectors: &[Vec<f64>]) -> Result<Vec<f64>> {
    let mean = mean_rows(vectors)?;
    normalized(&mean).map_err(|_| Error::Degenerate("mean of merged vectors is zero".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MergeStrategy {
    Average,
    Min,
    Softmin { tau: f64 },
}

pub const DEFAULT_SOFTMIN_TAU: f64 = 1.0;

impl MergeStrategy {
    pub fn softmin() -> Self {
        MergeStrategy::Softmin {
            tau: DEFAULT_SOFTMIN_TAU,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            MergeStrategy::Softmin { tau } if !(*tau > 0.0 && tau.is_finite()) => Err(
                Error::Config(format!("softmin temperature must be positive, got {tau}")),
            ),
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MergeStrategy::Average => "average",
            MergeStrategy::Min => "min",
            MergeStrategy::Softmin { .. } => "softmin",
        }
    }
}

pub fn aggregate_scores(scores: &[f64], strategy: MergeStrategy) -> Result<f64> {
    strategy.validate()?;
    let lo = scores
        .iter()
        .copied()
        .reduce(f64::min)
        .ok_or_else(|| Error::Validation("cannot aggregate an empty score list".into()))?;
    match strategy {
        MergeStrategy::Min => Ok(lo),
        MergeStrategy::Softmin { tau } => {
            // shift by the minimum so the largest weight is exp(0)
            let w: Vec<f64> = scores.iter().map(|s| (-(s - lo) / tau).exp()).collect();
            let z: f64 = w.iter().sum();
            let hi = scores.iter().copied().fold(lo, f64::max);
            Ok((dot(scores, &w) / z).clamp(lo, hi))
        }
        MergeStrategy::Average => Err(Error::Config(
            "average merges vectors, not scores".into(),
        )),
    }
}
