//! Embedding matrices, item manifests, and the corpus that binds them.
//!
//! # Binary container
//!
//! ```text
//! offset  size  field
//! 0       4     magic "NBRA"
//! 4       4     format version, u32 LE (= 1)
//! 8       8     row count, u64 LE
//! 16      4     dim, u32 LE
//! 20      1     dtype (0 = f32, 1 = f64)
//! 21      1     flags (bit 0 = rows unit-normalized)
//! 22      ...   count * dim values, little-endian, row-major
//! ```
//!
//! Embedding files always use dtype 0. Dtype 1 is only written for ridge
//! mapper weights, which are solved in `f64` and must round-trip exactly.
//!
//! # Manifest
//!
//! UTF-8, one JSON object per line with fields `id`, `caption`, `objects`
//! and optional `split`. Line `i` binds to embedding row `i`.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"NBRA";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 22;

/// Tolerance on row norms for matrices flagged as unit-normalized.
pub const UNIT_NORM_TOL: f64 = 1e-4;

const FLAG_UNIT_NORM: u8 = 0b1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    F32 = 0,
    F64 = 1,
}

impl DType {
    fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Header {
    count: u64,
    dim: u32,
    dtype: DType,
    flags: u8,
}

impl Header {
    fn encode(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[0..4].copy_from_slice(MAGIC);
        out[4..8].copy_from_slice(&FORMAT_VERSION.to_le_bytes());
        out[8..16].copy_from_slice(&self.count.to_le_bytes());
        out[16..20].copy_from_slice(&self.dim.to_le_bytes());
        out[20] = self.dtype as u8;
        out[21] = self.flags;
        out
    }

    fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format(format!(
                "file too short for header: {} bytes",
                bytes.len()
            )));
        }
        if &bytes[0..4] != MAGIC {
            return Err(Error::Format("bad magic, expected \"NBRA\"".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let dim = u32::from_le_bytes(bytes[16..20].try_into().unwrap());
        let dtype = match bytes[20] {
            0 => DType::F32,
            1 => DType::F64,
            other => return Err(Error::Format(format!("unknown dtype byte {other}"))),
        };
        if dim == 0 {
            return Err(Error::Format("dim must be positive".into()));
        }
        Ok(Header {
            count,
            dim,
            dtype,
            flags: bytes[21],
        })
    }

    fn payload_len(&self) -> Result<u64> {
        self.count
            .checked_mul(u64::from(self.dim))
            .and_then(|n| n.checked_mul(self.dtype.width() as u64))
            .ok_or_else(|| Error::Format("declared shape overflows".into()))
    }

    /// Checks the payload length and returns the payload slice.
    fn payload<'a>(&self, bytes: &'a [u8]) -> Result<&'a [u8]> {
        let expected = self.payload_len()?;
        let found = (bytes.len() - HEADER_LEN) as u64;
        if found != expected {
            return Err(Error::Length { expected, found });
        }
        Ok(&bytes[HEADER_LEN..])
    }
}

/// A dense `count x dim` matrix of `f32` values, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    count: usize,
    dim: usize,
    unit_norm: bool,
    values: Vec<f32>,
}

impl EmbeddingMatrix {
    /// Validates and wraps a row-major buffer.
    pub fn new(dim: usize, values: Vec<f32>, unit_norm: bool) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Validation("dim must be positive".into()));
        }
        if !values.len().is_multiple_of(dim) {
            return Err(Error::Validation(format!(
                "buffer of {} values is not a multiple of dim {dim}",
                values.len()
            )));
        }
        let m = EmbeddingMatrix {
            count: values.len() / dim,
            dim,
            unit_norm,
            values,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn empty(dim: usize) -> Result<Self> {
        Self::new(dim, Vec::new(), false)
    }

    /// Builds a matrix from `f64` rows, rounding each value to `f32`.
    pub fn from_rows_f64(rows: &[Vec<f64>], dim: usize, unit_norm: bool) -> Result<Self> {
        let mut values = Vec::with_capacity(rows.len() * dim);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::Validation(format!(
                    "row {i} has length {}, expected {dim}",
                    row.len()
                )));
            }
            values.extend(row.iter().map(|&x| x as f32));
        }
        Self::new(dim, values, unit_norm)
    }

    fn validate(&self) -> Result<()> {
        for (i, row) in self.rows().enumerate() {
            if let Some(j) = row.iter().position(|x| !x.is_finite()) {
                return Err(Error::Validation(format!(
                    "non-finite value at row {i}, column {j}"
                )));
            }
            if self.unit_norm {
                let n = row_norm(row);
                if (n - 1.0).abs() > UNIT_NORM_TOL {
                    return Err(Error::Validation(format!(
                        "row {i} flagged unit-norm but has norm {n}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_unit_norm(&self) -> bool {
        self.unit_norm
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        crate::numeric::to_f64(self.row(i))
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> + '_ {
        self.values.chunks_exact(self.dim)
    }

    pub fn to_rows_f64(&self) -> Vec<Vec<f64>> {
        (0..self.count).map(|i| self.row_f64(i)).collect()
    }
}

fn row_norm(row: &[f32]) -> f64 {
    row.iter()
        .map(|&x| f64::from(x) * f64::from(x))
        .sum::<f64>()
        .sqrt()
}

/// Returns a copy with every row scaled to unit Euclidean norm.
///
/// Norms are computed in `f64`; results are rounded back to `f32`.
pub fn normalize_rows(matrix: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
    let mut values = Vec::with_capacity(matrix.values.len());
    for (i, row) in matrix.rows().enumerate() {
        let n = row_norm(row);
        if n == 0.0 {
            return Err(Error::ZeroRow { row: i });
        }
        values.extend(row.iter().map(|&x| (f64::from(x) / n) as f32));
    }
    EmbeddingMatrix::new(matrix.dim, values, true)
}

pub fn encode_embeddings(matrix: &EmbeddingMatrix) -> Vec<u8> {
    let header = Header {
        count: matrix.count as u64,
        dim: matrix.dim as u32,
        dtype: DType::F32,
        flags: if matrix.unit_norm { FLAG_UNIT_NORM } else { 0 },
    };
    let mut out = Vec::with_capacity(HEADER_LEN + matrix.values.len() * 4);
    out.extend_from_slice(&header.encode());
    for v in &matrix.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_embeddings(bytes: &[u8]) -> Result<EmbeddingMatrix> {
    let header = Header::decode(bytes)?;
    if header.dtype != DType::F32 {
        return Err(Error::Format(
            "embedding files must have dtype 0 (f32)".into(),
        ));
    }
    let payload = header.payload(bytes)?;
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    EmbeddingMatrix::new(
        header.dim as usize,
        values,
        header.flags & FLAG_UNIT_NORM != 0,
    )
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_embeddings(&bytes)
}

pub fn write_embeddings(matrix: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_embeddings(matrix))
}

/// Encodes an `f64` matrix (dtype 1) in the same container.
pub fn encode_f64_matrix(rows: usize, dim: usize, values: &[f64]) -> Result<Vec<u8>> {
    if dim == 0 || values.len() != rows * dim {
        return Err(Error::Validation(format!(
            "{} values do not form a {rows} x {dim} matrix",
            values.len()
        )));
    }
    let header = Header {
        count: rows as u64,
        dim: dim as u32,
        dtype: DType::F64,
        flags: 0,
    };
    let mut out = Vec::with_capacity(HEADER_LEN + values.len() * 8);
    out.extend_from_slice(&header.encode());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Decodes a dtype-1 container into `(rows, dim, values)`.
pub fn decode_f64_matrix(bytes: &[u8]) -> Result<(usize, usize, Vec<f64>)> {
    let header = Header::decode(bytes)?;
    if header.dtype != DType::F64 {
        return Err(Error::Format("expected dtype 1 (f64)".into()));
    }
    let payload = header.payload(bytes)?;
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if let Some(i) = values.iter().position(|x| !x.is_finite()) {
        return Err(Error::Validation(format!("non-finite value at index {i}")));
    }
    Ok((header.count as usize, header.dim as usize, values))
}

/// Writes `bytes` to a temporary file beside `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// A noun with its ordered attributes, e.g. `large red rubber sphere`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ObjectAnnotation {
    pub noun: String,
    #[serde(default)]
    pub attributes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribute_kinds: Option<Vec<String>>,
}

impl ObjectAnnotation {
    pub fn new(noun: impl Into<String>, attributes: Vec<String>) -> Self {
        ObjectAnnotation {
            noun: noun.into(),
            attributes,
            attribute_kinds: None,
        }
    }

    pub fn with_kinds(mut self, kinds: Vec<String>) -> Self {
        self.attribute_kinds = Some(kinds);
        self
    }

    /// The composed phrase: attributes joined by spaces, then the noun.
    pub fn phrase(&self) -> String {
        let mut parts: Vec<&str> = self.attributes.iter().map(String::as_str).collect();
        parts.push(&self.noun);
        parts.join(" ")
    }

    /// Kind tag of attribute `i`, falling back to a positional name.
    pub fn kind_of(&self, i: usize) -> String {
        self.attribute_kinds
            .as_ref()
            .and_then(|k| k.get(i).cloned())
            .unwrap_or_else(|| format!("attr{i}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub id: String,
    pub caption: String,
    #[serde(default)]
    pub objects: Vec<ObjectAnnotation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Image,
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Text => "text",
            Modality::Image => "image",
        })
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(Modality::Text),
            "image" => Ok(Modality::Image),
            other => Err(Error::Config(format!("unknown modality {other:?}"))),
        }
    }
}

pub fn parse_manifest(text: &str) -> Result<Vec<ItemRecord>> {
    let mut items = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: ItemRecord =
            serde_json::from_str(line).map_err(|e| Error::MalformedRecord {
                line: i + 1,
                message: e.to_string(),
            })?;
        if let Some(o) = record.objects.iter().find(|o| o.noun.is_empty()) {
            return Err(Error::MalformedRecord {
                line: i + 1,
                message: format!("object with empty noun (attributes {:?})", o.attributes),
            });
        }
        items.push(record);
    }
    Ok(items)
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ItemRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text)
}

pub fn manifest_to_string(items: &[ItemRecord]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("records serialize"));
        out.push('\n');
    }
    out
}

pub fn write_manifest(items: &[ItemRecord], path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), manifest_to_string(items).as_bytes())
}

/// Items of one modality bound row-for-row to their embeddings.
///
/// Immutable after construction.
#[derive(Debug, Clone)]
pub struct Corpus {
    modality: Modality,
    items: Vec<ItemRecord>,
    embeddings: EmbeddingMatrix,
    index: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(
        modality: Modality,
        items: Vec<ItemRecord>,
        embeddings: EmbeddingMatrix,
    ) -> Result<Self> {
        if items.len() != embeddings.count() {
            return Err(Error::CountMismatch {
                manifest: items.len(),
                embeddings: embeddings.count(),
            });
        }
        let mut index = HashMap::with_capacity(items.len());
        for (i, item) in items.iter().enumerate() {
            if index.insert(item.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(item.id.clone()));
            }
        }
        Ok(Corpus {
            modality,
            items,
            embeddings,
            index,
        })
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn items(&self) -> &[ItemRecord] {
        &self.items
    }

    pub fn embeddings(&self) -> &EmbeddingMatrix {
        &self.embeddings
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn get(&self, id: &str) -> Option<&ItemRecord> {
        self.position(id).map(|i| &self.items[i])
    }
}

pub fn load_corpus(
    manifest: impl AsRef<Path>,
    embeddings: impl AsRef<Path>,
    modality: Modality,
) -> Result<Corpus> {
    let items = read_manifest(manifest)?;
    let matrix = read_embeddings(embeddings)?;
    Corpus::new(modality, items, matrix)
}
