//! Binary embedding files (`EMB1`) and the demographic metadata sidecar.
//!
//! Layout of an embedding file, all integers little-endian:
//!
//! | offset | size | field                               |
//! |--------|------|-------------------------------------|
//! | 0      | 4    | magic `EMB1`                        |
//! | 4      | 2    | format version, always 1            |
//! | 6      | 2    | flags, bit 0 = rows are unit-norm   |
//! | 8      | 4    | dim                                 |
//! | 12     | 8    | count                               |
//! | 20     | ...  | count × dim binary32 values, row-major |
//!
//! Values are held as `f64` in memory. Every binary32 value widens exactly,
//! so loading and re-writing a file reproduces it byte for byte.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::demographics::DemographicRecord;
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"EMB1";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 20;
pub const FLAG_NORMALIZED: u16 = 0x0001;

/// Tolerance on row norms for a set flagged as normalized.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-5;
const ZERO_NORM: f64 = 1e-12;

pub const METADATA_HEADER: [&str; 4] = ["record_id", "race", "gender", "age_band"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbeddingHeader {
    pub version: u16,
    pub flags: u16,
    pub dim: u32,
    pub count: u64,
}

impl EmbeddingHeader {
    pub fn normalized(&self) -> bool {
        self.flags & FLAG_NORMALIZED != 0
    }

    pub fn payload_len(&self) -> Option<u64> {
        self.count.checked_mul(self.dim as u64)?.checked_mul(4)
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format(format!(
                "header needs {HEADER_LEN} bytes, file has {}",
                bytes.len()
            )));
        }
        if bytes[0..4] != MAGIC {
            return Err(Error::Format(format!("bad magic {:02x?}", &bytes[0..4])));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported format version {version}"
            )));
        }
        let flags = u16::from_le_bytes([bytes[6], bytes[7]]);
        let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        let count = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
        if dim == 0 {
            return Err(Error::Format("dim must be positive".into()));
        }
        Ok(EmbeddingHeader {
            version,
            flags,
            dim,
            count,
        })
    }

    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[0..4].copy_from_slice(&MAGIC);
        out[4..6].copy_from_slice(&self.version.to_le_bytes());
        out[6..8].copy_from_slice(&self.flags.to_le_bytes());
        out[8..12].copy_from_slice(&self.dim.to_le_bytes());
        out[12..20].copy_from_slice(&self.count.to_le_bytes());
        out
    }
}

/// A dense row-major matrix of embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    dim: usize,
    vectors: Vec<f64>,
    normalized: bool,
}

impl EmbeddingSet {
    /// Validates finiteness, shape, and (when `normalized`) unit row norms.
    pub fn new(dim: usize, vectors: Vec<f64>, normalized: bool) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Data("dim must be positive".into()));
        }
        if !vectors.len().is_multiple_of(dim) {
            return Err(Error::Data(format!(
                "{} values do not divide into rows of {dim}",
                vectors.len()
            )));
        }
        let set = EmbeddingSet {
            dim,
            vectors,
            normalized,
        };
        for (i, row) in set.rows().enumerate() {
            if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::Data(format!(
                    "non-finite value at row {i}, column {j}"
                )));
            }
            if normalized {
                let norm = l2_norm(row);
                if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
                    return Err(Error::Data(format!(
                        "row {i} has norm {norm} but the set is flagged normalized"
                    )));
                }
            }
        }
        Ok(set)
    }

    pub fn from_rows(rows: &[Vec<f64>], normalized: bool) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != dim) {
            return Err(Error::Data(format!(
                "row {i} has {} values, expected {dim}",
                r.len()
            )));
        }
        EmbeddingSet::new(dim, rows.concat(), normalized)
    }

    /// An empty set of the given dimensionality.
    pub fn empty(dim: usize) -> Result<Self> {
        EmbeddingSet::new(dim, Vec::new(), false)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.vectors.len() / self.dim
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.vectors
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.vectors.chunks_exact(self.dim)
    }

    /// Divides every row by its L2 norm.
    pub fn l2_normalize(&self) -> Result<EmbeddingSet> {
        let mut vectors = self.vectors.clone();
        for (i, row) in vectors.chunks_exact_mut(self.dim).enumerate() {
            let norm = l2_norm(row);
            if norm < ZERO_NORM {
                return Err(Error::DegenerateVector { row: i });
            }
            row.iter_mut().for_each(|v| *v /= norm);
        }
        Ok(EmbeddingSet {
            dim: self.dim,
            vectors,
            normalized: true,
        })
    }

    pub fn header(&self) -> EmbeddingHeader {
        EmbeddingHeader {
            version: FORMAT_VERSION,
            flags: if self.normalized { FLAG_NORMALIZED } else { 0 },
            dim: self.dim as u32,
            count: self.count() as u64,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.vectors.len() * 4);
        out.extend_from_slice(&self.header().to_bytes());
        for &v in &self.vectors {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let header = EmbeddingHeader::parse(bytes)?;
        let payload = &bytes[HEADER_LEN..];
        let expected = header
            .payload_len()
            .ok_or_else(|| Error::Format("declared shape overflows".into()))?;
        if payload.len() as u64 != expected {
            return Err(Error::Format(format!(
                "header declares {} rows × {} dims ({expected} payload bytes), file has {}",
                header.count,
                header.dim,
                payload.len()
            )));
        }
        let vectors = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        EmbeddingSet::new(header.dim as usize, vectors, header.normalized())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        EmbeddingSet::from_bytes(&bytes).map_err(|e| e.context(path.display().to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        w.write_all(&self.to_bytes())
            .map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

pub fn read_header(path: &Path) -> Result<EmbeddingHeader> {
    let mut buf = [0u8; HEADER_LEN];
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut filled = 0;
    while filled < HEADER_LEN {
        match f.read(&mut buf[filled..]).map_err(|e| Error::io(path, e))? {
            0 => break,
            n => filled += n,
        }
    }
    EmbeddingHeader::parse(&buf[..filled])
}

pub(crate) fn l2_norm(row: &[f64]) -> f64 {
    row.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// An embedding matrix and its row-aligned demographic labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledEmbeddings {
    embeddings: EmbeddingSet,
    metadata: Vec<DemographicRecord>,
}

impl LabeledEmbeddings {
    pub fn new(embeddings: EmbeddingSet, metadata: Vec<DemographicRecord>) -> Result<Self> {
        if embeddings.count() != metadata.len() {
            return Err(Error::Alignment(format!(
                "{} embedding rows but {} metadata rows",
                embeddings.count(),
                metadata.len()
            )));
        }
        check_record_ids(&metadata)?;
        Ok(LabeledEmbeddings {
            embeddings,
            metadata,
        })
    }

    pub fn embeddings(&self) -> &EmbeddingSet {
        &self.embeddings
    }

    pub fn metadata(&self) -> &[DemographicRecord] {
        &self.metadata
    }

    pub fn count(&self) -> usize {
        self.metadata.len()
    }

    pub fn l2_normalize(&self) -> Result<LabeledEmbeddings> {
        Ok(LabeledEmbeddings {
            embeddings: self.embeddings.l2_normalize()?,
            metadata: self.metadata.clone(),
        })
    }
}

/// Record ids must be unique. When every id is an unsigned integer the column
/// is treated as a row index and must equal the row position.
fn check_record_ids(metadata: &[DemographicRecord]) -> Result<()> {
    let mut seen = HashSet::with_capacity(metadata.len());
    for rec in metadata {
        if !seen.insert(rec.record_id.as_str()) {
            return Err(Error::Alignment(format!(
                "duplicate record_id {:?}",
                rec.record_id
            )));
        }
    }
    let indices: Option<Vec<u64>> = metadata.iter().map(|r| r.record_id.parse().ok()).collect();
    if let Some(indices) = indices {
        if let Some((row, id)) = indices
            .iter()
            .enumerate()
            .find(|&(row, &id)| id != row as u64)
        {
            return Err(Error::Alignment(format!(
                "record_id {id} found at row {row}; index column is out of order"
            )));
        }
    }
    Ok(())
}

pub fn read_metadata<R: Read>(reader: R) -> Result<Vec<DemographicRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(false)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        Some(h) => h.map_err(|e| Error::Format(e.to_string()))?,
        None => return Err(Error::Format("metadata file is empty (no header)".into())),
    };
    if header.iter().collect::<Vec<_>>() != METADATA_HEADER {
        return Err(Error::Format(format!(
            "metadata header must be {}, found {}",
            METADATA_HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for (i, rec) in records.enumerate() {
        let rec = rec.map_err(|e| Error::Format(format!("metadata line {}: {e}", i + 2)))?;
        let field = |j: usize| rec.get(j).unwrap_or_default();
        let line_err = |e: Error| e.context(format!("metadata line {}", i + 2));
        let age = field(3);
        out.push(DemographicRecord {
            record_id: field(0).to_string(),
            race: field(1).parse().map_err(line_err)?,
            gender: field(2).parse().map_err(line_err)?,
            age_band: (!age.is_empty()).then(|| age.to_string()),
        });
    }
    Ok(out)
}

pub fn write_metadata<W: Write>(writer: W, metadata: &[DemographicRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let to_err = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(METADATA_HEADER).map_err(to_err)?;
    for rec in metadata {
        w.write_record([
            rec.record_id.as_str(),
            rec.race.as_str(),
            rec.gender.as_str(),
            rec.age_band.as_deref().unwrap_or(""),
        ])
        .map_err(to_err)?;
    }
    w.flush()
        .map_err(|e| Error::Format(format!("flushing metadata: {e}")))
}

pub fn load_labeled(embedding_path: &Path, metadata_path: &Path) -> Result<LabeledEmbeddings> {
    let embeddings = EmbeddingSet::read(embedding_path)?;
    let file = File::open(metadata_path).map_err(|e| Error::io(metadata_path, e))?;
    let metadata =
        read_metadata(file).map_err(|e| e.context(metadata_path.display().to_string()))?;
    LabeledEmbeddings::new(embeddings, metadata)
}

pub fn write_labeled(
    data: &LabeledEmbeddings,
    embedding_path: &Path,
    metadata_path: &Path,
) -> Result<()> {
    data.embeddings.write(embedding_path)?;
    let file = File::create(metadata_path).map_err(|e| Error::io(metadata_path, e))?;
    write_metadata(BufWriter::new(file), &data.metadata)
}
