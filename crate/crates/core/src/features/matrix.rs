use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::kg::{data_lines, read_text, EntityId, KnowledgeGraph};

const MAGIC: &[u8; 8] = b"CEAEMB01";

/// Row-major matrix with one fixed-width vector per entity.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f64>,
}

impl EmbeddingMatrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * dim {
            return Err(Error::InvalidArgument(format!(
                "matrix data has {} values, expected {rows}x{dim}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite value at row {}, column {}",
                i / dim.max(1),
                i % dim.max(1)
            )));
        }
        Ok(Self { rows, dim, data })
    }

    pub fn zeros(rows: usize, dim: usize) -> Self {
        Self {
            rows,
            dim,
            data: vec![0.0; rows * dim],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != dim) {
            return Err(Error::InvalidArgument(format!(
                "row {bad} has {} values, expected {dim}",
                rows[bad].len()
            )));
        }
        Self::new(rows.len(), dim, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.dim.max(1)).take(self.rows)
    }

    /// Side-by-side concatenation of matrices with equal row counts.
    pub fn hconcat(parts: &[&EmbeddingMatrix]) -> Result<Self> {
        let rows = parts.first().map_or(0, |m| m.rows);
        if parts.iter().any(|m| m.rows != rows) {
            return Err(Error::InvalidArgument("hconcat: row counts differ".into()));
        }
        let dim = parts.iter().map(|m| m.dim).sum();
        let mut data = Vec::with_capacity(rows * dim);
        for i in 0..rows {
            for m in parts {
                data.extend_from_slice(m.row(i));
            }
        }
        Ok(Self { rows, dim, data })
    }

    /// Stacks `self` on top of `other`.
    pub fn vstack(&self, other: &EmbeddingMatrix) -> Result<Self> {
        if self.dim != other.dim && self.rows > 0 && other.rows > 0 {
            return Err(Error::InvalidArgument("vstack: dimensions differ".into()));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Self {
            rows: self.rows + other.rows,
            dim: self.dim.max(other.dim),
            data,
        })
    }

    /// Splits into the first `at` rows and the rest.
    pub fn split_rows(&self, at: usize) -> (Self, Self) {
        let (a, b) = self.data.split_at(at * self.dim);
        (
            Self {
                rows: at,
                dim: self.dim,
                data: a.to_vec(),
            },
            Self {
                rows: self.rows - at,
                dim: self.dim,
                data: b.to_vec(),
            },
        )
    }

    pub fn write_text(&self, path: &Path, ids: &[EntityId]) -> Result<()> {
        self.check_ids(ids)?;
        let mut w = BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?);
        for (id, row) in ids.iter().zip(self.iter_rows()) {
            let values: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            writeln!(w, "{id}\t{}", values.join(" ")).map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Binary layout: 8-byte magic, u32 dim, u32 count, then per row a u64 id
    /// followed by `dim` f64 values, all little-endian.
    pub fn write_binary(&self, path: &Path, ids: &[EntityId]) -> Result<()> {
        self.check_ids(ids)?;
        let mut buf = Vec::with_capacity(16 + self.rows * (8 + 8 * self.dim));
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&(self.dim as u32).to_le_bytes());
        buf.extend_from_slice(&(self.rows as u32).to_le_bytes());
        for (id, row) in ids.iter().zip(self.iter_rows()) {
            buf.extend_from_slice(&id.0.to_le_bytes());
            for v in row {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    fn check_ids(&self, ids: &[EntityId]) -> Result<()> {
        if ids.len() != self.rows {
            return Err(Error::InvalidArgument(format!(
                "{} ids for {} rows",
                ids.len(),
                self.rows
            )));
        }
        Ok(())
    }
}

/// Vectors keyed by entity id, as read from a vector file.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyedVectors {
    pub ids: Vec<EntityId>,
    pub matrix: EmbeddingMatrix,
}

impl KeyedVectors {
    /// Reads either the binary format (detected by magic) or `id<TAB>v1 v2 ...` text.
    pub fn read(path: &Path) -> Result<Self> {
        let mut head = [0u8; 8];
        let is_binary = fs::File::open(path)
            .and_then(|mut f| f.read_exact(&mut head))
            .map(|_| &head == MAGIC)
            .unwrap_or(false);
        if is_binary {
            Self::read_binary(path)
        } else {
            Self::read_text(path)
        }
    }

    fn read_binary(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(Error::parse(path, 0, "missing embedding header"));
        }
        let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let count = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let record = 8 + 8 * dim;
        if bytes.len() != 16 + count * record {
            return Err(Error::parse(
                path,
                0,
                format!("expected {} bytes for {count} rows of dim {dim}, found {}", 16 + count * record, bytes.len()),
            ));
        }
        let mut ids = Vec::with_capacity(count);
        let mut data = Vec::with_capacity(count * dim);
        for chunk in bytes[16..].chunks_exact(record) {
            ids.push(EntityId(u64::from_le_bytes(chunk[..8].try_into().unwrap())));
            data.extend(
                chunk[8..]
                    .chunks_exact(8)
                    .map(|b| f64::from_le_bytes(b.try_into().unwrap())),
            );
        }
        Ok(Self {
            ids,
            matrix: EmbeddingMatrix::new(count, dim, data)?,
        })
    }

    fn read_text(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        let mut ids = Vec::new();
        let mut data = Vec::new();
        let mut dim = None;
        for (line, l) in data_lines(&text) {
            let (id, values) = l
                .split_once('\t')
                .ok_or_else(|| Error::parse(path, line, "expected \"id<TAB>v1 v2 ...\""))?;
            let id = id
                .trim()
                .parse()
                .map_err(|_| Error::parse(path, line, format!("bad id {id:?}")))?;
            let row: Vec<f64> = values
                .split_whitespace()
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::parse(path, line, e.to_string()))?;
            match dim {
                None => dim = Some(row.len()),
                Some(d) if d != row.len() => {
                    return Err(Error::parse(path, line, format!("expected {d} values, found {}", row.len())))
                }
                _ => {}
            }
            ids.push(EntityId(id));
            data.extend(row);
        }
        let rows = ids.len();
        Ok(Self {
            ids,
            matrix: EmbeddingMatrix::new(rows, dim.unwrap_or(0), data)?,
        })
    }

    /// Reorders rows into the graph's entity order. Entities without a vector get zeros.
    pub fn aligned_to(&self, kg: &KnowledgeGraph) -> EmbeddingMatrix {
        let by_id: HashMap<EntityId, usize> = self.ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
        let dim = self.matrix.dim();
        let mut out = EmbeddingMatrix::zeros(kg.entity_count(), dim);
        let mut missing = 0usize;
        for (row, id) in kg.entity_ids().enumerate() {
            match by_id.get(&id) {
                Some(&src) => out.row_mut(row).copy_from_slice(self.matrix.row(src)),
                None => missing += 1,
            }
        }
        if missing > 0 {
            log::warn!("{missing} entities of {} have no input vector; using zeros", kg.name());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_and_text_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let m = EmbeddingMatrix::from_rows(&[vec![1.0, -2.5, 1e-300], vec![0.1, 0.2, 0.3]]).unwrap();
        let ids = [EntityId(4), EntityId(9)];
        for (name, binary) in [("m.bin", true), ("m.txt", false)] {
            let p = dir.path().join(name);
            if binary {
                m.write_binary(&p, &ids).unwrap();
            } else {
                m.write_text(&p, &ids).unwrap();
            }
            let back = KeyedVectors::read(&p).unwrap();
            assert_eq!(back.ids, ids);
            assert_eq!(back.matrix, m);
        }
    }

    #[test]
    fn rejects_non_finite() {
        assert!(EmbeddingMatrix::new(1, 2, vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn truncated_binary_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.bin");
        EmbeddingMatrix::zeros(2, 3).write_binary(&p, &[EntityId(0), EntityId(1)]).unwrap();
        let mut bytes = fs::read(&p).unwrap();
        bytes.pop();
        fs::write(&p, bytes).unwrap();
        assert!(KeyedVectors::read(&p).is_err());
    }
}
