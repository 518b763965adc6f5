//! Offline name encoder: hashed character n-grams.
//!
//! Stands in for a pretrained text encoder when no name-vector file is given.

use super::EmbeddingMatrix;
use crate::kg::KnowledgeGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashingNameEncoder {
    pub dim: usize,
}

impl Default for HashingNameEncoder {
    fn default() -> Self {
        Self { dim: 64 }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Lowercases, keeps the last path segment of URIs, and maps `_` to spaces.
pub fn normalize_name(name: &str) -> String {
    let tail = name.trim_end_matches('/').rsplit('/').next().unwrap_or(name);
    tail.chars()
        .map(|c| if c == '_' { ' ' } else { c })
        .flat_map(char::to_lowercase)
        .collect::<String>()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

impl HashingNameEncoder {
    /// L2-normalised signed counts of 2-, 3- and 4-grams of `#name#`.
    pub fn encode(&self, name: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        let chars: Vec<char> = format!("#{}#", normalize_name(name)).chars().collect();
        let mut buf = String::new();
        for n in 2..=4 {
            for gram in chars.windows(n) {
                buf.clear();
                buf.extend(gram);
                let h = fnv1a(buf.as_bytes()) ^ n as u64;
                let h = fnv1a(&h.to_le_bytes());
                let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
                v[(h % self.dim as u64) as usize] += sign;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }

    pub fn encode_kg(&self, kg: &KnowledgeGraph) -> EmbeddingMatrix {
        let rows: Vec<Vec<f64>> = kg
            .entity_ids()
            .map(|id| self.encode(kg.entity_name(id).unwrap_or_default()))
            .collect();
        if rows.is_empty() {
            return EmbeddingMatrix::zeros(0, self.dim);
        }
        EmbeddingMatrix::from_rows(&rows).expect("fixed-width finite rows")
    }
}
