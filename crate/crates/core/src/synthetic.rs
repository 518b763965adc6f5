//! Seeded generator for pairs of isomorphic knowledge graphs.
//!
//! The second graph has the same facts as the first under a permutation of
//! entity ids, with names restyled (`rapo melita` becomes `Rapo_Melita`)
//! and occasionally misspelt. Useful for end-to-end tests that need a known
//! gold alignment.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{write_pairs, CalendarDate, EntityId, Fact, KgFiles, KnowledgeGraph, RelationId, Timestamp};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub entities: usize,
    /// Average number of facts per entity.
    pub facts_per_entity: usize,
    pub relations: usize,
    pub temporal: bool,
    /// Probability that a second-graph name carries a typo.
    pub typo_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            entities: 100,
            facts_per_entity: 3,
            relations: 6,
            temporal: true,
            typo_rate: 0.3,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticPair {
    pub kg1: KnowledgeGraph,
    pub kg2: KnowledgeGraph,
    /// Gold pairs in first-graph id order.
    pub pairs: Vec<(EntityId, EntityId)>,
}

const CONSONANTS: &[u8] = b"bcdfghklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

fn word(rng: &mut ChaCha8Rng, syllables: usize) -> String {
    (0..syllables)
        .flat_map(|_| {
            [
                CONSONANTS[rng.random_range(0..CONSONANTS.len())] as char,
                VOWELS[rng.random_range(0..VOWELS.len())] as char,
            ]
        })
        .collect()
}

fn capitalized(w: &str) -> String {
    let mut c = w.chars();
    c.next()
        .map(|f| f.to_ascii_uppercase().to_string() + c.as_str())
        .unwrap_or_default()
}

/// Swaps two adjacent letters or doubles one, inside a random word.
fn typo(rng: &mut ChaCha8Rng, words: &mut [String]) {
    let w = &mut words[rng.random_range(0..words.len())];
    let mut chars: Vec<char> = w.chars().collect();
    if chars.len() >= 3 && rng.random_bool(0.5) {
        let i = rng.random_range(1..chars.len() - 1);
        chars.swap(i, i + 1);
    } else {
        let i = rng.random_range(0..chars.len());
        chars.insert(i, chars[i]);
    }
    *w = chars.into_iter().collect();
}

/// Month `m` counted from January 1990 (0-based).
fn month_stamp(m: i32) -> Timestamp {
    Timestamp::Known(CalendarDate {
        year: 1990 + m / 12,
        month: Some((m % 12 + 1) as u8),
        day: None,
    })
}

impl SyntheticPair {
    pub fn generate(cfg: &SyntheticConfig) -> Result<Self> {
        if cfg.entities < 2 || cfg.relations == 0 || cfg.facts_per_entity == 0 {
            return Err(Error::InvalidArgument(
                "synthetic graphs need at least 2 entities, 1 relation and 1 fact per entity".into(),
            ));
        }
        if !(0.0..=1.0).contains(&cfg.typo_rate) {
            return Err(Error::InvalidArgument("typo_rate must lie in [0, 1]".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let n = cfg.entities;

        let mut seen = HashSet::new();
        let mut names: Vec<Vec<String>> = Vec::with_capacity(n);
        while names.len() < n {
            let second = rng.random_range(2..=3);
            let words = vec![word(&mut rng, 2), word(&mut rng, second)];
            if seen.insert(words.join(" ")) {
                names.push(words);
            }
        }

        // A random spanning tree keeps the graph connected; the rest of the
        // facts join uniformly chosen distinct entities.
        let mut edges: Vec<(usize, usize)> = (1..n).map(|i| (rng.random_range(0..i), i)).collect();
        let mut present: HashSet<(usize, usize)> = edges.iter().copied().collect();
        let target = n * cfg.facts_per_entity;
        let max_edges = n * (n - 1);
        while edges.len() < target.min(max_edges) {
            let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
            if a != b && present.insert((a, b)) {
                edges.push((a, b));
            }
        }
        let facts1: Vec<(usize, usize, usize, Timestamp, Timestamp)> = edges
            .into_iter()
            .map(|(h, t)| {
                let r = rng.random_range(0..cfg.relations);
                let (start, end) = if cfg.temporal {
                    let start = rng.random_range(0..372);
                    let span = rng.random_range(0..=36);
                    (month_stamp(start), month_stamp(start + span))
                } else {
                    (Timestamp::Unknown, Timestamp::Unknown)
                };
                (h, r, t, start, end)
            })
            .collect();

        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let id2 = |i: usize| EntityId(10_000 + perm[i] as u64);
        let mut rel_perm: Vec<usize> = (0..cfg.relations).collect();
        rel_perm.shuffle(&mut rng);

        let entities1 = (0..n).map(|i| (EntityId(i as u64), names[i].join(" "))).collect();
        let entities2 = (0..n)
            .map(|i| {
                let mut words: Vec<String> = names[i].iter().map(|w| capitalized(w)).collect();
                if rng.random_bool(cfg.typo_rate) {
                    typo(&mut rng, &mut words);
                }
                (id2(i), words.join("_"))
            })
            .collect();
        let relations1 = (0..cfg.relations)
            .map(|r| (RelationId(r as u64), format!("relation {r}")))
            .collect();
        let relations2 = (0..cfg.relations)
            .map(|r| (RelationId(rel_perm[r] as u64), format!("rel_{r}")))
            .collect();
        let kg1_facts = facts1
            .iter()
            .map(|&(h, r, t, s, e)| {
                Fact::new(EntityId(h as u64), RelationId(r as u64), EntityId(t as u64)).with_times(s, e)
            })
            .collect();
        let kg2_facts = facts1
            .iter()
            .map(|&(h, r, t, s, e)| Fact::new(id2(h), RelationId(rel_perm[r] as u64), id2(t)).with_times(s, e))
            .collect();

        Ok(Self {
            kg1: KnowledgeGraph::new("triples_1", entities1, relations1, kg1_facts)?,
            kg2: KnowledgeGraph::new("triples_2", entities2, relations2, kg2_facts)?,
            pairs: (0..n).map(|i| (EntityId(i as u64), id2(i))).collect(),
        })
    }

    /// Writes `triples_N`, `ent_ids_N`, `rel_ids_N` and `ref_ent_ids` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.kg1.write_files(&KgFiles::in_dir(dir, 1))?;
        self.kg2.write_files(&KgFiles::in_dir(dir, 2))?;
        write_pairs(&dir.join("ref_ent_ids"), &self.pairs)
    }
}
