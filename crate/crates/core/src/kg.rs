//! Knowledge graphs, their tab-separated dataset files, and the entity
//! accessors that back the code-style entity cards shown to the chat model.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default number of tuples carried on an entity card.
pub const DEFAULT_TUPLE_CAP: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RelationId(pub u64);

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl fmt::Display for RelationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// A calendar stamp with year, month or day resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CalendarDate {
    pub year: i32,
    pub month: Option<u8>,
    pub day: Option<u8>,
}

impl CalendarDate {
    /// Fractional years: `year + (month - 1) / 12`, days refine within the month.
    pub fn fractional_year(&self) -> f64 {
        let month = self.month.map_or(0.0, |m| f64::from(m - 1) / 12.0);
        let day = self.day.map_or(0.0, |d| f64::from(d - 1) / (12.0 * 31.0));
        f64::from(self.year) + month + day
    }
}

/// A fact time bound. `~` in the dataset files maps to [`Timestamp::Unknown`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Timestamp {
    #[default]
    Unknown,
    Known(CalendarDate),
}

impl Timestamp {
    pub fn is_known(&self) -> bool {
        matches!(self, Timestamp::Known(_))
    }

    pub fn fractional_year(&self) -> Option<f64> {
        match self {
            Timestamp::Unknown => None,
            Timestamp::Known(d) => Some(d.fractional_year()),
        }
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Timestamp::Unknown => f.write_str("~"),
            Timestamp::Known(d) => {
                if d.year < 0 {
                    f.write_str("-")?;
                }
                write!(f, "{:04}", d.year.unsigned_abs())?;
                if let Some(m) = d.month {
                    write!(f, "-{m:02}")?;
                }
                if let Some(day) = d.day {
                    write!(f, "-{day:02}")?;
                }
                Ok(())
            }
        }
    }
}

impl FromStr for Timestamp {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let s = s.trim();
        if s == "~" {
            return Ok(Timestamp::Unknown);
        }
        let (negative, body) = match s.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, s),
        };
        let mut parts = body.split('-');
        let year: i32 = parts
            .next()
            .filter(|p| !p.is_empty() && p.bytes().all(|b| b.is_ascii_digit()))
            .and_then(|p| p.parse().ok())
            .ok_or_else(|| format!("bad timestamp {s:?}"))?;
        let year = if negative { -year } else { year };
        let mut field = |max: u8| -> std::result::Result<Option<u8>, String> {
            match parts.next() {
                None => Ok(None),
                Some(p) => match p.parse::<u8>() {
                    Ok(v) if (1..=max).contains(&v) => Ok(Some(v)),
                    _ => Err(format!("bad timestamp {s:?}")),
                },
            }
        };
        let month = field(12)?;
        let day = field(31)?;
        if parts.next().is_some() || (day.is_some() && month.is_none()) {
            return Err(format!("bad timestamp {s:?}"));
        }
        Ok(Timestamp::Known(CalendarDate { year, month, day }))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Fact {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
    pub start: Timestamp,
    pub end: Timestamp,
}

impl Fact {
    pub fn new(head: EntityId, relation: RelationId, tail: EntityId) -> Self {
        Self {
            head,
            relation,
            tail,
            start: Timestamp::Unknown,
            end: Timestamp::Unknown,
        }
    }

    pub fn with_times(mut self, start: Timestamp, end: Timestamp) -> Self {
        self.start = start;
        self.end = end;
        self
    }

    pub fn is_self_loop(&self) -> bool {
        self.head == self.tail
    }

    /// The other endpoint as seen from `e` (the tail when `e` is the head).
    pub fn counterpart(&self, e: EntityId) -> EntityId {
        if self.head == e {
            self.tail
        } else {
            self.head
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeGraph {
    name: String,
    entities: Vec<(EntityId, String)>,
    entity_index: HashMap<EntityId, usize>,
    relations: Vec<(RelationId, String)>,
    relation_index: HashMap<RelationId, usize>,
    facts: Vec<Fact>,
    adjacency: Vec<Vec<usize>>,
    temporal: bool,
}

impl KnowledgeGraph {
    /// Builds a graph, checking ids and time bounds and indexing incident facts.
    pub fn new(
        name: impl Into<String>,
        mut entities: Vec<(EntityId, String)>,
        mut relations: Vec<(RelationId, String)>,
        facts: Vec<Fact>,
    ) -> Result<Self> {
        entities.sort_by_key(|(id, _)| *id);
        relations.sort_by_key(|(id, _)| *id);
        let mut entity_index = HashMap::with_capacity(entities.len());
        for (i, (id, _)) in entities.iter().enumerate() {
            if entity_index.insert(*id, i).is_some() {
                return Err(Error::Integrity(format!("duplicate entity id {id}")));
            }
        }
        let mut relation_index = HashMap::with_capacity(relations.len());
        for (i, (id, _)) in relations.iter().enumerate() {
            if relation_index.insert(*id, i).is_some() {
                return Err(Error::Integrity(format!("duplicate relation id {id}")));
            }
        }

        let mut adjacency = vec![Vec::new(); entities.len()];
        let mut temporal = false;
        for (fi, fact) in facts.iter().enumerate() {
            let h = *entity_index.get(&fact.head).ok_or_else(|| {
                Error::Integrity(format!("fact {fi} references unknown entity {}", fact.head))
            })?;
            let t = *entity_index.get(&fact.tail).ok_or_else(|| {
                Error::Integrity(format!("fact {fi} references unknown entity {}", fact.tail))
            })?;
            if !relation_index.contains_key(&fact.relation) {
                return Err(Error::Integrity(format!(
                    "fact {fi} references unknown relation {}",
                    fact.relation
                )));
            }
            if let (Some(s), Some(e)) = (fact.start.fractional_year(), fact.end.fractional_year()) {
                if s > e {
                    return Err(Error::Integrity(format!(
                        "fact {fi} starts ({}) after it ends ({})",
                        fact.start, fact.end
                    )));
                }
            }
            temporal |= fact.start.is_known() || fact.end.is_known();
            adjacency[h].push(fi);
            if t != h {
                adjacency[t].push(fi);
            }
        }

        Ok(Self {
            name: name.into(),
            entities,
            entity_index,
            relations,
            relation_index,
            facts,
            adjacency,
            temporal,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    pub fn facts(&self) -> &[Fact] {
        &self.facts
    }

    /// True iff at least one fact carries a known timestamp.
    pub fn is_temporal(&self) -> bool {
        self.temporal
    }

    /// Entity ids in ascending order; this is also embedding row order.
    pub fn entity_ids(&self) -> impl ExactSizeIterator<Item = EntityId> + '_ {
        self.entities.iter().map(|(id, _)| *id)
    }

    pub fn relations(&self) -> &[(RelationId, String)] {
        &self.relations
    }

    pub fn contains(&self, e: EntityId) -> bool {
        self.entity_index.contains_key(&e)
    }

    /// Dense row index of an entity.
    pub fn index_of(&self, e: EntityId) -> Option<usize> {
        self.entity_index.get(&e).copied()
    }

    pub fn id_at(&self, index: usize) -> EntityId {
        self.entities[index].0
    }

    pub fn entity_name(&self, e: EntityId) -> Option<&str> {
        self.index_of(e).map(|i| self.entities[i].1.as_str())
    }

    pub fn relation_name(&self, r: RelationId) -> Option<&str> {
        self.relation_index
            .get(&r)
            .map(|&i| self.relations[i].1.as_str())
    }

    fn require(&self, e: EntityId) -> Result<usize> {
        self.index_of(e).ok_or(Error::UnknownEntity(e.0))
    }

    /// Indices (into [`facts`](Self::facts)) of the facts touching `e`, in file order.
    pub fn incident(&self, e: EntityId) -> Result<&[usize]> {
        Ok(&self.adjacency[self.require(e)?])
    }

    pub fn degree(&self, e: EntityId) -> usize {
        self.index_of(e).map_or(0, |i| self.adjacency[i].len())
    }

    pub(crate) fn incident_by_index(&self, index: usize) -> &[usize] {
        &self.adjacency[index]
    }

    /// Neighbours as the card's `get_neighbors()` computes them: the tail when
    /// `e` is the head, the head otherwise. Sorted by id.
    pub fn neighbors(&self, e: EntityId) -> Result<Vec<EntityId>> {
        let set: BTreeSet<EntityId> = self
            .incident(e)?
            .iter()
            .map(|&fi| self.facts[fi].counterpart(e))
            .collect();
        Ok(set.into_iter().collect())
    }

    /// One relation name per incident fact, duplicates kept.
    pub fn relations_of(&self, e: EntityId) -> Result<Vec<&str>> {
        Ok(self
            .incident(e)?
            .iter()
            .map(|&fi| self.relation_name(self.facts[fi].relation).unwrap_or_default())
            .collect())
    }

    /// One `(start, end)` pair per incident fact.
    pub fn time_info(&self, e: EntityId) -> Result<Vec<(Timestamp, Timestamp)>> {
        Ok(self
            .incident(e)?
            .iter()
            .map(|&fi| (self.facts[fi].start, self.facts[fi].end))
            .collect())
    }

    /// At most `cap` incident facts, preferring well-connected counterparts.
    ///
    /// Ordered by counterpart degree descending, then fact index ascending.
    pub fn entity_tuples(&self, e: EntityId, cap: usize) -> Result<Vec<&Fact>> {
        let mut picked: Vec<(usize, usize)> = self
            .incident(e)?
            .iter()
            .map(|&fi| (self.degree(self.facts[fi].counterpart(e)), fi))
            .collect();
        picked.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        Ok(picked
            .into_iter()
            .take(cap)
            .map(|(_, fi)| &self.facts[fi])
            .collect())
    }

    /// Writes the graph as `triples`, `ent_ids` and `rel_ids` files.
    ///
    /// Temporal graphs are written with five columns.
    pub fn write_files(&self, files: &KgFiles) -> Result<()> {
        let mut triples = create(&files.triples)?;
        for f in &self.facts {
            let line = if self.temporal {
                format!("{}\t{}\t{}\t{}\t{}\n", f.head, f.relation, f.tail, f.start, f.end)
            } else {
                format!("{}\t{}\t{}\n", f.head, f.relation, f.tail)
            };
            write_all(&mut triples, &files.triples, line.as_bytes())?;
        }
        flush(triples, &files.triples)?;

        let mut names = create(&files.entity_names)?;
        for (id, name) in &self.entities {
            write_all(&mut names, &files.entity_names, format!("{id}\t{name}\n").as_bytes())?;
        }
        flush(names, &files.entity_names)?;

        if let Some(path) = &files.relation_names {
            let mut rels = create(path)?;
            for (id, name) in &self.relations {
                write_all(&mut rels, path, format!("{id}\t{name}\n").as_bytes())?;
            }
            flush(rels, path)?;
        }
        Ok(())
    }
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn write_all(w: &mut impl Write, path: &Path, bytes: &[u8]) -> Result<()> {
    w.write_all(bytes).map_err(|e| Error::io(path, e))
}

fn flush(mut w: BufWriter<fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// Paths of one graph's dataset files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KgFiles {
    pub triples: PathBuf,
    pub entity_names: PathBuf,
    #[serde(default)]
    pub relation_names: Option<PathBuf>,
}

impl KgFiles {
    /// The usual `triples_N`, `ent_ids_N`, `rel_ids_N` layout inside `dir`.
    pub fn in_dir(dir: &Path, side: u8) -> Self {
        Self {
            triples: dir.join(format!("triples_{side}")),
            entity_names: dir.join(format!("ent_ids_{side}")),
            relation_names: Some(dir.join(format!("rel_ids_{side}"))),
        }
    }
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Non-blank lines with their 1-based line numbers, CR stripped.
pub(crate) fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)))
        .filter(|(_, l)| !l.trim().is_empty())
}

fn parse_id(path: &Path, line: usize, field: &str) -> Result<u64> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::parse(path, line, format!("expected a non-negative integer id, got {field:?}")))
}

fn read_id_names(path: &Path) -> Result<Vec<(u64, String)>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (line, l) in data_lines(&text) {
        let (id, name) = l
            .split_once('\t')
            .ok_or_else(|| Error::parse(path, line, "expected \"id<TAB>name\""))?;
        out.push((parse_id(path, line, id)?, name.to_string()));
    }
    Ok(out)
}

/// Loads one graph from a triple file and an `id<TAB>name` entity file.
///
/// Relation names default to the decimal relation id.
pub fn load_kg(triples: &Path, entity_names: &Path, temporal: bool) -> Result<KnowledgeGraph> {
    load_kg_files(
        &KgFiles {
            triples: triples.to_path_buf(),
            entity_names: entity_names.to_path_buf(),
            relation_names: None,
        },
        temporal,
    )
}

pub fn load_kg_files(files: &KgFiles, temporal: bool) -> Result<KnowledgeGraph> {
    let path = files.triples.as_path();
    let text = read_text(path)?;
    let expected = if temporal { 5 } else { 3 };
    let mut facts = Vec::new();
    for (line, l) in data_lines(&text) {
        let fields: Vec<&str> = l.split('\t').collect();
        if fields.len() != expected {
            return Err(Error::parse(
                path,
                line,
                format!("expected {expected} tab-separated fields, found {}", fields.len()),
            ));
        }
        let mut fact = Fact::new(
            EntityId(parse_id(path, line, fields[0])?),
            RelationId(parse_id(path, line, fields[1])?),
            EntityId(parse_id(path, line, fields[2])?),
        );
        if temporal {
            let start = fields[3].parse().map_err(|m: String| Error::parse(path, line, m))?;
            let end = fields[4].parse().map_err(|m: String| Error::parse(path, line, m))?;
            fact = fact.with_times(start, end);
        }
        facts.push(fact);
    }

    let entities: Vec<(EntityId, String)> = read_id_names(&files.entity_names)?
        .into_iter()
        .map(|(id, n)| (EntityId(id), n))
        .collect();

    let relations: Vec<(RelationId, String)> = match &files.relation_names {
        Some(p) if p.exists() => read_id_names(p)?
            .into_iter()
            .map(|(id, n)| (RelationId(id), n))
            .collect(),
        _ => {
            let ids: BTreeSet<RelationId> = facts.iter().map(|f| f.relation).collect();
            ids.into_iter().map(|r| (r, r.0.to_string())).collect()
        }
    };

    let name = files
        .triples
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    KnowledgeGraph::new(name, entities, relations, facts)
}

/// Gold entity pairs split into training and test portions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorSet {
    pub pairs: Vec<(EntityId, EntityId)>,
    pub train: Vec<(EntityId, EntityId)>,
    pub test: Vec<(EntityId, EntityId)>,
}

pub const DEFAULT_TRAIN_RATIO: f64 = 0.3;

impl AnchorSet {
    /// Shuffles with a seeded RNG and takes the first `floor(ratio * n)` pairs for training.
    pub fn split(pairs: Vec<(EntityId, EntityId)>, seed: u64, train_ratio: f64) -> Result<Self> {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;

        if !(train_ratio > 0.0 && train_ratio < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "train ratio must lie in (0, 1), got {train_ratio}"
            )));
        }
        let mut left = HashSet::new();
        let mut right = HashSet::new();
        for (l, r) in &pairs {
            if !left.insert(*l) {
                return Err(Error::Integrity(format!("entity {l} appears twice on the left side")));
            }
            if !right.insert(*r) {
                return Err(Error::Integrity(format!("entity {r} appears twice on the right side")));
            }
        }
        let mut shuffled = pairs.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let n_train = (train_ratio * shuffled.len() as f64).floor() as usize;
        let test = shuffled.split_off(n_train);
        Ok(Self {
            pairs,
            train: shuffled,
            test,
        })
    }

    /// Checks that every left id lives in `kg1` and every right id in `kg2`.
    pub fn validate(&self, kg1: &KnowledgeGraph, kg2: &KnowledgeGraph) -> Result<()> {
        for (l, r) in &self.pairs {
            if !kg1.contains(*l) {
                return Err(Error::Integrity(format!("anchor entity {l} missing from {}", kg1.name())));
            }
            if !kg2.contains(*r) {
                return Err(Error::Integrity(format!("anchor entity {r} missing from {}", kg2.name())));
            }
        }
        Ok(())
    }

    pub fn gold(&self) -> HashMap<EntityId, EntityId> {
        self.pairs.iter().copied().collect()
    }
}

pub fn read_pairs(path: &Path) -> Result<Vec<(EntityId, EntityId)>> {
    let text = read_text(path)?;
    let mut pairs = Vec::new();
    for (line, l) in data_lines(&text) {
        let fields: Vec<&str> = l.split('\t').collect();
        if fields.len() != 2 {
            return Err(Error::parse(path, line, "expected \"id1<TAB>id2\""));
        }
        pairs.push((
            EntityId(parse_id(path, line, fields[0])?),
            EntityId(parse_id(path, line, fields[1])?),
        ));
    }
    Ok(pairs)
}

pub fn load_anchors(path: &Path, split_seed: u64, train_ratio: f64) -> Result<AnchorSet> {
    AnchorSet::split(read_pairs(path)?, split_seed, train_ratio)
}

pub fn write_pairs(path: &Path, pairs: &[(EntityId, EntityId)]) -> Result<()> {
    let mut w = create(path)?;
    for (l, r) in pairs {
        write_all(&mut w, path, format!("{l}\t{r}\n").as_bytes())?;
    }
    flush(w, path)
}
