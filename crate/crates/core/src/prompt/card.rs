use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::kg::{EntityId, KnowledgeGraph, DEFAULT_TUPLE_CAP};

/// Placeholder for masked-out card fields.
pub const MASK: &str = "[MASK]";

/// How an entity is presented to the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CardOptions {
    pub tuple_cap: usize,
    /// Render the code literal (`Entity(...)`); otherwise a plain record.
    pub code: bool,
    pub names: bool,
    pub structure: bool,
    pub times: bool,
    pub descriptions: bool,
}

impl Default for CardOptions {
    fn default() -> Self {
        Self {
            tuple_cap: DEFAULT_TUPLE_CAP,
            code: true,
            names: true,
            structure: true,
            times: true,
            descriptions: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CardTuple {
    pub head: String,
    pub relation: String,
    pub tail: String,
    pub start: String,
    pub end: String,
}

impl CardTuple {
    fn render(&self) -> String {
        format!("({}, {}, {}, {}, {})", self.head, self.relation, self.tail, self.start, self.end)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityCard {
    pub name: String,
    pub id: String,
    pub description: String,
    pub tuples: Vec<CardTuple>,
}

/// Escapes a value for a single-quoted literal.
pub fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('\'');
    for c in s.chars() {
        if c == '\'' || c == '\\' {
            out.push('\\');
        }
        out.push(c);
    }
    out.push('\'');
    out
}

impl EntityCard {
    pub fn new(name: impl Into<String>, id: impl Into<String>, description: impl Into<String>, tuples: Vec<CardTuple>) -> Self {
        Self {
            name: name.into(),
            id: id.into(),
            description: description.into(),
            tuples,
        }
    }

    /// Builds the card for `e`, applying the masks in `opts`. Surface names
    /// are used verbatim; the description is dropped when descriptions are
    /// switched off.
    pub fn from_kg(kg: &KnowledgeGraph, e: EntityId, description: &str, opts: &CardOptions) -> Result<Self> {
        let own = kg.entity_name(e).ok_or(crate::error::Error::UnknownEntity(e.0))?;
        let label = |x: EntityId| -> String {
            if (x == e && !opts.names) || (x != e && !opts.structure) {
                MASK.to_string()
            } else {
                kg.entity_name(x).unwrap_or_default().to_string()
            }
        };
        let tuples = kg
            .entity_tuples(e, opts.tuple_cap)?
            .into_iter()
            .map(|f| CardTuple {
                head: label(f.head),
                relation: if opts.structure {
                    kg.relation_name(f.relation).unwrap_or_default().to_string()
                } else {
                    MASK.to_string()
                },
                tail: label(f.tail),
                start: if opts.times { f.start.to_string() } else { "~".into() },
                end: if opts.times { f.end.to_string() } else { "~".into() },
            })
            .collect();
        Ok(Self {
            name: if opts.names { own.to_string() } else { String::new() },
            id: e.0.to_string(),
            description: if opts.descriptions { description.to_string() } else { String::new() },
            tuples,
        })
    }

    fn tuple_list(&self) -> String {
        self.tuples.iter().map(CardTuple::render).collect::<Vec<_>>().join(", ")
    }

    /// `Entity('<name>', '<id>', '<description>', [(h, r, t, ts, te), ...])`
    pub fn render_code(&self) -> String {
        format!(
            "Entity({}, {}, {}, [{}])",
            quote(&self.name),
            quote(&self.id),
            quote(&self.description),
            self.tuple_list()
        )
    }

    /// The same fields as a labelled record, for prompts without the class.
    pub fn render_plain(&self) -> String {
        format!(
            "name: {}, id: {}, description: {}, tuples: [{}]",
            quote(&self.name),
            quote(&self.id),
            quote(&self.description),
            self.tuple_list()
        )
    }

    pub fn render(&self, code: bool) -> String {
        if code {
            self.render_code()
        } else {
            self.render_plain()
        }
    }
}
