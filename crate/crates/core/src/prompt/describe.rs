use std::collections::BTreeMap;
use std::path::Path;
use std::sync::RwLock;

use super::{templates, CardOptions, EntityCard};
use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph};
use crate::llm::{ChatClient, ChatMessage};

type Key = (String, u64, String);

/// Generated descriptions keyed by (graph name, entity id, model id).
///
/// Reads run concurrently; inserts take the write lock.
#[derive(Debug, Default)]
pub struct DescriptionCache {
    entries: RwLock<BTreeMap<Key, String>>,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct Row {
    kg: String,
    entity_id: u64,
    model: String,
    text: String,
}

impl DescriptionCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Reads a cache file; a missing file gives an empty cache.
    pub fn load(path: &Path) -> Result<Self> {
        let cache = Self::new();
        if !path.exists() {
            return Ok(cache);
        }
        let mut reader = csv::Reader::from_path(path).map_err(|e| Error::parse(path, 0, e.to_string()))?;
        for (i, row) in reader.deserialize::<Row>().enumerate() {
            let row = row.map_err(|e| Error::parse(path, i + 2, e.to_string()))?;
            cache.insert(&row.kg, EntityId(row.entity_id), &row.model, row.text);
        }
        Ok(cache)
    }

    /// Writes all entries, sorted by key.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut writer = csv::Writer::from_path(path).map_err(|e| Error::Integrity(format!("{}: {e}", path.display())))?;
        for ((kg, entity_id, model), text) in self.entries.read().expect("cache lock").iter() {
            writer
                .serialize(Row {
                    kg: kg.clone(),
                    entity_id: *entity_id,
                    model: model.clone(),
                    text: text.clone(),
                })
                .map_err(|e| Error::Integrity(format!("{}: {e}", path.display())))?;
        }
        writer.flush().map_err(|e| Error::io(path, e))
    }

    pub fn get(&self, kg: &str, e: EntityId, model: &str) -> Option<String> {
        self.entries
            .read()
            .expect("cache lock")
            .get(&(kg.to_string(), e.0, model.to_string()))
            .cloned()
    }

    pub fn insert(&self, kg: &str, e: EntityId, model: &str, text: String) {
        self.entries
            .write()
            .expect("cache lock")
            .insert((kg.to_string(), e.0, model.to_string()), text);
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Collapses a reply to one trimmed paragraph.
fn one_paragraph(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn render_description_prompt(card: &EntityCard) -> String {
    templates::DESCRIPTION.fill(&[("card", &card.render_code())])
}

/// Returns the cached description of `e`, asking the model on a miss.
///
/// The request carries the system prompt so the model sees the same class
/// definition it is asked about. A failed call yields an empty description.
pub fn generate_description(
    client: &ChatClient,
    system_prompt: &str,
    kg: &KnowledgeGraph,
    e: EntityId,
    cache: &DescriptionCache,
    tuple_cap: usize,
    target: Option<EntityId>,
) -> Result<String> {
    if let Some(hit) = cache.get(kg.name(), e, client.model_id()) {
        return Ok(hit);
    }
    let opts = CardOptions {
        tuple_cap,
        descriptions: false,
        ..CardOptions::default()
    };
    let card = EntityCard::from_kg(kg, e, "", &opts)?;
    let request = client.request(vec![
        ChatMessage::system(system_prompt),
        ChatMessage::user(render_description_prompt(&card)),
    ]);
    match client.chat(target, &request) {
        Ok(reply) => {
            let text = one_paragraph(&reply.content);
            cache.insert(kg.name(), e, client.model_id(), text.clone());
            Ok(text)
        }
        Err(Error::Backend(err)) => {
            log::warn!("description for {} entity {e} failed: {err}; using an empty description", kg.name());
            Ok(String::new())
        }
        Err(other) => Err(other),
    }
}
