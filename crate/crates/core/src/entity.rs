//! Entity-sequence extraction from SQL and generator input formatting.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::schema::{humanize, EntitySequence, SchemaGraph};
use crate::sql::{parse_query, resolve};

/// Entities referenced by `sql`, in first-appearance order with repeats
/// removed. `*` is never an entity.
pub fn extract_entity_sequence(sql: &str, schema: &SchemaGraph) -> Result<EntitySequence> {
    let query = parse_query(sql)?;
    let resolution = resolve(&query, Some(schema))?;
    let mut seen = HashSet::new();
    let entities = resolution
        .entities
        .into_iter()
        .filter(|e| seen.insert(e.clone()))
        .collect();
    EntitySequence::new(schema.db_id.clone(), entities, true)
}

/// Renders `db name : table column type | table column type | ...` with
/// underscores in every name replaced by spaces.
pub fn format_generator_input(seq: &EntitySequence, schema: &SchemaGraph) -> Result<String> {
    if seq.entities.is_empty() {
        return Err(Error::InvalidArgument(
            "generator input needs at least one entity".into(),
        ));
    }
    let mut segments = Vec::with_capacity(seq.entities.len());
    for e in &seq.entities {
        let idx = schema.entity_index(e).ok_or_else(|| Error::Unresolved {
            db_id: schema.db_id.clone(),
            reference: e.to_string(),
        })?;
        let col = &schema.columns[idx];
        segments.push(format!(
            "{} {} {}",
            humanize(&schema.tables[col.table]),
            humanize(&col.name),
            col.ty.as_str()
        ));
    }
    Ok(format!("{} : {}", humanize(&seq.db_name), segments.join(" | ")))
}
