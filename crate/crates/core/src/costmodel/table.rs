//! Externally supplied per-mapping costs that override the analytical model.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{CostError, MappingCost};
use crate::arch::TemplateLibrary;
use crate::workload::LayerShape;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CostTableKey {
    /// `LayerShape::class_key` of the layer class.
    pub layer_class: String,
    pub template: String,
    /// Position in the catalog's mapping list for (class, template).
    pub mapping_index: usize,
}

/// Replacement values; absent fields keep the analytical estimate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostOverride {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_cycles: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub energy_pj: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dram_bytes: Option<u64>,
}

impl CostOverride {
    pub fn exact(cost: &MappingCost) -> Self {
        CostOverride {
            latency_cycles: Some(cost.latency_cycles),
            energy_pj: Some(cost.energy_pj),
            dram_bytes: Some(cost.dram_bytes),
        }
    }

    pub fn apply(&self, cost: &mut MappingCost) {
        if let Some(v) = self.latency_cycles {
            cost.latency_cycles = v;
        }
        if let Some(v) = self.energy_pj {
            cost.energy_pj = v;
        }
        if let Some(v) = self.dram_bytes {
            cost.dram_bytes = v;
        }
    }
}

/// Wire form of one table row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostTableEntry {
    pub layer_class: String,
    pub template: String,
    pub mapping_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_cycles: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub energy_pj: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dram_bytes: Option<u64>,
}

impl CostTableEntry {
    pub fn cost(&self) -> CostOverride {
        CostOverride {
            latency_cycles: self.latency_cycles,
            energy_pj: self.energy_pj,
            dram_bytes: self.dram_bytes,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CostTableDoc {
    entries: Vec<CostTableEntry>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CostTable {
    entries: BTreeMap<CostTableKey, CostOverride>,
}

impl CostTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn insert(&mut self, key: CostTableKey, cost: CostOverride) {
        self.entries.insert(key, cost);
    }

    pub fn get(&self, layer_class: &str, template: &str, mapping_index: usize) -> Option<&CostOverride> {
        // BTreeMap lookups need an owned key; tables are small.
        self.entries.get(&CostTableKey {
            layer_class: layer_class.to_string(),
            template: template.to_string(),
            mapping_index,
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = (&CostTableKey, &CostOverride)> {
        self.entries.iter()
    }

    pub fn to_json(&self) -> String {
        let doc = CostTableDoc {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| CostTableEntry {
                    layer_class: k.layer_class.clone(),
                    template: k.template.clone(),
                    mapping_index: k.mapping_index,
                    latency_cycles: v.latency_cycles,
                    energy_pj: v.energy_pj,
                    dram_bytes: v.dram_bytes,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("cost table serializes")
    }
}

/// Parses a cost table, checking every row against the known templates and
/// layer classes. Mapping indices are checked when the catalog applies it.
pub fn load_external_cost_table(
    document: &str,
    templates: &TemplateLibrary,
    classes: &[LayerShape],
) -> Result<CostTable, CostError> {
    let doc: CostTableDoc =
        serde_json::from_str(document).map_err(|e| CostError::Schema(e.to_string()))?;
    let mut table = CostTable::new();
    for e in doc.entries {
        templates.find(&e.template)?;
        if !classes.iter().any(|c| c.class_key() == e.layer_class) {
            return Err(CostError::UnknownClass(e.layer_class));
        }
        let cost = e.cost();
        if cost.latency_cycles == Some(0) {
            return Err(CostError::Schema(format!(
                "latency_cycles must be >= 1 for {} on {}",
                e.layer_class, e.template
            )));
        }
        if let Some(v) = cost.energy_pj {
            if !(v.is_finite() && v >= 0.0) {
                return Err(CostError::Schema(format!(
                    "energy_pj must be finite and >= 0 for {} on {}",
                    e.layer_class, e.template
                )));
            }
        }
        let key = CostTableKey {
            layer_class: e.layer_class,
            template: e.template,
            mapping_index: e.mapping_index,
        };
        if table.entries.insert(key.clone(), cost).is_some() {
            return Err(CostError::Table(format!(
                "duplicate entry for {} / {} / {}",
                key.layer_class, key.template, key.mapping_index
            )));
        }
    }
    Ok(table)
}
