use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{ArchError, Tensor};
use crate::workload::Dim;

pub const PES: &str = "pes";
pub const MACS_PER_PE: &str = "macs_per_pe";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Dataflow {
    RowStationary,
    WeightStationary,
    OutputStationary,
}

impl Dataflow {
    /// Can `order` (outermost first, possibly a sub-sequence of the six dims)
    /// be completed to a loop order this dataflow admits?
    ///
    /// The stationary tensor's dims sit outermost so the remaining loops
    /// iterate while its tile stays resident; row-stationary keeps `R` and
    /// `Y` adjacent.
    pub fn admits(self, order: &[Dim]) -> bool {
        let pinned_first = |pinned: &[Dim]| {
            let mut left_pinned = false;
            for d in order {
                if pinned.contains(d) {
                    if left_pinned {
                        return false;
                    }
                } else {
                    left_pinned = true;
                }
            }
            true
        };
        match self {
            Dataflow::WeightStationary => pinned_first(&[Dim::C, Dim::K, Dim::R, Dim::S]),
            Dataflow::OutputStationary => pinned_first(&[Dim::K, Dim::Y, Dim::X]),
            Dataflow::RowStationary => {
                let r = order.iter().position(|&d| d == Dim::R);
                let y = order.iter().position(|&d| d == Dim::Y);
                match (r, y) {
                    (Some(r), Some(y)) => r.abs_diff(y) == 1,
                    _ => true,
                }
            }
        }
    }
}

impl fmt::Display for Dataflow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Dataflow::RowStationary => "ROW_STATIONARY",
            Dataflow::WeightStationary => "WEIGHT_STATIONARY",
            Dataflow::OutputStationary => "OUTPUT_STATIONARY",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    /// Shared by the whole PE array.
    Global,
    /// Replicated in every PE; sized per PE.
    PerPe,
}

/// On-chip storage level. Its maximum size is the free parameter with the
/// same name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BufferLevel {
    pub name: String,
    pub scope: Scope,
    pub holds: Vec<Tensor>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AreaCoeffs {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pe_area_mm2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub buffer_area_mm2_per_byte: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelEnergy {
    pub base_pj_per_byte: f64,
    pub ref_capacity_bytes: f64,
}

/// Wire form of a template.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateSpec {
    pub id: String,
    pub dataflow: Dataflow,
    pub free_params: BTreeMap<String, u64>,
    pub buffer_levels: Vec<BufferLevel>,
    #[serde(default)]
    pub area_coeffs: AreaCoeffs,
    #[serde(default)]
    pub energy_coeffs: BTreeMap<String, LevelEnergy>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FreeParam<'a> {
    pub name: &'a str,
    pub max_value: u64,
}

/// A validated sub-accelerator template.
///
/// Free parameters are kept in name order; parameter vectors elsewhere in
/// the crate (instance values, requirement records) use this order.
#[derive(Debug, Clone, PartialEq)]
pub struct SubAcceleratorTemplate {
    pub id: String,
    pub dataflow: Dataflow,
    pub buffer_levels: Vec<BufferLevel>,
    pub area_coeffs: AreaCoeffs,
    pub energy_coeffs: BTreeMap<String, LevelEnergy>,
    param_names: Vec<String>,
    param_max: Vec<u64>,
    pes_param: usize,
    macs_param: Option<usize>,
    level_param: Vec<usize>,
    pe_level_of: [usize; 3],
    global_level_of: [Option<usize>; 3],
}

impl SubAcceleratorTemplate {
    pub fn from_spec(spec: TemplateSpec) -> Result<Self, ArchError> {
        let bad = |reason: String| ArchError::InvalidTemplate {
            template: spec.id.clone(),
            reason,
        };
        if spec.id.is_empty() {
            return Err(bad("empty template id".into()));
        }
        for (name, &max) in &spec.free_params {
            if max < 1 {
                return Err(bad(format!("free parameter `{name}` has max_value < 1")));
            }
        }
        let param_names: Vec<String> = spec.free_params.keys().cloned().collect();
        let param_max: Vec<u64> = spec.free_params.values().copied().collect();
        let find = |name: &str| param_names.iter().position(|n| n == name);
        let pes_param = find(PES).ok_or_else(|| bad(format!("missing `{PES}` parameter")))?;
        let macs_param = find(MACS_PER_PE);

        if spec.buffer_levels.is_empty() {
            return Err(bad("no buffer levels".into()));
        }
        if spec.buffer_levels.last().map(|l| l.scope) != Some(Scope::PerPe) {
            return Err(bad("innermost buffer level must be per-PE storage".into()));
        }
        let mut level_param = Vec::with_capacity(spec.buffer_levels.len());
        let mut pe_level_of = [usize::MAX; 3];
        let mut global_level_of = [None; 3];
        for (li, level) in spec.buffer_levels.iter().enumerate() {
            let p = find(&level.name).ok_or_else(|| {
                bad(format!("buffer level `{}` has no size parameter", level.name))
            })?;
            if p == pes_param || Some(p) == macs_param {
                return Err(bad(format!("buffer level named `{}`", level.name)));
            }
            if spec.free_params[&level.name] < level.holds.len() as u64 {
                return Err(bad(format!(
                    "buffer level `{}` cannot hold one word per tensor",
                    level.name
                )));
            }
            level_param.push(p);
            for &t in &level.holds {
                let slot = t.index();
                match level.scope {
                    Scope::PerPe if pe_level_of[slot] != usize::MAX => {
                        return Err(bad(format!("{t:?} held by two per-PE levels")))
                    }
                    Scope::PerPe => pe_level_of[slot] = li,
                    Scope::Global if global_level_of[slot].is_some() => {
                        return Err(bad(format!("{t:?} held by two global levels")))
                    }
                    Scope::Global => global_level_of[slot] = Some(li),
                }
            }
        }
        // Every parameter must size a resource so area stays strictly
        // monotone in it.
        for (p, name) in param_names.iter().enumerate() {
            if p != pes_param && Some(p) != macs_param && !level_param.contains(&p) {
                return Err(bad(format!("free parameter `{name}` sizes no resource")));
            }
        }
        if let Some(t) = Tensor::ALL.iter().find(|t| pe_level_of[t.index()] == usize::MAX) {
            return Err(bad(format!("{t:?} not held by any per-PE level")));
        }
        for name in spec.energy_coeffs.keys() {
            if !spec.buffer_levels.iter().any(|l| &l.name == name) {
                return Err(bad(format!("energy coefficients for unknown level `{name}`")));
            }
        }
        Ok(SubAcceleratorTemplate {
            id: spec.id,
            dataflow: spec.dataflow,
            buffer_levels: spec.buffer_levels,
            area_coeffs: spec.area_coeffs,
            energy_coeffs: spec.energy_coeffs,
            param_names,
            param_max,
            pes_param,
            macs_param,
            level_param,
            pe_level_of,
            global_level_of,
        })
    }

    pub fn to_spec(&self) -> TemplateSpec {
        TemplateSpec {
            id: self.id.clone(),
            dataflow: self.dataflow,
            free_params: self
                .param_names
                .iter()
                .cloned()
                .zip(self.param_max.iter().copied())
                .collect(),
            buffer_levels: self.buffer_levels.clone(),
            area_coeffs: self.area_coeffs,
            energy_coeffs: self.energy_coeffs.clone(),
        }
    }

    pub fn free_params(&self) -> impl Iterator<Item = FreeParam<'_>> {
        self.param_names
            .iter()
            .zip(&self.param_max)
            .map(|(name, &max_value)| FreeParam { name, max_value })
    }

    pub fn num_params(&self) -> usize {
        self.param_names.len()
    }

    pub fn param_names(&self) -> &[String] {
        &self.param_names
    }

    pub fn param_max(&self) -> &[u64] {
        &self.param_max
    }

    pub fn max_pes(&self) -> u64 {
        self.param_max[self.pes_param]
    }

    pub fn max_macs_per_pe(&self) -> u64 {
        self.macs_param.map_or(1, |p| self.param_max[p])
    }

    pub fn pes_param(&self) -> usize {
        self.pes_param
    }

    pub fn macs_param(&self) -> Option<usize> {
        self.macs_param
    }

    /// Parameter index holding the size of buffer level `level`.
    pub fn level_param(&self, level: usize) -> usize {
        self.level_param[level]
    }

    pub fn level_max_bytes(&self, level: usize) -> u64 {
        self.param_max[self.level_param[level]]
    }

    /// Per-PE level that feeds `t` to the MACs.
    pub fn pe_level_of(&self, t: Tensor) -> usize {
        self.pe_level_of[t.index()]
    }

    /// Shared level staging `t`, if any; otherwise it streams from DRAM.
    pub fn global_level_of(&self, t: Tensor) -> Option<usize> {
        self.global_level_of[t.index()]
    }

    /// Copy of this template with every maximum multiplied by `factor`.
    pub fn scaled(&self, factor: u64) -> Self {
        let mut t = self.clone();
        for m in &mut t.param_max {
            *m = m.saturating_mul(factor);
        }
        t
    }
}

/// Ordered set of templates, addressed by position.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateLibrary {
    templates: Vec<SubAcceleratorTemplate>,
}

impl TemplateLibrary {
    pub fn new(templates: Vec<SubAcceleratorTemplate>) -> Result<Self, ArchError> {
        if templates.is_empty() {
            return Err(ArchError::EmptyLibrary);
        }
        for (i, t) in templates.iter().enumerate() {
            if templates[..i].iter().any(|o| o.id == t.id) {
                return Err(ArchError::InvalidTemplate {
                    template: t.id.clone(),
                    reason: "duplicate template id".into(),
                });
            }
        }
        Ok(TemplateLibrary { templates })
    }

    pub fn parse(document: &str) -> Result<Self, ArchError> {
        let specs: Vec<TemplateSpec> =
            serde_json::from_str(document).map_err(|e| ArchError::Schema(e.to_string()))?;
        let templates = specs
            .into_iter()
            .map(SubAcceleratorTemplate::from_spec)
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(templates)
    }

    pub fn to_json(&self) -> String {
        let specs: Vec<TemplateSpec> = self.templates.iter().map(|t| t.to_spec()).collect();
        serde_json::to_string_pretty(&specs).expect("template specs serialize")
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn get(&self, index: usize) -> &SubAcceleratorTemplate {
        &self.templates[index]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, SubAcceleratorTemplate> {
        self.templates.iter()
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.templates.iter().position(|t| t.id == id)
    }

    pub fn find(&self, id: &str) -> Result<&SubAcceleratorTemplate, ArchError> {
        self.position(id)
            .map(|i| &self.templates[i])
            .ok_or_else(|| ArchError::UnknownTemplate(id.to_string()))
    }

    /// Sub-library with only the named templates, in the given order.
    pub fn restrict(&self, ids: &[&str]) -> Result<Self, ArchError> {
        let picked = ids
            .iter()
            .map(|id| self.find(id).cloned())
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(picked)
    }
}

impl<'a> IntoIterator for &'a TemplateLibrary {
    type Item = &'a SubAcceleratorTemplate;
    type IntoIter = std::slice::Iter<'a, SubAcceleratorTemplate>;

    fn into_iter(self) -> Self::IntoIter {
        self.templates.iter()
    }
}
