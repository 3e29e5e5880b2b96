//! Per-layer mapping search: bounded exhaustive enumeration of the mapspace
//! and Pareto-filtered mapping catalogs per (layer class, template).

use std::collections::HashMap;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::{admitted_orders, ArchError, Dataflow, Mapping, SubAcceleratorTemplate, TemplateLibrary};
use crate::costmodel::{
    cost_unchecked, evaluate_mapping_cost, CostCoefficients, CostError, CostOverride, CostTable,
    MappingCost,
};
use crate::workload::{unique_layers, ApplicationModel, Dim, LayerShape, UniqueLayerClass};

#[derive(Debug, Error, PartialEq)]
pub enum MapperError {
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Arch(#[from] ArchError),
    #[error("catalog file: {0}")]
    Catalog(String),
}

/// `a` dominates `b`: no worse everywhere, strictly better somewhere.
pub fn dominates(a: &[f64], b: &[f64]) -> bool {
    let mut strictly = false;
    for (x, y) in a.iter().zip(b) {
        if x > y {
            return false;
        }
        if x < y {
            strictly = true;
        }
    }
    strictly
}

/// Indices (ascending) of the points no other point dominates.
pub fn pareto_filter<P: AsRef<[f64]>>(points: &[P]) -> Vec<usize> {
    // Visit in lexicographic order: a point can only be dominated by one
    // that sorts before it, and a dominated dominator implies a dominating
    // front member.
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        lex_cmp(points[a].as_ref(), points[b].as_ref()).then(a.cmp(&b))
    });
    let mut front: Vec<usize> = Vec::new();
    for i in order {
        let p = points[i].as_ref();
        if !front.iter().any(|&f| dominates(points[f].as_ref(), p)) {
            front.push(i);
        }
    }
    front.sort_unstable();
    front
}

fn lex_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Equal => continue,
            o => return o,
        }
    }
    std::cmp::Ordering::Equal
}

/// Valid (spatial, tile) pairs for an extent, fewest outer trips first and
/// widest spatial split first within equal trips.
fn factor_choices(extent: u32) -> Vec<(u32, u32)> {
    let mut out = Vec::new();
    for s in (1..=extent).filter(|s| extent % s == 0) {
        for t in (1..=extent / s).filter(|t| (extent / s) % t == 0) {
            out.push((s, t));
        }
    }
    out.sort_by_key(|&(s, t)| (extent / (s * t), std::cmp::Reverse(s)));
    out
}

/// For each set of iterating dims (bit mask over dim indices), the first
/// admitted full order of every distinct reduced order, in lexicographic
/// order of the full orders.
fn orders_by_mask(dataflow: Dataflow) -> &'static [Vec<[Dim; 6]>; 64] {
    static CACHE: [OnceLock<[Vec<[Dim; 6]>; 64]>; 3] = [OnceLock::new(), OnceLock::new(), OnceLock::new()];
    let slot = match dataflow {
        Dataflow::RowStationary => 0,
        Dataflow::WeightStationary => 1,
        Dataflow::OutputStationary => 2,
    };
    CACHE[slot].get_or_init(|| {
        std::array::from_fn(|mask| {
            let mut seen: Vec<Vec<Dim>> = Vec::new();
            let mut out = Vec::new();
            for &order in admitted_orders(dataflow) {
                let reduced: Vec<Dim> = order
                    .iter()
                    .copied()
                    .filter(|d| mask & (1 << d.index()) != 0)
                    .collect();
                if !seen.contains(&reduced) {
                    seen.push(reduced);
                    out.push(order);
                }
            }
            out
        })
    })
}

/// Deterministic enumeration of the valid mappings of a shape on a
/// template.
///
/// Tilings are visited in shells of increasing maximum per-dim choice index
/// (lexicographic within a shell, `C` most significant), so a truncated
/// enumeration still samples every dim's full factor range. Within a
/// tiling, admitted loop orders are visited in lexicographic order and
/// orders that reduce to the same iterating-loop sequence are yielded once.
pub struct MapspaceIter<'a> {
    shape: LayerShape,
    template: &'a SubAcceleratorTemplate,
    budget: usize,
    choices: [Vec<(u32, u32)>; 6],
    orders: &'static [Vec<[Dim; 6]>; 64],
    shell: usize,
    max_shell: usize,
    tuple: Option<[usize; 6]>,
    current: Option<Mapping>,
    order_pos: usize,
    yielded: usize,
    truncated: bool,
    finished: bool,
}

pub fn enumerate_mapspace(
    shape: LayerShape,
    template: &SubAcceleratorTemplate,
    budget: usize,
) -> MapspaceIter<'_> {
    let choices = shape.dims().map(factor_choices);
    let max_shell = choices.iter().map(Vec::len).max().unwrap_or(1) - 1;
    MapspaceIter {
        shape,
        template,
        budget: budget.max(1),
        choices,
        orders: orders_by_mask(template.dataflow),
        shell: 0,
        max_shell,
        tuple: None,
        current: None,
        order_pos: 0,
        yielded: 0,
        truncated: false,
        finished: false,
    }
}

impl MapspaceIter<'_> {
    /// True once the budget stopped the enumeration with valid mappings left.
    pub fn truncated(&self) -> bool {
        self.truncated
    }

    /// Next tiling tuple in shell order.
    fn advance_tuple(&mut self) -> Option<[usize; 6]> {
        loop {
            if self.shell > self.max_shell {
                return None;
            }
            let limits: [usize; 6] =
                std::array::from_fn(|d| self.shell.min(self.choices[d].len() - 1));
            let next = match self.tuple {
                None => Some([0; 6]),
                Some(mut t) => {
                    let mut d = 6;
                    loop {
                        if d == 0 {
                            break None;
                        }
                        d -= 1;
                        if t[d] < limits[d] {
                            t[d] += 1;
                            for v in &mut t[d + 1..] {
                                *v = 0;
                            }
                            break Some(t);
                        }
                    }
                }
            };
            match next {
                Some(t) => {
                    self.tuple = Some(t);
                    if t.iter().copied().max() == Some(self.shell) {
                        return Some(t);
                    }
                }
                None => {
                    self.shell += 1;
                    self.tuple = None;
                }
            }
        }
    }

    fn tiling_fits(&self, m: &Mapping) -> bool {
        let t = self.template;
        let req = m.requirements(t);
        req.lanes <= t.max_pes() * t.max_macs_per_pe()
            && req
                .level_bytes
                .iter()
                .enumerate()
                .all(|(l, &b)| b <= t.level_max_bytes(l))
    }

    fn next_valid(&mut self) -> Option<Mapping> {
        loop {
            if let Some(base) = &self.current {
                let mask = base
                    .trips()
                    .iter()
                    .enumerate()
                    .filter(|(_, &t)| t > 1)
                    .fold(0usize, |acc, (d, _)| acc | 1 << d);
                let orders = &self.orders[mask];
                if self.order_pos < orders.len() {
                    self.order_pos += 1;
                    return Some(Mapping {
                        loop_order: orders[self.order_pos - 1],
                        ..base.clone()
                    });
                }
                self.current = None;
            }
            let tuple = self.advance_tuple()?;
            let mut m = Mapping::unit(self.shape, &self.template.id);
            for d in 0..6 {
                let (s, t) = self.choices[d][tuple[d]];
                m.spatial[d] = s;
                m.tiles[d] = t;
            }
            if self.tiling_fits(&m) {
                self.current = Some(m);
                self.order_pos = 0;
            }
        }
    }
}

impl Iterator for MapspaceIter<'_> {
    type Item = Mapping;

    fn next(&mut self) -> Option<Mapping> {
        if self.finished {
            return None;
        }
        if self.yielded == self.budget {
            self.finished = true;
            self.truncated = self.next_valid().is_some();
            return None;
        }
        match self.next_valid() {
            Some(m) => {
                self.yielded += 1;
                Some(m)
            }
            None => {
                self.finished = true;
                None
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub mapping: Mapping,
    pub cost: MappingCost,
    /// Energy supplied by an external table; not re-estimated at decode.
    pub energy_fixed: bool,
}

impl CatalogEntry {
    pub fn objectives(&self) -> [f64; 3] {
        [
            self.cost.latency_cycles as f64,
            self.cost.energy_pj,
            self.cost.required.area_proxy(),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogOptions {
    /// Valid mappings evaluated per (layer class, template).
    pub budget: usize,
    /// Cap on the Pareto set kept per (layer class, template).
    pub max_front: Option<usize>,
}

impl Default for CatalogOptions {
    fn default() -> Self {
        CatalogOptions {
            budget: 20_000,
            max_front: None,
        }
    }
}

/// Pareto mapping sets for every (layer class, template) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct MappingCatalog {
    classes: Vec<UniqueLayerClass>,
    class_of: Vec<usize>,
    template_ids: Vec<String>,
    entries: Vec<Vec<Vec<CatalogEntry>>>,
    truncated: Vec<Vec<bool>>,
}

impl MappingCatalog {
    pub fn classes(&self) -> &[UniqueLayerClass] {
        &self.classes
    }

    pub fn num_templates(&self) -> usize {
        self.template_ids.len()
    }

    pub fn template_ids(&self) -> &[String] {
        &self.template_ids
    }

    pub fn class_of(&self, layer: usize) -> usize {
        self.class_of[layer]
    }

    /// The Pareto set of a class on a template, sorted by latency, energy.
    pub fn entries(&self, class: usize, template: usize) -> &[CatalogEntry] {
        &self.entries[class][template]
    }

    pub fn for_layer(&self, layer: usize, template: usize) -> &[CatalogEntry] {
        self.entries(self.class_of[layer], template)
    }

    pub fn truncated(&self, class: usize, template: usize) -> bool {
        self.truncated[class][template]
    }

    /// Largest set size over all pairs.
    pub fn max_set_size(&self) -> usize {
        self.entries
            .iter()
            .flat_map(|row| row.iter().map(Vec::len))
            .max()
            .unwrap_or(0)
    }

    /// Keeps only the first `n` entries of every set (the lowest-latency
    /// ones).
    pub fn truncate_sets(&mut self, n: usize) {
        for row in &mut self.entries {
            for set in row {
                set.truncate(n.max(1));
            }
        }
    }

    /// Applies external costs. Keys must name an existing entry.
    pub fn apply_cost_table(&mut self, table: &CostTable) -> Result<(), MapperError> {
        for (key, o) in table.iter() {
            let class = self
                .classes
                .iter()
                .position(|c| c.shape.class_key() == key.layer_class)
                .ok_or_else(|| CostError::UnknownClass(key.layer_class.clone()))?;
            let template = self
                .template_ids
                .iter()
                .position(|t| *t == key.template)
                .ok_or_else(|| ArchError::UnknownTemplate(key.template.clone()))?;
            let set = &mut self.entries[class][template];
            let len = set.len();
            let entry = set.get_mut(key.mapping_index).ok_or_else(|| {
                CostError::Table(format!(
                    "mapping index {} out of range for {} on {} ({} entries)",
                    key.mapping_index,
                    key.layer_class,
                    key.template,
                    len
                ))
            })?;
            o.apply(&mut entry.cost);
            entry.energy_fixed |= o.energy_pj.is_some();
        }
        Ok(())
    }

    /// A table reproducing every entry's current costs.
    pub fn cost_table(&self) -> CostTable {
        let mut table = CostTable::new();
        for (ci, row) in self.entries.iter().enumerate() {
            for (ti, set) in row.iter().enumerate() {
                for (mi, e) in set.iter().enumerate() {
                    table.insert(
                        crate::costmodel::CostTableKey {
                            layer_class: self.classes[ci].shape.class_key(),
                            template: self.template_ids[ti].clone(),
                            mapping_index: mi,
                        },
                        CostOverride::exact(&e.cost),
                    );
                }
            }
        }
        table
    }

    pub fn to_json(&self) -> String {
        let mut rows = Vec::new();
        for (ci, row) in self.entries.iter().enumerate() {
            for (ti, set) in row.iter().enumerate() {
                for (mi, e) in set.iter().enumerate() {
                    rows.push(CatalogRow {
                        layer_class: self.classes[ci].shape.class_key(),
                        template: self.template_ids[ti].clone(),
                        mapping_index: mi,
                        latency_cycles: e.cost.latency_cycles,
                        energy_pj: e.cost.energy_pj,
                        dram_bytes: e.cost.dram_bytes,
                        loop_order: e.mapping.loop_order,
                        spatial: e.mapping.spatial,
                        tiles: e.mapping.tiles,
                    });
                }
            }
        }
        let doc = CatalogDoc {
            templates: self.template_ids.clone(),
            truncated: self
                .truncated
                .iter()
                .enumerate()
                .flat_map(|(ci, row)| {
                    row.iter().enumerate().filter(|(_, &t)| t).map(move |(ti, _)| (ci, ti))
                })
                .map(|(ci, ti)| (self.classes[ci].shape.class_key(), self.template_ids[ti].clone()))
                .collect(),
            entries: rows,
        };
        serde_json::to_string_pretty(&doc).expect("catalog serializes")
    }
}

/// Catalog export row: cost-table fields plus the mapping descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CatalogRow {
    layer_class: String,
    template: String,
    mapping_index: usize,
    latency_cycles: u64,
    energy_pj: f64,
    dram_bytes: u64,
    loop_order: [Dim; 6],
    spatial: [u32; 6],
    tiles: [u32; 6],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CatalogDoc {
    templates: Vec<String>,
    #[serde(default)]
    truncated: Vec<(String, String)>,
    entries: Vec<CatalogRow>,
}

/// Evenly thins a sorted set to `cap` entries, always keeping the
/// minimum-latency, minimum-energy and minimum-area entries.
fn cap_front(set: Vec<CatalogEntry>, cap: usize) -> Vec<CatalogEntry> {
    let n = set.len();
    if n <= cap {
        return set;
    }
    let argmin = |k: usize| {
        (0..n)
            .min_by(|&a, &b| set[a].objectives()[k].total_cmp(&set[b].objectives()[k]).then(a.cmp(&b)))
            .unwrap()
    };
    let mut keep: Vec<usize> = vec![argmin(0), argmin(1), argmin(2)];
    keep.sort_unstable();
    keep.dedup();
    let cap = cap.max(keep.len());
    let mut step = 0;
    let slots = cap - keep.len();
    // Evenly spaced picks over the remaining entries.
    let rest: Vec<usize> = (0..n).filter(|i| !keep.contains(i)).collect();
    while step < slots {
        let pos = if slots == 1 { 0 } else { step * (rest.len() - 1) / (slots - 1) };
        keep.push(rest[pos]);
        step += 1;
    }
    keep.sort_unstable();
    keep.dedup();
    set.into_iter()
        .enumerate()
        .filter(|(i, _)| keep.binary_search(i).is_ok())
        .map(|(_, e)| e)
        .collect()
}

/// Pareto set of one layer shape on one template.
///
/// Exact duplicates of an objective triple keep the first mapping in
/// enumeration order.
pub fn pareto_mappings(
    shape: LayerShape,
    template: &SubAcceleratorTemplate,
    coeffs: &CostCoefficients,
    options: CatalogOptions,
) -> (Vec<CatalogEntry>, bool) {
    let mut archive: Vec<(usize, [f64; 3], CatalogEntry)> = Vec::new();
    let mut iter = enumerate_mapspace(shape, template, options.budget);
    for (index, m) in iter.by_ref().enumerate() {
        let cost = cost_unchecked(template, &m, coeffs, None);
        let entry = CatalogEntry {
            mapping: m,
            cost,
            energy_fixed: false,
        };
        let obj = entry.objectives();
        if archive
            .iter()
            .any(|(_, a, _)| *a == obj || dominates(a, &obj))
        {
            continue;
        }
        archive.retain(|(_, a, _)| !dominates(&obj, a));
        archive.push((index, obj, entry));
    }
    let truncated = iter.truncated();
    archive.sort_by(|a, b| {
        a.1[0]
            .total_cmp(&b.1[0])
            .then(a.1[1].total_cmp(&b.1[1]))
            .then(a.0.cmp(&b.0))
    });
    let set: Vec<CatalogEntry> = archive.into_iter().map(|(_, _, e)| e).collect();
    let set = match options.max_front {
        Some(cap) => cap_front(set, cap),
        None => set,
    };
    (set, truncated)
}

pub fn build_catalog(
    am: &ApplicationModel,
    templates: &TemplateLibrary,
    coeffs: &CostCoefficients,
    options: CatalogOptions,
) -> MappingCatalog {
    let classes = unique_layers(am);
    let mut class_of = vec![0; am.num_layers()];
    let mut entries = Vec::with_capacity(classes.len());
    let mut truncated = Vec::with_capacity(classes.len());
    for (ci, class) in classes.iter().enumerate() {
        for &l in &class.members {
            class_of[l] = ci;
        }
        let mut row = Vec::new();
        let mut trow = Vec::new();
        for t in templates {
            let (set, cut) = pareto_mappings(class.shape, t, coeffs, options);
            log::debug!(
                "{} on {}: {} Pareto mappings{}",
                class.shape.class_key(),
                t.id,
                set.len(),
                if cut { " (enumeration truncated)" } else { "" }
            );
            row.push(set);
            trow.push(cut);
        }
        entries.push(row);
        truncated.push(trow);
    }
    MappingCatalog {
        classes,
        class_of,
        template_ids: templates.iter().map(|t| t.id.clone()).collect(),
        entries,
        truncated,
    }
}

/// Rebuilds a catalog from its export. Mappings are re-validated and
/// re-costed; stored values that differ from the analytical ones are kept
/// as external overrides.
pub fn import_catalog(
    document: &str,
    am: &ApplicationModel,
    templates: &TemplateLibrary,
    coeffs: &CostCoefficients,
) -> Result<MappingCatalog, MapperError> {
    let doc: CatalogDoc =
        serde_json::from_str(document).map_err(|e| MapperError::Catalog(e.to_string()))?;
    let template_ids: Vec<String> = templates.iter().map(|t| t.id.clone()).collect();
    if doc.templates != template_ids {
        return Err(MapperError::Catalog(format!(
            "catalog was built for templates {:?}, library has {:?}",
            doc.templates, template_ids
        )));
    }
    let classes = unique_layers(am);
    let mut class_of = vec![0; am.num_layers()];
    let mut key_to_class = HashMap::new();
    for (ci, c) in classes.iter().enumerate() {
        key_to_class.insert(c.shape.class_key(), ci);
        for &l in &c.members {
            class_of[l] = ci;
        }
    }
    let mut entries = vec![vec![Vec::new(); template_ids.len()]; classes.len()];
    for row in doc.entries {
        let ci = *key_to_class
            .get(&row.layer_class)
            .ok_or_else(|| CostError::UnknownClass(row.layer_class.clone()))?;
        let ti = templates
            .position(&row.template)
            .ok_or_else(|| ArchError::UnknownTemplate(row.template.clone()))?;
        let set: &mut Vec<CatalogEntry> = &mut entries[ci][ti];
        if row.mapping_index != set.len() {
            return Err(MapperError::Catalog(format!(
                "rows for {} on {} are not in index order",
                row.layer_class, row.template
            )));
        }
        let shape = classes[ci].shape;
        let mapping = Mapping {
            template_id: row.template.clone(),
            shape,
            loop_order: row.loop_order,
            spatial: row.spatial,
            tiles: row.tiles,
        };
        let mut cost = evaluate_mapping_cost(&shape, templates.get(ti), &mapping, coeffs)?;
        let stored = CostOverride {
            latency_cycles: Some(row.latency_cycles).filter(|&v| v != cost.latency_cycles),
            energy_pj: Some(row.energy_pj).filter(|&v| v != cost.energy_pj),
            dram_bytes: Some(row.dram_bytes).filter(|&v| v != cost.dram_bytes),
        };
        stored.apply(&mut cost);
        set.push(CatalogEntry {
            mapping,
            cost,
            energy_fixed: stored.energy_pj.is_some(),
        });
    }
    for (ci, row) in entries.iter().enumerate() {
        for (ti, set) in row.iter().enumerate() {
            if set.is_empty() {
                return Err(ArchError::EmptyCatalog {
                    template: template_ids[ti].clone(),
                    class: classes[ci].shape.class_key(),
                }
                .into());
            }
        }
    }
    let mut truncated = vec![vec![false; template_ids.len()]; classes.len()];
    for (class, template) in doc.truncated {
        if let (Some(&ci), Some(ti)) = (key_to_class.get(&class), templates.position(&template)) {
            truncated[ci][ti] = true;
        }
    }
    Ok(MappingCatalog {
        classes,
        class_of,
        template_ids,
        entries,
        truncated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{bundled_templates, validate_mapping};
    use crate::workload::parse_application_model;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn quadratic_front(points: &[[f64; 3]]) -> Vec<usize> {
        (0..points.len())
            .filter(|&i| {
                !(0..points.len()).any(|j| {
                    points[j].iter().zip(&points[i]).all(|(a, b)| a <= b)
                        && points[j].iter().zip(&points[i]).any(|(a, b)| a < b)
                })
            })
            .collect()
    }

    #[test]
    fn pareto_filter_examples() {
        assert_eq!(pareto_filter(&[[1.0, 2.0, 3.0]]), vec![0]);
        assert_eq!(pareto_filter(&[[1.0, 2.0, 3.0], [2.0, 3.0, 4.0]]), vec![0]);
        assert_eq!(pareto_filter(&[[2.0, 3.0, 4.0], [1.0, 2.0, 3.0]]), vec![1]);
        // duplicates do not dominate each other
        assert_eq!(pareto_filter(&[[1.0, 1.0, 1.0], [1.0, 1.0, 1.0]]), vec![0, 1]);
        let empty: [[f64; 3]; 0] = [];
        assert!(pareto_filter(&empty).is_empty());
    }

    #[test]
    fn pareto_filter_matches_quadratic_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let pts: Vec<[f64; 3]> = (0..100)
                .map(|_| std::array::from_fn(|_| rng.gen_range(0..12) as f64))
                .collect();
            assert_eq!(pareto_filter(&pts), quadratic_front(&pts));
        }
    }

    #[test]
    fn all_ones_shape_single_mapping() {
        let shape = LayerShape::conv(1, 1, 1, 1, 1, 1);
        for t in &bundled_templates() {
            let ms: Vec<Mapping> = enumerate_mapspace(shape, t, 100).collect();
            assert_eq!(ms.len(), 1);
            assert_eq!(ms[0].spatial, [1; 6]);
            assert_eq!(ms[0].tiles, [1; 6]);
        }
    }

    #[test]
    fn hand_count_two_by_two() {
        // C and K each have 3 (spatial, tile) choices; only the tiling with
        // both dims iterating has two distinct loop orders, and the
        // output-stationary dataflow forbids C outside K.
        let shape = LayerShape::conv(2, 2, 1, 1, 1, 1);
        let lib = bundled_templates();
        let count = |id: &str| enumerate_mapspace(shape, lib.find(id).unwrap(), 1000).count();
        assert_eq!(count("simba_like"), 10);
        assert_eq!(count("eyeriss_like"), 10);
        assert_eq!(count("shidiannao_like"), 9);
    }

    #[test]
    fn budget_truncates() {
        let shape = LayerShape::conv(16, 16, 8, 8, 3, 3);
        let lib = bundled_templates();
        let mut it = enumerate_mapspace(shape, lib.find("simba_like").unwrap(), 5);
        let got: Vec<Mapping> = it.by_ref().collect();
        assert_eq!(got.len(), 5);
        assert!(it.truncated());
        let small = LayerShape::conv(2, 2, 1, 1, 1, 1);
        let mut it = enumerate_mapspace(small, lib.find("simba_like").unwrap(), 10);
        assert_eq!(it.by_ref().count(), 10);
        assert!(!it.truncated());
    }

    #[test]
    fn enumeration_yields_valid_distinct_mappings() {
        let shape = LayerShape::conv(4, 2, 3, 2, 3, 1);
        for t in &bundled_templates() {
            let ms: Vec<Mapping> = enumerate_mapspace(shape, t, usize::MAX).collect();
            let mut keys = std::collections::HashSet::new();
            for m in &ms {
                assert!(validate_mapping(m, &shape, t).unwrap().is_valid());
                assert!(keys.insert((m.spatial, m.tiles, m.reduced_order())));
            }
        }
    }

    #[test]
    fn shells_cover_large_factors_early() {
        let shape = LayerShape::conv(64, 64, 1, 1, 1, 1);
        let lib = bundled_templates();
        let first: Vec<Mapping> = enumerate_mapspace(shape, lib.find("simba_like").unwrap(), 50).collect();
        // the first shell is the single-trip tiling with the widest split
        assert_eq!(first[0].trips(), [1; 6]);
    }

    fn am(doc_layers: &[(&str, [u32; 6])]) -> ApplicationModel {
        let layers: Vec<String> = doc_layers
            .iter()
            .map(|(id, d)| {
                format!(
                    r#"{{"id":"{id}","kind":"CONV","c":{},"k":{},"y":{},"x":{},"r":{},"s":{}}}"#,
                    d[0], d[1], d[2], d[3], d[4], d[5]
                )
            })
            .collect();
        parse_application_model(&format!(
            r#"[{{"id":"m","layers":[{}],"deps":[]}}]"#,
            layers.join(",")
        ))
        .unwrap()
    }

    #[test]
    fn catalog_structure_and_dedup() {
        let a = am(&[("a", [2, 4, 2, 2, 1, 1]), ("b", [2, 4, 2, 2, 1, 1])]);
        let lib = bundled_templates();
        let c = build_catalog(&a, &lib, &CostCoefficients::default(), CatalogOptions::default());
        assert_eq!(c.classes().len(), 1);
        assert_eq!(c.classes()[0].members, vec![0, 1]);
        assert_eq!(c.num_templates(), 3);
        for ti in 0..3 {
            assert_eq!(c.for_layer(0, ti), c.for_layer(1, ti));
            let set = c.entries(0, ti);
            assert!(!set.is_empty());
            for w in set.windows(2) {
                let (x, y) = (w[0].objectives(), w[1].objectives());
                assert!(x[0] < y[0] || (x[0] == y[0] && x[1] <= y[1]));
            }
            for e in set {
                assert!(validate_mapping(&e.mapping, &e.mapping.shape, lib.get(ti)).unwrap().is_valid());
            }
        }
    }

    #[test]
    fn catalog_equals_full_enumeration_front() {
        let shape = LayerShape::conv(2, 4, 2, 2, 3, 1);
        let lib = bundled_templates();
        let coeffs = CostCoefficients::default();
        for t in &lib {
            let all: Vec<CatalogEntry> = enumerate_mapspace(shape, t, usize::MAX)
                .map(|m| CatalogEntry {
                    cost: evaluate_mapping_cost(&shape, t, &m, &coeffs).unwrap(),
                    mapping: m,
                    energy_fixed: false,
                })
                .collect();
            let pts: Vec<[f64; 3]> = all.iter().map(|e| e.objectives()).collect();
            let mut oracle: Vec<[f64; 3]> = quadratic_front(&pts).into_iter().map(|i| pts[i]).collect();
            oracle.sort_by(|a, b| lex_cmp(a, b));
            oracle.dedup();
            let (set, cut) = pareto_mappings(shape, t, &coeffs, CatalogOptions { budget: usize::MAX, max_front: None });
            assert!(!cut);
            let mut got: Vec<[f64; 3]> = set.iter().map(|e| e.objectives()).collect();
            got.sort_by(|a, b| lex_cmp(a, b));
            assert_eq!(got, oracle, "{}", t.id);
            let min_lat = pts.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
            let min_e = pts.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
            assert_eq!(set[0].objectives()[0], min_lat);
            assert_eq!(set.iter().map(|e| e.objectives()[1]).fold(f64::INFINITY, f64::min), min_e);
        }
    }

    #[test]
    fn front_cap_keeps_extremes() {
        let shape = LayerShape::conv(8, 8, 4, 4, 3, 3);
        let lib = bundled_templates();
        let t = lib.find("eyeriss_like").unwrap();
        let coeffs = CostCoefficients::default();
        let opts = CatalogOptions { budget: 3000, max_front: None };
        let (full, _) = pareto_mappings(shape, t, &coeffs, opts);
        assert!(full.len() > 4, "{}", full.len());
        let (capped, _) = pareto_mappings(shape, t, &coeffs, CatalogOptions { max_front: Some(4), ..opts });
        assert_eq!(capped.len(), 4);
        for k in 0..3 {
            let best = |s: &[CatalogEntry]| s.iter().map(|e| e.objectives()[k]).fold(f64::INFINITY, f64::min);
            assert_eq!(best(&capped), best(&full));
        }
    }

    #[test]
    fn export_import_round_trip_and_overrides() {
        let a = am(&[("a", [2, 4, 2, 2, 3, 3]), ("b", [4, 4, 2, 2, 1, 1])]);
        let lib = bundled_templates();
        let coeffs = CostCoefficients::default();
        let c = build_catalog(&a, &lib, &coeffs, CatalogOptions { budget: 500, max_front: Some(6) });
        let back = import_catalog(&c.to_json(), &a, &lib, &coeffs).unwrap();
        assert_eq!(back, c);

        // self-generated cost table changes nothing
        let mut same = c.clone();
        let table = c.cost_table();
        let reparsed = crate::costmodel::load_external_cost_table(
            &table.to_json(),
            &lib,
            &c.classes().iter().map(|k| k.shape).collect::<Vec<_>>(),
        )
        .unwrap();
        same.apply_cost_table(&reparsed).unwrap();
        for ci in 0..2 {
            for ti in 0..3 {
                let x: Vec<[f64; 3]> = same.entries(ci, ti).iter().map(|e| e.objectives()).collect();
                let y: Vec<[f64; 3]> = c.entries(ci, ti).iter().map(|e| e.objectives()).collect();
                assert_eq!(x, y);
            }
        }

        let mut over = c.clone();
        let mut t = CostTable::new();
        t.insert(
            crate::costmodel::CostTableKey {
                layer_class: c.classes()[0].shape.class_key(),
                template: "simba_like".into(),
                mapping_index: 0,
            },
            CostOverride { latency_cycles: Some(123_456), ..Default::default() },
        );
        over.apply_cost_table(&t).unwrap();
        assert_eq!(over.entries(0, 1)[0].cost.latency_cycles, 123_456);
        assert!(!over.entries(0, 1)[0].energy_fixed);
        let back = import_catalog(&over.to_json(), &a, &lib, &coeffs).unwrap();
        assert_eq!(back.entries(0, 1)[0].cost.latency_cycles, 123_456);

        let mut bad = CostTable::new();
        bad.insert(
            crate::costmodel::CostTableKey {
                layer_class: c.classes()[0].shape.class_key(),
                template: "simba_like".into(),
                mapping_index: 999,
            },
            CostOverride::default(),
        );
        assert!(over.apply_cost_table(&bad).is_err());
    }
}
