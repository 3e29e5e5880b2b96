//! System-level evaluation of decoded chromosomes: latency over a 2D-mesh
//! network-on-package with shared memory interfaces, energy with
//! capacity-dependent buffer costs plus link energy, and area.

mod timeline;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::costmodel::{energy_at_capacity, instance_area};
use crate::scheduler::{decode, Chromosome, DecodedSystem, Problem};

pub use timeline::{bandwidth_violation, schedule, Job, ScheduledSegment, Timeline};

#[derive(Debug, Error, PartialEq)]
pub enum SysError {
    #[error("mesh of {rows}x{cols} with {mis} memory interfaces has no room for {instances} instances")]
    MeshTooSmall {
        rows: usize,
        cols: usize,
        mis: usize,
        instances: usize,
    },
    #[error("network-on-package config: {0}")]
    Config(String),
}

/// Network-on-package description as read from a config file. Bandwidths
/// are in bytes per cycle (GB/s at 1 GHz).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NopConfig {
    #[serde(default = "NopConfig::default_mi_count")]
    pub mi_count: usize,
    #[serde(default = "NopConfig::default_mi_bandwidth")]
    pub mi_bandwidth: f64,
    #[serde(default = "NopConfig::default_link_energy")]
    pub link_energy_pj_per_bit: f64,
    #[serde(default = "NopConfig::default_peak")]
    pub chiplet_peak_bandwidth: f64,
    /// Explicit geometry; all three must be given together.
    #[serde(default)]
    pub rows: Option<usize>,
    #[serde(default)]
    pub cols: Option<usize>,
    #[serde(default)]
    pub mi_tiles: Option<Vec<(usize, usize)>>,
}

impl NopConfig {
    fn default_mi_count() -> usize {
        2
    }
    fn default_mi_bandwidth() -> f64 {
        4.0
    }
    fn default_link_energy() -> f64 {
        0.82
    }
    fn default_peak() -> f64 {
        16.0
    }

    pub fn parse(document: &str) -> Result<Self, SysError> {
        serde_json::from_str(document).map_err(|e| SysError::Config(e.to_string()))
    }

    /// The mesh for up to `max_instances` instances.
    pub fn mesh(&self, max_instances: usize) -> Result<MeshNoP, SysError> {
        let mesh = match (self.rows, self.cols, &self.mi_tiles) {
            (Some(rows), Some(cols), Some(tiles)) => MeshNoP {
                rows,
                cols,
                mi_tiles: tiles.clone(),
                mi_bandwidth: self.mi_bandwidth,
                link_energy_pj_per_bit: self.link_energy_pj_per_bit,
                chiplet_peak_bandwidth: self.chiplet_peak_bandwidth,
            },
            (None, None, None) => {
                let mut mesh = MeshNoP::west_column(max_instances, self.mi_count)?;
                mesh.mi_bandwidth = self.mi_bandwidth;
                mesh.link_energy_pj_per_bit = self.link_energy_pj_per_bit;
                mesh.chiplet_peak_bandwidth = self.chiplet_peak_bandwidth;
                mesh
            }
            _ => {
                return Err(SysError::Config(
                    "rows, cols and mi_tiles must be given together".into(),
                ))
            }
        };
        mesh.validate()?;
        Ok(mesh)
    }
}

impl Default for NopConfig {
    fn default() -> Self {
        NopConfig {
            mi_count: 2,
            mi_bandwidth: 4.0,
            link_energy_pj_per_bit: 0.82,
            chiplet_peak_bandwidth: 16.0,
            rows: None,
            cols: None,
            mi_tiles: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshNoP {
    pub rows: usize,
    pub cols: usize,
    /// `(row, col)` of each memory interface.
    pub mi_tiles: Vec<(usize, usize)>,
    /// Bytes per cycle per memory interface.
    pub mi_bandwidth: f64,
    pub link_energy_pj_per_bit: f64,
    /// Bytes per cycle one instance can draw at most.
    pub chiplet_peak_bandwidth: f64,
}

/// Where an instance sits and which memory interface serves it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub tile: (usize, usize),
    pub mi: usize,
    pub hops: u32,
}

impl MeshNoP {
    /// Smallest square block of instance tiles plus a west column holding
    /// `mi_count` memory interfaces, spread evenly over the rows.
    pub fn west_column(max_instances: usize, mi_count: usize) -> Result<Self, SysError> {
        if mi_count == 0 {
            return Err(SysError::Config("mi_count must be >= 1".into()));
        }
        let side = (1..).find(|s| s * s >= max_instances.max(1)).unwrap();
        let rows = side.max(mi_count);
        let mi_tiles = (0..mi_count).map(|i| ((2 * i + 1) * rows / (2 * mi_count), 0)).collect();
        Ok(MeshNoP {
            rows,
            cols: side + 1,
            mi_tiles,
            mi_bandwidth: 4.0,
            link_energy_pj_per_bit: 0.82,
            chiplet_peak_bandwidth: 16.0,
        })
    }

    pub fn validate(&self) -> Result<(), SysError> {
        if self.mi_tiles.is_empty() {
            return Err(SysError::Config("at least one memory interface is required".into()));
        }
        for (i, &(r, c)) in self.mi_tiles.iter().enumerate() {
            if r >= self.rows || c >= self.cols {
                return Err(SysError::Config(format!("memory interface {i} at ({r}, {c}) is off the mesh")));
            }
            if self.mi_tiles[..i].contains(&(r, c)) {
                return Err(SysError::Config(format!("memory interfaces share tile ({r}, {c})")));
            }
        }
        for (name, v) in [
            ("mi_bandwidth", self.mi_bandwidth),
            ("chiplet_peak_bandwidth", self.chiplet_peak_bandwidth),
        ] {
            if !(v > 0.0) {
                return Err(SysError::Config(format!("{name} must be > 0")));
            }
        }
        if !(self.link_energy_pj_per_bit >= 0.0 && self.link_energy_pj_per_bit.is_finite()) {
            return Err(SysError::Config("link_energy_pj_per_bit must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// The `p`-th instance occupies the `p`-th non-interface tile in
    /// row-major order and uses the Manhattan-nearest interface (lowest
    /// index on ties).
    pub fn place_and_assign_mi(&self, instances: usize) -> Result<Vec<Placement>, SysError> {
        let tiles: Vec<(usize, usize)> = (0..self.rows)
            .flat_map(|r| (0..self.cols).map(move |c| (r, c)))
            .filter(|t| !self.mi_tiles.contains(t))
            .take(instances)
            .collect();
        if tiles.len() < instances {
            return Err(SysError::MeshTooSmall {
                rows: self.rows,
                cols: self.cols,
                mis: self.mi_tiles.len(),
                instances,
            });
        }
        Ok(tiles
            .into_iter()
            .map(|tile| {
                let (mi, hops) = self
                    .mi_tiles
                    .iter()
                    .map(|&m| manhattan(tile, m))
                    .enumerate()
                    .min_by_key(|&(i, d)| (d, i))
                    .expect("mesh has interfaces");
                Placement { tile, mi, hops }
            })
            .collect())
    }
}

fn manhattan(a: (usize, usize), b: (usize, usize)) -> u32 {
    (a.0.abs_diff(b.0) + a.1.abs_diff(b.1)) as u32
}

/// Sum in ascending order, so equal multisets give bit-identical totals.
pub fn canonical_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.into_iter().sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationResult {
    pub latency: f64,
    pub energy: f64,
    pub area: f64,
    pub timeline: Option<Timeline>,
    /// Per instance, in hardware-genome order.
    pub area_breakdown: Vec<f64>,
    /// Per software gene.
    pub energy_breakdown: Vec<f64>,
    pub infeasible: Option<String>,
}

impl EvaluationResult {
    pub fn objectives(&self) -> [f64; 3] {
        [self.latency, self.energy, self.area]
    }

    fn infeasible(reason: String) -> Self {
        EvaluationResult {
            latency: f64::INFINITY,
            energy: f64::INFINITY,
            area: f64::INFINITY,
            timeline: None,
            area_breakdown: Vec::new(),
            energy_breakdown: Vec::new(),
            infeasible: Some(reason),
        }
    }
}

/// Timeline jobs of a decoded system, in execution order.
pub fn jobs(p: &Problem, sys: &DecodedSystem) -> Vec<Job> {
    sys.genes
        .iter()
        .map(|g| {
            let inst = &sys.instances[g.instance];
            let cost = &p.entry(g.layer, inst.template, g.mapping).cost;
            let dram = cost.dram_bytes as f64;
            // A layer cannot pull data faster than one chiplet's link.
            let duration = f64::max(cost.latency_cycles as f64, dram / p.nop.chiplet_peak_bandwidth);
            Job {
                layer: g.layer,
                instance: g.instance,
                mi: p.placement(g.instance).mi,
                duration,
                dram_bytes: dram,
            }
        })
        .collect()
}

pub fn schedule_latency(p: &Problem, sys: &DecodedSystem) -> Timeline {
    schedule(&p.am, &jobs(p, sys), p.nop.mi_bandwidth)
}

/// Per-gene energies: mapping energy re-estimated at the instance's buffer
/// sizes (unless fixed by an external table) plus link energy for the
/// layer's package-memory traffic over the hops to its interface.
pub fn energy_terms(p: &Problem, sys: &DecodedSystem) -> Vec<f64> {
    sys.genes
        .iter()
        .map(|g| {
            let inst = &sys.instances[g.instance];
            let t = p.templates.get(inst.template);
            let entry = p.entry(g.layer, inst.template, g.mapping);
            let compute = if entry.energy_fixed {
                entry.cost.energy_pj
            } else {
                let capacities: Vec<u64> = (0..t.buffer_levels.len())
                    .map(|l| inst.param_values[t.level_param(l)])
                    .collect();
                energy_at_capacity(t, &entry.mapping, &entry.cost, &p.coeffs, &capacities)
            };
            let hops = p.placement(g.instance).hops as f64;
            compute + entry.cost.dram_bytes as f64 * 8.0 * p.nop.link_energy_pj_per_bit * hops
        })
        .collect()
}

pub fn total_energy(p: &Problem, sys: &DecodedSystem) -> f64 {
    canonical_sum(energy_terms(p, sys))
}

/// Total area and the per-instance breakdown.
pub fn total_area(p: &Problem, sys: &DecodedSystem) -> (f64, Vec<f64>) {
    let breakdown: Vec<f64> = sys
        .instances
        .iter()
        .map(|inst| {
            instance_area(p.templates.get(inst.template), &inst.param_values, &p.coeffs)
                .expect("decoded parameters are within bounds")
        })
        .collect();
    (canonical_sum(breakdown.clone()), breakdown)
}

pub fn evaluate_decoded(p: &Problem, sys: &DecodedSystem) -> EvaluationResult {
    if let Some(reason) = &sys.infeasible {
        return EvaluationResult::infeasible(reason.clone());
    }
    let timeline = schedule_latency(p, sys);
    let energy_breakdown = energy_terms(p, sys);
    let (area, area_breakdown) = total_area(p, sys);
    EvaluationResult {
        latency: timeline.latency,
        energy: canonical_sum(energy_breakdown.clone()),
        area,
        timeline: Some(timeline),
        area_breakdown,
        energy_breakdown,
        infeasible: None,
    }
}

pub fn evaluate(p: &Problem, c: &Chromosome) -> EvaluationResult {
    evaluate_decoded(p, &decode(p, c))
}

/// Gantt export row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanttRow {
    pub layer: String,
    pub model: String,
    pub instance: u32,
    pub template: String,
    pub start: f64,
    pub end: f64,
    pub dilated: bool,
}

/// Area export row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaRow {
    pub instance: u32,
    pub template: String,
    pub area_mm2: f64,
}

pub fn gantt_rows(p: &Problem, sys: &DecodedSystem, timeline: &Timeline) -> Vec<GanttRow> {
    timeline
        .segments
        .iter()
        .map(|s| {
            let layer = p.am.layer(s.layer);
            let inst = &sys.instances[s.instance];
            GanttRow {
                layer: layer.id.clone(),
                model: p.am.models()[layer.model].id.clone(),
                instance: inst.instance_id,
                template: p.templates.get(inst.template).id.clone(),
                start: s.start,
                end: s.end,
                dilated: s.dilated,
            }
        })
        .collect()
}

pub fn area_rows(p: &Problem, sys: &DecodedSystem, breakdown: &[f64]) -> Vec<AreaRow> {
    sys.instances
        .iter()
        .zip(breakdown)
        .map(|(inst, &a)| AreaRow {
            instance: inst.instance_id,
            template: p.templates.get(inst.template).id.clone(),
            area_mm2: a,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn west_column_layout() {
        let m = MeshNoP::west_column(16, 2).unwrap();
        assert_eq!((m.rows, m.cols), (4, 5));
        assert_eq!(m.mi_tiles, vec![(1, 0), (3, 0)]);
        let pl = m.place_and_assign_mi(16).unwrap();
        // Row 0: (0,0) is a plain tile, nearest interface (1,0).
        assert_eq!(pl[0], Placement { tile: (0, 0), mi: 0, hops: 1 });
        assert_eq!(pl[1].tile, (0, 1));
        // (2,1) is equidistant from both interfaces.
        let p21 = pl.iter().find(|p| p.tile == (2, 1)).unwrap();
        assert_eq!((p21.mi, p21.hops), (0, 2));
        assert!(matches!(m.place_and_assign_mi(19), Err(SysError::MeshTooSmall { .. })));
    }

    #[test]
    fn one_instance_one_interface() {
        let m = MeshNoP::west_column(1, 1).unwrap();
        let pl = m.place_and_assign_mi(1).unwrap();
        assert_eq!(pl, vec![Placement { tile: (0, 1), mi: 0, hops: 1 }]);
    }

    #[test]
    fn config_parsing() {
        let c = NopConfig::parse("{}").unwrap();
        assert_eq!(c, NopConfig::default());
        let c = NopConfig::parse(r#"{"rows":2,"cols":2,"mi_tiles":[[0,0],[1,1]],"mi_bandwidth":8}"#).unwrap();
        let m = c.mesh(2).unwrap();
        assert_eq!(m.mi_bandwidth, 8.0);
        let pl = m.place_and_assign_mi(2).unwrap();
        assert_eq!(pl[0], Placement { tile: (0, 1), mi: 0, hops: 1 });
        assert!(NopConfig::parse(r#"{"rows":2}"#).unwrap().mesh(1).is_err());
        assert!(NopConfig::parse(r#"{"bogus":1}"#).is_err());
        assert!(NopConfig::parse(r#"{"mi_tiles":[[0,0],[0,0]],"rows":1,"cols":3}"#).unwrap().mesh(1).is_err());
    }

    #[test]
    fn canonical_sum_is_order_free() {
        let a = canonical_sum(vec![1e16, 1.0, -1e16, 3.0]);
        let b = canonical_sum(vec![3.0, -1e16, 1.0, 1e16]);
        assert_eq!(a.to_bits(), b.to_bits());
    }
}
