//! Closed-form latency/energy/area model for one layer mapping.
//!
//! Each tensor is moved in tiles. Over the outer loop nest a tensor's tile
//! is refetched whenever the tile coordinate changes, i.e. once per
//! iteration of every loop at or outside the innermost iterating loop that
//! indexes it. Outputs are written back on every eviction and read back on
//! every revisit. Lanes whose tile coordinates coincide share one multicast
//! transfer.

mod table;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::{
    validate_mapping, ArchError, LevelEnergy, Mapping, Requirements, Scope,
    SubAcceleratorTemplate, Tensor,
};
use crate::workload::{Dim, LayerShape};

pub use table::{load_external_cost_table, CostOverride, CostTable, CostTableEntry, CostTableKey};

#[derive(Debug, Error, PartialEq)]
pub enum CostError {
    #[error("cost coefficients: {0}")]
    Coefficients(String),
    #[error(transparent)]
    Arch(#[from] ArchError),
    #[error("invalid mapping {mapping}: {reasons}")]
    InvalidMapping { mapping: String, reasons: String },
    #[error("cost table schema violation: {0}")]
    Schema(String),
    #[error("cost table references unknown layer class `{0}`")]
    UnknownClass(String),
    #[error("cost table: {0}")]
    Table(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerScope<T> {
    pub global: T,
    pub per_pe: T,
}

impl<T: Copy> PerScope<T> {
    pub fn get(&self, scope: Scope) -> T {
        match scope {
            Scope::Global => self.global,
            Scope::PerPe => self.per_pe,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostCoefficients {
    pub mac_energy_pj: f64,
    pub level_base_energy_pj: PerScope<f64>,
    pub level_ref_capacity: PerScope<f64>,
    pub dram_energy_pj_per_byte: f64,
    pub pe_area_mm2: f64,
    pub buffer_area_mm2_per_byte: f64,
    pub sram_bandwidth_bytes_per_cycle: f64,
    pub word_bytes: u64,
}

impl Default for CostCoefficients {
    fn default() -> Self {
        Self::parse(include_str!("../../configs/coeffs.json")).expect("bundled coefficients")
    }
}

impl CostCoefficients {
    pub fn parse(document: &str) -> Result<Self, CostError> {
        let c: CostCoefficients = serde_json::from_str(document)
            .map_err(|e| CostError::Coefficients(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), CostError> {
        let positive = [
            ("mac_energy_pj", self.mac_energy_pj),
            ("level_base_energy_pj.global", self.level_base_energy_pj.global),
            ("level_base_energy_pj.per_pe", self.level_base_energy_pj.per_pe),
            ("level_ref_capacity.global", self.level_ref_capacity.global),
            ("level_ref_capacity.per_pe", self.level_ref_capacity.per_pe),
            ("dram_energy_pj_per_byte", self.dram_energy_pj_per_byte),
            ("pe_area_mm2", self.pe_area_mm2),
            ("buffer_area_mm2_per_byte", self.buffer_area_mm2_per_byte),
            ("sram_bandwidth_bytes_per_cycle", self.sram_bandwidth_bytes_per_cycle),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(CostError::Coefficients(format!("{name} must be positive")));
            }
        }
        if self.word_bytes != crate::arch::WORD_BYTES {
            return Err(CostError::Coefficients("word_bytes must be 1 (8-bit words)".into()));
        }
        Ok(())
    }

    /// Energy law of buffer level `level` of `t`; per-template coefficients
    /// take precedence.
    pub fn level_energy(&self, t: &SubAcceleratorTemplate, level: usize) -> LevelEnergy {
        let l = &t.buffer_levels[level];
        t.energy_coeffs.get(&l.name).copied().unwrap_or(LevelEnergy {
            base_pj_per_byte: self.level_base_energy_pj.get(l.scope),
            ref_capacity_bytes: self.level_ref_capacity.get(l.scope),
        })
    }

    pub fn pe_area(&self, t: &SubAcceleratorTemplate) -> f64 {
        t.area_coeffs.pe_area_mm2.unwrap_or(self.pe_area_mm2)
    }

    pub fn buffer_area(&self, t: &SubAcceleratorTemplate) -> f64 {
        t.area_coeffs
            .buffer_area_mm2_per_byte
            .unwrap_or(self.buffer_area_mm2_per_byte)
    }
}

/// Per-byte access energy of a level with `capacity` bytes.
pub fn access_energy(law: LevelEnergy, capacity: u64) -> f64 {
    law.base_pj_per_byte * (capacity.max(1) as f64 / law.ref_capacity_bytes).sqrt()
}

/// Data movement of one mapping, in bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Traffic {
    /// Tile transfers into the PE array, per tensor (multicast counted once).
    pub pe_fill: [u64; 3],
    /// Package-memory traffic per tensor.
    pub dram: [u64; 3],
    /// Accesses per buffer level, aligned with the template's levels.
    pub level_accesses: Vec<u64>,
}

impl Traffic {
    pub fn dram_bytes(&self) -> u64 {
        self.dram.iter().sum()
    }

    /// On-chip buffer traffic that competes for SRAM bandwidth.
    pub fn buffer_traffic(&self) -> u64 {
        self.pe_fill.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingCost {
    pub latency_cycles: u64,
    pub energy_pj: f64,
    pub dram_bytes: u64,
    pub compute_cycles: u64,
    pub traffic: Traffic,
    pub required: Requirements,
}

/// Outer-loop refetch count and distinct tile count of `t`.
pub fn tile_visits(m: &Mapping, t: Tensor) -> (u64, u64) {
    let kind = m.shape.kind;
    let trips = m.trips();
    let distinct = Dim::ALL
        .iter()
        .filter(|&&d| t.indexed_by(kind, d))
        .map(|d| trips[d.index()] as u64)
        .product();
    let last = m
        .loop_order
        .iter()
        .rposition(|&d| t.indexed_by(kind, d) && trips[d.index()] > 1);
    let fetches = match last {
        Some(p) => m.loop_order[..=p]
            .iter()
            .map(|d| trips[d.index()] as u64)
            .product(),
        None => 1,
    };
    (fetches, distinct)
}

/// Bytes moved per tensor and per level; no validity check.
pub fn traffic(m: &Mapping, t: &SubAcceleratorTemplate) -> Traffic {
    let macs = m.shape.total_macs();
    let wb = crate::arch::WORD_BYTES;
    let mut pe_fill = [0; 3];
    let mut dram = [0; 3];
    for tensor in Tensor::ALL {
        let (fetches, distinct) = tile_visits(m, tensor);
        let transfers = match tensor {
            Tensor::Outputs => 2 * fetches - distinct,
            _ => fetches,
        };
        pe_fill[tensor.index()] = transfers * m.lanes_for(tensor) * m.lane_tile_elems(tensor) * wb;
        dram[tensor.index()] = transfers * m.footprint_elems(tensor) * wb;
    }
    let level_accesses = t
        .buffer_levels
        .iter()
        .map(|level| {
            level
                .holds
                .iter()
                .map(|&tensor| {
                    let i = tensor.index();
                    match level.scope {
                        Scope::PerPe => {
                            let operand = match tensor {
                                Tensor::Outputs => 2 * macs,
                                _ => macs,
                            };
                            operand * wb + pe_fill[i]
                        }
                        Scope::Global => pe_fill[i] + dram[i],
                    }
                })
                .sum()
        })
        .collect();
    Traffic {
        pe_fill,
        dram,
        level_accesses,
    }
}

/// Evaluates a mapping. Level energies use `capacities` (bytes per level,
/// per PE for per-PE levels) when given, else the mapping's own
/// requirements.
pub fn evaluate_mapping_cost_with(
    shape: &LayerShape,
    t: &SubAcceleratorTemplate,
    m: &Mapping,
    coeffs: &CostCoefficients,
    capacities: Option<&[u64]>,
) -> Result<MappingCost, CostError> {
    let verdict = validate_mapping(m, shape, t)?;
    if !verdict.is_valid() {
        let reasons: Vec<String> = verdict.violations.iter().map(|v| v.to_string()).collect();
        return Err(CostError::InvalidMapping {
            mapping: m.to_string(),
            reasons: reasons.join("; "),
        });
    }
    Ok(cost_unchecked(t, m, coeffs, capacities))
}

pub fn evaluate_mapping_cost(
    shape: &LayerShape,
    t: &SubAcceleratorTemplate,
    m: &Mapping,
    coeffs: &CostCoefficients,
) -> Result<MappingCost, CostError> {
    evaluate_mapping_cost_with(shape, t, m, coeffs, None)
}

/// Cost of a mapping already known to be valid.
pub(crate) fn cost_unchecked(
    t: &SubAcceleratorTemplate,
    m: &Mapping,
    coeffs: &CostCoefficients,
    capacities: Option<&[u64]>,
) -> MappingCost {
    let macs = m.shape.total_macs();
    let required = m.requirements(t);
    let traffic = traffic(m, t);
    let compute_cycles = macs.div_ceil(required.lanes);
    let stall = (traffic.buffer_traffic() as f64 / coeffs.sram_bandwidth_bytes_per_cycle).ceil() as u64;
    let energy_pj = energy(t, m, coeffs, &traffic, capacities.unwrap_or(&required.level_bytes));
    MappingCost {
        latency_cycles: compute_cycles.max(stall),
        energy_pj,
        dram_bytes: traffic.dram_bytes(),
        compute_cycles,
        traffic,
        required,
    }
}

fn energy(
    t: &SubAcceleratorTemplate,
    m: &Mapping,
    coeffs: &CostCoefficients,
    traffic: &Traffic,
    capacities: &[u64],
) -> f64 {
    let mut e = m.shape.total_macs() as f64 * coeffs.mac_energy_pj;
    for (li, &accesses) in traffic.level_accesses.iter().enumerate() {
        e += accesses as f64 * access_energy(coeffs.level_energy(t, li), capacities[li]);
    }
    e + traffic.dram_bytes() as f64 * coeffs.dram_energy_pj_per_byte
}

/// Re-estimates a cost's energy for an instance whose buffers have
/// `capacities` bytes.
pub fn energy_at_capacity(
    t: &SubAcceleratorTemplate,
    m: &Mapping,
    cost: &MappingCost,
    coeffs: &CostCoefficients,
    capacities: &[u64],
) -> f64 {
    energy(t, m, coeffs, &cost.traffic, capacities)
}

/// Area of an instance with `param_values` (template parameter order).
pub fn instance_area(
    t: &SubAcceleratorTemplate,
    param_values: &[u64],
    coeffs: &CostCoefficients,
) -> Result<f64, CostError> {
    crate::arch::check_params(t, param_values)?;
    let pes = param_values[t.pes_param()];
    let macs = t.macs_param().map_or(1, |p| param_values[p]);
    let mut buffer_bytes = 0u64;
    for (li, level) in t.buffer_levels.iter().enumerate() {
        let bytes = param_values[t.level_param(li)];
        buffer_bytes += match level.scope {
            Scope::PerPe => bytes * pes,
            Scope::Global => bytes,
        };
    }
    Ok((pes * macs) as f64 * coeffs.pe_area(t) + buffer_bytes as f64 * coeffs.buffer_area(t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{bundled_templates, TemplateLibrary};
    use proptest::prelude::*;

    fn tpl(id: &str) -> SubAcceleratorTemplate {
        bundled_templates().find(id).unwrap().clone()
    }

    #[test]
    fn bundled_coefficients() {
        let c = CostCoefficients::default();
        assert_eq!(c.mac_energy_pj, 0.2);
        assert_eq!(c.level_base_energy_pj, PerScope { global: 2.0, per_pe: 1.0 });
        assert_eq!(c.level_ref_capacity, PerScope { global: 65536.0, per_pe: 1024.0 });
        assert_eq!(c.dram_energy_pj_per_byte, 100.0);
        assert_eq!(c.sram_bandwidth_bytes_per_cycle, 16.0);
        let mut bad = c;
        bad.word_bytes = 2;
        assert!(bad.validate().is_err());
        bad = c;
        bad.pe_area_mm2 = 0.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn unit_workload() {
        let shape = LayerShape::conv(1, 1, 1, 1, 1, 1);
        for t in &bundled_templates() {
            let m = Mapping::unit_on(shape, t);
            let c = evaluate_mapping_cost(&shape, t, &m, &CostCoefficients::default()).unwrap();
            assert_eq!(c.compute_cycles, 1);
            assert_eq!(c.latency_cycles, 1);
            assert_eq!(c.dram_bytes, 3);
        }
    }

    #[test]
    fn full_tiles_four_lanes() {
        let shape = LayerShape::conv(4, 4, 2, 2, 1, 1);
        let t = tpl("eyeriss_like");
        let m = Mapping {
            spatial: [1, 4, 1, 1, 1, 1],
            tiles: [4, 1, 2, 2, 1, 1],
            ..Mapping::unit_on(shape, &t)
        };
        let c = evaluate_mapping_cost(&shape, &t, &m, &CostCoefficients::default()).unwrap();
        assert_eq!(c.compute_cycles, 16);
        assert_eq!(m.footprint_elems(Tensor::Outputs), 16);
        assert_eq!(c.traffic.dram[Tensor::Outputs.index()], 16);
        // weights 16 + inputs 16 (shared by all lanes) + outputs 16
        assert_eq!(c.traffic.buffer_traffic(), 48);
        assert_eq!(c.latency_cycles, 16);
    }

    #[test]
    fn refetch_follows_loop_order() {
        // Weights indexed by C, K only (r = s = 1); Y loop outside them
        // forces a refetch per Y iteration.
        let shape = LayerShape::conv(2, 2, 2, 1, 1, 1);
        let t = tpl("eyeriss_like");
        let mut m = Mapping::unit(shape, &t.id);
        m.loop_order = [Dim::Y, Dim::C, Dim::K, Dim::X, Dim::R, Dim::S];
        let tr = traffic(&m, &t);
        assert_eq!(tr.dram[Tensor::Weights.index()], 8);
        // Outputs: K innermost among its loops but C sits between Y and K:
        // fetches = 2*2*2, distinct = 4 -> 2*8-4 transfers.
        assert_eq!(tr.dram[Tensor::Outputs.index()], 12);
        m.loop_order = [Dim::C, Dim::K, Dim::Y, Dim::X, Dim::R, Dim::S];
        let tr = traffic(&m, &t);
        assert_eq!(tr.dram[Tensor::Weights.index()], 4);
        assert_eq!(tr.dram[Tensor::Inputs.index()], 8);
    }

    #[test]
    fn area_examples() {
        let c = CostCoefficients::default();
        let t = tpl("simba_like");
        let ones = vec![1; t.num_params()];
        let base = instance_area(&t, &ones, &c).unwrap();
        assert!((base - (c.pe_area_mm2 + 4.0 * c.buffer_area_mm2_per_byte)).abs() < 1e-15);

        let e = tpl("eyeriss_like");
        let mut v = vec![1; e.num_params()];
        v[e.pes_param()] = 84;
        let a84 = instance_area(&e, &v, &c).unwrap();
        v[e.pes_param()] = 168;
        let a168 = instance_area(&e, &v, &c).unwrap();
        let pe_term = |pes: f64| pes * c.pe_area_mm2;
        let rest = |pes: f64| (1.0 + pes) * c.buffer_area_mm2_per_byte;
        assert!((a84 - pe_term(84.0) - rest(84.0)).abs() < 1e-12);
        assert!((a168 - pe_term(168.0) - rest(168.0)).abs() < 1e-12);
        assert!((pe_term(168.0) - 2.0 * pe_term(84.0)).abs() < 1e-15);

        // maxed Eyeriss-like: 168 PEs, 131 KiB shared + 168 * 0.5 KiB spads
        let maxed = instance_area(&e, e.param_max(), &c).unwrap();
        let hand = 168.0 * 0.01 + (134144.0 + 168.0 * 512.0) * 1e-6;
        assert!((maxed - hand).abs() < 1e-12);

        assert!(instance_area(&e, &[169, 1, 1], &c).is_err());
    }

    #[test]
    fn template_coefficients_override_defaults() {
        let doc = r#"[{"id":"t","dataflow":"OUTPUT_STATIONARY","free_params":{"pes":4,"lb":64},
            "buffer_levels":[{"name":"lb","scope":"per_pe","holds":["weights","inputs","outputs"]}],
            "area_coeffs":{"pe_area_mm2":0.5},
            "energy_coeffs":{"lb":{"base_pj_per_byte":3.0,"ref_capacity_bytes":4.0}}}]"#;
        let lib = TemplateLibrary::parse(doc).unwrap();
        let t = lib.get(0);
        let c = CostCoefficients::default();
        let area = instance_area(t, &[64, 2], &c).unwrap();
        assert!((area - (2.0 * 0.5 + 128.0 * c.buffer_area_mm2_per_byte)).abs() < 1e-12);
        assert_eq!(c.level_energy(t, 0).base_pj_per_byte, 3.0);
        assert_eq!(access_energy(c.level_energy(t, 0), 16), 6.0);
    }

    #[test]
    fn invalid_mapping_rejected() {
        let shape = LayerShape::conv(4, 4, 1, 1, 1, 1);
        let t = tpl("simba_like");
        let mut m = Mapping::unit(shape, &t.id);
        m.tiles[0] = 3;
        assert!(matches!(
            evaluate_mapping_cost(&shape, &t, &m, &CostCoefficients::default()),
            Err(CostError::InvalidMapping { .. })
        ));
    }

    fn divisors(n: u32) -> Vec<u32> {
        (1..=n).filter(|d| n % d == 0).collect()
    }

    fn small_case() -> impl Strategy<Value = (usize, Mapping)> {
        let dims = proptest::array::uniform6(1u32..=6);
        (0usize..3, dims, any::<u64>(), Just(Dim::ALL).prop_shuffle()).prop_map(
            |(ti, d, bits, order)| {
                let shape = LayerShape::conv(d[0], d[1], d[2], d[3], d[4], d[5]);
                let mut sp = [1; 6];
                let mut tl = [1; 6];
                let mut b = bits;
                for i in 0..6 {
                    let ds = divisors(d[i]);
                    sp[i] = ds[(b % ds.len() as u64) as usize];
                    b /= 7;
                    let rest = divisors(d[i] / sp[i]);
                    tl[i] = rest[(b % rest.len() as u64) as usize];
                    b /= 7;
                }
                let id = bundled_templates().get(ti).id.clone();
                (ti, Mapping { template_id: id, shape, loop_order: order, spatial: sp, tiles: tl })
            },
        )
    }

    proptest! {
        #[test]
        fn cost_properties((ti, m) in small_case()) {
            let lib = bundled_templates();
            let t = lib.get(ti);
            let c = CostCoefficients::default();
            prop_assume!(validate_mapping(&m, &m.shape, t).unwrap().is_valid());
            let cost = evaluate_mapping_cost(&m.shape, t, &m, &c).unwrap();
            let again = evaluate_mapping_cost(&m.shape, t, &m, &c).unwrap();
            prop_assert_eq!(&cost, &again);
            let macs = m.shape.total_macs();
            prop_assert!(cost.latency_cycles >= macs.div_ceil(m.lanes()));
            prop_assert!(cost.latency_cycles >= macs.div_ceil(t.max_pes() * t.max_macs_per_pe()));
            let full = m.shape.dims();
            let whole: u64 = Tensor::ALL
                .iter()
                .map(|tn| tn.block_elems(m.shape.kind, &full))
                .sum();
            prop_assert!(cost.dram_bytes >= whole);
            if m.trips() == [1; 6] {
                prop_assert_eq!(cost.dram_bytes, whole);
            }
            // growing any level's capacity never lowers energy
            let base = cost.required.level_bytes.clone();
            for li in 0..base.len() {
                let mut bigger = base.clone();
                bigger[li] *= 2;
                prop_assert!(energy_at_capacity(t, &m, &cost, &c, &bigger) >= cost.energy_pj);
            }
        }

        #[test]
        fn area_strictly_monotone(ti in 0usize..3, which in 0usize..6, seed in any::<u64>()) {
            let lib = bundled_templates();
            let t = lib.get(ti);
            let c = CostCoefficients::default();
            let p = which % t.num_params();
            let mut v: Vec<u64> = t.param_max().iter().enumerate()
                .map(|(i, &mx)| 1 + (seed.rotate_left(i as u32 * 7) % mx))
                .collect();
            if v[p] == t.param_max()[p] {
                v[p] -= 1;
            }
            prop_assume!(v[p] >= 1);
            let a = instance_area(t, &v, &c).unwrap();
            v[p] += 1;
            prop_assert!(instance_area(t, &v, &c).unwrap() > a);
        }
    }
}
