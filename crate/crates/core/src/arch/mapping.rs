use std::fmt;

use serde::{Deserialize, Serialize};

use super::{ArchError, Scope, SubAcceleratorTemplate, Tensor};
use crate::workload::{Dim, LayerShape};

/// Word size in bytes (8-bit datapath).
pub const WORD_BYTES: u64 = 1;

/// Loop order, spatial unrolling and per-PE tiling of one layer class on
/// one template.
///
/// Per dimension the extent factors as `trips * spatial * tile`: `tile` is
/// the per-PE (local buffer) block, `spatial` the number of PE lanes along
/// the dimension and `trips` the temporal iterations of the outer loop nest,
/// whose order is `loop_order` (outermost first).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Mapping {
    pub template_id: String,
    pub shape: LayerShape,
    pub loop_order: [Dim; 6],
    pub spatial: [u32; 6],
    pub tiles: [u32; 6],
}

impl Mapping {
    /// All factors 1, canonical loop order.
    pub fn unit(shape: LayerShape, template_id: &str) -> Self {
        Mapping {
            template_id: template_id.to_string(),
            shape,
            loop_order: Dim::ALL,
            spatial: [1; 6],
            tiles: [1; 6],
        }
    }

    /// All factors 1 with the first loop order `template`'s dataflow admits.
    pub fn unit_on(shape: LayerShape, template: &SubAcceleratorTemplate) -> Self {
        Mapping {
            loop_order: admitted_orders(template.dataflow)[0],
            ..Self::unit(shape, &template.id)
        }
    }

    #[inline]
    pub fn trips(&self) -> [u32; 6] {
        let dims = self.shape.dims();
        let mut out = [1; 6];
        for i in 0..6 {
            let block = self.spatial[i].max(1) * self.tiles[i].max(1);
            out[i] = dims[i].div_ceil(block);
        }
        out
    }

    #[inline]
    pub fn lanes(&self) -> u64 {
        self.spatial.iter().map(|&s| s as u64).product()
    }

    /// Loop order with single-trip loops removed; mappings with equal reduced
    /// orders and factors behave identically.
    pub fn reduced_order(&self) -> Vec<Dim> {
        let trips = self.trips();
        self.loop_order
            .iter()
            .copied()
            .filter(|d| trips[d.index()] > 1)
            .collect()
    }

    /// Elements of `t` in one PE's tile.
    #[inline]
    pub fn lane_tile_elems(&self, t: Tensor) -> u64 {
        t.block_elems(self.shape.kind, &self.tiles)
    }

    /// Elements of `t` covered by the whole PE array in one outer iteration.
    #[inline]
    pub fn footprint_elems(&self, t: Tensor) -> u64 {
        let mut ext = [1; 6];
        for i in 0..6 {
            ext[i] = self.spatial[i] * self.tiles[i];
        }
        t.block_elems(self.shape.kind, &ext)
    }

    /// PE lanes receiving distinct blocks of `t`; lanes that differ only in
    /// dims not indexing `t` share (multicast) the same block.
    #[inline]
    pub fn lanes_for(&self, t: Tensor) -> u64 {
        Dim::ALL
            .iter()
            .filter(|&&d| t.indexed_by(self.shape.kind, d))
            .map(|d| self.spatial[d.index()] as u64)
            .product()
    }

    /// Hardware this mapping needs on `template`.
    pub fn requirements(&self, template: &SubAcceleratorTemplate) -> Requirements {
        let lanes = self.lanes();
        let macs_per_pe = if template.macs_param().is_some() {
            lanes.div_ceil(template.max_pes()).max(1)
        } else {
            1
        };
        let pe_count = lanes.div_ceil(macs_per_pe);
        let level_bytes = template
            .buffer_levels
            .iter()
            .map(|level| {
                let elems: u64 = level
                    .holds
                    .iter()
                    .map(|&t| match level.scope {
                        Scope::PerPe => self.lane_tile_elems(t),
                        Scope::Global => self.footprint_elems(t),
                    })
                    .sum();
                let per_unit = match level.scope {
                    Scope::PerPe => macs_per_pe,
                    Scope::Global => 1,
                };
                elems * per_unit * WORD_BYTES
            })
            .collect();
        Requirements {
            lanes,
            pe_count,
            macs_per_pe,
            level_bytes,
        }
    }
}

impl fmt::Display for Mapping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let order: String = self.loop_order.iter().map(|d| d.to_string()).collect();
        write!(
            f,
            "{}[{} sp={:?} t={:?}]",
            self.template_id, order, self.spatial, self.tiles
        )
    }
}

/// Resources one mapping needs; `level_bytes` aligns with the template's
/// buffer levels (per-PE levels are sized per PE).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Requirements {
    pub lanes: u64,
    pub pe_count: u64,
    pub macs_per_pe: u64,
    pub level_bytes: Vec<u64>,
}

impl Requirements {
    /// Parameter vector in the template's parameter order.
    pub fn param_values(&self, template: &SubAcceleratorTemplate) -> Vec<u64> {
        let mut values = vec![1; template.num_params()];
        values[template.pes_param()] = self.pe_count;
        if let Some(p) = template.macs_param() {
            values[p] = self.macs_per_pe;
        }
        for (level, &bytes) in self.level_bytes.iter().enumerate() {
            values[template.level_param(level)] = bytes.max(1);
        }
        values
    }

    /// Area proxy used while filtering per-layer mappings.
    pub fn area_proxy(&self) -> f64 {
        (self.level_bytes.iter().sum::<u64>() + self.pe_count) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    NotAPermutation,
    FactorOutOfRange { dim: Dim },
    NotADivisor { dim: Dim },
    DataflowOrder,
    PeOverflow { lanes: u64, capacity: u64 },
    BufferOverflow { level: String, required: u64, max: u64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NotAPermutation => write!(f, "loop order is not a permutation"),
            Violation::FactorOutOfRange { dim } => write!(f, "factor out of range on {dim}"),
            Violation::NotADivisor { dim } => {
                write!(f, "spatial x tile does not divide extent of {dim}")
            }
            Violation::DataflowOrder => write!(f, "loop order not admitted by dataflow"),
            Violation::PeOverflow { lanes, capacity } => {
                write!(f, "PE overflow ({lanes} lanes > {capacity})")
            }
            Violation::BufferOverflow {
                level,
                required,
                max,
            } => write!(
                f,
                "buffer overflow at level {level} ({required} B > {max} B)"
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Verdict {
    pub violations: Vec<Violation>,
}

impl Verdict {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn validate_mapping(
    m: &Mapping,
    shape: &LayerShape,
    t: &SubAcceleratorTemplate,
) -> Result<Verdict, ArchError> {
    if m.template_id != t.id {
        return Err(ArchError::UnknownTemplate(m.template_id.clone()));
    }
    if m.shape != *shape {
        return Err(ArchError::ClassMismatch);
    }
    let mut violations = Vec::new();
    let mut seen = [false; 6];
    for d in m.loop_order {
        seen[d.index()] = true;
    }
    if seen.iter().any(|s| !s) {
        violations.push(Violation::NotAPermutation);
    }
    let dims = shape.dims();
    let mut factors_ok = true;
    for d in Dim::ALL {
        let i = d.index();
        let (sp, tl) = (m.spatial[i], m.tiles[i]);
        if sp < 1 || tl < 1 || sp > dims[i] || tl > dims[i] {
            violations.push(Violation::FactorOutOfRange { dim: d });
            factors_ok = false;
        } else if dims[i] % (sp * tl) != 0 {
            violations.push(Violation::NotADivisor { dim: d });
            factors_ok = false;
        }
    }
    if !factors_ok {
        return Ok(Verdict { violations });
    }
    if !t.dataflow.admits(&m.reduced_order()) {
        violations.push(Violation::DataflowOrder);
    }
    let capacity = t.max_pes() * t.max_macs_per_pe();
    let req = m.requirements(t);
    if req.lanes > capacity {
        violations.push(Violation::PeOverflow {
            lanes: req.lanes,
            capacity,
        });
    }
    for (li, level) in t.buffer_levels.iter().enumerate() {
        let max = t.level_max_bytes(li);
        if req.level_bytes[li] > max {
            violations.push(Violation::BufferOverflow {
                level: level.name.clone(),
                required: req.level_bytes[li],
                max,
            });
        }
    }
    Ok(Verdict { violations })
}

fn log_gap(a: &[u32; 6], b: &[u32; 6]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| ((x as f64).log2() - (y as f64).log2()).abs())
        .sum()
}

/// Normalized Kendall-tau distance between two loop orders.
pub fn kendall_tau(a: &[Dim; 6], b: &[Dim; 6]) -> f64 {
    let mut pos_a = [0usize; 6];
    let mut pos_b = [0usize; 6];
    for i in 0..6 {
        pos_a[a[i].index()] = i;
        pos_b[b[i].index()] = i;
    }
    let mut discordant = 0;
    for i in 0..6 {
        for j in i + 1..6 {
            if (pos_a[i] < pos_a[j]) != (pos_b[i] < pos_b[j]) {
                discordant += 1;
            }
        }
    }
    discordant as f64 / 15.0
}

/// Similarity used by mapping transform: Kendall-tau over loop orders plus
/// log-scale tile and spatial-factor gaps, each normalized by
/// `6 * log2(max extent)`.
pub fn mapping_distance(a: &Mapping, b: &Mapping) -> Result<f64, ArchError> {
    if a.shape != b.shape {
        return Err(ArchError::ClassMismatch);
    }
    let max_dim = a.shape.max_dim();
    let norm = 6.0 * (max_dim as f64).log2();
    let scale = if norm > 0.0 { 1.0 / norm } else { 0.0 };
    Ok(kendall_tau(&a.loop_order, &b.loop_order)
        + log_gap(&a.tiles, &b.tiles) * scale
        + log_gap(&a.spatial, &b.spatial) * scale)
}

/// Index of the candidate closest to `m`; ties go to the lowest index.
pub fn mapping_transform(
    m: &Mapping,
    target: &SubAcceleratorTemplate,
    candidates: &[Mapping],
) -> Result<usize, ArchError> {
    nearest_mapping(m, target, candidates)
}

/// `mapping_transform` over any sequence of candidates.
pub fn nearest_mapping<'a>(
    m: &Mapping,
    target: &SubAcceleratorTemplate,
    candidates: impl IntoIterator<Item = &'a Mapping>,
) -> Result<usize, ArchError> {
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in candidates.into_iter().enumerate() {
        if c.template_id != target.id {
            return Err(ArchError::UnknownTemplate(c.template_id.clone()));
        }
        let d = mapping_distance(m, c)?;
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i).ok_or_else(|| ArchError::EmptyCatalog {
        template: target.id.clone(),
        class: m.shape.class_key(),
    })
}

/// Every full loop order admitted by `dataflow`, in lexicographic order of
/// dim indices.
pub fn admitted_orders(dataflow: super::Dataflow) -> &'static [[Dim; 6]] {
    use std::sync::OnceLock;
    static CACHE: [OnceLock<Vec<[Dim; 6]>>; 3] = [OnceLock::new(), OnceLock::new(), OnceLock::new()];
    let slot = match dataflow {
        super::Dataflow::RowStationary => 0,
        super::Dataflow::WeightStationary => 1,
        super::Dataflow::OutputStationary => 2,
    };
    CACHE[slot].get_or_init(|| {
        let mut out = Vec::new();
        let mut perm = [0usize; 6];
        let mut used = [false; 6];
        permutations(0, &mut perm, &mut used, dataflow, &mut out);
        out
    })
}

fn permutations(
    depth: usize,
    perm: &mut [usize; 6],
    used: &mut [bool; 6],
    dataflow: super::Dataflow,
    out: &mut Vec<[Dim; 6]>,
) {
    if depth == 6 {
        let order = perm.map(Dim::from_index);
        if dataflow.admits(&order) {
            out.push(order);
        }
        return;
    }
    for d in 0..6 {
        if !used[d] {
            used[d] = true;
            perm[depth] = d;
            permutations(depth + 1, perm, used, dataflow, out);
            used[d] = false;
        }
    }
}
