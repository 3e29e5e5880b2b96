//! Reference data-movement counts obtained by walking the outer loop nest
//! iteration by iteration and enumerating tile elements explicitly.

use std::collections::{HashMap, HashSet};
use std::hash::{BuildHasherDefault, Hasher};

use comap_core::arch::{Mapping, Scope, SubAcceleratorTemplate, Tensor};
use comap_core::workload::{Dim, LayerKind};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WalkCounts {
    pub pe_fill: [u64; 3],
    pub dram: [u64; 3],
    pub level_accesses: Vec<u64>,
}

/// Coordinates of the element of `t` touched by the MAC at loop point `p`.
fn element(kind: LayerKind, t: Tensor, p: [u32; 6]) -> [u32; 4] {
    let [c, k, y, x, r, s] = p;
    match (t, kind) {
        (Tensor::Weights, _) => [c, k, r, s],
        (Tensor::Inputs, _) => [c, y + r, x + s, 0],
        (Tensor::Outputs, LayerKind::Depthwise) => [c, k, y, x],
        (Tensor::Outputs, _) => [k, y, x, 0],
    }
}

fn boxes(ext: [u32; 6]) -> impl Iterator<Item = [u32; 6]> {
    let total: u32 = ext.iter().product();
    (0..total).map(move |mut i| {
        let mut p = [0; 6];
        for d in (0..6).rev() {
            p[d] = i % ext[d];
            i /= ext[d];
        }
        p
    })
}

/// Multiplicative hasher for the small integer keys of the block cache.
#[derive(Default)]
struct MulHasher(u64);

impl Hasher for MulHasher {
    fn finish(&self) -> u64 {
        self.0
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.write_u64(b as u64);
        }
    }

    fn write_u32(&mut self, v: u32) {
        self.write_u64(v as u64);
    }

    fn write_u64(&mut self, v: u64) {
        self.0 = (self.0.rotate_left(5) ^ v).wrapping_mul(0x51_7c_c1_b7_27_22_0a_95);
    }

    fn write_usize(&mut self, v: usize) {
        self.write_u64(v as u64);
    }
}

type BlockKey = (LayerKind, Tensor, [u32; 6], [u32; 6]);

/// Per-(tiling, tensor) block sizes: distinct lane tiles times their
/// element count, and the element count of the union over all lanes.
/// Tiles are exact divisors, so blocks are translation invariant and the
/// block at the origin is representative.
#[derive(Default)]
pub struct BlockCache {
    cache: HashMap<BlockKey, (u64, u64), BuildHasherDefault<MulHasher>>,
    /// Sizes of the three tensors for the most recent tiling; consecutive
    /// mappings usually share it.
    last: Option<((LayerKind, [u32; 6], [u32; 6]), [(u64, u64); 3])>,
}

impl BlockCache {
    fn blocks(&mut self, kind: LayerKind, t: Tensor, spatial: [u32; 6], tiles: [u32; 6]) -> (u64, u64) {
        // Dims that do not index `t` cannot change its blocks.
        let mut sp = spatial;
        let mut tl = tiles;
        for d in Dim::ALL {
            if !t.indexed_by(kind, d) {
                sp[d.index()] = 1;
                tl[d.index()] = 1;
            }
        }
        *self.cache.entry((kind, t, sp, tl)).or_insert_with(|| {
            let mut union = HashSet::new();
            let mut lane_tiles: HashSet<[u32; 6]> = HashSet::new();
            let mut lane_elems = 0u64;
            for lane in boxes(sp) {
                let mut tile = HashSet::new();
                for off in boxes(tl) {
                    let p: [u32; 6] = std::array::from_fn(|d| lane[d] * tl[d] + off[d]);
                    let e = element(kind, t, p);
                    tile.insert(e);
                    union.insert(e);
                }
                // Lanes at equal coordinates along the tensor's dims share a
                // multicast transfer.
                if lane_tiles.insert(lane) {
                    lane_elems += tile.len() as u64;
                }
            }
            (lane_elems, union.len() as u64)
        })
    }
}

pub fn walk(m: &Mapping, t: &SubAcceleratorTemplate, cache: &mut BlockCache) -> WalkCounts {
    let kind = m.shape.kind;
    let dims = m.shape.dims();
    let trips: [u32; 6] = std::array::from_fn(|d| dims[d] / (m.spatial[d] * m.tiles[d]));
    let tiling = (kind, m.spatial, m.tiles);
    let sizes = match cache.last {
        Some((key, sizes)) if key == tiling => sizes,
        _ => {
            let sizes = Tensor::ALL.map(|tn| cache.blocks(kind, tn, m.spatial, m.tiles));
            cache.last = Some((tiling, sizes));
            sizes
        }
    };

    // Mixed-radix tile id per tensor over the dims indexing it.
    let mut strides = [[0u32; 6]; 3];
    let mut n_tiles = [1u32; 3];
    for tn in Tensor::ALL {
        for d in Dim::ALL {
            if tn.indexed_by(kind, d) {
                strides[tn.index()][d.index()] = n_tiles[tn.index()];
                n_tiles[tn.index()] *= trips[d.index()];
            }
        }
    }

    // Number of block moves per tensor; every move transfers the tensor's
    // lane tiles into the PEs and its union block to or from memory.
    let mut moves = [0u64; 3];
    let mut resident = [u32::MAX; 3];
    let o = Tensor::Outputs.index();
    let mut visited = vec![0u64; n_tiles[o] as usize];
    let order = m.loop_order.map(|d| d.index());
    let mut idx = [0u32; 6];
    // Tile id of each tensor at the start of the current innermost sweep,
    // kept in step with the odometer over the outer positions.
    let mut ids = [0u32; 3];
    let inner = order[5];
    let inner_stride = [strides[0][inner], strides[1][inner], strides[2][inner]];
    let mut iterations = 0u64;
    loop {
        for i in 0..trips[inner] {
            iterations += 1;
            for tn in 0..3 {
                let id = ids[tn] + i * inner_stride[tn];
                let changed = (resident[tn] != id) as u64;
                if tn == o {
                    // Evict (write back) the resident block, then read back
                    // partial sums of a block seen before.
                    let had = (resident[tn] != u32::MAX) as u64;
                    moves[tn] += changed * (had + visited[id as usize]);
                    visited[id as usize] = 1;
                } else {
                    moves[tn] += changed;
                }
                resident[tn] = id;
            }
        }
        // Odometer over the outer positions.
        let mut done = true;
        for pos in (0..5).rev() {
            let d = order[pos];
            idx[d] += 1;
            if idx[d] < trips[d] {
                for tn in 0..3 {
                    ids[tn] += strides[tn][d];
                }
                done = false;
                break;
            }
            for tn in 0..3 {
                ids[tn] -= (trips[d] - 1) * strides[tn][d];
            }
            idx[d] = 0;
        }
        if done {
            break;
        }
    }
    moves[o] += 1; // final write back
    let per_iter: u64 = (0..6).map(|d| (m.spatial[d] * m.tiles[d]) as u64).product();
    let macs = iterations * per_iter;
    let pe_fill: [u64; 3] = std::array::from_fn(|i| moves[i] * sizes[i].0);
    let dram: [u64; 3] = std::array::from_fn(|i| moves[i] * sizes[i].1);

    let level_accesses = t
        .buffer_levels
        .iter()
        .map(|level| {
            level
                .holds
                .iter()
                .map(|&tn| {
                    let i = tn.index();
                    match level.scope {
                        Scope::PerPe => {
                            let operand_reads = if tn == Tensor::Outputs { 2 * macs } else { macs };
                            operand_reads + pe_fill[i]
                        }
                        Scope::Global => pe_fill[i] + dram[i],
                    }
                })
                .sum()
        })
        .collect();
    WalkCounts {
        pe_fill,
        dram,
        level_accesses,
    }
}
