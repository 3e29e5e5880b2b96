//! Problem-independent NSGA-II machinery: non-dominated sorting, crowding,
//! binary tournaments, elitist survival and the stopping rule.
//!
//! Everything works on slices of objective vectors of any length, so the
//! single-objective run modes reuse it with one-element vectors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use crate::layermapper::dominates;

/// Fronts of the population: front 0 is non-dominated, front `i + 1` is
/// non-dominated once fronts `0..=i` are removed. Indices ascend within a
/// front.
pub fn fast_non_dominated_sort<P: AsRef<[f64]>>(points: &[P]) -> Vec<Vec<usize>> {
    let n = points.len();
    let mut dominated_by = vec![Vec::new(); n];
    let mut counts = vec![0usize; n];
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (points[i].as_ref(), points[j].as_ref());
            if dominates(a, b) {
                dominated_by[i].push(j);
                counts[j] += 1;
            } else if dominates(b, a) {
                dominated_by[j].push(i);
                counts[i] += 1;
            }
        }
    }
    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| counts[i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &i in &current {
            for &j in &dominated_by[i] {
                counts[j] -= 1;
                if counts[j] == 0 {
                    next.push(j);
                }
            }
        }
        next.sort_unstable();
        fronts.push(current);
        current = next;
    }
    fronts
}

/// Crowding distance of each member of `front` (indices into `points`),
/// aligned with `front`.
///
/// Per objective, the extreme members get infinity and interior members
/// accumulate the normalized gap between their neighbours. Objectives with
/// a zero or non-finite range contribute nothing to interior members.
pub fn crowding_distance<P: AsRef<[f64]>>(points: &[P], front: &[usize]) -> Vec<f64> {
    let n = front.len();
    if n <= 2 {
        return vec![f64::INFINITY; n];
    }
    let m = points[front[0]].as_ref().len();
    let mut dist = vec![0.0; n];
    let mut order: Vec<usize> = (0..n).collect();
    for k in 0..m {
        let value = |i: usize| points[front[i]].as_ref()[k];
        order.sort_by(|&a, &b| value(a).total_cmp(&value(b)).then(a.cmp(&b)));
        dist[order[0]] = f64::INFINITY;
        dist[order[n - 1]] = f64::INFINITY;
        let range = value(order[n - 1]) - value(order[0]);
        if !(range.is_finite() && range > 0.0) {
            continue;
        }
        for w in order.windows(3) {
            let gap = (value(w[2]) - value(w[0])) / range;
            if gap.is_finite() {
                dist[w[1]] += gap;
            }
        }
    }
    dist
}

/// Rank and crowding of every individual of a population.
#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    pub fronts: Vec<Vec<usize>>,
    pub rank: Vec<usize>,
    pub crowding: Vec<f64>,
}

impl Ranking {
    pub fn new<P: AsRef<[f64]>>(points: &[P]) -> Self {
        let fronts = fast_non_dominated_sort(points);
        let mut rank = vec![0; points.len()];
        let mut crowding = vec![0.0; points.len()];
        for (r, front) in fronts.iter().enumerate() {
            for (&i, d) in front.iter().zip(crowding_distance(points, front)) {
                rank[i] = r;
                crowding[i] = d;
            }
        }
        Ranking {
            fronts,
            rank,
            crowding,
        }
    }

    /// Crowded-comparison order: lower rank, then larger crowding, then
    /// lower index.
    pub fn cmp(&self, a: usize, b: usize) -> std::cmp::Ordering {
        self.rank[a]
            .cmp(&self.rank[b])
            .then(self.crowding[b].total_cmp(&self.crowding[a]))
            .then(a.cmp(&b))
    }

    /// Winner of a binary tournament between `a` and `b`.
    pub fn tournament(&self, a: usize, b: usize) -> usize {
        if self.cmp(a, b).is_le() {
            a
        } else {
            b
        }
    }
}

/// Binary tournament with both contestants drawn uniformly (with
/// replacement).
pub fn tournament_select<R: Rng + ?Sized>(ranking: &Ranking, rng: &mut R) -> usize {
    let n = ranking.rank.len();
    let a = rng.gen_range(0..n);
    let b = rng.gen_range(0..n);
    ranking.tournament(a, b)
}

/// Indices of the `target` survivors of a merged population, in
/// crowded-comparison order.
pub fn survival<P: AsRef<[f64]>>(points: &[P], target: usize) -> Vec<usize> {
    let ranking = Ranking::new(points);
    survival_ranked(&ranking, target)
}

pub fn survival_ranked(ranking: &Ranking, target: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..ranking.rank.len()).collect();
    order.sort_by(|&a, &b| ranking.cmp(a, b));
    order.truncate(target);
    order
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceConfig {
    pub max_generations: usize,
    /// Stop once the front-0 fraction reaches `density_threshold` for
    /// `window` consecutive generations. Off unless set.
    pub density: Option<DensityRule>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityRule {
    pub threshold: f64,
    pub window: usize,
}

impl Default for DensityRule {
    fn default() -> Self {
        DensityRule {
            threshold: 0.9,
            window: 5,
        }
    }
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        ConvergenceConfig {
            max_generations: 300,
            density: None,
        }
    }
}

/// `history[g]` is the front-0 fraction after generation `g + 1`.
pub fn converged(history: &[f64], cfg: &ConvergenceConfig) -> bool {
    if history.len() >= cfg.max_generations {
        return true;
    }
    match cfg.density {
        Some(rule) if rule.window >= 1 && history.len() >= rule.window => history
            [history.len() - rule.window..]
            .iter()
            .all(|&f| f >= rule.threshold),
        _ => false,
    }
}

/// Independent generator for a named purpose, derived from the run seed.
/// Streams with different names never share output, so enabling one
/// operator does not shift the draws of another.
pub fn substream(seed: u64, name: &str) -> ChaCha8Rng {
    // FNV-1a of the name selects the ChaCha stream.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(h);
    rng
}
