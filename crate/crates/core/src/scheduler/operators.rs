//! The ten variation operators. Each takes valid chromosomes and returns
//! valid chromosomes; a failed precondition returns the input unchanged.

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Chromosome, HardwareGene, Problem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operator {
    SchedulingCrossover,
    SchedulingMutation,
    SaCrossover,
    TemplateMutation,
    MergingMutation,
    SplittingMutation,
    MappingMutation,
    MappingCrossover,
    LayerAssignmentMutation,
    PositionMutation,
}

impl Operator {
    /// Application order within one offspring.
    pub const ALL: [Operator; 10] = [
        Operator::SchedulingCrossover,
        Operator::SchedulingMutation,
        Operator::SaCrossover,
        Operator::TemplateMutation,
        Operator::MergingMutation,
        Operator::SplittingMutation,
        Operator::MappingMutation,
        Operator::MappingCrossover,
        Operator::LayerAssignmentMutation,
        Operator::PositionMutation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Operator::SchedulingCrossover => "scheduling_crossover",
            Operator::SchedulingMutation => "scheduling_mutation",
            Operator::SaCrossover => "sa_crossover",
            Operator::TemplateMutation => "template_mutation",
            Operator::MergingMutation => "merging_mutation",
            Operator::SplittingMutation => "splitting_mutation",
            Operator::MappingMutation => "mapping_mutation",
            Operator::MappingCrossover => "mapping_crossover",
            Operator::LayerAssignmentMutation => "layer_assignment_mutation",
            Operator::PositionMutation => "position_mutation",
        }
    }

    pub fn from_name(name: &str) -> Option<Operator> {
        Operator::ALL.into_iter().find(|o| o.name() == name)
    }

    /// Operators that change the hardware genome; disabled when it is
    /// frozen.
    pub fn mutates_hardware(self) -> bool {
        matches!(
            self,
            Operator::SaCrossover
                | Operator::TemplateMutation
                | Operator::MergingMutation
                | Operator::SplittingMutation
                | Operator::PositionMutation
        )
    }

    pub fn is_crossover(self) -> bool {
        matches!(
            self,
            Operator::SchedulingCrossover | Operator::SaCrossover | Operator::MappingCrossover
        )
    }

    /// Applies the operator to `c`, using `mate` as the second parent of
    /// crossovers; returns the first offspring.
    pub fn apply<R: Rng + ?Sized>(self, p: &Problem, c: &Chromosome, mate: &Chromosome, rng: &mut R) -> Chromosome {
        match self {
            Operator::SchedulingCrossover => scheduling_crossover(p, c, mate, rng).0,
            Operator::SchedulingMutation => scheduling_mutation(p, c, rng),
            Operator::SaCrossover => sa_crossover(p, c, mate, rng).swap_remove(0),
            Operator::TemplateMutation => sa_template_mutation(p, c, rng),
            Operator::MergingMutation => sa_merging_mutation(p, c, rng),
            Operator::SplittingMutation => sa_splitting_mutation(p, c, rng),
            Operator::MappingMutation => mapping_mutation(p, c, rng),
            Operator::MappingCrossover => mapping_crossover(p, c, mate, rng).0,
            Operator::LayerAssignmentMutation => layer_assignment_mutation(p, c, rng),
            Operator::PositionMutation => sa_position_mutation(p, c, rng),
        }
    }
}

impl std::fmt::Display for Operator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-offspring application probability of each operator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorProbabilities {
    pub scheduling_crossover: f64,
    pub scheduling_mutation: f64,
    pub sa_crossover: f64,
    pub template_mutation: f64,
    pub merging_mutation: f64,
    pub splitting_mutation: f64,
    pub mapping_mutation: f64,
    pub mapping_crossover: f64,
    pub layer_assignment_mutation: f64,
    pub position_mutation: f64,
}

impl Default for OperatorProbabilities {
    fn default() -> Self {
        OperatorProbabilities {
            scheduling_crossover: 0.103,
            scheduling_mutation: 0.052,
            sa_crossover: 0.045,
            template_mutation: 0.041,
            merging_mutation: 0.042,
            splitting_mutation: 0.039,
            mapping_mutation: 0.048,
            mapping_crossover: 0.047,
            layer_assignment_mutation: 0.025,
            position_mutation: 0.027,
        }
    }
}

impl OperatorProbabilities {
    pub fn get(&self, op: Operator) -> f64 {
        *self.field(op)
    }

    pub fn set(&mut self, op: Operator, value: f64) {
        *self.field_mut(op) = value;
    }

    fn field(&self, op: Operator) -> &f64 {
        match op {
            Operator::SchedulingCrossover => &self.scheduling_crossover,
            Operator::SchedulingMutation => &self.scheduling_mutation,
            Operator::SaCrossover => &self.sa_crossover,
            Operator::TemplateMutation => &self.template_mutation,
            Operator::MergingMutation => &self.merging_mutation,
            Operator::SplittingMutation => &self.splitting_mutation,
            Operator::MappingMutation => &self.mapping_mutation,
            Operator::MappingCrossover => &self.mapping_crossover,
            Operator::LayerAssignmentMutation => &self.layer_assignment_mutation,
            Operator::PositionMutation => &self.position_mutation,
        }
    }

    fn field_mut(&mut self, op: Operator) -> &mut f64 {
        match op {
            Operator::SchedulingCrossover => &mut self.scheduling_crossover,
            Operator::SchedulingMutation => &mut self.scheduling_mutation,
            Operator::SaCrossover => &mut self.sa_crossover,
            Operator::TemplateMutation => &mut self.template_mutation,
            Operator::MergingMutation => &mut self.merging_mutation,
            Operator::SplittingMutation => &mut self.splitting_mutation,
            Operator::MappingMutation => &mut self.mapping_mutation,
            Operator::MappingCrossover => &mut self.mapping_crossover,
            Operator::LayerAssignmentMutation => &mut self.layer_assignment_mutation,
            Operator::PositionMutation => &mut self.position_mutation,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        for op in Operator::ALL {
            let v = self.get(op);
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("probability of {op} must lie in [0, 1], got {v}"));
            }
        }
        Ok(())
    }
}

/// Points the genes at `positions` to `instance` (template `to`), carrying
/// each mapping over by mapping transform.
fn move_genes(p: &Problem, c: &mut Chromosome, positions: &[usize], instance: u32, to: usize) {
    for &i in positions {
        let g = &mut c.software[i];
        let from = c.hardware.iter().find(|h| h.instance == g.instance).expect("valid chromosome").template;
        g.mapping = p.transform(g.layer, from, g.mapping, to);
        g.instance = instance;
    }
}

/// Changes the template of `instance` and transforms its layers' mappings.
fn retemplate(p: &Problem, c: &mut Chromosome, instance: u32, to: usize) {
    let pos = c.position_of(instance).expect("instance exists");
    let from = c.hardware[pos].template;
    for g in c.software.iter_mut().filter(|g| g.instance == instance) {
        g.mapping = p.transform(g.layer, from, g.mapping, to);
    }
    c.hardware[pos].template = to;
}

/// Prefix of `head` up to `cut`, then the remaining layers in `tail`'s
/// order. Carried genes keep their instance when `head` has it (mapping
/// transformed if the template differs) and otherwise move to a uniformly
/// chosen instance of `head`.
fn splice_order<R: Rng + ?Sized>(p: &Problem, head: &Chromosome, tail: &Chromosome, cut: usize, rng: &mut R) -> Chromosome {
    let n = head.software.len();
    let mut taken = vec![false; n];
    let mut software = head.software[..cut].to_vec();
    for g in &software {
        taken[g.layer] = true;
    }
    for g in &tail.software {
        if taken[g.layer] {
            continue;
        }
        let from = tail.template_of(g.instance).expect("valid chromosome");
        let (instance, to) = match head.template_of(g.instance) {
            Some(t) => (g.instance, t),
            None => {
                let h = head.hardware[rng.gen_range(0..head.hardware.len())];
                (h.instance, h.template)
            }
        };
        let mut g = *g;
        g.mapping = p.transform(g.layer, from, g.mapping, to);
        g.instance = instance;
        software.push(g);
    }
    Chromosome {
        software,
        hardware: head.hardware.clone(),
        next_instance: head.next_instance,
    }
}

/// Single-cut order crossover: each child keeps its parent's prefix and
/// hardware genome and appends the other parent's remaining layers in that
/// parent's order.
pub fn scheduling_crossover<R: Rng + ?Sized>(
    p: &Problem,
    a: &Chromosome,
    b: &Chromosome,
    rng: &mut R,
) -> (Chromosome, Chromosome) {
    let cut = rng.gen_range(0..=a.software.len());
    let first = splice_order(p, a, b, cut, rng);
    let second = splice_order(p, b, a, cut, rng);
    (first, second)
}

/// Picks a gene `l_i`, finds its nearest later dependent `l_j` and a gene
/// `l_k` strictly between them, and swaps `l_i` and `l_k` when all of
/// `l_k`'s dependencies precede `l_i`.
pub fn scheduling_mutation<R: Rng + ?Sized>(p: &Problem, c: &Chromosome, rng: &mut R) -> Chromosome {
    let n = c.software.len();
    if n < 2 {
        return c.clone();
    }
    let i = rng.gen_range(0..n);
    let li = c.software[i].layer;
    let j = (i + 1..n)
        .find(|&q| p.am.predecessors(c.software[q].layer).contains(&li))
        .unwrap_or(n);
    if j - i < 2 {
        return c.clone();
    }
    let k = rng.gen_range(i + 1..j);
    let pos = c.positions();
    if p.am.predecessors(c.software[k].layer).iter().all(|&d| pos[d] < i) {
        let mut out = c.clone();
        out.software.swap(i, k);
        out
    } else {
        c.clone()
    }
}

/// Replaces one gene's mapping index with a uniformly drawn one.
pub fn mapping_mutation<R: Rng + ?Sized>(p: &Problem, c: &Chromosome, rng: &mut R) -> Chromosome {
    let mut out = c.clone();
    let i = rng.gen_range(0..out.software.len());
    let g = &mut out.software[i];
    let t = c.template_of(g.instance).expect("valid chromosome");
    g.mapping = rng.gen_range(0..p.set_size(g.layer, t));
    out
}

/// Takes `donor`'s mapping for every layer at or after `cut` in `base`'s
/// order.
fn splice_mappings(p: &Problem, base: &Chromosome, donor: &Chromosome, cut: usize) -> Chromosome {
    let mut out = base.clone();
    let donor_pos = donor.positions();
    for g in &mut out.software[cut..] {
        let d = donor.software[donor_pos[g.layer]];
        let from = donor.template_of(d.instance).expect("valid chromosome");
        let to = base.template_of(g.instance).expect("valid chromosome");
        g.mapping = p.transform(g.layer, from, d.mapping, to);
    }
    out
}

/// Single-cut crossover of mapping choices; order and assignments stay
/// with each child's own parent.
pub fn mapping_crossover<R: Rng + ?Sized>(
    p: &Problem,
    a: &Chromosome,
    b: &Chromosome,
    rng: &mut R,
) -> (Chromosome, Chromosome) {
    let cut = rng.gen_range(0..=a.software.len());
    (splice_mappings(p, a, b, cut), splice_mappings(p, b, a, cut))
}

/// Exchanges the template of an instance id present in both parents, or
/// imports an instance present in one parent into the other together with
/// its layer assignments.
pub fn sa_crossover<R: Rng + ?Sized>(p: &Problem, a: &Chromosome, b: &Chromosome, rng: &mut R) -> Vec<Chromosome> {
    let mut ids: Vec<u32> = a.hardware.iter().chain(&b.hardware).map(|h| h.instance).collect();
    ids.sort_unstable();
    ids.dedup();
    let s = ids[rng.gen_range(0..ids.len())];
    match (a.template_of(s), b.template_of(s)) {
        (Some(ta), Some(tb)) => {
            let mut ca = a.clone();
            let mut cb = b.clone();
            retemplate(p, &mut ca, s, tb);
            retemplate(p, &mut cb, s, ta);
            vec![ca, cb]
        }
        (Some(_), None) => vec![import_instance(p, a, b, s)],
        (None, Some(_)) => vec![import_instance(p, b, a, s)],
        (None, None) => unreachable!("id drawn from the parents"),
    }
}

fn import_instance(p: &Problem, donor: &Chromosome, recipient: &Chromosome, s: u32) -> Chromosome {
    if recipient.hardware.len() >= p.hardware.max_instances {
        return recipient.clone();
    }
    let template = donor.template_of(s).expect("donor has the instance");
    let mut out = recipient.clone();
    out.hardware.push(HardwareGene { instance: s, template });
    out.next_instance = out.next_instance.max(s + 1);
    let pos = out.positions();
    for g in donor.software.iter().filter(|g| g.instance == s) {
        let r = &mut out.software[pos[g.layer]];
        r.instance = s;
        r.mapping = g.mapping;
    }
    out
}

/// Adds a new instance of a random instance's template and moves half
/// (rounded down) of that instance's layers to it.
pub fn sa_splitting_mutation<R: Rng + ?Sized>(p: &Problem, c: &Chromosome, rng: &mut R) -> Chromosome {
    if c.hardware.len() >= p.hardware.max_instances {
        return c.clone();
    }
    let h = c.hardware[rng.gen_range(0..c.hardware.len())];
    let genes = c.genes_on(h.instance);
    if genes.len() < 2 {
        return c.clone();
    }
    let mut out = c.clone();
    let id = out.next_instance;
    out.next_instance += 1;
    out.hardware.push(HardwareGene {
        instance: id,
        template: h.template,
    });
    for k in index::sample(rng, genes.len(), genes.len() / 2) {
        out.software[genes[k]].instance = id;
    }
    out
}

/// Moves every layer of a random instance to another random instance and
/// removes the emptied one.
pub fn sa_merging_mutation<R: Rng + ?Sized>(p: &Problem, c: &Chromosome, rng: &mut R) -> Chromosome {
    let n = c.hardware.len();
    if n < 2 {
        return c.clone();
    }
    let j = rng.gen_range(0..n);
    let i = (j + rng.gen_range(1..n)) % n;
    let (sj, si) = (c.hardware[j], c.hardware[i]);
    let mut out = c.clone();
    let genes = out.genes_on(sj.instance);
    move_genes(p, &mut out, &genes, si.instance, si.template);
    out.hardware.remove(j);
    out
}

/// Swaps the tiles of two instances.
pub fn sa_position_mutation<R: Rng + ?Sized>(_p: &Problem, c: &Chromosome, rng: &mut R) -> Chromosome {
    let n = c.hardware.len();
    if n < 2 {
        return c.clone();
    }
    let a = rng.gen_range(0..n);
    let b = (a + rng.gen_range(1..n)) % n;
    let mut out = c.clone();
    out.hardware.swap(a, b);
    out
}

/// Gives a random instance a different allowed template.
pub fn sa_template_mutation<R: Rng + ?Sized>(p: &Problem, c: &Chromosome, rng: &mut R) -> Chromosome {
    let h = c.hardware[rng.gen_range(0..c.hardware.len())];
    let others: Vec<usize> = p
        .hardware
        .templates
        .iter()
        .copied()
        .filter(|&t| t != h.template)
        .collect();
    let Some(&to) = others.choose(rng) else {
        return c.clone();
    };
    let mut out = c.clone();
    retemplate(p, &mut out, h.instance, to);
    out
}

/// Moves a random layer to a different random instance.
pub fn layer_assignment_mutation<R: Rng + ?Sized>(p: &Problem, c: &Chromosome, rng: &mut R) -> Chromosome {
    let n = c.hardware.len();
    if n < 2 {
        return c.clone();
    }
    let i = rng.gen_range(0..c.software.len());
    let cur = c.position_of(c.software[i].instance).expect("valid chromosome");
    let target = c.hardware[(cur + rng.gen_range(1..n)) % n];
    let mut out = c.clone();
    move_genes(p, &mut out, &[i], target.instance, target.template);
    out
}
