//! Global scheduler encoding: two-part chromosomes over an application
//! model and a mapping catalog, random sampling, invariant checks and
//! decoding into a sized multi-accelerator system.

mod operators;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::{check_params, nearest_mapping, ArchError, TemplateLibrary};
use crate::costmodel::CostCoefficients;
use crate::layermapper::{CatalogEntry, MappingCatalog};
use crate::sysmodel::{MeshNoP, Placement, SysError};
use crate::workload::{kahn_toposort, ApplicationModel, TieBreak};

pub use operators::{
    layer_assignment_mutation, mapping_crossover, mapping_mutation, sa_crossover,
    sa_merging_mutation, sa_position_mutation, sa_splitting_mutation, sa_template_mutation,
    scheduling_crossover, scheduling_mutation, Operator, OperatorProbabilities,
};

/// Largest hardware genome by default.
pub const DEFAULT_MAX_INSTANCES: usize = 16;

#[derive(Debug, Error, PartialEq)]
pub enum ProblemError {
    #[error(transparent)]
    Arch(#[from] ArchError),
    #[error(transparent)]
    Sys(#[from] SysError),
    #[error("catalog templates {catalog:?} do not match the library {library:?}")]
    CatalogMismatch {
        catalog: Vec<String>,
        library: Vec<String>,
    },
    #[error("invalid hardware space: {0}")]
    Hardware(String),
}

/// `⟨layer, mapping index, instance id⟩` for one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SoftwareGene {
    pub layer: usize,
    /// Index into the catalog set of (layer class, template of `instance`).
    pub mapping: usize,
    pub instance: u32,
}

/// `⟨instance id, template⟩`; the gene's position is the instance's tile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HardwareGene {
    pub instance: u32,
    pub template: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Chromosome {
    /// One gene per layer, in execution (topological) order.
    pub software: Vec<SoftwareGene>,
    pub hardware: Vec<HardwareGene>,
    /// Next unused instance id.
    pub next_instance: u32,
}

impl Chromosome {
    pub fn position_of(&self, instance: u32) -> Option<usize> {
        self.hardware.iter().position(|h| h.instance == instance)
    }

    pub fn template_of(&self, instance: u32) -> Option<usize> {
        self.hardware
            .iter()
            .find(|h| h.instance == instance)
            .map(|h| h.template)
    }

    /// Software-gene positions executing on `instance`.
    pub fn genes_on(&self, instance: u32) -> Vec<usize> {
        (0..self.software.len())
            .filter(|&i| self.software[i].instance == instance)
            .collect()
    }

    /// Software-gene position of each layer.
    pub fn positions(&self) -> Vec<usize> {
        let mut pos = vec![usize::MAX; self.software.len()];
        for (i, g) in self.software.iter().enumerate() {
            if g.layer < pos.len() {
                pos[g.layer] = i;
            }
        }
        pos
    }

    pub fn order(&self) -> Vec<usize> {
        self.software.iter().map(|g| g.layer).collect()
    }

    /// Compact text form: `[(layer,mapping,instance) ...] | [instance:template ...]`.
    pub fn describe(&self, am: &ApplicationModel, templates: &TemplateLibrary) -> String {
        let sw: Vec<String> = self
            .software
            .iter()
            .map(|g| format!("({},{},{})", am.layer(g.layer).id, g.mapping, g.instance))
            .collect();
        let hw: Vec<String> = self
            .hardware
            .iter()
            .map(|h| format!("{}:{}", h.instance, templates.get(h.template).id))
            .collect();
        format!("[{}] | [{}]", sw.join(" "), hw.join(" "))
    }
}

/// One instance of a frozen hardware genome.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedInstance {
    pub template: usize,
    pub param_values: Vec<u64>,
}

/// What hardware genomes may contain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HardwareSpace {
    pub max_instances: usize,
    /// Library indices instances may use.
    pub templates: Vec<usize>,
    /// When set, every chromosome carries exactly these instances (ids
    /// `0..n`, in this tile order) with these parameter values.
    pub fixed: Option<Vec<FixedInstance>>,
}

impl HardwareSpace {
    pub fn free(library: &TemplateLibrary, max_instances: usize) -> Self {
        HardwareSpace {
            max_instances,
            templates: (0..library.len()).collect(),
            fixed: None,
        }
    }
}

/// Everything the operators and the evaluator need.
#[derive(Debug, Clone)]
pub struct Problem {
    pub am: ApplicationModel,
    pub templates: TemplateLibrary,
    pub catalog: MappingCatalog,
    pub coeffs: CostCoefficients,
    pub nop: MeshNoP,
    pub hardware: HardwareSpace,
    /// Tile and memory interface of each hardware-genome position.
    placements: Vec<Placement>,
}

impl Problem {
    pub fn new(
        am: ApplicationModel,
        templates: TemplateLibrary,
        catalog: MappingCatalog,
        coeffs: CostCoefficients,
        nop: MeshNoP,
        hardware: HardwareSpace,
    ) -> Result<Self, ProblemError> {
        let library: Vec<String> = templates.iter().map(|t| t.id.clone()).collect();
        if catalog.template_ids() != library.as_slice() {
            return Err(ProblemError::CatalogMismatch {
                catalog: catalog.template_ids().to_vec(),
                library,
            });
        }
        if hardware.max_instances == 0 {
            return Err(ProblemError::Hardware("max_instances must be >= 1".into()));
        }
        if hardware.templates.is_empty() || hardware.templates.iter().any(|&t| t >= templates.len()) {
            return Err(ProblemError::Hardware(format!(
                "allowed templates {:?} must be a nonempty subset of 0..{}",
                hardware.templates,
                templates.len()
            )));
        }
        if let Some(fixed) = &hardware.fixed {
            if fixed.is_empty() || fixed.len() > hardware.max_instances {
                return Err(ProblemError::Hardware(format!(
                    "fixed hardware needs 1..={} instances, got {}",
                    hardware.max_instances,
                    fixed.len()
                )));
            }
            for f in fixed {
                if f.template >= templates.len() {
                    return Err(ProblemError::Hardware(format!("unknown template index {}", f.template)));
                }
                check_params(templates.get(f.template), &f.param_values)?;
            }
        }
        let placements = nop.place_and_assign_mi(hardware.max_instances)?;
        Ok(Problem {
            am,
            templates,
            catalog,
            coeffs,
            nop,
            hardware,
            placements,
        })
    }

    pub fn placement(&self, position: usize) -> Placement {
        self.placements[position]
    }

    pub fn placements(&self) -> &[Placement] {
        &self.placements
    }

    pub fn entry(&self, layer: usize, template: usize, mapping: usize) -> &CatalogEntry {
        &self.catalog.for_layer(layer, template)[mapping]
    }

    pub fn set_size(&self, layer: usize, template: usize) -> usize {
        self.catalog.for_layer(layer, template).len()
    }

    /// Mapping index on `to` closest to mapping `mapping` of `layer` on
    /// `from`; the identity when the template does not change.
    pub fn transform(&self, layer: usize, from: usize, mapping: usize, to: usize) -> usize {
        if from == to {
            return mapping;
        }
        let source = &self.entry(layer, from, mapping).mapping;
        nearest_mapping(
            source,
            self.templates.get(to),
            self.catalog.for_layer(layer, to).iter().map(|e| &e.mapping),
        )
        .expect("catalog sets are nonempty and share the layer's shape")
    }

    pub fn is_fixed(&self) -> bool {
        self.hardware.fixed.is_some()
    }

    /// Checks every chromosome invariant; the message names the first
    /// violation.
    pub fn check(&self, c: &Chromosome) -> Result<(), String> {
        let n = self.am.num_layers();
        if c.software.len() != n {
            return Err(format!("{} software genes for {} layers", c.software.len(), n));
        }
        if !self.am.is_topological(&c.order()) {
            return Err("software genes are not a topological order".into());
        }
        if c.hardware.is_empty() || c.hardware.len() > self.hardware.max_instances {
            return Err(format!(
                "{} instances, allowed 1..={}",
                c.hardware.len(),
                self.hardware.max_instances
            ));
        }
        for (i, h) in c.hardware.iter().enumerate() {
            if c.hardware[..i].iter().any(|o| o.instance == h.instance) {
                return Err(format!("duplicate instance id {}", h.instance));
            }
            if h.instance >= c.next_instance {
                return Err(format!("instance id {} not below the id counter {}", h.instance, c.next_instance));
            }
            if !self.hardware.templates.contains(&h.template) {
                return Err(format!("instance {} uses disallowed template {}", h.instance, h.template));
            }
        }
        if let Some(fixed) = &self.hardware.fixed {
            let frozen = fixed.len() == c.hardware.len()
                && fixed
                    .iter()
                    .zip(&c.hardware)
                    .enumerate()
                    .all(|(i, (f, h))| h.instance == i as u32 && h.template == f.template);
            if !frozen {
                return Err("hardware genome differs from the fixed configuration".into());
            }
        }
        for g in &c.software {
            let t = c
                .template_of(g.instance)
                .ok_or_else(|| format!("layer {} refers to missing instance {}", g.layer, g.instance))?;
            let size = self.set_size(g.layer, t);
            if g.mapping >= size {
                return Err(format!(
                    "layer {} mapping index {} out of range ({} mappings)",
                    g.layer, g.mapping, size
                ));
            }
        }
        Ok(())
    }
}

/// A random valid chromosome: seeded-random topological order, uniformly
/// sized hardware genome (unless fixed) with uniform templates, uniform
/// instance per layer and uniform mapping index.
pub fn sample_individual<R: Rng + ?Sized>(p: &Problem, rng: &mut R) -> Chromosome {
    let order = kahn_toposort(&p.am, TieBreak::Random(&mut *rng)).expect("application model is acyclic");
    let hardware: Vec<HardwareGene> = match &p.hardware.fixed {
        Some(fixed) => fixed
            .iter()
            .enumerate()
            .map(|(i, f)| HardwareGene {
                instance: i as u32,
                template: f.template,
            })
            .collect(),
        None => {
            let n = rng.gen_range(1..=p.hardware.max_instances);
            (0..n)
                .map(|i| HardwareGene {
                    instance: i as u32,
                    template: *p.hardware.templates.choose(rng).expect("nonempty"),
                })
                .collect()
        }
    };
    let software = order
        .into_iter()
        .map(|layer| {
            let h = hardware[rng.gen_range(0..hardware.len())];
            SoftwareGene {
                layer,
                mapping: rng.gen_range(0..p.set_size(layer, h.template)),
                instance: h.instance,
            }
        })
        .collect();
    Chromosome {
        software,
        next_instance: hardware.len() as u32,
        hardware,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodedInstance {
    pub instance_id: u32,
    pub template: usize,
    /// Template parameter order.
    pub param_values: Vec<u64>,
    /// Layers executed, in execution order.
    pub layers: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodedGene {
    pub layer: usize,
    /// Hardware-genome position of the executing instance.
    pub instance: usize,
    pub mapping: usize,
}

/// A realized system: sized instances in tile order and the execution
/// order with per-layer mapping choices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodedSystem {
    pub instances: Vec<DecodedInstance>,
    pub genes: Vec<DecodedGene>,
    /// Why the system cannot be built, if it cannot.
    pub infeasible: Option<String>,
}

/// Sizes every instance to the elementwise maximum of its layers'
/// requirements (all-ones for an instance without layers). With frozen
/// hardware the configured sizes are used instead, and a layer whose
/// mapping does not fit makes the system infeasible.
pub fn decode(p: &Problem, c: &Chromosome) -> DecodedSystem {
    let mut instances: Vec<DecodedInstance> = c
        .hardware
        .iter()
        .map(|h| DecodedInstance {
            instance_id: h.instance,
            template: h.template,
            param_values: vec![1; p.templates.get(h.template).num_params()],
            layers: Vec::new(),
        })
        .collect();
    let mut genes = Vec::with_capacity(c.software.len());
    for g in &c.software {
        let pos = c.position_of(g.instance).expect("valid chromosome");
        let inst = &mut instances[pos];
        let t = p.templates.get(inst.template);
        let need = p.entry(g.layer, inst.template, g.mapping).cost.required.param_values(t);
        for (v, r) in inst.param_values.iter_mut().zip(need) {
            *v = (*v).max(r);
        }
        inst.layers.push(g.layer);
        genes.push(DecodedGene {
            layer: g.layer,
            instance: pos,
            mapping: g.mapping,
        });
    }
    let mut infeasible = None;
    if let Some(fixed) = &p.hardware.fixed {
        for (inst, f) in instances.iter_mut().zip(fixed) {
            if infeasible.is_none() {
                if let Some(i) = (0..f.param_values.len()).find(|&i| inst.param_values[i] > f.param_values[i]) {
                    let t = p.templates.get(inst.template);
                    infeasible = Some(format!(
                        "instance {} ({}) needs {} = {} but is fixed at {}",
                        inst.instance_id,
                        t.id,
                        t.param_names()[i],
                        inst.param_values[i],
                        f.param_values[i]
                    ));
                }
            }
            inst.param_values = f.param_values.clone();
        }
    }
    for inst in &instances {
        if infeasible.is_some() {
            break;
        }
        let t = p.templates.get(inst.template);
        if let Err(e) = check_params(t, &inst.param_values) {
            infeasible = Some(e.to_string());
        }
    }
    DecodedSystem {
        instances,
        genes,
        infeasible,
    }
}
