//! End-to-end search: builds the mapping catalog, then evolves chromosomes
//! with NSGA-II under one of the run modes.

mod report;

use std::collections::{HashMap, HashSet};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::{ArchError, TemplateLibrary};
use crate::costmodel::{CostCoefficients, CostTable};
use crate::layermapper::{build_catalog, dominates, CatalogOptions, MapperError, MappingCatalog};
use crate::nsga2::{converged, substream, survival_ranked, tournament_select, ConvergenceConfig, Ranking};
use crate::scheduler::{
    sample_individual, Chromosome, FixedInstance, HardwareSpace, Operator, OperatorProbabilities,
    Problem, ProblemError, DEFAULT_MAX_INSTANCES,
};
use crate::sysmodel::{evaluate, EvaluationResult, NopConfig, SysError};
use crate::workload::{search_space_report, ApplicationModel, LayerShape, SpaceParams, SpaceReport};

pub use report::{emit_reports, read_front_csv, PARETO_CSV_HEADER};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("bad config: {0}")]
    Config(String),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Mapper(#[from] MapperError),
    #[error(transparent)]
    Arch(#[from] ArchError),
    #[error(transparent)]
    Sys(#[from] SysError),
    #[error("no feasible chromosome found after {0} sampling attempts")]
    Infeasible(usize),
    #[error("empty front: {0}")]
    EmptyFront(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Free hardware genome over the whole template library.
    CoOpt,
    /// One template family, every layer pinned to its minimum-latency
    /// mapping.
    HardwareOnly,
    /// Frozen hardware genome; only schedule, assignment and mappings
    /// evolve.
    MappingOnly,
    MonoLatency,
    MonoEnergy,
    /// Co-optimization with one operator disabled, compared against the
    /// full operator set.
    Ablation,
}

impl Mode {
    pub const ALL: [Mode; 6] = [
        Mode::CoOpt,
        Mode::HardwareOnly,
        Mode::MappingOnly,
        Mode::MonoLatency,
        Mode::MonoEnergy,
        Mode::Ablation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::CoOpt => "co_opt",
            Mode::HardwareOnly => "hardware_only",
            Mode::MappingOnly => "mapping_only",
            Mode::MonoLatency => "mono_latency",
            Mode::MonoEnergy => "mono_energy",
            Mode::Ablation => "ablation",
        }
    }

    pub fn from_name(name: &str) -> Option<Mode> {
        Mode::ALL.into_iter().find(|m| m.name() == name)
    }

    /// Objectives that drive selection.
    fn project(self, o: [f64; 3]) -> Vec<f64> {
        match self {
            Mode::MonoLatency => vec![o[0]],
            Mode::MonoEnergy => vec![o[1]],
            _ => o.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub mode: Mode,
    pub seed: u64,
    pub population: usize,
    pub convergence: ConvergenceConfig,
    pub probabilities: OperatorProbabilities,
    pub max_instances: usize,
    pub catalog: CatalogOptions,
    pub ablated_operator: Option<Operator>,
    /// Template family for hardware-only runs (default: the first one).
    pub hardware_template: Option<String>,
    /// Sampling attempts per initial individual before giving up on
    /// finding a feasible one.
    pub sample_retries: usize,
    /// Extra attempts at producing an offspring that is not a copy of a
    /// current parent or of an earlier offspring in the same generation.
    /// With per-operator probabilities this low most children would
    /// otherwise be untouched clones; 0 disables the check.
    pub duplicate_retries: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: Mode::CoOpt,
            seed: 0,
            population: 250,
            convergence: ConvergenceConfig::default(),
            probabilities: OperatorProbabilities::default(),
            max_instances: DEFAULT_MAX_INSTANCES,
            catalog: CatalogOptions::default(),
            ablated_operator: None,
            hardware_template: None,
            sample_retries: 100,
            duplicate_retries: 20,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), RunError> {
        self.probabilities.validate().map_err(RunError::Config)?;
        if self.population < 4 {
            return Err(RunError::Config(format!("population must be >= 4, got {}", self.population)));
        }
        if self.convergence.max_generations < 1 {
            return Err(RunError::Config("generations must be >= 1".into()));
        }
        if self.max_instances < 1 {
            return Err(RunError::Config("max_instances must be >= 1".into()));
        }
        if self.catalog.budget < 1 {
            return Err(RunError::Config("enumeration budget must be >= 1".into()));
        }
        if self.mode == Mode::Ablation && self.ablated_operator.is_none() {
            return Err(RunError::Config("ablation mode needs an operator to ablate".into()));
        }
        if let Some(d) = self.convergence.density {
            if d.window < 1 || !(0.0..=1.0).contains(&d.threshold) {
                return Err(RunError::Config("density window must be >= 1 and threshold in [0, 1]".into()));
            }
        }
        Ok(())
    }

    /// Probabilities actually used, after mode restrictions and ablation.
    pub fn effective_probabilities(&self) -> OperatorProbabilities {
        let mut p = self.probabilities;
        if self.mode == Mode::MappingOnly {
            for op in Operator::ALL.into_iter().filter(|o| o.mutates_hardware()) {
                p.set(op, 0.0);
            }
        }
        if let Some(op) = self.ablated_operator {
            p.set(op, 0.0);
        }
        p
    }
}

/// Static inputs of a run.
#[derive(Debug, Clone)]
pub struct RunInputs {
    pub am: ApplicationModel,
    pub templates: TemplateLibrary,
    pub coeffs: CostCoefficients,
    pub nop: NopConfig,
    /// Previously exported catalog to reuse instead of enumerating.
    pub catalog: Option<MappingCatalog>,
    pub cost_table: Option<CostTable>,
    /// Hardware genome for mapping-only runs.
    pub fixed_hardware: Option<Vec<FixedInstance>>,
}

/// Instance list of a fixed-hardware file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FixedHardwareDoc {
    instances: Vec<FixedInstanceSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FixedInstanceSpec {
    template: String,
    /// Parameter values by name; missing ones take the template maximum.
    #[serde(default)]
    params: std::collections::BTreeMap<String, u64>,
}

/// Parses `{"instances": [{"template": id, "params": {name: value}}]}`.
pub fn parse_fixed_hardware(document: &str, templates: &TemplateLibrary) -> Result<Vec<FixedInstance>, RunError> {
    let doc: FixedHardwareDoc =
        serde_json::from_str(document).map_err(|e| RunError::Config(format!("fixed hardware: {e}")))?;
    doc.instances
        .iter()
        .map(|spec| {
            let template = templates
                .position(&spec.template)
                .ok_or_else(|| ArchError::UnknownTemplate(spec.template.clone()))?;
            let t = templates.get(template);
            let mut values = t.param_max().to_vec();
            for (name, &v) in &spec.params {
                let i = t.param_names().iter().position(|n| n == name).ok_or_else(|| {
                    RunError::Config(format!("template {} has no parameter {name}", t.id))
                })?;
                values[i] = v;
            }
            crate::arch::check_params(t, &values)?;
            Ok(FixedInstance {
                template,
                param_values: values,
            })
        })
        .collect()
}

/// Builds the search problem for a mode.
pub fn prepare_problem(inputs: &RunInputs, cfg: &RunConfig) -> Result<Problem, RunError> {
    cfg.validate()?;
    let templates = match cfg.mode {
        Mode::HardwareOnly => {
            let family = cfg
                .hardware_template
                .clone()
                .unwrap_or_else(|| inputs.templates.get(0).id.clone());
            inputs.templates.restrict(&[family.as_str()])?
        }
        _ => inputs.templates.clone(),
    };
    let mut catalog = match &inputs.catalog {
        Some(c) if c.template_ids() == templates.iter().map(|t| t.id.clone()).collect::<Vec<_>>().as_slice() => {
            c.clone()
        }
        Some(c) => {
            return Err(RunError::Config(format!(
                "catalog covers templates {:?}, run uses {:?}",
                c.template_ids(),
                templates.iter().map(|t| t.id.as_str()).collect::<Vec<_>>()
            )))
        }
        None => build_catalog(&inputs.am, &templates, &inputs.coeffs, cfg.catalog),
    };
    if let Some(table) = &inputs.cost_table {
        catalog.apply_cost_table(table)?;
    }
    if cfg.mode == Mode::HardwareOnly {
        catalog.truncate_sets(1);
    }
    let hardware = if cfg.mode == Mode::MappingOnly {
        let fixed = inputs
            .fixed_hardware
            .clone()
            .ok_or_else(|| RunError::Config("mapping_only mode needs a fixed hardware configuration".into()))?;
        HardwareSpace {
            max_instances: cfg.max_instances.max(fixed.len()),
            templates: (0..templates.len()).collect(),
            fixed: Some(fixed),
        }
    } else {
        HardwareSpace::free(&templates, cfg.max_instances)
    };
    let nop = inputs.nop.mesh(hardware.max_instances)?;
    Ok(Problem::new(
        inputs.am.clone(),
        templates,
        catalog,
        inputs.coeffs.clone(),
        nop,
        hardware,
    )?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: usize,
    pub front0_size: usize,
    pub front0_fraction: f64,
    /// Mean over front-0 members of the normalized box volume they
    /// dominate below a reference point fixed at generation 0.
    pub hypervolume_proxy: f64,
    pub best_latency: f64,
    pub best_energy: f64,
    pub best_area: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrontMember {
    pub chromosome: Chromosome,
    pub eval: EvaluationResult,
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub config: RunConfig,
    pub problem: Problem,
    /// Final non-dominated individuals, distinct objective triples, in
    /// crowded-comparison order.
    pub front: Vec<FrontMember>,
    pub log: Vec<GenerationStats>,
    pub space: SpaceReport,
    pub ablation: Option<AblationSummary>,
}

impl RunArtifacts {
    pub fn front_objectives(&self) -> Vec<[f64; 3]> {
        self.front.iter().map(|m| m.eval.objectives()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub ablated_operator: Operator,
    pub baseline_front_size: usize,
    pub ablated_front_size: usize,
    /// Share of the ablated front dominated by the baseline front.
    pub dominated_fraction: f64,
    /// Share of a second baseline run (next seed) dominated by the
    /// baseline front.
    pub control_dominated_fraction: f64,
}

/// Share of `b`'s points strictly dominated by some point of `a`.
pub fn compare_fronts(a: &[[f64; 3]], b: &[[f64; 3]]) -> Result<f64, RunError> {
    if a.is_empty() || b.is_empty() {
        return Err(RunError::EmptyFront(format!("fronts have {} and {} points", a.len(), b.len())));
    }
    let dominated = b.iter().filter(|x| a.iter().any(|y| dominates(y, &x[..]))).count();
    Ok(dominated as f64 / b.len() as f64)
}

/// Search-space sizes for a problem: the largest template parameter count
/// and parameter range, the instance cap, the six loop dims, the largest
/// layer and the model structure.
pub fn space_report(p: &Problem) -> SpaceReport {
    let np = p.templates.iter().map(|t| t.num_params()).max().unwrap_or(1) as u32;
    let v = p
        .templates
        .iter()
        .flat_map(|t| t.param_max().iter().copied())
        .max()
        .unwrap_or(1)
        .min(u32::MAX as u64) as u32;
    let shape: LayerShape = p
        .am
        .layers()
        .iter()
        .map(|l| l.shape)
        .max_by_key(|s| (s.total_macs(), *s))
        .expect("application model has layers");
    let l_per_model = p.am.models().iter().map(|m| m.layers.len()).max().unwrap_or(1) as u32;
    search_space_report(&SpaceParams {
        np,
        v,
        n_ssai: p.hardware.max_instances as u32,
        nl: 6,
        shape,
        n_layers: p.am.num_layers() as u32,
        nd: p.am.models().len() as u32,
        l_per_model,
    })
}

/// Runs the configured search. Ablation mode additionally runs the full
/// operator set with the same seed and with the next seed as a control.
pub fn run_search(inputs: &RunInputs, cfg: &RunConfig) -> Result<RunArtifacts, RunError> {
    let problem = prepare_problem(inputs, cfg)?;
    let mut artifacts = evolve(problem, cfg)?;
    if cfg.mode == Mode::Ablation {
        let op = cfg.ablated_operator.expect("validated");
        let baseline_cfg = RunConfig {
            mode: Mode::CoOpt,
            ablated_operator: None,
            ..cfg.clone()
        };
        let control_cfg = RunConfig {
            seed: cfg.seed.wrapping_add(1),
            ..baseline_cfg.clone()
        };
        let baseline = evolve(artifacts.problem.clone(), &baseline_cfg)?;
        let control = evolve(artifacts.problem.clone(), &control_cfg)?;
        let base = baseline.front_objectives();
        artifacts.ablation = Some(AblationSummary {
            ablated_operator: op,
            baseline_front_size: base.len(),
            ablated_front_size: artifacts.front.len(),
            dominated_fraction: compare_fronts(&base, &artifacts.front_objectives())?,
            control_dominated_fraction: compare_fronts(&base, &control.front_objectives())?,
        });
    }
    Ok(artifacts)
}

struct Evaluator<'a> {
    problem: &'a Problem,
    cache: HashMap<Chromosome, [f64; 3]>,
    evaluations: usize,
}

impl Evaluator<'_> {
    fn objectives(&mut self, c: &Chromosome) -> [f64; 3] {
        if let Some(&o) = self.cache.get(c) {
            return o;
        }
        self.evaluations += 1;
        let o = evaluate(self.problem, c).objectives();
        self.cache.insert(c.clone(), o);
        o
    }
}

fn feasible(o: &[f64; 3]) -> bool {
    o.iter().all(|v| v.is_finite())
}

/// The genetic search on a prepared problem.
pub fn evolve(problem: Problem, cfg: &RunConfig) -> Result<RunArtifacts, RunError> {
    cfg.validate()?;
    let probs = cfg.effective_probabilities();
    let n = cfg.population;
    let mut sampling = substream(cfg.seed, "sampling");
    let mut selection = substream(cfg.seed, "selection");
    let mut op_rngs: Vec<_> = Operator::ALL.iter().map(|op| substream(cfg.seed, op.name())).collect();
    let mut eval = Evaluator {
        problem: &problem,
        cache: HashMap::new(),
        evaluations: 0,
    };

    let mut pop: Vec<(Chromosome, [f64; 3])> = Vec::with_capacity(n);
    let mut any_feasible = false;
    for _ in 0..n {
        let mut pick = None;
        for _ in 0..cfg.sample_retries.max(1) {
            let c = sample_individual(&problem, &mut sampling);
            let o = eval.objectives(&c);
            let ok = feasible(&o);
            pick = Some((c, o));
            if ok {
                any_feasible = true;
                break;
            }
        }
        pop.push(pick.expect("at least one attempt"));
    }
    if !any_feasible {
        return Err(RunError::Infeasible(n * cfg.sample_retries.max(1)));
    }

    let reference: [f64; 3] = std::array::from_fn(|k| {
        1.1 * pop
            .iter()
            .map(|(_, o)| o[k])
            .filter(|v| v.is_finite())
            .fold(0.0, f64::max)
    });
    let project = |pop: &[(Chromosome, [f64; 3])]| -> Vec<Vec<f64>> {
        pop.iter().map(|(_, o)| cfg.mode.project(*o)).collect()
    };
    let mut ranking = Ranking::new(&project(&pop));
    let mut history = Vec::new();
    let mut log = Vec::new();
    let mut generation = 0;
    loop {
        generation += 1;
        let mut offspring = Vec::with_capacity(n);
        let mut seen: HashSet<Chromosome> = pop.iter().map(|(c, _)| c.clone()).collect();
        let mut seen_objs: HashSet<[u64; 3]> = pop.iter().map(|(_, o)| o.map(f64::to_bits)).collect();
        for _ in 0..n {
            let mut child = None;
            for _ in 0..=cfg.duplicate_retries {
                let a = tournament_select(&ranking, &mut selection);
                let b = tournament_select(&ranking, &mut selection);
                let mut c = pop[a].0.clone();
                for (k, op) in Operator::ALL.into_iter().enumerate() {
                    let prob = probs.get(op);
                    if prob > 0.0 && op_rngs[k].gen::<f64>() < prob {
                        c = op.apply(&problem, &c, &pop[b].0, &mut op_rngs[k]);
                    }
                }
                let o = eval.objectives(&c);
                let fresh = !seen.contains(&c) && !seen_objs.contains(&o.map(f64::to_bits));
                child = Some((c, o));
                if fresh {
                    break;
                }
            }
            let (child, o) = child.expect("at least one attempt");
            seen.insert(child.clone());
            seen_objs.insert(o.map(f64::to_bits));
            debug_assert_eq!(problem.check(&child), Ok(()));
            offspring.push((child, o));
        }
        pop.extend(offspring);
        let merged = Ranking::new(&project(&pop));
        let keep = survival_ranked(&merged, n);
        let mut slots: Vec<Option<(Chromosome, [f64; 3])>> = pop.into_iter().map(Some).collect();
        pop = keep.iter().map(|&i| slots[i].take().expect("survivors are distinct")).collect();
        ranking = Ranking::new(&project(&pop));

        let front0 = &ranking.fronts[0];
        let fraction = front0.len() as f64 / n as f64;
        history.push(fraction);
        let best = |k: usize| pop.iter().map(|(_, o)| o[k]).fold(f64::INFINITY, f64::min);
        let hv = front0
            .iter()
            .map(|&i| {
                let o = pop[i].1;
                (0..3)
                    .map(|k| if reference[k] > 0.0 { (1.0 - o[k] / reference[k]).max(0.0) } else { 0.0 })
                    .product::<f64>()
            })
            .sum::<f64>()
            / front0.len() as f64;
        let stats = GenerationStats {
            generation,
            front0_size: front0.len(),
            front0_fraction: fraction,
            hypervolume_proxy: hv,
            best_latency: best(0),
            best_energy: best(1),
            best_area: best(2),
            evaluations: eval.evaluations,
        };
        log::info!(
            "gen {:>4}: front0 {:>4} ({:.3}), hv {:.4}, best lat {:.0} en {:.4e} area {:.4}",
            generation,
            stats.front0_size,
            fraction,
            hv,
            stats.best_latency,
            stats.best_energy,
            stats.best_area
        );
        log.push(stats);
        if converged(&history, &cfg.convergence) {
            break;
        }
    }

    // Front 0 in crowded order, one member per distinct objective triple.
    let mut front_idx: Vec<usize> = ranking.fronts[0].clone();
    front_idx.sort_by(|&a, &b| ranking.cmp(a, b));
    let mut front: Vec<FrontMember> = Vec::new();
    let mut seen: Vec<[f64; 3]> = Vec::new();
    for i in front_idx {
        let (c, o) = &pop[i];
        if !feasible(o) || seen.contains(o) {
            continue;
        }
        seen.push(*o);
        front.push(FrontMember {
            chromosome: c.clone(),
            eval: evaluate(&problem, c),
        });
    }
    let space = space_report(&problem);
    Ok(RunArtifacts {
        config: cfg.clone(),
        problem,
        front,
        log,
        space,
        ablation: None,
    })
}
