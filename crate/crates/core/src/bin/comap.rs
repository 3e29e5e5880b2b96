use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};

use comap_core::arch::{bundled_templates, TemplateLibrary};
use comap_core::costmodel::{load_external_cost_table, CostCoefficients};
use comap_core::engine::{
    compare_fronts, emit_reports, parse_fixed_hardware, prepare_problem, read_front_csv, run_search, space_report,
    Mode, RunConfig, RunInputs,
};
use comap_core::layermapper::{build_catalog, import_catalog, CatalogOptions};
use comap_core::nsga2::{ConvergenceConfig, DensityRule};
use comap_core::scheduler::{Operator, OperatorProbabilities};
use comap_core::sysmodel::NopConfig;
use comap_core::workload::{parse_application_model, unique_layers, ApplicationModel};

#[derive(Parser)]
#[command(name = "comap", version, about = "Hardware/mapping/schedule co-optimization for multi-accelerator DNN systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the search and write reports.
    Run(RunArgs),
    /// Fraction of FRONT_B's points dominated by FRONT_A (pareto.csv files).
    Compare { front_a: PathBuf, front_b: PathBuf },
    /// Print the search-space size report for a workload.
    Space(SpaceArgs),
    /// Build the per-layer mapping catalog and write it as JSON.
    Catalog(CatalogArgs),
}

#[derive(Args)]
struct Inputs {
    #[arg(long)]
    workload: PathBuf,
    /// Template library (default: bundled templates).
    #[arg(long)]
    templates: Option<PathBuf>,
    /// Cost coefficients (default: bundled coefficients).
    #[arg(long)]
    coeffs: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[arg(long)]
    nop: Option<PathBuf>,
    #[arg(long, default_value = "co_opt", value_parser = parse_mode)]
    mode: Mode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 300)]
    generations: usize,
    #[arg(long, default_value_t = 250)]
    population: usize,
    #[arg(long, default_value_t = 16)]
    max_instances: usize,
    /// Mappings evaluated per (layer class, template).
    #[arg(long, default_value_t = 20_000)]
    budget: usize,
    /// Keep at most this many Pareto mappings per (layer class, template).
    #[arg(long)]
    max_front: Option<usize>,
    /// Operator whose probability is forced to zero.
    #[arg(long, value_parser = parse_operator)]
    ablate: Option<Operator>,
    /// Stop early once this share of the population is non-dominated ...
    #[arg(long)]
    density_threshold: Option<f64>,
    /// ... for this many consecutive generations.
    #[arg(long, default_value_t = 5)]
    density_window: usize,
    /// Fixed instance set for mapping_only runs.
    #[arg(long)]
    fixed_hardware: Option<PathBuf>,
    /// Template family for hardware_only runs.
    #[arg(long)]
    hardware_template: Option<String>,
    /// Reuse an exported mapping catalog.
    #[arg(long)]
    catalog: Option<PathBuf>,
    /// External per-mapping cost overrides.
    #[arg(long)]
    cost_table: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[command(flatten)]
    probs: ProbArgs,
}

#[derive(Args)]
struct ProbArgs {
    #[arg(long, default_value_t = 0.103)]
    p_scheduling_crossover: f64,
    #[arg(long, default_value_t = 0.052)]
    p_scheduling_mutation: f64,
    #[arg(long, default_value_t = 0.045)]
    p_sa_crossover: f64,
    #[arg(long, default_value_t = 0.041)]
    p_template_mutation: f64,
    #[arg(long, default_value_t = 0.042)]
    p_merging_mutation: f64,
    #[arg(long, default_value_t = 0.039)]
    p_splitting_mutation: f64,
    #[arg(long, default_value_t = 0.048)]
    p_mapping_mutation: f64,
    #[arg(long, default_value_t = 0.047)]
    p_mapping_crossover: f64,
    #[arg(long, default_value_t = 0.025)]
    p_layer_assignment_mutation: f64,
    #[arg(long, default_value_t = 0.027)]
    p_position_mutation: f64,
}

impl ProbArgs {
    fn probabilities(&self) -> OperatorProbabilities {
        let mut p = OperatorProbabilities::default();
        let values = [
            self.p_scheduling_crossover,
            self.p_scheduling_mutation,
            self.p_sa_crossover,
            self.p_template_mutation,
            self.p_merging_mutation,
            self.p_splitting_mutation,
            self.p_mapping_mutation,
            self.p_mapping_crossover,
            self.p_layer_assignment_mutation,
            self.p_position_mutation,
        ];
        for (op, v) in Operator::ALL.into_iter().zip(values) {
            p.set(op, v);
        }
        p
    }
}

#[derive(Args)]
struct SpaceArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[arg(long, default_value_t = 16)]
    max_instances: usize,
}

#[derive(Args)]
struct CatalogArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[arg(long, default_value_t = 20_000)]
    budget: usize,
    #[arg(long)]
    max_front: Option<usize>,
    #[arg(long, default_value = "catalog.json")]
    out: PathBuf,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    Mode::from_name(s).ok_or_else(|| {
        let names: Vec<_> = Mode::ALL.iter().map(|m| m.name()).collect();
        format!("unknown mode `{s}` (expected one of {})", names.join(", "))
    })
}

fn parse_operator(s: &str) -> Result<Operator, String> {
    Operator::from_name(s).ok_or_else(|| {
        let names: Vec<_> = Operator::ALL.iter().map(|o| o.name()).collect();
        format!("unknown operator `{s}` (expected one of {})", names.join(", "))
    })
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

struct Loaded {
    am: ApplicationModel,
    templates: TemplateLibrary,
    coeffs: CostCoefficients,
}

fn load(inputs: &Inputs) -> Result<Loaded> {
    let am = parse_application_model(&read(&inputs.workload)?)
        .with_context(|| format!("workload {}", inputs.workload.display()))?;
    let templates = match &inputs.templates {
        Some(p) => TemplateLibrary::parse(&read(p)?).with_context(|| format!("templates {}", p.display()))?,
        None => bundled_templates(),
    };
    let coeffs = match &inputs.coeffs {
        Some(p) => CostCoefficients::parse(&read(p)?).with_context(|| format!("coefficients {}", p.display()))?,
        None => CostCoefficients::default(),
    };
    Ok(Loaded { am, templates, coeffs })
}

fn run(args: RunArgs) -> Result<()> {
    let Loaded { am, templates, coeffs } = load(&args.inputs)?;
    let nop = match &args.nop {
        Some(p) => NopConfig::parse(&read(p)?).with_context(|| format!("nop {}", p.display()))?,
        None => NopConfig::default(),
    };
    let catalog = match &args.catalog {
        Some(p) => Some(import_catalog(&read(p)?, &am, &templates, &coeffs).with_context(|| format!("catalog {}", p.display()))?),
        None => None,
    };
    let cost_table = match &args.cost_table {
        Some(p) => {
            let classes: Vec<_> = unique_layers(&am).into_iter().map(|c| c.shape).collect();
            Some(load_external_cost_table(&read(p)?, &templates, &classes).with_context(|| format!("cost table {}", p.display()))?)
        }
        None => None,
    };
    let fixed_hardware = match &args.fixed_hardware {
        Some(p) => Some(parse_fixed_hardware(&read(p)?, &templates).with_context(|| format!("fixed hardware {}", p.display()))?),
        None => None,
    };
    let cfg = RunConfig {
        mode: args.mode,
        seed: args.seed,
        population: args.population,
        convergence: ConvergenceConfig {
            max_generations: args.generations,
            density: args.density_threshold.map(|threshold| DensityRule {
                threshold,
                window: args.density_window,
            }),
        },
        probabilities: args.probs.probabilities(),
        max_instances: args.max_instances,
        catalog: CatalogOptions {
            budget: args.budget,
            max_front: args.max_front,
        },
        ablated_operator: args.ablate,
        hardware_template: args.hardware_template,
        ..RunConfig::default()
    };
    if cfg.mode == Mode::Ablation && cfg.ablated_operator.is_none() {
        return Err(anyhow!("--mode ablation requires --ablate <operator>"));
    }
    let inputs = RunInputs {
        am,
        templates,
        coeffs,
        nop,
        catalog,
        cost_table,
        fixed_hardware,
    };
    let artifacts = run_search(&inputs, &cfg)?;
    let written = emit_reports(&artifacts, &args.out)?;
    let summary = serde_json::json!({
        "front_size": artifacts.front.len(),
        "generations": artifacts.log.len(),
        "out": args.out.display().to_string(),
        "files": written.len(),
    });
    println!("{summary}");
    Ok(())
}

fn compare(a: &Path, b: &Path) -> Result<()> {
    let fa = read_front_csv(&read(a)?).with_context(|| a.display().to_string())?;
    let fb = read_front_csv(&read(b)?).with_context(|| b.display().to_string())?;
    let fraction = compare_fronts(&fa, &fb)?;
    println!("{}", serde_json::json!({ "dominated_fraction": fraction, "a": fa.len(), "b": fb.len() }));
    Ok(())
}

fn space(args: SpaceArgs) -> Result<()> {
    let Loaded { am, templates, coeffs } = load(&args.inputs)?;
    let inputs = RunInputs {
        am,
        templates,
        coeffs,
        nop: NopConfig::default(),
        catalog: None,
        cost_table: None,
        fixed_hardware: None,
    };
    // Only the problem's shape matters, so a one-mapping catalog suffices.
    let cfg = RunConfig {
        max_instances: args.max_instances,
        catalog: CatalogOptions {
            budget: 1,
            max_front: Some(1),
        },
        ..RunConfig::default()
    };
    let problem = prepare_problem(&inputs, &cfg)?;
    println!("{}", serde_json::to_string_pretty(&space_report(&problem))?);
    Ok(())
}

fn catalog(args: CatalogArgs) -> Result<()> {
    let Loaded { am, templates, coeffs } = load(&args.inputs)?;
    let options = CatalogOptions {
        budget: args.budget,
        max_front: args.max_front,
    };
    let catalog = build_catalog(&am, &templates, &coeffs, options);
    fs::write(&args.out, catalog.to_json()).with_context(|| format!("writing {}", args.out.display()))?;
    println!(
        "{}",
        serde_json::json!({ "classes": catalog.classes().len(), "max_set_size": catalog.max_set_size(), "out": args.out.display().to_string() })
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Compare { front_a, front_b } => compare(&front_a, &front_b),
        Command::Space(a) => space(a),
        Command::Catalog(a) => catalog(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let chain: Vec<String> = e.chain().map(|c| c.to_string()).collect();
            eprintln!("{}", serde_json::json!({ "error": chain.last(), "context": chain }));
            ExitCode::FAILURE
        }
    }
}
