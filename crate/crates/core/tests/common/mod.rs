#![allow(dead_code)]

pub mod walker;

use comap_core::arch::{bundled_templates, TemplateLibrary};
use comap_core::costmodel::CostCoefficients;
use comap_core::layermapper::{build_catalog, CatalogOptions};
use comap_core::scheduler::{HardwareSpace, Problem};
use comap_core::sysmodel::NopConfig;
use comap_core::workload::{ApplicationModel, LayerKind, LayerSpec, ModelSpec};
use rand::Rng;

/// Small shapes keep catalog construction cheap.
pub const PALETTE: [(LayerKind, [u32; 6]); 4] = [
    (LayerKind::Conv, [4, 8, 6, 6, 3, 3]),
    (LayerKind::Conv, [8, 8, 4, 4, 1, 1]),
    (LayerKind::Depthwise, [8, 1, 6, 6, 3, 3]),
    (LayerKind::Fc, [64, 16, 1, 1, 1, 1]),
];

pub fn layer(id: &str, shape: (LayerKind, [u32; 6])) -> LayerSpec {
    let (kind, [c, k, y, x, r, s]) = shape;
    LayerSpec {
        id: id.into(),
        kind,
        c,
        k,
        y,
        x,
        r,
        s,
    }
}

pub fn model(id: &str, layers: Vec<LayerSpec>, deps: &[(&str, &str)]) -> ModelSpec {
    ModelSpec {
        id: id.into(),
        layers,
        deps: deps.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect(),
    }
}

pub fn am(models: Vec<ModelSpec>) -> ApplicationModel {
    ApplicationModel::from_specs(&models).expect("fixture workload is valid")
}

/// `n` layers in one chain.
pub fn chain(n: usize) -> ApplicationModel {
    let ids: Vec<String> = (0..n).map(|i| format!("l{i}")).collect();
    let layers = ids.iter().enumerate().map(|(i, id)| layer(id, PALETTE[i % 4])).collect();
    let deps: Vec<(&str, &str)> = ids.windows(2).map(|w| (w[0].as_str(), w[1].as_str())).collect();
    am(vec![model("chain", layers, &deps)])
}

/// a -> {b, c} -> d
pub fn diamond() -> ApplicationModel {
    am(vec![model(
        "diamond",
        vec![
            layer("a", PALETTE[0]),
            layer("b", PALETTE[1]),
            layer("c", PALETTE[2]),
            layer("d", PALETTE[3]),
        ],
        &[("a", "b"), ("a", "c"), ("b", "d"), ("c", "d")],
    )])
}

/// One or two models, each a random DAG over its layers (edges go from
/// lower to higher declaration index).
pub fn random_am<R: Rng>(rng: &mut R, max_layers: usize) -> ApplicationModel {
    let n_models = rng.gen_range(1..=2);
    let mut models = Vec::new();
    for m in 0..n_models {
        let n = rng.gen_range(1..=max_layers);
        let ids: Vec<String> = (0..n).map(|i| format!("m{m}l{i}")).collect();
        let layers = ids.iter().map(|id| layer(id, PALETTE[rng.gen_range(0..4)])).collect();
        let mut deps = Vec::new();
        for j in 1..n {
            for i in 0..j {
                if rng.gen_bool(0.35) {
                    deps.push((ids[i].as_str(), ids[j].as_str()));
                }
            }
        }
        models.push(model(&format!("m{m}"), layers, &deps));
    }
    am(models)
}

pub fn library(ids: &[&str]) -> TemplateLibrary {
    bundled_templates().restrict(ids).expect("bundled template ids")
}

pub fn problem_with(am: ApplicationModel, lib: TemplateLibrary, hardware: HardwareSpace, max_front: Option<usize>) -> Problem {
    let coeffs = CostCoefficients::default();
    let catalog = build_catalog(
        &am,
        &lib,
        &coeffs,
        CatalogOptions {
            budget: 2_000,
            max_front,
        },
    );
    let nop = NopConfig::default().mesh(hardware.max_instances).expect("mesh");
    Problem::new(am, lib, catalog, coeffs, nop, hardware).expect("fixture problem")
}

pub fn problem(am: ApplicationModel, lib: TemplateLibrary, max_instances: usize) -> Problem {
    let hw = HardwareSpace::free(&lib, max_instances);
    problem_with(am, lib, hw, None)
}

pub fn all_templates() -> TemplateLibrary {
    bundled_templates()
}
