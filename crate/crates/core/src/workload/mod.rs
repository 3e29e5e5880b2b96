//! Application models: sets of independent DNN graphs.
//!
//! Layers are addressed by a dense global index (`usize`) assigned in
//! declaration order across the whole workload file. The string ids from
//! the file are kept for reporting.

mod space;

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use space::{search_space_report, SpaceParams, SpaceReport};

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("workload schema violation: {0}")]
    Schema(String),
    #[error("model `{model}`: layer `{layer}`: {reason}")]
    InvalidLayer {
        model: String,
        layer: String,
        reason: String,
    },
    #[error("duplicate model id `{0}`")]
    DuplicateModel(String),
    #[error("duplicate layer id `{layer}` (model `{model}`)")]
    DuplicateLayer { model: String, layer: String },
    #[error("model `{model}`: dependency ({from} -> {to}) references unknown layer `{missing}`")]
    DanglingDependency {
        model: String,
        from: String,
        to: String,
        missing: String,
    },
    #[error("model `{model}`: dependency ({from} -> {to}) crosses into model `{other}`")]
    CrossModelDependency {
        model: String,
        from: String,
        to: String,
        other: String,
    },
    #[error("model `{model}`: cyclic dependency through layers {layers:?}")]
    Cycle { model: String, layers: Vec<String> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum LayerKind {
    Conv,
    Depthwise,
    Fc,
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerKind::Conv => write!(f, "CONV"),
            LayerKind::Depthwise => write!(f, "DEPTHWISE"),
            LayerKind::Fc => write!(f, "FC"),
        }
    }
}

/// One of the six loop dimensions of a convolution-like layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Dim {
    C,
    K,
    Y,
    X,
    R,
    S,
}

impl Dim {
    pub const ALL: [Dim; 6] = [Dim::C, Dim::K, Dim::Y, Dim::X, Dim::R, Dim::S];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    #[inline]
    pub fn from_index(i: usize) -> Dim {
        Dim::ALL[i]
    }
}

impl fmt::Display for Dim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Dim::C => "C",
            Dim::K => "K",
            Dim::Y => "Y",
            Dim::X => "X",
            Dim::R => "R",
            Dim::S => "S",
        };
        f.write_str(s)
    }
}

/// Six-dimensional layer shape. For `Depthwise`, `k` is the channel multiplier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LayerShape {
    pub kind: LayerKind,
    pub c: u32,
    pub k: u32,
    pub y: u32,
    pub x: u32,
    pub r: u32,
    pub s: u32,
}

impl LayerShape {
    pub fn conv(c: u32, k: u32, y: u32, x: u32, r: u32, s: u32) -> Self {
        LayerShape {
            kind: LayerKind::Conv,
            c,
            k,
            y,
            x,
            r,
            s,
        }
    }

    pub fn dims(&self) -> [u32; 6] {
        [self.c, self.k, self.y, self.x, self.r, self.s]
    }

    pub fn dim(&self, d: Dim) -> u32 {
        self.dims()[d.index()]
    }

    pub fn max_dim(&self) -> u32 {
        self.dims().into_iter().max().unwrap_or(1)
    }

    pub fn total_macs(&self) -> u64 {
        self.dims().iter().map(|&d| d as u64).product()
    }

    pub fn validate(&self) -> Result<(), String> {
        for d in Dim::ALL {
            if self.dim(d) == 0 {
                return Err(format!("dimension {d} must be >= 1"));
            }
        }
        if self.kind == LayerKind::Fc && (self.r != 1 || self.s != 1) {
            return Err("FC layers require r = s = 1".into());
        }
        Ok(())
    }

    /// Stable identifier for the shape, used as the layer-class key in
    /// catalog and cost-table files.
    pub fn class_key(&self) -> String {
        format!(
            "{}/{}x{}x{}x{}x{}x{}",
            self.kind, self.c, self.k, self.y, self.x, self.r, self.s
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Layer {
    pub index: usize,
    pub id: String,
    pub model: usize,
    pub shape: LayerShape,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DnnModel {
    pub id: String,
    /// Global layer indices, in declaration order.
    pub layers: Vec<usize>,
    /// Edges as global layer indices.
    pub deps: Vec<(usize, usize)>,
}

/// A validated set of independent DNN graphs.
#[derive(Debug, Clone, PartialEq)]
pub struct ApplicationModel {
    models: Vec<DnnModel>,
    layers: Vec<Layer>,
    preds: Vec<Vec<usize>>,
    succs: Vec<Vec<usize>>,
}

// File schema. Field names are part of the external interface.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub id: String,
    pub layers: Vec<LayerSpec>,
    #[serde(default)]
    pub deps: Vec<(String, String)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub id: String,
    pub kind: LayerKind,
    pub c: u32,
    pub k: u32,
    pub y: u32,
    pub x: u32,
    pub r: u32,
    pub s: u32,
}

pub fn parse_application_model(document: &str) -> Result<ApplicationModel, WorkloadError> {
    let specs: Vec<ModelSpec> =
        serde_json::from_str(document).map_err(|e| WorkloadError::Schema(e.to_string()))?;
    ApplicationModel::from_specs(&specs)
}

impl ApplicationModel {
    pub fn from_specs(specs: &[ModelSpec]) -> Result<Self, WorkloadError> {
        if specs.is_empty() {
            return Err(WorkloadError::Schema("workload contains no models".into()));
        }
        let mut model_ids = BTreeSet::new();
        let mut layer_owner: HashMap<&str, usize> = HashMap::new();
        let mut layers = Vec::new();
        let mut models = Vec::new();

        for (mi, spec) in specs.iter().enumerate() {
            if !model_ids.insert(spec.id.as_str()) {
                return Err(WorkloadError::DuplicateModel(spec.id.clone()));
            }
            if spec.layers.is_empty() {
                return Err(WorkloadError::Schema(format!(
                    "model `{}` has no layers",
                    spec.id
                )));
            }
            let mut indices = Vec::with_capacity(spec.layers.len());
            for ls in &spec.layers {
                if layer_owner.insert(ls.id.as_str(), mi).is_some() {
                    return Err(WorkloadError::DuplicateLayer {
                        model: spec.id.clone(),
                        layer: ls.id.clone(),
                    });
                }
                let shape = LayerShape {
                    kind: ls.kind,
                    c: ls.c,
                    k: ls.k,
                    y: ls.y,
                    x: ls.x,
                    r: ls.r,
                    s: ls.s,
                };
                shape
                    .validate()
                    .map_err(|reason| WorkloadError::InvalidLayer {
                        model: spec.id.clone(),
                        layer: ls.id.clone(),
                        reason,
                    })?;
                let index = layers.len();
                indices.push(index);
                layers.push(Layer {
                    index,
                    id: ls.id.clone(),
                    model: mi,
                    shape,
                    name: format!("{}/{}", spec.id, ls.id),
                });
            }
            models.push(DnnModel {
                id: spec.id.clone(),
                layers: indices,
                deps: Vec::new(),
            });
        }

        let by_id: HashMap<&str, usize> = layers
            .iter()
            .map(|l| (l.id.as_str(), l.index))
            .collect();
        for (mi, spec) in specs.iter().enumerate() {
            let mut seen = BTreeSet::new();
            for (from, to) in &spec.deps {
                let lookup = |id: &String| {
                    by_id
                        .get(id.as_str())
                        .copied()
                        .ok_or_else(|| WorkloadError::DanglingDependency {
                            model: spec.id.clone(),
                            from: from.clone(),
                            to: to.clone(),
                            missing: id.clone(),
                        })
                };
                let (a, b) = (lookup(from)?, lookup(to)?);
                for &end in &[a, b] {
                    if layers[end].model != mi {
                        return Err(WorkloadError::CrossModelDependency {
                            model: spec.id.clone(),
                            from: from.clone(),
                            to: to.clone(),
                            other: specs[layers[end].model].id.clone(),
                        });
                    }
                }
                if seen.insert((a, b)) {
                    models[mi].deps.push((a, b));
                }
            }
        }

        let n = layers.len();
        let mut preds = vec![Vec::new(); n];
        let mut succs = vec![Vec::new(); n];
        for m in &models {
            for &(a, b) in &m.deps {
                succs[a].push(b);
                preds[b].push(a);
            }
        }
        for v in preds.iter_mut().chain(succs.iter_mut()) {
            v.sort_unstable();
        }

        let am = ApplicationModel {
            models,
            layers,
            preds,
            succs,
        };
        if let Err(cycle) = am.toposort_with(|ready| ready[0]) {
            let model = am.layers[cycle[0]].model;
            return Err(WorkloadError::Cycle {
                model: am.models[model].id.clone(),
                layers: cycle.iter().map(|&l| am.layers[l].id.clone()).collect(),
            });
        }
        Ok(am)
    }

    pub fn models(&self) -> &[DnnModel] {
        &self.models
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer(&self, index: usize) -> &Layer {
        &self.layers[index]
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn num_deps(&self) -> usize {
        self.models.iter().map(|m| m.deps.len()).sum()
    }

    pub fn deps(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.models.iter().flat_map(|m| m.deps.iter().copied())
    }

    pub fn predecessors(&self, layer: usize) -> &[usize] {
        &self.preds[layer]
    }

    pub fn successors(&self, layer: usize) -> &[usize] {
        &self.succs[layer]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.id == id)
    }

    /// Kahn's algorithm; `pick` chooses one node out of the (sorted,
    /// nonempty) ready list. On failure returns the layers left unordered.
    fn toposort_with<F>(&self, mut pick: F) -> Result<Vec<usize>, Vec<usize>>
    where
        F: FnMut(&[usize]) -> usize,
    {
        let n = self.layers.len();
        let mut indeg: Vec<usize> = self.preds.iter().map(Vec::len).collect();
        let mut ready: BTreeSet<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        let mut buf = Vec::with_capacity(n);
        while !ready.is_empty() {
            buf.clear();
            buf.extend(ready.iter().copied());
            let next = pick(&buf);
            ready.remove(&next);
            order.push(next);
            for &s in &self.succs[next] {
                indeg[s] -= 1;
                if indeg[s] == 0 {
                    ready.insert(s);
                }
            }
        }
        if order.len() == n {
            Ok(order)
        } else {
            Err((0..n).filter(|&i| indeg[i] > 0).collect())
        }
    }

    /// Is `order` a permutation of all layers that respects every dependency?
    pub fn is_topological(&self, order: &[usize]) -> bool {
        let n = self.layers.len();
        if order.len() != n {
            return false;
        }
        let mut pos = vec![usize::MAX; n];
        for (i, &l) in order.iter().enumerate() {
            if l >= n || pos[l] != usize::MAX {
                return false;
            }
            pos[l] = i;
        }
        self.deps().all(|(a, b)| pos[a] < pos[b])
    }
}

pub enum TieBreak<'a, R: Rng + ?Sized> {
    /// Lowest layer index first among ready nodes.
    Deterministic,
    /// Uniform choice among ready nodes.
    Random(&'a mut R),
}

pub fn kahn_toposort<R: Rng + ?Sized>(
    am: &ApplicationModel,
    tie_break: TieBreak<'_, R>,
) -> Result<Vec<usize>, WorkloadError> {
    let result = match tie_break {
        TieBreak::Deterministic => am.toposort_with(|ready| ready[0]),
        TieBreak::Random(rng) => am.toposort_with(|ready| ready[rng.gen_range(0..ready.len())]),
    };
    result.map_err(|left| WorkloadError::Cycle {
        model: am.models[am.layers[left[0]].model].id.clone(),
        layers: left.iter().map(|&l| am.layers[l].id.clone()).collect(),
    })
}

/// Deterministic Kahn order (lowest index first).
pub fn toposort(am: &ApplicationModel) -> Vec<usize> {
    kahn_toposort::<rand::rngs::StdRng>(am, TieBreak::Deterministic)
        .expect("validated application model is acyclic")
}

/// Layers sharing an identical `(kind, c, k, y, x, r, s)` tuple.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct UniqueLayerClass {
    pub shape: LayerShape,
    pub members: Vec<usize>,
}

/// Classes in order of first appearance.
pub fn unique_layers(am: &ApplicationModel) -> Vec<UniqueLayerClass> {
    let mut classes: Vec<UniqueLayerClass> = Vec::new();
    let mut lookup: HashMap<LayerShape, usize> = HashMap::new();
    for layer in &am.layers {
        match lookup.get(&layer.shape) {
            Some(&ci) => classes[ci].members.push(layer.index),
            None => {
                lookup.insert(layer.shape, classes.len());
                classes.push(UniqueLayerClass {
                    shape: layer.shape,
                    members: vec![layer.index],
                });
            }
        }
    }
    classes
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn layer(id: &str, c: u32) -> String {
        format!(r#"{{"id":"{id}","kind":"CONV","c":{c},"k":2,"y":2,"x":2,"r":1,"s":1}}"#)
    }

    #[test]
    fn minimal_model() {
        let doc = format!(r#"[{{"id":"m","layers":[{}],"deps":[]}}]"#, layer("a", 1));
        let am = parse_application_model(&doc).unwrap();
        assert_eq!(am.num_layers(), 1);
        assert_eq!(am.num_deps(), 0);
    }

    #[test]
    fn two_cycle_rejected() {
        let doc = format!(
            r#"[{{"id":"m","layers":[{},{}],"deps":[["a","b"],["b","a"]]}}]"#,
            layer("a", 1),
            layer("b", 1)
        );
        match parse_application_model(&doc) {
            Err(WorkloadError::Cycle { model, layers }) => {
                assert_eq!(model, "m");
                assert_eq!(layers, vec!["a", "b"]);
            }
            other => panic!("expected cycle error, got {other:?}"),
        }
    }

    #[test]
    fn three_chained_pairs() {
        let mut models = Vec::new();
        for m in 0..3 {
            models.push(format!(
                r#"{{"id":"m{m}","layers":[{},{}],"deps":[["a{m}","b{m}"]]}}"#,
                layer(&format!("a{m}"), 1),
                layer(&format!("b{m}"), 2)
            ));
        }
        let am = parse_application_model(&format!("[{}]", models.join(","))).unwrap();
        assert_eq!(am.num_layers(), 6);
        assert_eq!(am.num_deps(), 3);
    }

    #[test]
    fn schema_and_reference_errors() {
        assert!(matches!(
            parse_application_model(r#"[{"id":"m","layers":[{"id":"a"}]}]"#),
            Err(WorkloadError::Schema(_))
        ));
        let dangling = format!(
            r#"[{{"id":"m","layers":[{}],"deps":[["a","zz"]]}}]"#,
            layer("a", 1)
        );
        assert!(matches!(
            parse_application_model(&dangling),
            Err(WorkloadError::DanglingDependency { missing, .. }) if missing == "zz"
        ));
        let cross = format!(
            r#"[{{"id":"m","layers":[{}],"deps":[["a","b"]]}},{{"id":"n","layers":[{}]}}]"#,
            layer("a", 1),
            layer("b", 1)
        );
        assert!(matches!(
            parse_application_model(&cross),
            Err(WorkloadError::CrossModelDependency { .. })
        ));
        let zero = r#"[{"id":"m","layers":[{"id":"a","kind":"CONV","c":0,"k":1,"y":1,"x":1,"r":1,"s":1}]}]"#;
        assert!(matches!(
            parse_application_model(zero),
            Err(WorkloadError::InvalidLayer { .. })
        ));
        let fc = r#"[{"id":"m","layers":[{"id":"a","kind":"FC","c":4,"k":4,"y":1,"x":1,"r":3,"s":1}]}]"#;
        assert!(parse_application_model(fc).is_err());
        let dup = format!(
            r#"[{{"id":"m","layers":[{},{}]}}]"#,
            layer("a", 1),
            layer("a", 2)
        );
        assert!(matches!(
            parse_application_model(&dup),
            Err(WorkloadError::DuplicateLayer { .. })
        ));
    }

    #[test]
    fn chain_and_tie_break() {
        let doc = format!(
            r#"[{{"id":"m","layers":[{},{},{}],"deps":[["a","b"],["b","c"]]}},{{"id":"n","layers":[{},{}]}}]"#,
            layer("a", 1),
            layer("b", 1),
            layer("c", 1),
            layer("p", 1),
            layer("q", 1)
        );
        let am = parse_application_model(&doc).unwrap();
        let order = toposort(&am);
        assert_eq!(order, vec![0, 1, 2, 3, 4]);
        let ids: Vec<&str> = order.iter().map(|&i| am.layer(i).id.as_str()).collect();
        assert_eq!(&ids[..3], &["a", "b", "c"]);
    }

    #[test]
    fn diamond_random_tie_break_reaches_both_orders() {
        let doc = format!(
            r#"[{{"id":"m","layers":[{},{},{},{}],"deps":[["a","b"],["a","c"],["b","d"],["c","d"]]}}]"#,
            layer("a", 1),
            layer("b", 1),
            layer("c", 1),
            layer("d", 1)
        );
        let am = parse_application_model(&doc).unwrap();
        // Brute force: the only valid orders are a,b,c,d and a,c,b,d.
        let mut valid = Vec::new();
        let mut perm = vec![0, 1, 2, 3];
        permute(&mut perm, 0, &mut |p| {
            if am.is_topological(p) {
                valid.push(p.to_vec());
            }
        });
        assert_eq!(valid.len(), 2);
        let mut seen = BTreeSet::new();
        for seed in 0..64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let order = kahn_toposort(&am, TieBreak::Random(&mut rng)).unwrap();
            assert!(valid.contains(&order));
            seen.insert(order);
        }
        assert_eq!(seen.len(), 2);
    }

    fn permute(v: &mut Vec<usize>, k: usize, f: &mut dyn FnMut(&[usize])) {
        if k == v.len() {
            f(v);
            return;
        }
        for i in k..v.len() {
            v.swap(k, i);
            permute(v, k + 1, f);
            v.swap(k, i);
        }
    }

    #[test]
    fn unique_layer_classes() {
        let same = format!(
            r#"[{{"id":"m","layers":[{},{},{}]}}]"#,
            layer("a", 3),
            layer("b", 3),
            layer("c", 3)
        );
        let classes = unique_layers(&parse_application_model(&same).unwrap());
        assert_eq!(classes.len(), 1);
        assert_eq!(classes[0].members, vec![0, 1, 2]);

        let distinct = format!(
            r#"[{{"id":"m","layers":[{},{},{}]}}]"#,
            layer("a", 1),
            layer("b", 2),
            layer("c", 3)
        );
        let classes = unique_layers(&parse_application_model(&distinct).unwrap());
        assert_eq!(classes.len(), 3);
        assert!(classes.iter().all(|c| c.members.len() == 1));
    }
}
