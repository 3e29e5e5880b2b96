//! Exact sizes of the joint hardware x mapping x scheduling search space.

use num_bigint::BigUint;
use serde::Serialize;

use super::LayerShape;

/// Inputs to the search-space size formulas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SpaceParams {
    /// Free parameters per template.
    pub np: u32,
    /// Configurable values per free parameter.
    pub v: u32,
    /// Number of sub-accelerator instances.
    pub n_ssai: u32,
    /// Loop-nest depth.
    pub nl: u32,
    pub shape: LayerShape,
    pub n_layers: u32,
    /// Number of parallel DNN models.
    pub nd: u32,
    /// Layers per model.
    pub l_per_model: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpaceReport {
    pub hw: BigUint,
    pub map: BigUint,
    pub layer_to_sa: BigUint,
    pub sa_to_tile: BigUint,
    pub schedule: BigUint,
    pub total: BigUint,
}

impl Serialize for SpaceReport {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = serializer.serialize_struct("SpaceReport", 6)?;
        st.serialize_field("hw", &self.hw.to_string())?;
        st.serialize_field("map", &self.map.to_string())?;
        st.serialize_field("layer_to_sa", &self.layer_to_sa.to_string())?;
        st.serialize_field("sa_to_tile", &self.sa_to_tile.to_string())?;
        st.serialize_field("schedule", &self.schedule.to_string())?;
        st.serialize_field("total", &self.total.to_string())?;
        st.end()
    }
}

fn factorial(n: u32) -> BigUint {
    (1..=n).fold(BigUint::from(1u32), |acc, i| acc * i)
}

pub fn search_space_report(p: &SpaceParams) -> SpaceReport {
    let big = BigUint::from;
    let hw = big(p.v).pow(p.np) * p.n_ssai;
    let tiling = p
        .shape
        .dims()
        .iter()
        .fold(big(1u32), |acc, &d| acc * d);
    let map = factorial(p.nl) * big(2u32).pow(p.nl) * tiling * p.n_layers;
    let layer_to_sa = big(p.n_layers) * p.n_ssai;
    let sa_to_tile = factorial(p.n_ssai);
    let schedule = factorial(p.nd) * p.l_per_model * big(p.l_per_model).pow(p.nd);
    let total = &hw * &map * &layer_to_sa * &sa_to_tile * &schedule;
    SpaceReport {
        hw,
        map,
        layer_to_sa,
        sa_to_tile,
        schedule,
        total,
    }
}
