//! Sub-accelerator templates, instances and layer mappings.

mod mapping;
mod template;
mod tensor;

use thiserror::Error;

pub use mapping::{
    admitted_orders, kendall_tau, mapping_distance, mapping_transform, nearest_mapping, validate_mapping,
    Mapping, Requirements, Verdict, Violation, WORD_BYTES,
};
pub use template::{
    AreaCoeffs, BufferLevel, Dataflow, FreeParam, LevelEnergy, Scope, SubAcceleratorTemplate,
    TemplateLibrary, TemplateSpec, MACS_PER_PE, PES,
};
pub use tensor::Tensor;

#[derive(Debug, Error, PartialEq)]
pub enum ArchError {
    #[error("template schema violation: {0}")]
    Schema(String),
    #[error("template `{template}`: {reason}")]
    InvalidTemplate { template: String, reason: String },
    #[error("template library is empty")]
    EmptyLibrary,
    #[error("unknown template `{0}`")]
    UnknownTemplate(String),
    #[error("mappings describe different layer classes")]
    ClassMismatch,
    #[error("no mapping of layer class {class} on template `{template}`")]
    EmptyCatalog { template: String, class: String },
    #[error("instance of `{template}`: parameter `{param}` = {value} outside 1..={max}")]
    ParamOutOfBounds {
        template: String,
        param: String,
        value: u64,
        max: u64,
    },
}

/// The Eyeriss-like, Simba-like and ShiDianNao-like templates.
pub fn bundled_templates() -> TemplateLibrary {
    TemplateLibrary::parse(include_str!("../../configs/templates.json"))
        .expect("bundled template library is valid")
}

/// Concrete configuration of a template.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubAcceleratorInstance {
    pub instance_id: u32,
    pub template: usize,
    /// In the template's parameter order.
    pub param_values: Vec<u64>,
}

impl SubAcceleratorInstance {
    pub fn new(
        instance_id: u32,
        library: &TemplateLibrary,
        template: usize,
        param_values: Vec<u64>,
    ) -> Result<Self, ArchError> {
        check_params(library.get(template), &param_values)?;
        Ok(SubAcceleratorInstance {
            instance_id,
            template,
            param_values,
        })
    }
}

pub fn check_params(t: &SubAcceleratorTemplate, values: &[u64]) -> Result<(), ArchError> {
    if values.len() != t.num_params() {
        return Err(ArchError::InvalidTemplate {
            template: t.id.clone(),
            reason: format!("expected {} parameter values", t.num_params()),
        });
    }
    for (p, &v) in t.free_params().zip(values) {
        if v < 1 || v > p.max_value {
            return Err(ArchError::ParamOutOfBounds {
                template: t.id.clone(),
                param: p.name.to_string(),
                value: v,
                max: p.max_value,
            });
        }
    }
    Ok(())
}
