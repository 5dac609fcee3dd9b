//! Static cost analysis of compiled plans: LIV parameter count and
//! inference cache size.

use serde::{Deserialize, Serialize};

use crate::genome::{BackboneGenome, LivFamily, OptionPool, Role};
use crate::liv::{compile_plan, BackbonePlan, CompileError, Dims, GroupSource, LayerPlan};

pub const DEFAULT_BYTES_PER_ELEMENT: u64 = 2;
pub const DEFAULT_CACHE_SEQ_LEN: u64 = 4096;

/// Width of the rolling input window kept for short convolutions.
const SHORT_CONV_STATE: u64 = 2;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCost {
    pub index: usize,
    pub name: String,
    pub parameters: u64,
    pub cache_bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub parameter_count: u64,
    pub cache_bytes: u64,
    pub seq_len: u64,
    pub bytes_per_element: u64,
    pub layers: Vec<LayerCost>,
}

/// Trainable LIV parameters; every tensor is counted once, embeddings,
/// output head and norms are excluded.
pub fn parameter_count(plan: &BackbonePlan) -> u64 {
    plan.params.iter().filter(|p| p.counted).map(|p| p.numel() as u64).sum()
}

fn layer_parameters(plan: &BackbonePlan, layer: usize) -> u64 {
    plan.params
        .iter()
        .filter(|p| p.counted && p.first_layer == Some(layer))
        .map(|p| p.numel() as u64)
        .sum()
}

/// Elements cached by one layer while decoding at context `seq_len`.
pub fn layer_cache_elements(layer: &LayerPlan, width: u64, seq_len: u64) -> u64 {
    let per_branch = match layer.family {
        LivFamily::Attention => layer.branches[0]
            .groups
            .iter()
            .filter(|g| matches!(g.role, Role::K | Role::V) && matches!(g.source, GroupSource::Own(_)))
            .map(|g| seq_len * g.channels as u64)
            .sum(),
        LivFamily::Recurrence => width * layer.hyper.state_size as u64 + SHORT_CONV_STATE * width,
        LivFamily::GatedConv => (layer.hyper.kernel_len as u64).saturating_sub(1) * width,
        LivFamily::Memoryless => 0,
    };
    per_branch * layer.branches.len() as u64
}

pub fn cache_bytes(plan: &BackbonePlan, seq_len: u64, bytes_per_element: u64) -> u64 {
    let width = plan.dims.width as u64;
    plan.layers.iter().map(|l| layer_cache_elements(l, width, seq_len) * bytes_per_element).sum()
}

pub fn cost_report(plan: &BackbonePlan, seq_len: u64, bytes_per_element: u64) -> CostReport {
    let width = plan.dims.width as u64;
    let layers: Vec<LayerCost> = plan
        .layers
        .iter()
        .map(|l| LayerCost {
            index: l.index,
            name: l.name.clone(),
            parameters: layer_parameters(plan, l.index),
            cache_bytes: layer_cache_elements(l, width, seq_len) * bytes_per_element,
        })
        .collect();
    CostReport {
        parameter_count: layers.iter().map(|l| l.parameters).sum(),
        cache_bytes: layers.iter().map(|l| l.cache_bytes).sum(),
        seq_len,
        bytes_per_element,
        layers,
    }
}

/// Compiles the structure of `genome` and reports its costs.
pub fn score_genome(
    genome: &BackboneGenome,
    dims: &Dims,
    pool: &OptionPool,
    seq_len: u64,
    bytes_per_element: u64,
) -> Result<CostReport, CompileError> {
    let plan = compile_plan(genome, dims, pool)?;
    Ok(cost_report(&plan, seq_len, bytes_per_element))
}

/// 24-layer attention/MLP baseline: attention at even positions,
/// memoryless units at odd positions.
pub fn transformer_pp(depth: usize) -> BackboneGenome {
    BackboneGenome::striped_hybrid(depth, crate::genome::SA_1, crate::genome::GMEMLESS)
}

/// Memoryless units interleaved with recurrences, where the recurrences at
/// 0-based positions 5 and 17 are replaced by attention.
pub fn striped_mamba(depth: usize) -> BackboneGenome {
    let classes: Vec<u32> = (0..depth)
        .map(|i| match i {
            _ if i % 2 == 0 => crate::genome::GMEMLESS,
            5 | 17 => crate::genome::SA_1,
            _ => crate::genome::REC_1,
        })
        .collect();
    BackboneGenome::unshared(&classes)
}
