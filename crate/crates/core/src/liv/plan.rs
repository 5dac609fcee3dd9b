use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::ops::IMPLICIT_FEATURES;
use super::{CompileError, Dims};
use crate::genome::{
    validate, BackboneGenome, FeatureGroupSpec, LivClass, LivFamily, Nonlinearity, OptionPool,
    Parametrization, Role, ShareKind, TokenMixing,
};

/// Length of short (banded) convolutions in featurizers and explicit kernels.
pub const SHORT_CONV: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Init {
    Normal(f64),
    Const(f64),
    /// `[1, 0, 0, ...]` along the taps axis plus Gaussian noise.
    PassThroughTaps(f64),
    /// Unit response at lag zero through the cosine features, plus noise.
    ImplicitKernel(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub key: String,
    pub shape: Vec<usize>,
    pub init: Init,
    pub decay: bool,
    /// Part of the LIV parameter count (embeddings, head and norms are not).
    pub counted: bool,
    /// First layer that references this tensor.
    pub first_layer: Option<usize>,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Parameter indices (into [`BackbonePlan::params`]) for one computed group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupParams {
    pub scale: Option<usize>,
    pub proj: Option<usize>,
    pub taps: Option<usize>,
    pub bias: Option<usize>,
    pub explicit: Option<usize>,
    pub implicit: Option<usize>,
    pub nonlinearity: Nonlinearity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum GroupSource {
    Own(GroupParams),
    /// Reuse the group computed by an earlier layer on the same branch.
    Routed { layer: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupBinding {
    pub role: Role,
    pub channels: usize,
    pub source: GroupSource,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchPlan {
    pub groups: Vec<GroupBinding>,
    /// Output projection of the operator, when it has one.
    pub out: Option<usize>,
}

impl BranchPlan {
    pub fn group(&self, role: Role) -> Option<&GroupBinding> {
        self.groups.iter().find(|g| g.role == role)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hyper {
    pub head_dim: usize,
    pub kv_channels: usize,
    pub state_size: usize,
    pub kernel_len: usize,
    pub hidden: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerPlan {
    pub index: usize,
    pub class_id: u32,
    pub name: String,
    pub family: LivFamily,
    pub differential: bool,
    pub hyper: Hyper,
    pub norm: usize,
    pub branches: Vec<BranchPlan>,
    /// Layer whose featurizer weights this layer uses.
    pub featurizer_owner: usize,
    pub residual_source: Option<usize>,
    /// Some later layer consumes groups computed here.
    pub feeds_later: bool,
}

impl LayerPlan {
    /// Role whose values the operator maps to its output.
    pub fn input_role(&self) -> Role {
        match self.family {
            LivFamily::Attention | LivFamily::GatedConv => Role::V,
            LivFamily::Recurrence | LivFamily::Memoryless => Role::X,
        }
    }

    pub fn input_channels(&self) -> usize {
        self.branches[0].group(self.input_role()).map_or(0, |g| g.channels)
    }

    pub fn routed_roles(&self) -> Vec<Role> {
        self.branches[0]
            .groups
            .iter()
            .filter(|g| matches!(g.source, GroupSource::Routed { .. }))
            .map(|g| g.role)
            .collect()
    }

    pub fn routed_from(&self) -> Option<usize> {
        self.branches[0].groups.iter().find_map(|g| match g.source {
            GroupSource::Routed { layer } => Some(layer),
            GroupSource::Own(_) => None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackbonePlan {
    pub dims: Dims,
    pub layers: Vec<LayerPlan>,
    pub params: Vec<ParamSpec>,
    pub embed: usize,
    pub head: usize,
    pub final_norm: usize,
}

impl BackbonePlan {
    pub fn depth(&self) -> usize {
        self.layers.len()
    }
}

struct Builder {
    params: Vec<ParamSpec>,
    index: HashMap<String, usize>,
}

impl Builder {
    fn add(&mut self, key: String, shape: Vec<usize>, init: Init, decay: bool, counted: bool, layer: Option<usize>) -> usize {
        if let Some(&i) = self.index.get(&key) {
            return i;
        }
        self.params.push(ParamSpec { key: key.clone(), shape, init, decay, counted, first_layer: layer });
        self.index.insert(key, self.params.len() - 1);
        self.params.len() - 1
    }
}

fn hyper(class: &LivClass, pool: &OptionPool, dims: &Dims) -> Result<Hyper, CompileError> {
    let feat = pool.featurizer(class.id)?;
    let d = dims.width;
    let mut h = Hyper { head_dim: dims.head_dim, kv_channels: 0, state_size: 0, kernel_len: 0, hidden: dims.hidden() };
    match class.family() {
        LivFamily::Attention => {
            let r = feat.spec(Role::K).map_or(1, |s| s.repeat as usize);
            if dims.head_dim == 0 || d % dims.head_dim != 0 {
                return Err(CompileError::Dims(format!("width {d} is not a multiple of head dim {}", dims.head_dim)));
            }
            if d % r != 0 || (d / r) % dims.head_dim != 0 {
                return Err(CompileError::Dims(format!(
                    "{}: key/value width {d}/{r} is not a multiple of head dim {}",
                    class.name, dims.head_dim
                )));
            }
            h.kv_channels = d / r;
        }
        LivFamily::Recurrence => {
            h.state_size = feat.spec(Role::B).map_or(1, |s| s.expansion as usize);
        }
        LivFamily::GatedConv => {
            let kernel = feat.spec(Role::Kernel).expect("convolutions have a kernel group");
            h.kernel_len = match kernel.parametrization {
                Parametrization::Implicit => dims.seq_len,
                _ => SHORT_CONV,
            };
        }
        LivFamily::Memoryless => {}
    }
    Ok(h)
}

fn group_channels(family: LivFamily, role: Role, hy: &Hyper, d: usize) -> usize {
    match (family, role) {
        (LivFamily::Attention, Role::K | Role::V) => hy.kv_channels,
        (LivFamily::Recurrence, Role::B | Role::C) => hy.state_size,
        (LivFamily::Memoryless, _) => hy.hidden,
        _ => d,
    }
}

fn own_group(
    b: &mut Builder,
    prefix: &str,
    family: LivFamily,
    role: Role,
    spec: &FeatureGroupSpec,
    channels: usize,
    dims: &Dims,
    layer: usize,
) -> GroupParams {
    let d = dims.width;
    let key = |part: &str| format!("{prefix}.{}.{part}", role.name());
    let mut g = GroupParams {
        scale: None,
        proj: None,
        taps: None,
        bias: None,
        explicit: None,
        implicit: None,
        nonlinearity: spec.nonlinearity,
    };
    let l = Some(layer);
    match (family, spec.parametrization) {
        (_, Parametrization::Explicit) => {
            g.explicit = Some(b.add(key("kernel"), vec![SHORT_CONV, channels], Init::PassThroughTaps(0.02), false, true, l));
        }
        (_, Parametrization::Implicit) => {
            g.implicit = Some(b.add(key("w"), vec![IMPLICIT_FEATURES, channels], Init::ImplicitKernel(0.02), true, true, l));
        }
        (LivFamily::GatedConv, _) => {
            let gate = role != Role::V;
            let (scale, bias) = if gate { (Init::Normal(0.02), Init::Const(1.0)) } else { (Init::Const(1.0), Init::Const(0.0)) };
            g.scale = Some(b.add(key("scale"), vec![1, d], scale, false, true, l));
            g.taps = Some(b.add(key("taps"), vec![SHORT_CONV, d], Init::PassThroughTaps(0.02), false, true, l));
            g.bias = Some(b.add(key("bias"), vec![1, d], bias, false, true, l));
        }
        _ => {
            g.proj = Some(b.add(key("w"), vec![d, channels], Init::Normal(0.02), true, true, l));
            if spec.token_mixing == TokenMixing::ScaledToeplitz {
                g.taps = Some(b.add(key("taps"), vec![SHORT_CONV, channels], Init::PassThroughTaps(0.02), false, true, l));
            }
            if family == LivFamily::Recurrence && role == Role::A {
                g.bias = Some(b.add(key("bias"), vec![1, channels], Init::Const(2.0), false, true, l));
            }
        }
    }
    g
}

/// Resolves a valid genome into layer structure, sharing wiring and
/// parameter shapes without allocating parameters.
pub fn compile_plan(genome: &BackboneGenome, dims: &Dims, pool: &OptionPool) -> Result<BackbonePlan, CompileError> {
    let violations = validate(genome, pool);
    if !violations.is_empty() {
        return Err(CompileError::InvalidGenome(violations));
    }
    if dims.width == 0 || dims.vocab == 0 || dims.seq_len == 0 {
        return Err(CompileError::Dims("width, vocab and seq_len must be positive".into()));
    }
    let d = dims.width;
    let n = genome.depth();
    let mut owner: Vec<usize> = (0..n).collect();
    for group in genome.sharing_groups(ShareKind::Featurizer) {
        for &c in group.consumers() {
            owner[c] = group.producer();
        }
    }
    let mut routed: Vec<HashMap<Role, usize>> = vec![HashMap::new(); n];
    let mut feeds_later = vec![false; n];
    for group in genome.sharing_groups(ShareKind::FeatureGroup) {
        let family = pool.get(group.class)?.family();
        let roles = family.strategy_roles(group.strategy);
        if roles.is_empty() {
            continue;
        }
        feeds_later[group.producer()] = true;
        for &c in group.consumers() {
            for &role in &roles {
                routed[c].insert(role, group.producer());
            }
        }
    }
    let residual = genome.residual_sources();

    let mut b = Builder { params: Vec::new(), index: HashMap::new() };
    let embed = b.add("embed".into(), vec![dims.vocab, d], Init::Normal(0.02), true, false, None);
    let mut layers: Vec<LayerPlan> = Vec::with_capacity(n);
    for (i, gene) in genome.genes().iter().enumerate() {
        let class = pool.get(gene.liv_class)?.clone();
        let family = class.family();
        let hy = hyper(&class, pool, dims)?;
        let feat = pool.featurizer(class.id)?;
        let norm = b.add(format!("l{i}.norm"), vec![1, d], Init::Const(1.0), false, false, Some(i));
        let branch_count = if class.differential { 2 } else { 1 };
        let mut branches = Vec::with_capacity(branch_count);
        for br in 0..branch_count {
            let prefix = format!("f{}.b{br}", owner[i]);
            let mut groups = Vec::new();
            for (role, spec) in &feat.groups {
                let channels = group_channels(family, *role, &hy, d);
                let source = match routed[i].get(role) {
                    Some(&p) => {
                        let produced = layers[p].branches[br].group(*role).map(|g| g.channels);
                        if produced != Some(channels) {
                            return Err(CompileError::IncompatibleSharing {
                                producer: p + 1,
                                consumer: i + 1,
                                role: *role,
                                producer_channels: produced.unwrap_or(0),
                                consumer_channels: channels,
                            });
                        }
                        GroupSource::Routed { layer: p }
                    }
                    None => GroupSource::Own(own_group(&mut b, &prefix, family, *role, spec, channels, dims, i)),
                };
                groups.push(GroupBinding { role: *role, channels, source });
            }
            let out = match family {
                LivFamily::Attention => Some(b.add(format!("l{i}.b{br}.out"), vec![d, d], Init::Normal(0.02), true, true, Some(i))),
                LivFamily::Memoryless => {
                    Some(b.add(format!("l{i}.b{br}.out"), vec![hy.hidden, d], Init::Normal(0.02), true, true, Some(i)))
                }
                _ => None,
            };
            branches.push(BranchPlan { groups, out });
        }
        layers.push(LayerPlan {
            index: i,
            class_id: class.id,
            name: class.name.clone(),
            family,
            differential: class.differential,
            hyper: hy,
            norm,
            branches,
            featurizer_owner: owner[i],
            residual_source: residual[i],
            feeds_later: feeds_later[i],
        });
    }
    let final_norm = b.add("final.norm".into(), vec![1, d], Init::Const(1.0), false, false, None);
    let head = b.add("head".into(), vec![d, dims.vocab], Init::Normal(0.02), true, false, None);
    Ok(BackbonePlan { dims: dims.clone(), layers, params: b.params, embed, head, final_norm })
}
