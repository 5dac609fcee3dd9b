use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::dense::{materialize, DENSE_ORACLE_CAP};
use super::ops::{apply_layer, compute_group, featurize_layer, BranchGroups};
use super::params::ParamStore;
use super::plan::{compile_plan, BackbonePlan, GroupSource, LayerPlan};
use super::{CompileError, Dims, LivError};
use crate::genome::{BackboneGenome, OptionPool, Role};
use crate::grad::{Tape, Tensor, Var};
use crate::Scalar;

/// Tokens with optional next-token targets; loss is taken only where a
/// target is present.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sequence {
    pub tokens: Vec<usize>,
    pub targets: Vec<Option<usize>>,
}

pub type Batch = Vec<Sequence>;

/// One computed feature group.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureGroupValue<T> {
    pub role: Role,
    pub branch: usize,
    pub values: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct CompiledBackbone<T> {
    plan: BackbonePlan,
    params: ParamStore<T>,
}

impl<T: Scalar> CompiledBackbone<T> {
    /// Compiles `genome` and initializes its parameters from `seed`.
    pub fn compile(genome: &BackboneGenome, dims: &Dims, pool: &OptionPool, seed: u64) -> Result<Self, CompileError> {
        let plan = compile_plan(genome, dims, pool)?;
        let params = ParamStore::init(&plan.params, seed);
        Ok(Self { plan, params })
    }

    pub fn from_parts(plan: BackbonePlan, params: ParamStore<T>) -> Result<Self, LivError> {
        let matches = plan.params.len() == params.len()
            && plan.params.iter().zip(params.keys()).all(|(s, k)| &s.key == k)
            && plan.params.iter().zip(params.tensors()).all(|(s, t)| s.shape == t.shape());
        if !matches {
            return Err(LivError::Blob("parameters do not match the plan".into()));
        }
        Ok(Self { plan, params })
    }

    pub fn plan(&self) -> &BackbonePlan {
        &self.plan
    }

    pub fn dims(&self) -> &Dims {
        &self.plan.dims
    }

    pub fn depth(&self) -> usize {
        self.plan.layers.len()
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn cast<U: Scalar>(&self) -> CompiledBackbone<U> {
        CompiledBackbone { plan: self.plan.clone(), params: self.params.cast() }
    }

    /// Records every parameter on `tape`, as differentiable inputs when
    /// `trainable` is set.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Vec<Var> {
        self.params
            .tensors()
            .iter()
            .map(|t| if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) })
            .collect()
    }

    fn check_tokens(&self, tokens: &[usize]) -> Result<(), LivError> {
        if tokens.is_empty() {
            return Err(LivError::EmptySequence);
        }
        if tokens.len() > self.plan.dims.seq_len {
            return Err(LivError::SequenceTooLong { len: tokens.len(), max: self.plan.dims.seq_len });
        }
        let vocab = self.plan.dims.vocab;
        if let Some((position, &token)) = tokens.iter().enumerate().find(|(_, &t)| t >= vocab) {
            return Err(LivError::Token { position, token, vocab });
        }
        Ok(())
    }

    /// Logits `[len, vocab]` recorded on `tape`.
    pub fn forward_on(&self, tape: &mut Tape<T>, vars: &[Var], tokens: &[usize]) -> Result<Var, LivError> {
        self.check_tokens(tokens)?;
        let dims = &self.plan.dims;
        let mut cur = tape.embed_lookup(vars[self.plan.embed], tokens)?;
        let mut outs: Vec<Var> = Vec::with_capacity(self.depth());
        let mut cache: HashMap<(usize, usize, Role), Var> = HashMap::new();
        for layer in &self.plan.layers {
            let u = match layer.residual_source {
                Some(m) => tape.add(cur, outs[m])?,
                None => cur,
            };
            let x = tape.rms_norm(u, vars[layer.norm])?;
            let groups = featurize_layer(tape, vars, layer, x, dims, &cache)?;
            if layer.feeds_later {
                for (br, g) in groups.iter().enumerate() {
                    for &(role, v) in g {
                        cache.insert((layer.index, br, role), v);
                    }
                }
            }
            let y = apply_layer(tape, vars, layer, &groups, dims)?;
            if !tape.value(y).is_finite() {
                return Err(LivError::NonFinite { layer: layer.index });
            }
            cur = tape.add(y, u)?;
            outs.push(cur);
        }
        let f = tape.rms_norm(cur, vars[self.plan.final_norm])?;
        Ok(tape.matmul(f, vars[self.plan.head])?)
    }

    pub fn forward(&self, tokens: &[usize]) -> Result<Tensor<T>, LivError> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let logits = self.forward_on(&mut tape, &vars, tokens)?;
        Ok(tape.value(logits).clone())
    }

    /// Token-weighted mean cross-entropy of `batch`, recorded on `tape`.
    pub fn loss_on(&self, tape: &mut Tape<T>, vars: &[Var], batch: &[Sequence]) -> Result<Var, LivError> {
        let total: usize = batch.iter().map(|s| s.targets.iter().filter(|t| t.is_some()).count()).sum();
        let mut acc: Option<Var> = None;
        for seq in batch {
            let count = seq.targets.iter().filter(|t| t.is_some()).count();
            if count == 0 {
                continue;
            }
            let logits = self.forward_on(tape, vars, &seq.tokens)?;
            let ce = tape.cross_entropy(logits, &seq.targets)?;
            let weighted = tape.scale(ce, count as f64 / total as f64);
            acc = Some(match acc {
                Some(a) => tape.add(a, weighted)?,
                None => weighted,
            });
        }
        Ok(match acc {
            Some(a) => a,
            None => tape.constant(Tensor::zeros(&[1, 1])),
        })
    }

    pub fn loss(&self, batch: &[Sequence]) -> Result<f64, LivError> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let loss = self.loss_on(&mut tape, &vars, batch)?;
        Ok(tape.value(loss).data()[0].wide())
    }

    /// Loss and its gradient with respect to every parameter, in store order.
    pub fn loss_and_grads(&self, batch: &[Sequence]) -> Result<(f64, Vec<Tensor<T>>), LivError> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, true);
        let loss = self.loss_on(&mut tape, &vars, batch)?;
        tape.backward(loss)?;
        let grads = vars
            .iter()
            .zip(self.params.tensors())
            .map(|(v, p)| tape.grad(*v).cloned().unwrap_or_else(|| Tensor::zeros(p.shape())))
            .collect();
        Ok((tape.value(loss).data()[0].wide(), grads))
    }

    fn layer(&self, index: usize) -> Result<&LayerPlan, LivError> {
        self.plan.layers.get(index).ok_or(LivError::NoSuchLayer(index))
    }

    /// Feature groups of `layer` for an already normalized input `x`.
    /// Routed groups are produced by their source layer's featurizer on the
    /// same input.
    pub fn featurize(&self, layer: usize, x: &Tensor<T>) -> Result<Vec<FeatureGroupValue<T>>, LivError> {
        let lp = self.layer(layer)?;
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let mut out = Vec::new();
        for (br, branch) in lp.branches.iter().enumerate() {
            for binding in &branch.groups {
                let gp = match &binding.source {
                    GroupSource::Own(gp) => gp,
                    GroupSource::Routed { layer: p } => match &self.layer(*p)?.branches[br]
                        .group(binding.role)
                        .ok_or(LivError::MissingGroup { role: binding.role, branch: br })?
                        .source
                    {
                        GroupSource::Own(gp) => gp,
                        GroupSource::Routed { .. } => return Err(LivError::MissingGroup { role: binding.role, branch: br }),
                    },
                };
                let v = compute_group(&mut tape, &vars, gp, xv, &self.plan.dims)?;
                out.push(FeatureGroupValue { role: binding.role, branch: br, values: tape.value(v).clone() });
            }
        }
        Ok(out)
    }

    fn branch_groups(&self, lp: &LayerPlan, groups: &[FeatureGroupValue<T>]) -> Vec<Vec<(Role, Tensor<T>)>> {
        (0..lp.branches.len())
            .map(|br| {
                groups.iter().filter(|g| g.branch == br).map(|g| (g.role, g.values.clone())).collect()
            })
            .collect()
    }

    /// Output of `layer`'s operator computed by its structure-specific algorithm.
    pub fn apply_structured(&self, layer: usize, groups: &[FeatureGroupValue<T>]) -> Result<Tensor<T>, LivError> {
        let lp = self.layer(layer)?;
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let bg: Vec<BranchGroups> = self
            .branch_groups(lp, groups)
            .into_iter()
            .map(|g| g.into_iter().map(|(r, t)| (r, tape.constant(t))).collect())
            .collect();
        let y = apply_layer(&mut tape, &vars, lp, &bg, &self.plan.dims)?;
        Ok(tape.value(y).clone())
    }

    /// Operator input `u`: the input-role group of every branch, side by side.
    pub fn dense_input(&self, layer: usize, groups: &[FeatureGroupValue<T>]) -> Result<Tensor<f64>, LivError> {
        let lp = self.layer(layer)?;
        let role = lp.input_role();
        let parts: Vec<&Tensor<T>> = (0..lp.branches.len())
            .map(|br| {
                groups
                    .iter()
                    .find(|g| g.branch == br && g.role == role)
                    .map(|g| &g.values)
                    .ok_or(LivError::MissingGroup { role, branch: br })
            })
            .collect::<Result<_, _>>()?;
        let l = parts[0].rows();
        let cols: usize = parts.iter().map(|p| p.cols()).sum();
        let mut u = Tensor::zeros(&[l, cols]);
        for i in 0..l {
            let mut c = 0;
            for p in &parts {
                for &v in p.row(i) {
                    u.set(i, c, v.wide());
                    c += 1;
                }
            }
        }
        Ok(u)
    }

    /// Explicit operator `[seq, seq, d_out, d_in]` of `layer` for the given
    /// groups, in `f64`.
    pub fn materialize_dense(
        &self,
        layer: usize,
        groups: &[FeatureGroupValue<T>],
        seq_len: usize,
    ) -> Result<Tensor<f64>, LivError> {
        if seq_len > DENSE_ORACLE_CAP {
            return Err(LivError::OracleCap { seq_len, cap: DENSE_ORACLE_CAP });
        }
        let lp = self.layer(layer)?;
        let bg: Vec<Vec<(Role, Tensor<f64>)>> = self
            .branch_groups(lp, groups)
            .into_iter()
            .map(|g| g.into_iter().map(|(r, t)| (r, t.cast())).collect())
            .collect();
        for (br, g) in bg.iter().enumerate() {
            for binding in &lp.branches[br].groups {
                if !g.iter().any(|(r, t)| *r == binding.role && t.rows() >= seq_len.min(t.rows())) {
                    return Err(LivError::MissingGroup { role: binding.role, branch: br });
                }
            }
        }
        let outs: Vec<Option<Tensor<f64>>> = lp
            .branches
            .iter()
            .map(|b| b.out.map(|i| self.params.tensors()[i].cast()))
            .collect();
        Ok(materialize(lp, &bg, &outs, self.plan.dims.width, seq_len))
    }
}
