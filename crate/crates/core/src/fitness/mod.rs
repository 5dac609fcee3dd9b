//! Objective evaluators: static size and cache from the cost model, and
//! trained quality on a synthetic task.

mod task;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use task::{Task, TaskError, TaskKind, TaskSpec};

use crate::cost::{cost_report, CostReport};
use crate::evolve::{EvalError, Evaluator, ScoreVector};
use crate::genome::{BackboneGenome, OptionPool};
use crate::grad::TrainConfig;
use crate::liv::{compile_plan, CompiledBackbone, Dims};
use crate::train::{train, TrainError, TrainReport};
use crate::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Held-out mean cross-entropy after training.
    Quality,
    /// Trainable parameter count.
    Size,
    /// Inference cache bytes.
    Cache,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveSpec {
    pub objectives: Vec<Objective>,
    pub cache_seq_len: u64,
    pub bytes_per_element: u64,
    pub train: TrainConfig,
    pub task: Option<TaskSpec>,
}

impl Default for ObjectiveSpec {
    fn default() -> Self {
        Self {
            objectives: vec![Objective::Quality, Objective::Size],
            cache_seq_len: 4096,
            bytes_per_element: 2,
            train: TrainConfig::desk(),
            task: Some(TaskSpec::default()),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitnessError {
    #[error("invalid objective field `{field}`: {msg}")]
    Invalid { field: &'static str, msg: String },
    #[error(transparent)]
    Task(#[from] TaskError),
}

impl ObjectiveSpec {
    pub fn static_only(objectives: Vec<Objective>) -> Self {
        Self { objectives, task: None, ..Self::default() }
    }

    pub fn needs_training(&self) -> bool {
        self.objectives.contains(&Objective::Quality)
    }

    pub fn validate(&self, dims: &Dims) -> Result<(), FitnessError> {
        let bad = |field, msg: String| Err(FitnessError::Invalid { field, msg });
        if self.objectives.is_empty() {
            return bad("objectives", "at least one objective is required".into());
        }
        for (i, o) in self.objectives.iter().enumerate() {
            if self.objectives[..i].contains(o) {
                return bad("objectives", format!("{o:?} listed twice"));
            }
        }
        if self.cache_seq_len == 0 {
            return bad("cache_seq_len", "must be positive".into());
        }
        if self.bytes_per_element == 0 {
            return bad("bytes_per_element", "must be positive".into());
        }
        if self.needs_training() {
            let Some(task) = &self.task else {
                return bad("task", "the quality objective requires a task".into());
            };
            task.validate()?;
            if task.vocab != dims.vocab {
                return bad(
                    "task",
                    format!("task vocab {} differs from model vocab {}", task.vocab, dims.vocab),
                );
            }
            if task.seq_len > dims.seq_len {
                return bad(
                    "task",
                    format!("task seq_len {} exceeds model seq_len {}", task.seq_len, dims.seq_len),
                );
            }
            if let Err(e) = self.train.validate() {
                return bad("train", e.to_string());
            }
        }
        Ok(())
    }
}

/// Everything measured for one genome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Assessment {
    pub cost: CostReport,
    pub training: Option<TrainReport>,
    pub diverged_at: Option<usize>,
    pub score: ScoreVector,
}

/// Scores genomes against an [`ObjectiveSpec`]. Training uses the
/// single-precision model; the task is materialized once and shared.
pub struct GenomeEvaluator {
    spec: ObjectiveSpec,
    dims: Dims,
    pool: OptionPool,
    task: Option<Task>,
}

impl GenomeEvaluator {
    pub fn new(spec: ObjectiveSpec, dims: Dims, pool: OptionPool) -> Result<Self, FitnessError> {
        spec.validate(&dims)?;
        let task = match (&spec.task, spec.needs_training()) {
            (Some(t), true) => Some(Task::new(t)?),
            _ => None,
        };
        Ok(Self { spec, dims, pool, task })
    }

    pub fn spec(&self) -> &ObjectiveSpec {
        &self.spec
    }

    pub fn dims(&self) -> &Dims {
        &self.dims
    }

    pub fn task(&self) -> Option<&Task> {
        self.task.as_ref()
    }

    /// Cost report, optional training run and resulting score. Training
    /// runs under `seed` for both initialization and batch order.
    pub fn assess(&self, genome: &BackboneGenome, seed: u64) -> Result<Assessment, EvalError> {
        let plan =
            compile_plan(genome, &self.dims, &self.pool).map_err(|e| EvalError(e.to_string()))?;
        let cost = cost_report(&plan, self.spec.cache_seq_len, self.spec.bytes_per_element);
        let mut training = None;
        let mut diverged_at = None;
        let mut quality = f64::INFINITY;
        if let Some(task) = &self.task {
            let mut model = CompiledBackbone::<Real>::compile(genome, &self.dims, &self.pool, seed)
                .map_err(|e| EvalError(e.to_string()))?;
            let config = TrainConfig { seed, ..self.spec.train.clone() };
            match train(&mut model, task, &config) {
                Ok(report) => {
                    quality = report.eval_loss;
                    training = Some(report);
                }
                Err(TrainError::Diverged { step }) => diverged_at = Some(step),
                Err(e) => return Err(EvalError(e.to_string())),
            }
        }
        let objectives: Vec<f64> = self
            .spec
            .objectives
            .iter()
            .map(|o| match o {
                Objective::Quality => quality,
                Objective::Size => cost.parameter_count as f64,
                Objective::Cache => cost.cache_bytes as f64,
            })
            .collect();
        let score = ScoreVector { objectives, diverged: diverged_at.is_some() };
        Ok(Assessment { cost, training, diverged_at, score })
    }
}

impl Evaluator for GenomeEvaluator {
    fn arity(&self) -> usize {
        self.spec.objectives.len()
    }

    fn evaluate(&self, genome: &BackboneGenome, seed: u64) -> Result<ScoreVector, EvalError> {
        Ok(self.assess(genome, seed)?.score)
    }
}
