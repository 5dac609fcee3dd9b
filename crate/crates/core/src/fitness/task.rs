use std::collections::HashSet;
use std::path::PathBuf;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::liv::Sequence;
use crate::rng::{derive_seed, GenomeRng};
use crate::train::BatchSource;

const BUNDLED_CORPUS: &str = include_str!("../../data/tiny_corpus.txt");
const ALPHABET: &[u8] = b" abcdefghijklmnopqrstuvwxyz.,;'\n";

const TRAIN_TAG: u64 = 0x7a;
const EVAL_TAG: u64 = 0xe0;
const BATCH_TAG: u64 = 0xba;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// Random tokens, a separator, then the same tokens again; loss on the
    /// second half.
    Copy,
    /// Key/value pairs followed by queried keys; loss on recalled values.
    #[default]
    AssociativeRecall,
    /// Next-character prediction on a small text corpus.
    TinyLm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub vocab: usize,
    pub seq_len: usize,
    /// Number of distinct training sequences batches are sampled from.
    pub train_size: usize,
    pub eval_size: usize,
    /// Key/value pairs per associative-recall sequence.
    pub pairs: usize,
    /// Selects one of two independently drawn evaluation sets (1 or 2).
    pub eval_split: u32,
    pub seed: u64,
    /// Text file for `tiny_lm`; the bundled corpus when unset.
    pub corpus: Option<PathBuf>,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self {
            kind: TaskKind::AssociativeRecall,
            vocab: 32,
            seq_len: 64,
            train_size: 1024,
            eval_size: 32,
            pairs: 8,
            eval_split: 1,
            seed: 0,
            corpus: None,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TaskError {
    #[error("invalid task field `{field}`: {msg}")]
    Invalid { field: &'static str, msg: String },
    #[error("cannot read corpus {path}: {msg}")]
    Corpus { path: String, msg: String },
}

impl TaskSpec {
    pub fn validate(&self) -> Result<(), TaskError> {
        let bad = |field, msg: String| Err(TaskError::Invalid { field, msg });
        if !(self.eval_split == 1 || self.eval_split == 2) {
            return bad("eval_split", format!("must be 1 or 2, got {}", self.eval_split));
        }
        if self.train_size == 0 {
            return bad("train_size", "must be positive".into());
        }
        if self.eval_size == 0 {
            return bad("eval_size", "must be positive".into());
        }
        match self.kind {
            TaskKind::Copy => {
                if self.vocab < 2 {
                    return bad("vocab", format!("copy needs at least 2 tokens, got {}", self.vocab));
                }
                if self.seq_len < 3 {
                    return bad("seq_len", format!("copy needs at least 3, got {}", self.seq_len));
                }
            }
            TaskKind::AssociativeRecall => {
                if self.pairs == 0 {
                    return bad("pairs", "must be positive".into());
                }
                if self.vocab < 2 * self.pairs {
                    return bad(
                        "vocab",
                        format!("{} pairs need a vocabulary of at least {}", self.pairs, 2 * self.pairs),
                    );
                }
                if self.seq_len < 2 * self.pairs + 2 {
                    return bad(
                        "seq_len",
                        format!("{} pairs need at least {} positions", self.pairs, 2 * self.pairs + 2),
                    );
                }
            }
            TaskKind::TinyLm => {
                if self.vocab < 2 {
                    return bad("vocab", format!("must be at least 2, got {}", self.vocab));
                }
                if self.seq_len < 2 {
                    return bad("seq_len", format!("must be at least 2, got {}", self.seq_len));
                }
            }
        }
        Ok(())
    }
}

/// Materialized train and evaluation sequences of a [`TaskSpec`]. The two
/// sets never share a sequence.
#[derive(Clone, Debug)]
pub struct Task {
    spec: TaskSpec,
    train: Vec<Sequence>,
    eval: Vec<Sequence>,
}

fn copy_sequence(spec: &TaskSpec, rng: &mut GenomeRng) -> Sequence {
    let m = (spec.seq_len - 1) / 2;
    let data: Vec<usize> = (0..m).map(|_| rng.random_range(1..spec.vocab)).collect();
    let mut tokens = data.clone();
    tokens.push(0);
    tokens.extend(&data);
    let mut targets = vec![None; tokens.len()];
    for (k, &t) in data.iter().enumerate() {
        targets[m + k] = Some(t);
    }
    Sequence { tokens, targets }
}

fn recall_sequence(spec: &TaskSpec, rng: &mut GenomeRng) -> Sequence {
    let half = spec.vocab / 2;
    let keys: Vec<usize> = index::sample(rng, half, spec.pairs).into_vec();
    let values: Vec<usize> =
        (0..spec.pairs).map(|_| half + rng.random_range(0..spec.vocab - half)).collect();
    let mut tokens = Vec::with_capacity(spec.seq_len);
    for (k, v) in keys.iter().zip(&values) {
        tokens.push(*k);
        tokens.push(*v);
    }
    let mut targets = vec![None; tokens.len()];
    while tokens.len() + 2 <= spec.seq_len {
        let q = rng.random_range(0..spec.pairs);
        tokens.push(keys[q]);
        targets.push(Some(values[q]));
        tokens.push(values[q]);
        targets.push(None);
    }
    Sequence { tokens, targets }
}

fn encode_text(text: &str, vocab: usize) -> Vec<usize> {
    text.bytes()
        .map(|b| {
            let b = b.to_ascii_lowercase();
            let i = ALPHABET.iter().position(|&a| a == b).unwrap_or(ALPHABET.len() - 5);
            i % vocab
        })
        .collect()
}

fn lm_windows(tokens: &[usize], seq_len: usize, count: usize, rng: &mut GenomeRng) -> Vec<Sequence> {
    let span = seq_len + 1;
    if tokens.len() < span {
        return Vec::new();
    }
    (0..count)
        .map(|_| {
            let start = rng.random_range(0..=tokens.len() - span);
            let w = &tokens[start..start + span];
            Sequence { tokens: w[..seq_len].to_vec(), targets: w[1..].iter().map(|&t| Some(t)).collect() }
        })
        .collect()
}

impl Task {
    pub fn new(spec: &TaskSpec) -> Result<Self, TaskError> {
        spec.validate()?;
        let mut train_rng = GenomeRng::new(derive_seed(spec.seed, TRAIN_TAG), 0);
        let mut eval_rng = GenomeRng::new(derive_seed(spec.seed, EVAL_TAG), spec.eval_split as u64);
        let (train, eval) = match spec.kind {
            TaskKind::TinyLm => {
                let text = match &spec.corpus {
                    Some(path) => std::fs::read_to_string(path).map_err(|e| TaskError::Corpus {
                        path: path.display().to_string(),
                        msg: e.to_string(),
                    })?,
                    None => BUNDLED_CORPUS.to_string(),
                };
                let tokens = encode_text(&text, spec.vocab);
                let cut = tokens.len() * 9 / 10;
                let (head, tail) = tokens.split_at(cut);
                let train = lm_windows(head, spec.seq_len, spec.train_size, &mut train_rng);
                let eval = lm_windows(tail, spec.seq_len, spec.eval_size, &mut eval_rng);
                if train.is_empty() || eval.is_empty() {
                    return Err(TaskError::Invalid {
                        field: "seq_len",
                        msg: format!("corpus too short for windows of {}", spec.seq_len),
                    });
                }
                (train, eval)
            }
            kind => {
                let draw = |rng: &mut GenomeRng| match kind {
                    TaskKind::Copy => copy_sequence(spec, rng),
                    _ => recall_sequence(spec, rng),
                };
                let train: Vec<Sequence> = (0..spec.train_size).map(|_| draw(&mut train_rng)).collect();
                let seen: HashSet<&Vec<usize>> = train.iter().map(|s| &s.tokens).collect();
                let mut eval = Vec::with_capacity(spec.eval_size);
                let mut attempts = 0usize;
                while eval.len() < spec.eval_size {
                    let s = draw(&mut eval_rng);
                    attempts += 1;
                    if !seen.contains(&s.tokens) {
                        eval.push(s);
                    } else if attempts > 100 * spec.eval_size {
                        return Err(TaskError::Invalid {
                            field: "train_size",
                            msg: "task space too small for disjoint splits".into(),
                        });
                    }
                }
                (train, eval)
            }
        };
        Ok(Self { spec: spec.clone(), train, eval })
    }

    pub fn spec(&self) -> &TaskSpec {
        &self.spec
    }

    pub fn train_set(&self) -> &[Sequence] {
        &self.train
    }
}

impl BatchSource for Task {
    fn train_batch(&self, step: usize, size: usize, seed: u64) -> Vec<Sequence> {
        let mut rng = GenomeRng::new(derive_seed(seed, BATCH_TAG), step as u64);
        (0..size).map(|_| self.train[rng.random_range(0..self.train.len())].clone()).collect()
    }

    fn eval_set(&self) -> &[Sequence] {
        &self.eval
    }
}
