//! Run configuration files, line-delimited result logs, state snapshots and
//! the resumable evolution driver built on them.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{motifs, MotifRow};
use crate::cost::{cost_report, CostReport};
use crate::evolve::{self, Candidate, EvolutionConfig, EvolutionState, EvolveError, GenerationRecord, Origin, ScoreVector};
use crate::fitness::{FitnessError, GenomeEvaluator, ObjectiveSpec};
use crate::genome::{self, BackboneGenome, OptionPool};
use crate::liv::{compile_plan, Dims};

pub const LOG_FILE: &str = "results.jsonl";
pub const SNAPSHOT_FILE: &str = "snapshot.json";
pub const POPULATION_FILE: &str = "population.txt";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoolSelection {
    /// LIV class ids available to the run; all standard classes when unset.
    pub classes: Option<Vec<u32>>,
}

impl PoolSelection {
    pub fn build(&self) -> Result<OptionPool, genome::PoolError> {
        match &self.classes {
            None => Ok(OptionPool::standard()),
            Some(ids) => OptionPool::with_classes(ids),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub evolution: EvolutionConfig,
    pub objectives: ObjectiveSpec,
    pub dims: Dims,
    pub pool: PoolSelection,
    pub output_dir: PathBuf,
    /// Worker threads for candidate evaluation; all cores when unset.
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            evolution: EvolutionConfig::default(),
            objectives: ObjectiveSpec::default(),
            dims: Dims::desk(),
            pool: PoolSelection::default(),
            output_dir: PathBuf::from("results"),
            threads: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("config {path}: {msg}")]
    Parse { path: String, msg: String },
    #[error("invalid config field `{field}`: {msg}")]
    Field { field: String, msg: String },
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("snapshot {path}: {msg}")]
    Snapshot { path: String, msg: String },
    #[error(transparent)]
    Evolve(EvolveError),
}

impl RunError {
    /// Whether the error stems from the configuration rather than the run.
    pub fn is_config(&self) -> bool {
        matches!(self, RunError::Read { .. } | RunError::Parse { .. } | RunError::Field { .. })
            || matches!(self, RunError::Evolve(EvolveError::Config { .. }))
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io { path: path.display().to_string(), source }
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, RunError> {
        let cfg: RunConfig = toml::from_str(text)
            .map_err(|e| RunError::Parse { path: origin.to_string(), msg: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = fs::read_to_string(path)
            .map_err(|source| RunError::Read { path: path.display().to_string(), source })?;
        Self::from_toml(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is always representable")
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let field = |f: &str, msg: String| RunError::Field { field: f.to_string(), msg };
        match self.evolution.validate() {
            Err(EvolveError::Config { field: f, msg }) => {
                return Err(field(&format!("evolution.{f}"), msg))
            }
            Err(e) => return Err(field("evolution", e.to_string())),
            Ok(()) => {}
        }
        let pool = self.pool.build().map_err(|e| field("pool.classes", e.to_string()))?;
        if pool.is_empty() {
            return Err(field("pool.classes", "must not be empty".into()));
        }
        if self.dims.width == 0 || self.dims.vocab == 0 || self.dims.seq_len == 0 || self.dims.head_dim == 0 {
            return Err(field("dims", "width, vocab, seq_len and head_dim must be positive".into()));
        }
        match self.objectives.validate(&self.dims) {
            Err(FitnessError::Invalid { field: f, msg }) => {
                return Err(field(&format!("objectives.{f}"), msg))
            }
            Err(e) => return Err(field("objectives.task", e.to_string())),
            Ok(()) => {}
        }
        if self.threads == Some(0) {
            return Err(field("threads", "must be positive".into()));
        }
        Ok(())
    }
}

/// One line of the results log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub generation: usize,
    pub id: u64,
    pub genome: String,
    pub score: ScoreVector,
    /// Front index within the generation's population; absent for
    /// candidates that were evaluated but not retained.
    pub rank: Option<usize>,
    /// Crowding distance; `"inf"` for front boundaries.
    #[serde(with = "crowding_repr")]
    pub crowding: Option<f64>,
    pub in_population: bool,
    /// True on the single line recording this candidate's evaluation.
    pub evaluated: bool,
    pub origin: Origin,
    pub parents: Vec<u64>,
    pub cost: Option<CostReport>,
}

mod crowding_repr {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            None => s.serialize_none(),
            Some(x) if x.is_finite() => s.serialize_some(&Repr::Num(*x)),
            Some(_) => s.serialize_some(&Repr::Text("inf".into())),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        Ok(match Option::<Repr>::deserialize(d)? {
            None => None,
            Some(Repr::Num(x)) => Some(x),
            Some(Repr::Text(t)) if t == "inf" => Some(f64::INFINITY),
            Some(Repr::Text(t)) => {
                return Err(serde::de::Error::custom(format!("bad crowding value {t:?}")))
            }
        })
    }
}

fn record(
    c: &Candidate,
    generation: usize,
    member: Option<(usize, f64)>,
    cost: Option<CostReport>,
) -> LogRecord {
    LogRecord {
        generation,
        id: c.id,
        genome: genome::format(&c.genome),
        score: c.score.clone(),
        rank: member.map(|m| m.0),
        crowding: member.map(|m| m.1),
        in_population: member.is_some(),
        evaluated: c.generation == generation,
        origin: c.origin,
        parents: c.parents.clone(),
        cost,
    }
}

/// Log lines for one generation: the population in order, then discarded
/// candidates. `cost` supplies the optional cost report for a genome.
pub fn generation_records(
    rec: &GenerationRecord,
    cost: &dyn Fn(&BackboneGenome) -> Option<CostReport>,
) -> Vec<LogRecord> {
    let mut out: Vec<LogRecord> = rec
        .population
        .iter()
        .map(|m| record(&m.candidate, rec.generation, Some((m.rank, m.crowding)), cost(&m.candidate.genome)))
        .collect();
    out.extend(rec.discarded.iter().map(|c| record(c, rec.generation, None, cost(&c.genome))));
    out
}

/// Parsed log plus the number of lines that could not be read.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LogContents {
    pub records: Vec<LogRecord>,
    pub skipped: usize,
}

pub fn read_log(path: &Path) -> Result<LogContents, RunError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = LogContents::default();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<LogRecord>(&line) {
            Ok(r) => out.records.push(r),
            Err(e) => {
                log::warn!("{}:{}: skipping corrupt record: {e}", path.display(), n + 1);
                out.skipped += 1;
            }
        }
    }
    Ok(out)
}

/// Motif rows over the population members of each logged generation.
/// Records with unparseable genomes are counted as skipped.
pub fn log_motifs(contents: &LogContents) -> (Vec<MotifRow>, usize) {
    let mut pops: BTreeMap<usize, Vec<BackboneGenome>> = BTreeMap::new();
    let mut skipped = 0;
    for r in contents.records.iter().filter(|r| r.in_population) {
        match genome::parse(&r.genome) {
            Ok(g) => pops.entry(r.generation).or_default().push(g),
            Err(e) => {
                log::warn!("record {} of generation {}: {e}", r.id, r.generation);
                skipped += 1;
            }
        }
    }
    (motifs(&pops), skipped)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), RunError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    config: RunConfig,
    state: EvolutionState,
}

/// Keeps only log lines of generations `<= last`, dropping a torn tail.
fn truncate_log(path: &Path, last: usize) -> Result<(), RunError> {
    if !path.exists() {
        return Ok(());
    }
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut kept = String::new();
    for line in text.lines() {
        if let Ok(r) = serde_json::from_str::<LogRecord>(line) {
            if r.generation <= last {
                kept.push_str(line);
                kept.push('\n');
            }
        }
    }
    write_atomic(path, kept.as_bytes())
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub generations: usize,
    pub evaluations: u64,
    pub resumed_from: Option<usize>,
    pub state: EvolutionState,
}

/// Drives an evolution to completion, appending to the results log and
/// rewriting the snapshot after every generation. An existing snapshot for
/// the same configuration is resumed; `stop_after` ends the call early
/// after that many new generations.
pub fn execute(config: &RunConfig, stop_after: Option<usize>) -> Result<RunSummary, RunError> {
    config.validate()?;
    let pool = config.pool.build().map_err(|e| RunError::Field {
        field: "pool.classes".into(),
        msg: e.to_string(),
    })?;
    let evaluator = GenomeEvaluator::new(config.objectives.clone(), config.dims.clone(), pool.clone())
        .map_err(|e| RunError::Field { field: "objectives".into(), msg: e.to_string() })?;
    let threads = config.threads.unwrap_or(0);
    let workers = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| RunError::Field { field: "threads".into(), msg: e.to_string() })?;
    workers.install(|| drive(config, &pool, &evaluator, stop_after))
}

fn drive(
    config: &RunConfig,
    pool: &OptionPool,
    evaluator: &GenomeEvaluator,
    stop_after: Option<usize>,
) -> Result<RunSummary, RunError> {
    let dir = &config.output_dir;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let log_path = dir.join(LOG_FILE);
    let snap_path = dir.join(SNAPSHOT_FILE);
    let cost_of = |g: &BackboneGenome| {
        compile_plan(g, &config.dims, pool)
            .ok()
            .map(|p| cost_report(&p, config.objectives.cache_seq_len, config.objectives.bytes_per_element))
    };

    let (mut state, resumed_from) = if snap_path.exists() {
        let text = fs::read_to_string(&snap_path).map_err(io_err(&snap_path))?;
        let snap: Snapshot = serde_json::from_str(&text).map_err(|e| RunError::Snapshot {
            path: snap_path.display().to_string(),
            msg: e.to_string(),
        })?;
        if snap.config.evolution != config.evolution
            || snap.config.objectives != config.objectives
            || snap.config.dims != config.dims
            || snap.config.pool != config.pool
        {
            return Err(RunError::Snapshot {
                path: snap_path.display().to_string(),
                msg: "was written by a different configuration".into(),
            });
        }
        truncate_log(&log_path, snap.state.generation)?;
        let g = snap.state.generation;
        log::info!("resuming from generation {g}");
        (snap.state, Some(g))
    } else {
        if log_path.exists() {
            fs::remove_file(&log_path).map_err(io_err(&log_path))?;
        }
        let state = evolve::initialize(&config.evolution, pool, evaluator, None).map_err(RunError::Evolve)?;
        (state, None)
    };

    let mut log = BufWriter::new(
        OpenOptions::new().create(true).append(true).open(&log_path).map_err(io_err(&log_path))?,
    );
    let write_generation = |state: &EvolutionState, log: &mut BufWriter<File>| -> Result<(), RunError> {
        let rec = state.history.last().expect("history is never empty");
        for r in generation_records(rec, &cost_of) {
            let line = serde_json::to_string(&r).expect("records serialize");
            writeln!(log, "{line}").map_err(io_err(&log_path))?;
        }
        log.flush().map_err(io_err(&log_path))?;
        let snap = Snapshot { config: config.clone(), state: state.clone() };
        let text = serde_json::to_vec(&snap).expect("snapshot serializes");
        write_atomic(&snap_path, &text)
    };

    if resumed_from.is_none() {
        write_generation(&state, &mut log)?;
        log_generation(&state);
    }
    let mut done = 0usize;
    while !state.is_finished() && stop_after.is_none_or(|s| done < s) {
        evolve::step(&mut state, pool, evaluator).map_err(RunError::Evolve)?;
        write_generation(&state, &mut log)?;
        log_generation(&state);
        done += 1;
    }
    if state.is_finished() {
        let text: String = evolve::population_text(&state).into_iter().map(|l| l + "\n").collect();
        write_atomic(&dir.join(POPULATION_FILE), text.as_bytes())?;
    }
    Ok(RunSummary {
        output_dir: dir.clone(),
        generations: state.generation,
        evaluations: state.next_id,
        resumed_from,
        state,
    })
}

fn log_generation(state: &EvolutionState) {
    let best = state.best_per_objective();
    let diverged = state.population.iter().filter(|c| c.score.diverged).count();
    log::info!("generation {}: best {:?}, diverged {}", state.generation, best, diverged);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_toml() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_toml(&cfg.to_toml(), "inline").unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected_with_their_name() {
        let err = RunConfig::from_toml("[evolution]\npopulaton = 4\n", "inline").unwrap_err();
        assert!(err.is_config());
        assert!(err.to_string().contains("populaton"), "{err}");
    }

    #[test]
    fn semantic_errors_name_the_field() {
        let err = RunConfig::from_toml("[evolution]\npopulation = 4\nelites = 4\n", "inline").unwrap_err();
        assert!(err.to_string().contains("evolution.elites"), "{err}");
        let err = RunConfig::from_toml("[objectives]\nobjectives = []\n", "inline").unwrap_err();
        assert!(err.to_string().contains("objectives.objectives"), "{err}");
    }

    #[test]
    fn crowding_encoding() {
        let c = Candidate {
            id: 3,
            genome: BackboneGenome::unshared(&[9]),
            score: ScoreVector::new(vec![1.0]),
            generation: 0,
            origin: Origin::Seed,
            parents: vec![],
        };
        for v in [Some(f64::INFINITY), Some(0.5), None] {
            let mut r = record(&c, 0, v.map(|x| (0, x)), None);
            r.crowding = v;
            let line = serde_json::to_string(&r).unwrap();
            let back: LogRecord = serde_json::from_str(&line).unwrap();
            assert_eq!(back, r);
        }
    }
}
