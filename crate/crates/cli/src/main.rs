use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use livsynth::analysis::{motif_table, render, RenderFormat};
use livsynth::cost::cost_report;
use livsynth::genome::{parse, validate, BackboneGenome, OptionPool};
use livsynth::liv::{compile_plan, Dims};
use livsynth::runlog::{execute, log_motifs, read_log, RunConfig, RunError};

const ENV_OUTPUT_DIR: &str = "LIVSYNTH_OUTPUT_DIR";
const ENV_THREADS: &str = "LIVSYNTH_THREADS";

#[derive(Parser)]
#[command(name = "livsynth", version, about = "Evolve, score and inspect LIV backbone genomes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an evolution described by a TOML config file.
    Evolve {
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Stop after this many new generations; rerun to resume.
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Print the default run configuration as TOML.
    DefaultConfig,
    /// Print parameter count and inference cache size of a genome.
    Score {
        /// Genome text, or a path to a text or JSON genome file.
        genome: String,
        #[arg(long, default_value_t = 4096)]
        seq_len: u64,
        #[arg(long, default_value_t = 2)]
        bytes_per_element: u64,
        #[arg(long, value_enum, default_value_t = Preset::Reference)]
        preset: Preset,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        head_dim: Option<usize>,
        /// Emit the full cost report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Draw a genome with its sharing arcs.
    Render {
        genome: String,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Per-generation motif statistics of a results log.
    Motifs {
        log: PathBuf,
        /// One JSON object per generation instead of a table.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Reference,
    Desk,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Dot,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Runtime(m) => m,
        }
    }
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        if e.is_config() {
            Failure::Usage(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn load_genome(arg: &str) -> Result<BackboneGenome, Failure> {
    let path = Path::new(arg);
    let genome = if path.is_file() {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::Usage(format!("cannot read {arg}: {e}")))?;
        if path.extension().is_some_and(|x| x == "json") {
            serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{arg}: {e}")))?
        } else {
            parse(text.trim()).map_err(|e| Failure::Usage(format!("{arg}: {e}")))?
        }
    } else {
        parse(arg).map_err(|e| Failure::Usage(e.to_string()))?
    };
    let pool = OptionPool::standard();
    let problems = validate(&genome, &pool);
    if !problems.is_empty() {
        let list: Vec<String> = problems.iter().map(ToString::to_string).collect();
        return Err(Failure::Usage(format!("invalid genome: {}", list.join("; "))));
    }
    Ok(genome)
}

fn env_threads() -> Result<Option<usize>, Failure> {
    match std::env::var(ENV_THREADS) {
        Ok(v) => v
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .map(Some)
            .ok_or_else(|| Failure::Usage(format!("{ENV_THREADS} must be a positive integer, got {v:?}"))),
        Err(_) => Ok(None),
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Evolve { config, output_dir, stop_after } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Ok(dir) = std::env::var(ENV_OUTPUT_DIR) {
                cfg.output_dir = PathBuf::from(dir);
            }
            if let Some(dir) = output_dir {
                cfg.output_dir = dir;
            }
            if let Some(n) = env_threads()? {
                cfg.threads = Some(n);
            }
            let summary = execute(&cfg, stop_after)?;
            println!(
                "{} generations, {} evaluations, results in {}",
                summary.generations,
                summary.evaluations,
                summary.output_dir.display()
            );
        }
        Command::DefaultConfig => print!("{}", RunConfig::default().to_toml()),
        Command::Score { genome, seq_len, bytes_per_element, preset, width, head_dim, json } => {
            let genome = load_genome(&genome)?;
            let mut dims = match preset {
                Preset::Reference => Dims::reference(),
                Preset::Desk => Dims::desk(),
            };
            if let Some(w) = width {
                dims.width = w;
            }
            if let Some(h) = head_dim {
                dims.head_dim = h;
            }
            dims.seq_len = dims.seq_len.max(seq_len as usize);
            if seq_len == 0 || bytes_per_element == 0 {
                return Err(Failure::Usage("--seq-len and --bytes-per-element must be positive".into()));
            }
            let plan = compile_plan(&genome, &dims, &OptionPool::standard())
                .map_err(|e| Failure::Usage(e.to_string()))?;
            let report = cost_report(&plan, seq_len, bytes_per_element);
            if json {
                println!("{}", serde_json::to_string(&report).expect("reports serialize"));
            } else {
                println!("parameters\t{}", report.parameter_count);
                println!("cache_bytes\t{}", report.cache_bytes);
                println!("seq_len\t{}", report.seq_len);
                println!("bytes_per_element\t{}", report.bytes_per_element);
            }
        }
        Command::Render { genome, format } => {
            let genome = load_genome(&genome)?;
            let format = match format {
                Format::Text => RenderFormat::Text,
                Format::Dot => RenderFormat::Dot,
            };
            print!("{}", render(&genome, &OptionPool::standard(), format));
        }
        Command::Motifs { log, json } => {
            let contents = read_log(&log)?;
            let (rows, bad_genomes) = log_motifs(&contents);
            if json {
                for r in &rows {
                    println!("{}", serde_json::to_string(r).expect("rows serialize"));
                }
            } else {
                print!("{}", motif_table(&rows, &OptionPool::standard()));
            }
            let skipped = contents.skipped + bad_genomes;
            if skipped > 0 {
                eprintln!("skipped {skipped} corrupt record(s)");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
