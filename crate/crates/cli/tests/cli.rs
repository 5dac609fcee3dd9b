use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn livsynth(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_livsynth"))
        .args(args)
        .env_remove("LIVSYNTH_OUTPUT_DIR")
        .env_remove("LIVSYNTH_THREADS")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn field(text: &str, name: &str) -> u64 {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{name}\t")))
        .unwrap_or_else(|| panic!("no {name} in {text}"))
        .parse()
        .unwrap()
}

const STATIC_CONFIG: &str = r#"
output_dir = "unused"
threads = 1

[evolution]
population = 6
generations = 3
depth = 6
seed = 3

[objectives]
objectives = ["size", "cache"]
cache_seq_len = 1024
"#;

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path.display().to_string()
}

#[test]
fn score_reproduces_the_transformer_cache_anchor() {
    let genome = vec!["1,1,1,1,1-9,1,1,1,1"; 12].join("-");
    let out = livsynth(&["score", &genome]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(field(&stdout(&out), "cache_bytes"), 150_994_944);

    let json = livsynth(&["score", &genome, "--json"]);
    let v: serde_json::Value = serde_json::from_slice(&json.stdout).unwrap();
    assert_eq!(v["cache_bytes"], 150_994_944u64);
}

#[test]
fn score_memoryless_and_sharing() {
    let out = livsynth(&["score", "91111-92121-93131"]);
    assert_eq!(field(&stdout(&out), "cache_bytes"), 0);
    let shared = livsynth(&["score", "9,1,2,1,1-9,1,2,1,1"]);
    let severed = livsynth(&["score", "9,1,1,1,1-9,2,1,2,1"]);
    assert!(field(&stdout(&severed), "parameters") > field(&stdout(&shared), "parameters"));
}

#[test]
fn genome_files_are_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let txt = dir.path().join("g.txt");
    fs::write(&txt, "21211-31112-21221-32112\n").unwrap();
    let json = dir.path().join("g.json");
    let g = livsynth::genome::parse("21211-31112-21221-32112").unwrap();
    fs::write(&json, serde_json::to_string(&g).unwrap()).unwrap();
    let a = livsynth(&["render", txt.to_str().unwrap()]);
    let b = livsynth(&["render", json.to_str().unwrap()]);
    let c = livsynth(&["render", "21211-31112-21221-32112"]);
    assert!(a.status.success() && b.status.success());
    assert_eq!(stdout(&a), stdout(&c));
    assert_eq!(stdout(&b), stdout(&c));
}

#[test]
fn render_marks_one_arc_of_each_kind() {
    let out = livsynth(&["render", "21211-31112-21221-32112"]);
    let text = stdout(&out);
    assert!(text.contains("F1 featurizer   SA-2 [all] positions 1,3"), "{text}");
    assert!(text.contains("G1 feature-group SA-3 [K] positions 2,4"), "{text}");
    assert!(!text.contains("F2") && !text.contains("G2"));

    let dot = stdout(&livsynth(&["render", "21211-31112-21221-32112", "--format", "dot"]));
    assert_eq!(dot.matches("style=solid").count(), 1);
    assert_eq!(dot.matches("style=dashed").count(), 1);
    assert!(dot.contains("n1:e -> n3:e"));
    assert!(dot.contains("n2:w -> n4:w"));
    assert_eq!(dot, stdout(&livsynth(&["render", "21211-31112-21221-32112", "--format", "dot"])));

    let plain = stdout(&livsynth(&["render", "11111-91111", "--format", "dot"]));
    assert!(!plain.contains("style=solid") && !plain.contains("style=dashed"));
}

#[test]
fn parse_failures_exit_with_usage_code() {
    let out = livsynth(&["render", "12x"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("parse"));
    assert_eq!(livsynth(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(livsynth(&["--help"]).status.code(), Some(0));
}

#[test]
fn evolve_writes_log_snapshot_and_population() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), STATIC_CONFIG);
    let out_dir = dir.path().join("out");
    let out = livsynth(&["evolve", &cfg, "--output-dir", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let log = fs::read_to_string(out_dir.join("results.jsonl")).unwrap();
    let gens: Vec<u64> = log
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["generation"].as_u64().unwrap())
        .collect();
    assert_eq!(*gens.iter().max().unwrap(), 3);
    assert!(out_dir.join("snapshot.json").exists());
    assert_eq!(fs::read_to_string(out_dir.join("population.txt")).unwrap().lines().count(), 6);

    let motifs = livsynth(&["motifs", out_dir.join("results.jsonl").to_str().unwrap()]);
    assert!(motifs.status.success());
    let table = stdout(&motifs);
    assert_eq!(table.lines().count(), 5);
    assert!(table.starts_with("generation\tpopulation\tSA-1"));
}

#[test]
fn environment_overrides_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), STATIC_CONFIG);
    let target = dir.path().join("from-env");
    let out = Command::new(env!("CARGO_BIN_EXE_livsynth"))
        .args(["evolve", &cfg])
        .env("LIVSYNTH_OUTPUT_DIR", &target)
        .env("LIVSYNTH_THREADS", "1")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(target.join("results.jsonl").exists());
}

#[test]
fn stopped_run_resumes_to_identical_log() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), STATIC_CONFIG);
    let full = dir.path().join("full");
    let part = dir.path().join("part");
    assert!(livsynth(&["evolve", &cfg, "--output-dir", full.to_str().unwrap()]).status.success());
    let first = livsynth(&["evolve", &cfg, "--output-dir", part.to_str().unwrap(), "--stop-after", "1"]);
    assert!(first.status.success());
    assert!(!part.join("population.txt").exists());
    assert!(livsynth(&["evolve", &cfg, "--output-dir", part.to_str().unwrap()]).status.success());
    assert_eq!(
        fs::read_to_string(full.join("results.jsonl")).unwrap(),
        fs::read_to_string(part.join("results.jsonl")).unwrap()
    );
}

#[test]
fn invalid_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), "[evolution]\npopulation = 4\nelites = 9\n");
    let out = livsynth(&["evolve", &bad]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("evolution.elites"), "{}", stderr(&out));

    let unknown = write_config(dir.path(), "[evolution]\nmutation_rat = 0.2\n");
    let out = livsynth(&["evolve", &unknown]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("mutation_rat"), "{}", stderr(&out));

    assert_eq!(livsynth(&["evolve", "/nonexistent/run.toml"]).status.code(), Some(1));
}

#[test]
fn unwritable_output_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), STATIC_CONFIG);
    let file = dir.path().join("occupied");
    fs::write(&file, "x").unwrap();
    let out = livsynth(&["evolve", &cfg, "--output-dir", file.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn motifs_skip_corrupt_lines() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("log.jsonl");
    let good = r#"{"generation":0,"id":0,"genome":"91111-92111","score":{"objectives":[1.0],"diverged":false},"rank":0,"crowding":"inf","in_population":true,"evaluated":true,"origin":"seed","parents":[],"cost":null}"#;
    fs::write(&log, format!("{good}\n{{broken\n")).unwrap();
    let out = livsynth(&["motifs", log.to_str().unwrap(), "--json"]);
    assert!(out.status.success());
    assert!(stderr(&out).contains("skipped 1 corrupt record"));
    let row: serde_json::Value = serde_json::from_str(stdout(&out).lines().next().unwrap()).unwrap();
    assert_eq!(row["class_counts"]["9"], 2);
}

#[test]
fn default_config_is_a_valid_config() {
    let out = livsynth(&["default-config"]);
    assert!(out.status.success());
    let cfg = livsynth::runlog::RunConfig::from_toml(&stdout(&out), "stdout").unwrap();
    assert_eq!(cfg.evolution.population, 16);
    assert_eq!(cfg.evolution.generations, 18);
}
