use std::path::Path;
use std::process::Command;

use compbench::cli::exit;
use compbench::suite::{Category, SuiteBuilder, SuiteManifest};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_compbench"));
    c.env_remove("COMPBENCH_CACHE");
    c
}

fn small_suite(dir: &Path, n: usize) -> std::path::PathBuf {
    let records: Vec<_> = SuiteBuilder::default()
        .build_category(Category::Color)
        .unwrap()
        .into_iter()
        .chain(SuiteBuilder::default().build_category(Category::Spatial).unwrap())
        .filter(|r| r.category == Category::Color || r.id.ends_with("0000"))
        .take(n)
        .collect();
    let path = dir.join("suite.json");
    SuiteManifest::new(records).write(&path).unwrap();
    path
}

fn run(cmd: &mut Command) -> (i32, String, String) {
    let out = cmd.output().unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

#[test]
fn evaluate_two_prompts_writes_twenty_scores() {
    let dir = tempfile::tempdir().unwrap();
    let suite = small_suite(dir.path(), 2);
    let run_dir = dir.path().join("run");
    let (code, stdout, stderr) = run(bin()
        .args(["evaluate", "--metrics", "b_vqa", "--backends", "fake", "--suite"])
        .arg(&suite)
        .arg("--out")
        .arg(&run_dir));
    assert_eq!(code, exit::OK, "{stderr}");
    assert!(stdout.contains("20 new scores"), "{stdout}");
    let scores = std::fs::read_to_string(run_dir.join("scores.jsonl")).unwrap();
    assert_eq!(scores.lines().count(), 20);
    for f in ["config.json", "backends.json", "summary.json", "summary.txt", "images.jsonl"] {
        assert!(run_dir.join(f).exists(), "{f} missing");
    }
}

#[test]
fn record_then_replay_reproduces_the_store() {
    let dir = tempfile::tempdir().unwrap();
    let suite = small_suite(dir.path(), 3);
    let cache = dir.path().join("cache.jsonl");
    let a = dir.path().join("a");
    let (code, _, stderr) = run(bin()
        .args(["evaluate", "--metrics", "b_vqa,clip,unidet", "--backend-mode", "record", "--suite"])
        .arg(&suite)
        .arg("--replay-cache")
        .arg(&cache)
        .arg("--out")
        .arg(&a));
    assert_eq!(code, exit::OK, "{stderr}");

    let b = dir.path().join("b");
    let (code, _, stderr) = run(bin()
        .args(["evaluate", "--backend-mode", "replay", "--config"])
        .arg(a.join("config.json"))
        .arg("--out")
        .arg(&b));
    assert_eq!(code, exit::OK, "{stderr}");
    assert_eq!(std::fs::read(a.join("scores.jsonl")).unwrap(), std::fs::read(b.join("scores.jsonl")).unwrap());

    let c = dir.path().join("c");
    let (code, _, stderr) = run(bin()
        .args(["evaluate", "--backend-mode", "replay", "--metrics", "b_clip", "--config"])
        .arg(a.join("config.json"))
        .arg("--out")
        .arg(&c));
    assert_eq!(code, exit::REPLAY_MISS, "{stderr}");
}

#[test]
fn failures_map_to_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let suite = small_suite(dir.path(), 2);
    let (code, _, _) = run(bin().args(["evaluate", "--metrics", "fid", "--suite"]).arg(&suite));
    assert_eq!(code, exit::UNKNOWN_NAME);
    let (code, _, _) = run(bin().args(["evaluate", "--backends", "live", "--suite"]).arg(&suite));
    assert_eq!(code, exit::LIVE_UNAVAILABLE);
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    let (code, _, _) = run(bin().args(["evaluate", "--config"]).arg(&bad));
    assert_eq!(code, exit::CONFIG);
    let (code, _, _) = run(bin().args(["evaluate", "--backends", "replay", "--suite"]).arg(&suite));
    assert_eq!(code, exit::CONFIG);
    let (code, _, _) = run(bin().args(["suite", "validate", "--suite"]).arg(&suite));
    assert_eq!(code, exit::INVALID_SUITE);
    let (code, _, _) = run(bin().args(["gors", "select", "--categories", "colour", "--suite"]).arg(&suite));
    assert_eq!(code, exit::UNKNOWN_NAME);
    let (code, _, _) = run(bin().args(["report", "--fixture"]).arg(dir.path().join("missing.json")));
    assert_eq!(code, exit::IO);
    let (code, _, _) = run(bin().args(["frobnicate"]));
    assert_eq!(code, exit::USAGE);
}

#[test]
fn suite_generate_then_validate() {
    let dir = tempfile::tempdir().unwrap();
    let suite = dir.path().join("suite.json");
    let (code, stdout, stderr) = run(bin().args(["suite", "generate", "--out"]).arg(&suite));
    assert_eq!(code, exit::OK, "{stderr}");
    assert!(stdout.contains("6000 prompts"), "{stdout}");
    let (code, stdout, _) = run(bin().args(["suite", "validate", "--suite"]).arg(&suite));
    assert_eq!(code, exit::OK, "{stdout}");
    assert!(stdout.trim_end().ends_with("ok"));
}

#[test]
fn report_marks_published_leader() {
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/published_tables.json");
    let (code, stdout, _) = run(bin().arg("report").arg("--fixture").arg(&fixture));
    assert_eq!(code, exit::OK);
    let color = stdout.split("\n\n").find(|b| b.starts_with("[color]")).unwrap();
    let gors = color.lines().find(|l| l.starts_with("GORS")).unwrap();
    assert!(gors.contains("0.6603*"), "{gors}");
}

#[test]
fn gors_select_and_correlate_runs() {
    let dir = tempfile::tempdir().unwrap();
    let suite = small_suite(dir.path(), 4);
    let out = dir.path().join("gors");
    let (code, stdout, stderr) = run(bin()
        .args(["gors", "select", "--k", "4", "--split", "train", "--suite"])
        .arg(&suite)
        .arg("--out")
        .arg(&out));
    assert_eq!(code, exit::OK, "{stderr}");
    assert!(stdout.contains("selected"), "{stdout}");
    let manifest = std::fs::read_to_string(out.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"batch_size\": 5"));

    let run_dir = dir.path().join("run");
    let (code, _, stderr) = run(bin()
        .args(["evaluate", "--metrics", "b_vqa,clip", "--suite"])
        .arg(&suite)
        .arg("--out")
        .arg(&run_dir));
    assert_eq!(code, exit::OK, "{stderr}");
    let index = compbench::metrics::ImageIndex::read(&run_dir.join("images.jsonl")).unwrap();
    let manifest = SuiteManifest::read(&suite).unwrap();
    let human: Vec<_> = manifest
        .records
        .iter()
        .flat_map(|r| index.images(&r.id).iter().map(move |i| (r.id.clone(), i.id.clone())))
        .enumerate()
        .map(|(n, (p, i))| serde_json::json!({"prompt_id": p, "image_id": i, "value": (n % 5) as f64 / 4.0, "raters": 3}))
        .collect();
    let human_path = dir.path().join("human.json");
    std::fs::write(&human_path, serde_json::to_string(&human).unwrap()).unwrap();
    let (code, stdout, stderr) = run(bin()
        .args(["correlate", "--suite"])
        .arg(&suite)
        .arg("--scores")
        .arg(&run_dir)
        .arg("--human")
        .arg(&human_path));
    assert_eq!(code, exit::OK, "{stderr}");
    assert!(stdout.contains("tau_b") && stdout.contains("b_vqa"), "{stdout}");
}
