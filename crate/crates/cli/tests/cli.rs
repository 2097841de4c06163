use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cxlssd"))
}

fn recipes() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../recipes")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn report(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn minimal_recipe_writes_a_report() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("r");
    ok(&["run", "--config", s(&recipes().join("minimal.cfg")), "--out", s(&out)]);
    assert!(out.join("report.json").exists());
    assert!(out.join("hist_cache_miss.csv").exists());
    assert!(out.join("cdf_nand_read.csv").exists());
    assert!(!out.join("events.csv").exists());
}

#[test]
fn every_recipe_validates() {
    let mut n = 0;
    for e in std::fs::read_dir(recipes()).unwrap() {
        let p = e.unwrap().path();
        if p.extension().is_some_and(|x| x == "cfg") {
            ok(&["validate-config", "--config", s(&p)]);
            n += 1;
        }
    }
    assert!(n >= 5);
}

#[test]
fn exit_codes_are_distinct() {
    let tmp = tempfile::tempdir().unwrap();
    let missing_trace = write_config(tmp.path(), "a.cfg", "trace = nowhere.txt\n");
    assert_eq!(run(&["run", "--config", s(&missing_trace), "--out", s(&tmp.path().join("o"))]).status.code(), Some(3));
    assert_eq!(run(&["run", "--config", s(&tmp.path().join("absent.cfg"))]).status.code(), Some(3));

    let bad_key = write_config(tmp.path(), "b.cfg", "warp_factor = 9\n");
    assert_eq!(run(&["validate-config", "--config", s(&bad_key)]).status.code(), Some(2));
    let bad_value = write_config(tmp.path(), "c.cfg", "core_count = 0\n");
    assert_eq!(run(&["validate-config", "--config", s(&bad_value)]).status.code(), Some(2));

    std::fs::write(tmp.path().join("bad.txt"), "0 0 X 0x40000000 1\n").unwrap();
    let bad_trace = write_config(tmp.path(), "d.cfg", "trace = bad.txt\n");
    assert_eq!(run(&["run", "--config", s(&bad_trace), "--out", s(&tmp.path().join("o"))]).status.code(), Some(4));

    std::fs::write(tmp.path().join("far.txt"), "0 0 R 0xF0000000 1\n").unwrap();
    let unmapped = write_config(tmp.path(), "e.cfg", "trace = far.txt\nllc_bytes = 0\n");
    assert_eq!(run(&["run", "--config", s(&unmapped), "--out", s(&tmp.path().join("o"))]).status.code(), Some(5));

    std::fs::write(tmp.path().join("x.json"), "{}").unwrap();
    assert_eq!(run(&["compare", s(&tmp.path().join("x.json")), s(&tmp.path().join("x.json"))]).status.code(), Some(6));
}

#[test]
fn override_reaches_the_report() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("r");
    ok(&[
        "run",
        "--config",
        s(&recipes().join("minimal.cfg")),
        "--out",
        s(&out),
        "--override",
        "compaction_mode=parallel",
        "--seed",
        "77",
    ]);
    let r = report(&out);
    assert_eq!(r["config"]["compaction_mode"], "parallel");
    assert_eq!(r["seed"], 77);
}

#[test]
fn gen_trace_counts_and_degenerate_zipf() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path().join("t.txt");
    let msg = ok(&["gen-trace", "--out", s(&t), "--count", "1000", "--read-ratio", "0.5", "--seed", "5"]);
    let text = std::fs::read_to_string(&t).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1000);
    let reads = lines.iter().filter(|l| l.split_whitespace().nth(2) == Some("R")).count();
    // binomial(1000, 0.5): sd ~15.8, allow 4 sd
    assert!((437..=563).contains(&reads), "{reads} reads");
    assert!(msg.contains(&format!("{reads} reads")));

    let empty = tmp.path().join("e.txt");
    ok(&["gen-trace", "--out", s(&empty), "--count", "0"]);
    assert_eq!(std::fs::read(&empty).unwrap().len(), 0);

    let z = tmp.path().join("z.txt");
    ok(&[
        "gen-trace",
        "--out",
        s(&z),
        "--count",
        "1000",
        "--read-ratio",
        "0.5",
        "--seed",
        "5",
        "--distribution",
        "zipf:0",
    ]);
    assert_eq!(std::fs::read(&z).unwrap(), std::fs::read(&t).unwrap());

    assert_eq!(run(&["gen-trace", "--out", s(&z), "--read-ratio", "1.5"]).status.code(), Some(2));
}

#[test]
fn compare_ratios() {
    let tmp = tempfile::tempdir().unwrap();
    let base = "trace = generate\ngen_count = 3000\ngen_read_ratio = 1\ngen_span_bytes = 16M\nllc_bytes = 0\ndata_cache_frames = 16\ncost_cache_check_ns = 0\n";
    let a = write_config(tmp.path(), "a.cfg", &format!("{base}experiment = slow\nnand_read_ns = 200000\n"));
    let b = write_config(tmp.path(), "b.cfg", &format!("{base}experiment = fast\nnand_read_ns = 100000\n"));
    let (ra, rb) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["run", "--config", s(&a), "--out", s(&ra)]);
    ok(&["run", "--config", s(&b), "--out", s(&rb)]);

    let json = tmp.path().join("cmp.json");
    ok(&["compare", s(&ra), s(&ra), "--out", s(&json)]);
    let same: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert!(same["metrics"].as_array().unwrap().iter().all(|m| m["ratio"] == 1.0));

    ok(&["compare", s(&ra.join("report.json")), s(&rb), "--out", s(&json)]);
    let diff: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    let miss =
        diff["metrics"].as_array().unwrap().iter().find(|m| m["metric"] == "latency.cache_miss.mean_ns").unwrap();
    assert_eq!(miss["ratio"], 2.0);
}

fn miss_mean_from_events(dir: &Path) -> f64 {
    let text = std::fs::read_to_string(dir.join("events.csv")).unwrap();
    let v: Vec<f64> = text
        .lines()
        .skip(1)
        .filter(|l| l.split(',').nth(1) == Some("cache_miss"))
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn empirical_vs_constant_ratio_matches_events() {
    let tmp = tempfile::tempdir().unwrap();
    let (e, c) = (tmp.path().join("e"), tmp.path().join("c"));
    let shrink = ["--override", "gen_count=5000"];
    ok(&[&["run", "--config", s(&recipes().join("empirical-nand.cfg")), "--out", s(&e), "--emit-events"], &shrink[..]]
        .concat());
    ok(&[
        &["run", "--config", s(&recipes().join("constant-baseline.cfg")), "--out", s(&c), "--emit-events"],
        &shrink[..],
    ]
    .concat());
    let json = tmp.path().join("cmp.json");
    ok(&["compare", s(&e), s(&c), "--out", s(&json)]);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    let ratio = v["metrics"].as_array().unwrap().iter().find(|m| m["metric"] == "latency.cache_miss.mean_ns").unwrap()
        ["ratio"]
        .as_f64()
        .unwrap();
    let by_hand = miss_mean_from_events(&e) / miss_mean_from_events(&c);
    assert!((ratio - by_hand).abs() < 1e-9, "{ratio} vs {by_hand}");
    assert!(ratio > 1.5);
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().into(), std::fs::read(&p).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn pipeline_is_byte_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let pipeline = |name: &str, seed: &str| {
        let d = tmp.path().join(name);
        std::fs::create_dir_all(&d).unwrap();
        ok(&[
            "gen-trace",
            "--out",
            s(&d.join("trace.txt")),
            "--count",
            "5000",
            "--cores",
            "2",
            "--threads",
            "2",
            "--span",
            "4M",
            "--seed",
            seed,
        ]);
        let cfg = write_config(
            &d,
            "run.cfg",
            "trace = trace.txt\ncore_count = 2\nthreads_per_core = 2\nlogic_cost_mode = distribution\nwrite_log_capacity_entries = 256\n",
        );
        ok(&["run", "--config", s(&cfg), "--out", s(&d.join("out")), "--seed", seed, "--emit-events"]);
        d.join("out")
    };
    let (a, b, c) = (pipeline("a", "9"), pipeline("b", "9"), pipeline("c", "10"));
    assert_eq!(tree(&a), tree(&b));
    assert_ne!(std::fs::read(a.join("events.csv")).unwrap(), std::fs::read(c.join("events.csv")).unwrap());
}
