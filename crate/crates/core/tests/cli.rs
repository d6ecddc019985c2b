use std::path::Path;
use std::process::{Command, Output};

use asr_probe::cli::exit;
use asr_probe::experiment::Report;
use asr_probe::manifest::RunManifest;
use asr_probe::pmi::PmiRanking;
use asr_probe::stimulus::Pattern;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_asr-probe"))
        .args(args)
        .env_remove("ASR_SCORER_ENDPOINT")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Documents full of repeated sameness tri-grams over ids 1..=120, with
/// separators (id 0) between them.
fn write_corpus(path: &Path) {
    let mut lines = Vec::new();
    for d in 0..200u32 {
        let mut doc = Vec::new();
        for i in 0..60u32 {
            let a = 1 + (d * 7 + i * 13) % 40;
            let b = 41 + (d * 3 + i * 5) % 40;
            let tri = match i % 3 {
                0 => [a, a, b],
                1 => [a, b, a],
                _ => [a, b, b],
            };
            doc.extend(tri);
            doc.push(0);
        }
        lines.push(doc.iter().map(u32::to_string).collect::<Vec<_>>().join(" "));
    }
    std::fs::write(path, lines.join("\n") + "\n").unwrap();
}

fn mine(dir: &Path, out: &str) -> Output {
    let corpus = dir.join("corpus.txt");
    if !corpus.exists() {
        write_corpus(&corpus);
    }
    bin(&[
        "mine-pmi",
        "--corpus",
        corpus.to_str().unwrap(),
        "--out",
        dir.join(out).to_str().unwrap(),
        "--exclude-ids",
        "0",
        "--min-count",
        "5",
    ])
}

#[test]
fn mining_is_deterministic_and_writes_one_file_per_pattern() {
    let dir = tempfile::tempdir().unwrap();
    let a = mine(dir.path(), "a");
    assert_eq!(code(&a), exit::OK, "{}", stderr(&a));
    let b = mine(dir.path(), "b");
    assert_eq!(code(&b), exit::OK);
    for p in Pattern::SAMENESS {
        let name = format!("ranking-{p}.json");
        let x = std::fs::read(dir.path().join("a").join(&name)).unwrap();
        let y = std::fs::read(dir.path().join("b").join(&name)).unwrap();
        assert_eq!(x, y, "{name} differs between runs");
        let r = PmiRanking::load(&dir.path().join("a").join(&name)).unwrap();
        assert_eq!(r.pattern, p);
        assert_eq!(r.entries.len(), 32);
        assert!(r
            .entries
            .iter()
            .all(|e| e.count >= 5 && !e.ids.contains(&0)));
        assert!(r.entries.windows(2).all(|w| w[0].pmi >= w[1].pmi));
    }
}

#[test]
fn empty_corpus_is_degenerate() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("empty.txt");
    std::fs::write(&corpus, "").unwrap();
    let out = bin(&[
        "mine-pmi",
        "--corpus",
        corpus.to_str().unwrap(),
        "--out",
        dir.path().join("r").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), exit::DEGENERATE, "{}", stderr(&out));
    let r = PmiRanking::load(&dir.path().join("r/ranking-AAB.json")).unwrap();
    assert!(r.entries.is_empty());
}

#[test]
fn seen_setting_without_rankings_is_a_config_error() {
    let out = bin(&[
        "run",
        "--setting",
        "seen-random",
        "--scorer",
        "uniform:100",
        "--seed",
        "1",
    ]);
    assert_eq!(code(&out), exit::CONFIG);
    assert!(stderr(&out).contains("rankings"), "{}", stderr(&out));
}

#[test]
fn missing_scorer_is_a_config_error() {
    let out = bin(&["run", "--seed", "1"]);
    assert_eq!(code(&out), exit::CONFIG);
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = bin(&["run", "--no-such-flag"]);
    assert_eq!(code(&out), exit::CONFIG);
}

#[test]
fn small_run_writes_report_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let out = bin(&[
        "run",
        "--scorer",
        "uniform:1000",
        "--seed",
        "7",
        "--cycles",
        "16",
        "--runs",
        "1",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), exit::OK, "{}", stderr(&out));
    let report =
        Report::from_json(&std::fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.table.cells.len(), 12);
    for c in &report.table.cells {
        assert_eq!(c.n, 256);
        assert!((c.mean - 2.0 * 1000f64.log2()).abs() < 1e-9);
    }
    let manifest = RunManifest::load(&out_dir.join("manifest.json")).unwrap();
    assert_eq!(manifest.config.master_seed, 7);
    assert_eq!(manifest.cycles.len(), 3 * 16);
    assert!(manifest.timing.is_none());
    assert!(out_dir.join("report.txt").exists());
    let csv = std::fs::read_to_string(out_dir.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 13);

    let rendered = bin(&["report", out_dir.join("report.json").to_str().unwrap()]);
    assert_eq!(code(&rendered), exit::OK);
    assert_eq!(
        String::from_utf8(rendered.stdout).unwrap(),
        std::fs::read_to_string(out_dir.join("report.txt")).unwrap()
    );
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(
        &config,
        "scorer = \"uniform:500\"\nseed = 3\ncycles = 4\nruns = 1\nprobes = 2\n",
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = bin(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--cycles",
        "2",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), exit::OK, "{}", stderr(&out));
    let m = RunManifest::load(&out_dir.join("manifest.json")).unwrap();
    assert_eq!(m.config.cycles_per_run, 2);
    assert_eq!(m.config.master_seed, 3);
    assert_eq!(m.config.probes_per_cycle, 2);
    assert_eq!(m.scorer_spec, "uniform:500");

    std::fs::write(&config, "scorer = \"uniform:500\"\nbogus = 1\n").unwrap();
    let out = bin(&["run", "--config", config.to_str().unwrap()]);
    assert_eq!(code(&out), exit::CONFIG);
}

#[test]
fn seen_run_uses_mined_rankings() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&mine(dir.path(), "rk")), exit::OK);
    let rk = |p: &str| dir.path().join("rk").join(format!("ranking-{p}.json"));
    let out_dir = dir.path().join("out");
    let out = bin(&[
        "run",
        "--setting",
        "seen-seen",
        "--scorer",
        "oracle:0.9:200",
        "--seed",
        "11",
        "--cycles",
        "2",
        "--runs",
        "1",
        "--rankings",
        rk("AAB").to_str().unwrap(),
        rk("ABA").to_str().unwrap(),
        rk("ABB").to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--format",
        "csv",
    ]);
    assert_eq!(code(&out), exit::OK, "{}", stderr(&out));
    let report =
        Report::from_json(&std::fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.table.probe_patterns, Pattern::SAMENESS.to_vec());
    assert_eq!(report.table.cells.len(), 9);
    let m = RunManifest::load(&out_dir.join("manifest.json")).unwrap();
    assert_eq!(m.rankings.len(), 3);
    assert_eq!(m.split_seeds.len(), 3);
    assert!(String::from_utf8(out.stdout)
        .unwrap()
        .starts_with("scorer,setting"));
}

#[test]
fn report_rejects_foreign_json() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x.json");
    std::fs::write(&p, "{\"schema\": \"something-else/1\"}").unwrap();
    let out = bin(&["report", p.to_str().unwrap()]);
    assert_eq!(code(&out), exit::CONFIG);
}
