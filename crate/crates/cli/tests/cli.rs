use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn gridstrike(args: &[&str], artifacts: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gridstrike"))
        .args(args)
        .env("GRIDSTRIKE_ARTIFACTS", artifacts)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn read_json(path: impl AsRef<Path>) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Log lines with the wall-clock field removed.
fn log_without_clock(path: &Path) -> Vec<serde_json::Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            v.as_object_mut().unwrap().remove("wall_ms");
            v
        })
        .collect()
}

#[test]
fn validate_reports_118_bus_dimensions() {
    let dir = tempfile::tempdir().unwrap();
    let o = gridstrike(&["validate", "--case", "ieee118.json"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let s = stdout(&o);
    assert!(s.contains("N=186"), "{s}");
    assert!(s.contains("generators=54"), "{s}");
}

#[test]
fn validate_reads_case_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../cases/ieee14.json");
    let o = gridstrike(&["validate", "--case", path.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("N=20"));
}

#[test]
fn exit_codes_partition_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(gridstrike(&["train", "--bogus"], dir.path()).status.code(), Some(2));
    assert_eq!(gridstrike(&["frobnicate"], dir.path()).status.code(), Some(2));
    assert_eq!(gridstrike(&["train", "--method", "ppo"], dir.path()).status.code(), Some(2));

    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[train]\nepisodez = 3\n").unwrap();
    let o = gridstrike(&["train", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("train.episodez"));

    let o = gridstrike(&["validate", "--case", "/nonexistent/case.m"], dir.path());
    assert_eq!(o.status.code(), Some(3));
    let o = gridstrike(&["oracle", "--K", "0"], dir.path());
    assert_eq!(o.status.code(), Some(3));

    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "").unwrap();
    let out = blocker.join("run");
    let o = gridstrike(&["oracle", "--M", "1", "--out", out.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn mass_runs_all_attackers_in_one_stage() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("mass");
    let o = gridstrike(
        &["train", "--method", "mass", "--preset", "ieee118-paper", "--episodes", "2", "--out", out.to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = read_json(out.join("summary.json"));
    assert_eq!(summary["attackers"], 9);
    assert_eq!(summary["stages"], 1);
    let manifest = read_json(out.join("manifest.json"));
    assert_eq!(manifest["status"], "ok");
}

#[test]
fn oracle_finds_the_desk_optimum() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("oracle");
    let o = gridstrike(
        &["oracle", "--case", "ieee14.json", "--K", "2", "--M", "2", "--out", out.to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("maximal loss"));
    let r = read_json(out.join("oracle.json"));
    assert!(r["best_loss_mw"].as_f64().unwrap() > 100.0);
    assert_eq!(r["best_sequence"].as_array().unwrap().len(), 2);
}

#[test]
fn training_and_reports_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let mut runs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let o = gridstrike(
            &["train", "--episodes", "160", "--seed", "3", "--out", out.to_str().unwrap()],
            dir.path(),
        );
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        runs.push(out);
    }
    let (a, b) = (&runs[0], &runs[1]);
    assert_eq!(log_without_clock(&a.join("train_log.jsonl")), log_without_clock(&b.join("train_log.jsonl")));
    for f in ["checkpoint.bin", "summary.json", "attack_sequences.csv", "config.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let summary = read_json(a.join("summary.json"));
    assert!(summary["updates"].as_u64().unwrap() > 0);

    let attack = dir.path().join("attack");
    let o = gridstrike(
        &["attack", "--checkpoint", a.join("checkpoint.bin").to_str().unwrap(), "--out", attack.to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        std::fs::read(attack.join("attack_sequences.csv")).unwrap(),
        std::fs::read(a.join("attack_sequences.csv")).unwrap()
    );

    for run in [a, b] {
        let o = gridstrike(&["report", "--run", run.to_str().unwrap(), "--window", "50"], dir.path());
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let ra = std::fs::read_to_string(a.join("report/reward_ma.csv")).unwrap();
    let rb = std::fs::read_to_string(b.join("report/reward_ma.csv")).unwrap();
    let ra = ra.replace("\na,", "\nX,");
    let rb = rb.replace("\nb,", "\nX,");
    assert_eq!(ra, rb);
    assert_eq!(ra.lines().count(), 1 + 160 - 50 + 1);
    assert_eq!(ra.lines().next().unwrap(), "run,episode,mean_reward");
}

#[test]
fn report_lists_missing_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t");
    let o = gridstrike(&["train", "--episodes", "5", "--out", out.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(0));
    std::fs::remove_file(out.join("train_log.jsonl")).unwrap();
    let o = gridstrike(&["report", "--run", out.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("train_log.jsonl"));

    let empty = dir.path().join("empty");
    std::fs::create_dir_all(&empty).unwrap();
    assert_eq!(gridstrike(&["report", "--run", empty.to_str().unwrap()], dir.path()).status.code(), Some(3));
}

#[test]
fn report_window_arithmetic() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("r");
    std::fs::create_dir_all(&run).unwrap();
    let mut log = String::new();
    for e in 0..400 {
        log += &format!(
            "{{\"episode\":{e},\"return\":{},\"loss_mw\":0.0,\"critic_loss\":null,\"entropy\":null,\"beta\":0.4,\"updates\":0,\"wall_ms\":0}}\n",
            e as f64
        );
    }
    std::fs::write(run.join("train_log.jsonl"), log).unwrap();
    std::fs::write(
        run.join("manifest.json"),
        r#"{"command":"train","version":"0","config_digest":"00","seed":0,"case":"ieee14","artifacts":["train_log.jsonl"],"status":"ok","wall_ms":0}"#,
    )
    .unwrap();
    let out = dir.path().join("report");
    let o = gridstrike(&["report", "--run", run.to_str().unwrap(), "--out", out.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(out.join("reward_ma.csv")).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 201);
    assert_eq!(rows[0], "r,199,99.5");
    assert_eq!(rows[200], "r,399,299.5");
}
