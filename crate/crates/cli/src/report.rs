//! Plot-ready tables from completed run directories.
//!
//! | file                  | columns                                                      |
//! |-----------------------|--------------------------------------------------------------|
//! | `reward_ma.csv`       | run, episode, mean_reward                                    |
//! | `frequencies.csv`     | run, line, frequency, selected                               |
//! | `stability.csv`       | run, experiment, distance                                    |
//! | `loss_comparison.csv` | run, scheme, n, mean_mw, std_dev_mw, ci_low_mw, ci_high_mw   |
//!
//! `episode` in `reward_ma.csv` is the last episode of the averaging window.

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context};
use gridstrike::neural::config_digest;
use gridstrike::stats::moving_average;
use gridstrike::trainer::EpisodeRecord;
use gridstrike::DefensePlan;
use serde::Serialize;

use crate::error::{Classify, CliError, CliResult};
use crate::manifest::{RunManifest, MANIFEST_FILE};
use crate::SchemeResult;

pub fn write_csv<R: Serialize>(path: &Path, rows: &[R]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct RewardRow<'a> {
    run: &'a str,
    episode: usize,
    mean_reward: f64,
}

#[derive(Debug, Serialize)]
struct FrequencyRow<'a> {
    run: &'a str,
    line: usize,
    frequency: f64,
    selected: bool,
}

#[derive(Debug, Serialize)]
struct StabilityRow<'a> {
    run: &'a str,
    experiment: usize,
    distance: f64,
}

#[derive(Debug, Serialize)]
struct LossRow<'a> {
    run: &'a str,
    scheme: &'a str,
    n: usize,
    mean_mw: f64,
    std_dev_mw: f64,
    ci_low_mw: f64,
    ci_high_mw: f64,
}

/// Run directories under `root`: `root` itself when it holds a manifest,
/// else its immediate subdirectories that do. Report outputs are skipped.
fn find_runs(root: &Path) -> anyhow::Result<Vec<(String, PathBuf, RunManifest)>> {
    let mut dirs = Vec::new();
    if root.join(MANIFEST_FILE).is_file() {
        dirs.push(root.to_path_buf());
    } else {
        let entries = std::fs::read_dir(root).with_context(|| format!("reading {}", root.display()))?;
        for e in entries {
            let p = e?.path();
            if p.join(MANIFEST_FILE).is_file() {
                dirs.push(p);
            }
        }
        dirs.sort();
    }
    let mut runs = Vec::new();
    for d in dirs {
        let m = RunManifest::read(&d).with_context(|| format!("reading manifest in {}", d.display()))?;
        if m.command == "report" {
            continue;
        }
        let label = d
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| ".".into());
        runs.push((label, d, m));
    }
    if runs.is_empty() {
        bail!("no run manifests under {}", root.display());
    }
    Ok(runs)
}

fn read_returns(path: &Path) -> anyhow::Result<Vec<f64>> {
    let f = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: EpisodeRecord =
            serde_json::from_str(&line).with_context(|| format!("{} line {}", path.display(), i + 1))?;
        out.push(r.episode_return);
    }
    Ok(out)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn cmd_report(run: &Path, out: Option<&Path>, window: usize) -> CliResult<()> {
    if window == 0 {
        return Err(CliError::Usage("--window must be positive".into()));
    }
    let started = Instant::now();
    let runs = find_runs(run).config_err()?;

    let mut missing = Vec::new();
    for (_, dir, m) in &runs {
        if m.status != "ok" {
            missing.push(format!("{} (run status {})", dir.display(), m.status));
        }
        for a in &m.artifacts {
            if !dir.join(a).is_file() {
                missing.push(dir.join(a).display().to_string());
            }
        }
    }
    if !missing.is_empty() {
        return Err(CliError::config(anyhow!("missing inputs: {}", missing.join(", "))));
    }

    let mut rewards = Vec::new();
    let mut freqs = Vec::new();
    let mut stability = Vec::new();
    let mut losses = Vec::new();
    let mut logs = Vec::new();
    let mut plans = Vec::new();
    let mut evals = Vec::new();
    for (label, dir, m) in &runs {
        let has = |name: &str| m.artifacts.iter().any(|a| a == name);
        if has("train_log.jsonl") {
            logs.push((label.as_str(), read_returns(&dir.join("train_log.jsonl")).config_err()?));
        }
        if has("defense_plan.json") {
            plans.push((label.as_str(), read_json::<DefensePlan>(&dir.join("defense_plan.json")).config_err()?));
        }
        if has("evaluation.json") {
            evals.push((label.as_str(), read_json::<Vec<SchemeResult>>(&dir.join("evaluation.json")).config_err()?));
        }
    }
    for (label, returns) in &logs {
        for (i, v) in moving_average(returns, window).into_iter().enumerate() {
            rewards.push(RewardRow {
                run: label,
                episode: i + window - 1,
                mean_reward: v,
            });
        }
    }
    for (label, plan) in &plans {
        for (line, &f) in plan.frequencies.iter().enumerate() {
            freqs.push(FrequencyRow {
                run: label,
                line,
                frequency: f,
                selected: plan.selected_lines.contains(&line),
            });
        }
        for (i, &d) in plan.stability_trace.iter().enumerate() {
            stability.push(StabilityRow {
                run: label,
                experiment: i + 2,
                distance: d,
            });
        }
    }
    for (label, results) in &evals {
        for r in results {
            let s = &r.evaluation.summary;
            losses.push(LossRow {
                run: label,
                scheme: &r.scheme,
                n: s.n,
                mean_mw: s.mean,
                std_dev_mw: s.std_dev,
                ci_low_mw: s.low(),
                ci_high_mw: s.high(),
            });
        }
    }
    if logs.is_empty() && plans.is_empty() && evals.is_empty() {
        return Err(CliError::config(anyhow!(
            "missing inputs: none of train_log.jsonl, defense_plan.json, evaluation.json under {}",
            run.display()
        )));
    }

    let out_dir = out.map(Path::to_path_buf).unwrap_or_else(|| run.join("report"));
    std::fs::create_dir_all(&out_dir).runtime_err()?;
    let digest_input: String = runs
        .iter()
        .map(|(l, _, m)| format!("{l}:{}\n", m.config_digest))
        .chain(std::iter::once(format!("window={window}")))
        .collect();
    let mut manifest = RunManifest::new("report", hex::encode(config_digest(&digest_input)), runs[0].2.seed, &runs[0].2.case);
    let mut emit = |name: &str, result: anyhow::Result<()>| -> CliResult<()> {
        result.runtime_err()?;
        manifest.add(name);
        println!("wrote {}", out_dir.join(name).display());
        Ok(())
    };
    if !logs.is_empty() {
        emit("reward_ma.csv", write_csv(&out_dir.join("reward_ma.csv"), &rewards))?;
    }
    if !plans.is_empty() {
        emit("frequencies.csv", write_csv(&out_dir.join("frequencies.csv"), &freqs))?;
        emit("stability.csv", write_csv(&out_dir.join("stability.csv"), &stability))?;
    }
    if !evals.is_empty() {
        emit("loss_comparison.csv", write_csv(&out_dir.join("loss_comparison.csv"), &losses))?;
    }
    manifest.status = "ok".into();
    manifest.wall_ms = started.elapsed().as_millis() as u64;
    manifest.write(&out_dir).runtime_err()?;
    Ok(())
}
