//! Command-line front end: argument parsing, configuration, artifact
//! persistence and report export.

pub mod config;
pub mod error;
pub mod manifest;
pub mod report;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use gridstrike::defense::{spaced_defense, DefenseEvaluation, DefenseRun};
use gridstrike::neural::{config_digest, Checkpoint};
use gridstrike::trainer::{build_trainer, run_digest, train_method};
use gridstrike::{
    brute_force, evaluate_defense, execute, plan_defense, AttackEnv, AttackSequence,
    AttackerPolicy, DefenseSet, GameConfig, GridCase, Method,
};
use serde::{Deserialize, Serialize};

use crate::config::{resolve_case, RunConfig};
use crate::error::{Classify, CliError, CliResult};
use crate::manifest::{run_dir, RunManifest};

#[derive(Debug, Parser)]
#[command(name = "gridstrike", version, about = "Multistage grid attack training and defense planning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Base preset (ieee14-desk, ieee118-paper).
    #[arg(long)]
    pub preset: Option<String>,
    /// Case file or bundled case name.
    #[arg(long)]
    pub case: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of attackers.
    #[arg(long = "K")]
    pub attackers: Option<usize>,
    /// Number of stages.
    #[arg(long = "M")]
    pub stages: Option<usize>,
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Run directory (default: $GRIDSTRIKE_ARTIFACTS/<command>-<digest>).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse and validate a case.
    Validate {
        #[command(flatten)]
        run: RunArgs,
        /// Write the parsed case as a JSON case document.
        #[arg(long)]
        export: Option<PathBuf>,
    },
    /// Train attackers.
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value = "maac")]
        method: String,
    },
    /// Greedy execution of a trained checkpoint.
    Attack {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        /// Protected lines, comma separated.
        #[arg(long, value_delimiter = ',')]
        defense: Option<Vec<usize>>,
    },
    /// Repeated experiments and frequency-based defense selection.
    Defend {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value = "maac")]
        method: String,
        /// Defense resources W.
        #[arg(long = "W")]
        resources: Option<usize>,
        #[arg(long)]
        experiments: Option<usize>,
        /// Experiments trained concurrently.
        #[arg(long, default_value_t = 1)]
        parallel: usize,
    },
    /// Retrain attackers against defense sets and compare losses.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value = "maac")]
        method: String,
        /// Defense plan written by `defend`.
        #[arg(long)]
        plan: Option<PathBuf>,
        /// Explicit protected lines, comma separated.
        #[arg(long, value_delimiter = ',')]
        defense: Option<Vec<usize>>,
        /// Include the evenly spaced baseline set.
        #[arg(long)]
        random: bool,
        /// Include the undefended grid.
        #[arg(long)]
        no_defense: bool,
        #[arg(long)]
        repetitions: Option<usize>,
    },
    /// Exhaustive search for the optimal attack.
    Oracle {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',')]
        defense: Option<Vec<usize>>,
    },
    /// Plot-ready tables from completed runs.
    Report {
        /// A run directory or a directory of run directories.
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 200)]
        window: usize,
    },
}

/// Parses `argv` and runs the command. Returns the process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::Validate { run, export } => cmd_validate(&run, export.as_deref()),
        Command::Train { run, method } => cmd_train(&run, &method),
        Command::Attack {
            checkpoint,
            run,
            defense,
        } => cmd_attack(&checkpoint, &run, defense),
        Command::Defend {
            run,
            method,
            resources,
            experiments,
            parallel,
        } => cmd_defend(&run, &method, resources, experiments, parallel),
        Command::Evaluate {
            run,
            method,
            plan,
            defense,
            random,
            no_defense,
            repetitions,
        } => cmd_evaluate(&run, &method, plan, defense, random, no_defense, repetitions),
        Command::Oracle { run, defense } => cmd_oracle(&run, defense),
        Command::Report { run, out, window } => report::cmd_report(&run, out.as_deref(), window),
    }
}

struct Setup {
    config: RunConfig,
    case: Arc<GridCase>,
}

fn setup(args: &RunArgs) -> CliResult<Setup> {
    let mut config = RunConfig::load(args.config.as_deref(), args.preset.as_deref()).config_err()?;
    apply_flags(&mut config, args);
    let case = resolve_case(&config.case, config.capacity).config_err()?;
    config.check(case.n_lines()).config_err()?;
    Ok(Setup {
        config,
        case: Arc::new(case),
    })
}

fn apply_flags(config: &mut RunConfig, args: &RunArgs) {
    if let Some(c) = &args.case {
        config.case = c.clone();
    }
    if let Some(s) = args.seed {
        config.set_seed(s);
    }
    if let Some(k) = args.attackers {
        config.game.attackers = k;
    }
    if let Some(m) = args.stages {
        config.game.stages = m;
    }
    if let Some(z) = args.episodes {
        config.train.episodes = z;
    }
}

fn parse_method(s: &str) -> CliResult<Method> {
    s.parse::<Method>()
        .map_err(|_| CliError::Usage(format!("unknown method {s:?} (maac, sams, mass)")))
}

fn defense_set(lines: &[usize], n_lines: usize) -> CliResult<DefenseSet> {
    let set: DefenseSet = lines.iter().copied().collect();
    set.check(n_lines).config_err()?;
    Ok(set)
}

/// Digest naming a run directory: the command, its extra parameters and the
/// effective configuration.
fn command_digest(command: &str, extra: &str, config: &RunConfig) -> String {
    hex::encode(config_digest(&format!("{command}\n{extra}\n{}", config.to_json())))
}

struct RunContext {
    dir: PathBuf,
    manifest: RunManifest,
    started: Instant,
}

impl RunContext {
    fn start(command: &str, extra: &str, args_out: Option<&Path>, config: &RunConfig) -> CliResult<Self> {
        let digest = command_digest(command, extra, config);
        let dir = run_dir(args_out, &format!("{command}-{}", &digest[..12]));
        std::fs::create_dir_all(&dir)
            .with_context(|| format!("creating {}", dir.display()))
            .runtime_err()?;
        let mut ctx = Self {
            manifest: RunManifest::new(command, digest, config.train.seed, &config.case),
            dir,
            started: Instant::now(),
        };
        ctx.write_text("config.json", &(config.to_json() + "\n"))?;
        Ok(ctx)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn write_text(&mut self, name: &str, text: &str) -> CliResult<()> {
        std::fs::write(self.path(name), text)
            .with_context(|| format!("writing {name}"))
            .runtime_err()?;
        self.manifest.add(name);
        Ok(())
    }

    fn write_json(&mut self, name: &str, value: &impl Serialize) -> CliResult<()> {
        let text = serde_json::to_string_pretty(value).runtime_err()? + "\n";
        self.write_text(name, &text)
    }

    fn write_csv<R: Serialize>(&mut self, name: &str, rows: &[R]) -> CliResult<()> {
        report::write_csv(&self.path(name), rows).runtime_err()?;
        self.manifest.add(name);
        Ok(())
    }

    fn finish(mut self, outcome: CliResult<()>) -> CliResult<()> {
        self.manifest.wall_ms = self.started.elapsed().as_millis() as u64;
        match &outcome {
            Ok(()) => self.manifest.status = "ok".into(),
            Err(e) => {
                self.manifest.status = "failed".into();
                self.manifest.failure = Some(e.to_string());
            }
        }
        self.manifest.write(&self.dir).runtime_err()?;
        if outcome.is_ok() {
            println!("run directory: {}", self.dir.display());
        }
        outcome
    }
}

fn cmd_validate(args: &RunArgs, export: Option<&Path>) -> CliResult<()> {
    let mut config = RunConfig::load(args.config.as_deref(), args.preset.as_deref()).config_err()?;
    apply_flags(&mut config, args);
    let case = resolve_case(&config.case, config.capacity).config_err()?;
    let report = gridstrike::validate_case(&case);
    println!(
        "case {}: buses={} N={} generators={} load={:.2} MW generation={:.2} MW",
        if case.name.is_empty() { &config.case } else { &case.name },
        case.n_buses(),
        case.n_lines(),
        case.generators.len(),
        case.total_load(),
        case.total_generation()
    );
    if report.is_empty() {
        println!("valid");
        if let Some(path) = export {
            std::fs::write(path, gridstrike::case_io::to_json(&case) + "\n")
                .with_context(|| format!("writing {}", path.display()))
                .runtime_err()?;
        }
        Ok(())
    } else {
        for d in &report {
            println!("  {d}");
        }
        Err(CliError::config(anyhow!("{} validation problems", report.len())))
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TrainSummary {
    pub method: Method,
    pub attackers: usize,
    pub stages: usize,
    pub episodes: usize,
    pub updates: u64,
    pub first_window_mean_return: f64,
    pub last_window_mean_return: f64,
    pub greedy_loss_mw: f64,
    pub greedy_loss_fraction: f64,
    pub greedy_sequence: Vec<Vec<usize>>,
}

fn window_mean(values: &[f64], window: usize, last: bool) -> f64 {
    let w = window.min(values.len()).max(1);
    let slice = if last {
        &values[values.len().saturating_sub(w)..]
    } else {
        &values[..w.min(values.len())]
    };
    if slice.is_empty() {
        0.0
    } else {
        slice.iter().sum::<f64>() / slice.len() as f64
    }
}

fn cmd_train(args: &RunArgs, method: &str) -> CliResult<()> {
    let method = parse_method(method)?;
    let Setup { config, case } = setup(args)?;
    let mut ctx = RunContext::start("train", method.as_str(), args.out.as_deref(), &config)?;
    let outcome = train_into(&mut ctx, &config, case, method);
    ctx.finish(outcome)
}

fn train_into(ctx: &mut RunContext, config: &RunConfig, case: Arc<GridCase>, method: Method) -> CliResult<()> {
    let mut trainer =
        build_trainer(method, case.clone(), &config.game, &config.train, config.cascade).config_err()?;
    let log_path = ctx.path("train_log.jsonl");
    let mut log = BufWriter::new(File::create(&log_path).runtime_err()?);
    ctx.manifest.add("train_log.jsonl");
    let mut returns = Vec::with_capacity(config.train.episodes);
    let every = (config.train.episodes / 20).max(1);
    while trainer.episodes_done() < config.train.episodes {
        match trainer.run_episode() {
            Ok(r) => {
                serde_json::to_writer(&mut log, &r).runtime_err()?;
                log.write_all(b"\n").runtime_err()?;
                returns.push(r.episode_return);
                if (r.episode + 1) % every == 0 {
                    eprintln!(
                        "episode {:>7}  mean return (last {}) {:.4}",
                        r.episode + 1,
                        every,
                        window_mean(&returns, every, true)
                    );
                }
            }
            Err(e) => {
                log.flush().runtime_err()?;
                trainer.checkpoint().save(ctx.path("checkpoint.bin")).runtime_err()?;
                ctx.manifest.add("checkpoint.bin");
                return Err(CliError::runtime(anyhow!(
                    "episode {} failed: {e}",
                    trainer.episodes_done()
                )));
            }
        }
    }
    log.flush().runtime_err()?;
    drop(log);
    trainer.checkpoint().save(ctx.path("checkpoint.bin")).runtime_err()?;
    ctx.manifest.add("checkpoint.bin");

    let policy = trainer.policy();
    let game = played_game(&config.game, &policy);
    let mut env = AttackEnv::new(case, game.clone(), config.cascade).runtime_err()?;
    let seq = execute(&policy, &mut env).runtime_err()?;
    let summary = TrainSummary {
        method,
        attackers: game.attackers,
        stages: game.stages,
        episodes: trainer.episodes_done(),
        updates: policy.meta.updates,
        first_window_mean_return: window_mean(&returns, 200, false),
        last_window_mean_return: window_mean(&returns, 200, true),
        greedy_loss_mw: seq.loss_mw,
        greedy_loss_fraction: seq.loss_fraction,
        greedy_sequence: (0..seq.stages()).map(|t| seq.joint(t)).collect(),
    };
    println!(
        "trained {} (K={}, M={}) for {} episodes, {} updates",
        method.as_str(),
        game.attackers,
        game.stages,
        summary.episodes,
        summary.updates
    );
    println!(
        "mean return: first 200 {:.4}, last 200 {:.4}",
        summary.first_window_mean_return, summary.last_window_mean_return
    );
    println!(
        "greedy attack: {:?} loss {:.3} MW ({:.2}%)",
        summary.greedy_sequence,
        summary.greedy_loss_mw,
        100.0 * summary.greedy_loss_fraction
    );
    ctx.write_json("summary.json", &summary)?;
    ctx.write_csv("attack_sequences.csv", &sequence_rows(0, &seq))?;
    Ok(())
}

fn played_game(base: &GameConfig, policy: &AttackerPolicy) -> GameConfig {
    GameConfig {
        attackers: policy.meta.attackers,
        stages: policy.meta.stages,
        ..base.clone()
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SequenceRow {
    pub experiment: usize,
    pub attacker: usize,
    pub stage: usize,
    pub line: usize,
    pub loss_mw: f64,
}

fn sequence_rows(experiment: usize, seq: &AttackSequence) -> Vec<SequenceRow> {
    let mut rows = Vec::new();
    for (attacker, lines) in seq.per_attacker.iter().enumerate() {
        for (stage, &line) in lines.iter().enumerate() {
            rows.push(SequenceRow {
                experiment,
                attacker,
                stage,
                line,
                loss_mw: seq.loss_mw,
            });
        }
    }
    rows
}

fn cmd_attack(checkpoint: &Path, args: &RunArgs, defense: Option<Vec<usize>>) -> CliResult<()> {
    let ck = Checkpoint::load(checkpoint)
        .with_context(|| format!("loading {}", checkpoint.display()))
        .config_err()?;
    let policy = AttackerPolicy::from_checkpoint(&ck).config_err()?;
    let sibling = checkpoint.parent().map(|d| d.join("config.json"));
    let mut config = match (&args.config, &sibling) {
        (None, Some(s)) if s.exists() && args.preset.is_none() => {
            let text = std::fs::read_to_string(s).config_err()?;
            serde_json::from_str::<RunConfig>(&text)
                .with_context(|| format!("parsing {}", s.display()))
                .config_err()?
        }
        _ => RunConfig::load(args.config.as_deref(), args.preset.as_deref()).config_err()?,
    };
    apply_flags(&mut config, args);
    let case = Arc::new(resolve_case(&config.case, config.capacity).config_err()?);
    let mut game = played_game(&config.game, &policy);
    let expected = run_digest(policy.meta.method, &game, &config.train, case.n_lines());
    if expected != ck.config_digest {
        eprintln!("note: checkpoint digest differs from the supplied configuration");
    }
    if let Some(lines) = &defense {
        game.defense = defense_set(lines, case.n_lines())?;
    }
    let mut env = AttackEnv::new(case, game, config.cascade).config_err()?;
    let seq = execute(&policy, &mut env).config_err()?;
    let extra = format!("{}:{:?}", hex::encode(ck.config_digest), defense);
    let mut ctx = RunContext::start("attack", &extra, args.out.as_deref(), &config)?;
    for t in 0..seq.stages() {
        println!("stage {}: lines {:?}", t + 1, seq.joint(t));
    }
    println!(
        "generation loss {:.3} MW ({:.2}%)",
        seq.loss_mw,
        100.0 * seq.loss_fraction
    );
    let outcome = ctx
        .write_csv("attack_sequences.csv", &sequence_rows(0, &seq))
        .and_then(|_| ctx.write_json("attack.json", &seq));
    ctx.finish(outcome)
}

/// Runs experiment `h` (training seed `seed + h`) and executes greedily.
fn run_experiment(config: &RunConfig, case: Arc<GridCase>, method: Method, h: usize) -> gridstrike::Result<AttackSequence> {
    let train = gridstrike::TrainConfig {
        seed: config.train.seed + h as u64,
        ..config.train.clone()
    };
    let run = train_method(method, case.clone(), &config.game, &train, config.cascade, |_| {})?;
    let mut env = AttackEnv::new(case, run.game.clone(), config.cascade)?;
    execute(&run.policy, &mut env)
}

fn cmd_defend(
    args: &RunArgs,
    method: &str,
    resources: Option<usize>,
    experiments: Option<usize>,
    parallel: usize,
) -> CliResult<()> {
    let method = parse_method(method)?;
    let Setup { mut config, case } = setup(args)?;
    if let Some(w) = resources {
        config.defense.resources = w;
    }
    if let Some(h) = experiments {
        config.defense.max_experiments = h;
    }
    config.check(case.n_lines()).config_err()?;
    let mut ctx = RunContext::start("defend", method.as_str(), args.out.as_deref(), &config)?;
    let outcome = defend_into(&mut ctx, &config, case, method, parallel.max(1));
    ctx.finish(outcome)
}

fn defend_into(
    ctx: &mut RunContext,
    config: &RunConfig,
    case: Arc<GridCase>,
    method: Method,
    parallel: usize,
) -> CliResult<()> {
    let mut cache: BTreeMap<usize, AttackSequence> = BTreeMap::new();
    let max = config.defense.max_experiments;
    let run: DefenseRun = plan_defense(case.n_lines(), &config.defense, |h| {
        if !cache.contains_key(&h) {
            let batch: Vec<usize> = (h..(h + parallel).min(max.max(h + 1))).collect();
            let results: Vec<(usize, gridstrike::Result<AttackSequence>)> = std::thread::scope(|s| {
                let handles: Vec<_> = batch
                    .iter()
                    .map(|&e| {
                        let case = case.clone();
                        s.spawn(move || (e, run_experiment(config, case, method, e)))
                    })
                    .collect();
                handles.into_iter().map(|j| j.join().expect("experiment thread")).collect()
            });
            for (e, r) in results {
                let seq = r?;
                eprintln!("experiment {:>2}: lines {:?} loss {:.3} MW", e + 1, seq.line_set(), seq.loss_mw);
                cache.insert(e, seq);
            }
        }
        Ok(cache[&h].clone())
    })
    .runtime_err()?;
    println!(
        "{} experiments{}; protect lines {:?}",
        run.plan.h,
        if run.stopped_early { " (stable)" } else { "" },
        run.plan.selected_lines
    );
    let rows: Vec<SequenceRow> = run
        .experiments
        .iter()
        .enumerate()
        .flat_map(|(h, s)| sequence_rows(h, s))
        .collect();
    ctx.write_json("defense_plan.json", &run.plan)?;
    ctx.write_csv("attack_sequences.csv", &rows)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchemeResult {
    pub scheme: String,
    pub evaluation: DefenseEvaluation,
}

#[allow(clippy::too_many_arguments)]
fn cmd_evaluate(
    args: &RunArgs,
    method: &str,
    plan: Option<PathBuf>,
    defense: Option<Vec<usize>>,
    random: bool,
    no_defense: bool,
    repetitions: Option<usize>,
) -> CliResult<()> {
    let method = parse_method(method)?;
    let Setup { config, case } = setup(args)?;
    let n = case.n_lines();
    let w = config.defense.resources;
    let mut schemes: Vec<(String, DefenseSet)> = Vec::new();
    let explicit = plan.is_some() || defense.is_some() || random || no_defense;
    if no_defense || !explicit {
        schemes.push(("none".into(), DefenseSet::none()));
    }
    if random || !explicit {
        schemes.push(("random".into(), spaced_defense(n, w).config_err()?));
    }
    if let Some(p) = &plan {
        let text = std::fs::read_to_string(p)
            .with_context(|| format!("reading {}", p.display()))
            .config_err()?;
        let plan: gridstrike::DefensePlan = serde_json::from_str(&text).config_err()?;
        schemes.push(("top_frequency".into(), defense_set(&plan.selected_lines, n)?));
    }
    if let Some(lines) = &defense {
        schemes.push(("explicit".into(), defense_set(lines, n)?));
    }
    let reps = repetitions.unwrap_or(config.defense.repetitions);
    let extra = format!("{}:{:?}:{reps}", method.as_str(), schemes);
    let mut ctx = RunContext::start("evaluate", &extra, args.out.as_deref(), &config)?;
    let mut results = Vec::new();
    let outcome = (|| {
        for (name, set) in &schemes {
            let ev = evaluate_defense(case.clone(), set, method, &config.game, &config.train, config.cascade, reps)
                .runtime_err()?;
            println!(
                "{name:>14}: mean loss {:.3} MW, 95% CI [{:.3}, {:.3}] over {} runs",
                ev.summary.mean,
                ev.summary.low(),
                ev.summary.high(),
                ev.summary.n
            );
            results.push(SchemeResult {
                scheme: name.clone(),
                evaluation: ev,
            });
        }
        ctx.write_json("evaluation.json", &results)
    })();
    ctx.finish(outcome)
}

fn cmd_oracle(args: &RunArgs, defense: Option<Vec<usize>>) -> CliResult<()> {
    let Setup { mut config, case } = setup(args)?;
    if let Some(lines) = &defense {
        config.game.defense = defense_set(lines, case.n_lines())?;
    }
    let mut ctx = RunContext::start("oracle", "", args.out.as_deref(), &config)?;
    let outcome = (|| {
        let r = brute_force(&case, &config.game, &config.cascade).runtime_err()?;
        println!(
            "maximal loss {:.4} MW ({:.2}% of generation) after {} cascade simulations",
            r.best_loss_mw,
            100.0 * r.best_fraction,
            r.evaluated
        );
        for (t, joint) in r.best_sequence.iter().enumerate() {
            println!("stage {}: lines {:?}", t + 1, joint);
        }
        ctx.write_json("oracle.json", &r)
    })();
    ctx.finish(outcome)
}
