//! Run configuration: a preset, overlaid by an optional TOML file, overlaid
//! by command-line flags.

use std::path::Path;

use anyhow::{anyhow, bail, Context};
use gridstrike::case_io::{builtin_case, load_case_file};
use gridstrike::trainer::TrainConfig;
use gridstrike::{CapacityRule, CascadeOptions, DefenseConfig, GameConfig, GridCase};
use serde::{Deserialize, Serialize};

pub const PRESETS: &[&str] = &["ieee14-desk", "ieee118-paper"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: String,
    /// Bundled case name (`ieee14`, `ieee118`) or a path to a case file.
    pub case: String,
    pub game: GameConfig,
    pub train: TrainConfig,
    pub cascade: CascadeOptions,
    pub capacity: CapacityRule,
    pub defense: DefenseConfig,
}

pub fn preset(name: &str) -> anyhow::Result<RunConfig> {
    match name {
        "ieee14-desk" => Ok(RunConfig {
            preset: name.into(),
            case: "ieee14".into(),
            game: GameConfig {
                attackers: 2,
                stages: 2,
                ..GameConfig::default()
            },
            train: TrainConfig {
                episodes: 20_000,
                update_every: 4,
                entropy_temperature: 0.01,
                ..TrainConfig::default()
            },
            cascade: CascadeOptions::default(),
            capacity: CapacityRule::default(),
            defense: DefenseConfig {
                resources: 2,
                ..DefenseConfig::default()
            },
        }),
        "ieee118-paper" => Ok(RunConfig {
            preset: name.into(),
            case: "ieee118".into(),
            game: GameConfig {
                attackers: 3,
                stages: 3,
                ..GameConfig::default()
            },
            train: TrainConfig::default(),
            cascade: CascadeOptions::default(),
            capacity: CapacityRule::default(),
            defense: DefenseConfig::default(),
        }),
        other => bail!("unknown preset {other:?} (available: {})", PRESETS.join(", ")),
    }
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn unknown_keys(given: &toml::Value, known: &toml::Value, prefix: &str, out: &mut Vec<String>) {
    if let (Some(g), Some(k)) = (given.as_table(), known.as_table()) {
        for (key, v) in g {
            let path = format!("{prefix}{key}");
            match k.get(key) {
                Some(kv) => unknown_keys(v, kv, &format!("{path}."), out),
                None => out.push(path),
            }
        }
    }
}

impl RunConfig {
    /// `preset_flag` wins over a `preset` key in the file; the default is
    /// `ieee14-desk`.
    pub fn load(file: Option<&Path>, preset_flag: Option<&str>) -> anyhow::Result<Self> {
        let overlay: Option<toml::Value> = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                Some(toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?)
            }
            None => None,
        };
        let file_preset = overlay
            .as_ref()
            .and_then(|v| v.get("preset"))
            .and_then(|v| v.as_str())
            .map(str::to_owned);
        let name = preset_flag
            .map(str::to_owned)
            .or(file_preset)
            .unwrap_or_else(|| "ieee14-desk".into());
        let base = preset(&name)?;
        let mut value = toml::Value::try_from(&base).context("serializing preset")?;
        if let Some(mut o) = overlay {
            if let Some(t) = o.as_table_mut() {
                t.remove("preset");
            }
            merge(&mut value, o);
        }
        let cfg: RunConfig = value
            .clone()
            .try_into()
            .context("config does not match the schema")?;
        let known = toml::Value::try_from(&cfg).context("serializing config")?;
        let mut unknown = Vec::new();
        unknown_keys(&value, &known, "", &mut unknown);
        if !unknown.is_empty() {
            bail!("unknown config keys: {}", unknown.join(", "));
        }
        Ok(cfg)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.train.seed = seed;
        self.game.seed = seed;
    }

    pub fn check(&self, n_lines: usize) -> anyhow::Result<()> {
        self.game.check(n_lines)?;
        self.train.check()?;
        if self.defense.resources > n_lines {
            bail!("defense resources {} exceed {n_lines} lines", self.defense.resources);
        }
        if self.cascade.overload_tolerance <= 0.0 || self.cascade.max_rounds == 0 {
            bail!("cascade tolerance and max_rounds must be positive");
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Loads a case by path, falling back to the bundled case named by the
/// file stem (so `ieee118.json` works without the file on disk).
pub fn resolve_case(name: &str, rule: CapacityRule) -> anyhow::Result<GridCase> {
    let path = Path::new(name);
    if path.exists() {
        return Ok(load_case_file(path, rule)?);
    }
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| anyhow!("case {name:?} not found"))?;
    match builtin_case(stem) {
        Some(c) => Ok(c?),
        None => bail!("case {name:?} not found and not a bundled case (ieee14, ieee118)"),
    }
}
