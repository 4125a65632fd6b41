//! Case ingestion.
//!
//! Two source formats are accepted:
//!
//! * the structured JSON case document
//!   (`base_mva`, `buses:[{id, load_mw}]`, `generators:[{bus, output_mw, max_mw, ramp_mw?}]`,
//!   `lines:[{id, from, to, x_pu, capacity_mw?}]`), and
//! * MATPOWER-style `.m` text with `mpc.baseMVA`, `mpc.bus`, `mpc.gen` and
//!   `mpc.branch` matrices, as used by the public 14/30/118-bus distributions.
//!
//! After parsing, generator outputs are rescaled so total generation matches
//! total load, and lines without a rating get
//! `max(floor_mw, margin * |base flow|)`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{validate_case, Bus, Diagnostic, Generator, GridCase, Line, LineStateVector};
use crate::powerflow::solve_dc;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CapacityRule {
    pub margin: f64,
    pub floor_mw: f64,
}

impl Default for CapacityRule {
    fn default() -> Self {
        Self {
            margin: 1.2,
            floor_mw: 20.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseDocument {
    #[serde(default)]
    pub name: Option<String>,
    pub base_mva: f64,
    pub buses: Vec<BusRecord>,
    pub generators: Vec<GeneratorRecord>,
    pub lines: Vec<LineRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusRecord {
    pub id: usize,
    pub load_mw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorRecord {
    pub bus: usize,
    pub output_mw: f64,
    pub max_mw: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ramp_mw: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineRecord {
    pub id: usize,
    pub from: usize,
    pub to: usize,
    pub x_pu: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity_mw: Option<f64>,
}

impl From<&GridCase> for CaseDocument {
    fn from(case: &GridCase) -> Self {
        Self {
            name: Some(case.name.clone()),
            base_mva: case.base_mva,
            buses: case
                .buses
                .iter()
                .map(|b| BusRecord {
                    id: b.id,
                    load_mw: b.load,
                })
                .collect(),
            generators: case
                .generators
                .iter()
                .map(|g| GeneratorRecord {
                    bus: g.bus,
                    output_mw: g.output,
                    max_mw: g.max_output,
                    ramp_mw: g.ramp_limit,
                })
                .collect(),
            lines: case
                .lines
                .iter()
                .map(|l| LineRecord {
                    id: l.id,
                    from: l.from_bus,
                    to: l.to_bus,
                    x_pu: l.reactance,
                    capacity_mw: Some(l.capacity),
                })
                .collect(),
        }
    }
}

/// Parses either supported format, detected from the first non-blank
/// character (`{` selects JSON).
pub fn parse_document(source: &str) -> Result<CaseDocument> {
    if source.trim_start().starts_with('{') {
        serde_json::from_str(source).map_err(|e| Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    } else {
        parse_matpower(source)
    }
}

pub fn load_case(source: &str) -> Result<GridCase> {
    load_case_with(source, CapacityRule::default())
}

pub fn load_case_with(source: &str, rule: CapacityRule) -> Result<GridCase> {
    let doc = parse_document(source)?;
    build_case(doc, rule)
}

pub fn load_case_file(path: impl AsRef<Path>, rule: CapacityRule) -> Result<GridCase> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let mut case = load_case_with(&text, rule)?;
    if case.name.is_empty() {
        case.name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
    }
    Ok(case)
}

/// MATPOWER sources of the bundled IEEE test systems, by name
/// (`ieee14`, `ieee118`).
pub fn builtin_source(name: &str) -> Option<&'static str> {
    match name {
        "ieee14" | "case14" => Some(include_str!("../data/case14.m")),
        "ieee118" | "case118" => Some(include_str!("../data/case118.m")),
        _ => None,
    }
}

pub fn builtin_case(name: &str) -> Option<Result<GridCase>> {
    builtin_source(name).map(|src| {
        let mut case = load_case(src)?;
        case.name = name.to_string();
        Ok(case)
    })
}

/// Serializes a case to the JSON document format with every capacity
/// written out, so reloading it reproduces the case exactly.
pub fn to_json(case: &GridCase) -> String {
    serde_json::to_string_pretty(&CaseDocument::from(case)).expect("case serializes")
}

/// Validates a parsed document, balances generation and fills in missing
/// line capacities.
pub fn build_case(doc: CaseDocument, rule: CapacityRule) -> Result<GridCase> {
    let mut case = GridCase {
        name: doc.name.unwrap_or_default(),
        base_mva: doc.base_mva,
        buses: doc
            .buses
            .iter()
            .map(|b| Bus {
                id: b.id,
                load: b.load_mw,
            })
            .collect(),
        generators: doc
            .generators
            .iter()
            .map(|g| Generator {
                bus: g.bus,
                output: g.output_mw,
                max_output: g.max_mw,
                ramp_limit: g.ramp_mw,
            })
            .collect(),
        // Placeholder capacity so structural validation can run before the
        // base flow is known; overwritten below.
        lines: doc
            .lines
            .iter()
            .map(|l| Line {
                id: l.id,
                from_bus: l.from,
                to_bus: l.to,
                reactance: l.x_pu,
                capacity: l.capacity_mw.unwrap_or(f64::INFINITY),
            })
            .collect(),
    };

    let structural: Vec<Diagnostic> = validate_case(&case)
        .into_iter()
        .filter(|d| !matches!(d, Diagnostic::Unbalanced { .. }))
        .collect();
    if !structural.is_empty() {
        return Err(Error::Validation(structural));
    }

    balance_generation(&mut case)?;

    if doc.lines.iter().any(|l| l.capacity_mw.is_none()) {
        let all = LineStateVector::all_in_service(case.n_lines());
        let injections = base_injections(&case);
        let flows = solve_dc(&case, &all, &injections)?.flows;
        for (line, rec) in case.lines.iter_mut().zip(&doc.lines) {
            if rec.capacity_mw.is_none() {
                let base = flows[line.id].unwrap_or(0.0).abs();
                line.capacity = rule.floor_mw.max(rule.margin * base);
            }
        }
    }

    let report = validate_case(&case);
    if report.is_empty() {
        Ok(case)
    } else {
        Err(Error::Validation(report))
    }
}

/// Per-bus net injection (generation minus load) of the case's dispatch.
pub fn base_injections(case: &GridCase) -> Vec<f64> {
    let mut inj: Vec<f64> = case.buses.iter().map(|b| -b.load).collect();
    for g in &case.generators {
        inj[g.bus] += g.output;
    }
    inj
}

/// Scales generator outputs uniformly so total generation equals total load.
/// Units clamped at `max_output` pass their remainder to units with headroom.
fn balance_generation(case: &mut GridCase) -> Result<()> {
    let load = case.total_load();
    let max_total: f64 = case.generators.iter().map(|g| g.max_output).sum();
    if load > max_total + crate::grid::BALANCE_TOLERANCE_MW {
        return Err(Error::Validation(vec![Diagnostic::Unbalanced {
            generation: max_total,
            load,
        }]));
    }
    let within_limits = case.generators.iter().all(|g| g.output <= g.max_output);
    if within_limits && (case.total_generation() - load).abs() <= 1e-9 {
        return Ok(());
    }
    if case.total_generation() <= 0.0 {
        // Nothing to scale; seed with capacity-proportional outputs.
        for g in &mut case.generators {
            g.output = g.max_output;
        }
    }
    let mut free: Vec<bool> = case.generators.iter().map(|g| g.max_output > 0.0).collect();
    for _ in 0..=case.generators.len() {
        let fixed: f64 = case
            .generators
            .iter()
            .zip(&free)
            .filter(|(_, f)| !**f)
            .map(|(g, _)| g.output)
            .sum();
        let scalable: f64 = case
            .generators
            .iter()
            .zip(&free)
            .filter(|(_, f)| **f)
            .map(|(g, _)| g.output)
            .sum();
        let target = load - fixed;
        if scalable <= 0.0 {
            break;
        }
        let factor = target / scalable;
        let mut clamped_any = false;
        for (g, f) in case.generators.iter_mut().zip(free.iter_mut()) {
            if !*f {
                continue;
            }
            g.output *= factor;
            if g.output >= g.max_output {
                g.output = g.max_output;
                *f = false;
                clamped_any = true;
            }
        }
        if !clamped_any {
            break;
        }
    }
    let residual = load - case.total_generation();
    if residual.abs() > crate::grid::BALANCE_TOLERANCE_MW {
        // Remaining deficit goes to units with headroom, proportional to it.
        let headroom: f64 = case
            .generators
            .iter()
            .map(|g| g.max_output - g.output)
            .sum();
        if residual > 0.0 && headroom >= residual {
            for g in &mut case.generators {
                g.output += residual * (g.max_output - g.output) / headroom;
            }
        }
    }
    Ok(())
}

/// Reads a MATPOWER `mpc` struct. Buses are renumbered 0..n-1 in file order;
/// out-of-service generators and branches are dropped; a zero `rateA` means
/// "unrated".
pub fn parse_matpower(source: &str) -> Result<CaseDocument> {
    let base_mva = scalar_field(source, "baseMVA")?.unwrap_or(100.0);
    let bus_rows = matrix_field(source, "bus")?;
    let gen_rows = matrix_field(source, "gen")?;
    let branch_rows = matrix_field(source, "branch")?;

    let mut index_of = std::collections::HashMap::new();
    let mut buses = Vec::with_capacity(bus_rows.len());
    for row in &bus_rows {
        row.require(3)?;
        let label = row.values[0] as i64;
        if index_of.insert(label, buses.len()).is_some() {
            return Err(row.error(format!("duplicate bus number {label}")));
        }
        buses.push(BusRecord {
            id: buses.len(),
            load_mw: row.values[2],
        });
    }
    let lookup = |row: &Row, col: usize| -> Result<usize> {
        let label = row.values[col] as i64;
        index_of
            .get(&label)
            .copied()
            .ok_or_else(|| row.error(format!("unknown bus number {label}")))
    };

    let mut generators = Vec::new();
    for row in &gen_rows {
        row.require(9)?;
        if row.values[7] <= 0.0 {
            continue;
        }
        generators.push(GeneratorRecord {
            bus: lookup(row, 0)?,
            output_mw: row.values[1],
            max_mw: row.values[8],
            ramp_mw: None,
        });
    }

    let mut lines = Vec::new();
    for row in &branch_rows {
        row.require(11)?;
        if row.values[10] <= 0.0 {
            continue;
        }
        let rate = row.values[5];
        lines.push(LineRecord {
            id: lines.len(),
            from: lookup(row, 0)?,
            to: lookup(row, 1)?,
            x_pu: row.values[3],
            capacity_mw: (rate > 0.0).then_some(rate),
        });
    }

    Ok(CaseDocument {
        name: None,
        base_mva,
        buses,
        generators,
        lines,
    })
}

struct Row {
    line: usize,
    values: Vec<f64>,
}

impl Row {
    fn error(&self, message: String) -> Error {
        Error::Parse {
            line: self.line,
            column: 1,
            message,
        }
    }

    fn require(&self, columns: usize) -> Result<()> {
        if self.values.len() < columns {
            Err(self.error(format!(
                "expected at least {columns} columns, found {}",
                self.values.len()
            )))
        } else {
            Ok(())
        }
    }
}

fn strip_comment(line: &str) -> &str {
    line.split('%').next().unwrap_or("")
}

fn scalar_field(source: &str, name: &str) -> Result<Option<f64>> {
    let key = format!("mpc.{name}");
    for (i, raw) in source.lines().enumerate() {
        let line = strip_comment(raw).trim();
        if let Some(rest) = line.strip_prefix(&key) {
            let rest = rest.trim_start();
            let Some(value) = rest.strip_prefix('=') else {
                continue;
            };
            let value = value.trim().trim_end_matches(';').trim();
            return value.parse::<f64>().map(Some).map_err(|_| Error::Parse {
                line: i + 1,
                column: raw.find('=').map_or(1, |c| c + 2),
                message: format!("cannot parse {name} value '{value}'"),
            });
        }
    }
    Ok(None)
}

fn matrix_field(source: &str, name: &str) -> Result<Vec<Row>> {
    let key = format!("mpc.{name}");
    let mut lines = source.lines().enumerate();
    let start = lines.by_ref().find(|(_, raw)| {
        let l = strip_comment(raw).trim();
        l.strip_prefix(&key)
            .map(|rest| rest.trim_start().starts_with('='))
            .unwrap_or(false)
    });
    let Some((start_line, header)) = start else {
        return Err(Error::Parse {
            line: source.lines().count().max(1),
            column: 1,
            message: format!("missing matrix mpc.{name}"),
        });
    };
    let mut rows = Vec::new();
    let after_bracket = strip_comment(header)
        .split_once('[')
        .map(|(_, r)| r.to_string())
        .unwrap_or_default();
    let mut pending: Vec<(usize, String)> = vec![(start_line + 1, after_bracket)];
    let mut closed = false;
    for (i, raw) in lines {
        if closed {
            break;
        }
        pending.push((i + 1, strip_comment(raw).to_string()));
        if strip_comment(raw).contains(']') {
            closed = true;
        }
    }
    for (line_no, text) in pending {
        let (body, done) = match text.split_once(']') {
            Some((b, _)) => (b.to_string(), true),
            None => (text, false),
        };
        for chunk in body.split(';') {
            let chunk = chunk.trim();
            if chunk.is_empty() {
                continue;
            }
            let mut values = Vec::new();
            for (col, tok) in chunk
                .split(|c: char| c.is_whitespace() || c == ',')
                .filter(|t| !t.is_empty())
                .enumerate()
            {
                let v = tok.parse::<f64>().map_err(|_| Error::Parse {
                    line: line_no,
                    column: col + 1,
                    message: format!("mpc.{name}: cannot parse '{tok}' as a number"),
                })?;
                values.push(v);
            }
            rows.push(Row {
                line: line_no,
                values,
            });
        }
        if done {
            return Ok(rows);
        }
    }
    Err(Error::Parse {
        line: start_line + 1,
        column: 1,
        message: format!("unterminated matrix mpc.{name}"),
    })
}
