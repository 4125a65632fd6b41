//! Grid data model and topology queries.
//!
//! A [`GridCase`] is immutable once ingested (see [`crate::case_io`]); every
//! other module borrows it. Line and bus ids are 0-based and equal to their
//! position in the respective vectors.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: usize,
    /// MW.
    pub load: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub bus: usize,
    /// MW.
    pub output: f64,
    /// MW.
    pub max_output: f64,
    /// MW per cascade round. `None` is unbounded.
    pub ramp_limit: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub id: usize,
    pub from_bus: usize,
    pub to_bus: usize,
    /// Per unit on the case base.
    pub reactance: f64,
    /// MW.
    pub capacity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCase {
    pub name: String,
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub generators: Vec<Generator>,
}

impl GridCase {
    /// Number of lines, N.
    pub fn n_lines(&self) -> usize {
        self.lines.len()
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn total_load(&self) -> f64 {
        self.buses.iter().map(|b| b.load).sum()
    }

    pub fn total_generation(&self) -> f64 {
        self.generators.iter().map(|g| g.output).sum()
    }

    pub fn capacities(&self) -> Vec<f64> {
        self.lines.iter().map(|l| l.capacity).collect()
    }
}

/// Binary in/out-of-service vector over all N lines.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LineStateVector(Vec<bool>);

impl LineStateVector {
    pub fn all_in_service(n: usize) -> Self {
        Self(vec![true; n])
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self(bits)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_in_service(&self, line: usize) -> bool {
        self.0[line]
    }

    pub fn set_out_of_service(&mut self, line: usize) {
        self.0[line] = false;
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn in_service_count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn out_of_service(&self) -> impl Iterator<Item = usize> + '_ {
        self.0
            .iter()
            .enumerate()
            .filter_map(|(l, &up)| (!up).then_some(l))
    }

    /// Elementwise `self <= other` (no line of `self` is up while down in `other`).
    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.0.len() == other.0.len() && self.0.iter().zip(&other.0).all(|(&a, &b)| !a || b)
    }

    /// 1.0 / 0.0 encoding used as network input.
    pub fn to_features(&self) -> Vec<f64> {
        self.0.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    pub fn write_features(&self, out: &mut [f64]) {
        for (o, &b) in out.iter_mut().zip(&self.0) {
            *o = if b { 1.0 } else { 0.0 };
        }
    }
}

struct DisjointSets {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl DisjointSets {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }
}

/// Partition of buses into connected components.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Islands {
    /// Each component's buses in ascending order; components ordered by
    /// their smallest bus id.
    pub components: Vec<Vec<usize>>,
    /// Component index of every bus.
    pub membership: Vec<usize>,
}

impl Islands {
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }
}

pub fn find_islands(case: &GridCase, states: &LineStateVector) -> Result<Islands> {
    check_len("line state vector", case.n_lines(), states.len())?;
    let n = case.n_buses();
    let mut sets = DisjointSets::new(n);
    for line in &case.lines {
        if states.is_in_service(line.id) {
            sets.union(line.from_bus, line.to_bus);
        }
    }
    let mut root_to_component = vec![usize::MAX; n];
    let mut components: Vec<Vec<usize>> = Vec::new();
    let mut membership = vec![0; n];
    for bus in 0..n {
        let root = sets.find(bus);
        if root_to_component[root] == usize::MAX {
            root_to_component[root] = components.len();
            components.push(Vec::new());
        }
        let c = root_to_component[root];
        components[c].push(bus);
        membership[bus] = c;
    }
    Ok(Islands {
        components,
        membership,
    })
}

/// One invariant violation found by [`validate_case`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Diagnostic {
    Empty { what: String },
    BusIdMismatch { position: usize, id: usize },
    NegativeLoad { bus: usize, load: f64 },
    NonFiniteValue { field: String },
    UnknownBus { item: String, bus: usize },
    GeneratorOutputOutOfRange { generator: usize, output: f64, max_output: f64 },
    NonPositiveRamp { generator: usize },
    LineIdMismatch { position: usize, id: usize },
    SelfLoop { line: usize },
    NonPositiveReactance { line: usize, reactance: f64 },
    NonPositiveCapacity { line: usize, capacity: f64 },
    NonPositiveBase { base_mva: f64 },
    Disconnected { islands: usize },
    Unbalanced { generation: f64, load: f64 },
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Empty { what } => write!(f, "case has no {what}"),
            Self::BusIdMismatch { position, id } => {
                write!(f, "bus at position {position} has id {id}; ids must be 0..n-1 in order")
            }
            Self::NegativeLoad { bus, load } => write!(f, "bus {bus} has negative load {load}"),
            Self::NonFiniteValue { field } => write!(f, "non-finite value in {field}"),
            Self::UnknownBus { item, bus } => write!(f, "{item} references unknown bus {bus}"),
            Self::GeneratorOutputOutOfRange {
                generator,
                output,
                max_output,
            } => write!(
                f,
                "generator {generator} output {output} outside [0, {max_output}]"
            ),
            Self::NonPositiveRamp { generator } => {
                write!(f, "generator {generator} ramp limit must be positive")
            }
            Self::LineIdMismatch { position, id } => {
                write!(f, "line at position {position} has id {id}; ids must be 0..N-1 in order")
            }
            Self::SelfLoop { line } => write!(f, "line {line} connects a bus to itself"),
            Self::NonPositiveReactance { line, reactance } => {
                write!(f, "line {line} has non-positive reactance {reactance}")
            }
            Self::NonPositiveCapacity { line, capacity } => {
                write!(f, "line {line} has non-positive capacity {capacity}")
            }
            Self::NonPositiveBase { base_mva } => write!(f, "base_mva {base_mva} must be positive"),
            Self::Disconnected { islands } => {
                write!(f, "base topology is disconnected ({islands} islands)")
            }
            Self::Unbalanced { generation, load } => {
                write!(f, "generation {generation} MW does not match load {load} MW")
            }
        }
    }
}

pub const BALANCE_TOLERANCE_MW: f64 = 1e-6;

/// Lists every invariant violation of `case`. Empty when valid.
///
/// Only the base topology (all lines in service) is checked for connectivity.
pub fn validate_case(case: &GridCase) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    if !(case.base_mva.is_finite() && case.base_mva > 0.0) {
        out.push(Diagnostic::NonPositiveBase {
            base_mva: case.base_mva,
        });
    }
    if case.buses.is_empty() {
        out.push(Diagnostic::Empty {
            what: "buses".into(),
        });
        return out;
    }
    let n_buses = case.buses.len();
    for (pos, bus) in case.buses.iter().enumerate() {
        if bus.id != pos {
            out.push(Diagnostic::BusIdMismatch { position: pos, id: bus.id });
        }
        if !bus.load.is_finite() {
            out.push(Diagnostic::NonFiniteValue {
                field: format!("bus {pos} load"),
            });
        } else if bus.load < 0.0 {
            out.push(Diagnostic::NegativeLoad { bus: pos, load: bus.load });
        }
    }
    for (g, gen) in case.generators.iter().enumerate() {
        if gen.bus >= n_buses {
            out.push(Diagnostic::UnknownBus {
                item: format!("generator {g}"),
                bus: gen.bus,
            });
        }
        if !(gen.output.is_finite() && gen.max_output.is_finite()) {
            out.push(Diagnostic::NonFiniteValue {
                field: format!("generator {g}"),
            });
        } else if gen.output < 0.0 || gen.output > gen.max_output + BALANCE_TOLERANCE_MW {
            out.push(Diagnostic::GeneratorOutputOutOfRange {
                generator: g,
                output: gen.output,
                max_output: gen.max_output,
            });
        }
        if let Some(r) = gen.ramp_limit {
            if !(r > 0.0) {
                out.push(Diagnostic::NonPositiveRamp { generator: g });
            }
        }
    }
    if case.lines.is_empty() && n_buses > 1 {
        out.push(Diagnostic::Empty {
            what: "lines".into(),
        });
    }
    let mut endpoints_ok = true;
    for (pos, line) in case.lines.iter().enumerate() {
        if line.id != pos {
            out.push(Diagnostic::LineIdMismatch { position: pos, id: line.id });
        }
        for bus in [line.from_bus, line.to_bus] {
            if bus >= n_buses {
                endpoints_ok = false;
                out.push(Diagnostic::UnknownBus {
                    item: format!("line {pos}"),
                    bus,
                });
            }
        }
        if line.from_bus == line.to_bus {
            out.push(Diagnostic::SelfLoop { line: pos });
        }
        if !(line.reactance > 0.0) {
            out.push(Diagnostic::NonPositiveReactance {
                line: pos,
                reactance: line.reactance,
            });
        }
        if !(line.capacity > 0.0) {
            out.push(Diagnostic::NonPositiveCapacity {
                line: pos,
                capacity: line.capacity,
            });
        }
    }
    if endpoints_ok && case.lines.iter().enumerate().all(|(p, l)| l.id == p) {
        let all = LineStateVector::all_in_service(case.n_lines());
        if let Ok(islands) = find_islands(case, &all) {
            if islands.len() > 1 {
                out.push(Diagnostic::Disconnected {
                    islands: islands.len(),
                });
            }
        }
    }
    let (generation, load) = (case.total_generation(), case.total_load());
    if (generation - load).abs() > BALANCE_TOLERANCE_MW {
        out.push(Diagnostic::Unbalanced { generation, load });
    }
    out
}
