//! Attack application and the cascading-failure transition.
//!
//! One stage of the game is `apply_attacks` followed by `run_cascade`: the
//! grid is split into islands, each island is re-dispatched (generation
//! ramped proportionally to headroom on a deficit, curtailed proportionally to
//! output on a surplus, load shed proportionally when generation cannot cover
//! it), the DC power flow is solved, and every overloaded line trips at once.
//! The loop repeats until no line is overloaded.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::grid::{find_islands, GridCase, LineStateVector};
use crate::powerflow::{build_susceptance, solve_island};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackAction {
    pub attacker: usize,
    pub line: usize,
}

/// Lines immune to attack.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DefenseSet {
    pub protected_lines: BTreeSet<usize>,
}

impl DefenseSet {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn contains(&self, line: usize) -> bool {
        self.protected_lines.contains(&line)
    }

    pub fn len(&self) -> usize {
        self.protected_lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.protected_lines.is_empty()
    }

    pub fn check(&self, n_lines: usize) -> Result<()> {
        match self.protected_lines.iter().find(|&&l| l >= n_lines) {
            Some(l) => Err(Error::Domain(format!(
                "defended line {l} out of range (N = {n_lines})"
            ))),
            None => Ok(()),
        }
    }
}

impl FromIterator<usize> for DefenseSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        Self {
            protected_lines: iter.into_iter().collect(),
        }
    }
}

/// Takes every attacked line out of service unless it is already out or
/// defended.
pub fn apply_attacks(
    states: &LineStateVector,
    actions: &[AttackAction],
    defense: &DefenseSet,
) -> Result<LineStateVector> {
    let mut next = states.clone();
    for action in actions {
        if action.line >= states.len() {
            return Err(Error::Domain(format!(
                "attacker {} targets line {} but N = {}",
                action.attacker,
                action.line,
                states.len()
            )));
        }
        if next.is_in_service(action.line) && !defense.contains(action.line) {
            next.set_out_of_service(action.line);
        }
    }
    Ok(next)
}

/// Generator dispatch and served load, both in MW.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub dispatch: Vec<f64>,
    pub served_load: Vec<f64>,
}

impl OperatingPoint {
    /// The ingested dispatch serving every load in full.
    pub fn base(case: &GridCase) -> Self {
        Self {
            dispatch: case.generators.iter().map(|g| g.output).collect(),
            served_load: case.buses.iter().map(|b| b.load).collect(),
        }
    }

    pub fn served_generation(&self) -> f64 {
        self.dispatch.iter().sum()
    }

    pub fn total_served_load(&self) -> f64 {
        self.served_load.iter().sum()
    }

    pub fn injections(&self, case: &GridCase) -> Vec<f64> {
        let mut inj: Vec<f64> = self.served_load.iter().map(|d| -d).collect();
        for (g, p) in case.generators.iter().zip(&self.dispatch) {
            inj[g.bus] += p;
        }
        inj
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CascadeOptions {
    /// A line trips when `|flow| > overload_tolerance * capacity`.
    pub overload_tolerance: f64,
    pub max_rounds: usize,
    /// Bind upward re-dispatch to each generator's `ramp_limit` per round.
    pub ramp_limits: bool,
}

impl Default for CascadeOptions {
    fn default() -> Self {
        Self {
            overload_tolerance: 1.0,
            max_rounds: 100,
            ramp_limits: false,
        }
    }
}

/// Restores power balance on one island, in place.
///
/// Shedding is never reversed: served load at a bus only decreases. Ramp
/// limits (when enabled) bound increases only; curtailment and disconnection
/// are immediate.
pub fn rebalance_island(
    case: &GridCase,
    island: &[usize],
    point: &mut OperatingPoint,
    ramp_limits: bool,
) {
    let in_island = |bus: usize| island.binary_search(&bus).is_ok();
    let gens: Vec<usize> = case
        .generators
        .iter()
        .enumerate()
        .filter(|(_, g)| in_island(g.bus) && g.max_output > 0.0)
        .map(|(k, _)| k)
        .collect();
    let load: f64 = island.iter().map(|&b| point.served_load[b]).sum();

    for (k, g) in case.generators.iter().enumerate() {
        if in_island(g.bus) && g.max_output <= 0.0 {
            point.dispatch[k] = 0.0;
        }
    }
    if gens.is_empty() || load <= 0.0 {
        for &k in &gens {
            point.dispatch[k] = 0.0;
        }
        for &b in island {
            point.served_load[b] = 0.0;
        }
        return;
    }

    let generation: f64 = gens.iter().map(|&k| point.dispatch[k]).sum();
    if generation > load {
        let surplus = generation - load;
        for &k in &gens {
            point.dispatch[k] -= surplus * point.dispatch[k] / generation;
        }
    } else if generation < load {
        let deficit = load - generation;
        let headroom: Vec<f64> = gens
            .iter()
            .map(|&k| {
                let g = &case.generators[k];
                let room = (g.max_output - point.dispatch[k]).max(0.0);
                match (ramp_limits, g.ramp_limit) {
                    (true, Some(r)) => room.min(r),
                    _ => room,
                }
            })
            .collect();
        let total_room: f64 = headroom.iter().sum();
        if total_room >= deficit {
            for (&k, h) in gens.iter().zip(&headroom) {
                point.dispatch[k] += deficit * h / total_room;
            }
        } else {
            for (&k, h) in gens.iter().zip(&headroom) {
                point.dispatch[k] += h;
            }
            let available = generation + total_room;
            let factor = available / load;
            for &b in island {
                point.served_load[b] *= factor;
            }
        }
    }
}

/// Lines with `|flow| > tolerance * capacity`, ascending.
pub fn trip_overloads(flows: &[Option<f64>], capacities: &[f64], tolerance: f64) -> Vec<usize> {
    flows
        .iter()
        .zip(capacities)
        .enumerate()
        .filter_map(|(l, (flow, cap))| match flow {
            Some(f) if f.abs() > tolerance * cap => Some(l),
            _ => None,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripRound {
    pub round: usize,
    pub tripped: Vec<usize>,
    /// Served generation after this round's re-dispatch, before the trips.
    pub served_generation: f64,
    pub served_load: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeResult {
    pub next_states: LineStateVector,
    pub point: OperatingPoint,
    pub served_generation: f64,
    pub served_load: f64,
    /// L_t in MW.
    pub generation_loss: f64,
    pub trip_trace: Vec<TripRound>,
    pub rounds: usize,
    pub truncated: bool,
    /// Final flows, MW; `None` on lines out of service.
    #[serde(skip)]
    pub flows: Vec<Option<f64>>,
}

impl CascadeResult {
    pub fn tripped_lines(&self) -> Vec<usize> {
        self.trip_trace
            .iter()
            .flat_map(|r| r.tripped.iter().copied())
            .collect()
    }
}

/// Drives the grid from the post-attack line states to a steady state.
pub fn run_cascade(
    case: &GridCase,
    states_after_attack: &LineStateVector,
    prior: &OperatingPoint,
    options: &CascadeOptions,
) -> Result<CascadeResult> {
    check_len("line state vector", case.n_lines(), states_after_attack.len())?;
    check_len("dispatch", case.generators.len(), prior.dispatch.len())?;
    check_len("served load", case.n_buses(), prior.served_load.len())?;
    let capacities = case.capacities();
    let prior_generation = prior.served_generation();
    let mut states = states_after_attack.clone();
    let mut point = prior.clone();
    let mut trace = Vec::new();
    let mut rounds = 0;
    let mut truncated = false;
    let mut flows;

    loop {
        rounds += 1;
        let islands = find_islands(case, &states)?;
        for island in &islands.components {
            rebalance_island(case, island, &mut point, options.ramp_limits);
        }
        flows = island_flows(case, &states, &islands.components, &point)?;
        let tripped = trip_overloads(&flows, &capacities, options.overload_tolerance);
        if tripped.is_empty() {
            break;
        }
        if rounds >= options.max_rounds {
            truncated = true;
            break;
        }
        for &l in &tripped {
            states.set_out_of_service(l);
        }
        trace.push(TripRound {
            round: rounds,
            tripped,
            served_generation: point.served_generation(),
            served_load: point.total_served_load(),
        });
    }

    let served_generation = point.served_generation();
    let served_load = point.total_served_load();
    Ok(CascadeResult {
        next_states: states,
        generation_loss: (prior_generation - served_generation).max(0.0),
        served_generation,
        served_load,
        point,
        trip_trace: trace,
        rounds,
        truncated,
        flows,
    })
}

fn island_flows(
    case: &GridCase,
    states: &LineStateVector,
    islands: &[Vec<usize>],
    point: &OperatingPoint,
) -> Result<Vec<Option<f64>>> {
    let injections = point.injections(case);
    let mut angles = vec![0.0; case.n_buses()];
    for island in islands {
        if island.len() == 1 {
            continue;
        }
        let system = build_susceptance(case, island, states)?;
        let local: Vec<f64> = island.iter().map(|&b| injections[b]).collect();
        let theta = solve_island(&system, &local)?;
        for (k, &b) in island.iter().enumerate() {
            angles[b] = theta[k];
        }
    }
    crate::powerflow::branch_flows(case, states, &angles)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::fixtures::*;
    use crate::grid::Generator;

    fn act(line: usize) -> AttackAction {
        AttackAction { attacker: 0, line }
    }

    #[test]
    fn attack_on_down_line_is_noop() {
        let states = LineStateVector::from_bits(vec![true, false, true]);
        let next = apply_attacks(&states, &[act(1)], &DefenseSet::none()).unwrap();
        assert_eq!(next, states);
    }

    #[test]
    fn attack_on_defended_line_is_noop() {
        let states = LineStateVector::all_in_service(3);
        let defense: DefenseSet = [2].into_iter().collect();
        let next = apply_attacks(&states, &[act(2)], &defense).unwrap();
        assert_eq!(next, states);
    }

    #[test]
    fn duplicate_attacks_remove_once() {
        let states = LineStateVector::all_in_service(8);
        let next = apply_attacks(&states, &[act(5), act(5)], &DefenseSet::none()).unwrap();
        assert_eq!(next.in_service_count(), 7);
        assert!(!next.is_in_service(5));
    }

    #[test]
    fn out_of_range_attack_is_domain_error() {
        let states = LineStateVector::all_in_service(3);
        assert!(matches!(
            apply_attacks(&states, &[act(3)], &DefenseSet::none()),
            Err(Error::Domain(_))
        ));
    }

    fn island_case(loads: &[f64], gens: Vec<Generator>) -> GridCase {
        let n = loads.len();
        let lines = (1..n).map(|b| line(b - 1, b - 1, b, 0.1, 1e3)).collect();
        case(loads, lines, gens)
    }

    #[test]
    fn island_without_load_zeroes_generation() {
        let case = island_case(&[0.0, 0.0], vec![gen(0, 40.0, 50.0)]);
        let mut point = OperatingPoint::base(&case);
        rebalance_island(&case, &[0, 1], &mut point, false);
        assert_eq!(point.dispatch, vec![0.0]);
        assert_eq!(point.total_served_load(), 0.0);
    }

    #[test]
    fn capacity_forced_shedding() {
        let case = island_case(&[0.0, 60.0, 40.0], vec![gen(0, 60.0, 60.0)]);
        let mut point = OperatingPoint::base(&case);
        rebalance_island(&case, &[0, 1, 2], &mut point, false);
        assert!((point.dispatch[0] - 60.0).abs() < 1e-12);
        assert!((point.total_served_load() - 60.0).abs() < 1e-9);
        // 40 MW shed in proportion to load.
        assert!((point.served_load[1] - 36.0).abs() < 1e-9);
        assert!((point.served_load[2] - 24.0).abs() < 1e-9);
    }

    #[test]
    fn deficit_raised_proportionally_to_headroom() {
        let case = island_case(&[0.0, 0.0, 100.0], vec![gen(0, 30.0, 50.0), gen(1, 30.0, 100.0)]);
        let mut point = OperatingPoint::base(&case);
        rebalance_island(&case, &[0, 1, 2], &mut point, false);
        // Headroom (20, 70), deficit 40: +40*20/90 and +40*70/90.
        assert!((point.dispatch[0] - 38.888_888_9).abs() < 1e-4);
        assert!((point.dispatch[1] - 61.111_111_1).abs() < 1e-4);
        assert!((point.total_served_load() - 100.0).abs() < 1e-12);
    }

    #[test]
    fn surplus_curtailed_proportionally_to_output() {
        let case = island_case(&[0.0, 0.0, 60.0], vec![gen(0, 30.0, 50.0), gen(1, 50.0, 100.0)]);
        let mut point = OperatingPoint::base(&case);
        rebalance_island(&case, &[0, 1, 2], &mut point, false);
        assert!((point.dispatch[0] - 22.5).abs() < 1e-9);
        assert!((point.dispatch[1] - 37.5).abs() < 1e-9);
    }

    #[test]
    fn ramp_limit_bounds_increase() {
        let mut g = gen(0, 30.0, 100.0);
        g.ramp_limit = Some(5.0);
        let case = island_case(&[0.0, 50.0], vec![g]);
        let mut point = OperatingPoint::base(&case);
        rebalance_island(&case, &[0, 1], &mut point, true);
        assert!((point.dispatch[0] - 35.0).abs() < 1e-12);
        assert!((point.total_served_load() - 35.0).abs() < 1e-12);
        let mut unbounded = OperatingPoint::base(&case);
        rebalance_island(&case, &[0, 1], &mut unbounded, false);
        assert!((unbounded.dispatch[0] - 50.0).abs() < 1e-12);
    }

    #[test]
    fn trip_threshold_boundary() {
        let flows = [Some(119.0), Some(-50.0), None];
        let caps = [100.0, 100.0, 1.0];
        assert!(trip_overloads(&flows, &caps, 1.2).is_empty());
        assert_eq!(trip_overloads(&flows, &caps, 1.0), vec![0]);
        // 121 MW exceeds 1.2 x 100 MW.
        assert_eq!(trip_overloads(&[Some(121.0)], &[100.0], 1.2), vec![0]);
        assert!(trip_overloads(&[Some(100.0)], &[100.0], 1.0).is_empty());
    }

    #[test]
    fn steady_state_is_fixed_point() {
        let case = chain3();
        let point = OperatingPoint::base(&case);
        let res = run_cascade(&case, &LineStateVector::all_in_service(2), &point, &Default::default())
            .unwrap();
        assert!(res.trip_trace.is_empty());
        assert_eq!(res.generation_loss, 0.0);
        assert_eq!(res.rounds, 1);
    }

    #[test]
    fn severing_load_island_loses_its_load() {
        // gen island {0,1} carries 20 MW load, load island {2} has 80 MW.
        let case = case(
            &[0.0, 20.0, 80.0],
            vec![line(0, 0, 1, 0.1, 500.0), line(1, 1, 2, 0.1, 500.0)],
            vec![gen(0, 100.0, 150.0)],
        );
        let point = OperatingPoint::base(&case);
        let after = apply_attacks(&LineStateVector::all_in_service(2), &[act(1)], &DefenseSet::none())
            .unwrap();
        let res = run_cascade(&case, &after, &point, &Default::default()).unwrap();
        assert!((res.generation_loss - 80.0).abs() < 1e-9);
        assert!((res.served_generation - res.served_load).abs() < 1e-9);
    }

    #[test]
    fn overload_propagates() {
        // Two parallel paths 0->1; losing one overloads the other.
        let case = case(
            &[0.0, 100.0],
            vec![line(0, 0, 1, 0.1, 60.0), line(1, 0, 1, 0.1, 60.0)],
            vec![gen(0, 100.0, 150.0)],
        );
        let point = OperatingPoint::base(&case);
        let after = apply_attacks(&LineStateVector::all_in_service(2), &[act(0)], &DefenseSet::none())
            .unwrap();
        let res = run_cascade(&case, &after, &point, &Default::default()).unwrap();
        assert_eq!(res.trip_trace.len(), 1);
        assert_eq!(res.trip_trace[0].tripped, vec![1]);
        assert!((res.generation_loss - 100.0).abs() < 1e-9);
        assert!(!res.truncated);
    }

    #[test]
    fn round_limit_flags_truncation() {
        let case = case(
            &[0.0, 100.0],
            vec![line(0, 0, 1, 0.1, 60.0), line(1, 0, 1, 0.1, 60.0)],
            vec![gen(0, 100.0, 150.0)],
        );
        let point = OperatingPoint::base(&case);
        let after = LineStateVector::from_bits(vec![false, true]);
        let opts = CascadeOptions {
            max_rounds: 1,
            ..Default::default()
        };
        let res = run_cascade(&case, &after, &point, &opts).unwrap();
        assert!(res.truncated);
    }
}
