//! DC power flow solved independently on every island.
//!
//! Injections are converted to per unit on `base_mva`, the reduced nodal
//! susceptance system `B' θ = P` is solved by Cholesky factorization with the
//! island's slack bus removed, and branch flows are scaled back to MW.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};
use crate::grid::{find_islands, GridCase, LineStateVector};

/// Reference bus of an island: the bus hosting the generator with the largest
/// `max_output`, ties to the lowest bus id. Islands without generators use
/// their lowest bus.
pub fn slack_bus(case: &GridCase, island: &[usize]) -> usize {
    let mut best: Option<(f64, usize)> = None;
    for gen in &case.generators {
        if island.binary_search(&gen.bus).is_err() {
            continue;
        }
        best = match best {
            Some((cap, bus)) if cap > gen.max_output || (cap == gen.max_output && bus <= gen.bus) => {
                Some((cap, bus))
            }
            _ => Some((gen.max_output, gen.bus)),
        };
    }
    best.map(|(_, bus)| bus).unwrap_or(island[0])
}

#[derive(Debug, Clone)]
pub struct ReducedSusceptance {
    /// Island buses in ascending order.
    pub buses: Vec<usize>,
    pub slack: usize,
    /// Row index of each island bus in `matrix`; `None` for the slack.
    pub row_of: Vec<Option<usize>>,
    /// Per unit, slack row and column removed.
    pub matrix: DMatrix<f64>,
    base_mva: f64,
}

/// Assembles the reduced susceptance matrix for one island. `island` must be
/// one component of `find_islands(case, states)` in ascending order.
pub fn build_susceptance(
    case: &GridCase,
    island: &[usize],
    states: &LineStateVector,
) -> Result<ReducedSusceptance> {
    check_len("line state vector", case.n_lines(), states.len())?;
    let slack = slack_bus(case, island);
    let mut row_of = vec![None; island.len()];
    let mut next = 0;
    for (k, &bus) in island.iter().enumerate() {
        if bus != slack {
            row_of[k] = Some(next);
            next += 1;
        }
    }
    let mut matrix = DMatrix::zeros(next, next);
    let position = |bus: usize| island.binary_search(&bus).ok();
    for line in &case.lines {
        if !states.is_in_service(line.id) {
            continue;
        }
        let (Some(pf), Some(pt)) = (position(line.from_bus), position(line.to_bus)) else {
            continue;
        };
        let b = 1.0 / line.reactance;
        let (rf, rt) = (row_of[pf], row_of[pt]);
        if let Some(i) = rf {
            matrix[(i, i)] += b;
        }
        if let Some(j) = rt {
            matrix[(j, j)] += b;
        }
        if let (Some(i), Some(j)) = (rf, rt) {
            matrix[(i, j)] -= b;
            matrix[(j, i)] -= b;
        }
    }
    Ok(ReducedSusceptance {
        buses: island.to_vec(),
        slack,
        row_of,
        matrix,
        base_mva: case.base_mva,
    })
}

/// Solves for the bus angles (radians, island order) given MW injections at
/// every island bus. The slack angle is 0 and absorbs any residual.
pub fn solve_island(system: &ReducedSusceptance, injections_mw: &[f64]) -> Result<Vec<f64>> {
    check_len("island injections", system.buses.len(), injections_mw.len())?;
    let n = system.matrix.nrows();
    let mut angles = vec![0.0; system.buses.len()];
    if n == 0 {
        return Ok(angles);
    }
    let mut rhs = DVector::zeros(n);
    for (k, row) in system.row_of.iter().enumerate() {
        if let Some(r) = row {
            rhs[*r] = injections_mw[k] / system.base_mva;
        }
    }
    let chol = system
        .matrix
        .clone()
        .cholesky()
        .ok_or(Error::Singular { slack: system.slack })?;
    let theta = chol.solve(&rhs);
    for (k, row) in system.row_of.iter().enumerate() {
        if let Some(r) = row {
            angles[k] = theta[*r];
        }
    }
    Ok(angles)
}

/// MW flow on every in-service line, `None` for lines out of service.
/// Positive flow runs from `from_bus` to `to_bus`.
pub fn branch_flows(
    case: &GridCase,
    states: &LineStateVector,
    angles: &[f64],
) -> Result<Vec<Option<f64>>> {
    check_len("line state vector", case.n_lines(), states.len())?;
    check_len("bus angles", case.n_buses(), angles.len())?;
    Ok(case
        .lines
        .iter()
        .map(|line| {
            states.is_in_service(line.id).then(|| {
                (angles[line.from_bus] - angles[line.to_bus]) / line.reactance * case.base_mva
            })
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlowSolution {
    /// Radians per bus.
    pub angles: Vec<f64>,
    /// MW per line; `None` when out of service.
    pub flows: Vec<Option<f64>>,
    /// One slack bus per island, in island order.
    pub slack_buses: Vec<usize>,
}

/// Solves every island of `states` for the given per-bus MW injections.
/// Each island's injections must already be balanced.
pub fn solve_dc(
    case: &GridCase,
    states: &LineStateVector,
    injections_mw: &[f64],
) -> Result<PowerFlowSolution> {
    check_len("bus injections", case.n_buses(), injections_mw.len())?;
    let islands = find_islands(case, states)?;
    let mut angles = vec![0.0; case.n_buses()];
    let mut slack_buses = Vec::with_capacity(islands.len());
    for island in &islands.components {
        let system = build_susceptance(case, island, states)?;
        let local: Vec<f64> = island.iter().map(|&b| injections_mw[b]).collect();
        let theta = solve_island(&system, &local)?;
        for (k, &bus) in island.iter().enumerate() {
            angles[bus] = theta[k];
        }
        slack_buses.push(system.slack);
    }
    let flows = branch_flows(case, states, &angles)?;
    Ok(PowerFlowSolution {
        angles,
        flows,
        slack_buses,
    })
}

/// Net flow leaving each bus through in-service lines, MW.
pub fn net_outflows(case: &GridCase, flows: &[Option<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; case.n_buses()];
    for (line, flow) in case.lines.iter().zip(flows) {
        if let Some(f) = flow {
            out[line.from_bus] += f;
            out[line.to_bus] -= f;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::fixtures::*;

    fn two_bus(x: f64) -> GridCase {
        case(
            &[0.0, 100.0],
            vec![line(0, 0, 1, x, 500.0)],
            vec![gen(0, 100.0, 200.0)],
        )
    }

    #[test]
    fn single_line_matrix_is_inverse_reactance() {
        let case = two_bus(0.1);
        let sys = build_susceptance(&case, &[0, 1], &LineStateVector::all_in_service(1)).unwrap();
        assert_eq!(sys.slack, 0);
        assert_eq!(sys.matrix.shape(), (1, 1));
        assert!((sys.matrix[(0, 0)] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn triangle_matrix_matches_incidence_assembly() {
        let case = triangle();
        let sys = build_susceptance(&case, &[0, 1, 2], &LineStateVector::all_in_service(3)).unwrap();
        // Full matrix: diag 20, off-diagonal -10; slack bus 0 removed.
        assert_eq!(sys.matrix.shape(), (2, 2));
        assert!((sys.matrix[(0, 0)] - 20.0).abs() < 1e-12);
        assert!((sys.matrix[(1, 1)] - 20.0).abs() < 1e-12);
        assert!((sys.matrix[(0, 1)] + 10.0).abs() < 1e-12);
        assert!((sys.matrix[(1, 0)] + 10.0).abs() < 1e-12);
    }

    #[test]
    fn out_of_service_line_is_absent() {
        let case = triangle();
        let states = LineStateVector::from_bits(vec![true, true, false]);
        let sys = build_susceptance(&case, &[0, 1, 2], &states).unwrap();
        assert!((sys.matrix[(0, 0)] - 10.0).abs() < 1e-12);
        assert!(sys.matrix[(0, 1)].abs() < 1e-12);
    }

    #[test]
    fn single_bus_island_is_empty() {
        let case = two_bus(0.1);
        let states = LineStateVector::from_bits(vec![false]);
        let sys = build_susceptance(&case, &[1], &states).unwrap();
        assert_eq!(sys.matrix.nrows(), 0);
        assert_eq!(solve_island(&sys, &[0.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn zero_injection_gives_zero_angles() {
        let case = triangle();
        let sol = solve_dc(&case, &LineStateVector::all_in_service(3), &[0.0; 3]).unwrap();
        assert!(sol.angles.iter().all(|a| *a == 0.0));
        assert!(sol.flows.iter().all(|f| f.unwrap() == 0.0));
    }

    #[test]
    fn two_bus_transfer() {
        let case = two_bus(0.1);
        let sol = solve_dc(&case, &LineStateVector::all_in_service(1), &[100.0, -100.0]).unwrap();
        // theta_1 = -x * P = -0.1 rad
        assert!((sol.angles[1] + 0.1).abs() < 1e-12);
        assert!((sol.flows[0].unwrap() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn triangle_flow_split() {
        // Reduced system [20 -10; -10 20] theta = [0; -1] => theta = (-1/30, -2/30).
        let case = triangle();
        let sol = solve_dc(&case, &LineStateVector::all_in_service(3), &[100.0, 0.0, -100.0]).unwrap();
        assert!((sol.angles[1] + 1.0 / 30.0).abs() < 1e-12);
        assert!((sol.angles[2] + 2.0 / 30.0).abs() < 1e-12);
        let flows: Vec<f64> = sol.flows.iter().map(|f| f.unwrap()).collect();
        for (got, want) in flows.iter().zip([200.0 / 3.0, 100.0 / 3.0, 100.0 / 3.0]) {
            assert!((got - want).abs() < 1e-4, "{flows:?}");
        }
    }

    #[test]
    fn equal_angles_give_zero_flow() {
        let case = triangle();
        let flows =
            branch_flows(&case, &LineStateVector::all_in_service(3), &[0.3, 0.3, 0.3]).unwrap();
        assert!(flows.iter().all(|f| f.unwrap() == 0.0));
    }

    #[test]
    fn reversed_orientation_negates_flow() {
        let case = triangle();
        let mut flipped = case.clone();
        let l = &mut flipped.lines[1];
        std::mem::swap(&mut l.from_bus, &mut l.to_bus);
        let inj = [100.0, 0.0, -100.0];
        let all = LineStateVector::all_in_service(3);
        let a = solve_dc(&case, &all, &inj).unwrap();
        let b = solve_dc(&flipped, &all, &inj).unwrap();
        assert!((a.flows[1].unwrap() + b.flows[1].unwrap()).abs() < 1e-9);
    }

    #[test]
    fn slack_prefers_largest_generator_then_lowest_bus() {
        let mut case = triangle();
        case.generators = vec![gen(2, 0.0, 50.0), gen(1, 0.0, 80.0), gen(0, 0.0, 80.0)];
        assert_eq!(slack_bus(&case, &[0, 1, 2]), 0);
        assert_eq!(slack_bus(&case, &[1, 2]), 1);
        assert_eq!(slack_bus(&case, &[2]), 2);
    }
}
