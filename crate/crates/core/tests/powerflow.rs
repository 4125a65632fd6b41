mod oracles;

use gridstrike::case_io::builtin_case;
use gridstrike::powerflow::solve_dc;
use gridstrike::{GridCase, LineStateVector, OperatingPoint};
use oracles::{injections, kcl_residual, triangle, TRIANGLE_FLOWS};

fn base_flows(case: &GridCase) -> (Vec<f64>, Vec<Option<f64>>) {
    let inj = injections(case, &OperatingPoint::base(case));
    let sol = solve_dc(case, &LineStateVector::all_in_service(case.n_lines()), &inj).unwrap();
    (inj, sol.flows)
}

#[test]
fn triangle_matches_hand_solution() {
    let case = triangle();
    let (inj, flows) = base_flows(&case);
    for (f, want) in flows.iter().zip(TRIANGLE_FLOWS) {
        assert!((f.unwrap() - want).abs() < 1e-4, "{f:?} vs {want}");
    }
    assert!(kcl_residual(&case, &inj, &flows) <= 1e-6);
}

#[test]
fn bundled_cases_satisfy_kcl() {
    for name in ["ieee14", "ieee118"] {
        let case = builtin_case(name).unwrap().unwrap();
        let (inj, flows) = base_flows(&case);
        let r = kcl_residual(&case, &inj, &flows);
        assert!(r <= 1e-6, "{name}: residual {r}");
    }
}

#[test]
fn removed_line_carries_nothing_and_kcl_holds() {
    let case = triangle();
    let mut states = LineStateVector::all_in_service(3);
    states.set_out_of_service(0);
    let inj = injections(&case, &OperatingPoint::base(&case));
    let sol = solve_dc(&case, &states, &inj).unwrap();
    assert_eq!(sol.flows[0], None);
    assert!((sol.flows[1].unwrap() - 100.0).abs() < 1e-9);
    assert!((sol.flows[2].unwrap() - 100.0).abs() < 1e-9);
    assert!(kcl_residual(&case, &inj, &sol.flows) <= 1e-6);
}
