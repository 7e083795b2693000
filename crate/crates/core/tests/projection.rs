mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use orgincent::admm::Problem;
use orgincent::network::Horizon;
use orgincent::projection::{
    branch_and_bound, project_to_binary, projection_milp, verify_plan, BnbParams, BnbStatus, MilpInstance,
    ProjectionError, RowOp,
};

fn assert_matches_enumeration(problem: &Problem, u_star: &[Vec<f64>]) {
    let plan = project_to_binary(problem, u_star, &BnbParams::default()).unwrap();
    let (dist, cost) = common::enumerate_projection(problem, u_star).expect("min-time plan is always feasible");
    assert!((plan.distance - dist).abs() <= 1e-9 * dist.max(1.0), "distance {} vs {dist}", plan.distance);
    assert!(plan.total_cost() <= cost + 1e-9, "cost {} vs {cost}", plan.total_cost());
    assert_eq!(plan.status, BnbStatus::Optimal);
    assert!(verify_plan(problem, &plan).is_empty(), "{:?}", verify_plan(problem, &plan));
}

#[test]
fn projection_equals_enumeration_on_random_small_cases() {
    for seed in 0..60 {
        let (problem, u_star) = common::enumerable_case(seed);
        assert_matches_enumeration(&problem, &u_star);
    }
}

fn three_drivers_two_routes(budget: f64) -> Problem {
    let horizon = Horizon::new(1, 30.0, 1).unwrap();
    let drivers = vec![common::driver(0, 1.6), common::driver(0, 1.6), common::driver(0, 1.6)];
    let inst = common::parallel_instance(&[(0.1, 10.0), (0.12, 10.0)], horizon, &[3], &[common::org("a", 1.0, drivers)]);
    inst.problem(budget, 1.0).unwrap()
}

#[test]
fn fractional_split_rounds_to_nearest_count() {
    let problem = three_drivers_two_routes(1e6);
    let u_star = vec![vec![1.4, 1.6]];
    let plan = project_to_binary(&problem, &u_star, &BnbParams::default()).unwrap();
    assert_eq!(plan.counts, vec![vec![1, 2]]);
    assert!((plan.distance - 0.8).abs() < 1e-12);
    assert_matches_enumeration(&problem, &u_star);
}

#[test]
fn zero_budget_forces_minimum_time_routes() {
    let problem = three_drivers_two_routes(0.0);
    let u_star = vec![vec![0.0, 3.0]];
    let plan = project_to_binary(&problem, &u_star, &BnbParams::default()).unwrap();
    let fastest = if problem.orgs[0].delta[0] <= problem.orgs[0].delta[1] { vec![3, 0] } else { vec![0, 3] };
    assert_eq!(plan.counts, vec![fastest]);
    assert_eq!(plan.total_cost(), 0.0);
    assert_matches_enumeration(&problem, &u_star);
}

#[test]
fn exact_target_projects_at_zero_distance() {
    let problem = three_drivers_two_routes(1e6);
    let plan = project_to_binary(&problem, &[vec![2.0, 1.0]], &BnbParams::default()).unwrap();
    assert_eq!(plan.distance, 0.0);
    assert_eq!(plan.counts, vec![vec![2, 1]]);
}

#[test]
fn unreachable_fairness_bound_names_the_driver() {
    let mut problem = three_drivers_two_routes(1e6);
    problem.orgs[0].fair_bound[1] = 0.0;
    let err = project_to_binary(&problem, &[vec![1.5, 1.5]], &BnbParams::default()).unwrap_err();
    match err {
        ProjectionError::Infeasible { org, driver, .. } => assert_eq!((org.as_str(), driver), ("a", 1)),
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn mismatched_target_shape_is_rejected() {
    let problem = three_drivers_two_routes(1e6);
    assert!(project_to_binary(&problem, &[vec![1.0]], &BnbParams::default()).is_err());
    assert!(project_to_binary(&problem, &[vec![f64::NAN, 1.0]], &BnbParams::default()).is_err());
}

// ---- branch and bound on generic MILPs ----

fn enumerate_binary(milp: &MilpInstance) -> Option<f64> {
    let n = milp.vars.len();
    (0..1u32 << n)
        .filter_map(|mask| {
            let x: Vec<f64> = (0..n).map(|j| f64::from((mask >> j) & 1)).collect();
            milp.is_feasible(&x, 1e-9).then(|| milp.objective_value(&x))
        })
        .min_by(f64::total_cmp)
}

fn random_binary_milp(rng: &mut ChaCha8Rng, n: usize) -> MilpInstance {
    let mut milp = MilpInstance::default();
    for j in 0..n {
        milp.add_var(format!("x{j}"), f64::from(rng.gen_range(-9..10)), 0.0, 1.0, true);
    }
    for k in 0..rng.gen_range(1..=4) {
        let coeffs: Vec<(usize, f64)> = (0..n).map(|j| (j, f64::from(rng.gen_range(-5..6)))).collect();
        let op = [RowOp::Le, RowOp::Ge, RowOp::Eq][rng.gen_range(0..3)];
        let rhs = f64::from(rng.gen_range(-4..8));
        milp.add_row(format!("r{k}"), coeffs, op, rhs);
    }
    milp
}

#[test]
fn ten_variable_milp_matches_enumeration() {
    let mut milp = MilpInstance::default();
    let weights = [4.0, 7.0, 3.0, 9.0, 5.0, 6.0, 2.0, 8.0, 5.0, 3.0];
    let values = [5.0, 9.0, 4.0, 11.0, 6.0, 8.0, 2.0, 10.0, 7.0, 3.0];
    for (j, v) in values.iter().enumerate() {
        milp.add_var(format!("x{j}"), -v, 0.0, 1.0, true);
    }
    milp.add_row("capacity", weights.iter().copied().enumerate().collect(), RowOp::Le, 23.0);
    milp.add_row("pick_pair", vec![(0, 1.0), (9, 1.0)], RowOp::Ge, 1.0);
    let sol = branch_and_bound(&milp, &BnbParams::default()).unwrap();
    assert_eq!(sol.status, BnbStatus::Optimal);
    assert_eq!(sol.objective, enumerate_binary(&milp));
}

#[test]
fn integral_root_needs_one_node() {
    let mut milp = MilpInstance::default();
    let a = milp.add_var("a", 1.0, 0.0, 1.0, true);
    let b = milp.add_var("b", 2.0, 0.0, 1.0, true);
    milp.add_row("cover", vec![(a, 1.0), (b, 1.0)], RowOp::Ge, 1.0);
    let sol = branch_and_bound(&milp, &BnbParams::default()).unwrap();
    assert_eq!(sol.nodes, 1);
    assert_eq!(sol.objective, Some(1.0));
}

#[test]
fn contradictory_row_is_infeasible_at_root() {
    let mut milp = MilpInstance::default();
    let x = milp.add_var("x", 1.0, 0.0, 1.0, true);
    milp.add_row("contradiction", vec![(x, 0.0)], RowOp::Eq, 1.0);
    let sol = branch_and_bound(&milp, &BnbParams::default()).unwrap();
    assert_eq!(sol.status, BnbStatus::Infeasible);
    assert_eq!(sol.nodes, 1);
    assert!(sol.x.is_none());
}

#[test]
fn node_bounds_never_decrease_down_a_branch() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..30 {
        let milp = random_binary_milp(&mut rng, 10);
        let params = BnbParams {
            record_trace: true,
            ..BnbParams::default()
        };
        let sol = branch_and_bound(&milp, &params).unwrap();
        for node in &sol.trace {
            let (Some(parent), Some(bound)) = (node.parent, node.bound) else { continue };
            let parent_bound = sol.trace.iter().find(|n| n.id == parent).and_then(|n| n.bound).unwrap();
            assert!(bound >= parent_bound - 1e-9, "node {} bound {bound} < parent {parent_bound}", node.id);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bnb_equals_enumeration_up_to_twelve_binaries(seed in any::<u64>(), n in 1usize..=12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let milp = random_binary_milp(&mut rng, n);
        let sol = branch_and_bound(&milp, &BnbParams::default()).unwrap();
        match enumerate_binary(&milp) {
            Some(best) => {
                prop_assert_eq!(sol.status, BnbStatus::Optimal);
                prop_assert!((sol.objective.unwrap() - best).abs() <= 1e-9);
                prop_assert!(milp.is_feasible(sol.x.as_ref().unwrap(), 1e-9));
            }
            None => prop_assert_eq!(sol.status, BnbStatus::Infeasible),
        }
    }

    #[test]
    fn evicted_nodes_give_the_same_optimum(seed in any::<u64>(), n in 4usize..=12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let milp = random_binary_milp(&mut rng, n);
        let cold = BnbParams { warm_nodes: 0, ..BnbParams::default() };
        let a = branch_and_bound(&milp, &BnbParams::default()).unwrap();
        let b = branch_and_bound(&milp, &cold).unwrap();
        prop_assert_eq!(a.status, b.status);
        prop_assert_eq!(a.objective.map(|v| (v * 1e6).round()), b.objective.map(|v| (v * 1e6).round()));
    }

    #[test]
    fn projection_equals_enumeration_property(seed in any::<u64>()) {
        let (problem, u_star) = common::enumerable_case(seed);
        assert_matches_enumeration(&problem, &u_star);
    }
}

#[test]
fn mps_export_lists_every_row_and_integer_marker() {
    let problem = three_drivers_two_routes(10.0);
    let milp = projection_milp(&problem, &[vec![1.4, 1.6]]).unwrap();
    let mut buf = Vec::new();
    milp.write_mps("projection", &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let sections: Vec<&str> = text.lines().filter(|l| !l.starts_with(' ')).collect();
    assert_eq!(sections, ["NAME projection", "ROWS", "COLUMNS", "RHS", "BOUNDS", "ENDATA"]);
    let row_lines = text.lines().skip_while(|l| *l != "ROWS").skip(2).take_while(|l| l.starts_with(' ')).count();
    assert_eq!(row_lines, milp.rows.len());
    assert!(text.contains("'INTORG'") && text.contains("'INTEND'"));
}
