//! Rounding a relaxed solution to the nearest feasible binary assignment.
//!
//! The ℓ1 projection only sees aggregated route counts, so drivers of one
//! organization sharing an OD-period and a set of fairness-admissible routes
//! are interchangeable. The MILP therefore works with integer counts per such
//! class; any count vector maps back to a binary assignment with the same
//! aggregates, which keeps the optimum exact.

pub mod bnb;
pub mod milp;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::admm::Problem;
use crate::incentives::incentive_for_total;

pub use bnb::{branch_and_bound, branch_and_bound_from, BnbNode, BnbParams, BnbSolution, BnbStatus, BranchBound};
pub use milp::{MilpInstance, MilpRow, MilpVar, RowOp};

#[derive(Debug, Error)]
pub enum ProjectionError {
    #[error("malformed MILP: {0}")]
    Malformed(String),
    #[error("LP solver failure: {0}")]
    Lp(String),
    #[error("infeasible: organization {org}, driver {driver} (OD-period row {od_period}): {message}")]
    Infeasible {
        org: String,
        driver: usize,
        od_period: usize,
        message: String,
    },
    #[error("dimension mismatch: {what} has length {found}, expected {expected}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("relaxed solution has a non-finite entry for organization {0}")]
    NonFinite(String),
    #[error("time limit reached before a feasible assignment was found")]
    NoFeasibleFound,
    #[error("projection MILP is unbounded")]
    Unbounded,
}

pub type Result<T> = std::result::Result<T, ProjectionError>;

/// A binary assignment with its payments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPlan {
    /// Global route id of every driver, per organization.
    pub routes: Vec<Vec<usize>>,
    /// Choice column `t·P + r` of every driver, per organization.
    pub choices: Vec<Vec<usize>>,
    /// Route counts on each organization's local entries.
    pub counts: Vec<Vec<u32>>,
    /// Aggregate assigned time in minutes, per organization.
    pub assigned_time: Vec<f64>,
    /// Minimal payments for the assignment, in dollars.
    pub costs: Vec<f64>,
    /// ℓ1 distance between the counts and the relaxed route counts.
    pub distance: f64,
    pub status: BnbStatus,
    pub nodes: usize,
}

impl ProjectedPlan {
    pub fn total_cost(&self) -> f64 {
        self.costs.iter().sum()
    }

    /// Counts as floats, the shape [`Problem::volumes`] expects.
    pub fn counts_f64(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|c| c.iter().map(|&x| f64::from(x)).collect())
            .collect()
    }
}

/// Drivers of one group sharing an admissible route set.
#[derive(Debug, Clone)]
struct Class {
    org: usize,
    group: usize,
    /// Positions within the group's route list.
    routes: Vec<usize>,
    drivers: Vec<usize>,
    /// MILP variable of each admissible route.
    vars: Vec<usize>,
}

struct Layout {
    milp: MilpInstance,
    classes: Vec<Class>,
    distance_vars: Vec<usize>,
    /// Count variables and relaxed target behind every distance variable.
    distance_terms: Vec<(Vec<usize>, f64)>,
    cost_vars: Vec<usize>,
    /// `(count variable, α·δ)` terms of every organization's payment row.
    cost_terms: Vec<Vec<(usize, f64)>>,
}

/// Routes a driver may take: those within its fairness bound.
fn admissible(problem: &Problem, i: usize, j: usize) -> Vec<usize> {
    let org = &problem.orgs[i];
    let (g, _) = org.driver_block(j);
    let delta = &org.delta[g.col_start..g.col_start + g.num_routes()];
    (0..g.num_routes()).filter(|&p| delta[p] <= org.fair_bound[j]).collect()
}

/// Finds the first driver, in organization then driver order, with no route
/// meeting its fairness bound.
pub fn infeasibility_certificate(problem: &Problem) -> Option<ProjectionError> {
    for (i, org) in problem.orgs.iter().enumerate() {
        for j in 0..org.num_drivers() {
            if admissible(problem, i, j).is_empty() {
                let (g, _) = org.driver_block(j);
                return Some(ProjectionError::Infeasible {
                    org: org.id.clone(),
                    driver: j,
                    od_period: g.od_period,
                    message: format!("no route meets the fairness bound {} min", org.fair_bound[j]),
                });
            }
        }
    }
    None
}

fn build(problem: &Problem, u_star: &[Vec<f64>], budget: f64) -> Layout {
    let mut milp = MilpInstance::default();
    let mut classes = Vec::new();
    let mut distance_vars = Vec::new();
    let mut distance_terms = Vec::new();
    let mut cost_terms: Vec<Vec<(usize, f64)>> = Vec::with_capacity(problem.num_orgs());
    for (i, org) in problem.orgs.iter().enumerate() {
        let mut org_terms = Vec::new();
        for (gi, g) in org.groups.iter().enumerate() {
            let first_class = classes.len();
            for &j in &g.drivers {
                let routes = admissible(problem, i, j);
                match classes[first_class..].iter_mut().find(|c: &&mut Class| c.routes == routes) {
                    Some(c) => c.drivers.push(j),
                    None => classes.push(Class {
                        org: i,
                        group: gi,
                        routes,
                        drivers: vec![j],
                        vars: Vec::new(),
                    }),
                }
            }
            let mut by_route: Vec<Vec<usize>> = vec![Vec::new(); g.num_routes()];
            for (ci, class) in classes.iter_mut().enumerate().skip(first_class) {
                let n = class.drivers.len() as f64;
                let fixed = class.routes.len() == 1;
                for &p in &class.routes {
                    let v = milp.add_var(
                        format!("x_{}_{}_{}", i, ci, p),
                        0.0,
                        if fixed { n } else { 0.0 },
                        n,
                        true,
                    );
                    class.vars.push(v);
                    by_route[p].push(v);
                    let a = org.vot_per_min * org.delta[g.col_start + p];
                    if a != 0.0 {
                        org_terms.push((v, -a));
                    }
                }
                let row: Vec<(usize, f64)> = class.vars.iter().map(|&v| (v, 1.0)).collect();
                milp.add_row(format!("class_{ci}"), row, RowOp::Eq, n);
            }
            for (p, xs) in by_route.iter().enumerate() {
                let target = u_star[i][g.col_start + p];
                if xs.is_empty() {
                    milp.offset += target.abs();
                    continue;
                }
                let d = milp.add_var(format!("d_{}_{}_{}", i, gi, p), 1.0, 0.0, f64::INFINITY, false);
                distance_vars.push(d);
                distance_terms.push((xs.clone(), target));
                let mut above = vec![(d, 1.0)];
                above.extend(xs.iter().map(|&x| (x, -1.0)));
                milp.add_row(format!("dist_lo_{d}"), above, RowOp::Ge, -target);
                let mut below = vec![(d, 1.0)];
                below.extend(xs.iter().map(|&x| (x, 1.0)));
                milp.add_row(format!("dist_hi_{d}"), below, RowOp::Ge, target);
            }
        }
        cost_terms.push(org_terms);
    }
    let mut cost_vars = Vec::with_capacity(problem.num_orgs());
    for (i, (org, terms)) in problem.orgs.iter().zip(cost_terms.clone()).enumerate() {
        let c = milp.add_var(format!("c_{i}"), 0.0, 0.0, f64::INFINITY, false);
        cost_vars.push(c);
        if !terms.is_empty() {
            let mut row = vec![(c, 1.0)];
            row.extend(terms);
            milp.add_row(format!("incentive_{i}"), row, RowOp::Ge, -org.vot_per_min * org.gamma);
        }
    }
    milp.add_row("budget", cost_vars.iter().map(|&c| (c, 1.0)).collect(), RowOp::Le, budget);
    Layout {
        milp,
        classes,
        distance_vars,
        distance_terms,
        cost_vars,
        cost_terms,
    }
}

/// The MILP point putting every class on its fastest admissible route, which
/// is feasible for any budget.
fn fastest_point(problem: &Problem, layout: &Layout) -> Vec<f64> {
    let mut x = vec![0.0; layout.milp.vars.len()];
    for class in &layout.classes {
        let org = &problem.orgs[class.org];
        let g = &org.groups[class.group];
        let fastest = (0..class.routes.len())
            .min_by(|&a, &b| org.delta[g.col_start + class.routes[a]].total_cmp(&org.delta[g.col_start + class.routes[b]]))
            .expect("classes have an admissible route");
        x[class.vars[fastest]] = class.drivers.len() as f64;
    }
    for (&d, (xs, target)) in layout.distance_vars.iter().zip(&layout.distance_terms) {
        x[d] = (xs.iter().map(|&v| x[v]).sum::<f64>() - target).abs();
    }
    for ((&c, terms), org) in layout.cost_vars.iter().zip(&layout.cost_terms).zip(&problem.orgs) {
        let owed = terms.iter().map(|&(v, a)| -a * x[v]).sum::<f64>() - org.vot_per_min * org.gamma;
        x[c] = owed.max(0.0);
    }
    x
}

/// Maps class counts to drivers: within a class, drivers in ascending order
/// fill routes in ascending order.
fn decode(problem: &Problem, u_star: &[Vec<f64>], layout: &Layout, x: &[f64]) -> ProjectedPlan {
    let n = problem.num_orgs();
    let mut routes: Vec<Vec<usize>> = problem.orgs.iter().map(|o| vec![0; o.num_drivers()]).collect();
    let mut choices = routes.clone();
    let mut counts: Vec<Vec<u32>> = problem.orgs.iter().map(|o| vec![0; o.num_cols()]).collect();
    for class in &layout.classes {
        let org = &problem.orgs[class.org];
        let g = &org.groups[class.group];
        let mut drivers = class.drivers.iter();
        for (&p, &v) in class.routes.iter().zip(&class.vars) {
            let k = x[v].round() as u32;
            counts[class.org][g.col_start + p] += k;
            for &j in drivers.by_ref().take(k as usize) {
                routes[class.org][j] = g.routes[p];
                choices[class.org][j] = org.cols[g.col_start + p];
            }
        }
    }
    let mut assigned_time = vec![0.0; n];
    let mut costs = vec![0.0; n];
    let mut distance = 0.0;
    for (i, org) in problem.orgs.iter().enumerate() {
        let local: Vec<usize> = (0..org.num_drivers())
            .map(|j| {
                let (g, _) = org.driver_block(j);
                let p = g.routes.iter().position(|&r| r == routes[i][j]).unwrap_or(0);
                g.col_start + p
            })
            .collect();
        assigned_time[i] = local.iter().map(|&c| org.delta[c]).sum();
        costs[i] = incentive_for_total(org.vot_per_min, assigned_time[i], org.gamma);
        distance += counts[i]
            .iter()
            .zip(&u_star[i])
            .map(|(&k, &u)| (f64::from(k) - u).abs())
            .sum::<f64>();
    }
    ProjectedPlan {
        routes,
        choices,
        counts,
        assigned_time,
        costs,
        distance,
        status: BnbStatus::Optimal,
        nodes: 0,
    }
}

fn check_input(problem: &Problem, u_star: &[Vec<f64>]) -> Result<()> {
    if u_star.len() != problem.num_orgs() {
        return Err(ProjectionError::Dimension {
            what: "relaxed route counts",
            expected: problem.num_orgs(),
            found: u_star.len(),
        });
    }
    for (org, u) in problem.orgs.iter().zip(u_star) {
        if u.len() != org.num_cols() {
            return Err(ProjectionError::Dimension {
                what: "organization route counts",
                expected: org.num_cols(),
                found: u.len(),
            });
        }
        if u.iter().any(|x| !x.is_finite()) {
            return Err(ProjectionError::NonFinite(org.id.clone()));
        }
    }
    Ok(())
}

fn solved(sol: &BnbSolution) -> Result<&[f64]> {
    match sol.status {
        BnbStatus::Optimal | BnbStatus::TimeLimit { .. } => Ok(sol.x.as_deref().expect("incumbent present")),
        BnbStatus::NoFeasibleFound => Err(ProjectionError::NoFeasibleFound),
        BnbStatus::Unbounded => Err(ProjectionError::Unbounded),
        BnbStatus::Infeasible => Err(ProjectionError::Malformed(
            "projection MILP reported infeasible although the minimum-time plan is feasible".into(),
        )),
    }
}

/// The MILP solved in the first stage, for inspection or export.
pub fn projection_milp(problem: &Problem, u_star: &[Vec<f64>]) -> Result<MilpInstance> {
    check_input(problem, u_star)?;
    if let Some(err) = infeasibility_certificate(problem) {
        return Err(err);
    }
    Ok(build(problem, u_star, problem.budget).milp)
}

/// Nearest binary assignment (ℓ1 on aggregated route counts) satisfying
/// demand, one-route-per-driver, fairness, payment and budget constraints.
/// Ties in distance go to the smaller total payment.
pub fn project_to_binary(problem: &Problem, u_star: &[Vec<f64>], params: &BnbParams) -> Result<ProjectedPlan> {
    check_input(problem, u_star)?;
    if let Some(err) = infeasibility_certificate(problem) {
        return Err(err);
    }
    let mut budget = problem.budget;
    // LP tolerances can leave the exactly recomputed payments a hair over
    // budget; shrink the budget row by the excess and retry.
    for _ in 0..4 {
        let layout = build(problem, u_star, budget);
        let start = fastest_point(problem, &layout);
        let start = layout.milp.is_feasible(&start, 1e-9).then_some(start);
        let first = branch_and_bound_from(&layout.milp, params, start.as_deref())?;
        let x = solved(&first)?;
        let mut plan = decode(problem, u_star, &layout, x);
        plan.status = first.status;
        plan.nodes = first.nodes;

        if plan.total_cost() > 0.0 {
            let cap = plan.distance - layout.milp.offset + params.gap_tol.max(1e-9) * plan.distance.max(1.0);
            let mut second = layout.milp.clone();
            for v in &mut second.vars {
                v.objective = 0.0;
            }
            for &c in &layout.cost_vars {
                second.vars[c].objective = 1.0;
            }
            second.offset = 0.0;
            let row = layout.distance_vars.iter().map(|&d| (d, 1.0)).collect();
            second.add_row("distance_cap", row, RowOp::Le, cap);
            let start = second.is_feasible(x, 1e-9).then_some(x);
            let tie = branch_and_bound_from(&second, params, start)?;
            plan.nodes += tie.nodes;
            if let Ok(x) = solved(&tie) {
                let candidate = decode(problem, u_star, &layout, x);
                if candidate.total_cost() < plan.total_cost() && candidate.distance <= plan.distance + 1e-9 * plan.distance.max(1.0) {
                    plan = ProjectedPlan {
                        status: plan.status,
                        nodes: plan.nodes,
                        ..candidate
                    };
                }
            }
        }

        let total = plan.total_cost();
        if total <= problem.budget {
            return Ok(plan);
        }
        budget -= (total - problem.budget) + 1e-9 * problem.budget.max(1.0);
        budget = budget.max(0.0);
    }
    Err(ProjectionError::Malformed(
        "payments exceed the budget after repeated tightening".into(),
    ))
}

/// Every way a plan can break the binary constraint system. Empty means the
/// plan satisfies it exactly.
pub fn verify_plan(problem: &Problem, plan: &ProjectedPlan) -> Vec<String> {
    let mut out = Vec::new();
    if plan.routes.len() != problem.num_orgs() || plan.costs.len() != problem.num_orgs() {
        out.push("plan shape does not match the problem".into());
        return out;
    }
    let mut total = 0.0;
    for (i, org) in problem.orgs.iter().enumerate() {
        if plan.routes[i].len() != org.num_drivers() || plan.choices[i].len() != org.num_drivers() {
            out.push(format!("organization {}: wrong driver count", org.id));
            continue;
        }
        let mut counts = vec![0u32; org.num_cols()];
        let mut assigned = 0.0;
        for j in 0..org.num_drivers() {
            let (g, _) = org.driver_block(j);
            let Some(p) = g.routes.iter().position(|&r| r == plan.routes[i][j]) else {
                out.push(format!("organization {}, driver {j}: route not serving its OD pair", org.id));
                continue;
            };
            let col = g.col_start + p;
            if plan.choices[i][j] != org.cols[col] {
                out.push(format!("organization {}, driver {j}: choice column disagrees with route", org.id));
            }
            counts[col] += 1;
            assigned += org.delta[col];
            if org.delta[col] > org.fair_bound[j] {
                out.push(format!(
                    "organization {}, driver {j}: route time {} exceeds fairness bound {}",
                    org.id, org.delta[col], org.fair_bound[j]
                ));
            }
        }
        if counts != plan.counts[i] {
            out.push(format!("organization {}: counts disagree with drivers", org.id));
        }
        for g in &org.groups {
            let n: u32 = counts[g.col_start..g.col_start + g.num_routes()].iter().sum();
            if f64::from(n) != g.demand {
                out.push(format!("organization {}: OD-period row {} demand not met", org.id, g.od_period));
            }
        }
        let c = plan.costs[i];
        let owed = incentive_for_total(org.vot_per_min, assigned, org.gamma);
        if c < 0.0 {
            out.push(format!("organization {}: negative payment {c}", org.id));
        }
        if c != owed {
            out.push(format!("organization {}: payment {c} differs from owed {owed}", org.id));
        }
        total += c;
    }
    if total > problem.budget {
        out.push(format!("total payment {total} exceeds budget {}", problem.budget));
    }
    out
}
