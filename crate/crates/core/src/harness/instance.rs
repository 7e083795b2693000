//! A loaded scenario: network, demand, roster, routes and the no-incentive
//! reference, ready to be turned into an optimization problem.

use crate::admm::Problem;
use crate::assignment::{
    compute_ue_baseline, fastest_route, route_times_after_choice, Demand, Dims, RouteSet, TravelTimeTables,
    UeBaseline,
};
use crate::incentives::{OrgRoster, Organization};
use crate::network::{Horizon, Network};
use crate::projection::{BnbStatus, ProjectedPlan};

use super::{HarnessError, Result, Stage};

#[derive(Debug, Clone)]
pub struct Instance {
    pub network: Network,
    pub horizon: Horizon,
    pub demand: Demand,
    pub routes: RouteSet,
    pub roster: OrgRoster,
    pub dims: Dims,
    pub ue: UeBaseline,
    pub tables: TravelTimeTables,
    /// Route every driver of an OD-period takes without incentives.
    pub ue_route: Vec<usize>,
    /// Non-participating drivers per choice column, all on `ue_route`.
    pub background_counts: Vec<f64>,
}

impl Instance {
    pub fn build(
        network: Network,
        demand: Demand,
        roster: OrgRoster,
        horizon: Horizon,
        routes_per_od: usize,
    ) -> Result<Self> {
        horizon.validate().map_err(|e| HarnessError::stage(Stage::Load, e))?;
        let routes =
            RouteSet::build(&network, &demand.od_pairs, routes_per_od).map_err(|e| HarnessError::stage(Stage::Routes, e))?;
        let ue = compute_ue_baseline(&network, &demand, &routes, &horizon)
            .map_err(|e| HarnessError::stage(Stage::Baseline, e))?;
        let tables = route_times_after_choice(&ue, &demand, &routes, &network, &horizon)
            .map_err(|e| HarnessError::stage(Stage::Tables, e))?;
        let dims = ue.r_matrix.dims;
        let ue_route: Vec<usize> = (0..dims.od_period_len())
            .map(|row| {
                let (t, k) = dims.split_od_period(row);
                fastest_route(&routes, &dims, &ue.delta, k, t).0
            })
            .collect();
        let mut background_counts = vec![0.0; dims.choice_len()];
        for (row, &q) in roster.background.iter().enumerate() {
            if q > 0 {
                let (t, _) = dims.split_od_period(row);
                background_counts[dims.choice_index(t, ue_route[row])] += f64::from(q);
            }
        }
        Ok(Instance {
            network,
            horizon,
            demand,
            routes,
            roster,
            dims,
            ue,
            tables,
            ue_route,
            background_counts,
        })
    }

    /// The relaxed problem for a budget, with every organization's VOT scaled.
    pub fn problem(&self, budget: f64, vot_scale: f64) -> Result<Problem> {
        let orgs: Vec<Organization> = self
            .roster
            .orgs
            .iter()
            .map(|o| Organization {
                vot_per_min: o.vot_per_min * vot_scale,
                ..o.clone()
            })
            .collect();
        Problem::new(
            &self.network,
            self.ue.r_matrix.clone(),
            &self.routes.od_of_route,
            &self.tables.delta,
            &self.tables.eta,
            &orgs,
            &self.background_counts,
            budget,
        )
        .map_err(|e| HarnessError::stage(Stage::Layout, e))
    }

    /// Every participating driver on the route they would take without
    /// incentives, at zero cost.
    pub fn no_incentive_plan(&self, problem: &Problem) -> ProjectedPlan {
        plan_from(problem, |org, j| {
            let (g, _) = org.driver_block(j);
            let t = self.dims.split_od_period(g.od_period).0;
            let route = self.ue_route[g.od_period];
            (route, self.dims.choice_index(t, route))
        })
    }
}

/// Every participating driver on the fastest route of their OD-period
/// (lowest route id on ties). Feasible for any budget, and pays nothing.
pub fn min_time_plan(problem: &Problem) -> ProjectedPlan {
    plan_from(problem, |org, j| {
        let (g, _) = org.driver_block(j);
        let local = &org.delta[g.col_start..g.col_start + g.num_routes()];
        let mut best = 0;
        for (p, &d) in local.iter().enumerate() {
            if d < local[best] {
                best = p;
            }
        }
        (g.routes[best], org.cols[g.col_start + best])
    })
}

fn plan_from(
    problem: &Problem,
    choose: impl Fn(&crate::admm::OrgProblem, usize) -> (usize, usize),
) -> ProjectedPlan {
    let n = problem.num_orgs();
    let mut plan = ProjectedPlan {
        routes: Vec::with_capacity(n),
        choices: Vec::with_capacity(n),
        counts: Vec::with_capacity(n),
        assigned_time: Vec::with_capacity(n),
        costs: vec![0.0; n],
        distance: 0.0,
        status: BnbStatus::Optimal,
        nodes: 0,
    };
    for org in &problem.orgs {
        let mut routes = Vec::with_capacity(org.num_drivers());
        let mut choices = Vec::with_capacity(org.num_drivers());
        let mut counts = vec![0u32; org.num_cols()];
        let mut assigned = 0.0;
        for j in 0..org.num_drivers() {
            let (route, col) = choose(org, j);
            let (g, _) = org.driver_block(j);
            let p = g.routes.iter().position(|&r| r == route).expect("route serves the OD pair");
            counts[g.col_start + p] += 1;
            assigned += org.delta[g.col_start + p];
            routes.push(route);
            choices.push(col);
        }
        plan.routes.push(routes);
        plan.choices.push(choices);
        plan.counts.push(counts);
        plan.assigned_time.push(assigned);
    }
    plan
}
