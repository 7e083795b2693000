//! The end-to-end pipeline and parameter sweeps.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::admm::{solve_relaxed, Problem, SolverParams};
use crate::projection::{project_to_binary, BnbParams, ProjectedPlan};

use super::config::{InputSpec, SweepAxis};
use super::instance::{min_time_plan, Instance};
use super::report::{AssignmentRow, OrgCostRow, ReportRow};
use super::{HarnessError, Result, Stage};

/// Knobs of one pipeline run on a built instance.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    pub budget: f64,
    pub vot_scale: f64,
    pub solver: SolverParams,
    pub bnb: BnbParams,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            budget: 0.0,
            vot_scale: 1.0,
            solver: SolverParams::default(),
            bnb: BnbParams {
                time_limit: Some(std::time::Duration::from_secs(60)),
                ..BnbParams::default()
            },
        }
    }
}

/// Where the published assignment came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanSource {
    /// Nobody is incentivized; every driver keeps their equilibrium route.
    NoIncentive,
    /// The binary projection of the relaxed solution.
    Projected,
    /// Every participant on their fastest route, which costs nothing.
    MinTime,
    /// A plan found at a smaller budget in the same sweep.
    CarriedForward,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioReport {
    pub scenario: String,
    pub budget: f64,
    pub vot_scale: f64,
    pub num_orgs: usize,
    pub participants: usize,
    /// Vehicle-hours without incentives.
    pub baseline_tt: f64,
    /// Vehicle-hours under the published plan.
    pub incentivized_tt: f64,
    pub decrease_pct: f64,
    pub total_cost: f64,
    pub deviated_count: usize,
    pub cost_per_deviated: Option<f64>,
    pub plan_source: PlanSource,
    /// The projected plan was rejected for being worse than the baseline.
    pub guard_triggered: bool,
    pub admm_iterations: usize,
    pub admm_converged: bool,
    pub admm_primal_residual: f64,
    pub admm_dual_residual: f64,
    pub relaxed_tt: f64,
    pub projection_distance: f64,
    pub projection_status: String,
    pub bnb_nodes: usize,
    pub org_costs: Vec<OrgCostRow>,
    pub assignments: Vec<AssignmentRow>,
    pub plan: ProjectedPlan,
}

impl ScenarioReport {
    pub fn row(&self) -> ReportRow {
        ReportRow {
            scenario: self.scenario.clone(),
            budget: self.budget,
            vot_scale: self.vot_scale,
            num_orgs: self.num_orgs,
            participants: self.participants,
            baseline_tt_vh: self.baseline_tt,
            incentivized_tt_vh: self.incentivized_tt,
            decrease_pct: self.decrease_pct,
            total_cost: self.total_cost,
            deviated_count: self.deviated_count,
            cost_per_deviated: self.cost_per_deviated,
            plan_source: self.plan_source,
            guard_triggered: self.guard_triggered,
            admm_iterations: self.admm_iterations,
            admm_converged: self.admm_converged,
            admm_primal_residual: self.admm_primal_residual,
            admm_dual_residual: self.admm_dual_residual,
            relaxed_tt_vh: self.relaxed_tt,
            projection_distance: self.projection_distance,
            projection_status: self.projection_status.clone(),
            bnb_nodes: self.bnb_nodes,
        }
    }
}

/// System travel time of a plan with background drivers on their
/// equilibrium routes.
pub fn plan_travel_time(problem: &Problem, plan: &ProjectedPlan) -> f64 {
    problem.travel_time(&problem.volumes(&plan.counts_f64()))
}

/// Whether a driver's route is slower than the fastest route of their
/// OD-period. Ties count as not deviated.
fn deviated(problem: &Problem, plan: &ProjectedPlan, i: usize, j: usize) -> bool {
    let org = &problem.orgs[i];
    let (g, _) = org.driver_block(j);
    let p = g.routes.iter().position(|&r| r == plan.routes[i][j]).unwrap_or(0);
    org.delta[g.col_start + p] > org.min_time[j]
}

#[derive(Debug, Clone, Default)]
struct Diagnostics {
    iterations: usize,
    converged: bool,
    primal: f64,
    dual: f64,
    relaxed_tt: f64,
    distance: f64,
    status: String,
    nodes: usize,
}

fn assemble(
    instance: &Instance,
    problem: &Problem,
    scenario: &str,
    settings: &RunSettings,
    baseline_tt: f64,
    chosen: (PlanSource, ProjectedPlan),
    guard_triggered: bool,
    diag: Diagnostics,
) -> ScenarioReport {
    let (source, plan) = chosen;
    let incentivized_tt = plan_travel_time(problem, &plan);
    let counts_deviation = source != PlanSource::NoIncentive;
    let mut org_costs = Vec::with_capacity(problem.num_orgs());
    let mut assignments = Vec::new();
    let mut deviated_count = 0;
    for (i, org) in problem.orgs.iter().enumerate() {
        let mut org_deviated = 0;
        for j in 0..org.num_drivers() {
            let (g, _) = org.driver_block(j);
            let (t, k) = instance.dims.split_od_period(g.od_period);
            let od = instance.demand.od_pairs[k];
            let route = plan.routes[i][j];
            let p = g.routes.iter().position(|&r| r == route).unwrap_or(0);
            let dev = counts_deviation && deviated(problem, &plan, i, j);
            org_deviated += usize::from(dev);
            assignments.push(AssignmentRow {
                scenario: scenario.to_string(),
                org: org.id.clone(),
                driver: j,
                origin: instance.network.node_name(od.origin).to_string(),
                destination: instance.network.node_name(od.destination).to_string(),
                entry_period: t,
                route,
                route_time_min: org.delta[g.col_start + p],
                min_time_min: org.min_time[j],
                deviated: dev,
            });
        }
        deviated_count += org_deviated;
        org_costs.push(OrgCostRow {
            scenario: scenario.to_string(),
            org: org.id.clone(),
            vot_per_min: org.vot_per_min,
            drivers: org.num_drivers(),
            deviated: org_deviated,
            assigned_min: plan.assigned_time[i],
            min_time_min: org.gamma,
            cost: plan.costs[i],
        });
    }
    let total_cost = plan.total_cost();
    let decrease_pct = if baseline_tt > 0.0 {
        100.0 * (baseline_tt - incentivized_tt) / baseline_tt
    } else {
        0.0
    };
    ScenarioReport {
        scenario: scenario.to_string(),
        budget: settings.budget,
        vot_scale: settings.vot_scale,
        num_orgs: problem.num_orgs(),
        participants: problem.orgs.iter().map(|o| o.num_drivers()).sum(),
        baseline_tt,
        incentivized_tt,
        decrease_pct,
        total_cost,
        deviated_count,
        cost_per_deviated: (deviated_count > 0).then(|| total_cost / deviated_count as f64),
        plan_source: source,
        guard_triggered,
        admm_iterations: diag.iterations,
        admm_converged: diag.converged,
        admm_primal_residual: diag.primal,
        admm_dual_residual: diag.dual,
        relaxed_tt: diag.relaxed_tt,
        projection_distance: diag.distance,
        projection_status: diag.status,
        bnb_nodes: diag.nodes,
        org_costs,
        assignments,
        plan,
    }
}

/// Runs relaxed solve, projection and the acceptance guard on a built
/// instance.
pub fn run_with_instance(instance: &Instance, scenario: &str, settings: &RunSettings) -> Result<ScenarioReport> {
    let problem = instance.problem(settings.budget, settings.vot_scale)?;
    let no_incentive = instance.no_incentive_plan(&problem);
    let baseline_tt = plan_travel_time(&problem, &no_incentive);
    if settings.budget == 0.0 {
        let diag = Diagnostics {
            status: "skipped".into(),
            ..Diagnostics::default()
        };
        return Ok(assemble(
            instance,
            &problem,
            scenario,
            settings,
            baseline_tt,
            (PlanSource::NoIncentive, no_incentive),
            false,
            diag,
        ));
    }

    let relaxed = solve_relaxed(&problem, &settings.solver).map_err(|e| HarnessError::stage(Stage::Relaxed, e))?;
    let projected =
        project_to_binary(&problem, &relaxed.u, &settings.bnb).map_err(|e| HarnessError::stage(Stage::Projection, e))?;
    let diag = Diagnostics {
        iterations: relaxed.iterations,
        converged: relaxed.converged,
        primal: relaxed.residuals.primal(),
        dual: relaxed.residuals.dual,
        relaxed_tt: relaxed.travel_time,
        distance: projected.distance,
        status: format!("{:?}", projected.status),
        nodes: projected.nodes,
    };

    let projected_tt = plan_travel_time(&problem, &projected);
    let guard_triggered = projected_tt > baseline_tt;
    let candidates = [(PlanSource::Projected, projected), (PlanSource::MinTime, min_time_plan(&problem))];
    let mut best: Option<(f64, (PlanSource, ProjectedPlan))> = None;
    for (source, plan) in candidates {
        let tt = plan_travel_time(&problem, &plan);
        if tt <= baseline_tt && best.as_ref().is_none_or(|(b, _)| tt < *b) {
            best = Some((tt, (source, plan)));
        }
    }
    let chosen = best.map_or((PlanSource::NoIncentive, no_incentive), |(_, c)| c);
    Ok(assemble(
        instance,
        &problem,
        scenario,
        settings,
        baseline_tt,
        chosen,
        guard_triggered,
        diag,
    ))
}

/// Loads the inputs and runs one scenario.
pub fn run_scenario(input: &InputSpec, scenario: &str, settings: &RunSettings) -> Result<ScenarioReport> {
    let instance = input.instance()?;
    run_with_instance(&instance, scenario, settings)
}

/// Why a sweep cell produced no report.
#[derive(Debug, Clone, PartialEq)]
pub struct CellFailure {
    pub message: String,
    pub infeasible: bool,
    pub diverged: bool,
}

impl From<HarnessError> for CellFailure {
    fn from(e: HarnessError) -> Self {
        CellFailure {
            message: e.to_string(),
            infeasible: e.is_infeasible(),
            diverged: e.is_diverged(),
        }
    }
}

/// One value of a sweep and its outcome.
#[derive(Debug, Clone)]
pub struct SweepCell {
    pub value: f64,
    pub result: std::result::Result<ScenarioReport, CellFailure>,
}

/// Runs one scenario per value, in parallel. Budget sweeps share one
/// instance; after all cells finish, each budget also considers the plans
/// of smaller budgets, which stay affordable.
pub fn sweep(input: &InputSpec, axis: SweepAxis, values: &[f64], base: &RunSettings) -> Result<Vec<SweepCell>> {
    if values.is_empty() {
        return Err(HarnessError::invalid(Stage::Load, "sweep needs at least one value"));
    }
    let label = |v: f64| format!("{}={v}", axis.name());
    let shared = match axis {
        SweepAxis::Budgets | SweepAxis::Vot => Some(input.instance()?),
        SweepAxis::NOrgs | SweepAxis::Participation => None,
    };
    let run_cell = |&value: &f64| -> std::result::Result<ScenarioReport, CellFailure> {
        let mut settings = base.clone();
        match axis {
            SweepAxis::Budgets => settings.budget = value,
            SweepAxis::Vot => settings.vot_scale = value,
            _ => {}
        }
        let result = match &shared {
            Some(instance) => run_with_instance(instance, &label(value), &settings),
            None => input
                .with_axis(axis, value)
                .and_then(|inp| inp.instance())
                .and_then(|instance| run_with_instance(&instance, &label(value), &settings)),
        };
        result.map_err(CellFailure::from)
    };
    let mut cells: Vec<SweepCell> = values
        .par_iter()
        .map(|v| SweepCell {
            value: *v,
            result: run_cell(v),
        })
        .collect();

    if let (SweepAxis::Budgets, Some(instance)) = (axis, &shared) {
        let mut order: Vec<usize> = (0..cells.len()).collect();
        order.sort_by(|&a, &b| cells[a].value.total_cmp(&cells[b].value));
        let mut previous: Option<ProjectedPlan> = None;
        for idx in order {
            let Ok(report) = &cells[idx].result else {
                continue;
            };
            let improved = previous.as_ref().and_then(|plan| {
                let problem = instance.problem(report.budget, base.vot_scale).ok()?;
                let tt = plan_travel_time(&problem, plan);
                (tt < report.incentivized_tt && plan.total_cost() <= report.budget).then_some(())
            });
            if improved.is_some() {
                let mut settings = base.clone();
                settings.budget = cells[idx].value;
                cells[idx].result = rerun_with_carry(instance, report, &settings, previous.as_ref().expect("checked"));
            }
            if let Ok(report) = &cells[idx].result {
                if report.plan_source != PlanSource::NoIncentive {
                    previous = Some(report.plan.clone());
                }
            }
        }
    }
    Ok(cells)
}

/// Rebuilds a cell's report with a carried-forward plan without re-solving.
fn rerun_with_carry(
    instance: &Instance,
    report: &ScenarioReport,
    settings: &RunSettings,
    plan: &ProjectedPlan,
) -> std::result::Result<ScenarioReport, CellFailure> {
    let problem = instance.problem(settings.budget, settings.vot_scale)?;
    let diag = Diagnostics {
        iterations: report.admm_iterations,
        converged: report.admm_converged,
        primal: report.admm_primal_residual,
        dual: report.admm_dual_residual,
        relaxed_tt: report.relaxed_tt,
        distance: report.projection_distance,
        status: report.projection_status.clone(),
        nodes: report.bnb_nodes,
    };
    Ok(assemble(
        instance,
        &problem,
        &report.scenario,
        settings,
        report.baseline_tt,
        (PlanSource::CarriedForward, plan.clone()),
        report.guard_triggered,
        diag,
    ))
}
