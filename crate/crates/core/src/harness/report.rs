//! CSV reports and plot data.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::scenario::{PlanSource, ScenarioReport};
use super::{HarnessError, Result, Stage};

/// One line of `report.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub scenario: String,
    pub budget: f64,
    pub vot_scale: f64,
    pub num_orgs: usize,
    pub participants: usize,
    pub baseline_tt_vh: f64,
    pub incentivized_tt_vh: f64,
    pub decrease_pct: f64,
    pub total_cost: f64,
    pub deviated_count: usize,
    pub cost_per_deviated: Option<f64>,
    pub plan_source: PlanSource,
    pub guard_triggered: bool,
    pub admm_iterations: usize,
    pub admm_converged: bool,
    pub admm_primal_residual: f64,
    pub admm_dual_residual: f64,
    pub relaxed_tt_vh: f64,
    pub projection_distance: f64,
    pub projection_status: String,
    pub bnb_nodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrgCostRow {
    pub scenario: String,
    pub org: String,
    pub vot_per_min: f64,
    pub drivers: usize,
    pub deviated: usize,
    pub assigned_min: f64,
    pub min_time_min: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentRow {
    pub scenario: String,
    pub org: String,
    pub driver: usize,
    pub origin: String,
    pub destination: String,
    pub entry_period: usize,
    pub route: usize,
    pub route_time_min: f64,
    pub min_time_min: f64,
    pub deviated: bool,
}

#[derive(Serialize)]
struct BudgetPoint<'a> {
    scenario: &'a str,
    num_orgs: usize,
    budget: f64,
    value: f64,
}

#[derive(Serialize)]
struct CostDecreasePoint<'a> {
    scenario: &'a str,
    num_orgs: usize,
    total_cost: f64,
    decrease_pct: f64,
}

fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: impl IntoIterator<Item = T>) -> Result<()> {
    let err = |e: &dyn std::fmt::Display| HarnessError::invalid(Stage::Report, format!("{}: {e}", path.display()));
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header).map_err(|e| err(&e))?;
    for row in rows {
        w.serialize(row).map_err(|e| err(&e))?;
    }
    let bytes = w.into_inner().map_err(|e| err(&e))?;
    fs::write(path, bytes).map_err(|e| err(&e))
}

const REPORT_HEADER: &[&str] = &[
    "scenario",
    "budget",
    "vot_scale",
    "num_orgs",
    "participants",
    "baseline_tt_vh",
    "incentivized_tt_vh",
    "decrease_pct",
    "total_cost",
    "deviated_count",
    "cost_per_deviated",
    "plan_source",
    "guard_triggered",
    "admm_iterations",
    "admm_converged",
    "admm_primal_residual",
    "admm_dual_residual",
    "relaxed_tt_vh",
    "projection_distance",
    "projection_status",
    "bnb_nodes",
];

const ORG_HEADER: &[&str] = &[
    "scenario",
    "org",
    "vot_per_min",
    "drivers",
    "deviated",
    "assigned_min",
    "min_time_min",
    "cost",
];

const ASSIGNMENT_HEADER: &[&str] = &[
    "scenario",
    "org",
    "driver",
    "origin",
    "destination",
    "entry_period",
    "route",
    "route_time_min",
    "min_time_min",
    "deviated",
];

/// Writes `report.csv`, `org_costs.csv`, `assignments.csv` and the
/// `plotdata/` series into `outdir`. Headers are written even when there are
/// no reports.
pub fn emit_report(reports: &[ScenarioReport], outdir: impl AsRef<Path>) -> Result<()> {
    let outdir = outdir.as_ref();
    let plot = outdir.join("plotdata");
    fs::create_dir_all(&plot)
        .map_err(|e| HarnessError::invalid(Stage::Report, format!("{}: {e}", plot.display())))?;
    write_csv(&outdir.join("report.csv"), REPORT_HEADER, reports.iter().map(|r| r.row()))?;
    write_csv(
        &outdir.join("org_costs.csv"),
        ORG_HEADER,
        reports.iter().flat_map(|r| r.org_costs.iter()),
    )?;
    write_csv(
        &outdir.join("assignments.csv"),
        ASSIGNMENT_HEADER,
        reports.iter().flat_map(|r| r.assignments.iter()),
    )?;
    let series = |value: fn(&ScenarioReport) -> f64| {
        reports.iter().map(move |r| BudgetPoint {
            scenario: &r.scenario,
            num_orgs: r.num_orgs,
            budget: r.budget,
            value: value(r),
        })
    };
    write_csv(
        &plot.join("budget_vs_decrease.csv"),
        &["scenario", "num_orgs", "budget", "decrease_pct"],
        series(|r| r.decrease_pct),
    )?;
    write_csv(
        &plot.join("budget_vs_cost.csv"),
        &["scenario", "num_orgs", "budget", "total_cost"],
        series(|r| r.total_cost),
    )?;
    write_csv(
        &plot.join("budget_vs_deviated.csv"),
        &["scenario", "num_orgs", "budget", "deviated_count"],
        series(|r| r.deviated_count as f64),
    )?;
    write_csv(
        &plot.join("cost_vs_decrease.csv"),
        &["scenario", "num_orgs", "total_cost", "decrease_pct"],
        reports.iter().map(|r| CostDecreasePoint {
            scenario: &r.scenario,
            num_orgs: r.num_orgs,
            total_cost: r.total_cost,
            decrease_pct: r.decrease_pct,
        }),
    )?;
    Ok(())
}

/// Parses a `report.csv` written by [`emit_report`].
pub fn read_report_rows(path: impl AsRef<Path>) -> Result<Vec<ReportRow>> {
    let path = path.as_ref();
    let err = |e: &dyn std::fmt::Display| HarnessError::invalid(Stage::Report, format!("{}: {e}", path.display()));
    let mut reader = csv::Reader::from_path(path).map_err(|e| err(&e))?;
    reader
        .deserialize()
        .map(|r| r.map_err(|e: csv::Error| err(&e)))
        .collect()
}

#[derive(Serialize)]
struct FailureRow<'a> {
    scenario: String,
    message: &'a str,
}

/// Writes `failed_cells.csv` listing sweep cells that produced no report.
pub fn emit_failures(cells: &[super::scenario::SweepCell], axis: super::config::SweepAxis, outdir: impl AsRef<Path>) -> Result<()> {
    let outdir = outdir.as_ref();
    fs::create_dir_all(outdir)
        .map_err(|e| HarnessError::invalid(Stage::Report, format!("{}: {e}", outdir.display())))?;
    write_csv(
        &outdir.join("failed_cells.csv"),
        &["scenario", "message"],
        cells.iter().filter_map(|c| {
            c.result.as_ref().err().map(|f| FailureRow {
                scenario: format!("{}={}", axis.name(), c.value),
                message: &f.message,
            })
        }),
    )
}
