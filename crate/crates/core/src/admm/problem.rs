//! Layout of the relaxed assignment problem solved by ADMM.
//!
//! Assignment matrices are stored sparsely: a driver may only use the routes
//! of its own OD pair at its own entry period, so every organization's
//! variables split into dense blocks, one per OD-period it touches.

use crate::assignment::{Dims, RMatrix};
use crate::incentives::Organization;
use crate::network::{BprParams, Network};

use super::{AdmmError, Result};

/// Drivers of one organization sharing an OD-period.
#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub od_period: usize,
    /// Global route ids available to the group, in route order.
    pub routes: Vec<usize>,
    /// Organization driver indices, ascending.
    pub drivers: Vec<usize>,
    /// First local entry of this group in the organization's route-count vector.
    pub col_start: usize,
    /// First entry of this group's block in the flattened assignment storage.
    pub slot_start: usize,
    /// Drivers of the organization in this group.
    pub demand: f64,
}

impl Group {
    pub fn num_routes(&self) -> usize {
        self.routes.len()
    }
    pub fn num_drivers(&self) -> usize {
        self.drivers.len()
    }
    /// Flattened offset of the column of the `k`-th driver in this group.
    pub fn slot(&self, k: usize) -> usize {
        self.slot_start + k * self.routes.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrgProblem {
    pub id: String,
    pub vot_per_min: f64,
    /// Minimum-time total in minutes.
    pub gamma: f64,
    pub groups: Vec<Group>,
    /// Global choice column of every local route-count entry.
    pub cols: Vec<usize>,
    /// Route time in minutes of every local entry.
    pub delta: Vec<f64>,
    /// `(group, position within group)` of every driver.
    pub driver_slot: Vec<(usize, usize)>,
    /// Fairness bound `b_j · η` in minutes of every driver.
    pub fair_bound: Vec<f64>,
    /// OD-period minimum time `η` in minutes of every driver.
    pub min_time: Vec<f64>,
    /// Route times of every driver's block divided by the longest route
    /// time of the block, in the flattened slot layout. The solver works on
    /// these equilibrated fairness rows rather than rows in minutes.
    pub fair_delta: Vec<f64>,
    /// Right-hand side of every driver's scaled fairness row.
    pub fair_rhs: Vec<f64>,
    /// Factor applied to every driver's fairness row.
    pub fair_scale: Vec<f64>,
    pub num_slots: usize,
}

impl OrgProblem {
    pub fn num_drivers(&self) -> usize {
        self.driver_slot.len()
    }
    pub fn num_cols(&self) -> usize {
        self.cols.len()
    }
    /// `(group, flattened offset, route count)` of driver `j`.
    pub fn driver_block(&self, j: usize) -> (&Group, usize) {
        let (g, k) = self.driver_slot[j];
        let group = &self.groups[g];
        (group, group.slot(k))
    }
}

/// Everything the ADMM iterations read; immutable during a solve.
#[derive(Debug, Clone)]
pub struct Problem {
    pub dims: Dims,
    pub r: RMatrix,
    /// BPR parameters of every volume row.
    pub link_params: Vec<BprParams>,
    /// Volumes of the frozen background drivers.
    pub background_volumes: Vec<f64>,
    pub orgs: Vec<OrgProblem>,
    /// Dollars.
    pub budget: f64,
    /// Route times in minutes per choice column.
    pub delta: Vec<f64>,
    /// Solver units per dollar: the inverse of the largest `α δ` entry, so
    /// payment-row coefficients are at most one.
    pub pay_weight: f64,
}

impl Problem {
    /// Lays out the relaxed problem. `background_counts` is the per-column
    /// driver count of non-participating drivers.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        network: &Network,
        r: RMatrix,
        route_od: &[usize],
        delta: &[f64],
        eta: &[f64],
        orgs: &[Organization],
        background_counts: &[f64],
        budget: f64,
    ) -> Result<Self> {
        let dims = r.dims;
        let dim = |what: &'static str, found: usize, expected: usize| {
            if found == expected {
                Ok(())
            } else {
                Err(AdmmError::Dimension {
                    what,
                    expected,
                    found,
                })
            }
        };
        dim("delta", delta.len(), dims.choice_len())?;
        dim("eta", eta.len(), dims.od_period_len())?;
        dim("background counts", background_counts.len(), dims.choice_len())?;
        dim("route OD map", route_od.len(), dims.num_routes)?;
        dim("network links", network.num_links(), dims.num_links)?;
        if !(budget >= 0.0 && budget.is_finite()) {
            return Err(AdmmError::InvalidParams(format!(
                "budget must be nonnegative and finite, got {budget}"
            )));
        }
        let mut routes_of_od = vec![Vec::new(); dims.num_ods];
        for (r, &k) in route_od.iter().enumerate() {
            routes_of_od[k].push(r);
        }
        let link_params = (0..dims.volume_len())
            .map(|row| {
                let (t, l) = dims.split_volume(row);
                network.links[l].params(t)
            })
            .collect();
        let background_volumes = r.mul(background_counts)?;

        let mut org_problems = Vec::with_capacity(orgs.len());
        for org in orgs {
            org_problems.push(build_org(org, &dims, &routes_of_od, delta, eta)?);
        }
        let largest = org_problems
            .iter()
            .flat_map(|o| o.delta.iter().map(move |&d| o.vot_per_min * d))
            .fold(0.0, f64::max);
        let pay_weight = if largest > 0.0 { 1.0 / largest } else { 1.0 };
        Ok(Problem {
            dims,
            r,
            link_params,
            background_volumes,
            orgs: org_problems,
            budget,
            delta: delta.to_vec(),
            pay_weight,
        })
    }

    pub fn num_orgs(&self) -> usize {
        self.orgs.len()
    }

    /// VOT of an organization in solver units per minute.
    pub fn scaled_vot(&self, org: &OrgProblem) -> f64 {
        org.vot_per_min * self.pay_weight
    }

    pub fn scaled_budget(&self) -> f64 {
        self.budget * self.pay_weight
    }

    /// System travel time (vehicle-hours) at the given volumes.
    pub fn travel_time(&self, volumes: &[f64]) -> f64 {
        volumes
            .iter()
            .zip(&self.link_params)
            .map(|(&v, p)| {
                let v = v.max(0.0);
                v * p.travel_time(v)
            })
            .sum()
    }

    /// Link volumes `R Σ u_i + v_bg` for per-organization local route counts.
    pub fn volumes(&self, u: &[Vec<f64>]) -> Vec<f64> {
        let mut out = self.background_volumes.clone();
        for (org, ui) in self.orgs.iter().zip(u) {
            for (&col, &x) in org.cols.iter().zip(ui) {
                if x != 0.0 {
                    for &(row, v) in &self.r.columns[col] {
                        out[row] += v * x;
                    }
                }
            }
        }
        out
    }
}

fn build_org(
    org: &Organization,
    dims: &Dims,
    routes_of_od: &[Vec<usize>],
    delta: &[f64],
    eta: &[f64],
) -> Result<OrgProblem> {
    org.validate().map_err(|e| AdmmError::InvalidParams(e.to_string()))?;
    // groups ordered by OD-period row
    let mut by_row: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (j, d) in org.drivers.iter().enumerate() {
        if d.od >= dims.num_ods || d.entry_period >= dims.num_periods {
            return Err(AdmmError::Infeasible {
                org: org.id.clone(),
                driver: j,
                message: format!("OD {} at period {} is not in the demand table", d.od, d.entry_period),
            });
        }
        by_row.entry(dims.od_period_index(d.entry_period, d.od)).or_default().push(j);
    }
    let mut groups = Vec::with_capacity(by_row.len());
    let mut cols = Vec::new();
    let mut local_delta = Vec::new();
    let mut driver_slot = vec![(0, 0); org.drivers.len()];
    let mut fair_bound = vec![0.0; org.drivers.len()];
    let mut min_time = vec![0.0; org.drivers.len()];
    let mut fair_delta = Vec::new();
    let mut fair_rhs = vec![0.0; org.drivers.len()];
    let mut fair_scale = vec![1.0; org.drivers.len()];
    let mut slot = 0;
    for (row, drivers) in by_row {
        let (t, k) = dims.split_od_period(row);
        let routes = routes_of_od[k].clone();
        if routes.is_empty() {
            return Err(AdmmError::Infeasible {
                org: org.id.clone(),
                driver: drivers[0],
                message: "OD pair has no route".into(),
            });
        }
        let g = groups.len();
        let group_delta: Vec<f64> = routes.iter().map(|&r| delta[dims.choice_index(t, r)]).collect();
        for (pos, &j) in drivers.iter().enumerate() {
            driver_slot[j] = (g, pos);
            let bound = org.drivers[j].b_factor * eta[row];
            if !group_delta.iter().any(|&d| d <= bound) {
                return Err(AdmmError::Infeasible {
                    org: org.id.clone(),
                    driver: j,
                    message: format!("no route meets the fairness bound {bound} min"),
                });
            }
            fair_bound[j] = bound;
            min_time[j] = eta[row];
        }
        groups.push(Group {
            od_period: row,
            col_start: cols.len(),
            slot_start: slot,
            demand: drivers.len() as f64,
            routes: routes.clone(),
            drivers,
        });
        let longest = group_delta.iter().copied().fold(0.0, f64::max);
        for &j in &groups[g].drivers {
            let w = if longest > 0.0 { 1.0 / longest } else { 1.0 };
            fair_delta.extend(group_delta.iter().map(|&d| d * w));
            fair_rhs[j] = org.drivers[j].b_factor * eta[row] * w;
            fair_scale[j] = w;
        }
        slot += routes.len() * groups[g].drivers.len();
        cols.extend(routes.iter().map(|&r| dims.choice_index(t, r)));
        local_delta.extend(group_delta);
    }
    // summed in driver order so a min-time plan reproduces it bit for bit
    let gamma = min_time.iter().sum();
    Ok(OrgProblem {
        id: org.id.clone(),
        vot_per_min: org.vot_per_min,
        gamma,
        groups,
        cols,
        delta: local_delta,
        driver_slot,
        fair_bound,
        min_time,
        fair_delta,
        fair_rhs,
        fair_scale,
        num_slots: slot,
    })
}
