//! Organizations, incentive valuation, and budget accounting.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::{Demand, Dims};
use crate::network::Network;

#[derive(Debug, Error)]
pub enum IncentiveError {
    #[error("cannot read organizations file {path}: {message}")]
    Io { path: String, message: String },
    #[error("organizations parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("organization {org}: {message}")]
    InvalidOrg { org: String, message: String },
    #[error("organization {org}, driver {driver}: {message}")]
    InvalidDriver {
        org: String,
        driver: usize,
        message: String,
    },
    #[error("organizations list {count} drivers for OD {origin} -> {destination} at period {period} but demand has only {demand}")]
    DemandExceeded {
        origin: String,
        destination: String,
        period: usize,
        count: u32,
        demand: u32,
    },
    #[error("dimension mismatch: {what} has length {found}, expected {expected}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("partitions cover different driver sets")]
    PartitionMismatch,
    #[error("second partition is not coarser than the first")]
    NotCoarser,
}

pub type Result<T> = std::result::Result<T, IncentiveError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Driver {
    /// Index into the demand's OD list.
    pub od: usize,
    pub entry_period: usize,
    /// Tolerated multiple of the OD-period minimum time.
    pub b_factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Organization {
    pub id: String,
    /// Dollars per minute.
    pub vot_per_min: f64,
    pub drivers: Vec<Driver>,
}

impl Organization {
    pub fn validate(&self) -> Result<()> {
        if !(self.vot_per_min >= 0.0 && self.vot_per_min.is_finite()) {
            return Err(IncentiveError::InvalidOrg {
                org: self.id.clone(),
                message: format!("VOT must be nonnegative and finite, got {}", self.vot_per_min),
            });
        }
        for (j, d) in self.drivers.iter().enumerate() {
            if !(d.b_factor >= 1.0 && d.b_factor.is_finite()) {
                return Err(IncentiveError::InvalidDriver {
                    org: self.id.clone(),
                    driver: j,
                    message: format!("b_factor must be at least 1, got {}", d.b_factor),
                });
            }
        }
        Ok(())
    }

    pub fn b_factors(&self) -> Vec<f64> {
        self.drivers.iter().map(|d| d.b_factor).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriverRecord {
    pub origin: String,
    pub destination: String,
    pub entry_period: usize,
    #[serde(default = "one")]
    pub b_factor: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrganizationRecord {
    pub id: String,
    #[serde(default)]
    pub vot_per_min: f64,
    #[serde(default)]
    pub drivers: Vec<DriverRecord>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub background: bool,
}

/// Participating organizations plus the residual (background) driver counts
/// per OD-period row.
#[derive(Debug, Clone, PartialEq)]
pub struct OrgRoster {
    pub orgs: Vec<Organization>,
    pub background: Vec<u32>,
}

impl OrgRoster {
    /// Resolves file records against the network and demand. Background
    /// drivers are whatever demand the participating organizations leave.
    pub fn from_records(
        records: &[OrganizationRecord],
        network: &Network,
        demand: &Demand,
        analysis_periods: usize,
    ) -> Result<Self> {
        let num_ods = demand.od_pairs.len();
        let mut used = vec![0u32; demand.counts.len()];
        let mut orgs = Vec::new();
        let mut seen = BTreeSet::new();
        for rec in records.iter().filter(|r| !r.background) {
            if !seen.insert(rec.id.clone()) {
                return Err(IncentiveError::InvalidOrg {
                    org: rec.id.clone(),
                    message: "duplicate organization id".into(),
                });
            }
            let mut drivers = Vec::with_capacity(rec.drivers.len());
            for (j, d) in rec.drivers.iter().enumerate() {
                let bad = |message: String| IncentiveError::InvalidDriver {
                    org: rec.id.clone(),
                    driver: j,
                    message,
                };
                let od = network
                    .od(&d.origin, &d.destination)
                    .map_err(|e| bad(e.to_string()))?;
                let k = demand.od_index(od).ok_or_else(|| {
                    bad(format!("unknown OD {} -> {}", d.origin, d.destination))
                })?;
                if d.entry_period >= analysis_periods {
                    return Err(bad(format!(
                        "entry period {} is outside the {analysis_periods} incentivized periods",
                        d.entry_period
                    )));
                }
                used[d.entry_period * num_ods + k] += 1;
                drivers.push(Driver {
                    od: k,
                    entry_period: d.entry_period,
                    b_factor: d.b_factor,
                });
            }
            let org = Organization {
                id: rec.id.clone(),
                vot_per_min: rec.vot_per_min,
                drivers,
            };
            org.validate()?;
            orgs.push(org);
        }
        let mut background = Vec::with_capacity(used.len());
        for (row, (&q, &u)) in demand.counts.iter().zip(&used).enumerate() {
            if u > q {
                let od = demand.od_pairs[row % num_ods];
                return Err(IncentiveError::DemandExceeded {
                    origin: network.node_name(od.origin).to_string(),
                    destination: network.node_name(od.destination).to_string(),
                    period: row / num_ods,
                    count: u,
                    demand: q,
                });
            }
            background.push(q - u);
        }
        Ok(OrgRoster { orgs, background })
    }

    pub fn to_records(&self, network: &Network, demand: &Demand) -> Vec<OrganizationRecord> {
        let mut out: Vec<OrganizationRecord> = self
            .orgs
            .iter()
            .map(|o| OrganizationRecord {
                id: o.id.clone(),
                vot_per_min: o.vot_per_min,
                drivers: o
                    .drivers
                    .iter()
                    .map(|d| {
                        let od = demand.od_pairs[d.od];
                        DriverRecord {
                            origin: network.node_name(od.origin).to_string(),
                            destination: network.node_name(od.destination).to_string(),
                            entry_period: d.entry_period,
                            b_factor: d.b_factor,
                        }
                    })
                    .collect(),
                background: false,
            })
            .collect();
        out.push(OrganizationRecord {
            id: "background".into(),
            vot_per_min: 0.0,
            drivers: Vec::new(),
            background: true,
        });
        out
    }

    pub fn num_drivers(&self) -> usize {
        self.orgs.iter().map(|o| o.drivers.len()).sum()
    }
}

pub fn parse_org_records(text: &str) -> Result<Vec<OrganizationRecord>> {
    serde_json::from_str(text).map_err(|e| IncentiveError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

pub fn load_organizations(
    path: impl AsRef<Path>,
    network: &Network,
    demand: &Demand,
    analysis_periods: usize,
) -> Result<OrgRoster> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| IncentiveError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    OrgRoster::from_records(&parse_org_records(&text)?, network, demand, analysis_periods)
}

/// Incentive owed for an aggregate assigned time (minutes) against the
/// organization's minimum-time total `gamma`.
pub fn incentive_for_total(vot_per_min: f64, assigned_total_min: f64, gamma: f64) -> f64 {
    vot_per_min * (assigned_total_min - gamma).max(0.0)
}

/// Incentive owed to an organization whose drivers take the given choice
/// columns (one per driver).
pub fn incentive_value(org: &Organization, gamma: f64, choices: &[usize], delta: &[f64]) -> Result<f64> {
    if choices.len() != org.drivers.len() {
        return Err(IncentiveError::Dimension {
            what: "choices",
            expected: org.drivers.len(),
            found: choices.len(),
        });
    }
    let mut total = 0.0;
    for &c in choices {
        total += *delta.get(c).ok_or(IncentiveError::Dimension {
            what: "delta",
            expected: c + 1,
            found: delta.len(),
        })?;
    }
    Ok(incentive_for_total(org.vot_per_min, total, gamma))
}

/// Cost of paying each block of a partition for its aggregate time change.
/// `time_change[j]` is driver `j`'s assigned time minus their minimum time.
pub fn partition_cost(vot_per_min: f64, time_change: &[f64], partition: &[Vec<usize>]) -> f64 {
    partition
        .iter()
        .map(|block| {
            let net: f64 = block.iter().map(|&j| time_change[j]).sum();
            vot_per_min * net.max(0.0)
        })
        .sum()
}

/// Costs of a fine and a coarser partition of the same drivers under a fixed
/// assignment. The coarse cost never exceeds the fine one.
pub fn merged_cost_dominance(
    vot_per_min: f64,
    time_change: &[f64],
    fine: &[Vec<usize>],
    coarse: &[Vec<usize>],
) -> Result<(f64, f64)> {
    let members = |p: &[Vec<usize>]| -> Vec<usize> {
        let mut v: Vec<usize> = p.iter().flatten().copied().collect();
        v.sort_unstable();
        v
    };
    let fine_members = members(fine);
    if fine_members != members(coarse) || fine_members.windows(2).any(|w| w[0] == w[1]) {
        return Err(IncentiveError::PartitionMismatch);
    }
    if fine_members.last().is_some_and(|&j| j >= time_change.len()) {
        return Err(IncentiveError::Dimension {
            what: "time_change",
            expected: fine_members.last().unwrap() + 1,
            found: time_change.len(),
        });
    }
    let mut block_of = vec![usize::MAX; time_change.len()];
    for (b, block) in coarse.iter().enumerate() {
        for &j in block {
            block_of[j] = b;
        }
    }
    for block in fine {
        if let Some(&first) = block.first() {
            if block.iter().any(|&j| block_of[j] != block_of[first]) {
                return Err(IncentiveError::NotCoarser);
            }
        }
    }
    Ok((
        partition_cost(vot_per_min, time_change, fine),
        partition_cost(vot_per_min, time_change, coarse),
    ))
}

/// Per-organization payments under a budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncentiveOutcome {
    pub per_org_cost: Vec<f64>,
    pub budget: f64,
}

impl IncentiveOutcome {
    pub fn total_cost(&self) -> f64 {
        self.per_org_cost.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Underpaid {
        org: String,
        paid: f64,
        owed: f64,
    },
    NegativePayment {
        org: String,
        paid: f64,
    },
    OverBudget {
        total: f64,
        budget: f64,
    },
    Shape {
        expected: usize,
        found: usize,
    },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::Underpaid { org, paid, owed } => {
                write!(f, "organization {org} paid {paid} but is owed {owed}")
            }
            Violation::NegativePayment { org, paid } => {
                write!(f, "organization {org} has negative payment {paid}")
            }
            Violation::OverBudget { total, budget } => {
                write!(f, "total payment {total} exceeds budget {budget}")
            }
            Violation::Shape { expected, found } => {
                write!(f, "{found} payments for {expected} organizations")
            }
        }
    }
}

/// Checks payment sufficiency, nonnegativity and the budget. `assigned_totals`
/// holds each organization's aggregate assigned time and `gammas` its
/// minimum-time total, both in minutes.
pub fn validate_outcome(
    outcome: &IncentiveOutcome,
    orgs: &[Organization],
    assigned_totals: &[f64],
    gammas: &[f64],
) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = orgs.len();
    for found in [outcome.per_org_cost.len(), assigned_totals.len(), gammas.len()] {
        if found != n {
            out.push(Violation::Shape { expected: n, found });
            return out;
        }
    }
    for (i, org) in orgs.iter().enumerate() {
        let paid = outcome.per_org_cost[i];
        let owed = org.vot_per_min * (assigned_totals[i] - gammas[i]);
        let tol = 1e-9 * owed.abs().max(1.0);
        if paid < 0.0 {
            out.push(Violation::NegativePayment {
                org: org.id.clone(),
                paid,
            });
        }
        if paid + tol < owed {
            out.push(Violation::Underpaid {
                org: org.id.clone(),
                paid,
                owed,
            });
        }
    }
    let total = outcome.total_cost();
    if total > outcome.budget + 1e-6 * outcome.budget.max(1.0) {
        out.push(Violation::OverBudget {
            total,
            budget: outcome.budget,
        });
    }
    out
}

/// Number of OD-period rows used by a roster (for shape checks).
pub fn driver_od_periods(org: &Organization, dims: &Dims) -> Vec<usize> {
    org.drivers
        .iter()
        .map(|d| dims.od_period_index(d.entry_period, d.od))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn org(vot: f64, n: usize) -> Organization {
        Organization {
            id: "o".into(),
            vot_per_min: vot,
            drivers: vec![
                Driver {
                    od: 0,
                    entry_period: 0,
                    b_factor: 1.0
                };
                n
            ],
        }
    }

    #[test]
    fn scenario_two_single_organization() {
        // 15 drivers lose 5 minutes, 5 gain 5 minutes
        assert_eq!(incentive_for_total(1.0, 75.0 - 25.0, 0.0), 50.0);
    }

    #[test]
    fn no_payment_when_not_slower() {
        assert_eq!(incentive_for_total(3.0, 40.0, 41.0), 0.0);
        let o = org(2.0, 2);
        assert_eq!(incentive_value(&o, 30.0, &[0, 1], &[10.0, 15.0]).unwrap(), 0.0);
        assert!(incentive_value(&o, 30.0, &[0], &[10.0]).is_err());
    }

    #[test]
    fn vot_example() {
        assert!((incentive_for_total(2.63, 110.0, 100.0) - 26.3).abs() < 1e-12);
    }

    #[test]
    fn toy_partitions() {
        let mut change = vec![5.0; 15];
        change.extend(vec![-5.0; 5]);
        let singletons: Vec<Vec<usize>> = (0..20).map(|j| vec![j]).collect();
        let merged = vec![(0..20).collect::<Vec<_>>()];
        let (fine, coarse) = merged_cost_dominance(1.0, &change, &singletons, &merged).unwrap();
        assert_eq!(fine, 75.0);
        assert_eq!(coarse, 50.0);
    }

    #[test]
    fn all_gain_costs_nothing() {
        let change = vec![-1.0, -2.0, -0.5];
        let (f, c) =
            merged_cost_dominance(1.0, &change, &[vec![0], vec![1], vec![2]], &[vec![0, 1, 2]]).unwrap();
        assert_eq!((f, c), (0.0, 0.0));
    }

    #[test]
    fn partition_errors() {
        let change = vec![1.0, 2.0, 3.0];
        assert!(matches!(
            merged_cost_dominance(1.0, &change, &[vec![0], vec![1]], &[vec![0, 1, 2]]),
            Err(IncentiveError::PartitionMismatch)
        ));
        assert!(matches!(
            merged_cost_dominance(1.0, &change, &[vec![0, 1], vec![2]], &[vec![0, 2], vec![1]]),
            Err(IncentiveError::NotCoarser)
        ));
    }

    #[test]
    fn validate_outcome_cases() {
        let orgs = vec![org(1.0, 1), Organization { id: "p".into(), ..org(2.0, 1) }];
        let totals = [12.0, 20.0];
        let gammas = [10.0, 20.0];
        let exact = IncentiveOutcome {
            per_org_cost: vec![2.0, 0.0],
            budget: 5.0,
        };
        assert!(validate_outcome(&exact, &orgs, &totals, &gammas).is_empty());
        let boundary = IncentiveOutcome {
            per_org_cost: vec![2.0, 3.0],
            budget: 5.0,
        };
        assert!(validate_outcome(&boundary, &orgs, &totals, &gammas).is_empty());
        let under = IncentiveOutcome {
            per_org_cost: vec![1.0, 0.0],
            budget: 5.0,
        };
        let v = validate_outcome(&under, &orgs, &totals, &gammas);
        assert_eq!(v.len(), 1);
        assert!(v[0].to_string().contains("organization o"));
        let over = IncentiveOutcome {
            per_org_cost: vec![2.0, 3.1],
            budget: 5.0,
        };
        assert!(matches!(
            validate_outcome(&over, &orgs, &totals, &gammas)[..],
            [Violation::OverBudget { .. }]
        ));
    }

    #[test]
    fn rejects_small_b_factor() {
        let mut o = org(1.0, 1);
        o.drivers[0].b_factor = 0.9;
        assert!(o.validate().is_err());
    }
}
