//! Primal and dual iterates, initialization, and checkpointing.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::problem::{OrgProblem, Problem};
use super::{AdmmError, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Per-organization iterates. Assignment-shaped blocks use the flattened
/// group layout of [`OrgProblem`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrgState {
    pub s: Vec<f64>,
    pub w: Vec<f64>,
    pub h: Vec<f64>,
    pub z: Vec<f64>,
    /// Route counts on the organization's entries.
    pub u: Vec<f64>,
    /// Slack of every driver's scaled fairness row.
    pub beta: Vec<f64>,
    /// Dual of `S1 = u`.
    pub l1: Vec<f64>,
    /// Dual of the demand rows, one per group.
    pub l3: Vec<f64>,
    /// Dual of the column sums, one per driver.
    pub l4: Vec<f64>,
    pub l5: Vec<f64>,
    /// Dual of the fairness rows, one per driver.
    pub l6: Vec<f64>,
    pub l8: Vec<f64>,
    pub l10: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverState {
    pub version: u32,
    pub iteration: usize,
    pub rho: f64,
    pub lambda_tilde: f64,
    /// Link-period volumes.
    pub omega: Vec<f64>,
    pub orgs: Vec<OrgState>,
    /// Payments in solver units (dollars times `Problem::pay_weight`).
    pub c: Vec<f64>,
    /// Payment surplus over the owed amount.
    pub mu: Vec<f64>,
    /// Unused budget, in solver units.
    pub budget_slack: f64,
    pub l2: Vec<f64>,
    pub l7: Vec<f64>,
    pub l9: f64,
}

impl OrgState {
    fn uniform(org: &OrgProblem) -> Self {
        let mut s = vec![0.0; org.num_slots];
        let mut u = vec![0.0; org.num_cols()];
        for g in &org.groups {
            let p = g.num_routes();
            let share = 1.0 / p as f64;
            for k in 0..g.num_drivers() {
                let off = g.slot(k);
                s[off..off + p].fill(share);
            }
            u[g.col_start..g.col_start + p].fill(g.demand * share);
        }
        let beta = (0..org.num_drivers())
            .map(|j| {
                let (g, off) = org.driver_block(j);
                let p = g.num_routes();
                let hd = dot(&s[off..off + p], &org.fair_delta[off..off + p]);
                (org.fair_rhs[j] - hd).max(0.0)
            })
            .collect();
        let n = org.num_slots;
        OrgState {
            w: s.clone(),
            h: s.clone(),
            z: s.clone(),
            s,
            u,
            beta,
            l1: vec![0.0; org.num_cols()],
            l3: vec![0.0; org.groups.len()],
            l4: vec![0.0; org.num_drivers()],
            l5: vec![0.0; n],
            l6: vec![0.0; org.num_drivers()],
            l8: vec![0.0; n],
            l10: vec![0.0; n],
        }
    }
}

impl SolverState {
    /// Uniform split over every driver's admissible routes, with volumes and
    /// slacks read off that point and all duals zero.
    pub fn initial(problem: &Problem, rho: f64, lambda_tilde: f64) -> Self {
        let orgs: Vec<OrgState> = problem.orgs.iter().map(OrgState::uniform).collect();
        let u: Vec<Vec<f64>> = orgs.iter().map(|o| o.u.clone()).collect();
        let omega = problem.volumes(&u);
        let owed: Vec<f64> = problem
            .orgs
            .iter()
            .zip(&u)
            .map(|(org, ui)| problem.scaled_vot(org) * (dot(&org.delta, ui) - org.gamma))
            .collect();
        let c: Vec<f64> = owed.iter().map(|&o| o.max(0.0)).collect();
        let mu: Vec<f64> = c.iter().zip(&owed).map(|(ci, o)| ci - o).collect();
        let budget_slack = (problem.scaled_budget() - c.iter().sum::<f64>()).max(0.0);
        let n = problem.num_orgs();
        SolverState {
            version: CHECKPOINT_VERSION,
            iteration: 0,
            rho,
            lambda_tilde,
            l2: vec![0.0; omega.len()],
            omega,
            orgs,
            c,
            mu,
            budget_slack,
            l7: vec![0.0; n],
            l9: 0.0,
        }
    }

    /// Checks that every block matches the problem layout.
    pub fn check_shape(&self, problem: &Problem) -> Result<()> {
        let bad = |what: &str| Err(AdmmError::Checkpoint(format!("{what} does not match the problem")));
        if self.version != CHECKPOINT_VERSION {
            return Err(AdmmError::Checkpoint(format!(
                "unsupported checkpoint version {}",
                self.version
            )));
        }
        let n = problem.num_orgs();
        if self.omega.len() != problem.dims.volume_len() || self.l2.len() != self.omega.len() {
            return bad("volume block");
        }
        if self.orgs.len() != n || self.c.len() != n || self.mu.len() != n || self.l7.len() != n {
            return bad("organization count");
        }
        for (o, p) in self.orgs.iter().zip(&problem.orgs) {
            let slots = [&o.s, &o.w, &o.h, &o.z, &o.l5, &o.l8, &o.l10];
            let per_driver = [&o.beta, &o.l4, &o.l6];
            if slots.iter().any(|v| v.len() != p.num_slots)
                || per_driver.iter().any(|v| v.len() != p.num_drivers())
                || o.u.len() != p.num_cols()
                || o.l1.len() != p.num_cols()
                || o.l3.len() != p.groups.len()
            {
                return bad(&format!("organization {}", p.id));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| AdmmError::Checkpoint(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| AdmmError::Checkpoint(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?)
            .map_err(|e| AdmmError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| AdmmError::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
