//! The ADMM iteration loop.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::factor::{payment_direction, UFactor};
use super::problem::Problem;
use super::state::{dot, OrgState, SolverState};
use super::updates::{
    beta_update, budget_slack_update, h_update, omega_subproblem, payment_update, regularizer_value,
    s_update, w_update, z_update,
};
use super::{AdmmError, Result};

pub const NUM_BLOCKS: usize = 10;
const DIVERGENCE_LIMIT: f64 = 1e6;
/// Iterations between penalty adjustments.
const RHO_INTERVAL: usize = 10;
/// Residual ratio that triggers a penalty adjustment.
const RHO_IMBALANCE: f64 = 10.0;
const RHO_FACTOR: f64 = 2.0;
const RHO_RANGE: (f64, f64) = (1e-4, 1e4);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnealPhase {
    pub lambda_tilde: f64,
    pub iters: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverParams {
    pub rho: f64,
    pub lambda_tilde: f64,
    pub max_iters: usize,
    pub tol: f64,
    /// Optional follow-up phase with a stronger binarity weight.
    pub anneal: Option<AnnealPhase>,
    /// Rebalance ρ when the primal and dual residuals drift apart.
    #[serde(default)]
    pub adaptive_rho: bool,
    /// Over-relaxation factor in (0, 2); 1 is plain ADMM.
    #[serde(default = "unit_relaxation")]
    pub relaxation: f64,
}

fn unit_relaxation() -> f64 {
    1.0
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams {
            rho: 1.0,
            lambda_tilde: 0.0,
            max_iters: 2000,
            tol: 1e-4,
            anneal: None,
            adaptive_rho: true,
            relaxation: 1.0,
        }
    }
}

impl SolverParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(AdmmError::InvalidParams(format!("rho must be positive, got {}", self.rho)));
        }
        if !(self.tol > 0.0) {
            return Err(AdmmError::InvalidParams(format!("tol must be positive, got {}", self.tol)));
        }
        if !(self.relaxation > 0.0 && self.relaxation < 2.0) {
            return Err(AdmmError::InvalidParams(format!(
                "relaxation must lie in (0, 2), got {}",
                self.relaxation
            )));
        }
        let weights = std::iter::once(self.lambda_tilde).chain(self.anneal.map(|a| a.lambda_tilde));
        for lt in weights {
            if !(lt >= 0.0 && lt.is_finite()) {
                return Err(AdmmError::InvalidParams(format!(
                    "regularizer weight must be nonnegative, got {lt}"
                )));
            }
            if lt == self.rho {
                return Err(AdmmError::SingularZStep { rho: self.rho });
            }
        }
        Ok(())
    }
}

/// Infinity norms of the ten constraint residuals plus the dual residual.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    pub blocks: [f64; NUM_BLOCKS],
    pub dual: f64,
    /// Largest primal and dual residual in the solver's equilibrated units,
    /// which is what ρ is balanced on.
    #[serde(skip)]
    pub(crate) scaled: (f64, f64),
}

impl Residuals {
    pub fn primal(&self) -> f64 {
        self.blocks.iter().fold(0.0, |m, &v| if v.is_nan() { f64::NAN } else { m.max(v) })
    }

    pub fn score(&self) -> f64 {
        let p = self.primal();
        if p.is_nan() || self.dual.is_nan() {
            f64::NAN
        } else {
            p.max(self.dual)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub lambda_tilde: f64,
    pub objective: f64,
    pub residuals: Residuals,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone)]
pub struct RelaxedSolution {
    /// Route counts per organization on its own entries.
    pub u: Vec<Vec<f64>>,
    /// Fractional assignments per organization in the flattened group layout.
    pub s: Vec<Vec<f64>>,
    pub c: Vec<f64>,
    /// System travel time plus the regularizer, at the returned iterate.
    pub objective: f64,
    /// System travel time (vehicle-hours) at the returned volumes.
    pub travel_time: f64,
    pub residuals: Residuals,
    pub history: Vec<IterationRecord>,
    pub iterations: usize,
    pub converged: bool,
    pub state: SolverState,
}

/// The full objective at a state: travel time at ω plus the regularizer on Z.
pub fn objective_value(problem: &Problem, state: &SolverState) -> f64 {
    let reg: f64 = state
        .orgs
        .iter()
        .map(|o| regularizer_value(&o.z, state.lambda_tilde))
        .sum();
    problem.travel_time(&state.omega) + reg
}

/// Constraint residuals evaluated directly from a state, in block order.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualVectors {
    pub r1: Vec<Vec<f64>>,
    pub r2: Vec<f64>,
    pub r3: Vec<Vec<f64>>,
    pub r4: Vec<Vec<f64>>,
    pub r5: Vec<Vec<f64>>,
    pub r6: Vec<Vec<f64>>,
    pub r7: Vec<f64>,
    pub r8: Vec<Vec<f64>>,
    pub r9: f64,
    pub r10: Vec<Vec<f64>>,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m: f64, &x| if x.is_nan() { f64::NAN } else { m.max(x.abs()) })
}

fn inf_norm_nested(v: &[Vec<f64>]) -> f64 {
    v.iter().map(|x| inf_norm(x)).fold(0.0, |m: f64, x| if x.is_nan() { f64::NAN } else { m.max(x) })
}

impl ResidualVectors {
    pub fn norms(&self) -> [f64; NUM_BLOCKS] {
        [
            inf_norm_nested(&self.r1),
            inf_norm(&self.r2),
            inf_norm_nested(&self.r3),
            inf_norm_nested(&self.r4),
            inf_norm_nested(&self.r5),
            inf_norm_nested(&self.r6),
            inf_norm(&self.r7),
            inf_norm_nested(&self.r8),
            self.r9.abs(),
            inf_norm_nested(&self.r10),
        ]
    }
}

impl ResidualVectors {
    /// Norms with the fairness and payment rows mapped back to minutes and
    /// dollars, so tolerances mean the same thing on every instance.
    pub fn original_norms(&self, problem: &Problem) -> [f64; NUM_BLOCKS] {
        let mut n = self.norms();
        n[5] = self
            .r6
            .iter()
            .zip(&problem.orgs)
            .flat_map(|(r, o)| r.iter().zip(&o.fair_scale).map(|(x, w)| (x / w).abs()))
            .fold(0.0, f64::max);
        n[6] /= problem.pay_weight;
        n[8] /= problem.pay_weight;
        n
    }
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Evaluates every constraint residual of the split problem at `state`.
pub fn evaluate_residuals(problem: &Problem, state: &SolverState) -> ResidualVectors {
    let u: Vec<Vec<f64>> = state.orgs.iter().map(|o| o.u.clone()).collect();
    let volumes = problem.volumes(&u);
    let mut out = ResidualVectors {
        r1: Vec::new(),
        r2: diff(&state.omega, &volumes),
        r3: Vec::new(),
        r4: Vec::new(),
        r5: Vec::new(),
        r6: Vec::new(),
        r7: Vec::new(),
        r8: Vec::new(),
        r9: state.c.iter().sum::<f64>() + state.budget_slack - problem.scaled_budget(),
        r10: Vec::new(),
    };
    for (i, (org, os)) in problem.orgs.iter().zip(&state.orgs).enumerate() {
        let mut s1 = vec![0.0; org.num_cols()];
        let mut r3 = Vec::with_capacity(org.groups.len());
        let mut r4 = vec![0.0; org.num_drivers()];
        let mut r6 = vec![0.0; org.num_drivers()];
        for g in &org.groups {
            let p = g.num_routes();
            for (k, &j) in g.drivers.iter().enumerate() {
                let off = g.slot(k);
                for r in 0..p {
                    s1[g.col_start + r] += os.s[off + r];
                }
                r4[j] = os.w[off..off + p].iter().sum::<f64>() - 1.0;
                r6[j] = dot(&os.h[off..off + p], &org.fair_delta[off..off + p]) + os.beta[j] - org.fair_rhs[j];
            }
            r3.push(os.u[g.col_start..g.col_start + p].iter().sum::<f64>() - g.demand);
        }
        out.r1.push(diff(&s1, &os.u));
        out.r3.push(r3);
        out.r4.push(r4);
        out.r5.push(diff(&os.s, &os.w));
        out.r6.push(r6);
        out.r7.push(
            problem.scaled_vot(org) * (dot(&org.delta, &os.u) - org.gamma) - (state.c[i] - state.mu[i]),
        );
        out.r8.push(diff(&os.s, &os.h));
        out.r10.push(diff(&os.s, &os.z));
    }
    out
}

/// Applies `λ += ρ r` for every block.
pub fn dual_ascent(state: &mut SolverState, res: &ResidualVectors) {
    let rho = state.rho;
    let add = |l: &mut [f64], r: &[f64]| {
        for (a, b) in l.iter_mut().zip(r) {
            *a += rho * b;
        }
    };
    add(&mut state.l2, &res.r2);
    add(&mut state.l7, &res.r7);
    state.l9 += rho * res.r9;
    for (i, o) in state.orgs.iter_mut().enumerate() {
        add(&mut o.l1, &res.r1[i]);
        add(&mut o.l3, &res.r3[i]);
        add(&mut o.l4, &res.r4[i]);
        add(&mut o.l5, &res.r5[i]);
        add(&mut o.l6, &res.r6[i]);
        add(&mut o.l8, &res.r8[i]);
        add(&mut o.l10, &res.r10[i]);
    }
}

/// Over-relaxed block-one quantities as seen by the block-two steps:
/// `a·x + (1 − a)·(value implied by the previous block two)`.
fn relax(a: f64, x: f64, previous: f64) -> f64 {
    a * x + (1.0 - a) * previous
}

/// `B (z_new − z_old)` for every constraint, in residual layout.
fn block_two_change(problem: &Problem, old: &SolverState, new: &SolverState) -> ResidualVectors {
    let du: Vec<Vec<f64>> = old.orgs.iter().zip(&new.orgs).map(|(o, n)| diff(&n.u, &o.u)).collect();
    let mut dv = problem.volumes(&du);
    for (v, bg) in dv.iter_mut().zip(&problem.background_volumes) {
        *v = -(*v - bg);
    }
    let mut out = ResidualVectors {
        r1: Vec::new(),
        r2: dv,
        r3: Vec::new(),
        r4: Vec::new(),
        r5: Vec::new(),
        r6: Vec::new(),
        r7: Vec::new(),
        r8: Vec::new(),
        r9: new.budget_slack - old.budget_slack,
        r10: Vec::new(),
    };
    for (i, org) in problem.orgs.iter().enumerate() {
        let (o, n) = (&old.orgs[i], &new.orgs[i]);
        let dw = diff(&n.w, &o.w);
        let dh = diff(&n.h, &o.h);
        let mut r4 = vec![0.0; org.num_drivers()];
        let mut r6 = vec![0.0; org.num_drivers()];
        for (j, (r4j, r6j)) in r4.iter_mut().zip(r6.iter_mut()).enumerate() {
            let (g, off) = org.driver_block(j);
            let range = off..off + g.num_routes();
            *r4j = dw[range.clone()].iter().sum();
            *r6j = dot(&dh[range.clone()], &org.fair_delta[range]);
        }
        out.r1.push(du[i].iter().map(|v| -v).collect());
        out.r3.push(org.groups.iter().map(|g| du[i][g.col_start..g.col_start + g.num_routes()].iter().sum()).collect());
        out.r4.push(r4);
        out.r5.push(dw.iter().map(|v| -v).collect());
        out.r6.push(r6);
        out.r7.push(problem.scaled_vot(org) * dot(&org.delta, &du[i]));
        out.r8.push(dh.iter().map(|v| -v).collect());
        out.r10.push(diff(&o.z, &n.z));
    }
    out
}

fn blend(a: f64, x: &mut ResidualVectors, y: &ResidualVectors) {
    let mix = |u: &mut [f64], v: &[f64]| {
        for (p, q) in u.iter_mut().zip(v) {
            *p = a * *p + (1.0 - a) * q;
        }
    };
    mix(&mut x.r2, &y.r2);
    mix(&mut x.r7, &y.r7);
    x.r9 = a * x.r9 + (1.0 - a) * y.r9;
    for i in 0..x.r1.len() {
        mix(&mut x.r1[i], &y.r1[i]);
        mix(&mut x.r3[i], &y.r3[i]);
        mix(&mut x.r4[i], &y.r4[i]);
        mix(&mut x.r5[i], &y.r5[i]);
        mix(&mut x.r6[i], &y.r6[i]);
        mix(&mut x.r8[i], &y.r8[i]);
        mix(&mut x.r10[i], &y.r10[i]);
    }
}

/// One full sweep: primal blocks in the order ω, S, β, c̃, u, W, H, Z, β̃,
/// then all dual updates. `relaxation` is the over-relaxation factor
/// (1 for plain ADMM; values in (1, 2) usually converge faster).
pub fn iterate(problem: &Problem, factor: &UFactor, state: &mut SolverState, relaxation: f64) -> Result<Residuals> {
    let rho = state.rho;
    let lambda_tilde = state.lambda_tilde;
    let a = relaxation;
    let old = state.clone();

    // ω from the previous route counts
    let u_prev: Vec<Vec<f64>> = state.orgs.iter().map(|o| o.u.clone()).collect();
    let target = problem.volumes(&u_prev);
    state.omega = target
        .par_iter()
        .zip(&state.l2)
        .zip(&problem.link_params)
        .map(|((&a, &l2), &p)| omega_subproblem(a, l2, rho, p))
        .collect();

    // S and β
    state
        .orgs
        .par_iter_mut()
        .zip(&problem.orgs)
        .for_each(|(os, org)| {
            let mut s = vec![0.0; org.num_slots];
            for g in &org.groups {
                let (p, m) = (g.num_routes(), g.num_drivers());
                let (lo, hi) = (g.slot_start, g.slot_start + p * m);
                let cols = g.col_start..g.col_start + p;
                s_update(
                    p,
                    m,
                    &os.l1[cols.clone()],
                    &os.l5[lo..hi],
                    &os.l8[lo..hi],
                    &os.l10[lo..hi],
                    &os.w[lo..hi],
                    &os.h[lo..hi],
                    &os.z[lo..hi],
                    &os.u[cols],
                    rho,
                    &mut s[lo..hi],
                );
            }
            os.s = s;
            for j in 0..org.num_drivers() {
                let (g, off) = org.driver_block(j);
                let p = g.num_routes();
                os.beta[j] = beta_update(
                    &os.h[off..off + p],
                    &org.fair_delta[off..off + p],
                    os.l6[j],
                    org.fair_rhs[j],
                    rho,
                );
            }
        });

    // c̃ = [c; μ]
    let owed: Vec<f64> = problem
        .orgs
        .iter()
        .zip(&state.orgs)
        .map(|(org, os)| problem.scaled_vot(org) * (dot(&org.delta, &os.u) - org.gamma))
        .collect();
    let y: Vec<f64> = owed.iter().zip(&state.l7).map(|(&o, &l7)| o + l7 / rho).collect();
    let spare = problem.scaled_budget() - state.budget_slack - state.l9 / rho;
    payment_update(&y, spare, &mut state.c, &mut state.mu);

    // u
    let mut drive = state.l2.clone();
    for (((d, &w), &bg), &t) in drive
        .iter_mut()
        .zip(&state.omega)
        .zip(&problem.background_volumes)
        .zip(&target)
    {
        *d += rho * (relax(a, w, t) - bg);
    }
    let mut rhs = Vec::with_capacity(factor.len());
    for (i, (org, os)) in problem.orgs.iter().zip(&state.orgs).enumerate() {
        let mut part = vec![0.0; org.num_cols()];
        for (e, &col) in org.cols.iter().enumerate() {
            part[e] = os.l1[e]
                + problem.r.columns[col].iter().map(|&(row, v)| v * drive[row]).sum::<f64>();
        }
        for (gi, g) in org.groups.iter().enumerate() {
            let p = g.num_routes();
            let cols = g.col_start..g.col_start + p;
            let mut s1 = vec![0.0; p];
            for k in 0..g.num_drivers() {
                let off = g.slot(k);
                for (r, v) in s1.iter_mut().enumerate() {
                    *v += os.s[off + r];
                }
            }
            let r3_old = os.u[cols.clone()].iter().sum::<f64>() - g.demand;
            let shift = -(os.l3[gi] - rho * (1.0 - a) * r3_old) + rho * g.demand;
            for (r, &v) in s1.iter().enumerate() {
                part[g.col_start + r] += rho * relax(a, v, os.u[g.col_start + r]) + shift;
            }
        }
        let dir = payment_direction(problem, org);
        let paid = relax(a, state.c[i] - state.mu[i], owed_at(problem, org, &os.u));
        let scale = -state.l7[i] + rho * (problem.scaled_vot(org) * org.gamma + paid);
        for (v, ai) in part.iter_mut().zip(&dir) {
            *v += scale * ai;
        }
        rhs.extend(part);
    }
    factor.solve(&mut rhs);
    let mut offset = 0;
    for (os, org) in state.orgs.iter_mut().zip(&problem.orgs) {
        let n = org.num_cols();
        for (e, x) in os.u.iter_mut().enumerate() {
            *x = rhs[offset + e] / rho;
        }
        offset += n;
    }

    // W, H, Z
    state
        .orgs
        .par_iter_mut()
        .zip(&problem.orgs)
        .try_for_each(|(os, org)| -> Result<()> {
            let mut w = vec![0.0; org.num_slots];
            let mut h = vec![0.0; org.num_slots];
            let s5: Vec<f64> = os.s.iter().zip(&os.w).map(|(&s, &w)| relax(a, s, w)).collect();
            let s8: Vec<f64> = os.s.iter().zip(&os.h).map(|(&s, &h)| relax(a, s, h)).collect();
            for j in 0..org.num_drivers() {
                let (g, off) = org.driver_block(j);
                let p = g.num_routes();
                let range = off..off + p;
                let r4_old = os.w[range.clone()].iter().sum::<f64>() - 1.0;
                let l4 = os.l4[j] - rho * (1.0 - a) * r4_old;
                w_update(&s5[range.clone()], l4, &os.l5[range.clone()], rho, &mut w[range.clone()]);
                let fd = &org.fair_delta[range.clone()];
                let beta = relax(a, os.beta[j], org.fair_rhs[j] - dot(&os.h[range.clone()], fd));
                h_update(
                    &s8[range.clone()],
                    fd,
                    os.l6[j],
                    &os.l8[range.clone()],
                    beta,
                    org.fair_rhs[j],
                    rho,
                    &mut h[range],
                );
            }
            for e in 0..org.num_slots {
                os.z[e] = z_update(relax(a, os.s[e], os.z[e]), os.l10[e], rho, lambda_tilde)?;
            }
            os.w = w;
            os.h = h;
            Ok(())
        })?;

    let paid = relax(a, state.c.iter().sum(), problem.scaled_budget() - state.budget_slack);
    state.budget_slack = budget_slack_update(paid, problem.scaled_budget(), state.l9, rho);

    let res = evaluate_residuals(problem, state);
    let change = block_two_change(problem, &old, state);
    if a == 1.0 {
        dual_ascent(state, &res);
    } else {
        let mut relaxed = res.clone();
        blend(a, &mut relaxed, &change);
        dual_ascent(state, &relaxed);
    }
    state.iteration += 1;

    Ok(Residuals {
        blocks: res.original_norms(problem),
        dual: rho * change.original_norms(problem).into_iter().fold(0.0, f64::max),
        scaled: (res.norms().into_iter().fold(0.0, f64::max), rho * change.norms().into_iter().fold(0.0, f64::max)),
    })
}

fn owed_at(problem: &Problem, org: &super::problem::OrgProblem, u: &[f64]) -> f64 {
    problem.scaled_vot(org) * (dot(&org.delta, u) - org.gamma)
}

/// Outcome of running iterations on a state.
struct PhaseOutcome {
    best: SolverState,
    best_residuals: Residuals,
    converged: bool,
}

/// Residual balancing: raises ρ when the primal residual dominates and
/// lowers it when the dual residual does. Duals are stored unscaled and the
/// route-count factor does not depend on ρ, so nothing else changes. ρ never
/// crosses the regularizer weight.
fn rebalance_rho(state: &mut SolverState, res: &Residuals) {
    let (p, d) = res.scaled;
    let rho = if p > RHO_IMBALANCE * d {
        state.rho * RHO_FACTOR
    } else if d > RHO_IMBALANCE * p {
        state.rho / RHO_FACTOR
    } else {
        return;
    };
    let lt = state.lambda_tilde;
    if rho >= RHO_RANGE.0 && rho <= RHO_RANGE.1 && (rho - lt) * (state.rho - lt) > 0.0 {
        state.rho = rho;
    }
}

fn run_phase(
    problem: &Problem,
    factor: &UFactor,
    state: &mut SolverState,
    iters: usize,
    params: &SolverParams,
    history: &mut Vec<IterationRecord>,
    clock: &Instant,
) -> Result<PhaseOutcome> {
    let mut best: Option<(SolverState, Residuals)> = None;
    for _ in 0..iters {
        let res = iterate(problem, factor, state, params.relaxation)?;
        let score = res.score();
        history.push(IterationRecord {
            iteration: state.iteration,
            lambda_tilde: state.lambda_tilde,
            objective: objective_value(problem, state),
            residuals: res,
            elapsed_s: clock.elapsed().as_secs_f64(),
        });
        if !score.is_finite() || res.primal() > DIVERGENCE_LIMIT {
            return Err(AdmmError::Diverged {
                iteration: state.iteration,
                residual: score,
            });
        }
        if best.as_ref().is_none_or(|(_, b)| score < b.score()) {
            best = Some((state.clone(), res));
        }
        if res.primal() < params.tol && res.dual < params.tol {
            let (best, best_residuals) = best.expect("at least one iteration");
            return Ok(PhaseOutcome {
                best,
                best_residuals,
                converged: true,
            });
        }
        if params.adaptive_rho && state.iteration.is_multiple_of(RHO_INTERVAL) {
            rebalance_rho(state, &res);
        }
    }
    let (best, best_residuals) = match best {
        Some(b) => b,
        None => (
            state.clone(),
            Residuals {
                blocks: evaluate_residuals(problem, state).original_norms(problem),
                dual: f64::INFINITY,
                scaled: (f64::INFINITY, f64::INFINITY),
            },
        ),
    };
    Ok(PhaseOutcome {
        best,
        best_residuals,
        converged: false,
    })
}

/// Solves the relaxed problem from the default initial point.
pub fn solve_relaxed(problem: &Problem, params: &SolverParams) -> Result<RelaxedSolution> {
    params.validate()?;
    let state = SolverState::initial(problem, params.rho, params.lambda_tilde);
    solve_from(problem, state, params)
}

/// Continues iterating from a given state (for example a restored
/// checkpoint) with `params`.
pub fn solve_from(problem: &Problem, mut state: SolverState, params: &SolverParams) -> Result<RelaxedSolution> {
    params.validate()?;
    state.check_shape(problem)?;
    state.rho = params.rho;
    state.lambda_tilde = params.lambda_tilde;
    let factor = UFactor::new(problem)?;
    let clock = Instant::now();
    let mut history = Vec::new();
    let mut outcome = run_phase(
        problem,
        &factor,
        &mut state,
        params.max_iters,
        params,
        &mut history,
        &clock,
    )?;
    if let Some(anneal) = params.anneal {
        let mut sharpened = outcome.best.clone();
        sharpened.lambda_tilde = anneal.lambda_tilde;
        if (sharpened.rho - anneal.lambda_tilde) * (params.rho - anneal.lambda_tilde) <= 0.0 {
            sharpened.rho = params.rho;
        }
        outcome = run_phase(
            problem,
            &factor,
            &mut sharpened,
            anneal.iters,
            params,
            &mut history,
            &clock,
        )?;
    }
    let best = outcome.best;
    let u: Vec<Vec<f64>> = best.orgs.iter().map(|o| o.u.clone()).collect();
    let s: Vec<Vec<f64>> = best.orgs.iter().map(|o: &OrgState| o.s.clone()).collect();
    Ok(RelaxedSolution {
        travel_time: problem.travel_time(&best.omega),
        objective: objective_value(problem, &best),
        c: best.c.iter().map(|&c| c / problem.pay_weight).collect(),
        u,
        s,
        residuals: outcome.best_residuals,
        iterations: best.iteration,
        converged: outcome.converged,
        history,
        state: best,
    })
}

/// Writes the iteration history as CSV.
pub fn write_iteration_log(history: &[IterationRecord], path: impl AsRef<Path>) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(f, "iter,lambda_tilde,objective")?;
    for k in 1..=NUM_BLOCKS {
        write!(f, ",r{k}")?;
    }
    writeln!(f, ",dual,wall_s")?;
    for rec in history {
        write!(f, "{},{},{}", rec.iteration, rec.lambda_tilde, rec.objective)?;
        for v in rec.residuals.blocks {
            write!(f, ",{v}")?;
        }
        writeln!(f, ",{},{}", rec.residuals.dual, rec.elapsed_s)?;
    }
    f.flush()
}
