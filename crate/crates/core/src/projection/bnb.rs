//! Best-first branch-and-bound over LP relaxations.
//!
//! Each node's LP is warm-started from its parent by appending one bound row,
//! so the simplex basis carries over between parent and child.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::{Duration, Instant};

use microlp::{ComparisonOp, OptimizationDirection, Problem, Solution, Variable};
use serde::{Deserialize, Serialize};

use super::milp::{MilpInstance, RowOp};
use super::{ProjectionError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BnbParams {
    pub time_limit: Option<Duration>,
    /// Relative gap `(incumbent − bound) / max(1, |incumbent|)` at which the
    /// search stops.
    pub gap_tol: f64,
    /// Distance from an integer below which a value counts as integral.
    pub int_tol: f64,
    /// Keep a record of every evaluated node.
    pub record_trace: bool,
    /// Open nodes that keep their simplex state for warm starts; the rest
    /// are rebuilt from the root when popped, which bounds memory.
    pub warm_nodes: usize,
    /// Dive from the root LP (round the most fractional variable and
    /// re-solve until integral) to find an early incumbent.
    pub dive: bool,
}

impl Default for BnbParams {
    fn default() -> Self {
        BnbParams {
            time_limit: None,
            gap_tol: 1e-9,
            int_tol: 1e-6,
            record_trace: false,
            warm_nodes: 64,
            dive: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BnbStatus {
    Optimal,
    /// Stopped by the time limit with an incumbent.
    TimeLimit { gap: f64 },
    Infeasible,
    /// Stopped by the time limit before any integral point was found.
    NoFeasibleFound,
    Unbounded,
}

/// One branching decision: `x[var] op value`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchBound {
    pub var: usize,
    pub op: RowOp,
    pub value: f64,
}

/// An evaluated node of the search tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnbNode {
    pub id: usize,
    pub parent: Option<usize>,
    /// Branching decisions on the path from the root.
    pub fixed: Vec<BranchBound>,
    /// LP relaxation value, or `None` when the node's LP is infeasible.
    pub bound: Option<f64>,
    /// Relative gap to the incumbent when the node was evaluated.
    pub incumbent_gap: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct BnbSolution {
    pub status: BnbStatus,
    /// Best integral point, integer entries rounded exactly.
    pub x: Option<Vec<f64>>,
    pub objective: Option<f64>,
    /// Proven lower bound on the optimum.
    pub best_bound: f64,
    pub nodes: usize,
    pub trace: Vec<BnbNode>,
}

struct Open {
    bound: f64,
    depth: usize,
    id: usize,
    /// `None` once evicted to save memory.
    solution: Option<Solution>,
    path: Vec<BranchBound>,
}

impl PartialEq for Open {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Open {}
impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Open {
    // max-heap: smallest bound first, then deepest, then oldest
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then(self.depth.cmp(&other.depth))
            .then(other.id.cmp(&self.id))
    }
}

enum Lp {
    Solved(Solution),
    Infeasible,
    Unbounded,
}

fn lp_result(res: std::result::Result<microlp::SolveOutcome, microlp::Error>) -> Result<Lp> {
    match res {
        Ok(outcome) => outcome
            .into_solution()
            .map(Lp::Solved)
            .map_err(|_| ProjectionError::Lp("LP solve was interrupted".into())),
        Err(microlp::Error::Infeasible) => Ok(Lp::Infeasible),
        Err(microlp::Error::Unbounded) => Ok(Lp::Unbounded),
        Err(e) => Err(ProjectionError::Lp(e.to_string())),
    }
}

fn to_cmp(op: RowOp) -> ComparisonOp {
    match op {
        RowOp::Le => ComparisonOp::Le,
        RowOp::Ge => ComparisonOp::Ge,
        RowOp::Eq => ComparisonOp::Eq,
    }
}

struct Search<'a> {
    milp: &'a MilpInstance,
    params: &'a BnbParams,
    vars: Vec<Variable>,
    incumbent: Option<(f64, Vec<f64>)>,
    trace: Vec<BnbNode>,
    next_id: usize,
}

impl Search<'_> {
    fn values(&self, sol: &Solution) -> Vec<f64> {
        self.vars.iter().map(|&v| sol.var_value_raw(v)).collect()
    }

    fn gap_to(&self, bound: f64) -> Option<f64> {
        self.incumbent
            .as_ref()
            .map(|(inc, _)| ((inc - bound) / inc.abs().max(1.0)).max(0.0))
    }

    fn prunable(&self, bound: f64) -> bool {
        self.gap_to(bound).is_some_and(|g| g <= self.params.gap_tol)
    }

    fn most_fractional(&self, x: &[f64]) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (j, (v, &xj)) in self.milp.vars.iter().zip(x).enumerate() {
            if !v.integer {
                continue;
            }
            let f = xj - xj.floor();
            let score = f.min(1.0 - f);
            if score > self.params.int_tol && best.is_none_or(|(_, s)| score > s) {
                best = Some((j, score));
            }
        }
        best.map(|(j, _)| j)
    }

    fn offer(&mut self, x: &[f64]) {
        let rounded: Vec<f64> = self
            .milp
            .vars
            .iter()
            .zip(x)
            .map(|(v, &xj)| if v.integer { xj.round() } else { xj })
            .collect();
        let obj = self.milp.objective_value(&rounded);
        if self.incumbent.as_ref().is_none_or(|(inc, _)| obj < *inc) {
            self.incumbent = Some((obj, rounded));
        }
    }

    fn record(&mut self, id: usize, parent: Option<usize>, path: &[BranchBound], bound: Option<f64>) {
        if self.params.record_trace {
            let incumbent_gap = bound.and_then(|b| self.gap_to(b));
            self.trace.push(BnbNode {
                id,
                parent,
                fixed: path.to_vec(),
                bound,
                incumbent_gap,
            });
        }
    }

    /// Evaluates a freshly solved node; returns it if it must be explored.
    fn admit(&mut self, solution: Solution, parent: Option<(usize, f64)>, depth: usize, path: Vec<BranchBound>) -> Option<Open> {
        let id = self.next_id;
        self.next_id += 1;
        let lp = solution.objective() + self.milp.offset;
        self.record(id, parent.map(|p| p.0), &path, Some(lp));
        let bound = parent.map_or(lp, |p| lp.max(p.1));
        let x = self.values(&solution);
        if self.most_fractional(&x).is_none() {
            self.offer(&x);
            return None;
        }
        if self.prunable(bound) {
            return None;
        }
        Some(Open {
            bound,
            depth,
            id,
            solution: Some(solution),
            path,
        })
    }
}

/// Rounds the most fractional variable to its nearer integer (the other
/// side if that is infeasible) and re-solves, until the LP is integral.
fn dive(search: &mut Search, root: &Solution, deadline: Option<Instant>) -> Result<()> {
    let mut s = root.clone();
    loop {
        if deadline.is_some_and(|d| Instant::now() >= d) {
            return Ok(());
        }
        let x = search.values(&s);
        let Some(j) = search.most_fractional(&x) else {
            search.offer(&x);
            return Ok(());
        };
        if search.prunable(s.objective() + search.milp.offset) {
            return Ok(());
        }
        let (near, far) = if x[j] - x[j].floor() < 0.5 {
            ((RowOp::Le, x[j].floor()), (RowOp::Ge, x[j].ceil()))
        } else {
            ((RowOp::Ge, x[j].ceil()), (RowOp::Le, x[j].floor()))
        };
        let mut next = None;
        for (op, value) in [near, far] {
            if let Lp::Solved(t) = lp_result(s.clone().add_constraint([(search.vars[j], 1.0)], to_cmp(op), value))? {
                next = Some(t);
                break;
            }
        }
        match next {
            Some(t) => s = t,
            None => return Ok(()),
        }
    }
}

/// Re-solves an evicted node by replaying its branching bounds on the root.
fn rebuild(root: &Solution, vars: &[Variable], path: &[BranchBound]) -> Result<Option<Solution>> {
    let mut s = root.clone();
    for b in path {
        match lp_result(s.add_constraint([(vars[b.var], 1.0)], to_cmp(b.op), b.value))? {
            Lp::Solved(next) => s = next,
            _ => return Ok(None),
        }
    }
    Ok(Some(s))
}

/// Solves a MILP exactly (to `gap_tol`) by best-first branch-and-bound,
/// branching on the most fractional integer variable (lowest index on ties).
pub fn branch_and_bound(milp: &MilpInstance, params: &BnbParams) -> Result<BnbSolution> {
    branch_and_bound_from(milp, params, None)
}

/// [`branch_and_bound`] with a known feasible point as the first incumbent.
pub fn branch_and_bound_from(milp: &MilpInstance, params: &BnbParams, initial: Option<&[f64]>) -> Result<BnbSolution> {
    milp.validate()?;
    if let Some(x) = initial {
        if x.len() != milp.vars.len() || !milp.is_feasible(x, 1e-9) {
            return Err(ProjectionError::Malformed("starting point is not feasible".into()));
        }
    }
    let start = Instant::now();
    let done = |status, x: Option<Vec<f64>>, best_bound, nodes, trace| {
        Ok(BnbSolution {
            status,
            objective: x.as_ref().map(|x: &Vec<f64>| milp.objective_value(x)),
            x,
            best_bound,
            nodes,
            trace,
        })
    };

    // contradictions the LP layer would otherwise have to discover
    for row in &milp.rows {
        if row.coeffs.iter().all(|&(_, a)| a == 0.0) && !row.op.holds(0.0, row.rhs, 0.0) {
            return done(BnbStatus::Infeasible, None, f64::INFINITY, 1, Vec::new());
        }
    }
    let mut bounds = Vec::with_capacity(milp.vars.len());
    for v in &milp.vars {
        let (lo, hi) = if v.integer {
            (v.lower.ceil(), v.upper.floor())
        } else {
            (v.lower, v.upper)
        };
        if lo > hi {
            return done(BnbStatus::Infeasible, None, f64::INFINITY, 1, Vec::new());
        }
        bounds.push((lo, hi));
    }
    if milp.vars.is_empty() {
        return done(BnbStatus::Optimal, Some(Vec::new()), milp.offset, 1, Vec::new());
    }

    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let vars: Vec<Variable> = milp
        .vars
        .iter()
        .zip(&bounds)
        .map(|(v, &b)| lp.add_var(v.objective, b))
        .collect();
    for row in &milp.rows {
        let terms: Vec<(Variable, f64)> = row
            .coeffs
            .iter()
            .filter(|&&(_, a)| a != 0.0)
            .map(|&(j, a)| (vars[j], a))
            .collect();
        if !terms.is_empty() {
            lp.add_constraint(terms.as_slice(), to_cmp(row.op), row.rhs);
        }
    }

    let mut search = Search {
        milp,
        params,
        vars,
        incumbent: None,
        trace: Vec::new(),
        next_id: 0,
    };
    if let Some(x) = initial {
        search.offer(x);
    }
    let root = match lp_result(lp.solve())? {
        Lp::Solved(s) => s,
        Lp::Infeasible => {
            search.record(0, None, &[], None);
            return done(BnbStatus::Infeasible, None, f64::INFINITY, 1, search.trace);
        }
        Lp::Unbounded => return done(BnbStatus::Unbounded, None, f64::NEG_INFINITY, 1, search.trace),
    };
    if params.dive {
        dive(&mut search, &root, params.time_limit.map(|t| start + t))?;
    }
    let mut nodes = 1;
    let mut heap = BinaryHeap::new();
    let mut warm = 0;
    if let Some(open) = search.admit(root.clone(), None, 0, Vec::new()) {
        warm += 1;
        heap.push(open);
    }

    let mut timed_out = false;
    while let Some(node) = heap.pop() {
        if search.prunable(node.bound) {
            // best-first: everything left is at least as bad
            heap.clear();
            break;
        }
        if params.time_limit.is_some_and(|t| start.elapsed() >= t) {
            heap.push(node);
            timed_out = true;
            break;
        }
        let solution = match node.solution {
            Some(s) => {
                warm -= 1;
                s
            }
            None => match rebuild(&root, &search.vars, &node.path)? {
                Some(s) => s,
                None => continue,
            },
        };
        let x = search.values(&solution);
        let j = search
            .most_fractional(&x)
            .expect("open nodes have a fractional integer variable");
        let children = [(RowOp::Le, x[j].floor()), (RowOp::Ge, x[j].ceil())];
        for (op, value) in children {
            let mut path = node.path.clone();
            path.push(BranchBound { var: j, op, value });
            nodes += 1;
            let child = solution
                .clone()
                .add_constraint([(search.vars[j], 1.0)], to_cmp(op), value);
            match lp_result(child)? {
                Lp::Solved(s) => {
                    if let Some(mut open) = search.admit(s, Some((node.id, node.bound)), node.depth + 1, path) {
                        if warm < params.warm_nodes {
                            warm += 1;
                        } else {
                            open.solution = None;
                        }
                        heap.push(open);
                    }
                }
                Lp::Infeasible => {
                    let id = search.next_id;
                    search.next_id += 1;
                    search.record(id, Some(node.id), &path, None);
                }
                Lp::Unbounded => return done(BnbStatus::Unbounded, None, f64::NEG_INFINITY, nodes, search.trace),
            }
        }
    }

    let open_bound = heap.iter().map(|n| n.bound).fold(f64::INFINITY, f64::min);
    let trace = std::mem::take(&mut search.trace);
    match search.incumbent {
        Some((obj, x)) => {
            let best_bound = open_bound.min(obj);
            let gap = ((obj - best_bound) / obj.abs().max(1.0)).max(0.0);
            let status = if timed_out && gap > params.gap_tol {
                BnbStatus::TimeLimit { gap }
            } else {
                BnbStatus::Optimal
            };
            done(status, Some(x), best_bound, nodes, trace)
        }
        None if timed_out => done(BnbStatus::NoFeasibleFound, None, open_bound, nodes, trace),
        None => done(BnbStatus::Infeasible, None, f64::INFINITY, nodes, trace),
    }
}
