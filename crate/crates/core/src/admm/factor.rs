//! Cached inverse of the route-count step matrix
//! `M = I + R̃ᵀR̃ + D̃ᵀD̃ + AAᵀ`, with `A = Δα̃`.
//!
//! Organizations are stacked in order. `K = I + D̃ᵀD̃ + AAᵀ` is block diagonal
//! per organization and is inverted with two rank-one corrections; the
//! occupancy term couples organizations and is handled by Woodbury over the
//! link-period rows actually reached.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;

use super::problem::{OrgProblem, Problem};
use super::{AdmmError, Result};

#[derive(Debug, Clone)]
struct OrgFactor {
    offset: usize,
    /// `J⁻¹a` where `J = I + D̃ᵀD̃` restricted to the organization.
    ja: Vec<f64>,
    /// `1 + aᵀJ⁻¹a`.
    denom: f64,
}

#[derive(Debug, Clone)]
pub struct UFactor {
    orgs: Vec<OrgFactor>,
    group_bounds: Vec<(usize, usize)>,
    len: usize,
    /// Volume row of every active row.
    active_rows: Vec<usize>,
    /// `G` by column: `(active row, value)` for every stacked entry.
    g_cols: Vec<Vec<(usize, f64)>>,
    /// `G` by row: `(stacked index, value)`.
    g_rows: Vec<Vec<(usize, f64)>>,
    inner: Option<Cholesky<f64, Dyn>>,
}

/// Weighted route-time vector `a_i = α_i δ` on an organization's entries,
/// in solver payment units.
pub fn payment_direction(problem: &Problem, org: &OrgProblem) -> Vec<f64> {
    let vot = problem.scaled_vot(org);
    org.delta.iter().map(|&d| vot * d).collect()
}

impl UFactor {
    pub fn new(problem: &Problem) -> Result<Self> {
        let mut orgs = Vec::with_capacity(problem.orgs.len());
        let mut group_bounds = Vec::new();
        let mut offset = 0;
        for org in &problem.orgs {
            for g in &org.groups {
                group_bounds.push((offset + g.col_start, offset + g.col_start + g.num_routes()));
            }
            let a = payment_direction(problem, org);
            let mut ja = a.clone();
            for g in &org.groups {
                apply_group_inverse(&mut ja[g.col_start..g.col_start + g.num_routes()]);
            }
            let denom = 1.0 + a.iter().zip(&ja).map(|(x, y)| x * y).sum::<f64>();
            orgs.push(OrgFactor { offset, ja, denom });
            offset += org.num_cols();
        }
        let len = offset;

        let mut row_map = vec![usize::MAX; problem.dims.volume_len()];
        let mut active_rows = Vec::new();
        let mut g_cols = Vec::with_capacity(len);
        for org in &problem.orgs {
            for &col in &org.cols {
                let mut entries = Vec::with_capacity(problem.r.columns[col].len());
                for &(row, v) in &problem.r.columns[col] {
                    if row_map[row] == usize::MAX {
                        row_map[row] = active_rows.len();
                        active_rows.push(row);
                    }
                    entries.push((row_map[row], v));
                }
                g_cols.push(entries);
            }
        }
        let na = active_rows.len();
        let mut g_rows = vec![Vec::new(); na];
        for (j, col) in g_cols.iter().enumerate() {
            for &(a, v) in col {
                g_rows[a].push((j, v));
            }
        }

        let mut factor = UFactor {
            orgs,
            group_bounds,
            len,
            active_rows,
            g_cols,
            g_rows,
            inner: None,
        };
        if na > 0 {
            // C = I + G K⁻¹ Gᵀ, assembled column by column
            let columns: Vec<Vec<f64>> = (0..na)
                .into_par_iter()
                .map(|a| {
                    let mut x = vec![0.0; len];
                    for &(j, v) in &factor.g_rows[a] {
                        x[j] = v;
                    }
                    factor.apply_k_inverse(&mut x);
                    let mut col = factor.g_mul(&x);
                    col[a] += 1.0;
                    col
                })
                .collect();
            let c = DMatrix::from_fn(na, na, |i, j| 0.5 * (columns[j][i] + columns[i][j]));
            let chol = Cholesky::new(c).ok_or(AdmmError::SingularFactorization)?;
            factor.inner = Some(chol);
        }
        Ok(factor)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn active_rows(&self) -> &[usize] {
        &self.active_rows
    }

    fn g_mul(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.active_rows.len()];
        for (col, &xj) in self.g_cols.iter().zip(x) {
            if xj != 0.0 {
                for &(a, v) in col {
                    out[a] += v * xj;
                }
            }
        }
        out
    }

    fn gt_mul(&self, y: &[f64]) -> Vec<f64> {
        self.g_cols
            .iter()
            .map(|col| col.iter().map(|&(a, v)| v * y[a]).sum())
            .collect()
    }

    fn apply_k_inverse(&self, x: &mut [f64]) {
        // K_i⁻¹x = J⁻¹x − J⁻¹a (aᵀJ⁻¹x) / (1 + aᵀJ⁻¹a), and aᵀJ⁻¹x = (J⁻¹a)ᵀx
        let dots: Vec<f64> = self
            .orgs
            .iter()
            .enumerate()
            .map(|(i, org)| {
                let end = self.org_end(i);
                org.ja.iter().zip(&x[org.offset..end]).map(|(p, q)| p * q).sum()
            })
            .collect();
        for &(lo, hi) in &self.group_bounds {
            apply_group_inverse(&mut x[lo..hi]);
        }
        for (i, org) in self.orgs.iter().enumerate() {
            let end = self.org_end(i);
            let scale = dots[i] / org.denom;
            for (v, j) in x[org.offset..end].iter_mut().zip(&org.ja) {
                *v -= scale * j;
            }
        }
    }

    fn org_end(&self, i: usize) -> usize {
        self.orgs.get(i + 1).map_or(self.len, |o| o.offset)
    }

    /// Solves `M x = b` in place.
    pub fn solve(&self, b: &mut [f64]) {
        self.apply_k_inverse(b);
        if let Some(chol) = &self.inner {
            let gy = DVector::from_vec(self.g_mul(b));
            let z = chol.solve(&gy);
            let mut corr = self.gt_mul(z.as_slice());
            self.apply_k_inverse(&mut corr);
            for (x, c) in b.iter_mut().zip(&corr) {
                *x -= c;
            }
        }
    }

    /// `M x` computed directly, for verification.
    pub fn multiply(&self, problem: &Problem, x: &[f64]) -> Vec<f64> {
        let mut out = x.to_vec();
        for &(lo, hi) in &self.group_bounds {
            let s: f64 = x[lo..hi].iter().sum();
            for o in &mut out[lo..hi] {
                *o += s;
            }
        }
        let mut offset = 0;
        for org in &problem.orgs {
            let a = payment_direction(problem, org);
            let n = org.num_cols();
            let ax: f64 = a.iter().zip(&x[offset..offset + n]).map(|(p, q)| p * q).sum();
            for (o, ai) in out[offset..offset + n].iter_mut().zip(&a) {
                *o += ai * ax;
            }
            offset += n;
        }
        let gx = self.g_mul(x);
        for (o, v) in out.iter_mut().zip(self.gt_mul(&gx)) {
            *o += v;
        }
        out
    }
}

/// Applies `(I + 11ᵀ)⁻¹ = I − 11ᵀ/(1 + p)` in place.
fn apply_group_inverse(x: &mut [f64]) {
    let s: f64 = x.iter().sum::<f64>() / (1.0 + x.len() as f64);
    for v in x {
        *v -= s;
    }
}
