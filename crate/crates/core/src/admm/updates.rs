//! Closed-form and one-dimensional subproblem solutions of the primal steps.

use crate::network::BprParams;

use super::{AdmmError, Result};

const OMEGA_DERIV_TOL: f64 = 1e-9;
const OMEGA_MAX_STEPS: usize = 200;

/// Minimizes `ω θ(ω) + λ (ω − a) + (ρ/2)(ω − a)²` over `ω ≥ 0` for a BPR link.
pub fn omega_subproblem(a: f64, lambda2: f64, rho: f64, params: BprParams) -> f64 {
    let theta0 = params.free_flow_time_h;
    let cap = params.capacity;
    // derivative of ω θ(ω) is θ0 (1 + 0.75 (ω/w)^4)
    let deriv = |w: f64| {
        let x = (w / cap).powi(4);
        theta0 * (1.0 + 0.75 * x) + lambda2 + rho * (w - a)
    };
    let second = |w: f64| 3.0 * theta0 * (w / cap).powi(3) / cap + rho;
    if deriv(0.0) >= 0.0 {
        return 0.0;
    }
    let mut lo = 0.0;
    let mut hi = a.max(0.0) + lambda2.abs() / rho + cap;
    while deriv(hi) < 0.0 {
        hi *= 2.0;
    }
    let mut w = (a - lambda2 / rho).clamp(lo, hi);
    for _ in 0..OMEGA_MAX_STEPS {
        let d = deriv(w);
        if d.abs() < OMEGA_DERIV_TOL {
            return w;
        }
        if d > 0.0 {
            hi = w;
        } else {
            lo = w;
        }
        let newton = w - d / second(w);
        w = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= f64::EPSILON * hi.max(1.0) {
            break;
        }
    }
    w
}

/// Assignment-block update for one OD-period group: `p` routes × `m` drivers,
/// stored driver by driver. Solves
/// `S (ρ11ᵀ + 3ρI) = −λ₁1ᵀ − Λ₅ − Λ₈ − Λ₁₀ + ρu1ᵀ + ρ(W + H + Z)`
/// with `(11ᵀ + 3I)⁻¹ = (I − 11ᵀ/(3 + m))/3` acting on the driver index.
#[allow(clippy::too_many_arguments)]
pub fn s_update(
    p: usize,
    m: usize,
    l1: &[f64],
    l5: &[f64],
    l8: &[f64],
    l10: &[f64],
    w: &[f64],
    h: &[f64],
    z: &[f64],
    u: &[f64],
    rho: f64,
    out: &mut [f64],
) {
    let mut row_sum = vec![0.0; p];
    for k in 0..m {
        for r in 0..p {
            let i = k * p + r;
            let rhs = -l1[r] - l5[i] - l8[i] - l10[i] + rho * (u[r] + w[i] + h[i] + z[i]);
            out[i] = rhs;
            row_sum[r] += rhs;
        }
    }
    let shrink = 1.0 / (3.0 + m as f64);
    let scale = 1.0 / (3.0 * rho);
    for k in 0..m {
        for r in 0..p {
            let i = k * p + r;
            out[i] = scale * (out[i] - shrink * row_sum[r]);
        }
    }
}

/// Column update of the simplex copy: `ρ(11ᵀ + I) w = ρ1 + ρs − λ₄1 + Λ₅`.
pub fn w_update(s: &[f64], l4: f64, l5: &[f64], rho: f64, out: &mut [f64]) {
    let p = s.len() as f64;
    let mut total = 0.0;
    for (o, (&si, &li)) in out.iter_mut().zip(s.iter().zip(l5)) {
        *o = rho + rho * si - l4 + li;
        total += *o;
    }
    let shift = total / (1.0 + p);
    for o in out.iter_mut() {
        *o = (*o - shift) / rho;
    }
}

/// Column update of the fairness copy:
/// `ρ(δδᵀ + I) h = −λ₆δ − ρβδ + ρ(bη)δ + Λ₈ + ρs`.
pub fn h_update(s: &[f64], delta: &[f64], l6: f64, l8: &[f64], beta: f64, bound: f64, rho: f64, out: &mut [f64]) {
    let coef = -l6 - rho * beta + rho * bound;
    let mut dot = 0.0;
    let mut dd = 0.0;
    for i in 0..s.len() {
        out[i] = coef * delta[i] + l8[i] + rho * s[i];
        dot += delta[i] * out[i];
        dd += delta[i] * delta[i];
    }
    let shift = dot / (1.0 + dd);
    for i in 0..s.len() {
        out[i] = (out[i] - shift * delta[i]) / rho;
    }
}

/// Fairness slack: `max(0, bη − hᵀδ − λ₆/ρ)`.
pub fn beta_update(h: &[f64], delta: &[f64], l6: f64, bound: f64, rho: f64) -> f64 {
    let hd: f64 = h.iter().zip(delta).map(|(a, b)| a * b).sum();
    (bound - hd - l6 / rho).max(0.0)
}

/// Scalar copy of the binarity-regularized variable: minimizes
/// `−(λ̃/2) z(z − 1) + Λ₁₀(s − z) + (ρ/2)(s − z)²` over `z ∈ [0, 1]`.
pub fn z_update(s: f64, l10: f64, rho: f64, lambda_tilde: f64) -> Result<f64> {
    if rho == lambda_tilde {
        return Err(AdmmError::SingularZStep { rho });
    }
    let pull = rho * s + l10;
    if rho > lambda_tilde {
        Ok(((pull - 0.5 * lambda_tilde) / (rho - lambda_tilde)).clamp(0.0, 1.0))
    } else if pull >= 0.5 * rho {
        // concave: minimizer is an endpoint; z = 1 wins iff f(1) ≤ f(0)
        Ok(1.0)
    } else {
        Ok(0.0)
    }
}

/// Binarity regularizer `−(λ̃/2) Σ x(x − 1)`.
pub fn regularizer_value(x: &[f64], lambda_tilde: f64) -> f64 {
    -0.5 * lambda_tilde * x.iter().map(|&v| v * (v - 1.0)).sum::<f64>()
}

/// Payment step. With `y_i = α_i(δᵀu_i − γ_i) + λ₇ᵢ/ρ` and
/// `s = Ω − β̃ − λ₉/ρ`, minimizes `Σ max(0, y_i − c_i)² + (Σc − s)²` over
/// `c ≥ 0`; the companion slack is `μ_i = max(0, c_i − y_i)`.
pub fn payment_update(y: &[f64], s: f64, c: &mut [f64], mu: &mut [f64]) {
    let n = y.len();
    if n == 0 {
        return;
    }
    let pos_sum: f64 = y.iter().map(|v| v.max(0.0)).sum();
    if pos_sum > s {
        // Σc exceeds s by σ > 0, and c_i = max(0, y_i − σ)
        let mut sorted: Vec<f64> = y.iter().copied().filter(|&v| v > 0.0).collect();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let mut sigma = 0.0;
        let mut top = 0.0;
        for k in 0..=sorted.len() {
            let cand = (top - s) / (k as f64 + 1.0);
            let below_next = k == sorted.len() || sorted[k] <= cand;
            let above_last = k == 0 || cand < sorted[k - 1];
            if below_next && above_last {
                sigma = cand;
                break;
            }
            if k < sorted.len() {
                top += sorted[k];
            }
        }
        for i in 0..n {
            c[i] = (y[i] - sigma).max(0.0);
        }
    } else {
        // budget not binding on the payments: meet every y_i and spread the rest
        let spread = (s - pos_sum) / n as f64;
        for i in 0..n {
            c[i] = y[i].max(0.0) + spread;
        }
    }
    for i in 0..n {
        mu[i] = (c[i] - y[i]).max(0.0);
    }
}

/// Budget slack: `max(0, Ω − Σc − λ₉/ρ)`.
pub fn budget_slack_update(total_cost: f64, budget: f64, l9: f64, rho: f64) -> f64 {
    (budget - total_cost - l9 / rho).max(0.0)
}

/// The matrix `ĨᵀĨ + 1̃1̃ᵀ` of the payment step for `n` organizations, row
/// major, over `[c; μ]`.
pub fn payment_system_matrix(n: usize) -> Vec<Vec<f64>> {
    let mut m = vec![vec![0.0; 2 * n]; 2 * n];
    for i in 0..n {
        m[i][i] += 1.0;
        m[n + i][n + i] += 1.0;
        m[i][n + i] -= 1.0;
        m[n + i][i] -= 1.0;
        for j in 0..n {
            m[i][j] += 1.0;
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    fn golden(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
        let g = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..300 {
            let c = b - g * (b - a);
            let d = a + g * (b - a);
            if f(c) < f(d) {
                b = d;
            } else {
                a = c;
            }
        }
        0.5 * (a + b)
    }

    #[test]
    fn omega_constant_time_closed_form() {
        let p = BprParams {
            free_flow_time_h: 0.3,
            capacity: 1e12,
        };
        for (a, l2, rho) in [(5.0, 0.2, 1.0), (0.1, 1.0, 2.0), (10.0, -3.0, 0.5)] {
            let expect = f64::max(0.0, a - (0.3 + l2) / rho);
            assert!((omega_subproblem(a, l2, rho, p) - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn omega_zero_at_boundary() {
        let p = BprParams {
            free_flow_time_h: 0.1,
            capacity: 10.0,
        };
        assert_eq!(omega_subproblem(0.0, 0.0, 1.0, p), 0.0);
    }

    #[test]
    fn omega_matches_golden_section() {
        let p = BprParams {
            free_flow_time_h: 0.1,
            capacity: 10.0,
        };
        let (a, l2, rho) = (20.0, 0.0, 1.0);
        let f = |w: f64| w * p.travel_time(w) + l2 * (w - a) + 0.5 * rho * (w - a).powi(2);
        let oracle = golden(f, 0.0, 40.0);
        assert!((omega_subproblem(a, l2, rho, p) - oracle).abs() < 1e-6);
    }

    #[test]
    fn s_inverse_identity_m2() {
        // (11ᵀ + 3I)·(I − 11ᵀ/5)/3 = I
        let m = 2.0;
        for i in 0..2 {
            for j in 0..2 {
                let mut acc = 0.0f64;
                for k in 0..2 {
                    let a = 1.0 + if i == k { 3.0 } else { 0.0 };
                    let b = ((if k == j { 1.0 } else { 0.0 }) - 1.0 / (3.0 + m)) / 3.0;
                    acc += a * b;
                }
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((acc - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn s_fixed_point_of_average() {
        let (p, m) = (3, 2);
        let w = vec![0.2, 0.3, 0.5, 0.2, 0.3, 0.5];
        let u = vec![0.4, 0.6, 1.0];
        let zero = vec![0.0; 6];
        let mut out = vec![0.0; 6];
        s_update(p, m, &[0.0; 3], &zero, &zero, &zero, &w, &w, &w, &u, 1.7, &mut out);
        for (a, b) in out.iter().zip(&w) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn z_examples() {
        assert_eq!(z_update(0.3, 0.0, 1.0, 0.0).unwrap(), 0.3);
        assert_eq!(z_update(1.4, 0.0, 1.0, 0.0).unwrap(), 1.0);
        assert!(z_update(0.3, 0.0, 1.0, 1.0).is_err());
        // concave regime: f(0) = 0.18, f(1) = 0.08, so the minimizer is 1
        assert_eq!(z_update(0.6, 0.0, 1.0, 2.0).unwrap(), 1.0);
        assert_eq!(z_update(0.4, 0.0, 1.0, 2.0).unwrap(), 0.0);
    }

    #[test]
    fn regularizer_examples() {
        assert_eq!(regularizer_value(&[0.0, 1.0, 1.0], 3.0), 0.0);
        assert_eq!(regularizer_value(&[0.5], 2.0), 0.25);
    }

    #[test]
    fn payment_system_single_org() {
        let m = payment_system_matrix(1);
        assert_eq!(m, vec![vec![2.0, -1.0], vec![-1.0, 1.0]]);
        let inv = [[1.0, 1.0], [1.0, 2.0]];
        for i in 0..2 {
            for j in 0..2 {
                let acc: f64 = (0..2).map(|k| m[i][k] * inv[k][j]).sum();
                assert_eq!(acc, if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn payment_update_matches_grid() {
        let cases = [
            (vec![3.0, -1.0], 1.0),
            (vec![3.0, 2.0], 10.0),
            (vec![-2.0, -1.0], -4.0),
            (vec![5.0, 4.0, 0.5], 2.0),
        ];
        for (y, s) in cases {
            let n = y.len();
            let mut c = vec![0.0; n];
            let mut mu = vec![0.0; n];
            payment_update(&y, s, &mut c, &mut mu);
            let obj = |c: &[f64]| {
                y.iter().zip(c).map(|(&yi, &ci)| (yi - ci).max(0.0).powi(2)).sum::<f64>()
                    + (c.iter().sum::<f64>() - s).powi(2)
            };
            let best = obj(&c);
            // coarse grid check of optimality
            let grid: Vec<f64> = (0..=120).map(|k| k as f64 * 0.1).collect();
            let mut idx = vec![0usize; n];
            loop {
                let trial: Vec<f64> = idx.iter().map(|&k| grid[k]).collect();
                assert!(obj(&trial) >= best - 1e-9, "{y:?} {s} {c:?}");
                let mut pos = 0;
                while pos < n {
                    idx[pos] += 1;
                    if idx[pos] < grid.len() {
                        break;
                    }
                    idx[pos] = 0;
                    pos += 1;
                }
                if pos == n {
                    break;
                }
            }
            assert!(c.iter().all(|&v| v >= 0.0));
        }
    }
}
