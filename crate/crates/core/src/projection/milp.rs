//! Generic mixed-integer linear programs and MPS export.

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{ProjectionError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowOp {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MilpVar {
    pub name: String,
    pub objective: f64,
    pub lower: f64,
    pub upper: f64,
    pub integer: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MilpRow {
    pub name: String,
    /// `(variable index, coefficient)`, each variable at most once.
    pub coeffs: Vec<(usize, f64)>,
    pub op: RowOp,
    pub rhs: f64,
}

/// Minimize `cᵀx + offset` over linear rows and bounds, some variables integer.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MilpInstance {
    pub vars: Vec<MilpVar>,
    pub rows: Vec<MilpRow>,
    /// Constant added to every objective value.
    pub offset: f64,
}

impl RowOp {
    pub fn holds(self, lhs: f64, rhs: f64, tol: f64) -> bool {
        match self {
            RowOp::Le => lhs <= rhs + tol,
            RowOp::Ge => lhs >= rhs - tol,
            RowOp::Eq => (lhs - rhs).abs() <= tol,
        }
    }
}

impl MilpInstance {
    pub fn add_var(&mut self, name: impl Into<String>, objective: f64, lower: f64, upper: f64, integer: bool) -> usize {
        self.vars.push(MilpVar {
            name: name.into(),
            objective,
            lower,
            upper,
            integer,
        });
        self.vars.len() - 1
    }

    pub fn add_row(&mut self, name: impl Into<String>, coeffs: Vec<(usize, f64)>, op: RowOp, rhs: f64) {
        self.rows.push(MilpRow {
            name: name.into(),
            coeffs,
            op,
            rhs,
        });
    }

    pub fn num_integer(&self) -> usize {
        self.vars.iter().filter(|v| v.integer).count()
    }

    /// Checks indices, finiteness and bound order.
    pub fn validate(&self) -> Result<()> {
        let bad = |message: String| Err(ProjectionError::Malformed(message));
        for (i, v) in self.vars.iter().enumerate() {
            if !v.objective.is_finite() || v.lower.is_nan() || v.upper.is_nan() {
                return bad(format!("variable {i} ({}) has a non-finite coefficient", v.name));
            }
            if v.lower > v.upper || v.lower == f64::INFINITY || v.upper == f64::NEG_INFINITY {
                return bad(format!("variable {i} ({}) has empty bounds", v.name));
            }
        }
        for (k, row) in self.rows.iter().enumerate() {
            if !row.rhs.is_finite() {
                return bad(format!("row {k} ({}) has a non-finite right-hand side", row.name));
            }
            let mut seen = std::collections::HashSet::new();
            for &(j, a) in &row.coeffs {
                if j >= self.vars.len() || !a.is_finite() || !seen.insert(j) {
                    return bad(format!("row {k} ({}) has a bad entry for variable {j}", row.name));
                }
            }
        }
        if !self.offset.is_finite() {
            return bad("objective offset is not finite".into());
        }
        Ok(())
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.offset + self.vars.iter().zip(x).map(|(v, &xi)| v.objective * xi).sum::<f64>()
    }

    pub fn row_value(&self, row: &MilpRow, x: &[f64]) -> f64 {
        row.coeffs.iter().map(|&(j, a)| a * x[j]).sum()
    }

    /// Whether `x` satisfies bounds, integrality and every row to within `tol`.
    pub fn is_feasible(&self, x: &[f64], tol: f64) -> bool {
        x.len() == self.vars.len()
            && self.vars.iter().zip(x).all(|(v, &xi)| {
                xi >= v.lower - tol && xi <= v.upper + tol && (!v.integer || (xi - xi.round()).abs() <= tol)
            })
            && self
                .rows
                .iter()
                .all(|row| row.op.holds(self.row_value(row, x), row.rhs, tol * row.rhs.abs().max(1.0)))
    }

    /// Writes the instance in free-format MPS. Names are replaced by
    /// positional ones (`x12`, `r3`) so arbitrary labels cannot break the format.
    pub fn write_mps(&self, name: &str, mut out: impl Write) -> std::io::Result<()> {
        let mut s = String::new();
        let _ = writeln!(s, "NAME {}", sanitize(name));
        let _ = writeln!(s, "ROWS");
        let _ = writeln!(s, " N obj");
        for (k, row) in self.rows.iter().enumerate() {
            let t = match row.op {
                RowOp::Le => 'L',
                RowOp::Ge => 'G',
                RowOp::Eq => 'E',
            };
            let _ = writeln!(s, " {t} r{k}");
        }
        let mut by_var: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.vars.len()];
        for (k, row) in self.rows.iter().enumerate() {
            for &(j, a) in &row.coeffs {
                by_var[j].push((k, a));
            }
        }
        let _ = writeln!(s, "COLUMNS");
        let mut in_int = false;
        for (j, v) in self.vars.iter().enumerate() {
            if v.integer != in_int {
                let tag = if v.integer { "'INTORG'" } else { "'INTEND'" };
                let _ = writeln!(s, " MARKER 'MARKER' {tag}");
                in_int = v.integer;
            }
            if v.objective != 0.0 {
                let _ = writeln!(s, " x{j} obj {:e}", v.objective);
            }
            for &(k, a) in &by_var[j] {
                let _ = writeln!(s, " x{j} r{k} {a:e}");
            }
            if v.objective == 0.0 && by_var[j].is_empty() {
                let _ = writeln!(s, " x{j} obj 0");
            }
        }
        if in_int {
            let _ = writeln!(s, " MARKER 'MARKER' 'INTEND'");
        }
        let _ = writeln!(s, "RHS");
        if self.offset != 0.0 {
            // the objective row's RHS holds the negated constant
            let _ = writeln!(s, " rhs obj {:e}", -self.offset);
        }
        for (k, row) in self.rows.iter().enumerate() {
            if row.rhs != 0.0 {
                let _ = writeln!(s, " rhs r{k} {:e}", row.rhs);
            }
        }
        let _ = writeln!(s, "BOUNDS");
        for (j, v) in self.vars.iter().enumerate() {
            if v.lower == v.upper {
                let _ = writeln!(s, " FX bnd x{j} {:e}", v.lower);
                continue;
            }
            match (v.lower.is_finite(), v.upper.is_finite()) {
                (false, false) => {
                    let _ = writeln!(s, " FR bnd x{j}");
                }
                (false, true) => {
                    let _ = writeln!(s, " MI bnd x{j}");
                    let _ = writeln!(s, " UP bnd x{j} {:e}", v.upper);
                }
                (true, up) => {
                    let _ = writeln!(s, " LO bnd x{j} {:e}", v.lower);
                    if up {
                        let _ = writeln!(s, " UP bnd x{j} {:e}", v.upper);
                    } else if v.integer {
                        let _ = writeln!(s, " PL bnd x{j}");
                    }
                }
            }
        }
        let _ = writeln!(s, "ENDATA");
        out.write_all(s.as_bytes())
    }
}

fn sanitize(name: &str) -> String {
    let cleaned: String = name
        .chars()
        .map(|c| if c.is_ascii_graphic() { c } else { '_' })
        .collect();
    if cleaned.is_empty() {
        "milp".into()
    } else {
        cleaned
    }
}
