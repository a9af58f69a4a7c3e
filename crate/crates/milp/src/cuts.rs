//! Root strengthening: implied bounds and subset cuts on big-M rows.
//!
//! A big-M row has the form `sum_i a_i x_i - M b <= h` with `h >= 0`, one
//! binary `b`, and continuous `x_i` with `a_i > 0` and bounds `[0, u_i]`.
//! For any subset `S` of its terms with `sum_S a_i u_i > h`,
//!
//! ```text
//! sum_{i in S} a_i x_i <= h + (sum_{i in S} a_i u_i - h) b
//! ```
//!
//! holds at every integral point: with `b = 0` the whole row is capped at
//! `h`, and with `b = 1` each term is capped by its bound. The LP relaxation
//! of the big-M row alone is much weaker when only a few terms are large.

use crate::model::{Model, Row, Sense, VarId};

/// Tighten continuous upper bounds implied by `<=` rows whose coefficients
/// are all positive over columns with finite lower bounds. Returns the
/// number of bounds changed.
pub fn tighten_bounds(model: &mut Model) -> usize {
    let mut changed = 0;
    for r in 0..model.rows.len() {
        let row = &model.rows[r];
        if row.sense != Sense::Le || row.coefficients.iter().any(|&(v, a)| a <= 0.0 || !model.vars[v.0].lower.is_finite()) {
            continue;
        }
        let floor: f64 = row.coefficients.iter().map(|&(v, a)| a * model.vars[v.0].lower).sum();
        let slack = row.rhs - floor;
        if slack < 0.0 {
            continue;
        }
        for k in 0..model.rows[r].coefficients.len() {
            let (v, a) = model.rows[r].coefficients[k];
            let var = &mut model.vars[v.0];
            let implied = var.lower + slack / a;
            if !var.integer && implied < var.upper {
                var.upper = implied;
                changed += 1;
            }
        }
    }
    changed
}

/// The binary and continuous terms of a big-M row, or `None` if the row
/// does not have that shape.
fn big_m_terms<'a>(model: &Model, row: &'a Row) -> Option<(VarId, Vec<&'a (VarId, f64)>)> {
    if row.sense != Sense::Le || row.rhs < 0.0 {
        return None;
    }
    let mut binary = None;
    let mut terms = Vec::with_capacity(row.coefficients.len());
    for t in &row.coefficients {
        let v = &model.vars[t.0 .0];
        if v.integer {
            if binary.is_some() || t.1 >= 0.0 || v.lower != 0.0 || v.upper != 1.0 {
                return None;
            }
            binary = Some(t.0);
        } else {
            if t.1 <= 0.0 || v.lower != 0.0 || !v.upper.is_finite() {
                return None;
            }
            terms.push(t);
        }
    }
    binary.map(|b| (b, terms))
}

/// Most violated subset cut of every big-M row at the point `x`.
pub fn separate(model: &Model, x: &[f64], tol: f64) -> Vec<Row> {
    let mut out = Vec::new();
    for row in &model.rows {
        let Some((b, terms)) = big_m_terms(model, row) else {
            continue;
        };
        let h = row.rhs;
        let bs = x[b.0];
        // the violation is additive in S, so take every positive contribution
        let mut cut = Vec::new();
        let mut cap = 0.0;
        let mut violation = -h * (1.0 - bs);
        for &&(v, a) in &terms {
            let u = model.vars[v.0].upper;
            let gain = a * (x[v.0] - u * bs);
            if gain > 0.0 {
                cut.push((v, a));
                cap += a * u;
                violation += gain;
            }
        }
        if cap > h && violation > tol * h.max(1.0) {
            cut.push((b, h - cap));
            out.push(Row {
                name: format!("{}_cut{}", row.name, out.len()),
                coefficients: cut,
                sense: Sense::Le,
                rhs: h,
            });
        }
    }
    out
}
