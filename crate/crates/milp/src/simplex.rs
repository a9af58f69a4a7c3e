//! Dense-tableau bounded-variable simplex.
//!
//! Every row `i` of the model becomes `a_i x - s_i = 0` with a slack `s_i`
//! whose bounds encode the row sense, so all right-hand sides are zero and
//! every variable (structural, slack or artificial) is handled by the same
//! bounded primal/dual machinery. The tableau is rebuilt from the basis
//! (`refactor`) at the start of every solve and periodically afterwards,
//! which keeps round-off from accumulating across long pivot sequences.

use crate::model::{Model, Sense};
use crate::MilpError;

/// Nonbasic position or basic membership of a column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColStatus {
    Basic,
    AtLower,
    AtUpper,
    /// Nonbasic free column resting at zero.
    Free,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

#[derive(Debug, Clone, Copy)]
pub struct LpOptions {
    pub max_iterations: usize,
    /// Absolute primal feasibility tolerance on variable and row bounds.
    pub feasibility_tol: f64,
    /// Reduced-cost tolerance, relative to the largest objective coefficient.
    pub optimality_tol: f64,
    pub refactor_every: usize,
}

impl Default for LpOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200_000,
            feasibility_tol: 1e-9,
            optimality_tol: 1e-11,
            refactor_every: 100,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Values of the model's structural variables.
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

/// Basis snapshot used to warm-start a re-solve after bound changes.
#[derive(Debug, Clone, PartialEq)]
pub struct Basis {
    pub basic: Vec<usize>,
    pub status: Vec<ColStatus>,
}

const PIVOT_TOL: f64 = 1e-9;

/// Column-wise standard form shared by every solve of one model.
#[derive(Debug, Clone)]
pub struct StandardForm {
    pub m: usize,
    pub n_struct: usize,
    cols: Vec<Vec<(usize, f64)>>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    /// Objective scaled by `1 / cost_scale`; slacks and artificials cost 0.
    cost: Vec<f64>,
    cost_scale: f64,
    offset: f64,
    art_start: usize,
    initial: Basis,
    initial_x: Vec<f64>,
}

impl StandardForm {
    pub fn new(model: &Model) -> Result<Self, MilpError> {
        model.validate()?;
        let m = model.num_rows();
        let n = model.num_vars();
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n + m];
        for (i, row) in model.rows.iter().enumerate() {
            for &(v, a) in &row.coefficients {
                if a != 0.0 {
                    cols[v.0].push((i, a));
                }
            }
        }
        // merge duplicate entries within a column
        for col in cols.iter_mut().take(n) {
            col.sort_by_key(|&(i, _)| i);
            col.dedup_by(|b, a| {
                if a.0 == b.0 {
                    a.1 += b.1;
                    true
                } else {
                    false
                }
            });
            col.retain(|&(_, a)| a != 0.0);
        }
        let mut lower = Vec::with_capacity(n + m);
        let mut upper = Vec::with_capacity(n + m);
        for v in &model.vars {
            lower.push(v.lower);
            upper.push(v.upper);
        }
        for (i, row) in model.rows.iter().enumerate() {
            cols[n + i].push((i, -1.0));
            let (lo, hi) = match row.sense {
                Sense::Le => (f64::NEG_INFINITY, row.rhs),
                Sense::Ge => (row.rhs, f64::INFINITY),
                Sense::Eq => (row.rhs, row.rhs),
            };
            lower.push(lo);
            upper.push(hi);
        }
        let cost_scale = model.vars.iter().map(|v| v.objective.abs()).fold(0.0_f64, f64::max).max(1e-300);
        let mut cost: Vec<f64> = model.vars.iter().map(|v| v.objective / cost_scale).collect();
        cost.resize(n + m, 0.0);

        // Starting point: structurals at a finite bound, slacks basic; rows whose
        // slack would start outside its bounds get an artificial column.
        let mut status = Vec::with_capacity(n + m);
        let mut x = vec![0.0; n + m];
        for j in 0..n {
            let (lo, hi) = (lower[j], upper[j]);
            if lo.is_finite() {
                status.push(ColStatus::AtLower);
                x[j] = lo;
            } else if hi.is_finite() {
                status.push(ColStatus::AtUpper);
                x[j] = hi;
            } else {
                status.push(ColStatus::Free);
            }
        }
        let mut activity = vec![0.0; m];
        for j in 0..n {
            if x[j] != 0.0 {
                for &(i, a) in &cols[j] {
                    activity[i] += a * x[j];
                }
            }
        }
        let mut basic = Vec::with_capacity(m);
        let mut art_status = Vec::new();
        let mut art_x = Vec::new();
        let art_start = n + m;
        for (i, &act) in activity.iter().enumerate().take(m) {
            let s = n + i;
            let target = if act < lower[s] {
                Some((lower[s], ColStatus::AtLower))
            } else if act > upper[s] {
                Some((upper[s], ColStatus::AtUpper))
            } else {
                None
            };
            match target {
                None => {
                    status.push(ColStatus::Basic);
                    x[s] = act;
                    basic.push(s);
                }
                Some((v, st)) => {
                    status.push(st);
                    x[s] = v;
                    // a_i x - s_i + sigma * art = 0  =>  art = (v - act) / sigma
                    let sigma = if v - act > 0.0 { 1.0 } else { -1.0 };
                    let art = cols.len();
                    cols.push(vec![(i, sigma)]);
                    lower.push(0.0);
                    upper.push(f64::INFINITY);
                    cost.push(0.0);
                    art_status.push(ColStatus::Basic);
                    art_x.push((v - act) / sigma);
                    basic.push(art);
                }
            }
        }
        status.extend(art_status);
        x.extend(art_x);
        Ok(Self {
            m,
            n_struct: n,
            cols,
            lower,
            upper,
            cost,
            cost_scale,
            offset: model.objective_offset,
            art_start,
            initial: Basis { basic, status },
            initial_x: x,
        })
    }

    pub fn ncols(&self) -> usize {
        self.cols.len()
    }

    pub fn has_artificials(&self) -> bool {
        self.cols.len() > self.art_start
    }

    /// Structural bounds (artificials are always fixed at zero outside phase 1).
    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lo = self.lower.clone();
        let mut hi = self.upper.clone();
        for j in self.art_start..self.cols.len() {
            lo[j] = 0.0;
            hi[j] = 0.0;
        }
        (lo, hi)
    }

    pub fn unscaled_objective(&self, x: &[f64]) -> f64 {
        self.offset + (0..self.n_struct).map(|j| self.cost[j] * self.cost_scale * x[j]).sum::<f64>()
    }
}

/// Working tableau over a [`StandardForm`] with its own (node) bounds.
pub struct Tableau<'a> {
    sf: &'a StandardForm,
    m: usize,
    ncols: usize,
    tab: Vec<f64>,
    basis: Vec<usize>,
    status: Vec<ColStatus>,
    x: Vec<f64>,
    d: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    opts: LpOptions,
    pub iterations: usize,
    since_refactor: usize,
    row_nz: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Outcome {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

impl<'a> Tableau<'a> {
    /// Cold start from the slack/artificial basis of the standard form.
    pub fn cold(sf: &'a StandardForm, opts: LpOptions) -> Result<Self, MilpError> {
        let mut t = Self::blank(sf, sf.lower.clone(), sf.upper.clone(), opts);
        t.basis = sf.initial.basic.clone();
        t.status = sf.initial.status.clone();
        t.x = sf.initial_x.clone();
        t.refactor()?;
        Ok(t)
    }

    /// Warm start from `basis` under the given bounds (artificials fixed at 0).
    pub fn warm(sf: &'a StandardForm, basis: &Basis, lower: Vec<f64>, upper: Vec<f64>, opts: LpOptions) -> Result<Self, MilpError> {
        let mut t = Self::blank(sf, lower, upper, opts);
        t.basis = basis.basic.clone();
        t.status = basis.status.clone();
        for j in 0..t.ncols {
            t.x[j] = t.nonbasic_value(j);
        }
        t.refactor()?;
        Ok(t)
    }

    fn blank(sf: &'a StandardForm, lower: Vec<f64>, upper: Vec<f64>, opts: LpOptions) -> Self {
        let m = sf.m;
        let ncols = sf.ncols();
        Self {
            sf,
            m,
            ncols,
            tab: vec![0.0; m * ncols],
            basis: Vec::new(),
            status: Vec::new(),
            x: vec![0.0; ncols],
            d: vec![0.0; ncols],
            lower,
            upper,
            opts,
            iterations: 0,
            since_refactor: 0,
            row_nz: Vec::with_capacity(ncols),
        }
    }

    fn nonbasic_value(&self, j: usize) -> f64 {
        match self.status[j] {
            ColStatus::AtLower => self.lower[j],
            ColStatus::AtUpper => self.upper[j],
            ColStatus::Free | ColStatus::Basic => {
                if self.lower[j].is_finite() && self.lower[j] > 0.0 {
                    self.lower[j]
                } else if self.upper[j].is_finite() && self.upper[j] < 0.0 {
                    self.upper[j]
                } else {
                    0.0
                }
            }
        }
    }

    /// Rebuild the tableau `B^-1 [A | -I | art]`, basic values and reduced
    /// costs from the current basis and nonbasic positions.
    fn refactor(&mut self) -> Result<(), MilpError> {
        let m = self.m;
        let ncols = self.ncols;
        // repair statuses that became inconsistent with the bounds
        for j in 0..ncols {
            match self.status[j] {
                ColStatus::AtLower if !self.lower[j].is_finite() => {
                    self.status[j] = if self.upper[j].is_finite() { ColStatus::AtUpper } else { ColStatus::Free };
                }
                ColStatus::AtUpper if !self.upper[j].is_finite() => {
                    self.status[j] = if self.lower[j].is_finite() { ColStatus::AtLower } else { ColStatus::Free };
                }
                ColStatus::Free if self.lower[j].is_finite() => self.status[j] = ColStatus::AtLower,
                ColStatus::Free if self.upper[j].is_finite() => self.status[j] = ColStatus::AtUpper,
                _ => {}
            }
            if self.status[j] != ColStatus::Basic {
                self.x[j] = self.nonbasic_value(j);
            }
        }
        // dense basis matrix, inverted by Gauss-Jordan with partial pivoting
        let mut b = vec![0.0; m * m];
        for (k, &col) in self.basis.iter().enumerate() {
            for &(i, a) in &self.sf.cols[col] {
                b[i * m + k] = a;
            }
        }
        let mut inv = vec![0.0; m * m];
        for i in 0..m {
            inv[i * m + i] = 1.0;
        }
        for c in 0..m {
            let mut p = c;
            let mut best = b[c * m + c].abs();
            for r in c + 1..m {
                let v = b[r * m + c].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best < 1e-12 {
                return Err(MilpError::SingularBasis);
            }
            if p != c {
                for k in 0..m {
                    b.swap(c * m + k, p * m + k);
                    inv.swap(c * m + k, p * m + k);
                }
            }
            let piv = b[c * m + c];
            for k in 0..m {
                b[c * m + k] /= piv;
                inv[c * m + k] /= piv;
            }
            for r in 0..m {
                if r == c {
                    continue;
                }
                let f = b[r * m + c];
                if f != 0.0 {
                    for k in 0..m {
                        b[r * m + k] -= f * b[c * m + k];
                        inv[r * m + k] -= f * inv[c * m + k];
                    }
                }
            }
        }
        // B was assembled with basis position k as column k, so B^-1 rows are
        // indexed by basis position: tab = inv * M.
        self.tab.iter_mut().for_each(|v| *v = 0.0);
        for (j, col) in self.sf.cols.iter().enumerate() {
            for &(r, a) in col {
                for i in 0..m {
                    let v = inv[i * m + r];
                    if v != 0.0 {
                        self.tab[i * ncols + j] += a * v;
                    }
                }
            }
        }
        for (k, &col) in self.basis.iter().enumerate() {
            for i in 0..m {
                self.tab[i * ncols + col] = if i == k { 1.0 } else { 0.0 };
            }
            self.status[col] = ColStatus::Basic;
        }
        self.recompute_basic_values();
        self.since_refactor = 0;
        Ok(())
    }

    fn recompute_basic_values(&mut self) {
        let (m, ncols) = (self.m, self.ncols);
        let mut xb = vec![0.0; m];
        for j in 0..ncols {
            if self.status[j] == ColStatus::Basic || self.x[j] == 0.0 {
                continue;
            }
            let xj = self.x[j];
            for (i, v) in xb.iter_mut().enumerate() {
                let t = self.tab[i * ncols + j];
                if t != 0.0 {
                    *v -= t * xj;
                }
            }
        }
        for (i, &col) in self.basis.iter().enumerate() {
            self.x[col] = xb[i];
        }
    }

    fn compute_reduced_costs(&mut self, cost: &[f64]) {
        let (m, ncols) = (self.m, self.ncols);
        self.d.copy_from_slice(cost);
        for i in 0..m {
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                let row = &self.tab[i * ncols..(i + 1) * ncols];
                for (d, &t) in self.d.iter_mut().zip(row) {
                    *d -= cb * t;
                }
            }
        }
        for &col in &self.basis {
            self.d[col] = 0.0;
        }
    }

    fn pivot(&mut self, r: usize, q: usize) {
        let ncols = self.ncols;
        let p = self.tab[r * ncols + q];
        self.row_nz.clear();
        for j in 0..ncols {
            let v = self.tab[r * ncols + j];
            if v != 0.0 {
                let nv = v / p;
                self.tab[r * ncols + j] = nv;
                self.row_nz.push(j);
            }
        }
        self.tab[r * ncols + q] = 1.0;
        let (before, rest) = self.tab.split_at_mut(r * ncols);
        let (pivot_row, after) = rest.split_at_mut(ncols);
        for chunk in before.chunks_exact_mut(ncols).chain(after.chunks_exact_mut(ncols)) {
            let f = chunk[q];
            if f != 0.0 {
                for &j in &self.row_nz {
                    chunk[j] -= f * pivot_row[j];
                }
                chunk[q] = 0.0;
            }
        }
        let dq = self.d[q];
        if dq != 0.0 {
            for &j in &self.row_nz {
                self.d[j] -= dq * pivot_row[j];
            }
            self.d[q] = 0.0;
        }
        let leaving = self.basis[r];
        self.basis[r] = q;
        self.status[q] = ColStatus::Basic;
        // caller sets the leaving column's status
        let _ = leaving;
        self.iterations += 1;
        self.since_refactor += 1;
    }

    fn maybe_refactor(&mut self, cost: &[f64]) -> Result<(), MilpError> {
        if self.since_refactor >= self.opts.refactor_every {
            self.refactor()?;
            self.compute_reduced_costs(cost);
        }
        Ok(())
    }

    fn is_fixed(&self, j: usize) -> bool {
        self.lower[j] == self.upper[j]
    }

    /// Primal simplex on cost vector `cost` from a primal feasible point.
    fn primal(&mut self, cost: &[f64]) -> Result<Outcome, MilpError> {
        let (m, ncols) = (self.m, self.ncols);
        let ftol = self.opts.feasibility_tol;
        let otol = self.opts.optimality_tol;
        self.compute_reduced_costs(cost);
        let mut stall = 0usize;
        let mut last_obj = f64::INFINITY;
        loop {
            if self.iterations >= self.opts.max_iterations {
                return Ok(Outcome::IterationLimit);
            }
            let bland = stall > 50;
            // pricing
            let mut q = usize::MAX;
            let mut dir = 0.0;
            let mut best = 0.0;
            for j in 0..ncols {
                let dj = self.d[j];
                let (cand, dj_dir) = match self.status[j] {
                    ColStatus::Basic => continue,
                    _ if self.is_fixed(j) => continue,
                    ColStatus::AtLower => (dj < -otol, 1.0),
                    ColStatus::AtUpper => (dj > otol, -1.0),
                    ColStatus::Free => (dj.abs() > otol, if dj < 0.0 { 1.0 } else { -1.0 }),
                };
                if cand {
                    if bland {
                        q = j;
                        dir = dj_dir;
                        break;
                    }
                    if dj.abs() > best {
                        best = dj.abs();
                        q = j;
                        dir = dj_dir;
                    }
                }
            }
            if q == usize::MAX {
                return Ok(Outcome::Optimal);
            }
            // Harris two-pass ratio test
            let mut theta_max = f64::INFINITY;
            for i in 0..m {
                let t = self.tab[i * ncols + q];
                if t.abs() <= PIVOT_TOL {
                    continue;
                }
                let rate = -t * dir;
                let b = self.basis[i];
                let lim = if rate < 0.0 {
                    if self.lower[b].is_finite() {
                        (self.x[b] - self.lower[b] + ftol) / -rate
                    } else {
                        continue;
                    }
                } else if self.upper[b].is_finite() {
                    (self.upper[b] - self.x[b] + ftol) / rate
                } else {
                    continue;
                };
                theta_max = theta_max.min(lim);
            }
            let flip = self.upper[q] - self.lower[q];
            let mut r = usize::MAX;
            let mut theta = f64::INFINITY;
            if theta_max.is_finite() {
                let mut best_piv = 0.0;
                for i in 0..m {
                    let t = self.tab[i * ncols + q];
                    if t.abs() <= PIVOT_TOL {
                        continue;
                    }
                    let rate = -t * dir;
                    let b = self.basis[i];
                    let ratio = if rate < 0.0 {
                        if !self.lower[b].is_finite() {
                            continue;
                        }
                        (self.x[b] - self.lower[b]) / -rate
                    } else {
                        if !self.upper[b].is_finite() {
                            continue;
                        }
                        (self.upper[b] - self.x[b]) / rate
                    };
                    if ratio <= theta_max {
                        let better = if bland { r == usize::MAX || b < self.basis[r] } else { t.abs() > best_piv };
                        if better {
                            best_piv = t.abs();
                            r = i;
                            theta = ratio.max(0.0);
                        }
                    }
                }
            }
            if flip.is_finite() && flip <= theta {
                // bound flip, no basis change
                for i in 0..m {
                    let t = self.tab[i * ncols + q];
                    if t != 0.0 {
                        let b = self.basis[i];
                        self.x[b] -= t * dir * flip;
                    }
                }
                if dir > 0.0 {
                    self.status[q] = ColStatus::AtUpper;
                    self.x[q] = self.upper[q];
                } else {
                    self.status[q] = ColStatus::AtLower;
                    self.x[q] = self.lower[q];
                }
                self.iterations += 1;
            } else if r == usize::MAX {
                return Ok(Outcome::Unbounded);
            } else {
                let t_rq = self.tab[r * ncols + q];
                let rate = -t_rq * dir;
                for i in 0..m {
                    let t = self.tab[i * ncols + q];
                    if t != 0.0 {
                        let b = self.basis[i];
                        self.x[b] -= t * dir * theta;
                    }
                }
                self.x[q] += dir * theta;
                let leaving = self.basis[r];
                if rate < 0.0 {
                    self.status[leaving] = ColStatus::AtLower;
                    self.x[leaving] = self.lower[leaving];
                } else {
                    self.status[leaving] = ColStatus::AtUpper;
                    self.x[leaving] = self.upper[leaving];
                }
                self.pivot(r, q);
                self.maybe_refactor(cost)?;
            }
            let obj: f64 = (0..ncols).map(|j| cost[j] * self.x[j]).sum();
            if obj < last_obj - 1e-14 * (1.0 + obj.abs()) {
                last_obj = obj;
                stall = 0;
            } else {
                stall += 1;
            }
        }
    }

    /// Dual simplex from a dual feasible basis.
    fn dual(&mut self, cost: &[f64]) -> Result<Outcome, MilpError> {
        let (m, ncols) = (self.m, self.ncols);
        let ftol = self.opts.feasibility_tol;
        let otol = self.opts.optimality_tol;
        self.compute_reduced_costs(cost);
        loop {
            if self.iterations >= self.opts.max_iterations {
                return Ok(Outcome::IterationLimit);
            }
            // leaving row: largest bound violation
            let mut r = usize::MAX;
            let mut worst = ftol;
            for i in 0..m {
                let b = self.basis[i];
                let v = (self.lower[b] - self.x[b]).max(self.x[b] - self.upper[b]);
                if v > worst {
                    worst = v;
                    r = i;
                }
            }
            if r == usize::MAX {
                return Ok(Outcome::Optimal);
            }
            let leaving = self.basis[r];
            let below = self.x[leaving] < self.lower[leaving];
            let target = if below { self.lower[leaving] } else { self.upper[leaving] };
            // entering column keeps reduced costs sign-feasible
            let eligible = |s: &Self, j: usize| -> Option<f64> {
                let t = s.tab[r * ncols + j];
                if t.abs() <= PIVOT_TOL || s.is_fixed(j) {
                    return None;
                }
                let ok = match s.status[j] {
                    ColStatus::Basic => false,
                    ColStatus::AtLower => (below && t < 0.0) || (!below && t > 0.0),
                    ColStatus::AtUpper => (below && t > 0.0) || (!below && t < 0.0),
                    ColStatus::Free => true,
                };
                ok.then_some(t)
            };
            let mut theta_max = f64::INFINITY;
            for j in 0..ncols {
                if let Some(t) = eligible(self, j) {
                    theta_max = theta_max.min((self.d[j].abs() + otol) / t.abs());
                }
            }
            if !theta_max.is_finite() {
                return Ok(Outcome::Infeasible);
            }
            let mut q = usize::MAX;
            let mut best_piv = 0.0;
            for j in 0..ncols {
                if let Some(t) = eligible(self, j) {
                    if self.d[j].abs() / t.abs() <= theta_max && t.abs() > best_piv {
                        best_piv = t.abs();
                        q = j;
                    }
                }
            }
            let t_rq = self.tab[r * ncols + q];
            let delta = (target - self.x[leaving]) / -t_rq;
            for i in 0..m {
                let t = self.tab[i * ncols + q];
                if t != 0.0 {
                    let b = self.basis[i];
                    self.x[b] -= t * delta;
                }
            }
            self.x[q] += delta;
            self.status[leaving] = if below { ColStatus::AtLower } else { ColStatus::AtUpper };
            self.x[leaving] = target;
            self.pivot(r, q);
            self.maybe_refactor(cost)?;
        }
    }

    fn primal_infeasibility(&self) -> f64 {
        self.basis
            .iter()
            .map(|&b| (self.lower[b] - self.x[b]).max(self.x[b] - self.upper[b]))
            .fold(0.0, f64::max)
    }

    fn dual_infeasibility(&self) -> f64 {
        (0..self.ncols)
            .filter(|&j| !self.is_fixed(j))
            .map(|j| match self.status[j] {
                ColStatus::Basic => 0.0,
                ColStatus::AtLower => (-self.d[j]).max(0.0),
                ColStatus::AtUpper => self.d[j].max(0.0),
                ColStatus::Free => self.d[j].abs(),
            })
            .fold(0.0, f64::max)
    }

    /// Two-phase solve from the cold basis.
    pub fn solve_cold(&mut self) -> Result<LpStatus, MilpError> {
        if self.sf.has_artificials() {
            let mut phase1 = vec![0.0; self.ncols];
            for c in phase1.iter_mut().skip(self.sf.art_start) {
                *c = 1.0;
            }
            match self.primal(&phase1)? {
                Outcome::Optimal => {}
                Outcome::IterationLimit => return Ok(LpStatus::IterationLimit),
                Outcome::Infeasible | Outcome::Unbounded => return Ok(LpStatus::Infeasible),
            }
            let art_sum: f64 = (self.sf.art_start..self.ncols).map(|j| self.x[j]).sum();
            let scale = 1.0 + self.x.iter().take(self.sf.n_struct).map(|v| v.abs()).fold(0.0, f64::max);
            if art_sum > 1e-7 * scale {
                return Ok(LpStatus::Infeasible);
            }
            for j in self.sf.art_start..self.ncols {
                self.lower[j] = 0.0;
                self.upper[j] = 0.0;
                if self.status[j] != ColStatus::Basic {
                    self.status[j] = ColStatus::AtLower;
                    self.x[j] = 0.0;
                }
            }
            self.refactor()?;
        }
        self.finish(false)
    }

    /// Re-solve after bound changes from a warm basis.
    pub fn solve_warm(&mut self) -> Result<LpStatus, MilpError> {
        self.finish(true)
    }

    fn finish(&mut self, dual_first: bool) -> Result<LpStatus, MilpError> {
        let cost = self.sf.cost.clone();
        let ftol = self.opts.feasibility_tol;
        let otol = self.opts.optimality_tol;
        let mut use_dual = dual_first;
        for _round in 0..6 {
            let outcome = if use_dual {
                self.compute_reduced_costs(&cost);
                if self.dual_infeasibility() > 1e3 * otol {
                    // not dual feasible: fall back to a feasibility phase
                    self.restore_primal_feasibility()?
                } else {
                    self.dual(&cost)?
                }
            } else {
                self.primal(&cost)?
            };
            match outcome {
                Outcome::Infeasible => return Ok(LpStatus::Infeasible),
                Outcome::Unbounded => return Ok(LpStatus::Unbounded),
                Outcome::IterationLimit => return Ok(LpStatus::IterationLimit),
                Outcome::Optimal => {}
            }
            self.refactor()?;
            self.compute_reduced_costs(&cost);
            let pinf = self.primal_infeasibility();
            let dinf = self.dual_infeasibility();
            if pinf <= ftol && dinf <= otol {
                return Ok(LpStatus::Optimal);
            }
            use_dual = pinf > ftol;
        }
        Ok(LpStatus::IterationLimit)
    }

    /// Composite phase 1: minimize the sum of bound violations of basic
    /// columns, re-priced after every pivot.
    fn restore_primal_feasibility(&mut self) -> Result<Outcome, MilpError> {
        let ftol = self.opts.feasibility_tol;
        loop {
            if self.primal_infeasibility() <= ftol {
                return Ok(Outcome::Optimal);
            }
            // temporarily relax violated bounds to the current values and
            // charge the violation in the objective
            let mut cost = vec![0.0; self.ncols];
            let saved: Vec<(usize, f64, f64)> = self
                .basis
                .iter()
                .filter_map(|&b| {
                    if self.x[b] < self.lower[b] - ftol {
                        cost[b] = -1.0;
                        Some((b, self.lower[b], self.upper[b]))
                    } else if self.x[b] > self.upper[b] + ftol {
                        cost[b] = 1.0;
                        Some((b, self.lower[b], self.upper[b]))
                    } else {
                        None
                    }
                })
                .collect();
            for &(b, lo, hi) in &saved {
                if self.x[b] < lo {
                    self.lower[b] = f64::NEG_INFINITY;
                    self.upper[b] = lo;
                } else {
                    self.lower[b] = hi;
                    self.upper[b] = f64::INFINITY;
                }
            }
            let before = self.primal_infeasibility_against(&saved);
            let out = self.primal_single_pass(&cost)?;
            for &(b, lo, hi) in &saved {
                self.lower[b] = lo;
                self.upper[b] = hi;
                if self.status[b] != ColStatus::Basic {
                    // left the basis at the relaxed bound, which is the original one
                    self.status[b] = if (self.x[b] - lo).abs() <= (self.x[b] - hi).abs() {
                        ColStatus::AtLower
                    } else {
                        ColStatus::AtUpper
                    };
                    self.x[b] = self.nonbasic_value(b);
                }
            }
            self.refactor()?;
            match out {
                Outcome::IterationLimit => return Ok(Outcome::IterationLimit),
                Outcome::Unbounded => return Ok(Outcome::Infeasible),
                _ => {}
            }
            let after = self.primal_infeasibility();
            if after <= ftol {
                let cost = self.sf.cost.clone();
                return self.primal(&cost);
            }
            if after >= before - ftol {
                return Ok(Outcome::Infeasible);
            }
        }
    }

    fn primal_infeasibility_against(&self, saved: &[(usize, f64, f64)]) -> f64 {
        saved.iter().map(|&(b, lo, hi)| (lo - self.x[b]).max(self.x[b] - hi).max(0.0)).sum()
    }

    fn primal_single_pass(&mut self, cost: &[f64]) -> Result<Outcome, MilpError> {
        let limit = self.iterations + 10 * (self.m + 10);
        let saved_max = self.opts.max_iterations;
        self.opts.max_iterations = saved_max.min(limit);
        let out = self.primal(cost);
        self.opts.max_iterations = saved_max;
        match out? {
            Outcome::IterationLimit if self.iterations < saved_max => Ok(Outcome::Optimal),
            o => Ok(o),
        }
    }

    pub fn basis(&self) -> Basis {
        Basis {
            basic: self.basis.clone(),
            status: self.status.clone(),
        }
    }

    pub fn structural_values(&self) -> Vec<f64> {
        self.x[..self.sf.n_struct].to_vec()
    }

    pub fn objective(&self) -> f64 {
        self.sf.unscaled_objective(&self.x)
    }
}

/// Solve the continuous relaxation of `model` (integrality is ignored).
pub fn solve_lp(model: &Model, opts: LpOptions) -> Result<LpSolution, MilpError> {
    let sf = StandardForm::new(model)?;
    let mut tab = Tableau::cold(&sf, opts)?;
    let status = tab.solve_cold()?;
    let x = tab.structural_values();
    let objective = if status == LpStatus::Optimal { model.objective_value(&x) } else { f64::NAN };
    Ok(LpSolution {
        status,
        x,
        objective,
        iterations: tab.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Sense;

    fn approx(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()))
    }

    #[test]
    fn textbook_maximization() {
        // max 3x + 5y s.t. x <= 4, 2y <= 12, 3x + 2y <= 18 -> (2, 6), 36
        let mut m = Model::new();
        let x = m.add_var("x", 0.0, f64::INFINITY, -3.0);
        let y = m.add_var("y", 0.0, f64::INFINITY, -5.0);
        m.add_row("r1", vec![(x, 1.0)], Sense::Le, 4.0);
        m.add_row("r2", vec![(y, 2.0)], Sense::Le, 12.0);
        m.add_row("r3", vec![(x, 3.0), (y, 2.0)], Sense::Le, 18.0);
        let s = solve_lp(&m, LpOptions::default()).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!(approx(s.objective, -36.0));
        assert!(approx(s.x[0], 2.0) && approx(s.x[1], 6.0));
    }

    #[test]
    fn needs_phase_one() {
        // min x + y s.t. x + y >= 2, x - y = 0.5
        let mut m = Model::new();
        let x = m.add_var("x", 0.0, 10.0, 1.0);
        let y = m.add_var("y", 0.0, 10.0, 1.0);
        m.add_row("cover", vec![(x, 1.0), (y, 1.0)], Sense::Ge, 2.0);
        m.add_row("diff", vec![(x, 1.0), (y, -1.0)], Sense::Eq, 0.5);
        let s = solve_lp(&m, LpOptions::default()).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!(approx(s.x[0], 1.25) && approx(s.x[1], 0.75), "{:?}", s);
    }

    #[test]
    fn detects_infeasible() {
        let mut m = Model::new();
        let x = m.add_var("x", 0.0, 1.0, 1.0);
        m.add_row("r", vec![(x, 1.0)], Sense::Ge, 2.0);
        assert_eq!(solve_lp(&m, LpOptions::default()).unwrap().status, LpStatus::Infeasible);
    }

    #[test]
    fn detects_unbounded() {
        let mut m = Model::new();
        let x = m.add_var("x", 0.0, f64::INFINITY, -1.0);
        let y = m.add_var("y", 0.0, f64::INFINITY, 0.0);
        m.add_row("r", vec![(x, 1.0), (y, -1.0)], Sense::Le, 1.0);
        assert_eq!(solve_lp(&m, LpOptions::default()).unwrap().status, LpStatus::Unbounded);
    }

    #[test]
    fn free_variable_and_negative_bounds() {
        // min |x - 3| style: min t s.t. t >= x - 3, t >= 3 - x, x free in [-5, 1]
        let mut m = Model::new();
        let x = m.add_var("x", f64::NEG_INFINITY, 1.0, 0.0);
        let t = m.add_var("t", f64::NEG_INFINITY, f64::INFINITY, 1.0);
        m.add_row("a", vec![(t, 1.0), (x, -1.0)], Sense::Ge, -3.0);
        m.add_row("b", vec![(t, 1.0), (x, 1.0)], Sense::Ge, 3.0);
        let s = solve_lp(&m, LpOptions::default()).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!(approx(s.objective, 2.0));
        assert!(approx(s.x[0], 1.0));
    }

    #[test]
    fn no_rows() {
        let mut m = Model::new();
        m.add_var("x", -1.0, 2.0, 1.0);
        m.add_var("y", -1.0, 2.0, -2.0);
        let s = solve_lp(&m, LpOptions::default()).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!(approx(s.objective, -5.0));
    }

    #[test]
    fn warm_start_after_bound_change() {
        let mut m = Model::new();
        let x = m.add_var("x", 0.0, 4.0, -1.0);
        let y = m.add_var("y", 0.0, 4.0, -1.0);
        m.add_row("cap", vec![(x, 1.0), (y, 2.0)], Sense::Le, 6.0);
        let sf = StandardForm::new(&m).unwrap();
        let mut t = Tableau::cold(&sf, LpOptions::default()).unwrap();
        assert_eq!(t.solve_cold().unwrap(), LpStatus::Optimal);
        assert!(approx(t.objective(), -5.0));
        let basis = t.basis();
        let (lo, mut hi) = sf.bounds();
        hi[0] = 1.0;
        let mut w = Tableau::warm(&sf, &basis, lo, hi, LpOptions::default()).unwrap();
        assert_eq!(w.solve_warm().unwrap(), LpStatus::Optimal);
        assert!(approx(w.objective(), -3.5));
    }
}
