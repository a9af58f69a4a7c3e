//! Best-first branch-and-bound over the integer columns of a [`Model`], seeded
//! with an incumbent from a rounding dive at the root.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::cuts::{separate, tighten_bounds};
use crate::model::Model;
use crate::simplex::solve_lp;
use crate::simplex::{Basis, LpOptions, LpStatus, StandardForm, Tableau};
use crate::MilpError;

#[derive(Debug, Clone, Copy)]
pub struct Budget {
    pub max_nodes: usize,
    /// Relative optimality gap at which the search stops.
    pub relative_gap: f64,
    /// Rounds of root cut separation; 0 solves the model as given.
    pub cut_rounds: usize,
    pub lp: LpOptions,
}

impl Default for Budget {
    fn default() -> Self {
        Self {
            max_nodes: 10_000,
            relative_gap: 1e-6,
            cut_rounds: 10,
            lp: LpOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MilpStatus {
    Optimal,
    NodeBudgetExhausted,
    Infeasible,
}

#[derive(Debug, Clone)]
pub struct MilpSolution {
    pub status: MilpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    /// Best proven lower bound on the optimum.
    pub bound: f64,
    /// `(objective - bound) / max(1, |objective|)`.
    pub gap: f64,
    pub nodes: usize,
    pub lp_iterations: usize,
}

const INT_TOL: f64 = 1e-6;

/// A node solved but not yet branched: bound, values, bounds and basis.
type Solved = (f64, Vec<f64>, Vec<f64>, Vec<f64>, Basis);

struct Node {
    id: usize,
    bound: f64,
    lower: Vec<f64>,
    upper: Vec<f64>,
    basis: Basis,
    /// Branched column, whether this is the up child, and how far the
    /// parent's value moved to reach the new bound.
    branch: (usize, bool, f64),
}

/// Average objective change per unit of bound change, per column and
/// direction, learned from solved children.
struct Pseudocosts {
    sum: [Vec<f64>; 2],
    count: [Vec<u32>; 2],
}

impl Pseudocosts {
    fn new(n: usize) -> Self {
        Self {
            sum: [vec![0.0; n], vec![0.0; n]],
            count: [vec![0; n], vec![0; n]],
        }
    }

    fn record(&mut self, (j, up, dist): (usize, bool, f64), gain: f64) {
        if dist > INT_TOL {
            self.sum[up as usize][j] += gain.max(0.0) / dist;
            self.count[up as usize][j] += 1;
        }
    }

    fn average(&self, dir: usize) -> f64 {
        let (s, c) = self.sum[dir]
            .iter()
            .zip(&self.count[dir])
            .filter(|(_, &c)| c > 0)
            .fold((0.0, 0), |(s, n), (x, &c)| (s + x / c as f64, n + 1));
        if c > 0 {
            s / c as f64
        } else {
            1.0
        }
    }

    /// Fractional integer column with the best product score, ties to the
    /// lowest index. Columns never branched on use the mean over those that were.
    fn select(&self, model: &Model, x: &[f64]) -> Option<usize> {
        let avg = [self.average(0), self.average(1)];
        let mut best = None;
        let mut best_score = f64::NEG_INFINITY;
        for (j, v) in model.vars.iter().enumerate() {
            if !v.integer {
                continue;
            }
            let frac = x[j] - x[j].floor();
            if frac.min(1.0 - frac) <= INT_TOL {
                continue;
            }
            let unit = |d: usize| {
                if self.count[d][j] > 0 {
                    self.sum[d][j] / self.count[d][j] as f64
                } else {
                    avg[d]
                }
            };
            let score = (unit(0) * frac).max(1e-6) * (unit(1) * (1.0 - frac)).max(1e-6);
            if score > best_score {
                best_score = score;
                best = Some(j);
            }
        }
        best
    }
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // BinaryHeap is a max-heap: smallest bound first, then smallest id.
    fn cmp(&self, other: &Self) -> Ordering {
        other.bound.total_cmp(&self.bound).then_with(|| other.id.cmp(&self.id))
    }
}

fn relative_gap(incumbent: f64, bound: f64) -> f64 {
    ((incumbent - bound) / incumbent.abs().max(1.0)).max(0.0)
}

/// Round fractional integer columns up, then drop each back down while the
/// rows stay satisfied. Returns a feasible point or `None`.
fn rounding_heuristic(model: &Model, x: &[f64], lower: &[f64], upper: &[f64]) -> Option<Vec<f64>> {
    let mut y = x.to_vec();
    for (j, v) in model.vars.iter().enumerate() {
        if v.integer {
            let frac = y[j] - y[j].floor();
            y[j] = if frac > INT_TOL { y[j].ceil() } else { y[j].floor() };
            y[j] = y[j].clamp(lower[j], upper[j]);
        }
    }
    let tol = 1e-7;
    if model.max_violation(&y) > tol {
        return None;
    }
    // greedy clean-up: lower integers that were pushed up, cheapest first
    let mut candidates: Vec<usize> = (0..model.num_vars())
        .filter(|&j| {
            let v = &model.vars[j];
            v.integer && v.objective > 0.0 && y[j] - 1.0 >= lower[j] - 1e-12
        })
        .collect();
    candidates.sort_by(|&a, &b| model.vars[b].objective.total_cmp(&model.vars[a].objective).then(a.cmp(&b)));
    for j in candidates {
        let old = y[j];
        y[j] = old - 1.0;
        if model.max_violation(&y) > tol {
            y[j] = old;
        }
    }
    Some(y)
}

/// Fix the most fractional integer column to its nearest value (the other
/// one if that is infeasible) and re-solve, until the LP point is integral.
fn dive(
    sf: &StandardForm,
    model: &Model,
    start: (&Basis, &[f64], &[f64], &[f64]),
    opts: LpOptions,
    iterations: &mut usize,
) -> Result<Option<Vec<f64>>, MilpError> {
    let (basis, lower, upper, x) = start;
    let (mut basis, mut lower, mut upper, mut x) = (basis.clone(), lower.to_vec(), upper.to_vec(), x.to_vec());
    for _ in 0..=model.num_integers() {
        let Some(j) = most_fractional(model, &x) else {
            return Ok(Some(x));
        };
        let near = x[j].round();
        let far = if near > x[j] { x[j].floor() } else { x[j].ceil() };
        let mut fixed = false;
        for v in [near, far] {
            let (mut lo, mut hi) = (lower.clone(), upper.clone());
            lo[j] = v;
            hi[j] = v;
            let mut t = match Tableau::warm(sf, &basis, lo.clone(), hi.clone(), opts) {
                Ok(t) => t,
                Err(MilpError::SingularBasis) => return Ok(None),
                Err(e) => return Err(e),
            };
            let st = t.solve_warm()?;
            *iterations += t.iterations;
            if st == LpStatus::Optimal {
                (basis, lower, upper, x) = (t.basis(), lo, hi, t.structural_values());
                fixed = true;
                break;
            }
        }
        if !fixed {
            return Ok(None);
        }
    }
    Ok(None)
}

fn most_fractional(model: &Model, x: &[f64]) -> Option<usize> {
    let mut best = None;
    let mut best_score = INT_TOL;
    for (j, v) in model.vars.iter().enumerate() {
        if !v.integer {
            continue;
        }
        let frac = x[j] - x[j].floor();
        let score = frac.min(1.0 - frac);
        if score > best_score {
            best_score = score;
            best = Some(j);
        }
    }
    best
}

/// Copy of `model` with implied bounds and root subset cuts added, plus the
/// simplex iterations spent finding them.
fn strengthen(model: &Model, budget: &Budget) -> Result<(Model, usize), MilpError> {
    let mut m = model.clone();
    tighten_bounds(&mut m);
    let mut iterations = 0;
    for _ in 0..budget.cut_rounds {
        let lp = solve_lp(&m, budget.lp)?;
        iterations += lp.iterations;
        if lp.status != LpStatus::Optimal {
            break;
        }
        let cuts = separate(&m, &lp.x, 1e-6);
        if cuts.is_empty() {
            break;
        }
        m.rows.extend(cuts);
    }
    Ok((m, iterations))
}

/// Solve a MILP by best-first branch-and-bound on top of the simplex.
///
/// Nodes are explored in order of LP bound with ties resolved by node id, so
/// the search is fully deterministic for a given model and budget.
pub fn solve_milp(model: &Model, budget: &Budget) -> Result<MilpSolution, MilpError> {
    let strengthened;
    let mut lp_iterations = 0;
    let model = if budget.cut_rounds > 0 && model.num_integers() > 0 {
        let (m, its) = strengthen(model, budget)?;
        strengthened = m;
        lp_iterations = its;
        &strengthened
    } else {
        model
    };
    let sf = StandardForm::new(model)?;
    let n = model.num_vars();
    let mut root = Tableau::cold(&sf, budget.lp)?;
    let status = root.solve_cold()?;
    lp_iterations += root.iterations;
    match status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => {
            return Ok(MilpSolution {
                status: MilpStatus::Infeasible,
                x: vec![0.0; n],
                objective: f64::INFINITY,
                bound: f64::INFINITY,
                gap: 0.0,
                nodes: 1,
                lp_iterations,
            })
        }
        LpStatus::Unbounded => return Err(MilpError::Unbounded),
        LpStatus::IterationLimit => return Err(MilpError::IterationLimit),
    }
    let (lower0, upper0) = sf.bounds();

    let mut incumbent: Option<(f64, Vec<f64>)> = None;
    if most_fractional(model, &root.structural_values()).is_some() {
        let start = (&root.basis(), &lower0[..], &upper0[..], &root.structural_values()[..]);
        if let Some(x) = dive(&sf, model, start, budget.lp, &mut lp_iterations)? {
            incumbent = Some((model.objective_value(&x), x));
        }
    }
    let mut heap = BinaryHeap::new();
    let mut pseudo = Pseudocosts::new(n);
    let mut next_id = 0usize;
    let mut nodes = 0usize;

    let consider = |x: Vec<f64>, lower: &[f64], upper: &[f64], incumbent: &mut Option<(f64, Vec<f64>)>| {
        if let Some(y) = rounding_heuristic(model, &x, &lower[..n], &upper[..n]) {
            let obj = model.objective_value(&y);
            if incumbent.as_ref().is_none_or(|(best, _)| obj < *best) {
                *incumbent = Some((obj, y));
            }
        }
    };

    // process the root in place, children are queued with their parent basis
    let mut pending: Option<Solved> = Some((root.objective(), root.structural_values(), lower0.clone(), upper0.clone(), root.basis()));
    drop(root);

    loop {
        if let Some((bound, x, lower, upper, basis)) = pending.take() {
            nodes += 1;
            let prune = incumbent
                .as_ref()
                .is_some_and(|(best, _)| bound >= *best - budget.relative_gap * best.abs().max(1.0));
            if !prune {
                match pseudo.select(model, &x) {
                    None => {
                        let obj = model.objective_value(&x);
                        if incumbent.as_ref().is_none_or(|(best, _)| obj < *best) {
                            incumbent = Some((obj, x));
                        }
                    }
                    Some(j) => {
                        consider(x.clone(), &lower, &upper, &mut incumbent);
                        let v = x[j];
                        let mut down_upper = upper.clone();
                        down_upper[j] = v.floor();
                        let mut up_lower = lower.clone();
                        up_lower[j] = v.ceil();
                        let children = [
                            (lower.clone(), down_upper, (j, false, v - v.floor())),
                            (up_lower, upper, (j, true, v.ceil() - v)),
                        ];
                        for (lo, hi, branch) in children {
                            if lo[j] > hi[j] {
                                continue;
                            }
                            heap.push(Node {
                                id: next_id,
                                bound,
                                lower: lo,
                                upper: hi,
                                basis: basis.clone(),
                                branch,
                            });
                            next_id += 1;
                        }
                    }
                }
            }
        }

        let best_open = heap.peek().map(|n| n.bound).unwrap_or(f64::INFINITY);
        if let Some((obj, _)) = &incumbent {
            if heap.is_empty() || relative_gap(*obj, best_open) <= budget.relative_gap {
                break;
            }
        } else if heap.is_empty() {
            break;
        }
        if nodes >= budget.max_nodes {
            break;
        }
        let node = heap.pop().expect("non-empty heap");
        if let Some((best, _)) = &incumbent {
            if node.bound >= *best - budget.relative_gap * best.abs().max(1.0) {
                continue;
            }
        }
        let mut t = match Tableau::warm(&sf, &node.basis, node.lower.clone(), node.upper.clone(), budget.lp) {
            Ok(t) => t,
            Err(MilpError::SingularBasis) => {
                let mut cold = Tableau::cold(&sf, budget.lp)?;
                cold.solve_cold()?;
                let b = cold.basis();
                Tableau::warm(&sf, &b, node.lower.clone(), node.upper.clone(), budget.lp)?
            }
            Err(e) => return Err(e),
        };
        let st = t.solve_warm()?;
        lp_iterations += t.iterations;
        match st {
            LpStatus::Optimal => {
                pseudo.record(node.branch, t.objective() - node.bound);
                pending = Some((t.objective(), t.structural_values(), node.lower, node.upper, t.basis()));
            }
            LpStatus::Infeasible => {
                nodes += 1;
            }
            LpStatus::Unbounded => return Err(MilpError::Unbounded),
            LpStatus::IterationLimit => return Err(MilpError::IterationLimit),
        }
    }

    let best_open = heap.iter().map(|n| n.bound).fold(f64::INFINITY, f64::min);
    match incumbent {
        None => Ok(MilpSolution {
            status: MilpStatus::Infeasible,
            x: vec![0.0; n],
            objective: f64::INFINITY,
            bound: f64::INFINITY,
            gap: 0.0,
            nodes,
            lp_iterations,
        }),
        Some((obj, x)) => {
            let bound = best_open.min(obj);
            let gap = relative_gap(obj, bound);
            let status = if gap <= budget.relative_gap {
                MilpStatus::Optimal
            } else {
                MilpStatus::NodeBudgetExhausted
            };
            Ok(MilpSolution {
                status,
                x,
                objective: obj,
                bound,
                gap,
                nodes,
                lp_iterations,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Sense;

    #[test]
    fn small_knapsack() {
        // max 5a + 4b + 3c s.t. 2a + 3b + c <= 5, 4a + b + 2c <= 11, binaries
        let mut m = Model::new();
        let a = m.add_binary("a", -5.0);
        let b = m.add_binary("b", -4.0);
        let c = m.add_binary("c", -3.0);
        m.add_row("w1", vec![(a, 2.0), (b, 3.0), (c, 1.0)], Sense::Le, 5.0);
        m.add_row("w2", vec![(a, 4.0), (b, 1.0), (c, 2.0)], Sense::Le, 11.0);
        let s = solve_milp(&m, &Budget::default()).unwrap();
        assert_eq!(s.status, MilpStatus::Optimal);
        assert!((s.objective + 9.0).abs() < 1e-9);
    }

    #[test]
    fn infeasible_integer_program() {
        let mut m = Model::new();
        let a = m.add_binary("a", 1.0);
        m.add_row("half", vec![(a, 2.0)], Sense::Eq, 1.0);
        let s = solve_milp(&m, &Budget::default()).unwrap();
        assert_eq!(s.status, MilpStatus::Infeasible);
    }

    #[test]
    fn node_budget_reports_gap() {
        let mut m = Model::new();
        let vars: Vec<_> = (0..12).map(|i| m.add_binary(format!("x{i}"), -(1.0 + i as f64 * 0.37))).collect();
        let coeffs = vars.iter().enumerate().map(|(i, &v)| (v, 1.3 + (i as f64 * 0.71) % 2.0)).collect();
        m.add_row("cap", coeffs, Sense::Le, 7.1);
        let tight = Budget {
            max_nodes: 2,
            ..Budget::default()
        };
        let s = solve_milp(&m, &tight).unwrap();
        assert!(s.nodes <= 3);
        assert!(s.objective >= s.bound - 1e-12);
        let full = solve_milp(&m, &Budget::default()).unwrap();
        assert_eq!(full.status, MilpStatus::Optimal);
        assert!(full.objective <= s.objective + 1e-9);
    }
}
