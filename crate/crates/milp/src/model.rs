//! Sparse row-wise description of a (mixed-integer) linear program.

use crate::MilpError;

/// Index of a variable inside a [`Model`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VarId(pub usize);

/// Index of a constraint row inside a [`Model`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RowId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub objective: f64,
    pub integer: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub name: String,
    pub coefficients: Vec<(VarId, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

impl Row {
    pub fn activity(&self, x: &[f64]) -> f64 {
        self.coefficients.iter().map(|&(v, a)| a * x[v.0]).sum()
    }

    /// Amount by which `activity` violates the row (0 when satisfied).
    pub fn violation(&self, activity: f64) -> f64 {
        match self.sense {
            Sense::Le => (activity - self.rhs).max(0.0),
            Sense::Ge => (self.rhs - activity).max(0.0),
            Sense::Eq => (activity - self.rhs).abs(),
        }
    }
}

/// Minimization model: `min c'x + offset` subject to rows and variable bounds.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Model {
    pub vars: Vec<Variable>,
    pub rows: Vec<Row>,
    pub objective_offset: f64,
}

impl Model {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, name: impl Into<String>, lower: f64, upper: f64, objective: f64) -> VarId {
        self.vars.push(Variable {
            name: name.into(),
            lower,
            upper,
            objective,
            integer: false,
        });
        VarId(self.vars.len() - 1)
    }

    pub fn add_binary(&mut self, name: impl Into<String>, objective: f64) -> VarId {
        let id = self.add_var(name, 0.0, 1.0, objective);
        self.vars[id.0].integer = true;
        id
    }

    pub fn add_row(&mut self, name: impl Into<String>, coefficients: Vec<(VarId, f64)>, sense: Sense, rhs: f64) -> RowId {
        self.rows.push(Row {
            name: name.into(),
            coefficients,
            sense,
            rhs,
        });
        RowId(self.rows.len() - 1)
    }

    pub fn var(&self, id: VarId) -> &Variable {
        &self.vars[id.0]
    }

    pub fn var_mut(&mut self, id: VarId) -> &mut Variable {
        &mut self.vars[id.0]
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn num_integers(&self) -> usize {
        self.vars.iter().filter(|v| v.integer).count()
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective_offset + self.vars.iter().zip(x).map(|(v, &xi)| v.objective * xi).sum::<f64>()
    }

    /// Largest bound, row or integrality violation of `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (v, &xi) in self.vars.iter().zip(x) {
            worst = worst.max(v.lower - xi).max(xi - v.upper);
            if v.integer {
                worst = worst.max((xi - xi.round()).abs());
            }
        }
        for row in &self.rows {
            worst = worst.max(row.violation(row.activity(x)));
        }
        worst
    }

    pub fn validate(&self) -> Result<(), MilpError> {
        for (j, v) in self.vars.iter().enumerate() {
            if v.lower.is_nan() || v.upper.is_nan() || v.lower > v.upper {
                return Err(MilpError::InvalidBounds {
                    var: j,
                    lower: v.lower,
                    upper: v.upper,
                });
            }
            if v.lower == f64::INFINITY || v.upper == f64::NEG_INFINITY {
                return Err(MilpError::InvalidBounds {
                    var: j,
                    lower: v.lower,
                    upper: v.upper,
                });
            }
            if !v.objective.is_finite() {
                return Err(MilpError::NonFinite(format!("objective coefficient of {}", v.name)));
            }
        }
        for row in &self.rows {
            if !row.rhs.is_finite() {
                return Err(MilpError::NonFinite(format!("rhs of row {}", row.name)));
            }
            for &(v, a) in &row.coefficients {
                if v.0 >= self.vars.len() {
                    return Err(MilpError::UnknownVariable {
                        row: row.name.clone(),
                        var: v.0,
                    });
                }
                if !a.is_finite() {
                    return Err(MilpError::NonFinite(format!("coefficient in row {}", row.name)));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn violation_by_sense() {
        let mut m = Model::new();
        let x = m.add_var("x", 0.0, 10.0, 1.0);
        m.add_row("le", vec![(x, 1.0)], Sense::Le, 2.0);
        m.add_row("ge", vec![(x, 1.0)], Sense::Ge, 1.0);
        assert_eq!(m.max_violation(&[1.5]), 0.0);
        assert!((m.max_violation(&[3.0]) - 1.0).abs() < 1e-15);
        assert!((m.max_violation(&[0.25]) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn integrality_counts_as_violation() {
        let mut m = Model::new();
        m.add_binary("b", 1.0);
        assert!((m.max_violation(&[0.4]) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn rejects_crossed_bounds() {
        let mut m = Model::new();
        m.add_var("x", 2.0, 1.0, 0.0);
        assert!(m.validate().is_err());
    }
}
