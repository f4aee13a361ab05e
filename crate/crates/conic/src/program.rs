use nalgebra::{DMatrix, DVector};

use crate::ConicError;

/// One second-order cone constraint `||A z + b||_2 <= c^T z + d`.
///
/// A constraint with zero rows in `A` is a plain linear inequality
/// `0 <= c^T z + d`.
#[derive(Debug, Clone, PartialEq)]
pub struct SocConstraint {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: DVector<f64>,
    pub d: f64,
}

impl SocConstraint {
    /// Number of rows of `A` (the cone dimension minus one).
    pub fn rows(&self) -> usize {
        self.a.nrows()
    }

    /// Signed distance-like violation `||A z + b|| - c^T z - d` (positive when violated).
    pub fn violation(&self, z: &DVector<f64>) -> f64 {
        let lhs = if self.rows() == 0 { 0.0 } else { (&self.a * z + &self.b).norm() };
        lhs - self.c.dot(z) - self.d
    }
}

/// Minimize `f^T z` subject to a list of second-order cone constraints.
///
/// Quadratic objectives are expected to be moved into the constraints with
/// [`quadratic_epigraph`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConeProgram {
    pub objective: DVector<f64>,
    pub constraints: Vec<SocConstraint>,
}

impl ConeProgram {
    pub fn new(num_vars: usize) -> Self {
        Self { objective: DVector::zeros(num_vars), constraints: Vec::new() }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    /// Appends `count` fresh variables (zero objective, zero coefficients in
    /// existing constraints) and returns the index of the first one.
    pub fn add_variables(&mut self, count: usize) -> usize {
        let first = self.num_vars();
        let n = first + count;
        self.objective = self.objective.clone().resize_vertically(n, 0.0);
        for con in &mut self.constraints {
            let rows = con.a.nrows();
            con.a = con.a.clone().resize(rows, n, 0.0);
            con.c = con.c.clone().resize_vertically(n, 0.0);
        }
        first
    }

    pub fn add_soc(&mut self, a: DMatrix<f64>, b: DVector<f64>, c: DVector<f64>, d: f64) -> Result<usize, ConicError> {
        let n = self.num_vars();
        if a.ncols() != n || c.len() != n || a.nrows() != b.len() {
            return Err(ConicError::Dimension(format!(
                "constraint {} has A {}x{}, b {}, c {} for {} variables",
                self.constraints.len(),
                a.nrows(),
                a.ncols(),
                b.len(),
                c.len(),
                n
            )));
        }
        self.constraints.push(SocConstraint { a, b, c, d });
        Ok(self.constraints.len() - 1)
    }

    /// Adds the linear inequality `c^T z + d >= 0`.
    pub fn add_linear(&mut self, c: DVector<f64>, d: f64) -> Result<usize, ConicError> {
        let n = self.num_vars();
        self.add_soc(DMatrix::zeros(0, n), DVector::zeros(0), c, d)
    }

    /// Adds `lower <= z_var` (when `lower` is finite) and `z_var <= upper`.
    pub fn add_bounds(&mut self, var: usize, lower: f64, upper: f64) -> Result<(), ConicError> {
        let n = self.num_vars();
        if var >= n {
            return Err(ConicError::Dimension(format!("variable {var} out of range {n}")));
        }
        if lower.is_finite() {
            let mut c = DVector::zeros(n);
            c[var] = 1.0;
            self.add_linear(c, -lower)?;
        }
        if upper.is_finite() {
            let mut c = DVector::zeros(n);
            c[var] = -1.0;
            self.add_linear(c, upper)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConicError> {
        let n = self.num_vars();
        if n == 0 {
            return Err(ConicError::Empty);
        }
        if self.objective.iter().any(|v| !v.is_finite()) {
            return Err(ConicError::NonFinite("objective".into()));
        }
        for (j, con) in self.constraints.iter().enumerate() {
            if con.a.ncols() != n || con.c.len() != n || con.a.nrows() != con.b.len() {
                return Err(ConicError::Dimension(format!("constraint {j}")));
            }
            let finite =
                con.a.iter().chain(con.b.iter()).chain(con.c.iter()).all(|v| v.is_finite()) && con.d.is_finite();
            if !finite {
                return Err(ConicError::NonFinite(format!("constraint {j}")));
            }
        }
        Ok(())
    }

    /// Largest constraint violation at `z` (zero or negative when feasible).
    pub fn max_violation(&self, z: &DVector<f64>) -> f64 {
        self.constraints.iter().map(|c| c.violation(z)).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// `sum_i q_i z_i^2 + l^T z + constant`, with `q_i >= 0`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QuadraticTerms {
    pub diagonal: Vec<(usize, f64)>,
    pub linear: Vec<(usize, f64)>,
    pub constant: f64,
}

/// Adds an epigraph variable `s` together with the rotated-cone constraint
/// `quadratic(z) <= s` and returns the index of `s`.
///
/// The encoding is `||(2 sqrt(q) z, t - 1)|| <= t + 1` with `t = s - l^T z - constant`,
/// which is equivalent to `sum q_i z_i^2 <= t`. Minimizing `s` minimizes the quadratic.
pub fn quadratic_epigraph(prog: &mut ConeProgram, terms: &QuadraticTerms) -> Result<usize, ConicError> {
    if let Some(&(_, q)) = terms.diagonal.iter().find(|(_, q)| *q < 0.0 || !q.is_finite()) {
        return Err(ConicError::NotConvex(format!("diagonal weight {q}")));
    }
    let s = prog.add_variables(1);
    let n = prog.num_vars();
    for &(v, _) in terms.diagonal.iter().chain(terms.linear.iter()) {
        if v >= n {
            return Err(ConicError::Dimension(format!("variable {v} out of range {n}")));
        }
    }
    let rows = terms.diagonal.len() + 1;
    let mut a = DMatrix::zeros(rows, n);
    let mut b = DVector::zeros(rows);
    for (r, &(v, q)) in terms.diagonal.iter().enumerate() {
        a[(r, v)] = 2.0 * q.sqrt();
    }
    // t = s - l^T z - constant
    let mut t = DVector::zeros(n);
    t[s] = 1.0;
    for &(v, l) in &terms.linear {
        t[v] -= l;
    }
    let last = rows - 1;
    for col in 0..n {
        a[(last, col)] = t[col];
    }
    b[last] = -terms.constant - 1.0;
    prog.add_soc(a, b, t, 1.0 - terms.constant)?;
    Ok(s)
}
