//! Dense two-phase primal simplex.
//!
//! Every essential infimum or supremum in the crate ends up here as a small
//! dense program. Variables with finite bounds are shifted, flipped or split
//! into nonnegative columns, upper bounds become rows, each row is scaled to
//! unit max coefficient and an artificial column is added per row. Pricing
//! is Dantzig's rule with a switch to Bland's rule after `10 (rows + cols)`
//! iterations in a phase; every tie goes to the lowest column or basis index
//! so witnesses are reproducible.

use serde::Serialize;
use thiserror::Error;

use crate::tree::kahan_sum;

/// Threshold above which a margin certifies strict feasibility.
pub const STRICT_MARGIN: f64 = 1e-9;

const PIVOT_TOL: f64 = 1e-9;
const OPT_TOL: f64 = 1e-10;
const HARRIS_TOL: f64 = 1e-9;
const PHASE1_TOL: f64 = 1e-8;
const RESIDUAL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    /// Sparse coefficients as (variable, value).
    pub coeffs: Vec<(usize, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("row {row} references variable {var} but only {n} exist")]
    Dimension { row: usize, var: usize, n: usize },
    #[error("objective has {got} entries for {n} variables")]
    Objective { got: usize, n: usize },
    #[error("variable {var} has lower bound {lower} above upper bound {upper}")]
    Bounds { var: usize, lower: f64, upper: f64 },
    #[error("non-finite data in {0}")]
    NonFinite(String),
    #[error("strict row {0} must be an inequality")]
    StrictRow(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericallyUnstable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub sense: Sense,
    pub objective: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub rows: Vec<Row>,
}

impl LinearProgram {
    pub fn new(sense: Sense) -> Self {
        Self {
            sense,
            objective: Vec::new(),
            lower: Vec::new(),
            upper: Vec::new(),
            rows: Vec::new(),
        }
    }

    pub fn add_var(&mut self, lower: f64, upper: f64, cost: f64) -> usize {
        self.objective.push(cost);
        self.lower.push(lower);
        self.upper.push(upper);
        self.objective.len() - 1
    }

    /// A nonnegative variable.
    pub fn add_nonneg(&mut self, cost: f64) -> usize {
        self.add_var(0.0, f64::INFINITY, cost)
    }

    pub fn add_free(&mut self, cost: f64) -> usize {
        self.add_var(f64::NEG_INFINITY, f64::INFINITY, cost)
    }

    pub fn add_row(&mut self, coeffs: Vec<(usize, f64)>, relation: Relation, rhs: f64) -> usize {
        self.rows.push(Row {
            coeffs,
            relation,
            rhs,
        });
        self.rows.len() - 1
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn check(&self) -> Result<(), LpError> {
        let n = self.objective.len();
        if self.lower.len() != n || self.upper.len() != n {
            return Err(LpError::Objective {
                got: self.lower.len().min(self.upper.len()),
                n,
            });
        }
        if self.objective.iter().any(|c| !c.is_finite()) {
            return Err(LpError::NonFinite("objective".into()));
        }
        for (var, (&lo, &up)) in self.lower.iter().zip(&self.upper).enumerate() {
            if lo.is_nan() || up.is_nan() || lo == f64::INFINITY || up == f64::NEG_INFINITY {
                return Err(LpError::NonFinite(format!("bounds of variable {var}")));
            }
            if lo > up {
                return Err(LpError::Bounds {
                    var,
                    lower: lo,
                    upper: up,
                });
            }
        }
        for (r, row) in self.rows.iter().enumerate() {
            if !row.rhs.is_finite() {
                return Err(LpError::NonFinite(format!("rhs of row {r}")));
            }
            for &(var, a) in &row.coeffs {
                if var >= n {
                    return Err(LpError::Dimension { row: r, var, n });
                }
                if !a.is_finite() {
                    return Err(LpError::NonFinite(format!("row {r}")));
                }
            }
        }
        Ok(())
    }

    /// Row activity a·x.
    pub fn activity(&self, row: usize, x: &[f64]) -> f64 {
        kahan_sum(self.rows[row].coeffs.iter().map(|&(j, a)| a * x[j]))
    }

    /// Largest violation of rows and bounds at `x`, each relative to
    /// `1 + |rhs|`.
    pub fn max_residual(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (r, row) in self.rows.iter().enumerate() {
            let ax = self.activity(r, x);
            let v = match row.relation {
                Relation::Le => (ax - row.rhs).max(0.0),
                Relation::Ge => (row.rhs - ax).max(0.0),
                Relation::Eq => (ax - row.rhs).abs(),
            };
            worst = worst.max(v / (1.0 + row.rhs.abs()));
        }
        for (j, &xj) in x.iter().enumerate() {
            let lo = self.lower[j];
            let up = self.upper[j];
            if lo.is_finite() {
                worst = worst.max((lo - xj).max(0.0) / (1.0 + lo.abs()));
            }
            if up.is_finite() {
                worst = worst.max((xj - up).max(0.0) / (1.0 + up.abs()));
            }
        }
        worst
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        kahan_sum(self.objective.iter().zip(x).map(|(c, v)| c * v))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Optimal value; NaN unless the status is optimal.
    pub value: f64,
    pub primal: Vec<f64>,
    /// Sensitivity of the optimal value to each row's right-hand side.
    pub duals: Vec<f64>,
    /// `c - Aᵀy` per original variable.
    pub reduced_costs: Vec<f64>,
    pub iterations: usize,
}

impl LpSolution {
    fn failed(status: LpStatus, iterations: usize) -> Self {
        Self {
            status,
            value: f64::NAN,
            primal: Vec::new(),
            duals: Vec::new(),
            reduced_costs: Vec::new(),
            iterations,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}

/// Value of the dual program at the solution's multipliers. Equals the
/// primal value at optimality.
pub fn dual_value(lp: &LinearProgram, sol: &LpSolution) -> f64 {
    let mut terms: Vec<f64> = lp
        .rows
        .iter()
        .zip(&sol.duals)
        .map(|(row, y)| row.rhs * y)
        .collect();
    let max = lp.sense == Sense::Maximize;
    for (j, &r) in sol.reduced_costs.iter().enumerate() {
        // Reduced costs push the variable to the bound they price.
        let at_lower = if max { r < 0.0 } else { r > 0.0 };
        let bound = if at_lower { lp.lower[j] } else { lp.upper[j] };
        if r != 0.0 && bound.is_finite() {
            terms.push(r * bound);
        }
    }
    kahan_sum(terms)
}

#[derive(Debug, Clone, Copy)]
enum VarMap {
    /// x = offset + col
    Shift { col: usize, offset: f64 },
    /// x = offset - col
    Flip { col: usize, offset: f64 },
    /// x = pos - neg
    Split { pos: usize, neg: usize },
}

/// Minimize c·x subject to A x = b, x ≥ 0, b ≥ 0, with row bookkeeping.
struct StandardForm {
    m: usize,
    ncols: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    obj_offset: f64,
    /// Factor applied to each original row (sign times scaling); bound rows
    /// follow the original rows.
    row_factor: Vec<f64>,
    vars: Vec<VarMap>,
}

impl StandardForm {
    fn build(lp: &LinearProgram) -> Self {
        let n = lp.num_vars();
        let flip_obj = if lp.sense == Sense::Maximize { -1.0 } else { 1.0 };
        let mut vars = Vec::with_capacity(n);
        let mut ncols = 0;
        let mut bound_rows: Vec<(usize, f64)> = Vec::new();
        for j in 0..n {
            let (lo, up) = (lp.lower[j], lp.upper[j]);
            let map = if lo.is_finite() {
                let col = ncols;
                ncols += 1;
                if up.is_finite() {
                    bound_rows.push((col, up - lo));
                }
                VarMap::Shift { col, offset: lo }
            } else if up.is_finite() {
                ncols += 1;
                VarMap::Flip {
                    col: ncols - 1,
                    offset: up,
                }
            } else {
                ncols += 2;
                VarMap::Split {
                    pos: ncols - 2,
                    neg: ncols - 1,
                }
            };
            vars.push(map);
        }
        let slack_start = ncols;
        let n_slack = lp
            .rows
            .iter()
            .filter(|r| r.relation != Relation::Eq)
            .count()
            + bound_rows.len();
        ncols += n_slack;
        let m = lp.rows.len() + bound_rows.len();

        let mut a = vec![0.0; m * ncols];
        let mut b = vec![0.0; m];
        let mut row_factor = vec![1.0; m];
        let mut slack = slack_start;
        for (i, row) in lp.rows.iter().enumerate() {
            let ai = &mut a[i * ncols..(i + 1) * ncols];
            let mut rhs = row.rhs;
            for &(j, v) in &row.coeffs {
                match vars[j] {
                    VarMap::Shift { col, offset } => {
                        ai[col] += v;
                        rhs -= v * offset;
                    }
                    VarMap::Flip { col, offset } => {
                        ai[col] -= v;
                        rhs -= v * offset;
                    }
                    VarMap::Split { pos, neg } => {
                        ai[pos] += v;
                        ai[neg] -= v;
                    }
                }
            }
            match row.relation {
                Relation::Le => {
                    ai[slack] = 1.0;
                    slack += 1;
                }
                Relation::Ge => {
                    ai[slack] = -1.0;
                    slack += 1;
                }
                Relation::Eq => {}
            }
            b[i] = rhs;
        }
        for (k, &(col, width)) in bound_rows.iter().enumerate() {
            let i = lp.rows.len() + k;
            a[i * ncols + col] = 1.0;
            a[i * ncols + slack] = 1.0;
            slack += 1;
            b[i] = width;
        }
        for i in 0..m {
            let ai = &mut a[i * ncols..(i + 1) * ncols];
            let scale = ai.iter().fold(0.0f64, |s, v| s.max(v.abs()));
            let scale = if scale > 0.0 { scale } else { 1.0 };
            let sign = if b[i] < 0.0 { -1.0 } else { 1.0 };
            let f = sign / scale;
            ai.iter_mut().for_each(|v| *v *= f);
            b[i] *= f;
            row_factor[i] = f;
        }

        let mut c = vec![0.0; ncols];
        let mut obj_offset = 0.0;
        for j in 0..n {
            let cj = flip_obj * lp.objective[j];
            match vars[j] {
                VarMap::Shift { col, offset } => {
                    c[col] += cj;
                    obj_offset += cj * offset;
                }
                VarMap::Flip { col, offset } => {
                    c[col] -= cj;
                    obj_offset += cj * offset;
                }
                VarMap::Split { pos, neg } => {
                    c[pos] += cj;
                    c[neg] -= cj;
                }
            }
        }
        Self {
            m,
            ncols,
            a,
            b,
            c,
            obj_offset,
            row_factor,
            vars,
        }
    }

    fn recover(&self, cols: &[f64]) -> Vec<f64> {
        self.vars
            .iter()
            .map(|v| match *v {
                VarMap::Shift { col, offset } => offset + cols[col],
                VarMap::Flip { col, offset } => offset - cols[col],
                VarMap::Split { pos, neg } => cols[pos] - cols[neg],
            })
            .collect()
    }
}

struct Tableau {
    m: usize,
    /// Structural plus slack columns; artificials follow.
    ncols: usize,
    width: usize,
    t: Vec<f64>,
    /// Reduced-cost row; the last entry holds minus the objective value.
    d: Vec<f64>,
    basis: Vec<usize>,
    iterations: usize,
}

enum PhaseEnd {
    Optimal,
    Unbounded,
    IterationCap,
}

impl Tableau {
    fn new(sf: &StandardForm) -> Self {
        let m = sf.m;
        let ncols = sf.ncols;
        let width = ncols + m + 1;
        let mut t = vec![0.0; m * width];
        for i in 0..m {
            t[i * width..i * width + ncols].copy_from_slice(&sf.a[i * ncols..(i + 1) * ncols]);
            t[i * width + ncols + i] = 1.0;
            t[i * width + width - 1] = sf.b[i];
        }
        let mut d = vec![0.0; width];
        for i in 0..m {
            let row = &t[i * width..(i + 1) * width];
            for j in 0..ncols {
                d[j] -= row[j];
            }
            d[width - 1] -= row[width - 1];
        }
        Self {
            m,
            ncols,
            width,
            t,
            d,
            basis: (ncols..ncols + m).collect(),
            iterations: 0,
        }
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.t[i * self.width + j]
    }

    fn rhs(&self, i: usize) -> f64 {
        self.t[i * self.width + self.width - 1]
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let w = self.width;
        let p = self.t[r * w + c];
        {
            let row = &mut self.t[r * w..(r + 1) * w];
            row.iter_mut().for_each(|v| *v /= p);
            row[c] = 1.0;
        }
        let nz: Vec<usize> = (0..w).filter(|&j| self.t[r * w + j] != 0.0).collect();
        let pivot_row: Vec<f64> = nz.iter().map(|&j| self.t[r * w + j]).collect();
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let f = self.t[i * w + c];
            if f == 0.0 {
                continue;
            }
            let row = &mut self.t[i * w..(i + 1) * w];
            for (&j, &v) in nz.iter().zip(&pivot_row) {
                row[j] -= f * v;
            }
            row[c] = 0.0;
            let rhs = row[w - 1];
            if rhs < 0.0 && rhs > -1e-12 {
                row[w - 1] = 0.0;
            }
        }
        let f = self.d[c];
        if f != 0.0 {
            for (&j, &v) in nz.iter().zip(&pivot_row) {
                self.d[j] -= f * v;
            }
            self.d[c] = 0.0;
        }
        self.basis[r] = c;
        self.iterations += 1;
    }

    /// Runs primal simplex over entering columns `< allowed`.
    fn run(&mut self, allowed: usize, cap: usize) -> PhaseEnd {
        let switch = 10 * (self.m + allowed);
        let mut local = 0usize;
        loop {
            if local >= cap {
                return PhaseEnd::IterationCap;
            }
            let bland = local >= switch;
            let mut enter = None;
            let mut best = -OPT_TOL;
            for j in 0..allowed {
                let dj = self.d[j];
                if dj < best {
                    enter = Some(j);
                    if bland {
                        break;
                    }
                    best = dj;
                }
            }
            let Some(c) = enter else {
                return PhaseEnd::Optimal;
            };
            let leave = if bland {
                self.textbook_ratio(c)
            } else {
                self.harris_ratio(c)
            };
            let Some(r) = leave else {
                return PhaseEnd::Unbounded;
            };
            self.pivot(r, c);
            local += 1;
        }
    }

    /// Minimum ratio, ties to the lowest basic index.
    fn textbook_ratio(&self, c: usize) -> Option<usize> {
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..self.m {
            let a = self.at(i, c);
            if a <= PIVOT_TOL {
                continue;
            }
            let ratio = self.rhs(i).max(0.0) / a;
            match leave {
                None => leave = Some((i, ratio)),
                Some((k, r)) => {
                    let tie = (ratio - r).abs() <= 1e-12 * r.abs().max(1.0);
                    if (!tie && ratio < r) || (tie && self.basis[i] < self.basis[k]) {
                        leave = Some((i, ratio));
                    }
                }
            }
        }
        leave.map(|(i, _)| i)
    }

    /// Two-pass ratio test: bound the step with rows relaxed by
    /// [`HARRIS_TOL`], then take the largest pivot among rows whose exact
    /// ratio fits under that bound.
    fn harris_ratio(&self, c: usize) -> Option<usize> {
        let mut bound = f64::INFINITY;
        for i in 0..self.m {
            let a = self.at(i, c);
            if a > PIVOT_TOL {
                bound = bound.min((self.rhs(i).max(0.0) + HARRIS_TOL) / a);
            }
        }
        if !bound.is_finite() {
            return None;
        }
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..self.m {
            let a = self.at(i, c);
            if a <= PIVOT_TOL || self.rhs(i).max(0.0) / a > bound {
                continue;
            }
            match leave {
                Some((k, best)) if a < best || (a == best && self.basis[i] > self.basis[k]) => {}
                _ => leave = Some((i, a)),
            }
        }
        leave.map(|(i, _)| i)
    }

    fn column_values(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.ncols + self.m];
        for (i, &b) in self.basis.iter().enumerate() {
            x[b] = self.rhs(i).max(0.0);
        }
        x
    }
}

/// Solves `lp`. Failure to converge or an inaccurate final basis is
/// reported as [`LpStatus::NumericallyUnstable`].
pub fn solve(lp: &LinearProgram) -> Result<LpSolution, LpError> {
    lp.check()?;
    let sf = StandardForm::build(lp);
    let mut tab = Tableau::new(&sf);
    let cap = 50 * (sf.m + sf.ncols) + 1000;

    match tab.run(sf.ncols, cap) {
        PhaseEnd::Optimal => {}
        PhaseEnd::Unbounded | PhaseEnd::IterationCap => {
            return Ok(LpSolution::failed(LpStatus::NumericallyUnstable, tab.iterations))
        }
    }
    let infeasibility = -tab.d[tab.width - 1];
    if infeasibility > PHASE1_TOL {
        return Ok(LpSolution::failed(LpStatus::Infeasible, tab.iterations));
    }
    drive_out_artificials(&mut tab);

    // Phase 2 reduced costs.
    let w = tab.width;
    let mut d = vec![0.0; w];
    d[..sf.ncols].copy_from_slice(&sf.c);
    for i in 0..tab.m {
        let cb = if tab.basis[i] < sf.ncols { sf.c[tab.basis[i]] } else { 0.0 };
        if cb == 0.0 {
            continue;
        }
        let row = &tab.t[i * w..(i + 1) * w];
        for j in 0..w {
            d[j] -= cb * row[j];
        }
    }
    tab.d = d;
    match tab.run(sf.ncols, cap) {
        PhaseEnd::Optimal => {}
        PhaseEnd::Unbounded => return Ok(LpSolution::failed(LpStatus::Unbounded, tab.iterations)),
        PhaseEnd::IterationCap => {
            return Ok(LpSolution::failed(LpStatus::NumericallyUnstable, tab.iterations))
        }
    }

    let mut cols = tab.column_values();
    let mut primal = sf.recover(&cols);
    if lp.max_residual(&primal) > RESIDUAL_TOL {
        match refine_basic_solution(&sf, &tab.basis) {
            Some(refined) => {
                cols = refined;
                primal = sf.recover(&cols);
            }
            None => {
                return Ok(LpSolution::failed(LpStatus::NumericallyUnstable, tab.iterations))
            }
        }
        if lp.max_residual(&primal) > RESIDUAL_TOL {
            return Ok(LpSolution::failed(LpStatus::NumericallyUnstable, tab.iterations));
        }
    }

    let sign = if lp.sense == Sense::Maximize { -1.0 } else { 1.0 };
    let duals: Vec<f64> = (0..lp.rows.len())
        .map(|r| sign * -tab.d[sf.ncols + r] * sf.row_factor[r])
        .map(|y| if y == 0.0 { 0.0 } else { y })
        .collect();
    let mut reduced = lp.objective.clone();
    for (row, y) in lp.rows.iter().zip(&duals) {
        for &(j, a) in &row.coeffs {
            reduced[j] -= a * y;
        }
    }
    let value = lp.objective_value(&primal);
    debug_assert!({
        let std_value = sign * (kahan_sum(sf.c.iter().zip(&cols).map(|(c, x)| c * x)) + sf.obj_offset);
        (std_value - value).abs() <= 1e-6 * (1.0 + value.abs())
    });
    Ok(LpSolution {
        status: LpStatus::Optimal,
        value,
        primal,
        duals,
        reduced_costs: reduced,
        iterations: tab.iterations,
    })
}

/// Pivots zero-level artificials out of the basis where a structural column
/// can replace them. Rows with no such column are redundant and keep their
/// artificial at zero.
fn drive_out_artificials(tab: &mut Tableau) {
    for i in 0..tab.m {
        if tab.basis[i] < tab.ncols {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for j in 0..tab.ncols {
            let a = tab.at(i, j).abs();
            if a > PIVOT_TOL && best.is_none_or(|(_, b)| a > b) {
                best = Some((j, a));
            }
        }
        if let Some((j, _)) = best {
            tab.pivot(i, j);
        }
    }
}

/// Recomputes the basic solution from the original columns by Gaussian
/// elimination with partial pivoting.
fn refine_basic_solution(sf: &StandardForm, basis: &[usize]) -> Option<Vec<f64>> {
    let m = sf.m;
    let mut mat = vec![0.0; m * (m + 1)];
    for i in 0..m {
        for (k, &col) in basis.iter().enumerate() {
            mat[i * (m + 1) + k] = if col < sf.ncols {
                sf.a[i * sf.ncols + col]
            } else if col - sf.ncols == i {
                1.0
            } else {
                0.0
            };
        }
        mat[i * (m + 1) + m] = sf.b[i];
    }
    let xb = gauss_solve(&mut mat, m)?;
    let mut cols = vec![0.0; sf.ncols + m];
    for (k, &col) in basis.iter().enumerate() {
        if xb[k] < -1e-9 {
            return None;
        }
        cols[col] = xb[k].max(0.0);
    }
    Some(cols)
}

/// Solves the augmented `n × (n+1)` system in place.
pub(crate) fn gauss_solve(mat: &mut [f64], n: usize) -> Option<Vec<f64>> {
    let w = n + 1;
    for k in 0..n {
        let p = (k..n).max_by(|&a, &b| mat[a * w + k].abs().total_cmp(&mat[b * w + k].abs()))?;
        if mat[p * w + k].abs() < 1e-13 {
            return None;
        }
        if p != k {
            for j in 0..w {
                mat.swap(k * w + j, p * w + j);
            }
        }
        for i in k + 1..n {
            let f = mat[i * w + k] / mat[k * w + k];
            if f != 0.0 {
                for j in k..w {
                    mat[i * w + j] -= f * mat[k * w + j];
                }
            }
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|j| mat[k * w + j] * x[j]).sum();
        x[k] = (mat[k * w + n] - s) / mat[k * w + k];
    }
    Some(x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginResult {
    pub feasible: bool,
    /// Largest common slack of the strict rows; `None` when even the
    /// non-strict system is infeasible.
    pub margin: Option<f64>,
    pub witness: Option<Vec<f64>>,
    pub status: LpStatus,
}

/// Maximizes ε, capped at 1, subject to `a·z ≥ b + ε` on the strict rows
/// (`a·z ≤ b − ε` for `≤` rows) and the remaining rows unchanged. The
/// system is strictly feasible iff the optimum exceeds [`STRICT_MARGIN`].
pub fn feasibility_with_margin(
    lp: &LinearProgram,
    strict_rows: &[usize],
) -> Result<MarginResult, LpError> {
    lp.check()?;
    let mut aux = lp.clone();
    aux.sense = Sense::Maximize;
    aux.objective.iter_mut().for_each(|c| *c = 0.0);
    let eps = aux.add_var(f64::NEG_INFINITY, 1.0, 1.0);
    for &r in strict_rows {
        let row = aux.rows.get_mut(r).ok_or(LpError::StrictRow(r))?;
        match row.relation {
            Relation::Ge => row.coeffs.push((eps, -1.0)),
            Relation::Le => row.coeffs.push((eps, 1.0)),
            Relation::Eq => return Err(LpError::StrictRow(r)),
        }
    }
    let sol = solve(&aux)?;
    Ok(match sol.status {
        LpStatus::Optimal => {
            let margin = sol.primal[eps];
            let mut witness = sol.primal;
            witness.pop();
            MarginResult {
                feasible: margin > STRICT_MARGIN,
                margin: Some(margin),
                witness: Some(witness),
                status: LpStatus::Optimal,
            }
        }
        status => MarginResult {
            feasible: false,
            margin: None,
            witness: None,
            status,
        },
    })
}
