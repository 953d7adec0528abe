//! Solver-agnostic conic programs.
//!
//! A [`ConicProgram`] owns a flat vector of real decision slots. Declared variables are views over
//! contiguous slot ranges:
//!
//! * `Real`: one slot.
//! * `RealVec(n)`: `n` slots.
//! * `ComplexVec(n)`: `n` real parts followed by `n` imaginary parts.
//! * `Hermitian(n)`: `n²` slots. The diagonal comes first, then the strict upper triangle real
//!   parts in row-major order, then the matching imaginary parts.
//!
//! Constraints are affine maps into one of five cones. Hermitian PSD constraints are lowered to
//! real PSD cones through the `[[Re, −Im], [Im, Re]]` embedding, rotated cones to ordinary
//! second-order cones. Every backend result labelled optimal is re-checked by [`residuals`] before
//! it is returned.

use std::fmt::Write as _;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use serde::Serialize;
use thiserror::Error;

use crate::linalg::{c, real_embedding, CMat, CVec, RMat, C64};

#[derive(Debug, Error)]
pub enum ConicError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("backend failure: {0}")]
    Backend(String),
    #[error("matrix is not Hermitian (relative defect {0:e})")]
    NotHermitian(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Real,
    RealVec(usize),
    ComplexVec(usize),
    Hermitian(usize),
}

impl VarKind {
    pub fn slots(self) -> usize {
        match self {
            VarKind::Real => 1,
            VarKind::RealVec(n) => n,
            VarKind::ComplexVec(n) => 2 * n,
            VarKind::Hermitian(n) => n * n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VarId(usize);

#[derive(Debug, Clone)]
pub struct Variable {
    pub name: String,
    pub kind: VarKind,
    pub offset: usize,
}

/// Real affine expression `Σ coef·x[slot] + constant`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinExpr {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn constant(c: f64) -> Self {
        Self { terms: Vec::new(), constant: c }
    }

    pub fn slot(slot: usize, coef: f64) -> Self {
        Self { terms: vec![(slot, coef)], constant: 0.0 }
    }

    pub fn add_term(&mut self, slot: usize, coef: f64) {
        if coef != 0.0 {
            self.terms.push((slot, coef));
        }
    }

    pub fn plus(mut self, other: &LinExpr) -> Self {
        self.terms.extend_from_slice(&other.terms);
        self.constant += other.constant;
        self
    }

    pub fn scaled(mut self, s: f64) -> Self {
        for t in &mut self.terms {
            t.1 *= s;
        }
        self.constant *= s;
        self
    }

    pub fn offset(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(i, a)| a * x[i]).sum::<f64>() + self.constant
    }

    /// Sum of absolute term magnitudes at `x`, used to normalize residuals.
    fn magnitude(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(i, a)| (a * x[i]).abs()).sum::<f64>() + self.constant.abs()
    }

    /// Merges duplicate slots and drops zeros.
    fn compact(&self) -> Vec<(usize, f64)> {
        let mut t = self.terms.clone();
        t.sort_by_key(|p| p.0);
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(t.len());
        for (i, a) in t {
            match out.last_mut() {
                Some(last) if last.0 == i => last.1 += a,
                _ => out.push((i, a)),
            }
        }
        out.retain(|p| p.1 != 0.0);
        out
    }
}

/// Complex affine expression as a pair of real expressions.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CLinExpr {
    pub re: LinExpr,
    pub im: LinExpr,
}

impl CLinExpr {
    pub fn constant(z: C64) -> Self {
        Self { re: LinExpr::constant(z.re), im: LinExpr::constant(z.im) }
    }

    pub fn plus(self, other: &CLinExpr) -> Self {
        Self { re: self.re.plus(&other.re), im: self.im.plus(&other.im) }
    }

    pub fn scaled(self, s: f64) -> Self {
        Self { re: self.re.scaled(s), im: self.im.scaled(s) }
    }

    pub fn eval(&self, x: &[f64]) -> C64 {
        c(self.re.eval(x), self.im.eval(x))
    }
}

#[derive(Debug, Clone)]
pub enum Constraint {
    /// Every expression equals zero.
    Zero(Vec<LinExpr>),
    /// Every expression is non-negative.
    NonNeg(Vec<LinExpr>),
    /// `‖rest‖ ≤ head`.
    Soc { head: LinExpr, rest: Vec<LinExpr> },
    /// `u·v ≥ ‖x‖²` with `u, v ≥ 0`.
    RotatedSoc { u: LinExpr, v: LinExpr, x: Vec<LinExpr> },
    /// Hermitian matrix whose upper triangle (row-major, including the diagonal) is given by
    /// affine expressions must be positive semidefinite.
    HermitianPsd { n: usize, upper: Vec<CLinExpr> },
}

impl Constraint {
    fn kind_name(&self) -> &'static str {
        match self {
            Constraint::Zero(_) => "zero",
            Constraint::NonNeg(_) => "nonneg",
            Constraint::Soc { .. } => "soc",
            Constraint::RotatedSoc { .. } => "rsoc",
            Constraint::HermitianPsd { .. } => "hpsd",
        }
    }
}

#[derive(Debug, Clone)]
pub struct LabeledConstraint {
    pub label: String,
    pub constraint: Constraint,
}

/// Minimize a linear objective over a product of cones.
#[derive(Debug, Clone, Default)]
pub struct ConicProgram {
    vars: Vec<Variable>,
    n_slots: usize,
    objective: LinExpr,
    constraints: Vec<LabeledConstraint>,
}

fn upper_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < n);
    // row-major strict upper triangle
    i * n - i * (i + 1) / 2 + (j - i - 1)
}

impl ConicProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, name: &str, kind: VarKind) -> VarId {
        let id = VarId(self.vars.len());
        self.vars.push(Variable { name: name.to_string(), kind, offset: self.n_slots });
        self.n_slots += kind.slots();
        id
    }

    pub fn var(&self, id: VarId) -> &Variable {
        &self.vars[id.0]
    }

    pub fn variables(&self) -> &[Variable] {
        &self.vars
    }

    pub fn n_slots(&self) -> usize {
        self.n_slots
    }

    pub fn constraints(&self) -> &[LabeledConstraint] {
        &self.constraints
    }

    pub fn objective(&self) -> &LinExpr {
        &self.objective
    }

    pub fn minimize(&mut self, obj: LinExpr) {
        self.objective = obj;
    }

    pub fn add(&mut self, label: &str, constraint: Constraint) {
        self.constraints.push(LabeledConstraint { label: label.to_string(), constraint });
    }

    /// The scalar variable, or element `i` of a real vector.
    pub fn real(&self, id: VarId, i: usize) -> LinExpr {
        let v = self.var(id);
        match v.kind {
            VarKind::Real => LinExpr::slot(v.offset, 1.0),
            VarKind::RealVec(n) => {
                assert!(i < n);
                LinExpr::slot(v.offset + i, 1.0)
            }
            _ => panic!("variable {} is not real", v.name),
        }
    }

    /// Element `i` of a complex vector.
    pub fn cvec_entry(&self, id: VarId, i: usize) -> CLinExpr {
        let v = self.var(id);
        let VarKind::ComplexVec(n) = v.kind else { panic!("variable {} is not a complex vector", v.name) };
        assert!(i < n);
        CLinExpr { re: LinExpr::slot(v.offset + i, 1.0), im: LinExpr::slot(v.offset + n + i, 1.0) }
    }

    /// Entry `(i, j)` of a Hermitian matrix variable.
    pub fn herm_entry(&self, id: VarId, i: usize, j: usize) -> CLinExpr {
        let v = self.var(id);
        let VarKind::Hermitian(n) = v.kind else { panic!("variable {} is not Hermitian", v.name) };
        let m = n * (n - 1) / 2;
        if i == j {
            return CLinExpr { re: LinExpr::slot(v.offset + i, 1.0), im: LinExpr::default() };
        }
        let (a, b, sign) = if i < j { (i, j, 1.0) } else { (j, i, -1.0) };
        let k = upper_index(n, a, b);
        CLinExpr {
            re: LinExpr::slot(v.offset + n + k, 1.0),
            im: LinExpr::slot(v.offset + n + m + k, sign),
        }
    }

    /// `Tr(C X)` for a Hermitian variable `X` and any square `C`.
    pub fn trace_product(&self, id: VarId, cm: &CMat) -> CLinExpr {
        let v = self.var(id);
        let VarKind::Hermitian(n) = v.kind else { panic!("variable {} is not Hermitian", v.name) };
        assert_eq!(cm.shape(), (n, n), "trace_product dimension");
        let m = n * (n - 1) / 2;
        let mut re = LinExpr::default();
        let mut im = LinExpr::default();
        for i in 0..n {
            re.add_term(v.offset + i, cm[(i, i)].re);
            im.add_term(v.offset + i, cm[(i, i)].im);
        }
        for i in 0..n {
            for j in i + 1..n {
                let k = upper_index(n, i, j);
                let (cij, cji) = (cm[(i, j)], cm[(j, i)]);
                let sa = v.offset + n + k;
                let sb = v.offset + n + m + k;
                re.add_term(sa, cji.re + cij.re);
                re.add_term(sb, cij.im - cji.im);
                im.add_term(sa, cji.im + cij.im);
                im.add_term(sb, cji.re - cij.re);
            }
        }
        CLinExpr { re, im }
    }

    /// Upper triangle of a Hermitian variable, in the layout expected by
    /// [`Constraint::HermitianPsd`].
    pub fn herm_upper(&self, id: VarId) -> (usize, Vec<CLinExpr>) {
        let VarKind::Hermitian(n) = self.var(id).kind else { panic!("not Hermitian") };
        let mut out = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            for j in i..n {
                out.push(self.herm_entry(id, i, j));
            }
        }
        (n, out)
    }

    fn check(&self) -> Result<(), ConicError> {
        let bad = |e: &LinExpr| e.terms.iter().any(|&(i, _)| i >= self.n_slots);
        let bad_c = |e: &CLinExpr| bad(&e.re) || bad(&e.im);
        if bad(&self.objective) {
            return Err(ConicError::Dimension("objective references an undeclared slot".into()));
        }
        for lc in &self.constraints {
            let ok = match &lc.constraint {
                Constraint::Zero(r) | Constraint::NonNeg(r) => !r.iter().any(bad),
                Constraint::Soc { head, rest } => !bad(head) && !rest.iter().any(bad),
                Constraint::RotatedSoc { u, v, x } => !bad(u) && !bad(v) && !x.iter().any(bad),
                Constraint::HermitianPsd { n, upper } => {
                    if upper.len() != n * (n + 1) / 2 {
                        return Err(ConicError::Dimension(format!(
                            "{}: PSD block of order {n} needs {} entries, got {}",
                            lc.label,
                            n * (n + 1) / 2,
                            upper.len()
                        )));
                    }
                    !upper.iter().any(bad_c)
                }
            };
            if !ok {
                return Err(ConicError::Dimension(format!(
                    "{}: references an undeclared slot",
                    lc.label
                )));
            }
        }
        Ok(())
    }

    /// Sparse triplet listing per cone, for offline inspection.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# slots {}", self.n_slots);
        for v in &self.vars {
            let _ = writeln!(s, "var {} {:?} offset {}", v.name, v.kind, v.offset);
        }
        let _ = writeln!(s, "objective");
        dump_expr(&mut s, 0, &self.objective);
        for lc in &self.constraints {
            let rows = lower_rows(&lc.constraint);
            let _ = writeln!(s, "cone {} {} rows {}", lc.label, lc.constraint.kind_name(), rows.len());
            for (r, e) in rows.iter().enumerate() {
                dump_expr(&mut s, r, e);
            }
        }
        s
    }
}

fn dump_expr(s: &mut String, row: usize, e: &LinExpr) {
    for (i, a) in e.compact() {
        let _ = writeln!(s, "  {row} {i} {a:e}");
    }
    if e.constant != 0.0 {
        let _ = writeln!(s, "  {row} const {:e}", e.constant);
    }
}

/// Real rows of the lowered cone, in backend order.
fn lower_rows(c: &Constraint) -> Vec<LinExpr> {
    match c {
        Constraint::Zero(r) | Constraint::NonNeg(r) => r.clone(),
        Constraint::Soc { head, rest } => {
            let mut v = vec![head.clone()];
            v.extend(rest.iter().cloned());
            v
        }
        Constraint::RotatedSoc { u, v, x } => {
            let mut rows = vec![u.clone().plus(v), u.clone().plus(&v.clone().scaled(-1.0))];
            rows.extend(x.iter().map(|e| e.clone().scaled(2.0)));
            rows
        }
        Constraint::HermitianPsd { n, upper } => embedded_svec(*n, upper),
    }
}

fn entry(n: usize, upper: &[CLinExpr], i: usize, j: usize) -> CLinExpr {
    if i <= j {
        upper[row_major_upper(n, i, j)].clone()
    } else {
        let e = &upper[row_major_upper(n, j, i)];
        CLinExpr { re: e.re.clone(), im: e.im.clone().scaled(-1.0) }
    }
}

fn row_major_upper(n: usize, i: usize, j: usize) -> usize {
    // row-major upper triangle including the diagonal
    i * n - i * i.saturating_sub(1) / 2 - i + j
}

/// svec of the real embedding `[[Re X, −Im X], [Im X, Re X]]`: upper triangle, column by
/// column, off-diagonal entries scaled by √2.
fn embedded_svec(n: usize, upper: &[CLinExpr]) -> Vec<LinExpr> {
    let s2 = std::f64::consts::SQRT_2;
    let big = 2 * n;
    let mut rows = Vec::with_capacity(big * (big + 1) / 2);
    for col in 0..big {
        for row in 0..=col {
            let (bi, i) = (row / n, row % n);
            let (bj, j) = (col / n, col % n);
            let z = entry(n, upper, i, j);
            let e = match (bi, bj) {
                (0, 0) | (1, 1) => z.re,
                (0, 1) => z.im.scaled(-1.0),
                _ => z.im,
            };
            rows.push(if row == col { e } else { e.scaled(s2) });
        }
    }
    rows
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConicStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

/// What a backend hands back before verification.
#[derive(Debug, Clone)]
pub struct BackendResult {
    pub status: ConicStatus,
    pub x: Vec<f64>,
    pub detail: String,
}

/// Narrow solver contract: load a program, solve it, report.
pub trait ConicBackend {
    fn name(&self) -> &str;
    fn solve(&self, p: &ConicProgram, tol: f64) -> Result<BackendResult, ConicError>;
}

#[derive(Debug, Clone)]
pub struct ConicSolution {
    pub status: ConicStatus,
    x: Vec<f64>,
    pub objective_value: f64,
    pub solver_tolerance: f64,
    /// Largest normalized residual found by the verifier.
    pub max_violation: f64,
    pub detail: String,
}

impl ConicSolution {
    pub fn slots(&self) -> &[f64] {
        &self.x
    }

    pub fn real(&self, p: &ConicProgram, id: VarId) -> f64 {
        let v = p.var(id);
        assert_eq!(v.kind, VarKind::Real);
        self.x[v.offset]
    }

    pub fn real_vec(&self, p: &ConicProgram, id: VarId) -> Vec<f64> {
        let v = p.var(id);
        let VarKind::RealVec(n) = v.kind else { panic!("not a real vector") };
        self.x[v.offset..v.offset + n].to_vec()
    }

    pub fn complex_vec(&self, p: &ConicProgram, id: VarId) -> CVec {
        let v = p.var(id);
        let VarKind::ComplexVec(n) = v.kind else { panic!("not a complex vector") };
        CVec::from_fn(n, |i, _| c(self.x[v.offset + i], self.x[v.offset + n + i]))
    }

    pub fn hermitian(&self, p: &ConicProgram, id: VarId) -> CMat {
        let VarKind::Hermitian(n) = p.var(id).kind else { panic!("not Hermitian") };
        CMat::from_fn(n, n, |i, j| p.herm_entry(id, i, j).eval(&self.x))
    }

    pub fn is_optimal(&self) -> bool {
        self.status == ConicStatus::Optimal
    }
}

/// Normalized violation of one constraint at `x` (zero when satisfied).
pub fn constraint_violation(c: &Constraint, x: &[f64]) -> f64 {
    match c {
        Constraint::Zero(rows) => rows
            .iter()
            .map(|e| e.eval(x).abs() / e.magnitude(x).max(1.0))
            .fold(0.0, f64::max),
        Constraint::NonNeg(rows) => rows
            .iter()
            .map(|e| (-e.eval(x)).max(0.0) / e.magnitude(x).max(1.0))
            .fold(0.0, f64::max),
        Constraint::Soc { head, rest } => {
            let t = head.eval(x);
            let nx = rest.iter().map(|e| e.eval(x).powi(2)).sum::<f64>().sqrt();
            (nx - t).max(0.0) / (t.abs() + nx).max(1.0)
        }
        Constraint::RotatedSoc { u, v, x: xs } => {
            let (a, b) = (u.eval(x), v.eval(x));
            let nx = xs.iter().map(|e| e.eval(x).powi(2)).sum::<f64>().sqrt();
            // same cone as ‖(a − b, 2x)‖ ≤ a + b
            let lhs = ((a - b).powi(2) + 4.0 * nx * nx).sqrt();
            (lhs - (a + b)).max(0.0) / (a.abs() + b.abs() + nx).max(1.0)
        }
        Constraint::HermitianPsd { n, upper } => {
            let m = CMat::from_fn(*n, *n, |i, j| entry(*n, upper, i, j).eval(x));
            let ev = crate::linalg::min_eig_hermitian(&m);
            (-ev).max(0.0) / m.norm().max(1.0)
        }
    }
}

/// Per-constraint normalized residuals at `x`.
pub fn residuals(p: &ConicProgram, x: &[f64]) -> Vec<(String, f64)> {
    p.constraints
        .iter()
        .map(|lc| (lc.label.clone(), constraint_violation(&lc.constraint, x)))
        .collect()
}

/// Solves `p` with `backend` and re-verifies the result independently. Optimal solutions whose
/// residuals exceed `10·tol` are downgraded to numerical failure.
pub fn solve(
    p: &ConicProgram,
    backend: &dyn ConicBackend,
    tol: f64,
) -> Result<ConicSolution, ConicError> {
    p.check()?;
    let raw = backend.solve(p, tol)?;
    if raw.x.len() != p.n_slots {
        return Err(ConicError::Dimension(format!(
            "backend returned {} slots, program has {}",
            raw.x.len(),
            p.n_slots
        )));
    }
    let res = residuals(p, &raw.x);
    let (worst_label, max_violation) = res
        .iter()
        .cloned()
        .fold((String::new(), 0.0), |acc, r| if r.1 > acc.1 { r } else { acc });
    let mut status = raw.status;
    let mut detail = raw.detail;
    let finite = raw.x.iter().all(|v| v.is_finite());
    if status == ConicStatus::Optimal && (max_violation > 10.0 * tol || !finite) {
        status = ConicStatus::NumericalFailure;
        detail = format!("{detail}; verification failed at {worst_label} ({max_violation:e})");
    }
    Ok(ConicSolution {
        status,
        objective_value: p.objective.eval(&raw.x),
        x: raw.x,
        solver_tolerance: tol,
        max_violation,
        detail,
    })
}

/// Interior-point backend built on Clarabel.
#[derive(Debug, Clone)]
pub struct ClarabelBackend {
    pub max_iter: u32,
}

impl Default for ClarabelBackend {
    fn default() -> Self {
        Self { max_iter: 200 }
    }
}

impl ConicBackend for ClarabelBackend {
    fn name(&self) -> &str {
        "clarabel"
    }

    fn solve(&self, p: &ConicProgram, tol: f64) -> Result<BackendResult, ConicError> {
        let n = p.n_slots;
        let mut rows_i = Vec::new();
        let mut cols_j = Vec::new();
        let mut vals = Vec::new();
        let mut b = Vec::new();
        let mut cones = Vec::new();

        // Zero and nonnegative cones first, then the rest in declaration order.
        let mut push_rows = |rows: &[LinExpr], b: &mut Vec<f64>| {
            for e in rows {
                let r = b.len();
                for (j, a) in e.compact() {
                    rows_i.push(r);
                    cols_j.push(j);
                    vals.push(-a);
                }
                b.push(e.constant);
            }
        };
        for lc in &p.constraints {
            let rows = lower_rows(&lc.constraint);
            if rows.is_empty() {
                continue;
            }
            push_rows(&rows, &mut b);
            cones.push(match &lc.constraint {
                Constraint::Zero(_) => SupportedConeT::ZeroConeT(rows.len()),
                Constraint::NonNeg(_) => SupportedConeT::NonnegativeConeT(rows.len()),
                Constraint::Soc { .. } | Constraint::RotatedSoc { .. } => {
                    SupportedConeT::SecondOrderConeT(rows.len())
                }
                Constraint::HermitianPsd { n, .. } => SupportedConeT::PSDTriangleConeT(2 * n),
            });
        }
        let m = b.len();
        let a = CscMatrix::new_from_triplets(m, n, rows_i, cols_j, vals);
        let pm = CscMatrix::<f64>::zeros((n, n));
        let mut q = vec![0.0; n];
        for (j, v) in p.objective.compact() {
            q[j] = v;
        }
        let settings = DefaultSettingsBuilder::default()
            .verbose(false)
            .max_iter(self.max_iter)
            .tol_feas(tol)
            .tol_gap_abs(tol)
            .tol_gap_rel(tol)
            .presolve_enable(false)
            .build()
            .map_err(|e| ConicError::Backend(e.to_string()))?;
        let mut solver = DefaultSolver::new(&pm, &q, &a, &b, &cones, settings)
            .map_err(|e| ConicError::Backend(e.to_string()))?;
        solver.solve();
        let sol = &solver.solution;
        let status = match sol.status {
            SolverStatus::Solved | SolverStatus::AlmostSolved => ConicStatus::Optimal,
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
                ConicStatus::Infeasible
            }
            SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
                ConicStatus::Unbounded
            }
            _ => ConicStatus::NumericalFailure,
        };
        Ok(BackendResult {
            status,
            x: sol.x.clone(),
            detail: format!("clarabel {:?} in {} iterations", sol.status, sol.iterations),
        })
    }
}

/// Real embedding of a Hermitian matrix. `X ⪰ 0` iff the embedding is PSD.
pub fn hermitian_to_real_embedding(x: &CMat) -> Result<RMat, ConicError> {
    if !x.is_square() {
        return Err(ConicError::Dimension("embedding needs a square matrix".into()));
    }
    let defect = crate::linalg::hermitian_defect(x);
    if defect > 1e-12 {
        return Err(ConicError::NotHermitian(defect));
    }
    Ok(real_embedding(x))
}

/// Lowers `zᴴ P z + Re(qᴴ z) + r ≤ slack` (`P ⪰ 0`) to `‖P^{1/2} z‖² ≤ slack − Re(qᴴz) − r` as
/// a rotated cone, where `z` is a complex vector variable and `slack` any affine expression. `P`
/// must be Hermitian PSD; its square root is taken by eigen-decomposition. A zero `P` gives a
/// plain linear inequality.
pub fn convex_quadratic_le(
    p: &ConicProgram,
    z: VarId,
    pm: &CMat,
    q: &CVec,
    r: f64,
    slack: LinExpr,
) -> Constraint {
    let n = pm.nrows();
    let mut rhs = slack.offset(-r);
    for i in 0..n {
        let e = p.cvec_entry(z, i);
        // Re(conj(q_i) z_i) = q.re·z.re + q.im·z.im
        rhs = rhs.plus(&e.re.scaled(-q[i].re)).plus(&e.im.scaled(-q[i].im));
    }
    if pm.iter().all(|a| *a == C64::new(0.0, 0.0)) {
        return Constraint::NonNeg(vec![rhs]);
    }
    let s = crate::linalg::hermitian_sqrt(pm);
    let rows: Vec<CLinExpr> = (0..n)
        .map(|i| {
            let mut acc = CLinExpr::default();
            for j in 0..n {
                let a = s[(i, j)];
                if a == C64::new(0.0, 0.0) {
                    continue;
                }
                let e = p.cvec_entry(z, j);
                // (a.re + j a.im)(x + j y)
                acc.re = acc.re.plus(&e.re.clone().scaled(a.re)).plus(&e.im.clone().scaled(-a.im));
                acc.im = acc.im.plus(&e.re.scaled(a.im)).plus(&e.im.scaled(a.re));
            }
            acc
        })
        .collect();
    let mut xs: Vec<LinExpr> = rows.iter().map(|r| r.re.clone()).collect();
    xs.extend(rows.into_iter().map(|r| r.im));
    Constraint::RotatedSoc { u: rhs, v: LinExpr::constant(1.0), x: xs }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solve_default(p: &ConicProgram) -> ConicSolution {
        solve(p, &ClarabelBackend::default(), 1e-8).unwrap()
    }

    #[test]
    fn lp_one_dimensional() {
        let mut p = ConicProgram::new();
        let x = p.add_var("x", VarKind::Real);
        p.minimize(p.real(x, 0));
        p.add("x>=1", Constraint::NonNeg(vec![p.real(x, 0).offset(-1.0)]));
        let s = solve_default(&p);
        assert!(s.is_optimal());
        assert!((s.real(&p, x) - 1.0).abs() < 1e-7);
    }

    #[test]
    fn eigenvalue_lp() {
        let mut p = ConicProgram::new();
        let x = p.add_var("X", VarKind::Hermitian(2));
        let cm = CMat::from_diagonal(&CVec::from_vec(vec![c(1.0, 0.0), c(2.0, 0.0)]));
        p.minimize(p.trace_product(x, &cm).re);
        let tr = p.trace_product(x, &CMat::identity(2, 2)).re.offset(-1.0);
        p.add("trace", Constraint::Zero(vec![tr]));
        let (n, upper) = p.herm_upper(x);
        p.add("psd", Constraint::HermitianPsd { n, upper });
        let s = solve_default(&p);
        assert!(s.is_optimal());
        assert!((s.objective_value - 1.0).abs() < 1e-7);
        let xv = s.hermitian(&p, x);
        assert!((xv[(0, 0)].re - 1.0).abs() < 1e-6);
        assert!(xv[(1, 1)].re.abs() < 1e-6);
    }

    #[test]
    fn rotated_cone_boundary() {
        // max t s.t. (a − t)·c ≥ |b|² with a = c = 2, b = 1 → t = 1.5
        let mut p = ConicProgram::new();
        let t = p.add_var("t", VarKind::Real);
        p.minimize(p.real(t, 0).scaled(-1.0));
        let u = p.real(t, 0).scaled(-1.0).offset(2.0);
        p.add(
            "det",
            Constraint::RotatedSoc { u, v: LinExpr::constant(2.0), x: vec![LinExpr::constant(1.0)] },
        );
        let s = solve_default(&p);
        assert!(s.is_optimal());
        assert!((s.real(&p, t) - 1.5).abs() < 1e-6);
    }

    #[test]
    fn complex_psd_with_offdiagonal_coupling() {
        // max Re X01 + Im X01 over X ⪰ 0 with unit diagonal → X01 = (1 + j)/√2
        let mut p = ConicProgram::new();
        let x = p.add_var("X", VarKind::Hermitian(3));
        let e = p.herm_entry(x, 0, 1);
        p.minimize(e.re.clone().plus(&e.im).scaled(-1.0));
        let diag: Vec<LinExpr> = (0..3).map(|i| p.herm_entry(x, i, i).re.offset(-1.0)).collect();
        p.add("diag", Constraint::Zero(diag));
        let (n, upper) = p.herm_upper(x);
        p.add("psd", Constraint::HermitianPsd { n, upper });
        let s = solve_default(&p);
        assert!(s.is_optimal());
        let xv = s.hermitian(&p, x);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((xv[(0, 1)] - c(h, h)).norm() < 1e-6, "{}", xv);
        assert!((xv[(1, 0)] - c(h, -h)).norm() < 1e-6);
    }

    #[test]
    fn trace_product_matches_dense() {
        let mut p = ConicProgram::new();
        let x = p.add_var("X", VarKind::Hermitian(3));
        let n = p.n_slots();
        let slots: Vec<f64> = (0..n).map(|i| (i as f64 * 0.731).sin()).collect();
        let xv = CMat::from_fn(3, 3, |i, j| p.herm_entry(x, i, j).eval(&slots));
        assert!(crate::linalg::hermitian_defect(&xv) < 1e-15);
        let cm = CMat::from_fn(3, 3, |i, j| c((i + 2 * j) as f64 * 0.3 - 1.0, (i * j) as f64 - 0.5));
        let dense = (&cm * &xv).trace();
        let lin = p.trace_product(x, &cm).eval(&slots);
        assert!((dense - lin).norm() < 1e-12);
    }

    #[test]
    fn verifier_downgrades_bad_points() {
        struct Liar;
        impl ConicBackend for Liar {
            fn name(&self) -> &str {
                "liar"
            }
            fn solve(&self, _: &ConicProgram, _: f64) -> Result<BackendResult, ConicError> {
                Ok(BackendResult { status: ConicStatus::Optimal, x: vec![0.0], detail: String::new() })
            }
        }
        let mut p = ConicProgram::new();
        let x = p.add_var("x", VarKind::Real);
        p.minimize(p.real(x, 0));
        p.add("x>=1", Constraint::NonNeg(vec![p.real(x, 0).offset(-1.0)]));
        let s = solve(&p, &Liar, 1e-8).unwrap();
        assert_eq!(s.status, ConicStatus::NumericalFailure);
    }

    #[test]
    fn undeclared_slot_is_rejected() {
        let mut p = ConicProgram::new();
        p.add_var("x", VarKind::Real);
        p.add("bad", Constraint::NonNeg(vec![LinExpr::slot(5, 1.0)]));
        assert!(matches!(
            solve(&p, &ClarabelBackend::default(), 1e-8),
            Err(ConicError::Dimension(_))
        ));
    }

    #[test]
    fn embedding_examples() {
        let i2 = CMat::identity(2, 2);
        assert_eq!(hermitian_to_real_embedding(&i2).unwrap(), RMat::identity(4, 4));
        let bad = CMat::from_row_slice(2, 2, &[c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]);
        assert!(matches!(hermitian_to_real_embedding(&bad), Err(ConicError::NotHermitian(_))));
    }

    #[test]
    fn quadratic_lowering_is_exact() {
        // min Re(qᴴz) s.t. zᴴ z ≤ 1 → −‖q‖
        let mut p = ConicProgram::new();
        let z = p.add_var("z", VarKind::ComplexVec(2));
        let q = CVec::from_vec(vec![c(3.0, 0.0), c(0.0, 4.0)]);
        let mut obj = LinExpr::default();
        for i in 0..2 {
            let e = p.cvec_entry(z, i);
            obj = obj.plus(&e.re.scaled(q[i].re)).plus(&e.im.scaled(q[i].im));
        }
        p.minimize(obj);
        let k = convex_quadratic_le(
            &p,
            z,
            &CMat::identity(2, 2),
            &CVec::zeros(2),
            -1.0,
            LinExpr::default(),
        );
        p.add("ball", k);
        let s = solve_default(&p);
        assert!(s.is_optimal());
        assert!((s.objective_value + 5.0).abs() < 1e-6);
    }
}
