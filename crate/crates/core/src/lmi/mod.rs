//! Supply rates and the dissipativity LMIs of single layers, Lur'e systems
//! and fully connected chains.
//!
//! Every builder adds variables and constraint blocks to a caller-owned
//! [`SdpProblem`], so supplies created against one problem can be shared
//! between several LMIs (the hybrid bound couples the conv LMI and the dense
//! chain through `Q_C`).

pub mod estimate;
pub mod problem;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::lure::LureSystem;
use crate::realization::{reachable_subspace, split_reachable_basis, RoesserRealization};

pub use estimate::{
    certified_system, estimate_lipschitz_hybrid, estimate_lipschitz_layer, naive_bound,
    single_layer_network, EstimateOptions, LipschitzCertificate, CERTIFICATE_SCHEMA,
};
pub use problem::{AffineSym, SdpProblem, SparseRows, Term, VarId, VarShape};

/// Quadratic form `[in; out]^T [[R, S], [S^T, Q]] [in; out]` whose entries are
/// affine in problem variables.
#[derive(Debug, Clone)]
pub struct QuadraticSupply {
    pub n_in: usize,
    pub n_out: usize,
    pub form: AffineSym,
}

impl QuadraticSupply {
    pub fn new(n_in: usize, n_out: usize, form: AffineSym) -> Result<Self> {
        if form.dim() != n_in + n_out {
            return Err(Error::Dimension(format!(
                "supply form is {}x{}, expected {}",
                form.dim(),
                form.dim(),
                n_in + n_out
            )));
        }
        Ok(Self { n_in, n_out, form })
    }

    /// Numeric matrix given variable values.
    pub fn matrix(&self, value: &dyn Fn(VarId) -> DMatrix<f64>) -> DMatrix<f64> {
        self.form.evaluate(value)
    }

    /// `(Q, S, R)` blocks of [`Self::matrix`].
    pub fn blocks(
        &self,
        value: &dyn Fn(VarId) -> DMatrix<f64>,
    ) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let m = self.matrix(value);
        let (a, b) = (self.n_in, self.n_out);
        (
            m.view((a, a), (b, b)).clone_owned(),
            m.view((0, a), (a, b)).clone_owned(),
            m.view((0, 0), (a, a)).clone_owned(),
        )
    }

    /// Evaluates `s(in, out)`.
    pub fn value(
        &self,
        value: &dyn Fn(VarId) -> DMatrix<f64>,
        input: &[f64],
        output: &[f64],
    ) -> f64 {
        let m = self.matrix(value);
        let v: Vec<f64> = input.iter().chain(output).copied().collect();
        let v = nalgebra::DVector::from_vec(v);
        v.dot(&(&m * &v))
    }
}

fn unit_rows(n: usize, offset: usize, total: usize) -> SparseRows {
    SparseRows {
        ncols: total,
        rows: (0..n).map(|k| vec![(offset + k, 1.0)]).collect(),
    }
}

/// `gamma_sq * I` on the input repeated as one scalar per channel.
fn gamma_term(gamma_sq: VarId, c_in: usize, total: usize) -> Term {
    Term::repeated(gamma_sq, 1.0, c_in, unit_rows(c_in, 0, total), None)
}

/// `(R, S, Q) = (gamma^2 I, 0, -I)`: `s(u, y) = gamma^2 |u|^2 - |y|^2`.
pub fn lipschitz_supply(gamma_sq: VarId, c_in: usize, c_out: usize) -> QuadraticSupply {
    let n = c_in + c_out;
    let mut c = DMatrix::zeros(n, n);
    for k in c_in..n {
        c[(k, k)] = -1.0;
    }
    let mut form = AffineSym::constant(c);
    form.push(gamma_term(gamma_sq, c_in, n));
    QuadraticSupply {
        n_in: c_in,
        n_out: c_out,
        form,
    }
}

/// `(R, S, Q) = (gamma^2 I, 0, Q_C)` with a symmetric variable `Q_C`.
pub fn hybrid_supply(gamma_sq: VarId, q_c: VarId, c_in: usize, c_out: usize) -> QuadraticSupply {
    let n = c_in + c_out;
    let mut form = AffineSym::zeros(n);
    form.push(gamma_term(gamma_sq, c_in, n));
    form.push(Term::repeated(q_c, 1.0, 1, unit_rows(c_out, c_in, n), None));
    QuadraticSupply {
        n_in: c_in,
        n_out: c_out,
        form,
    }
}

/// Multiplier form for slope-`[0, 1]` nonlinearities on the pair `(z, w)`:
///
/// ```text
/// s_w(z, w) = 2 w^T Lambda (w - z)
/// ```
///
/// which is `<= 0` whenever every `w_j` lies between `0` and `z_j`.
pub fn slope_supply(lambda: VarId, nz: usize) -> QuadraticSupply {
    let n = 2 * nz;
    let mut form = AffineSym::zeros(n);
    let w = unit_rows(nz, nz, n);
    let z = unit_rows(nz, 0, n);
    form.push(Term::repeated(lambda, 2.0, 1, w.clone(), None));
    form.push(Term::repeated(lambda, -2.0, 1, w, Some(z)));
    QuadraticSupply {
        n_in: nz,
        n_out: nz,
        form,
    }
}

/// Bases restricting the storage matrices to the reachable subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    /// Joint basis of the reachable subspace of `(x1, x2)`.
    pub t: DMatrix<f64>,
    /// Basis of the `x1` coordinates of `span(t)`.
    pub t1: DMatrix<f64>,
    /// Basis of the `x2` coordinates of `span(t)`.
    pub t2: DMatrix<f64>,
}

impl Projection {
    /// Reachable subspace of the linear part driven by both `w` and `u`.
    pub fn reachable(sys: &LureSystem) -> Self {
        let t = reachable_subspace(&driven_roesser(sys));
        Self::from_basis(t, sys.n1(), sys.n2())
    }

    pub fn from_basis(t: DMatrix<f64>, n1: usize, n2: usize) -> Self {
        let (t1, t2) = split_reachable_basis(&t, n1, n2);
        Self { t, t1, t2 }
    }

    /// Reduction `n1 + n2 -> dim` of the state coordinates.
    pub fn dim(&self) -> usize {
        self.t.ncols()
    }
}

/// The linear state dynamics of a Lur'e system with inputs `[w; u]`.
pub fn driven_roesser(sys: &LureSystem) -> RoesserRealization {
    let (n1, n2, nz, m) = (sys.n1(), sys.n2(), sys.nz(), sys.n_in());
    let hcat = |a: &DMatrix<f64>, b: &DMatrix<f64>| {
        let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
        out.columns_mut(0, a.ncols()).copy_from(a);
        out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
        out
    };
    RoesserRealization::linear(
        sys.a11.clone(),
        sys.a12.clone(),
        sys.a21.clone(),
        sys.a22.clone(),
        hcat(&sys.b11, &sys.b12),
        hcat(&sys.b21, &sys.b22),
        DMatrix::zeros(0, n1),
        DMatrix::zeros(0, n2),
        DMatrix::zeros(0, nz + m),
        sys.r,
    )
    .expect("Lur'e blocks are consistent")
}

/// Row blocks of the outer factor acting on `xi = (x1, x2, w, u)`.
#[derive(Debug, Clone)]
pub struct OuterFactor {
    pub x1_next: DMatrix<f64>,
    pub x2_next: DMatrix<f64>,
    pub x1: DMatrix<f64>,
    pub x2: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub u: DMatrix<f64>,
}

impl OuterFactor {
    pub fn new(sys: &LureSystem) -> Self {
        let (n1, n2, nz, m) = (sys.n1(), sys.n2(), sys.nz(), sys.n_in());
        let n = n1 + n2 + nz + m;
        let row = |blocks: [&DMatrix<f64>; 4]| {
            let rows = blocks[0].nrows();
            let mut out = DMatrix::zeros(rows, n);
            let mut c = 0;
            for b in blocks {
                out.columns_mut(c, b.ncols()).copy_from(b);
                c += b.ncols();
            }
            out
        };
        let select = |offset: usize, k: usize| {
            let mut out = DMatrix::zeros(k, n);
            out.view_mut((0, offset), (k, k)).fill_with_identity();
            out
        };
        Self {
            x1_next: row([&sys.a11, &sys.a12, &sys.b11, &sys.b12]),
            x2_next: row([&sys.a21, &sys.a22, &sys.b21, &sys.b22]),
            x1: select(0, n1),
            x2: select(n1, n2),
            z: row([&sys.c11, &sys.c12, &sys.d11, &sys.d12]),
            w: select(n1 + n2, nz),
            y: row([&sys.c21, &sys.c22, &sys.d21, &sys.d22]),
            u: select(n1 + n2 + nz, m),
        }
    }

    /// `blkdiag(T, I)` mapping reduced coordinates to `xi`.
    pub fn theta(sys: &LureSystem, projection: Option<&Projection>) -> DMatrix<f64> {
        let (n1, n2, nz, m) = (sys.n1(), sys.n2(), sys.nz(), sys.n_in());
        match projection {
            None => DMatrix::identity(n1 + n2 + nz + m, n1 + n2 + nz + m),
            Some(p) => {
                let d = p.dim();
                let mut th = DMatrix::zeros(n1 + n2 + nz + m, d + nz + m);
                th.view_mut((0, 0), (n1 + n2, d)).copy_from(&p.t);
                th.view_mut((n1 + n2, d), (nz + m, nz + m))
                    .fill_with_identity();
                th
            }
        }
    }
}

fn vstack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols());
    out.rows_mut(0, a.nrows()).copy_from(a);
    out.rows_mut(a.nrows(), b.nrows()).copy_from(b);
    out
}

/// Handles returned by [`build_lure_lmi`].
#[derive(Debug, Clone)]
pub struct LureLmi {
    /// Reduced storage `P1~`; the full storage is `T1 P1~ T1^T`.
    pub p1: Option<VarId>,
    pub p2: Option<VarId>,
    /// Index of the dissipation block in the problem.
    pub block: usize,
    pub t1: DMatrix<f64>,
    pub t2: DMatrix<f64>,
}

/// Robust dissipation inequality of a (linear) Lur'e system:
///
/// ```text
/// -F1' P1 F1 - F2' P2 F2 + E1' P1 E1 + E2' P2 E2
///     + [U; Y]' s [U; Y] + [Z; W]' s_w [Z; W]  >= 0
/// ```
///
/// congruence-transformed by `blkdiag(T, I)` when a projection is given, with
/// `P1 = T1 P1~ T1'` and `P2 = T2 P2~ T2'`. Also adds `P1~ >= 0`, `P2~ >= 0`.
pub fn build_lure_lmi(
    problem: &mut SdpProblem,
    sys: &LureSystem,
    outer: &QuadraticSupply,
    nl: Option<&QuadraticSupply>,
    projection: Option<&Projection>,
) -> Result<LureLmi> {
    sys.check()?;
    let (n1, n2, nz, m, p) = (sys.n1(), sys.n2(), sys.nz(), sys.n_in(), sys.n_out());
    if outer.n_in != m || outer.n_out != p {
        return Err(Error::Dimension(format!(
            "outer supply acts on ({}, {}), system has {m} inputs and {p} outputs",
            outer.n_in, outer.n_out
        )));
    }
    match nl {
        Some(s) if s.n_in != nz || s.n_out != nz => {
            return Err(Error::Dimension(format!(
                "nonlinearity supply acts on ({}, {}), system has nz = {nz}",
                s.n_in, s.n_out
            )))
        }
        None if nz > 0 => {
            return Err(Error::Dimension(format!(
                "system has nz = {nz} but no nonlinearity supply was given"
            )))
        }
        _ => {}
    }
    if let Some(pr) = projection {
        if pr.t.nrows() != n1 + n2 || pr.t1.nrows() != n1 || pr.t2.nrows() != n2 {
            return Err(Error::Dimension(
                "projection basis does not match the state size".into(),
            ));
        }
    }
    let of = OuterFactor::new(sys);
    let theta = OuterFactor::theta(sys, projection);
    let (t1, t2) = match projection {
        Some(pr) => (pr.t1.clone(), pr.t2.clone()),
        None => (DMatrix::identity(n1, n1), DMatrix::identity(n2, n2)),
    };
    let dim = theta.ncols();
    let mut expr = AffineSym::zeros(dim);

    let mut storage = |name: &str,
                       basis: &DMatrix<f64>,
                       next: &DMatrix<f64>,
                       cur: &DMatrix<f64>|
     -> Result<Option<VarId>> {
        let k = basis.ncols();
        if k == 0 {
            return Ok(None);
        }
        let v = problem.add_var(name, VarShape::Symmetric(k));
        let bt = basis.transpose();
        expr.push(Term::new(v, -1.0, &(&bt * next * &theta), None));
        expr.push(Term::new(v, 1.0, &(&bt * cur * &theta), None));
        Ok(Some(v))
    };
    let p1 = storage("P1", &t1, &of.x1_next, &of.x1)?;
    let p2 = storage("P2", &t2, &of.x2_next, &of.x2)?;
    expr.add(&outer.form.congruence(&(vstack(&of.u, &of.y) * &theta)));
    if let Some(s) = nl {
        expr.add(&s.form.congruence(&(vstack(&of.z, &of.w) * &theta)));
    }
    problem.add_block("dissipation", expr)?;
    let block = problem.blocks.len() - 1;
    if let Some(v) = p1 {
        problem.add_psd("P1 >= 0", v, 1.0)?;
    }
    if let Some(v) = p2 {
        problem.add_psd("P2 >= 0", v, 1.0)?;
    }
    Ok(LureLmi {
        p1,
        p2,
        block,
        t1,
        t2,
    })
}

/// Dissipation inequality of a single Roesser realization (no nonlinearity).
pub fn build_layer_lmi(
    problem: &mut SdpProblem,
    sys: &RoesserRealization,
    supply: &QuadraticSupply,
    projection: Option<&Projection>,
) -> Result<LureLmi> {
    let lure = LureSystem::from_realization(sys, 0);
    build_lure_lmi(problem, &lure, supply, None, projection)
}

/// Lower-right block of the dense chain LMI.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ChainTail {
    /// `I`, corresponding to `s_L(u, y) = u' R_L u - |y|^2`.
    Identity,
    /// `L^2 I` for a fixed `0 < L^2 < 2`, giving `s_L(u, y) = u' R_L u - (2 - L^2) |y|^2`.
    Constant(f64),
}

/// Block-tridiagonal LMI certifying `s_L(u, y) = u' R_L u - |y|^2 >= 0`
/// incrementally for `y = W_l phi(... phi(W_1 u))`, where
/// `R_L = -diag(Q_C, ..., Q_C)` with `pixels` copies.
///
/// Returns the multipliers `Lambda_1 .. Lambda_{l-1}` (each constrained `>= 0`).
pub fn build_dense_chain_lmi(
    problem: &mut SdpProblem,
    weights: &[DMatrix<f64>],
    q_c: VarId,
    pixels: usize,
    tail: ChainTail,
) -> Result<Vec<VarId>> {
    let l = weights.len();
    if l == 0 {
        return Err(Error::Dimension(
            "dense chain needs at least one weight".into(),
        ));
    }
    let c = problem.var(q_c).shape.dim();
    let d_in = pixels * c;
    if weights[0].ncols() != d_in {
        return Err(Error::Dimension(format!(
            "first dense layer takes {} inputs, the flattened conv output has {d_in}",
            weights[0].ncols()
        )));
    }
    for k in 1..l {
        if weights[k].ncols() != weights[k - 1].nrows() {
            return Err(Error::schema(
                format!("dense layer {}", k + 1),
                format!(
                    "takes {} inputs but the previous layer has {} outputs",
                    weights[k].ncols(),
                    weights[k - 1].nrows()
                ),
            ));
        }
    }
    let mut offs = vec![0usize];
    let mut sizes = vec![d_in];
    for w in weights {
        offs.push(offs.last().unwrap() + sizes.last().unwrap());
        sizes.push(w.nrows());
    }
    let n = offs[l] + sizes[l];
    let mut expr = AffineSym::zeros(n);
    expr.push(Term::repeated(
        q_c,
        -1.0,
        pixels,
        unit_rows(d_in, 0, n),
        None,
    ));
    let mut lambdas = Vec::with_capacity(l - 1);
    for k in 1..l {
        let lam = problem.add_var(&format!("Lambda_{k}"), VarShape::Diagonal(sizes[k]));
        let sel = unit_rows(sizes[k], offs[k], n);
        let mut wr = DMatrix::zeros(sizes[k], n);
        wr.view_mut((0, offs[k - 1]), (sizes[k], sizes[k - 1]))
            .copy_from(&weights[k - 1]);
        expr.push(Term::repeated(lam, 2.0, 1, sel.clone(), None));
        expr.push(Term::repeated(
            lam,
            -2.0,
            1,
            sel,
            Some(SparseRows::from_dense(&wr)),
        ));
        lambdas.push(lam);
    }
    let (o_prev, o_last, p) = (offs[l - 1], offs[l], sizes[l]);
    let w_last = &weights[l - 1];
    expr.constant
        .view_mut((o_last, o_prev), (p, sizes[l - 1]))
        .copy_from(&(-w_last));
    expr.constant
        .view_mut((o_prev, o_last), (sizes[l - 1], p))
        .copy_from(&(-w_last.transpose()));
    match tail {
        ChainTail::Identity => expr
            .constant
            .view_mut((o_last, o_last), (p, p))
            .fill_with_identity(),
        ChainTail::Constant(l2) => {
            if !(l2 > 0.0 && l2 < 2.0) {
                return Err(Error::Usage(format!(
                    "chain tail L^2 = {l2} must lie in (0, 2)"
                )));
            }
            for k in 0..p {
                expr.constant[(o_last + k, o_last + k)] = l2;
            }
        }
    }
    problem.add_block("dense chain", expr)?;
    for (k, lam) in lambdas.iter().enumerate() {
        problem.add_psd(&format!("Lambda_{} >= 0", k + 1), *lam, 1.0)?;
    }
    Ok(lambdas)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sdpsolve::{solve, SolverOptions, SolverStatus};

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn lipschitz_supply_at_unit_gamma() {
        let mut p = SdpProblem::new();
        let g = p.add_var("g", VarShape::Diagonal(1));
        let s = lipschitz_supply(g, 1, 1);
        let m = s.matrix(&|_| scalar(1.0));
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]));
        let v = s.value(&|_| scalar(3.0), &[0.7], &[0.7]);
        assert!((v - 2.0 * 0.49).abs() < 1e-14);
        let s2 = lipschitz_supply(g, 2, 2);
        let v2 = s2.value(&|_| scalar(3.0), &[0.7, -0.2], &[0.7, -0.2]);
        assert!((v2 - 2.0 * (0.49 + 0.04)).abs() < 1e-14);
    }

    #[test]
    fn slope_supply_signs() {
        let mut p = SdpProblem::new();
        let l = p.add_var("L", VarShape::Diagonal(1));
        let s = slope_supply(l, 1);
        let one = |_: VarId| scalar(1.0);
        assert_eq!(s.value(&one, &[1.3], &[1.3]), 0.0);
        assert_eq!(s.value(&one, &[1.3], &[0.0]), 0.0);
        assert!(s.value(&one, &[1.3], &[0.5]) < 0.0);
        assert!(s.value(&one, &[1.3], &[2.0]) > 0.0);
    }

    #[test]
    fn memoryless_layer_gain() {
        let c = -1.7;
        let sys = RoesserRealization::linear(
            DMatrix::zeros(0, 0),
            DMatrix::zeros(0, 0),
            DMatrix::zeros(0, 0),
            DMatrix::zeros(0, 0),
            DMatrix::zeros(0, 1),
            DMatrix::zeros(0, 1),
            DMatrix::zeros(1, 0),
            DMatrix::zeros(1, 0),
            scalar(c),
            0,
        )
        .unwrap();
        let mut p = SdpProblem::new();
        let g = p.add_var("gamma_sq", VarShape::Diagonal(1));
        p.minimize_trace(g, 1.0);
        let s = lipschitz_supply(g, 1, 1);
        build_layer_lmi(&mut p, &sys, &s, None).unwrap();
        // The block is diag(gamma^2, -c^2) collapsed to gamma^2 - c^2.
        let v = p.evaluate_block(0, &[5.0]);
        assert!((v[(0, 0)] - (5.0 - c * c)).abs() < 1e-14);
        let sol = solve(&p, &SolverOptions::default()).unwrap();
        assert_eq!(sol.report.status, SolverStatus::Optimal);
        assert!((sol.report.objective.sqrt() - c.abs()).abs() < 1e-7);
    }

    #[test]
    fn single_dense_layer_is_schur_complement() {
        let w = DMatrix::from_row_slice(2, 1, &[3.0, 4.0]);
        let mut p = SdpProblem::new();
        let q = p.add_var("Q_C", VarShape::Symmetric(1));
        build_dense_chain_lmi(&mut p, &[w], q, 1, ChainTail::Identity).unwrap();
        // -Q_C >= W^T W = 25 is the condition; check at the boundary.
        let m = p.evaluate_block(0, &[-25.0]);
        let e = nalgebra::SymmetricEigen::new(m).eigenvalues.min();
        assert!(e.abs() < 1e-12);
        let m = p.evaluate_block(0, &[-24.0]);
        assert!(nalgebra::SymmetricEigen::new(m).eigenvalues.min() < -1e-3);
    }

    #[test]
    fn scalar_chain_feasible_at_unit_multiplier() {
        let w = vec![scalar(1.0), scalar(1.0)];
        let mut p = SdpProblem::new();
        let q = p.add_var("Q_C", VarShape::Symmetric(1));
        build_dense_chain_lmi(&mut p, &w, q, 1, ChainTail::Identity).unwrap();
        let m = p.evaluate_block(0, &[-1.0, 1.0]);
        assert!(nalgebra::SymmetricEigen::new(m).eigenvalues.min() >= -1e-12);
    }
}
