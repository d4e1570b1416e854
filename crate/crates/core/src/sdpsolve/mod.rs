//! Primal-dual interior-point solver for [`SdpProblem`]s and certificate
//! validation.
//!
//! The solver treats the problem in the form
//!
//! ```text
//! minimize c^T x   s.t.  S_k = F0_k + sum_i x_i F_{i,k} >= 0
//! maximize -<F0, Z> s.t.  <F_i, Z> = c_i,  Z >= 0
//! ```
//!
//! and follows the infeasible-start HKM search direction with a Mehrotra
//! predictor-corrector. The Schur complement `B_ij = tr(F_i S^-1 F_j Z)` is
//! assembled term by term from the congruence factors of each block, so the
//! coefficient matrices `F_i` are never formed.

pub mod validate;

use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, Dyn, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lmi::problem::{Element, SdpProblem, SparseRows, VarId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverStatus {
    Optimal,
    Infeasible,
    NumericalTrouble,
}

impl std::fmt::Display for SolverStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SolverStatus::Optimal => "optimal",
            SolverStatus::Infeasible => "infeasible",
            SolverStatus::NumericalTrouble => "numerical_trouble",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    /// Relative duality gap at which the iteration stops.
    pub gap_tol: f64,
    /// Relative primal and dual residual at which the iteration stops.
    pub feas_tol: f64,
    pub max_iter: usize,
    /// Fraction of the distance to the cone boundary taken per step.
    pub step_fraction: f64,
    /// Blocks at or below this size get a dense eigensolve for step lengths.
    pub dense_step_cutoff: usize,
    pub verbose: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            gap_tol: 1e-8,
            feas_tol: 1e-8,
            max_iter: 100,
            step_fraction: 0.95,
            dense_step_cutoff: 200,
            verbose: false,
        }
    }
}

impl SolverOptions {
    /// Defaults overridden by `LIPCERT_GAP_TOL`, `LIPCERT_FEAS_TOL`,
    /// `LIPCERT_MAX_ITER` and `LIPCERT_VERBOSE`.
    pub fn from_env() -> Result<Self> {
        let mut o = Self::default();
        let get = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
        let parse_f = |k: &str, v: String| {
            v.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite() && *x > 0.0)
                .ok_or_else(|| Error::Usage(format!("{k} must be a positive number, got '{v}'")))
        };
        if let Some(v) = get("LIPCERT_GAP_TOL") {
            o.gap_tol = parse_f("LIPCERT_GAP_TOL", v)?;
        }
        if let Some(v) = get("LIPCERT_FEAS_TOL") {
            o.feas_tol = parse_f("LIPCERT_FEAS_TOL", v)?;
        }
        if let Some(v) = get("LIPCERT_MAX_ITER") {
            o.max_iter = v.parse().map_err(|_| {
                Error::Usage(format!("LIPCERT_MAX_ITER must be an integer, got '{v}'"))
            })?;
        }
        if let Some(v) = get("LIPCERT_VERBOSE") {
            o.verbose = v != "0";
        }
        Ok(o)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub status: SolverStatus,
    pub objective: f64,
    pub dual_objective: f64,
    /// Smallest eigenvalue of each constraint block at the returned point.
    pub min_eigenvalues: Vec<f64>,
    pub block_names: Vec<String>,
    pub iterations: usize,
    pub primal_infeasibility: f64,
    pub dual_infeasibility: f64,
    pub relative_gap: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub x: Vec<f64>,
    pub report: SolverReport,
}

impl Solution {
    pub fn value(&self, problem: &SdpProblem, id: VarId) -> DMatrix<f64> {
        problem.value(id, &self.x)
    }
}

struct TermData {
    var: usize,
    coef: f64,
    repeat: usize,
    p: usize,
    l: SparseRows,
    r: Option<SparseRows>,
}

impl TermData {
    fn right(&self) -> &SparseRows {
        self.r.as_ref().unwrap_or(&self.l)
    }

    /// `(X, Y, weight)` such that the term is `sum weight * X^T V Y`.
    fn orientations(&self) -> Vec<(&SparseRows, &SparseRows, f64)> {
        match &self.r {
            None => vec![(&self.l, &self.l, self.coef)],
            Some(r) => vec![(&self.l, r, 0.5 * self.coef), (r, &self.l, 0.5 * self.coef)],
        }
    }

    /// Adds the term's value at `V` to `out`.
    fn apply(&self, v: &DMatrix<f64>, out: &mut DMatrix<f64>) {
        let n = self.l.ncols;
        let p = self.p;
        let right = self.right();
        let mut tmp = DMatrix::<f64>::zeros(n, n);
        let mut row = vec![0.0; n];
        for k in 0..self.repeat {
            for a in 0..p {
                let lrow = &self.l.rows[k * p + a];
                if lrow.is_empty() {
                    continue;
                }
                row.iter_mut().for_each(|x| *x = 0.0);
                let mut any = false;
                for b in 0..p {
                    let vab = v[(a, b)];
                    if vab == 0.0 {
                        continue;
                    }
                    for &(j, rv) in &right.rows[k * p + b] {
                        row[j] += vab * rv;
                        any = true;
                    }
                }
                if !any {
                    continue;
                }
                // tmp = (L^T V R)^T, columns are contiguous.
                for &(j, lv) in lrow {
                    let mut col = tmp.column_mut(j);
                    for (i, &x) in row.iter().enumerate() {
                        col[i] += lv * x;
                    }
                }
            }
        }
        let c = 0.5 * self.coef;
        for i in 0..n {
            for j in 0..=i {
                let s = c * (tmp[(i, j)] + tmp[(j, i)]);
                out[(i, j)] += s;
                if i != j {
                    out[(j, i)] += s;
                }
            }
        }
    }

    /// `W = sum_k R_k M L_k^T`, so that `<F_(a,b), M> = coef * tr(E_ab W)`.
    fn adjoint_core(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let p = self.p;
        let rm = self.right().mul_dense(m);
        let mut w = DMatrix::zeros(p, p);
        for k in 0..self.repeat {
            for b in 0..p {
                for &(j, lv) in &self.l.rows[k * p + b] {
                    for a in 0..p {
                        w[(a, b)] += rm[(k * p + a, j)] * lv;
                    }
                }
            }
        }
        w
    }
}

struct BlockData {
    name: String,
    n: usize,
    /// Positive factor applied to the whole block.
    scale: f64,
    f0: DMatrix<f64>,
    terms: Vec<TermData>,
}

struct Prepared<'a> {
    problem: &'a SdpProblem,
    blocks: Vec<BlockData>,
    elements: Vec<Vec<Element>>,
    c: Vec<f64>,
}

impl<'a> Prepared<'a> {
    fn new(problem: &'a SdpProblem) -> Self {
        let elements: Vec<Vec<Element>> = problem.vars.iter().map(|v| v.elements()).collect();
        let blocks = problem
            .blocks
            .iter()
            .map(|b| {
                let mut mx = b.expr.constant.amax();
                for t in &b.expr.terms {
                    let lm = max_abs_sparse(&t.l);
                    let rm = t.r.as_ref().map(max_abs_sparse).unwrap_or(lm);
                    mx = mx.max(t.coef.abs() * lm * rm);
                }
                let scale = if mx > 0.0 { 1.0 / mx } else { 1.0 };
                BlockData {
                    name: b.name.clone(),
                    n: b.expr.dim(),
                    scale,
                    f0: &b.expr.constant * scale,
                    terms: b
                        .expr
                        .terms
                        .iter()
                        .map(|t| TermData {
                            var: t.var.0,
                            coef: t.coef * scale,
                            repeat: t.repeat,
                            p: problem.vars[t.var.0].shape.dim(),
                            l: t.l.clone(),
                            r: t.r.clone(),
                        })
                        .collect(),
                }
            })
            .collect();
        Self {
            problem,
            blocks,
            elements,
            c: problem.objective.clone(),
        }
    }

    fn m(&self) -> usize {
        self.c.len()
    }

    /// `sum_i x_i F_{i,k}` for block `k`.
    fn apply_block(&self, k: usize, x: &[f64]) -> DMatrix<f64> {
        let b = &self.blocks[k];
        let mut out = DMatrix::zeros(b.n, b.n);
        for t in &b.terms {
            let v = self.problem.vars[t.var].value(x);
            t.apply(&v, &mut out);
        }
        out
    }

    /// Adds `<F_{i,k}, M>` to `out[i]` for every unknown.
    fn adjoint_block(&self, k: usize, m: &DMatrix<f64>, out: &mut [f64]) {
        for t in &self.blocks[k].terms {
            let w = t.adjoint_core(m);
            for e in &self.elements[t.var] {
                let v = if e.a == e.b {
                    w[(e.a, e.a)]
                } else {
                    w[(e.a, e.b)] + w[(e.b, e.a)]
                };
                out[e.index] += t.coef * v;
            }
        }
    }

    fn adjoint(&self, ms: &[DMatrix<f64>]) -> Vec<f64> {
        let mut out = vec![0.0; self.m()];
        for (k, m) in ms.iter().enumerate() {
            self.adjoint_block(k, m, &mut out);
        }
        out
    }

    /// Adds block `k`'s contribution to the Schur complement matrix.
    fn schur_block(
        &self,
        k: usize,
        sinv: &DMatrix<f64>,
        z: &DMatrix<f64>,
        bmat: &mut DMatrix<f64>,
    ) {
        let terms = &self.blocks[k].terms;
        // Y S^-1 and Y Z for Y in {L, R} of every term.
        let pre: Vec<Vec<(DMatrix<f64>, DMatrix<f64>)>> = terms
            .par_iter()
            .map(|t| {
                let mut v = vec![(t.l.mul_dense(sinv), t.l.mul_dense(z))];
                if let Some(r) = &t.r {
                    v.push((r.mul_dense(sinv), r.mul_dense(z)));
                }
                v
            })
            .collect();
        let which = |t: &TermData, y: &SparseRows| -> usize {
            if std::ptr::eq(y, &t.l) {
                0
            } else {
                1
            }
        };
        for ti in 0..terms.len() {
            for si in ti..terms.len() {
                let (t, s) = (&terms[ti], &terms[si]);
                let et = &self.elements[t.var];
                let es = &self.elements[s.var];
                let mut cmat = DMatrix::<f64>::zeros(et.len(), es.len());
                for (x, y, wt) in t.orientations() {
                    for (x2, y2, ws) in s.orientations() {
                        let g = x2.dense_mul_t(&pre[ti][which(t, y)].0);
                        let h = x.dense_mul_t(&pre[si][which(s, y2)].1);
                        accumulate_pair(&g, &h, t, s, et, es, wt * ws, &mut cmat);
                    }
                }
                for (i, ei) in et.iter().enumerate() {
                    for (j, ej) in es.iter().enumerate() {
                        let v = cmat[(i, j)];
                        bmat[(ei.index, ej.index)] += v;
                        if ti != si {
                            bmat[(ej.index, ei.index)] += v;
                        }
                    }
                }
            }
        }
    }
}

fn max_abs_sparse(s: &SparseRows) -> f64 {
    s.rows
        .iter()
        .flat_map(|r| r.iter().map(|&(_, v)| v.abs()))
        .fold(0.0, f64::max)
}

fn orient(e: &Element) -> ([(usize, usize); 2], usize) {
    if e.a == e.b {
        ([(e.a, e.a), (e.a, e.a)], 1)
    } else {
        ([(e.a, e.b), (e.b, e.a)], 2)
    }
}

/// Adds `w * tr(E_i G E_j H)` summed over repeats into `cmat[i, j]`, where
/// `G = Y_t S^-1 X_s^T` and `H = Y_s Z X_t^T`.
#[allow(clippy::too_many_arguments)]
fn accumulate_pair(
    g: &DMatrix<f64>,
    h: &DMatrix<f64>,
    t: &TermData,
    s: &TermData,
    et: &[Element],
    es: &[Element],
    w: f64,
    cmat: &mut DMatrix<f64>,
) {
    let (pt, ps) = (t.p, s.p);
    if t.repeat == 1 && s.repeat == 1 {
        let cols: Vec<Vec<f64>> = es
            .par_iter()
            .map(|ej| {
                let (oj, nj) = orient(ej);
                et.iter()
                    .map(|ei| {
                        let (oi, ni) = orient(ei);
                        let mut v = 0.0;
                        for &(al, be) in &oi[..ni] {
                            for &(ga, de) in &oj[..nj] {
                                v += g[(be, ga)] * h[(de, al)];
                            }
                        }
                        v
                    })
                    .collect()
            })
            .collect();
        for (j, col) in cols.iter().enumerate() {
            for (i, v) in col.iter().enumerate() {
                cmat[(i, j)] += w * v;
            }
        }
        return;
    }
    // Repeated terms: contract over the repeat indices once per index pair.
    let mut idx_t = vec![usize::MAX; pt * pt];
    let mut pairs_t = Vec::new();
    for e in et {
        let (o, n) = orient(e);
        for &(al, be) in &o[..n] {
            if idx_t[al * pt + be] == usize::MAX {
                idx_t[al * pt + be] = pairs_t.len();
                pairs_t.push((al, be));
            }
        }
    }
    let mut idx_s = vec![usize::MAX; ps * ps];
    let mut pairs_s = Vec::new();
    for e in es {
        let (o, n) = orient(e);
        for &(ga, de) in &o[..n] {
            if idx_s[ga * ps + de] == usize::MAX {
                idx_s[ga * ps + de] = pairs_s.len();
                pairs_s.push((ga, de));
            }
        }
    }
    let (kt, ks) = (t.repeat, s.repeat);
    let pm: Vec<Vec<f64>> = pairs_t
        .par_iter()
        .map(|&(al, be)| {
            pairs_s
                .iter()
                .map(|&(ga, de)| {
                    let mut v = 0.0;
                    for k in 0..kt {
                        for k2 in 0..ks {
                            v += g[(k * pt + be, k2 * ps + ga)] * h[(k2 * ps + de, k * pt + al)];
                        }
                    }
                    v
                })
                .collect()
        })
        .collect();
    for (i, ei) in et.iter().enumerate() {
        let (oi, ni) = orient(ei);
        for (j, ej) in es.iter().enumerate() {
            let (oj, nj) = orient(ej);
            let mut v = 0.0;
            for &(al, be) in &oi[..ni] {
                for &(ga, de) in &oj[..nj] {
                    v += pm[idx_t[al * pt + be]][idx_s[ga * ps + de]];
                }
            }
            cmat[(i, j)] += w * v;
        }
    }
}

fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.dot(b)
}

/// Largest `alpha <= 1` (times the step fraction) keeping `X + alpha dX` in the cone,
/// given the Cholesky factor of `X`.
fn step_length(
    chol: &Cholesky<f64, Dyn>,
    x: &DMatrix<f64>,
    dx: &DMatrix<f64>,
    opts: &SolverOptions,
) -> f64 {
    let n = x.nrows();
    if n == 0 {
        return 1.0;
    }
    let exact = n <= opts.dense_step_cutoff;
    let lam = if exact {
        let l = chol.l();
        let y = l
            .solve_lower_triangular(dx)
            .expect("triangular factor is nonsingular");
        let w = l
            .solve_lower_triangular(&y.transpose())
            .expect("triangular factor is nonsingular");
        SymmetricEigen::new(sym(&w)).eigenvalues.min()
    } else {
        let l = chol.l();
        let lt = l.transpose();
        lanczos_min(n, 300.min(n), |v| {
            let a = lt
                .solve_upper_triangular(&nalgebra::DVector::from_column_slice(v))
                .expect("triangular factor is nonsingular");
            let b = dx * a;
            l.solve_lower_triangular(&b)
                .expect("triangular factor is nonsingular")
                .as_slice()
                .to_vec()
        })
    };
    let mut alpha = if lam < 0.0 {
        (opts.step_fraction / -lam).min(1.0)
    } else {
        1.0
    };
    if exact {
        return alpha;
    }
    // Lanczos overestimates the smallest eigenvalue, so confirm by factorization.
    for tries in 0..60 {
        let trial = x + dx * alpha;
        if trial.cholesky().is_some() {
            // A rejected estimate may leave the accepted point close to the boundary.
            return if tries == 0 { alpha } else { alpha * 0.8 };
        }
        alpha *= 0.8;
    }
    0.0
}

/// Smallest Ritz value of a symmetric operator after `k` Lanczos steps with
/// full reorthogonalization.
pub(crate) fn lanczos_min(n: usize, k: usize, op: impl Fn(&[f64]) -> Vec<f64>) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut q: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
    normalize(&mut q);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut alpha = Vec::with_capacity(k);
    let mut beta: Vec<f64> = Vec::with_capacity(k);
    // Ritz value minus its residual norm: a lower estimate once converged.
    let ritz = |alpha: &[f64], beta: &[f64], next: f64| {
        let m = alpha.len();
        let mut t = DMatrix::zeros(m, m);
        for i in 0..m {
            t[(i, i)] = alpha[i];
            if i + 1 < m {
                t[(i, i + 1)] = beta[i];
                t[(i + 1, i)] = beta[i];
            }
        }
        let e = SymmetricEigen::new(t);
        let i = e.eigenvalues.imin();
        let theta = e.eigenvalues[i];
        (theta, (next * e.eigenvectors[(m - 1, i)]).abs())
    };
    for step in 0..k {
        let mut w = op(&q);
        let a: f64 = w.iter().zip(&q).map(|(x, y)| x * y).sum();
        alpha.push(a);
        basis.push(q.clone());
        for _ in 0..2 {
            for b in &basis {
                let d: f64 = w.iter().zip(b).map(|(x, y)| x * y).sum();
                w.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
            }
        }
        let nb = norm(&w);
        if nb < 1e-12 * (a.abs() + 1.0) || basis.len() == n {
            return ritz(&alpha, &beta, 0.0).0;
        }
        if step % 10 == 9 {
            let (theta, res) = ritz(&alpha, &beta, nb);
            if res <= 1e-3 * theta.abs().max(1e-12) {
                return theta - res;
            }
        }
        beta.push(nb);
        q = w.into_iter().map(|x| x / nb).collect();
    }
    let last = beta.pop().unwrap_or(0.0);
    let (theta, res) = ritz(&alpha, &beta, last);
    theta - res
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn normalize(v: &mut [f64]) {
    let n = norm(v);
    v.iter_mut().for_each(|x| *x /= n);
}

fn factor_schur(b: &DMatrix<f64>) -> Option<Box<dyn Fn(&[f64]) -> Vec<f64>>> {
    let m = b.nrows();
    let diag_max = (0..m)
        .map(|i| b[(i, i)].abs())
        .fold(0.0, f64::max)
        .max(1e-300);
    for reg in [0.0, 1e-14, 1e-12, 1e-10] {
        let mut bb = b.clone();
        for i in 0..m {
            bb[(i, i)] += reg * diag_max;
        }
        if let Some(c) = bb.cholesky() {
            return Some(Box::new(move |r: &[f64]| {
                c.solve(&nalgebra::DVector::from_column_slice(r))
                    .as_slice()
                    .to_vec()
            }));
        }
    }
    let lu = b.clone().lu();
    if lu.is_invertible() {
        return Some(Box::new(move |r: &[f64]| {
            lu.solve(&nalgebra::DVector::from_column_slice(r))
                .map(|v| v.as_slice().to_vec())
                .unwrap_or_else(|| vec![0.0; r.len()])
        }));
    }
    None
}

/// Solves the semidefinite program.
pub fn solve(problem: &SdpProblem, opts: &SolverOptions) -> Result<Solution> {
    let start = Instant::now();
    let prep = Prepared::new(problem);
    let nb = prep.blocks.len();
    let m = prep.m();
    if nb == 0 {
        return Err(Error::Solver("problem has no constraint blocks".into()));
    }
    for (i, v) in prep.c.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::Solver(format!(
                "objective coefficient {i} is not finite"
            )));
        }
    }
    let c_norm = prep.c.iter().map(|v| v * v).sum::<f64>().sqrt();
    let f0_norms: Vec<f64> = prep.blocks.iter().map(|b| b.f0.norm()).collect();

    let omega = 10.0_f64;
    let mut x = vec![0.0; m];
    let mut s: Vec<DMatrix<f64>> = prep
        .blocks
        .iter()
        .map(|b| DMatrix::identity(b.n, b.n) * omega.max((b.n as f64).sqrt()))
        .collect();
    let mut z: Vec<DMatrix<f64>> = s.clone();
    let total_n: usize = prep.blocks.iter().map(|b| b.n).sum::<usize>().max(1);

    let mut status = SolverStatus::NumericalTrouble;
    let mut iterations = 0;
    let (mut pinf, mut dinf, mut rel_gap) = (f64::INFINITY, f64::INFINITY, f64::INFINITY);
    let mut stalls = 0;
    let mut best_merit = f64::INFINITY;
    let mut since_best = 0;

    for it in 0..=opts.max_iter {
        iterations = it;
        let ax: Vec<DMatrix<f64>> = (0..nb).map(|k| prep.apply_block(k, &x)).collect();
        let rp: Vec<DMatrix<f64>> = (0..nb)
            .map(|k| &prep.blocks[k].f0 + &ax[k] - &s[k])
            .collect();
        let atz = prep.adjoint(&z);
        let rd: Vec<f64> = prep.c.iter().zip(&atz).map(|(c, a)| c - a).collect();
        let pobj: f64 = prep.c.iter().zip(&x).map(|(c, v)| c * v).sum();
        let f0z: f64 = (0..nb).map(|k| inner(&prep.blocks[k].f0, &z[k])).sum();
        let dobj = -f0z;
        let sz: f64 = (0..nb).map(|k| inner(&s[k], &z[k])).sum();
        let mu = sz / total_n as f64;

        pinf = (0..nb)
            .map(|k| rp[k].norm() / (1.0 + f0_norms[k]))
            .fold(0.0, f64::max);
        dinf = rd.iter().map(|v| v * v).sum::<f64>().sqrt() / (1.0 + c_norm);
        rel_gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
        let compl = sz / (1.0 + pobj.abs() + dobj.abs());
        if opts.verbose {
            eprintln!(
                "it {it:3} pobj {pobj:+.9e} dobj {dobj:+.9e} pinf {pinf:.2e} dinf {dinf:.2e} gap {rel_gap:.2e} mu {mu:.2e}"
            );
        }
        if pinf <= opts.feas_tol
            && dinf <= opts.feas_tol
            && rel_gap <= opts.gap_tol
            && compl <= opts.gap_tol
        {
            status = SolverStatus::Optimal;
            break;
        }
        // Farkas certificate of primal infeasibility.
        if f0z < 0.0 {
            let amax = atz.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
            if amax <= 1e-9 * -f0z {
                status = SolverStatus::Infeasible;
                break;
            }
        }
        if it == opts.max_iter || !mu.is_finite() {
            break;
        }
        // Give up once complementarity is exhausted or progress has flattened.
        let merit = pinf.max(dinf).max(rel_gap);
        if merit < 0.99 * best_merit {
            best_merit = merit;
            since_best = 0;
        } else {
            since_best += 1;
        }
        let patience = if rel_gap < 1e-6 { 5 } else { 15 };
        if since_best >= patience || compl < 1e-14 {
            break;
        }

        let chol_s: Vec<Cholesky<f64, Dyn>> =
            match s.iter().map(|sk| sk.clone().cholesky()).collect() {
                Some(v) => v,
                None => break,
            };
        let chol_z: Vec<Cholesky<f64, Dyn>> =
            match z.iter().map(|zk| zk.clone().cholesky()).collect() {
                Some(v) => v,
                None => break,
            };
        let sinv: Vec<DMatrix<f64>> = chol_s.iter().map(|c| sym(&c.inverse())).collect();

        let t_schur = Instant::now();
        let mut bmat = DMatrix::<f64>::zeros(m, m);
        for k in 0..nb {
            prep.schur_block(k, &sinv[k], &z[k], &mut bmat);
        }
        let bmat = sym(&bmat);
        let solve_b = match factor_schur(&bmat) {
            Some(f) => f,
            None => break,
        };

        let rp_z: Vec<DMatrix<f64>> = (0..nb).map(|k| &sinv[k] * &rp[k] * &z[k]).collect();
        let direction = |mu_t: f64, corr: Option<&[DMatrix<f64>]>| {
            let rhs_mats: Vec<DMatrix<f64>> = (0..nb)
                .map(|k| {
                    let mut t = &sinv[k] * mu_t - &z[k] - &rp_z[k];
                    if let Some(c) = corr {
                        t -= &c[k];
                    }
                    sym(&t)
                })
                .collect();
            let a = prep.adjoint(&rhs_mats);
            let rhs: Vec<f64> = a.iter().zip(&rd).map(|(a, r)| a - r).collect();
            let mut dx = solve_b(&rhs);
            // Iterative refinement against the unregularized Schur matrix.
            for _ in 0..2 {
                let bx = &bmat * nalgebra::DVector::from_column_slice(&dx);
                let res: Vec<f64> = rhs.iter().zip(bx.iter()).map(|(r, b)| r - b).collect();
                for (d, c) in dx.iter_mut().zip(solve_b(&res)) {
                    *d += c;
                }
            }
            let ds: Vec<DMatrix<f64>> =
                (0..nb).map(|k| prep.apply_block(k, &dx) + &rp[k]).collect();
            let dz: Vec<DMatrix<f64>> = (0..nb)
                .map(|k| {
                    let mut t = &sinv[k] * mu_t - &z[k] - &sinv[k] * &ds[k] * &z[k];
                    if let Some(c) = corr {
                        t -= &c[k];
                    }
                    sym(&t)
                })
                .collect();
            (dx, ds, dz)
        };
        let steps = |ds: &[DMatrix<f64>], dz: &[DMatrix<f64>]| {
            let ap = (0..nb)
                .map(|k| step_length(&chol_s[k], &s[k], &ds[k], opts))
                .fold(1.0, f64::min);
            let ad = (0..nb)
                .map(|k| step_length(&chol_z[k], &z[k], &dz[k], opts))
                .fold(1.0, f64::min);
            (ap, ad)
        };

        let t_dir = Instant::now();
        if opts.verbose {
            eprintln!(
                "       schur+factor {:.2}s",
                t_schur.elapsed().as_secs_f64()
            );
        }
        // Predictor.
        let (_, ds_a, dz_a) = direction(0.0, None);
        let (ap, ad) = steps(&ds_a, &dz_a);
        let sz_a: f64 = (0..nb)
            .map(|k| inner(&(&s[k] + &ds_a[k] * ap), &(&z[k] + &dz_a[k] * ad)))
            .sum();
        // Keep centering while feasibility lags behind the gap.
        let lagging = pinf > 1e-3 || pinf.max(dinf) > 10.0 * rel_gap.max(opts.feas_tol);
        let sigma = (sz_a / sz)
            .clamp(0.0, 1.0)
            .powi(3)
            .max(if lagging { 0.1 } else { 0.0 });
        // Corrector.
        let corr: Vec<DMatrix<f64>> = (0..nb)
            .map(|k| sym(&(&sinv[k] * &ds_a[k] * &dz_a[k])))
            .collect();
        let (dx, ds, dz) = direction(sigma * mu, Some(&corr));
        let (ap, ad) = steps(&ds, &dz);
        if opts.verbose {
            let per: Vec<String> = (0..nb)
                .map(|k| {
                    format!(
                        "{}:{}:{:.1e}/{:.1e}",
                        prep.blocks[k].name,
                        prep.blocks[k].n,
                        step_length(&chol_s[k], &s[k], &ds[k], opts),
                        step_length(&chol_z[k], &z[k], &dz[k], opts)
                    )
                })
                .collect();
            eprintln!("       {}", per.join(" "));
            eprintln!(
                "       sigma {sigma:.2e} alpha_p {ap:.3e} alpha_d {ad:.3e} rest {:.2}s",
                t_dir.elapsed().as_secs_f64()
            );
        }
        if ap.max(ad) < 1e-10 {
            stalls += 1;
            if stalls >= 3 {
                break;
            }
        }
        for (xi, d) in x.iter_mut().zip(&dx) {
            *xi += ap * d;
        }
        for k in 0..nb {
            s[k] += &ds[k] * ap;
            z[k] += &dz[k] * ad;
            s[k] = sym(&s[k]);
            z[k] = sym(&z[k]);
        }
    }

    let min_eigenvalues: Vec<f64> = (0..nb)
        .map(|k| {
            let v = problem.evaluate_block(k, &x);
            if v.nrows() == 0 {
                0.0
            } else {
                SymmetricEigen::new(v).eigenvalues.min()
            }
        })
        .collect();
    let pobj = problem.objective_value(&x);
    let dobj = -(0..nb)
        .map(|k| inner(&prep.blocks[k].f0, &z[k]) / prep.blocks[k].scale)
        .sum::<f64>();
    Ok(Solution {
        x,
        report: SolverReport {
            status,
            objective: pobj,
            dual_objective: dobj,
            min_eigenvalues,
            block_names: prep.blocks.iter().map(|b| b.name.clone()).collect(),
            iterations,
            primal_infeasibility: pinf,
            dual_infeasibility: dinf,
            relative_gap: rel_gap,
            wall_time_s: start.elapsed().as_secs_f64(),
        },
    })
}

/// Minimizes the scalar variable `var` by bisection over feasibility problems,
/// for use when the objective cannot be handed to the solver directly.
///
/// Returns the smallest feasible value found within `[lo, hi]` to relative
/// accuracy `rel_tol`, together with the solution at that value.
pub fn solve_bisection(
    problem: &SdpProblem,
    var: VarId,
    lo: f64,
    hi: f64,
    rel_tol: f64,
    opts: &SolverOptions,
) -> Result<(f64, Solution)> {
    if problem.var(var).shape.dim() != 1 {
        return Err(Error::Solver("bisection needs a scalar variable".into()));
    }
    let feasible = |v: f64| -> Result<Option<Solution>> {
        let mut fixed = problem.substitute(var, &DMatrix::from_element(1, 1, v));
        fixed.objective.iter_mut().for_each(|c| *c = 0.0);
        let sol = solve(&fixed, opts)?;
        let ok = sol.report.status == SolverStatus::Optimal
            && sol
                .report
                .min_eigenvalues
                .iter()
                .zip(&fixed.blocks)
                .all(|(l, b)| *l >= -opts.feas_tol * b.expr.constant.amax().max(1.0));
        Ok(ok.then_some(sol))
    };
    let mut best =
        feasible(hi)?.ok_or_else(|| Error::Solver(format!("infeasible at upper bracket {hi}")))?;
    let (mut lo, mut hi) = (lo, hi);
    while hi - lo > rel_tol * hi.abs().max(1e-12) {
        let mid = 0.5 * (lo + hi);
        match feasible(mid)? {
            Some(sol) => {
                hi = mid;
                best = sol;
            }
            None => lo = mid,
        }
    }
    // Re-insert the fixed variable into the assignment.
    let mut x = vec![0.0; problem.num_unknowns()];
    let fixed_var = problem.var(var);
    let mut cursor = 0;
    for v in &problem.vars {
        let cnt = v.shape.count();
        if v.offset == fixed_var.offset {
            x[v.offset] = hi;
        } else {
            x[v.offset..v.offset + cnt].copy_from_slice(&best.x[cursor..cursor + cnt]);
            cursor += cnt;
        }
    }
    best.x = x;
    best.report.objective = problem.objective_value(&best.x);
    Ok((hi, best))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lmi::problem::{AffineSym, Term, VarShape};

    fn scalar_lmi(c0: f64) -> (SdpProblem, VarId) {
        let mut p = SdpProblem::new();
        let g = p.add_var("gamma_sq", VarShape::Diagonal(1));
        let mut e = AffineSym::constant(DMatrix::from_element(1, 1, c0));
        e.push(Term::new(g, 1.0, &DMatrix::identity(1, 1), None));
        p.add_block("lmi", e).unwrap();
        p.minimize_trace(g, 1.0);
        (p, g)
    }

    #[test]
    fn scalar_lower_bound() {
        let (p, g) = scalar_lmi(-4.0);
        let sol = solve(&p, &SolverOptions::default()).unwrap();
        assert_eq!(sol.report.status, SolverStatus::Optimal);
        assert!((sol.value(&p, g)[(0, 0)] - 4.0).abs() < 1e-7);
    }

    #[test]
    fn negative_identity_is_infeasible() {
        let mut p = SdpProblem::new();
        p.add_block("neg", AffineSym::constant(-DMatrix::<f64>::identity(3, 3)))
            .unwrap();
        let sol = solve(&p, &SolverOptions::default()).unwrap();
        assert_eq!(sol.report.status, SolverStatus::Infeasible);
    }

    #[test]
    fn matrix_variable_with_cross_terms() {
        // minimize tr(X) s.t. [[X, A], [A^T, I]] >= 0, optimum tr(A A^T).
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -0.5, 0.3]);
        let mut p = SdpProblem::new();
        let xv = p.add_var("X", VarShape::Symmetric(2));
        let mut c = DMatrix::zeros(4, 4);
        c.view_mut((0, 2), (2, 2)).copy_from(&a);
        c.view_mut((2, 0), (2, 2)).copy_from(&a.transpose());
        c.view_mut((2, 2), (2, 2)).fill_with_identity();
        let mut e = AffineSym::constant(c);
        let mut sel = DMatrix::zeros(2, 4);
        sel.view_mut((0, 0), (2, 2)).fill_with_identity();
        e.push(Term::new(xv, 1.0, &sel, None));
        p.add_block("schur", e).unwrap();
        p.minimize_trace(xv, 1.0);
        let sol = solve(&p, &SolverOptions::default()).unwrap();
        assert_eq!(sol.report.status, SolverStatus::Optimal);
        let want = (&a * a.transpose()).trace();
        assert!(
            (sol.report.objective - want).abs() < 1e-7,
            "{} vs {want}",
            sol.report.objective
        );
    }

    #[test]
    fn bisection_matches_direct_minimum() {
        let (p, g) = scalar_lmi(-2.5);
        let (v, sol) = solve_bisection(&p, g, 0.0, 10.0, 1e-8, &SolverOptions::default()).unwrap();
        assert!((v - 2.5).abs() < 1e-6);
        assert!((sol.x[0] - v).abs() < 1e-15);
    }

    #[test]
    fn lanczos_finds_smallest_eigenvalue() {
        let n = 50;
        let d: Vec<f64> = (0..n).map(|i| i as f64 - 3.5).collect();
        let v = lanczos_min(n, n, |x| x.iter().zip(&d).map(|(a, b)| a * b).collect());
        assert!(v <= -3.5 + 1e-12 && v > -3.5 * 1.01, "{v}");
    }
}
