//! Container for linear matrix inequalities in structured matrix variables.
//!
//! A problem minimizes `c^T x` subject to `F_k(x) = F0_k + sum_i x_i F_{i,k} >= 0`
//! for every block `k`. The scalars `x` are the free entries of matrix
//! variables. Each block is stored as a constant plus a list of terms
//!
//! ```text
//! coef * sum_{k < K} sym(L_k^T V R_k)      (or coef * sum_k L_k^T V L_k)
//! ```
//!
//! where `V` is a variable and `L_k`, `R_k` are consecutive `p`-row slices of
//! sparse matrices. This keeps the congruence structure that the solver
//! exploits when forming its Schur complement.

use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Shape of a matrix variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarShape {
    /// Dense symmetric `p x p` matrix with `p (p + 1) / 2` unknowns.
    Symmetric(usize),
    /// Diagonal `p x p` matrix with `p` unknowns. A scalar is `Diagonal(1)`.
    Diagonal(usize),
}

impl VarShape {
    pub fn dim(self) -> usize {
        match self {
            VarShape::Symmetric(p) | VarShape::Diagonal(p) => p,
        }
    }

    pub fn count(self) -> usize {
        match self {
            VarShape::Symmetric(p) => p * (p + 1) / 2,
            VarShape::Diagonal(p) => p,
        }
    }
}

/// Handle of a variable within its problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VarId(pub usize);

#[derive(Debug, Clone)]
pub struct Variable {
    pub name: String,
    pub shape: VarShape,
    /// Position of the first unknown in the problem's scalar vector.
    pub offset: usize,
}

/// One scalar unknown of a matrix variable: the entry `(a, b)` with `a <= b`.
#[derive(Debug, Clone, Copy)]
pub struct Element {
    pub index: usize,
    pub a: usize,
    pub b: usize,
}

impl Variable {
    /// Enumerates the unknowns in storage order.
    pub fn elements(&self) -> Vec<Element> {
        let mut out = Vec::with_capacity(self.shape.count());
        match self.shape {
            VarShape::Symmetric(p) => {
                let mut k = self.offset;
                for a in 0..p {
                    for b in a..p {
                        out.push(Element { index: k, a, b });
                        k += 1;
                    }
                }
            }
            VarShape::Diagonal(p) => {
                for a in 0..p {
                    out.push(Element {
                        index: self.offset + a,
                        a,
                        b: a,
                    });
                }
            }
        }
        out
    }

    /// Matrix value of the variable under the assignment `x`.
    pub fn value(&self, x: &[f64]) -> DMatrix<f64> {
        let p = self.shape.dim();
        let mut m = DMatrix::zeros(p, p);
        for e in self.elements() {
            m[(e.a, e.b)] = x[e.index];
            m[(e.b, e.a)] = x[e.index];
        }
        m
    }

    /// Writes a matrix value into the assignment `x`.
    pub fn store(&self, value: &DMatrix<f64>, x: &mut [f64]) {
        for e in self.elements() {
            x[e.index] = 0.5 * (value[(e.a, e.b)] + value[(e.b, e.a)]);
        }
    }
}

/// Row-major sparse matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRows {
    pub ncols: usize,
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl SparseRows {
    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let rows = (0..m.nrows())
            .map(|i| {
                (0..m.ncols())
                    .filter_map(|j| {
                        let v = m[(i, j)];
                        (v != 0.0).then_some((j, v))
                    })
                    .collect()
            })
            .collect();
        Self {
            ncols: m.ncols(),
            rows,
        }
    }

    pub fn nrows(&self) -> usize {
        self.rows.len()
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(|r| r.len()).sum()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows(), self.ncols);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                m[(i, j)] += v;
            }
        }
        m
    }

    /// `self * M` for a dense `M`.
    pub fn mul_dense(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(self.ncols, m.nrows());
        let mut out = DMatrix::zeros(self.nrows(), m.ncols());
        for c in 0..m.ncols() {
            let src = m.column(c);
            let mut dst = out.column_mut(c);
            for (i, row) in self.rows.iter().enumerate() {
                dst[i] = row.iter().map(|&(j, v)| v * src[j]).sum();
            }
        }
        out
    }

    /// `M * self^T` for a dense `M`.
    pub fn dense_mul_t(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(self.ncols, m.ncols());
        let mut out = DMatrix::zeros(m.nrows(), self.nrows());
        for (c, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                let src = m.column(j);
                let mut dst = out.column_mut(c);
                dst.axpy(v, &src, 1.0);
            }
        }
        out
    }
}

/// `coef * sum_k sym(L_k^T V R_k)`; `r == None` means `coef * sum_k L_k^T V L_k`.
#[derive(Debug, Clone)]
pub struct Term {
    pub var: VarId,
    pub coef: f64,
    /// Number of stacked slices `K`; `l` has `K p` rows.
    pub repeat: usize,
    pub l: SparseRows,
    pub r: Option<SparseRows>,
}

impl Term {
    pub fn new(var: VarId, coef: f64, l: &DMatrix<f64>, r: Option<&DMatrix<f64>>) -> Self {
        Self {
            var,
            coef,
            repeat: 1,
            l: SparseRows::from_dense(l),
            r: r.map(SparseRows::from_dense),
        }
    }

    pub fn repeated(
        var: VarId,
        coef: f64,
        repeat: usize,
        l: SparseRows,
        r: Option<SparseRows>,
    ) -> Self {
        Self {
            var,
            coef,
            repeat,
            l,
            r,
        }
    }

    pub fn dim(&self) -> usize {
        self.l.ncols
    }

    /// Dense value for the variable value `v`.
    pub fn evaluate(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        let p = v.nrows();
        let n = self.dim();
        let l = self.l.to_dense();
        let mut out = DMatrix::zeros(n, n);
        match &self.r {
            None => {
                for k in 0..self.repeat {
                    let lk = l.rows(k * p, p);
                    out += lk.transpose() * v * lk;
                }
            }
            Some(r) => {
                let r = r.to_dense();
                for k in 0..self.repeat {
                    let lk = l.rows(k * p, p);
                    let rk = r.rows(k * p, p);
                    let m = lk.transpose() * v * rk;
                    out += 0.5 * (&m + m.transpose());
                }
            }
        }
        out * self.coef
    }

    /// Term under the congruence `O^T (.) O`.
    pub fn congruence(&self, o: &DMatrix<f64>) -> Term {
        let l = SparseRows::from_dense(&(self.l.to_dense() * o));
        let r = self
            .r
            .as_ref()
            .map(|r| SparseRows::from_dense(&(r.to_dense() * o)));
        Term {
            var: self.var,
            coef: self.coef,
            repeat: self.repeat,
            l,
            r,
        }
    }
}

/// An affine symmetric matrix expression `constant + sum terms`.
#[derive(Debug, Clone)]
pub struct AffineSym {
    pub constant: DMatrix<f64>,
    pub terms: Vec<Term>,
}

impl AffineSym {
    pub fn zeros(n: usize) -> Self {
        Self {
            constant: DMatrix::zeros(n, n),
            terms: Vec::new(),
        }
    }

    pub fn constant(m: DMatrix<f64>) -> Self {
        Self {
            constant: m,
            terms: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.constant.nrows()
    }

    pub fn push(&mut self, term: Term) {
        assert_eq!(term.dim(), self.dim(), "term dimension mismatch");
        self.terms.push(term);
    }

    /// `O^T self O`.
    pub fn congruence(&self, o: &DMatrix<f64>) -> AffineSym {
        AffineSym {
            constant: o.transpose() * &self.constant * o,
            terms: self.terms.iter().map(|t| t.congruence(o)).collect(),
        }
    }

    pub fn add(&mut self, other: &AffineSym) {
        assert_eq!(self.dim(), other.dim());
        self.constant += &other.constant;
        self.terms.extend(other.terms.iter().cloned());
    }

    /// Numeric value given a lookup of variable values.
    pub fn evaluate(&self, value: &dyn Fn(VarId) -> DMatrix<f64>) -> DMatrix<f64> {
        let mut out = self.constant.clone();
        for t in &self.terms {
            out += t.evaluate(&value(t.var));
        }
        out
    }
}

/// A named constraint `expr >= 0`.
#[derive(Debug, Clone)]
pub struct LmiBlock {
    pub name: String,
    pub expr: AffineSym,
}

/// A semidefinite program in matrix variables.
#[derive(Debug, Clone, Default)]
pub struct SdpProblem {
    pub vars: Vec<Variable>,
    pub blocks: Vec<LmiBlock>,
    pub objective: Vec<f64>,
}

impl SdpProblem {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of scalar unknowns.
    pub fn num_unknowns(&self) -> usize {
        self.objective.len()
    }

    pub fn add_var(&mut self, name: &str, shape: VarShape) -> VarId {
        let offset = self.objective.len();
        self.vars.push(Variable {
            name: name.to_string(),
            shape,
            offset,
        });
        self.objective
            .extend(std::iter::repeat_n(0.0, shape.count()));
        VarId(self.vars.len() - 1)
    }

    pub fn var(&self, id: VarId) -> &Variable {
        &self.vars[id.0]
    }

    pub fn find_var(&self, name: &str) -> Option<VarId> {
        self.vars.iter().position(|v| v.name == name).map(VarId)
    }

    /// Adds `coef * trace(V)` to the objective.
    pub fn minimize_trace(&mut self, id: VarId, coef: f64) {
        for e in self.vars[id.0].elements() {
            if e.a == e.b {
                self.objective[e.index] += coef;
            }
        }
    }

    pub fn add_block(&mut self, name: &str, expr: AffineSym) -> Result<()> {
        for t in &expr.terms {
            let v = self.vars.get(t.var.0).ok_or_else(|| {
                Error::Dimension(format!("block {name} refers to an unknown variable"))
            })?;
            let p = v.shape.dim();
            let rows_ok = t.l.nrows() == t.repeat * p
                && t.r
                    .as_ref()
                    .is_none_or(|r| r.nrows() == t.repeat * p && r.ncols == t.l.ncols);
            if !rows_ok {
                return Err(Error::Dimension(format!(
                    "block {name}: term for {} has inconsistent factor shapes",
                    v.name
                )));
            }
        }
        if !is_symmetric(&expr.constant, 1e-12) {
            return Err(Error::Dimension(format!(
                "block {name}: constant part is not symmetric"
            )));
        }
        self.blocks.push(LmiBlock {
            name: name.to_string(),
            expr,
        });
        Ok(())
    }

    /// Convenience: the constraint `V >= 0` (or `-V >= 0` when `sign < 0`).
    pub fn add_psd(&mut self, name: &str, id: VarId, sign: f64) -> Result<()> {
        let p = self.vars[id.0].shape.dim();
        let mut e = AffineSym::zeros(p);
        e.push(Term::new(id, sign, &DMatrix::identity(p, p), None));
        self.add_block(name, e)
    }

    pub fn value(&self, id: VarId, x: &[f64]) -> DMatrix<f64> {
        self.vars[id.0].value(x)
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Value of block `k` at `x`.
    pub fn evaluate_block(&self, k: usize, x: &[f64]) -> DMatrix<f64> {
        self.blocks[k]
            .expr
            .evaluate(&|id: VarId| self.vars[id.0].value(x))
    }

    /// Replaces a variable by a fixed value; its unknowns are removed.
    pub fn substitute(&self, id: VarId, value: &DMatrix<f64>) -> SdpProblem {
        let mut out = SdpProblem::new();
        let mut remap = vec![None; self.vars.len()];
        for (k, v) in self.vars.iter().enumerate() {
            if k != id.0 {
                let nid = out.add_var(&v.name, v.shape);
                for (e_old, e_new) in v.elements().iter().zip(out.vars[nid.0].elements()) {
                    out.objective[e_new.index] = self.objective[e_old.index];
                }
                remap[k] = Some(nid);
            }
        }
        for b in &self.blocks {
            let mut expr = AffineSym::constant(b.expr.constant.clone());
            for t in &b.expr.terms {
                match remap[t.var.0] {
                    Some(nid) => {
                        let mut t2 = t.clone();
                        t2.var = nid;
                        expr.terms.push(t2);
                    }
                    None => expr.constant += t.evaluate(value),
                }
            }
            out.blocks.push(LmiBlock {
                name: b.name.clone(),
                expr,
            });
        }
        out
    }

    /// Explicit coefficient matrices `F_{i,k}` of one unknown in block `k`.
    pub fn coefficient_matrix(&self, k: usize, index: usize) -> DMatrix<f64> {
        let (vid, el) = self.locate(index);
        let v = &self.vars[vid];
        let p = v.shape.dim();
        let mut e = DMatrix::zeros(p, p);
        e[(el.a, el.b)] = 1.0;
        e[(el.b, el.a)] = 1.0;
        let block = &self.blocks[k].expr;
        let mut out = DMatrix::zeros(block.dim(), block.dim());
        for t in block.terms.iter().filter(|t| t.var.0 == vid) {
            out += t.evaluate(&e);
        }
        out
    }

    fn locate(&self, index: usize) -> (usize, Element) {
        for (k, v) in self.vars.iter().enumerate() {
            if index >= v.offset && index < v.offset + v.shape.count() {
                let el = v.elements()[index - v.offset];
                return (k, el);
            }
        }
        panic!("unknown index {index} out of range");
    }

    /// Exports the problem in SDPA sparse format.
    ///
    /// SDPA minimizes `c^T x` subject to `sum_i x_i F_i - F_0 >= 0`, so the
    /// exported `F_0` is the negated constant part.
    pub fn to_sdpa(&self) -> String {
        let m = self.num_unknowns();
        let mut s = String::new();
        let _ = writeln!(
            s,
            "\"lipcert SDP: {} unknowns, {} blocks",
            m,
            self.blocks.len()
        );
        let _ = writeln!(s, "{m}");
        let _ = writeln!(s, "{}", self.blocks.len());
        let sizes: Vec<String> = self
            .blocks
            .iter()
            .map(|b| b.expr.dim().to_string())
            .collect();
        let _ = writeln!(s, "{}", sizes.join(" "));
        let c: Vec<String> = self.objective.iter().map(|v| format!("{v:e}")).collect();
        let _ = writeln!(s, "{}", c.join(" "));
        for (k, b) in self.blocks.iter().enumerate() {
            let f0 = &b.expr.constant;
            for i in 0..f0.nrows() {
                for j in i..f0.ncols() {
                    if f0[(i, j)] != 0.0 {
                        let _ = writeln!(s, "0 {} {} {} {:e}", k + 1, i + 1, j + 1, -f0[(i, j)]);
                    }
                }
            }
        }
        for idx in 0..m {
            for k in 0..self.blocks.len() {
                let (vid, _) = self.locate(idx);
                if !self.blocks[k].expr.terms.iter().any(|t| t.var.0 == vid) {
                    continue;
                }
                let f = self.coefficient_matrix(k, idx);
                for i in 0..f.nrows() {
                    for j in i..f.ncols() {
                        if f[(i, j)] != 0.0 {
                            let _ = writeln!(
                                s,
                                "{} {} {} {} {:e}",
                                idx + 1,
                                k + 1,
                                i + 1,
                                j + 1,
                                f[(i, j)]
                            );
                        }
                    }
                }
            }
        }
        s
    }
}

pub(crate) fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    let scale = m.amax().max(1.0);
    (0..m.nrows()).all(|i| (0..i).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= tol * scale))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn elements_and_values_round_trip() {
        let mut p = SdpProblem::new();
        let a = p.add_var("A", VarShape::Symmetric(3));
        let d = p.add_var("d", VarShape::Diagonal(2));
        assert_eq!(p.num_unknowns(), 8);
        let mut x = vec![0.0; 8];
        let v = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 5.0, 3.0, 5.0, 6.0]);
        p.var(a).store(&v, &mut x);
        p.var(d).store(
            &DMatrix::from_diagonal(&nalgebra::dvector![7.0, 8.0]),
            &mut x,
        );
        assert_eq!(p.value(a, &x), v);
        assert_eq!(x[6..], [7.0, 8.0]);
    }

    #[test]
    fn repeated_term_is_kronecker() {
        let mut p = SdpProblem::new();
        let q = p.add_var("Q", VarShape::Symmetric(2));
        let l = SparseRows::from_dense(&DMatrix::identity(6, 6));
        let t = Term::repeated(q, -1.0, 3, l, None);
        let v = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 2.0]);
        let m = t.evaluate(&v);
        for k in 0..3 {
            assert_eq!(m.view((2 * k, 2 * k), (2, 2)).clone_owned(), -&v);
        }
        assert_eq!(m[(0, 2)], 0.0);
    }

    #[test]
    fn substitute_moves_value_into_constant() {
        let mut p = SdpProblem::new();
        let g = p.add_var("g", VarShape::Diagonal(1));
        let y = p.add_var("y", VarShape::Diagonal(1));
        let mut e = AffineSym::constant(DMatrix::from_element(1, 1, -4.0));
        e.push(Term::new(g, 1.0, &DMatrix::identity(1, 1), None));
        e.push(Term::new(y, 2.0, &DMatrix::identity(1, 1), None));
        p.add_block("c", e).unwrap();
        p.minimize_trace(y, 1.0);
        let q = p.substitute(g, &DMatrix::from_element(1, 1, 3.0));
        assert_eq!(q.num_unknowns(), 1);
        assert_eq!(q.blocks[0].expr.constant[(0, 0)], -1.0);
        assert_eq!(q.objective, vec![1.0]);
    }

    #[test]
    fn sdpa_export_layout() {
        let mut p = SdpProblem::new();
        let g = p.add_var("g", VarShape::Diagonal(1));
        let mut e = AffineSym::constant(DMatrix::from_element(1, 1, -4.0));
        e.push(Term::new(g, 1.0, &DMatrix::identity(1, 1), None));
        p.add_block("c", e).unwrap();
        p.minimize_trace(g, 1.0);
        let text = p.to_sdpa();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[1], "1");
        assert_eq!(lines[2], "1");
        assert_eq!(lines[3], "1");
        assert!(lines.contains(&"0 1 1 1 4e0"));
        assert!(lines.contains(&"1 1 1 1 1e0"));
    }
}
