//! Roesser realizations of convolutional layers.
//!
//! A Roesser system propagates a horizontal state `x1` along `i1` and a
//! vertical state `x2` along `i2`:
//!
//! ```text
//! x1(i1+1, i2) = f1 + A11 x1 + A12 x2 + B1 u(i1+r, i2+r)
//! x2(i1, i2+1) = f2 + A21 x1 + A22 x2 + B2 u(i1+r, i2+r)
//! y(i1, i2)    = g  + C1 x1  + C2 x2  + D  u(i1+r, i2+r)
//! ```

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ConvLayerSpec;
use crate::signal2d::Signal2D;

/// State-space matrices of an affine Roesser system with input delay `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct RoesserRealization {
    pub a11: DMatrix<f64>,
    pub a12: DMatrix<f64>,
    pub a21: DMatrix<f64>,
    pub a22: DMatrix<f64>,
    pub b1: DMatrix<f64>,
    pub b2: DMatrix<f64>,
    pub c1: DMatrix<f64>,
    pub c2: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub f1: DVector<f64>,
    pub f2: DVector<f64>,
    pub g: DVector<f64>,
    pub r: usize,
}

impl RoesserRealization {
    /// Linear system with zero affine terms.
    #[allow(clippy::too_many_arguments)]
    pub fn linear(
        a11: DMatrix<f64>,
        a12: DMatrix<f64>,
        a21: DMatrix<f64>,
        a22: DMatrix<f64>,
        b1: DMatrix<f64>,
        b2: DMatrix<f64>,
        c1: DMatrix<f64>,
        c2: DMatrix<f64>,
        d: DMatrix<f64>,
        r: usize,
    ) -> Result<Self> {
        let (n1, n2, p) = (a11.nrows(), a22.nrows(), d.nrows());
        let sys = Self {
            f1: DVector::zeros(n1),
            f2: DVector::zeros(n2),
            g: DVector::zeros(p),
            a11,
            a12,
            a21,
            a22,
            b1,
            b2,
            c1,
            c2,
            d,
            r,
        };
        sys.check()?;
        Ok(sys)
    }

    #[inline]
    pub fn n1(&self) -> usize {
        self.a11.nrows()
    }

    #[inline]
    pub fn n2(&self) -> usize {
        self.a22.nrows()
    }

    #[inline]
    pub fn c_in(&self) -> usize {
        self.d.ncols()
    }

    #[inline]
    pub fn c_out(&self) -> usize {
        self.d.nrows()
    }

    /// Verifies that all block dimensions agree and entries are finite.
    pub fn check(&self) -> Result<()> {
        let (n1, n2, m, p) = (self.n1(), self.n2(), self.c_in(), self.c_out());
        let shapes = [
            ("A11", self.a11.shape(), (n1, n1)),
            ("A12", self.a12.shape(), (n1, n2)),
            ("A21", self.a21.shape(), (n2, n1)),
            ("A22", self.a22.shape(), (n2, n2)),
            ("B1", self.b1.shape(), (n1, m)),
            ("B2", self.b2.shape(), (n2, m)),
            ("C1", self.c1.shape(), (p, n1)),
            ("C2", self.c2.shape(), (p, n2)),
            ("f1", (self.f1.len(), 1), (n1, 1)),
            ("f2", (self.f2.len(), 1), (n2, 1)),
            ("g", (self.g.len(), 1), (p, 1)),
        ];
        for (name, got, want) in shapes {
            if got != want {
                return Err(Error::Dimension(format!(
                    "{name} is {got:?}, expected {want:?}"
                )));
            }
        }
        let finite = [
            &self.a11, &self.a12, &self.a21, &self.a22, &self.b1, &self.b2, &self.c1, &self.c2,
            &self.d,
        ]
        .iter()
        .all(|m| m.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::Dimension(
                "realization has non-finite entries".into(),
            ));
        }
        Ok(())
    }

    /// Lifted matrices `(A10, A01, B1hat, B2hat)` of the stacked state `x = (x1, x2)`.
    pub fn lifted(&self) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let (n1, n2, m) = (self.n1(), self.n2(), self.c_in());
        let n = n1 + n2;
        let mut a10 = DMatrix::zeros(n, n);
        a10.view_mut((0, 0), (n1, n1)).copy_from(&self.a11);
        a10.view_mut((0, n1), (n1, n2)).copy_from(&self.a12);
        let mut a01 = DMatrix::zeros(n, n);
        a01.view_mut((n1, 0), (n2, n1)).copy_from(&self.a21);
        a01.view_mut((n1, n1), (n2, n2)).copy_from(&self.a22);
        let mut b1 = DMatrix::zeros(n, m);
        b1.view_mut((0, 0), (n1, m)).copy_from(&self.b1);
        let mut b2 = DMatrix::zeros(n, m);
        b2.view_mut((n1, 0), (n2, m)).copy_from(&self.b2);
        (a10, a01, b1, b2)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&RealizationDoc::from(self)).expect("realization serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: RealizationDoc =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        doc.into_realization()
    }
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

fn mat_from_rows(rows: &[Vec<f64>], ncols: usize) -> Result<DMatrix<f64>> {
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Dimension("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

#[derive(Serialize, Deserialize)]
#[allow(non_snake_case)]
struct RealizationDoc {
    n1: usize,
    n2: usize,
    c_in: usize,
    c_out: usize,
    r: usize,
    A11: Vec<Vec<f64>>,
    A12: Vec<Vec<f64>>,
    A21: Vec<Vec<f64>>,
    A22: Vec<Vec<f64>>,
    B1: Vec<Vec<f64>>,
    B2: Vec<Vec<f64>>,
    C1: Vec<Vec<f64>>,
    C2: Vec<Vec<f64>>,
    D: Vec<Vec<f64>>,
    f1: Vec<f64>,
    f2: Vec<f64>,
    g: Vec<f64>,
}

impl From<&RoesserRealization> for RealizationDoc {
    fn from(s: &RoesserRealization) -> Self {
        Self {
            n1: s.n1(),
            n2: s.n2(),
            c_in: s.c_in(),
            c_out: s.c_out(),
            r: s.r,
            A11: rows_of(&s.a11),
            A12: rows_of(&s.a12),
            A21: rows_of(&s.a21),
            A22: rows_of(&s.a22),
            B1: rows_of(&s.b1),
            B2: rows_of(&s.b2),
            C1: rows_of(&s.c1),
            C2: rows_of(&s.c2),
            D: rows_of(&s.d),
            f1: s.f1.iter().copied().collect(),
            f2: s.f2.iter().copied().collect(),
            g: s.g.iter().copied().collect(),
        }
    }
}

impl RealizationDoc {
    fn into_realization(self) -> Result<RoesserRealization> {
        let (n1, n2, m, p) = (self.n1, self.n2, self.c_in, self.c_out);
        let sys = RoesserRealization {
            a11: mat_from_rows(&self.A11, n1)?,
            a12: mat_from_rows(&self.A12, n2)?,
            a21: mat_from_rows(&self.A21, n1)?,
            a22: mat_from_rows(&self.A22, n2)?,
            b1: mat_from_rows(&self.B1, m)?,
            b2: mat_from_rows(&self.B2, m)?,
            c1: mat_from_rows(&self.C1, n1)?,
            c2: mat_from_rows(&self.C2, n2)?,
            d: mat_from_rows(&self.D, m)?,
            f1: DVector::from_vec(self.f1),
            f2: DVector::from_vec(self.f2),
            g: DVector::from_vec(self.g),
            r: self.r,
        };
        if sys.d.nrows() != p {
            return Err(Error::Dimension("D row count differs from c_out".into()));
        }
        sys.check()?;
        Ok(sys)
    }
}

/// Redundant realization of a convolutional layer.
///
/// With `w = r_minus + r_plus` and the causal kernel `K'(a, b) = K(a - r_minus, b - r_minus)`,
/// the state `x1` stores the past inputs `u(i - (a, b))` for `a in 1..=w`,
/// `b in 0..=w`, and `x2` stores those for `a in 0..=w`, `b in 1..=w`. Both
/// states have `c_in * w * (w + 1)` entries; all `A` and `B` entries are 0 or 1.
pub fn realize_conv(layer: &ConvLayerSpec) -> RoesserRealization {
    let k = &layer.kernel;
    let w = k.span();
    let m = k.c_in;
    let p = k.c_out;
    let n = m * w * (w + 1);
    // x1 block (a, b), a in 1..=w, b in 0..=w
    let i1 = |a: usize, b: usize| ((a - 1) * (w + 1) + b) * m;
    // x2 block (a, b), a in 0..=w, b in 1..=w
    let i2 = |a: usize, b: usize| ((b - 1) * (w + 1) + a) * m;

    let mut a11 = DMatrix::zeros(n, n);
    let mut a12 = DMatrix::zeros(n, n);
    let mut a21 = DMatrix::zeros(n, n);
    let mut a22 = DMatrix::zeros(n, n);
    let mut b1 = DMatrix::zeros(n, m);
    let mut b2 = DMatrix::zeros(n, m);
    let mut c1 = DMatrix::zeros(p, n);
    let mut c2 = DMatrix::zeros(p, n);
    for ch in 0..m {
        for a in 1..=w {
            for b in 0..=w {
                let row = i1(a, b) + ch;
                if a == 1 && b == 0 {
                    b1[(row, ch)] = 1.0;
                } else if a == 1 {
                    a12[(row, i2(0, b) + ch)] = 1.0;
                } else {
                    a11[(row, i1(a - 1, b) + ch)] = 1.0;
                }
            }
        }
        for b in 1..=w {
            for a in 0..=w {
                let row = i2(a, b) + ch;
                if b == 1 && a == 0 {
                    b2[(row, ch)] = 1.0;
                } else if b == 1 {
                    a21[(row, i1(a, 0) + ch)] = 1.0;
                } else {
                    a22[(row, i2(a, b - 1) + ch)] = 1.0;
                }
            }
        }
    }
    for o in 0..p {
        for ch in 0..m {
            for a in 0..=w {
                for b in 0..=w {
                    let t = k.tap(o, ch, a, b);
                    if a >= 1 {
                        c1[(o, i1(a, b) + ch)] = t;
                    } else if b >= 1 {
                        c2[(o, i2(0, b) + ch)] = t;
                    }
                }
            }
        }
    }
    RoesserRealization {
        a11,
        a12,
        a21,
        a22,
        b1,
        b2,
        c1,
        c2,
        d: k.tap_matrix(0, 0),
        f1: DVector::zeros(n),
        f2: DVector::zeros(n),
        g: DVector::from_column_slice(&layer.bias),
        r: k.r_minus,
    }
}

/// Compact realization with `c_out * w` horizontal and `c_in * w` vertical states.
///
/// `x2` is a delay line of the inputs `u(i - (0, b))`, `b in 1..=w`. With
/// `v_a = sum_b K'(a, b) u(i - (0, b))`, `x1` holds the partial sums
/// `x1[k](i) = sum_{a > k} v_a(i - (a - k, 0))`, so that `y = v_0 + x1[0]`.
pub fn realize_conv_compact(layer: &ConvLayerSpec) -> RoesserRealization {
    let k = &layer.kernel;
    let w = k.span();
    let (m, p) = (k.c_in, k.c_out);
    let (n1, n2) = (p * w, m * w);
    let mut a11 = DMatrix::zeros(n1, n1);
    let mut a12 = DMatrix::zeros(n1, n2);
    let mut b1 = DMatrix::zeros(n1, m);
    let mut a22 = DMatrix::zeros(n2, n2);
    let mut b2 = DMatrix::zeros(n2, m);
    let mut c1 = DMatrix::zeros(p, n1);
    let mut c2 = DMatrix::zeros(p, n2);
    for kk in 0..w {
        for o in 0..p {
            let row = kk * p + o;
            if kk + 1 < w {
                a11[(row, (kk + 1) * p + o)] = 1.0;
            }
            for ch in 0..m {
                b1[(row, ch)] = k.tap(o, ch, kk + 1, 0);
                for b in 1..=w {
                    a12[(row, (b - 1) * m + ch)] = k.tap(o, ch, kk + 1, b);
                }
            }
        }
    }
    for b in 1..=w {
        for ch in 0..m {
            let row = (b - 1) * m + ch;
            if b == 1 {
                b2[(row, ch)] = 1.0;
            } else {
                a22[(row, (b - 2) * m + ch)] = 1.0;
            }
        }
    }
    for o in 0..p {
        if w > 0 {
            c1[(o, o)] = 1.0;
        }
        for ch in 0..m {
            for b in 1..=w {
                c2[(o, (b - 1) * m + ch)] = k.tap(o, ch, 0, b);
            }
        }
    }
    RoesserRealization {
        a11,
        a12,
        a21: DMatrix::zeros(n2, n1),
        a22,
        b1,
        b2,
        c1,
        c2,
        d: k.tap_matrix(0, 0),
        f1: DVector::zeros(n1),
        f2: DVector::zeros(n2),
        g: DVector::from_column_slice(&layer.bias),
        r: k.r_minus,
    }
}

/// Simulates the system over `region = (N1, N2)` nodes with zero boundary
/// states. The simulation frame starts at `u.origin - (r, r)`, the input at
/// node `i` is `u(i + (r, r))`, and the returned output has that origin.
pub fn simulate(
    sys: &RoesserRealization,
    u: &Signal2D,
    region: (usize, usize),
) -> Result<Signal2D> {
    if region.0 == 0 || region.1 == 0 {
        return Err(Error::Geometry("simulation region must be nonempty".into()));
    }
    if u.channels() != sys.c_in() {
        return Err(Error::Dimension(format!(
            "input has {} channels, system expects {}",
            u.channels(),
            sys.c_in()
        )));
    }
    let r = sys.r as i64;
    let start = (u.origin.0 - r, u.origin.1 - r);
    let (n1, n2, m) = (sys.n1(), sys.n2(), sys.c_in());
    let mut y = Signal2D::zeros(start, region.0, region.1, sys.c_out());
    // x1 entering column i2 from the west, one per i2.
    let mut x1_west = vec![DVector::<f64>::zeros(n1); region.1];
    let mut uin = DVector::<f64>::zeros(m);
    for p in 0..region.0 {
        let mut x2 = DVector::<f64>::zeros(n2);
        for q in 0..region.1 {
            let node = (start.0 + p as i64, start.1 + q as i64);
            for ch in 0..m {
                uin[ch] = u.get(node.0 + r, node.1 + r, ch);
            }
            let x1 = &x1_west[q];
            let out = &sys.g + &sys.c1 * x1 + &sys.c2 * &x2 + &sys.d * &uin;
            for (o, v) in out.iter().enumerate() {
                y.data[[p, q, o]] = *v;
            }
            let x1n = &sys.f1 + &sys.a11 * x1 + &sys.a12 * &x2 + &sys.b1 * &uin;
            let x2n = &sys.f2 + &sys.a21 * x1 + &sys.a22 * &x2 + &sys.b2 * &uin;
            x1_west[q] = x1n;
            x2 = x2n;
        }
    }
    Ok(y)
}

/// Region that covers the full output support of a layer driven by `u`.
pub fn full_region(layer: &ConvLayerSpec, u: &Signal2D) -> (usize, usize) {
    let s = layer.kernel.span();
    (u.height() + s, u.width() + s)
}

fn orthonormal_columns(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    if m.ncols() == 0 || m.nrows() == 0 {
        return DMatrix::zeros(m.nrows(), 0);
    }
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return DMatrix::zeros(m.nrows(), 0);
    }
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > rel_tol * smax)
        .collect();
    DMatrix::from_fn(m.nrows(), keep.len(), |i, j| u[(i, keep[j])])
}

/// Default relative rank tolerance for subspace computations.
pub const RANK_TOL: f64 = 1e-10;

/// Orthonormal basis of the reachable subspace of the stacked state.
///
/// The subspace is spanned by the state impulse responses
/// `X(1, 0) = B1hat`, `X(0, 1) = B2hat`,
/// `X(a, b) = A10 X(a-1, b) + A01 X(a, b-1)`, collected anti-diagonal by
/// anti-diagonal until the dimension is full, a diagonal vanishes, or
/// `2 (n1 + n2) + 2` diagonals have been processed.
pub fn reachable_subspace(sys: &RoesserRealization) -> DMatrix<f64> {
    reachable_subspace_with_tol(sys, RANK_TOL)
}

pub fn reachable_subspace_with_tol(sys: &RoesserRealization, rel_tol: f64) -> DMatrix<f64> {
    let n = sys.n1() + sys.n2();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let (a10, a01, b1, b2) = sys.lifted();
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut scale = 0.0f64;
    let absorb = |m: &DMatrix<f64>, basis: &mut Vec<DVector<f64>>, scale: &mut f64| {
        for c in m.column_iter() {
            *scale = scale.max(c.norm());
        }
        for c in m.column_iter() {
            let mut v = c.clone_owned();
            for _ in 0..2 {
                for q in basis.iter() {
                    let h = q.dot(&v);
                    v.axpy(-h, q, 1.0);
                }
            }
            let nv = v.norm();
            if nv > rel_tol * *scale && basis.len() < n {
                basis.push(v / nv);
            }
        }
    };
    // diag[a] = X(a, d - a)
    let mut diag: Vec<DMatrix<f64>> = vec![b2.clone(), b1.clone()];
    absorb(&b1, &mut basis, &mut scale);
    absorb(&b2, &mut basis, &mut scale);
    let cap = 2 * n + 2;
    for d in 2..=cap {
        if basis.len() >= n {
            break;
        }
        let mut next = Vec::with_capacity(d + 1);
        let mut any = false;
        for a in 0..=d {
            let b = d - a;
            let mut x = DMatrix::zeros(n, sys.c_in());
            if a >= 1 && a - 1 < diag.len() && b < d {
                x += &a10 * &diag[a - 1];
            }
            if b >= 1 && a < diag.len() {
                x += &a01 * &diag[a];
            }
            if x.amax() > 0.0 {
                any = true;
            }
            next.push(x);
        }
        if !any {
            break;
        }
        for x in &next {
            absorb(x, &mut basis, &mut scale);
        }
        // Normalize to avoid overflow in unstable systems; only the span matters.
        let nmax = next.iter().map(|x| x.amax()).fold(0.0, f64::max);
        if nmax > 0.0 && !(1e-100..=1e100).contains(&nmax) {
            next.iter_mut().for_each(|x| *x /= nmax);
        }
        diag = next;
    }
    if basis.is_empty() {
        return DMatrix::zeros(n, 0);
    }
    DMatrix::from_columns(&basis)
}

/// Orthonormal bases of the projections of `span(T)` onto the `x1` and `x2`
/// coordinates.
pub fn split_reachable_basis(
    t: &DMatrix<f64>,
    n1: usize,
    n2: usize,
) -> (DMatrix<f64>, DMatrix<f64>) {
    assert_eq!(t.nrows(), n1 + n2, "basis row count must equal n1 + n2");
    let top = t.rows(0, n1).clone_owned();
    let bottom = t.rows(n1, n2).clone_owned();
    (
        orthonormal_columns(&top, RANK_TOL),
        orthonormal_columns(&bottom, RANK_TOL),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Kernel2D;
    use crate::signal2d::conv_forward;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{StandardNormal, Uniform};

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize, s: f64) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| s * rng.sample::<f64, _>(StandardNormal))
    }

    #[test]
    fn memoryless_layer() {
        let sys = realize_conv(&ConvLayerSpec::single_tap(3.0));
        assert_eq!((sys.n1(), sys.n2(), sys.r), (0, 0, 0));
        assert_eq!(sys.d[(0, 0)], 3.0);
    }

    #[test]
    fn three_by_three_state_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sys = realize_conv(&ConvLayerSpec::unbiased(Kernel2D::random(
            &mut rng, 1, 1, 0, 2,
        )));
        assert_eq!((sys.n1(), sys.n2()), (6, 6));
        let compact = realize_conv_compact(&ConvLayerSpec::unbiased(Kernel2D::random(
            &mut rng, 4, 3, 1, 1,
        )));
        assert_eq!((compact.n1(), compact.n2()), (8, 6));
    }

    #[test]
    fn selection_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sys = realize_conv(&ConvLayerSpec::unbiased(Kernel2D::random(
            &mut rng, 2, 2, 1, 1,
        )));
        for m in [&sys.a11, &sys.a12, &sys.a21, &sys.a22, &sys.b1, &sys.b2] {
            assert!(m.iter().all(|v| *v == 0.0 || *v == 1.0));
            for row in m.row_iter() {
                assert!(row.iter().filter(|v| **v == 1.0).count() <= 1);
            }
        }
    }

    #[test]
    fn both_realizations_match_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (rm, rp, ci, co) in [(0, 0, 1, 2), (0, 2, 1, 1), (1, 1, 2, 3), (2, 1, 3, 1)] {
            let layer = ConvLayerSpec::new(
                Kernel2D::random(&mut rng, co, ci, rm, rp),
                (0..co).map(|_| rng.sample(StandardNormal)).collect(),
            )
            .unwrap();
            let u = Signal2D::new(
                (rng.sample(Uniform::new(-3, 3).unwrap()), 2),
                Array3::from_shape_fn((9, 7, ci), |_| rng.sample(StandardNormal)),
            )
            .unwrap();
            let y = conv_forward(&layer, &u, false).unwrap();
            for sys in [realize_conv(&layer), realize_conv_compact(&layer)] {
                let mut lin = sys.clone();
                lin.g.fill(0.0);
                let ys = simulate(&lin, &u, full_region(&layer, &u)).unwrap();
                assert_eq!(ys.origin, y.origin);
                assert!(ys.max_abs_diff(&y) <= 1e-12);
            }
        }
    }

    // Second, independent evaluation of the Roesser recursion: explicit
    // state arrays over the whole rectangle, filled along anti-diagonals.
    fn recursion_reference(
        sys: &RoesserRealization,
        u: &[Vec<DVector<f64>>],
    ) -> Vec<Vec<DVector<f64>>> {
        let (h, w) = (u.len(), u[0].len());
        let mut x1 = vec![vec![DVector::zeros(sys.n1()); w]; h + 1];
        let mut x2 = vec![vec![DVector::zeros(sys.n2()); w + 1]; h];
        let mut y = vec![vec![DVector::zeros(sys.c_out()); w]; h];
        for d in 0..(h + w - 1) {
            for p in 0..h {
                if d < p || d - p >= w {
                    continue;
                }
                let q = d - p;
                let (a, b) = (x1[p][q].clone(), x2[p][q].clone());
                x1[p + 1][q] = &sys.f1 + &sys.a11 * &a + &sys.a12 * &b + &sys.b1 * &u[p][q];
                x2[p][q + 1] = &sys.f2 + &sys.a21 * &a + &sys.a22 * &b + &sys.b2 * &u[p][q];
                y[p][q] = &sys.g + &sys.c1 * &a + &sys.c2 * &b + &sys.d * &u[p][q];
            }
        }
        y
    }

    #[test]
    fn simulation_matches_reference_recursion() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let (n1, n2, m, p) = (3, 4, 2, 2);
        let sys = RoesserRealization {
            a11: rand_mat(&mut rng, n1, n1, 0.3),
            a12: rand_mat(&mut rng, n1, n2, 0.3),
            a21: rand_mat(&mut rng, n2, n1, 0.3),
            a22: rand_mat(&mut rng, n2, n2, 0.3),
            b1: rand_mat(&mut rng, n1, m, 1.0),
            b2: rand_mat(&mut rng, n2, m, 1.0),
            c1: rand_mat(&mut rng, p, n1, 1.0),
            c2: rand_mat(&mut rng, p, n2, 1.0),
            d: rand_mat(&mut rng, p, m, 1.0),
            f1: DVector::from_fn(n1, |_, _| rng.sample(StandardNormal)),
            f2: DVector::from_fn(n2, |_, _| rng.sample(StandardNormal)),
            g: DVector::from_fn(p, |_, _| rng.sample(StandardNormal)),
            r: 1,
        };
        let (h, w) = (6, 5);
        let u = Signal2D::new(
            (1, 1),
            Array3::from_shape_fn((h, w, m), |_| rng.sample(StandardNormal)),
        )
        .unwrap();
        let y = simulate(&sys, &u, (h, w)).unwrap();
        let grid: Vec<Vec<DVector<f64>>> = (0..h)
            .map(|pp| {
                (0..w)
                    .map(|q| DVector::from_fn(m, |ch, _| u.get(1 + pp as i64, 1 + q as i64, ch)))
                    .collect()
            })
            .collect();
        // The frame starts at origin - r, so node (p, q) reads u(1 + p, 1 + q).
        let yr = recursion_reference(&sys, &grid);
        for pp in 0..h {
            for q in 0..w {
                for o in 0..p {
                    assert!((y.data[[pp, q, o]] - yr[pp][q][o]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn redundant_realization_is_not_reachable() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let sys = realize_conv(&ConvLayerSpec::unbiased(Kernel2D::random(
            &mut rng, 1, 1, 0, 2,
        )));
        let t = reachable_subspace(&sys);
        assert_eq!(t.ncols(), 8);
        assert!(t.ncols() < 12);
        let gram = t.transpose() * &t;
        assert!((gram - DMatrix::identity(8, 8)).amax() < 1e-12);
    }

    #[test]
    fn generic_system_is_reachable() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (n1, n2, m) = (3, 2, 1);
        let sys = RoesserRealization::linear(
            rand_mat(&mut rng, n1, n1, 0.5),
            rand_mat(&mut rng, n1, n2, 0.5),
            rand_mat(&mut rng, n2, n1, 0.5),
            rand_mat(&mut rng, n2, n2, 0.5),
            rand_mat(&mut rng, n1, m, 1.0),
            rand_mat(&mut rng, n2, m, 1.0),
            rand_mat(&mut rng, 1, n1, 1.0),
            rand_mat(&mut rng, 1, n2, 1.0),
            rand_mat(&mut rng, 1, m, 1.0),
            0,
        )
        .unwrap();
        assert_eq!(reachable_subspace(&sys).ncols(), n1 + n2);
    }

    #[test]
    fn empty_and_split_bases() {
        let sys = realize_conv(&ConvLayerSpec::single_tap(1.0));
        assert_eq!(reachable_subspace(&sys).ncols(), 0);

        let t = DMatrix::<f64>::identity(5, 5);
        let (t1, t2) = split_reachable_basis(&t, 2, 3);
        assert_eq!((t1.ncols(), t2.ncols()), (2, 3));

        let mut v = DMatrix::<f64>::zeros(5, 1);
        v[(1, 0)] = 1.0;
        let (t1, t2) = split_reachable_basis(&v, 2, 3);
        assert_eq!((t1.ncols(), t2.ncols()), (1, 0));
    }

    #[test]
    fn json_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let layer =
            ConvLayerSpec::new(Kernel2D::random(&mut rng, 2, 1, 1, 0), vec![0.25, -1.5]).unwrap();
        let sys = realize_conv(&layer);
        let back = RoesserRealization::from_json(&sys.to_json()).unwrap();
        assert_eq!(back, sys);
    }
}
