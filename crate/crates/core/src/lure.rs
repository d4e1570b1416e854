//! 2-D Lur'e systems: a conv stack written as one Roesser system in feedback
//! with the activation.
//!
//! ```text
//! x1(i1+1, i2) = f1 + A11 x1 + A12 x2 + B11 w + B12 u(i + r)
//! x2(i1, i2+1) = f2 + A21 x1 + A22 x2 + B21 w + B22 u(i + r)
//! z            = g1 + C11 x1 + C12 x2 + D11 w + D12 u(i + r)
//! y            = g2 + C21 x1 + C22 x2 + D21 w + D22 u(i + r)
//! w            = phi(z)
//! ```
//!
//! For a cascade `z` collects the outputs of layers `1..l-1`, `w` the inputs of
//! layers `2..l`, and `D11` is strictly lower triangular, so each node is
//! solved by forward substitution.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{Activation, ConvLayerSpec};
use crate::realization::{realize_conv, realize_conv_compact, RoesserRealization};
use crate::signal2d::Signal2D;

/// Which single-layer realization to cascade.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RealizationKind {
    /// `c_in w (w + 1)` states per direction; tight bounds after projection.
    Redundant,
    /// `c_out w` horizontal and `c_in w` vertical states.
    Compact,
    /// Redundant unless its storage matrices exceed [`AUTO_VARIABLE_BUDGET`] unknowns.
    #[default]
    Auto,
}

impl std::str::FromStr for RealizationKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "redundant" => Ok(Self::Redundant),
            "compact" => Ok(Self::Compact),
            "auto" => Ok(Self::Auto),
            other => Err(Error::Usage(format!("unknown realization '{other}'"))),
        }
    }
}

impl RealizationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Redundant => "redundant",
            Self::Compact => "compact",
            Self::Auto => "auto",
        }
    }
}

impl std::fmt::Display for RealizationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Number of storage-matrix unknowns above which `Auto` picks the compact form.
pub const AUTO_VARIABLE_BUDGET: usize = 3000;

/// Slices of the stacked signals that belong to one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSlice {
    pub x1: Range<usize>,
    pub x2: Range<usize>,
    /// Rows of `z` carrying this layer's output, if it feeds a nonlinearity.
    pub z: Option<Range<usize>>,
    /// Support span `r_minus + r_plus` of the layer's kernel.
    pub span: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LureSystem {
    pub a11: DMatrix<f64>,
    pub a12: DMatrix<f64>,
    pub a21: DMatrix<f64>,
    pub a22: DMatrix<f64>,
    pub b11: DMatrix<f64>,
    pub b12: DMatrix<f64>,
    pub b21: DMatrix<f64>,
    pub b22: DMatrix<f64>,
    pub c11: DMatrix<f64>,
    pub c12: DMatrix<f64>,
    pub c21: DMatrix<f64>,
    pub c22: DMatrix<f64>,
    pub d11: DMatrix<f64>,
    pub d12: DMatrix<f64>,
    pub d21: DMatrix<f64>,
    pub d22: DMatrix<f64>,
    pub f1: DVector<f64>,
    pub f2: DVector<f64>,
    pub g1: DVector<f64>,
    pub g2: DVector<f64>,
    pub r: usize,
    pub layers: Vec<LayerSlice>,
}

impl LureSystem {
    pub fn n1(&self) -> usize {
        self.a11.nrows()
    }
    pub fn n2(&self) -> usize {
        self.a22.nrows()
    }
    /// Dimension of the nonlinearity channel.
    pub fn nz(&self) -> usize {
        self.d11.nrows()
    }
    pub fn n_in(&self) -> usize {
        self.b12.ncols()
    }
    pub fn n_out(&self) -> usize {
        self.c21.nrows()
    }

    /// Total support growth `sum(r_minus + r_plus)` of the cascade.
    pub fn span(&self) -> usize {
        self.layers.iter().map(|l| l.span).sum()
    }

    /// A single realization viewed as a Lur'e system without nonlinearity.
    pub fn from_realization(sys: &RoesserRealization, span: usize) -> Self {
        let (n1, n2, m, p) = (sys.n1(), sys.n2(), sys.c_in(), sys.c_out());
        Self {
            a11: sys.a11.clone(),
            a12: sys.a12.clone(),
            a21: sys.a21.clone(),
            a22: sys.a22.clone(),
            b11: DMatrix::zeros(n1, 0),
            b12: sys.b1.clone(),
            b21: DMatrix::zeros(n2, 0),
            b22: sys.b2.clone(),
            c11: DMatrix::zeros(0, n1),
            c12: DMatrix::zeros(0, n2),
            c21: sys.c1.clone(),
            c22: sys.c2.clone(),
            d11: DMatrix::zeros(0, 0),
            d12: DMatrix::zeros(0, m),
            d21: DMatrix::zeros(p, 0),
            d22: sys.d.clone(),
            f1: sys.f1.clone(),
            f2: sys.f2.clone(),
            g1: DVector::zeros(0),
            g2: sys.g.clone(),
            r: sys.r,
            layers: vec![LayerSlice {
                x1: 0..n1,
                x2: 0..n2,
                z: None,
                span,
            }],
        }
    }

    /// Checks block dimensions and that `D11` is strictly lower triangular.
    pub fn check(&self) -> Result<()> {
        let (n1, n2, nz, m, p) = (self.n1(), self.n2(), self.nz(), self.n_in(), self.n_out());
        let shapes = [
            ("A11", self.a11.shape(), (n1, n1)),
            ("A12", self.a12.shape(), (n1, n2)),
            ("A21", self.a21.shape(), (n2, n1)),
            ("A22", self.a22.shape(), (n2, n2)),
            ("B11", self.b11.shape(), (n1, nz)),
            ("B12", self.b12.shape(), (n1, m)),
            ("B21", self.b21.shape(), (n2, nz)),
            ("B22", self.b22.shape(), (n2, m)),
            ("C11", self.c11.shape(), (nz, n1)),
            ("C12", self.c12.shape(), (nz, n2)),
            ("C21", self.c21.shape(), (p, n1)),
            ("C22", self.c22.shape(), (p, n2)),
            ("D11", self.d11.shape(), (nz, nz)),
            ("D12", self.d12.shape(), (nz, m)),
            ("D21", self.d21.shape(), (p, nz)),
            ("D22", self.d22.shape(), (p, m)),
            ("f1", (self.f1.len(), 1), (n1, 1)),
            ("f2", (self.f2.len(), 1), (n2, 1)),
            ("g1", (self.g1.len(), 1), (nz, 1)),
            ("g2", (self.g2.len(), 1), (p, 1)),
        ];
        for (name, got, want) in shapes {
            if got != want {
                return Err(Error::Dimension(format!(
                    "{name} is {got:?}, expected {want:?}"
                )));
            }
        }
        for i in 0..nz {
            for j in i..nz {
                if self.d11[(i, j)] != 0.0 {
                    return Err(Error::Structure(format!(
                        "D11[{i},{j}] = {} breaks strict lower triangularity",
                        self.d11[(i, j)]
                    )));
                }
            }
        }
        Ok(())
    }

    /// Appends the activation to the output: the former output joins `z`
    /// and the new output is its image under the activation.
    pub fn with_output_activation(&self) -> Self {
        let (n1, n2, nz, m, p) = (self.n1(), self.n2(), self.nz(), self.n_in(), self.n_out());
        let nz2 = nz + p;
        let mut b11 = DMatrix::zeros(n1, nz2);
        b11.columns_mut(0, nz).copy_from(&self.b11);
        let mut b21 = DMatrix::zeros(n2, nz2);
        b21.columns_mut(0, nz).copy_from(&self.b21);
        let stack = |top: &DMatrix<f64>, bottom: &DMatrix<f64>| {
            let mut out = DMatrix::zeros(top.nrows() + bottom.nrows(), top.ncols());
            out.rows_mut(0, top.nrows()).copy_from(top);
            out.rows_mut(top.nrows(), bottom.nrows()).copy_from(bottom);
            out
        };
        let mut d11 = DMatrix::zeros(nz2, nz2);
        d11.view_mut((0, 0), (nz, nz)).copy_from(&self.d11);
        d11.view_mut((nz, 0), (p, nz)).copy_from(&self.d21);
        let mut d21 = DMatrix::zeros(p, nz2);
        d21.view_mut((0, nz), (p, p)).fill_with_identity();
        let mut g1 = DVector::zeros(nz2);
        g1.rows_mut(0, nz).copy_from(&self.g1);
        g1.rows_mut(nz, p).copy_from(&self.g2);
        let mut layers = self.layers.clone();
        if let Some(last) = layers.last_mut() {
            last.z = Some(nz..nz2);
        }
        Self {
            a11: self.a11.clone(),
            a12: self.a12.clone(),
            a21: self.a21.clone(),
            a22: self.a22.clone(),
            b11,
            b12: self.b12.clone(),
            b21,
            b22: self.b22.clone(),
            c11: stack(&self.c11, &self.c21),
            c12: stack(&self.c12, &self.c22),
            c21: DMatrix::zeros(p, n1),
            c22: DMatrix::zeros(p, n2),
            d11,
            d12: stack(&self.d12, &self.d22),
            d21,
            d22: DMatrix::zeros(p, m),
            f1: self.f1.clone(),
            f2: self.f2.clone(),
            g1,
            g2: DVector::zeros(p),
            r: self.r,
            layers,
        }
    }

    /// Copy with the output rows scaled by `s`.
    pub fn with_output_scale(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.c21 *= s;
        out.c22 *= s;
        out.d21 *= s;
        out.d22 *= s;
        out.g2 *= s;
        out
    }

    /// Frame covering the full output support for input `u`.
    pub fn frame_for(&self, u: &Signal2D) -> LureFrame {
        let r = self.r as i64;
        let s = self.span();
        LureFrame {
            start: (u.origin.0 - r, u.origin.1 - r),
            extent: (u.height() + s, u.width() + s),
        }
    }
}

fn realize(layer: &ConvLayerSpec, kind: RealizationKind) -> RoesserRealization {
    match kind {
        RealizationKind::Redundant | RealizationKind::Auto => realize_conv(layer),
        RealizationKind::Compact => realize_conv_compact(layer),
    }
}

/// Storage-matrix unknowns of the redundant cascade.
pub fn redundant_variable_count(layers: &[ConvLayerSpec]) -> usize {
    let n: usize = layers
        .iter()
        .map(|l| l.kernel.c_in * l.kernel.span() * (l.kernel.span() + 1))
        .sum();
    n * (n + 1)
}

/// Resolves `Auto` for a given stack.
pub fn resolve_kind(layers: &[ConvLayerSpec], kind: RealizationKind) -> RealizationKind {
    match kind {
        RealizationKind::Auto if redundant_variable_count(layers) > AUTO_VARIABLE_BUDGET => {
            RealizationKind::Compact
        }
        RealizationKind::Auto => RealizationKind::Redundant,
        k => k,
    }
}

/// Assembles the Lur'e system of a conv stack from redundant realizations.
pub fn assemble_lure(conv_layers: &[ConvLayerSpec]) -> Result<LureSystem> {
    assemble_lure_with(conv_layers, RealizationKind::Redundant)
}

pub fn assemble_lure_with(
    conv_layers: &[ConvLayerSpec],
    kind: RealizationKind,
) -> Result<LureSystem> {
    if conv_layers.is_empty() {
        return Err(Error::Dimension("empty conv stack".into()));
    }
    for (k, pair) in conv_layers.windows(2).enumerate() {
        if pair[0].c_out() != pair[1].c_in() {
            return Err(Error::schema(
                format!("conv layer {}", k + 2),
                format!(
                    "expects {} input channels but receives {}",
                    pair[1].c_in(),
                    pair[0].c_out()
                ),
            ));
        }
    }
    let kind = resolve_kind(conv_layers, kind);
    let systems: Vec<RoesserRealization> = conv_layers.iter().map(|l| realize(l, kind)).collect();
    let spans: Vec<usize> = conv_layers.iter().map(|l| l.kernel.span()).collect();
    cascade(&systems, &spans)
}

/// Cascades realizations `C_l o phi o ... o phi o C_1` into one Lur'e system.
pub fn cascade(systems: &[RoesserRealization], spans: &[usize]) -> Result<LureSystem> {
    let l = systems.len();
    if l == 0 || spans.len() != l {
        return Err(Error::Dimension("need one span per realization".into()));
    }
    for (k, pair) in systems.windows(2).enumerate() {
        if pair[0].c_out() != pair[1].c_in() {
            return Err(Error::Dimension(format!(
                "realization {} outputs {} channels, realization {} expects {}",
                k + 1,
                pair[0].c_out(),
                k + 2,
                pair[1].c_in()
            )));
        }
    }
    let n1: usize = systems.iter().map(|s| s.n1()).sum();
    let n2: usize = systems.iter().map(|s| s.n2()).sum();
    let nz: usize = systems[..l - 1].iter().map(|s| s.c_out()).sum();
    let m = systems[0].c_in();
    let p = systems[l - 1].c_out();

    let mut out = LureSystem {
        a11: DMatrix::zeros(n1, n1),
        a12: DMatrix::zeros(n1, n2),
        a21: DMatrix::zeros(n2, n1),
        a22: DMatrix::zeros(n2, n2),
        b11: DMatrix::zeros(n1, nz),
        b12: DMatrix::zeros(n1, m),
        b21: DMatrix::zeros(n2, nz),
        b22: DMatrix::zeros(n2, m),
        c11: DMatrix::zeros(nz, n1),
        c12: DMatrix::zeros(nz, n2),
        c21: DMatrix::zeros(p, n1),
        c22: DMatrix::zeros(p, n2),
        d11: DMatrix::zeros(nz, nz),
        d12: DMatrix::zeros(nz, m),
        d21: DMatrix::zeros(p, nz),
        d22: DMatrix::zeros(p, m),
        f1: DVector::zeros(n1),
        f2: DVector::zeros(n2),
        g1: DVector::zeros(nz),
        g2: DVector::zeros(p),
        r: systems.iter().map(|s| s.r).sum(),
        layers: Vec::with_capacity(l),
    };
    let (mut o1, mut o2, mut oz) = (0, 0, 0);
    // Offset in w of this layer's input (w block k-1 feeds layer k).
    let mut ow_prev = 0;
    for (k, s) in systems.iter().enumerate() {
        let (k1, k2, ci, co) = (s.n1(), s.n2(), s.c_in(), s.c_out());
        out.a11.view_mut((o1, o1), (k1, k1)).copy_from(&s.a11);
        out.a12.view_mut((o1, o2), (k1, k2)).copy_from(&s.a12);
        out.a21.view_mut((o2, o1), (k2, k1)).copy_from(&s.a21);
        out.a22.view_mut((o2, o2), (k2, k2)).copy_from(&s.a22);
        out.f1.rows_mut(o1, k1).copy_from(&s.f1);
        out.f2.rows_mut(o2, k2).copy_from(&s.f2);
        if k == 0 {
            out.b12.view_mut((o1, 0), (k1, ci)).copy_from(&s.b1);
            out.b22.view_mut((o2, 0), (k2, ci)).copy_from(&s.b2);
        } else {
            out.b11.view_mut((o1, ow_prev), (k1, ci)).copy_from(&s.b1);
            out.b21.view_mut((o2, ow_prev), (k2, ci)).copy_from(&s.b2);
        }
        let z = if k + 1 < l {
            out.c11.view_mut((oz, o1), (co, k1)).copy_from(&s.c1);
            out.c12.view_mut((oz, o2), (co, k2)).copy_from(&s.c2);
            out.g1.rows_mut(oz, co).copy_from(&s.g);
            if k == 0 {
                out.d12.view_mut((oz, 0), (co, ci)).copy_from(&s.d);
            } else {
                out.d11.view_mut((oz, ow_prev), (co, ci)).copy_from(&s.d);
            }
            Some(oz..oz + co)
        } else {
            out.c21.view_mut((0, o1), (co, k1)).copy_from(&s.c1);
            out.c22.view_mut((0, o2), (co, k2)).copy_from(&s.c2);
            out.g2.copy_from(&s.g);
            if k == 0 {
                out.d22.copy_from(&s.d);
            } else {
                out.d21.view_mut((0, ow_prev), (co, ci)).copy_from(&s.d);
            }
            None
        };
        out.layers.push(LayerSlice {
            x1: o1..o1 + k1,
            x2: o2..o2 + k2,
            z: z.clone(),
            span: spans[k],
        });
        if let Some(z) = z {
            ow_prev = z.start;
            oz = z.end;
        }
        o1 += k1;
        o2 += k2;
    }
    out.check()?;
    Ok(out)
}

/// Linear part of the incremental dynamics: identical blocks, zero affine terms.
pub fn error_system(sys: &LureSystem) -> LureSystem {
    let mut e = sys.clone();
    e.f1.fill(0.0);
    e.f2.fill(0.0);
    e.g1.fill(0.0);
    e.g2.fill(0.0);
    e
}

/// A repeated scalar nonlinearity that may depend on the node.
pub trait Nonlinearity {
    fn apply(&self, node: (i64, i64), index: usize, z: f64) -> f64;
}

impl Nonlinearity for Activation {
    #[inline]
    fn apply(&self, _node: (i64, i64), _index: usize, z: f64) -> f64 {
        Activation::apply(*self, z)
    }
}

/// `phi~(z) = phi(z + z_ref(node)) - phi(z_ref(node))` along a reference trajectory.
pub struct IncrementalNonlinearity<'a> {
    pub activation: Activation,
    pub reference: &'a LureTrajectory,
}

impl Nonlinearity for IncrementalNonlinearity<'_> {
    #[inline]
    fn apply(&self, node: (i64, i64), index: usize, z: f64) -> f64 {
        let z1 = self.reference.z[self.reference.frame.index(node)][index];
        self.activation.apply(z + z1) - self.activation.apply(z1)
    }
}

/// Rectangle of nodes `start + [0, extent)` on which a Lur'e system is solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LureFrame {
    pub start: (i64, i64),
    pub extent: (usize, usize),
}

impl LureFrame {
    #[inline]
    pub fn index(&self, node: (i64, i64)) -> usize {
        let p = (node.0 - self.start.0) as usize;
        let q = (node.1 - self.start.1) as usize;
        debug_assert!(p < self.extent.0 && q < self.extent.1);
        p * self.extent.1 + q
    }

    #[inline]
    pub fn node(&self, p: usize, q: usize) -> (i64, i64) {
        (self.start.0 + p as i64, self.start.1 + q as i64)
    }

    pub fn len(&self) -> usize {
        self.extent.0 * self.extent.1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// All signals of a solved Lur'e system, stored per node in raster order
/// (`i1` outer, `i2` inner).
#[derive(Debug, Clone)]
pub struct LureTrajectory {
    pub frame: LureFrame,
    pub y: Signal2D,
    pub u: Vec<DVector<f64>>,
    pub z: Vec<DVector<f64>>,
    pub w: Vec<DVector<f64>>,
    pub x1: Vec<DVector<f64>>,
    pub x2: Vec<DVector<f64>>,
    /// `x1(i1 + 1, i2)` produced at each node.
    pub x1_next: Vec<DVector<f64>>,
    /// `x2(i1, i2 + 1)` produced at each node.
    pub x2_next: Vec<DVector<f64>>,
}

/// Solves the Lur'e system on `frame` with zero boundary states, reading the
/// input at `u(node + (r, r))`.
pub fn lure_forward(
    sys: &LureSystem,
    phi: &dyn Nonlinearity,
    u: &Signal2D,
    frame: LureFrame,
) -> Result<LureTrajectory> {
    sys.check()?;
    if u.channels() != sys.n_in() {
        return Err(Error::Dimension(format!(
            "input has {} channels, system expects {}",
            u.channels(),
            sys.n_in()
        )));
    }
    if frame.is_empty() {
        return Err(Error::Geometry("empty simulation frame".into()));
    }
    let (n1, n2, nz, m) = (sys.n1(), sys.n2(), sys.nz(), sys.n_in());
    let r = sys.r as i64;
    let total = frame.len();
    let mut tr = LureTrajectory {
        frame,
        y: Signal2D::zeros(frame.start, frame.extent.0, frame.extent.1, sys.n_out()),
        u: Vec::with_capacity(total),
        z: Vec::with_capacity(total),
        w: Vec::with_capacity(total),
        x1: Vec::with_capacity(total),
        x2: Vec::with_capacity(total),
        x1_next: Vec::with_capacity(total),
        x2_next: Vec::with_capacity(total),
    };
    let mut x1_west = vec![DVector::<f64>::zeros(n1); frame.extent.1];
    for p in 0..frame.extent.0 {
        let mut x2 = DVector::<f64>::zeros(n2);
        for q in 0..frame.extent.1 {
            let node = frame.node(p, q);
            let uin = DVector::from_fn(m, |ch, _| u.get(node.0 + r, node.1 + r, ch));
            let x1 = x1_west[q].clone();
            let mut z = &sys.g1 + &sys.c11 * &x1 + &sys.c12 * &x2 + &sys.d12 * &uin;
            let mut w = DVector::<f64>::zeros(nz);
            for j in 0..nz {
                let mut zj = z[j];
                for k in 0..j {
                    zj += sys.d11[(j, k)] * w[k];
                }
                z[j] = zj;
                w[j] = phi.apply(node, j, zj);
            }
            let y = &sys.g2 + &sys.c21 * &x1 + &sys.c22 * &x2 + &sys.d21 * &w + &sys.d22 * &uin;
            for (o, v) in y.iter().enumerate() {
                tr.y.data[[p, q, o]] = *v;
            }
            let x1n = &sys.f1 + &sys.a11 * &x1 + &sys.a12 * &x2 + &sys.b11 * &w + &sys.b12 * &uin;
            let x2n = &sys.f2 + &sys.a21 * &x1 + &sys.a22 * &x2 + &sys.b21 * &w + &sys.b22 * &uin;
            x1_west[q] = x1n.clone();
            tr.u.push(uin);
            tr.z.push(z);
            tr.w.push(w);
            tr.x1.push(x1);
            tr.x2.push(x2.clone());
            tr.x1_next.push(x1n);
            tr.x2_next.push(x2n.clone());
            x2 = x2n;
        }
    }
    Ok(tr)
}
