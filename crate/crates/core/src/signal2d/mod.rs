//! Finite-support 2-D signals, direct convolution, and the embedding and
//! flattening operators of the hybrid network.

mod norms;

pub use norms::{
    conv_adjoint_flat, conv_apply_flat, hinf_grid, toeplitz_norm, toeplitz_norm_with, ToeplitzNorm,
    ToeplitzOptions,
};

use nalgebra::DMatrix;
use ndarray::Array3;

use crate::error::{Error, Result};
use crate::model::{conv_output_shape, ConvLayerSpec, NetworkSpec};

/// A multichannel signal on `Z x Z` that is zero outside a stored rectangle.
///
/// `data[[p, q, ch]]` is the value at `(origin.0 + p, origin.1 + q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal2D {
    pub origin: (i64, i64),
    pub data: Array3<f64>,
}

impl Signal2D {
    pub fn new(origin: (i64, i64), data: Array3<f64>) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Dimension("signal entries must be finite".into()));
        }
        Ok(Self { origin, data })
    }

    pub fn zeros(origin: (i64, i64), height: usize, width: usize, channels: usize) -> Self {
        Self {
            origin,
            data: Array3::zeros((height, width, channels)),
        }
    }

    /// Unit impulse of channel `ch` at `at`.
    pub fn impulse(at: (i64, i64), channels: usize, ch: usize) -> Self {
        let mut s = Self::zeros(at, 1, 1, channels);
        s.data[[0, 0, ch]] = 1.0;
        s
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.data.dim().0
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.data.dim().1
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.data.dim().2
    }

    /// Last stored index along each axis (inclusive).
    pub fn hi(&self) -> (i64, i64) {
        (
            self.origin.0 + self.height() as i64 - 1,
            self.origin.1 + self.width() as i64 - 1,
        )
    }

    #[inline]
    pub fn contains(&self, i1: i64, i2: i64) -> bool {
        let p = i1 - self.origin.0;
        let q = i2 - self.origin.1;
        p >= 0 && q >= 0 && (p as usize) < self.height() && (q as usize) < self.width()
    }

    /// Value at `(i1, i2)`, zero outside the stored window.
    #[inline]
    pub fn get(&self, i1: i64, i2: i64, ch: usize) -> f64 {
        if self.contains(i1, i2) {
            self.data[[
                (i1 - self.origin.0) as usize,
                (i2 - self.origin.1) as usize,
                ch,
            ]]
        } else {
            0.0
        }
    }

    /// Writes the value at `(i1, i2)`; the point must lie in the stored window.
    #[inline]
    pub fn set(&mut self, i1: i64, i2: i64, ch: usize, v: f64) {
        debug_assert!(self.contains(i1, i2));
        self.data[[
            (i1 - self.origin.0) as usize,
            (i2 - self.origin.1) as usize,
            ch,
        ]] = v;
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Copy of the window `[lo, lo + (height, width))`, zero-filled where needed.
    pub fn crop(&self, lo: (i64, i64), height: usize, width: usize) -> Signal2D {
        let mut out = Signal2D::zeros(lo, height, width, self.channels());
        for p in 0..height {
            for q in 0..width {
                for ch in 0..self.channels() {
                    out.data[[p, q, ch]] = self.get(lo.0 + p as i64, lo.1 + q as i64, ch);
                }
            }
        }
        out
    }

    fn union_window(&self, other: &Signal2D) -> ((i64, i64), usize, usize) {
        let lo = (
            self.origin.0.min(other.origin.0),
            self.origin.1.min(other.origin.1),
        );
        let (a, b) = (self.hi(), other.hi());
        let hi = (a.0.max(b.0), a.1.max(b.1));
        (
            lo,
            (hi.0 - lo.0 + 1).max(0) as usize,
            (hi.1 - lo.1 + 1).max(0) as usize,
        )
    }

    /// `self - other` on the union of both windows.
    pub fn sub(&self, other: &Signal2D) -> Signal2D {
        assert_eq!(self.channels(), other.channels(), "channel mismatch");
        let (lo, h, w) = self.union_window(other);
        let mut out = Signal2D::zeros(lo, h, w, self.channels());
        for p in 0..h {
            for q in 0..w {
                let (i1, i2) = (lo.0 + p as i64, lo.1 + q as i64);
                for ch in 0..self.channels() {
                    out.data[[p, q, ch]] = self.get(i1, i2, ch) - other.get(i1, i2, ch);
                }
            }
        }
        out
    }

    /// Largest absolute pointwise difference over the union of both windows.
    pub fn max_abs_diff(&self, other: &Signal2D) -> f64 {
        self.sub(other).data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Signal2D {
        Signal2D {
            origin: self.origin,
            data: self.data.mapv(f),
        }
    }
}

/// Direct evaluation of `y(i) = [b] + sum_j K(j) u(i - j)`.
///
/// The result covers the full support `[lo - r_minus, hi + r_plus]` per axis.
/// The bias, if requested, is added on that window only.
pub fn conv_forward(layer: &ConvLayerSpec, u: &Signal2D, include_bias: bool) -> Result<Signal2D> {
    let k = &layer.kernel;
    if u.channels() != k.c_in {
        return Err(Error::Dimension(format!(
            "signal has {} channels, layer expects {}",
            u.channels(),
            k.c_in
        )));
    }
    let s = k.size();
    let (h, w) = (u.height(), u.width());
    let origin = (u.origin.0 - k.r_minus as i64, u.origin.1 - k.r_minus as i64);
    let mut y = Signal2D::zeros(origin, h + s - 1, w + s - 1, k.c_out);
    for p in 0..h {
        for q in 0..w {
            for a in 0..s {
                for b in 0..s {
                    for o in 0..k.c_out {
                        let mut acc = 0.0;
                        for i in 0..k.c_in {
                            acc += k.tap(o, i, a, b) * u.data[[p, q, i]];
                        }
                        y.data[[p + a, q + b, o]] += acc;
                    }
                }
            }
        }
    }
    if include_bias {
        for mut px in y.data.lanes_mut(ndarray::Axis(2)) {
            for (v, b) in px.iter_mut().zip(&layer.bias) {
                *v += b;
            }
        }
    }
    Ok(y)
}

/// The embedding operator: places a `height x width x c` image at origin `(1, 1)`.
pub fn embed_image(image: &Array3<f64>) -> Signal2D {
    Signal2D {
        origin: (1, 1),
        data: image.clone(),
    }
}

/// The flattening operator: enumerates `u(lo), u(lo + e1), ...` with `i1`
/// running fastest and channels innermost.
pub fn flatten_signal(sig: &Signal2D, lo: (i64, i64), height: usize, width: usize) -> Vec<f64> {
    let c = sig.channels();
    let mut v = vec![0.0; height * width * c];
    for q in 0..width {
        for p in 0..height {
            for ch in 0..c {
                v[(q * height + p) * c + ch] = sig.get(lo.0 + p as i64, lo.1 + q as i64, ch);
            }
        }
    }
    v
}

/// Inverse of [`flatten_signal`].
pub fn unflatten_signal(
    v: &[f64],
    lo: (i64, i64),
    height: usize,
    width: usize,
    channels: usize,
) -> Result<Signal2D> {
    if v.len() != height * width * channels {
        return Err(Error::Geometry(format!(
            "vector of length {} does not fill a {height}x{width}x{channels} window",
            v.len()
        )));
    }
    let mut s = Signal2D::zeros(lo, height, width, channels);
    for q in 0..width {
        for p in 0..height {
            for ch in 0..channels {
                s.data[[p, q, ch]] = v[(q * height + p) * channels + ch];
            }
        }
    }
    Ok(s)
}

/// Lower-left corner of the valid output window of the conv stack for an
/// image embedded at `(1, 1)`.
pub fn valid_window_origin(spec: &NetworkSpec) -> (i64, i64) {
    let r = spec.total_r_plus() as i64;
    (1 + r, 1 + r)
}

/// Output of the conv stack (before flattening) on the full support, with
/// biases and activations applied as in the network definition.
pub fn conv_stack_forward(spec: &NetworkSpec, image: &Array3<f64>) -> Result<Signal2D> {
    let (h, w, c) = image.dim();
    if (h, w, c) != (spec.input_height, spec.input_width, spec.input_channels) {
        return Err(Error::Geometry(format!(
            "image is {h}x{w}x{c}, network expects {}x{}x{}",
            spec.input_height, spec.input_width, spec.input_channels
        )));
    }
    let act = spec.activation;
    let l = spec.conv_layers.len();
    let mut u = embed_image(image);
    for (k, layer) in spec.conv_layers.iter().enumerate() {
        let y = conv_forward(layer, &u, true)?;
        u = if k + 1 < l || spec.is_hybrid() {
            y.map(|v| act.apply(v))
        } else {
            y
        };
    }
    Ok(u)
}

/// Evaluates the network on an image.
///
/// Activations act between layers and also between the conv stack and the
/// first dense layer, but not after the last layer.
pub fn network_forward(spec: &NetworkSpec, image: &Array3<f64>) -> Result<Vec<f64>> {
    let y = conv_stack_forward(spec, image)?;
    let (h, w, _) = conv_output_shape(spec)?;
    let mut v = flatten_signal(&y, valid_window_origin(spec), h, w);
    let n = spec.dense_layers.len();
    for (k, layer) in spec.dense_layers.iter().enumerate() {
        let x = nalgebra::DVector::from_vec(v);
        let out = &layer.weight * x + &layer.bias;
        v = if k + 1 < n {
            out.iter().map(|&z| spec.activation.apply(z)).collect()
        } else {
            out.iter().copied().collect()
        };
    }
    Ok(v)
}

/// Default element budget for [`toeplitz_matrix`].
pub const TOEPLITZ_MAX_ELEMENTS: usize = 64 << 20;

/// The matrix of the convolution acting on inputs supported on `{1..d1}^2`,
/// with rows indexing the full output support. Both sides use the flattening
/// order (`i1` fastest, channels innermost).
pub fn toeplitz_matrix(layer: &ConvLayerSpec, d1: usize) -> Result<DMatrix<f64>> {
    toeplitz_matrix_with_budget(layer, d1, TOEPLITZ_MAX_ELEMENTS)
}

pub fn toeplitz_matrix_with_budget(
    layer: &ConvLayerSpec,
    d1: usize,
    max_elements: usize,
) -> Result<DMatrix<f64>> {
    if d1 == 0 {
        return Err(Error::Geometry("d1 must be positive".into()));
    }
    let k = &layer.kernel;
    let s = k.size();
    let dout = d1 + s - 1;
    let rows = dout * dout * k.c_out;
    let cols = d1 * d1 * k.c_in;
    if rows.saturating_mul(cols) > max_elements {
        return Err(Error::Geometry(format!(
            "Toeplitz matrix {rows}x{cols} exceeds the element budget {max_elements}"
        )));
    }
    let mut m = DMatrix::zeros(rows, cols);
    for q in 0..d1 {
        for p in 0..d1 {
            for i in 0..k.c_in {
                let col = (q * d1 + p) * k.c_in + i;
                for a in 0..s {
                    for b in 0..s {
                        let row0 = ((q + b) * dout + (p + a)) * k.c_out;
                        for o in 0..k.c_out {
                            m[(row0 + o, col)] = k.tap(o, i, a, b);
                        }
                    }
                }
            }
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Activation, DenseLayerSpec, Kernel2D};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_signal(
        rng: &mut ChaCha8Rng,
        origin: (i64, i64),
        h: usize,
        w: usize,
        c: usize,
    ) -> Signal2D {
        let data = Array3::from_shape_fn((h, w, c), |_| rng.sample(StandardNormal));
        Signal2D { origin, data }
    }

    // Quadruple loop written from the definition, indexed by output point.
    fn reference_conv(layer: &ConvLayerSpec, u: &Signal2D) -> Signal2D {
        let k = &layer.kernel;
        let (rm, rp) = (k.r_minus as i64, k.r_plus as i64);
        let lo = (u.origin.0 - rm, u.origin.1 - rm);
        let hi = (u.hi().0 + rp, u.hi().1 + rp);
        let mut y = Signal2D::zeros(
            lo,
            (hi.0 - lo.0 + 1) as usize,
            (hi.1 - lo.1 + 1) as usize,
            k.c_out,
        );
        for i1 in lo.0..=hi.0 {
            for i2 in lo.1..=hi.1 {
                for o in 0..k.c_out {
                    let mut acc = 0.0;
                    for j1 in -rm..=rp {
                        for j2 in -rm..=rp {
                            for c in 0..k.c_in {
                                let t = k.tap(o, c, (j1 + rm) as usize, (j2 + rm) as usize);
                                acc += t * u.get(i1 - j1, i2 - j2, c);
                            }
                        }
                    }
                    y.set(i1, i2, o, acc);
                }
            }
        }
        y
    }

    #[test]
    fn single_tap_scales_impulse() {
        let layer = ConvLayerSpec::single_tap(2.0);
        let y = conv_forward(&layer, &Signal2D::impulse((1, 1), 1, 0), false).unwrap();
        assert_eq!(y.origin, (1, 1));
        assert_eq!(y.get(1, 1, 0), 2.0);
        assert_eq!(y.norm_sq(), 4.0);
    }

    #[test]
    fn impulse_response_is_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k = Kernel2D::random(&mut rng, 1, 1, 1, 1);
        let layer = ConvLayerSpec::unbiased(k.clone());
        let y = conv_forward(&layer, &Signal2D::impulse((0, 0), 1, 0), false).unwrap();
        for j1 in -1..=1i64 {
            for j2 in -1..=1i64 {
                assert_eq!(
                    y.get(j1, j2, 0),
                    k.tap(0, 0, (j1 + 1) as usize, (j2 + 1) as usize)
                );
            }
        }
    }

    #[test]
    fn matches_quadruple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (rm, rp, ci, co) in [(0, 2, 1, 1), (1, 1, 2, 3), (2, 0, 3, 2), (1, 2, 2, 2)] {
            let k = Kernel2D::random(&mut rng, co, ci, rm, rp);
            let layer = ConvLayerSpec::unbiased(k);
            let u = random_signal(&mut rng, (-2, 3), 8, 8, ci);
            let y = conv_forward(&layer, &u, false).unwrap();
            let r = reference_conv(&layer, &u);
            assert_eq!(y.origin, r.origin);
            assert!(y.max_abs_diff(&r) <= 1e-12);
        }
    }

    #[test]
    fn flatten_order_follows_first_index() {
        let mut s = Signal2D::zeros((1, 1), 2, 2, 1);
        s.set(2, 1, 0, 1.0);
        assert_eq!(flatten_signal(&s, (1, 1), 2, 2), vec![0.0, 1.0, 0.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r = random_signal(&mut rng, (4, -1), 3, 5, 2);
        let v = flatten_signal(&r, r.origin, 3, 5);
        assert_eq!(unflatten_signal(&v, r.origin, 3, 5, 2).unwrap(), r);
    }

    #[test]
    fn toeplitz_columns_are_impulse_responses() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let layer = ConvLayerSpec::unbiased(Kernel2D::random(&mut rng, 1, 1, 0, 2));
        let m = toeplitz_matrix(&layer, 1).unwrap();
        assert_eq!(m.shape(), (9, 1));
        let mut taps: Vec<f64> = layer.kernel.taps().to_vec();
        let mut col: Vec<f64> = m.column(0).iter().copied().collect();
        taps.sort_by(f64::total_cmp);
        col.sort_by(f64::total_cmp);
        assert_eq!(taps, col);

        let layer = ConvLayerSpec::unbiased(Kernel2D::random(&mut rng, 2, 3, 1, 1));
        let d1 = 4;
        let m = toeplitz_matrix(&layer, d1).unwrap();
        let u = random_signal(&mut rng, (1, 1), d1, d1, 3);
        let x = nalgebra::DVector::from_vec(flatten_signal(&u, (1, 1), d1, d1));
        let y = conv_forward(&layer, &u, false).unwrap();
        let yv = flatten_signal(&y, y.origin, d1 + 2, d1 + 2);
        let diff = (&m * x - nalgebra::DVector::from_vec(yv)).amax();
        assert!(diff < 1e-12);
    }

    #[test]
    fn identity_network_returns_input() {
        let mut k = Kernel2D::zeros(2, 2, 0, 0);
        k.set_tap(0, 0, 0, 0, 1.0);
        k.set_tap(1, 1, 0, 0, 1.0);
        let spec = NetworkSpec::new(
            (3, 3, 2),
            Activation::Relu,
            vec![ConvLayerSpec::unbiased(k)],
            vec![DenseLayerSpec::unbiased(DMatrix::identity(18, 18))],
        )
        .unwrap();
        let img = Array3::from_shape_fn((3, 3, 2), |(p, q, c)| (p * 7 + q * 3 + c) as f64);
        let out = network_forward(&spec, &img).unwrap();
        let expected = flatten_signal(&embed_image(&img), (1, 1), 3, 3);
        assert_eq!(out, expected);
    }

    #[test]
    fn zero_image_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let spec = NetworkSpec::new(
            (6, 6, 1),
            Activation::Relu,
            vec![
                ConvLayerSpec::unbiased(Kernel2D::random(&mut rng, 2, 1, 1, 1)),
                ConvLayerSpec::unbiased(Kernel2D::random(&mut rng, 2, 2, 0, 1)),
            ],
            vec![DenseLayerSpec::unbiased(DMatrix::from_element(3, 18, 0.3))],
        )
        .unwrap();
        let out = network_forward(&spec, &Array3::zeros((6, 6, 1))).unwrap();
        assert!(out.iter().all(|v| *v == 0.0));
    }
}
