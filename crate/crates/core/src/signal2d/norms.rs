//! Norm baselines: the spectral norm of the finite Toeplitz matrix and the
//! maximum singular value of the transfer function on a frequency grid.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::toeplitz_matrix;
use crate::error::{Error, Result};
use crate::model::ConvLayerSpec;

/// Applies the convolution to a flattened `d1 x d1 x c_in` input and returns
/// the flattened full-support output (side `d1 + r_minus + r_plus`).
pub fn conv_apply_flat(layer: &ConvLayerSpec, d1: usize, x: &[f64]) -> Vec<f64> {
    let k = &layer.kernel;
    let s = k.size();
    let dout = d1 + s - 1;
    let (ci, co) = (k.c_in, k.c_out);
    let mut y = vec![0.0; dout * dout * co];
    for q in 0..d1 {
        for p in 0..d1 {
            let xin = &x[(q * d1 + p) * ci..(q * d1 + p + 1) * ci];
            for b in 0..s {
                for a in 0..s {
                    let row0 = ((q + b) * dout + (p + a)) * co;
                    for o in 0..co {
                        let mut acc = 0.0;
                        for (i, xv) in xin.iter().enumerate() {
                            acc += k.tap(o, i, a, b) * xv;
                        }
                        y[row0 + o] += acc;
                    }
                }
            }
        }
    }
    y
}

/// Transpose of [`conv_apply_flat`].
pub fn conv_adjoint_flat(layer: &ConvLayerSpec, d1: usize, y: &[f64]) -> Vec<f64> {
    let k = &layer.kernel;
    let s = k.size();
    let dout = d1 + s - 1;
    let (ci, co) = (k.c_in, k.c_out);
    let mut x = vec![0.0; d1 * d1 * ci];
    for q in 0..d1 {
        for p in 0..d1 {
            let xo = &mut x[(q * d1 + p) * ci..(q * d1 + p + 1) * ci];
            for b in 0..s {
                for a in 0..s {
                    let yin = &y[((q + b) * dout + (p + a)) * co..][..co];
                    for (i, xv) in xo.iter_mut().enumerate() {
                        let mut acc = 0.0;
                        for (o, yv) in yin.iter().enumerate() {
                            acc += k.tap(o, i, a, b) * yv;
                        }
                        *xv += acc;
                    }
                }
            }
        }
    }
    x
}

/// Settings for [`toeplitz_norm_with`].
#[derive(Debug, Clone)]
pub struct ToeplitzOptions {
    /// Relative tolerance on the Ritz value of `M^T M`.
    pub tol: f64,
    pub max_iter: usize,
    pub restarts: usize,
    pub seed: u64,
    /// Problems with at most this many columns use a dense eigensolve.
    pub dense_cutoff: usize,
}

impl Default for ToeplitzOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 400,
            restarts: 3,
            seed: 0x5eed,
            dense_cutoff: 400,
        }
    }
}

/// Result of a Toeplitz norm computation.
#[derive(Debug, Clone, Copy)]
pub struct ToeplitzNorm {
    /// Best lower estimate of the spectral norm.
    pub value: f64,
    /// `value` plus the final Lanczos residual bound (equal to `value` for
    /// the dense path).
    pub upper: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Number of eigenvalues of the symmetric tridiagonal `(alpha, beta)` below `x`.
fn sturm_count(alpha: &[f64], beta: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut d = 1.0;
    for i in 0..alpha.len() {
        let b2 = if i == 0 {
            0.0
        } else {
            beta[i - 1] * beta[i - 1]
        };
        d = alpha[i] - x - if i == 0 { 0.0 } else { b2 / d };
        if d == 0.0 {
            d = -f64::EPSILON * (alpha[i].abs() + x.abs() + 1.0);
        }
        if d < 0.0 {
            count += 1;
        }
    }
    count
}

fn tridiag_max_eig(alpha: &[f64], beta: &[f64]) -> f64 {
    let k = alpha.len();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..k {
        let r = if i > 0 { beta[i - 1].abs() } else { 0.0 }
            + if i + 1 < k { beta[i].abs() } else { 0.0 };
        lo = lo.min(alpha[i] - r);
        hi = hi.max(alpha[i] + r);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if sturm_count(alpha, beta, mid) >= k {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Last component of the normalized eigenvector of the tridiagonal for
/// eigenvalue `theta`, by two steps of inverse iteration.
fn tridiag_last_component(alpha: &[f64], beta: &[f64], theta: f64) -> f64 {
    let k = alpha.len();
    let shift = theta + 1e-12 * (theta.abs() + 1.0);
    let mut v = vec![1.0; k];
    for _ in 0..3 {
        // Thomas algorithm on (T - shift I) x = v.
        let mut c = vec![0.0; k];
        let mut d = vec![0.0; k];
        let mut denom = alpha[0] - shift;
        if denom == 0.0 {
            denom = 1e-300;
        }
        c[0] = if k > 1 { beta[0] / denom } else { 0.0 };
        d[0] = v[0] / denom;
        for i in 1..k {
            let mut m = alpha[i] - shift - beta[i - 1] * c[i - 1];
            if m == 0.0 {
                m = 1e-300;
            }
            c[i] = if i + 1 < k { beta[i] / m } else { 0.0 };
            d[i] = (v[i] - beta[i - 1] * d[i - 1]) / m;
        }
        let mut x = vec![0.0; k];
        x[k - 1] = d[k - 1];
        for i in (0..k - 1).rev() {
            x[i] = d[i] - c[i] * x[i + 1];
        }
        let n = x.iter().map(|t| t * t).sum::<f64>().sqrt();
        if !n.is_finite() || n == 0.0 {
            break;
        }
        v = x.iter().map(|t| t / n).collect();
    }
    v[k - 1]
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Largest eigenvalue of a symmetric positive semidefinite operator by
/// Lanczos with full reorthogonalization. Returns `(theta, residual, converged, steps)`.
fn lanczos_max(
    apply: &dyn Fn(&[f64]) -> Vec<f64>,
    start: Vec<f64>,
    max_iter: usize,
    tol: f64,
) -> (f64, f64, bool, usize) {
    let n = start.len();
    let nrm = dot(&start, &start).sqrt();
    let mut basis: Vec<Vec<f64>> = vec![start.iter().map(|v| v / nrm).collect()];
    let mut alpha = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut theta = 0.0;
    let mut stalled = 0;
    let steps = max_iter.min(n);
    for j in 0..steps {
        let mut w = apply(&basis[j]);
        let a = dot(&w, &basis[j]);
        alpha.push(a);
        for _ in 0..2 {
            for v in &basis {
                let c = dot(&w, v);
                w.iter_mut().zip(v).for_each(|(x, y)| *x -= c * y);
            }
        }
        let b = dot(&w, &w).sqrt();
        let new_theta = tridiag_max_eig(&alpha, &beta);
        let s_last = tridiag_last_component(&alpha, &beta, new_theta);
        let resid = b * s_last.abs();
        let scale = new_theta.abs().max(f64::MIN_POSITIVE);
        if new_theta - theta <= 1e-14 * scale {
            stalled += 1;
        } else {
            stalled = 0;
        }
        theta = new_theta;
        if b <= 1e-14 * scale || resid <= tol * scale || stalled >= 3 {
            return (theta, resid, true, j + 1);
        }
        beta.push(b);
        basis.push(w.iter().map(|x| x / b).collect());
    }
    let resid = beta.last().copied().unwrap_or(0.0)
        * tridiag_last_component(&alpha, &beta[..alpha.len() - 1], theta).abs();
    (theta, resid, false, steps)
}

/// Spectral norm of the Toeplitz matrix of `layer` on `d1 x d1` inputs.
pub fn toeplitz_norm(layer: &ConvLayerSpec, d1: usize) -> Result<f64> {
    let r = toeplitz_norm_with(layer, d1, &ToeplitzOptions::default())?;
    if !r.converged {
        return Err(Error::Solver(format!(
            "Toeplitz norm did not converge: bracket [{}, {}]",
            r.value, r.upper
        )));
    }
    Ok(r.value)
}

pub fn toeplitz_norm_with(
    layer: &ConvLayerSpec,
    d1: usize,
    opts: &ToeplitzOptions,
) -> Result<ToeplitzNorm> {
    if d1 == 0 {
        return Err(Error::Geometry("d1 must be positive".into()));
    }
    let n = d1 * d1 * layer.kernel.c_in;
    if n <= opts.dense_cutoff {
        let m = toeplitz_matrix(layer, d1)?;
        let g: DMatrix<f64> = m.transpose() * &m;
        let ev = SymmetricEigen::new(g).eigenvalues;
        let top = ev.iter().cloned().fold(0.0, f64::max).max(0.0).sqrt();
        return Ok(ToeplitzNorm {
            value: top,
            upper: top,
            converged: true,
            iterations: 0,
        });
    }
    let apply = |x: &[f64]| conv_adjoint_flat(layer, d1, &conv_apply_flat(layer, d1, x));
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best = ToeplitzNorm {
        value: 0.0,
        upper: 0.0,
        converged: false,
        iterations: 0,
    };
    for _ in 0..opts.restarts.max(1) {
        let start: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let (theta, resid, conv, it) = lanczos_max(&apply, start, opts.max_iter, opts.tol);
        let value = theta.max(0.0).sqrt();
        best.iterations += it;
        if value > best.value {
            best.value = value;
            best.upper = (theta + resid).max(0.0).sqrt();
        }
        best.converged |= conv;
    }
    Ok(best)
}

/// Largest singular value of `x` (a `rows x cols` complex matrix stored row-major).
fn complex_sigma_max(g: &[Complex64], rows: usize, cols: usize) -> f64 {
    if rows == 1 || cols == 1 {
        return g.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    }
    // Real embedding of G^H G.
    let mut h = vec![Complex64::new(0.0, 0.0); cols * cols];
    for i in 0..cols {
        for j in i..cols {
            let mut acc = Complex64::new(0.0, 0.0);
            for r in 0..rows {
                acc += g[r * cols + i].conj() * g[r * cols + j];
            }
            h[i * cols + j] = acc;
            h[j * cols + i] = acc.conj();
        }
    }
    let m = DMatrix::from_fn(2 * cols, 2 * cols, |i, j| {
        let z = h[(i % cols) * cols + (j % cols)];
        match (i < cols, j < cols) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        }
    });
    let ev = SymmetricEigen::new(m).eigenvalues;
    ev.iter().cloned().fold(0.0, f64::max).max(0.0).sqrt()
}

/// Maximum of `sigma_max(G(e^{i theta1}, e^{i theta2}))` over a uniform
/// `grid_n x grid_n` grid of the torus. A lower bound on the ℓ2-gain.
pub fn hinf_grid(layer: &ConvLayerSpec, grid_n: usize) -> f64 {
    assert!(grid_n >= 2, "grid_n must be at least 2");
    let k = &layer.kernel;
    let s = k.size();
    let (co, ci) = (k.c_out, k.c_in);
    let step = 2.0 * std::f64::consts::PI / grid_n as f64;
    let phases: Vec<Vec<Complex64>> = (0..grid_n)
        .map(|t| {
            (0..s)
                .map(|a| Complex64::from_polar(1.0, -step * (t * a) as f64))
                .collect()
        })
        .collect();
    (0..grid_n)
        .into_par_iter()
        .map(|t1| {
            let e1 = &phases[t1];
            // Partial sums over j1 for each j2.
            let mut part = vec![Complex64::new(0.0, 0.0); s * co * ci];
            for b in 0..s {
                for o in 0..co {
                    for i in 0..ci {
                        let mut acc = Complex64::new(0.0, 0.0);
                        for (a, ph) in e1.iter().enumerate() {
                            acc += ph * k.tap(o, i, a, b);
                        }
                        part[(b * co + o) * ci + i] = acc;
                    }
                }
            }
            let mut g = vec![Complex64::new(0.0, 0.0); co * ci];
            let mut best = 0.0f64;
            for e2 in &phases {
                g.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
                for (b, ph) in e2.iter().enumerate() {
                    for (z, p) in g.iter_mut().zip(&part[b * co * ci..(b + 1) * co * ci]) {
                        *z += ph * p;
                    }
                }
                best = best.max(complex_sigma_max(&g, co, ci));
            }
            best
        })
        .reduce(|| 0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Kernel2D;

    fn averaging() -> ConvLayerSpec {
        let mut k = Kernel2D::zeros(1, 1, 1, 1);
        for a in 0..3 {
            for b in 0..3 {
                k.set_tap(0, 0, a, b, 1.0 / 9.0);
            }
        }
        ConvLayerSpec::unbiased(k)
    }

    #[test]
    fn adjoint_is_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let layer = ConvLayerSpec::unbiased(Kernel2D::random(&mut rng, 2, 3, 1, 1));
        let d1 = 5;
        let x: Vec<f64> = (0..d1 * d1 * 3)
            .map(|_| rng.sample(StandardNormal))
            .collect();
        let y: Vec<f64> = (0..(d1 + 2) * (d1 + 2) * 2)
            .map(|_| rng.sample(StandardNormal))
            .collect();
        let lhs = dot(&conv_apply_flat(&layer, d1, &x), &y);
        let rhs = dot(&x, &conv_adjoint_flat(&layer, d1, &y));
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn single_tap_norms() {
        let layer = ConvLayerSpec::single_tap(-3.5);
        for d1 in [1, 7, 30] {
            assert!((toeplitz_norm(&layer, d1).unwrap() - 3.5).abs() < 1e-9);
        }
        assert!((hinf_grid(&layer, 8) - 3.5).abs() < 1e-12);
    }

    #[test]
    fn averaging_kernel_norms() {
        let layer = averaging();
        assert!((hinf_grid(&layer, 64) - 1.0).abs() < 1e-12);
        let t = toeplitz_norm(&layer, 32).unwrap();
        assert!(t <= 1.0 + 1e-12 && t >= 0.99, "toeplitz {t}");
    }

    #[test]
    fn lanczos_agrees_with_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let layer = ConvLayerSpec::unbiased(Kernel2D::random(&mut rng, 2, 2, 1, 1));
        let dense = toeplitz_norm_with(&layer, 8, &ToeplitzOptions::default()).unwrap();
        let opts = ToeplitzOptions {
            dense_cutoff: 0,
            ..Default::default()
        };
        let lz = toeplitz_norm_with(&layer, 8, &opts).unwrap();
        assert!(lz.converged);
        assert!((dense.value - lz.value).abs() < 1e-9 * dense.value);
    }

    #[test]
    fn grid_is_shift_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let k = Kernel2D::random(&mut rng, 2, 2, 1, 1);
        let a = ConvLayerSpec::unbiased(k.clone());
        let mut shifted = Kernel2D::zeros(2, 2, 0, 2);
        for o in 0..2 {
            for i in 0..2 {
                for p in 0..3 {
                    for q in 0..3 {
                        shifted.set_tap(o, i, p, q, k.tap(o, i, p, q));
                    }
                }
            }
        }
        let b = ConvLayerSpec::unbiased(shifted);
        assert!((hinf_grid(&a, 64) - hinf_grid(&b, 64)).abs() < 1e-12);
    }
}
