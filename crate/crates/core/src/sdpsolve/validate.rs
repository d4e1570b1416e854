//! Independent checks of Lipschitz certificates.
//!
//! Nothing here reuses the LMI builders: the dissipation matrix is rebuilt
//! from the system matrices with dense algebra, the projection basis is
//! checked for invariance, and the inequality the LMI encodes is replayed
//! node by node along simulated trajectory pairs.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lmi::{certified_system, driven_roesser, LipschitzCertificate};
use crate::lure::{
    assemble_lure_with, lure_forward, IncrementalNonlinearity, LureSystem, RealizationKind,
};
use crate::model::{conv_output_shape, flatten_dims, NetworkSpec};
use crate::signal2d::{
    conv_stack_forward, embed_image, flatten_signal, network_forward, valid_window_origin,
};

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationOptions {
    pub trials: usize,
    pub seed: u64,
    /// Relative eigenvalue slack for LMIs and sign constraints.
    pub lmi_tol: f64,
    /// Relative slack for the pointwise and summed dissipation inequalities.
    pub dissipation_tol: f64,
    /// Relative slack on sampled gains.
    pub gain_tol: f64,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self {
            trials: 100,
            seed: 0,
            lmi_tol: 1e-7,
            dissipation_tol: 1e-6,
            gain_tol: 1e-4,
        }
    }
}

/// A named scalar check with its normalized value; it passes when `value >= -tol`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tol: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub passed: bool,
    pub gamma: f64,
    pub checks: Vec<Check>,
    /// Most negative normalized pointwise residual over all trials and nodes.
    pub worst_pointwise: f64,
    pub worst_trial: usize,
    pub worst_node: (i64, i64),
    /// Most negative normalized summed supply over all trials.
    pub worst_summed: f64,
    /// Largest `|dy| / |du|` observed.
    pub max_sampled_gain: f64,
    pub trials: usize,
}

impl ValidationReport {
    pub fn failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }

    /// `Ok(())` when every check passed, otherwise a validation error naming them.
    pub fn into_result(self) -> Result<Self> {
        if self.passed {
            return Ok(self);
        }
        let names: Vec<String> = self
            .failures()
            .iter()
            .map(|c| format!("{} ({:.3e})", c.name, c.value))
            .collect();
        Err(Error::Validation(names.join(", ")))
    }
}

/// Runs all checks with default tolerances.
pub fn validate_certificate(
    spec: &NetworkSpec,
    cert: &LipschitzCertificate,
    trials: usize,
    seed: u64,
) -> Result<ValidationReport> {
    validate_certificate_with(
        spec,
        cert,
        &ValidationOptions {
            trials,
            seed,
            ..Default::default()
        },
    )
}

pub fn validate_certificate_with(
    spec: &NetworkSpec,
    cert: &LipschitzCertificate,
    opts: &ValidationOptions,
) -> Result<ValidationReport> {
    spec.validate()?;
    if cert.hybrid != spec.is_hybrid() {
        return Err(Error::Validation(format!(
            "certificate is for a {} network, the model is {}",
            kind_word(cert.hybrid),
            kind_word(spec.is_hybrid())
        )));
    }
    let kind = cert.realization_kind()?;
    let sys = certified_system(spec, kind)?;
    let (n1, n2, nz, m, p) = (sys.n1(), sys.n2(), sys.nz(), sys.n_in(), sys.n_out());
    let dims_ok = cert.p1.shape() == (n1, n1)
        && cert.p2.shape() == (n2, n2)
        && cert.lambda_c.len() == nz
        && cert.t.as_ref().is_none_or(|t| t.nrows() == n1 + n2)
        && cert.q_c.as_ref().is_none_or(|q| q.shape() == (p, p))
        && cert.hybrid == cert.q_c.is_some()
        && cert.lambda_dense.len() == spec.dense_layers.len().saturating_sub(1);
    if !dims_ok {
        return Err(Error::Validation(
            "certificate matrices do not match the model's realization".into(),
        ));
    }

    let mut checks = Vec::new();
    let mut push = |name: &str, value: f64, tol: f64| {
        checks.push(Check {
            name: name.to_string(),
            value,
            tol,
            passed: value.is_finite() && value >= -tol,
        })
    };
    let tol = opts.lmi_tol;

    let g2 = cert.gamma_sq;
    push("gamma_sq >= 0", g2, 0.0);
    let expected_gamma = if cert.hybrid {
        (g2 / (2.0 - cert.chain_tail)).sqrt()
    } else {
        g2.sqrt()
    };
    push(
        "gamma matches gamma_sq",
        -(cert.gamma - expected_gamma).abs() / expected_gamma.max(1e-300),
        1e-12,
    );
    push("P1 >= 0", min_eig_rel(&cert.p1), tol);
    push("P2 >= 0", min_eig_rel(&cert.p2), tol);
    push("Lambda_C >= 0", min_rel(&cert.lambda_c), tol);
    for (k, l) in cert.lambda_dense.iter().enumerate() {
        push(&format!("Lambda_{} >= 0", k + 1), min_rel(l), tol);
    }
    if let Some(q) = &cert.q_c {
        push("Q_C <= 0", min_eig_rel(&(-q)), tol);
    }

    if let Some(t) = &cert.t {
        push(
            "projection basis spans the reachable states",
            -reachability_defect(&sys, t),
            1e-8,
        );
    }
    let theta = theta(n1 + n2, nz + m, cert.t.as_ref());
    let lmi = dissipation_matrix(&sys, cert);
    let reduced = theta.transpose() * &lmi * &theta;
    push("dissipation LMI", min_eig_rel(&reduced), tol);
    let lmi_scale = reduced.amax().max(1.0);

    if cert.hybrid {
        let (d_l, _) = flatten_dims(spec)?;
        let chain = chain_matrix(spec, cert, d_l * d_l);
        push("dense chain LMI", min_eig_rel(&chain), tol);
    }

    let sampler = Sampler::new(spec, cert, kind)?;
    let results: Vec<Result<TrialResult>> = (0..opts.trials)
        .into_par_iter()
        .map(|k| sampler.trial(opts.seed, k, lmi_scale))
        .collect();
    let mut worst_pointwise = f64::INFINITY;
    let mut worst_trial = 0;
    let mut worst_node = (0, 0);
    let mut worst_summed = f64::INFINITY;
    let mut worst_chain = f64::INFINITY;
    let mut max_gain = 0.0f64;
    for (k, r) in results.into_iter().enumerate() {
        let r = r?;
        if r.pointwise < worst_pointwise {
            worst_pointwise = r.pointwise;
            worst_trial = k;
            worst_node = r.node;
        }
        worst_summed = worst_summed.min(r.summed);
        worst_chain = worst_chain.min(r.chain);
        max_gain = max_gain.max(r.gain);
    }
    if opts.trials > 0 {
        push(
            "pointwise dissipation",
            worst_pointwise,
            opts.dissipation_tol,
        );
        push("summed supply", worst_summed, opts.dissipation_tol);
        if cert.hybrid {
            push("dense chain supply", worst_chain, opts.dissipation_tol);
        }
        push(
            "sampled gain <= gamma",
            (cert.gamma * (1.0 + opts.gain_tol) - max_gain) / cert.gamma.max(1e-300),
            0.0,
        );
    }
    let passed = checks.iter().all(|c| c.passed);
    Ok(ValidationReport {
        passed,
        gamma: cert.gamma,
        checks,
        worst_pointwise: if opts.trials > 0 {
            worst_pointwise
        } else {
            0.0
        },
        worst_trial,
        worst_node,
        worst_summed: if opts.trials > 0 { worst_summed } else { 0.0 },
        max_sampled_gain: max_gain,
        trials: opts.trials,
    })
}

/// Largest incremental gain `|f(u2) - f(u1)| / |u2 - u1|` over `pairs` random
/// input pairs, with `f` the network output (the full conv-stack output for
/// networks without dense layers).
pub fn sample_incremental_gain(spec: &NetworkSpec, pairs: usize, seed: u64) -> Result<f64> {
    let gains: Vec<Result<f64>> = (0..pairs)
        .into_par_iter()
        .map(|k| {
            let (u1, u2) = input_pair(spec, seed, k);
            let du = diff_norm(u1.iter(), u2.iter());
            let dy = output_distance(spec, &u1, &u2)?;
            Ok(if du > 0.0 { dy / du } else { 0.0 })
        })
        .collect();
    gains.into_iter().try_fold(0.0f64, |a, g| Ok(a.max(g?)))
}

fn kind_word(hybrid: bool) -> &'static str {
    if hybrid {
        "hybrid"
    } else {
        "convolution-only"
    }
}

fn min_rel(v: &[f64]) -> f64 {
    let scale = v.iter().fold(1.0f64, |a, x| a.max(x.abs()));
    v.iter().fold(f64::INFINITY, |a, &x| a.min(x)).min(0.0) / scale
}

/// `lambda_min(M) / max(1, max|M_ij|)`, or `0` for an empty matrix.
fn min_eig_rel(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    if m.iter().any(|v| !v.is_finite()) {
        return f64::NEG_INFINITY;
    }
    let s = 0.5 * (m + m.transpose());
    let asym = (m - m.transpose()).amax();
    let scale = s.amax().max(1.0);
    if asym > 1e-9 * scale {
        return f64::NEG_INFINITY;
    }
    let lmin = SymmetricEigen::new(s).eigenvalues.min();
    lmin / scale
}

/// Relative size of the part of the impulse responses `X(a, b)` of the state
/// that leaves `span(T)`, with `X(1, 0) = B1hat`, `X(0, 1) = B2hat` and
/// `X(a, b) = A10 X(a-1, b) + A01 X(a, b-1)`. Also penalizes non-orthonormal `T`.
fn reachability_defect(sys: &LureSystem, t: &DMatrix<f64>) -> f64 {
    let k = t.ncols();
    let mut defect = (t.transpose() * t - DMatrix::identity(k, k)).amax();
    let (a10, a01, b1, b2) = driven_roesser(sys).lifted();
    let n = t.nrows();
    let outside = |x: &DMatrix<f64>| {
        let scale = x.amax();
        if scale == 0.0 {
            0.0
        } else {
            (x - t * (t.transpose() * x)).amax() / scale
        }
    };
    // prev[a] = X(a, d - a) on anti-diagonal d
    let mut prev = vec![b2, b1];
    for x in &prev {
        defect = defect.max(outside(x));
    }
    for d in 2..=2 * n + 2 {
        let next: Vec<DMatrix<f64>> = (0..=d)
            .map(|a| {
                let mut x = DMatrix::zeros(n, prev[0].ncols());
                if a >= 1 {
                    x += &a10 * &prev[a - 1];
                }
                if a < d {
                    x += &a01 * &prev[a];
                }
                x
            })
            .collect();
        let peak = next.iter().map(|x| x.amax()).fold(0.0, f64::max);
        if peak == 0.0 {
            break;
        }
        for x in &next {
            defect = defect.max(outside(x));
        }
        prev = next.into_iter().map(|x| x / peak).collect();
    }
    defect
}

fn theta(nx: usize, rest: usize, t: Option<&DMatrix<f64>>) -> DMatrix<f64> {
    let k = t.map_or(nx, |t| t.ncols());
    let mut th = DMatrix::zeros(nx + rest, k + rest);
    match t {
        Some(t) => th.view_mut((0, 0), (nx, k)).copy_from(t),
        None => th.view_mut((0, 0), (nx, nx)).fill_with_identity(),
    }
    th.view_mut((nx, k), (rest, rest)).fill_with_identity();
    th
}

/// `xi^T M xi` equals `V(x) - V(x+) + s(u, y) + s_w(z, w)` for
/// `xi = (x1, x2, w, u)`.
fn dissipation_matrix(sys: &LureSystem, cert: &LipschitzCertificate) -> DMatrix<f64> {
    let (n1, n2, nz, m) = (sys.n1(), sys.n2(), sys.nz(), sys.n_in());
    let n = n1 + n2 + nz + m;
    let hcat = |blocks: [&DMatrix<f64>; 4]| {
        let mut out = DMatrix::zeros(blocks[0].nrows(), n);
        let mut c = 0;
        for b in blocks {
            out.view_mut((0, c), (b.nrows(), b.ncols())).copy_from(b);
            c += b.ncols();
        }
        out
    };
    let x1n = hcat([&sys.a11, &sys.a12, &sys.b11, &sys.b12]);
    let x2n = hcat([&sys.a21, &sys.a22, &sys.b21, &sys.b22]);
    let zr = hcat([&sys.c11, &sys.c12, &sys.d11, &sys.d12]);
    let yr = hcat([&sys.c21, &sys.c22, &sys.d21, &sys.d22]);
    let mut mat = DMatrix::zeros(n, n);
    mat.view_mut((0, 0), (n1, n1)).copy_from(&cert.p1);
    mat.view_mut((n1, n1), (n2, n2)).copy_from(&cert.p2);
    mat -= x1n.transpose() * &cert.p1 * &x1n + x2n.transpose() * &cert.p2 * &x2n;
    for k in 0..m {
        mat[(n - m + k, n - m + k)] += cert.gamma_sq;
    }
    let q = cert
        .q_c
        .clone()
        .unwrap_or_else(|| -DMatrix::identity(yr.nrows(), yr.nrows()));
    mat += yr.transpose() * q * &yr;
    // 2 w' L w - w' L z - z' L w
    let lam = DMatrix::from_diagonal(&DVector::from_column_slice(&cert.lambda_c));
    let mut wsel = DMatrix::zeros(nz, n);
    wsel.view_mut((0, n1 + n2), (nz, nz)).fill_with_identity();
    let lw = &lam * &wsel;
    let cross = wsel.transpose() * &lam * &zr;
    mat += wsel.transpose() * &lw * 2.0 - &cross - cross.transpose();
    mat
}

/// The dense chain matrix in unscaled coordinates.
fn chain_matrix(spec: &NetworkSpec, cert: &LipschitzCertificate, pixels: usize) -> DMatrix<f64> {
    let q = cert.q_c.as_ref().expect("hybrid certificate has Q_C");
    let c = q.nrows();
    let ws: Vec<&DMatrix<f64>> = spec.dense_layers.iter().map(|d| &d.weight).collect();
    let mut sizes = vec![pixels * c];
    sizes.extend(ws.iter().map(|w| w.nrows()));
    let offs: Vec<usize> = sizes
        .iter()
        .scan(0, |acc, s| {
            let o = *acc;
            *acc += s;
            Some(o)
        })
        .collect();
    let n: usize = sizes.iter().sum();
    let mut mat = DMatrix::zeros(n, n);
    for k in 0..pixels {
        mat.view_mut((k * c, k * c), (c, c)).copy_from(&(-q));
    }
    let l = ws.len();
    for k in 1..l {
        let lam = DMatrix::from_diagonal(&DVector::from_column_slice(&cert.lambda_dense[k - 1]));
        let off_block = -(&lam * ws[k - 1]);
        mat.view_mut((offs[k], offs[k - 1]), off_block.shape())
            .copy_from(&off_block);
        mat.view_mut(
            (offs[k - 1], offs[k]),
            (off_block.ncols(), off_block.nrows()),
        )
        .copy_from(&off_block.transpose());
        mat.view_mut((offs[k], offs[k]), lam.shape())
            .copy_from(&(lam * 2.0));
    }
    let wl = ws[l - 1];
    mat.view_mut((offs[l], offs[l - 1]), wl.shape())
        .copy_from(&(-wl));
    mat.view_mut((offs[l - 1], offs[l]), (wl.ncols(), wl.nrows()))
        .copy_from(&(-wl.transpose()));
    for k in 0..sizes[l] {
        mat[(offs[l] + k, offs[l] + k)] = cert.chain_tail;
    }
    mat
}

struct TrialResult {
    pointwise: f64,
    node: (i64, i64),
    summed: f64,
    chain: f64,
    gain: f64,
}

struct Sampler<'a> {
    spec: &'a NetworkSpec,
    cert: &'a LipschitzCertificate,
    reference: LureSystem,
    error: LureSystem,
}

impl<'a> Sampler<'a> {
    fn new(
        spec: &'a NetworkSpec,
        cert: &'a LipschitzCertificate,
        kind: RealizationKind,
    ) -> Result<Self> {
        let full = assemble_lure_with(&spec.conv_layers, kind)?;
        let reference = if cert.hybrid {
            full.with_output_activation()
        } else {
            full
        };
        Ok(Self {
            spec,
            cert,
            reference,
            error: certified_system(spec, kind)?,
        })
    }

    fn trial(&self, seed: u64, k: usize, lmi_scale: f64) -> Result<TrialResult> {
        let (spec, cert) = (self.spec, self.cert);
        let (img1, img2) = input_pair(spec, seed, k);
        let u1 = embed_image(&img1);
        let u2 = embed_image(&img2);
        let du = u2.sub(&u1);
        let frame = self.reference.frame_for(&u1);
        let act = spec.activation;
        let tr1 = lure_forward(&self.reference, &act, &u1, frame)?;
        let phi = IncrementalNonlinearity {
            activation: act,
            reference: &tr1,
        };
        let tr = lure_forward(&self.error, &phi, &du, frame)?;

        let q = cert.q_c.clone();
        let quad = |p: &DMatrix<f64>, x: &DVector<f64>| x.dot(&(p * x));
        let mut worst = f64::INFINITY;
        let mut node = frame.start;
        let mut summed = 0.0;
        let mut in_energy = 0.0;
        for idx in 0..frame.len() {
            let (x1, x2) = (&tr.x1[idx], &tr.x2[idx]);
            let (z, w, u) = (&tr.z[idx], &tr.w[idx], &tr.u[idx]);
            let pp = (idx / frame.extent.1, idx % frame.extent.1);
            let y = DVector::from_fn(self.error.n_out(), |o, _| tr.y.data[[pp.0, pp.1, o]]);
            let storage = quad(&cert.p1, x1) + quad(&cert.p2, x2)
                - quad(&cert.p1, &tr.x1_next[idx])
                - quad(&cert.p2, &tr.x2_next[idx]);
            let s = cert.gamma_sq * u.norm_squared()
                + match &q {
                    Some(q) => quad(q, &y),
                    None => -y.norm_squared(),
                };
            let sw: f64 = (0..z.len())
                .map(|j| 2.0 * cert.lambda_c[j] * w[j] * (w[j] - z[j]))
                .sum();
            let xi2 = x1.norm_squared() + x2.norm_squared() + w.norm_squared() + u.norm_squared();
            let r = (storage + s + sw) / (lmi_scale * xi2.max(1.0));
            if r < worst {
                worst = r;
                node = frame.node(pp.0, pp.1);
            }
            summed += s;
            in_energy += u.norm_squared();
        }
        let summed = summed / (cert.gamma_sq.max(1.0) * in_energy.max(1.0));

        let dy = output_distance(spec, &img1, &img2)?;
        let dun = du.norm_sq().sqrt();
        let gain = if dun > 0.0 { dy / dun } else { 0.0 };

        let chain = if let Some(q) = &q {
            let (h, w, _) = conv_output_shape(spec)?;
            let lo = valid_window_origin(spec);
            let v1 = flatten_signal(&conv_stack_forward(spec, &img1)?, lo, h, w);
            let v2 = flatten_signal(&conv_stack_forward(spec, &img2)?, lo, h, w);
            let dv = DVector::from_iterator(v1.len(), v2.iter().zip(&v1).map(|(a, b)| a - b));
            let c = q.nrows();
            let mut rl = 0.0;
            for px in 0..dv.len() / c {
                rl -= quad(q, &dv.rows(px * c, c).clone_owned());
            }
            let sl = rl - (2.0 - cert.chain_tail) * dy * dy;
            sl / (cert.gamma_sq.max(1.0) * dun.powi(2).max(1.0))
        } else {
            0.0
        };
        Ok(TrialResult {
            pointwise: worst,
            node,
            summed,
            chain,
            gain,
        })
    }
}

/// Random image pair; the perturbation size varies over several decades so
/// that both local and global behavior of the activations is exercised.
fn input_pair(spec: &NetworkSpec, seed: u64, k: usize) -> (Array3<f64>, Array3<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (k as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let dim = (spec.input_height, spec.input_width, spec.input_channels);
    let u1 = Array3::from_shape_fn(dim, |_| rng.sample::<f64, _>(StandardNormal));
    let eps = 10f64.powf(rng.random_range(-3.0..0.5));
    let u2 = &u1 + &Array3::from_shape_fn(dim, |_| eps * rng.sample::<f64, _>(StandardNormal));
    (u1, u2)
}

fn diff_norm<'b>(a: impl Iterator<Item = &'b f64>, b: impl Iterator<Item = &'b f64>) -> f64 {
    a.zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn output_distance(spec: &NetworkSpec, u1: &Array3<f64>, u2: &Array3<f64>) -> Result<f64> {
    if spec.is_hybrid() {
        let y1 = network_forward(spec, u1)?;
        let y2 = network_forward(spec, u2)?;
        Ok(diff_norm(y1.iter(), y2.iter()))
    } else {
        let y1 = conv_stack_forward(spec, u1)?;
        let y2 = conv_stack_forward(spec, u2)?;
        Ok(y2.sub(&y1).norm_sq().sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lmi::{estimate_lipschitz_hybrid, estimate_lipschitz_layer, EstimateOptions};
    use crate::model::{Activation, ConvLayerSpec, DenseLayerSpec, Kernel2D};

    fn two_layer() -> NetworkSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let k1 = Kernel2D::random(&mut rng, 2, 1, 1, 1).scaled(0.5);
        let k2 = Kernel2D::random(&mut rng, 1, 2, 0, 1).scaled(0.5);
        NetworkSpec::new(
            (6, 6, 1),
            Activation::Relu,
            vec![
                ConvLayerSpec::unbiased(k1),
                ConvLayerSpec::new(k2, vec![0.3]).unwrap(),
            ],
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn accepts_solver_certificate_and_rejects_corruption() {
        let spec = two_layer();
        let cert = estimate_lipschitz_hybrid(&spec, &EstimateOptions::default()).unwrap();
        let rep = validate_certificate(&spec, &cert, 20, 1).unwrap();
        assert!(rep.passed, "{:?}", rep.failures());
        assert!(rep.max_sampled_gain <= cert.gamma);

        let mut bad = cert.clone();
        let n = bad.p1.nrows();
        bad.p1 -= DMatrix::identity(n, n) * 0.1;
        let rep = validate_certificate(&spec, &bad, 5, 1).unwrap();
        assert!(!rep.passed);
        assert!(rep.failures().iter().any(|c| c.name == "dissipation LMI"));
    }

    #[test]
    fn rejects_understated_gamma() {
        let layer = ConvLayerSpec::single_tap(2.0);
        let mut cert = estimate_lipschitz_layer(&layer, &EstimateOptions::default()).unwrap();
        cert.gamma_sq = 3.0;
        cert.gamma = 3f64.sqrt();
        let spec = crate::lmi::single_layer_network(&layer).unwrap();
        let rep = validate_certificate(&spec, &cert, 10, 0).unwrap();
        assert!(!rep.passed);
    }

    #[test]
    fn hybrid_certificate_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let k = Kernel2D::random(&mut rng, 2, 1, 0, 1).scaled(0.5);
        let w1 = DMatrix::from_fn(3, 2 * 4 * 4, |_, _| {
            rng.sample::<f64, _>(StandardNormal) * 0.2
        });
        let w2 = DMatrix::from_fn(2, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let spec = NetworkSpec::new(
            (5, 5, 1),
            Activation::Relu,
            vec![ConvLayerSpec::unbiased(k)],
            vec![DenseLayerSpec::unbiased(w1), DenseLayerSpec::unbiased(w2)],
        )
        .unwrap();
        let cert = estimate_lipschitz_hybrid(&spec, &EstimateOptions::default()).unwrap();
        let rep = validate_certificate(&spec, &cert, 20, 3).unwrap();
        assert!(rep.passed, "{:?}", rep.failures());
    }
}
