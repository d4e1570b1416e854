//! Acceptance run. Prints one PASS/FAIL line per criterion and exits with a
//! failure status if any criterion fails.
//!
//! ```bash
//! cargo test --release --test acceptance
//! ```

use std::time::{Duration, Instant};

use lipcert::lmi::single_layer_network;
use lipcert::lure::IncrementalNonlinearity;
use lipcert::realization::full_region;
use lipcert::sdpsolve::validate::sample_incremental_gain;
use lipcert::{
    assemble_lure, error_system, estimate_lipschitz_hybrid, estimate_lipschitz_layer, hinf_grid,
    lure_forward, realize_conv, simulate, toeplitz_norm, validate_certificate, Activation,
    ConvLayerSpec, DenseLayerSpec, EstimateOptions, Kernel2D, LipschitzCertificate, NetworkSpec,
    Signal2D,
};
use nalgebra::DMatrix;
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

/// Mean Lipschitz bound of the redundant Roesser LMI over random 3x3 kernels.
const REFERENCE_MEAN_ROESSER: f64 = 5.265;
/// Mean Toeplitz norm at d1 = 50 over the same kernels.
const REFERENCE_MEAN_TOEPLITZ_50: f64 = 5.254;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

/// Certificates produced along the way, validated together for criterion 5.
#[derive(Default)]
struct Issued {
    certs: Vec<(String, NetworkSpec, LipschitzCertificate)>,
}

impl Issued {
    fn push(&mut self, label: impl Into<String>, spec: &NetworkSpec, cert: &LipschitzCertificate) {
        self.certs.push((label.into(), spec.clone(), cert.clone()));
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn random_signal(
    rng: &mut ChaCha8Rng,
    origin: (i64, i64),
    h: usize,
    w: usize,
    c: usize,
) -> Signal2D {
    Signal2D::new(origin, Array3::from_shape_fn((h, w, c), |_| normal(rng))).unwrap()
}

/// Direct evaluation of `y(i) = b + sum_j K(j) u(i - j)` over the full support.
fn reference_conv(layer: &ConvLayerSpec, u: &Signal2D) -> (i64, i64, Array3<f64>) {
    let k = &layer.kernel;
    let (rm, rp) = (k.r_minus as i64, k.r_plus as i64);
    let (h, w) = (u.height() as i64, u.width() as i64);
    let lo = (u.origin.0 - rm, u.origin.1 - rm);
    let (oh, ow) = (h + rm + rp, w + rm + rp);
    let mut y = Array3::zeros((oh as usize, ow as usize, layer.c_out()));
    for p in 0..oh {
        for q in 0..ow {
            let i = (lo.0 + p, lo.1 + q);
            for o in 0..layer.c_out() {
                let mut acc = layer.bias[o];
                for j1 in -rm..=rp {
                    for j2 in -rm..=rp {
                        for c in 0..layer.c_in() {
                            let t = k.tap(o, c, (j1 + rm) as usize, (j2 + rm) as usize);
                            acc += t * u.get(i.0 - j1, i.1 - j2, c);
                        }
                    }
                }
                y[[p as usize, q as usize, o]] = acc;
            }
        }
    }
    (lo.0, lo.1, y)
}

fn random_dense(rng: &mut ChaCha8Rng, o: usize, i: usize) -> DenseLayerSpec {
    let s = 1.0 / (i as f64).sqrt();
    DenseLayerSpec::unbiased(DMatrix::from_fn(o, i, |_, _| s * normal(rng)))
}

fn std_kernel(seed: u64) -> ConvLayerSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ConvLayerSpec::unbiased(Kernel2D::random(&mut rng, 1, 1, 1, 1))
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let size = rng.random_range(1..=5usize);
        let rm = rng.random_range(0..size);
        let rp = size - 1 - rm;
        let (ci, co) = (rng.random_range(1..=3), rng.random_range(1..=3));
        let bias = (0..co).map(|_| normal(&mut rng)).collect();
        let layer = ConvLayerSpec::new(Kernel2D::random(&mut rng, co, ci, rm, rp), bias).unwrap();
        let (h, w) = (rng.random_range(1..=16), rng.random_range(1..=16));
        let origin = (rng.random_range(-4..5), rng.random_range(-4..5));
        let u = random_signal(&mut rng, origin, h, w, ci);
        let (l0, l1, expected) = reference_conv(&layer, &u);
        let y = simulate(&realize_conv(&layer), &u, full_region(&layer, &u)).unwrap();
        assert_eq!(y.origin, (l0, l1));
        let diff = y
            .data
            .iter()
            .zip(expected.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        worst = worst.max(diff);
    }
    let dt = t.elapsed();
    outcome(
        worst <= 1e-10 && dt < Duration::from_secs(30),
        format!(
            "50 layers, max deviation {worst:.2e} (tol 1e-10), {:.2?} (limit 30 s)",
            dt
        ),
    )
}

fn criterion_2(issued: &mut Issued) -> Outcome {
    let t = Instant::now();
    let d1s = [5, 10, 20, 50];
    let rows: Vec<_> = (0..100u64)
        .into_par_iter()
        .map(|k| {
            let layer = std_kernel(20_000 + k);
            let cert = estimate_lipschitz_layer(&layer, &EstimateOptions::default()).unwrap();
            let hinf = hinf_grid(&layer, 512);
            let toep: Vec<f64> = d1s
                .iter()
                .map(|&d| toeplitz_norm(&layer, d).unwrap())
                .collect();
            (layer, cert, hinf, toep)
        })
        .collect();
    let dt = t.elapsed();
    let n = rows.len() as f64;
    let in_band = rows
        .iter()
        .filter(|(_, c, h, _)| *h <= c.gamma && c.gamma <= 1.02 * h)
        .count();
    let above_toeplitz = rows
        .iter()
        .filter(|(_, c, _, t)| t.iter().all(|&v| c.gamma >= v))
        .count();
    let mean_g = rows.iter().map(|r| r.1.gamma).sum::<f64>() / n;
    let mean_h = rows.iter().map(|r| r.2).sum::<f64>() / n;
    let mean_t50 = rows.iter().map(|r| r.3[3]).sum::<f64>() / n;
    let rel = (mean_g - mean_h).abs() / mean_h;
    for (k, (layer, cert, _, _)) in rows.iter().enumerate() {
        issued.push(
            format!("random 3x3 kernel {k}"),
            &single_layer_network(layer).unwrap(),
            cert,
        );
    }
    println!(
        "      means: gamma {mean_g:.4}, toeplitz(50) {mean_t50:.4}, hinf {mean_h:.4}; \
         reference {REFERENCE_MEAN_ROESSER} / {REFERENCE_MEAN_TOEPLITZ_50} (different random kernels)"
    );
    outcome(
        in_band >= 95 && above_toeplitz == 100 && rel <= 0.05 && dt < Duration::from_secs(600),
        format!(
            "in [hinf, 1.02 hinf]: {in_band}/100 (need 95), >= toeplitz: {above_toeplitz}/100, \
             mean gap {:.3}% (limit 5%), {:.1?} (limit 10 min)",
            100.0 * rel,
            dt
        ),
    )
}

fn criterion_3() -> Outcome {
    let d1s = [3, 5, 10, 20, 50];
    let bad: Vec<u64> = (0..100u64)
        .into_par_iter()
        .filter(|&k| {
            let layer = std_kernel(30_000 + k);
            let hinf = hinf_grid(&layer, 512);
            let v: Vec<f64> = d1s
                .iter()
                .map(|&d| toeplitz_norm(&layer, d).unwrap())
                .collect();
            let monotone = v.windows(2).all(|p| p[1] >= p[0]);
            !(monotone && v.iter().all(|&x| x <= hinf + 1e-6))
        })
        .collect();
    outcome(
        bad.is_empty(),
        format!(
            "{}/100 instances monotone in d1 and below hinf + 1e-6",
            100 - bad.len()
        ),
    )
}

fn criterion_4() -> Outcome {
    let worst = (0..100u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(40_000 + k);
            let c0 = rng.random_range(1..=3);
            let c1 = rng.random_range(1..=3);
            let c2 = rng.random_range(1..=3);
            let mut layer = |ci: usize, co: usize| {
                let (rm, rp) = (rng.random_range(0..=2), rng.random_range(0..=2));
                let bias = (0..co).map(|_| normal(&mut rng)).collect();
                ConvLayerSpec::new(Kernel2D::random(&mut rng, co, ci, rm, rp), bias).unwrap()
            };
            let layers = vec![layer(c0, c1), layer(c1, c2)];
            let sys = assemble_lure(&layers).unwrap();
            let (h, w) = (rng.random_range(2..=9), rng.random_range(2..=9));
            let u1 = random_signal(&mut rng, (0, 0), h, w, c0);
            let u2 = random_signal(&mut rng, (0, 0), h, w, c0);
            let frame = sys.frame_for(&u1);
            let tr1 = lure_forward(&sys, &Activation::Relu, &u1, frame).unwrap();
            let tr2 = lure_forward(&sys, &Activation::Relu, &u2, frame).unwrap();
            let phi = IncrementalNonlinearity {
                activation: Activation::Relu,
                reference: &tr1,
            };
            let e = lure_forward(&error_system(&sys), &phi, &u2.sub(&u1), frame).unwrap();
            let mut dev = e.y.max_abs_diff(&tr2.y.sub(&tr1.y));
            for node in 0..frame.len() {
                dev = dev
                    .max((&e.x1[node] - (&tr2.x1[node] - &tr1.x1[node])).amax())
                    .max((&e.x2[node] - (&tr2.x2[node] - &tr1.x2[node])).amax())
                    .max((&e.z[node] - (&tr2.z[node] - &tr1.z[node])).amax())
                    .max((&e.w[node] - (&tr2.w[node] - &tr1.w[node])).amax());
            }
            dev
        })
        .reduce(|| 0.0, f64::max);
    outcome(
        worst <= 1e-10,
        format!("100 stacks, max node deviation {worst:.2e} (tol 1e-10)"),
    )
}

fn random_network(seed: u64, hybrid: bool) -> NetworkSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = rng.random_range(6..=12);
    let c0 = rng.random_range(1..=3);
    let c1 = rng.random_range(1..=3);
    let c2 = rng.random_range(1..=3);
    let mut layer = |ci: usize, co: usize| {
        let (rm, rp) = (rng.random_range(0..=1), rng.random_range(0..=1));
        let scale = 1.0 / ((rm + rp + 1) as f64 * (ci as f64).sqrt());
        let bias = (0..co).map(|_| 0.1 * normal(&mut rng)).collect();
        ConvLayerSpec::new(
            Kernel2D::random(&mut rng, co, ci, rm, rp).scaled(scale),
            bias,
        )
        .unwrap()
    };
    let conv = vec![layer(c0, c1), layer(c1, c2)];
    let dense = if hybrid {
        let s1 = side - conv[0].kernel.span() - conv[1].kernel.span();
        let flat = s1 * s1 * c2;
        let hidden = rng.random_range(4..=12);
        let out = rng.random_range(1..=4);
        vec![
            random_dense(&mut rng, hidden, flat),
            random_dense(&mut rng, out, hidden),
        ]
    } else {
        Vec::new()
    };
    NetworkSpec::new((side, side, c0), Activation::Relu, conv, dense).unwrap()
}

fn criterion_6(issued: &mut Issued) -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for (k, hybrid) in [false, false, false, true, true, true]
        .into_iter()
        .enumerate()
    {
        let spec = random_network(60_000 + k as u64, hybrid);
        let cert = estimate_lipschitz_hybrid(&spec, &EstimateOptions::default()).unwrap();
        let gain = sample_incremental_gain(&spec, 10_000, 7 + k as u64).unwrap();
        ok &= gain <= cert.gamma * (1.0 + 1e-4);
        lines.push(format!("{gain:.3}/{:.3}", cert.gamma));
        issued.push(
            format!(
                "random {} network {k}",
                if hybrid { "hybrid" } else { "conv" }
            ),
            &spec,
            &cert,
        );
    }
    outcome(
        ok,
        format!("sampled gain / gamma over 10^4 pairs: {}", lines.join(", ")),
    )
}

fn criterion_7(issued: &mut Issued) -> Outcome {
    let opts = EstimateOptions::default();
    let mut ok = true;
    let mut parts = Vec::new();
    for c in [0.3, -2.5, 7.0] {
        let layer = ConvLayerSpec::single_tap(c);
        let cert = estimate_lipschitz_layer(&layer, &opts).unwrap();
        ok &= (cert.gamma - c.abs()).abs() <= 1e-6;
        parts.push(format!("tap {c}: {:.8}", cert.gamma));
        issued.push(
            format!("single tap {c}"),
            &single_layer_network(&layer).unwrap(),
            &cert,
        );
    }

    // |G| = |sum_j z^j / 9| <= 1 on the torus, with equality at z = 1.
    let mut k = Kernel2D::zeros(1, 1, 1, 1);
    for a in 0..3 {
        for b in 0..3 {
            k.set_tap(0, 0, a, b, 1.0 / 9.0);
        }
    }
    let avg = ConvLayerSpec::unbiased(k);
    let cert = estimate_lipschitz_layer(&avg, &opts).unwrap();
    ok &= (cert.gamma - 1.0).abs() <= 1e-3;
    parts.push(format!("averaging: {:.6}", cert.gamma));
    issued.push(
        "averaging kernel",
        &single_layer_network(&avg).unwrap(),
        &cert,
    );

    let eye = DenseLayerSpec::unbiased(DMatrix::identity(16, 16));
    let spec = NetworkSpec::new(
        (4, 4, 1),
        Activation::Relu,
        vec![ConvLayerSpec::single_tap(1.0)],
        vec![eye],
    )
    .unwrap();
    let cert = estimate_lipschitz_hybrid(&spec, &opts).unwrap();
    ok &= (cert.gamma - 1.0).abs() <= 1e-4;
    parts.push(format!("identity hybrid: {:.6}", cert.gamma));
    issued.push("identity hybrid", &spec, &cert);
    outcome(ok, parts.join(", "))
}

fn mnist_shape() -> NetworkSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let k1 = Kernel2D::random(&mut rng, 5, 1, 0, 8).scaled(1.0 / 9.0);
    let k2 = Kernel2D::random(&mut rng, 5, 5, 0, 4).scaled(1.0 / 11.0);
    let d1 = random_dense(&mut rng, 50, 1280);
    let d2 = random_dense(&mut rng, 10, 50);
    NetworkSpec::new(
        (28, 28, 1),
        Activation::Relu,
        vec![ConvLayerSpec::unbiased(k1), ConvLayerSpec::unbiased(k2)],
        vec![d1, d2],
    )
    .unwrap()
}

fn criterion_8(issued: &mut Issued) -> Outcome {
    let spec = mnist_shape();
    let t = Instant::now();
    let res = estimate_lipschitz_hybrid(&spec, &EstimateOptions::default()).and_then(|cert| {
        let report = validate_certificate(&spec, &cert, 100, 0)?;
        Ok((cert, report.passed))
    });
    let dt = t.elapsed();
    match res {
        Ok((cert, valid)) => {
            let ok = cert.gamma.is_finite() && valid && dt < Duration::from_secs(1800);
            let detail = format!(
                "28x28, 9x9 + 5x5 conv (5 ch), dense 50 -> 10: gamma {:.4}, validated {valid}, {:.0?} (limit 30 min)",
                cert.gamma, dt
            );
            issued.push("mnist-shaped network", &spec, &cert);
            outcome(ok, detail)
        }
        Err(e) => outcome(false, format!("no certificate: {e}")),
    }
}

fn criterion_9(issued: &mut Issued) -> Outcome {
    let opts = EstimateOptions::default();
    let mut worst = 0.0f64;
    for k in 0..5u64 {
        let layer = std_kernel(90_000 + k);
        let base = estimate_lipschitz_layer(&layer, &opts).unwrap();
        for alpha in [0.5, 2.0, 10.0] {
            let scaled = layer.scaled(alpha);
            let cert = estimate_lipschitz_layer(&scaled, &opts).unwrap();
            worst = worst.max((cert.gamma / (alpha * base.gamma) - 1.0).abs());
            issued.push(
                format!("kernel {k} scaled by {alpha}"),
                &single_layer_network(&scaled).unwrap(),
                &cert,
            );
        }
    }
    outcome(
        worst <= 1e-5,
        format!(
            "5 kernels x alpha in {{0.5, 2, 10}}, max relative deviation {worst:.2e} (tol 1e-5)"
        ),
    )
}

fn criterion_5(issued: &Issued) -> Outcome {
    let failed: Vec<String> = issued
        .certs
        .par_iter()
        .filter_map(
            |(label, spec, cert)| match validate_certificate(spec, cert, 100, 5) {
                Ok(r) if r.passed => None,
                Ok(r) => Some(format!(
                    "{label}: {}",
                    r.failures()
                        .iter()
                        .map(|c| c.name.as_str())
                        .collect::<Vec<_>>()
                        .join(", ")
                )),
                Err(e) => Some(format!("{label}: {e}")),
            },
        )
        .collect();
    let detail = format!(
        "{}/{} issued certificates validated (LMI tol 1e-7, pointwise tol 1e-6, 100 trajectories)",
        issued.certs.len() - failed.len(),
        issued.certs.len()
    );
    if failed.is_empty() {
        outcome(true, detail)
    } else {
        outcome(false, format!("{detail}; failing: {}", failed.join("; ")))
    }
}

fn main() {
    let mut issued = Issued::default();
    let mut all = true;
    let mut report = |name: &str, o: Outcome| {
        all &= o.passed;
        println!(
            "[{}] {name}: {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.detail
        );
    };
    report("1 realization equivalence", criterion_1());
    report("2 single-layer exactness band", criterion_2(&mut issued));
    report("3 Toeplitz monotone exhaustion", criterion_3());
    report("4 error-dynamics exactness", criterion_4());
    report("6 empirical soundness", criterion_6(&mut issued));
    report("7 analytic anchors", criterion_7(&mut issued));
    report("8 mnist-shaped network", criterion_8(&mut issued));
    report("9 scaling covariance", criterion_9(&mut issued));
    report("5 certificate validity", criterion_5(&issued));
    if !all {
        std::process::exit(1);
    }
}
