//! Certifies a network with convolutional and fully connected layers, stores
//! the certificate and checks it again after loading.
//!
//! ```bash
//! cargo run --release --example hybrid_bound
//! ```

use lipcert::lmi::naive_bound;
use lipcert::{estimate_lipschitz_hybrid, validate_certificate, LipschitzCertificate};
use lipcert::{Activation, ConvLayerSpec, DenseLayerSpec, EstimateOptions, Kernel2D, NetworkSpec};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn main() -> lipcert::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let conv = vec![
        ConvLayerSpec::unbiased(Kernel2D::random(&mut rng, 2, 1, 0, 2).scaled(1.0 / 3.0)),
        ConvLayerSpec::unbiased(Kernel2D::random(&mut rng, 2, 2, 0, 1).scaled(1.0 / 3.0)),
    ];
    // 8x8 input, two valid convolutions of width 3 and 2: 5x5x2 = 50 features.
    let mut dense = |o: usize, i: usize| {
        DenseLayerSpec::unbiased(DMatrix::from_fn(o, i, |_, _| {
            rng.sample::<f64, _>(StandardNormal) / (i as f64).sqrt()
        }))
    };
    let fc = vec![dense(16, 50), dense(3, 16)];
    let spec = NetworkSpec::new((8, 8, 1), Activation::Relu, conv, fc)?;

    let cert = estimate_lipschitz_hybrid(&spec, &EstimateOptions::default())?;
    println!(
        "certified gamma  {:.6}  ({:?})",
        cert.gamma, cert.report.status
    );
    println!("layer-wise bound {:.6}", naive_bound(&spec));
    println!(
        "Q_C eigenvalues  {:?}",
        &cert.q_c_eigenvalues[..cert.q_c_eigenvalues.len().min(4)]
    );

    let path = std::env::temp_dir().join("lipcert_hybrid_certificate.json");
    cert.save(&path)?;
    let loaded = LipschitzCertificate::load(&path)?;
    let report = validate_certificate(&spec, &loaded, 50, 0)?;
    println!(
        "reloaded from {} and validated: {}",
        path.display(),
        report.passed
    );
    std::fs::remove_file(&path)?;
    Ok(())
}
