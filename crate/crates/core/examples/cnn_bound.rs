//! Certifies a two-layer convolutional network, validates the certificate and
//! compares it with sampled gains and the layer-wise product bound.
//!
//! ```bash
//! cargo run --release --example cnn_bound
//! ```

use lipcert::lmi::naive_bound;
use lipcert::sdpsolve::validate::sample_incremental_gain;
use lipcert::{estimate_lipschitz_hybrid, validate_certificate};
use lipcert::{Activation, ConvLayerSpec, EstimateOptions, Kernel2D, NetworkSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> lipcert::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let spec = NetworkSpec::new(
        (12, 12, 1),
        Activation::Relu,
        vec![
            ConvLayerSpec::unbiased(Kernel2D::random(&mut rng, 2, 1, 1, 1).scaled(0.3)),
            ConvLayerSpec::unbiased(Kernel2D::random(&mut rng, 1, 2, 1, 1).scaled(0.3)),
        ],
        vec![],
    )?;

    let cert = estimate_lipschitz_hybrid(&spec, &EstimateOptions::default())?;
    println!(
        "certified gamma  {:.6}  ({}, {:?})",
        cert.gamma, cert.realization, cert.report.status
    );

    let report = validate_certificate(&spec, &cert, 100, 1)?;
    for check in &report.checks {
        println!(
            "  {:<45} {:>12.3e}  {}",
            check.name,
            check.value,
            if check.passed { "ok" } else { "FAIL" }
        );
    }

    println!(
        "sampled gain     {:.6}",
        sample_incremental_gain(&spec, 2000, 3)?
    );
    println!("layer-wise bound {:.6}", naive_bound(&spec));
    Ok(())
}
