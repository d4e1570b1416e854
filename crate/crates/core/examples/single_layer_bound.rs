//! Certifies the Lipschitz constant of one convolutional layer and compares it
//! with the frequency-grid and Toeplitz values.
//!
//! ```bash
//! cargo run --release --example single_layer_bound
//! ```

use lipcert::lmi::single_layer_network;
use lipcert::{estimate_lipschitz_layer, hinf_grid, toeplitz_norm, validate_certificate};
use lipcert::{ConvLayerSpec, EstimateOptions, Kernel2D};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> lipcert::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let layer = ConvLayerSpec::unbiased(Kernel2D::random(&mut rng, 1, 1, 1, 1));

    let cert = estimate_lipschitz_layer(&layer, &EstimateOptions::default())?;
    let report = validate_certificate(&single_layer_network(&layer)?, &cert, 100, 0)?;
    println!(
        "SDP bound      {:.6}  ({:?}, {} iterations, validated: {})",
        cert.gamma, cert.report.status, cert.report.iterations, report.passed
    );
    println!("H-inf (512^2)  {:.6}", hinf_grid(&layer, 512));
    for d1 in [5, 10, 20, 50] {
        println!("Toeplitz d1={d1:<3} {:.6}", toeplitz_norm(&layer, d1)?);
    }

    // The bound scales linearly with the kernel.
    let doubled = estimate_lipschitz_layer(&layer.scaled(2.0), &EstimateOptions::default())?;
    println!(
        "doubling the kernel: {:.6} -> {:.6}",
        cert.gamma, doubled.gamma
    );
    Ok(())
}
