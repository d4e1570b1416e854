//! Shows what the certificate checker reports for a sound certificate, for an
//! overstated storage matrix and for an understated bound.
//!
//! ```bash
//! cargo run --release --example validate_certificate
//! ```

use lipcert::lmi::single_layer_network;
use lipcert::{
    estimate_lipschitz_layer, validate_certificate, ConvLayerSpec, EstimateOptions, Kernel2D,
};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> lipcert::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let layer = ConvLayerSpec::unbiased(Kernel2D::random(&mut rng, 1, 1, 1, 1));
    let spec = single_layer_network(&layer)?;
    let cert = estimate_lipschitz_layer(&layer, &EstimateOptions::default())?;

    let mut shifted = cert.clone();
    let n = shifted.p1.nrows();
    shifted.p1 -= DMatrix::identity(n, n) * 0.1;

    let mut optimistic = cert.clone();
    optimistic.gamma *= 0.9;
    optimistic.gamma_sq = optimistic.gamma * optimistic.gamma;

    for (name, c) in [
        ("solver output", &cert),
        ("P1 - 0.1 I", &shifted),
        ("0.9 gamma", &optimistic),
    ] {
        let report = validate_certificate(&spec, c, 100, 0)?;
        let failed: Vec<&str> = report.failures().iter().map(|c| c.name.as_str()).collect();
        println!(
            "{name:<14} gamma = {:.5}  passed = {:<5}  failing: {failed:?}",
            c.gamma, report.passed
        );
    }
    Ok(())
}
