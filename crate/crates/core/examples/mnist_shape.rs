//! Certifies a network with the layout of a small MNIST classifier: a 28x28
//! input, 9x9 and 5x5 convolutions with 5 channels, then dense layers
//! 1280 -> 50 -> 10. The weights are random. Expect several minutes per core.
//!
//! ```bash
//! cargo run --release --example mnist_shape
//! ```

use lipcert::lmi::naive_bound;
use lipcert::{estimate_lipschitz_hybrid, validate_certificate};
use lipcert::{Activation, ConvLayerSpec, DenseLayerSpec, EstimateOptions, Kernel2D, NetworkSpec};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::time::Instant;

fn main() -> lipcert::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let k1 = Kernel2D::random(&mut rng, 5, 1, 0, 8).scaled(1.0 / 9.0);
    let k2 = Kernel2D::random(&mut rng, 5, 5, 0, 4).scaled(1.0 / 11.0);
    let mut dense = |o: usize, i: usize| {
        DenseLayerSpec::unbiased(DMatrix::from_fn(o, i, |_, _| {
            rng.sample::<f64, _>(StandardNormal) / (i as f64).sqrt()
        }))
    };
    let fc = vec![dense(50, 1280), dense(10, 50)];
    let spec = NetworkSpec::new(
        (28, 28, 1),
        Activation::Relu,
        vec![ConvLayerSpec::unbiased(k1), ConvLayerSpec::unbiased(k2)],
        fc,
    )?;

    let mut opts = EstimateOptions::default();
    opts.solver.verbose = std::env::var_os("LIPCERT_VERBOSE").is_some();
    let t = Instant::now();
    let cert = estimate_lipschitz_hybrid(&spec, &opts)?;
    println!(
        "gamma {:.4} ({:?}, {} iterations, {} realization) in {:.0?}",
        cert.gamma,
        cert.report.status,
        cert.report.iterations,
        cert.realization,
        t.elapsed()
    );
    println!("layer-wise bound {:.4}", naive_bound(&spec));

    let t = Instant::now();
    let report = validate_certificate(&spec, &cert, 100, 0)?;
    println!("validated: {} in {:.0?}", report.passed, t.elapsed());
    Ok(())
}
