//! A small version of the random-kernel benchmark: mean certified bound,
//! frequency-grid value and Toeplitz norm over standard-normal 3x3 kernels.
//! The `lipcert bench-random` command runs the full version.
//!
//! ```bash
//! cargo run --release --example bench_random -- 20
//! ```

use lipcert::{
    estimate_lipschitz_layer, hinf_grid, toeplitz_norm, ConvLayerSpec, EstimateOptions, Kernel2D,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

fn main() -> lipcert::Result<()> {
    let instances: usize = std::env::args()
        .nth(1)
        .and_then(|a| a.parse().ok())
        .unwrap_or(10);
    let rows: Vec<lipcert::Result<(f64, f64, f64)>> = (0..instances as u64)
        .into_par_iter()
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let layer = ConvLayerSpec::unbiased(Kernel2D::random(&mut rng, 1, 1, 1, 1));
            let gamma = estimate_lipschitz_layer(&layer, &EstimateOptions::default())?.gamma;
            Ok((gamma, hinf_grid(&layer, 256), toeplitz_norm(&layer, 20)?))
        })
        .collect();

    let mut sums = [0.0; 3];
    for (k, row) in rows.into_iter().enumerate() {
        let (g, h, t) = row?;
        println!(
            "{k:>3}  sdp {g:.5}  hinf {h:.5}  toeplitz {t:.5}  ratio {:.5}",
            g / h
        );
        sums[0] += g;
        sums[1] += h;
        sums[2] += t;
    }
    let n = instances as f64;
    println!(
        "mean sdp {:.4}  hinf {:.4}  toeplitz(20) {:.4}",
        sums[0] / n,
        sums[1] / n,
        sums[2] / n
    );
    Ok(())
}
