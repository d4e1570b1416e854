//! The two non-certified reference values for a single layer: the Toeplitz
//! spectral norm on a growing input window and the frequency-grid maximum of
//! the transfer function on refining grids.
//!
//! ```bash
//! cargo run --release --example baselines
//! ```

use lipcert::signal2d::{toeplitz_norm_with, ToeplitzOptions};
use lipcert::{hinf_grid, ConvLayerSpec, Kernel2D};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> lipcert::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let layer = ConvLayerSpec::unbiased(Kernel2D::random(&mut rng, 2, 2, 1, 1));

    println!("grid    hinf");
    for n in [8, 32, 128, 512] {
        println!("{n:<7} {:.8}", hinf_grid(&layer, n));
    }

    println!("\nd1      toeplitz     upper        converged");
    for d1 in [3, 5, 10, 20, 40] {
        let t = toeplitz_norm_with(&layer, d1, &ToeplitzOptions::default())?;
        println!("{d1:<7} {:.8}   {:.8}   {}", t.value, t.upper, t.converged);
    }
    Ok(())
}
