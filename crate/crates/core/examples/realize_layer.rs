//! Builds both Roesser realizations of a random 3x3 layer, prints their state
//! dimensions and checks that simulating them reproduces the convolution.
//!
//! ```bash
//! cargo run --release --example realize_layer
//! ```

use lipcert::realization::full_region;
use lipcert::{conv_forward, reachable_subspace, realize_conv, realize_conv_compact, simulate};
use lipcert::{ConvLayerSpec, Kernel2D, Signal2D};
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn main() -> lipcert::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let layer = ConvLayerSpec::new(Kernel2D::random(&mut rng, 2, 3, 1, 1), vec![0.5, -0.25])?;
    let u = Signal2D::new(
        (0, 0),
        Array3::from_shape_fn((8, 8, 3), |_| rng.sample(StandardNormal)),
    )?;
    let reference = conv_forward(&layer, &u, true)?;

    for (name, sys) in [
        ("redundant", realize_conv(&layer)),
        ("compact", realize_conv_compact(&layer)),
    ] {
        sys.check()?;
        let y = simulate(&sys, &u, full_region(&layer, &u))?;
        println!(
            "{name:>9}: n1 = {:2}, n2 = {:2}, reachable = {:2}, max |simulate - conv| = {:.2e}",
            sys.n1(),
            sys.n2(),
            reachable_subspace(&sys).ncols(),
            y.max_abs_diff(&reference)
        );
    }

    let json = realize_conv(&layer).to_json();
    println!("serialized redundant realization: {} bytes", json.len());
    Ok(())
}
