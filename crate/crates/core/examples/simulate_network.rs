//! Runs a two-layer ReLU stack through its Lur'e realization and through the
//! error dynamics of an input pair.
//!
//! ```bash
//! cargo run --release --example simulate_network
//! ```

use lipcert::lure::IncrementalNonlinearity;
use lipcert::{assemble_lure, conv_forward, error_system, lure_forward};
use lipcert::{Activation, ConvLayerSpec, Kernel2D, Signal2D};
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn main() -> lipcert::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let layers = vec![
        ConvLayerSpec::new(Kernel2D::random(&mut rng, 3, 1, 1, 1), vec![0.1, -0.2, 0.3])?,
        ConvLayerSpec::new(Kernel2D::random(&mut rng, 2, 3, 0, 2), vec![0.0, 1.0])?,
    ];
    let sys = assemble_lure(&layers)?;
    println!(
        "Lur'e system: n1 = {}, n2 = {}, nz = {}",
        sys.n1(),
        sys.n2(),
        sys.nz()
    );

    let u1 = Signal2D::new(
        (0, 0),
        Array3::from_shape_fn((10, 10, 1), |_| rng.sample(StandardNormal)),
    )?;
    let mut u2 = u1.clone();
    u2.data
        .mapv_inplace(|v| v + 0.05 * rng.sample::<f64, _>(StandardNormal));

    // Layer-by-layer reference.
    let hidden = conv_forward(&layers[0], &u1, true)?.map(|v| v.max(0.0));
    let direct = conv_forward(&layers[1], &hidden, true)?;

    let frame = sys.frame_for(&u1);
    let tr1 = lure_forward(&sys, &Activation::Relu, &u1, frame)?;
    let tr2 = lure_forward(&sys, &Activation::Relu, &u2, frame)?;
    // Biases make the two differ near the border, so compare on the nodes
    // whose receptive field lies inside the input.
    let (lo, side) = ((3, 3), 6);
    println!(
        "max |lure - layerwise| on the valid window = {:.2e}",
        tr1.y
            .crop(lo, side, side)
            .max_abs_diff(&direct.crop(lo, side, side))
    );

    let phi = IncrementalNonlinearity {
        activation: Activation::Relu,
        reference: &tr1,
    };
    let err = lure_forward(&error_system(&sys), &phi, &u2.sub(&u1), frame)?;
    let diff = tr2.y.sub(&tr1.y);
    println!(
        "max |error system - trajectory difference| = {:.2e}",
        err.y.max_abs_diff(&diff)
    );
    println!(
        "output/input increment ratio = {:.4}",
        (diff.norm_sq() / u2.sub(&u1).norm_sq()).sqrt()
    );
    Ok(())
}
