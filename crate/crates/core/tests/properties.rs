use lipcert::lure::IncrementalNonlinearity;
use lipcert::model::{network_to_json, parse_network};
use lipcert::realization::full_region;
use lipcert::{
    assemble_lure, conv_forward, error_system, estimate_lipschitz_layer, hinf_grid, lure_forward,
    reachable_subspace, realize_conv, realize_conv_compact, simulate, toeplitz_norm, Activation,
    ConvLayerSpec, DenseLayerSpec, EstimateOptions, Kernel2D, LipschitzCertificate, NetworkSpec,
    RoesserRealization, Signal2D,
};
use nalgebra::DMatrix;
use ndarray::Array3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone, Copy)]
struct Geometry {
    r_minus: usize,
    r_plus: usize,
    c_in: usize,
    c_out: usize,
    seed: u64,
}

fn geometry() -> impl Strategy<Value = Geometry> {
    (0usize..3, 0usize..3, 1usize..4, 1usize..4, any::<u64>()).prop_map(
        |(r_minus, r_plus, c_in, c_out, seed)| Geometry {
            r_minus,
            r_plus,
            c_in,
            c_out,
            seed,
        },
    )
}

fn layer(g: Geometry, rng: &mut ChaCha8Rng, biased: bool) -> ConvLayerSpec {
    let k = Kernel2D::random(rng, g.c_out, g.c_in, g.r_minus, g.r_plus);
    let bias = (0..g.c_out)
        .map(|_| {
            if biased {
                rng.sample(StandardNormal)
            } else {
                0.0
            }
        })
        .collect();
    ConvLayerSpec::new(k, bias).unwrap()
}

fn signal(rng: &mut ChaCha8Rng, origin: (i64, i64), h: usize, w: usize, c: usize) -> Signal2D {
    Signal2D::new(
        origin,
        Array3::from_shape_fn((h, w, c), |_| rng.sample(StandardNormal)),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn realizations_reproduce_convolution(g in geometry(), h in 1usize..9, w in 1usize..9, o1 in -3i64..4, o2 in -3i64..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(g.seed);
        let l = layer(g, &mut rng, true);
        let u = signal(&mut rng, (o1, o2), h, w, g.c_in);
        let y = conv_forward(&l, &u, true).unwrap();
        for sys in [realize_conv(&l), realize_conv_compact(&l)] {
            let ys = simulate(&sys, &u, full_region(&l, &u)).unwrap();
            prop_assert_eq!(ys.origin, y.origin);
            prop_assert!(ys.max_abs_diff(&y) <= 1e-10);
        }
    }

    #[test]
    fn convolution_is_linear(g in geometry(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(g.seed);
        let l = layer(g, &mut rng, false);
        let u = signal(&mut rng, (0, 0), 5, 6, g.c_in);
        let v = signal(&mut rng, (0, 0), 5, 6, g.c_in);
        let mut mix = u.clone();
        mix.data = &u.data * a + &v.data * b;
        let lhs = conv_forward(&l, &mix, false).unwrap();
        let mut rhs = conv_forward(&l, &u, false).unwrap();
        rhs.data = &rhs.data * a + &conv_forward(&l, &v, false).unwrap().data * b;
        prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-10);
    }

    #[test]
    fn reachable_basis_is_orthonormal(g in geometry()) {
        let mut rng = ChaCha8Rng::seed_from_u64(g.seed);
        let sys = realize_conv(&layer(g, &mut rng, false));
        let t = reachable_subspace(&sys);
        prop_assert!(t.ncols() <= sys.n1() + sys.n2());
        let gram = t.transpose() * &t;
        prop_assert!((gram - DMatrix::identity(t.ncols(), t.ncols())).amax() <= 1e-10);
    }

    #[test]
    fn realization_json_round_trip(g in geometry()) {
        let mut rng = ChaCha8Rng::seed_from_u64(g.seed);
        let sys = realize_conv_compact(&layer(g, &mut rng, true));
        let back = RoesserRealization::from_json(&sys.to_json()).unwrap();
        prop_assert_eq!(back, sys);
    }

    #[test]
    fn network_json_round_trip(g in geometry(), hidden in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(g.seed);
        let l = layer(g, &mut rng, true);
        let side = l.kernel.span() + 3;
        let flat = 9 * g.c_out;
        let w = DMatrix::from_fn(hidden, flat, |_, _| rng.sample(StandardNormal));
        let spec = NetworkSpec::new((side, side, g.c_in), Activation::Relu, vec![l], vec![DenseLayerSpec::unbiased(w)]).unwrap();
        prop_assert_eq!(parse_network(&network_to_json(&spec)).unwrap(), spec);
    }

    #[test]
    fn error_system_tracks_differences(g in geometry(), c2 in 1usize..3, h in 2usize..7, w in 2usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(g.seed);
        let l1 = layer(g, &mut rng, true);
        let g2 = Geometry { c_in: g.c_out, c_out: c2, ..g };
        let l2 = layer(g2, &mut rng, true);
        let sys = assemble_lure(&[l1, l2]).unwrap();
        let u1 = signal(&mut rng, (0, 0), h, w, g.c_in);
        let u2 = signal(&mut rng, (0, 0), h, w, g.c_in);
        let frame = sys.frame_for(&u1);
        let act = Activation::Relu;
        let tr1 = lure_forward(&sys, &act, &u1, frame).unwrap();
        let tr2 = lure_forward(&sys, &act, &u2, frame).unwrap();
        let phi = IncrementalNonlinearity { activation: act, reference: &tr1 };
        let e = lure_forward(&error_system(&sys), &phi, &u2.sub(&u1), frame).unwrap();
        prop_assert!(e.y.max_abs_diff(&tr2.y.sub(&tr1.y)) <= 1e-10);
    }

    #[test]
    fn toeplitz_grows_towards_hinf(seed in any::<u64>(), r in 0usize..2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = ConvLayerSpec::unbiased(Kernel2D::random(&mut rng, 1, 1, r, r));
        let h = hinf_grid(&l, 256);
        let (a, b) = (toeplitz_norm(&l, 4).unwrap(), toeplitz_norm(&l, 12).unwrap());
        prop_assert!(a <= b + 1e-9);
        prop_assert!(b <= h + 1e-6);
    }

    #[test]
    fn hinf_is_absolutely_homogeneous(seed in any::<u64>(), alpha in -5.0f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = ConvLayerSpec::unbiased(Kernel2D::random(&mut rng, 2, 1, 1, 0));
        let h = hinf_grid(&l, 64);
        prop_assert!((hinf_grid(&l.scaled(alpha), 64) - alpha.abs() * h).abs() <= 1e-9 * (1.0 + h));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn certified_bound_scales_with_kernel(seed in any::<u64>(), alpha in 0.2f64..8.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = ConvLayerSpec::unbiased(Kernel2D::random(&mut rng, 1, 1, 1, 1));
        let opts = EstimateOptions::default();
        let g = estimate_lipschitz_layer(&l, &opts).unwrap().gamma;
        let ga = estimate_lipschitz_layer(&l.scaled(alpha), &opts).unwrap().gamma;
        prop_assert!((ga / (alpha * g) - 1.0).abs() <= 1e-5, "{} vs {}", ga, alpha * g);
    }

    #[test]
    fn certified_bound_dominates_baselines(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = ConvLayerSpec::unbiased(Kernel2D::random(&mut rng, 1, 1, 1, 1));
        let g = estimate_lipschitz_layer(&l, &EstimateOptions::default()).unwrap().gamma;
        prop_assert!(g >= hinf_grid(&l, 128) * (1.0 - 1e-6));
        prop_assert!(g >= toeplitz_norm(&l, 10).unwrap() * (1.0 - 1e-6));
    }

    #[test]
    fn projection_never_loosens_the_bound(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = ConvLayerSpec::unbiased(Kernel2D::random(&mut rng, 1, 2, 1, 0));
        let projected = estimate_lipschitz_layer(&l, &EstimateOptions::default()).unwrap().gamma;
        let full = estimate_lipschitz_layer(&l, &EstimateOptions { project: false, ..Default::default() }).unwrap().gamma;
        prop_assert!(projected <= full * (1.0 + 1e-5), "{} > {}", projected, full);
    }

    #[test]
    fn certificate_json_round_trip(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = ConvLayerSpec::unbiased(Kernel2D::random(&mut rng, 1, 1, 0, 1));
        let cert = estimate_lipschitz_layer(&l, &EstimateOptions::default()).unwrap();
        prop_assert_eq!(LipschitzCertificate::from_json(&cert.to_json()).unwrap(), cert);
    }
}
