//! Lipschitz certificates for convolutional neural networks.
//!
//! A convolutional layer is a finite impulse response 2-D filter and therefore
//! admits a Roesser state-space realization. Cascading the realizations of all
//! layers with the activation function in feedback yields a 2-D Lur'e system,
//! whose incremental ℓ2-gain (the Lipschitz constant of the network) is bounded
//! by solving a dissipativity LMI. Networks that end in fully connected layers
//! are handled by coupling that LMI with a quadratic constraint on the dense
//! part through a shared multiplier.
//!
//! The crate is organised as
//!
//! - [`model`]: network description and its JSON file format,
//! - [`signal2d`]: finite-support 2-D signals, direct convolution and the
//!   Toeplitz / frequency-grid norm baselines,
//! - [`realization`]: Roesser realizations of single layers, simulation and
//!   reachable subspaces,
//! - [`lure`]: Lur'e assembly of a conv stack and its error dynamics,
//! - [`lmi`]: supply rates and the LMI builders,
//! - [`sdpsolve`]: an embedded primal-dual interior-point SDP solver and
//!   certificate validation,
//! - [`cli`]: the command implementations behind the `lipcert` binary.

pub mod cli;
pub mod error;
pub mod lmi;
pub mod lure;
pub mod model;
pub mod realization;
pub mod sdpsolve;
pub mod signal2d;

pub use error::{Error, Result};
pub use lmi::{
    estimate_lipschitz_hybrid, estimate_lipschitz_layer, EstimateOptions, LipschitzCertificate,
    QuadraticSupply,
};
pub use lure::{assemble_lure, error_system, lure_forward, LureSystem};
pub use model::{
    flatten_dims, load_network, save_network, Activation, ConvLayerSpec, DenseLayerSpec, Kernel2D,
    NetworkSpec,
};
pub use realization::{
    reachable_subspace, realize_conv, realize_conv_compact, simulate, split_reachable_basis,
    RoesserRealization,
};
pub use sdpsolve::{
    solve, validate::validate_certificate, SolverOptions, SolverReport, SolverStatus,
};
pub use signal2d::{conv_forward, hinf_grid, network_forward, toeplitz_norm, Signal2D};
