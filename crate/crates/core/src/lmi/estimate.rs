//! End-to-end Lipschitz estimation: assemble, solve, and package a certificate.

use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lmi::problem::{SdpProblem, VarShape};
use crate::lmi::{
    build_dense_chain_lmi, build_lure_lmi, hybrid_supply, lipschitz_supply, slope_supply,
    ChainTail, Projection,
};
use crate::lure::{assemble_lure_with, error_system, resolve_kind, LureSystem, RealizationKind};
use crate::model::{flatten_dims, Activation, ConvLayerSpec, NetworkSpec};
use crate::sdpsolve::{solve, SolverOptions, SolverReport, SolverStatus};
use crate::signal2d::hinf_grid;

/// Version tag written into certificate files.
pub const CERTIFICATE_SCHEMA: &str = "lipcert.certificate/1";

#[derive(Debug, Clone)]
pub struct EstimateOptions {
    pub realization: RealizationKind,
    /// Restrict the storage to the reachable subspace.
    pub project: bool,
    /// Rescale the network output so the solver sees a gain of order one.
    pub normalize: bool,
    pub chain_tail: ChainTail,
    pub solver: SolverOptions,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self {
            realization: RealizationKind::Auto,
            project: true,
            normalize: true,
            chain_tail: ChainTail::Identity,
            solver: SolverOptions::default(),
        }
    }
}

/// A Lipschitz bound together with the LMI solution that proves it.
///
/// All matrices are in the coordinates of the unscaled network: `p1` and `p2`
/// act on the full states `x1`, `x2` of the error system, and `t`, when present,
/// is the reachable-subspace basis on which the dissipation LMI was imposed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzCertificate {
    pub schema: String,
    /// Certified upper bound on the Lipschitz constant.
    pub gamma: f64,
    pub gamma_sq: f64,
    pub hybrid: bool,
    pub realization: String,
    /// Whether the activation was appended to the conv output (hybrid case).
    pub output_activation: bool,
    pub chain_tail: f64,
    /// Output scaling used while solving; the stored values are already rescaled.
    pub output_scale: f64,
    #[serde(with = "matrix_serde")]
    pub p1: DMatrix<f64>,
    #[serde(with = "matrix_serde")]
    pub p2: DMatrix<f64>,
    #[serde(with = "matrix_serde::option")]
    pub t: Option<DMatrix<f64>>,
    pub lambda_c: Vec<f64>,
    pub lambda_dense: Vec<Vec<f64>>,
    #[serde(with = "matrix_serde::option")]
    pub q_c: Option<DMatrix<f64>>,
    pub q_c_eigenvalues: Vec<f64>,
    pub report: SolverReport,
}

impl LipschitzCertificate {
    pub fn realization_kind(&self) -> Result<RealizationKind> {
        self.realization.parse()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("certificate serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cert: Self =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("certificate: {e}")))?;
        if cert.schema != CERTIFICATE_SCHEMA {
            return Err(Error::Parse(format!(
                "certificate schema '{}' is not supported (expected '{CERTIFICATE_SCHEMA}')",
                cert.schema
            )));
        }
        Ok(cert)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io_at(path, e))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&std::fs::read_to_string(path).map_err(|e| Error::io_at(path, e))?)
    }
}

/// Product of the per-layer worst-case tap bounds: `sum_j ||K(j)||_2` for
/// convolutions and `||W||_2` for dense layers. Always a valid, usually loose,
/// Lipschitz bound.
pub fn naive_bound(spec: &NetworkSpec) -> f64 {
    let conv: f64 = spec
        .conv_layers
        .iter()
        .map(|l| {
            let s = l.kernel.size();
            let mut acc = 0.0;
            for a in 0..s {
                for b in 0..s {
                    acc += spectral_norm(&l.kernel.tap_matrix(a, b));
                }
            }
            acc
        })
        .product();
    let dense: f64 = spec
        .dense_layers
        .iter()
        .map(|d| spectral_norm(&d.weight))
        .product();
    conv * dense
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}

/// Rough gain used only to normalize the problem.
fn gain_estimate(spec: &NetworkSpec) -> f64 {
    let conv: f64 = spec.conv_layers.iter().map(|l| hinf_grid(l, 32)).product();
    let dense: f64 = spec
        .dense_layers
        .iter()
        .map(|d| spectral_norm(&d.weight))
        .product();
    let s = conv * dense;
    if s.is_finite() && s > 1e-150 {
        s
    } else {
        1.0
    }
}

/// Bound for a single convolutional layer.
pub fn estimate_lipschitz_layer(
    layer: &ConvLayerSpec,
    opts: &EstimateOptions,
) -> Result<LipschitzCertificate> {
    estimate_lipschitz_hybrid(&single_layer_network(layer)?, opts)
}

/// A one-layer network around `layer`; the input size only matters for validation.
pub fn single_layer_network(layer: &ConvLayerSpec) -> Result<NetworkSpec> {
    let d = layer.kernel.span() + 8;
    NetworkSpec::new(
        (d, d, layer.c_in()),
        Activation::Relu,
        vec![layer.clone()],
        vec![],
    )
}

/// The Lur'e system whose dissipativity the certificate asserts (error form,
/// unscaled).
pub fn certified_system(spec: &NetworkSpec, kind: RealizationKind) -> Result<LureSystem> {
    let kind = resolve_kind(&spec.conv_layers, kind);
    let sys = error_system(&assemble_lure_with(&spec.conv_layers, kind)?);
    Ok(if spec.is_hybrid() {
        sys.with_output_activation()
    } else {
        sys
    })
}

/// Minimizes `gamma^2` subject to the dissipation LMI of the conv stack and,
/// for networks with dense layers, the coupled dense chain LMI.
pub fn estimate_lipschitz_hybrid(
    spec: &NetworkSpec,
    opts: &EstimateOptions,
) -> Result<LipschitzCertificate> {
    spec.validate()?;
    let kind = resolve_kind(&spec.conv_layers, opts.realization);
    let sys = certified_system(spec, kind)?;
    let hybrid = spec.is_hybrid();
    let s = if opts.normalize {
        gain_estimate(spec)
    } else {
        1.0
    };
    let (m, p, nz) = (sys.n_in(), sys.n_out(), sys.nz());

    let mut weights: Vec<DMatrix<f64>> =
        spec.dense_layers.iter().map(|d| d.weight.clone()).collect();
    let solve_sys = if hybrid {
        if let Some(last) = weights.last_mut() {
            *last /= s;
        }
        sys.clone()
    } else {
        sys.with_output_scale(1.0 / s)
    };

    let mut problem = SdpProblem::new();
    let g = problem.add_var("gamma_sq", VarShape::Diagonal(1));
    problem.minimize_trace(g, 1.0);
    let q_c = hybrid.then(|| problem.add_var("Q_C", VarShape::Symmetric(p)));
    let outer = match q_c {
        Some(q) => hybrid_supply(g, q, m, p),
        None => lipschitz_supply(g, m, p),
    };
    let lam = (nz > 0).then(|| problem.add_var("Lambda_C", VarShape::Diagonal(nz)));
    let nl = lam.map(|l| slope_supply(l, nz));
    let projection = opts.project.then(|| Projection::reachable(&solve_sys));
    let lmi = build_lure_lmi(
        &mut problem,
        &solve_sys,
        &outer,
        nl.as_ref(),
        projection.as_ref(),
    )?;
    problem.add_psd("gamma_sq >= 0", g, 1.0)?;
    if let Some(l) = lam {
        problem.add_psd("Lambda_C >= 0", l, 1.0)?;
    }
    let lambdas = match q_c {
        Some(q) => {
            problem.add_psd("Q_C <= 0", q, -1.0)?;
            let (d_l, _) = flatten_dims(spec)?;
            build_dense_chain_lmi(&mut problem, &weights, q, d_l * d_l, opts.chain_tail)?
        }
        None => Vec::new(),
    };

    let sol = solve(&problem, &opts.solver)?;
    match sol.report.status {
        SolverStatus::Optimal => {}
        SolverStatus::Infeasible => {
            return Err(Error::Solver("the dissipation LMI is infeasible".into()));
        }
        SolverStatus::NumericalTrouble => {
            // A slightly suboptimal point is still a certificate if it is feasible;
            // validation decides. Grossly infeasible points are rejected here.
            if !(sol.report.primal_infeasibility <= 1e-6) {
                return Err(Error::Solver(format!(
                    "solver stopped after {} iterations with primal infeasibility {:.2e}",
                    sol.report.iterations, sol.report.primal_infeasibility
                )));
            }
        }
    }

    let s2 = s * s;
    let val = |id| problem.value(id, &sol.x);
    let lift = |v: Option<_>, basis: &DMatrix<f64>| match v {
        Some(id) => basis * val(id) * basis.transpose() * s2,
        None => DMatrix::zeros(basis.nrows(), basis.nrows()),
    };
    let p1 = lift(lmi.p1, &lmi.t1);
    let p2 = lift(lmi.p2, &lmi.t2);
    let diag = |id| -> Vec<f64> { val(id).diagonal().iter().map(|v| v * s2).collect() };
    let gamma_sq = val(g)[(0, 0)].max(0.0) * s2;
    let q_c_value = q_c.map(|q| val(q) * s2);
    let q_c_eigenvalues = q_c_value
        .as_ref()
        .map(|q| {
            let mut e: Vec<f64> = SymmetricEigen::new(q.clone())
                .eigenvalues
                .iter()
                .copied()
                .collect();
            e.sort_by(f64::total_cmp);
            e
        })
        .unwrap_or_default();
    let tail = match opts.chain_tail {
        ChainTail::Identity => 1.0,
        ChainTail::Constant(l2) => l2,
    };
    let gamma = if hybrid {
        (gamma_sq / (2.0 - tail)).sqrt()
    } else {
        gamma_sq.sqrt()
    };
    let mut report = sol.report.clone();
    report.objective *= s2;
    report.dual_objective *= s2;
    Ok(LipschitzCertificate {
        schema: CERTIFICATE_SCHEMA.to_string(),
        gamma,
        gamma_sq,
        hybrid,
        realization: kind.to_string(),
        output_activation: hybrid,
        chain_tail: tail,
        output_scale: s,
        p1,
        p2,
        t: projection.map(|pr| pr.t),
        lambda_c: lam.map(diag).unwrap_or_default(),
        lambda_dense: lambdas.into_iter().map(diag).collect(),
        q_c: q_c_value,
        q_c_eigenvalues,
        report,
    })
}

mod matrix_serde {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Repr {
        rows: usize,
        cols: usize,
        /// Row-major entries.
        data: Vec<f64>,
    }

    fn to_repr(m: &DMatrix<f64>) -> Repr {
        Repr {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.transpose().as_slice().to_vec(),
        }
    }

    fn from_repr<E: serde::de::Error>(r: Repr) -> Result<DMatrix<f64>, E> {
        if r.data.len() != r.rows * r.cols {
            return Err(E::custom(format!(
                "matrix has {} entries, expected {}x{}",
                r.data.len(),
                r.rows,
                r.cols
            )));
        }
        Ok(DMatrix::from_row_slice(r.rows, r.cols, &r.data))
    }

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        to_repr(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        from_repr(Repr::deserialize(d)?)
    }

    pub mod option {
        use super::*;

        pub fn serialize<S: Serializer>(m: &Option<DMatrix<f64>>, s: S) -> Result<S::Ok, S::Error> {
            m.as_ref().map(to_repr).serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(
            d: D,
        ) -> Result<Option<DMatrix<f64>>, D::Error> {
            Option::<Repr>::deserialize(d)?.map(from_repr).transpose()
        }
    }
}
