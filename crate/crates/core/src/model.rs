//! Network description, JSON file format and validation.
//!
//! Kernel taps are stored in `[out][in][j1][j2]` order. Position `a` along
//! `j1` (or `j2`) corresponds to the offset `a - r_minus` in the convolution
//!
//! ```text
//! y(i) = b + sum_{j in [-r_minus, r_plus]^2} K(j) u(i - j)
//! ```

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scalar activation, slope-restricted to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            other => Err(Error::Parse(format!("unknown activation '{other}'"))),
        }
    }
}

/// Convolution kernel with explicit support radii.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel2D {
    pub c_out: usize,
    pub c_in: usize,
    pub r_minus: usize,
    pub r_plus: usize,
    taps: Vec<f64>,
}

impl Kernel2D {
    /// Builds a kernel from a flat `[out][in][j1][j2]` buffer.
    pub fn from_flat(
        c_out: usize,
        c_in: usize,
        r_minus: usize,
        r_plus: usize,
        taps: Vec<f64>,
    ) -> Result<Self> {
        let s = r_minus + r_plus + 1;
        if c_out == 0 || c_in == 0 {
            return Err(Error::Dimension(
                "kernel channel counts must be positive".into(),
            ));
        }
        if taps.len() != c_out * c_in * s * s {
            return Err(Error::Dimension(format!(
                "kernel buffer has {} entries, expected {}",
                taps.len(),
                c_out * c_in * s * s
            )));
        }
        if taps.iter().any(|t| !t.is_finite()) {
            return Err(Error::Dimension("kernel taps must be finite".into()));
        }
        Ok(Self {
            c_out,
            c_in,
            r_minus,
            r_plus,
            taps,
        })
    }

    pub fn zeros(c_out: usize, c_in: usize, r_minus: usize, r_plus: usize) -> Self {
        let s = r_minus + r_plus + 1;
        Self {
            c_out,
            c_in,
            r_minus,
            r_plus,
            taps: vec![0.0; c_out * c_in * s * s],
        }
    }

    /// Kernel with independent standard normal taps.
    pub fn random<R: Rng + ?Sized>(
        rng: &mut R,
        c_out: usize,
        c_in: usize,
        r_minus: usize,
        r_plus: usize,
    ) -> Self {
        let mut k = Self::zeros(c_out, c_in, r_minus, r_plus);
        for t in k.taps.iter_mut() {
            *t = rng.sample(StandardNormal);
        }
        k
    }

    /// Support width `r_minus + r_plus + 1` along each axis.
    #[inline]
    pub fn size(&self) -> usize {
        self.r_minus + self.r_plus + 1
    }

    /// `r_minus + r_plus`, the number of samples the support spans beyond one.
    #[inline]
    pub fn span(&self) -> usize {
        self.r_minus + self.r_plus
    }

    #[inline]
    fn idx(&self, o: usize, i: usize, a: usize, b: usize) -> usize {
        let s = self.size();
        ((o * self.c_in + i) * s + a) * s + b
    }

    /// Tap at storage position `(a, b)`, i.e. kernel offset `(a - r_minus, b - r_minus)`.
    #[inline]
    pub fn tap(&self, o: usize, i: usize, a: usize, b: usize) -> f64 {
        self.taps[self.idx(o, i, a, b)]
    }

    #[inline]
    pub fn set_tap(&mut self, o: usize, i: usize, a: usize, b: usize, v: f64) {
        let k = self.idx(o, i, a, b);
        self.taps[k] = v;
    }

    /// The `c_out x c_in` tap matrix at storage position `(a, b)`.
    pub fn tap_matrix(&self, a: usize, b: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.c_out, self.c_in, |o, i| self.tap(o, i, a, b))
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn max_abs(&self) -> f64 {
        self.taps.iter().fold(0.0, |m, t| m.max(t.abs()))
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        let mut k = self.clone();
        k.taps.iter_mut().for_each(|t| *t *= alpha);
        k
    }
}

/// A convolutional layer: kernel plus bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayerSpec {
    pub kernel: Kernel2D,
    pub bias: Vec<f64>,
}

impl ConvLayerSpec {
    pub fn new(kernel: Kernel2D, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != kernel.c_out {
            return Err(Error::Dimension(format!(
                "bias has length {}, kernel has {} output channels",
                bias.len(),
                kernel.c_out
            )));
        }
        Ok(Self { kernel, bias })
    }

    /// Layer without bias.
    pub fn unbiased(kernel: Kernel2D) -> Self {
        let bias = vec![0.0; kernel.c_out];
        Self { kernel, bias }
    }

    /// Single-channel layer with one tap `c`.
    pub fn single_tap(c: f64) -> Self {
        let mut k = Kernel2D::zeros(1, 1, 0, 0);
        k.set_tap(0, 0, 0, 0, c);
        Self::unbiased(k)
    }

    pub fn c_in(&self) -> usize {
        self.kernel.c_in
    }

    pub fn c_out(&self) -> usize {
        self.kernel.c_out
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            kernel: self.kernel.scaled(alpha),
            bias: self.bias.clone(),
        }
    }
}

/// A fully connected layer `y = W u + beta`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayerSpec {
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl DenseLayerSpec {
    pub fn new(weight: DMatrix<f64>, bias: DVector<f64>) -> Result<Self> {
        if weight.nrows() != bias.len() {
            return Err(Error::Dimension(format!(
                "dense weight has {} rows, bias has length {}",
                weight.nrows(),
                bias.len()
            )));
        }
        Ok(Self { weight, bias })
    }

    pub fn unbiased(weight: DMatrix<f64>) -> Self {
        let bias = DVector::zeros(weight.nrows());
        Self { weight, bias }
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }
}

/// Convolutional network, optionally followed by fully connected layers.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub input_height: usize,
    pub input_width: usize,
    pub input_channels: usize,
    pub activation: Activation,
    pub conv_layers: Vec<ConvLayerSpec>,
    pub dense_layers: Vec<DenseLayerSpec>,
}

impl NetworkSpec {
    /// Builds and validates a network.
    pub fn new(
        input: (usize, usize, usize),
        activation: Activation,
        conv_layers: Vec<ConvLayerSpec>,
        dense_layers: Vec<DenseLayerSpec>,
    ) -> Result<Self> {
        let spec = Self {
            input_height: input.0,
            input_width: input.1,
            input_channels: input.2,
            activation,
            conv_layers,
            dense_layers,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Checks every invariant, naming the offending layer (1-based) on failure.
    pub fn validate(&self) -> Result<()> {
        if self.input_height == 0 || self.input_width == 0 || self.input_channels == 0 {
            return Err(Error::schema(
                "input",
                "height, width and channels must be positive",
            ));
        }
        if self.conv_layers.is_empty() {
            return Err(Error::schema(
                "conv_layers",
                "at least one convolutional layer is required",
            ));
        }
        let mut c = self.input_channels;
        for (k, layer) in self.conv_layers.iter().enumerate() {
            let name = format!("conv layer {}", k + 1);
            let ker = &layer.kernel;
            if ker.c_in != c {
                return Err(Error::schema(
                    name,
                    format!("expects {} input channels but receives {}", ker.c_in, c),
                ));
            }
            let s = ker.size();
            if ker.taps.len() != ker.c_out * ker.c_in * s * s {
                return Err(Error::schema(name, "kernel dimensions inconsistent"));
            }
            if ker.taps.iter().any(|t| !t.is_finite()) {
                return Err(Error::schema(name, "kernel contains non-finite taps"));
            }
            if layer.bias.len() != ker.c_out {
                return Err(Error::schema(
                    name,
                    format!(
                        "bias has length {}, expected {}",
                        layer.bias.len(),
                        ker.c_out
                    ),
                ));
            }
            if layer.bias.iter().any(|b| !b.is_finite()) {
                return Err(Error::schema(name, "bias contains non-finite entries"));
            }
            c = ker.c_out;
        }
        if !self.dense_layers.is_empty() {
            let (h, w, c) = conv_output_shape(self)?;
            let mut p = h * w * c;
            for (k, layer) in self.dense_layers.iter().enumerate() {
                let name = format!("dense layer {}", k + 1);
                if layer.inputs() != p {
                    return Err(Error::schema(
                        name,
                        format!("expects {} inputs but receives {}", layer.inputs(), p),
                    ));
                }
                if layer.bias.len() != layer.outputs() {
                    return Err(Error::schema(name, "bias length differs from weight rows"));
                }
                if layer
                    .weight
                    .iter()
                    .chain(layer.bias.iter())
                    .any(|v| !v.is_finite())
                {
                    return Err(Error::schema(name, "non-finite entries"));
                }
                p = layer.outputs();
            }
        }
        Ok(())
    }

    pub fn is_hybrid(&self) -> bool {
        !self.dense_layers.is_empty()
    }

    /// Sum of `r_minus` over the conv stack.
    pub fn total_r_minus(&self) -> usize {
        self.conv_layers.iter().map(|l| l.kernel.r_minus).sum()
    }

    /// Sum of `r_plus` over the conv stack.
    pub fn total_r_plus(&self) -> usize {
        self.conv_layers.iter().map(|l| l.kernel.r_plus).sum()
    }

    /// Dimension of the network output.
    pub fn output_dim(&self) -> Result<usize> {
        match self.dense_layers.last() {
            Some(l) => Ok(l.outputs()),
            None => {
                let (h, w, c) = conv_output_shape(self)?;
                Ok(h * w * c)
            }
        }
    }
}

/// Spatial size and channels after the conv stack under valid cropping.
pub fn conv_output_shape(spec: &NetworkSpec) -> Result<(usize, usize, usize)> {
    let mut h = spec.input_height as i64;
    let mut w = spec.input_width as i64;
    let mut c = spec.input_channels;
    for (k, layer) in spec.conv_layers.iter().enumerate() {
        let span = layer.kernel.span() as i64;
        h -= span;
        w -= span;
        if h <= 0 || w <= 0 {
            return Err(Error::Geometry(format!(
                "conv layer {} support ({}x{}) exceeds its {}x{} input",
                k + 1,
                span + 1,
                span + 1,
                h + span,
                w + span
            )));
        }
        c = layer.kernel.c_out;
    }
    Ok((h as usize, w as usize, c))
}

/// Returns `(d_l, c_l)`: the side length and channel count of the conv-stack
/// output that the flattening operator consumes.
///
/// Inputs are assumed square; for rectangular inputs use [`conv_output_shape`].
pub fn flatten_dims(spec: &NetworkSpec) -> Result<(usize, usize)> {
    let (h, w, c) = conv_output_shape(spec)?;
    if h != w {
        return Err(Error::Geometry(format!(
            "conv output is {h}x{w}, not square"
        )));
    }
    Ok((h, c))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InputDoc {
    height: usize,
    width: usize,
    channels: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConvDoc {
    r_minus: usize,
    r_plus: usize,
    kernel: Vec<Vec<Vec<Vec<f64>>>>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DenseDoc {
    weight: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkDoc {
    input: InputDoc,
    activation: Activation,
    conv_layers: Vec<ConvDoc>,
    #[serde(default)]
    dense_layers: Vec<DenseDoc>,
}

fn conv_from_doc(k: usize, doc: ConvDoc) -> Result<ConvLayerSpec> {
    let name = format!("conv layer {}", k + 1);
    let s = doc.r_minus + doc.r_plus + 1;
    let c_out = doc.kernel.len();
    if c_out == 0 {
        return Err(Error::schema(name, "kernel has no output channels"));
    }
    let c_in = doc.kernel[0].len();
    if c_in == 0 {
        return Err(Error::schema(name, "kernel has no input channels"));
    }
    let mut taps = Vec::with_capacity(c_out * c_in * s * s);
    for (o, per_out) in doc.kernel.iter().enumerate() {
        if per_out.len() != c_in {
            return Err(Error::schema(
                name,
                format!(
                    "output channel {o} has {} input channels, expected {c_in}",
                    per_out.len()
                ),
            ));
        }
        for plane in per_out {
            if plane.len() != s || plane.iter().any(|row| row.len() != s) {
                return Err(Error::schema(
                    name,
                    format!(
                        "kernel planes must be {s}x{s} for r_minus={}, r_plus={}",
                        doc.r_minus, doc.r_plus
                    ),
                ));
            }
            for row in plane {
                taps.extend_from_slice(row);
            }
        }
    }
    let kernel = Kernel2D::from_flat(c_out, c_in, doc.r_minus, doc.r_plus, taps)
        .map_err(|e| Error::schema(name.clone(), e.to_string()))?;
    if doc.bias.len() != c_out {
        return Err(Error::schema(
            name,
            format!("bias has length {}, expected {c_out}", doc.bias.len()),
        ));
    }
    Ok(ConvLayerSpec {
        kernel,
        bias: doc.bias,
    })
}

fn dense_from_doc(k: usize, doc: DenseDoc) -> Result<DenseLayerSpec> {
    let name = format!("dense layer {}", k + 1);
    let rows = doc.weight.len();
    if rows == 0 {
        return Err(Error::schema(name, "weight has no rows"));
    }
    let cols = doc.weight[0].len();
    if doc.weight.iter().any(|r| r.len() != cols) || cols == 0 {
        return Err(Error::schema(
            name,
            "weight rows have unequal or zero length",
        ));
    }
    if doc.bias.len() != rows {
        return Err(Error::schema(
            name,
            format!("bias has length {}, expected {rows}", doc.bias.len()),
        ));
    }
    let weight = DMatrix::from_fn(rows, cols, |i, j| doc.weight[i][j]);
    Ok(DenseLayerSpec {
        weight,
        bias: DVector::from_vec(doc.bias),
    })
}

/// Parses and validates a network document.
pub fn parse_network(text: &str) -> Result<NetworkSpec> {
    let doc: NetworkDoc = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let conv_layers = doc
        .conv_layers
        .into_iter()
        .enumerate()
        .map(|(k, c)| conv_from_doc(k, c))
        .collect::<Result<Vec<_>>>()?;
    let dense_layers = doc
        .dense_layers
        .into_iter()
        .enumerate()
        .map(|(k, d)| dense_from_doc(k, d))
        .collect::<Result<Vec<_>>>()?;
    let spec = NetworkSpec {
        input_height: doc.input.height,
        input_width: doc.input.width,
        input_channels: doc.input.channels,
        activation: doc.activation,
        conv_layers,
        dense_layers,
    };
    spec.validate()?;
    Ok(spec)
}

/// Reads a network file.
pub fn load_network(path: impl AsRef<Path>) -> Result<NetworkSpec> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io_at(path, e))?;
    parse_network(&text)
}

/// Serializes a network to its JSON document.
pub fn network_to_json(spec: &NetworkSpec) -> String {
    let doc = NetworkDoc {
        input: InputDoc {
            height: spec.input_height,
            width: spec.input_width,
            channels: spec.input_channels,
        },
        activation: spec.activation,
        conv_layers: spec
            .conv_layers
            .iter()
            .map(|l| {
                let k = &l.kernel;
                let s = k.size();
                let kernel = (0..k.c_out)
                    .map(|o| {
                        (0..k.c_in)
                            .map(|i| {
                                (0..s)
                                    .map(|a| (0..s).map(|b| k.tap(o, i, a, b)).collect())
                                    .collect()
                            })
                            .collect()
                    })
                    .collect();
                ConvDoc {
                    r_minus: k.r_minus,
                    r_plus: k.r_plus,
                    kernel,
                    bias: l.bias.clone(),
                }
            })
            .collect(),
        dense_layers: spec
            .dense_layers
            .iter()
            .map(|l| DenseDoc {
                weight: (0..l.weight.nrows())
                    .map(|i| l.weight.row(i).iter().copied().collect())
                    .collect(),
                bias: l.bias.iter().copied().collect(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("network document serializes")
}

/// Writes a network file.
pub fn save_network(spec: &NetworkSpec, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, network_to_json(spec)).map_err(|e| Error::io_at(path, e))?;
    Ok(())
}
