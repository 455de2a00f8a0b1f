//! Layer-level network blocks: layer specifications, static shape checking,
//! the two concrete architectures (autoencoder and one-class backbone),
//! parameter initialization, and checkpoint I/O.

pub mod checkpoint;
mod init;

pub use init::init_params;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::kernels::{conv_out_dim, tconv_out_dim};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Weight initialization family for a parameterized layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Normal with variance 2/fan_in; used before relu.
    HeNormal,
    /// Uniform on ±sqrt(6/(fan_in+fan_out)); used elsewhere.
    GlorotUniform,
}

/// One layer of a sequential network. Spatial layers use square kernels and
/// operate on channel-first `[c,h,w]` activations (batch dim added at run
/// time).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerSpec {
    Dense { width: usize, init: Init },
    Conv2d { channels: usize, kernel: usize, stride: usize, pad: usize, init: Init },
    TConv2d { channels: usize, kernel: usize, stride: usize, pad: usize, init: Init },
    MaxPool2d { kernel: usize, stride: usize },
    Relu,
    Sigmoid,
    Flatten,
    /// Inverse of `Flatten` for decoders: reshape features to `[c,h,w]`.
    Unflatten { shape: Vec<usize> },
}

impl LayerSpec {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            LayerSpec::Dense { width, .. } => width >= 1,
            LayerSpec::Conv2d { channels, kernel, stride, .. }
            | LayerSpec::TConv2d { channels, kernel, stride, .. } => {
                channels >= 1 && kernel >= 1 && stride >= 1
            }
            LayerSpec::MaxPool2d { kernel, stride } => kernel >= 1 && stride >= 1,
            LayerSpec::Relu | LayerSpec::Sigmoid | LayerSpec::Flatten => true,
            LayerSpec::Unflatten { ref shape } => !shape.is_empty(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("invalid layer spec: {self:?}")))
        }
    }
}

/// A named parameter tensor. `conv_kernel` marks (transposed) convolution
/// kernels, the only parameters subject to L2 decay.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<S> {
    pub name: String,
    pub value: Tensor<S>,
    pub conv_kernel: bool,
}

/// Node handles produced by one forward pass: the output of every layer plus
/// the graph ids of all parameters, aligned with [`Network::params`].
#[derive(Debug)]
pub struct ForwardPass {
    pub outputs: Vec<NodeId>,
    pub params: Vec<NodeId>,
}

impl ForwardPass {
    pub fn output(&self) -> NodeId {
        *self.outputs.last().expect("network has at least one layer")
    }
}

/// A sequential network: validated layer stack plus its flat parameter list.
/// Shape composition is checked once at construction, before any training.
#[derive(Debug, Clone)]
pub struct Network<S> {
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    params: Vec<Param<S>>,
    layer_shapes: Vec<Vec<usize>>,
}

impl<S: Scalar> Network<S> {
    /// Build a network, statically checking that consecutive layer shapes
    /// compose from `input_shape` (batchless). Parameters are created
    /// zero-filled; call [`init_params`] before use.
    pub fn new(input_shape: Vec<usize>, layers: Vec<LayerSpec>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("network needs at least one layer"));
        }
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::config(format!("invalid input shape {input_shape:?}")));
        }
        let mut params = Vec::new();
        let mut layer_shapes = Vec::with_capacity(layers.len());
        let mut shape = input_shape.clone();
        for (idx, layer) in layers.iter().enumerate() {
            layer.validate()?;
            let out = next_shape(&shape, layer, idx)?;
            for (role, pshape, conv) in layer_param_shapes(&shape, layer) {
                params.push(Param {
                    name: format!("layer{idx}.{role}"),
                    value: Tensor::zeros(pshape),
                    conv_kernel: conv,
                });
            }
            layer_shapes.push(out.clone());
            shape = out;
        }
        Ok(Network {
            input_shape,
            layers,
            params,
            layer_shapes,
        })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    /// Batchless output shape of the final layer.
    pub fn output_shape(&self) -> &[usize] {
        self.layer_shapes.last().expect("non-empty network")
    }

    pub fn params(&self) -> &[Param<S>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<S>] {
        &mut self.params
    }

    /// Total number of scalar parameters.
    pub fn n_params(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Run the network on a batch `x` of shape `[B, input_shape...]`.
    /// With `trainable` the parameters enter the graph as gradient leaves,
    /// otherwise as constants.
    pub fn forward(&self, g: &mut Graph<S>, x: NodeId, trainable: bool) -> Result<ForwardPass> {
        let xshape = g.value(x).shape().to_vec();
        if xshape.len() != self.input_shape.len() + 1 || xshape[1..] != self.input_shape[..] {
            return Err(Error::Shape {
                op: "network_forward",
                lhs: xshape,
                rhs: self.input_shape.clone(),
            });
        }
        let batch = xshape[0];
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut param_ids = Vec::with_capacity(self.params.len());
        let mut cursor = 0usize;
        let mut cur = x;
        for layer in &self.layers {
            let mut next_param = |g: &mut Graph<S>| -> NodeId {
                let t = self.params[cursor].value.clone();
                cursor += 1;
                let id = if trainable { g.leaf(t) } else { g.constant(t) };
                param_ids.push(id);
                id
            };
            cur = match *layer {
                LayerSpec::Dense { .. } => {
                    let w = next_param(g);
                    let b = next_param(g);
                    let prod = g.matmul(cur, w)?;
                    g.add(prod, b)?
                }
                LayerSpec::Conv2d { channels, stride, pad, .. } => {
                    let w = next_param(g);
                    let b = next_param(g);
                    let conv = g.conv2d(cur, w, stride, pad)?;
                    let b3 = g.reshape(b, vec![channels, 1, 1])?;
                    g.add(conv, b3)?
                }
                LayerSpec::TConv2d { channels, stride, pad, .. } => {
                    let w = next_param(g);
                    let b = next_param(g);
                    let conv = g.tconv2d(cur, w, stride, pad)?;
                    let b3 = g.reshape(b, vec![channels, 1, 1])?;
                    g.add(conv, b3)?
                }
                LayerSpec::MaxPool2d { kernel, stride } => g.maxpool2d(cur, kernel, stride)?,
                LayerSpec::Relu => g.relu(cur)?,
                LayerSpec::Sigmoid => g.sigmoid(cur)?,
                LayerSpec::Flatten => {
                    let n: usize = g.value(cur).shape()[1..].iter().product();
                    g.reshape(cur, vec![batch, n])?
                }
                LayerSpec::Unflatten { ref shape } => {
                    let mut s = vec![batch];
                    s.extend_from_slice(shape);
                    g.reshape(cur, s)?
                }
            };
            outputs.push(cur);
        }
        Ok(ForwardPass {
            outputs,
            params: param_ids,
        })
    }
}

/// Shape of a layer's output given its input shape, or a configuration error
/// naming the offending layer.
fn next_shape(shape: &[usize], layer: &LayerSpec, idx: usize) -> Result<Vec<usize>> {
    let fail = |why: &str| {
        Err(Error::config(format!(
            "layer {idx} ({layer:?}) cannot follow shape {shape:?}: {why}"
        )))
    };
    match *layer {
        LayerSpec::Dense { width, .. } => {
            if shape.len() != 1 {
                return fail("dense expects flat features");
            }
            Ok(vec![width])
        }
        LayerSpec::Conv2d { channels, kernel, stride, pad, .. } => {
            let [_, h, w] = *shape else {
                return fail("conv expects [c,h,w]");
            };
            match (conv_out_dim(h, kernel, stride, pad), conv_out_dim(w, kernel, stride, pad)) {
                (Some(ho), Some(wo)) => Ok(vec![channels, ho, wo]),
                _ => fail("kernel does not fit"),
            }
        }
        LayerSpec::TConv2d { channels, kernel, stride, pad, .. } => {
            let [_, h, w] = *shape else {
                return fail("tconv expects [c,h,w]");
            };
            match (tconv_out_dim(h, kernel, stride, pad), tconv_out_dim(w, kernel, stride, pad)) {
                (Some(ho), Some(wo)) => Ok(vec![channels, ho, wo]),
                _ => fail("output would be empty"),
            }
        }
        LayerSpec::MaxPool2d { kernel, stride } => {
            let [c, h, w] = *shape else {
                return fail("maxpool expects [c,h,w]");
            };
            match (conv_out_dim(h, kernel, stride, 0), conv_out_dim(w, kernel, stride, 0)) {
                (Some(ho), Some(wo)) => Ok(vec![c, ho, wo]),
                _ => fail("window does not fit"),
            }
        }
        LayerSpec::Relu | LayerSpec::Sigmoid => Ok(shape.to_vec()),
        LayerSpec::Flatten => Ok(vec![shape.iter().product()]),
        LayerSpec::Unflatten { shape: ref target } => {
            if shape.iter().product::<usize>() != target.iter().product::<usize>() {
                return fail("element count mismatch");
            }
            Ok(target.clone())
        }
    }
}

/// Parameter tensors a layer owns, given its input shape:
/// `(role, shape, conv_kernel_flag)`.
fn layer_param_shapes(in_shape: &[usize], layer: &LayerSpec) -> Vec<(&'static str, Vec<usize>, bool)> {
    match *layer {
        LayerSpec::Dense { width, .. } => vec![
            ("kernel", vec![in_shape[0], width], false),
            ("bias", vec![width], false),
        ],
        LayerSpec::Conv2d { channels, kernel, .. } => vec![
            ("kernel", vec![channels, in_shape[0], kernel, kernel], true),
            ("bias", vec![channels], false),
        ],
        LayerSpec::TConv2d { channels, kernel, .. } => vec![
            ("kernel", vec![in_shape[0], channels, kernel, kernel], true),
            ("bias", vec![channels], false),
        ],
        _ => Vec::new(),
    }
}

/// Autoencoder: `stages` conv(stride 2)+relu encoder blocks (channel widths
/// `base_width`, doubling per stage), a dense bottleneck of `code_dim` units,
/// and a mirrored transposed-convolution decoder ending in a sigmoid so
/// reconstructions lie in [0,1].
///
/// Spatial dims must be divisible by `2^stages`.
pub fn build_autoencoder<S: Scalar>(
    input_shape: &[usize],
    code_dim: usize,
    stages: usize,
    base_width: usize,
) -> Result<Network<S>> {
    let [c, h, w] = *input_shape else {
        return Err(Error::config(format!(
            "autoencoder input must be [c,h,w], got {input_shape:?}"
        )));
    };
    if !(1..=3).contains(&stages) {
        return Err(Error::config(format!("autoencoder stages must be 1..=3, got {stages}")));
    }
    if code_dim == 0 || base_width == 0 {
        return Err(Error::config("code_dim and base_width must be positive"));
    }
    let factor = 1usize << stages;
    if h % factor != 0 || w % factor != 0 {
        return Err(Error::config(format!(
            "spatial dims {h}x{w} not divisible by downsampling factor {factor}"
        )));
    }
    let widths: Vec<usize> = (0..stages).map(|i| base_width << i).collect();
    let (bh, bw) = (h / factor, w / factor);
    let flat = widths[stages - 1] * bh * bw;

    let mut layers = Vec::new();
    for &width in &widths {
        layers.push(LayerSpec::Conv2d {
            channels: width,
            kernel: 3,
            stride: 2,
            pad: 1,
            init: Init::HeNormal,
        });
        layers.push(LayerSpec::Relu);
    }
    layers.push(LayerSpec::Flatten);
    layers.push(LayerSpec::Dense { width: code_dim, init: Init::GlorotUniform });
    layers.push(LayerSpec::Dense { width: flat, init: Init::HeNormal });
    layers.push(LayerSpec::Relu);
    layers.push(LayerSpec::Unflatten { shape: vec![widths[stages - 1], bh, bw] });
    for i in (1..stages).rev() {
        layers.push(LayerSpec::TConv2d {
            channels: widths[i - 1],
            kernel: 4,
            stride: 2,
            pad: 1,
            init: Init::HeNormal,
        });
        layers.push(LayerSpec::Relu);
    }
    layers.push(LayerSpec::TConv2d {
        channels: c,
        kernel: 4,
        stride: 2,
        pad: 1,
        init: Init::GlorotUniform,
    });
    layers.push(LayerSpec::Sigmoid);

    let net = Network::new(input_shape.to_vec(), layers)?;
    debug_assert_eq!(net.output_shape(), input_shape);
    Ok(net)
}

/// One-class backbone: three conv(stride 2)+relu blocks (channel widths
/// `base_width`, doubling per stage), a dense layer producing the latent
/// representation z of `latent_dim` units, and a 1-unit sigmoid
/// classification head on top of z.
///
/// The latent output is the third-from-last layer; see
/// [`backbone_latent_layer`].
pub fn build_backbone<S: Scalar>(
    input_shape: &[usize],
    latent_dim: usize,
    base_width: usize,
) -> Result<Network<S>> {
    let [_, _, _] = *input_shape else {
        return Err(Error::config(format!(
            "backbone input must be [c,h,w], got {input_shape:?}"
        )));
    };
    if latent_dim == 0 || base_width == 0 {
        return Err(Error::config("latent_dim and base_width must be positive"));
    }
    let mut layers = Vec::new();
    for channels in [base_width, base_width * 2, base_width * 4] {
        layers.push(LayerSpec::Conv2d {
            channels,
            kernel: 3,
            stride: 2,
            pad: 1,
            init: Init::HeNormal,
        });
        layers.push(LayerSpec::Relu);
    }
    layers.push(LayerSpec::Flatten);
    layers.push(LayerSpec::Dense { width: latent_dim, init: Init::GlorotUniform });
    layers.push(LayerSpec::Dense { width: 1, init: Init::GlorotUniform });
    layers.push(LayerSpec::Sigmoid);
    Network::new(input_shape.to_vec(), layers)
}

/// Index into [`ForwardPass::outputs`] where the backbone's latent z lives
/// (the dense layer feeding the classification head).
pub fn backbone_latent_layer<S: Scalar>(net: &Network<S>) -> usize {
    net.layers().len() - 3
}

/// Distance subnetwork body: one dense layer + sigmoid applied to an
/// elementwise latent difference, producing D(z_i, z_j) in (0,1).
pub fn build_distance_net<S: Scalar>(latent_dim: usize) -> Result<Network<S>> {
    if latent_dim == 0 {
        return Err(Error::config("latent_dim must be positive"));
    }
    Network::new(
        vec![latent_dim],
        vec![
            LayerSpec::Dense { width: 1, init: Init::GlorotUniform },
            LayerSpec::Sigmoid,
        ],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;

    #[test]
    fn autoencoder_reconstruction_shape_matches_input() {
        let net = build_autoencoder::<f32>(&[1, 32, 32], 32, 3, 16).unwrap();
        assert_eq!(net.output_shape(), &[1, 32, 32]);

        let mut net = net;
        init_params(&mut net, 1);
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_fn(vec![2, 1, 32, 32], |i| ((i % 7) as f32) / 7.0));
        let pass = net.forward(&mut g, x, false).unwrap();
        let recon = g.value(pass.output());
        assert_eq!(recon.shape(), &[2, 1, 32, 32]);
        assert!(recon.as_slice().iter().all(|&v| (0.0..=1.0).contains(&v)));
        // Untrained reconstruction differs from the input almost surely.
        assert!(crate::metrics::mse(recon, g.value(x)).unwrap() > 0.0);
    }

    #[test]
    fn autoencoder_rejects_indivisible_dims() {
        assert!(build_autoencoder::<f32>(&[1, 28, 28], 32, 3, 16).is_err());
        assert!(build_autoencoder::<f32>(&[1, 28, 28], 32, 2, 16).is_ok());
        assert!(build_autoencoder::<f32>(&[1, 30, 30], 32, 1, 16).is_ok());
        assert!(build_autoencoder::<f32>(&[1, 27, 27], 32, 1, 16).is_err());
    }

    #[test]
    fn backbone_shapes_and_gradients() {
        let mut net = build_backbone::<f32>(&[1, 28, 28], 64, 32).unwrap();
        init_params(&mut net, 3);
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_fn(vec![4, 1, 28, 28], |i| ((i % 11) as f32) / 11.0));
        let pass = net.forward(&mut g, x, true).unwrap();

        let z = pass.outputs[backbone_latent_layer(&net)];
        assert_eq!(g.value(z).shape(), &[4, 64]);
        let y = pass.output();
        assert_eq!(g.value(y).shape(), &[4, 1]);
        assert!(g.value(y).as_slice().iter().all(|&v| v > 0.0 && v < 1.0));

        let loss = g.mean_all(y).unwrap();
        g.backward(loss).unwrap();
        for &pid in &pass.params {
            assert!(g.grad(pid).is_some(), "missing grad for a backbone param");
        }
    }

    #[test]
    fn desk_backbone_stays_under_budget() {
        let a = build_backbone::<f32>(&[1, 28, 28], 64, 32).unwrap();
        let b = build_backbone::<f32>(&[3, 32, 32], 64, 32).unwrap();
        assert!(a.n_params() < 500_000, "28x28 backbone has {}", a.n_params());
        assert!(b.n_params() < 500_000, "32x32 backbone has {}", b.n_params());
    }

    #[test]
    fn conv_kernels_carry_the_decay_flag() {
        let net = build_autoencoder::<f32>(&[1, 32, 32], 32, 3, 16).unwrap();
        for p in net.params() {
            let is_spatial_kernel = p.value.rank() == 4;
            assert_eq!(p.conv_kernel, is_spatial_kernel, "param {}", p.name);
        }
    }

    #[test]
    fn mismatched_stacks_are_rejected_up_front() {
        // Dense directly after conv (rank 3) must fail the static check.
        let layers = vec![
            LayerSpec::Conv2d { channels: 4, kernel: 3, stride: 1, pad: 0, init: Init::HeNormal },
            LayerSpec::Dense { width: 10, init: Init::GlorotUniform },
        ];
        assert!(Network::<f32>::new(vec![1, 8, 8], layers).is_err());

        // Unflatten to the wrong element count must fail too.
        let layers = vec![
            LayerSpec::Flatten,
            LayerSpec::Unflatten { shape: vec![2, 3, 3] },
        ];
        assert!(Network::<f32>::new(vec![1, 4, 4], layers).is_err());
    }

    #[test]
    fn forward_rejects_wrong_batch_shape() {
        let mut net = build_distance_net::<f32>(8).unwrap();
        init_params(&mut net, 0);
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(vec![4, 9]));
        assert!(net.forward(&mut g, x, false).is_err());
    }
}
