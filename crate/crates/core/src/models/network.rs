use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    LeakyRelu,
    Tanh,
}

/// One stage of a feed-forward network. Shapes exclude the batch axis.
#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    /// `x · W + b` with `W: (inputs, outputs)`.
    Linear {
        inputs: usize,
        outputs: usize,
    },
    /// Same-size 2-D convolution with `W: (out_ch, in_ch, k, k)` plus bias.
    Conv {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
    },
    Upsample,
    Reshape(Vec<usize>),
    Act(Activation),
}

/// Name and shape of one parameter tensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

/// A stack of layers with its parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
    params: Vec<Tensor>,
    layout: Vec<ParamInfo>,
}

impl Network {
    /// Builds the network with He-initialized weights (fan-in scaled
    /// Gaussian) and zero biases.
    pub fn new(layers: Vec<Layer>, rng: &mut Rng) -> Self {
        let mut params = Vec::new();
        let mut layout = Vec::new();
        for (i, layer) in layers.iter().enumerate() {
            let (w_shape, fan_in, bias) = match *layer {
                Layer::Linear { inputs, outputs } => (vec![inputs, outputs], inputs, outputs),
                Layer::Conv {
                    in_ch,
                    out_ch,
                    kernel,
                } => (
                    vec![out_ch, in_ch, kernel, kernel],
                    in_ch * kernel * kernel,
                    out_ch,
                ),
                _ => continue,
            };
            let std = (2.0 / fan_in as f64).sqrt();
            let n: usize = w_shape.iter().product();
            let w: Vec<f64> = (0..n).map(|_| std * rng.normal()).collect();
            layout.push(ParamInfo {
                name: format!("layer{i}.weight"),
                shape: w_shape.clone(),
            });
            params.push(Tensor::new(w_shape, w).expect("weight shape"));
            layout.push(ParamInfo {
                name: format!("layer{i}.bias"),
                shape: vec![bias],
            });
            params.push(Tensor::zeros([bias]));
        }
        Network {
            layers,
            params,
            layout,
        }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn layout(&self) -> &[ParamInfo] {
        &self.layout
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// All parameters concatenated in layout order.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for p in &self.params {
            out.extend_from_slice(p.data());
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::shape(
                "set_flat_params",
                format!("{} values for {} parameters", flat.len(), self.num_params()),
            ));
        }
        let mut offset = 0;
        for p in &mut self.params {
            let n = p.len();
            p.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Puts every parameter on the tape, as gradient-receiving leaves when
    /// `trainable`, otherwise as constants.
    pub fn register<'a>(&'a self, tape: &mut Tape<'a>, trainable: bool) -> Result<Vec<NodeId>> {
        self.params
            .iter()
            .map(|p| {
                if trainable {
                    tape.param(p)
                } else {
                    tape.constant_ref(p)
                }
            })
            .collect()
    }

    /// Applies the layers to `x` (batch-first) using parameter nodes from
    /// [`Network::register`].
    pub fn apply(&self, tape: &mut Tape<'_>, x: NodeId, params: &[NodeId]) -> Result<NodeId> {
        let mut h = x;
        let mut next = params.iter();
        let mut take = || {
            next.next()
                .copied()
                .ok_or_else(|| Error::invalid("parameter list shorter than layout"))
        };
        for layer in &self.layers {
            h = match layer {
                Layer::Linear { .. } => {
                    let (w, b) = (take()?, take()?);
                    let y = tape.matmul(h, w)?;
                    tape.add_bias(y, b)?
                }
                Layer::Conv { .. } => {
                    let (w, b) = (take()?, take()?);
                    let y = tape.conv2d(h, w)?;
                    tape.add_bias(y, b)?
                }
                Layer::Upsample => tape.upsample2x(h)?,
                Layer::Reshape(shape) => {
                    let batch = tape.shape(h)[0];
                    let mut full = vec![batch];
                    full.extend_from_slice(shape);
                    tape.reshape(h, full)?
                }
                Layer::Act(Activation::Relu) => tape.relu(h)?,
                Layer::Act(Activation::LeakyRelu) => tape.leaky_relu(h)?,
                Layer::Act(Activation::Tanh) => tape.tanh(h)?,
            };
        }
        Ok(h)
    }

    /// Registers parameters and applies the network in one call.
    pub fn forward<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        x: NodeId,
        trainable: bool,
    ) -> Result<(NodeId, Vec<NodeId>)> {
        let params = self.register(tape, trainable)?;
        let out = self.apply(tape, x, &params)?;
        Ok((out, params))
    }

    /// Forward pass outside of any training loop.
    pub fn eval(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let xn = tape.constant(x.clone())?;
        let (out, _) = self.forward(&mut tape, xn, false)?;
        Ok(tape.value(out).clone())
    }
}
