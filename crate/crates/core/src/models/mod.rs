//! Toy generators, discriminators and encoders, plus the GAN, GLO and
//! autoencoder-GAN training protocols.

mod checkpoint;
mod network;
mod train;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, AnyModel,
    CHECKPOINT_MAGIC,
};
pub use network::{Activation, Layer, Network, ParamInfo};
pub use train::{
    sample_latents, train_aegan, train_autoencoder, train_gan, train_glo, AeganOutcome, GanOutcome,
    GloState, TrainConfig,
};

use std::fmt;
use std::str::FromStr;

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

const GENERATOR_INIT_STREAM: u64 = 0x6e6e_0001;
const DISCRIMINATOR_INIT_STREAM: u64 = 0x6e6e_0002;
const ENCODER_INIT_STREAM: u64 = 0x6e6e_0003;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Architecture {
    Mlp,
    UpsampleConv,
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Architecture::Mlp => "mlp",
            Architecture::UpsampleConv => "upsample-conv",
        })
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(Architecture::Mlp),
            "upsample-conv" => Ok(Architecture::UpsampleConv),
            other => Err(Error::invalid(format!("unknown architecture '{other}'"))),
        }
    }
}

/// Generator architecture: latent codes of `latent_dim` entries map to
/// `image_shape = (channels, side, side)` images through a final tanh.
///
/// For `UpsampleConv`, `hidden_widths[0]` is the channel count of the initial
/// 4×4 feature map and each following entry is the width of one
/// upsample-then-convolve stage, so there must be `log2(side / 4) + 1`
/// entries.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GeneratorSpec {
    pub architecture: Architecture,
    pub latent_dim: usize,
    pub image_shape: [usize; 3],
    pub hidden_widths: Vec<usize>,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec {
            architecture: Architecture::Mlp,
            latent_dim: 32,
            image_shape: [1, 32, 32],
            hidden_widths: vec![128],
        }
    }
}

fn check_image_shape(shape: [usize; 3]) -> Result<()> {
    let [c, h, w] = shape;
    if c == 0 || h != w || !(h == 16 || h == 32) {
        return Err(Error::invalid(format!(
            "unsupported image shape {c}x{h}x{w}; need square 16 or 32 pixels"
        )));
    }
    Ok(())
}

fn mlp_layers(widths: &[usize], inner: Activation) -> Vec<Layer> {
    let mut layers = Vec::new();
    for (i, pair) in widths.windows(2).enumerate() {
        layers.push(Layer::Linear {
            inputs: pair[0],
            outputs: pair[1],
        });
        if i + 2 < widths.len() {
            layers.push(Layer::Act(inner));
        }
    }
    layers
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        check_image_shape(self.image_shape)?;
        if self.latent_dim == 0 || self.hidden_widths.contains(&0) {
            return Err(Error::invalid(
                "latent_dim and hidden widths must be positive",
            ));
        }
        if self.architecture == Architecture::UpsampleConv {
            let stages = (self.image_shape[1] / 4).trailing_zeros() as usize;
            if self.hidden_widths.len() != stages + 1 {
                return Err(Error::invalid(format!(
                    "upsample-conv at side {} needs {} hidden widths, got {}",
                    self.image_shape[1],
                    stages + 1,
                    self.hidden_widths.len()
                )));
            }
        }
        Ok(())
    }

    pub fn image_len(&self) -> usize {
        self.image_shape.iter().product()
    }

    fn layers(&self) -> Vec<Layer> {
        let [c, h, w] = self.image_shape;
        match self.architecture {
            Architecture::Mlp => {
                let mut widths = vec![self.latent_dim];
                widths.extend_from_slice(&self.hidden_widths);
                widths.push(self.image_len());
                let mut layers = mlp_layers(&widths, Activation::Relu);
                layers.push(Layer::Act(Activation::Tanh));
                layers.push(Layer::Reshape(vec![c, h, w]));
                layers
            }
            Architecture::UpsampleConv => {
                let w0 = self.hidden_widths[0];
                let mut layers = vec![
                    Layer::Linear {
                        inputs: self.latent_dim,
                        outputs: w0 * 16,
                    },
                    Layer::Act(Activation::Relu),
                    Layer::Reshape(vec![w0, 4, 4]),
                ];
                for pair in self.hidden_widths.windows(2) {
                    layers.push(Layer::Upsample);
                    layers.push(Layer::Conv {
                        in_ch: pair[0],
                        out_ch: pair[1],
                        kernel: 3,
                    });
                    layers.push(Layer::Act(Activation::Relu));
                }
                layers.push(Layer::Conv {
                    in_ch: *self.hidden_widths.last().expect("validated"),
                    out_ch: c,
                    kernel: 3,
                });
                layers.push(Layer::Act(Activation::Tanh));
                layers
            }
        }
    }
}

/// MLP discriminator over flattened images, leaky-ReLU hidden layers, one
/// logit per image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DiscriminatorSpec {
    pub image_shape: [usize; 3],
    pub hidden_widths: Vec<usize>,
}

impl Default for DiscriminatorSpec {
    fn default() -> Self {
        DiscriminatorSpec {
            image_shape: [1, 32, 32],
            hidden_widths: vec![128],
        }
    }
}

impl DiscriminatorSpec {
    pub fn validate(&self) -> Result<()> {
        check_image_shape(self.image_shape)?;
        if self.hidden_widths.contains(&0) {
            return Err(Error::invalid("hidden widths must be positive"));
        }
        Ok(())
    }

    fn layers(&self) -> Vec<Layer> {
        let flat = self.image_shape.iter().product();
        let mut widths = vec![flat];
        widths.extend_from_slice(&self.hidden_widths);
        widths.push(1);
        let mut layers = vec![Layer::Reshape(vec![flat])];
        layers.extend(mlp_layers(&widths, Activation::LeakyRelu));
        layers
    }
}

/// MLP encoder from flattened images to latent codes (linear output).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncoderSpec {
    pub image_shape: [usize; 3],
    pub latent_dim: usize,
    pub hidden_widths: Vec<usize>,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        EncoderSpec {
            image_shape: [1, 32, 32],
            latent_dim: 32,
            hidden_widths: vec![128],
        }
    }
}

impl EncoderSpec {
    pub fn validate(&self) -> Result<()> {
        check_image_shape(self.image_shape)?;
        if self.latent_dim == 0 || self.hidden_widths.contains(&0) {
            return Err(Error::invalid(
                "latent_dim and hidden widths must be positive",
            ));
        }
        Ok(())
    }

    fn layers(&self) -> Vec<Layer> {
        let flat = self.image_shape.iter().product();
        let mut widths = vec![flat];
        widths.extend_from_slice(&self.hidden_widths);
        widths.push(self.latent_dim);
        let mut layers = vec![Layer::Reshape(vec![flat])];
        layers.extend(mlp_layers(&widths, Activation::LeakyRelu));
        layers
    }
}

/// Tagged spec, as stored in checkpoint headers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ModelSpec {
    Generator(GeneratorSpec),
    Discriminator(DiscriminatorSpec),
    Encoder(EncoderSpec),
}

fn join_widths(w: &[usize]) -> String {
    w.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let shape = |s: &[usize; 3]| format!("{}x{}x{}", s[0], s[1], s[2]);
        match self {
            ModelSpec::Generator(g) => write!(
                f,
                "generator arch={} latent={} shape={} hidden={}",
                g.architecture,
                g.latent_dim,
                shape(&g.image_shape),
                join_widths(&g.hidden_widths)
            ),
            ModelSpec::Discriminator(d) => write!(
                f,
                "discriminator shape={} hidden={}",
                shape(&d.image_shape),
                join_widths(&d.hidden_widths)
            ),
            ModelSpec::Encoder(e) => write!(
                f,
                "encoder latent={} shape={} hidden={}",
                e.latent_dim,
                shape(&e.image_shape),
                join_widths(&e.hidden_widths)
            ),
        }
    }
}

/// Parses `"1x32x32"`.
pub fn parse_image_shape(s: &str) -> Result<[usize; 3]> {
    let parts: Vec<usize> = s
        .split('x')
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::invalid(format!("bad image shape '{s}'")))?;
    match parts.as_slice() {
        &[c, h, w] => Ok([c, h, w]),
        _ => Err(Error::invalid(format!("bad image shape '{s}'"))),
    }
}

/// Parses a comma-separated width list; the empty string is an empty list.
pub fn parse_widths(s: &str) -> Result<Vec<usize>> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| Error::invalid(format!("bad width list '{s}'")))
        })
        .collect()
}

impl FromStr for ModelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut words = s.split_whitespace();
        let kind = words
            .next()
            .ok_or_else(|| Error::Format("empty model spec".into()))?;
        let mut fields = std::collections::BTreeMap::new();
        for w in words {
            let (k, v) = w
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("bad spec field '{w}'")))?;
            fields.insert(k, v);
        }
        let get = |k: &str| {
            fields
                .get(k)
                .copied()
                .ok_or_else(|| Error::Format(format!("model spec lacks '{k}'")))
        };
        let num = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::Format(format!("bad number for '{k}'")))
        };
        let spec = match kind {
            "generator" => ModelSpec::Generator(GeneratorSpec {
                architecture: get("arch")?.parse()?,
                latent_dim: num("latent")?,
                image_shape: parse_image_shape(get("shape")?)?,
                hidden_widths: parse_widths(get("hidden")?)?,
            }),
            "discriminator" => ModelSpec::Discriminator(DiscriminatorSpec {
                image_shape: parse_image_shape(get("shape")?)?,
                hidden_widths: parse_widths(get("hidden")?)?,
            }),
            "encoder" => ModelSpec::Encoder(EncoderSpec {
                latent_dim: num("latent")?,
                image_shape: parse_image_shape(get("shape")?)?,
                hidden_widths: parse_widths(get("hidden")?)?,
            }),
            other => return Err(Error::Format(format!("unknown model kind '{other}'"))),
        };
        Ok(spec)
    }
}

/// Generator `z ↦ image`.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorModel {
    spec: GeneratorSpec,
    net: Network,
}

impl GeneratorModel {
    /// He-initialized generator, deterministic in `seed`.
    pub fn init(spec: GeneratorSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let net = Network::new(spec.layers(), &mut Rng::new(seed, GENERATOR_INIT_STREAM));
        Ok(GeneratorModel { spec, net })
    }

    pub(crate) fn from_parts(spec: GeneratorSpec, flat: &[f64]) -> Result<Self> {
        let mut m = Self::init(spec, 0)?;
        m.net.set_flat_params(flat)?;
        Ok(m)
    }

    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.net
    }

    pub fn latent_dim(&self) -> usize {
        self.spec.latent_dim
    }

    pub fn image_shape(&self) -> [usize; 3] {
        self.spec.image_shape
    }

    fn check_latents(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 2 || shape[1] != self.spec.latent_dim {
            return Err(Error::shape(
                "generate",
                format!("latents {:?}, latent_dim {}", shape, self.spec.latent_dim),
            ));
        }
        Ok(())
    }

    /// Records `G(z)` on `tape`; `z` must be `(n, latent_dim)`. Returns the
    /// `(n, c, h, w)` output node and the parameter nodes.
    pub fn forward<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        z: NodeId,
        trainable: bool,
    ) -> Result<(NodeId, Vec<NodeId>)> {
        self.check_latents(tape.shape(z))?;
        self.net.forward(tape, z, trainable)
    }

    /// Images for a `(n, latent_dim)` batch of latent codes.
    pub fn generate(&self, z: &Tensor) -> Result<Tensor> {
        self.check_latents(z.shape())?;
        self.net.eval(z)
    }
}

/// Discriminator `image ↦ logit`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorModel {
    spec: DiscriminatorSpec,
    net: Network,
}

impl DiscriminatorModel {
    pub fn init(spec: DiscriminatorSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let net = Network::new(
            spec.layers(),
            &mut Rng::new(seed, DISCRIMINATOR_INIT_STREAM),
        );
        Ok(DiscriminatorModel { spec, net })
    }

    pub(crate) fn from_parts(spec: DiscriminatorSpec, flat: &[f64]) -> Result<Self> {
        let mut m = Self::init(spec, 0)?;
        m.net.set_flat_params(flat)?;
        Ok(m)
    }

    pub fn spec(&self) -> &DiscriminatorSpec {
        &self.spec
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.net
    }

    /// Raw logits, shape `(n, 1)`.
    pub fn logits(&self, images: &Tensor) -> Result<Tensor> {
        self.net.eval(images)
    }

    /// `D(x) = sigmoid(logit)`, one probability per image.
    pub fn probability(&self, images: &Tensor) -> Result<Vec<f64>> {
        Ok(self
            .logits(images)?
            .data()
            .iter()
            .map(|&l| crate::autodiff::sigmoid(l))
            .collect())
    }
}

/// Encoder `image ↦ z`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderModel {
    spec: EncoderSpec,
    net: Network,
}

impl EncoderModel {
    pub fn init(spec: EncoderSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let net = Network::new(spec.layers(), &mut Rng::new(seed, ENCODER_INIT_STREAM));
        Ok(EncoderModel { spec, net })
    }

    pub(crate) fn from_parts(spec: EncoderSpec, flat: &[f64]) -> Result<Self> {
        let mut m = Self::init(spec, 0)?;
        m.net.set_flat_params(flat)?;
        Ok(m)
    }

    pub fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.net
    }

    pub fn latent_dim(&self) -> usize {
        self.spec.latent_dim
    }

    /// Latent codes `(n, latent_dim)` for an `(n, c, h, w)` batch.
    pub fn encode(&self, images: &Tensor) -> Result<Tensor> {
        let s = images.shape();
        if s.len() != 4 || s[1..] != self.spec.image_shape {
            return Err(Error::shape(
                "encode",
                format!("images {:?}, expected (n, {:?})", s, self.spec.image_shape),
            ));
        }
        self.net.eval(images)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_in_seed() {
        let a = GeneratorModel::init(GeneratorSpec::default(), 7).unwrap();
        let b = GeneratorModel::init(GeneratorSpec::default(), 7).unwrap();
        let c = GeneratorModel::init(GeneratorSpec::default(), 8).unwrap();
        assert_eq!(a.network().flat_params(), b.network().flat_params());
        assert_ne!(a.network().flat_params(), c.network().flat_params());
    }

    #[test]
    fn mlp_output_shape_and_range() {
        let spec = GeneratorSpec {
            image_shape: [1, 16, 16],
            ..Default::default()
        };
        let g = GeneratorModel::init(spec, 1).unwrap();
        let z = Tensor::new([3, 32], Rng::new(0, 0).normal_vec(96)).unwrap();
        let out = g.generate(&z).unwrap();
        assert_eq!(out.shape(), &[3, 1, 16, 16]);
        assert!(out.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn upsample_conv_output_shape() {
        let spec = GeneratorSpec {
            architecture: Architecture::UpsampleConv,
            latent_dim: 8,
            image_shape: [3, 16, 16],
            hidden_widths: vec![8, 6, 4],
        };
        let g = GeneratorModel::init(spec, 1).unwrap();
        let out = g.generate(&Tensor::zeros([2, 8])).unwrap();
        assert_eq!(out.shape(), &[2, 3, 16, 16]);
    }

    #[test]
    fn zero_latent_gives_fixed_image() {
        let g = GeneratorModel::init(GeneratorSpec::default(), 3).unwrap();
        let z = Tensor::zeros([1, 32]);
        assert_eq!(g.generate(&z).unwrap(), g.generate(&z).unwrap());
    }

    #[test]
    fn latent_dimension_mismatch_is_rejected() {
        let g = GeneratorModel::init(GeneratorSpec::default(), 3).unwrap();
        assert!(g.generate(&Tensor::zeros([1, 31])).is_err());
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let bad_side = GeneratorSpec {
            image_shape: [1, 24, 24],
            ..Default::default()
        };
        assert!(GeneratorModel::init(bad_side, 0).is_err());
        let bad_stages = GeneratorSpec {
            architecture: Architecture::UpsampleConv,
            hidden_widths: vec![8, 8],
            ..Default::default()
        };
        assert!(GeneratorModel::init(bad_stages, 0).is_err());
    }

    #[test]
    fn discriminator_probabilities_in_unit_interval() {
        let d = DiscriminatorModel::init(DiscriminatorSpec::default(), 2).unwrap();
        let x = Tensor::new([4, 1, 32, 32], Rng::new(1, 1).normal_vec(4096)).unwrap();
        let p = d.probability(&x).unwrap();
        assert_eq!(p.len(), 4);
        assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn encoder_maps_to_latent_dim() {
        let e = EncoderModel::init(EncoderSpec::default(), 2).unwrap();
        let z = e.encode(&Tensor::zeros([5, 1, 32, 32])).unwrap();
        assert_eq!(z.shape(), &[5, 32]);
    }

    #[test]
    fn spec_descriptor_round_trips() {
        let specs = [
            ModelSpec::Generator(GeneratorSpec {
                architecture: Architecture::UpsampleConv,
                latent_dim: 16,
                image_shape: [3, 16, 16],
                hidden_widths: vec![16, 8, 8],
            }),
            ModelSpec::Discriminator(DiscriminatorSpec::default()),
            ModelSpec::Encoder(EncoderSpec {
                hidden_widths: vec![],
                ..Default::default()
            }),
        ];
        for s in specs {
            assert_eq!(s.to_string().parse::<ModelSpec>().unwrap(), s);
        }
    }
}
