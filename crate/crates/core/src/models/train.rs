use crate::autodiff::{NodeId, Tape};
use crate::data::ImageDataset;
use crate::error::{Error, Result};
use crate::optim::{Adam, AdamConfig};
use crate::rng::Rng;
use crate::tensor::Tensor;

use super::{
    DiscriminatorModel, DiscriminatorSpec, EncoderModel, EncoderSpec, GeneratorModel, GeneratorSpec,
};

const LATENT_STREAM: u64 = 0x7472_0001;
const SHUFFLE_STREAM: u64 = 0x7472_0002;
const NOISE_STREAM: u64 = 0x7472_0003;

/// Minibatch Adam training settings shared by all protocols.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Weight of the adversarial term in the autoencoder-GAN loss.
    pub adversarial_weight: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 32,
            adam: AdamConfig::default(),
            adversarial_weight: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if !(self.adversarial_weight >= 0.0 && self.adversarial_weight.is_finite()) {
            return Err(Error::invalid("adversarial_weight must be finite and >= 0"));
        }
        let a = &self.adam;
        if !(a.lr > 0.0 && a.lr.is_finite())
            || !(0.0..1.0).contains(&a.beta1)
            || !(0.0..1.0).contains(&a.beta2)
            || !(a.eps > 0.0)
        {
            return Err(Error::invalid("invalid Adam settings"));
        }
        Ok(())
    }
}

/// i.i.d. standard normal latent codes, shape `(n, latent_dim)`.
pub fn sample_latents(n: usize, latent_dim: usize, rng: &mut Rng) -> Tensor {
    Tensor::new([n, latent_dim], rng.normal_vec(n * latent_dim)).expect("latent shape")
}

/// Trained GLO generator with its fixed code book: row `i` of `latents` is
/// paired with training image `i`.
#[derive(Clone, Debug)]
pub struct GloState {
    pub model: GeneratorModel,
    pub latents: Tensor,
    /// Mean minibatch loss per epoch.
    pub trace: Vec<f64>,
    pub final_train_mse: f64,
}

impl GloState {
    /// `(latent row, image index)` pairs.
    pub fn pairs(&self) -> Vec<(Tensor, usize)> {
        (0..self.latents.shape()[0])
            .map(|i| (self.latents.index_axis0(i), i))
            .collect()
    }

    /// CRC32 over the code book bytes.
    pub fn pairs_hash(&self) -> u32 {
        let mut h = crc32fast::Hasher::new();
        for v in self.latents.data() {
            h.update(&v.to_le_bytes());
        }
        h.finalize()
    }
}

#[derive(Clone, Debug)]
pub struct GanOutcome {
    pub generator: GeneratorModel,
    pub discriminator: DiscriminatorModel,
    /// Mean discriminator loss per epoch.
    pub d_trace: Vec<f64>,
    /// Mean (non-saturating) generator loss per epoch.
    pub g_trace: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct AeganOutcome {
    pub encoder: EncoderModel,
    pub generator: GeneratorModel,
    /// `None` for plain autoencoder training.
    pub discriminator: Option<DiscriminatorModel>,
    /// Mean reconstruction loss per epoch.
    pub rec_trace: Vec<f64>,
    pub d_trace: Vec<f64>,
}

fn epoch_batches(n: usize, batch_size: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

fn diverged(step: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite(op) => Error::Diverged {
            step,
            detail: format!("non-finite value in {op}"),
        },
        other => other,
    }
}

fn collect_grads(tape: &Tape<'_>, loss: NodeId, groups: &[&[NodeId]]) -> Result<Vec<Vec<Tensor>>> {
    let mut g = tape.backward(loss)?;
    Ok(groups
        .iter()
        .map(|ids| ids.iter().map(|&id| g.take(id)).collect())
        .collect())
}

fn check_shapes(dataset: &ImageDataset, shape: [usize; 3], what: &str) -> Result<()> {
    if dataset.image_shape() != shape {
        return Err(Error::shape(
            "train",
            format!(
                "{what} expects images {:?}, dataset has {:?}",
                shape,
                dataset.image_shape()
            ),
        ));
    }
    Ok(())
}

/// Mean per-pixel squared error of `G(z_i)` against image `i`.
fn glo_mse(model: &GeneratorModel, latents: &Tensor, dataset: &ImageDataset) -> Result<f64> {
    let out = model.generate(latents)?;
    let d = out.data();
    let x = dataset.images().data();
    Ok(d.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / d.len() as f64)
}

/// GLO: codes `z_i ~ N(0, I)` are drawn once from `cfg.seed` and frozen;
/// only the generator is fitted to `Σ‖G(z_i) − x_i‖²`.
pub fn train_glo(
    dataset: &ImageDataset,
    spec: GeneratorSpec,
    cfg: &TrainConfig,
) -> Result<GloState> {
    cfg.validate()?;
    let mut model = GeneratorModel::init(spec, cfg.seed)?;
    check_shapes(dataset, model.image_shape(), "generator")?;
    let n = dataset.len();
    let latents = sample_latents(
        n,
        model.latent_dim(),
        &mut Rng::new(cfg.seed, LATENT_STREAM),
    );
    let mut shuffle = Rng::new(cfg.seed, SHUFFLE_STREAM);
    let mut adam = Adam::new(cfg.adam, model.network().params());
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for _ in 0..cfg.epochs {
        let mut total = 0.0;
        for batch in epoch_batches(n, cfg.batch_size, &mut shuffle) {
            let z = Tensor::stack(
                &batch
                    .iter()
                    .map(|&i| latents.index_axis0(i))
                    .collect::<Vec<_>>(),
            )?;
            let x = dataset.batch(&batch);
            let (loss, grads) = (|| -> Result<_> {
                let mut tape = Tape::new();
                let zn = tape.constant(z)?;
                let xn = tape.constant(x)?;
                let (out, params) = model.forward(&mut tape, zn, true)?;
                let loss = tape.mse(out, xn)?;
                let grads = collect_grads(&tape, loss, &[&params])?;
                Ok((tape.value(loss).item(), grads))
            })()
            .map_err(diverged(step))?;
            adam.step(model.network_mut().params_mut(), &grads[0]);
            total += loss * batch.len() as f64;
            step += 1;
        }
        trace.push(total / n as f64);
    }
    let final_train_mse = glo_mse(&model, &latents, dataset).map_err(diverged(step))?;
    Ok(GloState {
        model,
        latents,
        trace,
        final_train_mse,
    })
}

/// `−mean(ln σ(sign · logits))`.
fn bce(tape: &mut Tape<'_>, logits: NodeId, real: bool) -> Result<NodeId> {
    let l = if real {
        logits
    } else {
        tape.scalar_mul(logits, -1.0)?
    };
    let ls = tape.log_sigmoid(l)?;
    let m = tape.mean(ls)?;
    tape.scalar_mul(m, -1.0)
}

/// One discriminator update on `real` against `fake`; returns its loss.
fn discriminator_step(
    disc: &mut DiscriminatorModel,
    adam: &mut Adam,
    real: Tensor,
    fake: Tensor,
) -> Result<f64> {
    let (loss, grads) = {
        let mut tape = Tape::new();
        let r = tape.constant(real)?;
        let f = tape.constant(fake)?;
        let params = disc.network().register(&mut tape, true)?;
        let lr = disc.network().apply(&mut tape, r, &params)?;
        let lf = disc.network().apply(&mut tape, f, &params)?;
        let a = bce(&mut tape, lr, true)?;
        let b = bce(&mut tape, lf, false)?;
        let loss = tape.add(a, b)?;
        let grads = collect_grads(&tape, loss, &[&params])?;
        (tape.value(loss).item(), grads)
    };
    adam.step(disc.network_mut().params_mut(), &grads[0]);
    Ok(loss)
}

/// GAN with alternating updates: one discriminator step, then one
/// generator step minimizing `−ln D(G(z))` on the same noise batch.
pub fn train_gan(
    dataset: &ImageDataset,
    gen_spec: GeneratorSpec,
    disc_spec: DiscriminatorSpec,
    cfg: &TrainConfig,
) -> Result<GanOutcome> {
    cfg.validate()?;
    if dataset.len() < cfg.batch_size {
        return Err(Error::invalid(format!(
            "dataset of {} images is smaller than batch_size {}",
            dataset.len(),
            cfg.batch_size
        )));
    }
    let mut generator = GeneratorModel::init(gen_spec, cfg.seed)?;
    let mut discriminator = DiscriminatorModel::init(disc_spec, cfg.seed)?;
    check_shapes(dataset, generator.image_shape(), "generator")?;
    check_shapes(dataset, discriminator.spec().image_shape, "discriminator")?;
    let n = dataset.len();
    let mut shuffle = Rng::new(cfg.seed, SHUFFLE_STREAM);
    let mut noise = Rng::new(cfg.seed, NOISE_STREAM);
    let mut g_adam = Adam::new(cfg.adam, generator.network().params());
    let mut d_adam = Adam::new(cfg.adam, discriminator.network().params());
    let (mut d_trace, mut g_trace) = (Vec::new(), Vec::new());
    let mut step = 0;
    for _ in 0..cfg.epochs {
        let (mut d_total, mut g_total, mut batches) = (0.0, 0.0, 0usize);
        for batch in epoch_batches(n, cfg.batch_size, &mut shuffle) {
            let z = sample_latents(batch.len(), generator.latent_dim(), &mut noise);
            let fake = generator.generate(&z).map_err(diverged(step))?;
            let d_loss =
                discriminator_step(&mut discriminator, &mut d_adam, dataset.batch(&batch), fake)
                    .map_err(diverged(step))?;
            let (g_loss, grads) = (|| -> Result<_> {
                let mut tape = Tape::new();
                let zn = tape.constant(z)?;
                let (img, g_params) = generator.forward(&mut tape, zn, true)?;
                let (logits, _) = discriminator.network().forward(&mut tape, img, false)?;
                let loss = bce(&mut tape, logits, true)?;
                let grads = collect_grads(&tape, loss, &[&g_params])?;
                Ok((tape.value(loss).item(), grads))
            })()
            .map_err(diverged(step))?;
            g_adam.step(generator.network_mut().params_mut(), &grads[0]);
            d_total += d_loss;
            g_total += g_loss;
            batches += 1;
            step += 1;
        }
        d_trace.push(d_total / batches as f64);
        g_trace.push(g_total / batches as f64);
    }
    Ok(GanOutcome {
        generator,
        discriminator,
        d_trace,
        g_trace,
    })
}

/// Autoencoder-GAN: encoder and generator minimize
/// `mse(G(E(x)), x) + λ·(−ln D(G(z)))`, `z ~ N(0, I)`, while the
/// discriminator separates real images from prior samples `G(z)`.
/// With `λ = 0` the adversarial term is omitted and the encoder/generator
/// updates are those of [`train_autoencoder`].
pub fn train_aegan(
    dataset: &ImageDataset,
    gen_spec: GeneratorSpec,
    enc_spec: EncoderSpec,
    disc_spec: DiscriminatorSpec,
    cfg: &TrainConfig,
) -> Result<AeganOutcome> {
    run_autoencoder(dataset, gen_spec, enc_spec, Some(disc_spec), cfg)
}

/// Plain autoencoder `x ↦ G(E(x))` trained on reconstruction only.
pub fn train_autoencoder(
    dataset: &ImageDataset,
    gen_spec: GeneratorSpec,
    enc_spec: EncoderSpec,
    cfg: &TrainConfig,
) -> Result<AeganOutcome> {
    run_autoencoder(dataset, gen_spec, enc_spec, None, cfg)
}

fn run_autoencoder(
    dataset: &ImageDataset,
    gen_spec: GeneratorSpec,
    enc_spec: EncoderSpec,
    disc_spec: Option<DiscriminatorSpec>,
    cfg: &TrainConfig,
) -> Result<AeganOutcome> {
    cfg.validate()?;
    if dataset.len() < cfg.batch_size {
        return Err(Error::invalid(format!(
            "dataset of {} images is smaller than batch_size {}",
            dataset.len(),
            cfg.batch_size
        )));
    }
    if gen_spec.latent_dim != enc_spec.latent_dim {
        return Err(Error::invalid("encoder and generator latent sizes differ"));
    }
    let mut generator = GeneratorModel::init(gen_spec, cfg.seed)?;
    let mut encoder = EncoderModel::init(enc_spec, cfg.seed)?;
    check_shapes(dataset, generator.image_shape(), "generator")?;
    check_shapes(dataset, encoder.spec().image_shape, "encoder")?;
    let mut discriminator = match disc_spec {
        Some(s) => {
            let d = DiscriminatorModel::init(s, cfg.seed)?;
            check_shapes(dataset, d.spec().image_shape, "discriminator")?;
            Some(d)
        }
        None => None,
    };
    let lambda = cfg.adversarial_weight;
    let n = dataset.len();
    let mut shuffle = Rng::new(cfg.seed, SHUFFLE_STREAM);
    let mut noise = Rng::new(cfg.seed, NOISE_STREAM);
    let mut g_adam = Adam::new(cfg.adam, generator.network().params());
    let mut e_adam = Adam::new(cfg.adam, encoder.network().params());
    let mut d_adam = discriminator
        .as_ref()
        .map(|d| Adam::new(cfg.adam, d.network().params()));
    let (mut rec_trace, mut d_trace) = (Vec::new(), Vec::new());
    let mut step = 0;
    for _ in 0..cfg.epochs {
        let (mut rec_total, mut d_total, mut batches) = (0.0, 0.0, 0usize);
        for batch in epoch_batches(n, cfg.batch_size, &mut shuffle) {
            let x = dataset.batch(&batch);
            let mut z_prior = None;
            if let (Some(disc), Some(adam)) = (discriminator.as_mut(), d_adam.as_mut()) {
                let z = sample_latents(batch.len(), generator.latent_dim(), &mut noise);
                let fake = generator.generate(&z).map_err(diverged(step))?;
                d_total +=
                    discriminator_step(disc, adam, x.clone(), fake).map_err(diverged(step))?;
                z_prior = Some(z);
            }
            let (rec, grads) = (|| -> Result<_> {
                let mut tape = Tape::new();
                let xn = tape.constant(x)?;
                let (code, e_params) = encoder.network().forward(&mut tape, xn, true)?;
                let g_params = generator.network().register(&mut tape, true)?;
                let recon = generator.network().apply(&mut tape, code, &g_params)?;
                let rec = tape.mse(recon, xn)?;
                let mut loss = rec;
                if let (Some(disc), Some(z)) = (discriminator.as_ref(), z_prior) {
                    if lambda > 0.0 {
                        let zn = tape.constant(z)?;
                        let img = generator.network().apply(&mut tape, zn, &g_params)?;
                        let (logits, _) = disc.network().forward(&mut tape, img, false)?;
                        let adv = bce(&mut tape, logits, true)?;
                        let adv = tape.scalar_mul(adv, lambda)?;
                        loss = tape.add(rec, adv)?;
                    }
                }
                let grads = collect_grads(&tape, loss, &[&e_params, &g_params])?;
                Ok((tape.value(rec).item(), grads))
            })()
            .map_err(diverged(step))?;
            let [e_grads, g_grads]: [Vec<Tensor>; 2] =
                grads.try_into().expect("two parameter groups");
            e_adam.step(encoder.network_mut().params_mut(), &e_grads);
            g_adam.step(generator.network_mut().params_mut(), &g_grads);
            rec_total += rec;
            batches += 1;
            step += 1;
        }
        rec_trace.push(rec_total / batches as f64);
        if discriminator.is_some() {
            d_trace.push(d_total / batches as f64);
        }
    }
    Ok(AeganOutcome {
        encoder,
        generator,
        discriminator,
        rec_trace,
        d_trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_synthetic;

    fn small_gen() -> GeneratorSpec {
        GeneratorSpec {
            latent_dim: 8,
            image_shape: [1, 16, 16],
            hidden_widths: vec![32],
            ..Default::default()
        }
    }

    fn cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 8,
            adam: AdamConfig {
                lr: 1e-3,
                ..Default::default()
            },
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn sample_latents_moments_and_determinism() {
        let z = sample_latents(1000, 100, &mut Rng::new(5, 9));
        let n = z.len() as f64;
        let mean = z.data().iter().sum::<f64>() / n;
        let var = z.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.02, "{mean}");
        assert!((var - 1.0).abs() < 0.05, "{var}");
        assert_eq!(z, sample_latents(1000, 100, &mut Rng::new(5, 9)));
    }

    #[test]
    fn zero_epochs_leaves_init() {
        let data = gen_synthetic(8, 16, 0).unwrap();
        let state = train_glo(&data, small_gen(), &cfg(0)).unwrap();
        let init = GeneratorModel::init(small_gen(), 3).unwrap();
        assert_eq!(
            state.model.network().flat_params(),
            init.network().flat_params()
        );
        assert!(state.trace.is_empty());
    }

    #[test]
    fn glo_reduces_loss_and_keeps_codes() {
        let data = gen_synthetic(16, 16, 0).unwrap();
        let state = train_glo(&data, small_gen(), &cfg(30)).unwrap();
        let codes = sample_latents(16, 8, &mut Rng::new(3, LATENT_STREAM));
        assert_eq!(state.latents, codes);
        assert!(state.trace.last().unwrap() < &state.trace[0]);
        let again = train_glo(&data, small_gen(), &cfg(30)).unwrap();
        assert_eq!(again.pairs_hash(), state.pairs_hash());
        assert_eq!(
            again.model.network().flat_params(),
            state.model.network().flat_params()
        );
    }

    #[test]
    fn gan_is_deterministic() {
        let data = gen_synthetic(16, 16, 1).unwrap();
        let d = DiscriminatorSpec {
            image_shape: [1, 16, 16],
            hidden_widths: vec![16],
        };
        let a = train_gan(&data, small_gen(), d.clone(), &cfg(3)).unwrap();
        let b = train_gan(&data, small_gen(), d, &cfg(3)).unwrap();
        assert_eq!(a.d_trace, b.d_trace);
        assert_eq!(a.g_trace, b.g_trace);
        assert_eq!(a.d_trace.len(), 3);
    }

    #[test]
    fn gan_requires_full_batch() {
        let data = gen_synthetic(4, 16, 1).unwrap();
        let d = DiscriminatorSpec {
            image_shape: [1, 16, 16],
            hidden_widths: vec![16],
        };
        assert!(train_gan(&data, small_gen(), d, &cfg(1)).is_err());
    }

    #[test]
    fn aegan_without_adversary_matches_autoencoder() {
        let data = gen_synthetic(16, 16, 2).unwrap();
        let e = EncoderSpec {
            image_shape: [1, 16, 16],
            latent_dim: 8,
            hidden_widths: vec![32],
        };
        let d = DiscriminatorSpec {
            image_shape: [1, 16, 16],
            hidden_widths: vec![16],
        };
        let c = TrainConfig {
            adversarial_weight: 0.0,
            ..cfg(5)
        };
        let a = train_aegan(&data, small_gen(), e.clone(), d, &c).unwrap();
        let b = train_autoencoder(&data, small_gen(), e, &c).unwrap();
        assert_eq!(a.rec_trace, b.rec_trace);
        assert_eq!(
            a.generator.network().flat_params(),
            b.generator.network().flat_params()
        );
        assert!(b.discriminator.is_none());
    }

    #[test]
    fn invalid_config_is_rejected() {
        let data = gen_synthetic(4, 16, 0).unwrap();
        let bad = TrainConfig {
            batch_size: 0,
            ..cfg(1)
        };
        assert!(train_glo(&data, small_gen(), &bad).is_err());
        let neg = TrainConfig {
            adversarial_weight: -1.0,
            ..cfg(1)
        };
        assert!(neg.validate().is_err());
    }
}
