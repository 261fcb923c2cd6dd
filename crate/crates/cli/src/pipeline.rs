//! Data loading, model acquisition and output staging shared by commands.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use latentaudit::data::{gen_synthetic, load_idx, split, ImageDataset, SplitSpec};
use latentaudit::models::{
    encode_checkpoint, load_checkpoint, parse_widths, train_aegan, train_autoencoder, train_gan,
    train_glo, Architecture, DiscriminatorModel, DiscriminatorSpec, EncoderModel, EncoderSpec,
    GeneratorModel, GeneratorSpec, TrainConfig,
};
use latentaudit::optim::{AdamConfig, OptimizerConfig, OptimizerKind};
use latentaudit::recovery::{
    recover_aegan, recover_set, LossKind, PhiOperator, RecoveryConfig, RecoveryResult,
};
use latentaudit::Tensor;

use crate::config::RunConfig;
use crate::CliError;

pub struct Data {
    pub train: ImageDataset,
    pub val: ImageDataset,
}

impl Data {
    pub fn side(&self) -> usize {
        self.train.image_shape()[1]
    }
}

pub fn load_data(cfg: &RunConfig) -> Result<Data, CliError> {
    let n_train: usize = cfg.get("data.n_train")?;
    let n_val: usize = cfg.get("data.n_val")?;
    if n_train == 0 || n_val == 0 {
        return Err(CliError::Usage(
            "data.n_train and data.n_val must be positive".into(),
        ));
    }
    let all = match cfg.raw("data.source") {
        "synthetic" => gen_synthetic(n_train + n_val, cfg.get("data.side")?, cfg.get("seed")?)?,
        "idx" => {
            let images: PathBuf = cfg
                .opt("data.images")?
                .ok_or_else(|| CliError::Usage("data.source = idx needs data.images".into()))?;
            let labels: Option<PathBuf> = cfg.opt("data.labels")?;
            load_idx(&images, labels.as_deref(), cfg.opt("data.pad_to")?)?
        }
        other => return Err(CliError::Usage(format!("unknown data.source '{other}'"))),
    };
    let (train, rest) = split(&all, SplitSpec { n_train })?;
    let keep: Vec<usize> = (0..n_val.min(rest.len())).collect();
    let val = ImageDataset::new(rest.batch(&keep), format!("{} (validation)", rest.source()))?;
    Ok(Data { train, val })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Glo,
    Gan,
    Aegan,
    Autoencoder,
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "glo" => Ok(ModelKind::Glo),
            "gan" => Ok(ModelKind::Gan),
            "aegan" => Ok(ModelKind::Aegan),
            "autoencoder" => Ok(ModelKind::Autoencoder),
            other => Err(format!("unknown model kind '{other}'")),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Glo => "glo",
            ModelKind::Gan => "gan",
            ModelKind::Aegan => "aegan",
            ModelKind::Autoencoder => "autoencoder",
        })
    }
}

impl ModelKind {
    pub fn has_encoder(self) -> bool {
        matches!(self, ModelKind::Aegan | ModelKind::Autoencoder)
    }

    fn has_discriminator(self) -> bool {
        matches!(self, ModelKind::Gan | ModelKind::Aegan)
    }
}

/// Trained (or loaded) models plus per-epoch traces.
pub struct Bundle {
    pub kind: ModelKind,
    pub generator: GeneratorModel,
    pub encoder: Option<EncoderModel>,
    pub discriminator: Option<DiscriminatorModel>,
    pub traces: Vec<(&'static str, Vec<f64>)>,
}

fn widths(cfg: &RunConfig, key: &str) -> Result<Vec<usize>, CliError> {
    parse_widths(cfg.raw(key)).map_err(|e| CliError::Usage(format!("{key}: {e}")))
}

fn specs(
    cfg: &RunConfig,
    shape: [usize; 3],
) -> Result<(GeneratorSpec, DiscriminatorSpec, EncoderSpec), CliError> {
    let arch: Architecture = cfg.get("model.arch")?;
    let latent_dim = cfg.get("model.latent_dim")?;
    Ok((
        GeneratorSpec {
            architecture: arch,
            latent_dim,
            image_shape: shape,
            hidden_widths: widths(cfg, "model.hidden")?,
        },
        DiscriminatorSpec {
            image_shape: shape,
            hidden_widths: widths(cfg, "model.disc_hidden")?,
        },
        EncoderSpec {
            image_shape: shape,
            latent_dim,
            hidden_widths: widths(cfg, "model.enc_hidden")?,
        },
    ))
}

pub fn train_config(cfg: &RunConfig) -> Result<TrainConfig, CliError> {
    Ok(TrainConfig {
        epochs: cfg.get("train.epochs")?,
        batch_size: cfg.get("train.batch_size")?,
        adam: AdamConfig {
            lr: cfg.get("train.lr")?,
            beta1: cfg.get("train.beta1")?,
            beta2: cfg.get("train.beta2")?,
            ..AdamConfig::default()
        },
        adversarial_weight: cfg.get("train.adversarial_weight")?,
        seed: cfg.get("seed")?,
    })
}

pub fn model_kind(cfg: &RunConfig) -> Result<ModelKind, CliError> {
    cfg.get("model.kind")
}

pub fn train_bundle(cfg: &RunConfig, data: &Data) -> Result<Bundle, CliError> {
    let kind = model_kind(cfg)?;
    let (g, d, e) = specs(cfg, data.train.image_shape())?;
    let tc = train_config(cfg)?;
    eprintln!("training {kind} on {} images", data.train.len());
    let bundle = match kind {
        ModelKind::Glo => {
            let s = train_glo(&data.train, g, &tc)?;
            eprintln!("final train mse {:.3e}", s.final_train_mse);
            Bundle {
                kind,
                generator: s.model,
                encoder: None,
                discriminator: None,
                traces: vec![("loss", s.trace)],
            }
        }
        ModelKind::Gan => {
            let o = train_gan(&data.train, g, d, &tc)?;
            Bundle {
                kind,
                generator: o.generator,
                encoder: None,
                discriminator: Some(o.discriminator),
                traces: vec![("d_loss", o.d_trace), ("g_loss", o.g_trace)],
            }
        }
        ModelKind::Aegan | ModelKind::Autoencoder => {
            let o = if kind == ModelKind::Aegan {
                train_aegan(&data.train, g, e, d, &tc)?
            } else {
                train_autoencoder(&data.train, g, e, &tc)?
            };
            let mut traces = vec![("rec_loss", o.rec_trace)];
            if kind == ModelKind::Aegan {
                traces.push(("d_loss", o.d_trace));
            }
            Bundle {
                kind,
                generator: o.generator,
                encoder: Some(o.encoder),
                discriminator: o.discriminator,
                traces,
            }
        }
    };
    Ok(bundle)
}

fn load_bundle(kind: ModelKind, dir: &Path) -> Result<Bundle, CliError> {
    let generator = load_checkpoint(&dir.join("generator.ckpt"))?.into_generator()?;
    let encoder = if kind.has_encoder() {
        Some(load_checkpoint(&dir.join("encoder.ckpt"))?.into_encoder()?)
    } else {
        None
    };
    let discriminator = if kind.has_discriminator() {
        Some(load_checkpoint(&dir.join("discriminator.ckpt"))?.into_discriminator()?)
    } else {
        None
    };
    Ok(Bundle {
        kind,
        generator,
        encoder,
        discriminator,
        traces: Vec::new(),
    })
}

/// Loads checkpoints from `model.checkpoint_dir`, or trains from scratch.
pub fn obtain_bundle(cfg: &RunConfig, data: &Data) -> Result<Bundle, CliError> {
    match cfg.opt::<PathBuf>("model.checkpoint_dir")? {
        Some(dir) => {
            let b = load_bundle(model_kind(cfg)?, &dir)?;
            if b.generator.image_shape() != data.train.image_shape() {
                return Err(CliError::Usage(format!(
                    "checkpoint produces {:?} images, data has {:?}",
                    b.generator.image_shape(),
                    data.train.image_shape()
                )));
            }
            Ok(b)
        }
        None => train_bundle(cfg, data),
    }
}

impl Bundle {
    pub fn checkpoints(&self) -> Vec<(String, Vec<u8>)> {
        let mut out = vec![(
            "generator.ckpt".to_string(),
            encode_checkpoint(&self.generator.clone().into()),
        )];
        if let Some(e) = &self.encoder {
            out.push(("encoder.ckpt".into(), encode_checkpoint(&e.clone().into())));
        }
        if let Some(d) = &self.discriminator {
            out.push((
                "discriminator.ckpt".into(),
                encode_checkpoint(&d.clone().into()),
            ));
        }
        out
    }

    /// Identity-φ recovery errors of `targets`, via the encoder for
    /// autoencoders and latent search otherwise.
    pub fn recover(
        &self,
        targets: &[Tensor],
        rcfg: &RecoveryConfig,
    ) -> Result<Vec<RecoveryResult>, CliError> {
        let results: Vec<_> = match &self.encoder {
            Some(e) => targets
                .iter()
                .map(|t| recover_aegan(e, &self.generator, t, rcfg))
                .collect(),
            None => recover_set(&self.generator, targets, &PhiOperator::Identity, rcfg),
        };
        results
            .into_iter()
            .map(|r| r.map_err(CliError::from))
            .collect()
    }
}

pub fn recovery_config(cfg: &RunConfig) -> Result<RecoveryConfig, CliError> {
    let kind: OptimizerKind = cfg.get("recovery.optimizer")?;
    let loss: LossKind = cfg.get("recovery.loss")?;
    let rc = RecoveryConfig {
        optimizer: OptimizerConfig {
            kind,
            max_iters: cfg.get("recovery.max_iters")?,
            lbfgs_history: cfg.get("recovery.lbfgs_history")?,
            sgd_lr: cfg.get("recovery.sgd_lr")?,
            adam_lr: cfg.get("recovery.adam_lr")?,
            ..OptimizerConfig::default()
        },
        restarts: cfg.get("recovery.restarts")?,
        loss,
        seed: cfg.get("seed")?,
        ..RecoveryConfig::default()
    };
    rc.validate()?;
    Ok(rc)
}

/// First `n` images of `set`, cycling when the set is smaller.
pub fn cycle_targets(set: &ImageDataset, n: usize) -> Vec<Tensor> {
    (0..n).map(|i| set.image(i % set.len())).collect()
}

/// Files produced by a command; nothing touches the disk until `commit`.
#[derive(Default)]
pub struct Outputs {
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    pub fn add(&mut self, name: impl Into<String>, bytes: impl Into<Vec<u8>>) {
        self.files.push((name.into(), bytes.into()));
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    /// Writes every file plus `config.resolved` into `dir`.
    pub fn commit(&self, dir: &Path, cfg: &RunConfig) -> Result<(), CliError> {
        std::fs::create_dir_all(dir)?;
        for (name, bytes) in &self.files {
            std::fs::write(dir.join(name), bytes)?;
        }
        std::fs::write(dir.join("config.resolved"), cfg.render())?;
        Ok(())
    }
}
