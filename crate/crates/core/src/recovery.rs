//! Latent recovery: find `z` minimizing the distance between `φ(G(z))` and
//! `φ(y)` for a target image `y`.

use std::borrow::Cow;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::models::{EncoderModel, GeneratorModel};
use crate::optim::{minimize, tape_objective, OptimizerConfig};
use crate::rng::Rng;
use crate::tensor::{self, Rect, Tensor};

pub const PLAUSIBLE_THRESHOLD: f64 = 0.1;
pub const VERBATIM_THRESHOLD: f64 = 0.025;
pub const NN_RECOVERED_THRESHOLD: f64 = 0.024;

/// Linear observation operator applied to both the generated image and the
/// target inside the recovery loss.
#[derive(Clone, Debug, PartialEq)]
pub enum PhiOperator {
    Identity,
    /// Binary `(h, w)` map, repeated over channels.
    Mask(Tensor),
    /// Mean over non-overlapping `k × k` blocks.
    AvgPool(usize),
    Crop(Rect),
}

impl PhiOperator {
    /// Mask operator; values must be exactly 0 or 1.
    pub fn mask(mask: Tensor) -> Result<Self> {
        if mask.rank() != 2 {
            return Err(Error::shape(
                "mask",
                format!("{:?}, expected (h, w)", mask.shape()),
            ));
        }
        if mask.data().iter().any(|&m| m != 0.0 && m != 1.0) {
            return Err(Error::invalid("mask entries must be 0 or 1"));
        }
        Ok(PhiOperator::Mask(mask))
    }

    /// Checks compatibility with `(c, h, w)` images and returns the number of
    /// φ-domain elements per image that enter the loss.
    pub fn support(&self, image_shape: [usize; 3]) -> Result<usize> {
        let [c, h, w] = image_shape;
        let n = match self {
            PhiOperator::Identity => c * h * w,
            PhiOperator::Mask(m) => {
                if m.shape() != [h, w] {
                    return Err(Error::shape(
                        "phi",
                        format!("mask {:?} for images {h}x{w}", m.shape()),
                    ));
                }
                c * m.data().iter().filter(|&&v| v == 1.0).count()
            }
            &PhiOperator::AvgPool(k) => {
                if k == 0 || h % k != 0 || w % k != 0 {
                    return Err(Error::shape(
                        "phi",
                        format!("pool factor {k} does not divide {h}x{w}"),
                    ));
                }
                c * (h / k) * (w / k)
            }
            PhiOperator::Crop(r) => {
                if r.height == 0 || r.width == 0 || r.top + r.height > h || r.left + r.width > w {
                    return Err(Error::shape("phi", format!("{r:?} outside {h}x{w}")));
                }
                c * r.height * r.width
            }
        };
        if n == 0 {
            return Err(Error::invalid("phi has empty support"));
        }
        Ok(n)
    }

    /// Applies φ to a `(c, h, w)` image or an `(n, c, h, w)` batch.
    pub fn apply(&self, image: &Tensor) -> Result<Tensor> {
        let single = image.rank() == 3;
        let batch = if single {
            let mut s = vec![1];
            s.extend_from_slice(image.shape());
            image.clone().reshape(s)?
        } else {
            image.clone()
        };
        let out = match self {
            PhiOperator::Identity => batch,
            PhiOperator::Mask(m) => tensor::mask_mul(&batch, m)?,
            &PhiOperator::AvgPool(k) => tensor::avgpool(&batch, k)?,
            &PhiOperator::Crop(r) => tensor::crop(&batch, r)?,
        };
        if single {
            let s = out.shape()[1..].to_vec();
            out.reshape(s)
        } else {
            Ok(out)
        }
    }

    /// Records φ on a tape for an `(n, c, h, w)` node.
    pub fn record<'a>(&'a self, tape: &mut Tape<'a>, x: NodeId) -> Result<NodeId> {
        match self {
            PhiOperator::Identity => Ok(x),
            PhiOperator::Mask(m) => tape.mask_mul(x, Cow::Borrowed(m)),
            &PhiOperator::AvgPool(k) => tape.avgpool(x, k),
            &PhiOperator::Crop(r) => tape.crop(x, r),
        }
    }
}

pub fn apply_phi(op: &PhiOperator, image: &Tensor) -> Result<Tensor> {
    op.apply(image)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    L2,
    L1,
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" => Ok(LossKind::L2),
            "l1" => Ok(LossKind::L1),
            other => Err(Error::invalid(format!("unknown loss '{other}'"))),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::L2 => "l2",
            LossKind::L1 => "l1",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecoveryConfig {
    pub optimizer: OptimizerConfig,
    pub restarts: usize,
    pub loss: LossKind,
    pub plausible_threshold: f64,
    pub verbatim_threshold: f64,
    pub nn_threshold: f64,
    /// Base seed of the per-target streams used by [`recover_set`].
    pub seed: u64,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        RecoveryConfig {
            optimizer: OptimizerConfig::default(),
            restarts: 1,
            loss: LossKind::L2,
            plausible_threshold: PLAUSIBLE_THRESHOLD,
            verbatim_threshold: VERBATIM_THRESHOLD,
            nn_threshold: NN_RECOVERED_THRESHOLD,
            seed: 0,
        }
    }
}

impl RecoveryConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if self.restarts == 0 {
            return Err(Error::invalid("restarts must be at least 1"));
        }
        let t = [
            self.plausible_threshold,
            self.verbatim_threshold,
            self.nn_threshold,
        ];
        if t.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::invalid("thresholds must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecoveryResult {
    /// Latent code of the best restart, `(latent_dim,)`.
    pub best_z: Tensor,
    /// Per-element squared error in the φ domain, minimized over restarts.
    pub final_mse: f64,
    pub restart_errors: Vec<f64>,
    /// Loss after each accepted iterate of the best restart.
    pub trace: Vec<f64>,
    /// Iterations spent by the best restart.
    pub iterations: usize,
    pub plausible: bool,
    pub verbatim: bool,
    /// Every restart ended in a line-search failure.
    pub stalled: bool,
}

impl RecoveryResult {
    fn classify(mut self, cfg: &RecoveryConfig) -> Self {
        self.plausible = self.final_mse < cfg.plausible_threshold;
        self.verbatim = self.final_mse < cfg.verbatim_threshold;
        self
    }

    pub fn restarts(&self) -> usize {
        self.restart_errors.len()
    }
}

fn as_batch(image: &Tensor, shape: [usize; 3]) -> Result<Tensor> {
    if image.shape() != shape {
        return Err(Error::shape(
            "recover",
            format!("target {:?}, model produces {:?}", image.shape(), shape),
        ));
    }
    image.clone().reshape(vec![1, shape[0], shape[1], shape[2]])
}

fn phi_mse(a: &Tensor, b: &Tensor, support: usize) -> f64 {
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    s / support as f64
}

/// Recovers one target with `cfg.restarts` standard-normal starting codes
/// drawn in order from `rng`, keeping the restart with the lowest error.
pub fn recover_one(
    model: &GeneratorModel,
    target: &Tensor,
    phi: &PhiOperator,
    cfg: &RecoveryConfig,
    rng: &mut Rng,
) -> Result<RecoveryResult> {
    cfg.validate()?;
    let shape = model.image_shape();
    let support = phi.support(shape)?;
    let phi_target = phi.apply(&as_batch(target, shape)?)?;
    let scale = 1.0 / support as f64;
    let loss = cfg.loss;
    let d = model.latent_dim();

    let mut objective = tape_objective(|tape: &mut Tape<'_>, z| {
        let (img, _) = model.forward(tape, z, false)?;
        let p = phi.record(tape, img)?;
        let y = tape.constant_ref(&phi_target)?;
        let diff = tape.sub(p, y)?;
        let s = match loss {
            LossKind::L2 => tape.squared_l2(diff)?,
            LossKind::L1 => tape.l1_norm(diff)?,
        };
        tape.scalar_mul(s, scale)
    });

    let mut best: Option<RecoveryResult> = None;
    let mut restart_errors = Vec::with_capacity(cfg.restarts);
    let mut all_stalled = true;
    for _ in 0..cfg.restarts {
        let z0 = Tensor::new([1, d], rng.normal_vec(d))?;
        let m = minimize(&mut objective, &z0, &cfg.optimizer)?;
        let out = phi.apply(&model.generate(&m.x)?)?;
        let mse = phi_mse(&out, &phi_target, support);
        restart_errors.push(mse);
        all_stalled &= m.stalled;
        if best.as_ref().is_none_or(|b| mse < b.final_mse) {
            best = Some(RecoveryResult {
                best_z: m.x.reshape([d])?,
                final_mse: mse,
                restart_errors: Vec::new(),
                trace: m.trace,
                iterations: m.iterations,
                plausible: false,
                verbatim: false,
                stalled: false,
            });
        }
    }
    let mut r = best.expect("at least one restart");
    r.restart_errors = restart_errors;
    r.stalled = all_stalled;
    Ok(r.classify(cfg))
}

/// Recovers each target on its own stream `Rng::new(cfg.seed, id)`.
/// Results keep input order and do not depend on the thread count.
pub fn recover_set_with_ids(
    model: &GeneratorModel,
    targets: &[(u64, Tensor)],
    phi: &PhiOperator,
    cfg: &RecoveryConfig,
) -> Vec<Result<RecoveryResult>> {
    targets
        .par_iter()
        .map(|(id, t)| recover_one(model, t, phi, cfg, &mut Rng::new(cfg.seed, *id)))
        .collect()
}

/// [`recover_set_with_ids`] with ids `0..targets.len()`.
pub fn recover_set(
    model: &GeneratorModel,
    targets: &[Tensor],
    phi: &PhiOperator,
    cfg: &RecoveryConfig,
) -> Vec<Result<RecoveryResult>> {
    targets
        .par_iter()
        .enumerate()
        .map(|(i, t)| recover_one(model, t, phi, cfg, &mut Rng::new(cfg.seed, i as u64)))
        .collect()
}

/// Autoencoder "recovery": `z = E(y)` with no optimization.
pub fn recover_aegan(
    encoder: &EncoderModel,
    generator: &GeneratorModel,
    target: &Tensor,
    cfg: &RecoveryConfig,
) -> Result<RecoveryResult> {
    let shape = generator.image_shape();
    let x = as_batch(target, shape)?;
    let z = encoder.encode(&x)?;
    let recon = generator.generate(&z)?;
    let mse = phi_mse(&recon, &x, x.len());
    Ok(RecoveryResult {
        best_z: z.reshape([generator.latent_dim()])?,
        final_mse: mse,
        restart_errors: vec![mse],
        trace: vec![mse],
        iterations: 0,
        plausible: false,
        verbatim: false,
        stalled: false,
    }
    .classify(cfg))
}

/// Fraction of results with `final_mse < threshold`.
pub fn success_rate(results: &[RecoveryResult], threshold: f64) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::Empty("success_rate"));
    }
    let hits = results.iter().filter(|r| r.final_mse < threshold).count();
    Ok(hits as f64 / results.len() as f64)
}

/// One CSV row of recovery output.
#[derive(Clone, Debug)]
pub struct RecoveryRow<'r> {
    pub target_id: u64,
    pub set_label: &'r str,
    pub result: &'r RecoveryResult,
}

pub const RECOVERY_CSV_HEADER: [&str; 7] = [
    "target_id",
    "set_label",
    "final_mse",
    "restarts",
    "iterations",
    "plausible",
    "verbatim",
];

pub fn write_recovery_csv<W: Write>(out: W, rows: &[RecoveryRow<'_>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RECOVERY_CSV_HEADER)?;
    for row in rows {
        let r = row.result;
        w.write_record([
            row.target_id.to_string(),
            row.set_label.to_string(),
            r.final_mse.to_string(),
            r.restarts().to_string(),
            r.iterations.to_string(),
            r.plausible.to_string(),
            r.verbatim.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
