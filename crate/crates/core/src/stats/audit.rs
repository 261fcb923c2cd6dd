use std::fmt;
use std::io::Write;

use crate::distortions::DistortionSpec;
use crate::error::{Error, Result};
use crate::models::{sample_latents, EncoderModel, GeneratorModel};
use crate::recovery::{
    recover_aegan, recover_set, PhiOperator, RecoveryConfig, RecoveryResult, RecoveryRow,
};
use crate::rng::Rng;
use crate::tensor::Tensor;

use super::{ks_two_sample, median, mre_gap};

/// Overfitting is flagged when the KS p-value falls below this.
pub const P_THRESHOLD: f64 = 0.01;
/// Overfitting is flagged when the MRE-gap exceeds this.
pub const GAP_THRESHOLD: f64 = 0.10;

const GENERATED_STREAM: u64 = 0x6175_0001;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SampleLabel {
    Train,
    Validation,
    Generated,
    Distorted,
}

impl SampleLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            SampleLabel::Train => "train",
            SampleLabel::Validation => "validation",
            SampleLabel::Generated => "generated",
            SampleLabel::Distorted => "distorted",
        }
    }
}

impl fmt::Display for SampleLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Recovery errors of one target set.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorSampleSet {
    pub label: SampleLabel,
    pub errors: Vec<f64>,
}

/// Model under audit.
#[derive(Clone, Copy, Debug)]
pub enum AuditSubject<'m> {
    /// Errors from latent recovery.
    Generator(&'m GeneratorModel),
    /// Errors are autoencoding residuals; no generated targets.
    Autoencoder {
        encoder: &'m EncoderModel,
        generator: &'m GeneratorModel,
    },
}

#[derive(Clone, Debug, Default)]
pub struct AuditOptions {
    pub model_name: String,
    /// Generated targets `G(z)`, `z ~ N(0, I)`; ignored for autoencoders.
    pub n_generated: usize,
    /// Applied to the training targets to form the distorted set.
    pub distortion: Option<DistortionSpec>,
}

/// One recovered target.
#[derive(Clone, Debug)]
pub struct AuditRecord {
    pub label: SampleLabel,
    pub target_id: u64,
    pub result: RecoveryResult,
}

#[derive(Clone, Debug)]
pub struct AuditReport {
    pub model: String,
    pub mre_train: f64,
    pub mre_val: f64,
    pub mre_generated: Option<f64>,
    pub mre_distorted: Option<f64>,
    pub mre_gap: f64,
    pub ks_d: f64,
    pub ks_p: f64,
    pub overfit_by_p: bool,
    pub overfit_by_gap: bool,
    /// Targets whose recovery returned an error; they are left out.
    pub failures: usize,
    /// Targets whose every restart stalled.
    pub stalled: usize,
    pub records: Vec<AuditRecord>,
}

impl AuditReport {
    pub fn errors(&self, label: SampleLabel) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.label == label)
            .map(|r| r.result.final_mse)
            .collect()
    }

    pub fn sample_sets(&self) -> Vec<ErrorSampleSet> {
        let mut labels: Vec<SampleLabel> = self.records.iter().map(|r| r.label).collect();
        labels.dedup();
        labels
            .into_iter()
            .map(|label| ErrorSampleSet {
                label,
                errors: self.errors(label),
            })
            .collect()
    }

    pub fn rows(&self) -> Vec<RecoveryRow<'_>> {
        self.records
            .iter()
            .map(|r| RecoveryRow {
                target_id: r.target_id,
                set_label: r.label.as_str(),
                result: &r.result,
            })
            .collect()
    }
}

fn recover_all(
    subject: AuditSubject<'_>,
    targets: &[Tensor],
    cfg: &RecoveryConfig,
) -> Vec<Result<RecoveryResult>> {
    match subject {
        AuditSubject::Generator(g) => recover_set(g, targets, &PhiOperator::Identity, cfg),
        AuditSubject::Autoencoder { encoder, generator } => targets
            .iter()
            .map(|t| recover_aegan(encoder, generator, t, cfg))
            .collect(),
    }
}

/// Recovers train and validation targets (plus optional generated and
/// distorted sets), then compares the train and validation error
/// distributions.
pub fn audit(
    subject: AuditSubject<'_>,
    train: &[Tensor],
    val: &[Tensor],
    cfg: &RecoveryConfig,
    opts: &AuditOptions,
) -> Result<AuditReport> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::Empty("audit"));
    }
    cfg.validate()?;
    let mut sets: Vec<(SampleLabel, Vec<Tensor>)> = vec![
        (SampleLabel::Train, train.to_vec()),
        (SampleLabel::Validation, val.to_vec()),
    ];
    if let AuditSubject::Generator(g) = subject {
        if opts.n_generated > 0 {
            let z = sample_latents(
                opts.n_generated,
                g.latent_dim(),
                &mut Rng::new(cfg.seed, GENERATED_STREAM),
            );
            let imgs = g.generate(&z)?;
            let generated = (0..opts.n_generated).map(|i| imgs.index_axis0(i)).collect();
            sets.push((SampleLabel::Generated, generated));
        }
    }
    if let Some(spec) = &opts.distortion {
        let distorted = train
            .iter()
            .enumerate()
            .map(|(i, t)| spec.apply(t, i as u64))
            .collect::<Result<Vec<_>>>()?;
        sets.push((SampleLabel::Distorted, distorted));
    }

    let mut records = Vec::new();
    let mut failures = 0;
    let mut mres = Vec::new();
    for (label, targets) in &sets {
        let mut errs = Vec::new();
        for (i, r) in recover_all(subject, targets, cfg).into_iter().enumerate() {
            match r {
                Ok(result) => {
                    errs.push(result.final_mse);
                    records.push(AuditRecord {
                        label: *label,
                        target_id: i as u64,
                        result,
                    });
                }
                Err(e) if e.is_numeric_error() => failures += 1,
                Err(e) => return Err(e),
            }
        }
        if errs.is_empty() {
            return Err(Error::Empty("audit: every recovery failed"));
        }
        mres.push((*label, median(&errs)?, errs));
    }
    let find = |l: SampleLabel| mres.iter().find(|m| m.0 == l);
    let (_, mre_train, train_errs) = find(SampleLabel::Train).expect("train set");
    let (_, mre_val, val_errs) = find(SampleLabel::Validation).expect("validation set");
    let ks = ks_two_sample(train_errs, val_errs)?;
    let gap = mre_gap(*mre_train, *mre_val)?;
    let stalled = records.iter().filter(|r| r.result.stalled).count();
    Ok(AuditReport {
        model: opts.model_name.clone(),
        mre_train: *mre_train,
        mre_val: *mre_val,
        mre_generated: find(SampleLabel::Generated).map(|m| m.1),
        mre_distorted: find(SampleLabel::Distorted).map(|m| m.1),
        mre_gap: gap,
        ks_d: ks.d,
        ks_p: ks.p,
        overfit_by_p: ks.p < P_THRESHOLD,
        overfit_by_gap: gap > GAP_THRESHOLD,
        failures,
        stalled,
        records,
    })
}

pub const AUDIT_CSV_HEADER: [&str; 7] = [
    "model",
    "ks_p",
    "mre_gap",
    "mre_train",
    "mre_val",
    "mre_generated",
    "mre_small_distort",
];

fn sci(v: f64) -> String {
    format!("{v:.2e}")
}

/// One row per report, numbers in `1.23e-4` form; missing columns are `N/A`.
pub fn write_audit_csv<W: Write>(out: W, reports: &[&AuditReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(AUDIT_CSV_HEADER)?;
    for r in reports {
        let opt = |v: Option<f64>| v.map_or_else(|| "N/A".to_string(), sci);
        w.write_record([
            r.model.clone(),
            sci(r.ks_p),
            sci(r.mre_gap),
            sci(r.mre_train),
            sci(r.mre_val),
            opt(r.mre_generated),
            opt(r.mre_distorted),
        ])?;
    }
    w.flush()?;
    Ok(())
}
