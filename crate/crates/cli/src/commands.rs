//! One function per subcommand. Each returns the files it would write.

use std::path::PathBuf;

use rayon::prelude::*;

use latentaudit::data::{encode_pnm, read_pnm};
use latentaudit::distortions::{grid, small_distortion, DistortionKind, DistortionSpec};
use latentaudit::models::{sample_latents, GeneratorModel};
use latentaudit::recovery::{
    recover_one, write_recovery_csv, PhiOperator, RecoveryConfig, RecoveryResult, RecoveryRow,
};
use latentaudit::stats::{
    audit as run_audit, histogram, median, write_audit_csv, write_histogram_csv, AuditOptions,
    AuditReport, AuditSubject, AUDIT_CSV_HEADER,
};
use latentaudit::{OptimizerKind, Rect, Rng, Tensor};

use crate::config::RunConfig;
use crate::pipeline::{
    cycle_targets, load_data, obtain_bundle, recovery_config, train_bundle, Bundle, Data, Outputs,
};
use crate::svg;
use crate::CliError;

pub const RECOVER_GENERATED_STREAM: u64 = 0x636c_0001;
pub const CONVERGENCE_STREAM: u64 = 0x636c_0002;

fn csv_bytes<I, R>(header: &[&str], rows: I) -> Result<Vec<u8>, CliError>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.into_inner()
        .map_err(|e| CliError::Core(std::io::Error::other(e.to_string()).into()))
}

fn pnm(image: &Tensor) -> Result<Vec<u8>, CliError> {
    Ok(encode_pnm(image)?)
}

/// Concatenates `(c, h, w)` images left to right.
fn side_by_side(images: &[&Tensor]) -> Result<Tensor, CliError> {
    let [c, h, w] = match images[0].shape() {
        &[c, h, w] => [c, h, w],
        s => {
            return Err(CliError::Usage(format!(
                "expected (c, h, w) image, got {s:?}"
            )))
        }
    };
    let n = images.len();
    let mut data = vec![0.0; c * h * w * n];
    for (k, img) in images.iter().enumerate() {
        if img.shape() != [c, h, w] {
            return Err(CliError::Usage(
                "side-by-side images differ in shape".into(),
            ));
        }
        for ch in 0..c {
            for y in 0..h {
                let src = &img.data()[(ch * h + y) * w..][..w];
                data[(ch * h + y) * w * n + k * w..][..w].copy_from_slice(src);
            }
        }
    }
    Ok(Tensor::new([c, h, w * n], data)?)
}

fn reconstruct(g: &GeneratorModel, r: &RecoveryResult) -> Result<Tensor, CliError> {
    let z = r.best_z.clone().reshape([1, g.latent_dim()])?;
    Ok(g.generate(&z)?.index_axis0(0))
}

fn mse(a: &Tensor, b: &Tensor) -> f64 {
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    s / a.len() as f64
}

pub fn train(cfg: &RunConfig) -> Result<Outputs, CliError> {
    let data = load_data(cfg)?;
    let bundle = train_bundle(cfg, &data)?;
    let mut out = Outputs::default();
    for (name, bytes) in bundle.checkpoints() {
        out.add(name, bytes);
    }
    let mut header = vec!["epoch"];
    header.extend(bundle.traces.iter().map(|t| t.0));
    let epochs = bundle.traces.iter().map(|t| t.1.len()).max().unwrap_or(0);
    let rows = (0..epochs).map(|e| {
        let mut row = vec![(e + 1).to_string()];
        row.extend(
            bundle
                .traces
                .iter()
                .map(|t| t.1.get(e).map_or(String::new(), f64::to_string)),
        );
        row
    });
    out.add("trace.csv", csv_bytes(&header, rows)?);
    Ok(out)
}

/// `G(z)` for `n` standard-normal codes drawn from `Rng::new(seed, stream)`.
pub fn generated_targets(
    g: &GeneratorModel,
    n: usize,
    seed: u64,
    stream: u64,
) -> Result<Vec<Tensor>, CliError> {
    let z = sample_latents(n, g.latent_dim(), &mut Rng::new(seed, stream));
    let imgs = g.generate(&z)?;
    Ok((0..n).map(|i| imgs.index_axis0(i)).collect())
}

pub fn recover(cfg: &RunConfig) -> Result<Outputs, CliError> {
    let input: Option<PathBuf> = cfg.opt("recover.input")?;
    let external = input.as_deref().map(read_pnm).transpose()?;
    let data = load_data(cfg)?;
    let bundle = obtain_bundle(cfg, &data)?;
    let rcfg = recovery_config(cfg)?;
    let n: usize = cfg.get("recover.n_targets")?;
    let (label, targets) = match external {
        Some(img) => ("input", vec![img]),
        None => match cfg.raw("recover.set") {
            "train" => ("train", cycle_targets(&data.train, n)),
            "validation" => ("validation", cycle_targets(&data.val, n)),
            "generated" => (
                "generated",
                generated_targets(
                    &bundle.generator,
                    n,
                    cfg.get("seed")?,
                    RECOVER_GENERATED_STREAM,
                )?,
            ),
            other => {
                return Err(CliError::Usage(format!(
                    "recover.set must be train, validation or generated, got '{other}'"
                )))
            }
        },
    };
    let results = bundle.recover(&targets, &rcfg)?;
    let rows: Vec<RecoveryRow<'_>> = results
        .iter()
        .enumerate()
        .map(|(i, r)| RecoveryRow {
            target_id: i as u64,
            set_label: label,
            result: r,
        })
        .collect();
    let mut out = Outputs::default();
    let mut buf = Vec::new();
    write_recovery_csv(&mut buf, &rows)?;
    out.add("recovery.csv", buf);
    for (i, (t, r)) in targets.iter().zip(&results).enumerate() {
        let rec = reconstruct(&bundle.generator, r)?;
        out.add(
            format!("recovery_{i:03}.pgm"),
            pnm(&side_by_side(&[t, &rec])?)?,
        );
    }
    let ok = results.iter().filter(|r| r.verbatim).count();
    eprintln!("{ok}/{} targets recovered verbatim", results.len());
    Ok(out)
}

/// The audit the `audit` command runs, without writing anything.
pub fn audit_report(
    cfg: &RunConfig,
    data: &Data,
    bundle: &Bundle,
) -> Result<AuditReport, CliError> {
    let rcfg = recovery_config(cfg)?;
    let seed: u64 = cfg.get("seed")?;
    let distortion = match cfg.raw("audit.distortion") {
        "none" | "" => None,
        k => Some(small_distortion(
            k.parse()
                .map_err(|e| CliError::Usage(format!("audit.distortion: {e}")))?,
            data.side(),
            seed,
        )),
    };
    let opts = AuditOptions {
        model_name: format!("{}-{}", bundle.kind, data.train.len()),
        n_generated: cfg.get("audit.n_generated")?,
        distortion,
    };
    let train = cycle_targets(&data.train, cfg.get("audit.n_train_targets")?);
    let val = cycle_targets(&data.val, cfg.get("audit.n_val_targets")?);
    let subject = match &bundle.encoder {
        Some(e) => AuditSubject::Autoencoder {
            encoder: e,
            generator: &bundle.generator,
        },
        None => AuditSubject::Generator(&bundle.generator),
    };
    Ok(run_audit(subject, &train, &val, &rcfg, &opts)?)
}

pub fn audit(cfg: &RunConfig) -> Result<Outputs, CliError> {
    let data = load_data(cfg)?;
    let bundle = obtain_bundle(cfg, &data)?;
    let report = audit_report(cfg, &data, &bundle)?;
    eprintln!(
        "{}: ks p = {:.2e}, mre gap = {:.2e}, overfit (p) = {}, overfit (gap) = {}",
        report.model, report.ks_p, report.mre_gap, report.overfit_by_p, report.overfit_by_gap
    );
    if report.failures > 0 || report.stalled > 0 {
        eprintln!(
            "{} failed and {} stalled recoveries",
            report.failures, report.stalled
        );
    }

    let mut out = Outputs::default();
    let mut buf = Vec::new();
    write_audit_csv(&mut buf, &[&report])?;
    out.add("audit.csv", buf);
    let mut buf = Vec::new();
    write_recovery_csv(&mut buf, &report.rows())?;
    out.add("errors.csv", buf);

    let sets = report.sample_sets();
    let samples: Vec<(&str, &[f64])> = sets
        .iter()
        .map(|s| (s.label.as_str(), s.errors.as_slice()))
        .collect();
    let h = histogram(&samples, cfg.get("audit.bins")?)?;
    let mut buf = Vec::new();
    write_histogram_csv(&mut buf, &h)?;
    out.add("histogram.csv", buf);
    out.add(
        "histogram.svg",
        svg::histogram(
            &format!("recovery errors: {}", report.model),
            "final mse",
            &h,
        ),
    );
    Ok(out)
}

/// One distortion grid point and the median recovery error there.
pub struct SweepPoint {
    pub spec: DistortionSpec,
    pub level: usize,
    pub mre: f64,
}

/// Median recovery error of the first `sweep.n_targets` training images
/// under every grid point of every kind in `sweep.kinds`.
pub fn sweep_points(
    cfg: &RunConfig,
    data: &Data,
    bundle: &Bundle,
) -> Result<Vec<SweepPoint>, CliError> {
    let rcfg = recovery_config(cfg)?;
    let seed: u64 = cfg.get("seed")?;
    let kinds: Vec<DistortionKind> = cfg.list("sweep.kinds")?;
    if kinds.is_empty() {
        return Err(CliError::Usage("sweep.kinds is empty".into()));
    }
    let clean = cycle_targets(&data.train, cfg.get("sweep.n_targets")?);
    let mut points = Vec::new();
    for kind in kinds {
        for (level, spec) in grid(kind, data.side(), seed).into_iter().enumerate() {
            let targets = clean
                .iter()
                .enumerate()
                .map(|(i, t)| spec.apply(t, i as u64))
                .collect::<latentaudit::Result<Vec<_>>>()?;
            let errs: Vec<f64> = bundle
                .recover(&targets, &rcfg)?
                .iter()
                .map(|r| r.final_mse)
                .collect();
            let mre = median(&errs)?;
            eprintln!("{kind} level {level}: mre {mre:.3e}");
            points.push(SweepPoint { spec, level, mre });
        }
    }
    Ok(points)
}

pub fn distort_sweep(cfg: &RunConfig) -> Result<Outputs, CliError> {
    let data = load_data(cfg)?;
    let bundle = obtain_bundle(cfg, &data)?;
    let points = sweep_points(cfg, &data, &bundle)?;
    let mut series: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for p in &points {
        let name = p.spec.kind.to_string();
        match series.last_mut() {
            Some((k, curve)) if *k == name => curve.push((p.level as f64, p.mre)),
            _ => series.push((name, vec![(p.level as f64, p.mre)])),
        }
    }
    let rows = points.iter().map(|p| {
        [
            p.spec.kind.to_string(),
            p.level.to_string(),
            p.spec.sigma_d.to_string(),
            p.spec.patch_size.to_string(),
            p.mre.to_string(),
        ]
    });
    let mut out = Outputs::default();
    out.add(
        "sweep.csv",
        csv_bytes(&["kind", "level", "sigma_d", "patch_size", "mre"], rows)?,
    );
    out.add(
        "sweep.svg",
        svg::line_chart(
            "median recovery error vs distortion",
            "grid level",
            "mre",
            &series,
        ),
    );
    Ok(out)
}

/// Single target for the editing demos: an input file or a validation image.
fn demo_target(cfg: &RunConfig, data: &Data, section: &str) -> Result<Tensor, CliError> {
    match cfg.opt::<PathBuf>(&format!("{section}.input"))? {
        Some(p) => Ok(read_pnm(&p)?),
        None => {
            let i: usize = cfg.get(&format!("{section}.target"))?;
            if i >= data.val.len() {
                return Err(CliError::Usage(format!(
                    "{section}.target {i} out of range for {} validation images",
                    data.val.len()
                )));
            }
            Ok(data.val.image(i))
        }
    }
}

pub fn parse_hole(raw: &str, side: usize) -> Result<Rect, CliError> {
    if raw.trim().is_empty() {
        return Ok(Rect {
            top: side / 4,
            left: side / 4,
            height: side / 2,
            width: side / 2,
        });
    }
    let parts: Vec<usize> = raw
        .split(',')
        .map(|p| p.trim().parse())
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Usage(format!("inpaint.hole: {e}")))?;
    match parts[..] {
        [top, left, height, width] => Ok(Rect {
            top,
            left,
            height,
            width,
        }),
        _ => Err(CliError::Usage(
            "inpaint.hole must be top,left,height,width".into(),
        )),
    }
}

/// `h × w` mask, 0 inside `hole` and 1 elsewhere. Panics if the hole does not fit.
pub fn hole_mask(h: usize, w: usize, hole: Rect) -> Vec<f64> {
    assert!(hole.top + hole.height <= h && hole.left + hole.width <= w);
    let mut mask = vec![1.0; h * w];
    for y in hole.top..hole.top + hole.height {
        for x in hole.left..hole.left + hole.width {
            mask[y * w + x] = 0.0;
        }
    }
    mask
}

fn recover_demo(
    g: &GeneratorModel,
    target: &Tensor,
    phi: &PhiOperator,
    rcfg: &RecoveryConfig,
) -> Result<(RecoveryResult, Tensor), CliError> {
    let r = recover_one(g, target, phi, rcfg, &mut Rng::new(rcfg.seed, 0))?;
    let rec = reconstruct(g, &r)?;
    Ok((r, rec))
}

pub fn inpaint(cfg: &RunConfig) -> Result<Outputs, CliError> {
    let data = load_data(cfg)?;
    let target = demo_target(cfg, &data, "inpaint")?;
    let bundle = obtain_bundle(cfg, &data)?;
    let rcfg = recovery_config(cfg)?;
    let [c, h, w] = bundle.generator.image_shape();
    let hole = parse_hole(cfg.raw("inpaint.hole"), h)?;
    if hole.top + hole.height > h || hole.left + hole.width > w {
        return Err(CliError::Usage(format!(
            "hole {hole:?} exceeds {h}x{w} image"
        )));
    }
    let mask = hole_mask(h, w, hole);
    let observed = Tensor::new(
        [c, h, w],
        (0..c * h * w)
            .map(|i| {
                if mask[i % (h * w)] == 1.0 {
                    target.data()[i]
                } else {
                    -1.0
                }
            })
            .collect(),
    )?;
    let phi = PhiOperator::mask(Tensor::new([h, w], mask)?)?;
    let (r, rec) = recover_demo(&bundle.generator, &target, &phi, &rcfg)?;
    eprintln!("observed-region mse {:.3e}", r.final_mse);

    let mut out = Outputs::default();
    out.add(
        "inpaint.csv",
        csv_bytes(
            &["observed_mse", "full_mse", "iterations", "hole_pixels"],
            [[
                r.final_mse.to_string(),
                mse(&rec, &target).to_string(),
                r.iterations.to_string(),
                (hole.height * hole.width).to_string(),
            ]],
        )?,
    );
    out.add("observed.pgm", pnm(&observed)?);
    out.add("recovered.pgm", pnm(&rec)?);
    out.add("target.pgm", pnm(&target)?);
    out.add(
        "side_by_side.pgm",
        pnm(&side_by_side(&[&observed, &rec, &target])?)?,
    );
    Ok(out)
}

fn nearest_upsample(x: &Tensor, k: usize) -> Result<Tensor, CliError> {
    let [c, h, w] = match x.shape() {
        &[c, h, w] => [c, h, w],
        s => return Err(CliError::Usage(format!("expected (c, h, w), got {s:?}"))),
    };
    let (oh, ow) = (h * k, w * k);
    let data = (0..c * oh * ow)
        .map(|i| {
            let (ch, y, xx) = (i / (oh * ow), (i / ow) % oh, i % ow);
            x.data()[(ch * h + y / k) * w + xx / k]
        })
        .collect();
    Ok(Tensor::new([c, oh, ow], data)?)
}

pub fn superres(cfg: &RunConfig) -> Result<Outputs, CliError> {
    let data = load_data(cfg)?;
    let target = demo_target(cfg, &data, "superres")?;
    let bundle = obtain_bundle(cfg, &data)?;
    let rcfg = recovery_config(cfg)?;
    let k: usize = cfg.get("superres.factor")?;
    let phi = PhiOperator::AvgPool(k);
    let observed = nearest_upsample(&phi.apply(&target)?, k)?;
    let (r, rec) = recover_demo(&bundle.generator, &target, &phi, &rcfg)?;
    eprintln!("pooled-domain mse {:.3e}", r.final_mse);

    let mut out = Outputs::default();
    out.add(
        "superres.csv",
        csv_bytes(
            &["factor", "pooled_mse", "full_mse", "iterations"],
            [[
                k.to_string(),
                r.final_mse.to_string(),
                mse(&rec, &target).to_string(),
                r.iterations.to_string(),
            ]],
        )?,
    );
    out.add("observed.pgm", pnm(&observed)?);
    out.add("recovered.pgm", pnm(&rec)?);
    out.add("target.pgm", pnm(&target)?);
    out.add(
        "side_by_side.pgm",
        pnm(&side_by_side(&[&observed, &rec, &target])?)?,
    );
    Ok(out)
}

/// Per-iteration quantile curves and iterations-to-threshold for one
/// optimizer over `targets × n_inits` runs.
pub struct ConvergenceCurve {
    pub optimizer: OptimizerKind,
    /// `(iteration, median, q25, q75)` for iterations `1..=max_iters`.
    pub points: Vec<(usize, f64, f64, f64)>,
    /// Median first iteration with error below the threshold; runs that
    /// never reach it count as `max_iters + 1`.
    pub median_iters: f64,
    pub reached: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    sorted[((sorted.len() - 1) as f64 * q).round() as usize]
}

pub fn convergence_curve(
    g: &GeneratorModel,
    targets: &[Tensor],
    n_inits: usize,
    optimizer: latentaudit::OptimizerConfig,
    threshold: f64,
    seed: u64,
) -> Result<ConvergenceCurve, CliError> {
    let (kind, max_iters) = (optimizer.kind, optimizer.max_iters);
    let rcfg = RecoveryConfig {
        optimizer,
        seed,
        ..RecoveryConfig::default()
    };
    let runs: Vec<(usize, usize)> = (0..targets.len())
        .flat_map(|t| (0..n_inits).map(move |j| (t, j)))
        .collect();
    let traces = runs
        .par_iter()
        .map(|&(t, j)| {
            let mut rng = Rng::new(seed, (t * n_inits + j) as u64);
            recover_one(g, &targets[t], &PhiOperator::Identity, &rcfg, &mut rng).map(|r| r.trace)
        })
        .collect::<latentaudit::Result<Vec<_>>>()?;
    let at = |tr: &Vec<f64>, i: usize| tr[i.min(tr.len() - 1)];
    let points = (1..=max_iters)
        .map(|i| {
            let mut v: Vec<f64> = traces.iter().map(|tr| at(tr, i)).collect();
            v.sort_by(f64::total_cmp);
            (i, quantile(&v, 0.5), quantile(&v, 0.25), quantile(&v, 0.75))
        })
        .collect();
    let hits: Vec<f64> = traces
        .iter()
        .map(|tr| {
            (0..=max_iters)
                .find(|&i| at(tr, i) < threshold)
                .unwrap_or(max_iters + 1) as f64
        })
        .collect();
    let reached =
        hits.iter().filter(|&&h| h <= max_iters as f64).count() as f64 / hits.len() as f64;
    Ok(ConvergenceCurve {
        optimizer: kind,
        points,
        median_iters: median(&hits)?,
        reached,
    })
}

pub fn convergence(cfg: &RunConfig) -> Result<Outputs, CliError> {
    let data = load_data(cfg)?;
    let bundle = obtain_bundle(cfg, &data)?;
    let base = recovery_config(cfg)?;
    let seed: u64 = cfg.get("seed")?;
    let kinds: Vec<OptimizerKind> = cfg.list("convergence.optimizers")?;
    if kinds.is_empty() {
        return Err(CliError::Usage("convergence.optimizers is empty".into()));
    }
    let n_inits: usize = cfg.get("convergence.n_inits")?;
    let max_iters: usize = cfg.get("convergence.max_iters")?;
    let threshold: f64 = cfg.get("convergence.threshold")?;
    if n_inits == 0 || max_iters == 0 {
        return Err(CliError::Usage(
            "convergence.n_inits and max_iters must be positive".into(),
        ));
    }
    let targets = generated_targets(
        &bundle.generator,
        cfg.get("convergence.n_targets")?,
        seed,
        CONVERGENCE_STREAM,
    )?;
    if targets.is_empty() {
        return Err(CliError::Usage(
            "convergence.n_targets must be positive".into(),
        ));
    }

    let mut out = Outputs::default();
    let mut summary = Vec::new();
    let mut series = Vec::new();
    for kind in kinds {
        let opt = latentaudit::OptimizerConfig {
            kind,
            max_iters,
            ..base.optimizer.clone()
        };
        let c = convergence_curve(&bundle.generator, &targets, n_inits, opt, threshold, seed)?;
        eprintln!(
            "{kind}: median iterations to {threshold} = {}",
            c.median_iters
        );
        out.add(
            format!("convergence_{kind}.csv"),
            csv_bytes(
                &["iteration", "median", "q25", "q75"],
                c.points.iter().map(|p| {
                    [
                        p.0.to_string(),
                        p.1.to_string(),
                        p.2.to_string(),
                        p.3.to_string(),
                    ]
                }),
            )?,
        );
        summary.push([
            kind.to_string(),
            c.median_iters.to_string(),
            c.reached.to_string(),
        ]);
        series.push((
            kind.to_string(),
            c.points.iter().map(|p| (p.0 as f64, p.1)).collect(),
        ));
    }
    out.add(
        "convergence_summary.csv",
        csv_bytes(
            &["optimizer", "median_iters_to_threshold", "reached_fraction"],
            summary,
        )?,
    );
    out.add(
        "convergence.svg",
        svg::line_chart(
            "median recovery error per iteration",
            "iteration",
            "mse",
            &series,
        ),
    );
    Ok(out)
}

pub fn report(cfg: &RunConfig) -> Result<Outputs, CliError> {
    let dirs: Vec<PathBuf> = cfg.list("report.inputs")?;
    if dirs.is_empty() {
        return Err(CliError::Usage(
            "report.inputs lists no run directories".into(),
        ));
    }
    let mut rows: Vec<csv::StringRecord> = Vec::new();
    for dir in &dirs {
        let mut r = csv::Reader::from_path(dir.join("audit.csv"))?;
        if r.headers()?.iter().ne(AUDIT_CSV_HEADER) {
            return Err(CliError::Core(latentaudit::Error::Format(format!(
                "{} has an unexpected header",
                dir.join("audit.csv").display()
            ))));
        }
        for rec in r.records() {
            rows.push(rec?);
        }
    }
    let bars: Vec<(String, f64)> = rows
        .iter()
        .map(|r| (r[0].to_string(), r[2].parse().unwrap_or(f64::NAN)))
        .collect();
    let mut out = Outputs::default();
    out.add("report.csv", csv_bytes(&AUDIT_CSV_HEADER, rows.iter())?);
    out.add(
        "report.svg",
        svg::bar_chart("MRE-gap per model", "mre gap", &bars),
    );
    Ok(out)
}
