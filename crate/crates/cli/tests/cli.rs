use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = "\
data.side = 16
data.n_train = 8
data.n_val = 8
model.latent_dim = 6
model.hidden = 24
model.disc_hidden = 16
model.enc_hidden = 16
train.epochs = 30
train.batch_size = 4
recovery.max_iters = 15
recover.n_targets = 4
audit.n_train_targets = 8
audit.n_val_targets = 6
audit.n_generated = 4
audit.bins = 7
sweep.n_targets = 3
convergence.n_targets = 2
convergence.n_inits = 3
convergence.max_iters = 9
";

/// `TINY` with the keys of `extra` overridden.
fn config(extra: &str) -> String {
    let key = |l: &str| l.split('=').next().unwrap_or("").trim().to_string();
    let overridden: Vec<String> = extra.lines().map(key).collect();
    let mut out: String = TINY
        .lines()
        .filter(|l| !overridden.contains(&key(l)))
        .map(|l| format!("{l}\n"))
        .collect();
    out.push_str(extra);
    out
}

struct Run {
    dir: tempfile::TempDir,
}

impl Run {
    fn new(extra: &str) -> Run {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("run.cfg"), config(extra)).unwrap();
        Run { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn exec(&self, args: &[&str], out: &str) -> Output {
        Command::new(env!("CARGO_BIN_EXE_latentaudit"))
            .args(args)
            .arg("--config")
            .arg(self.path("run.cfg"))
            .arg("--out")
            .arg(self.path(out))
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str], out: &str) -> PathBuf {
        let o = self.exec(args, out);
        assert!(
            o.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&o.stderr)
        );
        self.path(out)
    }
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

fn assert_xml(path: &Path) {
    let text = fs::read_to_string(path).unwrap();
    roxmltree::Document::parse(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
}

#[test]
fn help_and_usage_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_latentaudit");
    assert_eq!(
        Command::new(bin)
            .arg("--help")
            .output()
            .unwrap()
            .status
            .code(),
        Some(0)
    );
    assert_eq!(
        Command::new(bin)
            .arg("frobnicate")
            .output()
            .unwrap()
            .status
            .code(),
        Some(1)
    );
    let run = Run::new("colour = blue\n");
    let o = run.exec(&["train"], "out");
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("colour"));
    assert!(!run.path("out").exists());
}

#[test]
fn missing_dataset_leaves_no_outputs() {
    let run = Run::new("data.source = idx\ndata.images = /definitely/not/here.idx\n");
    let o = run.exec(&["train"], "out");
    assert_eq!(o.status.code(), Some(2));
    assert!(!o.stderr.is_empty());
    assert!(!run.path("out").exists());
}

#[test]
fn train_writes_checkpoint_and_decreasing_trace() {
    let run = Run::new("");
    let out = run.ok(&["train"], "a");
    assert!(out.join("generator.ckpt").exists());
    let resolved = fs::read_to_string(out.join("config.resolved")).unwrap();
    assert!(resolved.contains("data.n_train = 8"));
    let (header, rows) = read_csv(&out.join("trace.csv"));
    assert_eq!(header, ["epoch", "loss"]);
    assert_eq!(rows.len(), 30);
    let first: f64 = rows[0][1].parse().unwrap();
    let last: f64 = rows[29][1].parse().unwrap();
    assert!(last < first, "{first} -> {last}");

    let again = run.ok(&["train"], "b");
    assert_eq!(
        fs::read(out.join("generator.ckpt")).unwrap(),
        fs::read(again.join("generator.ckpt")).unwrap()
    );
}

#[test]
fn every_model_kind_trains() {
    for (kind, files) in [
        ("gan", ["generator.ckpt", "discriminator.ckpt"].as_slice()),
        (
            "aegan",
            &["generator.ckpt", "encoder.ckpt", "discriminator.ckpt"],
        ),
        ("autoencoder", &["generator.ckpt", "encoder.ckpt"]),
    ] {
        let run = Run::new(&format!("model.kind = {kind}\ntrain.epochs = 3\n"));
        let out = run.ok(&["train"], "m");
        for f in files {
            assert!(out.join(f).exists(), "{kind}: {f}");
        }
    }
}

#[test]
fn checkpoints_are_reused() {
    let run = Run::new("");
    let ck = run.ok(&["train"], "ck");
    fs::write(
        run.path("run.cfg"),
        config(&format!(
            "model.checkpoint_dir = {}\ntrain.epochs = 0\n",
            ck.display()
        )),
    )
    .unwrap();
    let a = run.ok(&["recover"], "r1");
    fs::write(run.path("run.cfg"), config("")).unwrap();
    let b = run.ok(&["recover"], "r2");
    assert_eq!(
        fs::read(a.join("recovery.csv")).unwrap(),
        fs::read(b.join("recovery.csv")).unwrap()
    );
}

#[test]
fn recover_is_identical_across_thread_counts() {
    let run = Run::new("recover.set = generated\n");
    let one = run.ok(&["recover", "--threads", "1"], "t1");
    let three = run.ok(&["recover", "--threads", "3"], "t3");
    let bytes = |d: &Path| fs::read(d.join("recovery.csv")).unwrap();
    assert_eq!(bytes(&one), bytes(&three));
    let (header, rows) = read_csv(&one.join("recovery.csv"));
    assert_eq!(header[0], "target_id");
    assert_eq!(rows.len(), 4);
    assert!(one.join("recovery_003.pgm").exists());
}

#[test]
fn audit_outputs_are_consistent() {
    let run = Run::new("");
    let out = run.ok(&["audit"], "a");
    let (header, rows) = read_csv(&out.join("audit.csv"));
    assert_eq!(header[..3], ["model", "ks_p", "mre_gap"]);
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][0], "glo-8");

    let (h, bins) = read_csv(&out.join("histogram.csv"));
    assert_eq!(
        h,
        [
            "bin_lo",
            "bin_hi",
            "train",
            "validation",
            "generated",
            "distorted"
        ]
    );
    assert_eq!(bins.len(), 7);
    let total = |col: usize| {
        bins.iter()
            .map(|r| r[col].parse::<usize>().unwrap())
            .sum::<usize>()
    };
    assert_eq!([total(2), total(3), total(4), total(5)], [8, 6, 4, 8]);

    let (_, errs) = read_csv(&out.join("errors.csv"));
    assert_eq!(errs.len(), 26);
    assert_xml(&out.join("histogram.svg"));
}

#[test]
fn sweep_has_one_row_per_grid_point() {
    let run = Run::new("");
    let out = run.ok(&["distort-sweep"], "s");
    let (header, rows) = read_csv(&out.join("sweep.csv"));
    assert_eq!(header, ["kind", "level", "sigma_d", "patch_size", "mre"]);
    assert_eq!(rows.len(), 15);
    let level0: Vec<&str> = rows
        .iter()
        .filter(|r| r[1] == "0")
        .map(|r| r[4].as_str())
        .collect();
    assert_eq!(level0.len(), 3);
    assert!(level0.iter().all(|m| *m == level0[0]));
    assert_xml(&out.join("sweep.svg"));
}

#[test]
fn empty_hole_inpainting_matches_plain_recovery() {
    let run = Run::new("inpaint.hole = 0,0,0,0\nrecover.n_targets = 1\n");
    let inp = run.ok(&["inpaint"], "i");
    let rec = run.ok(&["recover"], "r");
    let (_, a) = read_csv(&inp.join("inpaint.csv"));
    let (_, b) = read_csv(&rec.join("recovery.csv"));
    assert_eq!(a[0][0], b[0][2]);
    for f in [
        "observed.pgm",
        "recovered.pgm",
        "target.pgm",
        "side_by_side.pgm",
    ] {
        assert!(inp.join(f).exists());
    }
}

#[test]
fn superres_reports_pooled_error() {
    let run = Run::new("superres.factor = 2\n");
    let out = run.ok(&["superres"], "s");
    let (header, rows) = read_csv(&out.join("superres.csv"));
    assert_eq!(header[..2], ["factor", "pooled_mse"]);
    assert_eq!(rows[0][0], "2");
    let img = latentaudit::data::read_pnm(&out.join("side_by_side.pgm")).unwrap();
    assert_eq!(img.shape(), [1, 16, 48]);
}

#[test]
fn convergence_curves_cover_every_iteration() {
    let run = Run::new("");
    let a = run.ok(&["convergence", "--threads", "2"], "c1");
    let b = run.ok(&["convergence", "--threads", "1"], "c2");
    for opt in ["lbfgs", "sgd", "adam"] {
        let name = format!("convergence_{opt}.csv");
        let (header, rows) = read_csv(&a.join(&name));
        assert_eq!(header, ["iteration", "median", "q25", "q75"]);
        assert_eq!(rows.len(), 9);
        for r in &rows {
            let v: Vec<f64> = r[1..].iter().map(|x| x.parse().unwrap()).collect();
            assert!(v[1] <= v[0] && v[0] <= v[2]);
        }
        assert_eq!(
            fs::read(a.join(&name)).unwrap(),
            fs::read(b.join(&name)).unwrap()
        );
    }
    let (_, summary) = read_csv(&a.join("convergence_summary.csv"));
    assert_eq!(summary.len(), 3);
    assert_xml(&a.join("convergence.svg"));
}

#[test]
fn report_collects_audit_rows() {
    let run = Run::new("");
    let a = run.ok(&["audit"], "a");
    let b = run.ok(&["audit", "--seed", "5"], "b");
    fs::write(
        run.path("report.cfg"),
        format!("report.inputs = {},{}\n", a.display(), b.display()),
    )
    .unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_latentaudit"))
        .args(["report", "--config"])
        .arg(run.path("report.cfg"))
        .arg("--out")
        .arg(run.path("rep"))
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (_, rows) = read_csv(&run.path("rep/report.csv"));
    assert_eq!(rows.len(), 2);
    assert_ne!(rows[0], rows[1]);
    assert_xml(&run.path("rep/report.svg"));
}

#[test]
fn report_without_inputs_is_a_usage_error() {
    let run = Run::new("");
    assert_eq!(run.exec(&["report"], "r").status.code(), Some(1));
}
