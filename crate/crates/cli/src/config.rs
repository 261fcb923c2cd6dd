//! `key = value` run configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

/// Every accepted key with its default value.
const DEFAULTS: &[(&str, &str)] = &[
    ("seed", "0"),
    ("out", "out"),
    ("data.source", "synthetic"),
    ("data.side", "32"),
    ("data.n_train", "16"),
    ("data.n_val", "64"),
    ("data.images", ""),
    ("data.labels", ""),
    ("data.pad_to", ""),
    ("model.kind", "glo"),
    ("model.arch", "mlp"),
    ("model.latent_dim", "32"),
    ("model.hidden", "128"),
    ("model.disc_hidden", "128"),
    ("model.enc_hidden", "128"),
    ("model.checkpoint_dir", ""),
    ("train.epochs", "200"),
    ("train.batch_size", "32"),
    ("train.lr", "0.001"),
    ("train.beta1", "0.5"),
    ("train.beta2", "0.999"),
    ("train.adversarial_weight", "0.1"),
    ("recovery.optimizer", "lbfgs"),
    ("recovery.max_iters", "100"),
    ("recovery.restarts", "1"),
    ("recovery.loss", "l2"),
    ("recovery.lbfgs_history", "10"),
    ("recovery.sgd_lr", "1.0"),
    ("recovery.adam_lr", "0.1"),
    ("recover.set", "validation"),
    ("recover.n_targets", "8"),
    ("recover.input", ""),
    ("audit.n_train_targets", "64"),
    ("audit.n_val_targets", "64"),
    ("audit.n_generated", "64"),
    ("audit.bins", "20"),
    ("audit.distortion", "warp"),
    ("sweep.n_targets", "16"),
    ("sweep.kinds", "warp,patch_noise,additive_noise"),
    ("inpaint.target", "0"),
    ("inpaint.input", ""),
    ("inpaint.hole", ""),
    ("superres.target", "0"),
    ("superres.input", ""),
    ("superres.factor", "4"),
    ("convergence.n_targets", "20"),
    ("convergence.n_inits", "20"),
    ("convergence.max_iters", "100"),
    ("convergence.threshold", "0.024"),
    ("convergence.optimizers", "lbfgs,sgd,adam"),
    ("report.inputs", ""),
];

/// Resolved configuration: defaults overlaid with file entries and flags.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            values: DEFAULTS
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }
}

impl RunConfig {
    /// Parses `key = value` lines. Blank lines and `#` comments are skipped;
    /// unknown or repeated keys are errors.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::BTreeSet::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!("config line {}: expected 'key = value'", no + 1))
            })?;
            let (k, v) = (k.trim(), v.trim());
            if !seen.insert(k.to_string()) {
                return Err(CliError::Usage(format!(
                    "config line {}: key '{k}' given twice",
                    no + 1
                )));
            }
            cfg.set(k, v)
                .map_err(|e| CliError::Usage(format!("config line {}: {e}", no + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => Err(format!("unknown key '{key}'")),
        }
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("key '{key}' missing from defaults"))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.raw(key);
        raw.parse()
            .map_err(|e| CliError::Usage(format!("bad value '{raw}' for {key}: {e}")))
    }

    /// `None` for an empty value.
    pub fn opt<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        if self.raw(key).is_empty() {
            Ok(None)
        } else {
            self.get(key).map(Some)
        }
    }

    /// Comma-separated list; empty value gives an empty list.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.raw(key);
        if raw.trim().is_empty() {
            return Ok(Vec::new());
        }
        raw.split(',')
            .map(|p| {
                p.trim()
                    .parse()
                    .map_err(|e| CliError::Usage(format!("bad item '{p}' in {key}: {e}")))
            })
            .collect()
    }

    /// Every key, sorted, in the input syntax.
    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.values {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_overrides() {
        let cfg = RunConfig::parse("# comment\nseed = 7\n\nmodel.kind = gan # trailing\n").unwrap();
        assert_eq!(cfg.get::<u64>("seed").unwrap(), 7);
        assert_eq!(cfg.raw("model.kind"), "gan");
        assert_eq!(cfg.raw("train.batch_size"), "32");
    }

    #[test]
    fn rejects_unknown_and_repeated_keys() {
        assert!(RunConfig::parse("colour = blue\n").is_err());
        assert!(RunConfig::parse("seed = 1\nseed = 2\n").is_err());
        assert!(RunConfig::parse("seed 1\n").is_err());
    }

    #[test]
    fn render_round_trips() {
        let cfg = RunConfig::parse("data.n_train = 99\n").unwrap();
        assert_eq!(RunConfig::parse(&cfg.render()).unwrap(), cfg);
    }

    #[test]
    fn typed_accessors() {
        let cfg = RunConfig::parse("sweep.kinds = warp, additive_noise\ndata.pad_to = 32").unwrap();
        let kinds: Vec<String> = cfg.list("sweep.kinds").unwrap();
        assert_eq!(kinds, ["warp", "additive_noise"]);
        assert_eq!(cfg.opt::<usize>("data.pad_to").unwrap(), Some(32));
        assert_eq!(cfg.opt::<usize>("data.labels").unwrap(), None);
        assert!(cfg.get::<u64>("model.kind").is_err());
    }
}
