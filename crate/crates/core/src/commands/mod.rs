//! Pipeline commands behind the `prnet` binary. Each writes its outputs under
//! a caller-chosen directory with the fixed file names below, preceded by a
//! `run_manifest.txt` that records the fully resolved settings.

mod data;
mod model;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

pub use data::{convert, synth, ConvertArgs, ConvertSummary, SynthArgs};
pub use model::{
    eval, gradcheck, predict, train, EvalArgs, GradcheckArgs, PredictArgs, PredictSummary, TrainArgs, TrainSummary,
};

use crate::error::{Error, Result};
use crate::nn::PRNetConfig;
use crate::train::TrainOptions;

pub const RUN_MANIFEST_FILE: &str = "run_manifest.txt";
pub const TRAIN_LOG_FILE: &str = "train_log.txt";
pub const REPORT_FILE: &str = "report.txt";
pub const REPORT_KV_FILE: &str = "report.kv";
pub const CONVERT_REPORT_FILE: &str = "convert_report.txt";
pub const MASK_FILE: &str = "mask.png";
pub const OVERLAY_FILE: &str = "overlay.png";

/// Environment variable capping the worker-thread count.
pub const THREADS_ENV: &str = "PRNET_THREADS";

/// Sizes the global worker pool from `PRNET_THREADS` (all cores when unset).
/// Returns the thread count in effect.
pub fn configure_threads() -> Result<usize> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(rayon::current_num_threads());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("{THREADS_ENV}={v:?} is not a positive integer")))?;
    // A pool that already exists (e.g. a second call) keeps its size.
    if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
        log::debug!("worker pool already initialised");
    }
    Ok(rayon::current_num_threads())
}

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {line:?}", ln + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", ln + 1)));
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Model and training settings for `train`, built from defaults, then a
/// config file, then command-line overrides.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub model: PRNetConfig,
    pub options: TrainOptions,
    input_set: bool,
    classes_set: bool,
    model_seed_set: bool,
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

impl RunConfig {
    /// Training keys: `epochs`, `batch_size`, `seed`, `lr0`, `poly_power`,
    /// `checkpoint_every`, `base_width`; anything else goes to the model config.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "epochs" => self.options.epochs = parse(key, v)?,
            "batch_size" => self.options.batch_size = parse(key, v)?,
            "seed" => self.options.seed = parse(key, v)?,
            "lr0" => self.options.lr0 = parse(key, v)?,
            "poly_power" => self.options.poly_power = parse(key, v)?,
            "checkpoint_every" => self.options.checkpoint_every = parse(key, v)?,
            "base_width" => self.model = self.model.clone().with_base_width(parse(key, v)?),
            _ => {
                if !self.model.set(key, v)? {
                    return Err(Error::Config(format!("unknown key {key:?}")));
                }
                match key {
                    "input_size" | "input_height" | "input_width" => self.input_set = true,
                    "num_classes" => self.classes_set = true,
                    "model_seed" => self.model_seed_set = true,
                    _ => {}
                }
            }
        }
        Ok(())
    }

    pub fn apply_all(&mut self, pairs: &[(String, String)]) -> Result<()> {
        pairs.iter().try_for_each(|(k, v)| self.set(k, v))
    }

    /// Whether the input extent was given explicitly.
    pub fn input_is_set(&self) -> bool {
        self.input_set
    }

    /// Model seed in effect: `model_seed` when given, else the run seed.
    pub fn resolved_model(&self) -> PRNetConfig {
        let mut m = self.model.clone();
        if !self.model_seed_set {
            m.seed = self.options.seed;
        }
        m
    }

    pub fn to_kv(&self) -> Vec<(String, String)> {
        let o = &self.options;
        let mut kv = vec![
            ("seed".to_string(), o.seed.to_string()),
            ("epochs".to_string(), o.epochs.to_string()),
            ("batch_size".to_string(), o.batch_size.to_string()),
            ("lr0".to_string(), o.lr0.to_string()),
            ("poly_power".to_string(), o.poly_power.to_string()),
            ("checkpoint_every".to_string(), o.checkpoint_every.to_string()),
        ];
        kv.extend(self.resolved_model().to_kv());
        kv
    }
}

/// Record of one command invocation, written before any work starts.
/// For `train` the text is itself a valid `--config` file that reproduces
/// the run (`command`, `version`, `data` and `out` are understood there).
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    pub inputs: Vec<(String, String)>,
    pub out: PathBuf,
    pub config: Vec<(String, String)>,
}

impl RunManifest {
    pub fn new(command: &str, out: &Path) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: None,
            inputs: Vec::new(),
            out: out.to_path_buf(),
            config: Vec::new(),
        }
    }

    pub fn input(mut self, key: &str, value: impl ToString) -> Self {
        self.inputs.push((key.to_string(), value.to_string()));
        self
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# prnet run manifest\n");
        let _ = writeln!(s, "command={}", self.command);
        let _ = writeln!(s, "version={}", self.version);
        for (k, v) in &self.inputs {
            let _ = writeln!(s, "{k}={v}");
        }
        let _ = writeln!(s, "out={}", self.out.display());
        if let Some(seed) = self.seed {
            if !self.config.iter().any(|(k, _)| k == "seed") {
                let _ = writeln!(s, "seed={seed}");
            }
        }
        for (k, v) in &self.config {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    /// Creates the output directory and writes the manifest into it.
    pub fn write(&self) -> Result<PathBuf> {
        fs::create_dir_all(&self.out)?;
        let path = self.out.join(RUN_MANIFEST_FILE);
        fs::write(&path, self.to_text())?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_parsing() {
        let kv = parse_kv("# c\n\n a = 1 \nb=x=y\n").unwrap();
        assert_eq!(kv, vec![("a".into(), "1".into()), ("b".into(), "x=y".into())]);
        assert!(matches!(parse_kv("novalue"), Err(Error::Config(_))));
        assert!(parse_kv("=3").is_err());
    }

    #[test]
    fn config_round_trips_through_its_own_text() {
        let mut c = RunConfig::default();
        c.apply_all(&parse_kv("epochs=3\nbase_width=8\nuse_cfa=false\ninput_size=32").unwrap())
            .unwrap();
        assert_eq!(c.model.stage_channels, vec![8, 16, 32, 64]);
        assert!(c.input_is_set());
        let mut d = RunConfig::default();
        d.apply_all(&c.to_kv()).unwrap();
        assert_eq!(d.resolved_model(), c.resolved_model());
        assert_eq!(d.options, c.options);
    }

    #[test]
    fn unknown_key_is_a_config_error() {
        let err = RunConfig::default().set("nope", "1").unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(RunConfig::default().set("epochs", "x").is_err());
    }

    #[test]
    fn model_seed_follows_run_seed_unless_given() {
        let mut c = RunConfig::default();
        c.set("seed", "7").unwrap();
        assert_eq!(c.resolved_model().seed, 7);
        c.set("model_seed", "2").unwrap();
        assert_eq!(c.resolved_model().seed, 2);
    }
}
