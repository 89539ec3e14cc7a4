//! `key = value` run configuration: built-in defaults, then an optional
//! config file, then command-line flags. Every key is validated before any
//! command does work, and all problems are reported together.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use aitm_core::data::FunnelGenConfig;
use aitm_core::optim::AdamConfig;
use aitm_core::train::TrainConfig;
use aitm_core::{ArchitectureConfig, ModelVariant};
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Keys accepted by `train`, with their defaults (`None` = no default).
pub const TRAIN_KEYS: &[(&str, Option<&str>)] = &[
    ("train", None),
    ("val", None),
    ("out", None),
    ("log", None),
    ("variant", Some("aitm")),
    ("tasks", None),
    ("embedding_dim", Some("5")),
    ("tower_dims", Some("128,64,32")),
    ("dropout", Some("0.1,0.3,0.3")),
    ("ait_dim", None),
    ("share_ait", Some("false")),
    ("lr", Some("0.001")),
    ("batch_size", Some("2000")),
    ("l2", Some("0.000001")),
    ("alpha", Some("0.6")),
    ("lambda_target", Some("0.01")),
    ("downsample_group", None),
    ("min_frequency", Some("10")),
    ("max_epochs", Some("100")),
    ("patience", Some("3")),
    ("seed", Some("1")),
];

/// Keys accepted by `gen-data`.
pub const GEN_KEYS: &[(&str, Option<&str>)] = &[
    ("out_dir", None),
    ("tasks", None),
    ("samples", None),
    ("base_rates", None),
    ("cardinalities", None),
    ("perturbation", None),
    ("step_correlation", None),
    ("zipf_exponent", None),
    ("seed", None),
    ("split", Some("0.7,0.15,0.15")),
    ("downsample", Some("none")),
];

/// Reads a config file into raw pairs. Blank lines and `#` comments are
/// ignored.
pub fn read_config_file(path: &Path, errors: &mut Vec<String>) -> Vec<(String, String)> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            errors.push(format!("cannot read config file {}: {e}", path.display()));
            return Vec::new();
        }
    };
    parse_config_text(&text, &path.display().to_string(), errors)
}

pub fn parse_config_text(text: &str, origin: &str, errors: &mut Vec<String>) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match line.split_once('=') {
            Some((k, v)) if !k.trim().is_empty() => {
                out.push((k.trim().to_string(), v.trim().to_string()));
            }
            _ => errors.push(format!("{origin}:{}: expected `key = value`, got {line:?}", i + 1)),
        }
    }
    out
}

/// Layers file pairs and flag pairs over the defaults in `keys`. Unknown
/// and repeated file keys are reported.
pub fn merge(
    keys: &[(&str, Option<&str>)],
    file: Vec<(String, String)>,
    flags: Vec<(&str, Option<String>)>,
    errors: &mut Vec<String>,
) -> BTreeMap<String, String> {
    let mut map: BTreeMap<String, String> = keys
        .iter()
        .filter_map(|(k, d)| d.map(|d| (k.to_string(), d.to_string())))
        .collect();
    let mut from_file = BTreeMap::new();
    for (k, v) in file {
        if !keys.iter().any(|(known, _)| *known == k) {
            errors.push(format!("unknown config key `{k}`"));
            continue;
        }
        if from_file.insert(k.clone(), v.clone()).is_some() {
            errors.push(format!("config key `{k}` given more than once"));
        }
        map.insert(k, v);
    }
    for (k, v) in flags {
        if let Some(v) = v {
            map.insert(k.to_string(), v);
        }
    }
    map
}

/// Stable digest of a configuration snapshot.
pub fn config_hash(map: &BTreeMap<String, String>) -> String {
    let mut h = Sha256::new();
    for (k, v) in map {
        h.update(k.as_bytes());
        h.update(b" = ");
        h.update(v.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

/// Typed access to a merged map that records every failure.
struct Fields<'a> {
    map: &'a BTreeMap<String, String>,
    errors: &'a mut Vec<String>,
}

impl Fields<'_> {
    fn raw(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    fn parse<T: FromStr>(&mut self, key: &str) -> Option<T>
    where
        T::Err: Display,
    {
        let raw = self.raw(key)?;
        match raw.parse() {
            Ok(v) => Some(v),
            Err(e) => {
                self.errors.push(format!("{key}: cannot parse {raw:?}: {e}"));
                None
            }
        }
    }

    fn list<T: FromStr>(&mut self, key: &str) -> Option<Vec<T>>
    where
        T::Err: Display,
    {
        let raw = self.raw(key)?.to_string();
        let mut out = Vec::new();
        for part in raw.split(',') {
            match part.trim().parse() {
                Ok(v) => out.push(v),
                Err(e) => {
                    self.errors.push(format!("{key}: cannot parse {part:?} in {raw:?}: {e}"));
                    return None;
                }
            }
        }
        Some(out)
    }

    fn boolean(&mut self, key: &str) -> Option<bool> {
        match self.raw(key)? {
            "true" | "1" | "yes" => Some(true),
            "false" | "0" | "no" => Some(false),
            other => {
                self.errors.push(format!("{key}: expected true or false, got {other:?}"));
                None
            }
        }
    }

    fn required(&mut self, key: &str) -> Option<String> {
        let v = self.raw(key).map(str::to_string);
        if v.is_none() {
            self.errors.push(format!("{key} is required"));
        }
        v
    }

    fn input_file(&mut self, key: &str) -> Option<PathBuf> {
        let p = PathBuf::from(self.required(key)?);
        if !p.is_file() {
            self.errors.push(format!("{key}: {} is not a readable file", p.display()));
        }
        Some(p)
    }

    fn output_file(&mut self, key: &str, required: bool) -> Option<PathBuf> {
        let p = PathBuf::from(if required { self.required(key)? } else { self.raw(key)?.to_string() });
        let parent = p.parent().filter(|d| !d.as_os_str().is_empty());
        if let Some(dir) = parent {
            if !dir.is_dir() {
                self.errors.push(format!("{key}: directory {} does not exist", dir.display()));
            }
        }
        Some(p)
    }

    /// `none` or a value strictly inside (0, 1).
    fn optional_fraction(&mut self, key: &str) -> Option<Option<f64>> {
        match self.raw(key)? {
            "none" => Some(None),
            _ => {
                let v: f64 = self.parse(key)?;
                if v > 0.0 && v < 1.0 {
                    Some(Some(v))
                } else {
                    self.errors.push(format!("{key}: {v} must lie in (0, 1) or be `none`"));
                    None
                }
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub train_path: PathBuf,
    pub val_path: PathBuf,
    pub out_path: PathBuf,
    pub log_path: Option<PathBuf>,
    pub variant: ModelVariant,
    pub tasks: Option<usize>,
    pub embedding_dim: usize,
    pub tower_dims: Vec<usize>,
    pub dropout: Vec<f64>,
    pub ait_dim: usize,
    pub share_ait: bool,
    pub train: TrainConfig,
    pub lambda_target: Option<f64>,
    pub downsample_group: Option<String>,
    pub min_frequency: usize,
    /// Fully resolved `key -> value` map, stored in the model artifact.
    pub snapshot: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn from_map(mut map: BTreeMap<String, String>, mut errors: Vec<String>) -> Result<Self, CliError> {
        let mut f = Fields {
            map: &map,
            errors: &mut errors,
        };
        let train_path = f.input_file("train");
        let val_path = f.input_file("val");
        let out_path = f.output_file("out", true);
        let log_path = f.output_file("log", false);
        let variant = f.parse::<ModelVariant>("variant");
        let tasks = f.parse::<usize>("tasks");
        let embedding_dim = f.parse::<usize>("embedding_dim");
        let tower_dims = f.list::<usize>("tower_dims");
        let dropout = f.list::<f64>("dropout");
        let ait_dim = match f.raw("ait_dim") {
            Some(_) => f.parse::<usize>("ait_dim"),
            None => tower_dims.as_ref().and_then(|d| d.last().copied()),
        };
        let share_ait = f.boolean("share_ait");
        let lr = f.parse::<f64>("lr");
        let batch_size = f.parse::<usize>("batch_size");
        let l2 = f.parse::<f64>("l2");
        let alpha = f.parse::<f64>("alpha");
        let lambda_target = f.optional_fraction("lambda_target");
        let downsample_group = f.raw("downsample_group").map(str::to_string);
        let min_frequency = f.parse::<usize>("min_frequency");
        let max_epochs = f.parse::<usize>("max_epochs");
        let patience = f.parse::<usize>("patience");
        let seed = f.parse::<u64>("seed");

        if tasks == Some(0) {
            errors.push("tasks must be >= 1".into());
        }
        if min_frequency == Some(0) {
            errors.push("min_frequency must be >= 1".into());
        }
        // Fields that failed to parse are replaced by valid placeholders so
        // the remaining ones are still checked.
        let probe = ArchitectureConfig::new(1, 1);
        let arch = ArchitectureConfig {
            embedding_dim: embedding_dim.unwrap_or(probe.embedding_dim),
            ait_dim: ait_dim.unwrap_or_else(|| tower_dims.as_ref().map_or(probe.ait_dim, |d| d.last().copied().unwrap_or(1))),
            tower_dims: tower_dims.clone().unwrap_or_else(|| probe.tower_dims.clone()),
            dropout: dropout.clone().unwrap_or_else(|| {
                let n = tower_dims.as_ref().map_or(probe.tower_dims.len(), Vec::len);
                vec![0.0; n]
            }),
            ..probe
        };
        errors.extend(arch.problems());
        let defaults = TrainConfig::default();
        let train = TrainConfig {
            adam: AdamConfig {
                lr: lr.unwrap_or(defaults.adam.lr),
                ..AdamConfig::default()
            },
            batch_size: batch_size.unwrap_or(defaults.batch_size),
            l2: l2.unwrap_or(defaults.l2),
            alpha: alpha.unwrap_or(defaults.alpha),
            max_epochs: max_epochs.unwrap_or(defaults.max_epochs),
            patience: patience.unwrap_or(defaults.patience),
            seed: seed.unwrap_or(defaults.seed),
        };
        errors.extend(train.problems());
        let parsed = [
            lr.is_some(),
            batch_size.is_some(),
            l2.is_some(),
            alpha.is_some(),
            max_epochs.is_some(),
            patience.is_some(),
            seed.is_some(),
            embedding_dim.is_some(),
            tower_dims.is_some(),
            dropout.is_some(),
            ait_dim.is_some(),
            share_ait.is_some(),
        ];
        if !errors.is_empty() || parsed.contains(&false) {
            return Err(CliError::config(errors));
        }
        if let Some(a) = ait_dim {
            map.insert("ait_dim".into(), a.to_string());
        }
        Ok(RunConfig {
            train_path: train_path.unwrap(),
            val_path: val_path.unwrap(),
            out_path: out_path.unwrap(),
            log_path,
            variant: variant.unwrap(),
            tasks,
            embedding_dim: embedding_dim.unwrap(),
            tower_dims: tower_dims.unwrap(),
            dropout: dropout.unwrap(),
            ait_dim: ait_dim.unwrap(),
            share_ait: share_ait.unwrap(),
            train,
            lambda_target: lambda_target.unwrap(),
            downsample_group,
            min_frequency: min_frequency.unwrap(),
            snapshot: map,
        })
    }

    pub fn architecture(&self, tasks: usize, fields: usize) -> ArchitectureConfig {
        ArchitectureConfig {
            tasks,
            fields,
            embedding_dim: self.embedding_dim,
            tower_dims: self.tower_dims.clone(),
            dropout: self.dropout.clone(),
            ait_dim: self.ait_dim,
            share_ait: self.share_ait,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GenConfig {
    pub out_dir: PathBuf,
    pub funnel: FunnelGenConfig,
    pub split: (f64, f64, f64),
    pub downsample: Option<f64>,
}

impl GenConfig {
    pub fn from_map(map: &BTreeMap<String, String>, mut errors: Vec<String>) -> Result<Self, CliError> {
        let mut f = Fields {
            map,
            errors: &mut errors,
        };
        let out_dir = f.required("out_dir").map(PathBuf::from);
        let mut funnel = FunnelGenConfig::default();
        let tasks = f.parse::<usize>("tasks");
        if let Some(v) = f.parse("samples") {
            funnel.samples = v;
        }
        let rates_given = f.raw("base_rates").is_some();
        if let Some(v) = f.list("base_rates") {
            funnel.base_rates = v;
        }
        if let Some(v) = f.list("cardinalities") {
            funnel.cardinalities = v;
        }
        if let Some(v) = f.parse("perturbation") {
            funnel.perturbation = v;
        }
        if let Some(v) = f.parse("step_correlation") {
            funnel.step_correlation = v;
        }
        if let Some(v) = f.parse("zipf_exponent") {
            funnel.zipf_exponent = v;
        }
        if let Some(v) = f.parse("seed") {
            funnel.seed = v;
        }
        let split = f.list::<f64>("split");
        let downsample = f.optional_fraction("downsample");

        funnel.tasks = funnel.base_rates.len();
        if let Some(t) = tasks {
            if !rates_given && t != funnel.tasks {
                errors.push(format!(
                    "tasks = {t} needs base_rates with {t} entries (defaults have {})",
                    funnel.tasks
                ));
            } else if t != funnel.tasks {
                errors.push(format!("tasks = {t} but base_rates has {} entries", funnel.tasks));
            }
        }
        errors.extend(funnel.problems());
        let split = match split.as_deref() {
            Some(&[a, b, c]) => Some((a, b, c)),
            Some(other) => {
                errors.push(format!("split needs three fractions, got {}", other.len()));
                None
            }
            None => None,
        };
        if let Some((a, b, c)) = split {
            if !(a > 0.0 && b > 0.0 && c > 0.0) || (a + b + c - 1.0).abs() > 1e-9 {
                errors.push(format!("split fractions ({a}, {b}, {c}) must be positive and sum to 1"));
            }
        }
        if !errors.is_empty() {
            return Err(CliError::config(errors));
        }
        Ok(GenConfig {
            out_dir: out_dir.unwrap(),
            funnel,
            split: split.unwrap(),
            downsample: downsample.unwrap(),
        })
    }
}
