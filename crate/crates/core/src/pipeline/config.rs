//! Flat `key = value` configuration. Every key has a default; the training,
//! index and proposal defaults are the published protocol values.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::annindex::{IndexConfig, Metric};
use crate::collage::parse_color;
use crate::embedder::{LossForm, Mining, TrainConfig};

/// Environment variable that overrides the `seed` key.
pub const SEED_ENV: &str = "COSEG_SEED";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}, line {line}: {msg}")]
    Syntax {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("config key `{key}`: {msg}")]
    Value { key: String, msg: String },
    #[error("config key `{0}` is required but not set")]
    Missing(&'static str),
    #[error("{path}: {source}")]
    File {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    Path,
    Uint,
    PositiveUint,
    Real {
        min: f64,
        max: f64,
        min_open: bool,
        max_open: bool,
    },
    OptionalFraction,
    Choice(&'static [&'static str]),
    UintList,
    Color,
}

const POSITIVE: Kind = Kind::Real {
    min: 0.0,
    max: f64::INFINITY,
    min_open: true,
    max_open: true,
};
const THRESHOLD: Kind = Kind::Real {
    min: 0.0,
    max: 1.0,
    min_open: true,
    max_open: false,
};

#[derive(Debug, Clone, Copy)]
pub struct ConfigKey {
    pub name: &'static str,
    pub default: &'static str,
    pub help: &'static str,
    kind: Kind,
}

const fn key(
    name: &'static str,
    default: &'static str,
    kind: Kind,
    help: &'static str,
) -> ConfigKey {
    ConfigKey {
        name,
        default,
        help,
        kind,
    }
}

/// Every recognised key, in documentation order.
pub const CONFIG_KEYS: &[ConfigKey] = &[
    key(
        "seed",
        "0",
        Kind::Uint,
        "seed for splitting, training and index building",
    ),
    key("manifest", "", Kind::Path, "dataset manifest (CSV)"),
    key(
        "proposals",
        "",
        Kind::Path,
        "proposal file, one `image_id,x,y,w,h,score,source` per line",
    ),
    key(
        "out_dir",
        "coseg-out",
        Kind::Path,
        "directory for all artifacts",
    ),
    key(
        "mask_mode",
        "box",
        Kind::Choice(&["box", "file"]),
        "segmentation masks: whole proposal box, or PBM files from masks_dir",
    ),
    key(
        "masks_dir",
        "",
        Kind::Path,
        "per-proposal masks `<descriptor id>.pbm` (mask_mode = file)",
    ),
    key(
        "descriptor.size",
        "32",
        Kind::PositiveUint,
        "side of the square grey patch a proposal is resampled to",
    ),
    key(
        "geometry.dedup_threshold",
        "0.95",
        THRESHOLD,
        "IoU at which a later proposal counts as a near duplicate",
    ),
    key(
        "geometry.nms_threshold",
        "0.7",
        THRESHOLD,
        "IoU at which non-maximum suppression drops a proposal",
    ),
    key(
        "geometry.top_k",
        "10",
        Kind::PositiveUint,
        "proposals kept per image",
    ),
    key(
        "split.train_fraction",
        "",
        Kind::OptionalFraction,
        "re-split each class with this train fraction (empty: use the manifest split)",
    ),
    key("train.lr", "0.01", POSITIVE, "learning rate"),
    key(
        "train.momentum",
        "0.9",
        Kind::Real {
            min: 0.0,
            max: 1.0,
            min_open: false,
            max_open: true,
        },
        "momentum coefficient",
    ),
    key(
        "train.batch_size",
        "128",
        Kind::PositiveUint,
        "pairs per mini-batch",
    ),
    key("train.margin", "1", POSITIVE, "contrastive margin"),
    key(
        "train.iterations",
        "100000",
        Kind::Uint,
        "mini-batches to train for",
    ),
    key(
        "train.mining",
        "aggressive",
        Kind::Choice(&["random", "aggressive"]),
        "pair selection",
    ),
    key(
        "train.loss",
        "squared",
        Kind::Choice(&["squared", "classical"]),
        "hinge on D² (squared) or on D (classical)",
    ),
    key(
        "train.hidden",
        "128",
        Kind::UintList,
        "comma-separated hidden layer widths",
    ),
    key(
        "train.embedding_dim",
        "256",
        Kind::PositiveUint,
        "embedding width",
    ),
    key(
        "train.pool_factor",
        "10",
        Kind::PositiveUint,
        "aggressive mining pool size as a multiple of the batch",
    ),
    key(
        "index.n_trees",
        "350",
        Kind::PositiveUint,
        "trees in the forest",
    ),
    key(
        "index.search_k",
        "50",
        Kind::PositiveUint,
        "default candidate budget per query",
    ),
    key(
        "index.leaf_capacity",
        "16",
        Kind::PositiveUint,
        "largest leaf a split is not attempted on",
    ),
    key(
        "index.metric",
        "euclidean",
        Kind::Choice(&["euclidean", "cosine"]),
        "distance",
    ),
    key(
        "retrieve.k",
        "10",
        Kind::PositiveUint,
        "neighbours per similarity group",
    ),
    key(
        "retrieve.search_k",
        "50",
        Kind::PositiveUint,
        "candidate budget for retrieval queries",
    ),
    key(
        "retrieve.iou_threshold",
        "0.5",
        THRESHOLD,
        "ground-truth IoU a group member needs to be kept",
    ),
    key(
        "collage.background",
        "135,206,235",
        Kind::Color,
        "collage background `r,g,b`",
    ),
];

fn lookup(name: &str) -> Option<&'static ConfigKey> {
    CONFIG_KEYS.iter().find(|k| k.name == name)
}

fn check(k: &ConfigKey, value: &str) -> Result<(), String> {
    match k.kind {
        Kind::Path => Ok(()),
        Kind::Uint => value.parse::<u64>().map(drop).map_err(|e| e.to_string()),
        Kind::PositiveUint => match value.parse::<u64>() {
            Ok(0) => Err("must be positive".into()),
            Ok(_) => Ok(()),
            Err(e) => Err(e.to_string()),
        },
        Kind::Real {
            min,
            max,
            min_open,
            max_open,
        } => {
            let v: f64 = value.parse().map_err(|e| format!("{e}"))?;
            let lo_ok = if min_open { v > min } else { v >= min };
            let hi_ok = if max_open { v < max } else { v <= max };
            if v.is_finite() && lo_ok && hi_ok {
                Ok(())
            } else {
                let (l, r) = (
                    if min_open { '(' } else { '[' },
                    if max_open { ')' } else { ']' },
                );
                Err(format!("{v} outside {l}{min}, {max}{r}"))
            }
        }
        Kind::OptionalFraction => {
            if value.is_empty() {
                return Ok(());
            }
            let v: f64 = value.parse().map_err(|e| format!("{e}"))?;
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(format!("{v} outside (0, 1)"))
            }
        }
        Kind::Choice(options) => {
            if options.contains(&value) {
                Ok(())
            } else {
                Err(format!("expected one of {}", options.join("|")))
            }
        }
        Kind::UintList => parse_list(value).map(drop),
        Kind::Color => parse_color(value).map(drop),
    }
}

fn parse_list(value: &str) -> Result<Vec<usize>, String> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|s| match s.trim().parse::<usize>() {
            Ok(0) => Err("layer widths must be positive".to_string()),
            Ok(n) => Ok(n),
            Err(e) => Err(format!("`{s}`: {e}")),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskMode {
    /// The whole proposal box is the segmentation.
    Box,
    /// Externally segmented masks, one PBM per proposal.
    File,
}

/// Raw key values. Relative paths read from a file are resolved against the
/// file's directory; paths given through [`PipelineConfig::set`] are taken
/// as they are.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PipelineConfig {
    values: BTreeMap<&'static str, String>,
}

impl PipelineConfig {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, name: &str, value: &str) -> Result<(), ConfigError> {
        let k = lookup(name).ok_or_else(|| ConfigError::UnknownKey(name.to_string()))?;
        let value = value.trim();
        check(k, value).map_err(|msg| ConfigError::Value {
            key: name.to_string(),
            msg,
        })?;
        self.values.insert(k.name, value.to_string());
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        let k = lookup(name)?;
        Some(
            self.values
                .get(k.name)
                .map(String::as_str)
                .unwrap_or(k.default),
        )
    }

    /// Parses `key = value` lines; `#` starts a comment line.
    pub fn parse_str(text: &str, base_dir: &Path, origin: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::new();
        cfg.merge_str(text, base_dir, origin)?;
        Ok(cfg)
    }

    pub fn merge_str(
        &mut self,
        text: &str,
        base_dir: &Path,
        origin: &str,
    ) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let syntax = |msg: String| ConfigError::Syntax {
                path: origin.to_string(),
                line: i + 1,
                msg,
            };
            let (name, value) = line
                .split_once('=')
                .ok_or_else(|| syntax("expected `key = value`".into()))?;
            let (name, value) = (name.trim(), value.trim());
            let k = lookup(name).ok_or_else(|| syntax(format!("unknown key `{name}`")))?;
            let value =
                if k.kind == Kind::Path && !value.is_empty() && Path::new(value).is_relative() {
                    base_dir.join(value).to_string_lossy().into_owned()
                } else {
                    value.to_string()
                };
            self.set(name, &value).map_err(|e| syntax(e.to_string()))?;
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::File {
            path: path.display().to_string(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::parse_str(&text, base, &path.display().to_string())
    }

    /// Applies `COSEG_SEED` when it is set.
    pub fn apply_env(&mut self) -> Result<(), ConfigError> {
        match std::env::var(SEED_ENV) {
            Ok(v) => self.set("seed", &v).map_err(|e| ConfigError::Value {
                key: SEED_ENV.to_string(),
                msg: e.to_string(),
            }),
            Err(_) => Ok(()),
        }
    }

    /// Every key with its effective value, one `key = value` line each.
    pub fn render(&self) -> String {
        CONFIG_KEYS
            .iter()
            .map(|k| format!("{} = {}\n", k.name, self.get(k.name).unwrap_or_default()))
            .collect()
    }

    pub fn settings(&self) -> Result<Settings, ConfigError> {
        let s = |n: &str| self.get(n).expect("known key");
        let value_err = |key: &str, msg: String| ConfigError::Value {
            key: key.to_string(),
            msg,
        };
        let num = |n: &str| -> Result<f64, ConfigError> {
            s(n).parse().map_err(|e| value_err(n, format!("{e}")))
        };
        let uint = |n: &str| -> Result<u64, ConfigError> {
            s(n).parse().map_err(|e| value_err(n, format!("{e}")))
        };
        let size = |n: &str| -> Result<usize, ConfigError> {
            let v = uint(n)?;
            usize::try_from(v).map_err(|e| value_err(n, e.to_string()))
        };
        let path = |n: &str| -> Option<PathBuf> {
            Some(s(n)).filter(|v| !v.is_empty()).map(PathBuf::from)
        };

        let seed = uint("seed")?;
        let manifest = path("manifest").ok_or(ConfigError::Missing("manifest"))?;
        let mask_mode = match s("mask_mode") {
            "file" => MaskMode::File,
            _ => MaskMode::Box,
        };
        let masks_dir = path("masks_dir");
        if mask_mode == MaskMode::File && masks_dir.is_none() {
            return Err(ConfigError::Missing("masks_dir"));
        }
        let patch_size = u32::try_from(uint("descriptor.size")?)
            .map_err(|e| value_err("descriptor.size", e.to_string()))?;
        let train_fraction = match s("split.train_fraction") {
            "" => None,
            _ => Some(num("split.train_fraction")?),
        };
        let train = TrainConfig {
            learning_rate: num("train.lr")?,
            momentum: num("train.momentum")?,
            batch_size: size("train.batch_size")?,
            margin: num("train.margin")?,
            iterations: size("train.iterations")?,
            seed,
            mining: s("train.mining")
                .parse::<Mining>()
                .map_err(|m| value_err("train.mining", m))?,
            loss: s("train.loss")
                .parse::<LossForm>()
                .map_err(|m| value_err("train.loss", m))?,
            hidden: parse_list(s("train.hidden")).map_err(|m| value_err("train.hidden", m))?,
            embedding_dim: size("train.embedding_dim")?,
            pool_factor: size("train.pool_factor")?,
        };
        let index = IndexConfig {
            n_trees: size("index.n_trees")?,
            search_k: size("index.search_k")?,
            leaf_capacity: size("index.leaf_capacity")?,
            seed,
            metric: s("index.metric")
                .parse::<Metric>()
                .map_err(|m| value_err("index.metric", m))?,
        };
        index
            .validate()
            .map_err(|e| value_err("index", e.to_string()))?;
        Ok(Settings {
            seed,
            manifest,
            proposals: path("proposals"),
            out_dir: path("out_dir").unwrap_or_else(|| PathBuf::from("coseg-out")),
            mask_mode,
            masks_dir,
            patch_size,
            dedup_threshold: num("geometry.dedup_threshold")?,
            nms_threshold: num("geometry.nms_threshold")?,
            top_k: size("geometry.top_k")?,
            train_fraction,
            train,
            index,
            retrieve_k: size("retrieve.k")?,
            retrieve_search_k: size("retrieve.search_k")?,
            iou_threshold: num("retrieve.iou_threshold")?,
            background: parse_color(s("collage.background"))
                .map_err(|m| value_err("collage.background", m))?,
        })
    }
}

/// Typed view of a [`PipelineConfig`].
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub seed: u64,
    pub manifest: PathBuf,
    pub proposals: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub mask_mode: MaskMode,
    pub masks_dir: Option<PathBuf>,
    pub patch_size: u32,
    pub dedup_threshold: f64,
    pub nms_threshold: f64,
    pub top_k: usize,
    pub train_fraction: Option<f64>,
    pub train: TrainConfig,
    pub index: IndexConfig,
    pub retrieve_k: usize,
    pub retrieve_search_k: usize,
    pub iou_threshold: f64,
    pub background: [u8; 3],
}
