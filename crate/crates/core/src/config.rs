//! Run configuration: flat `key = value` text, one entry per line, `#`
//! starts a comment. Unknown keys are rejected.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::eval::AeCriterion;
use crate::network::{ModelSpec, StnSpec, TowerSpec};
use crate::objective::{ContrastiveConfig, DistanceKind};
use crate::optim::{Hyper, OptimizerKind};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub image_size: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    /// `None` selects the optimizer's default.
    pub lr: Option<f64>,
    pub metric: DistanceKind,
    pub margin: f64,
    pub stn: bool,
    pub rotate_eval: bool,
    pub split: f64,
    pub val_fraction: f64,
    pub seed: u64,
    pub manifest: Option<PathBuf>,
    pub interactions: Option<PathBuf>,
    pub images: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub threshold: Option<f64>,
    pub conv_filters: Vec<usize>,
    pub kernel: usize,
    pub pool: usize,
    pub fc_sizes: Vec<usize>,
    pub checkpoint_every: usize,
    pub line_search: bool,
    pub criterion: AeCriterion,
    pub ae_width_divisor: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let tower = TowerSpec::default();
        Self {
            image_size: tower.input_size,
            epochs: 50,
            batch_size: 32,
            optimizer: OptimizerKind::Adam,
            lr: None,
            metric: DistanceKind::Euclidean,
            margin: 1.0,
            stn: false,
            rotate_eval: false,
            split: 0.66,
            val_fraction: 0.1,
            seed: 0,
            manifest: None,
            interactions: None,
            images: None,
            checkpoint: None,
            report: None,
            threshold: None,
            conv_filters: tower.conv_filters,
            kernel: tower.kernel,
            pool: tower.pool,
            fc_sizes: tower.fc_sizes,
            checkpoint_every: 10,
            line_search: false,
            criterion: AeCriterion::Cosine,
            ae_width_divisor: 1,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!(
            "{key}: expected true or false, got {value:?}"
        ))),
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(|v| parse_value(key, v.trim()))
        .collect()
}

fn join(v: &[usize]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

/// Splits config text into ordered `(key, value)` entries.
pub fn parse_entries(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!(
                "line {}: expected `key = value`, got {line:?}",
                i + 1
            ))
        })?;
        out.push((k.trim().to_owned(), v.trim().to_owned()));
    }
    Ok(out)
}

impl RunConfig {
    /// Applies one entry; `false` for a key this type does not know.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let path = || Some(PathBuf::from(value));
        match key {
            "image_size" => self.image_size = parse_value(key, value)?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "optimizer" => self.optimizer = value.parse()?,
            "lr" => self.lr = Some(parse_value(key, value)?),
            "metric" => self.metric = value.parse()?,
            "margin" => self.margin = parse_value(key, value)?,
            "stn" => self.stn = parse_bool(key, value)?,
            "rotate_eval" => self.rotate_eval = parse_bool(key, value)?,
            "split" => self.split = parse_value(key, value)?,
            "val_fraction" => self.val_fraction = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "manifest" => self.manifest = path(),
            "interactions" => self.interactions = path(),
            "images" => self.images = path(),
            "checkpoint" => self.checkpoint = path(),
            "report" => self.report = path(),
            "threshold" => self.threshold = Some(parse_value(key, value)?),
            "conv_filters" => self.conv_filters = parse_list(key, value)?,
            "kernel" => self.kernel = parse_value(key, value)?,
            "pool" => self.pool = parse_value(key, value)?,
            "fc_sizes" => self.fc_sizes = parse_list(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse_value(key, value)?,
            "line_search" => self.line_search = parse_bool(key, value)?,
            "criterion" => self.criterion = value.parse()?,
            "ae_width_divisor" => self.ae_width_divisor = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Parses config text on top of the defaults, rejecting unknown keys.
    pub fn parse(text: &str) -> Result<Self> {
        let (cfg, extra) = Self::parse_with_extras(text, &[])?;
        debug_assert!(extra.is_empty());
        Ok(cfg)
    }

    /// Like [`Self::parse`], but also accepts the listed extra keys and
    /// returns their values.
    pub fn parse_with_extras(
        text: &str,
        extras: &[&str],
    ) -> Result<(Self, BTreeMap<String, String>)> {
        let mut cfg = Self::default();
        let mut extra = BTreeMap::new();
        for (k, v) in parse_entries(text)? {
            if !cfg.set(&k, &v)? {
                if extras.contains(&k.as_str()) {
                    extra.insert(k, v);
                } else {
                    return Err(Error::Config(format!("unknown key {k:?}")));
                }
            }
        }
        Ok((cfg, extra))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Canonical text form; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("image_size", self.image_size.to_string());
        put("epochs", self.epochs.to_string());
        put("batch_size", self.batch_size.to_string());
        put("optimizer", self.optimizer.to_string());
        if let Some(lr) = self.lr {
            put("lr", lr.to_string());
        }
        put("metric", self.metric.to_string());
        put("margin", self.margin.to_string());
        put("stn", self.stn.to_string());
        put("rotate_eval", self.rotate_eval.to_string());
        put("split", self.split.to_string());
        put("val_fraction", self.val_fraction.to_string());
        put("seed", self.seed.to_string());
        for (k, p) in [
            ("manifest", &self.manifest),
            ("interactions", &self.interactions),
            ("images", &self.images),
            ("checkpoint", &self.checkpoint),
            ("report", &self.report),
        ] {
            if let Some(p) = p {
                put(k, p.display().to_string());
            }
        }
        if let Some(t) = self.threshold {
            put("threshold", t.to_string());
        }
        put("conv_filters", join(&self.conv_filters));
        put("kernel", self.kernel.to_string());
        put("pool", self.pool.to_string());
        put("fc_sizes", join(&self.fc_sizes));
        put("checkpoint_every", self.checkpoint_every.to_string());
        put("line_search", self.line_search.to_string());
        put("criterion", self.criterion.as_str().to_owned());
        put("ae_width_divisor", self.ae_width_divisor.to_string());
        s
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr.unwrap_or_else(|| self.optimizer.default_lr())
    }

    pub fn hyper(&self) -> Hyper {
        Hyper::defaults(self.optimizer).with_lr(self.learning_rate())
    }

    pub fn contrastive(&self) -> ContrastiveConfig {
        ContrastiveConfig {
            margin: self.margin,
            metric: self.metric,
        }
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec {
            tower: TowerSpec {
                input_size: self.image_size,
                conv_filters: self.conv_filters.clone(),
                kernel: self.kernel,
                pool: self.pool,
                fc_sizes: self.fc_sizes.clone(),
            },
            stn: self.stn.then(StnSpec::default),
        }
    }

    /// Checks every field; called before any work starts.
    pub fn validate(&self) -> Result<()> {
        let fraction = |name: &str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} = {v} is not in (0, 1)")))
            }
        };
        fraction("split", self.split)?;
        fraction("val_fraction", self.val_fraction)?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::Config("checkpoint_every must be positive".into()));
        }
        if self.ae_width_divisor == 0 {
            return Err(Error::Config("ae_width_divisor must be positive".into()));
        }
        let lr = self.learning_rate();
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!(
                "lr = {lr} must be positive and finite"
            )));
        }
        if let Some(t) = self.threshold {
            if !t.is_finite() {
                return Err(Error::Config(format!("threshold = {t} is not finite")));
            }
        }
        self.contrastive().validate()?;
        self.model_spec().validate()
    }
}
