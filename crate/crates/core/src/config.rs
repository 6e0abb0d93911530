//! Line-oriented `key = value` run configuration with a fixed schema.
//!
//! Values are resolved as default, then file, then command-line override;
//! every key remembers which of the three supplied it.

use std::collections::BTreeMap;
use std::fmt;

use sha2::{Digest, Sha256};

use crate::error::{MufiError, Result};
use crate::losses::Mode;
use crate::pipeline::ExperimentConfig;
use crate::synthgen::WorldSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Default,
    File,
    Flag,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Default => "default",
            Source::File => "file",
            Source::Flag => "flag",
        })
    }
}

const OTHER_KEYS: [&str; 11] = [
    "seed",
    "space.dim",
    "space.word_dim",
    "model.hidden",
    "model.out_channels",
    "train.mode",
    "train.lr",
    "train.classification_lr",
    "train.momentum",
    "train.epochs",
    "train.batch_size",
];

/// Every accepted key, in canonical order.
pub fn schema() -> Vec<String> {
    let mut keys = vec![OTHER_KEYS[0].to_string()];
    keys.extend(
        WorldSpec::KEYS
            .iter()
            .filter(|k| **k != "seed")
            .map(|k| format!("world.{k}")),
    );
    keys.extend(OTHER_KEYS[1..].iter().map(|k| k.to_string()));
    keys
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub experiment: ExperimentConfig,
    /// Mode for single-run subcommands.
    pub mode: Mode,
    sources: BTreeMap<String, Source>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let sources = schema().into_iter().map(|k| (k, Source::Default)).collect();
        Self {
            experiment: ExperimentConfig::default(),
            mode: Mode::Mufi,
            sources,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str, what: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| MufiError::Config(format!("{key}: cannot parse {value:?} as {what}")))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str, source: Source) -> Result<()> {
        let e = &mut self.experiment;
        match key {
            "seed" => {
                let s: u64 = parse(key, value, "an unsigned integer")?;
                e.world.seed = s;
                e.train.seed = s;
            }
            "space.dim" => e.space_dim = parse(key, value, "an integer")?,
            "space.word_dim" => e.word_dim = parse(key, value, "an integer")?,
            "model.hidden" => e.hidden = parse(key, value, "an integer")?,
            "model.out_channels" => e.out_channels = parse(key, value, "an integer")?,
            "train.mode" => self.mode = value.trim().parse()?,
            "train.lr" => e.train.lr = parse(key, value, "a float")?,
            "train.classification_lr" => e.classification_lr = parse(key, value, "a float")?,
            "train.momentum" => e.train.momentum = parse(key, value, "a float")?,
            "train.epochs" => e.train.epochs = parse(key, value, "an integer")?,
            "train.batch_size" => e.train.batch_size = parse(key, value, "an integer")?,
            _ => match key.strip_prefix("world.") {
                Some(k) if k != "seed" && WorldSpec::KEYS.contains(&k) => e.world.set(k, value)?,
                _ => return Err(MufiError::Config(format!("unknown config key {key:?}"))),
            },
        }
        self.sources.insert(key.to_string(), source);
        Ok(())
    }

    /// Applies a config file body. Blank lines and `#` comments are skipped;
    /// every unknown key is reported at once.
    pub fn apply_text(&mut self, text: &str, source: Source) -> Result<()> {
        let mut unknown = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| MufiError::Config(format!("line {}: expected `key = value`, got {line:?}", i + 1)))?;
            let k = k.trim();
            if !schema().iter().any(|s| s == k) {
                unknown.push(k.to_string());
                continue;
            }
            self.set(k, v, source)?;
        }
        if !unknown.is_empty() {
            return Err(MufiError::Config(format!(
                "unknown config keys: {}",
                unknown.join(", ")
            )));
        }
        Ok(())
    }

    /// Applies `key=value` overrides.
    pub fn apply_overrides(&mut self, pairs: &[String]) -> Result<()> {
        for p in pairs {
            let (k, v) = p
                .split_once('=')
                .ok_or_else(|| MufiError::Config(format!("override {p:?} is not key=value")))?;
            self.set(k.trim(), v, Source::Flag)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.experiment;
        e.world.validate()?;
        if e.space_dim == 0 || e.word_dim == 0 || e.hidden == 0 || e.out_channels == 0 {
            return Err(MufiError::Config("space and model dimensions must be positive".into()));
        }
        e.train.validate()?;
        if !(e.classification_lr >= 0.0) {
            return Err(MufiError::Config("train.classification_lr must be >= 0".into()));
        }
        Ok(())
    }

    pub fn value(&self, key: &str) -> String {
        let e = &self.experiment;
        let w = &e.world;
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        match key {
            "seed" => e.train.seed.to_string(),
            "world.n_facets" => w.n_facets.to_string(),
            "world.classes_per_facet" => list(&w.classes_per_facet),
            "world.teacher_only" => w
                .teacher_only
                .iter()
                .map(|b| b.to_string())
                .collect::<Vec<_>>()
                .join(","),
            "world.grid" => list(&w.grid),
            "world.region" => list(&w.region),
            "world.noise_sigma" => format!("{:?}", w.noise_sigma),
            "world.signal_amplitude" => format!("{:?}", w.signal_amplitude),
            "world.samples_per_facet" => w.samples_per_facet.to_string(),
            "world.train_fraction" => format!("{:?}", w.train_fraction),
            "world.probe_train_fraction" => format!("{:?}", w.probe_train_fraction),
            "space.dim" => e.space_dim.to_string(),
            "space.word_dim" => e.word_dim.to_string(),
            "model.hidden" => e.hidden.to_string(),
            "model.out_channels" => e.out_channels.to_string(),
            "train.mode" => self.mode.to_string(),
            "train.lr" => format!("{:?}", e.train.lr),
            "train.classification_lr" => format!("{:?}", e.classification_lr),
            "train.momentum" => format!("{:?}", e.train.momentum),
            "train.epochs" => e.train.epochs.to_string(),
            "train.batch_size" => e.train.batch_size.to_string(),
            _ => String::new(),
        }
    }

    pub fn source(&self, key: &str) -> Source {
        self.sources.get(key).copied().unwrap_or(Source::Default)
    }

    /// Canonical `key = value` listing; loading it reproduces this config.
    pub fn to_text(&self) -> String {
        schema().iter().map(|k| format!("{k} = {}\n", self.value(k))).collect()
    }

    /// Listing annotated with where each value came from.
    pub fn describe(&self) -> String {
        schema()
            .iter()
            .map(|k| format!("{k} = {}  [{}]\n", self.value(k), self.source(k)))
            .collect()
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_is_flag_over_file_over_default() {
        let mut c = RunConfig::default();
        c.apply_text("train.epochs = 4\ntrain.lr = 0.5 # comment\n", Source::File)
            .unwrap();
        c.apply_overrides(&["train.epochs=9".to_string()]).unwrap();
        assert_eq!(c.experiment.train.epochs, 9);
        assert_eq!(c.experiment.train.lr, 0.5);
        assert_eq!(c.source("train.epochs"), Source::Flag);
        assert_eq!(c.source("train.lr"), Source::File);
        assert_eq!(c.source("model.hidden"), Source::Default);
        assert!(c.describe().contains("train.epochs = 9  [flag]"));
    }

    #[test]
    fn unknown_keys_are_all_listed() {
        let mut c = RunConfig::default();
        let err = c
            .apply_text("bogus = 1\ntrain.lr = 0.1\nworld.colour = red\n", Source::File)
            .unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, MufiError::Config(_)));
        assert!(msg.contains("bogus") && msg.contains("world.colour"), "{msg}");
        assert!(c.set("world.seed", "3", Source::Flag).is_err());
    }

    #[test]
    fn canonical_text_roundtrips() {
        let mut c = RunConfig::default();
        c.apply_overrides(&[
            "seed=11".into(),
            "world.noise_sigma=0.25".into(),
            "train.mode=intra-l2".into(),
        ])
        .unwrap();
        let mut d = RunConfig::default();
        d.apply_text(&c.to_text(), Source::File).unwrap();
        assert_eq!(c.experiment, d.experiment);
        assert_eq!(c.mode, d.mode);
        assert_eq!(c.hash(), d.hash());
        assert_eq!(d.experiment.world.seed, 11);
    }

    #[test]
    fn bad_values_are_config_errors() {
        let mut c = RunConfig::default();
        assert!(matches!(
            c.set("train.epochs", "many", Source::Flag),
            Err(MufiError::Config(_))
        ));
        assert!(matches!(
            c.set("train.mode", "fancy", Source::Flag),
            Err(MufiError::Config(_))
        ));
        c.set("train.momentum", "1.5", Source::Flag).unwrap();
        assert!(c.validate().is_err());
    }
}
