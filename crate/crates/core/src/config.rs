//! Plain-text `key=value` run configuration.
//!
//! One assignment per line; `#` starts a comment. Every field of
//! [`HdtConfig`] and [`TrainConfig`] is a key, plus `preset` (`paper` or
//! `tiny`), which is applied before the other keys wherever it appears.
//! Missing keys keep the preset's value, so an empty file is the `paper` preset.

use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::HdtConfig;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub model: HdtConfig,
    pub train: TrainConfig,
}

fn line_error(line: usize, e: Error) -> Error {
    let msg = match e {
        Error::Config(m) => m,
        other => other.to_string(),
    };
    Error::ConfigLine { line, msg }
}

impl RunConfig {
    pub fn preset(name: &str) -> Result<Self> {
        Ok(RunConfig {
            model: HdtConfig::preset(name)?,
            train: TrainConfig::preset(name)?,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        let mut preset = None;
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::ConfigLine {
                line,
                msg: format!("expected key=value, got '{content}'"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::ConfigLine {
                    line,
                    msg: format!("duplicate key '{key}'"),
                });
            }
            if key == "preset" {
                preset = Some((line, value.to_string()));
            } else {
                pairs.push((line, key.to_string(), value.to_string()));
            }
        }
        let mut cfg = match preset {
            Some((line, name)) => RunConfig::preset(&name).map_err(|e| line_error(line, e))?,
            None => RunConfig::default(),
        };
        for (line, key, value) in pairs {
            let known = cfg.model.set(&key, &value).map_err(|e| line_error(line, e))?
                || cfg.train.set(&key, &value).map_err(|e| line_error(line, e))?;
            if !known {
                return Err(Error::ConfigLine {
                    line,
                    msg: format!("unknown key '{key}'"),
                });
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate(&self.model)
    }

    /// Every key with its current value, one per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.model.to_pairs().into_iter().chain(self.train.to_pairs()) {
            out.push_str(&format!("{k}={v}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::DType;

    #[test]
    fn empty_file_is_paper_preset() {
        let cfg = RunConfig::parse("").unwrap();
        assert_eq!(cfg.model, HdtConfig::paper());
        assert_eq!(cfg.train, TrainConfig::paper());
        assert_eq!(RunConfig::parse("# only a comment\n\n").unwrap(), cfg);
    }

    #[test]
    fn preset_applies_before_other_keys() {
        let cfg = RunConfig::parse("heads=4\npreset=tiny\nprecision=f64 # for checks\n").unwrap();
        assert_eq!(cfg.model.heads, 4);
        assert_eq!(cfg.model.embed, 16);
        assert_eq!(cfg.train.batch_size, 2);
        assert_eq!(cfg.train.precision, DType::F64);
    }

    #[test]
    fn odd_window_is_accepted() {
        assert_eq!(RunConfig::parse("window=7").unwrap().model.window, 7);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = RunConfig::parse("embed=60\n\nheads=seven\n").unwrap_err();
        assert!(matches!(err, Error::ConfigLine { line: 3, .. }), "{err}");
        let err = RunConfig::parse("colour=blue").unwrap_err();
        assert!(matches!(err, Error::ConfigLine { line: 1, .. }), "{err}");
        assert!(RunConfig::parse("lr=1e-4\nlr=2e-4").is_err());
        assert!(RunConfig::parse("just words").is_err());
        assert!(RunConfig::parse("preset=huge").is_err());
    }

    #[test]
    fn divisibility_is_enforced() {
        let err = RunConfig::parse("heads=7\nembed=60").unwrap_err();
        assert!(err.to_string().contains("divisible"), "{err}");
    }

    #[test]
    fn text_round_trip() {
        let mut cfg = RunConfig::preset("tiny").unwrap();
        cfg.train.seed = 11;
        cfg.model.sar = false;
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }
}
