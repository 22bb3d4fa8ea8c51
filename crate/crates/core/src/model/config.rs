use std::fmt;

use crate::error::{Error, Result};

/// Architectural hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct HdtConfig {
    /// Head feature channels `C`.
    pub channels: usize,
    /// Body embedding dimension `D`.
    pub embed: usize,
    pub window: usize,
    pub heads: usize,
    /// DT blocks per group (`N`).
    pub dts_per_group: usize,
    /// Number of groups (`M`).
    pub groups: usize,
    pub mlp_ratio: f64,
    /// Dilation of the conv after the last group.
    pub dilation: usize,
    /// Gate the reference feature with both attention maps.
    pub sar: bool,
    /// Deformable convs in the local branch; plain 3×3 convs when off.
    pub deformable: bool,
}

/// The four ablation variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Baseline,
    Sar,
    Dt,
    SarDt,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Baseline, Variant::Sar, Variant::Dt, Variant::SarDt];

    pub fn from_flags(sar: bool, deformable: bool) -> Self {
        match (sar, deformable) {
            (false, false) => Variant::Baseline,
            (true, false) => Variant::Sar,
            (false, true) => Variant::Dt,
            (true, true) => Variant::SarDt,
        }
    }

    pub fn flags(self) -> (bool, bool) {
        match self {
            Variant::Baseline => (false, false),
            Variant::Sar => (true, false),
            Variant::Dt => (false, true),
            Variant::SarDt => (true, true),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "BL",
            Variant::Sar => "+SAR",
            Variant::Dt => "+DT",
            Variant::SarDt => "+SAR+DT",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Default for HdtConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl HdtConfig {
    /// Full-size configuration, about 1.4M parameters.
    pub fn paper() -> Self {
        HdtConfig {
            channels: 60,
            embed: 60,
            window: 8,
            heads: 6,
            dts_per_group: 6,
            groups: 3,
            mlp_ratio: 2.0,
            dilation: 2,
            sar: true,
            deformable: true,
        }
    }

    /// Desk-scale configuration for tests and quick training runs.
    pub fn tiny() -> Self {
        HdtConfig {
            channels: 8,
            embed: 16,
            window: 4,
            heads: 2,
            dts_per_group: 2,
            groups: 1,
            mlp_ratio: 2.0,
            dilation: 2,
            sar: true,
            deformable: true,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper()),
            "tiny" => Ok(Self::tiny()),
            other => Err(Error::Config(format!("unknown preset '{other}' (expected 'paper' or 'tiny')"))),
        }
    }

    pub fn with_variant(mut self, v: Variant) -> Self {
        (self.sar, self.deformable) = v.flags();
        self
    }

    pub fn variant(&self) -> Variant {
        Variant::from_flags(self.sar, self.deformable)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("channels", self.channels),
            ("embed", self.embed),
            ("window", self.window),
            ("heads", self.heads),
            ("dts_per_group", self.dts_per_group),
            ("groups", self.groups),
            ("dilation", self.dilation),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.embed % self.heads != 0 {
            return Err(Error::Config(format!(
                "embed ({}) must be divisible by heads ({})",
                self.embed, self.heads
            )));
        }
        if !(self.mlp_ratio > 0.0 && self.mlp_ratio.is_finite()) {
            return Err(Error::Config(format!("mlp_ratio must be positive, got {}", self.mlp_ratio)));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed / self.heads
    }

    pub fn mlp_hidden(&self) -> usize {
        ((self.embed as f64 * self.mlp_ratio).round() as usize).max(1)
    }

    /// Channel widths of the local branch: `D/10`, `D/5`, `2D/5`.
    pub fn local_widths(&self) -> [usize; 3] {
        let d = self.embed;
        [(d / 10).max(1), (d / 5).max(1), (2 * d / 5).max(1)]
    }

    /// Keys and values in the text form used by config files and checkpoints.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("channels", self.channels.to_string()),
            ("embed", self.embed.to_string()),
            ("window", self.window.to_string()),
            ("heads", self.heads.to_string()),
            ("dts_per_group", self.dts_per_group.to_string()),
            ("groups", self.groups.to_string()),
            ("mlp_ratio", self.mlp_ratio.to_string()),
            ("dilation", self.dilation.to_string()),
            ("sar", self.sar.to_string()),
            ("deformable", self.deformable.to_string()),
        ]
    }

    /// Sets one field from text. Returns `Ok(false)` for keys that are not
    /// model fields.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        fn parse<V: std::str::FromStr>(key: &str, value: &str, ty: &str) -> Result<V> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("{key}: expected {ty}, got '{value}'")))
        }
        match key {
            "channels" => self.channels = parse(key, value, "an integer")?,
            "embed" => self.embed = parse(key, value, "an integer")?,
            "window" => self.window = parse(key, value, "an integer")?,
            "heads" => self.heads = parse(key, value, "an integer")?,
            "dts_per_group" => self.dts_per_group = parse(key, value, "an integer")?,
            "groups" => self.groups = parse(key, value, "an integer")?,
            "mlp_ratio" => self.mlp_ratio = parse(key, value, "a number")?,
            "dilation" => self.dilation = parse(key, value, "an integer")?,
            "sar" => self.sar = parse(key, value, "true or false")?,
            "deformable" => self.deformable = parse(key, value, "true or false")?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Roll applied before partitioning for block `i` of a group.
    pub fn shift_for(&self, i: usize) -> usize {
        if i % 2 == 1 {
            self.window / 2
        } else {
            0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        HdtConfig::paper().validate().unwrap();
        HdtConfig::tiny().validate().unwrap();
        assert_eq!(HdtConfig::paper().local_widths(), [6, 12, 24]);
        assert_eq!(HdtConfig::tiny().local_widths(), [1, 3, 6]);
    }

    #[test]
    fn heads_must_divide_embed() {
        let cfg = HdtConfig {
            heads: 7,
            ..HdtConfig::paper()
        };
        assert!(cfg.validate().unwrap_err().to_string().contains("divisible"));
    }

    #[test]
    fn text_round_trip() {
        let mut cfg = HdtConfig::paper();
        for (k, v) in HdtConfig::tiny().with_variant(Variant::Sar).to_pairs() {
            assert!(cfg.set(k, &v).unwrap());
        }
        assert_eq!(cfg, HdtConfig::tiny().with_variant(Variant::Sar));
        assert!(!cfg.set("lr", "1").unwrap());
        assert!(cfg.set("heads", "two").is_err());
    }

    #[test]
    fn variants_round_trip() {
        for v in Variant::ALL {
            assert_eq!(HdtConfig::tiny().with_variant(v).variant(), v);
        }
    }
}
