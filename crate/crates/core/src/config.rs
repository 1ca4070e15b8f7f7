//! Run configuration shared by the CLI commands: block selection, dtype,
//! seeds, tolerances, benchmark sizes, and output paths. JSON on disk;
//! command-line flags override file values, and the DFIR_SEED environment
//! variable overrides the seed list.

use serde::{Deserialize, Serialize};

use crate::tensor::{Error, Result};

pub const BLOCK_CHOICES: [&str; 4] = ["dcfa", "dfpn", "firc3", "all"];
pub const DEMO_CHOICES: [&str; 4] = ["dcfa", "dfpn", "firc3", "anup"];

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSizes {
    /// Token counts for the attention comparison.
    pub attn_n: Vec<usize>,
    /// Head dimension.
    pub attn_d: usize,
    /// K = N / divisor sweep entries.
    pub attn_k_divisors: Vec<usize>,
    /// Spatial extents for the convolution comparison.
    pub conv_extents: Vec<usize>,
    pub conv_kernels: Vec<usize>,
    pub conv_channels: usize,
    /// Repetitions per measurement; medians are reported.
    pub runs: usize,
}

impl Default for BenchSizes {
    fn default() -> Self {
        Self {
            attn_n: vec![256, 1024, 4096],
            attn_d: 32,
            attn_k_divisors: vec![16, 8, 4, 2, 1],
            conv_extents: vec![8, 16, 32, 64],
            conv_kernels: vec![3, 5],
            conv_channels: 4,
            runs: 20,
        }
    }
}

/// Shape grid the block-level contract checks sweep over.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Channel counts; even, and divisible by 4 when a chain depth > 0 is
    /// requested (the chain units split channels a second time).
    pub channels: Vec<usize>,
    /// Square spatial extents.
    pub extents: Vec<usize>,
    /// Chain depths for blocks with a cascade.
    pub depths: Vec<usize>,
    /// Pyramid level counts.
    pub levels: Vec<usize>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            channels: vec![8, 16, 32],
            extents: vec![8, 16],
            depths: vec![0, 1, 2],
            levels: vec![1, 2, 3],
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty()
            || self.extents.is_empty()
            || self.depths.is_empty()
            || self.levels.is_empty()
        {
            return Err(Error::InvalidArgument {
                context: "grid lists must be non-empty".into(),
            });
        }
        let needs_split = self.depths.iter().any(|&n| n > 0);
        for &c in &self.channels {
            if c % 2 != 0 {
                return Err(Error::InvalidArgument {
                    context: format!("grid channel count {c} must be even"),
                });
            }
            if needs_split && c % 4 != 0 {
                return Err(Error::InvalidArgument {
                    context: format!(
                        "grid channel count {c} must divide by 4 when chain depths > 0 are requested"
                    ),
                });
            }
        }
        for &e in &self.extents {
            if e < 2 {
                return Err(Error::InvalidArgument {
                    context: format!("grid extent {e} too small"),
                });
            }
        }
        for &l in &self.levels {
            if l == 0 {
                return Err(Error::InvalidArgument {
                    context: "pyramid level count must be >= 1".into(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoSettings {
    /// Input shape when no fixture is given (B, C, H, W).
    pub shape: Vec<usize>,
    /// Pyramid / upsampling scale where the block uses one.
    pub scale: usize,
    /// Chain depth for blocks with a cascade.
    pub depth: usize,
}

impl Default for DemoSettings {
    fn default() -> Self {
        Self {
            shape: vec![1, 16, 8, 8],
            scale: 2,
            depth: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Block selection: dcfa | dfpn | firc3 | all (demo also accepts anup).
    pub block: String,
    /// f32 | f64.
    pub dtype: String,
    pub seeds: Vec<u64>,
    /// Replaces every case's built-in tolerance when set; >= 0.
    pub tolerance: Option<f64>,
    pub threads: usize,
    pub out: Option<String>,
    pub grid: GridConfig,
    pub bench: BenchSizes,
    pub demo: DemoSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            block: "all".to_string(),
            dtype: "f64".to_string(),
            seeds: vec![1, 2, 3, 4, 5],
            tolerance: None,
            threads: 1,
            out: None,
            grid: GridConfig::default(),
            bench: BenchSizes::default(),
            demo: DemoSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn validate(&self, allowed_blocks: &[&str]) -> Result<()> {
        if !allowed_blocks.contains(&self.block.as_str()) {
            return Err(Error::InvalidArgument {
                context: format!(
                    "block '{}' not one of {:?}",
                    self.block, allowed_blocks
                ),
            });
        }
        if self.dtype != "f32" && self.dtype != "f64" {
            return Err(Error::InvalidArgument {
                context: format!("dtype '{}' must be f32 or f64", self.dtype),
            });
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidArgument {
                context: "at least one seed is required".into(),
            });
        }
        if let Some(t) = self.tolerance {
            if t.is_nan() || t < 0.0 {
                return Err(Error::InvalidArgument {
                    context: format!("tolerance {t} must be >= 0"),
                });
            }
        }
        if self.threads == 0 {
            return Err(Error::InvalidArgument {
                context: "threads must be >= 1".into(),
            });
        }
        self.grid.validate()?;
        if self.bench.runs == 0 {
            return Err(Error::InvalidArgument {
                context: "bench runs must be >= 1".into(),
            });
        }
        if self.bench.attn_n.is_empty() || self.bench.attn_d == 0 {
            return Err(Error::InvalidArgument {
                context: "attention bench needs token counts and a head dim".into(),
            });
        }
        if self.demo.shape.len() != 4 || self.demo.shape.contains(&0) {
            return Err(Error::InvalidArgument {
                context: format!("demo shape {:?} must be a 4-extent shape", self.demo.shape),
            });
        }
        if self.demo.scale == 0 {
            return Err(Error::InvalidArgument {
                context: "demo scale must be >= 1".into(),
            });
        }
        Ok(())
    }

    /// Suites selected by the block field, in canonical order.
    pub fn selected_suites(&self) -> Vec<&'static str> {
        match self.block.as_str() {
            "dcfa" => vec!["dcfa"],
            "dfpn" => vec!["dfpn"],
            "firc3" => vec!["firc3"],
            _ => vec!["tensor-core", "autodiff", "dcfa", "dfpn", "firc3"],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        RunConfig::default().validate(&BLOCK_CHOICES).unwrap();
    }

    #[test]
    fn zero_tolerance_is_accepted_as_an_override() {
        let cfg = RunConfig {
            tolerance: Some(0.0),
            ..RunConfig::default()
        };
        cfg.validate(&BLOCK_CHOICES).unwrap();
    }

    #[test]
    fn negative_tolerance_is_rejected() {
        let cfg = RunConfig {
            tolerance: Some(-1.0),
            ..RunConfig::default()
        };
        assert!(cfg.validate(&BLOCK_CHOICES).is_err());
    }

    #[test]
    fn unknown_block_is_rejected() {
        let cfg = RunConfig {
            block: "resnet".into(),
            ..RunConfig::default()
        };
        assert!(cfg.validate(&BLOCK_CHOICES).is_err());
    }

    #[test]
    fn odd_grid_channels_are_rejected() {
        let mut cfg = RunConfig::default();
        cfg.grid.channels = vec![6];
        assert!(cfg.validate(&BLOCK_CHOICES).is_err());
        cfg.grid.channels = vec![8];
        cfg.validate(&BLOCK_CHOICES).unwrap();
    }

    #[test]
    fn unknown_json_fields_are_rejected() {
        assert!(RunConfig::from_json(r#"{"blok": "dcfa"}"#).is_err());
        let ok = RunConfig::from_json(r#"{"block": "dcfa", "seeds": [9]}"#).unwrap();
        assert_eq!(ok.seeds, vec![9]);
    }
}
