//! Run configuration: parsing, validation and command-line overrides.

use std::path::{Path, PathBuf};

use absrate::abstraction::{TransitionMode, DEFAULT_CELL_LIMIT};
use absrate::bounds::{default_s_grid, CMode, Order, UnitLipschitzK};
use absrate::dynamics::{SystemDef, SystemSpec};
use absrate::experiments::Nonlinear3dConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const CONFIG_VERSION: u32 = 1;

/// The JSON-schema document describing [`RunConfig`].
pub const RUN_CONFIG_SCHEMA: &str = include_str!("../schema/run-config.v1.schema.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "config_version")]
    pub version: u32,
    pub system: SystemSpec,
    /// Horizon `l`.
    #[serde(default = "one")]
    pub l: usize,
    /// Cells per axis of the uniform partition.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<usize>>,
    #[serde(default)]
    pub transition_mode: TransitionMode,
    #[serde(default = "cell_limit")]
    pub cell_limit: usize,
    #[serde(default = "samples")]
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_s_grid")]
    pub s_grid: Vec<Order>,
    /// Rates in nats; mutually exclusive with `cells`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_grid: Option<Vec<f64>>,
    /// Partition sizes, converted to rates `log |Y|`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cells: Option<Vec<usize>>,
    #[serde(default)]
    pub c_mode: CMode,
    /// Lipschitz constant for systems without a known one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lipschitz: Option<f64>,
    /// Distortion threshold for the rate form of the bounds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_distortion: Option<f64>,
    #[serde(default)]
    pub relaxed: bool,
    #[serde(default)]
    pub unit_lipschitz_k: UnitLipschitzK,
    /// Abstraction artifact consumed by `distortion`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abstraction: Option<PathBuf>,
    /// Report entropies in bits instead of nats.
    #[serde(default)]
    pub bits: bool,
}

fn config_version() -> u32 {
    CONFIG_VERSION
}

fn one() -> usize {
    1
}

fn cell_limit() -> usize {
    DEFAULT_CELL_LIMIT
}

fn samples() -> usize {
    10_000
}

/// Parameters of `reproduce doubling`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DoublingConfig {
    #[serde(default = "doubling_ls")]
    pub l_grid: Vec<usize>,
    /// Segment refinements `k` for the Monte Carlo achievability check.
    #[serde(default = "doubling_ks")]
    pub k_grid: Vec<usize>,
    /// Refinements for the closed-form ratio table.
    #[serde(default = "ratio_ks")]
    pub ratio_k_grid: Vec<usize>,
    #[serde(default = "samples")]
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
}

fn doubling_ls() -> Vec<usize> {
    (1..=5).collect()
}

fn doubling_ks() -> Vec<usize> {
    vec![1, 2, 4]
}

fn ratio_ks() -> Vec<usize> {
    (1..=64).collect()
}

impl Default for DoublingConfig {
    fn default() -> Self {
        Self { l_grid: doubling_ls(), k_grid: doubling_ks(), ratio_k_grid: ratio_ks(), samples: samples(), seed: 0 }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub samples: Option<usize>,
    pub high_rate_c: bool,
}

/// Deserializes `text`, naming the offending field on failure.
pub fn parse_json<T: DeserializeOwned>(text: &str, what: &str) -> Result<T, CliError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if path.is_empty() || path == "." {
            CliError::Config(format!("{what}: {inner}"))
        } else {
            CliError::Config(format!("{what}: field `{path}`: {inner}"))
        }
    })
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))
}

impl RunConfig {
    pub fn load(path: &Path, ov: Overrides) -> Result<Self, CliError> {
        let mut cfg: RunConfig = parse_json(&read_text(path)?, &path.display().to_string())?;
        cfg.apply(ov);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, ov: Overrides) {
        if let Some(seed) = ov.seed {
            self.seed = seed;
        }
        if let Some(samples) = ov.samples {
            self.samples = samples;
        }
        if ov.high_rate_c {
            self.c_mode = CMode::HighRate;
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |field: &str, msg: String| Err(CliError::Config(format!("field `{field}`: {msg}")));
        if self.version != CONFIG_VERSION {
            return bad("version", format!("unsupported config version {}, expected {CONFIG_VERSION}", self.version));
        }
        if self.l == 0 {
            return bad("l", "horizon must be ≥ 1".into());
        }
        if self.samples < 2 {
            return bad("samples", "at least 2 samples are required".into());
        }
        if self.s_grid.is_empty() {
            return bad("s_grid", "must not be empty".into());
        }
        if let Some(g) = &self.grid {
            if g.is_empty() || g.contains(&0) {
                return bad("grid", "every axis needs at least one cell".into());
            }
        }
        match (&self.r_grid, &self.cells) {
            (Some(_), Some(_)) => return bad("r_grid", "give either `r_grid` or `cells`, not both".into()),
            (Some(r), None) if r.is_empty() || r.iter().any(|v| !(v.is_finite() && *v > 0.0)) => {
                return bad("r_grid", "rates must be finite and positive".into())
            }
            (None, Some(c)) if c.is_empty() || c.iter().any(|&v| v < 2) => {
                return bad("cells", "partition sizes must be ≥ 2".into())
            }
            _ => {}
        }
        if let Some(d) = self.target_distortion {
            if !(d.is_finite() && d > 0.0) {
                return bad("target_distortion", "must be finite and positive".into());
            }
        }
        if let Some(l) = self.lipschitz {
            if !(l.is_finite() && l >= 0.0) {
                return bad("lipschitz", "must be finite and ≥ 0".into());
            }
        }
        SystemDef::from_spec(&self.system).map_err(|e| CliError::Config(format!("field `system`: {e}")))?;
        Ok(())
    }

    pub fn system(&self) -> Result<SystemDef, CliError> {
        SystemDef::from_spec(&self.system).map_err(|e| CliError::Config(format!("field `system`: {e}")))
    }

    /// Rates of the sweep: `r_grid`, `log cells`, `log |grid|`, or `log 2^j` for `j = 1..12`.
    pub fn rates(&self) -> Vec<f64> {
        if let Some(r) = &self.r_grid {
            let mut r = r.clone();
            r.sort_by(f64::total_cmp);
            r.dedup();
            return r;
        }
        let mut cells: Vec<usize> = match (&self.cells, &self.grid) {
            (Some(c), _) => c.clone(),
            (None, Some(g)) => vec![g.iter().product()],
            (None, None) => (1..=12).map(|j| 1usize << j).collect(),
        };
        cells.sort_unstable();
        cells.dedup();
        cells.into_iter().map(|c| (c as f64).ln()).collect()
    }

    pub fn finite_orders(&self) -> Vec<f64> {
        self.s_grid.iter().filter(|s| !s.is_infinite()).map(|s| s.0).collect()
    }
}

impl DoublingConfig {
    pub fn load(path: Option<&Path>, ov: Overrides) -> Result<Self, CliError> {
        let mut cfg = match path {
            Some(p) => parse_json(&read_text(p)?, &p.display().to_string())?,
            None => DoublingConfig::default(),
        };
        if let Some(seed) = ov.seed {
            cfg.seed = seed;
        }
        if let Some(samples) = ov.samples {
            cfg.samples = samples;
        }
        if cfg.l_grid.is_empty() || cfg.l_grid.iter().any(|&l| l == 0 || l > 20) {
            return Err(CliError::Config("field `l_grid`: horizons must lie in 1..=20".into()));
        }
        if cfg.k_grid.iter().chain(&cfg.ratio_k_grid).any(|&k| k == 0) {
            return Err(CliError::Config("field `k_grid`: refinements must be ≥ 1".into()));
        }
        if cfg.samples < 2 {
            return Err(CliError::Config("field `samples`: at least 2 samples are required".into()));
        }
        Ok(cfg)
    }
}

pub fn load_nonlinear3d(path: Option<&Path>, ov: Overrides) -> Result<Nonlinear3dConfig, CliError> {
    let mut cfg: Nonlinear3dConfig = match path {
        Some(p) => parse_json(&read_text(p)?, &p.display().to_string())?,
        None => Nonlinear3dConfig::default(),
    };
    if let Some(seed) = ov.seed {
        cfg.seed = seed;
    }
    if let Some(samples) = ov.samples {
        cfg.samples = samples;
    }
    if cfg.samples < 2 || cfg.entropy_samples < 2 {
        return Err(CliError::Config("field `samples`: at least 2 samples are required".into()));
    }
    if cfg.n_grid.contains(&0) || cfg.l_grid.contains(&0) {
        return Err(CliError::Config("field `n_grid`: grid sizes and horizons must be ≥ 1".into()));
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg: RunConfig = parse_json(r#"{"system": {"kind": "doubling"}, "l": 5}"#, "cfg").unwrap();
        assert_eq!(cfg.samples, 10_000);
        assert_eq!(cfg.s_grid.len(), 8);
        assert_eq!(cfg.rates().len(), 12);
        cfg.validate().unwrap();
    }

    #[test]
    fn errors_name_the_field() {
        let err = parse_json::<RunConfig>(r#"{"system": {"kind": "doubling"}, "l": "five"}"#, "cfg").unwrap_err();
        assert!(err.to_string().contains("`l`"), "{err}");
        let err = parse_json::<RunConfig>(r#"{"system": {"kind": "doubling"}, "horizon": 3}"#, "cfg").unwrap_err();
        assert!(err.to_string().contains("horizon"), "{err}");
        let err = parse_json::<RunConfig>(r#"{"system": {"kind": "lti", "a": [[0.5]], "b": 1}}"#, "cfg").unwrap_err();
        assert!(err.to_string().contains("system"), "{err}");
        let cfg: RunConfig =
            parse_json(r#"{"system": {"kind": "doubling"}, "r_grid": [1], "cells": [4]}"#, "c").unwrap();
        assert!(cfg.validate().unwrap_err().to_string().contains("r_grid"));
    }

    #[test]
    fn overrides_apply() {
        let mut cfg: RunConfig = parse_json(r#"{"system": {"kind": "square"}}"#, "cfg").unwrap();
        cfg.apply(Overrides { seed: Some(9), samples: Some(50), high_rate_c: true });
        assert_eq!((cfg.seed, cfg.samples, cfg.c_mode), (9, 50, CMode::HighRate));
    }

    #[test]
    fn schema_lists_every_field() {
        let schema: serde_json::Value = serde_json::from_str(RUN_CONFIG_SCHEMA).unwrap();
        let props = schema["properties"].as_object().unwrap();
        let cfg: RunConfig = parse_json(
            r#"{"system": {"kind": "doubling"}, "grid": [4], "r_grid": [1], "lipschitz": 1,
                "target_distortion": 0.1, "abstraction": "a.json"}"#,
            "cfg",
        )
        .unwrap();
        for key in serde_json::to_value(&cfg).unwrap().as_object().unwrap().keys() {
            assert!(props.contains_key(key), "schema lacks `{key}`");
        }
        assert!(props.contains_key("cells"));
    }
}
