//! Solver configuration and its flat `key = value` file format.
//!
//! ```text
//! # comments and blank lines are ignored
//! epsilon = 0.03
//! lambda0 = 4
//! ```
//!
//! Keys are the field names of [`SsdsConfig`]. Unknown or repeated keys are
//! errors; missing keys keep their defaults.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, Error, Result};
use crate::types::{BudgetConstraint, NormOrder, StepSchedule, SubgradientRule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsdsConfig {
    /// Perturbation budget radius.
    pub epsilon: f64,
    /// Learning rate for the `w` updates.
    pub lr: f64,
    /// Exponential step-size decay rate `p`.
    pub decay_p: f64,
    /// Scale of the `v·sgn(u)` penalty in the `u` update.
    pub c1: f64,
    /// Scale of the `λ` update.
    pub c2: f64,
    pub lambda0: f64,
    pub v0: f64,
    pub t0: f64,
    /// Initial step size of the `t`, `λ`, `u`, `v` dynamics.
    pub alpha0: f64,
    /// Extra multiplier on the `u` step (1 leaves the algorithm unchanged).
    pub eta: f64,
    /// Use `v ← v + α·λ·h(u)` instead of `v ← v + α·h(u)`.
    pub include_lambda_in_v_update: bool,
    pub seed: u64,
    pub batch_size: usize,
    /// Write a per-sample `‖u‖∞` histogram every this many epochs.
    pub histogram_every: u64,
    /// Optional hard ceiling on `λ` (ablation only).
    pub lambda_ceiling: Option<f64>,
    pub norm_order: NormOrder,
    pub subgradient: SubgradientRule,
}

impl Default for SsdsConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.03,
            lr: 0.001,
            decay_p: 0.001,
            c1: 0.01,
            c2: 0.01,
            lambda0: 4.0,
            v0: 1.0,
            t0: 1.0,
            alpha0: 2.0,
            eta: 1.0,
            include_lambda_in_v_update: false,
            seed: 0,
            batch_size: 50,
            histogram_every: 30,
            lambda_ceiling: None,
            norm_order: NormOrder::Linf,
            subgradient: SubgradientRule::Sign,
        }
    }
}

const KEYS: &[&str] = &[
    "epsilon",
    "lr",
    "decay_p",
    "c1",
    "c2",
    "lambda0",
    "v0",
    "t0",
    "alpha0",
    "eta",
    "include_lambda_in_v_update",
    "seed",
    "batch_size",
    "histogram_every",
    "lambda_ceiling",
    "norm_order",
    "subgradient",
];

impl SsdsConfig {
    pub fn budget(&self) -> BudgetConstraint {
        BudgetConstraint {
            norm_order: self.norm_order,
            epsilon: self.epsilon,
        }
    }

    pub fn schedule(&self) -> StepSchedule {
        StepSchedule::ExponentialDecay {
            alpha0: self.alpha0,
            decay_p: self.decay_p,
        }
    }

    pub fn validate(&self) -> std::result::Result<(), ConfigError> {
        let positive = |key: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(ConfigError::OutOfRange {
                    key,
                    requirement: "finite and > 0",
                })
            }
        };
        let nonneg = |key: &'static str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(ConfigError::OutOfRange {
                    key,
                    requirement: "finite and >= 0",
                })
            }
        };
        positive("epsilon", self.epsilon)?;
        positive("lr", self.lr)?;
        nonneg("decay_p", self.decay_p)?;
        nonneg("c1", self.c1)?;
        nonneg("c2", self.c2)?;
        nonneg("lambda0", self.lambda0)?;
        nonneg("v0", self.v0)?;
        positive("alpha0", self.alpha0)?;
        positive("eta", self.eta)?;
        if !self.t0.is_finite() {
            return Err(ConfigError::OutOfRange {
                key: "t0",
                requirement: "finite",
            });
        }
        if self.batch_size == 0 {
            return Err(ConfigError::OutOfRange {
                key: "batch_size",
                requirement: ">= 1",
            });
        }
        if self.histogram_every == 0 {
            return Err(ConfigError::OutOfRange {
                key: "histogram_every",
                requirement: ">= 1",
            });
        }
        if let Some(c) = self.lambda_ceiling {
            positive("lambda_ceiling", c)?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> std::result::Result<Self, ConfigError> {
        let mut cfg = SsdsConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or(ConfigError::Syntax { line: line_no })?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(ConfigError::UnknownKey {
                    line: line_no,
                    key: key.to_string(),
                });
            }
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::DuplicateKey {
                    line: line_no,
                    key: key.to_string(),
                });
            }
            cfg.set(key, value).map_err(|_| ConfigError::InvalidValue {
                line: line_no,
                key: key.to_string(),
                value: value.to_string(),
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::parse(&text)?)
    }

    fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), ()> {
        fn num<T: FromStr>(v: &str) -> std::result::Result<T, ()> {
            v.parse().map_err(|_| ())
        }
        match key {
            "epsilon" => self.epsilon = num(value)?,
            "lr" => self.lr = num(value)?,
            "decay_p" => self.decay_p = num(value)?,
            "c1" => self.c1 = num(value)?,
            "c2" => self.c2 = num(value)?,
            "lambda0" => self.lambda0 = num(value)?,
            "v0" => self.v0 = num(value)?,
            "t0" => self.t0 = num(value)?,
            "alpha0" => self.alpha0 = num(value)?,
            "eta" => self.eta = num(value)?,
            "include_lambda_in_v_update" => self.include_lambda_in_v_update = num(value)?,
            "seed" => self.seed = num(value)?,
            "batch_size" => self.batch_size = num(value)?,
            "histogram_every" => self.histogram_every = num(value)?,
            "lambda_ceiling" => {
                self.lambda_ceiling = match value {
                    "none" => None,
                    v => Some(num(v)?),
                }
            }
            "norm_order" => self.norm_order = value.parse().map_err(|_| ())?,
            "subgradient" => {
                self.subgradient = match value {
                    "sign" => SubgradientRule::Sign,
                    "exact" => SubgradientRule::Exact,
                    _ => return Err(()),
                }
            }
            _ => return Err(()),
        }
        Ok(())
    }

    /// Serializes every key in a fixed order. Floats use Rust's shortest
    /// round-trip representation, so `parse(to_kv())` is lossless.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("epsilon", format!("{:?}", self.epsilon));
        put("lr", format!("{:?}", self.lr));
        put("decay_p", format!("{:?}", self.decay_p));
        put("c1", format!("{:?}", self.c1));
        put("c2", format!("{:?}", self.c2));
        put("lambda0", format!("{:?}", self.lambda0));
        put("v0", format!("{:?}", self.v0));
        put("t0", format!("{:?}", self.t0));
        put("alpha0", format!("{:?}", self.alpha0));
        put("eta", format!("{:?}", self.eta));
        put(
            "include_lambda_in_v_update",
            self.include_lambda_in_v_update.to_string(),
        );
        put("seed", self.seed.to_string());
        put("batch_size", self.batch_size.to_string());
        put("histogram_every", self.histogram_every.to_string());
        put(
            "lambda_ceiling",
            match self.lambda_ceiling {
                None => "none".to_string(),
                Some(c) => format!("{c:?}"),
            },
        );
        put("norm_order", self.norm_order.to_string());
        put(
            "subgradient",
            match self.subgradient {
                SubgradientRule::Sign => "sign",
                SubgradientRule::Exact => "exact",
            }
            .to_string(),
        );
        s
    }
}
