//! Input files.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use copolymer::charges::{RawCharges, DEFAULT_N_MAX};
use copolymer::phasediag::Grid;

fn zero() -> Vec<f64> {
    vec![0.0]
}

/// Charge specification. Omitted charge arrays default to [0].
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChargeSpec {
    #[serde(default = "zero")]
    pub omega_plus: Vec<f64>,
    #[serde(default = "zero")]
    pub omega_minus: Vec<f64>,
    #[serde(default = "zero")]
    pub omega_zero: Vec<f64>,
    #[serde(default = "zero")]
    pub omega_zero_tilde: Vec<f64>,
    pub p: f64,
    pub n_max: Option<usize>,
}

impl ChargeSpec {
    pub fn raw(&self) -> RawCharges {
        RawCharges {
            omega_plus: self.omega_plus.clone(),
            omega_minus: self.omega_minus.clone(),
            omega_zero: self.omega_zero.clone(),
            omega_zero_tilde: self.omega_zero_tilde.clone(),
        }
    }

    pub fn n_max(&self, flag: Option<usize>) -> usize {
        flag.or(self.n_max).unwrap_or(DEFAULT_N_MAX)
    }
}

/// Phase-diagram configuration: a centered periodic omega and the grids.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseSpec {
    pub omega: Vec<f64>,
    pub p: f64,
    pub n_max: Option<usize>,
    pub beta_grid: Option<String>,
    pub h_grid: Option<String>,
}

impl PhaseSpec {
    pub fn grid(&self, flag: Option<Grid>, from_file: &Option<String>, name: &str) -> Result<Grid> {
        match (flag, from_file) {
            (Some(g), _) => Ok(g),
            (None, Some(s)) => Ok(s.parse::<Grid>()?),
            (None, None) => bail!("missing {name}: pass --{name} or set it in the input file"),
        }
    }
}

pub fn read<T: for<'de> Deserialize<'de>>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else { bail!("--input is required") };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}
