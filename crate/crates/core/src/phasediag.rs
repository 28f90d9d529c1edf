//! The (beta, h) family built on a centered periodic sequence omega:
//! omega_plus = omega + h, omega_minus = -(omega + h), omega_zero = -beta,
//! omega_zero_tilde = 0.

use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::charges::{b_matrix, m_kernel, normalize, CycleCharges, KernelSet, RawCharges, ZERO_TOL};
use crate::error::{Error, Result};
use crate::partition::{Boundary, PartitionTable};
use crate::sampler::sample_finite_skeleton;
use crate::spectral::{classify_delta, free_energy, spectral_at, Regime, CLASSIFICATION_TOL};
use crate::walk::{first_return_law, WalkLaw};

/// Horizon of the Monte Carlo order parameter.
pub const DEFAULT_MC_N: usize = 4000;

/// Evenly spaced values `start, start + step, ..., end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub start: f64,
    pub end: f64,
    pub step: f64,
}

impl Grid {
    pub fn len(&self) -> usize {
        ((self.end - self.start) / self.step + 1e-9).floor() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.len())
            .map(|i| {
                let v = self.start + i as f64 * self.step;
                // keep exact zeros exact
                if v.abs() < 1e-9 * self.step {
                    0.0
                } else {
                    v
                }
            })
            .collect()
    }
}

impl FromStr for Grid {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::InvalidParameter(format!("grid must read start:end:step, got '{s}'"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let v: Vec<f64> = parts.iter().map(|p| p.trim().parse::<f64>()).collect::<std::result::Result<_, _>>().map_err(|_| bad())?;
        let g = Grid { start: v[0], end: v[1], step: v[2] };
        if !v.iter().all(|x| x.is_finite()) || g.step <= 0.0 || g.end < g.start {
            return Err(bad());
        }
        Ok(g)
    }
}

fn check_omega(omega: &[f64]) -> Result<()> {
    if omega.is_empty() || omega.iter().any(|w| !w.is_finite()) {
        return Err(Error::InvalidParameter("omega must be a non-empty finite sequence".into()));
    }
    let sum: f64 = omega.iter().sum();
    if sum.abs() > ZERO_TOL {
        return Err(Error::InvalidParameter(format!("omega must sum to zero over a period, sum = {sum:e}")));
    }
    Ok(())
}

pub fn family_raw(omega: &[f64], h: f64, beta: f64) -> Result<RawCharges> {
    check_omega(omega)?;
    Ok(RawCharges {
        omega_plus: omega.iter().map(|w| w + h).collect(),
        omega_minus: omega.iter().map(|w| -(w + h)).collect(),
        omega_zero: vec![-beta],
        omega_zero_tilde: vec![0.0],
    })
}

/// Normalized charges of the (beta, h) point. The raw free energy is the
/// gauged one plus `gauge_mean()`, which equals |h|.
pub fn to_charges(omega: &[f64], h: f64, beta: f64) -> Result<CycleCharges> {
    normalize(&family_raw(omega, h, beta)?)
}

/// One omega with a shared walk law.
#[derive(Debug, Clone)]
pub struct Family {
    pub omega: Vec<f64>,
    walk: Arc<WalkLaw>,
    n_max: usize,
}

impl Family {
    pub fn new(omega: &[f64], p: f64, n_max: usize) -> Result<Self> {
        check_omega(omega)?;
        Ok(Family { omega: omega.to_vec(), walk: Arc::new(first_return_law(p, n_max)?), n_max })
    }

    pub fn p(&self) -> f64 {
        self.walk.p()
    }

    pub fn kernels(&self, h: f64, beta: f64) -> Result<KernelSet> {
        let c = to_charges(&self.omega, h, beta)?;
        let mut ks = m_kernel(&c, self.walk.clone(), self.n_max)?;
        if !ks.tail_corrected {
            b_matrix(&mut ks);
        }
        Ok(ks)
    }

    pub fn delta(&self, h: f64, beta: f64) -> Result<f64> {
        Ok(spectral_at(&self.kernels(h, beta)?, 0.0)?.z)
    }

    /// log delta(0) at h = 0, using delta(beta) = e^{-beta} delta(0).
    pub fn beta_c(&self) -> Result<f64> {
        Ok(self.delta(0.0, 0.0)?.ln())
    }

    /// Critical point located by bisection on the regime classification alone.
    pub fn beta_c_bisection(&self, tol: f64) -> Result<f64> {
        let localized = |beta: f64| -> Result<bool> {
            Ok(classify_delta(self.delta(0.0, beta)?, CLASSIFICATION_TOL) == Regime::Localized)
        };
        if !localized(0.0)? {
            return Ok(0.0);
        }
        let (mut lo, mut hi) = (0.0, 1.0);
        while localized(hi)? {
            lo = hi;
            hi *= 2.0;
        }
        while hi - lo > tol {
            let mid = 0.5 * (lo + hi);
            if localized(mid)? {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

/// Monte Carlo settings for the order parameter.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct McConfig {
    pub n: usize,
    pub samples: usize,
    pub seed: u64,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig { n: DEFAULT_MC_N, samples: 200, seed: 0 }
    }
}

/// Sample mean of (1/N) sum_n sign(S_n) under the free-boundary measure.
pub fn rho_mc(ks: &KernelSet, mc: &McConfig) -> Result<f64> {
    let table = PartitionTable::build(ks, mc.n)?;
    let mut total = 0.0;
    for i in 0..mc.samples {
        total += sample_finite_skeleton(ks, &table, Boundary::Free, mc.n, mc.seed, i as u64)?.mean_sign();
    }
    Ok(total / mc.samples.max(1) as f64)
}

#[derive(Debug, Clone, Serialize)]
pub struct PhasePoint {
    pub beta: f64,
    pub h: f64,
    pub delta: f64,
    pub f_gauged: f64,
    /// Free energy of the raw Hamiltonian.
    pub f_raw: f64,
    /// Central difference of f in h; absent at h = 0.
    pub rho_fd: Option<f64>,
    /// One-sided differences, reported at h = 0 only.
    pub rho_left: Option<f64>,
    pub rho_right: Option<f64>,
    pub rho_mc: Option<f64>,
    pub regime: Regime,
    /// delta within 1e-6 of 1.
    pub near_critical: bool,
}

struct Raw {
    delta: f64,
    f_gauged: f64,
    f_raw: f64,
    regime: Regime,
}

fn point(family: &Family, h: f64, beta: f64) -> Result<Raw> {
    let ks = family.kernels(h, beta)?;
    let rep = free_energy(&ks)?;
    Ok(Raw { delta: rep.delta, f_gauged: rep.f, f_raw: rep.raw_f, regime: rep.regime })
}

/// Evaluates the grid. Rows are ordered by beta, then h. The h grid is padded
/// by one step on each side so that every point gets a central difference.
pub fn scan(family: &Family, betas: &[f64], hs: &[f64], mc: Option<&McConfig>) -> Result<Vec<PhasePoint>> {
    if hs.is_empty() || betas.is_empty() {
        return Ok(Vec::new());
    }
    let dh = if hs.len() > 1 { hs[1] - hs[0] } else { 1e-3 };
    let mut padded = vec![hs[0] - dh];
    padded.extend_from_slice(hs);
    padded.push(hs[hs.len() - 1] + dh);
    let w = padded.len();

    let jobs: Vec<(f64, f64)> = betas.iter().flat_map(|&b| padded.iter().map(move |&h| (b, h))).collect();
    let raw: Vec<Raw> = jobs.par_iter().map(|&(b, h)| point(family, h, b)).collect::<Result<_>>()?;

    let mut out = Vec::with_capacity(betas.len() * hs.len());
    for (i, &beta) in betas.iter().enumerate() {
        for j in 1..w - 1 {
            let (l, m, r) = (&raw[i * w + j - 1], &raw[i * w + j], &raw[i * w + j + 1]);
            let h = padded[j];
            let at_zero = h == 0.0;
            out.push(PhasePoint {
                beta,
                h,
                delta: m.delta,
                f_gauged: m.f_gauged,
                f_raw: m.f_raw,
                rho_fd: (!at_zero).then(|| (r.f_raw - l.f_raw) / (padded[j + 1] - padded[j - 1])),
                rho_left: at_zero.then(|| (m.f_raw - l.f_raw) / (h - padded[j - 1])),
                rho_right: at_zero.then(|| (r.f_raw - m.f_raw) / (padded[j + 1] - h)),
                rho_mc: None,
                regime: m.regime,
                near_critical: (m.delta - 1.0).abs() < 1e-6,
            });
        }
    }
    if let Some(mc) = mc {
        let rhos: Vec<f64> = out
            .par_iter()
            .map(|pt| rho_mc(&family.kernels(pt.h, pt.beta)?, mc))
            .collect::<Result<_>>()?;
        for (pt, rho) in out.iter_mut().zip(rhos) {
            pt.rho_mc = Some(rho);
        }
    }
    Ok(out)
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x:.12e}"))
}

/// CSV rows in the documented column order.
pub fn write_csv<W: std::io::Write>(points: &[PhasePoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::InvalidParameter(format!("csv output failed: {e}"));
    w.write_record(["beta", "h", "delta", "F_gauged", "f_raw", "rho_fd", "rho_mc", "regime"]).map_err(io)?;
    for p in points {
        w.write_record([
            format!("{:.12e}", p.beta),
            format!("{:.12e}", p.h),
            format!("{:.12e}", p.delta),
            format!("{:.12e}", p.f_gauged),
            format!("{:.12e}", p.f_raw),
            opt(p.rho_fd),
            opt(p.rho_mc),
            p.regime.name().to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::InvalidParameter(format!("csv output failed: {e}")))?;
    Ok(())
}
