use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use rayon::prelude::*;
use serde::Serialize;

use copolymer::charges::{build, in_p_less, KernelSet};
use copolymer::limits::{asymptotic_constants, defective_kernel, gibbs_vectors, SemiMarkovKernel};
use copolymer::partition::{Boundary, PartitionTable};
use copolymer::phasediag::{scan, write_csv, Family, Grid, McConfig};
use copolymer::rows;
use copolymer::sampler::{renewal_limits, sample_finite, sample_infinite, summarize, PathSample};
use copolymer::spectral::{free_energy_with_tol, gamma_kernel, FreeEnergyReport, Regime, DEFAULT_N_CUT};
use copolymer::verify::{brute_force_suite, identity_suite, Check};

use crate::spec::{read, ChargeSpec, PhaseSpec};
use crate::Common;

/// Raised when a self-check fails.
#[derive(Debug)]
pub struct Failed(pub usize);

impl std::fmt::Display for Failed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} check(s) failed", self.0)
    }
}

impl std::error::Error for Failed {}

fn target(prefix: &Path, suffix: &str, ext: &str) -> PathBuf {
    let mut name = prefix.as_os_str().to_owned();
    if prefix.extension().is_none_or(|e| e != ext) || !suffix.is_empty() {
        name.push(suffix);
        name.push(".");
        name.push(ext);
    }
    PathBuf::from(name)
}

/// Writes to `<prefix><suffix>.<ext>`, or to stdout without a prefix.
fn emit(common: &Common, suffix: &str, ext: &str, bytes: &[u8]) -> Result<()> {
    match &common.output {
        Some(prefix) => std::fs::write(target(prefix, suffix, ext), bytes)?,
        None => std::io::stdout().write_all(bytes)?,
    }
    Ok(())
}

fn json<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(v)?;
    out.push(b'\n');
    Ok(out)
}

fn load(common: &Common) -> Result<(KernelSet, FreeEnergyReport)> {
    let spec: ChargeSpec = read(common.input.as_deref())?;
    let ks = build(&spec.raw(), spec.p, spec.n_max(common.n_max))?;
    let rep = free_energy_with_tol(&ks, common.tol)?;
    for w in &rep.warnings {
        log::warn!("{w}");
    }
    Ok((ks, rep))
}

pub fn free_energy(common: &Common) -> Result<()> {
    let (_, rep) = load(common)?;
    emit(common, "", "json", &json(&rep)?)
}

#[derive(Serialize)]
struct Classification {
    regime: Regime,
    delta: f64,
    tol: f64,
    h: f64,
    flipped: bool,
    sigma_zero: bool,
    /// Strictly delocalized with h = 0 and a non-trivial Sigma.
    p_less: bool,
}

pub fn classify(common: &Common) -> Result<()> {
    let (ks, rep) = load(common)?;
    let c = &ks.charges;
    let out = Classification {
        regime: rep.regime,
        delta: rep.delta,
        tol: rep.tol,
        h: c.h,
        flipped: c.flipped,
        sigma_zero: c.sigma_is_zero(),
        p_less: in_p_less(c, rep.delta, rep.tol),
    };
    emit(common, "", "json", &json(&out)?)
}

pub fn partition(common: &Common, n: usize, every: usize) -> Result<()> {
    if n == 0 || every == 0 {
        bail!("--N and --every must be positive");
    }
    let (ks, _) = load(common)?;
    let table = PartitionTable::build(&ks, n)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["N", "logZc", "logZf", "logZplus", "logZminus"])?;
    let mut ks_list: Vec<usize> = (every..=n).step_by(every).collect();
    if ks_list.last() != Some(&n) {
        ks_list.push(n);
    }
    for k in ks_list {
        w.write_record([
            k.to_string(),
            format!("{:.15e}", table.log_zc(0, k)),
            format!("{:.15e}", table.log_zf(0, k)),
            format!("{:.15e}", table.log_zplus(0, k)),
            format!("{:.15e}", table.log_zminus(0, k)),
        ])?;
    }
    emit(common, "", "csv", &w.into_inner()?)
}

#[derive(Serialize)]
struct Asymptotics {
    regime: Regime,
    delta: f64,
    f: f64,
    n: usize,
    log_zc: f64,
    log_zf: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    delocalized: Option<Delocalized>,
    #[serde(skip_serializing_if = "Option::is_none")]
    localized: Option<Localized>,
    /// Critical case: N^{1/2} Z^c_N and Z^f_N, whose limits are not tabulated.
    #[serde(skip_serializing_if = "Option::is_none")]
    critical: Option<[f64; 2]>,
}

#[derive(Serialize)]
struct Delocalized {
    c_k: f64,
    lambda_c: Vec<Vec<f64>>,
    lambda_f: Vec<Vec<f64>>,
    mu_c: Vec<Vec<f64>>,
    mu_f: Vec<Vec<f64>>,
    /// N^{3/2} Z^c_N / Lambda^c_{0,[N]}
    ratio_c: f64,
    /// N^{1/2} Z^f_N / Lambda^f_{0,[N]}
    ratio_f: f64,
}

#[derive(Serialize)]
struct Localized {
    xi: Vec<f64>,
    /// Limits of P(N in tau) along each class under Gamma(F).
    renewal_limits: Vec<f64>,
    /// e^{-FN} Z^c_N divided by its predicted limit along [N].
    ratio_c: f64,
}

pub fn asymptotics(common: &Common, n: usize) -> Result<()> {
    let (ks, rep) = load(common)?;
    let table = PartitionTable::build(&ks, n)?;
    let t = ks.t();
    let nf = n as f64;
    let mut out = Asymptotics {
        regime: rep.regime,
        delta: rep.delta,
        f: rep.f,
        n,
        log_zc: table.log_zc(0, n),
        log_zf: table.log_zf(0, n),
        delocalized: None,
        localized: None,
        critical: None,
    };
    match rep.regime {
        Regime::StrictlyDelocalized => {
            let ac = asymptotic_constants(&ks, &rep)?;
            let eta = n % t;
            out.delocalized = Some(Delocalized {
                c_k: ac.c_k,
                lambda_c: rows(&ac.lambda_c),
                lambda_f: rows(&ac.lambda_f),
                mu_c: rows(&ac.mu_c),
                mu_f: rows(&ac.mu_f),
                ratio_c: table.log_zc(0, n).exp() * nf.powf(1.5) / ac.lambda_c[(0, eta)],
                ratio_f: table.log_zf(0, n).exp() * nf.sqrt() / ac.lambda_f[(0, eta)],
            });
        }
        Regime::Localized => {
            let kernel = gamma_kernel(&ks, &rep, DEFAULT_N_CUT)?;
            let limits = renewal_limits(&kernel)?;
            let xi = rep.xi_at_f.clone();
            let predicted = xi[0] / xi[n % t] * limits[n % t];
            out.localized = Some(Localized {
                ratio_c: (table.log_zc(0, n) - rep.f * nf).exp() / predicted,
                xi,
                renewal_limits: limits,
            });
        }
        Regime::Critical => {
            out.critical = Some([table.log_zc(0, n).exp() * nf.sqrt(), table.log_zf(0, n).exp()]);
        }
    }
    emit(common, "", "json", &json(&out)?)
}

#[allow(clippy::too_many_arguments)]
pub fn sample(
    common: &Common,
    n: usize,
    boundary: Boundary,
    samples: usize,
    infinite: bool,
    eta: usize,
    n_cut: usize,
) -> Result<()> {
    if n == 0 || samples == 0 {
        bail!("--N and --samples must be positive");
    }
    let (ks, rep) = load(common)?;
    let seed = common.seed;
    let paths: Vec<PathSample> = if infinite {
        if eta >= ks.t() {
            bail!("--eta must be below the period {}", ks.t());
        }
        let (kernel, entry) = match rep.regime {
            Regime::StrictlyDelocalized => {
                let ac = asymptotic_constants(&ks, &rep)?;
                let gd = gibbs_vectors(&ks, &ac, &rep)?;
                (defective_kernel(&ks, &ac, eta, boundary, n_cut), Some(gd.entry(eta, boundary).clone()))
            }
            _ => (gamma_kernel(&ks, &rep, n_cut)?, None),
        };
        (0..samples)
            .into_par_iter()
            .map(|i| sample_infinite(&ks, &kernel, entry.as_ref(), n, seed, i as u64))
            .collect::<copolymer::Result<_>>()?
    } else {
        let table = PartitionTable::build(&ks, n)?;
        (0..samples)
            .into_par_iter()
            .map(|i| sample_finite(&ks, &table, boundary, n, seed, i as u64))
            .collect::<copolymer::Result<_>>()?
    };
    let summary = summarize(&paths);
    if common.output.is_some() {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["sample", "n", "S_n"])?;
        for p in &paths {
            for (k, s) in p.steps.iter().enumerate() {
                w.write_record([p.index.to_string(), k.to_string(), s.to_string()])?;
            }
        }
        emit(common, "_paths", "csv", &w.into_inner()?)?;
        emit(common, "_summary", "json", &json(&summary)?)
    } else {
        emit(common, "", "json", &json(&summary)?)
    }
}

#[derive(Serialize)]
struct KernelReport {
    eta: Option<usize>,
    boundary: Option<Boundary>,
    row_sums: Vec<f64>,
    escape: Vec<f64>,
    /// Mass of holding times beyond the table, per class.
    beyond: Vec<f64>,
}

fn kernel_report(k: &SemiMarkovKernel, eta: Option<usize>, boundary: Option<Boundary>) -> KernelReport {
    KernelReport {
        eta,
        boundary,
        row_sums: (0..k.t).map(|a| k.row_sum(a)).collect(),
        escape: k.escape.clone(),
        beyond: (0..k.t).map(|a| k.beyond(a)).collect(),
    }
}

#[derive(Serialize)]
struct LimitsReport {
    regime: Regime,
    delta: f64,
    f: f64,
    kernels: Vec<KernelReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    renewal_limits: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda_c: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda_f: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gibbs: Option<copolymer::limits::GibbsDecomposition>,
}

pub fn limits(common: &Common, n_cut: usize) -> Result<()> {
    let (ks, rep) = load(common)?;
    let mut out = LimitsReport {
        regime: rep.regime,
        delta: rep.delta,
        f: rep.f,
        kernels: Vec::new(),
        renewal_limits: None,
        lambda_c: None,
        lambda_f: None,
        gibbs: None,
    };
    match rep.regime {
        Regime::StrictlyDelocalized => {
            let ac = asymptotic_constants(&ks, &rep)?;
            for eta in 0..ks.t() {
                for a in [Boundary::Free, Boundary::Constrained] {
                    out.kernels.push(kernel_report(&defective_kernel(&ks, &ac, eta, a, n_cut), Some(eta), Some(a)));
                }
            }
            out.gibbs = Some(gibbs_vectors(&ks, &ac, &rep)?);
            out.lambda_c = Some(rows(&ac.lambda_c));
            out.lambda_f = Some(rows(&ac.lambda_f));
        }
        _ => {
            let kernel = gamma_kernel(&ks, &rep, n_cut)?;
            out.kernels.push(kernel_report(&kernel, None, None));
            if rep.regime == Regime::Localized {
                out.renewal_limits = Some(renewal_limits(&kernel)?);
            }
        }
    }
    emit(common, "", "json", &json(&out)?)
}

pub fn phase_diagram(
    common: &Common,
    beta_grid: Option<Grid>,
    h_grid: Option<Grid>,
    mc_samples: usize,
    mc_n: usize,
) -> Result<()> {
    let spec: PhaseSpec = read(common.input.as_deref())?;
    let betas = spec.grid(beta_grid, &spec.beta_grid, "beta-grid")?.values();
    let hs = spec.grid(h_grid, &spec.h_grid, "h-grid")?.values();
    let n_max = common.n_max.or(spec.n_max).unwrap_or(copolymer::charges::DEFAULT_N_MAX);
    let family = Family::new(&spec.omega, spec.p, n_max)?;
    let mc = (mc_samples > 0).then_some(McConfig { n: mc_n, samples: mc_samples, seed: common.seed });
    let points = scan(&family, &betas, &hs, mc.as_ref())?;
    let flagged = points.iter().filter(|p| p.near_critical).count();
    if flagged > 0 {
        log::warn!("{flagged} grid point(s) have delta within 1e-6 of 1");
    }
    let mut buf = Vec::new();
    write_csv(&points, &mut buf)?;
    emit(common, "", "csv", &buf)
}

pub fn verify(common: &Common, instances: usize) -> Result<()> {
    let mut checks: Vec<Check> = brute_force_suite(common.seed, instances)?;
    checks.extend(identity_suite(common.seed)?);
    let failed = checks.iter().filter(|c| !c.pass).count();
    let mut table = String::new();
    for c in &checks {
        table.push_str(&format!(
            "{}  {:<48} {:>10.3e}  (tol {:.0e})\n",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.deviation,
            c.tol
        ));
    }
    match &common.output {
        Some(prefix) => {
            std::fs::write(target(prefix, "", "json"), json(&checks)?)?;
            print!("{table}");
        }
        None => print!("{table}"),
    }
    if failed > 0 {
        return Err(Failed(failed).into());
    }
    Ok(())
}
