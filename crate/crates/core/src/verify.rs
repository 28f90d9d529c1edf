//! Self-checks: recursions against exhaustive enumeration, and the exact
//! identities linking the partition functions to the renewal kernels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::charges::{build, KernelSet, RawCharges};
use crate::error::Result;
use crate::limits::{asymptotic_constants, decomposition_check, defective_kernel, gibbs_vectors};
use crate::partition::brute::brute_force;
use crate::partition::{contact_marginal, endpoint_sign_prob, site_marginal, Boundary, PartitionTable};
use crate::spectral::{free_energy, gamma_kernel, gamma_kernel_at, spectral_at, Regime};

pub const DEFAULT_SEED: u64 = 20_240_601;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub deviation: f64,
    pub tol: f64,
    pub pass: bool,
}

impl Check {
    pub fn new(name: impl Into<String>, deviation: f64, tol: f64) -> Self {
        Check { name: name.into(), deviation, tol, pass: deviation <= tol }
    }
}

/// Charges uniform in [-1, 1] with all four arrays of period t.
pub fn random_charges<R: Rng>(rng: &mut R, t: usize) -> RawCharges {
    let mut draw = || (0..t).map(|_| rng.random_range(-1.0..=1.0)).collect::<Vec<f64>>();
    RawCharges { omega_plus: draw(), omega_minus: draw(), omega_zero: draw(), omega_zero_tilde: draw() }
}

fn log_gap(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a.ln() - b.ln()).abs()
    }
}

/// Largest log-domain deviation between the recursions and enumeration, over
/// partition functions, contact marginals and endpoint signs.
pub fn brute_force_deviation(raw: &RawCharges, p: f64, n: usize) -> Result<f64> {
    let ks = build(raw, p, 64.max(n))?;
    let table = PartitionTable::build(&ks, n)?;
    let bf = brute_force(raw, p, n, false)?;
    let mut dev = [
        (table.log_zc(0, n) - bf.constrained.log_z).abs(),
        (table.log_zf(0, n) - bf.free.log_z).abs(),
        (table.log_zplus(0, n) - bf.log_zplus).abs(),
        (table.log_zminus(0, n) - bf.log_zminus).abs(),
    ]
    .into_iter()
    .fold(0.0, f64::max);
    for a in [Boundary::Free, Boundary::Constrained] {
        let s = bf.summary(a);
        for k1 in 1..=n {
            dev = dev.max(log_gap(contact_marginal(&ks, &table, a, &[k1])?, s.first[k1]));
            dev = dev.max(log_gap(site_marginal(&ks, &table, a, k1)?, s.site[k1]));
            for k2 in k1 + 1..=n {
                dev = dev.max(log_gap(contact_marginal(&ks, &table, a, &[k1, k2])?, s.pair[k1][k2]));
            }
        }
        dev = dev.max(log_gap(endpoint_sign_prob(&ks, &table, a, n)?, s.sign_plus));
    }
    Ok(dev)
}

pub fn brute_force_suite(seed: u64, instances: usize) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for i in 0..instances {
        let t = 1 + i % 3;
        let p = [0.1, 0.3, 0.45][(i / 3) % 3];
        let n = rng.random_range(6..=12);
        let raw = random_charges(&mut rng, t);
        let dev = brute_force_deviation(&raw, p, n)?;
        out.push(Check::new(format!("enumeration #{i} (T={t}, p={p}, N={n})"), dev, 1e-10));
    }
    Ok(out)
}

/// max_N relative gap in Z^c_N = e^{bN} xi_0/xi_[N] E_b[Z(b)^iota; N in tau].
pub fn matrix_identity_deviation(ks: &KernelSet, table: &PartitionTable, b: f64) -> Result<f64> {
    let n = table.n;
    let spec = spectral_at(ks, b)?;
    let kernel = gamma_kernel_at(ks, &spec, n);
    let t = ks.t();
    let mut u = vec![0.0; n + 1];
    u[0] = 1.0;
    let mut dev: f64 = 0.0;
    for k in 1..=n {
        u[k] = (1..=k).map(|m| u[k - m] * spec.z * kernel.hold((k - m) % t, m)).sum();
        let rhs = b * k as f64 + (spec.xi[0] / spec.xi[k % t]).ln() + u[k].ln();
        dev = dev.max((rhs - table.log_zc(0, k)).exp_m1().abs());
    }
    Ok(dev)
}

/// Row sums of the renewal kernels: Gamma(F) for delta >= 1, the defective
/// kernels (with escape) for delta < 1.
pub fn kernel_normalization_deviation(ks: &KernelSet, n_cut: usize) -> Result<(Regime, f64)> {
    let rep = free_energy(ks)?;
    let kernels = match rep.regime {
        Regime::StrictlyDelocalized => {
            let ac = asymptotic_constants(ks, &rep)?;
            let mut v = Vec::new();
            for eta in 0..ks.t() {
                for a in [Boundary::Free, Boundary::Constrained] {
                    v.push(defective_kernel(ks, &ac, eta, a, n_cut));
                }
            }
            v
        }
        _ => vec![gamma_kernel(ks, &rep, n_cut)?],
    };
    let dev = kernels
        .iter()
        .flat_map(|k| (0..k.t).map(move |a| (k.row_sum(a) - 1.0).abs()))
        .fold(0.0, f64::max);
    Ok((rep.regime, dev))
}

/// Pinning-type instance in the strictly delocalized regime with h = 0 and a
/// nonzero periodic drift.
pub fn p_less_instance() -> RawCharges {
    RawCharges {
        omega_plus: vec![0.0],
        omega_minus: vec![0.8, -0.8],
        omega_zero: vec![-2.5],
        omega_zero_tilde: vec![0.0],
    }
}

pub fn identity_suite(seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut out = Vec::new();

    // zero charges: Z^c_N is the return probability of the walk
    let p = 0.3;
    let ks = build(&RawCharges::zero(), p, 4096)?;
    let table = PartitionTable::build(&ks, 2000)?;
    let mut dist = vec![1.0];
    let mut dev: f64 = 0.0;
    for k in 1..=2000 {
        let mut next = vec![0.0; dist.len() + 2];
        for (i, &w) in dist.iter().enumerate() {
            next[i] += p * w;
            next[i + 1] += (1.0 - 2.0 * p) * w;
            next[i + 2] += p * w;
        }
        dist = next;
        dev = dev.max((table.log_zc(0, k).exp() - dist[k]).abs());
    }
    out.push(Check::new("zero charges: Z^c_N = P(S_N = 0)", dev, 1e-12));

    for i in 0..5 {
        let t = 1 + i % 3;
        let raw = random_charges(&mut rng, t);
        let ks = build(&raw, [0.1, 0.3, 0.45][i % 3], 4096)?;
        let table = PartitionTable::build(&ks, 200)?;
        let f = free_energy(&ks)?.f;
        let dev = [0.0, 0.05, f]
            .into_iter()
            .map(|b| matrix_identity_deviation(&ks, &table, b))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold(0.0, f64::max);
        out.push(Check::new(format!("matrix identity #{i} (T={t})"), dev, 1e-10));
    }

    for i in 0..6 {
        let t = 1 + i % 3;
        let mut raw = random_charges(&mut rng, t);
        if i % 2 == 1 {
            raw.omega_zero.iter_mut().for_each(|w| *w -= 3.0);
        }
        let ks = build(&raw, 0.3, 1 << 14)?;
        let (regime, dev) = kernel_normalization_deviation(&ks, 1 << 12)?;
        out.push(Check::new(format!("kernel rows #{i} ({})", regime.name()), dev, 1e-10));
    }

    let ks = build(&p_less_instance(), 0.3, 1 << 16)?;
    let rep = free_energy(&ks)?;
    let ac = asymptotic_constants(&ks, &rep)?;
    let gd = gibbs_vectors(&ks, &ac, &rep)?;
    let mut dev: f64 = 0.0;
    for eta in 0..ks.t() {
        for a in [Boundary::Free, Boundary::Constrained] {
            for cyl in [vec![1], vec![2, 5], vec![3, 4, 9]] {
                let (lhs, rhs) = decomposition_check(&ks, &ac, &gd, eta, a, &cyl);
                dev = dev.max(((lhs - rhs) / lhs).abs());
            }
        }
    }
    out.push(Check::new("two-phase decomposition", dev, 1e-10));
    out.push(Check::new("Lambda identity", ac.identity_residual(&ks.b), 1e-10));
    Ok(out)
}
