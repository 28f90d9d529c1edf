//! The matrices A(b), their Perron-Frobenius pair (Z(b), xi(b)), the regime
//! selector delta = Z(0), the free energy F solving Z(F) = 1, and the
//! renewal kernel Gamma(b).

use nalgebra::DMatrix;
use serde::Serialize;

use crate::charges::KernelSet;
use crate::error::{Error, Result};
use crate::limits::SemiMarkovKernel;

/// Default tolerance on |delta - 1| for the critical regime.
pub const CLASSIFICATION_TOL: f64 = 1e-9;

/// Default cut of kernel tables.
pub const DEFAULT_N_CUT: usize = 1 << 14;

const MAX_ITER: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Localized,
    Critical,
    StrictlyDelocalized,
}

impl Regime {
    pub fn name(&self) -> &'static str {
        match self {
            Regime::Localized => "localized",
            Regime::Critical => "critical",
            Regime::StrictlyDelocalized => "strictly_delocalized",
        }
    }
}

pub fn classify_delta(delta: f64, tol: f64) -> Regime {
    if delta > 1.0 + tol {
        Regime::Localized
    } else if delta < 1.0 - tol {
        Regime::StrictlyDelocalized
    } else {
        Regime::Critical
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectralResult {
    pub b: f64,
    pub z: f64,
    pub xi: Vec<f64>,
    pub residual: f64,
}

/// A(b)_{alpha,beta} = sum of M_alpha(n) e^{-bn} over n with alpha + [n] = beta.
pub fn a_matrix(ks: &KernelSet, b: f64) -> DMatrix<f64> {
    assert!(b >= 0.0, "A(b) needs b >= 0");
    if b == 0.0 {
        return ks.b.clone();
    }
    let t = ks.t();
    let n_max = ks.n_max();
    let damp: Vec<f64> = (1..=n_max).map(|n| (-b * n as f64).exp()).collect();
    let live = damp.iter().position(|&d| d < 1e-300).unwrap_or(n_max);
    let mut a = DMatrix::zeros(t, t);
    let mut acc = vec![0.0; t];
    for alpha in 0..t {
        acc.iter_mut().for_each(|v| *v = 0.0);
        let row = ks.m_row(alpha);
        for i in 0..live {
            acc[(alpha + i + 1) % t] += row[i] * damp[i];
        }
        for beta in 0..t {
            a[(alpha, beta)] = acc[beta] + ks.tail_entry(alpha, beta, b);
        }
    }
    a
}

/// Power iteration from the uniform vector.
pub fn pf_eigen(a: &DMatrix<f64>) -> Result<(f64, Vec<f64>, f64)> {
    let t = a.nrows();
    pf_eigen_from(a, &vec![1.0 / t as f64; t])
}

/// Power iteration from a given positive start; returns (Z, xi, residual)
/// with xi summing to 1 and the residual max_i |(A xi)_i - Z xi_i| / (Z xi_i).
pub fn pf_eigen_from(a: &DMatrix<f64>, start: &[f64]) -> Result<(f64, Vec<f64>, f64)> {
    let t = a.nrows();
    assert_eq!(a.ncols(), t);
    assert_eq!(start.len(), t);
    let s: f64 = start.iter().sum();
    let mut x: Vec<f64> = start.iter().map(|v| v / s).collect();
    let mut y = vec![0.0; t];
    let mut z_prev = f64::NAN;
    for iter in 0..MAX_ITER {
        for i in 0..t {
            y[i] = (0..t).map(|j| a[(i, j)] * x[j]).sum();
        }
        let z: f64 = y.iter().sum();
        y.iter_mut().for_each(|v| *v /= z);
        let moved = x.iter().zip(&y).map(|(u, v)| ((u - v) / v).abs()).fold(0.0, f64::max);
        std::mem::swap(&mut x, &mut y);
        if (z - z_prev).abs() < 1e-13 * z && moved < 1e-13 || t == 1 {
            let res = residual(a, &x, z);
            return Ok((z, x, res));
        }
        z_prev = z;
        if iter + 1 == MAX_ITER {
            let res = residual(a, &x, z);
            if res < 1e-12 {
                return Ok((z, x, res));
            }
            return Err(Error::NotConverged { iterations: MAX_ITER, residual: res });
        }
    }
    unreachable!()
}

fn residual(a: &DMatrix<f64>, x: &[f64], z: f64) -> f64 {
    let t = x.len();
    (0..t)
        .map(|i| {
            let ax: f64 = (0..t).map(|j| a[(i, j)] * x[j]).sum();
            ((ax - z * x[i]) / (z * x[i])).abs()
        })
        .fold(0.0, f64::max)
}

pub fn spectral_at(ks: &KernelSet, b: f64) -> Result<SpectralResult> {
    let (z, xi, residual) = pf_eigen(&a_matrix(ks, b))?;
    Ok(SpectralResult { b, z, xi, residual })
}

#[derive(Debug, Clone, Serialize)]
pub struct FreeEnergyReport {
    pub delta: f64,
    /// Free energy of the gauged model.
    pub f: f64,
    pub regime: Regime,
    pub xi_at_f: Vec<f64>,
    /// Free energy of the raw Hamiltonian.
    pub raw_f: f64,
    /// Z(F), equal to 1 up to the bisection accuracy when localized.
    pub z_at_f: f64,
    pub tol: f64,
    pub flipped: bool,
    pub h: f64,
    pub b_tail_error: f64,
    pub warnings: Vec<String>,
}

pub fn free_energy(ks: &KernelSet) -> Result<FreeEnergyReport> {
    free_energy_with_tol(ks, CLASSIFICATION_TOL)
}

pub fn free_energy_with_tol(ks: &KernelSet, tol: f64) -> Result<FreeEnergyReport> {
    let at_zero = spectral_at(ks, 0.0)?;
    let delta = at_zero.z;
    let regime = classify_delta(delta, tol);
    let mut warnings = Vec::new();
    if (delta - 1.0).abs() <= 10.0 * tol && regime != Regime::Critical {
        warnings.push(format!("delta = {delta} lies within 10 tolerances of 1"));
    }
    if regime == Regime::Critical && (delta - 1.0).abs() > 1e-12 {
        warnings.push(format!("delta = {delta} treated as critical at tolerance {tol}"));
    }
    if ks.tail_error > 1e-6 * ks.b.min() {
        warnings.push(format!("truncation of B uncertain (estimated error {:e})", ks.tail_error));
    }

    let (f, at_f) = if regime == Regime::Localized {
        let mut hi = 1.0;
        let mut at_hi = spectral_at(ks, hi)?;
        while at_hi.z >= 1.0 {
            hi *= 2.0;
            at_hi = spectral_at(ks, hi)?;
        }
        let mut lo = 0.0;
        let mut best = at_hi;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let at_mid = spectral_at(ks, mid)?;
            let z = at_mid.z;
            if (z - 1.0).abs() < (best.z - 1.0).abs() {
                best = at_mid;
            }
            if (z - 1.0).abs() < 1e-12 {
                break;
            }
            if z > 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        (best.b, best)
    } else {
        (0.0, at_zero)
    };
    if (at_f.z - 1.0).abs() >= 1e-12 && regime == Regime::Localized {
        warnings.push(format!("bisection stopped at |Z(F) - 1| = {:e}", (at_f.z - 1.0).abs()));
    }

    Ok(FreeEnergyReport {
        delta,
        f,
        regime,
        xi_at_f: at_f.xi.clone(),
        raw_f: f + ks.charges.gauge_mean(),
        z_at_f: at_f.z,
        tol,
        flipped: ks.charges.flipped,
        h: ks.charges.h,
        b_tail_error: ks.tail_error,
        warnings,
    })
}

/// The renewal kernel Gamma(b)_alpha(n) = e^{-bn} M_alpha(n) xi_beta / (Z xi_alpha),
/// beta = alpha + [n]. Rows sum to one for every b.
pub fn gamma_kernel_at(ks: &KernelSet, spec: &SpectralResult, n_cut: usize) -> SemiMarkovKernel {
    let t = ks.t();
    let b = spec.b;
    let xi = &spec.xi;
    let n_cut = n_cut.min(ks.n_max());
    let mut hold = vec![0.0; t * n_cut];
    let mut beyond_plus = vec![vec![0.0; t]; t];
    let mut beyond_minus = vec![vec![0.0; t]; t];
    for alpha in 0..t {
        let row = ks.m_row(alpha);
        for n in 1..=ks.n_max() {
            let beta = (alpha + n) % t;
            let w = (-b * n as f64).exp() * xi[beta] / (spec.z * xi[alpha]);
            if n <= n_cut {
                hold[alpha * n_cut + n - 1] = row[n - 1] * w;
            } else {
                let (plus, minus) = ks.charges.sign_weights(alpha, n);
                let k = ks.walk().k(n);
                beyond_plus[alpha][beta] += plus * k * w;
                beyond_minus[alpha][beta] += minus * k * w;
            }
        }
        for beta in 0..t {
            let w = xi[beta] / (spec.z * xi[alpha]);
            let (plus, minus) = ks.tail_entry_split(alpha, beta, b);
            beyond_plus[alpha][beta] += plus * w;
            beyond_minus[alpha][beta] += minus * w;
        }
    }
    SemiMarkovKernel::new(t, n_cut, hold, beyond_plus, beyond_minus, vec![0.0; t], false)
}

/// The limit kernel of the localized and critical regimes.
pub fn gamma_kernel(ks: &KernelSet, report: &FreeEnergyReport, n_cut: usize) -> Result<SemiMarkovKernel> {
    if report.regime == Regime::StrictlyDelocalized {
        return Err(Error::Regime("the delocalized regime uses the defective kernel".into()));
    }
    let spec = spectral_at(ks, report.f)?;
    Ok(gamma_kernel_at(ks, &spec, n_cut))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::charges::{build, RawCharges};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn scalar_cases() {
        let ks = build(&RawCharges::zero(), 0.3, 4096).unwrap();
        let rep = free_energy(&ks).unwrap();
        assert_eq!(rep.regime, Regime::Critical);
        assert_eq!(rep.f, 0.0);
        assert!((rep.delta - 1.0).abs() < 1e-12);

        let ks = build(&RawCharges::pinning(-1.0), 0.3, 4096).unwrap();
        let rep = free_energy(&ks).unwrap();
        assert_eq!(rep.regime, Regime::StrictlyDelocalized);
        assert!((rep.delta - (-1.0f64).exp()).abs() < 1e-12);
        assert_eq!(rep.f, 0.0);

        let ks = build(&RawCharges::pinning(0.5), 0.3, 4096).unwrap();
        let rep = free_energy(&ks).unwrap();
        assert_eq!(rep.regime, Regime::Localized);
        assert!(rep.f > 0.0);
        assert!((rep.z_at_f - 1.0).abs() < 1e-12);
        // sum K(n) e^{-Fn} = e^{-1/2} by direct summation over the table
        let direct: f64 = (1..=4096).map(|n| ks.walk().k(n) * (-rep.f * n as f64).exp()).sum();
        assert!((direct - (-0.5f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn a_matrix_is_decreasing() {
        let raw = RawCharges {
            omega_plus: vec![0.2, -0.4],
            omega_minus: vec![0.1],
            omega_zero: vec![0.3, -0.1, 0.0],
            omega_zero_tilde: vec![0.0],
        };
        let ks = build(&raw, 0.3, 4096).unwrap();
        let mut last = f64::INFINITY;
        for i in 0..40 {
            let z = spectral_at(&ks, i as f64 * 0.05).unwrap().z;
            assert!(z < last);
            last = z;
        }
        assert!(a_matrix(&ks, 200.0).iter().all(|&v| v < 1e-80));
    }

    #[test]
    fn zero_charges_direct_sum() {
        let ks = build(&RawCharges::zero(), 0.3, 4096).unwrap();
        let a = a_matrix(&ks, 0.1);
        let direct: f64 = (1..=4096).map(|n| ks.walk().k(n) * (-0.1 * n as f64).exp()).sum();
        assert!((a[(0, 0)] - direct).abs() < 1e-15);
        assert!(a[(0, 0)] < 1.0);
    }

    #[test]
    fn eigenvector_is_start_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let a = DMatrix::from_fn(3, 3, |_, _| rng.random::<f64>() + 0.01);
            let (z, xi, res) = pf_eigen(&a).unwrap();
            assert!(res < 1e-12);
            for _ in 0..5 {
                let start: Vec<f64> = (0..3).map(|_| rng.random::<f64>() + 1e-3).collect();
                let (z2, xi2, _) = pf_eigen_from(&a, &start).unwrap();
                assert!((z - z2).abs() < 1e-10 * z);
                for i in 0..3 {
                    assert!((xi[i] - xi2[i]).abs() < 1e-10);
                }
            }
        }
        let circ = DMatrix::from_row_slice(2, 2, &[0.3, 0.5, 0.5, 0.3]);
        let (z, xi, _) = pf_eigen(&circ).unwrap();
        assert!((z - 0.8).abs() < 1e-14);
        assert!((xi[0] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn gamma_rows_sum_to_one() {
        let raw = RawCharges {
            omega_plus: vec![0.6, -0.2],
            omega_minus: vec![-0.3],
            omega_zero: vec![0.4],
            omega_zero_tilde: vec![0.1, 0.0, -0.2],
        };
        let ks = build(&raw, 0.3, 1 << 14).unwrap();
        let rep = free_energy(&ks).unwrap();
        assert_eq!(rep.regime, Regime::Localized);
        let ker = gamma_kernel(&ks, &rep, 1 << 12).unwrap();
        for a in 0..ker.t {
            assert!((ker.row_sum(a) - 1.0).abs() < 1e-10);
        }

        let zero = build(&RawCharges::zero(), 0.3, 4096).unwrap();
        let rep = free_energy(&zero).unwrap();
        let ker = gamma_kernel(&zero, &rep, 4096).unwrap();
        for n in 1..50 {
            assert!((ker.hold(0, n) - zero.walk().k(n)).abs() < 1e-15);
        }
    }
}
