//! Infinite-volume objects: semi-Markov limit kernels, the constants Lambda
//! and mu of the delocalized asymptotics, the vectors v+ and v- and the
//! weights r of the two-phase decomposition.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::charges::{in_p_less, KernelSet};
use crate::error::{Error, Result};
use crate::partition::Boundary;
use crate::spectral::{FreeEnergyReport, Regime};

/// A kernel on (class, holding time) pairs. Holding times up to `n_cut` are
/// tabulated; the mass of longer ones is kept per target class and sign, and
/// `escape` is the jump to the absorbing state at infinity.
#[derive(Debug, Clone, Serialize)]
pub struct SemiMarkovKernel {
    pub t: usize,
    pub n_cut: usize,
    #[serde(skip)]
    hold: Vec<f64>,
    pub beyond_plus: Vec<Vec<f64>>,
    pub beyond_minus: Vec<Vec<f64>>,
    pub escape: Vec<f64>,
    pub defective: bool,
}

impl SemiMarkovKernel {
    pub fn new(
        t: usize,
        n_cut: usize,
        hold: Vec<f64>,
        beyond_plus: Vec<Vec<f64>>,
        beyond_minus: Vec<Vec<f64>>,
        escape: Vec<f64>,
        defective: bool,
    ) -> Self {
        assert_eq!(hold.len(), t * n_cut);
        SemiMarkovKernel { t, n_cut, hold, beyond_plus, beyond_minus, escape, defective }
    }

    /// Gamma_alpha(n) for 1 <= n <= n_cut (zero otherwise).
    pub fn hold(&self, alpha: usize, n: usize) -> f64 {
        if n == 0 || n > self.n_cut {
            0.0
        } else {
            self.hold[alpha * self.n_cut + n - 1]
        }
    }

    /// Gamma_alpha(1..=n_cut), indexed by n - 1.
    pub fn hold_row(&self, alpha: usize) -> &[f64] {
        &self.hold[alpha * self.n_cut..(alpha + 1) * self.n_cut]
    }

    /// Mass of holding times beyond n_cut leaving alpha.
    pub fn beyond(&self, alpha: usize) -> f64 {
        self.beyond_plus[alpha].iter().sum::<f64>() + self.beyond_minus[alpha].iter().sum::<f64>()
    }

    pub fn row_sum(&self, alpha: usize) -> f64 {
        self.hold_row(alpha).iter().sum::<f64>() + self.beyond(alpha) + self.escape[alpha]
    }

    /// Mean holding time restricted to the tabulated range.
    pub fn partial_mean(&self, alpha: usize) -> f64 {
        self.hold_row(alpha).iter().enumerate().map(|(i, g)| (i + 1) as f64 * g).sum()
    }

    /// Transition matrix between classes, P_{alpha,beta} = sum_n Gamma_{alpha,beta}(n).
    pub fn class_matrix(&self) -> DMatrix<f64> {
        let t = self.t;
        let mut m = DMatrix::zeros(t, t);
        for alpha in 0..t {
            for (i, g) in self.hold_row(alpha).iter().enumerate() {
                m[(alpha, (alpha + i + 1) % t)] += g;
            }
            for beta in 0..t {
                m[(alpha, beta)] += self.beyond_plus[alpha][beta] + self.beyond_minus[alpha][beta];
            }
        }
        m
    }
}

pub fn classify(report: &FreeEnergyReport) -> Regime {
    report.regime
}

/// Lambda^c, Lambda^f, mu^c, mu^f and (1 - B)^{-1}.
#[derive(Debug, Clone)]
pub struct AsymptoticConstants {
    pub lambda_c: DMatrix<f64>,
    pub lambda_f: DMatrix<f64>,
    pub mu_c: DMatrix<f64>,
    pub mu_f: DMatrix<f64>,
    pub inv1m_b: DMatrix<f64>,
    pub c_k: f64,
}

impl AsymptoticConstants {
    pub fn lambda(&self, a: Boundary) -> &DMatrix<f64> {
        match a {
            Boundary::Constrained => &self.lambda_c,
            Boundary::Free => &self.lambda_f,
        }
    }

    pub fn mu(&self, a: Boundary) -> &DMatrix<f64> {
        match a {
            Boundary::Constrained => &self.mu_c,
            Boundary::Free => &self.mu_f,
        }
    }

    /// max |B Lambda - (Lambda - mu)| over entries and both boundaries.
    pub fn identity_residual(&self, b: &DMatrix<f64>) -> f64 {
        [Boundary::Constrained, Boundary::Free]
            .iter()
            .map(|&a| {
                let lhs = b * self.lambda(a);
                let rhs = self.lambda(a) - self.mu(a);
                (lhs - rhs).abs().max()
            })
            .fold(0.0, f64::max)
    }
}

/// (I - B)^{-1} by LU with two steps of residual refinement.
pub fn inverse_one_minus(b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let t = b.nrows();
    let id = DMatrix::<f64>::identity(t, t);
    let a = &id - b;
    let mut x = a
        .clone()
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::Regime("1 - B is singular".into()))?;
    for _ in 0..2 {
        let r = &id - &a * &x;
        x += &x * r;
    }
    Ok(x)
}

pub fn asymptotic_constants(ks: &KernelSet, report: &FreeEnergyReport) -> Result<AsymptoticConstants> {
    if report.regime != Regime::StrictlyDelocalized {
        return Err(Error::Regime(format!(
            "asymptotic constants need delta < 1 - tol, got delta = {}",
            report.delta
        )));
    }
    let inv = inverse_one_minus(&ks.b)?;
    let l = ks.l()?;
    let lt = ks.l_tilde()?;
    let lambda_c = &inv * l * &inv;
    let lambda_f = &inv * lt;
    let mu_c = l * &inv;
    let mu_f = lt.clone();
    Ok(AsymptoticConstants { lambda_c, lambda_f, mu_c, mu_f, inv1m_b: inv, c_k: ks.walk().c_k()? })
}

/// The kernel Gamma^{eta,a}_alpha(n) = M_alpha(n) Lambda_{alpha+[n],eta} / Lambda_{alpha,eta}
/// with escape mu_{alpha,eta} / Lambda_{alpha,eta}.
pub fn defective_kernel(
    ks: &KernelSet,
    ac: &AsymptoticConstants,
    eta: usize,
    a: Boundary,
    n_cut: usize,
) -> SemiMarkovKernel {
    let t = ks.t();
    let n_cut = n_cut.min(ks.n_max());
    let lam = ac.lambda(a);
    let mu = ac.mu(a);
    let mut hold = vec![0.0; t * n_cut];
    let mut beyond_plus = vec![vec![0.0; t]; t];
    let mut beyond_minus = vec![vec![0.0; t]; t];
    let mut escape = vec![0.0; t];
    for alpha in 0..t {
        let row = ks.m_row(alpha);
        let ratio = |beta: usize| lam[(beta, eta)] / lam[(alpha, eta)];
        for n in 1..=ks.n_max() {
            let beta = (alpha + n) % t;
            if n <= n_cut {
                hold[alpha * n_cut + n - 1] = row[n - 1] * ratio(beta);
            } else {
                let (plus, minus) = ks.charges.sign_weights(alpha, n);
                let k = ks.walk().k(n);
                beyond_plus[alpha][beta] += plus * k * ratio(beta);
                beyond_minus[alpha][beta] += minus * k * ratio(beta);
            }
        }
        for beta in 0..t {
            let (plus, minus) = ks.tail_entry_split(alpha, beta, 0.0);
            beyond_plus[alpha][beta] += plus * ratio(beta);
            beyond_minus[alpha][beta] += minus * ratio(beta);
        }
        escape[alpha] = mu[(alpha, eta)] / lam[(alpha, eta)];
    }
    SemiMarkovKernel::new(t, n_cut, hold, beyond_plus, beyond_minus, escape, true)
}

/// Coefficients of Lambda^a_{., eta} on v+ and v-, and the weight r.
#[derive(Debug, Clone, Serialize)]
pub struct GibbsEntry {
    pub eta: usize,
    pub boundary: Boundary,
    pub x: f64,
    pub y: f64,
    pub r: f64,
    /// max_alpha |x v+ + y v- - Lambda_{., eta}| / Lambda_{alpha, eta}
    pub reproduction_error: f64,
}

impl GibbsEntry {
    /// Probability that the last excursion is positive given that the last
    /// contact has class gamma.
    pub fn plus_given_last(&self, ks: &KernelSet, gamma: usize) -> f64 {
        let neg = self.y * (-ks.charges.sigma(0, gamma)).exp();
        self.x / (self.x + neg)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GibbsDecomposition {
    pub v_plus: Vec<f64>,
    pub v_minus: Vec<f64>,
    pub entries: Vec<GibbsEntry>,
    pub p_less: bool,
    pub warnings: Vec<String>,
}

impl GibbsDecomposition {
    pub fn entry(&self, eta: usize, a: Boundary) -> &GibbsEntry {
        self.entries
            .iter()
            .find(|e| e.eta == eta && e.boundary == a)
            .expect("entry for every class and boundary")
    }

    pub fn r(&self, eta: usize, a: Boundary) -> f64 {
        self.entry(eta, a).r
    }
}

pub fn gibbs_vectors(ks: &KernelSet, ac: &AsymptoticConstants, report: &FreeEnergyReport) -> Result<GibbsDecomposition> {
    if report.regime != Regime::StrictlyDelocalized {
        return Err(Error::Regime("the decomposition exists only for delta < 1".into()));
    }
    let c = &ks.charges;
    let t = c.t;
    let inv = &ac.inv1m_b;
    let ck = ac.c_k;
    let v_plus: Vec<f64> = (0..t).map(|a| inv.row(a).sum()).collect();
    let v_minus: Vec<f64> = (0..t).map(|a| (0..t).map(|g| inv[(a, g)] * (-c.sigma(0, g)).exp()).sum()).collect();
    let h_zero = c.h_is_zero();

    let mut entries = Vec::new();
    let mut warnings = Vec::new();
    for boundary in [Boundary::Free, Boundary::Constrained] {
        let lam = ac.lambda(boundary);
        for eta in 0..t {
            let (x, y) = match boundary {
                Boundary::Free => (ck, if h_zero { ck * c.sigma(0, eta).exp() } else { 0.0 }),
                Boundary::Constrained => {
                    let x = 0.5 * ck * (0..t).map(|z| c.w0[z].exp() * inv[(z, eta)]).sum::<f64>();
                    let y = if h_zero {
                        0.5 * ck * (0..t).map(|z| (c.w0[z] + c.sigma(0, z)).exp() * inv[(z, eta)]).sum::<f64>()
                    } else {
                        0.0
                    };
                    (x, y)
                }
            };
            let reproduction_error = (0..t)
                .map(|a| ((x * v_plus[a] + y * v_minus[a] - lam[(a, eta)]) / lam[(a, eta)]).abs())
                .fold(0.0, f64::max);
            let r = x * v_plus[0] / lam[(0, eta)];
            if r <= 0.0 || r >= 1.0 - 1e-15 {
                warnings.push(format!("r({eta}, {}) = {r} sits at an endpoint", boundary.name()));
            }
            entries.push(GibbsEntry { eta, boundary, x, y, r, reproduction_error });
        }
    }
    let p_less = in_p_less(c, report.delta, report.tol);
    if p_less {
        warnings.push("limit depends on boundary conditions along [N]=eta".into());
    }
    Ok(GibbsDecomposition { v_plus, v_minus, entries, p_less, warnings })
}

/// q^v of a cylinder k_1 < ... < k_j: the product of M over the gaps times
/// v_{[k_j]} / v_{[0]}.
pub fn q_law(ks: &KernelSet, v: &[f64], cylinder: &[usize]) -> f64 {
    path_weight(ks, cylinder) * v[cylinder.last().map_or(0, |&k| ks.charges.class(k))] / v[0]
}

fn path_weight(ks: &KernelSet, cylinder: &[usize]) -> f64 {
    let mut prev = 0;
    let mut w = 1.0;
    for &k in cylinder {
        assert!(k > prev, "cylinder points must be increasing and positive");
        w *= ks.m(ks.charges.class(prev), k - prev);
        prev = k;
    }
    w
}

/// Returns (q^{p v+ + (1-p) v-}, r q^{v+} + (1-r) q^{v-}) on a cylinder.
pub fn superposition_check(ks: &KernelSet, v_plus: &[f64], v_minus: &[f64], p: f64, cylinder: &[usize]) -> (f64, f64) {
    let mix: Vec<f64> = v_plus.iter().zip(v_minus).map(|(a, b)| p * a + (1.0 - p) * b).collect();
    let lhs = q_law(ks, &mix, cylinder);
    let r = p * v_plus[0] / (p * v_plus[0] + (1.0 - p) * v_minus[0]);
    let rhs = r * q_law(ks, v_plus, cylinder) + (1.0 - r) * q_law(ks, v_minus, cylinder);
    (lhs, rhs)
}

/// Returns (Gamma^{eta,a} cylinder probability, r q^{v+} + (1-r) q^{v-}).
pub fn decomposition_check(
    ks: &KernelSet,
    ac: &AsymptoticConstants,
    gd: &GibbsDecomposition,
    eta: usize,
    a: Boundary,
    cylinder: &[usize],
) -> (f64, f64) {
    let lam = ac.lambda(a);
    let last = cylinder.last().map_or(0, |&k| ks.charges.class(k));
    let lhs = path_weight(ks, cylinder) * lam[(last, eta)] / lam[(0, eta)];
    let r = gd.r(eta, a);
    let rhs = r * q_law(ks, &gd.v_plus, cylinder) + (1.0 - r) * q_law(ks, &gd.v_minus, cylinder);
    (lhs, rhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::charges::{build, RawCharges};
    use crate::spectral::free_energy;

    fn p_less_instance() -> RawCharges {
        RawCharges {
            omega_plus: vec![0.0],
            omega_minus: vec![0.8, -0.8],
            omega_zero: vec![-2.5],
            omega_zero_tilde: vec![0.0],
        }
    }

    #[test]
    fn scalar_constants() {
        let ks = build(&RawCharges::pinning(-1.0), 0.3, 1 << 16).unwrap();
        let rep = free_energy(&ks).unwrap();
        let ac = asymptotic_constants(&ks, &rep).unwrap();
        let ck = ks.walk().c_k().unwrap();
        let e = (-1.0f64).exp();
        assert!((ac.lambda_c[(0, 0)] / (ck * e / (1.0 - e).powi(2)) - 1.0).abs() < 1e-9);
        assert!((ac.lambda_f[(0, 0)] / (2.0 * ck / (1.0 - e)) - 1.0).abs() < 1e-9);
        assert!(ac.identity_residual(&ks.b) < 1e-10);

        let ker = defective_kernel(&ks, &ac, 0, Boundary::Free, 1 << 14);
        // T = 1: Gamma = M and the escape is what B leaves over
        assert!((ker.hold(0, 7) - ks.m(0, 7)).abs() < 1e-16);
        assert!((ker.escape[0] - (1.0 - e)).abs() < 1e-10);
    }

    #[test]
    fn rejects_recurrent_regimes() {
        let ks = build(&RawCharges::zero(), 0.3, 4096).unwrap();
        let rep = free_energy(&ks).unwrap();
        assert!(asymptotic_constants(&ks, &rep).is_err());
    }

    #[test]
    fn defective_rows_and_decomposition() {
        let ks = build(&p_less_instance(), 0.3, 1 << 16).unwrap();
        let rep = free_energy(&ks).unwrap();
        assert_eq!(rep.regime, Regime::StrictlyDelocalized);
        let ac = asymptotic_constants(&ks, &rep).unwrap();
        let gd = gibbs_vectors(&ks, &ac, &rep).unwrap();
        assert!(gd.p_less);
        for a in [Boundary::Free, Boundary::Constrained] {
            for eta in 0..ks.t() {
                let ker = defective_kernel(&ks, &ac, eta, a, 1 << 12);
                for alpha in 0..ks.t() {
                    assert!((ker.row_sum(alpha) - 1.0).abs() < 1e-10);
                }
                let e = gd.entry(eta, a);
                assert!(e.reproduction_error < 1e-10);
                assert!(e.r > 0.0 && e.r < 1.0);
                for cyl in [vec![], vec![3], vec![1, 4], vec![2, 3, 9]] {
                    let (lhs, rhs) = decomposition_check(&ks, &ac, &gd, eta, a, &cyl);
                    assert!((lhs - rhs).abs() < 1e-10, "{lhs} {rhs}");
                }
            }
        }
        // v+ and v- lie in the cone: B v <= v
        for v in [&gd.v_plus, &gd.v_minus] {
            for a in 0..ks.t() {
                let bv: f64 = (0..ks.t()).map(|g| ks.b[(a, g)] * v[g]).sum();
                assert!(bv <= v[a]);
            }
        }
    }

    #[test]
    fn superposition_lemma() {
        let ks = build(&p_less_instance(), 0.3, 4096).unwrap();
        let v_plus = vec![1.3, 0.7];
        let v_minus = vec![0.4, 1.1];
        for cyl in [vec![], vec![2], vec![1, 5], vec![3, 4, 8]] {
            let (lhs, rhs) = superposition_check(&ks, &v_plus, &v_minus, 0.37, &cyl);
            assert!((lhs - rhs).abs() < 1e-12);
            let (lhs, _) = superposition_check(&ks, &v_plus, &v_minus, 1.0, &cyl);
            assert_eq!(lhs, q_law(&ks, &v_plus, &cyl));
        }
    }

    #[test]
    fn pinning_weights_are_symmetric() {
        let raw = RawCharges { omega_zero: vec![-1.0, -2.0, -0.5], ..RawCharges::zero() };
        let ks = build(&raw, 0.3, 1 << 16).unwrap();
        let rep = free_energy(&ks).unwrap();
        let ac = asymptotic_constants(&ks, &rep).unwrap();
        let gd = gibbs_vectors(&ks, &ac, &rep).unwrap();
        assert!(!gd.p_less);
        for e in &gd.entries {
            assert!((e.r - 0.5).abs() < 1e-12);
        }
        let k0 = defective_kernel(&ks, &ac, 0, Boundary::Free, 256);
        let k1 = defective_kernel(&ks, &ac, 2, Boundary::Constrained, 256);
        for alpha in 0..3 {
            for n in 1..=256 {
                assert!((k0.hold(alpha, n) - k1.hold(alpha, n)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn positive_drift_puts_free_weight_on_plus() {
        let raw = RawCharges { omega_plus: vec![0.3, 0.1], omega_zero: vec![-1.5], ..RawCharges::zero() };
        let ks = build(&raw, 0.3, 1 << 16).unwrap();
        let rep = free_energy(&ks).unwrap();
        let ac = asymptotic_constants(&ks, &rep).unwrap();
        let gd = gibbs_vectors(&ks, &ac, &rep).unwrap();
        for eta in 0..ks.t() {
            assert!((gd.r(eta, Boundary::Free) - 1.0).abs() < 1e-12);
        }
    }
}
