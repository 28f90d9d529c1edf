//! Periodic charges and their matrix encoding: the drift h, the cocycle
//! Sigma, the excursion weights Phi, the return kernel M, its sum B and the
//! asymptotic matrices L, L~.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tail::LatticeTail;
use crate::walk::WalkLaw;

/// Absolute tolerance for treating h or Sigma entries as zero.
pub const ZERO_TOL: f64 = 1e-12;

/// Default truncation of the return kernel table.
pub const DEFAULT_N_MAX: usize = 1 << 16;

/// Charges as given by the user. Each array is indexed by class: entry k is
/// the charge of every monomer n with n = k (mod len). Periods may differ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawCharges {
    pub omega_plus: Vec<f64>,
    pub omega_minus: Vec<f64>,
    pub omega_zero: Vec<f64>,
    pub omega_zero_tilde: Vec<f64>,
}

impl RawCharges {
    pub fn zero() -> Self {
        RawCharges {
            omega_plus: vec![0.0],
            omega_minus: vec![0.0],
            omega_zero: vec![0.0],
            omega_zero_tilde: vec![0.0],
        }
    }

    /// Homogeneous pinning: only omega_zero = beta0.
    pub fn pinning(beta0: f64) -> Self {
        RawCharges { omega_zero: vec![beta0], ..RawCharges::zero() }
    }

    pub fn period(&self) -> usize {
        [&self.omega_plus, &self.omega_minus, &self.omega_zero, &self.omega_zero_tilde]
            .iter()
            .fold(1, |acc, s| lcm(acc, s.len().max(1)))
    }

    /// Charge of monomer n (n >= 1) in each of the four sequences.
    pub fn at(&self, n: usize) -> [f64; 4] {
        let pick = |s: &Vec<f64>| s[n % s.len()];
        [pick(&self.omega_plus), pick(&self.omega_minus), pick(&self.omega_zero), pick(&self.omega_zero_tilde)]
    }

    pub fn validate(&self) -> Result<()> {
        let fields: [(&'static str, &Vec<f64>); 4] = [
            ("omega_plus", &self.omega_plus),
            ("omega_minus", &self.omega_minus),
            ("omega_zero", &self.omega_zero),
            ("omega_zero_tilde", &self.omega_zero_tilde),
        ];
        for (field, values) in fields {
            if values.is_empty() {
                return Err(Error::InvalidParameter(format!("{field} must not be empty")));
            }
            if let Some(index) = values.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { field, index });
            }
        }
        Ok(())
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm(a: usize, b: usize) -> usize {
    a / gcd(a, b) * b
}

/// Normalized charges: expanded to the common period, flipped so that h >= 0
/// and gauged so that the positive-side charge vanishes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CycleCharges {
    pub t: usize,
    pub w_plus: Vec<f64>,
    pub w_minus: Vec<f64>,
    pub w0: Vec<f64>,
    pub w0_tilde: Vec<f64>,
    /// The (flipped) positive-side charge removed by the gauge.
    pub gauge: Vec<f64>,
    pub flipped: bool,
    pub h: f64,
    prefix: Vec<f64>,
}

pub fn normalize(raw: &RawCharges) -> Result<CycleCharges> {
    raw.validate()?;
    let t = raw.period();
    let expand = |s: &Vec<f64>| -> Vec<f64> { (0..t).map(|k| s[k % s.len()]).collect() };
    let mut plus = expand(&raw.omega_plus);
    let mut minus = expand(&raw.omega_minus);
    let w0 = expand(&raw.omega_zero);
    let tilde = expand(&raw.omega_zero_tilde);

    let raw_h = plus.iter().zip(&minus).map(|(a, b)| a - b).sum::<f64>() / t as f64;
    let flipped = raw_h < -ZERO_TOL;
    if flipped {
        std::mem::swap(&mut plus, &mut minus);
    }
    let w_minus: Vec<f64> = minus.iter().zip(&plus).map(|(m, g)| m - g).collect();
    let w0_tilde: Vec<f64> = tilde.iter().zip(&plus).map(|(w, g)| w - g).collect();
    let mut h = -w_minus.iter().sum::<f64>() / t as f64;
    if h.abs() <= ZERO_TOL {
        h = 0.0;
    }

    // P(k) = sum_{n=1}^{k} (w_minus_n + h), k = 0..T-1
    let mut prefix = vec![0.0; t];
    for k in 1..t {
        prefix[k] = prefix[k - 1] + w_minus[k % t] + h;
    }

    Ok(CycleCharges { t, w_plus: vec![0.0; t], w_minus, w0, w0_tilde, gauge: plus, flipped, h, prefix })
}

impl CycleCharges {
    pub fn class(&self, n: usize) -> usize {
        n % self.t
    }

    /// Mean of the removed positive-side charge; rawF = F + this.
    pub fn gauge_mean(&self) -> f64 {
        self.gauge.iter().sum::<f64>() / self.t as f64
    }

    /// Sum of the gauge over monomers 1..=n.
    pub fn gauge_sum(&self, n: usize) -> f64 {
        let full = (n / self.t) as f64 * self.gauge.iter().sum::<f64>();
        full + (1..=n % self.t).map(|k| self.gauge[k % self.t]).sum::<f64>()
    }

    /// Sigma_{alpha, beta}, the periodic part of the drift between classes.
    pub fn sigma(&self, alpha: usize, beta: usize) -> f64 {
        self.prefix[beta] - self.prefix[alpha]
    }

    pub fn sigma_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.t, self.t, |a, b| self.sigma(a, b))
    }

    pub fn h_is_zero(&self) -> bool {
        self.h.abs() <= ZERO_TOL
    }

    pub fn sigma_is_zero(&self) -> bool {
        (0..self.t).all(|b| self.sigma(0, b).abs() <= ZERO_TOL)
    }

    /// Log-weight of an excursion of length l leaving class alpha.
    pub fn phi(&self, alpha: usize, l: usize) -> f64 {
        assert!(l >= 1, "excursion length must be positive");
        let beta = (alpha + l) % self.t;
        if l == 1 {
            self.w0[beta] + self.w0_tilde[beta] - self.w_plus[beta]
        } else {
            let x = -(l as f64) * self.h + self.sigma(alpha, beta);
            self.w0[beta] + ln_1p_exp(x) - std::f64::consts::LN_2
        }
    }

    /// Weights (positive side, negative side) of an excursion of length
    /// l >= 2 from alpha, excluding the walk factor K(l).
    pub fn sign_weights(&self, alpha: usize, l: usize) -> (f64, f64) {
        let beta = (alpha + l) % self.t;
        let base = 0.5 * self.w0[beta].exp();
        let x = -(l as f64) * self.h + self.sigma(alpha, beta);
        (base, base * x.exp())
    }
}

fn ln_1p_exp(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// True when the limit measures depend on the boundary condition: strictly
/// delocalized, h = 0 and a non-trivial Sigma.
pub fn in_p_less(c: &CycleCharges, delta: f64, tol: f64) -> bool {
    delta < 1.0 - tol && c.h_is_zero() && !c.sigma_is_zero()
}

/// The encoded return kernel and the matrices derived from it.
#[derive(Debug, Clone)]
pub struct KernelSet {
    pub charges: CycleCharges,
    walk: Arc<WalkLaw>,
    n_max: usize,
    m: Vec<f64>,
    tail: LatticeTail,
    /// B, including the correction for holding times beyond n_max.
    pub b: DMatrix<f64>,
    /// The part of B coming from holding times beyond n_max.
    pub b_tail: DMatrix<f64>,
    /// Estimated error of `b_tail`.
    pub tail_error: f64,
    pub tail_corrected: bool,
    l: Option<(DMatrix<f64>, DMatrix<f64>)>,
}

/// Builds M_alpha(n) = e^{Phi_alpha(n)} K(n) for n = 1..=n_max and B.
pub fn m_kernel(c: &CycleCharges, walk: Arc<WalkLaw>, n_max: usize) -> Result<KernelSet> {
    if walk.n_max() < n_max {
        return Err(Error::Horizon { table: walk.n_max(), requested: n_max });
    }
    if n_max < 2 {
        return Err(Error::InvalidParameter("n_max must be at least 2".into()));
    }
    let t = c.t;
    let mut m = vec![0.0; t * n_max];
    for alpha in 0..t {
        let row = &mut m[alpha * n_max..(alpha + 1) * n_max];
        for (i, slot) in row.iter_mut().enumerate() {
            let n = i + 1;
            *slot = c.phi(alpha, n).exp() * walk.k(n);
        }
    }
    let tail = LatticeTail::new(&walk, n_max);
    let mut ks = KernelSet {
        charges: c.clone(),
        walk,
        n_max,
        m,
        tail,
        b: DMatrix::zeros(t, t),
        b_tail: DMatrix::zeros(t, t),
        tail_error: 0.0,
        tail_corrected: false,
        l: None,
    };
    b_matrix(&mut ks);
    ks.l = l_matrices(c, &ks.walk).ok();
    Ok(ks)
}

/// Convenience: normalize, tabulate the walk and build the kernel in one go.
pub fn build(raw: &RawCharges, p: f64, n_max: usize) -> Result<KernelSet> {
    let c = normalize(raw)?;
    let walk = Arc::new(crate::walk::first_return_law(p, n_max)?);
    m_kernel(&c, walk, n_max)
}

/// Fills B = sum_n M(n) by class, with the tail beyond n_max completed.
pub fn b_matrix(ks: &mut KernelSet) {
    let t = ks.t();
    let mut b = DMatrix::zeros(t, t);
    for alpha in 0..t {
        let row = ks.m_row(alpha);
        let mut acc = vec![0.0; t];
        for (i, &v) in row.iter().enumerate() {
            acc[(alpha + i + 1) % t] += v;
        }
        for beta in 0..t {
            b[(alpha, beta)] = acc[beta];
        }
    }
    let mut err: f64 = 0.0;
    let b_tail = DMatrix::from_fn(t, t, |alpha, beta| {
        let r = (beta + t - alpha) % t;
        let (plus, minus) = ks.charges.sign_weights(alpha, ks.tail.first_index(r, t));
        err = err.max(plus * ks.tail.error_estimate(r, t, 0.0) + minus * ks.tail.error_estimate(r, t, ks.charges.h));
        ks.tail_entry(alpha, beta, 0.0)
    });
    let truncated_min = b.iter().cloned().fold(f64::INFINITY, f64::min);
    if err > 1e-6 * truncated_min {
        log::warn!("tail completion of B uncertain at n_max = {} (estimated error {:e})", ks.n_max, err);
    }
    ks.b = b + &b_tail;
    ks.b_tail = b_tail;
    ks.tail_error = err;
    ks.tail_corrected = true;
}

/// L and L~, the limits of n^{3/2} M along residue classes.
pub fn l_matrices(c: &CycleCharges, walk: &WalkLaw) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let ck = walk.c_k()?;
    let t = c.t;
    let lt = DMatrix::from_fn(t, t, |a, b| if c.h_is_zero() { ck * (1.0 + c.sigma(a, b).exp()) } else { ck });
    let l = DMatrix::from_fn(t, t, |a, b| 0.5 * c.w0[b].exp() * lt[(a, b)]);
    Ok((l, lt))
}

impl KernelSet {
    pub fn t(&self) -> usize {
        self.charges.t
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn walk(&self) -> &WalkLaw {
        &self.walk
    }

    pub fn walk_arc(&self) -> Arc<WalkLaw> {
        Arc::clone(&self.walk)
    }

    pub fn lattice_tail(&self) -> &LatticeTail {
        &self.tail
    }

    /// M_alpha(n) for n = 1..=n_max, stored at index n - 1.
    pub fn m_row(&self, alpha: usize) -> &[f64] {
        &self.m[alpha * self.n_max..(alpha + 1) * self.n_max]
    }

    /// M_alpha(n); beyond the table the walk's large-n form of K is used.
    pub fn m(&self, alpha: usize, n: usize) -> f64 {
        if n == 0 {
            0.0
        } else if n <= self.n_max {
            self.m[alpha * self.n_max + n - 1]
        } else {
            self.charges.phi(alpha, n).exp() * self.walk.k(n)
        }
    }

    /// Sum of M_alpha(n) e^{-b n} over n > n_max with alpha + [n] = beta.
    pub fn tail_entry(&self, alpha: usize, beta: usize, b: f64) -> f64 {
        let (plus, minus) = self.tail_entry_split(alpha, beta, b);
        plus + minus
    }

    /// The same sum split into positive and negative excursions.
    pub fn tail_entry_split(&self, alpha: usize, beta: usize, b: f64) -> (f64, f64) {
        let t = self.t();
        let r = (beta + t - alpha) % t;
        let c = &self.charges;
        let base = 0.5 * c.w0[beta].exp();
        let plus = base * self.tail.sum(r, t, b);
        let minus = base * c.sigma(alpha, beta).exp() * self.tail.sum(r, t, b + c.h);
        (plus, minus)
    }

    pub fn l(&self) -> Result<&DMatrix<f64>> {
        self.l.as_ref().map(|x| &x.0).ok_or_else(|| self.missing_ck())
    }

    pub fn l_tilde(&self) -> Result<&DMatrix<f64>> {
        self.l.as_ref().map(|x| &x.1).ok_or_else(|| self.missing_ck())
    }

    fn missing_ck(&self) -> Error {
        match self.walk.c_k() {
            Err(e) => e,
            Ok(_) => Error::InvalidParameter("asymptotic matrices unavailable".into()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn raw(plus: &[f64], minus: &[f64], zero: &[f64], tilde: &[f64]) -> RawCharges {
        RawCharges {
            omega_plus: plus.to_vec(),
            omega_minus: minus.to_vec(),
            omega_zero: zero.to_vec(),
            omega_zero_tilde: tilde.to_vec(),
        }
    }

    #[test]
    fn normalize_examples() {
        let c = normalize(&RawCharges::zero()).unwrap();
        assert_eq!(c.t, 1);
        assert_eq!(c.h, 0.0);

        let c = normalize(&raw(&[1.0, 0.0], &[0.0], &[0.0], &[0.0])).unwrap();
        assert_eq!(c.t, 2);
        assert!((c.h - 0.5).abs() < 1e-15);
        assert_eq!(c.w_minus, vec![-1.0, 0.0]);
        assert_eq!(c.w_plus, vec![0.0, 0.0]);

        let c = normalize(&raw(&[0.0, -1.0], &[0.0, 1.0], &[0.0], &[0.0])).unwrap();
        assert!(c.flipped);
        assert!((c.h - 1.0).abs() < 1e-15);
    }

    #[test]
    fn period_is_lcm() {
        let c = normalize(&raw(&[0.1, 0.2], &[0.0, 0.1, 0.3], &[0.0], &[0.5, 0.1, 0.2, 0.3])).unwrap();
        assert_eq!(c.t, 12);
    }

    #[test]
    fn rejects_non_finite() {
        let bad = raw(&[0.0, f64::NAN], &[0.0], &[0.0], &[0.0]);
        assert!(matches!(normalize(&bad), Err(Error::NonFinite { field: "omega_plus", index: 1 })));
        let empty = raw(&[], &[0.0], &[0.0], &[0.0]);
        assert!(normalize(&empty).is_err());
    }

    #[test]
    fn sigma_examples() {
        // value 1 on odd monomers, 0 on even ones
        let c = normalize(&raw(&[0.0, 1.0], &[0.0], &[0.0], &[0.0])).unwrap();
        assert!((c.h - 0.5).abs() < 1e-15);
        assert!((c.sigma(0, 1) + 0.5).abs() < 1e-15);
        assert!((c.sigma(1, 0) - 0.5).abs() < 1e-15);

        let same = normalize(&raw(&[0.3, -0.2], &[0.3, -0.2], &[0.0], &[0.0])).unwrap();
        assert!(same.sigma_matrix().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sigma_matches_defining_sum() {
        let c = normalize(&raw(&[0.3, -0.7, 0.2], &[0.1, 0.4, -0.9], &[0.0], &[0.0])).unwrap();
        for n1 in 0..9usize {
            for n2 in n1..n1 + 10 {
                let direct: f64 = (n1 + 1..=n2).map(|n| c.w_minus[n % c.t] - c.w_plus[n % c.t]).sum();
                let formula = -((n2 - n1) as f64) * c.h + c.sigma(n1 % c.t, n2 % c.t);
                assert!((direct - formula).abs() < 1e-12, "{n1} {n2}");
            }
        }
    }

    #[test]
    fn phi_examples() {
        let c = normalize(&RawCharges::zero()).unwrap();
        assert_eq!(c.phi(0, 1), 0.0);
        assert!(c.phi(0, 2).abs() < 1e-15);
        let c = normalize(&RawCharges::pinning(-1.0)).unwrap();
        assert!((c.phi(0, 5) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn kernel_examples() {
        let walk = Arc::new(crate::walk::first_return_law(0.3, 4096).unwrap());
        let zero = m_kernel(&normalize(&RawCharges::zero()).unwrap(), walk.clone(), 4096).unwrap();
        for n in 1..100 {
            assert_eq!(zero.m(0, n), walk.k(n));
        }
        assert!((zero.b[(0, 0)] - 1.0).abs() < 1e-12);

        let pin = m_kernel(&normalize(&RawCharges::pinning(0.7)).unwrap(), walk.clone(), 4096).unwrap();
        for n in 2..100 {
            assert!((pin.m(0, n) - 0.7f64.exp() * walk.k(n)).abs() < 1e-15);
        }
        assert!((pin.b[(0, 0)] - 0.7f64.exp()).abs() < 1e-11);

        let (l, lt) = (zero.l().unwrap(), zero.l_tilde().unwrap());
        let ck = walk.c_k().unwrap();
        assert!((l[(0, 0)] - ck).abs() < 1e-15);
        assert!((lt[(0, 0)] - 2.0 * ck).abs() < 1e-15);
    }

    #[test]
    fn zero_charges_period_two_rows_are_stochastic() {
        let walk = Arc::new(crate::walk::first_return_law(0.3, 4096).unwrap());
        let c = normalize(&raw(&[0.0, 0.0], &[0.0], &[0.0], &[0.0])).unwrap();
        let ks = m_kernel(&c, walk, 4096).unwrap();
        for a in 0..2 {
            let row: f64 = ks.b.row(a).iter().sum();
            assert!((row - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn phi_recomputed_independently() {
        let walk = Arc::new(crate::walk::first_return_law(0.3, 64).unwrap());
        let r = raw(&[0.4, -0.3], &[0.2, 0.9, -0.5], &[-0.2], &[0.6, 0.1]);
        let c = normalize(&r).unwrap();
        let ks = m_kernel(&c, walk.clone(), 64).unwrap();
        for alpha in 0..c.t {
            for l in 1..=12 {
                let beta = (alpha + l) % c.t;
                let expected = if l == 1 {
                    c.w0[beta] + c.w0_tilde[beta]
                } else {
                    let drift: f64 = (alpha + 1..=alpha + l).map(|n| c.w_minus[n % c.t]).sum();
                    c.w0[beta] + (0.5 * (1.0 + drift.exp())).ln()
                };
                assert!((ks.m(alpha, l) - expected.exp() * walk.k(l)).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn p_less_membership() {
        let zero = normalize(&RawCharges::zero()).unwrap();
        assert!(!in_p_less(&zero, 1.0, 1e-9));
        let pin = normalize(&RawCharges::pinning(-1.0)).unwrap();
        assert!(!in_p_less(&pin, 0.3, 1e-9));
        let drift = normalize(&raw(&[0.5, 0.0], &[0.0], &[-2.0], &[0.0])).unwrap();
        assert!(!in_p_less(&drift, 0.3, 1e-9));
        let p_less = normalize(&raw(&[0.0], &[0.5, -0.5], &[-2.0], &[0.0])).unwrap();
        assert!(in_p_less(&p_less, 0.3, 1e-9));
    }

    proptest! {
        #[test]
        fn cocycle_and_gauge(plus in prop::collection::vec(-1.0f64..1.0, 1..5),
                             minus in prop::collection::vec(-1.0f64..1.0, 1..5)) {
            let c = normalize(&raw(&plus, &minus, &[0.0], &[0.0])).unwrap();
            prop_assert!(c.h >= 0.0);
            prop_assert!(c.w_plus.iter().all(|&v| v == 0.0));
            for a in 0..c.t {
                prop_assert_eq!(c.sigma(a, a), 0.0);
                for b in 0..c.t {
                    prop_assert_eq!(c.sigma(a, b), c.sigma(0, b) - c.sigma(0, a));
                    for g in 0..c.t {
                        prop_assert!((c.sigma(a, b) + c.sigma(b, g) - c.sigma(a, g)).abs() < 1e-14);
                    }
                }
            }
        }
    }
}
