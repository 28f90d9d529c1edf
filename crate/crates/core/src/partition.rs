//! Exact finite-volume partition functions by renewal recursion over the
//! contact set, contact-set marginals and endpoint-sign probabilities.
//!
//! Tables are kept in an exponentially tilted linear scale: the stored value
//! is Z_alpha(n) e^{-tilt n}. With the tilt set to the free energy the stored
//! values stay of order one in every regime, so plain dot products replace
//! log-sum-exp without any risk of overflow. Logarithms are returned by the
//! accessors.

pub mod brute;

use serde::{Deserialize, Serialize};

use crate::charges::KernelSet;
use crate::error::{Error, Result};
use crate::spectral::free_energy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Free,
    Constrained,
}

impl Boundary {
    pub fn name(&self) -> &'static str {
        match self {
            Boundary::Free => "free",
            Boundary::Constrained => "constrained",
        }
    }
}

impl std::str::FromStr for Boundary {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "free" | "f" => Ok(Boundary::Free),
            "constrained" | "c" => Ok(Boundary::Constrained),
            other => Err(Error::InvalidParameter(format!("unknown boundary '{other}'"))),
        }
    }
}

/// Weights below this fraction of the largest one are skipped.
const BAND: f64 = 1e-18;

#[derive(Debug, Clone)]
pub struct PartitionTable {
    pub n: usize,
    pub t: usize,
    pub tilt: f64,
    /// Orientation of the normalized charges; the sign-resolved accessors
    /// below translate back to the raw orientation.
    pub flipped: bool,
    zc: Vec<Vec<f64>>,
    zplus: Option<Vec<Vec<f64>>>,
    zminus: Option<Vec<Vec<f64>>>,
}

/// Growth rate used to tilt the tables.
pub fn default_tilt(ks: &KernelSet) -> f64 {
    free_energy(ks).map(|r| r.f).unwrap_or(0.0)
}

pub fn constrained_dp(ks: &KernelSet, n: usize) -> Result<PartitionTable> {
    PartitionTable::build_with_tilt(ks, n, default_tilt(ks), false)
}

pub fn free_dp(ks: &KernelSet, table: PartitionTable) -> Result<PartitionTable> {
    let mut table = table;
    table.fill_free(ks)?;
    Ok(table)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for i in 0..chunks {
        let j = 4 * i;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for j in 4 * chunks..n {
        s += a[j] * b[j];
    }
    s
}

fn strided_dot(a: &[f64], b: &[f64], stride: usize) -> f64 {
    a.iter().step_by(stride).zip(b.iter().step_by(stride)).map(|(x, y)| x * y).sum()
}

fn band_cut(rows: &[Vec<f64>]) -> usize {
    let len = rows.first().map_or(0, |r| r.len());
    let top = rows.iter().flat_map(|r| r.iter()).cloned().fold(0.0, f64::max);
    (0..len)
        .rev()
        .find(|&i| rows.iter().any(|r| r[i] >= BAND * top))
        .map_or(0, |i| i + 1)
}

impl PartitionTable {
    /// Constrained and free tables up to horizon n, tilted by the free energy.
    pub fn build(ks: &KernelSet, n: usize) -> Result<Self> {
        Self::build_with_tilt(ks, n, default_tilt(ks), true)
    }

    pub fn build_with_tilt(ks: &KernelSet, n: usize, tilt: f64, with_free: bool) -> Result<Self> {
        if n > ks.n_max() {
            return Err(Error::Horizon { table: ks.n_max(), requested: n });
        }
        if n > 1_000_000 {
            return Err(Error::InvalidParameter(format!("horizon {n} exceeds 10^6")));
        }
        let t = ks.t();
        let weights: Vec<Vec<f64>> = (0..t)
            .map(|alpha| {
                ks.m_row(alpha)[..n].iter().enumerate().map(|(i, m)| m * (-tilt * (i + 1) as f64).exp()).collect()
            })
            .collect();
        let cut = band_cut(&weights);

        // rev[g][n - j] = z_g(j), so that the holding-time weights and the
        // shifted values line up in increasing memory order
        let mut rev = vec![vec![0.0; n + 1]; t];
        for r in rev.iter_mut() {
            r[n] = 1.0;
        }
        let mut fresh = vec![0.0; t];
        for k in 1..=n {
            let len = k.min(cut);
            for alpha in 0..t {
                let w = &weights[alpha][..len];
                fresh[alpha] = if t == 1 {
                    dot(w, &rev[0][n - k + 1..n - k + 1 + len])
                } else {
                    (1..=t.min(len))
                        .map(|d| strided_dot(&w[d - 1..], &rev[(alpha + d) % t][n - k + d..], t))
                        .sum()
                };
            }
            for alpha in 0..t {
                rev[alpha][n - k] = fresh[alpha];
            }
        }
        let zc = rev.into_iter().map(|mut r| {
            r.reverse();
            r
        });
        let mut table = PartitionTable {
            n,
            t,
            tilt,
            flipped: ks.charges.flipped,
            zc: zc.collect(),
            zplus: None,
            zminus: None,
        };
        if with_free {
            table.fill_free(ks)?;
        }
        Ok(table)
    }

    /// Endpoint-resolved tables by conditioning on the last contact.
    fn fill_free(&mut self, ks: &KernelSet) -> Result<()> {
        let (n, t, tilt) = (self.n, self.t, self.tilt);
        if n > ks.n_max() || ks.t() != t {
            return Err(Error::Horizon { table: ks.n_max(), requested: n });
        }
        let c = &ks.charges;
        let walk = ks.walk();
        let qt: Vec<f64> = (1..=n).map(|l| walk.q(l) * (-tilt * l as f64).exp()).collect();
        let qh: Vec<f64> = qt.iter().enumerate().map(|(i, q)| q * (-c.h * (i + 1) as f64).exp()).collect();
        let cut = band_cut(std::slice::from_ref(&qt));
        let pref = |k: usize| c.sigma(0, k % t);

        let mut zplus = vec![vec![0.0; n + 1]; t];
        let mut zminus = vec![vec![0.0; n + 1]; t];
        for alpha in 0..t {
            let mut rev = self.zc[alpha].clone();
            rev.reverse();
            let revy: Vec<f64> = rev
                .iter()
                .enumerate()
                .map(|(i, z)| z * (-pref(alpha + n - i)).exp())
                .collect();
            for k in 1..=n {
                let len = k.min(cut);
                let window = n - k + 1..n - k + 1 + len;
                zplus[alpha][k] = dot(&qt[..len], &rev[window.clone()]);
                zminus[alpha][k] = pref(alpha + k).exp() * dot(&qh[..len], &revy[window]);
            }
        }
        self.zplus = Some(zplus);
        self.zminus = Some(zminus);
        Ok(())
    }

    pub fn has_free(&self) -> bool {
        self.zplus.is_some()
    }

    fn check(&self, alpha: usize, k: usize) {
        assert!(alpha < self.t && k <= self.n, "table lookup ({alpha}, {k}) outside T={} N={}", self.t, self.n);
    }

    fn free_parts(&self) -> (&Vec<Vec<f64>>, &Vec<Vec<f64>>) {
        (
            self.zplus.as_ref().expect("free tables not built"),
            self.zminus.as_ref().expect("free tables not built"),
        )
    }

    /// Tilted Z^c_alpha(k) e^{-tilt k}.
    pub fn zc_tilted(&self, alpha: usize, k: usize) -> f64 {
        self.check(alpha, k);
        self.zc[alpha][k]
    }

    /// Tilted Z^+ and Z^- in the normalized orientation.
    pub fn zpm_tilted(&self, alpha: usize, k: usize) -> (f64, f64) {
        self.check(alpha, k);
        let (p, m) = self.free_parts();
        (p[alpha][k], m[alpha][k])
    }

    pub fn zf_tilted(&self, alpha: usize, k: usize) -> f64 {
        let (p, m) = self.zpm_tilted(alpha, k);
        self.zc_tilted(alpha, k) + p + m
    }

    pub fn z_tilted(&self, a: Boundary, alpha: usize, k: usize) -> f64 {
        match a {
            Boundary::Constrained => self.zc_tilted(alpha, k),
            Boundary::Free => self.zf_tilted(alpha, k),
        }
    }

    fn lift(&self, v: f64, k: usize) -> f64 {
        v.ln() + self.tilt * k as f64
    }

    pub fn log_zc(&self, alpha: usize, k: usize) -> f64 {
        self.lift(self.zc_tilted(alpha, k), k)
    }

    pub fn log_zf(&self, alpha: usize, k: usize) -> f64 {
        self.lift(self.zf_tilted(alpha, k), k)
    }

    pub fn log_z(&self, a: Boundary, alpha: usize, k: usize) -> f64 {
        self.lift(self.z_tilted(a, alpha, k), k)
    }

    /// log Z over paths ending strictly above zero, raw orientation.
    pub fn log_zplus(&self, alpha: usize, k: usize) -> f64 {
        let (p, m) = self.zpm_tilted(alpha, k);
        self.lift(if self.flipped { m } else { p }, k)
    }

    /// log Z over paths ending strictly below zero, raw orientation.
    pub fn log_zminus(&self, alpha: usize, k: usize) -> f64 {
        let (p, m) = self.zpm_tilted(alpha, k);
        self.lift(if self.flipped { p } else { m }, k)
    }
}

fn check_points(points: &[usize], n: usize) -> Result<()> {
    if points.is_empty() {
        return Err(Error::Points("empty point list".into()));
    }
    let mut prev = 0;
    for &k in points {
        if k <= prev || k > n {
            return Err(Error::Points(format!("points must increase strictly within 1..={n}: {points:?}")));
        }
        prev = k;
    }
    Ok(())
}

/// P^a_N(tau_1 = k_1, ..., tau_j = k_j) for the first j contacts after 0.
pub fn contact_marginal(ks: &KernelSet, table: &PartitionTable, a: Boundary, points: &[usize]) -> Result<f64> {
    let n = table.n;
    check_points(points, n)?;
    let c = &ks.charges;
    let mut log_w = 0.0;
    let mut prev = 0;
    for &k in points {
        log_w += ks.m(c.class(prev), k - prev).ln() - table.tilt * (k - prev) as f64;
        prev = k;
    }
    let num = table.z_tilted(a, c.class(prev), n - prev).ln();
    let den = table.z_tilted(a, 0, n).ln();
    Ok((log_w + num - den).exp())
}

/// P^a_N(k in tau).
pub fn site_marginal(ks: &KernelSet, table: &PartitionTable, a: Boundary, k: usize) -> Result<f64> {
    check_points(&[k], table.n)?;
    let c = &ks.charges;
    let num = table.zc_tilted(0, k) * table.z_tilted(a, c.class(k), table.n - k);
    Ok(num / table.z_tilted(a, 0, table.n))
}

/// Free boundary: P^f_n(S_n > 0). Constrained: P^c_n(S_{n/2} > 0), the
/// excursion straddling the midpoint being resolved by its sign. Raw
/// orientation; n may be any horizon up to the table's.
pub fn endpoint_sign_prob(ks: &KernelSet, table: &PartitionTable, a: Boundary, n: usize) -> Result<f64> {
    let (plus, minus) = endpoint_sign_split(ks, table, a, n)?;
    Ok(if table.flipped { minus } else { plus })
}

/// (positive, negative) probabilities in the normalized orientation.
pub fn endpoint_sign_split(ks: &KernelSet, table: &PartitionTable, a: Boundary, n: usize) -> Result<(f64, f64)> {
    if n == 0 || n > table.n {
        return Err(Error::Horizon { table: table.n, requested: n });
    }
    match a {
        Boundary::Free => {
            let (p, m) = table.zpm_tilted(0, n);
            let z = table.zf_tilted(0, n);
            Ok((p / z, m / z))
        }
        Boundary::Constrained => {
            let c = &ks.charges;
            let t = c.t;
            let half = n / 2;
            let walk = ks.walk();
            let mut plus = 0.0;
            let mut minus = 0.0;
            for start in 0..half {
                let left = table.zc_tilted(0, start);
                if left == 0.0 {
                    continue;
                }
                let alpha = start % t;
                for end in half + 1..=n {
                    let l = end - start;
                    let right = table.zc_tilted(end % t, n - end);
                    let k = walk.k(l) * (-table.tilt * l as f64).exp();
                    let (wp, wm) = c.sign_weights(alpha, l);
                    plus += left * k * wp * right;
                    minus += left * k * wm * right;
                }
            }
            let z = table.zc_tilted(0, n);
            Ok((plus / z, minus / z))
        }
    }
}
