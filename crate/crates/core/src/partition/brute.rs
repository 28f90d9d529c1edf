//! Exhaustive enumeration of all 3^N paths with the raw Hamiltonian. Used as
//! the reference for the recursions.

use serde::Serialize;

use crate::charges::{normalize, RawCharges};
use crate::error::{Error, Result};

pub const MAX_N: usize = 14;

/// Summaries of one boundary condition.
#[derive(Debug, Clone, Serialize)]
pub struct BruteSummary {
    /// log of the raw partition function.
    pub log_z_raw: f64,
    /// log of the gauged partition function.
    pub log_z: f64,
    /// P(tau_1 = k), index k.
    pub first: Vec<f64>,
    /// P(tau_1 = k1, tau_2 = k2), index [k1][k2].
    pub pair: Vec<Vec<f64>>,
    /// P(k in tau), index k.
    pub site: Vec<f64>,
    /// Free: P(S_N > 0). Constrained: P(S_{N/2} > 0).
    pub sign_plus: f64,
    /// Path probabilities indexed by the base-3 code of the steps
    /// (digit i is step i+1 shifted by one), when requested.
    #[serde(skip)]
    pub paths: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BruteForce {
    pub n: usize,
    pub free: BruteSummary,
    pub constrained: BruteSummary,
    pub log_zplus_raw: f64,
    pub log_zminus_raw: f64,
    pub log_zplus: f64,
    pub log_zminus: f64,
    /// Sum of the gauge over monomers 1..=N.
    pub gauge_sum: f64,
}

impl BruteForce {
    pub fn summary(&self, a: crate::partition::Boundary) -> &BruteSummary {
        match a {
            crate::partition::Boundary::Free => &self.free,
            crate::partition::Boundary::Constrained => &self.constrained,
        }
    }
}

struct Acc {
    z: f64,
    first: Vec<f64>,
    pair: Vec<Vec<f64>>,
    site: Vec<f64>,
    sign_plus: f64,
    paths: Option<Vec<f64>>,
}

impl Acc {
    fn new(n: usize, keep: bool) -> Self {
        Acc {
            z: 0.0,
            first: vec![0.0; n + 1],
            pair: vec![vec![0.0; n + 1]; n + 1],
            site: vec![0.0; n + 1],
            sign_plus: 0.0,
            paths: keep.then(|| vec![0.0; 3usize.pow(n as u32)]),
        }
    }

    fn finish(self, shift: f64, gauge: f64) -> BruteSummary {
        let z = self.z;
        let scale = |v: Vec<f64>| v.into_iter().map(|x| x / z).collect::<Vec<_>>();
        BruteSummary {
            log_z_raw: z.ln() + shift,
            log_z: z.ln() + shift - gauge,
            first: scale(self.first),
            pair: self.pair.into_iter().map(scale).collect(),
            site: scale(self.site),
            sign_plus: self.sign_plus / z,
            paths: self.paths.map(scale),
        }
    }
}

/// Enumerates every path of length n (n <= 14).
pub fn brute_force(raw: &RawCharges, p: f64, n: usize, keep_paths: bool) -> Result<BruteForce> {
    raw.validate()?;
    if !(p > 0.0 && p < 0.5) {
        return Err(Error::InvalidParameter(format!("p must lie in (0, 1/2), got {p}")));
    }
    if n == 0 || n > MAX_N {
        return Err(Error::InvalidParameter(format!("enumeration needs 1 <= N <= {MAX_N}, got {n}")));
    }
    let c = 1.0 - 2.0 * p;
    let charges: Vec<[f64; 4]> = (0..=n).map(|k| raw.at(k)).collect();
    // per-site upper bound on the energy keeps every weight below one
    let shift: f64 = (1..=n)
        .map(|k| {
            let [wp, wm, w0, wt] = charges[k];
            [wp, wm, wp + w0, wm + w0, wt + w0].into_iter().fold(f64::NEG_INFINITY, f64::max)
        })
        .sum();

    let mut free = Acc::new(n, keep_paths);
    let mut cons = Acc::new(n, keep_paths);
    let mut z_plus = 0.0;
    let mut z_minus = 0.0;
    let total = 3usize.pow(n as u32);
    let mut heights = vec![0i64; n + 1];
    for code in 0..total {
        let mut rest = code;
        let mut weight = 1.0;
        let mut energy = 0.0;
        for k in 1..=n {
            let digit = rest % 3;
            rest /= 3;
            let step = digit as i64 - 1;
            weight *= if step == 0 { c } else { p };
            heights[k] = heights[k - 1] + step;
            let (prev, cur) = (heights[k - 1], heights[k]);
            let sign = if cur != 0 { cur.signum() } else { prev.signum() };
            let [wp, wm, w0, wt] = charges[k];
            energy += match sign {
                1 => wp,
                -1 => wm,
                _ => wt,
            };
            if cur == 0 {
                energy += w0;
            }
        }
        let w = weight * (energy - shift).exp();
        let contacts: Vec<usize> = (1..=n).filter(|&k| heights[k] == 0).collect();
        let end = heights[n];
        let mid = heights[n / 2];

        let record = |acc: &mut Acc| {
            acc.z += w;
            if let Some(&k1) = contacts.first() {
                acc.first[k1] += w;
                if let Some(&k2) = contacts.get(1) {
                    acc.pair[k1][k2] += w;
                }
            }
            for &k in &contacts {
                acc.site[k] += w;
            }
            if let Some(paths) = acc.paths.as_mut() {
                paths[code] += w;
            }
        };
        record(&mut free);
        if end > 0 {
            free.sign_plus += w;
            z_plus += w;
        } else if end < 0 {
            z_minus += w;
        } else {
            record(&mut cons);
            if mid > 0 {
                cons.sign_plus += w;
            }
        }
    }

    let gauge = normalize(raw)?.gauge_sum(n);
    Ok(BruteForce {
        n,
        free: free.finish(shift, gauge),
        constrained: cons.finish(shift, gauge),
        log_zplus_raw: z_plus.ln() + shift,
        log_zminus_raw: z_minus.ln() + shift,
        log_zplus: z_plus.ln() + shift - gauge,
        log_zminus: z_minus.ln() + shift - gauge,
        gauge_sum: gauge,
    })
}

/// Decodes a base-3 path code into heights S_0..S_N.
pub fn decode_path(code: usize, n: usize) -> Vec<i64> {
    let mut s = vec![0i64; n + 1];
    let mut rest = code;
    for k in 1..=n {
        s[k] = s[k - 1] + (rest % 3) as i64 - 1;
        rest /= 3;
    }
    s
}

/// Inverse of [`decode_path`].
pub fn encode_path(steps: &[i64]) -> usize {
    steps.windows(2).rev().fold(0, |acc, w| acc * 3 + (w[1] - w[0] + 1) as usize)
}
