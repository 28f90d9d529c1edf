//! Exact path samplers. A path is built in three layers: the contact set,
//! one sign per excursion, and the excursion moduli.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::charges::KernelSet;
use crate::error::{Error, Result};
use crate::limits::{GibbsEntry, SemiMarkovKernel};
use crate::partition::{Boundary, PartitionTable};
use crate::walk::{conditioned_step_kernel, ln_point_prob};

/// Sub-samplers, each drawing from its own stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    Contacts = 1,
    Signs = 2,
    Moduli = 3,
}

/// Independent stream for (seed, sample index, component).
pub fn stream(seed: u64, index: u64, component: Component) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index.wrapping_mul(8).wrapping_add(component as u64));
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Excursion {
    pub start: usize,
    pub len: usize,
    /// +1, -1, or 0 for a stay at the interface.
    pub sign: i8,
    /// False for the last excursion when it is cut by the horizon.
    pub complete: bool,
}

/// Contacts and signs, without the moduli.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Skeleton {
    pub n: usize,
    pub excursions: Vec<Excursion>,
    /// Raw orientation of the signs.
    pub flipped: bool,
}

impl Skeleton {
    pub fn contacts(&self) -> Vec<usize> {
        self.excursions.iter().filter(|e| e.complete).map(|e| e.start + e.len).collect()
    }

    /// (1/N) sum_n sign(S_n), bond convention.
    pub fn mean_sign(&self) -> f64 {
        let total: i64 = self
            .excursions
            .iter()
            .map(|e| e.sign as i64 * (e.len.min(self.n - e.start.min(self.n))) as i64)
            .sum();
        total as f64 / self.n as f64
    }

    pub fn last_sign(&self) -> i8 {
        self.excursions.last().map_or(0, |e| e.sign)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathSample {
    pub steps: Vec<i64>,
    pub contacts: Vec<usize>,
    pub signs: Vec<i8>,
    pub seed: u64,
    pub index: u64,
    /// The last excursion was cut by the horizon.
    pub censored: bool,
}

fn orient(sign: i8, flipped: bool) -> i8 {
    if flipped {
        -sign
    } else {
        sign
    }
}

/// Draws the contact set and the signs of a finite-volume path of length n.
pub fn sample_finite_skeleton(
    ks: &KernelSet,
    table: &PartitionTable,
    a: Boundary,
    n: usize,
    seed: u64,
    index: u64,
) -> Result<Skeleton> {
    if n == 0 || n > table.n || table.t != ks.t() {
        return Err(Error::Horizon { table: table.n, requested: n });
    }
    if a == Boundary::Free && !table.has_free() {
        return Err(Error::InvalidParameter("free sampling needs the free tables".into()));
    }
    let c = &ks.charges;
    let t = c.t;
    let tilt = table.tilt;
    let mut contacts_rng = stream(seed, index, Component::Contacts);
    let mut signs_rng = stream(seed, index, Component::Signs);
    let mut excursions = Vec::new();
    let mut cur = 0usize;
    while cur < n {
        let alpha = cur % t;
        let rem = n - cur;
        let total = table.z_tilted(a, alpha, rem);
        let target = contacts_rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut chosen = None;
        for l in 1..=rem {
            let w = ks.m(alpha, l) * (-tilt * l as f64).exp() * table.z_tilted(a, (cur + l) % t, rem - l);
            acc += w;
            if acc > target {
                chosen = Some(l);
                break;
            }
        }
        match (chosen, a) {
            (None, Boundary::Free) => {
                // unfinished excursion up to the horizon
                let e = (-(rem as f64) * c.h + c.sigma(alpha, n % t)).exp();
                let sign = if signs_rng.random::<f64>() * (1.0 + e) < 1.0 { 1 } else { -1 };
                excursions.push(Excursion { start: cur, len: rem, sign: orient(sign, c.flipped), complete: false });
                cur = n;
            }
            _ => {
                let l = chosen.unwrap_or(rem);
                let sign = if l == 1 {
                    0
                } else {
                    let (wp, wm) = c.sign_weights(alpha, l);
                    if signs_rng.random::<f64>() * (wp + wm) < wp {
                        1
                    } else {
                        -1
                    }
                };
                excursions.push(Excursion { start: cur, len: l, sign: orient(sign, c.flipped), complete: true });
                cur += l;
            }
        }
    }
    Ok(Skeleton { n, excursions, flipped: c.flipped })
}

/// A full finite-volume path.
pub fn sample_finite(
    ks: &KernelSet,
    table: &PartitionTable,
    a: Boundary,
    n: usize,
    seed: u64,
    index: u64,
) -> Result<PathSample> {
    let skel = sample_finite_skeleton(ks, table, a, n, seed, index)?;
    let mut rng = stream(seed, index, Component::Moduli);
    let p = ks.walk().p();
    let mut steps = vec![0i64; n + 1];
    for e in &skel.excursions {
        if e.sign == 0 {
            continue;
        }
        let heights = if e.complete { excursion(p, e.len, &mut rng) } else { meander(p, e.len, &mut rng) };
        for (i, h) in heights.iter().enumerate() {
            steps[e.start + i] = e.sign as i64 * *h as i64;
        }
    }
    let censored = skel.excursions.last().is_some_and(|e| !e.complete);
    Ok(PathSample {
        contacts: skel.contacts(),
        signs: skel.excursions.iter().map(|e| e.sign).collect(),
        steps,
        seed,
        index,
        censored,
    })
}

/// Heights x_0 = x, ..., x_r = 0 of a walk staying positive before time r.
pub fn first_passage_path<R: Rng>(p: f64, x: u64, r: u64, rng: &mut R) -> Vec<u64> {
    assert!(x >= 1 && r >= x, "first passage from {x} in {r} steps is impossible");
    let c = 1.0 - 2.0 * p;
    let mut path = Vec::with_capacity(r as usize + 1);
    path.push(x);
    let mut cur = x;
    for i in 0..r {
        let left = r - i;
        if left == 1 {
            debug_assert_eq!(cur, 1);
            path.push(0);
            break;
        }
        let s = left - 1;
        // g_s(y) = (y / s) P(S_s = y), the law of hitting 0 first at time s from y
        let mut logs = [f64::NEG_INFINITY; 3];
        for (j, y) in [cur - 1, cur, cur + 1].into_iter().enumerate() {
            if y == 0 || y > s {
                continue;
            }
            let step = if y == cur { c } else { p };
            logs[j] = step.ln() + (y as f64 / s as f64).ln() + ln_point_prob(p, s, y as i64);
        }
        let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
        let u = rng.random::<f64>() * (w[0] + w[1] + w[2]);
        cur = if u < w[0] {
            cur - 1
        } else if u < w[0] + w[1] {
            cur
        } else {
            cur + 1
        };
        path.push(cur);
    }
    path
}

/// Modulus of a complete excursion of length l >= 2: 0, 1, ..., 1, 0.
pub fn excursion<R: Rng>(p: f64, l: usize, rng: &mut R) -> Vec<u64> {
    assert!(l >= 2);
    let mut path = vec![0];
    path.extend(first_passage_path(p, 1, (l - 1) as u64, rng));
    path
}

/// Modulus of an unfinished excursion of length m >= 1: a path from 0 that
/// stays positive at times 1..=m.
pub fn meander<R: Rng>(p: f64, m: usize, rng: &mut R) -> Vec<u64> {
    assert!(m >= 1);
    if m == 1 {
        return vec![0, 1];
    }
    let s = (m - 1) as u64;
    let point = |k: u64| ln_point_prob(p, s, k as i64).exp();
    // endpoint law: P(S_s = y - 1) - P(S_s = y + 1), telescoping cdf
    let total = point(0) + point(1);
    let cdf = |y: u64| total - point(y) - point(y + 1);
    let target = rng.random::<f64>() * total;
    let (mut lo, mut hi) = (1u64, m as u64);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if cdf(mid) >= target {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    let mut path = first_passage_path(p, lo, m as u64, rng);
    path.reverse();
    path
}

/// Cumulative rows of a kernel for fast draws.
#[derive(Debug, Clone)]
pub struct KernelSampler {
    t: usize,
    n_cut: usize,
    escape: Vec<f64>,
    cum: Vec<Vec<f64>>,
    beyond: Vec<Vec<(usize, i8, f64)>>,
    defective: bool,
}

/// Outcome of one draw from a kernel row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Jump {
    Hold(usize),
    /// Holding time beyond the table, with target class and sign.
    Beyond(usize, i8),
    Escape,
}

impl KernelSampler {
    pub fn new(kernel: &SemiMarkovKernel) -> Self {
        let t = kernel.t;
        let cum = (0..t)
            .map(|a| {
                let mut acc = kernel.escape[a];
                kernel
                    .hold_row(a)
                    .iter()
                    .map(|g| {
                        acc += g;
                        acc
                    })
                    .collect()
            })
            .collect();
        let beyond = (0..t)
            .map(|a| {
                let mut out = Vec::new();
                for b in 0..t {
                    out.push((b, 1i8, kernel.beyond_plus[a][b]));
                    out.push((b, -1i8, kernel.beyond_minus[a][b]));
                }
                out
            })
            .collect();
        KernelSampler { t, n_cut: kernel.n_cut, escape: kernel.escape.clone(), cum, beyond, defective: kernel.defective }
    }

    pub fn draw<R: Rng>(&self, alpha: usize, rng: &mut R) -> Jump {
        let row: &Vec<f64> = &self.cum[alpha];
        let total = row.last().copied().unwrap_or(self.escape[alpha])
            + self.beyond[alpha].iter().map(|x| x.2).sum::<f64>();
        let u = rng.random::<f64>() * total;
        if u < self.escape[alpha] {
            return Jump::Escape;
        }
        let idx = row.partition_point(|&c| c <= u);
        if idx < self.n_cut {
            return Jump::Hold(idx + 1);
        }
        let mut rest = u - row.last().copied().unwrap_or(0.0);
        for &(b, s, w) in &self.beyond[alpha] {
            if rest < w {
                return Jump::Beyond(b, s);
            }
            rest -= w;
        }
        // rounding at the very end of the row
        Jump::Hold(self.n_cut)
    }
}

/// Infinite-volume path up to a horizon. `last` gives the law of the sign of
/// the escaping excursion and is required for defective kernels.
pub fn sample_infinite(
    ks: &KernelSet,
    kernel: &SemiMarkovKernel,
    last: Option<&GibbsEntry>,
    horizon: usize,
    seed: u64,
    index: u64,
) -> Result<PathSample> {
    let sampler = KernelSampler::new(kernel);
    let skel = sample_infinite_skeleton(ks, &sampler, last, horizon, seed, index)?;
    let p = ks.walk().p();
    let up = conditioned_step_kernel(p)?;
    let mut rng = stream(seed, index, Component::Moduli);
    let mut steps = vec![0i64; horizon + 1];
    for e in &skel.excursions {
        if e.sign == 0 {
            continue;
        }
        let room = horizon - e.start;
        let heights: Vec<u64> = if e.len < usize::MAX {
            let mut full = excursion(p, e.len, &mut rng);
            full.truncate(room + 1);
            full
        } else {
            // escaping or beyond the table: walk conditioned to stay positive
            let mut x = 0u64;
            let mut v = vec![0u64];
            for _ in 0..room {
                x = up.step(x, rng.random::<f64>());
                v.push(x);
            }
            v
        };
        for (i, h) in heights.iter().enumerate() {
            steps[e.start + i] = e.sign as i64 * *h as i64;
        }
    }
    let censored = skel.excursions.last().is_some_and(|e| !e.complete);
    Ok(PathSample {
        contacts: skel.contacts(),
        signs: skel.excursions.iter().map(|e| e.sign).collect(),
        steps,
        seed,
        index,
        censored,
    })
}

/// Contacts and signs of an infinite-volume path up to a horizon. An
/// excursion that never ends (escape, or beyond the table) has len = usize::MAX.
pub fn sample_infinite_skeleton(
    ks: &KernelSet,
    sampler: &KernelSampler,
    last: Option<&GibbsEntry>,
    horizon: usize,
    seed: u64,
    index: u64,
) -> Result<Skeleton> {
    if sampler.t != ks.t() {
        return Err(Error::InvalidParameter("kernel and charges have different periods".into()));
    }
    if sampler.defective && last.is_none() {
        return Err(Error::Regime("a defective kernel needs the last-sign law".into()));
    }
    let c = &ks.charges;
    let t = c.t;
    let mut contacts_rng = stream(seed, index, Component::Contacts);
    let mut signs_rng = stream(seed, index, Component::Signs);
    let mut excursions = Vec::new();
    let mut cur = 0usize;
    while cur < horizon {
        let alpha = cur % t;
        match sampler.draw(alpha, &mut contacts_rng) {
            Jump::Hold(l) => {
                let sign = if l == 1 {
                    0
                } else {
                    let (wp, wm) = c.sign_weights(alpha, l);
                    if signs_rng.random::<f64>() * (wp + wm) < wp {
                        1
                    } else {
                        -1
                    }
                };
                let complete = cur + l <= horizon;
                excursions.push(Excursion { start: cur, len: l, sign: orient(sign, c.flipped), complete });
                cur += l;
            }
            Jump::Beyond(_, sign) => {
                excursions.push(Excursion { start: cur, len: usize::MAX, sign: orient(sign, c.flipped), complete: false });
                break;
            }
            Jump::Escape => {
                let entry = last.expect("checked above");
                let plus = entry.plus_given_last(ks, alpha);
                let sign = if signs_rng.random::<f64>() < plus { 1 } else { -1 };
                excursions.push(Excursion { start: cur, len: usize::MAX, sign: orient(sign, c.flipped), complete: false });
                break;
            }
        }
    }
    Ok(Skeleton { n: horizon, excursions, flipped: c.flipped })
}

/// P(n in tau) for n = 0..=n_max under a proper kernel started at class 0.
pub fn renewal_mass(kernel: &SemiMarkovKernel, n_max: usize) -> Result<Vec<f64>> {
    if kernel.defective {
        return Err(Error::Regime("renewal mass needs a proper kernel".into()));
    }
    let t = kernel.t;
    let mut u = vec![0.0; n_max + 1];
    u[0] = 1.0;
    for n in 1..=n_max {
        let mut s = 0.0;
        for m in 1..=n.min(kernel.n_cut) {
            s += u[n - m] * kernel.hold((n - m) % t, m);
        }
        u[n] = s;
    }
    Ok(u)
}

/// Limits of P(N in tau) along each class: T pi_beta / sum_alpha pi_alpha m_alpha,
/// with pi the stationary law of the class chain and m the mean holding times.
pub fn renewal_limits(kernel: &SemiMarkovKernel) -> Result<Vec<f64>> {
    if kernel.defective {
        return Err(Error::Regime("renewal limits need a proper kernel".into()));
    }
    let t = kernel.t;
    let p = kernel.class_matrix();
    let mut pi = vec![1.0 / t as f64; t];
    for _ in 0..100_000 {
        let next: Vec<f64> = (0..t).map(|b| (0..t).map(|a| pi[a] * p[(a, b)]).sum()).collect();
        let s: f64 = next.iter().sum();
        let next: Vec<f64> = next.iter().map(|v| v / s).collect();
        let moved = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        pi = next;
        if moved < 1e-15 {
            break;
        }
    }
    let mean: f64 = (0..t).map(|a| pi[a] * kernel.partial_mean(a)).sum();
    Ok(pi.iter().map(|v| t as f64 * v / mean).collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct BatchSummary {
    pub samples: usize,
    pub horizon: usize,
    pub contact_fraction: f64,
    pub last_sign_plus: f64,
    pub endpoint_mean: f64,
    pub endpoint_sd: f64,
    pub mean_sign: f64,
    pub censored_fraction: f64,
}

pub fn summarize(paths: &[PathSample]) -> BatchSummary {
    let n = paths.len().max(1) as f64;
    let horizon = paths.first().map_or(0, |p| p.steps.len() - 1);
    let ends: Vec<f64> = paths.iter().map(|p| *p.steps.last().unwrap_or(&0) as f64).collect();
    let mean = ends.iter().sum::<f64>() / n;
    let var = ends.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    let sign_of = |p: &PathSample| -> f64 {
        (1..p.steps.len())
            .map(|k| {
                let s = if p.steps[k] != 0 { p.steps[k].signum() } else { p.steps[k - 1].signum() };
                s as f64
            })
            .sum::<f64>()
            / horizon.max(1) as f64
    };
    BatchSummary {
        samples: paths.len(),
        horizon,
        contact_fraction: paths.iter().map(|p| p.contacts.len() as f64 / horizon.max(1) as f64).sum::<f64>() / n,
        last_sign_plus: paths.iter().filter(|p| p.signs.last().is_some_and(|&s| s > 0)).count() as f64 / n,
        endpoint_mean: mean,
        endpoint_sd: var.sqrt(),
        mean_sign: paths.iter().map(sign_of).sum::<f64>() / n,
        censored_fraction: paths.iter().filter(|p| p.censored).count() as f64 / n,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::charges::{build, RawCharges};

    #[test]
    fn paths_are_valid_and_reproducible() {
        let raw = RawCharges {
            omega_plus: vec![0.3, -0.2],
            omega_minus: vec![0.1],
            omega_zero: vec![0.2, -0.4, 0.1],
            omega_zero_tilde: vec![-0.3],
        };
        let ks = build(&raw, 0.3, 512).unwrap();
        let table = PartitionTable::build(&ks, 300).unwrap();
        for a in [Boundary::Free, Boundary::Constrained] {
            for i in 0..20 {
                let s = sample_finite(&ks, &table, a, 300, 11, i).unwrap();
                assert_eq!(s.steps[0], 0);
                assert!(s.steps.windows(2).all(|w| (w[1] - w[0]).abs() <= 1));
                let zeros: Vec<usize> = (1..=300).filter(|&k| s.steps[k] == 0).collect();
                assert_eq!(zeros, s.contacts);
                if a == Boundary::Constrained {
                    assert_eq!(*s.steps.last().unwrap(), 0);
                }
                // stays have sign 0 and longer excursions never do
                let again = sample_finite(&ks, &table, a, 300, 11, i).unwrap();
                assert_eq!(s, again);
            }
        }
    }

    #[test]
    fn excursion_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for l in 2..40 {
            let e = excursion(0.3, l, &mut rng);
            assert_eq!(e.len(), l + 1);
            assert_eq!((e[0], e[l]), (0, 0));
            assert!(e[1..l].iter().all(|&h| h > 0));
        }
        for m in 1..40 {
            let e = meander(0.3, m, &mut rng);
            assert_eq!(e.len(), m + 1);
            assert!(e[1..].iter().all(|&h| h > 0));
        }
    }

    #[test]
    fn zero_charges_renewal_mass_is_the_return_probability() {
        let ks = build(&RawCharges::zero(), 0.3, 4096).unwrap();
        let rep = crate::spectral::free_energy(&ks).unwrap();
        let ker = crate::spectral::gamma_kernel(&ks, &rep, 4096).unwrap();
        let u = renewal_mass(&ker, 300).unwrap();
        let table = PartitionTable::build(&ks, 300).unwrap();
        for n in [1, 2, 10, 300] {
            assert!((u[n] - table.log_zc(0, n).exp()).abs() < 1e-13);
        }
    }
}
