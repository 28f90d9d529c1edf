//! The lazy simple random walk: first-return law, tail masses, the tail
//! constant and the walk conditioned to stay positive.

use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// First-return law of the lazy walk with steps ±1 (prob. `p` each) and 0.
#[derive(Debug, Clone)]
pub struct WalkLaw {
    p: f64,
    k: Vec<f64>,
    q: Vec<f64>,
    c_k: Option<f64>,
    fit: (f64, f64),
}

fn check_p(p: f64) -> Result<()> {
    if !(p > 0.0 && p < 0.5) {
        return Err(Error::InvalidParameter(format!(
            "walk parameter p must lie in (0, 1/2), got {p}"
        )));
    }
    Ok(())
}

/// Tabulates K(n) for n = 1..=n_max by dynamic programming over excursion
/// heights. Heights that can no longer come back before n_max are dropped
/// into an escaped-mass accumulator so that Q stays exact.
pub fn first_return_law(p: f64, n_max: usize) -> Result<WalkLaw> {
    check_p(p)?;
    if n_max < 2 {
        return Err(Error::InvalidParameter(format!("n_max must be at least 2, got {n_max}")));
    }
    let c = 1.0 - 2.0 * p;
    let mut k = vec![0.0; n_max + 1];
    let mut q = vec![0.0; n_max + 1];
    q[0] = 1.0;
    k[1] = c;
    q[1] = 2.0 * p;

    // u[x]: mass at height x >= 1 of the positive side; u[0] stays 0.
    let width = n_max / 2 + 3;
    let mut u = vec![0.0; width];
    let mut next = vec![0.0; width];
    u[1] = p;
    let mut hi = 1usize;
    let mut escaped = 0.0;

    for n in 2..=n_max {
        k[n] = 2.0 * p * u[1];
        let m = hi + 1;
        {
            let (left, mid, right) = (&u[0..m], &u[1..m + 1], &u[2..m + 2]);
            for (((o, &l), &x), &r) in next[1..m + 1].iter_mut().zip(left).zip(mid).zip(right) {
                *o = c * x + p * (l + r);
            }
        }
        // a height x at time n cannot return before time n + x
        let cap = n_max - n;
        let mut new_hi = m;
        if cap < m {
            for slot in next.iter_mut().take(m + 1).skip(cap + 1) {
                escaped += 2.0 * *slot;
                *slot = 0.0;
            }
            new_hi = cap;
        }
        // far heights carry nothing representable; keep them out of the window
        while new_hi > 1 && next[new_hi] < 1e-290 {
            escaped += 2.0 * next[new_hi];
            next[new_hi] = 0.0;
            new_hi -= 1;
        }
        let alive: f64 = next[1..=new_hi.max(1)].iter().sum();
        q[n] = 2.0 * alive + escaped;
        std::mem::swap(&mut u, &mut next);
        next[..m + 2].iter_mut().for_each(|v| *v = 0.0);
        hi = new_hi.max(1);
    }

    let n1 = n_max as f64;
    let n2 = (n_max / 2) as f64;
    let c1 = k[n_max] * n1.powf(1.5);
    let c2 = k[n_max / 2] * n2.powf(1.5);
    let a1 = if n_max / 2 >= 1 && n1 != n2 { (c1 - c2) / (1.0 / n1 - 1.0 / n2) } else { 0.0 };
    let a0 = c1 - a1 / n1;

    let mut law = WalkLaw { p, k, q, c_k: None, fit: (a0, a1) };
    law.c_k = law.tail_constant().ok();
    Ok(law)
}

impl WalkLaw {
    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn stay(&self) -> f64 {
        1.0 - 2.0 * self.p
    }

    pub fn n_max(&self) -> usize {
        self.k.len() - 1
    }

    /// K(n); beyond the table the two-term fit a0 n^{-3/2} + a1 n^{-5/2}.
    pub fn k(&self, n: usize) -> f64 {
        if n == 0 {
            0.0
        } else if n < self.k.len() {
            self.k[n]
        } else {
            let x = n as f64;
            (self.fit.0 + self.fit.1 / x) * x.powf(-1.5)
        }
    }

    /// The table K(0..=n_max), with K(0) = 0.
    pub fn k_table(&self) -> &[f64] {
        &self.k
    }

    /// Coefficients (a0, a1) of the large-n form of K.
    pub fn asymptotic_fit(&self) -> (f64, f64) {
        self.fit
    }

    /// Q(l) = P(first return after l). Exact on the table, continued as
    /// Q(n_max) * sqrt((n_max + 1/2) / (l + 1/2)) beyond it.
    pub fn tail_mass(&self, l: usize) -> f64 {
        if l < self.q.len() {
            self.q[l]
        } else {
            let n = self.n_max() as f64;
            self.q[self.n_max()] * ((n + 0.5) / (l as f64 + 0.5)).sqrt()
        }
    }

    /// One-sided weight of an unfinished excursion of length l.
    pub fn q(&self, l: usize) -> f64 {
        0.5 * self.tail_mass(l)
    }

    pub fn tail_table(&self) -> &[f64] {
        &self.q
    }

    /// Limit of K(n) n^{3/2}, by polynomial extrapolation in 1/n through
    /// n_max, n_max/2 and n_max/4.
    pub fn tail_constant(&self) -> Result<f64> {
        let n_max = self.n_max();
        if n_max < 8 {
            return Err(Error::InvalidParameter("n_max too small to extrapolate K(n) n^{3/2}".into()));
        }
        let ns = [n_max, n_max / 2, n_max / 4];
        let xs: Vec<f64> = ns.iter().map(|&n| 1.0 / n as f64).collect();
        let mut table: Vec<f64> = ns.iter().map(|&n| self.k[n] * (n as f64).powf(1.5)).collect();
        // Neville's scheme evaluated at x = 0; level estimates are table[0] after each pass
        let mut levels = vec![table[0]];
        for level in 1..ns.len() {
            for i in 0..ns.len() - level {
                let (xi, xj) = (xs[i], xs[i + level]);
                table[i] = (xi * table[i + 1] - xj * table[i]) / (xi - xj);
            }
            levels.push(table[0]);
        }
        let last = levels[levels.len() - 1];
        let previous = levels[levels.len() - 2];
        if !(last > 0.0) || ((last - previous) / last).abs() > 1e-3 {
            return Err(Error::TailConstant { last, previous });
        }
        Ok(last)
    }

    /// The tail constant computed at construction, if the table was long enough.
    pub fn c_k(&self) -> Result<f64> {
        match self.c_k {
            Some(c) => Ok(c),
            None => self.tail_constant(),
        }
    }
}

/// log P(S_s = z) for the walk started at 0, summing the trinomial terms
/// outward from the largest one.
pub fn ln_point_prob(p: f64, s: u64, z: i64) -> f64 {
    let z = z.unsigned_abs();
    if z > s {
        return f64::NEG_INFINITY;
    }
    if s == 0 {
        return 0.0;
    }
    let c = 1.0 - 2.0 * p;
    let (lp, lc) = (p.ln(), c.ln());
    let jmax = (s - z) / 2;
    let rho = (p / c) * (p / c);
    // t(j+1)/t(j) for j down-steps, j+z up-steps, s-2j-z stays
    let ratio = |j: u64| {
        let free = (s - 2 * j - z) as f64;
        free * (free - 1.0) / ((j + 1) as f64 * (j + z + 1) as f64) * rho
    };
    let (mut lo, mut hi) = (0u64, jmax);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if ratio(mid) < 1.0 {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    let mode = lo;
    let ln_mode = ln_gamma((s + 1) as f64)
        - ln_gamma((mode + 1) as f64)
        - ln_gamma((mode + z + 1) as f64)
        - ln_gamma((s - 2 * mode - z + 1) as f64)
        + (2 * mode + z) as f64 * lp
        + (s - 2 * mode - z) as f64 * lc;

    let mut total = 1.0;
    let mut t = 1.0;
    let mut j = mode;
    while j < jmax {
        t *= ratio(j);
        j += 1;
        total += t;
        if t < 1e-18 * total {
            break;
        }
    }
    t = 1.0;
    j = mode;
    while j > 0 {
        t /= ratio(j - 1);
        j -= 1;
        total += t;
        if t < 1e-18 * total {
            break;
        }
    }
    ln_mode + total.ln()
}

/// Step kernel of the walk conditioned to stay positive, the h-transform
/// with h(x) = x / p of the walk killed at 0.
#[derive(Debug, Clone, Copy)]
pub struct ConditionedStep {
    p: f64,
}

pub fn conditioned_step_kernel(p: f64) -> Result<ConditionedStep> {
    check_p(p)?;
    Ok(ConditionedStep { p })
}

impl ConditionedStep {
    pub fn prob(&self, x: u64, y: u64) -> f64 {
        if x == 0 {
            return if y == 1 { 1.0 } else { 0.0 };
        }
        if y == 0 {
            return 0.0;
        }
        let ratio = y as f64 / x as f64;
        if y == x + 1 || y + 1 == x {
            self.p * ratio
        } else if y == x {
            1.0 - 2.0 * self.p
        } else {
            0.0
        }
    }

    /// Next height from x given a uniform draw u in [0, 1).
    pub fn step(&self, x: u64, u: f64) -> u64 {
        if x == 0 {
            return 1;
        }
        let up = self.p * (x + 1) as f64 / x as f64;
        let down = self.p * (x - 1) as f64 / x as f64;
        if u < up {
            x + 1
        } else if u < up + down {
            x - 1
        } else {
            x
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // all 3^n step sequences, returning P(first return at n) for n = 1..=n_max
    fn enumerate_first_returns(p: f64, n_max: usize) -> Vec<f64> {
        let c = 1.0 - 2.0 * p;
        let mut out = vec![0.0; n_max + 1];
        fn go(pos: i64, depth: usize, w: f64, p: f64, c: f64, n_max: usize, out: &mut [f64]) {
            for (step, ws) in [(-1i64, p), (0, c), (1, p)] {
                let next = pos + step;
                if next == 0 {
                    out[depth + 1] += w * ws;
                } else if depth + 1 < n_max {
                    go(next, depth + 1, w * ws, p, c, n_max, out);
                }
            }
        }
        go(0, 0, 1.0, p, c, n_max, &mut out);
        out
    }

    #[test]
    fn small_values() {
        let law = first_return_law(0.3, 64).unwrap();
        assert!((law.k(1) - 0.4).abs() < 1e-15);
        assert!((law.k(2) - 0.18).abs() < 1e-15);
        assert!((law.k(3) - 0.072).abs() < 1e-15);
        assert_eq!(law.tail_mass(0), 1.0);
        assert!((law.tail_mass(1) - 0.6).abs() < 1e-15);
        assert!((law.tail_mass(3) - 0.348).abs() < 1e-15);
    }

    #[test]
    fn dp_matches_enumeration() {
        for &p in &[0.1, 0.3, 0.45] {
            let law = first_return_law(p, 40).unwrap();
            let brute = enumerate_first_returns(p, 12);
            for n in 1..=12 {
                assert!((law.k(n) - brute[n]).abs() < 1e-14, "p={p} n={n}");
            }
        }
    }

    #[test]
    fn truncation_does_not_bias_the_table() {
        let long = first_return_law(0.3, 400).unwrap();
        let short = first_return_law(0.3, 50).unwrap();
        for n in 1..=50 {
            assert!((long.k(n) - short.k(n)).abs() < 1e-16);
            assert!((long.tail_mass(n) - short.tail_mass(n)).abs() < 1e-14);
        }
    }

    #[test]
    fn mass_balance() {
        let law = first_return_law(0.27, 5000).unwrap();
        let total: f64 = law.k_table().iter().sum::<f64>() + law.tail_mass(law.n_max());
        assert!((total - 1.0).abs() < 1e-12, "{total}");
        for l in 1..=law.n_max() {
            assert!(law.tail_mass(l) <= law.tail_mass(l - 1));
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(first_return_law(0.5, 10).is_err());
        assert!(first_return_law(0.0, 10).is_err());
        assert!(first_return_law(0.3, 1).is_err());
        assert!(first_return_law(f64::NAN, 10).is_err());
    }

    #[test]
    fn point_probabilities() {
        let p = 0.3;
        let c = 1.0 - 2.0 * p;
        let mut dist = vec![1.0];
        for s in 1..=15u64 {
            let mut next = vec![0.0; dist.len() + 2];
            for (i, &w) in dist.iter().enumerate() {
                next[i] += w * p;
                next[i + 1] += w * c;
                next[i + 2] += w * p;
            }
            dist = next;
            for (i, &w) in dist.iter().enumerate() {
                let z = i as i64 - s as i64;
                let got = ln_point_prob(p, s, z).exp();
                assert!((got - w).abs() < 1e-12 * w.max(1e-300) + 1e-300, "s={s} z={z} {got} {w}");
            }
        }
        assert_eq!(ln_point_prob(p, 3, 4), f64::NEG_INFINITY);
    }

    #[test]
    fn conditioned_kernel_rows() {
        let ker = conditioned_step_kernel(0.3).unwrap();
        assert_eq!(ker.prob(0, 1), 1.0);
        assert!((ker.prob(1, 2) - 0.6).abs() < 1e-15);
        assert!((ker.prob(1, 1) - 0.4).abs() < 1e-15);
        assert_eq!(ker.prob(1, 0), 0.0);
        assert!((ker.prob(5, 6) - 0.36).abs() < 1e-15);
        assert!((ker.prob(5, 4) - 0.24).abs() < 1e-15);
        assert!((ker.prob(5, 5) - 0.4).abs() < 1e-15);
        for x in 0..50u64 {
            let row: f64 = (x.saturating_sub(1)..=x + 1).map(|y| ker.prob(x, y)).sum();
            assert!((row - 1.0).abs() < 1e-15);
        }
    }
}
