//! Sums of the return law beyond the tabulated range, restricted to a residue
//! class and optionally damped by e^{-dn}.
//!
//! Beyond n_max the law is replaced by K(n) ~ a0 n^{-3/2} + a1 n^{-5/2}
//! (fitted on the table) and the lattice sum is done by Euler-Maclaurin. The
//! amplitude is rescaled so that the undamped sum over all residues equals
//! the exact remaining mass Q(n_max).

use statrs::function::erf::erfc;

use crate::walk::WalkLaw;

const EXPONENTS: [f64; 2] = [1.5, 2.5];

#[derive(Debug, Clone)]
pub struct LatticeTail {
    n_max: usize,
    coef: [f64; 2],
    scale: f64,
    one_term: f64,
}

impl LatticeTail {
    pub fn new(walk: &WalkLaw, n_max: usize) -> Self {
        let n1 = n_max as f64;
        let half = (n_max / 2).max(1);
        let n2 = half as f64;
        let c1 = walk.k(n_max) * n1.powf(1.5);
        let c2 = walk.k(half) * n2.powf(1.5);
        let a1 = if half < n_max { (c1 - c2) / (1.0 / n1 - 1.0 / n2) } else { 0.0 };
        let a0 = c1 - a1 / n1;
        let mut tail = LatticeTail { n_max, coef: [a0, a1], scale: 1.0, one_term: c1 };
        let raw = tail.raw_sum(n_max + 1, 1, 0.0, tail.coef);
        if raw > 0.0 {
            tail.scale = walk.tail_mass(n_max) / raw;
        }
        tail
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    /// First n > n_max with n = r (mod t).
    pub fn first_index(&self, r: usize, t: usize) -> usize {
        let start = self.n_max + 1;
        start + (r + t - start % t) % t
    }

    /// Sum over n > n_max, n = r (mod t), of K(n) e^{-d n}.
    pub fn sum(&self, r: usize, t: usize, d: f64) -> f64 {
        self.scale * self.raw_sum(self.first_index(r, t), t, d, self.coef)
    }

    /// Difference between the two-term and the one-term fit for the same sum;
    /// a proxy for the error of the completion.
    pub fn error_estimate(&self, r: usize, t: usize, d: f64) -> f64 {
        let a = self.first_index(r, t);
        let two = self.raw_sum(a, t, d, self.coef);
        let one = self.raw_sum(a, t, d, [self.one_term, 0.0]);
        (two - one).abs() * self.scale
    }

    fn raw_sum(&self, a: usize, stride: usize, d: f64, coef: [f64; 2]) -> f64 {
        let f = |y: f64| -> f64 {
            let damp = (-d * y).exp();
            coef[0] * y.powf(-1.5) * damp + coef[1] * y.powf(-2.5) * damp
        };
        let a = a as f64;
        let t = stride as f64;
        if d * a > 700.0 {
            return 0.0;
        }
        if d * t > 0.5 {
            let mut total = 0.0;
            let mut y = a;
            for _ in 0..100_000 {
                let term = f(y);
                total += term;
                if term <= 1e-18 * total || term == 0.0 {
                    break;
                }
                y += t;
            }
            return total;
        }
        // a few explicit terms, then Euler-Maclaurin from the shifted start
        let explicit = 4;
        let mut total = 0.0;
        for j in 0..explicit {
            total += f(a + j as f64 * t);
        }
        let y = a + explicit as f64 * t;
        let mut integral = 0.0;
        let mut d1 = 0.0;
        let mut d3 = 0.0;
        for (s, c) in EXPONENTS.iter().zip(coef.iter()) {
            if *c == 0.0 {
                continue;
            }
            integral += c * power_exp_integral(*s, y, d);
            let v = c * y.powf(-s) * (-d * y).exp();
            let g1 = -s / y - d;
            let g2 = s / (y * y);
            let g3 = -2.0 * s / (y * y * y);
            d1 += v * g1;
            d3 += v * (g1 * g1 * g1 + 3.0 * g1 * g2 + g3);
        }
        total + integral / t + 0.5 * f(y) - t * d1 / 12.0 + t * t * t * d3 / 720.0
    }
}

/// The integral of y^{-s} e^{-d y} over (a, infinity), for s > 1.
pub fn power_exp_integral(s: f64, a: f64, d: f64) -> f64 {
    if d == 0.0 {
        return a.powf(1.0 - s) / (s - 1.0);
    }
    d.powf(s - 1.0) * upper_gamma(1.0 - s, d * a)
}

/// Upper incomplete gamma function for the negative half-integer orders used
/// here (any real order works for x >= 1).
pub fn upper_gamma(order: f64, x: f64) -> f64 {
    if x < 1.0 {
        if order == -0.5 {
            return gamma_minus_half(x);
        }
        if order == -1.5 {
            return (2.0 / 3.0) * (x.powf(-1.5) * (-x).exp() - gamma_minus_half(x));
        }
    }
    continued_fraction(order, x)
}

fn gamma_minus_half(x: f64) -> f64 {
    2.0 * x.powf(-0.5) * (-x).exp() - 2.0 * std::f64::consts::PI.sqrt() * erfc(x.sqrt())
}

// modified Lentz evaluation of the Legendre continued fraction
fn continued_fraction(order: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - order;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..10_000 {
        let an = -(i as f64) * (i as f64 - order);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (-x + order * x.ln()).exp() * h
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad(s: f64, a: f64, d: f64) -> f64 {
        // substitution y = a / u^2 turns the tail into a finite interval
        let n = 200_000;
        let mut total = 0.0;
        for i in 0..n {
            let u = (i as f64 + 0.5) / n as f64;
            let y = a / (u * u);
            let jac = 2.0 * a / (u * u * u);
            total += y.powf(-s) * (-d * y).exp() * jac;
        }
        total / n as f64
    }

    #[test]
    fn integral_forms_agree_with_quadrature() {
        for &(s, a, d) in &[(1.5, 100.0, 0.0), (1.5, 100.0, 0.001), (2.5, 50.0, 0.005), (1.5, 10.0, 0.2), (2.5, 10.0, 0.3)] {
            let exact = power_exp_integral(s, a, d);
            let approx = quad(s, a, d);
            assert!(((exact - approx) / exact).abs() < 1e-6, "s={s} a={a} d={d}: {exact} vs {approx}");
        }
    }

    #[test]
    fn branches_meet_at_one() {
        for &order in &[-0.5, -1.5] {
            let below = upper_gamma(order, 1.0 - 1e-12);
            let above = continued_fraction(order, 1.0);
            assert!(((below - above) / above).abs() < 1e-9);
        }
    }

    #[test]
    fn residue_sums_match_direct_summation() {
        let tail = LatticeTail { n_max: 1000, coef: [0.3, -0.05], scale: 1.0, one_term: 0.3 };
        for &(r, t, d) in &[(0usize, 1usize, 0.0), (1, 3, 0.0), (2, 3, 0.0001), (0, 2, 0.01)] {
            let got = tail.sum(r, t, d);
            let mut direct = 0.0;
            let mut n = tail.first_index(r, t);
            while n < 200_000_000 {
                let y = n as f64;
                direct += (0.3 * y.powf(-1.5) - 0.05 * y.powf(-2.5)) * (-d * y).exp();
                n += t;
            }
            // remainder of the direct sum beyond the cut, by the integral
            let cut = n as f64;
            direct += (0.3 * power_exp_integral(1.5, cut, d) - 0.05 * power_exp_integral(2.5, cut, d)) / t as f64;
            assert!(((got - direct) / direct).abs() < 1e-9, "r={r} t={t} d={d}: {got} vs {direct}");
        }
    }
}
