//! Angular momentum algebra for integer J.
//!
//! Closed-form matrix elements go through Wigner 3j symbols (Racah formula).
//! The [`quadrature`] submodule evaluates the same integrals directly from
//! spherical harmonics on a Gauss–Legendre grid and is used as an independent
//! check of the algebra.

use std::f64::consts::PI;

use crate::error::{Error, Result};

fn ln_factorial(n: i64) -> f64 {
    debug_assert!(n >= 0);
    (2..=n).map(|k| (k as f64).ln()).sum()
}

fn phase(n: i64) -> f64 {
    if n.rem_euclid(2) == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Wigner 3j symbol for integer angular momenta.
pub fn wigner_3j(j1: i64, j2: i64, j3: i64, m1: i64, m2: i64, m3: i64) -> f64 {
    if m1 + m2 + m3 != 0 {
        return 0.0;
    }
    if j1 < 0 || j2 < 0 || j3 < 0 {
        return 0.0;
    }
    if m1.abs() > j1 || m2.abs() > j2 || m3.abs() > j3 {
        return 0.0;
    }
    if j3 < (j1 - j2).abs() || j3 > j1 + j2 {
        return 0.0;
    }
    let ln_delta = ln_factorial(j1 + j2 - j3) + ln_factorial(j1 - j2 + j3)
        + ln_factorial(-j1 + j2 + j3)
        - ln_factorial(j1 + j2 + j3 + 1);
    let ln_pre = 0.5
        * (ln_delta
            + ln_factorial(j1 + m1)
            + ln_factorial(j1 - m1)
            + ln_factorial(j2 + m2)
            + ln_factorial(j2 - m2)
            + ln_factorial(j3 + m3)
            + ln_factorial(j3 - m3));

    let k_min = 0.max(j2 - j3 - m1).max(j1 - j3 + m2);
    let k_max = (j1 + j2 - j3).min(j1 - m1).min(j2 + m2);
    let mut sum = 0.0;
    for k in k_min..=k_max {
        let ln_den = ln_factorial(k)
            + ln_factorial(j3 - j2 + k + m1)
            + ln_factorial(j3 - j1 + k - m2)
            + ln_factorial(j1 + j2 - j3 - k)
            + ln_factorial(j1 - k - m1)
            + ln_factorial(j2 - k + m2);
        sum += phase(k) * (ln_pre - ln_den).exp();
    }
    phase(j1 - j2 - m3) * sum
}

/// ⟨J' m| P_k(cos θ) |J m⟩ between normalized spherical harmonics.
pub fn legendre_element(k: u32, j_bra: u32, j_ket: u32, m: i32) -> f64 {
    let (k, jb, jk, m) = (i64::from(k), i64::from(j_bra), i64::from(j_ket), i64::from(m));
    if m.abs() > jb || m.abs() > jk {
        return 0.0;
    }
    phase(m)
        * (((2 * jk + 1) * (2 * jb + 1)) as f64).sqrt()
        * wigner_3j(jb, k, jk, 0, 0, 0)
        * wigner_3j(jb, k, jk, -m, 0, m)
}

/// ⟨J' m'| C²_q |J m⟩ for the rank-2 Racah-normalized spherical tensor.
pub fn c2_element(j_bra: u32, m_bra: i32, q: i32, j_ket: u32, m_ket: i32) -> f64 {
    let (jb, mb, q, jk, mk) = (
        i64::from(j_bra),
        i64::from(m_bra),
        i64::from(q),
        i64::from(j_ket),
        i64::from(m_ket),
    );
    phase(mb)
        * (((2 * jk + 1) * (2 * jb + 1)) as f64).sqrt()
        * wigner_3j(jb, 2, jk, -mb, q, mk)
        * wigner_3j(jb, 2, jk, 0, 0, 0)
}

/// Σ_q |⟨J' m'|C²_q|J m⟩|²; only q = m' − m survives.
pub fn c2_strength(j_bra: u32, m_bra: i32, j_ket: u32, m_ket: i32) -> f64 {
    let q = m_bra - m_ket;
    if q.abs() > 2 {
        return 0.0;
    }
    c2_element(j_bra, m_bra, q, j_ket, m_ket).powi(2)
}

/// First-order expectation ⟨J mJ|P₂(cos θ)|J mJ⟩ = [J(J+1) − 3mJ²] / [(2J−1)(2J+3)].
pub fn p2_expectation(j: u32, m: i32) -> Result<f64> {
    if m.unsigned_abs() > j {
        return Err(Error::Domain(format!("|mJ| = {} exceeds J = {}", m.abs(), j)));
    }
    if j == 0 {
        return Ok(0.0);
    }
    let jj = f64::from(j) * f64::from(j + 1);
    let mm = f64::from(m) * f64::from(m);
    Ok((jj - 3.0 * mm) / (f64::from(2 * j - 1) * f64::from(2 * j + 3)))
}

pub mod quadrature {
    //! Gauss–Legendre integration of spherical-harmonic products.
    //!
    //! The azimuthal integral is done analytically (it yields 2π·δ on the
    //! projections); the polar integral runs over x = cos θ ∈ [−1, 1].

    use super::*;

    /// Nodes and weights of the n-point Gauss–Legendre rule on [−1, 1].
    pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            let mut x = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        (nodes, weights)
    }

    fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
        let mut p0 = 1.0;
        let mut p1 = x;
        if n == 0 {
            return (1.0, 0.0);
        }
        for k in 2..=n {
            let kf = k as f64;
            let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
            p0 = p1;
            p1 = p2;
        }
        let nf = n as f64;
        (p1, nf * (x * p1 - p0) / (x * x - 1.0))
    }

    /// Associated Legendre function P_l^m(x), m ≥ 0, with the Condon–Shortley phase.
    pub fn assoc_legendre(l: u32, m: u32, x: f64) -> f64 {
        if m > l {
            return 0.0;
        }
        let mut pmm = 1.0;
        let somx2 = ((1.0 - x) * (1.0 + x)).sqrt();
        let mut fact = 1.0;
        for _ in 0..m {
            pmm *= -fact * somx2;
            fact += 2.0;
        }
        if l == m {
            return pmm;
        }
        let mut pmmp1 = x * f64::from(2 * m + 1) * pmm;
        if l == m + 1 {
            return pmmp1;
        }
        let mut pll = 0.0;
        for ll in (m + 2)..=l {
            pll = (x * f64::from(2 * ll - 1) * pmmp1 - f64::from(ll + m - 1) * pmm)
                / f64::from(ll - m);
            pmm = pmmp1;
            pmmp1 = pll;
        }
        pll
    }

    /// Polar part Θ_lm(x) of Y_lm = Θ_lm(cos θ)·e^{imφ}.
    pub fn sph_harm_polar(l: u32, m: i32, x: f64) -> f64 {
        let am = m.unsigned_abs();
        if am > l {
            return 0.0;
        }
        let ln_ratio = super::ln_factorial(i64::from(l - am)) - super::ln_factorial(i64::from(l + am));
        let norm = (f64::from(2 * l + 1) / (4.0 * PI) * ln_ratio.exp()).sqrt();
        let value = norm * assoc_legendre(l, am, x);
        if m < 0 && am % 2 == 1 {
            -value
        } else {
            value
        }
    }

    pub fn legendre_p(k: u32, x: f64) -> f64 {
        assoc_legendre(k, 0, x)
    }

    /// ∫ Y*_{l1 m1} Y_{l2 m2} Y_{l3 m3} dΩ.
    pub fn gaunt(l1: u32, m1: i32, l2: u32, m2: i32, l3: u32, m3: i32, nodes: usize) -> f64 {
        if m1 != m2 + m3 {
            return 0.0;
        }
        let (x, w) = gauss_legendre(nodes);
        2.0 * PI
            * x.iter()
                .zip(&w)
                .map(|(&xi, &wi)| {
                    wi * sph_harm_polar(l1, m1, xi)
                        * sph_harm_polar(l2, m2, xi)
                        * sph_harm_polar(l3, m3, xi)
                })
                .sum::<f64>()
    }

    /// ⟨J' m|P_k|J m⟩ by direct integration.
    pub fn legendre_element(k: u32, j_bra: u32, j_ket: u32, m: i32, nodes: usize) -> f64 {
        let (x, w) = gauss_legendre(nodes);
        2.0 * PI
            * x.iter()
                .zip(&w)
                .map(|(&xi, &wi)| {
                    wi * sph_harm_polar(j_bra, m, xi) * legendre_p(k, xi) * sph_harm_polar(j_ket, m, xi)
                })
                .sum::<f64>()
    }

    /// ⟨J' m'|C²_q|J m⟩ = √(4π/5) ∫ Y*_{J'm'} Y_{2q} Y_{Jm} dΩ.
    pub fn c2_element(j_bra: u32, m_bra: i32, q: i32, j_ket: u32, m_ket: i32, nodes: usize) -> f64 {
        (4.0 * PI / 5.0).sqrt() * gaunt(j_bra, m_bra, 2, q, j_ket, m_ket, nodes)
    }
}
