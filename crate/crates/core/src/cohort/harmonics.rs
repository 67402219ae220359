//! Orthonormal real spherical harmonics of degree 1..=3.

use std::f64::consts::PI;

pub const MAX_DEGREE: usize = 3;

/// `(l, m)` pairs in basis order: l ascending, m from -l to l.
pub fn basis() -> Vec<(usize, i32)> {
    (1..=MAX_DEGREE)
        .flat_map(|l| (-(l as i32)..=l as i32).map(move |m| (l, m)))
        .collect()
}

pub fn basis_len() -> usize {
    (1..=MAX_DEGREE).map(|l| 2 * l + 1).sum()
}

pub fn basis_index(l: usize, m: i32) -> Option<usize> {
    basis().iter().position(|&b| b == (l, m))
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Associated Legendre function `P_l^m(x)` for `m >= 0`, without the
/// Condon-Shortley phase.
fn legendre(l: usize, m: usize, x: f64) -> f64 {
    let mut pmm = 1.0;
    if m > 0 {
        let s = ((1.0 - x) * (1.0 + x)).max(0.0).sqrt();
        let mut fact = 1.0;
        for _ in 0..m {
            pmm *= fact * s;
            fact += 2.0;
        }
    }
    if l == m {
        return pmm;
    }
    let mut pmmp1 = x * (2 * m + 1) as f64 * pmm;
    if l == m + 1 {
        return pmmp1;
    }
    let mut pll = 0.0;
    for ll in (m + 2)..=l {
        pll = ((2 * ll - 1) as f64 * x * pmmp1 - (ll + m - 1) as f64 * pmm) / (ll - m) as f64;
        pmm = pmmp1;
        pmmp1 = pll;
    }
    pll
}

/// Real spherical harmonic `Y_lm(theta, phi)`; `theta` polar, `phi` azimuth.
pub fn real_sh(l: usize, m: i32, theta: f64, phi: f64) -> f64 {
    let am = m.unsigned_abs() as usize;
    let k = ((2 * l + 1) as f64 / (4.0 * PI) * factorial(l - am) / factorial(l + am)).sqrt();
    let p = legendre(l, am, theta.cos());
    match m.cmp(&0) {
        std::cmp::Ordering::Equal => k * p,
        std::cmp::Ordering::Greater => 2f64.sqrt() * k * (am as f64 * phi).cos() * p,
        std::cmp::Ordering::Less => 2f64.sqrt() * k * (am as f64 * phi).sin() * p,
    }
}

/// All basis functions at one direction, in [`basis`] order.
pub fn evaluate_all(theta: f64, phi: f64) -> Vec<f64> {
    basis()
        .into_iter()
        .map(|(l, m)| real_sh(l, m, theta, phi))
        .collect()
}
