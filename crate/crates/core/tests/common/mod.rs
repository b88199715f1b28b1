//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use specinject::injector::{body_frame, canonical_direction, Configuration, Vec3};

pub fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

fn binomial(n: usize, k: usize) -> f64 {
    factorial(n) / (factorial(k) * factorial(n - k))
}

/// Coefficients of `P_l(x)` in ascending powers, from the explicit sum
/// `2^-l Σ_k (−1)^k C(l,k) C(2l−2k, l) x^(l−2k)`.
fn legendre_poly(l: usize) -> Vec<f64> {
    let mut c = vec![0.0; l + 1];
    for k in 0..=l / 2 {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        c[l - 2 * k] = sign * binomial(l, k) * binomial(2 * l - 2 * k, l) / 2f64.powi(l as i32);
    }
    c
}

/// `P_l^m(x) = (1 − x²)^{m/2} d^m/dx^m P_l(x)`, no Condon–Shortley factor.
pub fn assoc_legendre(l: usize, m: usize, x: f64) -> f64 {
    let mut c = legendre_poly(l);
    for _ in 0..m {
        c = c.iter().enumerate().skip(1).map(|(p, v)| p as f64 * v).collect();
    }
    let poly: f64 = c.iter().rev().fold(0.0, |acc, v| acc * x + v);
    (1.0 - x * x).max(0.0).powf(m as f64 / 2.0) * poly
}

/// Real harmonic with `Y_{1,1} ∝ x`, `Y_{1,−1} ∝ y`.
pub fn real_sh(l: usize, m: i64, theta: f64, phi: f64) -> f64 {
    let am = m.unsigned_abs() as usize;
    let norm = ((2 * l + 1) as f64 / (4.0 * PI) * factorial(l - am) / factorial(l + am)).sqrt();
    let p = assoc_legendre(l, am, theta.cos());
    match m {
        0 => norm * p,
        m if m > 0 => 2f64.sqrt() * norm * p * (am as f64 * phi).cos(),
        _ => 2f64.sqrt() * norm * p * (am as f64 * phi).sin(),
    }
}

pub fn real_sh_xyz(l: usize, m: i64, v: [f64; 3]) -> f64 {
    let r = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    real_sh(l, m, (v[2] / r).clamp(-1.0, 1.0).acos(), v[1].atan2(v[0]))
}

/// Gauss–Legendre nodes and weights on [−1, 1] by Golub–Welsch.
pub fn golub_welsch(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut j = DMatrix::zeros(n, n);
    for k in 1..n {
        let b = k as f64 / ((4 * k * k - 1) as f64).sqrt();
        j[(k, k - 1)] = b;
        j[(k - 1, k)] = b;
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], 2.0 * eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// `(θ, φ, w)` nodes of a product rule with a shifted azimuth.
pub fn oracle_rule(n_theta: usize, n_phi: usize) -> Vec<(f64, f64, f64)> {
    let (x, w) = golub_welsch(n_theta);
    let dphi = 2.0 * PI / n_phi as f64;
    let mut out = Vec::with_capacity(n_theta * n_phi);
    for (xi, wi) in x.iter().zip(&w) {
        for k in 0..n_phi {
            out.push((xi.acos(), (k as f64 + 0.37) * dphi, wi * dphi));
        }
    }
    out
}

/// `∫ Π Y_{l_k}^{m_k} dΩ` on the oracle rule.
pub fn product_integral(factors: &[(usize, i64)], rule: &[(f64, f64, f64)]) -> f64 {
    rule.iter()
        .map(|&(t, p, w)| w * factors.iter().map(|&(l, m)| real_sh(l, m, t, p)).product::<f64>())
        .sum()
}

pub fn random_rotation(rng: &mut impl Rng) -> [[f64; 3]; 3] {
    specinject::rng::random_rotation(rng)
}

pub fn rotate(q: &[[f64; 3]; 3], v: Vec3) -> Vec3 {
    specinject::rng::rotate(q, v)
}

/// Random configuration whose frame `(0, 1, 2)` and anchor `3` are well
/// conditioned.
pub fn random_config(rng: &mut impl Rng, n_atoms: usize) -> Configuration {
    loop {
        let positions: Vec<Vec3> = (0..n_atoms)
            .map(|_| {
                [
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                ]
            })
            .collect();
        let ok = body_frame(&positions, 0, 1, 2)
            .ok()
            .filter(|f| f.sigma_min > 0.5)
            .and_then(|f| canonical_direction(&positions, &f, 3).ok())
            .is_some();
        let centroid = positions.iter().fold([0.0; 3], |a, p| {
            [a[0] + p[0], a[1] + p[1], a[2] + p[2]]
        });
        let c = centroid.map(|v| v / n_atoms as f64);
        let d = positions[3];
        let dist = ((d[0] - c[0]).powi(2) + (d[1] - c[1]).powi(2) + (d[2] - c[2]).powi(2)).sqrt();
        if ok && dist > 0.5 {
            let symbols = (0..n_atoms).map(|i| if i % 3 == 0 { "O" } else { "C" }.to_string()).collect();
            return Configuration::new(symbols, positions, 0.0, vec![[0.0; 3]; n_atoms])
                .expect("shape-matched");
        }
    }
}
