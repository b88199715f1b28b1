//! Real spherical harmonics on the unit sphere.
//!
//! Convention: orthonormal real harmonics obtained from the complex
//! `Y_l^m` carrying the Condon–Shortley phase,
//!
//! ```text
//! Y_{l,m}  = sqrt(2) (-1)^m Re Y_l^{|m|}   (m > 0)
//! Y_{l,0}  = Y_l^0
//! Y_{l,m}  = sqrt(2) (-1)^m Im Y_l^{|m|}   (m < 0)
//! ```
//!
//! The `(-1)^m` cancels the Condon–Shortley sign, so `Y_{1,1} ∝ x`,
//! `Y_{1,-1} ∝ y` and `Y_{1,0} ∝ z`. Every Gaunt table in this crate uses
//! this convention.
//!
//! Coefficients are stored flat with `index(l, m) = l² + l + m`.
//!
//! Evaluation factors each harmonic as `K_m · Q_l^m(z) · T_m(x, y)` where
//! `T_m` is `Re (x + iy)^|m|` or `Im (x + iy)^|m|` and `Q_l^m` is a
//! polynomial in `z`. This is smooth at the poles and extends the harmonics to
//! polynomials on all of R³, which is what the injected-force chain rule
//! differentiates.

use std::f64::consts::PI;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Largest angular degree supported by evaluation, Gaunt tables and probes.
pub const L_MAX_SUPPORTED: usize = 12;

/// Resolution of the shared grid returned by [`QuadratureGrid::standard`].
pub const STANDARD_RESOLUTION: usize = 2 * L_MAX_SUPPORTED + 2;

const UNIT_TOL: f64 = 1e-12;

/// Flat index of `(l, m)`.
#[inline]
pub fn index(l: usize, m: i64) -> usize {
    ((l * l + l) as i64 + m) as usize
}

/// Inverse of [`index`].
pub fn lm_of(idx: usize) -> (usize, i64) {
    let l = (idx as f64).sqrt() as usize;
    // guard against sqrt rounding
    let l = if (l + 1) * (l + 1) <= idx { l + 1 } else { l };
    (l, idx as i64 - (l * l + l) as i64)
}

/// Number of coefficients up to and including degree `l_max`.
#[inline]
pub fn n_coeffs(l_max: usize) -> usize {
    (l_max + 1) * (l_max + 1)
}

/// A unit vector on S².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Direction {
    x: f64,
    y: f64,
    z: f64,
}

impl Direction {
    /// Wraps components that already form a unit vector.
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self> {
        let n2 = x * x + y * y + z * z;
        if !n2.is_finite() || (n2 - 1.0).abs() > UNIT_TOL {
            return Err(Error::arg(format!(
                "direction ({x}, {y}, {z}) is not unit (|v|² = {n2})"
            )));
        }
        Ok(Self { x, y, z })
    }

    /// Normalises an arbitrary nonzero vector.
    pub fn from_vector(v: [f64; 3]) -> Result<Self> {
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::arg("cannot normalise a zero or non-finite vector"));
        }
        Ok(Self {
            x: v[0] / n,
            y: v[1] / n,
            z: v[2] / n,
        })
    }

    /// Polar angle `theta` from +z, azimuth `phi` from +x.
    pub fn from_spherical(theta: f64, phi: f64) -> Self {
        let s = theta.sin();
        Self {
            x: s * phi.cos(),
            y: s * phi.sin(),
            z: theta.cos(),
        }
    }

    pub fn x(&self) -> f64 {
        self.x
    }
    pub fn y(&self) -> f64 {
        self.y
    }
    pub fn z(&self) -> f64 {
        self.z
    }
    pub fn to_array(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn unit_z() -> Self {
        Self {
            x: 0.0,
            y: 0.0,
            z: 1.0,
        }
    }
}

/// Real SH coefficient block `c_l^m` for `l ≤ degree`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SHVector {
    degree: usize,
    coeffs: Vec<f64>,
}

impl SHVector {
    pub fn zeros(degree: usize) -> Self {
        Self {
            degree,
            coeffs: vec![0.0; n_coeffs(degree)],
        }
    }

    pub fn new(degree: usize, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != n_coeffs(degree) {
            return Err(Error::arg(format!(
                "degree {degree} needs {} coefficients, got {}",
                n_coeffs(degree),
                coeffs.len()
            )));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::arg("SH coefficients must be finite"));
        }
        Ok(Self { degree, coeffs })
    }

    /// Single harmonic `Y_l^m` with unit coefficient.
    pub fn basis(l: usize, m: i64) -> Result<Self> {
        check_lm(l, m)?;
        let mut v = Self::zeros(l);
        v.coeffs[index(l, m)] = 1.0;
        Ok(v)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    /// Coefficient at `(l, m)`; zero above the stored degree.
    pub fn get(&self, l: usize, m: i64) -> f64 {
        if l > self.degree || m.unsigned_abs() as usize > l {
            0.0
        } else {
            self.coeffs[index(l, m)]
        }
    }

    pub fn set(&mut self, l: usize, m: i64, value: f64) {
        self.coeffs[index(l, m)] = value;
    }

    /// The `2l + 1` coefficients of degree `l`.
    pub fn block(&self, l: usize) -> &[f64] {
        &self.coeffs[l * l..(l + 1) * (l + 1)]
    }

    /// `Σ_m (c_l^m)²`.
    pub fn degree_power(&self, l: usize) -> f64 {
        if l > self.degree {
            return 0.0;
        }
        self.block(l).iter().map(|c| c * c).sum()
    }

    pub fn power_spectrum(&self) -> Vec<f64> {
        (0..=self.degree).map(|l| self.degree_power(l)).collect()
    }

    pub fn total_power(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum()
    }

    /// Copy padded with zeros (or truncated) to `degree`.
    pub fn resized(&self, degree: usize) -> Self {
        let mut out = Self::zeros(degree);
        let n = out.coeffs.len().min(self.coeffs.len());
        out.coeffs[..n].copy_from_slice(&self.coeffs[..n]);
        out
    }

    /// Evaluates `Σ c_l^m Y_l^m(dir)`.
    pub fn synthesize(&self, dir: &Direction) -> f64 {
        let y = sh_values(self.degree, dir.to_array());
        dot(&y, &self.coeffs)
    }
}

fn check_lm(l: usize, m: i64) -> Result<()> {
    if l > L_MAX_SUPPORTED {
        return Err(Error::arg(format!(
            "degree {l} exceeds L_MAX_SUPPORTED = {L_MAX_SUPPORTED}"
        )));
    }
    if m.unsigned_abs() as usize > l {
        return Err(Error::arg(format!("order m = {m} out of range for l = {l}")));
    }
    Ok(())
}

fn check_degree(l_max: usize) -> Result<()> {
    if l_max > L_MAX_SUPPORTED {
        return Err(Error::arg(format!(
            "degree {l_max} exceeds L_MAX_SUPPORTED = {L_MAX_SUPPORTED}"
        )));
    }
    Ok(())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `Y_l^m(dir)`.
pub fn eval_sh(l: usize, m: i64, dir: &Direction) -> Result<f64> {
    check_lm(l, m)?;
    Ok(sh_values(l, dir.to_array())[index(l, m)])
}

/// All harmonics up to degree `l_max` at `dir`.
pub fn feature_vector(l_max: usize, dir: &Direction) -> Result<SHVector> {
    check_degree(l_max)?;
    Ok(SHVector {
        degree: l_max,
        coeffs: sh_values(l_max, dir.to_array()),
    })
}

/// `Re/Im (x + iy)^m` for `m = 0..=l_max`.
fn azimuthal(l_max: usize, x: f64, y: f64) -> (Vec<f64>, Vec<f64>) {
    let mut c = vec![0.0; l_max + 1];
    let mut s = vec![0.0; l_max + 1];
    c[0] = 1.0;
    for m in 1..=l_max {
        c[m] = x * c[m - 1] - y * s[m - 1];
        s[m] = x * s[m - 1] + y * c[m - 1];
    }
    (c, s)
}

/// Polynomial part `Q_l^m(z)` (and optionally its z-derivative), laid out
/// with the flat index at `m ≥ 0`.
fn legendre_part(l_max: usize, z: f64, want_deriv: bool) -> (Vec<f64>, Vec<f64>) {
    let n = n_coeffs(l_max);
    let mut q = vec![0.0; n];
    let mut dq = if want_deriv { vec![0.0; n] } else { Vec::new() };
    let mut qmm = 0.5 / PI.sqrt();
    for m in 0..=l_max {
        if m > 0 {
            let mf = m as f64;
            qmm *= ((2.0 * mf + 1.0) / (2.0 * mf)).sqrt();
        }
        let mi = m as i64;
        q[index(m, mi)] = qmm;
        if m < l_max {
            let f = (2.0 * m as f64 + 3.0).sqrt();
            q[index(m + 1, mi)] = f * z * qmm;
            if want_deriv {
                dq[index(m + 1, mi)] = f * qmm;
            }
        }
        for l in (m + 2)..=l_max {
            let lf = l as f64;
            let mf = m as f64;
            let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
            let b = (((lf - 1.0) * (lf - 1.0) - mf * mf) / (4.0 * (lf - 1.0) * (lf - 1.0) - 1.0))
                .sqrt();
            let q1 = q[index(l - 1, mi)];
            let q2 = q[index(l - 2, mi)];
            q[index(l, mi)] = a * (z * q1 - b * q2);
            if want_deriv {
                let d1 = dq[index(l - 1, mi)];
                let d2 = dq[index(l - 2, mi)];
                dq[index(l, mi)] = a * (q1 + z * d1 - b * d2);
            }
        }
    }
    (q, dq)
}

/// Harmonics at an arbitrary point of R³ via their polynomial extension.
/// Equals the true harmonics when `v` is a unit vector.
pub(crate) fn sh_values(l_max: usize, v: [f64; 3]) -> Vec<f64> {
    let (c, s) = azimuthal(l_max, v[0], v[1]);
    let (q, _) = legendre_part(l_max, v[2], false);
    let mut out = vec![0.0; n_coeffs(l_max)];
    for l in 0..=l_max {
        out[index(l, 0)] = q[index(l, 0)];
        for m in 1..=l {
            let qm = std::f64::consts::SQRT_2 * q[index(l, m as i64)];
            out[index(l, m as i64)] = qm * c[m];
            out[index(l, -(m as i64))] = qm * s[m];
        }
    }
    out
}

/// Harmonics and their Cartesian gradients (of the polynomial extension).
///
/// Callers differentiating a function of a direction `u = v/|v|` must project
/// the gradient onto the tangent plane of `u`.
pub fn sh_values_and_gradients(l_max: usize, v: [f64; 3]) -> (Vec<f64>, Vec<[f64; 3]>) {
    let (c, s) = azimuthal(l_max, v[0], v[1]);
    let (q, dq) = legendre_part(l_max, v[2], true);
    let n = n_coeffs(l_max);
    let mut val = vec![0.0; n];
    let mut grad = vec![[0.0; 3]; n];
    for l in 0..=l_max {
        let i0 = index(l, 0);
        val[i0] = q[i0];
        grad[i0] = [0.0, 0.0, dq[i0]];
        for m in 1..=l {
            let mi = m as i64;
            let k = std::f64::consts::SQRT_2;
            let qm = k * q[index(l, mi)];
            let dqm = k * dq[index(l, mi)];
            let mf = m as f64;
            // d(x+iy)^m/dx = m (x+iy)^(m-1), d/dy = i m (x+iy)^(m-1)
            let (dc_dx, dc_dy) = (mf * c[m - 1], -mf * s[m - 1]);
            let (ds_dx, ds_dy) = (mf * s[m - 1], mf * c[m - 1]);
            let ip = index(l, mi);
            let im = index(l, -mi);
            val[ip] = qm * c[m];
            val[im] = qm * s[m];
            grad[ip] = [qm * dc_dx, qm * dc_dy, dqm * c[m]];
            grad[im] = [qm * ds_dx, qm * ds_dy, dqm * s[m]];
        }
    }
    (val, grad)
}

/// Gauss–Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else { p1 };
            let pn1 = if n == 1 { 1.0 } else { p0 };
            dp = nf * (x * pn - pn1) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Product Gauss–Legendre (polar) × uniform (azimuth) quadrature on S².
#[derive(Debug, Clone)]
pub struct QuadratureGrid {
    nodes: Vec<Direction>,
    weights: Vec<f64>,
    n_theta: usize,
    n_phi: usize,
}

impl QuadratureGrid {
    /// `resolution` Gauss–Legendre rings of `2·resolution` azimuthal points.
    /// Integrates band-limited functions of total degree `2·resolution − 1`
    /// exactly.
    pub fn build(resolution: usize) -> Result<Self> {
        if resolution < STANDARD_RESOLUTION {
            return Err(Error::arg(format!(
                "grid resolution {resolution} below minimum {STANDARD_RESOLUTION}"
            )));
        }
        Ok(Self::with_rings(resolution, 2 * resolution))
    }

    /// Process-wide grid at [`STANDARD_RESOLUTION`].
    pub fn standard() -> &'static QuadratureGrid {
        static GRID: OnceLock<QuadratureGrid> = OnceLock::new();
        GRID.get_or_init(|| Self::with_rings(STANDARD_RESOLUTION, 2 * STANDARD_RESOLUTION))
    }

    fn with_rings(n_theta: usize, n_phi: usize) -> Self {
        let (zs, wz) = gauss_legendre(n_theta);
        let dphi = 2.0 * PI / n_phi as f64;
        let mut nodes = Vec::with_capacity(n_theta * n_phi);
        let mut weights = Vec::with_capacity(n_theta * n_phi);
        for (z, w) in zs.iter().zip(&wz) {
            let s = (1.0 - z * z).max(0.0).sqrt();
            for k in 0..n_phi {
                let phi = (k as f64 + 0.5) * dphi;
                let (x, y) = (s * phi.cos(), s * phi.sin());
                // renormalise to absorb rounding in sin/cos
                let n = (x * x + y * y + z * z).sqrt();
                nodes.push(Direction {
                    x: x / n,
                    y: y / n,
                    z: z / n,
                });
                weights.push(w * dphi);
            }
        }
        Self {
            nodes,
            weights,
            n_theta,
            n_phi,
        }
    }

    pub fn nodes(&self) -> &[Direction] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Highest total SH degree integrated exactly.
    pub fn exactness(&self) -> usize {
        (2 * self.n_theta - 1).min(self.n_phi - 1)
    }

    /// `∫ f dΩ` from samples at the nodes.
    pub fn integrate(&self, samples: &[f64]) -> f64 {
        dot(&self.weights, samples)
    }

    /// Row-major `len × (l_max+1)²` table of `Y_l^m(node)`.
    pub fn basis(&self, l_max: usize) -> Vec<Vec<f64>> {
        self.nodes
            .iter()
            .map(|d| sh_values(l_max, d.to_array()))
            .collect()
    }

    /// Samples of a coefficient vector at every node.
    pub fn synthesize(&self, v: &SHVector) -> Vec<f64> {
        self.nodes.iter().map(|d| v.synthesize(d)).collect()
    }
}

/// Builds a quadrature grid; see [`QuadratureGrid::build`].
pub fn build_grid(resolution: usize) -> Result<QuadratureGrid> {
    QuadratureGrid::build(resolution)
}

/// `c_l^m = Σ_k w_k f(n_k) Y_l^m(n_k)`.
pub fn project(samples: &[f64], grid: &QuadratureGrid, l_max: usize) -> Result<SHVector> {
    check_degree(l_max)?;
    if samples.len() != grid.len() {
        return Err(Error::arg(format!(
            "{} samples for a grid of {} nodes",
            samples.len(),
            grid.len()
        )));
    }
    let mut out = vec![0.0; n_coeffs(l_max)];
    for ((d, w), f) in grid.nodes.iter().zip(&grid.weights).zip(samples) {
        let wf = w * f;
        if wf == 0.0 {
            continue;
        }
        for (o, y) in out.iter_mut().zip(sh_values(l_max, d.to_array())) {
            *o += wf * y;
        }
    }
    SHVector::new(l_max, out)
}
