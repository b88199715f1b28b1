//! Controlled angular-degree injection into molecular datasets.
//!
//! Each configuration gets a body frame from three anchor atoms and a
//! canonical direction from a fourth, off-frame atom. The injected energy is
//! a fixed combination of degree-`l_inj` harmonics of that direction; its
//! forces are the exact negative gradient through the centroid, the
//! Gram–Schmidt frame and the normalisation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rng::{seeded, standard_normals};
use crate::sphharm::{
    dot, feature_vector, sh_values, sh_values_and_gradients, Direction, SHVector,
    L_MAX_SUPPORTED,
};
use crate::{Error, Result};

/// Frames with `σ_min(G)` at or below this (Å²) are rejected.
pub const SIGMA_MIN_FLOOR: f64 = 1e-8;
/// Anchors closer than this to the centroid (Å) are rejected.
pub const ANCHOR_FLOOR: f64 = 1e-8;
/// Splits are accepted only when the max squared correlation is below this.
pub const LEAKAGE_GATE: f64 = 0.018;
/// Variance share below which an injection is considered hard to detect.
pub const ETA_MIN: f64 = 0.20;
/// Step used by the finite-difference force reference (Å).
pub const FD_STEP: f64 = 1e-5;

pub type Vec3 = [f64; 3];

#[inline]
fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}
#[inline]
fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}
#[inline]
fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}
#[inline]
fn dot3(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}
#[inline]
fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}
#[inline]
fn norm(a: Vec3) -> f64 {
    dot3(a, a).sqrt()
}
/// `(I − u uᵀ) g`
#[inline]
fn reject(g: Vec3, u: Vec3) -> Vec3 {
    sub(g, scale(u, dot3(u, g)))
}

/// One molecular frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Configuration {
    pub symbols: Vec<String>,
    /// Å
    pub positions: Vec<Vec3>,
    /// kcal/mol
    pub energy: f64,
    /// kcal/mol/Å
    pub forces: Vec<Vec3>,
    /// Comment-line keys other than `energy`, kept for round-tripping.
    #[serde(default)]
    pub extra: Vec<(String, String)>,
}

impl Configuration {
    pub fn new(
        symbols: Vec<String>,
        positions: Vec<Vec3>,
        energy: f64,
        forces: Vec<Vec3>,
    ) -> Result<Self> {
        if positions.len() != forces.len() || positions.len() != symbols.len() {
            return Err(Error::arg(format!(
                "{} symbols, {} positions, {} forces",
                symbols.len(),
                positions.len(),
                forces.len()
            )));
        }
        Ok(Self {
            symbols,
            positions,
            energy,
            forces,
            extra: Vec::new(),
        })
    }

    pub fn n_atoms(&self) -> usize {
        self.positions.len()
    }
}

/// Body-frame rotation `R = [e1 e2 e3]` and the conditioning of its triple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameResult {
    /// Row-major; column `k` is `e_{k+1}`.
    pub rotation: [[f64; 3]; 3],
    /// Smallest singular value of `G = XᵀX`, `X = [r_j − r_i, r_k − r_i]` (Å²).
    pub sigma_min: f64,
}

impl FrameResult {
    pub fn axis(&self, k: usize) -> Vec3 {
        [self.rotation[0][k], self.rotation[1][k], self.rotation[2][k]]
    }

    /// `Rᵀ v`
    pub fn to_body(&self, v: Vec3) -> Vec3 {
        [
            dot3(self.axis(0), v),
            dot3(self.axis(1), v),
            dot3(self.axis(2), v),
        ]
    }
}

/// Which atoms build the frame and which one supplies the direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameAtoms {
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub anchor: usize,
}

impl FrameAtoms {
    pub fn new(i: usize, j: usize, k: usize, anchor: usize) -> Result<Self> {
        if i == j || j == k || i == k {
            return Err(Error::arg(format!(
                "frame atoms ({i}, {j}, {k}) must be pairwise distinct"
            )));
        }
        Ok(Self { i, j, k, anchor })
    }

    fn check(&self, n_atoms: usize) -> Result<()> {
        let max = self.i.max(self.j).max(self.k).max(self.anchor);
        if max >= n_atoms {
            return Err(Error::arg(format!(
                "atom index {max} out of range for {n_atoms} atoms"
            )));
        }
        Ok(())
    }
}

fn sigma_min_gram(a: Vec3, b: Vec3) -> f64 {
    let (g11, g12, g22) = (dot3(a, a), dot3(a, b), dot3(b, b));
    let tr = g11 + g22;
    let det = g11 * g22 - g12 * g12;
    let disc = ((g11 - g22) * (g11 - g22) + 4.0 * g12 * g12).sqrt();
    // smaller eigenvalue via det / larger to avoid cancellation
    let big = 0.5 * (tr + disc);
    if big > 0.0 {
        (det / big).max(0.0)
    } else {
        0.0
    }
}

/// Gram–Schmidt body frame: `e1 ∝ r_i − r_j`, `e3 ∝ e1 × (r_k − r_j)`,
/// `e2 = e3 × e1`.
pub fn body_frame(positions: &[Vec3], i: usize, j: usize, k: usize) -> Result<FrameResult> {
    let n = positions.len();
    if i >= n || j >= n || k >= n {
        return Err(Error::arg(format!("frame index out of range for {n} atoms")));
    }
    if i == j || j == k || i == k {
        return Err(Error::arg("frame atoms must be pairwise distinct"));
    }
    let (ri, rj, rk) = (positions[i], positions[j], positions[k]);
    let sigma_min = sigma_min_gram(sub(rj, ri), sub(rk, ri));
    if !(sigma_min > SIGMA_MIN_FLOOR) {
        return Err(Error::DegenerateFrame { sigma_min });
    }
    let a = sub(ri, rj);
    let e1 = scale(a, 1.0 / norm(a));
    let w = cross(e1, sub(rk, rj));
    let e3 = scale(w, 1.0 / norm(w));
    let e2 = cross(e3, e1);
    let rotation = [
        [e1[0], e2[0], e3[0]],
        [e1[1], e2[1], e3[1]],
        [e1[2], e2[2], e3[2]],
    ];
    Ok(FrameResult {
        rotation,
        sigma_min,
    })
}

fn centroid(positions: &[Vec3]) -> Vec3 {
    let s = positions.iter().fold([0.0; 3], |acc, p| add(acc, *p));
    scale(s, 1.0 / positions.len() as f64)
}

/// `Rᵀ Δ_a / ‖Δ_a‖` with `Δ_a = r_a − r̄`.
pub fn canonical_direction(positions: &[Vec3], frame: &FrameResult, a: usize) -> Result<Direction> {
    if a >= positions.len() {
        return Err(Error::arg(format!("anchor {a} out of range")));
    }
    let delta = sub(positions[a], centroid(positions));
    let nd = norm(delta);
    if !(nd > ANCHOR_FLOOR) {
        return Err(Error::DegenerateAnchor { norm: nd });
    }
    Direction::from_vector(frame.to_body(delta))
}

/// Injection parameters shared by every configuration of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionSpec {
    pub l_inj: usize,
    /// kcal/mol
    pub amplitude: f64,
    /// `c_m` for `m = −l..=l`.
    pub coeffs: Vec<f64>,
    pub atoms: FrameAtoms,
    pub coeff_seed: Option<u64>,
}

impl InjectionSpec {
    /// Draws `c_m ~ N(0, 1)` from `coeff_seed`.
    pub fn new(l_inj: usize, amplitude: f64, atoms: FrameAtoms, coeff_seed: u64) -> Result<Self> {
        let coeffs = standard_normals(&mut seeded(coeff_seed), 2 * l_inj + 1);
        let mut spec = Self::with_coefficients(l_inj, amplitude, coeffs, atoms)?;
        spec.coeff_seed = Some(coeff_seed);
        Ok(spec)
    }

    pub fn with_coefficients(
        l_inj: usize,
        amplitude: f64,
        coeffs: Vec<f64>,
        atoms: FrameAtoms,
    ) -> Result<Self> {
        if l_inj == 0 || l_inj > L_MAX_SUPPORTED {
            return Err(Error::arg(format!(
                "injection degree must be in 1..={L_MAX_SUPPORTED}, got {l_inj}"
            )));
        }
        if coeffs.len() != 2 * l_inj + 1 {
            return Err(Error::arg(format!(
                "degree {l_inj} needs {} coefficients, got {}",
                2 * l_inj + 1,
                coeffs.len()
            )));
        }
        if !amplitude.is_finite() || coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::arg("amplitude and coefficients must be finite"));
        }
        Ok(Self {
            l_inj,
            amplitude,
            coeffs,
            atoms,
            coeff_seed: None,
        })
    }

    pub fn with_amplitude(&self, amplitude: f64) -> Self {
        Self {
            amplitude,
            ..self.clone()
        }
    }
}

fn frame_and_direction(positions: &[Vec3], spec: &InjectionSpec) -> Result<(FrameResult, Direction)> {
    spec.atoms.check(positions.len())?;
    let f = body_frame(positions, spec.atoms.i, spec.atoms.j, spec.atoms.k)?;
    let d = canonical_direction(positions, &f, spec.atoms.anchor)?;
    Ok((f, d))
}

fn block_sum(spec: &InjectionSpec, values: &[f64]) -> f64 {
    let lo = spec.l_inj * spec.l_inj;
    dot(&values[lo..lo + 2 * spec.l_inj + 1], &spec.coeffs)
}

/// `E_inj = α Σ_m c_m Y_{l_inj}^m(r̂_canon)`.
pub fn injected_energy(config: &Configuration, spec: &InjectionSpec) -> Result<f64> {
    energy_at(&config.positions, spec)
}

fn energy_at(positions: &[Vec3], spec: &InjectionSpec) -> Result<f64> {
    let (_, d) = frame_and_direction(positions, spec)?;
    Ok(spec.amplitude * block_sum(spec, &sh_values(spec.l_inj, d.to_array())))
}

/// Injected energy and its exact forces `−∇E_inj`.
pub fn injected_energy_and_forces(
    positions: &[Vec3],
    spec: &InjectionSpec,
) -> Result<(f64, Vec<Vec3>)> {
    let (frame, dir) = frame_and_direction(positions, spec)?;
    let n = positions.len();
    let FrameAtoms { i, j, k, anchor } = spec.atoms;

    let u = dir.to_array();
    let (vals, grads) = sh_values_and_gradients(spec.l_inj, u);
    let energy = spec.amplitude * block_sum(spec, &vals);

    // dE/du of the polynomial extension, then through u = v/|v|, v = RᵀΔ
    let lo = spec.l_inj * spec.l_inj;
    let mut g_u = [0.0; 3];
    for (c, g) in spec.coeffs.iter().zip(&grads[lo..lo + 2 * spec.l_inj + 1]) {
        for ax in 0..3 {
            g_u[ax] += spec.amplitude * c * g[ax];
        }
    }
    let delta = sub(positions[anchor], centroid(positions));
    let dnorm = norm(delta);
    let g_v = scale(reject(g_u, u), 1.0 / dnorm);

    let e = [frame.axis(0), frame.axis(1), frame.axis(2)];
    let mut grad = vec![[0.0; 3]; n];

    // v_k = e_k · Δ
    let g_delta = (0..3).fold([0.0; 3], |acc, kk| add(acc, scale(e[kk], g_v[kk])));
    let inv_n = 1.0 / n as f64;
    for (p, g) in grad.iter_mut().enumerate() {
        let w = if p == anchor { 1.0 - inv_n } else { -inv_n };
        *g = scale(g_delta, w);
    }

    // adjoints of the frame axes
    let mut bar_e1 = scale(delta, g_v[0]);
    let bar_e2 = scale(delta, g_v[1]);
    let mut bar_e3 = scale(delta, g_v[2]);
    let (e1, e3) = (e[0], e[2]);
    // e2 = e3 × e1
    bar_e3 = add(bar_e3, cross(e1, bar_e2));
    bar_e1 = add(bar_e1, cross(bar_e2, e3));
    // e3 = w/|w|, w = e1 × b
    let b = sub(positions[k], positions[j]);
    let w = cross(e1, b);
    let bar_w = scale(reject(bar_e3, e3), 1.0 / norm(w));
    bar_e1 = add(bar_e1, cross(b, bar_w));
    let bar_b = cross(bar_w, e1);
    // e1 = a/|a|, a = r_i − r_j
    let a = sub(positions[i], positions[j]);
    let bar_a = scale(reject(bar_e1, e1), 1.0 / norm(a));

    grad[i] = add(grad[i], bar_a);
    grad[j] = sub(grad[j], bar_a);
    grad[k] = add(grad[k], bar_b);
    grad[j] = sub(grad[j], bar_b);

    let forces = grad.into_iter().map(|g| scale(g, -1.0)).collect();
    Ok((energy, forces))
}

pub fn injected_forces(config: &Configuration, spec: &InjectionSpec) -> Result<Vec<Vec3>> {
    Ok(injected_energy_and_forces(&config.positions, spec)?.1)
}

/// Central finite-difference reference for [`injected_forces`].
pub fn injected_forces_fd(positions: &[Vec3], spec: &InjectionSpec, h: f64) -> Result<Vec<Vec3>> {
    let mut work = positions.to_vec();
    let mut out = vec![[0.0; 3]; positions.len()];
    for p in 0..positions.len() {
        for ax in 0..3 {
            let x0 = work[p][ax];
            work[p][ax] = x0 + h;
            let ep = energy_at(&work, spec)?;
            work[p][ax] = x0 - h;
            let em = energy_at(&work, spec)?;
            work[p][ax] = x0;
            out[p][ax] = -(ep - em) / (2.0 * h);
        }
    }
    Ok(out)
}

/// A frame that failed the frame/anchor gates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub frame: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DegeneratePolicy {
    Abort,
    Skip,
}

#[derive(Debug, Clone)]
pub struct InjectionOutcome {
    pub configs: Vec<Configuration>,
    /// Input index of each output frame.
    pub kept: Vec<usize>,
    pub rejected: Vec<Rejection>,
    /// Per kept frame.
    pub injected_energy: Vec<f64>,
    pub injected_forces: Vec<Vec<Vec3>>,
}

/// Adds `E_inj` and `F_inj` to every frame. The input is not modified.
pub fn inject_dataset(
    dataset: &[Configuration],
    spec: &InjectionSpec,
    policy: DegeneratePolicy,
) -> Result<InjectionOutcome> {
    let results: Vec<Result<(f64, Vec<Vec3>)>> = dataset
        .par_iter()
        .map(|c| injected_energy_and_forces(&c.positions, spec))
        .collect();
    let mut out = InjectionOutcome {
        configs: Vec::with_capacity(dataset.len()),
        kept: Vec::new(),
        rejected: Vec::new(),
        injected_energy: Vec::new(),
        injected_forces: Vec::new(),
    };
    for (idx, (cfg, res)) in dataset.iter().zip(results).enumerate() {
        match res {
            Ok((e, f)) => {
                let mut c = cfg.clone();
                c.energy += e;
                for (fc, fi) in c.forces.iter_mut().zip(&f) {
                    *fc = add(*fc, *fi);
                }
                out.configs.push(c);
                out.kept.push(idx);
                out.injected_energy.push(e);
                out.injected_forces.push(f);
            }
            Err(err @ (Error::DegenerateFrame { .. } | Error::DegenerateAnchor { .. })) => {
                out.rejected.push(Rejection {
                    frame: idx,
                    reason: err.to_string(),
                });
            }
            Err(err) => return Err(err),
        }
    }
    if policy == DegeneratePolicy::Abort && !out.rejected.is_empty() {
        return Err(Error::RejectedFrames(out.rejected));
    }
    Ok(out)
}

/// `F_nat + k (F_1x − F_nat)`.
pub fn amplitude_calibrate(
    f_nat: &[Vec<Vec3>],
    f_1x: &[Vec<Vec3>],
    k: f64,
) -> Result<Vec<Vec<Vec3>>> {
    if f_nat.len() != f_1x.len() || f_nat.iter().zip(f_1x).any(|(a, b)| a.len() != b.len()) {
        return Err(Error::arg("force arrays are not shape-matched"));
    }
    Ok(f_nat
        .iter()
        .zip(f_1x)
        .map(|(a, b)| {
            a.iter()
                .zip(b)
                .map(|(fa, fb)| add(*fa, scale(sub(*fb, *fa), k)))
                .collect()
        })
        .collect())
}

fn component_variance(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let (n, s) = values.clone().fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
    if n == 0 {
        return 0.0;
    }
    let m = s / n as f64;
    values.map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64
}

/// `η = σ²_inj / (σ²_nat + σ²_inj)` over all force components.
pub fn variance_share(natural: &[Configuration], injected: &[Configuration]) -> Result<f64> {
    if natural.is_empty() {
        return Err(Error::arg("variance share of an empty dataset"));
    }
    if natural.len() != injected.len()
        || natural
            .iter()
            .zip(injected)
            .any(|(a, b)| a.n_atoms() != b.n_atoms())
    {
        return Err(Error::arg("natural and injected datasets differ in shape"));
    }
    let nat = natural
        .iter()
        .flat_map(|c| c.forces.iter().flat_map(|f| f.iter().copied()));
    let delta = natural.iter().zip(injected).flat_map(|(a, b)| {
        a.forces
            .iter()
            .zip(&b.forces)
            .flat_map(|(fa, fb)| (0..3).map(move |k| fb[k] - fa[k]))
    });
    let var_nat = component_variance(nat);
    let var_inj = component_variance(delta);
    if var_inj == 0.0 {
        return Ok(0.0);
    }
    Ok(var_inj / (var_nat + var_inj))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageReport {
    pub rho2_max: f64,
    /// `(split_a, split_b, coefficient)` attaining the maximum.
    pub worst: Option<(usize, usize, usize)>,
    /// Series pairs skipped because one side was constant.
    pub excluded: usize,
    pub passes: bool,
}

fn pearson_sq(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    let scale_a = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let scale_b = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    if saa <= 1e-24 * scale_a * scale_a * n || sbb <= 1e-24 * scale_b * scale_b * n {
        return None;
    }
    Some((sab * sab / (saa * sbb)).min(1.0))
}

/// Max squared Pearson correlation between per-coefficient series of
/// different splits.
///
/// `splits[s][f]` is the projected coefficient vector of frame `f` in split
/// `s`. For each split pair and coefficient the two series are aligned by
/// frame order and truncated to the shorter split.
pub fn split_leakage(splits: &[Vec<Vec<f64>>]) -> Result<LeakageReport> {
    if splits.len() < 2 {
        return Err(Error::arg("leakage needs at least two splits"));
    }
    let width = splits[0].first().map_or(0, Vec::len);
    for s in splits {
        if s.len() < 2 {
            return Err(Error::arg("each split needs at least two samples"));
        }
        if s.iter().any(|v| v.len() != width) {
            return Err(Error::arg("coefficient vectors differ in length"));
        }
    }
    let mut rho2_max = 0.0;
    let mut worst = None;
    let mut excluded = 0;
    for a in 0..splits.len() {
        for b in (a + 1)..splits.len() {
            let n = splits[a].len().min(splits[b].len());
            for c in 0..width {
                let sa: Vec<f64> = splits[a][..n].iter().map(|v| v[c]).collect();
                let sb: Vec<f64> = splits[b][..n].iter().map(|v| v[c]).collect();
                match pearson_sq(&sa, &sb) {
                    Some(r2) => {
                        if r2 > rho2_max || worst.is_none() {
                            rho2_max = r2;
                            worst = Some((a, b, c));
                        }
                    }
                    None => {
                        log::warn!("constant coefficient series (splits {a}/{b}, coeff {c}) excluded from leakage");
                        excluded += 1;
                    }
                }
            }
        }
    }
    Ok(LeakageReport {
        rho2_max,
        worst,
        excluded,
        passes: rho2_max < LEAKAGE_GATE,
    })
}

/// Degree-`l_inj` harmonics of each frame's canonical direction: the
/// per-frame regressors of the injected energy.
pub fn injection_regressors(dataset: &[Configuration], spec: &InjectionSpec) -> Result<Vec<Vec<f64>>> {
    dataset
        .iter()
        .map(|c| {
            let (_, d) = frame_and_direction(&c.positions, spec)?;
            let phi: SHVector = feature_vector(spec.l_inj, &d)?;
            Ok(phi.block(spec.l_inj).to_vec())
        })
        .collect()
}

/// Deterministic train/val/test partition from a seeded shuffle.
pub fn split_indices(n: usize, fractions: [f64; 3], seed: u64) -> Result<[Vec<usize>; 3]> {
    use rand::seq::SliceRandom;
    let total: f64 = fractions.iter().sum();
    if fractions.iter().any(|f| !(*f >= 0.0)) || !(total > 0.0) {
        return Err(Error::arg("split fractions must be non-negative with a positive sum"));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seeded(seed));
    let n_train = ((fractions[0] / total) * n as f64).round() as usize;
    let n_val = (((fractions[1] / total) * n as f64).round() as usize).min(n - n_train.min(n));
    let n_train = n_train.min(n);
    let test = idx.split_off(n_train + n_val);
    let val = idx.split_off(n_train);
    Ok([idx, val, test])
}
