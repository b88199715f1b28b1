//! Angular bandwidth of inputs: per-atom `ℓ*` of shell-weighted neighbour
//! densities, and the body-frame spectrum of natural energies.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::injector::{body_frame, canonical_direction, Configuration, FrameAtoms, Vec3};
use crate::linalg::{design_matrix, LeastSquares, Solver};
use crate::metrics::{percentile_sorted, resample_indices, MeanCi, CI_LEVEL, MIN_RESAMPLES};
use crate::sphharm::{feature_vector, n_coeffs, Direction, SHVector, L_MAX_SUPPORTED};
use crate::xyz::PointGroup;
use crate::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.95;
const LSTAR_TOL: f64 = 1e-12;
const SPECTRUM_RIDGE: f64 = 1e-8;

/// Neighbour ball and Gaussian shell `g(r) = exp(−(r − μ)² / 2σ²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShellParams {
    pub r_cut: f64,
    pub shell_mu: f64,
    pub shell_sigma: f64,
    pub l_max: usize,
}

impl Default for ShellParams {
    fn default() -> Self {
        Self {
            r_cut: 5.0,
            shell_mu: 2.5,
            shell_sigma: 1.0,
            l_max: 10,
        }
    }
}

impl ShellParams {
    fn validate(&self) -> Result<()> {
        if !(self.r_cut > 0.0) || !(self.shell_sigma > 0.0) || !self.shell_mu.is_finite() {
            return Err(Error::arg("r_cut and shell width must be positive"));
        }
        if self.l_max > L_MAX_SUPPORTED {
            return Err(Error::arg(format!("l_max {} too large", self.l_max)));
        }
        Ok(())
    }

    pub fn weight(&self, r: f64) -> f64 {
        let t = (r - self.shell_mu) / self.shell_sigma;
        (-0.5 * t * t).exp()
    }
}

/// Density coefficients around one centre atom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborDensity {
    pub coeffs: SHVector,
    pub n_neighbors: usize,
    /// No neighbour inside the ball; `coeffs` is zero.
    pub empty: bool,
}

/// `c_ℓm = Σ_j g(r_j) Y_ℓ^m(r̂_j)` over neighbours with `0 < r_j ≤ r_cut`.
pub fn neighbor_density_coeffs(
    positions: &[Vec3],
    center: usize,
    params: &ShellParams,
) -> Result<NeighborDensity> {
    neighbor_density_masked(positions, center, params, |_| true)
}

fn neighbor_density_masked(
    positions: &[Vec3],
    center: usize,
    params: &ShellParams,
    include: impl Fn(usize) -> bool,
) -> Result<NeighborDensity> {
    params.validate()?;
    let c = *positions
        .get(center)
        .ok_or_else(|| Error::arg(format!("center {center} out of range")))?;
    let mut coeffs = SHVector::zeros(params.l_max);
    let mut n_neighbors = 0;
    for (j, p) in positions.iter().enumerate() {
        if j == center || !include(j) {
            continue;
        }
        let d = [p[0] - c[0], p[1] - c[1], p[2] - c[2]];
        let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        if r > params.r_cut || r == 0.0 {
            continue;
        }
        let g = params.weight(r);
        let phi = feature_vector(params.l_max, &Direction::from_vector(d)?)?;
        coeffs
            .coeffs_mut()
            .iter_mut()
            .zip(phi.coeffs())
            .for_each(|(c, y)| *c += g * y);
        n_neighbors += 1;
    }
    if n_neighbors == 0 {
        log::warn!("atom {center} has no neighbours within {} Å", params.r_cut);
    }
    Ok(NeighborDensity {
        coeffs,
        n_neighbors,
        empty: n_neighbors == 0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthProfile {
    /// Per-degree power fractions; all zero when the density vanishes.
    pub w: Vec<f64>,
    /// `None` when the density has no power.
    pub lstar: Option<usize>,
}

/// `w(ℓ) = ‖c_ℓ‖² / ‖c‖²` and the first `ℓ` whose cumulative fraction reaches
/// `threshold` (to within 1e-12).
pub fn bandwidth_lstar(coeffs: &SHVector, threshold: f64) -> Result<BandwidthProfile> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::arg(format!("threshold {threshold} outside (0, 1]")));
    }
    let power = coeffs.power_spectrum();
    let total: f64 = power.iter().sum();
    if !(total > 0.0) {
        return Ok(BandwidthProfile {
            w: vec![0.0; power.len()],
            lstar: None,
        });
    }
    let w: Vec<f64> = power.iter().map(|p| p / total).collect();
    let mut cum = 0.0;
    let mut lstar = w.len() - 1;
    for (l, wl) in w.iter().enumerate() {
        cum += wl;
        if cum >= threshold - LSTAR_TOL {
            lstar = l;
            break;
        }
    }
    if threshold == 1.0 {
        lstar = w.iter().rposition(|&x| x > 0.0).unwrap_or(0);
    }
    Ok(BandwidthProfile { w, lstar: Some(lstar) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandwidthParams {
    pub shell: ShellParams,
    pub threshold: f64,
    pub resamples: usize,
    pub seed: u64,
}

impl Default for BandwidthParams {
    fn default() -> Self {
        Self {
            shell: ShellParams::default(),
            threshold: DEFAULT_THRESHOLD,
            resamples: 10_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomBandwidth {
    pub group: usize,
    pub atom: usize,
    pub element: String,
    pub n_neighbors: usize,
    pub w: Vec<f64>,
    pub lstar: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthSummary {
    pub n_groups: usize,
    pub n_atoms: usize,
    /// Atoms with an empty ball (no `ℓ*`).
    pub n_undefined: usize,
    pub median_lstar: f64,
    pub frac_le4: f64,
    /// Group-level bootstrap of the median.
    pub median_ci: MeanCi,
    /// Group-level bootstrap of `P(ℓ* ≤ 4)`.
    pub frac_le4_ci: MeanCi,
    /// Atom counts for `ℓ* = 0..=l_max`.
    pub histogram: Vec<usize>,
    pub resamples: usize,
    pub atoms: Vec<AtomBandwidth>,
}

fn pooled_stats(per_group: &[Vec<usize>], groups: &[usize]) -> Option<(f64, f64)> {
    let mut pooled: Vec<f64> = groups
        .iter()
        .flat_map(|&g| per_group[g].iter().map(|&l| l as f64))
        .collect();
    if pooled.is_empty() {
        return None;
    }
    pooled.sort_by(|a, b| a.total_cmp(b));
    let le4 = pooled.iter().filter(|&&l| l <= 4.0).count() as f64 / pooled.len() as f64;
    Some((percentile_sorted(&pooled, 0.5), le4))
}

fn ci_of(mut v: Vec<f64>, point: f64) -> MeanCi {
    v.sort_by(|a, b| a.total_cmp(b));
    let tail = (1.0 - CI_LEVEL) / 2.0;
    MeanCi {
        mean: point,
        lo: percentile_sorted(&v, tail),
        hi: percentile_sorted(&v, 1.0 - tail),
    }
}

/// Pools per-atom `ℓ*` over every atom accepted by `is_heavy` (both as
/// centre and as neighbour) and bootstraps at the group level.
pub fn dataset_bandwidth(
    groups: &[PointGroup],
    params: &BandwidthParams,
    is_heavy: impl Fn(&str) -> bool + Sync,
) -> Result<BandwidthSummary> {
    params.shell.validate()?;
    if groups.is_empty() {
        return Err(Error::arg("empty dataset"));
    }
    if params.resamples < MIN_RESAMPLES {
        return Err(Error::arg(format!(
            "B = {} below {MIN_RESAMPLES}",
            params.resamples
        )));
    }
    let atoms: Vec<AtomBandwidth> = groups
        .par_iter()
        .enumerate()
        .map(|(gi, g)| {
            let heavy: Vec<bool> = g.elements.iter().map(|e| is_heavy(e)).collect();
            (0..g.positions.len())
                .filter(|&a| heavy[a])
                .map(|a| {
                    let dens =
                        neighbor_density_masked(&g.positions, a, &params.shell, |j| heavy[j])?;
                    let prof = bandwidth_lstar(&dens.coeffs, params.threshold)?;
                    Ok(AtomBandwidth {
                        group: gi,
                        atom: a,
                        element: g.elements[a].clone(),
                        n_neighbors: dens.n_neighbors,
                        w: prof.w,
                        lstar: prof.lstar,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    if atoms.is_empty() {
        return Err(Error::arg("no atoms pass the heavy-atom filter"));
    }
    let mut per_group = vec![Vec::new(); groups.len()];
    let mut histogram = vec![0; params.shell.l_max + 1];
    let mut n_undefined = 0;
    for a in &atoms {
        match a.lstar {
            Some(l) => {
                per_group[a.group].push(l);
                histogram[l] += 1;
            }
            None => n_undefined += 1,
        }
    }
    let all: Vec<usize> = (0..groups.len()).collect();
    let (median, le4) = pooled_stats(&per_group, &all)
        .ok_or_else(|| Error::arg("every atom has an empty neighbour ball"))?;
    let boot: Vec<(f64, f64)> = resample_indices(groups.len(), params.resamples, params.seed, |idx| {
        pooled_stats(&per_group, idx)
    })
    .into_iter()
    .flatten()
    .collect();
    let median_ci = ci_of(boot.iter().map(|b| b.0).collect(), median);
    let frac_le4_ci = ci_of(boot.iter().map(|b| b.1).collect(), le4);
    Ok(BandwidthSummary {
        n_groups: groups.len(),
        n_atoms: atoms.len(),
        n_undefined,
        median_lstar: median,
        frac_le4: le4,
        median_ci,
        frac_le4_ci,
        histogram,
        resamples: params.resamples,
        atoms,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergySpectrum {
    pub l_max: usize,
    /// `Σ_m ĉ_ℓm²` for `ℓ = 0..=l_max`.
    pub power: Vec<f64>,
    /// Share of the angular (`ℓ ≥ 1`) power at each degree; `[0]` is zero.
    pub angular_fraction: Vec<f64>,
    pub frac_above_2: f64,
    pub frac_above_4: f64,
    /// Two largest `(ℓ, share)` among `ℓ ≥ 1`.
    pub peaks: Vec<(usize, f64)>,
    pub n_frames: usize,
    pub n_rejected: usize,
    /// The design was rank deficient and ridge was applied.
    pub ridge_fallback: bool,
}

/// Least-squares regression of frame energies on `φ_{l_max}(r̂_canon)`.
///
/// Shares are taken over the angular power `Σ_{ℓ≥1}`, since the degree-0
/// term carries the energy offset. Frames with a degenerate frame or anchor
/// are skipped.
pub fn natural_energy_spectrum(
    dataset: &[Configuration],
    atoms: FrameAtoms,
    l_max: usize,
) -> Result<EnergySpectrum> {
    if l_max > L_MAX_SUPPORTED {
        return Err(Error::arg(format!("l_max {l_max} too large")));
    }
    let rows: Vec<Option<(Vec<f64>, f64)>> = dataset
        .par_iter()
        .map(|c| {
            let frame = match body_frame(&c.positions, atoms.i, atoms.j, atoms.k) {
                Ok(f) => f,
                Err(Error::DegenerateFrame { .. }) => return Ok(None),
                Err(e) => return Err(e),
            };
            let dir = match canonical_direction(&c.positions, &frame, atoms.anchor) {
                Ok(d) => d,
                Err(Error::DegenerateAnchor { .. }) => return Ok(None),
                Err(e) => return Err(e),
            };
            Ok(Some((feature_vector(l_max, &dir)?.into_coeffs(), c.energy)))
        })
        .collect::<Result<_>>()?;
    let n_rejected = rows.iter().filter(|r| r.is_none()).count();
    let (x, y): (Vec<Vec<f64>>, Vec<f64>) = rows.into_iter().flatten().unzip();
    let p = n_coeffs(l_max);
    if x.is_empty() {
        return Err(Error::arg("no usable frames"));
    }
    if x.len() < p {
        log::warn!("{} frames for {p} spectral coefficients", x.len());
    }
    let design = design_matrix(&x);
    let mut ls = LeastSquares::new(design.clone(), 0.0, Solver::Svd);
    let ridge_fallback = ls.rank_deficient;
    if ridge_fallback {
        log::warn!("rank-deficient spectrum regression, using ridge {SPECTRUM_RIDGE}");
        ls = LeastSquares::new(design, SPECTRUM_RIDGE, Solver::Svd);
    }
    let c = SHVector::new(l_max, ls.solve(&y))?;
    let power = c.power_spectrum();
    let angular: f64 = power[1..].iter().sum();
    let scale = power.iter().sum::<f64>().max(f64::MIN_POSITIVE);
    let angular_fraction: Vec<f64> = if angular > 1e-24 * scale {
        std::iter::once(0.0)
            .chain(power[1..].iter().map(|p| p / angular))
            .collect()
    } else {
        vec![0.0; l_max + 1]
    };
    let above = |k: usize| angular_fraction.iter().skip(k + 1).sum::<f64>().min(1.0);
    let mut ranked: Vec<(usize, f64)> = angular_fraction
        .iter()
        .copied()
        .enumerate()
        .skip(1)
        .filter(|&(_, f)| f > 0.0)
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(2);
    Ok(EnergySpectrum {
        l_max,
        frac_above_2: above(2),
        frac_above_4: above(4),
        power,
        angular_fraction,
        peaks: ranked,
        n_frames: x.len(),
        n_rejected,
        ridge_fallback,
    })
}
