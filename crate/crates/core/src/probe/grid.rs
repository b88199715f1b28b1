use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::poly::{PolyProbe, PolyProbeConfig, ProbeResult};
use crate::rng::{seeded_stream, standard_normals, uniform_directions};
use crate::sphharm::{feature_vector, n_coeffs, Direction, SHVector, L_MAX_SUPPORTED};
use crate::{Error, Result};

/// The eight `(L, d)` cells with `d·L ≤ 9` from `{1,2,3} × {2,3,4}`.
pub const DEFAULT_CELLS: [(usize, usize); 8] = [
    (1, 2),
    (1, 3),
    (1, 4),
    (2, 2),
    (2, 3),
    (2, 4),
    (3, 2),
    (3, 3),
];

const DIRECTION_STREAM: u64 = 1;
const TARGET_STREAM: u64 = 1 << 20;

/// A unit-norm random combination `Σ_m c_m Y_l^m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTarget {
    pub l: usize,
    /// `2l + 1` coefficients ordered by `m = -l..=l`.
    pub coeffs: Vec<f64>,
}

impl SynthTarget {
    pub fn eval(&self, dir: &Direction) -> f64 {
        let phi = feature_vector(self.l, dir).expect("degree checked at construction");
        crate::sphharm::dot(phi.block(self.l), &self.coeffs)
    }

    pub fn eval_many(&self, dirs: &[Direction]) -> Vec<f64> {
        dirs.iter().map(|d| self.eval(d)).collect()
    }

    pub fn to_sh(&self) -> SHVector {
        let mut v = SHVector::zeros(self.l);
        for (k, m) in (-(self.l as i64)..=self.l as i64).enumerate() {
            v.set(self.l, m, self.coeffs[k]);
        }
        v
    }
}

pub fn synth_target(l: usize, coeff_seed: u64) -> Result<SynthTarget> {
    if l > L_MAX_SUPPORTED {
        return Err(Error::arg(format!("target degree {l} too large")));
    }
    let mut rng = seeded_stream(coeff_seed, TARGET_STREAM + l as u64);
    let mut coeffs = standard_normals(&mut rng, 2 * l + 1);
    let norm = coeffs.iter().map(|c| c * c).sum::<f64>().sqrt();
    coeffs.iter_mut().for_each(|c| *c /= norm);
    Ok(SynthTarget { l, coeffs })
}

/// Uniform directions on the sphere for one stream of a seed.
pub fn sample_directions(n: usize, seed: u64, stream: u64) -> Vec<Direction> {
    uniform_directions(&mut seeded_stream(seed, stream), n)
}

/// One `(L, d)` row of the saturation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub l: usize,
    pub d: usize,
    pub n: usize,
    pub seed: u64,
    /// One fit per target degree `0..=l_top`.
    pub fits: Vec<ProbeResult>,
}

impl GridCell {
    pub fn ceiling(&self) -> usize {
        self.d * self.l
    }

    pub fn r_squared(&self, ell: usize) -> Option<f64> {
        self.fits.get(ell).map(|f| f.r_squared)
    }

    pub fn r2_at(&self) -> f64 {
        self.fits[self.ceiling()].r_squared
    }

    pub fn r2_above(&self) -> f64 {
        self.fits[self.ceiling() + 1].r_squared
    }

    /// `R²(dL) − R²(dL + 1)`.
    pub fn delta_r2(&self) -> f64 {
        self.r2_at() - self.r2_above()
    }
}

/// Fits synthetic single-degree targets at every cell for `ℓ = 0..=max(dL + extra, 12)`.
///
/// Each cell draws its own directions from `(seed, L, d)` and shares target
/// coefficients across cells, so results do not depend on scheduling.
pub fn saturation_grid(
    cells: &[(usize, usize)],
    l_max_extra: usize,
    n: usize,
    seed: u64,
    ridge: f64,
    solver: super::Solver,
) -> Result<Vec<GridCell>> {
    for &(l, d) in cells {
        let top = (d * l + l_max_extra).max(12);
        if top > L_MAX_SUPPORTED {
            return Err(Error::Resource {
                what: "grid target degree",
                count: top,
                limit: L_MAX_SUPPORTED,
            });
        }
        if l_max_extra == 0 && d * l + 1 > top {
            return Err(Error::arg("grid must reach one degree above the ceiling"));
        }
    }
    cells
        .par_iter()
        .map(|&(l, d)| {
            let top = (d * l + l_max_extra).max(12);
            let dirs = sample_directions(n, seed, DIRECTION_STREAM + (100 * l + d) as u64);
            let probe = PolyProbe::new(
                &dirs,
                PolyProbeConfig {
                    l,
                    d,
                    ridge,
                    solver,
                },
            )?;
            let fits = (0..=top)
                .map(|ell| {
                    let target = synth_target(ell, seed)?;
                    probe.fit_cell(&target.eval_many(&dirs), Some(ell))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(GridCell {
                l,
                d,
                n,
                seed,
                fits,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HardCeiling {
    pub l: usize,
    pub band: usize,
    pub mse_within: f64,
    pub var_within: f64,
    pub mse_above: f64,
    pub var_above: f64,
}

/// Linear probe at degree `l` against a target bandlimited to `band ≤ l`
/// and against a pure degree `l + 1` target.
pub fn hard_ceiling_check(l: usize, band: usize, seed: u64, n: usize) -> Result<HardCeiling> {
    if band > l {
        return Err(Error::arg(format!("band {band} exceeds feature degree {l}")));
    }
    if l + 1 > L_MAX_SUPPORTED {
        return Err(Error::arg(format!("feature degree {l} leaves no room above")));
    }
    let dirs = sample_directions(n, seed, DIRECTION_STREAM);
    let probe = PolyProbe::new(&dirs, PolyProbeConfig::new(l, 1))?;

    let mut rng = seeded_stream(seed, TARGET_STREAM - 1);
    let mut coeffs = standard_normals(&mut rng, n_coeffs(band));
    let norm = coeffs.iter().map(|c| c * c).sum::<f64>().sqrt();
    coeffs.iter_mut().for_each(|c| *c /= norm);
    let within = SHVector::new(band, coeffs)?;
    let y_within: Vec<f64> = dirs.iter().map(|d| within.synthesize(d)).collect();
    let fit_within = probe.fit(&y_within)?;

    let above = synth_target(l + 1, seed)?;
    let fit_above = probe.fit_cell(&above.eval_many(&dirs), Some(l + 1))?;
    Ok(HardCeiling {
        l,
        band,
        mse_within: fit_within.mse,
        var_within: fit_within.target_variance,
        mse_above: fit_above.mse,
        var_above: fit_above.target_variance,
    })
}
