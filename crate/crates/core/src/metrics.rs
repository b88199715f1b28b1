//! Recovery fraction, sharpness, injected-residual R² and bootstrap CIs.
//!
//! `ρ` measures what fraction of the gap between a low anchor and a high
//! anchor a probe architecture closes at one injection degree. When the gap
//! is not strictly positive `ρ` is undefined and callers fall back to the raw
//! gain `Δ = y_low − y_arch`. Undefined is a value here, never an error.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::seeded;
use crate::{Error, Result};

/// Two-sided percentile interval level used throughout.
pub const CI_LEVEL: f64 = 0.95;

/// Normalised per-component force error `y = MAE / σ_F`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizedError {
    pub y: f64,
    pub mae: f64,
    pub sigma_f: f64,
}

pub fn normalized_error(force_mae: f64, sigma_f: f64) -> Result<NormalizedError> {
    if !(sigma_f > 0.0) || !sigma_f.is_finite() {
        return Err(Error::arg(format!("sigma_F must be positive, got {sigma_f}")));
    }
    if !(force_mae >= 0.0) {
        return Err(Error::arg(format!("force MAE must be non-negative, got {force_mae}")));
    }
    Ok(NormalizedError {
        y: force_mae / sigma_f,
        mae: force_mae,
        sigma_f,
    })
}

/// Per-component MAE `Σ|F_pred − F_true| / (3N)` for one frame.
pub fn force_mae(pred: &[[f64; 3]], truth: &[[f64; 3]]) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::arg("force arrays must be non-empty and shape-matched"));
    }
    let s: f64 = pred
        .iter()
        .zip(truth)
        .flat_map(|(p, t)| (0..3).map(move |k| (p[k] - t[k]).abs()))
        .sum();
    Ok(s / (3 * pred.len()) as f64)
}

/// `σ_F = sqrt(⟨‖F‖²⟩)` over all atoms of all frames.
pub fn sigma_f(frames: &[Vec<[f64; 3]>]) -> Result<f64> {
    let mut n = 0usize;
    let mut s = 0.0;
    for f in frames.iter().flatten() {
        s += f[0] * f[0] + f[1] * f[1] + f[2] * f[2];
        n += 1;
    }
    if n == 0 {
        return Err(Error::arg("sigma_F of an empty force set"));
    }
    Ok((s / n as f64).sqrt())
}

/// Why a recovery fraction could not be formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UndefinedReason {
    NonPositiveDenominator,
}

/// `ρ` with its fallback gain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Recovery {
    pub rho: Option<f64>,
    /// `y_low − y_arch`, always reported.
    pub delta: f64,
    pub undefined_reason: Option<UndefinedReason>,
}

/// `(y_low − y_arch) / (y_low − y_high)` when the anchor gap is positive.
pub fn recovery_fraction(y_low: f64, y_arch: f64, y_high: f64) -> Recovery {
    let delta = y_low - y_arch;
    let gap = y_low - y_high;
    if gap > 0.0 {
        Recovery {
            rho: Some(delta / gap),
            delta,
            undefined_reason: None,
        }
    } else {
        Recovery {
            rho: None,
            delta,
            undefined_reason: Some(UndefinedReason::NonPositiveDenominator),
        }
    }
}

/// A `ρ` (or `Δ`) estimate at one degree, optionally with a CI.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RhoEstimate {
    pub rho: Option<f64>,
    pub ci: Option<(f64, f64)>,
    pub delta: f64,
}

impl RhoEstimate {
    pub fn point(rho: f64) -> Self {
        Self {
            rho: Some(rho),
            ci: None,
            delta: f64::NAN,
        }
    }
}

impl From<Recovery> for RhoEstimate {
    fn from(r: Recovery) -> Self {
        Self {
            rho: r.rho,
            ci: None,
            delta: r.delta,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SharpnessKind {
    /// `ρ(dL) / ρ(dL+1)`.
    Ratio,
    /// `ρ_lo(dL) / ρ_hi(dL+1)`, used when `ρ(dL+1)` is consistent with zero.
    LowerBound,
    /// `Δ(dL) / Δ(dL+1)`, used when either `ρ` is undefined.
    DeltaFallback,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sharpness {
    pub xi: Option<f64>,
    pub kind: SharpnessKind,
}

/// Sharpness index `Ξ` of the cliff between two adjacent degrees.
pub fn sharpness(at: &RhoEstimate, above: &RhoEstimate) -> Sharpness {
    match (at.rho, above.rho) {
        (Some(r_at), Some(r_above)) => {
            if let Some((lo, hi)) = above.ci {
                if lo <= 0.0 {
                    let num = at.ci.map_or(r_at, |c| c.0);
                    return Sharpness {
                        xi: (hi > 0.0).then(|| num / hi),
                        kind: SharpnessKind::LowerBound,
                    };
                }
            }
            Sharpness {
                xi: (r_above > 0.0).then(|| r_at / r_above),
                kind: SharpnessKind::Ratio,
            }
        }
        _ => Sharpness {
            xi: (above.delta > 0.0).then(|| at.delta / above.delta),
            kind: SharpnessKind::DeltaFallback,
        },
    }
}

/// Plain ratio form, for callers holding two point values.
pub fn sharpness_ratio(rho_at: f64, rho_above: f64) -> Option<f64> {
    sharpness(&RhoEstimate::point(rho_at), &RhoEstimate::point(rho_above)).xi
}

/// `1 − ⟨‖ΔF_pred − F_inj‖²⟩ / ⟨‖F_inj‖²⟩` over all frames and atoms.
pub fn r2_injected(delta_pred: &[Vec<[f64; 3]>], f_inj: &[Vec<[f64; 3]>]) -> Result<f64> {
    if delta_pred.len() != f_inj.len() {
        return Err(Error::arg("frame counts differ"));
    }
    let mut resid = 0.0;
    let mut power = 0.0;
    for (p, t) in delta_pred.iter().zip(f_inj) {
        if p.len() != t.len() {
            return Err(Error::arg("atom counts differ within a frame"));
        }
        for (a, b) in p.iter().zip(t) {
            for k in 0..3 {
                resid += (a[k] - b[k]).powi(2);
                power += b[k] * b[k];
            }
        }
    }
    if !(power > 0.0) {
        return Err(Error::arg("injected force power is zero"));
    }
    Ok(1.0 - resid / power)
}

/// Mean with a percentile bootstrap interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanCi {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Linear-interpolation percentile of sorted data (`q` in [0, 1]).
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 >= sorted.len() {
        sorted[sorted.len() - 1]
    } else {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    }
}

fn percentile_ci(mut stats: Vec<f64>) -> (f64, f64) {
    stats.sort_by(|a, b| a.total_cmp(b));
    let tail = (1.0 - CI_LEVEL) / 2.0;
    (
        percentile_sorted(&stats, tail),
        percentile_sorted(&stats, 1.0 - tail),
    )
}

/// Draws `B` index resamples of size `n` with replacement and applies `stat`.
///
/// Resamples are drawn serially from one seeded stream, so results are
/// reproducible across platforms and thread counts.
pub fn resample_indices<T>(
    n: usize,
    b: usize,
    rng_seed: u64,
    mut stat: impl FnMut(&[usize]) -> T,
) -> Vec<T> {
    let mut rng = seeded(rng_seed);
    let mut idx = vec![0usize; n];
    (0..b)
        .map(|_| {
            for slot in idx.iter_mut() {
                *slot = rng.random_range(0..n);
            }
            stat(&idx)
        })
        .collect()
}

/// Minimum number of bootstrap resamples accepted.
pub const MIN_RESAMPLES: usize = 1000;

/// Sample mean with a 95 % percentile bootstrap CI of the mean.
pub fn bootstrap_mean_ci(values: &[f64], b: usize, rng_seed: u64) -> Result<MeanCi> {
    if values.len() < 2 {
        return Err(Error::arg("bootstrap needs at least two values"));
    }
    if b < MIN_RESAMPLES {
        return Err(Error::arg(format!("B = {b} below {MIN_RESAMPLES}")));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let stats = resample_indices(n, b, rng_seed, |idx| {
        idx.iter().map(|&i| values[i]).sum::<f64>() / n as f64
    });
    let (lo, hi) = percentile_ci(stats);
    Ok(MeanCi { mean, lo, hi })
}

/// Cluster-bootstrap contrast of two matched per-cluster gains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterContrast {
    pub mean_at: f64,
    pub mean_above: f64,
    /// `mean_at / mean_above` on the original clusters.
    pub ratio: f64,
    /// Mean of the per-resample ratios.
    pub ratio_boot_mean: f64,
    pub ratio_ci: (f64, f64),
    pub diff: f64,
    pub diff_ci: (f64, f64),
    pub at_ci: (f64, f64),
    pub above_ci: (f64, f64),
    /// Resamples whose `mean_above ≤ 0` were dropped from the ratio CI.
    pub excluded: usize,
    pub resamples: usize,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Resamples clusters (e.g. independent backbones) with replacement and
/// reports the ratio and difference of the matched means.
pub fn cluster_bootstrap_contrast(
    delta_at: &[f64],
    delta_above: &[f64],
    b: usize,
    rng_seed: u64,
) -> Result<ClusterContrast> {
    let n = delta_at.len();
    if n != delta_above.len() || n < 2 {
        return Err(Error::arg(
            "cluster contrast needs two equal-length lists of at least two clusters",
        ));
    }
    if b < MIN_RESAMPLES {
        return Err(Error::arg(format!("B = {b} below {MIN_RESAMPLES}")));
    }
    let mean_at = mean(delta_at);
    let mean_above = mean(delta_above);
    if !(mean_above > 0.0) {
        return Err(Error::arg("mean gain above the ceiling must be positive"));
    }
    let draws = resample_indices(n, b, rng_seed, |idx| {
        let a = idx.iter().map(|&i| delta_at[i]).sum::<f64>() / n as f64;
        let c = idx.iter().map(|&i| delta_above[i]).sum::<f64>() / n as f64;
        (a, c)
    });
    let ratios: Vec<f64> = draws
        .iter()
        .filter(|(_, c)| *c > 0.0)
        .map(|(a, c)| a / c)
        .collect();
    let excluded = b - ratios.len();
    let ratio_boot_mean = mean(&ratios);
    Ok(ClusterContrast {
        mean_at,
        mean_above,
        ratio: mean_at / mean_above,
        ratio_boot_mean,
        ratio_ci: percentile_ci(ratios),
        diff: mean_at - mean_above,
        diff_ci: percentile_ci(draws.iter().map(|(a, c)| a - c).collect()),
        at_ci: percentile_ci(draws.iter().map(|d| d.0).collect()),
        above_ci: percentile_ci(draws.iter().map(|d| d.1).collect()),
        excluded,
        resamples: b,
    })
}

/// Ratio of means after dropping each cluster in turn.
pub fn leave_one_out_ratios(delta_at: &[f64], delta_above: &[f64]) -> Result<Vec<Option<f64>>> {
    let n = delta_at.len();
    if n != delta_above.len() || n < 2 {
        return Err(Error::arg("leave-one-out needs two equal-length lists of ≥ 2"));
    }
    Ok((0..n)
        .map(|drop| {
            let keep = |v: &[f64]| {
                v.iter()
                    .enumerate()
                    .filter(|(i, _)| *i != drop)
                    .map(|(_, x)| x)
                    .sum::<f64>()
                    / (n - 1) as f64
            };
            let c = keep(delta_above);
            (c > 0.0).then(|| keep(delta_at) / c)
        })
        .collect())
}

/// Everything reported for one injection degree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub ell: usize,
    pub rho: Option<f64>,
    pub delta: f64,
    pub xi: Option<f64>,
    pub xi_kind: Option<SharpnessKind>,
    pub r2_inj: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub n_seeds: usize,
    pub undefined_reason: Option<UndefinedReason>,
}

impl MetricReport {
    /// Seed-wise `ρ` averaged with a bootstrap CI; `Δ` is averaged alongside.
    ///
    /// If any seed has an undefined `ρ`, the degree reports `Δ` only.
    pub fn from_seeds(
        ell: usize,
        triples: &[(f64, f64, f64)],
        b: usize,
        rng_seed: u64,
    ) -> Result<Self> {
        if triples.is_empty() {
            return Err(Error::arg(format!("no error triples for degree {ell}")));
        }
        let recs: Vec<Recovery> = triples
            .iter()
            .map(|&(lo, a, hi)| recovery_fraction(lo, a, hi))
            .collect();
        let delta = mean(&recs.iter().map(|r| r.delta).collect::<Vec<_>>());
        let rhos: Option<Vec<f64>> = recs.iter().map(|r| r.rho).collect();
        let mut rep = Self {
            ell,
            rho: None,
            delta,
            xi: None,
            xi_kind: None,
            r2_inj: None,
            ci_low: None,
            ci_high: None,
            n_seeds: triples.len(),
            undefined_reason: Some(UndefinedReason::NonPositiveDenominator),
        };
        if let Some(rhos) = rhos {
            rep.undefined_reason = None;
            if rhos.len() >= 2 {
                let ci = bootstrap_mean_ci(&rhos, b, rng_seed)?;
                rep.rho = Some(ci.mean);
                rep.ci_low = Some(ci.lo);
                rep.ci_high = Some(ci.hi);
            } else {
                rep.rho = Some(rhos[0]);
            }
        }
        Ok(rep)
    }

    pub fn estimate(&self) -> RhoEstimate {
        RhoEstimate {
            rho: self.rho,
            ci: self.ci_low.zip(self.ci_high),
            delta: self.delta,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalized_error_cases() {
        let e = normalized_error(3.57, 35.7).unwrap();
        assert!((e.y - 0.1).abs() < 1e-15);
        assert_eq!(normalized_error(0.0, 2.0).unwrap().y, 0.0);
        assert!(normalized_error(1.0, 0.0).is_err());
        let f = vec![[1.0, -2.0, 0.5]; 4];
        assert_eq!(force_mae(&f, &f).unwrap(), 0.0);
    }

    #[test]
    fn recovery_anchors_and_undefined() {
        assert_eq!(recovery_fraction(0.2, 0.2, 0.1).rho, Some(0.0));
        assert_eq!(recovery_fraction(0.2, 0.1, 0.1).rho, Some(1.0));
        let r = recovery_fraction(0.337, 0.3, 0.430);
        assert_eq!(r.rho, None);
        assert_eq!(r.undefined_reason, Some(UndefinedReason::NonPositiveDenominator));
        assert!((r.delta - 0.037).abs() < 1e-12);
    }

    #[test]
    fn sharpness_forms() {
        assert!((sharpness_ratio(0.913, 0.078).unwrap() - 11.705).abs() < 1e-3);
        assert_eq!(sharpness_ratio(0.4, 0.4), Some(1.0));
        let at = RhoEstimate {
            rho: None,
            ci: None,
            delta: 0.142,
        };
        let above = RhoEstimate {
            rho: Some(0.1),
            ci: None,
            delta: 0.025,
        };
        let s = sharpness(&at, &above);
        assert_eq!(s.kind, SharpnessKind::DeltaFallback);
        assert!((s.xi.unwrap() - 5.68).abs() < 1e-12);
        let at = RhoEstimate {
            rho: Some(0.9),
            ci: Some((0.8, 0.95)),
            delta: 0.0,
        };
        let above = RhoEstimate {
            rho: Some(0.01),
            ci: Some((-0.02, 0.04)),
            delta: 0.0,
        };
        let s = sharpness(&at, &above);
        assert_eq!(s.kind, SharpnessKind::LowerBound);
        assert!((s.xi.unwrap() - 20.0).abs() < 1e-12);
    }

    #[test]
    fn r2_injected_cases() {
        let f = vec![vec![[1.0, 2.0, -1.0], [0.5, 0.0, 3.0]]];
        let half: Vec<Vec<[f64; 3]>> = f
            .iter()
            .map(|fr| fr.iter().map(|v| [v[0] / 2.0, v[1] / 2.0, v[2] / 2.0]).collect())
            .collect();
        let zero = vec![vec![[0.0; 3]; 2]];
        assert_eq!(r2_injected(&f, &f).unwrap(), 1.0);
        assert_eq!(r2_injected(&zero, &f).unwrap(), 0.0);
        assert!((r2_injected(&half, &f).unwrap() - 0.75).abs() < 1e-15);
        assert!(r2_injected(&f, &zero).is_err());
    }

    #[test]
    fn bootstrap_constant_and_errors() {
        let c = bootstrap_mean_ci(&[2.5, 2.5, 2.5], 1000, 1).unwrap();
        assert_eq!((c.mean, c.lo, c.hi), (2.5, 2.5, 2.5));
        assert!(bootstrap_mean_ci(&[1.0], 1000, 1).is_err());
        assert!(bootstrap_mean_ci(&[1.0, 2.0], 10, 1).is_err());
    }

    #[test]
    fn identical_clusters_ratio_one() {
        let v = [0.1, 0.2, 0.3];
        let c = cluster_bootstrap_contrast(&v, &v, 2000, 42).unwrap();
        assert!((c.ratio - 1.0).abs() < 1e-15);
        assert!((c.ratio_ci.0 - 1.0).abs() < 1e-12 && (c.ratio_ci.1 - 1.0).abs() < 1e-12);
        assert_eq!(c.excluded, 0);
    }

    #[test]
    fn report_from_seeds_fallback() {
        let rep = MetricReport::from_seeds(4, &[(0.3, 0.2, 0.4), (0.3, 0.25, 0.4)], 1000, 42)
            .unwrap();
        assert!(rep.rho.is_none());
        assert!((rep.delta - 0.075).abs() < 1e-12);
        let rep = MetricReport::from_seeds(4, &[(0.3, 0.2, 0.1)], 1000, 42).unwrap();
        assert!((rep.rho.unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(rep.ci_low, None);
    }
}
