use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::cgspan::{for_each_monomial, monomial_count, MONOMIAL_LIMIT};
use crate::linalg::{LeastSquares, Solver};
use crate::sphharm::{feature_vector, n_coeffs, Direction, SHVector, L_MAX_SUPPORTED};
use crate::{Error, Result};

/// Ridge used when none is given; only stabilises near-singular systems.
pub const DEFAULT_RIDGE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolyProbeConfig {
    /// Feature degree `L`.
    pub l: usize,
    /// Polynomial degree `d`.
    pub d: usize,
    pub ridge: f64,
    pub solver: Solver,
}

impl PolyProbeConfig {
    pub fn new(l: usize, d: usize) -> Self {
        Self {
            l,
            d,
            ridge: DEFAULT_RIDGE,
            solver: Solver::Svd,
        }
    }

    pub fn n_features(&self) -> usize {
        monomial_count(n_coeffs(self.l), self.d)
    }

    fn validate(&self) -> Result<()> {
        if self.l > L_MAX_SUPPORTED {
            return Err(Error::arg(format!("feature degree {} too large", self.l)));
        }
        if !(self.ridge >= 0.0) {
            return Err(Error::arg("ridge must be non-negative"));
        }
        let count = self.n_features();
        if count > MONOMIAL_LIMIT {
            return Err(Error::Resource {
                what: "monomial count",
                count,
                limit: MONOMIAL_LIMIT,
            });
        }
        Ok(())
    }
}

/// All monomials of total degree ≤ `d` in the entries of `phi`, constant first.
pub fn poly_features(phi: &SHVector, d: usize) -> Result<Vec<f64>> {
    let count = monomial_count(phi.coeffs().len(), d);
    if count > MONOMIAL_LIMIT {
        return Err(Error::Resource {
            what: "monomial count",
            count,
            limit: MONOMIAL_LIMIT,
        });
    }
    let mut out = Vec::with_capacity(count);
    for_each_monomial(phi.coeffs(), d, |v| out.push(v));
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeCell {
    pub l: usize,
    pub d: usize,
    pub ell_target: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub weights: Vec<f64>,
    /// `1 − mse / Var(target)` on the held-out half.
    pub r_squared: f64,
    pub mse: f64,
    pub target_variance: f64,
    pub n_train: usize,
    pub n_eval: usize,
    pub cell: ProbeCell,
    /// The least-squares system dropped null directions.
    pub rank_deficient: bool,
}

/// A factorised probe design: fit many targets against the same directions.
///
/// Samples with even index train, odd index evaluate.
pub struct PolyProbe {
    cfg: PolyProbeConfig,
    ls: LeastSquares,
    eval_x: DMatrix<f64>,
    n: usize,
}

impl PolyProbe {
    pub fn new(dirs: &[Direction], cfg: PolyProbeConfig) -> Result<Self> {
        cfg.validate()?;
        if dirs.len() < 2 {
            return Err(Error::arg("probe needs at least two samples"));
        }
        let p = cfg.n_features();
        let rows: Vec<Vec<f64>> = dirs
            .iter()
            .map(|d| poly_features(&feature_vector(cfg.l, d)?, cfg.d))
            .collect::<Result<_>>()?;
        let n_train = dirs.len().div_ceil(2);
        let n_eval = dirs.len() / 2;
        let train = DMatrix::from_fn(n_train, p, |i, j| rows[2 * i][j]);
        let eval_x = DMatrix::from_fn(n_eval, p, |i, j| rows[2 * i + 1][j]);
        if n_train < p {
            log::warn!("probe has {n_train} training samples for {p} features");
        }
        let ls = LeastSquares::new(train, cfg.ridge, cfg.solver);
        if ls.rank_deficient && cfg.ridge == 0.0 {
            log::warn!("rank-deficient probe design solved by minimum-norm pseudo-inverse");
        }
        Ok(Self {
            cfg,
            ls,
            eval_x,
            n: dirs.len(),
        })
    }

    pub fn config(&self) -> &PolyProbeConfig {
        &self.cfg
    }

    pub fn fit(&self, targets: &[f64]) -> Result<ProbeResult> {
        self.fit_cell(targets, None)
    }

    pub fn fit_cell(&self, targets: &[f64], ell_target: Option<usize>) -> Result<ProbeResult> {
        if targets.len() != self.n {
            return Err(Error::arg(format!(
                "{} targets for {} directions",
                targets.len(),
                self.n
            )));
        }
        let y_train: Vec<f64> = targets.iter().step_by(2).copied().collect();
        let y_eval: Vec<f64> = targets.iter().skip(1).step_by(2).copied().collect();
        let weights = self.ls.solve(&y_train);
        let pred = &self.eval_x * nalgebra::DVector::from_column_slice(&weights);
        let n_eval = y_eval.len() as f64;
        let mse = pred
            .iter()
            .zip(&y_eval)
            .map(|(p, y)| (p - y) * (p - y))
            .sum::<f64>()
            / n_eval;
        let mean = y_eval.iter().sum::<f64>() / n_eval;
        let var = y_eval.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n_eval;
        // a constant target has no variance to explain
        let r_squared = if var > 0.0 && var > 1e-20 * mean * mean {
            1.0 - mse / var
        } else if mse <= 1e-20 {
            1.0
        } else {
            0.0
        };
        Ok(ProbeResult {
            weights,
            r_squared,
            mse,
            target_variance: var,
            n_train: y_train.len(),
            n_eval: y_eval.len(),
            cell: ProbeCell {
                l: self.cfg.l,
                d: self.cfg.d,
                ell_target,
            },
            rank_deficient: self.ls.rank_deficient,
        })
    }
}

/// Ridge least squares of `targets` on [`poly_features`], scored on the
/// odd-index half.
pub fn fit_poly_probe(
    dirs: &[Direction],
    targets: &[f64],
    cfg: PolyProbeConfig,
) -> Result<ProbeResult> {
    PolyProbe::new(dirs, cfg)?.fit(targets)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_lengths() {
        let z = Direction::unit_z();
        let f = poly_features(&feature_vector(0, &z).unwrap(), 1).unwrap();
        assert_eq!(f.len(), 2);
        assert_eq!(f[0], 1.0);
        assert!((f[1] - 0.282_094_791_773_878_14).abs() < 1e-15);
        let f = poly_features(&feature_vector(1, &z).unwrap(), 2).unwrap();
        assert_eq!(f.len(), 15);
    }

    #[test]
    fn resource_guard() {
        let cfg = PolyProbeConfig::new(12, 4);
        assert!(matches!(
            PolyProbe::new(&[Direction::unit_z(); 2], cfg),
            Err(Error::Resource { .. })
        ));
    }
}
