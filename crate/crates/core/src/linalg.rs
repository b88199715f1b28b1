//! Dense least-squares helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

/// How a least-squares system is factorised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    /// Thin SVD of the design matrix with Tikhonov filter factors.
    Svd,
    /// Cholesky of `XᵀX + λI`, SVD pseudo-inverse if that fails.
    NormalEquations,
}

/// A factorised design matrix that can be solved against many targets.
pub(crate) struct LeastSquares {
    kind: Factor,
    /// Set when the pseudo-inverse path had to drop null directions.
    pub rank_deficient: bool,
}

enum Factor {
    Svd {
        u: DMatrix<f64>,
        v_t: DMatrix<f64>,
        filt: DVector<f64>,
    },
    Cholesky {
        chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
        x: DMatrix<f64>,
    },
}

const PINV_RTOL: f64 = 1e-13;

impl LeastSquares {
    pub fn new(x: DMatrix<f64>, ridge: f64, solver: Solver) -> Self {
        match solver {
            Solver::Svd => Self::svd(x, ridge),
            Solver::NormalEquations => {
                let p = x.ncols();
                let mut a = x.tr_mul(&x);
                for i in 0..p {
                    a[(i, i)] += ridge;
                }
                match nalgebra::Cholesky::new(a) {
                    Some(chol) if ridge > 0.0 => Self {
                        kind: Factor::Cholesky { chol, x },
                        rank_deficient: false,
                    },
                    _ => Self::svd(x, ridge),
                }
            }
        }
    }

    fn svd(x: DMatrix<f64>, ridge: f64) -> Self {
        let p = x.ncols();
        let svd = x.svd(true, true);
        let s = &svd.singular_values;
        let smax = s.iter().cloned().fold(0.0, f64::max);
        let mut rank_deficient = s.len() < p;
        let filt = DVector::from_iterator(
            s.len(),
            s.iter().map(|&si| {
                if si <= PINV_RTOL * smax {
                    rank_deficient = true;
                    if ridge > 0.0 {
                        si / (si * si + ridge)
                    } else {
                        0.0
                    }
                } else {
                    si / (si * si + ridge)
                }
            }),
        );
        Self {
            kind: Factor::Svd {
                u: svd.u.expect("requested U"),
                v_t: svd.v_t.expect("requested V^T"),
                filt,
            },
            rank_deficient,
        }
    }

    pub fn solve(&self, y: &[f64]) -> Vec<f64> {
        let y = DVector::from_column_slice(y);
        match &self.kind {
            Factor::Svd { u, v_t, filt } => {
                let uty = u.tr_mul(&y).component_mul(filt);
                v_t.tr_mul(&uty).as_slice().to_vec()
            }
            Factor::Cholesky { chol, x } => chol.solve(&x.tr_mul(&y)).as_slice().to_vec(),
        }
    }
}

/// Numerical rank with singular values above `rtol · σ_max` (and `atol`).
pub(crate) fn numerical_rank(m: DMatrix<f64>, rtol: f64, atol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let s = m.singular_values();
    let smax = s.iter().cloned().fold(0.0, f64::max);
    if smax <= atol {
        return 0;
    }
    s.iter().filter(|&&v| v > rtol * smax).count()
}

pub(crate) fn design_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    let p = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(n, p, |i, j| rows[i][j])
}
