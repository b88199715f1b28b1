use std::fmt::Write;

use clap::Args;
use serde::{Deserialize, Serialize};
use specinject::probe::poly::DEFAULT_RIDGE;
use specinject::probe::{hard_ceiling_check, saturation_grid, GridCell, HardCeiling, Solver};

use super::Ctx;
use crate::flag_overrides;
use crate::output::{write_text, Report};
use crate::CliError;

#[derive(Debug, Args)]
pub struct Flags {
    /// Cells as `LxD` pairs, e.g. `1x2,3x3`.
    #[arg(long)]
    cells: Option<String>,
    /// Samples per fit (half train, half evaluation).
    #[arg(long)]
    n: Option<usize>,
    /// Target degrees run to `max(dL + extra, 12)`.
    #[arg(long)]
    lmax_extra: Option<usize>,
    #[arg(long)]
    ridge: Option<f64>,
    /// `svd` or `normal`.
    #[arg(long)]
    solver: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Params {
    pub cells: Vec<String>,
    pub n: usize,
    pub lmax_extra: usize,
    pub ridge: f64,
    pub solver: String,
    pub seed: u64,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            cells: ["1x2", "1x3", "1x4", "2x2", "2x3", "2x4", "3x2", "3x3"].map(String::from).to_vec(),
            n: 4000,
            lmax_extra: 3,
            ridge: DEFAULT_RIDGE,
            solver: "svd".into(),
            seed: 7,
        }
    }
}

fn parse_cells(cells: &[String]) -> Result<Vec<(usize, usize)>, CliError> {
    cells
        .iter()
        .map(|c| {
            let (l, d) = c
                .split_once(['x', 'X'])
                .ok_or_else(|| CliError::Usage(format!("cell {c:?} is not LxD")))?;
            let n = |s: &str| s.trim().parse::<usize>().map_err(|_| CliError::Usage(format!("cell {c:?} is not LxD")));
            Ok((n(l)?, n(d)?))
        })
        .collect()
}

fn parse_solver(s: &str) -> Result<Solver, CliError> {
    match s {
        "svd" => Ok(Solver::Svd),
        "normal" | "normal-equations" => Ok(Solver::NormalEquations),
        _ => Err(CliError::Usage(format!("solver {s:?} is neither svd nor normal"))),
    }
}

#[derive(Debug, Serialize)]
struct CellRow {
    l: usize,
    d: usize,
    ceiling: usize,
    r2_at: f64,
    r2_above: f64,
    delta_r2: f64,
    /// `R²` for every target degree from 0.
    r2: Vec<f64>,
    mse: Vec<f64>,
    n: usize,
    seed: u64,
    /// Harmonic monomials of one direction obey polynomial identities, so
    /// this is expected for d ≥ 2.
    rank_deficient: bool,
}

impl From<&GridCell> for CellRow {
    fn from(c: &GridCell) -> Self {
        Self {
            l: c.l,
            d: c.d,
            ceiling: c.ceiling(),
            r2_at: c.r2_at(),
            r2_above: c.r2_above(),
            delta_r2: c.delta_r2(),
            r2: c.fits.iter().map(|f| f.r_squared).collect(),
            mse: c.fits.iter().map(|f| f.mse).collect(),
            n: c.n,
            seed: c.seed,
            rank_deficient: c.fits.iter().any(|f| f.rank_deficient),
        }
    }
}

fn table(rows: &[CellRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:>2} {:>2} {:>3} {:>9} {:>10} {:>8}", "L", "d", "dL", "R2(dL)", "R2(dL+1)", "dR2");
    for r in rows {
        let _ = writeln!(
            s,
            "{:>2} {:>2} {:>3} {:>9.4} {:>10.4} {:>8.4}",
            r.l, r.d, r.ceiling, r.r2_at, r.r2_above, r.delta_r2
        );
    }
    s
}

pub fn run(ctx: &Ctx, f: Flags) -> Result<(), CliError> {
    let (p, resolved): (Params, _) = ctx.params(
        "grid",
        flag_overrides! {
            "cells" => f.cells, "n" => f.n, "lmax_extra" => f.lmax_extra,
            "ridge" => f.ridge, "solver" => f.solver,
        },
    )?;
    let cells = parse_cells(&p.cells)?;
    if cells.is_empty() {
        return Err(CliError::Empty("no grid cells".into()));
    }
    let grid = saturation_grid(&cells, p.lmax_extra, p.n, p.seed, p.ridge, parse_solver(&p.solver)?)?;
    let rows: Vec<CellRow> = grid.iter().map(CellRow::from).collect();
    let text = table(&rows);
    write_text(&ctx.path("grid.txt"), &text)?;
    ctx.finish(&Report::new("grid", resolved, Vec::new(), rows), &text)
}

#[derive(Debug, Args)]
pub struct HardceilFlags {
    /// Feature degree of the linear probe.
    #[arg(long)]
    l: Option<usize>,
    /// Band limit of the in-band target.
    #[arg(long)]
    band: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct HardceilParams {
    pub l: usize,
    pub band: usize,
    pub n: usize,
    pub seed: u64,
}

impl Default for HardceilParams {
    fn default() -> Self {
        Self { l: 3, band: 3, n: 4000, seed: 7 }
    }
}

pub fn run_hardceil(ctx: &Ctx, f: HardceilFlags) -> Result<(), CliError> {
    let (p, resolved): (HardceilParams, _) =
        ctx.params("hardceil", flag_overrides! { "l" => f.l, "band" => f.band, "n" => f.n })?;
    let h: HardCeiling = hard_ceiling_check(p.l, p.band, p.seed, p.n)?;
    let summary = format!(
        "L={} band<={}: MSE {:.3e} (Var {:.4})\nL={} target l={}: MSE {:.4} (Var {:.4}, ratio {:.3})\n",
        h.l,
        h.band,
        h.mse_within,
        h.var_within,
        h.l,
        h.l + 1,
        h.mse_above,
        h.var_above,
        h.mse_above / h.var_above
    );
    ctx.finish(&Report::new("hardceil", resolved, Vec::new(), h), &summary)
}
