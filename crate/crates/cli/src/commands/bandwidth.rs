use std::fmt::Write as _;

use clap::Args;
use serde::{Deserialize, Serialize};
use specinject::bandwidth::{dataset_bandwidth, natural_energy_spectrum, BandwidthParams, ShellParams};
use specinject::injector::FrameAtoms;
use specinject::xyz::{read_structures, read_xyz};

use super::{open, require_input, Ctx};
use crate::flag_overrides;
use crate::output::{write_text, Report};
use crate::CliError;

#[derive(Debug, Args)]
pub struct Flags {
    /// Point cloud (`element x y z`, blank line between groups) or extended XYZ.
    #[arg(long)]
    input: Option<String>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    r_cut: Option<f64>,
    #[arg(long)]
    l_max: Option<usize>,
    #[arg(long)]
    resamples: Option<usize>,
    /// Also write per-atom profiles as CSV.
    #[arg(long)]
    per_atom: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Params {
    pub input: String,
    pub threshold: f64,
    pub r_cut: f64,
    pub shell_mu: f64,
    pub shell_sigma: f64,
    pub l_max: usize,
    pub resamples: usize,
    pub seed: u64,
    /// Drop hydrogen as centre and as neighbour.
    pub heavy_only: bool,
    pub per_atom: bool,
}

impl Default for Params {
    fn default() -> Self {
        let s = ShellParams::default();
        Self {
            input: String::new(),
            threshold: specinject::bandwidth::DEFAULT_THRESHOLD,
            r_cut: s.r_cut,
            shell_mu: s.shell_mu,
            shell_sigma: s.shell_sigma,
            l_max: s.l_max,
            resamples: 10_000,
            seed: 42,
            heavy_only: true,
            per_atom: false,
        }
    }
}

fn is_hydrogen(e: &str) -> bool {
    matches!(e.trim().to_ascii_uppercase().as_str(), "H" | "D" | "T")
}

pub fn run(ctx: &Ctx, f: Flags) -> Result<(), CliError> {
    let per_atom = f.per_atom.then_some(true);
    let (p, resolved): (Params, _) = ctx.params(
        "bandwidth",
        flag_overrides! {
            "input" => f.input, "threshold" => f.threshold, "r_cut" => f.r_cut,
            "l_max" => f.l_max, "resamples" => f.resamples, "per_atom" => per_atom,
        },
    )?;
    let path = require_input(&p.input, "bandwidth")?;
    let groups = read_structures(open(&path)?)?;
    if groups.iter().all(|g| g.positions.is_empty()) {
        return Err(CliError::Empty(format!("{} has no atoms", path.display())));
    }
    let params = BandwidthParams {
        shell: ShellParams {
            r_cut: p.r_cut,
            shell_mu: p.shell_mu,
            shell_sigma: p.shell_sigma,
            l_max: p.l_max,
        },
        threshold: p.threshold,
        resamples: p.resamples,
        seed: p.seed,
    };
    let heavy_only = p.heavy_only;
    let summary = dataset_bandwidth(&groups, &params, |e| !heavy_only || !is_hydrogen(e))?;
    let mut warnings = Vec::new();
    if summary.n_undefined > 0 {
        warnings.push(format!("{} atom(s) have no neighbours within {} A", summary.n_undefined, p.r_cut));
    }
    if p.per_atom {
        let mut csv = String::from("group,atom,element,n_neighbors,lstar");
        for l in 0..=p.l_max {
            let _ = write!(csv, ",w{l}");
        }
        csv.push('\n');
        for a in &summary.atoms {
            let _ = write!(
                csv,
                "{},{},{},{},{}",
                a.group,
                a.atom,
                a.element,
                a.n_neighbors,
                a.lstar.map_or(String::new(), |l| l.to_string())
            );
            for w in &a.w {
                let _ = write!(csv, ",{w:.10e}");
            }
            csv.push('\n');
        }
        write_text(&ctx.path("bandwidth_atoms.csv"), &csv)?;
    }
    let mut text = format!(
        "{} groups, {} atoms: median l* {} [{}, {}], P(l*<=4) {:.3} [{:.3}, {:.3}]\n",
        summary.n_groups,
        summary.n_atoms,
        summary.median_lstar,
        summary.median_ci.lo,
        summary.median_ci.hi,
        summary.frac_le4,
        summary.frac_le4_ci.lo,
        summary.frac_le4_ci.hi
    );
    for (l, c) in summary.histogram.iter().enumerate() {
        let _ = writeln!(text, "l*={l:>2} {c}");
    }
    let mut summary = summary;
    if !p.per_atom {
        summary.atoms.clear();
    }
    ctx.finish(&Report::new("bandwidth", resolved, warnings, summary), &text)
}

#[derive(Debug, Args)]
pub struct SpectrumFlags {
    /// Extended-XYZ trajectory.
    #[arg(long)]
    input: Option<String>,
    /// Frame atoms and anchor as `i,j,k,a`.
    #[arg(long)]
    frame: Option<String>,
    #[arg(long)]
    l_max: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SpectrumParams {
    pub input: String,
    pub frame: Vec<usize>,
    pub l_max: usize,
}

impl Default for SpectrumParams {
    fn default() -> Self {
        Self {
            input: String::new(),
            frame: vec![0, 1, 2, 3],
            l_max: 10,
        }
    }
}

pub fn run_spectrum(ctx: &Ctx, f: SpectrumFlags) -> Result<(), CliError> {
    let (p, resolved): (SpectrumParams, _) = ctx.params(
        "spectrum",
        flag_overrides! { "input" => f.input, "frame" => f.frame, "l_max" => f.l_max },
    )?;
    let path = require_input(&p.input, "spectrum")?;
    let frames = read_xyz(open(&path)?)?;
    if frames.is_empty() {
        return Err(CliError::Empty(format!("{} has no frames", path.display())));
    }
    let [i, j, k, a] = <[usize; 4]>::try_from(p.frame.as_slice())
        .map_err(|_| CliError::Usage("frame needs four atom indices i,j,k,anchor".into()))?;
    let s = natural_energy_spectrum(&frames, FrameAtoms::new(i, j, k, a)?, p.l_max)?;
    let mut warnings = Vec::new();
    if s.ridge_fallback {
        warnings.push(format!("{} frames for {} coefficients: ridge regularised", s.n_frames, (p.l_max + 1).pow(2)));
    }
    if s.n_rejected > 0 {
        warnings.push(format!("{} degenerate frame(s) skipped", s.n_rejected));
    }
    let text = format!(
        "{} frames: {:.1}% of angular power above l=2, {:.1}% above l=4; peaks {}\n",
        s.n_frames,
        100.0 * s.frac_above_2,
        100.0 * s.frac_above_4,
        s.peaks.iter().map(|(l, w)| format!("l={l} ({:.1}%)", 100.0 * w)).collect::<Vec<_>>().join(", ")
    );
    ctx.finish(&Report::new("spectrum", resolved, warnings, s), &text)
}
