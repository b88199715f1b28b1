use std::io::Write;

use clap::Args;
use serde::{Deserialize, Serialize};
use specinject::injector::{
    inject_dataset, injection_regressors, split_indices, split_leakage, variance_share, Configuration,
    DegeneratePolicy, FrameAtoms, InjectionSpec, LeakageReport, Rejection, ETA_MIN, LEAKAGE_GATE,
};
use specinject::metrics::sigma_f;
use specinject::xyz::{read_xyz, write_xyz};

use super::{open, require_input, Ctx};
use crate::flag_overrides;
use crate::output::{write_atomic, write_partial, Report};
use crate::CliError;

#[derive(Debug, Args)]
pub struct Flags {
    /// Extended-XYZ trajectory with energies and forces.
    #[arg(long)]
    input: Option<String>,
    /// Injection degree ℓ.
    #[arg(long)]
    l_inj: Option<usize>,
    /// Amplitude α (kcal/mol).
    #[arg(long)]
    alpha: Option<f64>,
    /// Frame atoms and anchor as `i,j,k,a`.
    #[arg(long)]
    frame: Option<String>,
    /// Train/val/test fractions, e.g. `0.8,0.1,0.1`.
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    split_seed: Option<u64>,
    /// Drop degenerate frames instead of aborting.
    #[arg(long)]
    skip_degenerate: bool,
    /// Accept a failed leakage gate.
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Params {
    pub input: String,
    pub output: String,
    pub l_inj: usize,
    pub alpha: f64,
    pub frame: Vec<usize>,
    /// Seed of the injection coefficients.
    pub seed: u64,
    pub split: Vec<f64>,
    pub split_seed: u64,
    pub skip_degenerate: bool,
    pub force: bool,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            input: String::new(),
            output: "injected.xyz".into(),
            l_inj: 4,
            alpha: 1.0,
            frame: vec![0, 1, 2, 3],
            seed: 0,
            split: vec![0.8, 0.1, 0.1],
            split_seed: 0,
            skip_degenerate: false,
            force: false,
        }
    }
}

#[derive(Debug, Serialize)]
struct InjectResult {
    output: String,
    l_inj: usize,
    alpha: f64,
    coefficients: Vec<f64>,
    n_frames: usize,
    n_kept: usize,
    rejected: Vec<Rejection>,
    sigma_f_natural: f64,
    sigma_f_injected: f64,
    /// Share of force variance carried by the injection.
    eta: f64,
    leakage: Option<LeakageReport>,
    leakage_gate: f64,
    gates_passed: bool,
}

pub fn run(ctx: &Ctx, f: Flags) -> Result<(), CliError> {
    let skip = f.skip_degenerate.then_some(true);
    let force = f.force.then_some(true);
    let (p, resolved): (Params, _) = ctx.params(
        "inject",
        flag_overrides! {
            "input" => f.input, "l_inj" => f.l_inj, "alpha" => f.alpha, "frame" => f.frame,
            "split" => f.split, "split_seed" => f.split_seed,
            "skip_degenerate" => skip, "force" => force,
        },
    )?;
    let path = require_input(&p.input, "inject")?;
    let frames = read_xyz(open(&path)?)?;
    if frames.is_empty() {
        return Err(CliError::Empty(format!("{} has no frames", path.display())));
    }
    let [i, j, k, a] = <[usize; 4]>::try_from(p.frame.as_slice())
        .map_err(|_| CliError::Usage("frame needs four atom indices i,j,k,anchor".into()))?;
    let split = <[f64; 3]>::try_from(p.split.as_slice())
        .map_err(|_| CliError::Usage("split needs three fractions".into()))?;
    let spec = InjectionSpec::new(p.l_inj, p.alpha, FrameAtoms::new(i, j, k, a)?, p.seed)?;
    let policy = if p.skip_degenerate { DegeneratePolicy::Skip } else { DegeneratePolicy::Abort };
    let out = inject_dataset(&frames, &spec, policy)?;
    if out.configs.is_empty() {
        return Err(CliError::Empty("every frame was rejected".into()));
    }
    let natural: Vec<Configuration> = out.kept.iter().map(|&i| frames[i].clone()).collect();

    let mut warnings = Vec::new();
    for r in &out.rejected {
        warnings.push(format!("frame {} skipped: {}", r.frame, r.reason));
    }
    let forces = |c: &[Configuration]| c.iter().map(|c| c.forces.clone()).collect::<Vec<_>>();
    let sigma_nat = sigma_f(&forces(&natural))?;
    let sigma_inj = sigma_f(&forces(&out.configs))?;
    let eta = variance_share(&natural, &out.configs)?;
    if eta < ETA_MIN {
        warnings.push(format!("variance share {eta:.3} below {ETA_MIN}: the injection may be hard to detect"));
    }

    let regressors = injection_regressors(&natural, &spec)?;
    let parts = split_indices(natural.len(), split, p.split_seed)?;
    let splits: Vec<Vec<Vec<f64>>> = parts
        .iter()
        .filter(|idx| idx.len() >= 2)
        .map(|idx| idx.iter().map(|&i| regressors[i].clone()).collect())
        .collect();
    let leakage = if splits.len() >= 2 {
        Some(split_leakage(&splits)?)
    } else {
        warnings.push("fewer than two splits with two frames; leakage not assessed".into());
        None
    };
    let gate_ok = leakage.as_ref().is_none_or(|l| l.passes);
    if !gate_ok && p.force {
        warnings.push("leakage gate failed and was overridden by --force".into());
    }

    let target = ctx.path(&p.output);
    let configs = out.configs;
    let write = |w: &mut dyn Write| -> std::io::Result<()> {
        write_xyz(w, &configs).map_err(|e| std::io::Error::other(e.to_string()))
    };
    let accepted = gate_ok || p.force;
    if accepted {
        write_atomic(&target, write)?;
    } else {
        write_partial(&target, write)?;
    }

    let result = InjectResult {
        output: p.output.clone(),
        l_inj: p.l_inj,
        alpha: p.alpha,
        coefficients: spec.coeffs.clone(),
        n_frames: frames.len(),
        n_kept: configs.len(),
        rejected: out.rejected,
        sigma_f_natural: sigma_nat,
        sigma_f_injected: sigma_inj,
        eta,
        leakage,
        leakage_gate: LEAKAGE_GATE,
        gates_passed: gate_ok,
    };
    let summary = format!(
        "injected l={} alpha={} into {}/{} frames -> {}\nsigma_F {:.4} -> {:.4}, eta {:.3}, rho2_max {}\n",
        p.l_inj,
        p.alpha,
        result.n_kept,
        result.n_frames,
        target.display(),
        sigma_nat,
        sigma_inj,
        eta,
        result.leakage.as_ref().map_or("n/a".into(), |l| format!("{:.4}", l.rho2_max)),
    );
    let rho2 = result.leakage.as_ref().map_or(0.0, |l| l.rho2_max);
    ctx.finish(&Report::new("inject", resolved, warnings, result), &summary)?;
    if !accepted {
        return Err(CliError::GateLeakage { rho2_max: rho2, gate: LEAKAGE_GATE });
    }
    Ok(())
}
