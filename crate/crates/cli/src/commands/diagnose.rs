use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::BufRead;

use clap::Args;
use serde::{Deserialize, Serialize};
use specinject::metrics::{sharpness, MetricReport, SharpnessKind, UndefinedReason};

use super::{open, require_input, Ctx};
use crate::flag_overrides;
use crate::output::Report;
use crate::CliError;

#[derive(Debug, Args)]
pub struct Flags {
    /// Rows of `ell y_low y_arch y_high` (one per seed) or `ell rho`.
    #[arg(long)]
    input: Option<String>,
    /// A cliff needs `rho(l) >= contrast * rho(l + 1)`.
    #[arg(long)]
    contrast: Option<f64>,
    /// Readout invariant degree d_r.
    #[arg(long)]
    d_r: Option<usize>,
    /// Backbone truncation L.
    #[arg(long)]
    l_backbone: Option<usize>,
    #[arg(long)]
    resamples: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Params {
    pub input: String,
    pub contrast: f64,
    pub d_r: usize,
    pub l_backbone: usize,
    pub resamples: usize,
    pub seed: u64,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            input: String::new(),
            contrast: 3.0,
            d_r: 2,
            l_backbone: 2,
            resamples: 10_000,
            seed: 42,
        }
    }
}

enum Rows {
    Triples(Vec<(f64, f64, f64)>),
    Rho(f64),
}

fn parse_rows(reader: impl BufRead) -> Result<BTreeMap<usize, Rows>, CliError> {
    let mut out: BTreeMap<usize, Rows> = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let bad = |msg: &str| CliError::Core(specinject::Error::Parse { line: i + 1, msg: msg.to_string() });
        let toks: Vec<&str> = body.split(|c: char| c.is_whitespace() || c == ',').filter(|t| !t.is_empty()).collect();
        let ell: usize = toks[0].parse().map_err(|_| bad("first column must be a degree"))?;
        let nums: Vec<f64> = toks[1..]
            .iter()
            .map(|t| t.parse::<f64>().map_err(|_| bad("expected numbers")))
            .collect::<Result<_, _>>()?;
        match (nums.len(), out.get_mut(&ell)) {
            (3, None) => {
                out.insert(ell, Rows::Triples(vec![(nums[0], nums[1], nums[2])]));
            }
            (3, Some(Rows::Triples(v))) => v.push((nums[0], nums[1], nums[2])),
            (1, None) => {
                out.insert(ell, Rows::Rho(nums[0]));
            }
            (1 | 3, Some(_)) => return Err(bad("degree repeated with a different row form")),
            _ => return Err(bad("row must be `ell rho` or `ell y_low y_arch y_high`")),
        }
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
struct Diagnosis {
    /// `xi` is the sharpness against the next degree, when it was measured.
    rows: Vec<MetricReport>,
    /// Largest degree whose sharpness against the next reaches `contrast`.
    cliff: Option<usize>,
    cliff_xi: Option<f64>,
    predicted_ceiling: usize,
    matches_prediction: Option<bool>,
    outcome: String,
    guidance: String,
}

fn guidance(cliff: Option<usize>, d_r: usize, l: usize) -> String {
    match cliff {
        None => "No spectral bottleneck detected in the probed range: do not act.".into(),
        Some(_) => format!(
            "A cliff limits recoverable angular content. Raising L_backbone by one moves the ceiling d_r*L up by {d_r} degrees; \
             raising d_r by one moves it up by {l}. Depth at fixed (L, d_r) does not move the cliff."
        ),
    }
}

pub fn run(ctx: &Ctx, f: Flags) -> Result<(), CliError> {
    let (p, resolved): (Params, _) = ctx.params(
        "diagnose",
        flag_overrides! {
            "input" => f.input, "contrast" => f.contrast, "d_r" => f.d_r,
            "l_backbone" => f.l_backbone, "resamples" => f.resamples,
        },
    )?;
    let path = require_input(&p.input, "diagnose")?;
    let parsed = parse_rows(open(&path)?)?;
    if parsed.is_empty() {
        return Err(CliError::Empty(format!("{} has no rows", path.display())));
    }
    let mut warnings = Vec::new();
    let mut reports: Vec<MetricReport> = Vec::new();
    for (&ell, rows) in &parsed {
        reports.push(match rows {
            Rows::Triples(t) => MetricReport::from_seeds(ell, t, p.resamples, p.seed)?,
            Rows::Rho(r) => MetricReport {
                ell,
                rho: Some(*r),
                delta: f64::NAN,
                xi: None,
                xi_kind: None,
                r2_inj: None,
                ci_low: None,
                ci_high: None,
                n_seeds: 1,
                undefined_reason: None,
            },
        });
    }
    if reports.iter().all(|r| r.rho.is_none()) {
        warnings.push("recovery fraction undefined at every degree; reporting raw gains only".into());
    }
    for r in &reports {
        if r.undefined_reason == Some(UndefinedReason::NonPositiveDenominator) {
            warnings.push(format!("l={}: anchor gap not positive, falling back to the raw gain", r.ell));
        }
    }
    let mut rows = reports.clone();
    for (k, r) in rows.iter_mut().enumerate() {
        if let Some(n) = reports.get(k + 1).filter(|n| n.ell == r.ell + 1) {
            let s = sharpness(&reports[k].estimate(), &n.estimate());
            r.xi = s.xi;
            r.xi_kind = Some(s.kind);
        }
    }
    let cliff_row = rows.iter().rev().find(|r| r.xi.is_some_and(|x| x >= p.contrast));
    let cliff = cliff_row.map(|r| r.ell);
    let predicted = p.d_r * p.l_backbone;
    let outcome = match cliff_row {
        Some(r) => format!(
            "cliff at l*={} (Xi={:.2}{}); predicted ceiling d_r*L={predicted}",
            r.ell,
            r.xi.unwrap_or(f64::NAN),
            match r.xi_kind {
                Some(SharpnessKind::LowerBound) => ", lower bound",
                Some(SharpnessKind::DeltaFallback) => ", raw-gain ratio",
                _ => "",
            }
        ),
        None => "no cliff detected".into(),
    };
    let result = Diagnosis {
        cliff,
        cliff_xi: cliff_row.and_then(|r| r.xi),
        predicted_ceiling: predicted,
        matches_prediction: cliff.map(|c| c == predicted),
        guidance: guidance(cliff, p.d_r, p.l_backbone),
        outcome,
        rows,
    };
    let mut summary = String::new();
    let _ = writeln!(summary, "{:>3} {:>8} {:>19} {:>8} {:>7}", "l", "rho", "95% CI", "delta", "Xi");
    for m in &result.rows {
        let _ = writeln!(
            summary,
            "{:>3} {:>8} {:>19} {:>8} {:>7}",
            m.ell,
            m.rho.map_or("undef".into(), |v| format!("{v:.3}")),
            m.ci_low.zip(m.ci_high).map_or("".into(), |(a, b)| format!("[{a:.3}, {b:.3}]")),
            if m.delta.is_nan() { String::new() } else { format!("{:.3}", m.delta) },
            m.xi.map_or(String::new(), |x| format!("{x:.2}")),
        );
    }
    let _ = writeln!(summary, "{}", result.outcome);
    let _ = writeln!(summary, "{}", result.guidance);
    ctx.finish(&Report::new("diagnose", resolved, warnings, result), &summary)
}
