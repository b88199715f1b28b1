use clap::Args;
use serde::{Deserialize, Serialize};
use specinject::probe::spn::{
    spn_loss, spn_train, Activation, Features, SPNParams, SpnConfig, SpnSample, TrainConfig,
};
use specinject::rng::{seeded_stream, standard_normals};

use super::{open, Ctx};
use crate::flag_overrides;
use crate::output::{write_text, Report};
use crate::CliError;

#[derive(Debug, Args)]
pub struct Flags {
    /// JSON array of `{features: {blocks}, energy}` samples; odd indices validate.
    /// Without it a synthetic task is generated.
    #[arg(long)]
    input: Option<String>,
    /// `identity`, `square` or `silu`.
    #[arg(long)]
    activation: Option<String>,
    /// Invariant extractor degree (1, 2 or 3).
    #[arg(long)]
    d_r: Option<u8>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Params {
    pub input: String,
    pub activation: String,
    pub d_r: u8,
    pub l_out: usize,
    pub hidden: Vec<usize>,
    pub energy_hidden: Vec<usize>,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Synthetic task: `invariant` (a function of the norms) or
    /// `orientation` (a cross-channel dot product norms cannot see).
    pub task: String,
    pub channels: Vec<usize>,
    pub n_samples: usize,
}

impl Default for Params {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            input: String::new(),
            activation: "silu".into(),
            d_r: 2,
            l_out: 4,
            hidden: vec![128, 128],
            energy_hidden: vec![32],
            epochs: t.epochs,
            lr: t.lr,
            weight_decay: t.weight_decay,
            batch_size: t.batch_size,
            seed: 0,
            task: "invariant".into(),
            channels: vec![4, 4, 4],
            n_samples: 512,
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn synthetic(p: &Params) -> Result<Vec<SpnSample>, CliError> {
    if p.channels.len() < 2 || p.channels[1] < 2 {
        return Err(CliError::Usage("synthetic tasks need at least two degree-1 channels".into()));
    }
    let target: fn(&Features) -> f64 = match p.task.as_str() {
        "invariant" => |f| {
            let b = &f.blocks;
            let mut e = b[0][0][0] + 0.5 * norm(&b[1][1]);
            if let Some(c) = b.get(2).and_then(|c| c.first()) {
                e += 0.3 * norm(c).powi(2);
            }
            e
        },
        "orientation" => |f| f.blocks[1][0].iter().zip(&f.blocks[1][1]).map(|(a, b)| a * b).sum(),
        other => return Err(CliError::Usage(format!("unknown task {other:?}"))),
    };
    let mut rng = seeded_stream(p.seed, 7);
    Ok((0..p.n_samples)
        .map(|_| {
            let features = Features {
                blocks: p
                    .channels
                    .iter()
                    .enumerate()
                    .map(|(l, &c)| (0..c).map(|_| standard_normals(&mut rng, 2 * l + 1).iter().map(|v| 0.7 * v).collect()).collect())
                    .collect(),
            };
            let energy = target(&features);
            SpnSample { features, energy }
        })
        .collect())
}

#[derive(Debug, Serialize)]
struct TrainResult {
    n_train: usize,
    n_val: usize,
    n_params: usize,
    best_epoch: usize,
    best_val_loss: f64,
    val_r2: f64,
    final_train_loss: Option<f64>,
    train_loss: Vec<f64>,
    val_loss: Vec<f64>,
    params_file: String,
}

pub fn run(ctx: &Ctx, f: Flags) -> Result<(), CliError> {
    let (mut p, resolved): (Params, _) = ctx.params(
        "spn-train",
        flag_overrides! {
            "input" => f.input, "activation" => f.activation, "d_r" => f.d_r,
            "epochs" => f.epochs, "lr" => f.lr,
        },
    )?;
    let activation: Activation = p.activation.parse()?;
    let samples: Vec<SpnSample> = if p.input.is_empty() {
        synthetic(&p)?
    } else {
        let path = std::path::PathBuf::from(&p.input);
        serde_json::from_reader(open(&path)?)
            .map_err(|e| CliError::Core(specinject::Error::Parse { line: e.line(), msg: e.to_string() }))?
    };
    if samples.len() < 2 {
        return Err(CliError::Empty("spn-train needs at least two samples".into()));
    }
    if !p.input.is_empty() {
        p.channels = samples[0].features.channels();
    }
    let (train, val): (Vec<_>, Vec<_>) = samples.into_iter().enumerate().partition(|(i, _)| i % 2 == 0);
    let train: Vec<SpnSample> = train.into_iter().map(|s| s.1).collect();
    let val: Vec<SpnSample> = val.into_iter().map(|s| s.1).collect();

    let cfg = SpnConfig {
        d_r: p.d_r,
        channels: p.channels.clone(),
        hidden: p.hidden.clone(),
        energy_hidden: p.energy_hidden.clone(),
        l_out: p.l_out,
        activation,
    };
    let params0 = SPNParams::init(&cfg, p.seed)?;
    let tc = TrainConfig {
        epochs: p.epochs,
        lr: p.lr,
        weight_decay: p.weight_decay,
        batch_size: p.batch_size,
        seed: p.seed,
        ..TrainConfig::default()
    };
    let rep = spn_train(&train, &val, &params0, &tc)?;
    let e: Vec<f64> = val.iter().map(|s| s.energy).collect();
    let mean = e.iter().sum::<f64>() / e.len() as f64;
    let var = e.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / e.len() as f64;
    let val_r2 = if var > 0.0 { 1.0 - spn_loss(&val, &rep.params)? / var } else { 0.0 };

    let params_file = "spn_params.json".to_string();
    write_text(&ctx.path(&params_file), &(serde_json::to_string_pretty(&rep.params).expect("params serialise") + "\n"))?;
    let result = TrainResult {
        n_train: train.len(),
        n_val: val.len(),
        n_params: params0.n_params(),
        best_epoch: rep.best_epoch,
        best_val_loss: rep.best_val_loss,
        val_r2,
        final_train_loss: rep.train_loss.last().copied(),
        train_loss: rep.train_loss,
        val_loss: rep.val_loss,
        params_file,
    };
    let summary = format!(
        "{} train / {} val, {} parameters: best epoch {} val MSE {:.4e}, val R2 {:.4}\n",
        result.n_train, result.n_val, result.n_params, result.best_epoch, result.best_val_loss, result.val_r2
    );
    ctx.finish(&Report::new("spn-train", resolved, Vec::new(), result), &summary)
}
