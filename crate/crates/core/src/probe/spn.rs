//! Spectral prediction network head.
//!
//! Per atom: invariants `s` of the backbone feature blocks, an MLP
//! `s → a ∈ R^{(L_out+1)²}`, the power summary `P[ℓ] = Σ_m a_{ℓm}²` and a
//! scalar MLP `g_φ(P)`. Gradients are written out by hand.

use std::str::FromStr;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cgspan::GauntTable;
use crate::rng::seeded;
use crate::sphharm::L_MAX_SUPPORTED;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Square,
    Silu,
}

impl Activation {
    pub const ALL: [Activation; 3] = [Activation::Identity, Activation::Square, Activation::Silu];

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Square => x * x,
            Activation::Silu => x / (1.0 + (-x).exp()),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Square => 2.0 * x,
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 + x * (1.0 - s))
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Square => "square",
            Activation::Silu => "silu",
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "identity" | "linear" => Ok(Activation::Identity),
            "square" => Ok(Activation::Square),
            "silu" | "swish" => Ok(Activation::Silu),
            other => Err(Error::arg(format!("unknown activation {other:?}"))),
        }
    }
}

/// Fully connected layer, `w` row-major `n_out × n_in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    fn n_params(&self) -> usize {
        self.w.len() + self.b.len()
    }

    fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.w.chunks_exact(self.n_in).zip(&self.b).map(|(row, b)| {
            row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + b
        }));
    }
}

/// Activation after every layer except the last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

struct MlpTape {
    /// Layer inputs, then the final output.
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of hidden layers.
    pre: Vec<Vec<f64>>,
}

impl Mlp {
    fn new(widths: &[usize], rng: &mut impl rand::Rng, zero_last: bool) -> Self {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(k, wd)| {
                let (n_in, n_out) = (wd[0], wd[1]);
                let last = k + 2 == widths.len();
                let w = if last && zero_last {
                    vec![0.0; n_in * n_out]
                } else {
                    let normal = Normal::new(0.0, (1.0 / n_in.max(1) as f64).sqrt())
                        .expect("finite scale");
                    (0..n_in * n_out).map(|_| normal.sample(rng)).collect()
                };
                Dense {
                    n_in,
                    n_out,
                    w,
                    b: vec![0.0; n_out],
                }
            })
            .collect();
        Self { layers }
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(Dense::n_params).sum()
    }

    fn forward(&self, x: &[f64], act: Activation) -> MlpTape {
        let mut inputs = vec![x.to_vec()];
        let mut pre = Vec::with_capacity(self.layers.len());
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::new();
            layer.forward(inputs.last().expect("input"), &mut z);
            if k + 1 < self.layers.len() {
                let a = z.iter().map(|&v| act.apply(v)).collect();
                pre.push(z);
                inputs.push(a);
            } else {
                inputs.push(z);
            }
        }
        MlpTape { inputs, pre }
    }

    /// Accumulates parameter gradients into `grad` and returns the input gradient.
    fn backward(&self, tape: &MlpTape, g_out: &[f64], act: Activation, grad: &mut [f64]) -> Vec<f64> {
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut o = 0;
        for l in &self.layers {
            offsets.push(o);
            o += l.n_params();
        }
        let mut g = g_out.to_vec();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            if k + 1 < self.layers.len() {
                for (gi, &z) in g.iter_mut().zip(&tape.pre[k]) {
                    *gi *= act.derivative(z);
                }
            }
            let x = &tape.inputs[k];
            let (gw, gb) = grad[offsets[k]..offsets[k] + layer.n_params()].split_at_mut(layer.w.len());
            for (i, &gi) in g.iter().enumerate() {
                gb[i] += gi;
                if gi != 0.0 {
                    for (gw, &xj) in gw[i * layer.n_in..(i + 1) * layer.n_in].iter_mut().zip(x) {
                        *gw += gi * xj;
                    }
                }
            }
            let mut gx = vec![0.0; layer.n_in];
            for (row, &gi) in layer.w.chunks_exact(layer.n_in).zip(&g) {
                for (gx, w) in gx.iter_mut().zip(row) {
                    *gx += gi * w;
                }
            }
            g = gx;
        }
        g
    }

    fn flat_into(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend_from_slice(&l.w);
            out.extend_from_slice(&l.b);
        }
    }

    fn set_flat(&mut self, mut v: &[f64]) -> usize {
        let n = self.n_params();
        for l in &mut self.layers {
            let (w, rest) = v.split_at(l.w.len());
            l.w.copy_from_slice(w);
            let (b, rest) = rest.split_at(l.b.len());
            l.b.copy_from_slice(b);
            v = rest;
        }
        n
    }
}

/// Backbone features of one atom: `blocks[ℓ][channel][m + ℓ]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Features {
    pub blocks: Vec<Vec<Vec<f64>>>,
}

impl Features {
    pub fn channels(&self) -> Vec<usize> {
        self.blocks.iter().map(Vec::len).collect()
    }

    fn check(&self, channels: &[usize]) -> Result<()> {
        if self.channels() != channels {
            return Err(Error::arg(format!(
                "feature channels {:?} do not match {:?}",
                self.channels(),
                channels
            )));
        }
        for (l, block) in self.blocks.iter().enumerate() {
            if block.iter().any(|c| c.len() != 2 * l + 1) {
                return Err(Error::arg(format!("degree-{l} channel is not {} wide", 2 * l + 1)));
            }
        }
        Ok(())
    }
}

/// `(i1, i2, i3, G)` terms of one Gaunt-contracted degree triple.
struct Triple {
    l: [usize; 3],
    terms: Vec<(usize, usize, usize, f64)>,
}

fn cubic_triples(l_max: usize) -> &'static [Triple] {
    static CACHE: [OnceLock<Vec<Triple>>; L_MAX_SUPPORTED + 1] = [const { OnceLock::new() }; L_MAX_SUPPORTED + 1];
    CACHE[l_max].get_or_init(|| {
        let table = GauntTable::shared();
        let mut out = Vec::new();
        for l1 in 1..=l_max {
            for l2 in l1..=l_max {
                for l3 in l2..=(l1 + l2).min(l_max) {
                    if (l1 + l2 + l3) % 2 == 1 {
                        continue;
                    }
                    let mut terms = Vec::new();
                    for m1 in -(l1 as i64)..=l1 as i64 {
                        for m2 in -(l2 as i64)..=l2 as i64 {
                            for &(l, m, g) in table.couplings(l1, m1, l2, m2) {
                                if l as usize == l3 {
                                    terms.push((
                                        (m1 + l1 as i64) as usize,
                                        (m2 + l2 as i64) as usize,
                                        (m as i64 + l3 as i64) as usize,
                                        g,
                                    ));
                                }
                            }
                        }
                    }
                    if !terms.is_empty() {
                        out.push(Triple {
                            l: [l1, l2, l3],
                            terms,
                        });
                    }
                }
            }
        }
        out
    })
}

fn check_extractor(channels: &[usize], d_r: u8) -> Result<()> {
    if !(1..=3).contains(&d_r) {
        return Err(Error::arg(format!("invariant degree {d_r} not in 1..=3")));
    }
    if channels.is_empty() || channels.len() > L_MAX_SUPPORTED + 1 {
        return Err(Error::arg("feature blocks must cover degrees 0..=L with L ≤ 12"));
    }
    Ok(())
}

/// Number of invariants produced for the given channel layout.
pub fn n_invariants(channels: &[usize], d_r: u8) -> Result<usize> {
    check_extractor(channels, d_r)?;
    let mut n = channels[0];
    if d_r >= 2 {
        n += channels[1..].iter().sum::<usize>();
    }
    if d_r == 3 {
        for t in cubic_triples(channels.len() - 1) {
            n += t.l.iter().map(|&l| channels[l]).min().unwrap_or(0);
        }
    }
    Ok(n)
}

/// Rotation invariants of the feature blocks.
///
/// `d_r = 1`: the degree-0 channels. `d_r = 2`: also the per-channel norm of
/// every `ℓ > 0` block. `d_r = 3`: also, for each channel index shared by three
/// blocks `ℓ1 ≤ ℓ2 ≤ ℓ3` (all `> 0`), the Gaunt contraction
/// `Σ G(ℓ1m1, ℓ2m2, ℓ3m3) h_{ℓ1m1} h_{ℓ2m2} h_{ℓ3m3}`.
pub fn invariants(features: &Features, d_r: u8) -> Result<Vec<f64>> {
    let channels = features.channels();
    check_extractor(&channels, d_r)?;
    features.check(&channels)?;
    let mut s: Vec<f64> = features.blocks[0].iter().map(|c| c[0]).collect();
    if d_r >= 2 {
        for block in &features.blocks[1..] {
            s.extend(block.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt()));
        }
    }
    if d_r == 3 {
        let b = &features.blocks;
        for t in cubic_triples(channels.len() - 1) {
            let [l1, l2, l3] = t.l;
            let n = channels[l1].min(channels[l2]).min(channels[l3]);
            for c in 0..n {
                let (h1, h2, h3) = (&b[l1][c], &b[l2][c], &b[l3][c]);
                s.push(t.terms.iter().map(|&(i, j, k, g)| g * h1[i] * h2[j] * h3[k]).sum());
            }
        }
    }
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpnConfig {
    pub d_r: u8,
    /// Channels per backbone degree `0..=L`.
    pub channels: Vec<usize>,
    pub hidden: Vec<usize>,
    pub energy_hidden: Vec<usize>,
    pub l_out: usize,
    pub activation: Activation,
}

impl SpnConfig {
    pub fn new(channels: Vec<usize>, d_r: u8, l_out: usize, activation: Activation) -> Self {
        Self {
            d_r,
            channels,
            hidden: vec![128, 128],
            energy_hidden: vec![32],
            l_out,
            activation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SPNParams {
    pub d_r: u8,
    pub channels: Vec<usize>,
    pub l_out: usize,
    pub activation: Activation,
    /// Invariants to readout weights `a`.
    pub theta: Mlp,
    /// Power summary to energy.
    pub phi: Mlp,
}

impl SPNParams {
    /// Normal fan-in initialisation with the last energy layer at zero.
    pub fn init(cfg: &SpnConfig, seed: u64) -> Result<Self> {
        let k = n_invariants(&cfg.channels, cfg.d_r)?;
        if cfg.l_out > L_MAX_SUPPORTED {
            return Err(Error::arg(format!("output degree {} too large", cfg.l_out)));
        }
        if cfg.hidden.contains(&0) || cfg.energy_hidden.contains(&0) {
            return Err(Error::arg("hidden widths must be positive"));
        }
        let mut rng = seeded(seed);
        let mut widths = vec![k];
        widths.extend(&cfg.hidden);
        widths.push((cfg.l_out + 1) * (cfg.l_out + 1));
        let theta = Mlp::new(&widths, &mut rng, false);
        let mut widths = vec![cfg.l_out + 1];
        widths.extend(&cfg.energy_hidden);
        widths.push(1);
        let phi = Mlp::new(&widths, &mut rng, true);
        Ok(Self {
            d_r: cfg.d_r,
            channels: cfg.channels.clone(),
            l_out: cfg.l_out,
            activation: cfg.activation,
            theta,
            phi,
        })
    }

    pub fn n_params(&self) -> usize {
        self.theta.n_params() + self.phi.n_params()
    }

    /// `theta` layers then `phi` layers, each as weights then biases.
    pub fn flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_params());
        self.theta.flat_into(&mut v);
        self.phi.flat_into(&mut v);
        v
    }

    pub fn set_flat(&mut self, v: &[f64]) -> Result<()> {
        if v.len() != self.n_params() {
            return Err(Error::arg(format!(
                "{} parameters given, {} expected",
                v.len(),
                self.n_params()
            )));
        }
        let n = self.theta.set_flat(v);
        self.phi.set_flat(&v[n..]);
        Ok(())
    }

    /// Named `(start, end)` ranges of [`SPNParams::flat`].
    pub fn param_groups(&self) -> Vec<(String, usize, usize)> {
        let mut out = Vec::new();
        let mut o = 0;
        for (name, mlp) in [("theta", &self.theta), ("phi", &self.phi)] {
            for (k, l) in mlp.layers.iter().enumerate() {
                out.push((format!("{name}.{k}.w"), o, o + l.w.len()));
                o += l.w.len();
                out.push((format!("{name}.{k}.b"), o, o + l.b.len()));
                o += l.b.len();
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.flat().iter().all(|v| v.is_finite())
    }

    fn validate(&self) -> Result<()> {
        let k = n_invariants(&self.channels, self.d_r)?;
        let shapes_ok = |mlp: &Mlp, n_in: usize, n_out: usize| {
            !mlp.layers.is_empty()
                && mlp.layers[0].n_in == n_in
                && mlp.layers.last().is_some_and(|l| l.n_out == n_out)
                && mlp.layers.windows(2).all(|p| p[0].n_out == p[1].n_in)
                && mlp
                    .layers
                    .iter()
                    .all(|l| l.w.len() == l.n_in * l.n_out && l.b.len() == l.n_out)
        };
        let n_a = (self.l_out + 1) * (self.l_out + 1);
        if !shapes_ok(&self.theta, k, n_a) || !shapes_ok(&self.phi, self.l_out + 1, 1) {
            return Err(Error::arg("parameter shapes do not match the layer widths"));
        }
        Ok(())
    }
}

struct Tape {
    theta: MlpTape,
    phi: MlpTape,
}

fn power(a: &[f64], l_out: usize) -> Vec<f64> {
    (0..=l_out)
        .map(|l| a[l * l..(l + 1) * (l + 1)].iter().map(|v| v * v).sum())
        .collect()
}

fn forward_tape(features: &Features, params: &SPNParams) -> Result<(f64, Tape)> {
    if features.channels() != params.channels {
        return Err(Error::arg(format!(
            "feature channels {:?} do not match parameters {:?}",
            features.channels(),
            params.channels
        )));
    }
    let s = invariants(features, params.d_r)?;
    let theta = params.theta.forward(&s, params.activation);
    let p = power(theta.inputs.last().expect("output"), params.l_out);
    let phi = params.phi.forward(&p, params.activation);
    let e = phi.inputs.last().expect("output")[0];
    Ok((e, Tape { theta, phi }))
}

/// Per-atom energy `g_φ(P)`.
pub fn spn_forward(features: &Features, params: &SPNParams) -> Result<f64> {
    params.validate()?;
    Ok(forward_tape(features, params)?.0)
}

/// The power summary `P[ℓ]`, `ℓ = 0..=L_out`.
pub fn power_summary(features: &Features, params: &SPNParams) -> Result<Vec<f64>> {
    params.validate()?;
    let s = invariants(features, params.d_r)?;
    let tape = params.theta.forward(&s, params.activation);
    Ok(power(tape.inputs.last().expect("output"), params.l_out))
}

fn backward(params: &SPNParams, tape: &Tape, g_e: f64, grad: &mut [f64]) {
    let n_theta = params.theta.n_params();
    let (g_theta, g_phi) = grad.split_at_mut(n_theta);
    let g_p = params.phi.backward(&tape.phi, &[g_e], params.activation, g_phi);
    let a = tape.theta.inputs.last().expect("output");
    let g_a: Vec<f64> = (0..a.len())
        .map(|i| {
            let l = (i as f64).sqrt() as usize;
            2.0 * a[i] * g_p[l]
        })
        .collect();
    params.theta.backward(&tape.theta, &g_a, params.activation, g_theta);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpnSample {
    pub features: Features,
    pub energy: f64,
}

const CHUNK: usize = 32;

/// Mean squared energy error and its gradient in [`SPNParams::flat`] layout.
///
/// Samples are reduced in fixed chunks so the result does not depend on the
/// thread count.
pub fn spn_loss_and_grad(samples: &[SpnSample], params: &SPNParams) -> Result<(f64, Vec<f64>)> {
    params.validate()?;
    if samples.is_empty() {
        return Err(Error::arg("no samples"));
    }
    let n = samples.len() as f64;
    let np = params.n_params();
    let parts: Vec<(f64, Vec<f64>)> = samples
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut grad = vec![0.0; np];
            let mut loss = 0.0;
            for s in chunk {
                let (e, tape) = forward_tape(&s.features, params)?;
                let r = e - s.energy;
                loss += r * r;
                backward(params, &tape, 2.0 * r / n, &mut grad);
            }
            Ok((loss, grad))
        })
        .collect::<Result<_>>()?;
    let mut loss = 0.0;
    let mut grad = vec![0.0; np];
    for (l, g) in parts {
        loss += l;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    Ok((loss / n, grad))
}

pub fn spn_loss(samples: &[SpnSample], params: &SPNParams) -> Result<f64> {
    params.validate()?;
    if samples.is_empty() {
        return Err(Error::arg("no samples"));
    }
    let sq: Vec<f64> = samples
        .par_chunks(CHUNK)
        .map(|chunk| {
            chunk.iter().try_fold(0.0, |acc, s| {
                let r = forward_tape(&s.features, params)?.0 - s.energy;
                Ok(acc + r * r)
            })
        })
        .collect::<Result<_>>()?;
    Ok(sq.iter().sum::<f64>() / samples.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// 0 means full batch.
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            lr: 1e-3,
            weight_decay: 1e-5,
            batch_size: 64,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub params: SPNParams,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
}

/// Adam on the mean squared energy error; returns the parameters with the
/// lowest validation loss (training loss when `val` is empty).
pub fn spn_train(
    train: &[SpnSample],
    val: &[SpnSample],
    params0: &SPNParams,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    params0.validate()?;
    if train.is_empty() {
        return Err(Error::arg("empty training set"));
    }
    if !(cfg.lr > 0.0) || !(cfg.weight_decay >= 0.0) {
        return Err(Error::arg("learning rate must be positive, weight decay non-negative"));
    }
    if train
        .iter()
        .chain(val)
        .any(|s| !s.energy.is_finite() || s.features.blocks.iter().flatten().flatten().any(|v| !v.is_finite()))
    {
        return Err(Error::arg("non-finite training input"));
    }
    let eval_set = if val.is_empty() { train } else { val };
    let mut params = params0.clone();
    let mut theta = params.flat();
    let mut m = vec![0.0; theta.len()];
    let mut v = vec![0.0; theta.len()];
    let mut step = 0i32;
    let mut rng = seeded(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let bs = if cfg.batch_size == 0 { train.len() } else { cfg.batch_size };

    let mut best = (spn_loss(eval_set, &params)?, 0usize, params.clone());
    let mut train_hist = Vec::with_capacity(cfg.epochs);
    let mut val_hist = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for idx in order.chunks(bs) {
            let batch: Vec<SpnSample> = idx.iter().map(|&i| train[i].clone()).collect();
            let (loss, mut g) = spn_loss_and_grad(&batch, &params)?;
            if !loss.is_finite() || g.iter().any(|x| !x.is_finite()) {
                return Err(Error::Training {
                    epoch,
                    msg: format!("loss became {loss} after {step} steps (lr {})", cfg.lr),
                });
            }
            epoch_loss += loss * idx.len() as f64;
            step += 1;
            let (c1, c2) = (1.0 - cfg.beta1.powi(step), 1.0 - cfg.beta2.powi(step));
            for i in 0..theta.len() {
                g[i] += cfg.weight_decay * theta[i];
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                theta[i] -= cfg.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + cfg.eps);
            }
            params.set_flat(&theta)?;
        }
        let val_loss = spn_loss(eval_set, &params)?;
        if !val_loss.is_finite() {
            return Err(Error::Training {
                epoch,
                msg: format!("validation loss became {val_loss}"),
            });
        }
        train_hist.push(epoch_loss / train.len() as f64);
        val_hist.push(val_loss);
        if val_loss < best.0 {
            best = (val_loss, epoch, params.clone());
        }
        log::debug!("epoch {epoch}: train {:.3e} val {val_loss:.3e}", epoch_loss / train.len() as f64);
    }
    Ok(TrainReport {
        params: best.2,
        best_epoch: best.1,
        best_val_loss: best.0,
        train_loss: train_hist,
        val_loss: val_hist,
    })
}
