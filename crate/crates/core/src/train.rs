//! The two-stage training loop.
//!
//! Every epoch runs masked surrogate-gradient training (Stage I). On epochs
//! where `epoch % epoch_frequency == 0` each rewired layer is then measured
//! with the PQ index and pruned/regrown accordingly (Stage II). Epochs are
//! numbered from 1.

use serde::{Deserialize, Serialize};

use crate::data::{batches, encode, Dataset, Encoder};
use crate::error::{Error, Result};
use crate::layer::SparseLayer;
use crate::neuron::{lif_backward_with, lif_forward, readout_backward, readout_forward, LayerTrace, LifParams};
use crate::rewire::{rewire_step, RewireEvent};
use crate::rng::Rng;
use crate::sparsity::{pq_reports, PqParams, PqReport, Scope};
use crate::tensor::{argmax, Tensor};
use crate::topology::{density, er_init, er_init_exact, Connectivity, ErSpec, Mask};

/// Energy per synaptic operation, in joules.
pub const ENERGY_PER_SOP: f64 = 77e-15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskInit {
    /// Exactly `round(p·N)` connections drawn uniformly.
    Exact,
    /// Independent Bernoulli(p) per connection.
    Bernoulli,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    Constant,
    Cosine,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    /// Neuron counts from input to output, e.g. `[784, 300, 10]`.
    pub layer_sizes: Vec<usize>,
    pub time_steps: usize,
    pub lif: LifParams,
    pub pq: PqParams,
    pub scope: Scope,
    pub connectivity: Connectivity,
    pub mask_init: MaskInit,
    pub epoch_frequency: usize,
    /// Fraction λ of each prune count that is regrown.
    pub regrow_fraction: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_schedule: LrSchedule,
    pub opt_momentum: f64,
    pub encoder: Encoder,
    /// Weight init variance is `gain / active fan-in`.
    pub weight_gain: f64,
    /// Layer indices that keep their initial topology.
    pub exempt_layers: Vec<usize>,
    /// Record PQ reports on every epoch, not only on rewire epochs.
    pub log_pq_every_epoch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            layer_sizes: vec![64, 128, 4],
            time_steps: 8,
            lif: LifParams::default(),
            pq: PqParams::default(),
            scope: Scope::Layer,
            connectivity: Connectivity::Density(0.5),
            mask_init: MaskInit::Exact,
            epoch_frequency: 5,
            regrow_fraction: 0.5,
            epochs: 50,
            batch_size: 32,
            lr: 0.05,
            lr_schedule: LrSchedule::Constant,
            opt_momentum: 0.9,
            encoder: Encoder::Direct,
            weight_gain: 2.0,
            exempt_layers: Vec::new(),
            log_pq_every_epoch: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let arg = |m: String| Err(Error::Argument(m));
        if self.layer_sizes.len() < 2 {
            return arg("need at least 2 layer sizes".into());
        }
        if self.layer_sizes.contains(&0) {
            return arg("layer sizes must be >= 1".into());
        }
        if self.time_steps == 0 {
            return arg("time_steps must be >= 1".into());
        }
        if self.epoch_frequency == 0 {
            return arg("epoch_frequency must be >= 1".into());
        }
        if self.batch_size == 0 {
            return arg("batch_size must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.regrow_fraction) {
            return arg(format!("regrow_fraction must be in [0, 1], got {}", self.regrow_fraction));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return arg(format!("lr must be > 0, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.opt_momentum) {
            return arg(format!("opt_momentum must be in [0, 1), got {}", self.opt_momentum));
        }
        if !(self.weight_gain > 0.0 && self.weight_gain.is_finite()) {
            return arg(format!("weight_gain must be > 0, got {}", self.weight_gain));
        }
        let n_layers = self.layer_sizes.len() - 1;
        if let Some(l) = self.exempt_layers.iter().find(|&&l| l >= n_layers) {
            return arg(format!("exempt layer {} out of range (network has {} layers)", l, n_layers));
        }
        self.lif.validate()?;
        self.pq.validate()?;
        for w in self.layer_sizes.windows(2) {
            crate::topology::er_probability(&ErSpec {
                n_post: w[1],
                n_pre: w[0],
                connectivity: self.connectivity,
            })?;
        }
        Ok(())
    }

    fn lr_at(&self, epoch: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::Cosine => {
                let progress = (epoch - 1) as f64 / self.epochs.max(1) as f64;
                0.5 * self.lr * (1.0 + (std::f64::consts::PI * progress).cos())
            }
        }
    }
}

/// LIF hidden layers followed by a leaky readout.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub layers: Vec<SparseLayer>,
    pub lif: LifParams,
}

/// Everything backward needs from one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    /// One trace per hidden (spiking) layer.
    pub hidden: Vec<LayerTrace>,
    /// Input to the readout layer.
    pub readout_input: Tensor,
    /// `[T, batch, classes]`.
    pub logits: Tensor,
}

impl Network {
    pub fn new(layers: Vec<SparseLayer>, lif: LifParams) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Argument("network needs at least one layer".into()));
        }
        for (i, w) in layers.windows(2).enumerate() {
            if w[0].n_post() != w[1].n_pre() {
                return Err(Error::dim(
                    "network",
                    format!("layer {} emits {} but layer {} takes {}", i, w[0].n_post(), i + 1, w[1].n_pre()),
                ));
            }
        }
        Ok(Self { layers, lif })
    }

    /// ER masks and fan-in-scaled normal weights for `config`.
    pub fn initialize(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let root = Rng::new(config.seed);
        let mut mask_rng = root.substream(0);
        let mut weight_rng = root.substream(1);
        let mut layers = Vec::new();
        for w in config.layer_sizes.windows(2) {
            let spec = ErSpec {
                n_post: w[1],
                n_pre: w[0],
                connectivity: config.connectivity,
            };
            let mask = match config.mask_init {
                MaskInit::Exact => er_init_exact(&spec, &mut mask_rng)?,
                MaskInit::Bernoulli => er_init(&spec, &mut mask_rng)?,
            };
            layers.push(SparseLayer::init_normal(mask, config.weight_gain, &mut weight_rng)?);
        }
        Self::new(layers, config.lif)
    }

    pub fn densities(&self) -> Vec<f64> {
        self.layers.iter().map(|l| density(l.mask())).collect()
    }

    pub fn forward(&self, input: &Tensor) -> Result<ForwardPass> {
        let (readout, hidden_layers) = self.layers.split_last().expect("non-empty");
        let mut hidden = Vec::with_capacity(hidden_layers.len());
        let mut x = input.clone();
        for layer in hidden_layers {
            let trace = lif_forward(&x, layer, &self.lif)?;
            x = trace.spikes.clone();
            hidden.push(trace);
        }
        let logits = readout_forward(&x, readout, &self.lif)?;
        Ok(ForwardPass {
            hidden,
            readout_input: x,
            logits,
        })
    }

    /// Dense weight gradients for every layer, given `∂L/∂O(t)`.
    pub fn backward(&self, pass: &ForwardPass, grad_logits: &Tensor) -> Result<Vec<Tensor>> {
        let n = self.layers.len();
        let mut grads = vec![Tensor::zeros(&[0]); n];
        let readout = readout_backward(
            &pass.readout_input,
            grad_logits,
            &self.layers[n - 1],
            &self.lif,
            n > 1,
        )?;
        grads[n - 1] = readout.weights;
        let mut upstream = readout.input;
        for l in (0..n - 1).rev() {
            let g = upstream.take().expect("input gradient requested");
            let layer_grads = lif_backward_with(&pass.hidden[l], &g, &self.layers[l], &self.lif, l > 0)?;
            grads[l] = layer_grads.weights;
            upstream = layer_grads.input;
        }
        Ok(grads)
    }

    /// Class predictions from the time-summed logits.
    pub fn predict(logits: &Tensor) -> Vec<usize> {
        let shape = logits.shape();
        let (steps, batch, classes) = (shape[0], shape[1], shape[2]);
        (0..batch)
            .map(|b| {
                let mut acc = vec![0.0; classes];
                for t in 0..steps {
                    let row = &logits.data()[(t * batch + b) * classes..][..classes];
                    for (a, v) in acc.iter_mut().zip(row) {
                        *a += v;
                    }
                }
                argmax(&acc)
            })
            .collect()
    }
}

/// Mean over time steps and samples of softmax cross-entropy on `O(t)`,
/// with its gradient `(softmax - onehot) / (T·batch)`.
pub fn tet_loss(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (steps, batch, classes) = match logits.shape() {
        [a, b, c] => (*a, *b, *c),
        s => return Err(Error::dim("tet_loss", format!("expected [T, batch, classes], got {:?}", s))),
    };
    if steps == 0 {
        return Err(Error::Argument("tet_loss needs T >= 1".into()));
    }
    if labels.len() != batch {
        return Err(Error::dim("tet_loss", format!("{} labels for batch {}", labels.len(), batch)));
    }
    if let Some(bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::Argument(format!("label {} outside [0, {})", bad, classes)));
    }
    let scale = 1.0 / (steps * batch) as f64;
    let mut grad = vec![0.0; logits.len()];
    let mut loss = 0.0;
    for t in 0..steps {
        for (b, &y) in labels.iter().enumerate() {
            let off = (t * batch + b) * classes;
            let row = &logits.data()[off..off + classes];
            let peak = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
            let sum: f64 = row.iter().map(|v| (v - peak).exp()).sum();
            let log_z = peak + sum.ln();
            loss += log_z - row[y];
            for (c, g) in grad[off..off + classes].iter_mut().enumerate() {
                let p = (row[c] - log_z).exp();
                *g = (p - if c == y { 1.0 } else { 0.0 }) * scale;
            }
        }
    }
    Ok((loss * scale, Tensor::from_vec(logits.shape(), grad)?))
}

/// Momentum SGD over the dense gradient. The momentum buffer tracks inactive
/// entries as well; weights are re-masked after the update.
pub fn sgd_momentum_step(layer: &mut SparseLayer, dense_grad: &Tensor, lr: f64, mu: f64) -> Result<()> {
    if dense_grad.shape() != layer.weights.shape() {
        return Err(Error::dim(
            "sgd_momentum_step",
            format!("gradient {:?} vs weights {:?}", dense_grad.shape(), layer.weights.shape()),
        ));
    }
    if !dense_grad.is_finite() {
        return Err(Error::Numeric("non-finite gradient; step aborted".into()));
    }
    for (m, g) in layer.momentum.data_mut().iter_mut().zip(dense_grad.data()) {
        *m = mu * *m + g;
    }
    for (w, m) in layer.weights.data_mut().iter_mut().zip(layer.momentum.data()) {
        *w -= lr * m;
    }
    layer.enforce_mask();
    Ok(())
}

/// Synaptic operations over a batch: every spike of pre-neuron `j` costs one
/// operation per active outgoing connection of `j`. `inputs[l]` is the
/// `[T, batch, n_pre]` spike train entering layer `l`.
pub fn sops_total(inputs: &[&Tensor], masks: &[&Mask]) -> Result<f64> {
    if inputs.len() != masks.len() {
        return Err(Error::dim("estimate_sops", format!("{} traces vs {} masks", inputs.len(), masks.len())));
    }
    let mut total = 0.0;
    for (x, mask) in inputs.iter().zip(masks) {
        let n_pre = mask.n_pre();
        if x.shape().len() != 3 || x.shape()[2] != n_pre {
            return Err(Error::dim(
                "estimate_sops",
                format!("trace {:?} vs mask fan-in {}", x.shape(), n_pre),
            ));
        }
        let fan_out: Vec<f64> = mask.fan_out().into_iter().map(|c| c as f64).collect();
        for row in x.data().chunks(n_pre) {
            for (a, f) in row.iter().zip(&fan_out) {
                total += a * f;
            }
        }
    }
    Ok(total)
}

/// [`sops_total`] averaged per sample.
pub fn estimate_sops(inputs: &[&Tensor], masks: &[&Mask]) -> Result<f64> {
    let total = sops_total(inputs, masks)?;
    let batch = inputs.first().map_or(0, |x| x.shape().get(1).copied().unwrap_or(0));
    Ok(if batch == 0 { 0.0 } else { total / batch as f64 })
}

pub fn estimate_energy(sops: f64) -> f64 {
    sops * ENERGY_PER_SOP
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub densities: Vec<f64>,
    /// Synaptic operations per test sample, summed over layers.
    pub sops: f64,
    pub rewire_events: Vec<RewireEvent>,
    pub pq_reports: Vec<PqReport>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub network: Network,
    pub metrics: Vec<EpochMetrics>,
}

struct Evaluation {
    accuracy: f64,
    sops: f64,
}

fn evaluate(net: &Network, data: &Dataset, config: &TrainConfig, rng: &mut Rng) -> Result<Evaluation> {
    if data.is_empty() {
        return Ok(Evaluation { accuracy: 0.0, sops: 0.0 });
    }
    let mut correct = 0usize;
    let mut sops = 0.0;
    let masks: Vec<&Mask> = net.layers.iter().map(|l| l.mask()).collect();
    // analog input currents are not spike events
    let first_spiking = usize::from(config.encoder == Encoder::Direct);
    for idx in batches(data.len(), config.batch_size, false, rng) {
        let (x, labels) = data.gather(&idx);
        let batch = encode(&x, labels, config.time_steps, config.encoder, rng)?;
        let pass = net.forward(&batch.spikes)?;
        let preds = Network::predict(&pass.logits);
        correct += preds.iter().zip(&batch.labels).filter(|(p, y)| p == y).count();
        let mut inputs: Vec<&Tensor> = vec![&batch.spikes];
        inputs.extend(pass.hidden.iter().map(|h| &h.spikes));
        sops += sops_total(&inputs[first_spiking..], &masks[first_spiking..])?;
    }
    Ok(Evaluation {
        accuracy: correct as f64 / data.len() as f64,
        sops: sops / data.len() as f64,
    })
}

fn check_layer(layer: &SparseLayer, ceiling: f64, epoch: usize, index: usize) -> Result<()> {
    let breach = |detail: String| Error::Invariant {
        epoch,
        layer: index,
        detail,
    };
    if layer.inactive_weight_mass() != 0.0 {
        return Err(breach("nonzero weight on an inactive connection".into()));
    }
    if !layer.weights().is_finite() || !layer.momentum().is_finite() {
        return Err(breach("non-finite weight or momentum".into()));
    }
    let d = density(layer.mask());
    if d > ceiling {
        return Err(breach(format!("density {} exceeds initial density {}", d, ceiling)));
    }
    Ok(())
}

/// Runs the full two-stage schedule and returns the final network with
/// per-epoch metrics.
pub fn two_stage_train(config: &TrainConfig, train: &Dataset, test: &Dataset) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Argument("training set is empty".into()));
    }
    let (n_in, n_out) = (config.layer_sizes[0], *config.layer_sizes.last().expect("validated"));
    for ds in [train, test] {
        if !ds.is_empty() && ds.dim() != n_in {
            return Err(Error::dim("two_stage_train", format!("data dim {} vs input layer {}", ds.dim(), n_in)));
        }
        if let Some(bad) = ds.labels.iter().find(|&&y| y >= n_out) {
            return Err(Error::Argument(format!("label {} but only {} output neurons", bad, n_out)));
        }
    }

    let mut net = Network::initialize(config)?;
    let ceilings = net.densities();
    let root = Rng::new(config.seed);
    let mut shuffle_rng = root.substream(2);
    let mut encode_rng = root.substream(3);
    let mut metrics = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        // Stage I: masked surrogate-gradient training.
        let lr = config.lr_at(epoch);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for idx in batches(train.len(), config.batch_size, true, &mut shuffle_rng) {
            let (x, labels) = train.gather(&idx);
            let batch = encode(&x, labels, config.time_steps, config.encoder, &mut encode_rng)?;
            let pass = net.forward(&batch.spikes)?;
            let (loss, grad) = tet_loss(&pass.logits, &batch.labels)?;
            if !loss.is_finite() {
                return Err(Error::Invariant {
                    epoch,
                    layer: net.layers.len() - 1,
                    detail: format!("non-finite loss {}", loss),
                });
            }
            loss_sum += loss * idx.len() as f64;
            correct += Network::predict(&pass.logits)
                .iter()
                .zip(&batch.labels)
                .filter(|(p, y)| p == y)
                .count();
            let grads = net.backward(&pass, &grad)?;
            for (l, (layer, g)) in net.layers.iter_mut().zip(&grads).enumerate() {
                sgd_momentum_step(layer, g, lr, config.opt_momentum).map_err(|e| Error::Invariant {
                    epoch,
                    layer: l,
                    detail: e.to_string(),
                })?;
            }
        }

        // Stage II: PQ-guided rewiring.
        let rewire_now = epoch % config.epoch_frequency == 0;
        let mut events = Vec::new();
        let mut logged = Vec::new();
        for (l, layer) in net.layers.iter_mut().enumerate() {
            if config.exempt_layers.contains(&l) || !(rewire_now || config.log_pq_every_epoch) {
                continue;
            }
            let reports = pq_reports(layer, l, config.scope, &config.pq)?;
            if rewire_now {
                events.extend(rewire_step(layer, &reports, config.regrow_fraction, epoch)?);
            }
            logged.extend(reports);
        }
        for (l, layer) in net.layers.iter().enumerate() {
            check_layer(layer, ceilings[l], epoch, l)?;
        }

        let mut eval_rng = root.substream(1_000 + epoch as u64);
        let eval = evaluate(&net, test, config, &mut eval_rng)?;
        metrics.push(EpochMetrics {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_accuracy: correct as f64 / train.len() as f64,
            test_accuracy: eval.accuracy,
            densities: net.densities(),
            sops: eval.sops,
            rewire_events: events,
            pq_reports: logged,
        });
    }
    Ok(TrainOutcome { network: net, metrics })
}
