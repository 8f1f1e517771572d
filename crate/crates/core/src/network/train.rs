//! SGD training loop, evaluation and per-epoch records.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{cross_entropy, DeviceSpec, Network, NetworkError};
use crate::dataset::{shuffled_indices, Dataset};
use crate::exec::{map_indexed, Execution};
use crate::network::Activation;
use crate::rng::{derive_seed, stream_rng};

const TRAIN_STREAM: u64 = 0x7261_696e;
const EVAL_STREAM: u64 = 0x6576_616c;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerConfig {
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    /// Append an always-one input row to every layer.
    pub bias: bool,
    pub device: DeviceSpec,
    pub epochs: usize,
    pub lr0: f64,
    pub lr_decay: f64,
    /// The learning rate is multiplied by `lr_decay` every this many epochs.
    pub decay_every: usize,
    pub seed: u64,
    pub eval_every_epoch: bool,
    /// Use only the first N training samples.
    pub train_limit: Option<usize>,
    /// Use only the first N test samples.
    pub test_limit: Option<usize>,
    pub hist_bins: usize,
    /// Evaluation parallelism; training itself is always sequential.
    pub execution: Execution,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            layer_sizes: vec![784, 256, 128, 10],
            activation: Activation::Sigmoid,
            bias: true,
            device: DeviceSpec::default(),
            epochs: 30,
            lr0: 0.01,
            lr_decay: 0.5,
            decay_every: 10,
            seed: 0,
            eval_every_epoch: true,
            train_limit: None,
            test_limit: None,
            hist_bins: 50,
            execution: Execution::default(),
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<(), NetworkError> {
        let bad = |m: String| Err(NetworkError::InvalidConfig(m));
        if self.layer_sizes.len() < 2 || self.layer_sizes.contains(&0) {
            return bad(format!("layer sizes {:?}", self.layer_sizes));
        }
        if !(self.lr0 > 0.0) {
            return bad(format!("lr0 = {} must be positive", self.lr0));
        }
        if !(self.lr_decay > 0.0) || self.decay_every == 0 {
            return bad("lr decay must be positive with a non-zero period".into());
        }
        if self.hist_bins == 0 {
            return bad("hist_bins must be positive".into());
        }
        Ok(())
    }

    /// Learning rate used during 0-based epoch `e`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr0 * self.lr_decay.powi((epoch / self.decay_every) as i32)
    }

    fn hist_range(&self) -> f64 {
        match &self.device {
            DeviceSpec::Float => 2.0,
            DeviceSpec::Analog(d) => d.w_max + d.w_sym.abs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    /// Equal-width bins; values outside `[lo, hi]` fall in the end bins.
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(values: &[f64], lo: f64, hi: f64, bins: usize) -> Self {
        let mut counts = vec![0u64; bins];
        let width = (hi - lo) / bins as f64;
        for &v in values {
            let k = ((v - lo) / width).floor();
            let k = if k.is_nan() { 0 } else { (k.max(0.0) as usize).min(bins - 1) };
            counts[k] += 1;
        }
        Histogram { lo, hi, counts }
    }

    pub fn bin_edges(&self, k: usize) -> (f64, f64) {
        let w = (self.hi - self.lo) / self.counts.len() as f64;
        (self.lo + k as f64 * w, self.lo + (k + 1) as f64 * w)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSummary {
    pub mean: f64,
    pub std: f64,
    pub histogram: Histogram,
}

impl WeightSummary {
    pub fn of(values: &[f64], range: f64, bins: usize) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        WeightSummary {
            mean,
            std: var.sqrt(),
            histogram: Histogram::new(values, -range, range, bins),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    pub lr: f64,
    pub samples_seen: u64,
    /// `None` when evaluation was skipped for this epoch.
    pub test_error_pct: Option<f64>,
    pub train_loss: f64,
    pub layers: Vec<WeightSummary>,
}

pub fn layer_summaries(net: &Network, range: f64, bins: usize) -> Vec<WeightSummary> {
    net.layers()
        .iter()
        .map(|l| WeightSummary::of(l.weights(), range, bins))
        .collect()
}

/// Test error in percent and mean loss over `data`.
///
/// Each sample reads with its own generator, so the result does not depend
/// on `exec`.
pub fn evaluate(net: &Network, data: &Dataset, seed: u64, epoch: u64, exec: Execution) -> Result<(f64, f64), NetworkError> {
    let eval_seed = derive_seed(seed, &[EVAL_STREAM, epoch]);
    let per_sample = map_indexed(exec, data.len(), |i| {
        let mut rng = stream_rng(eval_seed, i as u64);
        let p = net.forward_pass(&data.image(i), &mut rng)?;
        let label = data.label(i);
        let pred = p
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (k, &v)| if v > best.1 { (k, v) } else { best })
            .0;
        Ok::<_, NetworkError>((pred != label, cross_entropy(&p, label)))
    });
    let mut wrong = 0usize;
    let mut loss = 0.0;
    for r in per_sample {
        let (miss, l) = r?;
        wrong += miss as usize;
        loss += l;
    }
    let n = data.len().max(1) as f64;
    Ok((100.0 * wrong as f64 / n, loss / n))
}

pub fn train(net: &mut Network, train_set: &Dataset, test_set: &Dataset, cfg: &TrainerConfig) -> Result<Vec<EpochRecord>, NetworkError> {
    train_with(net, train_set, test_set, cfg, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with<F: FnMut(&EpochRecord)>(
    net: &mut Network,
    train_set: &Dataset,
    test_set: &Dataset,
    cfg: &TrainerConfig,
    mut on_epoch: F,
) -> Result<Vec<EpochRecord>, NetworkError> {
    cfg.validate()?;
    let train_set = cfg.train_limit.map_or_else(|| train_set.clone(), |n| train_set.head(n));
    let test_set = cfg.test_limit.map_or_else(|| test_set.clone(), |n| test_set.head(n));
    if train_set.is_empty() {
        return Err(NetworkError::InvalidConfig("empty training set".into()));
    }
    let mut rng = stream_rng(derive_seed(cfg.seed, &[TRAIN_STREAM]), 0);
    let mut image = vec![0.0; train_set.dim()];
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut seen = 0u64;
    for e in 0..cfg.epochs {
        let lr = cfg.lr_at(e);
        let mut loss = 0.0;
        for i in shuffled_indices(train_set.len(), e as u64, cfg.seed) {
            train_set.image_into(i, &mut image);
            loss += net.train_step(&image, train_set.label(i), lr, &mut rng)?;
        }
        seen += train_set.len() as u64;
        let last = e + 1 == cfg.epochs;
        let test_error_pct = if (cfg.eval_every_epoch || last) && !test_set.is_empty() {
            Some(evaluate(net, &test_set, cfg.seed, e as u64, cfg.execution)?.0)
        } else {
            None
        };
        let rec = EpochRecord {
            epoch: e + 1,
            lr,
            samples_seen: seen,
            test_error_pct,
            train_loss: loss / train_set.len() as f64,
            layers: layer_summaries(net, cfg.hist_range(), cfg.hist_bins),
        };
        on_epoch(&rec);
        records.push(rec);
    }
    Ok(records)
}

/// `epoch,test_error_pct,train_loss,lr` plus per-layer weight mean and std.
pub fn write_epochs_csv<W: Write>(records: &[EpochRecord], out: W) -> Result<(), csv::Error> {
    let mut wtr = csv::Writer::from_writer(out);
    let layers = records.first().map_or(0, |r| r.layers.len());
    let mut header = vec!["epoch".to_string(), "test_error_pct".into(), "train_loss".into(), "lr".into()];
    for l in 0..layers {
        header.push(format!("w_mean_l{l}"));
        header.push(format!("w_std_l{l}"));
    }
    wtr.write_record(&header)?;
    for r in records {
        let mut row = vec![
            r.epoch.to_string(),
            r.test_error_pct.map_or(String::new(), |v| v.to_string()),
            r.train_loss.to_string(),
            r.lr.to_string(),
        ];
        for s in &r.layers {
            row.push(s.mean.to_string());
            row.push(s.std.to_string());
        }
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

/// `epoch,layer,bin_lo,bin_hi,count` for every epoch, layer and bin.
pub fn write_weights_hist_csv<W: Write>(records: &[EpochRecord], out: W) -> Result<(), csv::Error> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["epoch", "layer", "bin_lo", "bin_hi", "count"])?;
    for r in records {
        for (l, s) in r.layers.iter().enumerate() {
            for (k, c) in s.histogram.counts.iter().enumerate() {
                let (lo, hi) = s.histogram.bin_edges(k);
                wtr.write_record(&[r.epoch.to_string(), l.to_string(), lo.to_string(), hi.to_string(), c.to_string()])?;
            }
        }
    }
    wtr.flush()?;
    Ok(())
}
