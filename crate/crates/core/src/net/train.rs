use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::model::Model;
use crate::autodiff::{adam_step, AdamState, Tape, Tensor, Unary, Var};
use crate::error::{Error, Result};
use crate::real::Real;

/// Network inputs with their gold-standard targets, one row per voxel.
#[derive(Clone, Debug, PartialEq)]
pub struct Samples<T> {
    /// `[n × region²·C]`
    pub inputs: Tensor<T>,
    /// `[n × outputs]`
    pub targets: Tensor<T>,
}

impl<T: Real> Samples<T> {
    pub fn new(inputs: Tensor<T>, targets: Tensor<T>) -> Result<Self> {
        if inputs.rows() != targets.rows() {
            return Err(Error::Dimension(format!(
                "{} input rows but {} target rows",
                inputs.rows(),
                targets.rows()
            )));
        }
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn rows(&self, idx: &[usize]) -> Result<Self> {
        Self::new(take_rows(&self.inputs, idx)?, take_rows(&self.targets, idx)?)
    }

    /// Rows of every part, in order.
    pub fn concat(parts: &[Self]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::Data("no samples to concatenate".into()))?;
        let (ci, ct) = (first.inputs.cols(), first.targets.cols());
        if parts.iter().any(|p| p.inputs.cols() != ci || p.targets.cols() != ct) {
            return Err(Error::Dimension("samples of different widths".into()));
        }
        let n = parts.iter().map(Self::len).sum();
        let inputs = parts.iter().flat_map(|p| p.inputs.data().iter().copied()).collect();
        let targets = parts.iter().flat_map(|p| p.targets.data().iter().copied()).collect();
        Self::new(Tensor::matrix(n, ci, inputs)?, Tensor::matrix(n, ct, targets)?)
    }
}

fn take_rows<T: Real>(t: &Tensor<T>, idx: &[usize]) -> Result<Tensor<T>> {
    let c = t.cols();
    let mut data = Vec::with_capacity(idx.len() * c);
    for &i in idx {
        data.extend_from_slice(t.row_slice(i));
    }
    Tensor::matrix(idx.len(), c, data)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    /// Validation loss before any update.
    pub initial_val_loss: f64,
    pub epochs: Vec<EpochRecord>,
    pub stopped_early: bool,
}

/// Per-column mean and standard deviation, with unit scale for constant columns.
pub fn target_scales<T: Real>(targets: &Tensor<T>) -> (Vec<f64>, Vec<f64>) {
    let (n, c) = (targets.rows(), targets.cols());
    let mut mean = vec![0.0; c];
    let mut std = vec![0.0; c];
    if n == 0 {
        return (mean, vec![1.0; c]);
    }
    for j in 0..c {
        let m = (0..n).map(|i| targets.at(i, j).as_f64()).sum::<f64>() / n as f64;
        let v = (0..n).map(|i| (targets.at(i, j).as_f64() - m).powi(2)).sum::<f64>() / n as f64;
        mean[j] = m;
        std[j] = if v > 0.0 { v.sqrt() } else { 1.0 };
    }
    (mean, std)
}

/// `Σ_params mean_batch(((out − target)/scale)²)`
fn loss_node<T: Real>(tape: &mut Tape<T>, out: Var, targets: &Tensor<T>, std: &[f64]) -> Result<Var> {
    let t = tape.constant(targets.clone());
    let diff = tape.sub(out, t)?;
    let inv = tape.constant(Tensor::row(std.iter().map(|&s| T::of(1.0 / s)).collect()));
    let z = tape.mul_row(diff, inv)?;
    let sq = tape.unary(z, Unary::Square);
    let total = tape.sum(sq);
    Ok(tape.scale(total, T::of(1.0 / targets.rows() as f64)))
}

/// Standardized loss of `model` on `samples`, without dropout.
pub fn evaluate_loss<T: Real>(model: &Model<T>, samples: &Samples<T>, batch: usize) -> Result<f64> {
    if samples.is_empty() {
        return Ok(f64::NAN);
    }
    let (pred, _) = predict_all(model, &samples.inputs, batch)?;
    let std = &model.meta.target_std;
    let (n, c) = (pred.rows(), pred.cols());
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..c {
            let z = (pred.at(i, j) - samples.targets.at(i, j)).as_f64() / std[j];
            total += z * z;
        }
    }
    Ok(total / n as f64)
}

/// Outputs for every row of `inputs`, evaluated in chunks of `batch`.
pub fn predict_all<T: Real>(model: &Model<T>, inputs: &Tensor<T>, batch: usize) -> Result<(Tensor<T>, Option<Tensor<T>>)> {
    let n = inputs.rows();
    let batch = batch.max(1);
    let chunks: Vec<(usize, usize)> = (0..n).step_by(batch).map(|s| (s, (s + batch).min(n))).collect();
    let parts: Vec<Result<(Tensor<T>, Option<Tensor<T>>)>> = chunks
        .par_iter()
        .map(|&(a, b)| {
            let idx: Vec<usize> = (a..b).collect();
            model.predict(&take_rows(inputs, &idx)?)
        })
        .collect();
    let mut out = Vec::with_capacity(n * model.n_outputs());
    let mut code: Option<Vec<T>> = None;
    for p in parts {
        let (o, c) = p?;
        out.extend_from_slice(o.data());
        if let Some(c) = c {
            code.get_or_insert_with(Vec::new).extend_from_slice(c.data());
        }
    }
    let out = Tensor::matrix(n, model.n_outputs(), out)?;
    let code = match code {
        Some(c) => Some(Tensor::matrix(n, model.meta.atoms, c)?),
        None => None,
    };
    Ok((out, code))
}

fn stream_seed(seed: u64, epoch: usize, batch: usize) -> u64 {
    seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (batch as u64).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// Supervised training with Adam. The target scales are computed from
/// `train` and stored in the model; zero epochs leave the weights untouched.
pub fn train<T: Real>(model: &mut Model<T>, train: &Samples<T>, val: &Samples<T>, cfg: &TrainConfig) -> Result<History> {
    if train.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    if cfg.batch == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let (mean, std) = target_scales(&train.targets);
    model.meta.target_mean = mean;
    model.meta.target_std = std;
    let mut history = History {
        initial_val_loss: evaluate_loss(model, val, cfg.batch)?,
        ..Default::default()
    };
    let mut adam = AdamState::new(model.params.tensors());
    let n = train.len();
    let n_batches = n.div_ceil(cfg.batch);
    let mut order: Vec<usize> = (0..n).collect();
    let mut best: Option<(f64, Vec<Tensor<T>>)> = None;
    let mut since_best = 0;
    for epoch in 0..cfg.epochs {
        let mut shuffle = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, epoch, usize::MAX));
        order.shuffle(&mut shuffle);
        let mut running = 0.0;
        let mut lr = 0.0;
        for (bi, chunk) in order.chunks(cfg.batch).enumerate() {
            let batch = train.rows(chunk)?;
            let mut tape = Tape::new().training(true);
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, epoch, bi));
            let fwd = model.forward(&mut tape, &batch.inputs, &mut rng)?;
            let loss = loss_node(&mut tape, fwd.out, &batch.targets, &model.meta.target_std)?;
            let lv = tape.value(loss).data()[0].as_f64();
            if !lv.is_finite() {
                return Err(Error::Numerical(format!("non-finite loss at epoch {epoch}, batch {bi}")));
            }
            let mut grads = tape.backward(loss)?;
            let g: Vec<Tensor<T>> = fwd.params.iter().map(|&v| grads.take(v)).collect();
            if let Some(i) = g.iter().position(|t| !t.all_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite gradient for {} at epoch {epoch}, batch {bi}",
                    model.params.names()[i]
                )));
            }
            lr = cfg.lr_at(epoch as f64 + (bi + 1) as f64 / n_batches as f64);
            adam_step(model.params.tensors_mut(), &g, &mut adam, T::of(lr), &cfg.adam)?;
            running += lv * chunk.len() as f64;
        }
        let val_loss = evaluate_loss(model, val, cfg.batch)?;
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: running / n as f64,
            val_loss,
            lr,
        });
        if let Some(patience) = cfg.patience {
            let improved = best.as_ref().is_none_or(|(b, _)| val_loss < *b);
            if improved {
                best = Some((val_loss, model.params.tensors().to_vec()));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= patience {
                    history.stopped_early = true;
                    break;
                }
            }
        }
    }
    if let Some((_, w)) = best {
        model.params.load_values(w)?;
    }
    Ok(history)
}
