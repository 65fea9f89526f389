//! Adam training loop with learning-rate decay, early stopping, and seeded
//! determinism.
//!
//! The loop shuffles the training columns each epoch with a per-epoch RNG
//! stream, steps Adam per minibatch, decays the learning rate when the
//! training loss stagnates, stops when the validation loss stagnates, and
//! returns the parameters from the best validation epoch. A fixed seed yields
//! bitwise-identical weights run to run.

use super::mask::MaskMatrix;
use super::network::{autoencoder_loss_grads, reconstruction_loss, Activation, AutoencoderParams, Gradients};
use crate::pod::NormalizationStats;
use crate::{Error, Result};
use ndarray::{Array2, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Relative improvement below this counts as stagnation for both the
/// learning-rate schedule and early stopping.
pub const STAGNATION_RTOL: f64 = 1e-6;

/// Adam moment decay and regularization constants.
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Hyperparameters of one training run. The seed is mandatory: every random
/// choice (init, split, shuffles) derives from it.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub initial_lr: f64,
    pub lr_decay_factor: f64,
    pub lr_patience: usize,
    pub early_stop_patience: usize,
    pub seed: u64,
    pub validation_fraction: f64,
    /// Largest tolerated validation/train loss ratio at the returned epoch.
    pub overfit_ratio: f64,
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0
            || self.max_epochs == 0
            || self.lr_patience == 0
            || self.early_stop_patience == 0
        {
            return Err(Error::invalid("training counts must be positive"));
        }
        let positive = |v: f64| v > 0.0;
        if !positive(self.initial_lr)
            || !(self.lr_decay_factor > 0.0 && self.lr_decay_factor < 1.0)
            || !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0)
            || !positive(self.overfit_ratio)
        {
            return Err(Error::invalid(
                "training rates must be positive (decay factor and validation fraction below 1)",
            ));
        }
        Ok(())
    }
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            batch_size: 20,
            max_epochs: 10_000,
            initial_lr: 1e-3,
            lr_decay_factor: 0.1,
            lr_patience: 10,
            early_stop_patience: 200,
            seed: 0,
            validation_fraction: 0.1,
            overfit_ratio: 3.0,
        }
    }
}

/// First/second moment buffers for every learnable tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new(params: &AutoencoderParams) -> Self {
        let sizes = tensor_sizes(params);
        AdamState {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

fn tensor_sizes(params: &AutoencoderParams) -> [usize; 7] {
    [
        params.enc_w1.len(),
        params.enc_b1.len(),
        params.enc_w2.len(),
        params.enc_b2.len(),
        params.dec_w1.len(),
        params.dec_b1.len(),
        params.dec_w2.nnz(),
    ]
}

fn adam_slice(param: &mut [f64], grad: &[f64], m: &mut [f64], v: &mut [f64], t: u64, lr: f64) {
    let bc1 = 1.0 - ADAM_BETA1.powi(t as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(t as i32);
    for i in 0..param.len() {
        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * grad[i];
        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * grad[i] * grad[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        param[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
}

/// One Adam update over all tensors: bias-corrected first/second moments.
pub fn adam_update(
    params: &mut AutoencoderParams,
    grads: &Gradients,
    state: &mut AdamState,
    lr: f64,
) {
    state.t += 1;
    let t = state.t;
    let slices: [(&mut [f64], &[f64]); 7] = [
        (params.enc_w1.as_slice_mut().unwrap(), grads.enc_w1.as_slice().unwrap()),
        (params.enc_b1.as_slice_mut().unwrap(), grads.enc_b1.as_slice().unwrap()),
        (params.enc_w2.as_slice_mut().unwrap(), grads.enc_w2.as_slice().unwrap()),
        (params.enc_b2.as_slice_mut().unwrap(), grads.enc_b2.as_slice().unwrap()),
        (params.dec_w1.as_slice_mut().unwrap(), grads.dec_w1.as_slice().unwrap()),
        (params.dec_b1.as_slice_mut().unwrap(), grads.dec_b1.as_slice().unwrap()),
        (params.dec_w2.values_mut(), &grads.dec_w2_values),
    ];
    for (k, (p, g)) in slices.into_iter().enumerate() {
        adam_slice(p, g, &mut state.m[k], &mut state.v[k], t, lr);
    }
}

/// Per-epoch loss record.
#[derive(Debug, Clone, Copy)]
pub struct EpochRecord {
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

/// Trained parameters plus the loss history behind them.
#[derive(Debug)]
pub struct TrainingResult {
    pub params: AutoencoderParams,
    pub history: Vec<EpochRecord>,
    /// Epoch (0-based) whose validation loss the returned parameters attained.
    pub best_epoch: usize,
    pub wall_seconds: f64,
}

/// Seeded uniform split of the columns into (train, validation) index sets.
/// The validation set gets round(fraction * n) columns, at least 1, leaving
/// at least 1 for training.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::invalid("training needs at least 2 snapshots"));
    }
    let n_val = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    let val: Vec<usize> = idx[..n_val].to_vec();
    let train: Vec<usize> = idx[n_val..].to_vec();
    Ok((train, val))
}

fn gather_columns(data: ArrayView2<f64>, idx: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((data.nrows(), idx.len()));
    for (k, &j) in idx.iter().enumerate() {
        out.column_mut(k).assign(&data.column(j));
    }
    out
}

fn mean_loss_over(params: &AutoencoderParams, data: ArrayView2<f64>, batch: usize) -> Result<f64> {
    let n = data.ncols();
    let mut sse_entries = 0.0;
    let mut entries = 0usize;
    let mut start = 0;
    while start < n {
        let end = (start + batch).min(n);
        let chunk = data.slice(ndarray::s![.., start..end]);
        let loss = reconstruction_loss(params, chunk)?;
        let count = chunk.len();
        sse_entries += loss * count as f64;
        entries += count;
        start = end;
    }
    Ok(sse_entries / entries as f64)
}

/// Train a fresh autoencoder on normalized snapshots (m x n_snapshots).
///
/// Weight init, the validation split, and every epoch's shuffle each use
/// their own stream of a ChaCha8 generator seeded from `config.seed`, so the
/// run is reproducible bit for bit. Training-loss stagnation over
/// `lr_patience` epochs decays the learning rate; validation stagnation over
/// `early_stop_patience` epochs stops the run. The parameters snapshot from
/// the best validation epoch is returned.
pub fn train_autoencoder(
    snapshots: ArrayView2<f64>,
    mask: &MaskMatrix,
    latent: usize,
    enc_hidden: usize,
    activation: Activation,
    norm: NormalizationStats,
    config: &TrainingConfig,
) -> Result<TrainingResult> {
    config.validate()?;
    let started = std::time::Instant::now();
    let (train_idx, val_idx) = split_indices(snapshots.ncols(), config.validation_fraction, config.seed)?;
    let train_data = gather_columns(snapshots, &train_idx);
    let val_data = gather_columns(snapshots, &val_idx);

    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
    init_rng.set_stream(0);
    let mut params = AutoencoderParams::init(
        snapshots.nrows(),
        latent,
        enc_hidden,
        mask,
        activation,
        norm,
        &mut init_rng,
    )?;
    let mut adam = AdamState::new(&params);

    let mut lr = config.initial_lr;
    let mut history = Vec::new();
    let mut best_train = f64::INFINITY;
    let mut train_stall = 0usize;
    let mut best_val = f64::INFINITY;
    let mut val_stall = 0usize;
    let mut best_epoch = 0usize;
    let mut best_params = params.clone();

    let n_train = train_data.ncols();
    let mut order: Vec<usize> = (0..n_train).collect();

    for epoch in 0..config.max_epochs {
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
        shuffle_rng.set_stream(2 + epoch as u64);
        order.shuffle(&mut shuffle_rng);

        let mut sse_entries = 0.0;
        let mut entries = 0usize;
        let mut start = 0;
        while start < n_train {
            let end = (start + config.batch_size).min(n_train);
            let batch = gather_columns(train_data.view(), &order[start..end]);
            let (loss, grads) = autoencoder_loss_grads(&params, batch.view())?;
            if !loss.is_finite() {
                return Err(Error::numerical(format!(
                    "training diverged at epoch {epoch}: non-finite loss"
                )));
            }
            adam_update(&mut params, &grads, &mut adam, lr);
            sse_entries += loss * batch.len() as f64;
            entries += batch.len();
            start = end;
        }
        let train_loss = sse_entries / entries as f64;
        let val_loss = mean_loss_over(&params, val_data.view(), config.batch_size)?;
        if !val_loss.is_finite() {
            return Err(Error::numerical(format!(
                "training diverged at epoch {epoch}: non-finite validation loss"
            )));
        }
        history.push(EpochRecord { train_loss, val_loss, lr });

        // Learning-rate schedule on training-loss stagnation.
        if train_loss < best_train * (1.0 - STAGNATION_RTOL) {
            best_train = train_loss;
            train_stall = 0;
        } else {
            train_stall += 1;
            if train_stall >= config.lr_patience {
                lr *= config.lr_decay_factor;
                train_stall = 0;
            }
        }

        // Early stopping on validation-loss stagnation.
        if val_loss < best_val * (1.0 - STAGNATION_RTOL) {
            best_val = val_loss;
            val_stall = 0;
            best_epoch = epoch;
            best_params = params.clone();
        } else {
            val_stall += 1;
            if val_stall >= config.early_stop_patience {
                break;
            }
        }
    }

    let record = history[best_epoch];
    if record.val_loss > config.overfit_ratio * record.train_loss {
        return Err(Error::numerical(format!(
            "over-fit check failed at epoch {best_epoch}: validation loss {} exceeds {} x train loss {}",
            record.val_loss, config.overfit_ratio, record.train_loss
        )));
    }

    Ok(TrainingResult {
        params: best_params,
        history,
        best_epoch,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Normalize a snapshot matrix column-wise with the given statistics.
pub fn normalize_columns(data: ArrayView2<f64>, norm: &NormalizationStats) -> Array2<f64> {
    let mut out = data.to_owned();
    for mut col in out.axis_iter_mut(Axis(1)) {
        Zip::from(&mut col)
            .and(&norm.u_ref)
            .and(&norm.u_scale)
            .for_each(|v, &r, &s| *v = s * (*v - r));
    }
    out
}
