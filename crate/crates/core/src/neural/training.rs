//! Mini-batch Adam loop shared by both network families.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::dataset::{EncodedDataset, FeatureRows, StandardizationStats};
use crate::nd::{mse, Adam, NdError, ParamStore, Tape, Tensor, Var};

use super::NeuralError;

/// Targets are divided by this during training (psi to ksi).
pub const TARGET_SCALE: f64 = 1000.0;

const PREDICT_CHUNK: usize = 512;

/// Network inputs for a set of rows: the standardized numeric block and
/// one index vector per categorical column.
#[derive(Clone, Debug)]
pub struct Batch {
    pub m: usize,
    pub numeric: Option<Tensor>,
    pub categorical: Vec<Vec<usize>>,
}

impl Batch {
    /// Gathers rows `idx` of already standardized `rows`.
    pub fn gather(rows: &FeatureRows, idx: &[usize]) -> Result<Self, NdError> {
        if idx.is_empty() {
            return Err(NdError::EmptyBatch);
        }
        let p = rows.p_num();
        let numeric = if p > 0 {
            let mut data = Vec::with_capacity(idx.len() * p);
            for &i in idx {
                data.extend_from_slice(rows.numeric_row(i));
            }
            Some(Tensor::new(vec![idx.len(), p], data)?)
        } else {
            None
        };
        let categorical = (0..rows.p_cat())
            .map(|j| idx.iter().map(|&i| rows.categorical_row(i)[j] as usize).collect())
            .collect();
        Ok(Self {
            m: idx.len(),
            numeric,
            categorical,
        })
    }
}

pub(crate) trait Network {
    fn store(&self) -> &ParamStore;
    fn store_mut(&mut self) -> &mut ParamStore;
    /// Records the forward pass; returns predictions `[m×1]` in ksi.
    fn forward(&self, tape: &mut Tape, batch: &Batch) -> Result<Var, NdError>;
}

/// Loss per epoch and the epoch whose parameters were kept.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingHistory {
    pub train_loss: Vec<f64>,
    pub validation_loss: Vec<f64>,
    pub best_epoch: Option<usize>,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Schedule {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub validation_fraction: f64,
}

impl Schedule {
    pub fn validate(&self) -> Result<(), NeuralError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(NeuralError::InvalidConfig("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(NeuralError::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(NeuralError::InvalidConfig("validation_fraction must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Training rows after the validation carve, standardized with statistics
/// of the fit part only. Targets are in ksi.
pub(crate) struct Prepared {
    pub stats: StandardizationStats,
    pub fit_rows: FeatureRows,
    pub fit_targets: Vec<f64>,
    pub validation: Option<(FeatureRows, Vec<f64>)>,
}

pub(crate) fn prepare<R: Rng>(
    train: &EncodedDataset,
    validation: Option<&EncodedDataset>,
    fraction: f64,
    rng: &mut R,
) -> Result<Prepared, NeuralError> {
    let n = train.n_rows();
    let (fit, val) = match validation {
        Some(v) => (train.clone(), Some(v.clone())),
        None => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(rng);
            let n_val = (n as f64 * fraction).floor() as usize;
            if n_val == 0 || n_val == n {
                (train.clone(), None)
            } else {
                let (v, f) = order.split_at(n_val);
                (train.subset(f)?, Some(train.subset(v)?))
            }
        }
    };
    let stats = StandardizationStats::fit(fit.features())?;
    let scaled = |ds: &EncodedDataset| -> Result<(FeatureRows, Vec<f64>), NeuralError> {
        Ok((
            stats.apply(ds.features())?,
            ds.targets().iter().map(|t| t / TARGET_SCALE).collect(),
        ))
    };
    let (fit_rows, fit_targets) = scaled(&fit)?;
    let validation = val.as_ref().map(scaled).transpose()?;
    Ok(Prepared {
        stats,
        fit_rows,
        fit_targets,
        validation,
    })
}

/// Forward pass over standardized rows in chunks; returns ksi.
pub(crate) fn predict_scaled<N: Network>(net: &N, rows: &FeatureRows) -> Result<Vec<f64>, NdError> {
    let n = rows.n_rows();
    let mut out = Vec::with_capacity(n);
    let all: Vec<usize> = (0..n).collect();
    for chunk in all.chunks(PREDICT_CHUNK) {
        let batch = Batch::gather(rows, chunk)?;
        let mut tape = Tape::new();
        let pred = net.forward(&mut tape, &batch)?;
        out.extend_from_slice(tape.value(pred).data());
    }
    Ok(out)
}

fn diverged(epoch: usize) -> impl Fn(NdError) -> NeuralError {
    move |e| match e {
        NdError::NonFinite { .. } => NeuralError::TrainingDiverged { epoch },
        other => NeuralError::Nd(other),
    }
}

/// Runs the schedule and leaves the network at the parameters of the epoch
/// with the lowest validation loss (training loss when there is no
/// validation set).
pub(crate) fn train<N: Network, R: Rng>(
    net: &mut N,
    data: &Prepared,
    schedule: &Schedule,
    rng: &mut R,
) -> Result<TrainingHistory, NeuralError> {
    let n = data.fit_rows.n_rows();
    let mut history = TrainingHistory::default();
    let mut adam = Adam::new(schedule.learning_rate);
    let mut best: Option<(f64, Vec<Tensor>)> = None;
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..schedule.epochs {
        let on_err = diverged(epoch);
        order.shuffle(rng);
        let mut total = 0.0;
        for chunk in order.chunks(schedule.batch_size) {
            let batch = Batch::gather(&data.fit_rows, chunk).map_err(&on_err)?;
            let target: Vec<f64> = chunk.iter().map(|&i| data.fit_targets[i]).collect();
            let mut tape = Tape::new();
            let pred = net.forward(&mut tape, &batch).map_err(&on_err)?;
            let loss = tape.mse_loss(pred, &target).map_err(&on_err)?;
            total += tape.value(loss).data()[0] * chunk.len() as f64;
            let grads = tape.backward(loss).map_err(&on_err)?;
            let store = net.store_mut();
            store.zero_grad();
            store.accumulate(&grads);
            adam.step(store);
            if store.iter().any(|p| !p.value().is_finite()) {
                return Err(NeuralError::TrainingDiverged { epoch });
            }
        }
        let train_loss = total / n as f64;
        if !train_loss.is_finite() {
            return Err(NeuralError::TrainingDiverged { epoch });
        }
        let val_loss = match &data.validation {
            Some((rows, y)) => {
                let pred = predict_scaled(net, rows).map_err(&on_err)?;
                mse(&pred, y)?
            }
            None => train_loss,
        };
        history.train_loss.push(train_loss);
        history.validation_loss.push(val_loss);
        if best.as_ref().is_none_or(|(b, _)| val_loss < *b) {
            best = Some((val_loss, net.store().snapshot()));
            history.best_epoch = Some(epoch);
        }
    }
    if let Some((_, snapshot)) = best {
        net.store_mut().restore(snapshot);
    }
    Ok(history)
}
