//! Adam training loop, loss curves and de-normalized prediction.

use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{init_params, ForwardCtx, ModelKind, ModelParams, ModelShape};
use crate::pipeline::{invert_minmax, shuffle_once, Scaler, WindowedDataset};
use crate::tensor::{Graph, Tensor};

pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seq_len: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.epochs > 0
            && self.batch_size > 0
            && self.seq_len > 0
            && self.learning_rate.is_finite()
            && self.learning_rate >= 0.0
            && (0.0..1.0).contains(&self.dropout);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid training config {self:?}")))
        }
    }
}

/// Tuned per-architecture settings.
pub fn default_config(kind: ModelKind) -> TrainConfig {
    let (epochs, learning_rate, batch_size, seq_len, dropout) = match kind {
        ModelKind::DLinear => (100, 1e-3, 32, 10, 0.0),
        ModelKind::Vanilla => (50, 1e-4, 64, 10, 0.1),
        ModelKind::Tst => (50, 1e-4, 32, 5, 0.1),
        ModelKind::LstNet => (100, 1e-5, 64, 5, 0.2),
    };
    TrainConfig {
        epochs,
        learning_rate,
        batch_size,
        seq_len,
        dropout,
        seed: DEFAULT_SEED,
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors.iter().map(|t| vec![0.0; t.value.numel()]).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One bias-corrected Adam update at step `t >= 1`.
pub fn adam_step(params: &mut ModelParams, grads: &[Tensor], state: &mut AdamState, lr: f64, t: u64) -> Result<()> {
    if t == 0 {
        return Err(Error::InvalidArgument("adam step counts from 1".into()));
    }
    if grads.len() != params.tensors.len() {
        return Err(Error::Shape(format!(
            "{} gradients for {} tensors",
            grads.len(),
            params.tensors.len()
        )));
    }
    for (p, g) in params.tensors.iter().zip(grads) {
        if p.value.shape() != g.shape() {
            return Err(Error::Shape(format!(
                "gradient {:?} for {} {:?}",
                g.shape(),
                p.name,
                p.value.shape()
            )));
        }
        if g.data().iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteGradient(p.name.clone()));
        }
    }
    let bc1 = 1.0 - ADAM_BETA1.powf(t as f64);
    let bc2 = 1.0 - ADAM_BETA2.powf(t as f64);
    for (i, (p, g)) in params.tensors.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, (w, &gj)) in p.value.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * gj;
            v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * gj * gj;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            *w -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub params: ModelParams,
    pub config: TrainConfig,
    pub loss_curve: Vec<EpochLoss>,
    pub scaler: Scaler,
    pub target_column: String,
    pub feature_names: Vec<String>,
}

pub fn model_shape(ds: &WindowedDataset) -> Result<ModelShape> {
    Ok(ModelShape {
        seq_len: ds.seq_len,
        n_features: ds.n_features(),
        target_index: ds.target_index()?,
    })
}

fn check_compatible(a: &WindowedDataset, b: &WindowedDataset) -> Result<()> {
    if a.feature_names != b.feature_names || a.target_column != b.target_column || a.seq_len != b.seq_len {
        return Err(Error::InvalidArgument(
            "train and test datasets have different layouts".into(),
        ));
    }
    Ok(())
}

/// Eval-mode mean squared error on normalized targets.
pub fn dataset_loss(params: &ModelParams, ds: &WindowedDataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    let mut total = 0.0;
    for s in &ds.samples {
        let e = params.predict(&s.inputs)? - s.target;
        total += e * e;
    }
    Ok(total / ds.len() as f64)
}

/// Trains from a fresh seeded initialization.
pub fn train(
    kind: ModelKind,
    train_set: &WindowedDataset,
    test_set: &WindowedDataset,
    scaler: &Scaler,
    config: &TrainConfig,
) -> Result<TrainedModel> {
    let params = init_params(kind, model_shape(train_set)?, config.seed)?;
    train_from(params, train_set, test_set, scaler, config)
}

/// Trains starting from `params`.
pub fn train_from(
    mut params: ModelParams,
    train_set: &WindowedDataset,
    test_set: &WindowedDataset,
    scaler: &Scaler,
    config: &TrainConfig,
) -> Result<TrainedModel> {
    config.validate()?;
    check_compatible(train_set, test_set)?;
    if train_set.seq_len != config.seq_len {
        return Err(Error::InvalidArgument(format!(
            "dataset seq_len {} but config seq_len {}",
            train_set.seq_len, config.seq_len
        )));
    }
    if !train_set.normalized || !test_set.normalized {
        return Err(Error::InvalidArgument("training expects normalized datasets".into()));
    }
    if train_set.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let model_shape = model_shape(train_set)?;
    if params.shape != model_shape {
        return Err(Error::Shape(format!(
            "model built for {:?}, data is {:?}",
            params.shape, model_shape
        )));
    }

    let shuffled = shuffle_once(train_set, config.seed);
    let mut state = AdamState::new(&params);
    let mut step = 0u64;
    let mut loss_curve = Vec::with_capacity(config.epochs);
    let n = shuffled.len();

    for epoch in 0..config.epochs {
        let mut epoch_sum = 0.0;
        for (batch, chunk) in shuffled.samples.chunks(config.batch_size).enumerate() {
            step += 1;
            let offset = batch * config.batch_size;
            let inv = 1.0 / chunk.len() as f64;
            let mut grads: Vec<Tensor> = params.values().iter().map(|t| Tensor::zeros(t.shape())).collect();
            let mut batch_loss = 0.0;
            for (i, s) in chunk.iter().enumerate() {
                let ctx = ForwardCtx {
                    train: true,
                    dropout: config.dropout,
                    seed: config.seed,
                    step,
                    sample: (offset + i) as u64,
                };
                let mut g = Graph::new();
                let p = params.bind(&mut g);
                let x = g.constant(s.inputs.clone());
                let y = params.forward(&mut g, &p, x, &ctx)?;
                let y = g.sum(y);
                let err = g.affine(y, 1.0, -s.target);
                let sq = g.mul(err, err)?;
                let loss = g.scale(sq, inv);
                batch_loss += g.value(loss).item();
                let gr = g.backward(loss)?;
                for (acc, v) in grads.iter_mut().zip(p.vars()) {
                    for (a, b) in acc.data_mut().iter_mut().zip(gr.get(*v).data()) {
                        *a += b;
                    }
                }
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch });
            }
            adam_step(&mut params, &grads, &mut state, config.learning_rate, step)?;
            epoch_sum += batch_loss * chunk.len() as f64;
        }
        let train_loss = epoch_sum / n as f64;
        let test_loss = if test_set.is_empty() {
            f64::NAN
        } else {
            dataset_loss(&params, test_set)?
        };
        if !test_loss.is_finite() && !test_set.is_empty() {
            return Err(Error::NonFiniteLoss {
                epoch,
                batch: usize::MAX,
            });
        }
        loss_curve.push(EpochLoss {
            epoch: epoch + 1,
            train_loss,
            test_loss,
        });
    }

    Ok(TrainedModel {
        params,
        config: *config,
        loss_curve,
        scaler: scaler.clone(),
        target_column: train_set.target_column.clone(),
        feature_names: train_set.feature_names.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub target_date: NaiveDate,
    pub y_true: f64,
    pub y_pred: f64,
}

/// Eval-mode forecasts for every sample, in price units.
pub fn predict(model: &TrainedModel, dataset: &WindowedDataset) -> Result<Vec<Prediction>> {
    if dataset.feature_names != model.feature_names
        || dataset.target_column != model.target_column
        || dataset.seq_len != model.params.shape.seq_len
        || !dataset.normalized
    {
        return Err(Error::InvalidArgument(
            "dataset was not prepared with this model's scaler and layout".into(),
        ));
    }
    let raw: Vec<f64> = dataset
        .samples
        .iter()
        .map(|s| model.params.predict(&s.inputs))
        .collect::<Result<_>>()?;
    let y_pred = invert_minmax(&model.scaler, &model.target_column, &raw)?;
    let y_true = invert_minmax(&model.scaler, &model.target_column, &dataset.targets())?;
    Ok(dataset
        .samples
        .iter()
        .zip(y_true.into_iter().zip(y_pred))
        .map(|(s, (t, p))| Prediction {
            target_date: s.target_date,
            y_true: t,
            y_pred: p,
        })
        .collect())
}

pub fn write_loss_curve<W: std::io::Write>(curve: &[EpochLoss], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["epoch", "train_loss", "test_loss"])?;
    for e in curve {
        w.write_record([e.epoch.to_string(), e.train_loss.to_string(), e.test_loss.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("loss curve", e))?;
    Ok(())
}

pub fn write_predictions<W: std::io::Write>(predictions: &[Prediction], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["date", "y_true", "y_pred"])?;
    for p in predictions {
        w.write_record([
            p.target_date.format("%Y-%m-%d").to_string(),
            p.y_true.to_string(),
            p.y_pred.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("predictions", e))?;
    Ok(())
}

const TRAINED_FORMAT: &str = "stockcast-trained";

#[derive(Serialize, Deserialize)]
struct TrainedFile {
    format: String,
    version: u32,
    checkpoint: String,
    config: TrainConfig,
    loss_curve: Vec<EpochLoss>,
    scaler: Scaler,
    target_column: String,
    feature_names: Vec<String>,
}

impl TrainedModel {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&TrainedFile {
            format: TRAINED_FORMAT.into(),
            version: 1,
            checkpoint: self.params.to_json()?,
            config: self.config,
            loss_curve: self.loss_curve.clone(),
            scaler: self.scaler.clone(),
            target_column: self.target_column.clone(),
            feature_names: self.feature_names.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: TrainedFile = serde_json::from_str(text)?;
        if f.format != TRAINED_FORMAT || f.version != 1 {
            return Err(Error::Checkpoint(format!(
                "unsupported file {} v{}",
                f.format, f.version
            )));
        }
        Ok(TrainedModel {
            params: ModelParams::from_json(&f.checkpoint)?,
            config: f.config,
            loss_curve: f.loss_curve,
            scaler: f.scaler,
            target_column: f.target_column,
            feature_names: f.feature_names,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
