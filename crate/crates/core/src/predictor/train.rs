use log::debug;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{MixerConfig, MixerModel, Optimizer};
use crate::data::Window;
use crate::error::{GcadError, Result};
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean per-window MSE over the epoch's mini-batches.
    pub train_mse: f64,
    pub val_mse: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: MixerModel,
    pub log: Vec<EpochLog>,
    /// Epoch whose weights were kept (best validation MSE, or the last).
    pub best_epoch: usize,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

enum State {
    Sgd,
    Adam {
        m: Vec<Tensor>,
        v: Vec<Tensor>,
        step: i32,
    },
}

impl State {
    fn new(kind: Optimizer, model: &MixerModel) -> Self {
        match kind {
            Optimizer::Sgd => State::Sgd,
            Optimizer::Adam => {
                let zeros: Vec<Tensor> = model
                    .params()
                    .iter()
                    .map(|p| Tensor::zeros(p.shape()))
                    .collect();
                State::Adam {
                    m: zeros.clone(),
                    v: zeros,
                    step: 0,
                }
            }
        }
    }

    fn apply(&mut self, model: &mut MixerModel, grads: &[Tensor], lr: f64) {
        match self {
            State::Sgd => {
                for (p, g) in model.params_mut().into_iter().zip(grads) {
                    for (w, d) in p.data_mut().iter_mut().zip(g.data()) {
                        *w -= lr * d;
                    }
                }
            }
            State::Adam { m, v, step } => {
                *step += 1;
                let c1 = 1.0 - ADAM_BETA1.powi(*step);
                let c2 = 1.0 - ADAM_BETA2.powi(*step);
                for (k, p) in model.params_mut().into_iter().enumerate() {
                    let (mk, vk) = (m[k].data_mut(), v[k].data_mut());
                    for (idx, w) in p.data_mut().iter_mut().enumerate() {
                        let d = grads[k].data()[idx];
                        mk[idx] = ADAM_BETA1 * mk[idx] + (1.0 - ADAM_BETA1) * d;
                        vk[idx] = ADAM_BETA2 * vk[idx] + (1.0 - ADAM_BETA2) * d * d;
                        *w -= lr * (mk[idx] / c1) / ((vk[idx] / c2).sqrt() + ADAM_EPS);
                    }
                }
            }
        }
    }
}

fn check_pairs(windows: &[Window], n: usize, tau: usize, what: &str) -> Result<()> {
    for (index, w) in windows.iter().enumerate() {
        let shaped = w.x.shape() == [n, tau] && w.y.shape() == [n];
        if !shaped {
            return Err(GcadError::Window {
                index,
                source: Box::new(GcadError::Shape(format!(
                    "{} pair shaped {:?}/{:?}, expected [{}, {}]/[{}]",
                    what,
                    w.x.shape(),
                    w.y.shape(),
                    n,
                    tau,
                    n
                ))),
            });
        }
    }
    Ok(())
}

/// Mean over windows of the per-window MSE (averaged over channels).
pub fn mean_mse(model: &MixerModel, windows: &[Window]) -> Result<f64> {
    if windows.is_empty() {
        return Err(GcadError::Data("no windows to evaluate".into()));
    }
    let mut total = 0.0;
    for w in windows {
        let yhat = model.forward(&w.x)?;
        total += super::channel_loss(&yhat, &w.y)?.sum() / w.y.len() as f64;
    }
    Ok(total / windows.len() as f64)
}

/// Fits the predictor with mini-batch gradient steps on the window MSE.
///
/// Batches are drawn from a per-epoch shuffle seeded by `config.seed`.
/// With a non-empty `validation` set and `config.patience` given, training
/// stops after that many epochs without improvement and the best-validation
/// weights are kept.
pub fn train(
    windows: &[Window],
    validation: &[Window],
    config: &MixerConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if windows.is_empty() {
        return Err(GcadError::Data("training set is empty".into()));
    }
    let (n, tau) = (config.n_channels, config.max_lag);
    check_pairs(windows, n, tau, "training")?;
    check_pairs(validation, n, tau, "validation")?;

    let mut model = MixerModel::new(config.clone())?;
    let mut state = State::new(config.optimizer, &model);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_5eed);
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);

    let early_stop = config.patience.filter(|_| !validation.is_empty());
    let mut best: Option<(f64, usize, MixerModel)> = None;
    let mut since_best = 0;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut acc: Vec<Tensor> = model
                .params()
                .iter()
                .map(|p| Tensor::zeros(p.shape()))
                .collect();
            let mut batch_loss = 0.0;
            for &idx in batch {
                let w = &windows[idx];
                let mut tape = Tape::new();
                let rec = model.record(&mut tape, &w.x)?;
                let y = tape.leaf(w.y.clone());
                let r = tape.sub(rec.output, y)?;
                let sq = tape.square(r);
                let loss = tape.mean(sq);
                batch_loss += tape.value(loss).data()[0];
                let grads = tape.backward(loss)?;
                for (a, &p) in acc.iter_mut().zip(&rec.params) {
                    a.add_assign(grads.get(p));
                }
            }
            if !batch_loss.is_finite() {
                return Err(GcadError::Training {
                    epoch,
                    message: "loss is not finite".into(),
                });
            }
            epoch_loss += batch_loss;
            let inv = 1.0 / batch.len() as f64;
            for a in acc.iter_mut() {
                for v in a.data_mut() {
                    *v *= inv;
                }
            }
            state.apply(&mut model, &acc, config.learning_rate);
        }
        let train_mse = epoch_loss / windows.len() as f64;
        let val_mse = if validation.is_empty() {
            None
        } else {
            let v = mean_mse(&model, validation).map_err(|e| GcadError::Training {
                epoch,
                message: e.to_string(),
            })?;
            if !v.is_finite() {
                return Err(GcadError::Training {
                    epoch,
                    message: "validation loss is not finite".into(),
                });
            }
            Some(v)
        };
        debug!("epoch {} train_mse {:.6e} val_mse {:?}", epoch, train_mse, val_mse);
        log.push(EpochLog {
            epoch,
            train_mse,
            val_mse,
        });

        if let (Some(patience), Some(v)) = (early_stop, val_mse) {
            if best.as_ref().is_none_or(|(b, _, _)| v < *b) {
                best = Some((v, epoch, model.clone()));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= patience {
                    break;
                }
            }
        }
    }

    let last = log.last().map_or(0, |l| l.epoch);
    let (model, best_epoch) = match best {
        Some((_, epoch, m)) => (m, epoch),
        None => (model, last),
    };
    Ok(TrainOutcome {
        model,
        log,
        best_epoch,
    })
}
