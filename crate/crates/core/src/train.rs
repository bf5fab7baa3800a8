//! Mini-batch SGD over bags with validation-loss early stopping.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bags::BagSample;
use crate::error::{contract_err, Result, UccError};
use crate::model::{ModelGrads, UccModel};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig<T> {
    pub learning_rate: T,
    /// Bags per SGD step; gradients are averaged over the batch.
    pub batch_size: usize,
    pub max_iterations: usize,
    /// Iterations without a validation-loss improvement before stopping.
    pub patience: usize,
    pub validation_period: usize,
    pub seed: u64,
}

impl<T: Scalar> Default for TrainConfig<T> {
    fn default() -> Self {
        Self {
            learning_rate: T::lit(0.5),
            batch_size: 8,
            max_iterations: 4000,
            patience: 1000,
            validation_period: 100,
            seed: 0,
        }
    }
}

impl<T: Scalar> TrainConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > T::zero()) || !self.learning_rate.is_finite() {
            return contract_err(format!("learning rate {} must be positive", self.learning_rate));
        }
        if self.batch_size == 0 || self.validation_period == 0 {
            return contract_err("batch size and validation period must be positive");
        }
        if self.patience < self.validation_period {
            return contract_err(format!(
                "patience {} is shorter than the validation period {}",
                self.patience, self.validation_period
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalRecord {
    pub iteration: usize,
    /// Mean mini-batch loss since the previous evaluation (full training set at iteration 0).
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct TrainReport {
    pub history: Vec<EvalRecord>,
    pub stopped_at: usize,
    pub best_iteration: usize,
}

impl TrainReport {
    pub fn best(&self) -> Option<&EvalRecord> {
        self.history.iter().find(|r| r.iteration == self.best_iteration)
    }

    /// Tab-separated history with a header row.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("iteration\ttrain_loss\tval_loss\tval_accuracy\n");
        for r in &self.history {
            s.push_str(&format!("{}\t{}\t{}\t{}\n", r.iteration, r.train_loss, r.val_loss, r.val_accuracy));
        }
        s.push_str(&format!("# stopped_at={} best_iteration={}\n", self.stopped_at, self.best_iteration));
        s
    }
}

/// Mean loss and arg-max accuracy of `model` over `bags`.
pub fn evaluate<T: Scalar>(model: &UccModel<T>, bags: &[BagSample<T>]) -> Result<(f64, f64)> {
    if bags.is_empty() {
        return contract_err("cannot evaluate on an empty bag set");
    }
    let mut loss = 0.0;
    let mut correct = 0usize;
    for b in bags {
        let onehot = model.onehot(b.ucc)?;
        loss += model.bag_loss(&b.instances, &onehot, model.alpha())?.total.as_f64();
        if model.predict_label(&b.instances)? == b.ucc {
            correct += 1;
        }
    }
    Ok((loss / bags.len() as f64, correct as f64 / bags.len() as f64))
}

fn diverged(iteration: usize, loss: f64) -> UccError {
    UccError::Diverged { iteration, loss }
}

/// Trains on a fixed bag set. See [`train_with_refresh`].
pub fn train<T: Scalar>(
    model: &UccModel<T>,
    train_bags: &[BagSample<T>],
    val_bags: &[BagSample<T>],
    cfg: &TrainConfig<T>,
) -> Result<(UccModel<T>, TrainReport)> {
    train_with_refresh(model, train_bags, val_bags, cfg, None)
}

/// Plain SGD with a fixed learning rate. Returns the parameters with the
/// lowest validation loss seen at any evaluation (iteration 0 included).
///
/// When `refresh` is given it is called at every epoch boundary after the
/// first to draw a new training bag set.
pub fn train_with_refresh<T: Scalar>(
    model: &UccModel<T>,
    train_bags: &[BagSample<T>],
    val_bags: &[BagSample<T>],
    cfg: &TrainConfig<T>,
    mut refresh: Option<&mut dyn FnMut() -> Result<Vec<BagSample<T>>>>,
) -> Result<(UccModel<T>, TrainReport)> {
    cfg.validate()?;
    if train_bags.is_empty() || val_bags.is_empty() {
        return contract_err("training and validation bag sets must be non-empty");
    }
    let (lo, hi) = model.ucc_range();
    if let Some(b) = train_bags.iter().chain(val_bags).find(|b| b.ucc < lo || b.ucc > hi) {
        return contract_err(format!("bag label {} outside the model range {lo}..={hi}", b.ucc));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut current = model.clone();
    let mut report = TrainReport::default();

    let (initial_train, _) = evaluate(&current, train_bags)?;
    let (val_loss, val_acc) = evaluate(&current, val_bags)?;
    if !val_loss.is_finite() || !initial_train.is_finite() {
        return Err(diverged(0, val_loss));
    }
    report.history.push(EvalRecord { iteration: 0, train_loss: initial_train, val_loss, val_accuracy: val_acc });
    let mut best = (val_loss, current.clone());

    let mut refreshed: Option<Vec<BagSample<T>>> = None;
    let mut order: Vec<usize> = (0..train_bags.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    let mut running = (0.0, 0usize);
    let scale = T::one() / T::from_count(cfg.batch_size);
    let mut iteration = 0;

    while iteration < cfg.max_iterations {
        let mut grads = ModelGrads::zeros_like(&current);
        let mut batch_loss = 0.0;
        for _ in 0..cfg.batch_size {
            if cursor == order.len() {
                if let Some(r) = refresh.as_mut() {
                    let fresh = r()?;
                    if fresh.is_empty() {
                        return contract_err("bag refresh produced no bags");
                    }
                    order = (0..fresh.len()).collect();
                    refreshed = Some(fresh);
                }
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let bag = &refreshed.as_deref().unwrap_or(train_bags)[order[cursor]];
            cursor += 1;
            let onehot = current.onehot(bag.ucc)?;
            let (loss, g) = current
                .bag_loss_and_grads(&bag.instances, &onehot, current.alpha())
                .map_err(|e| match e {
                    UccError::Numeric(_) => diverged(iteration + 1, f64::NAN),
                    other => other,
                })?;
            let l = loss.total.as_f64();
            if !l.is_finite() {
                return Err(diverged(iteration + 1, l));
            }
            batch_loss += l;
            grads.add_scaled(&g, scale);
        }
        current.sgd_step(&grads, cfg.learning_rate);
        iteration += 1;
        running.0 += batch_loss / cfg.batch_size as f64;
        running.1 += 1;

        if iteration % cfg.validation_period == 0 || iteration == cfg.max_iterations {
            let (val_loss, val_acc) = evaluate(&current, val_bags).map_err(|e| match e {
                UccError::Numeric(_) => diverged(iteration, f64::NAN),
                other => other,
            })?;
            if !val_loss.is_finite() {
                return Err(diverged(iteration, val_loss));
            }
            report.history.push(EvalRecord {
                iteration,
                train_loss: running.0 / running.1 as f64,
                val_loss,
                val_accuracy: val_acc,
            });
            running = (0.0, 0);
            if val_loss < best.0 {
                best = (val_loss, current.clone());
                report.best_iteration = iteration;
            } else if iteration - report.best_iteration >= cfg.patience {
                break;
            }
        }
    }
    report.stopped_at = iteration;
    Ok((best.1, report))
}
