//! Joint objective, optimisation loop, ablations and checkpoints.

mod checkpoint;
mod config;
mod loss;
mod model;
mod optim;

use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{load_checkpoint, params_from_bytes, params_to_bytes, save_checkpoint};
pub use config::{ablate, Architecture, TrainConfig};
pub use loss::{joint_loss, to_examples, Example, LossBreakdown};
pub use model::{Forward, Inspection, LabelSpaces, Model, Prediction};
pub use optim::Adam;

use crate::data_io::{build_vocab, Sample};
use crate::error::{Error, Result};
use crate::evaluation::evaluate;
use crate::label_space::Verbalizer;
use crate::numerics::{ParamStore, Session};

/// Validation metrics for one epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ValidationScores {
    pub slot_f1: f64,
    pub intent_acc: f64,
    pub overall_acc: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean over the epoch's batches.
    pub loss: LossBreakdown,
    pub validation: Option<ValidationScores>,
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let l = &self.loss;
        write!(
            f,
            "epoch={} loss={:.6} l_id={:.6} l_sf={:.6} l_ind={:.6} l_re_i={:.6} l_re_s={:.6}",
            self.epoch, l.total, l.intent, l.slot, l.count, l.reg_intent, l.reg_slot
        )?;
        if let Some(v) = &self.validation {
            write!(
                f,
                " val_slot_f1={:.4} val_intent_acc={:.4} val_overall_acc={:.4}",
                v.slot_f1, v.intent_acc, v.overall_acc
            )?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    /// Parameters from the epoch with the best validation overall accuracy
    /// (the last epoch without validation data).
    pub best: ParamStore,
    pub best_epoch: usize,
    pub last: ParamStore,
    pub log: Vec<EpochLog>,
}

/// Knobs that do not change the trained parameters.
#[derive(Default)]
pub struct TrainHooks<'a> {
    /// Where the last finite state is written if training diverges.
    pub checkpoint_dir: Option<&'a Path>,
    pub on_epoch: Option<&'a mut dyn FnMut(&EpochLog)>,
}

pub fn train(
    train_set: &[Sample],
    valid_set: &[Sample],
    config: &TrainConfig,
    verbalizer: &Verbalizer,
) -> Result<TrainOutcome> {
    train_with_hooks(train_set, valid_set, config, verbalizer, TrainHooks::default())
}

pub fn train_with_hooks(
    train_set: &[Sample],
    valid_set: &[Sample],
    config: &TrainConfig,
    verbalizer: &Verbalizer,
    mut hooks: TrainHooks<'_>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let vocabs = build_vocab(train_set, verbalizer)?;
    let examples = to_examples(train_set, &vocabs, config.max_count)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut store = ParamStore::new();
    let model = Model::new(config, vocabs, &mut store, &mut rng)?;
    let mut adam = Adam::new(config.lr);

    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut sum = LossBreakdown::default();
        let batches: Vec<&[usize]> = order.chunks(config.batch_size).collect();
        for (step, idx) in batches.iter().enumerate() {
            let batch: Vec<Example> = idx.iter().map(|&i| examples[i].clone()).collect();
            let step_result = (|| -> std::result::Result<_, StepError> {
                let mut s = Session::new(&store);
                let spaces = model.label_spaces(&mut s)?;
                let (loss, parts) = joint_loss(&mut s, &model, &spaces, &batch, config)?;
                if !parts.is_finite() {
                    return Err(StepError::Diverged(format!("non-finite loss {}", parts.total)));
                }
                s.backward(loss)?;
                let grads = s.gradients();
                if !grads.is_finite() {
                    return Err(StepError::Diverged("non-finite gradient".into()));
                }
                Ok((parts, grads))
            })();
            let (parts, grads) = match step_result {
                Ok(v) => v,
                Err(StepError::Fatal(e)) => return Err(e),
                Err(StepError::Diverged(message)) => {
                    return Err(diverged(&model, &store, &hooks, epoch, step + 1, message))
                }
            };
            let snapshot = store.clone();
            adam.step(&mut store, &grads)?;
            if !store.all_finite() {
                return Err(diverged(
                    &model,
                    &snapshot,
                    &hooks,
                    epoch,
                    step + 1,
                    "non-finite parameter after update".into(),
                ));
            }
            sum.accumulate(&parts, 1.0 / batches.len() as f64);
        }

        let validation = if valid_set.is_empty() {
            None
        } else {
            let pred = model.predict_samples(&store, valid_set)?;
            let r = evaluate(valid_set, &pred)?;
            Some(ValidationScores {
                slot_f1: r.slot_f1,
                intent_acc: r.intent_acc,
                overall_acc: r.overall_acc,
            })
        };
        let score = validation.map_or(f64::INFINITY, |v| v.overall_acc);
        if best.as_ref().map_or(true, |(b, _, _)| score > *b || score.is_infinite()) {
            best = Some((score, epoch, store.clone()));
        }
        let entry = EpochLog {
            epoch,
            loss: sum,
            validation,
        };
        log::info!("{entry}");
        if let Some(cb) = hooks.on_epoch.as_mut() {
            cb(&entry);
        }
        log.push(entry);
    }
    let (_, best_epoch, best) = best.expect("epochs >= 1");
    Ok(TrainOutcome {
        model,
        best,
        best_epoch,
        last: store,
        log,
    })
}

enum StepError {
    Fatal(Error),
    Diverged(String),
}

impl From<Error> for StepError {
    fn from(e: Error) -> Self {
        match e {
            // Overflowing activations surface as numeric failures.
            Error::Singular { .. } | Error::DegenerateVector { .. } => StepError::Diverged(e.to_string()),
            e => StepError::Fatal(e),
        }
    }
}

fn diverged(
    model: &Model,
    last_finite: &ParamStore,
    hooks: &TrainHooks<'_>,
    epoch: usize,
    step: usize,
    message: String,
) -> Error {
    let mut message = message;
    if let Some(dir) = hooks.checkpoint_dir {
        let path = dir.join("last_finite");
        match save_checkpoint(&path, model, last_finite) {
            Ok(()) => message.push_str(&format!("; last finite state saved to {}", path.display())),
            Err(e) => message.push_str(&format!("; saving last finite state failed: {e}")),
        }
    }
    log::error!("training diverged at epoch {epoch}, step {step}");
    Error::Diverged {
        epoch,
        step,
        message,
    }
}
