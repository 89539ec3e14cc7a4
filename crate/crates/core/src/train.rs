//! Mini-batch Adam training with early stopping on validation AUC of the
//! last task.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{batches, FunnelDataset};
use crate::error::{Error, Result};
use crate::loss::{joint_loss, LossBreakdown};
use crate::metrics::MetricReport;
use crate::model::{Model, ModelVariant};
use crate::nn::Mode;
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::tape::Tape;

/// Independent random streams derived from one run seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Init = 0,
    Shuffle = 1,
    Dropout = 2,
    Downsample = 3,
}

pub fn rng_for(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub l2: f64,
    pub alpha: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adam: AdamConfig::default(),
            batch_size: 2000,
            l2: 1e-6,
            alpha: 0.6,
            max_epochs: 100,
            patience: 3,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.adam.lr > 0.0 && self.adam.lr.is_finite()) {
            out.push(format!("lr {} must be finite and > 0", self.adam.lr));
        }
        if self.batch_size == 0 {
            out.push("batch_size must be >= 1".into());
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            out.push(format!("l2 {} must be finite and >= 0", self.l2));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            out.push(format!("alpha {} must be finite and >= 0", self.alpha));
        }
        if self.max_epochs == 0 {
            out.push("max_epochs must be >= 1".into());
        }
        if self.patience == 0 {
            out.push("patience must be >= 1".into());
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Sample-weighted mean of the per-batch objectives.
    pub train: LossBreakdown,
    pub validation: MetricReport,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation score.
    pub model: Model,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_validation: MetricReport,
    pub log: Vec<EpochLog>,
}

/// Predictions and metrics for a whole dataset in inference mode.
pub fn evaluate(model: &Model, data: &FunnelDataset) -> Result<MetricReport> {
    if data.tasks != model.tasks() || data.fields != model.config().fields {
        return Err(Error::Schema(format!(
            "data has {} tasks and {} fields, model expects {} and {}",
            data.tasks,
            data.fields,
            model.tasks(),
            model.config().fields
        )));
    }
    let preds = model.predict(&data.ids)?;
    MetricReport::compute(&preds.values, &data.labels)
}

/// Calibrator strength actually applied for a variant: independent
/// single-task networks are trained on cross-entropy alone.
pub fn effective_alpha(variant: ModelVariant, alpha: f64) -> f64 {
    match variant {
        ModelVariant::SingleTask => 0.0,
        _ => alpha,
    }
}

/// One pass over `data` in shuffled mini-batches.
pub fn train_epoch(
    model: &mut Model,
    data: &FunnelDataset,
    config: &TrainConfig,
    state: &mut AdamState,
    shuffle_rng: &mut ChaCha8Rng,
    dropout_rng: &mut ChaCha8Rng,
    epoch: usize,
) -> Result<LossBreakdown> {
    let alpha = effective_alpha(model.variant(), config.alpha);
    let plan = batches(data.rows(), config.batch_size, true, shuffle_rng)?;
    let (mut ce, mut lc) = (0.0, 0.0);
    for (b, rows) in plan.iter().enumerate() {
        let (ids, labels) = data.gather(rows);
        let mut tape = Tape::new();
        let trace = model.forward(&mut tape, &ids, Mode::Training, dropout_rng)?;
        let (loss, breakdown) = match joint_loss(&mut tape, &trace.predictions, &labels, alpha) {
            Err(Error::Domain(_)) => return Err(Error::NonFiniteLoss { epoch, batch: b }),
            other => other?,
        };
        if !breakdown.total.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch: b });
        }
        let grads = tape.backward(loss, model.params())?;
        adam_step(model.params_mut(), &grads, state, config.l2)?;
        ce += breakdown.ce * rows.len() as f64;
        lc += breakdown.lc * rows.len() as f64;
    }
    let n = data.rows() as f64;
    let (ce, lc) = (ce / n, lc / n);
    Ok(LossBreakdown {
        ce,
        lc,
        alpha,
        total: ce + alpha * lc,
    })
}

pub fn train(
    mut model: Model,
    train_data: &FunnelDataset,
    val_data: &FunnelDataset,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    let problems = config.problems();
    if !problems.is_empty() {
        return Err(Error::Config(problems.join("; ")));
    }
    if train_data.tasks != model.tasks() || train_data.fields != model.config().fields {
        return Err(Error::Schema(format!(
            "training data has {} tasks and {} fields, model expects {} and {}",
            train_data.tasks,
            train_data.fields,
            model.tasks(),
            model.config().fields
        )));
    }
    let mut state = AdamState::new(model.params(), config.adam);
    let mut shuffle_rng = rng_for(config.seed, Stream::Shuffle);
    let mut dropout_rng = rng_for(config.seed, Stream::Dropout);

    let mut log: Vec<EpochLog> = Vec::new();
    let mut best: Option<(f64, usize, Model)> = None;
    let mut stale = 0;
    for epoch in 1..=config.max_epochs {
        let train = train_epoch(
            &mut model,
            train_data,
            config,
            &mut state,
            &mut shuffle_rng,
            &mut dropout_rng,
            epoch,
        )?;
        let validation = evaluate(&model, val_data)?;
        let score = validation.final_auc().unwrap_or(f64::NEG_INFINITY);
        let entry = EpochLog {
            epoch,
            train,
            validation,
        };
        on_epoch(&entry);
        log.push(entry);
        match &best {
            Some((s, _, _)) if score <= *s => {
                stale += 1;
                if stale >= config.patience {
                    break;
                }
            }
            _ => {
                best = Some((score, epoch, model.clone()));
                stale = 0;
            }
        }
    }
    let (_, best_epoch, best_model) = best.expect("at least one epoch runs");
    Ok(TrainOutcome {
        model: best_model,
        epochs_run: log.len(),
        best_epoch,
        best_validation: log[best_epoch - 1].validation.clone(),
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_vocab, chronological_split, encode_rows, generate_funnel, FunnelGenConfig};
    use crate::model::ArchitectureConfig;

    fn split(tasks: usize) -> (FunnelDataset, FunnelDataset, usize) {
        let gen = FunnelGenConfig {
            tasks,
            samples: 1200,
            cardinalities: vec![5, 7, 4],
            base_rates: vec![0.5; tasks],
            seed: 11,
            ..FunnelGenConfig::default()
        };
        let f = generate_funnel(&gen).unwrap();
        let (tr, va, _) = chronological_split(f.rows, (0.6, 0.2, 0.2)).unwrap();
        let vocab = build_vocab(&tr, &f.field_names, 1).unwrap();
        (
            encode_rows(&tr, &vocab).unwrap(),
            encode_rows(&va, &vocab).unwrap(),
            vocab.size(),
        )
    }

    fn model(variant: ModelVariant, tasks: usize, vocab: usize, seed: u64) -> Model {
        let arch = ArchitectureConfig {
            embedding_dim: 3,
            tower_dims: vec![8, 4],
            dropout: vec![0.1, 0.1],
            ait_dim: 4,
            ..ArchitectureConfig::new(tasks, 3)
        };
        Model::new(variant, arch, vocab, &mut rng_for(seed, Stream::Init)).unwrap()
    }

    fn config(alpha: f64, max_epochs: usize) -> TrainConfig {
        TrainConfig {
            adam: AdamConfig {
                lr: 0.01,
                ..AdamConfig::default()
            },
            batch_size: 64,
            alpha,
            max_epochs,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn streams_are_independent_and_reproducible() {
        use rand::Rng;
        let a: u64 = rng_for(3, Stream::Init).gen();
        let b: u64 = rng_for(3, Stream::Shuffle).gen();
        assert_ne!(a, b);
        assert_eq!(a, rng_for(3, Stream::Init).gen::<u64>());
    }

    #[test]
    fn same_seed_same_model() {
        let (tr, va, v) = split(3);
        let a = train(model(ModelVariant::Aitm, 3, v, 1), &tr, &va, &config(0.6, 3), |_| {}).unwrap();
        let b = train(model(ModelVariant::Aitm, 3, v, 1), &tr, &va, &config(0.6, 3), |_| {}).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.log.len(), b.log.len());
    }

    #[test]
    fn loss_falls_and_best_model_is_kept() {
        let (tr, va, v) = split(3);
        let mut seen = 0;
        let out = train(model(ModelVariant::Aitm, 3, v, 2), &tr, &va, &config(0.6, 8), |e| {
            seen += 1;
            assert_eq!(e.epoch, seen);
        })
        .unwrap();
        assert_eq!(seen, out.epochs_run);
        assert!(out.log.last().unwrap().train.ce < out.log[0].train.ce);
        assert_eq!(evaluate(&out.model, &va).unwrap(), out.best_validation);
        for e in &out.log {
            let t = e.train;
            assert!((t.total - (t.ce + t.alpha * t.lc)).abs() < 1e-12);
        }
    }

    #[test]
    fn patience_stops_early() {
        let (tr, va, v) = split(2);
        let cfg = TrainConfig {
            adam: AdamConfig {
                lr: 0.5,
                ..AdamConfig::default()
            },
            patience: 1,
            ..config(0.6, 50)
        };
        let out = train(model(ModelVariant::Aitm, 2, v, 3), &tr, &va, &cfg, |_| {}).unwrap();
        assert!(out.epochs_run < 50);
        assert_eq!(out.epochs_run, out.best_epoch + 1);
    }

    #[test]
    fn calibrator_has_no_effect_on_chained_probabilities() {
        let (tr, va, v) = split(3);
        let a = train(model(ModelVariant::ProbTransfer, 3, v, 4), &tr, &va, &config(0.6, 3), |_| {}).unwrap();
        let b = train(model(ModelVariant::ProbTransfer, 3, v, 4), &tr, &va, &config(0.0, 3), |_| {}).unwrap();
        assert!(a.log.iter().all(|e| e.train.lc == 0.0));
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn single_task_ignores_alpha() {
        let (tr, va, v) = split(3);
        assert_eq!(effective_alpha(ModelVariant::SingleTask, 0.6), 0.0);
        let out = train(model(ModelVariant::SingleTask, 3, v, 5), &tr, &va, &config(0.6, 2), |_| {}).unwrap();
        assert!(out.log.iter().all(|e| e.train.alpha == 0.0));
    }

    #[test]
    fn mismatched_inputs_are_rejected() {
        let (tr, va, v) = split(3);
        let err = train(model(ModelVariant::Aitm, 2, v, 1), &tr, &va, &config(0.6, 1), |_| {}).unwrap_err();
        assert!(matches!(err, Error::Schema(_)), "{err}");
        let bad = TrainConfig {
            batch_size: 0,
            alpha: -1.0,
            ..config(0.6, 1)
        };
        match train(model(ModelVariant::Aitm, 3, v, 1), &tr, &va, &bad, |_| {}).unwrap_err() {
            Error::Config(m) => assert!(m.contains("batch") && m.contains("alpha"), "{m}"),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn diverging_loss_is_reported() {
        let (tr, va, v) = split(2);
        let mut m = model(ModelVariant::Aitm, 2, v, 1);
        for id in m.params().ids().collect::<Vec<_>>() {
            if m.params().name(id).starts_with("task1.head") {
                for w in m.params_mut().get_mut(id).data_mut() {
                    *w = 1e6;
                }
            }
        }
        let err = train(m, &tr, &va, &config(0.6, 1), |_| {}).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { epoch: 1, batch: 0 }), "{err}");
    }
}
