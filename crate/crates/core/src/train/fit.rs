//! Epoch loop, evaluation and history output.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Waveform;
use crate::error::{Error, Result};
use crate::models::{forward_sequence, ModelConfig, Sequence};
use crate::params::ParamStore;

use super::adam::{AdamConfig, AdamState};
use super::grad::{gradient, GradMethod, GradOptions};
use super::loss::{loss_mse, mean_nrmse};

/// Which gradient pass training uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradChoice {
    /// Hybrid adjoint for recurrent kinds, discrete backprop otherwise.
    #[default]
    Auto,
    HybridAdjoint,
    Discrete,
}

impl GradChoice {
    pub fn resolve(self, config: &ModelConfig) -> GradMethod {
        match self {
            GradChoice::Auto if config.kind.has_rnn() => GradMethod::HybridAdjoint,
            GradChoice::Auto => GradMethod::Discrete,
            GradChoice::HybridAdjoint => GradMethod::HybridAdjoint,
            GradChoice::Discrete => GradMethod::Discrete,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    #[serde(flatten)]
    pub adam: AdamConfig,
    pub epochs: usize,
    /// Waveforms whose gradients are averaged into one optimizer step.
    pub batch_size: usize,
    pub seed: u64,
    pub shuffle: bool,
    pub gradient: GradChoice,
    pub cache_trajectories: bool,
    /// Evaluate the test split every this many epochs (and at the last one).
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            epochs: 50,
            batch_size: 1,
            seed: 0,
            shuffle: true,
            gradient: GradChoice::Auto,
            cache_trajectories: false,
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        if self.epochs == 0 {
            return Err(Error::InvalidInput("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::InvalidInput("batch_size and eval_every must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    /// `None` on epochs skipped by `eval_every`.
    pub test_nrmse: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ParamStore,
    /// Parameters at the lowest test NRMSE seen.
    pub best_params: ParamStore,
    pub best_epoch: usize,
    pub best_test_nrmse: f64,
    pub history: Vec<EpochRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub nrmse: f64,
    pub mse: f64,
    pub per_waveform: Vec<f64>,
}

fn sequences(set: &[Waveform]) -> Result<Vec<Sequence>> {
    set.par_iter().map(Sequence::from_waveform).collect()
}

fn evaluate_sequences(config: &ModelConfig, params: &ParamStore, seqs: &[Sequence]) -> Result<Evaluation> {
    let results = seqs
        .par_iter()
        .map(|s| {
            let out = forward_sequence(config, params, s)?;
            let o: Vec<f64> = out.outputs.iter().flatten().copied().collect();
            let y: Vec<f64> = s.targets[1..].iter().flatten().copied().collect();
            let mse = loss_mse(&out.outputs, &s.targets[1..])?.0;
            Ok((o, y, mse))
        })
        .collect::<Result<Vec<_>>>()?;
    let per_waveform = results
        .iter()
        .map(|(o, y, _)| mean_nrmse([(o.as_slice(), y.as_slice())]))
        .collect::<Result<Vec<_>>>()?;
    let nrmse = mean_nrmse(results.iter().map(|(o, y, _)| (o.as_slice(), y.as_slice())))?;
    let mse = results.iter().map(|r| r.2).sum::<f64>() / results.len() as f64;
    Ok(Evaluation { nrmse, mse, per_waveform })
}

/// Mean NRMSE (outputs `o_1..o_N` against samples `1..N`) over a set.
pub fn evaluate(config: &ModelConfig, params: &ParamStore, set: &[Waveform]) -> Result<Evaluation> {
    if set.is_empty() {
        return Err(Error::InvalidInput("evaluation set is empty".into()));
    }
    evaluate_sequences(config, params, &sequences(set)?)
}

/// Adam over per-waveform (or batched) full-sequence gradients.
pub fn train(
    cfg: &TrainConfig,
    model: &ModelConfig,
    init: ParamStore,
    train_set: &[Waveform],
    test_set: &[Waveform],
) -> Result<TrainOutcome> {
    train_with_progress(cfg, model, init, train_set, test_set, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with_progress(
    cfg: &TrainConfig,
    model: &ModelConfig,
    init: ParamStore,
    train_set: &[Waveform],
    test_set: &[Waveform],
    mut progress: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    model.check_params(&init)?;
    if train_set.is_empty() || test_set.is_empty() {
        return Err(Error::InvalidInput("train and test splits must be non-empty".into()));
    }
    let train_seqs = sequences(train_set)?;
    let test_seqs = sequences(test_set)?;
    let options = GradOptions {
        method: cfg.gradient.resolve(model),
        cache: cfg.cache_trajectories,
    };

    let mut params = init;
    let mut adam = AdamState::new(params.total_len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_seqs.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best = (f64::INFINITY, 0usize, params.clone());

    for epoch in 1..=cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut losses = vec![0.0; train_seqs.len()];
        for batch in order.chunks(cfg.batch_size) {
            let reports: Vec<_> = batch
                .par_iter()
                .map(|&w| (w, gradient(model, &params, &train_seqs[w], options)))
                .collect();
            let mut total = vec![0.0; params.total_len()];
            for (w, report) in reports {
                let report = report.map_err(|e| diverged(e, epoch, &train_set[w].id))?;
                losses[w] = report.loss;
                for (t, g) in total.iter_mut().zip(report.grads.flatten()) {
                    *t += g;
                }
            }
            let inv = 1.0 / batch.len() as f64;
            total.iter_mut().for_each(|g| *g *= inv);
            let mut flat = params.flatten();
            adam.update(&mut flat, &total, &cfg.adam)
                .map_err(|e| diverged(e, epoch, &train_set[batch[0]].id))?;
            params.assign_flat(&flat)?;
        }

        let test_nrmse = if epoch % cfg.eval_every == 0 || epoch == cfg.epochs {
            let eval = evaluate_sequences(model, &params, &test_seqs)
                .map_err(|e| diverged(e, epoch, "test split"))?;
            if eval.nrmse < best.0 {
                best = (eval.nrmse, epoch, params.clone());
            }
            Some(eval.nrmse)
        } else {
            None
        };
        let record = EpochRecord {
            epoch,
            train_mse: losses.iter().sum::<f64>() / losses.len() as f64,
            test_nrmse,
        };
        progress(&record);
        history.push(record);
    }

    Ok(TrainOutcome {
        params,
        best_params: best.2,
        best_epoch: best.1,
        best_test_nrmse: best.0,
        history,
    })
}

fn diverged(e: Error, epoch: usize, waveform: &str) -> Error {
    if e.is_divergence() {
        Error::TrainingDiverged {
            epoch,
            waveform: waveform.to_string(),
            source: Box::new(e),
        }
    } else {
        e
    }
}

/// `epoch,train_mse,test_nrmse,best_test_nrmse` rows. Skipped evaluations
/// leave `test_nrmse` empty; the best column is the running minimum.
pub fn write_history_csv(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut out = String::from("epoch,train_mse,test_nrmse,best_test_nrmse\n");
    let mut best = f64::INFINITY;
    for r in history {
        if let Some(v) = r.test_nrmse {
            best = best.min(v);
        }
        let test = r.test_nrmse.map(|v| format!("{v:.16e}")).unwrap_or_default();
        let best_text = if best.is_finite() { format!("{best:.16e}") } else { String::new() };
        out.push_str(&format!("{},{:.16e},{},{}\n", r.epoch, r.train_mse, test, best_text));
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Corpus, CorpusConfig};
    use crate::models::{init_params, ModelKind};

    fn tiny() -> (ModelConfig, Vec<Waveform>, Vec<Waveform>) {
        let corpus = Corpus::generate(&CorpusConfig { count: 6, samples: 12, ..CorpusConfig::default() }).unwrap();
        let mut m = ModelConfig::new(ModelKind::NodeRnn);
        m.hidden = 3;
        m.field_hidden = vec![4];
        m.readout_hidden = 4;
        m.substeps = 2;
        (m, corpus.train(), corpus.test())
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let (m, tr, te) = tiny();
        let init = init_params(&m, 1).unwrap();
        let cfg = TrainConfig {
            adam: AdamConfig { learning_rate: 0.0, ..AdamConfig::default() },
            epochs: 3,
            ..TrainConfig::default()
        };
        let out = train(&cfg, &m, init.clone(), &tr, &te).unwrap();
        assert_eq!(out.params, init);
        let h = &out.history;
        assert!(h.windows(2).all(|w| w[0].train_mse == w[1].train_mse && w[0].test_nrmse == w[1].test_nrmse));
    }

    #[test]
    fn deterministic_histories() {
        let (m, tr, te) = tiny();
        let cfg = TrainConfig { epochs: 3, batch_size: 2, ..TrainConfig::default() };
        let a = train(&cfg, &m, init_params(&m, 2).unwrap(), &tr, &te).unwrap();
        let b = train(&cfg, &m, init_params(&m, 2).unwrap(), &tr, &te).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn training_reduces_loss() {
        let (m, tr, te) = tiny();
        let cfg = TrainConfig {
            adam: AdamConfig { learning_rate: 1e-2, ..AdamConfig::default() },
            epochs: 20,
            ..TrainConfig::default()
        };
        let out = train(&cfg, &m, init_params(&m, 3).unwrap(), &tr, &te).unwrap();
        assert!(out.history.last().unwrap().train_mse < out.history[0].train_mse);
    }

    #[test]
    fn divergence_names_epoch_and_waveform() {
        let (m, tr, te) = tiny();
        let mut init = init_params(&m, 4).unwrap();
        init.group_mut("field").unwrap().values.iter_mut().for_each(|v| *v *= 1e155);
        let err = train(&TrainConfig::default(), &m, init, &tr, &te).unwrap_err();
        match err {
            Error::TrainingDiverged { epoch, waveform, .. } => {
                assert_eq!(epoch, 1);
                assert!(tr.iter().any(|w| w.id == waveform));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn history_csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.csv");
        let h = [
            EpochRecord { epoch: 1, train_mse: 0.5, test_nrmse: None },
            EpochRecord { epoch: 2, train_mse: 0.25, test_nrmse: Some(0.1) },
        ];
        write_history_csv(&p, &h).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "epoch,train_mse,test_nrmse,best_test_nrmse");
        assert!(lines[1].ends_with(",,"));
        assert!(lines[2].ends_with("1.0000000000000001e-1,1.0000000000000001e-1"));
        assert_eq!(lines.len(), 3);
    }
}
