use hybrid_core::dataset::{Corpus, CorpusConfig, Waveform};
use hybrid_core::models::{init_params, model_forward, Checkpoint, ModelConfig, ModelKind, GROUP_FIELD};
use hybrid_core::spline::fit_natural_cubic;
use hybrid_core::train::{evaluate, nrmse, train, TrainConfig};

fn corpus() -> Corpus {
    Corpus::generate(&CorpusConfig { count: 12, ..CorpusConfig::default() }).unwrap()
}

/// Insert the midpoint of every interval, sampling `u` from the spline of the
/// original samples.
fn resample_2x(w: &Waveform) -> Waveform {
    let path = fit_natural_cubic(&w.times, &[w.u.clone()]).unwrap();
    let mut times = Vec::with_capacity(2 * w.times.len() - 1);
    for pair in w.times.windows(2) {
        times.push(pair[0]);
        times.push(0.5 * (pair[0] + pair[1]));
    }
    times.push(*w.times.last().unwrap());
    let u: Vec<f64> = times.iter().map(|&t| path.value(t).unwrap()[0]).collect();
    let y = vec![0.0; times.len()];
    Waveform::new("dense", times, u, y, w.amplitude, w.frequency).unwrap()
}

#[test]
fn baselines_are_insensitive_to_the_time_grid() {
    let c = corpus();
    for kind in [ModelKind::Ctrnn, ModelKind::Ncde] {
        let model = ModelConfig::new(kind);
        let params = init_params(&model, 21).unwrap();
        for &i in &c.split.test {
            let w = c.norm.normalize(&c.waveforms[i]);
            let coarse: Vec<f64> = model_forward(&model, &params, &w).unwrap().outputs.iter().map(|o| o[0]).collect();
            let dense = model_forward(&model, &params, &resample_2x(&w)).unwrap().outputs;
            let at_samples: Vec<f64> = dense.iter().skip(1).step_by(2).map(|o| o[0]).collect();
            assert_eq!(at_samples.len(), coarse.len());
            let e = nrmse(&at_samples, &coarse).unwrap();
            assert!(e <= 1e-3, "{kind} on {}: {e:.3e}", w.id);
        }
    }
}

#[test]
fn hybrid_kinds_reduce_to_their_rnn_when_the_field_is_zero() {
    let c = corpus();
    let w = c.norm.normalize(&c.waveforms[0]);
    for kind in [ModelKind::NodeRnn, ModelKind::NcdeRnn] {
        let model = ModelConfig::new(kind);
        let mut p = init_params(&model, 2).unwrap();
        p.group_mut(GROUP_FIELD).unwrap().values.fill(0.0);
        let a = model_forward(&model, &p, &w).unwrap();
        // More substeps of a zero field change nothing.
        let finer = ModelConfig { substeps: 16, ..model.clone() };
        let b = model_forward(&finer, &p, &w).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn trained_checkpoint_reloads_with_identical_metrics() {
    let c = Corpus::generate(&CorpusConfig { count: 10, samples: 32, ..CorpusConfig::default() }).unwrap();
    let model = ModelConfig { hidden: 4, field_hidden: vec![8], readout_hidden: 6, ..ModelConfig::new(ModelKind::NcdeRnn) };
    let cfg = TrainConfig { epochs: 3, ..TrainConfig::default() };
    let init = init_params(&model, 0).unwrap();
    let before = evaluate(&model, &init, &c.test()).unwrap().nrmse;
    let out = train(&cfg, &model, init, &c.train(), &c.test()).unwrap();
    assert!(out.best_test_nrmse < before);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.json");
    Checkpoint::new(model.clone(), c.norm, out.best_params.clone()).unwrap().save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back.params, out.best_params);
    let again = evaluate(&back.model, &back.params, &c.test()).unwrap();
    assert_eq!(again.nrmse.to_bits(), out.best_test_nrmse.to_bits());
}
