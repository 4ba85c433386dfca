use std::path::PathBuf;

use hybrid_core::dataset::{Excitation, NormStats, Waveform};
use hybrid_core::models::{init_params, ModelConfig, ModelKind, GROUP_FIELD, GROUP_READOUT, GROUP_RNN};
use hybrid_core::params::ParamStore;
use hybrid_core::veriloga::*;
use hybrid_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config(kind: ModelKind, hidden: usize) -> ModelConfig {
    ModelConfig {
        hidden,
        field_hidden: vec![8],
        readout_hidden: 6,
        ..ModelConfig::new(kind)
    }
}

fn noisy_params(config: &ModelConfig, seed: u64) -> ParamStore {
    let mut p = init_params(config, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for (_, g) in p.iter_mut() {
        for v in g.values.iter_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
    p
}

fn norm() -> NormStats {
    NormStats { u_offset: 0.1, u_scale: 2.0, y_offset: -0.05, y_scale: 0.8, time_scale: 1.0 }
}

fn excitation() -> Excitation {
    Excitation { amplitude: 1.5, frequency: 0.5 }
}

fn period() -> f64 {
    1.0 / excitation().frequency
}

#[test]
fn declarations_follow_the_hidden_size() {
    let c = ModelConfig::new(ModelKind::NcdeRnn);
    let src = export_veriloga(&c, &init_params(&c, 0).unwrap(), &norm()).unwrap();
    assert!(src.contains("electrical h[0:15];"));
    assert!(src.contains("branch (h[15], gnd) H15;"));
    assert!(!src.contains("h[16]"));
    let mut lines = src.lines();
    assert_eq!(lines.next(), Some("`include \"constants.vams\""));
    assert_eq!(lines.next(), Some("`include \"disciplines.vams\""));
    assert!(src.contains("ddt(V(n, p))"));
}

#[test]
fn golden_snapshots() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    for (kind, file) in [(ModelKind::NodeRnn, "node_rnn_h3.va"), (ModelKind::NcdeRnn, "ncde_rnn_h3.va")] {
        let c = ModelConfig { hidden: 3, field_hidden: vec![4], readout_hidden: 3, ..ModelConfig::new(kind) };
        let src = export_veriloga(&c, &noisy_params(&c, 42), &norm()).unwrap();
        let path = dir.join(file);
        if std::env::var_os("UPDATE_GOLDEN").is_some() {
            std::fs::create_dir_all(&dir).unwrap();
            std::fs::write(&path, &src).unwrap();
        }
        let golden = std::fs::read_to_string(&path)
            .unwrap_or_else(|e| panic!("{}: {e} (run with UPDATE_GOLDEN=1 to create)", path.display()));
        assert_eq!(src, golden, "{file} differs from the golden snapshot");
    }
}

#[test]
fn exports_parse_and_reprint_identically() {
    for kind in [ModelKind::NodeRnn, ModelKind::NcdeRnn] {
        for hidden in [4, 16] {
            let c = config(kind, hidden);
            let src = export_veriloga(&c, &noisy_params(&c, hidden as u64), &norm()).unwrap();
            let m = parse_subset(&src).unwrap();
            assert_eq!(print_module(&m), src, "{kind} h={hidden}");
            assert_eq!(m, export_module(&c, &noisy_params(&c, hidden as u64), &norm()).unwrap());
            compile(&m).unwrap();
        }
    }
}

#[test]
fn undeclared_node_is_reported() {
    let c = config(ModelKind::NodeRnn, 4);
    let src = export_veriloga(&c, &noisy_params(&c, 1), &norm()).unwrap();
    let bad = src.replacen("V(h[2], gnd)", "V(q[2], gnd)", 1);
    let err = parse_subset(&bad).unwrap_err();
    assert!(matches!(err, Error::Semantic(_)), "{err}");
    assert!(err.to_string().contains("q[2]"), "{err}");
}

#[test]
fn baseline_kinds_are_rejected() {
    for kind in [ModelKind::Ctrnn, ModelKind::Ncde] {
        let c = config(kind, 4);
        let err = export_veriloga(&c, &init_params(&c, 0).unwrap(), &norm()).unwrap_err();
        assert!(matches!(err, Error::Unsupported(_)), "{err}");
    }
    let c = config(ModelKind::NodeRnn, 4);
    let mut p = init_params(&c, 0).unwrap();
    p.group_mut(GROUP_RNN).unwrap().values[0] = f64::NAN;
    assert!(export_veriloga(&c, &p, &norm()).is_err());
    let wrong = init_params(&config(ModelKind::NodeRnn, 5), 0).unwrap();
    assert!(export_veriloga(&c, &wrong, &norm()).is_err());
}

#[test]
fn constant_field_gives_readout_bias_path() {
    let c = config(ModelKind::NodeRnn, 4);
    let mut p = noisy_params(&c, 9);
    p.group_mut(GROUP_FIELD).unwrap().values.fill(0.0);
    p.group_mut(GROUP_RNN).unwrap().values.fill(0.0);
    let spec = c.readout_spec().unwrap();
    let layers = spec.layer_ranges();
    let ro = &mut p.group_mut(GROUP_READOUT).unwrap().values;
    ro[layers[0].0.clone()].fill(0.0);
    // With every state and first-layer weight zero the output is W2 tanh(b1) + b2.
    let (b1, w2, b2) = (&ro[layers[0].1.clone()], &ro[layers[1].0.clone()], ro[layers[1].1.start]);
    let y = w2.iter().zip(b1).fold(0.0, |acc, (w, b)| acc + w * b.tanh()) + b2;
    let expected = norm().denorm_y(y);

    let m = export_module(&c, &p, &norm()).unwrap();
    let drive = dense_excitation(&excitation(), period() / 256.0).unwrap();
    let out = simulate_subset(&m, &drive, drive.times[1]).unwrap();
    for v in &out.y {
        assert!((v - expected).abs() <= 1e-12, "{v} vs {expected}");
    }
}

const DECAY: &str = r#"`include "constants.vams"
`include "disciplines.vams"

module decay(n, p, gnd);
  inout n, p, gnd;
  electrical n, p, gnd;
  electrical x;
  branch (x, gnd) X;
  analog begin
    @(initial_step) begin
      V(x, gnd) <+ 1.0;
    end
    I(X) <+ -V(x, gnd) - ddt(V(x, gnd));
    I(n, p) <+ V(x, gnd);
  end
endmodule
"#;

fn flat_drive(t_end: f64) -> Waveform {
    let times: Vec<f64> = (0..=10).map(|k| k as f64 * t_end / 10.0).collect();
    let zeros = vec![0.0; times.len()];
    Waveform::new("flat", times, zeros.clone(), zeros, 0.0, 1.0).unwrap()
}

#[test]
fn linear_decay_is_first_order() {
    let m = parse_subset(DECAY).unwrap();
    let mut errors = Vec::new();
    for dt in [0.05, 0.025, 0.0125, 0.00625] {
        let out = simulate_subset(&m, &flat_drive(1.0), dt).unwrap();
        assert_eq!(out.y[0], 1.0);
        let t_end = *out.times.last().unwrap();
        assert!((t_end - 1.0).abs() < 1e-12);
        // Backward Euler: x_k = (1 + dt)^-k exactly.
        let steps = out.y.len() - 1;
        let be = (1.0 + dt).powi(-(steps as i32));
        assert!((out.y[steps] - be).abs() < 1e-9);
        let err = (out.y[steps] - (-1.0f64).exp()).abs();
        assert!(err <= dt, "dt {dt}: error {err}");
        errors.push(err);
    }
    for w in errors.windows(2) {
        let ratio = w[0] / w[1];
        assert!((1.8..2.2).contains(&ratio), "ratio {ratio}");
    }
}

#[test]
fn stiff_step_fails_to_converge() {
    let stiff = DECAY.replace("I(X) <+ -V(x, gnd)", "I(X) <+ -1.0e6 * V(x, gnd)");
    let m = parse_subset(&stiff).unwrap();
    let err = simulate_subset(&m, &flat_drive(1.0), 0.1).unwrap_err();
    assert!(matches!(err, Error::NonConvergent { step: 1, .. } | Error::Divergence { .. }), "{err}");
}

#[test]
fn interpreter_rejects_cross_coupled_rates() {
    let src = DECAY
        .replace("electrical x;", "electrical x, z;")
        .replace("branch (x, gnd) X;", "branch (x, gnd) X;\n  branch (z, gnd) Z;")
        .replace("I(n, p) <+", "I(Z) <+ ddt(V(x, gnd)) - ddt(V(z, gnd));\n    I(n, p) <+");
    let m = parse_subset(&src).unwrap();
    assert!(compile(&m).is_err());
}

#[test]
fn node_rnn_matches_native_at_fine_step() {
    // Corpus samples are a period/128 apart; this is a 64th of that.
    let c = config(ModelKind::NodeRnn, 6);
    let r = roundtrip_verify(&c, &noisy_params(&c, 3), &norm(), &excitation(), period() / 128.0 / 64.0).unwrap();
    assert_eq!(r.steps, 8192);
    assert!(r.nrmse <= 1e-3, "{r:?}");
}

#[test]
fn roundtrip_error_shrinks_with_the_step() {
    for kind in [ModelKind::NodeRnn, ModelKind::NcdeRnn] {
        let c = config(kind, 6);
        let p = noisy_params(&c, 11);
        let reports: Vec<RoundTripReport> = [512.0, 1024.0, 2048.0, 4096.0]
            .iter()
            .map(|div| roundtrip_verify(&c, &p, &norm(), &excitation(), period() / div).unwrap())
            .collect();
        assert!(reports[0].nrmse <= 1e-2, "{kind}: {:?}", reports[0]);
        for w in reports.windows(2) {
            assert!(w[1].nrmse < w[0].nrmse, "{kind}: {:?} -> {:?}", w[0], w[1]);
        }
    }
}

#[test]
fn zero_weight_roundtrip_is_exact() {
    for kind in [ModelKind::NodeRnn, ModelKind::NcdeRnn] {
        let c = config(kind, 4);
        let mut p = init_params(&c, 0).unwrap();
        for (_, g) in p.iter_mut() {
            g.values.fill(0.0);
        }
        let r = roundtrip_verify(&c, &p, &norm(), &excitation(), period() / 512.0).unwrap();
        assert_eq!(r.max_abs_error, 0.0);
        assert_eq!(r.nrmse, 0.0);
    }
}
