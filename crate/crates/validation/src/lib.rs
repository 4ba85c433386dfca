//! End-to-end acceptance checks. Each check returns one [`Verdict`]; the
//! `acceptance` test target prints them.

use std::path::Path;
use std::time::Instant;

use hybrid_cli::{cmd_eval, cmd_generate_data, cmd_train, default_manifest, ExportSection, RunConfig, SplitArg};
use hybrid_core::dataset::{Corpus, CorpusConfig, NormStats};
use hybrid_core::models::{
    forward_sequence, init_params, ModelConfig, ModelKind, ModelParts, ModelSpecs, Sequence, GROUP_FIELD,
};
use hybrid_core::params::ParamStore;
use hybrid_core::solve::{rk4_solve, SolveConfig};
use hybrid_core::spline::fit_natural_cubic;
use hybrid_core::train::{run_gradcheck, train, GradCheckConfig, TrainConfig};
use hybrid_core::veriloga::roundtrip_verify;

#[derive(Debug, Clone)]
pub struct Verdict {
    pub id: &'static str,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Verdict {
    fn new(id: &'static str, name: &'static str, passed: bool, detail: String) -> Self {
        Self { id, name, passed, detail }
    }

    fn error(id: &'static str, name: &'static str, e: impl std::fmt::Display) -> Self {
        Self::new(id, name, false, format!("error: {e}"))
    }

    pub fn line(&self) -> String {
        let status = if self.passed { "PASS" } else { "FAIL" };
        format!("{} {status} {}: {}", self.id, self.name, self.detail)
    }
}

pub fn gradient_triangle() -> Verdict {
    const NAME: &str = "gradient-oracle triangle";
    let cfg = GradCheckConfig::default();
    let start = Instant::now();
    let report = match run_gradcheck(&cfg) {
        Ok(r) => r,
        Err(e) => return Verdict::error("A1", NAME, e),
    };
    let secs = start.elapsed().as_secs_f64();
    let kinds = ModelKind::ALL.iter().all(|k| report.cases.iter().any(|c| c.kind == *k));
    let passed = report.passed && report.cases.len() >= 20 && kinds && secs < 120.0;
    let mut detail = format!(
        "{} models, discrete vs FD {:.2e} (<= 1e-5), adjoint vs discrete {:.2e} (<= 1e-3), min doubling ratio {} (>= 8), {secs:.1} s",
        report.cases.len(),
        report.worst_fd_rel,
        report.worst_adjoint_rel,
        report.min_ratio.map(|r| format!("{r:.1}")).unwrap_or_else(|| "n/a".into()),
    );
    if let Some(f) = report.failures.first() {
        detail.push_str(&format!("; first failure: {f}"));
    }
    Verdict::new("A1", NAME, passed, detail)
}

pub fn solver_order() -> Verdict {
    const NAME: &str = "RK4 order";
    let field = (1usize, |_t: f64, x: &[f64], out: &mut [f64]| out[0] = -x[0]);
    let exact = (-1.0f64).exp();
    let mut errors = Vec::new();
    for n in [4, 8, 16, 32] {
        match rk4_solve(&field, &[1.0], 0.0, 1.0, &SolveConfig { substeps: n }) {
            Ok(x) => errors.push((x[0] - exact).abs()),
            Err(e) => return Verdict::error("A2", NAME, e),
        }
    }
    let ratios: Vec<f64> = errors.windows(2).map(|w| w[0] / w[1]).collect();
    let passed = ratios.iter().all(|r| (12.0..=20.0).contains(r));
    let shown: Vec<String> = ratios.iter().map(|r| format!("{r:.2}")).collect();
    Verdict::new("A2", NAME, passed, format!("error ratios per halving [{}] (each in [12, 20])", shown.join(", ")))
}

/// Natural cubic spline value by dense Gaussian elimination on the moment
/// equations, independent of the library's tridiagonal solver.
pub fn spline_oracle(t: &[f64], y: &[f64], at: f64) -> f64 {
    let n = t.len();
    let h: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
    let mut a = vec![vec![0.0; n + 1]; n];
    a[0][0] = 1.0;
    a[n - 1][n - 1] = 1.0;
    for i in 1..n - 1 {
        a[i][i - 1] = h[i - 1];
        a[i][i] = 2.0 * (h[i - 1] + h[i]);
        a[i][i + 1] = h[i];
        a[i][n] = 6.0 * ((y[i + 1] - y[i]) / h[i] - (y[i] - y[i - 1]) / h[i - 1]);
    }
    for col in 0..n {
        let piv = (col..n).max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs())).unwrap();
        a.swap(col, piv);
        for r in 0..n {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..=n {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    let m: Vec<f64> = (0..n).map(|i| a[i][n] / a[i][i]).collect();
    let k = t.windows(2).position(|w| at <= w[1]).unwrap_or(n - 2);
    let (l, r) = (t[k + 1] - at, at - t[k]);
    let hk = h[k];
    m[k] * l.powi(3) / (6.0 * hk)
        + m[k + 1] * r.powi(3) / (6.0 * hk)
        + (y[k] / hk - m[k] * hk / 6.0) * l
        + (y[k + 1] / hk - m[k + 1] * hk / 6.0) * r
}

pub fn spline_suite() -> Verdict {
    const NAME: &str = "natural cubic spline";
    let run = || -> hybrid_core::Result<(bool, String)> {
        let t: Vec<f64> = (0..=24).map(|k| k as f64 * 0.4 + 0.15 * (1.7 * k as f64).sin()).collect();
        let y: Vec<f64> = t.iter().map(|&s| (1.3 * s).sin() + 0.5 * (0.7 * s).cos()).collect();
        let path = fit_natural_cubic(&t, &[y.clone()])?;
        let mut knot = 0.0f64;
        for (tk, yk) in t.iter().zip(&y) {
            knot = knot.max((path.value(*tk)?[0] - yk).abs());
        }
        let (mut c1, mut c2) = (0.0f64, 0.0f64);
        for k in 1..t.len() - 1 {
            let ((d1l, d2l), (d1r, d2r)) = path.knot_limits(0, k);
            c1 = c1.max((d1l - d1r).abs());
            c2 = c2.max((d2l - d2r).abs());
        }
        let ends = path.eval(t[0])?.d2[0].abs().max(path.eval(*t.last().unwrap())?.d2[0].abs());
        let mut oracle = 0.0f64;
        for w in t.windows(2) {
            let mid = 0.5 * (w[0] + w[1]);
            oracle = oracle.max((path.value(mid)?[0] - spline_oracle(&t, &y, mid)).abs());
        }
        let three = fit_natural_cubic(&[0.0, 1.0, 2.0], &[vec![0.0, 1.0, 0.0]])?.value(0.5)?[0];
        let three_oracle = spline_oracle(&[0.0, 1.0, 2.0], &[0.0, 1.0, 0.0], 0.5);
        let passed = knot <= 1e-12
            && c1 <= 1e-9
            && c2 <= 1e-9
            && ends <= 1e-9
            && oracle <= 1e-9
            && (three - 0.6875).abs() <= 1e-12
            && (three_oracle - 0.6875).abs() <= 1e-12;
        Ok((
            passed,
            format!(
                "knots {knot:.1e}, C1 {c1:.1e}, C2 {c2:.1e}, end S'' {ends:.1e}, vs oracle {oracle:.1e}, S(0.5) = {three:.16} (oracle {three_oracle:.16})"
            ),
        ))
    };
    match run() {
        Ok((passed, detail)) => Verdict::new("A3", NAME, passed, detail),
        Err(e) => Verdict::error("A3", NAME, e),
    }
}

/// One benchmark run: the kind, its best test NRMSE and parameters.
#[derive(Debug, Clone)]
pub struct BenchRun {
    pub model: ModelConfig,
    pub best_test_nrmse: f64,
    pub best_params: ParamStore,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct Benchmark {
    pub norm: NormStats,
    pub runs: Vec<BenchRun>,
}

impl Benchmark {
    pub fn run(&self, kind: ModelKind) -> Option<&BenchRun> {
        self.runs.iter().find(|r| r.model.kind == kind)
    }
}

/// Train all four kinds on the default corpus with identical settings.
pub fn run_benchmark(epochs: usize) -> hybrid_core::Result<Benchmark> {
    let corpus = Corpus::generate(&CorpusConfig::default())?;
    let (train_set, test_set) = (corpus.train(), corpus.test());
    let cfg = TrainConfig { epochs, ..TrainConfig::default() };
    let mut runs = Vec::new();
    for kind in ModelKind::ALL {
        let model = ModelConfig::new(kind);
        let start = Instant::now();
        let out = train(&cfg, &model, init_params(&model, cfg.seed)?, &train_set, &test_set)?;
        runs.push(BenchRun {
            model,
            best_test_nrmse: out.best_test_nrmse,
            best_params: out.best_params,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(Benchmark { norm: corpus.norm, runs })
}

pub fn benchmark_ordering(bench: &hybrid_core::Result<Benchmark>, epochs: usize) -> Verdict {
    const NAME: &str = "benchmark ordering";
    let bench = match bench {
        Ok(b) => b,
        Err(e) => return Verdict::error("A4", NAME, e),
    };
    let nrmse = |k| bench.run(k).map(|r| r.best_test_nrmse).unwrap_or(f64::NAN);
    let gain = |base: ModelKind, hybrid: ModelKind| (nrmse(base) - nrmse(hybrid)) / nrmse(base);
    let (g1, g2) = (gain(ModelKind::Ctrnn, ModelKind::NodeRnn), gain(ModelKind::Ncde, ModelKind::NcdeRnn));
    let secs: f64 = bench.runs.iter().map(|r| r.seconds).sum();
    let passed = g1 >= 0.10 && g2 >= 0.10 && secs <= 1800.0;
    let scores: Vec<String> = bench
        .runs
        .iter()
        .map(|r| format!("{} {:.3}", r.model.kind, r.best_test_nrmse * 100.0))
        .collect();
    Verdict::new(
        "A4",
        NAME,
        passed,
        format!(
            "test NRMSE x1e2 after {epochs} epochs: {}; node-rnn vs ctrnn {:+.1}%, ncde-rnn vs ncde {:+.1}% (each >= +10%), {secs:.0} s",
            scores.join(", "),
            100.0 * g1,
            100.0 * g2
        ),
    )
}

pub fn export_roundtrip(bench: &hybrid_core::Result<Benchmark>) -> Verdict {
    const NAME: &str = "Verilog-A round trip";
    let bench = match bench {
        Ok(b) => b,
        Err(e) => return Verdict::error("A5", NAME, e),
    };
    let export = ExportSection::default();
    let base = export.resolved_timestep();
    let mut passed = true;
    let mut parts = Vec::new();
    for kind in [ModelKind::NodeRnn, ModelKind::NcdeRnn] {
        let Some(run) = bench.run(kind) else {
            return Verdict::error("A5", NAME, format!("no trained {kind}"));
        };
        let mut errs = Vec::new();
        for level in 0..4 {
            let dt = base / f64::from(1 << level);
            match roundtrip_verify(&run.model, &run.best_params, &bench.norm, &export.excitation(), dt) {
                Ok(r) => errs.push(r.nrmse),
                Err(e) => return Verdict::error("A5", NAME, format!("{kind}: {e}")),
            }
        }
        let monotone = errs.windows(2).all(|w| w[1] < w[0]);
        passed &= errs[0] <= 1e-2 && monotone;
        let shown: Vec<String> = errs.iter().map(|e| format!("{e:.2e}")).collect();
        parts.push(format!("{kind} [{}]", shown.join(" > ")));
    }
    Verdict::new(
        "A5",
        NAME,
        passed,
        format!("NRMSE at period/512..4096: {} (first <= 1e-2, decreasing)", parts.join(", ")),
    )
}

fn pipeline(dir: &Path) -> hybrid_cli::CliResult<Vec<(String, Vec<u8>)>> {
    let mut cfg = RunConfig::default();
    cfg.apply_seed(11);
    cfg.model.kind = Some(ModelKind::NcdeRnn);
    cfg.training.epochs = 2;
    cfg.validate()?;
    cmd_generate_data(&cfg, dir)?;
    let manifest = default_manifest(dir);
    let summary = cmd_train(&cfg, &manifest, dir, |_, _, _| {})?;
    let (_, metrics) = cmd_eval(&summary.weights, &manifest, SplitArg::Test, dir)?;
    let files = [manifest, summary.weights.clone(), summary.weights.with_file_name("weights_final.json"), summary.history, metrics];
    files
        .iter()
        .map(|p| {
            let bytes = std::fs::read(p).map_err(|e| hybrid_cli::CliError::io(p, e))?;
            Ok((p.file_name().unwrap().to_string_lossy().into_owned(), bytes))
        })
        .collect()
}

pub fn determinism() -> Verdict {
    const NAME: &str = "determinism";
    let run = || -> Result<(bool, String), String> {
        let dirs = [tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?];
        let a = pipeline(dirs[0].path()).map_err(|e| e.to_string())?;
        let b = pipeline(dirs[1].path()).map_err(|e| e.to_string())?;
        let differing: Vec<&str> = a.iter().zip(&b).filter(|(x, y)| x.1 != y.1).map(|(x, _)| x.0.as_str()).collect();
        let names: Vec<&str> = a.iter().map(|x| x.0.as_str()).collect();
        if differing.is_empty() {
            Ok((true, format!("generate-data + train + eval twice with seed 11: {} identical", names.join(", "))))
        } else {
            Ok((false, format!("differing files: {}", differing.join(", "))))
        }
    };
    match run() {
        Ok((passed, detail)) => Verdict::new("A6", NAME, passed, detail),
        Err(e) => Verdict::error("A6", NAME, e),
    }
}

/// Readout of a tanh RNN driven by the samples, with no continuous part.
fn discrete_rnn_outputs(config: &ModelConfig, params: &ParamStore, seq: &Sequence) -> hybrid_core::Result<Vec<f64>> {
    let specs = ModelSpecs::new(config)?;
    let parts = ModelParts::new(config, &specs, params, &seq.path)?;
    let cell = parts.rnn.expect("hybrid kinds have an RNN cell");
    let mut x = vec![0.0; config.hidden];
    let mut out = Vec::with_capacity(seq.steps());
    for i in 1..seq.times.len() {
        x = cell.forward(&x, &seq.inputs[i])?;
        out.push(parts.output(seq, i, &x)?[0]);
    }
    Ok(out)
}

pub fn degenerate_equivalence() -> Verdict {
    const NAME: &str = "zero-field equivalence";
    let run = || -> hybrid_core::Result<(bool, String)> {
        let corpus = Corpus::generate(&CorpusConfig { count: 12, ..CorpusConfig::default() })?;
        let set = corpus.normalized(&(0..corpus.waveforms.len()).collect::<Vec<_>>());
        let mut compared = 0;
        let mut mismatched = Vec::new();
        for kind in [ModelKind::NodeRnn, ModelKind::NcdeRnn] {
            let model = ModelConfig::new(kind);
            let mut params = init_params(&model, 5)?;
            params.group_mut(GROUP_FIELD)?.values.fill(0.0);
            for w in &set {
                let seq = Sequence::from_waveform(w)?;
                let hybrid: Vec<u64> = forward_sequence(&model, &params, &seq)?.outputs.iter().map(|o| o[0].to_bits()).collect();
                let plain: Vec<u64> = discrete_rnn_outputs(&model, &params, &seq)?.iter().map(|v| v.to_bits()).collect();
                compared += plain.len();
                if hybrid != plain {
                    mismatched.push(format!("{kind}/{}", w.id));
                }
            }
        }
        Ok(if mismatched.is_empty() {
            (true, format!("{compared} outputs bitwise equal over node-rnn and ncde-rnn"))
        } else {
            (false, format!("outputs differ on {}", mismatched.join(", ")))
        })
    };
    match run() {
        Ok((passed, detail)) => Verdict::new("A7", NAME, passed, detail),
        Err(e) => Verdict::error("A7", NAME, e),
    }
}
