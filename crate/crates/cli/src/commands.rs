use std::path::{Path, PathBuf};

use hybrid_core::dataset::{Corpus, SplitSide, MANIFEST_FILE};
use hybrid_core::models::{init_params, Checkpoint, ModelKind};
use hybrid_core::train::{
    evaluate, run_gradcheck, train_with_progress, write_history_csv, GradCheckReport,
};
use hybrid_core::veriloga::{export_veriloga, module_name, roundtrip_verify, RoundTripReport};
use serde::{Deserialize, Serialize};

use crate::config::{ExportSection, RunConfig};
use crate::error::{CliError, CliResult};
use crate::{Cli, Command, SplitArg};

pub const DATA_DIR: &str = "data";
pub const WEIGHTS_FILE: &str = "weights.json";
pub const FINAL_WEIGHTS_FILE: &str = "weights_final.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const RUN_CONFIG_FILE: &str = "run_config.json";

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(hybrid_core::Error::from)?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

fn load_corpus(manifest: &Path) -> CliResult<Corpus> {
    if !manifest.exists() {
        return Err(CliError::Usage(format!(
            "manifest {} not found (run generate-data first)",
            manifest.display()
        )));
    }
    Ok(Corpus::load(manifest)?)
}

pub fn default_manifest(out: &Path) -> PathBuf {
    out.join(DATA_DIR).join(MANIFEST_FILE)
}

/// Config file, then the seed flag on top.
pub fn resolve_config(path: Option<&Path>, seed: Option<u64>) -> CliResult<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed.or(cfg.seed) {
        cfg.apply_seed(s);
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub manifest: PathBuf,
    pub waveforms: usize,
    pub train: usize,
    pub test: usize,
    pub grid: (usize, usize),
}

pub fn cmd_generate_data(cfg: &RunConfig, out: &Path) -> CliResult<DataSummary> {
    let dir = out.join(DATA_DIR);
    create_dir(&dir)?;
    let corpus = Corpus::generate(&cfg.corpus)?;
    let manifest = corpus.write(&dir)?;
    Ok(DataSummary {
        manifest,
        waveforms: corpus.waveforms.len(),
        train: corpus.split.train.len(),
        test: corpus.split.test.len(),
        grid: cfg.corpus.grid_shape(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub kind: ModelKind,
    pub parameters: usize,
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_test_nrmse: f64,
    /// Best test NRMSE times 100.
    pub best_test_nrmse_x100: f64,
    pub final_test_nrmse: f64,
    pub params_changed: bool,
    pub weights: PathBuf,
    pub history: PathBuf,
}

/// Train `cfg.model.kind`; writes checkpoints, history and a summary under
/// `<out>/<kind>/`.
pub fn cmd_train(
    cfg: &RunConfig,
    manifest: &Path,
    out: &Path,
    mut progress: impl FnMut(usize, f64, Option<f64>),
) -> CliResult<TrainSummary> {
    let model = cfg.model_config()?;
    let corpus = load_corpus(manifest)?;
    let dir = out.join(model.kind.name());
    create_dir(&dir)?;
    write_json(&dir.join(RUN_CONFIG_FILE), cfg)?;

    let init = init_params(&model, cfg.training.seed)?;
    let outcome = train_with_progress(
        &cfg.training,
        &model,
        init.clone(),
        &corpus.train(),
        &corpus.test(),
        |r| progress(r.epoch, r.train_mse, r.test_nrmse),
    )?;

    let weights = dir.join(WEIGHTS_FILE);
    Checkpoint::new(model.clone(), corpus.norm, outcome.best_params.clone())?.save(&weights)?;
    Checkpoint::new(model.clone(), corpus.norm, outcome.params.clone())?
        .save(&dir.join(FINAL_WEIGHTS_FILE))?;
    let history = dir.join(HISTORY_FILE);
    write_history_csv(&history, &outcome.history)?;

    let final_test_nrmse = outcome
        .history
        .last()
        .and_then(|r| r.test_nrmse)
        .unwrap_or(f64::NAN);
    let summary = TrainSummary {
        kind: model.kind,
        parameters: init.total_len(),
        epochs: cfg.training.epochs,
        best_epoch: outcome.best_epoch,
        best_test_nrmse: outcome.best_test_nrmse,
        best_test_nrmse_x100: outcome.best_test_nrmse * 100.0,
        final_test_nrmse,
        params_changed: outcome.params != init,
        weights,
        history,
    };
    write_json(&dir.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveformMetric {
    pub id: String,
    pub amplitude: f64,
    pub frequency: f64,
    pub nrmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub kind: ModelKind,
    pub split: SplitSide,
    pub nrmse: f64,
    /// `nrmse` times 100.
    pub nrmse_x100: f64,
    pub mse: f64,
    pub per_waveform: Vec<WaveformMetric>,
}

pub fn evaluate_checkpoint(ckpt: &Checkpoint, corpus: &Corpus, split: SplitArg) -> CliResult<EvalReport> {
    if ckpt.model.input_dim != 1 || ckpt.model.output_dim != 1 {
        return Err(hybrid_core::Error::Dimension {
            context: "checkpoint input/output channels vs corpus".into(),
            expected: 1,
            got: ckpt.model.input_dim.max(ckpt.model.output_dim),
        }
        .into());
    }
    let (side, indices) = match split {
        SplitArg::Train => (SplitSide::Train, &corpus.split.train),
        SplitArg::Test => (SplitSide::Test, &corpus.split.test),
    };
    // Normalize with the statistics the model was trained under.
    let set: Vec<_> = indices.iter().map(|&i| ckpt.norm.normalize(&corpus.waveforms[i])).collect();
    let eval = evaluate(&ckpt.model, &ckpt.params, &set)?;
    let per_waveform = set
        .iter()
        .zip(&eval.per_waveform)
        .map(|(w, &nrmse)| WaveformMetric {
            id: w.id.clone(),
            amplitude: w.amplitude,
            frequency: w.frequency,
            nrmse,
        })
        .collect();
    Ok(EvalReport {
        kind: ckpt.model.kind,
        split: side,
        nrmse: eval.nrmse,
        nrmse_x100: eval.nrmse * 100.0,
        mse: eval.mse,
        per_waveform,
    })
}

/// Writes `<out>/eval_<kind>_<split>.json`.
pub fn cmd_eval(weights: &Path, manifest: &Path, split: SplitArg, out: &Path) -> CliResult<(EvalReport, PathBuf)> {
    let ckpt = Checkpoint::load(weights)?;
    let corpus = load_corpus(manifest)?;
    let report = evaluate_checkpoint(&ckpt, &corpus, split)?;
    create_dir(out)?;
    let side = match split {
        SplitArg::Train => "train",
        SplitArg::Test => "test",
    };
    let path = out.join(format!("eval_{}_{side}.json", ckpt.model.kind.name()));
    write_json(&path, &report)?;
    Ok((report, path))
}

/// Writes `<out>/gradcheck.json`; tolerance failures are left in the report.
pub fn cmd_gradcheck(cfg: &RunConfig, out: &Path) -> CliResult<(GradCheckReport, PathBuf)> {
    let report = run_gradcheck(&cfg.gradcheck)?;
    create_dir(out)?;
    let path = out.join("gradcheck.json");
    write_json(&path, &report)?;
    Ok((report, path))
}

/// Writes `<out>/<module>.va`.
pub fn cmd_export(weights: &Path, out: &Path) -> CliResult<PathBuf> {
    let ckpt = Checkpoint::load(weights)?;
    let name = module_name(ckpt.model.kind)?;
    let src = export_veriloga(&ckpt.model, &ckpt.params, &ckpt.norm)?;
    create_dir(out)?;
    let path = out.join(format!("{name}.va"));
    std::fs::write(&path, src).map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}

/// Writes `<out>/<module>_roundtrip.json`. Exceeding the ceiling is reported
/// by the caller.
pub fn cmd_verify_export(weights: &Path, export: &ExportSection, out: &Path) -> CliResult<(RoundTripReport, PathBuf)> {
    let ckpt = Checkpoint::load(weights)?;
    let name = module_name(ckpt.model.kind)?;
    let report = roundtrip_verify(
        &ckpt.model,
        &ckpt.params,
        &ckpt.norm,
        &export.excitation(),
        export.resolved_timestep(),
    )?;
    create_dir(out)?;
    let path = out.join(format!("{name}_roundtrip.json"));
    write_json(&path, &report)?;
    Ok((report, path))
}

fn dispatch(cli: &Cli, mut cfg: RunConfig) -> CliResult<()> {
    let out = cli.out.as_path();
    match &cli.command {
        Command::GenerateData { count } => {
            if let Some(c) = count {
                cfg.corpus.count = *c;
                cfg.validate()?;
            }
            let s = cmd_generate_data(&cfg, out)?;
            println!(
                "generated {} waveforms ({} amplitudes x {} frequencies), split {} train / {} test",
                s.waveforms, s.grid.0, s.grid.1, s.train, s.test
            );
            println!("manifest: {}", s.manifest.display());
        }
        Command::Train { kind, manifest, epochs, lr, batch_size } => {
            if let Some(k) = kind {
                cfg.model.kind = Some(*k);
            }
            if let Some(e) = epochs {
                cfg.training.epochs = *e;
            }
            if let Some(lr) = lr {
                cfg.training.adam.learning_rate = *lr;
            }
            if let Some(b) = batch_size {
                cfg.training.batch_size = *b;
            }
            cfg.validate()?;
            let manifest = manifest.clone().unwrap_or_else(|| default_manifest(out));
            let total = cfg.training.epochs;
            let quiet = cli.quiet;
            let s = cmd_train(&cfg, &manifest, out, |epoch, mse, test| {
                if !quiet {
                    let test = test.map(|v| format!("{v:.4e}")).unwrap_or_else(|| "-".into());
                    eprintln!("epoch {epoch}/{total}  train_mse {mse:.4e}  test_nrmse {test}");
                }
            })?;
            if !s.params_changed {
                eprintln!("warning: parameters are unchanged after training (learning rate {})", cfg.training.adam.learning_rate);
            }
            println!(
                "{}: test NRMSE x1e2 = {:.4} (best, epoch {}); final {:.4}",
                s.kind,
                s.best_test_nrmse_x100,
                s.best_epoch,
                s.final_test_nrmse * 100.0
            );
            println!("weights: {}", s.weights.display());
            println!("history: {}", s.history.display());
        }
        Command::Eval { weights, manifest, split } => {
            let manifest = manifest.clone().unwrap_or_else(|| default_manifest(out));
            let (r, path) = cmd_eval(weights, &manifest, *split, out)?;
            println!(
                "{} on {} waveforms: NRMSE x1e2 = {:.4}",
                r.kind,
                r.per_waveform.len(),
                r.nrmse_x100
            );
            println!("metrics: {}", path.display());
        }
        Command::Gradcheck { models } => {
            if let Some(m) = models {
                cfg.gradcheck.models = *m;
                cfg.validate()?;
            }
            let (r, path) = cmd_gradcheck(&cfg, out)?;
            println!(
                "{} models: worst discrete-vs-FD {:.3e}, worst adjoint-vs-discrete {:.3e}, min doubling ratio {}",
                r.cases.len(),
                r.worst_fd_rel,
                r.worst_adjoint_rel,
                r.min_ratio.map(|v| format!("{v:.2}")).unwrap_or_else(|| "n/a".into())
            );
            for row in &r.substep_table {
                println!("  substeps {:>3}: worst adjoint rel {:.3e}", row.substeps, row.worst_adjoint_rel);
            }
            println!("report: {}", path.display());
            if !r.passed {
                return Err(CliError::Failed(format!(
                    "gradient check failed:\n{}",
                    r.failures.join("\n")
                )));
            }
        }
        Command::Export { weights } => {
            let path = cmd_export(weights, out)?;
            println!("exported: {}", path.display());
        }
        Command::VerifyExport { weights, timestep, amplitude, frequency, ceiling } => {
            let e = &mut cfg.export;
            if let Some(v) = amplitude {
                e.amplitude = *v;
            }
            if let Some(v) = frequency {
                e.frequency = *v;
            }
            if let Some(v) = ceiling {
                e.ceiling = *v;
            }
            if timestep.is_some() {
                e.timestep = *timestep;
            }
            cfg.validate()?;
            let (r, path) = cmd_verify_export(weights, &cfg.export, out)?;
            println!(
                "round trip over {} steps of {:.4e}: max abs error {:.3e}, NRMSE {:.3e}",
                r.steps, r.timestep, r.max_abs_error, r.nrmse
            );
            println!("report: {}", path.display());
            if !(r.nrmse <= cfg.export.ceiling) {
                return Err(CliError::Failed(format!(
                    "round-trip NRMSE {:.3e} exceeds ceiling {:.0e}",
                    r.nrmse, cfg.export.ceiling
                )));
            }
        }
    }
    Ok(())
}

/// Run a parsed command line on a pool of `--threads` workers.
pub fn run(cli: &Cli) -> CliResult<()> {
    let cfg = resolve_config(cli.config.as_deref(), cli.seed)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads as usize)
        .build()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    pool.install(|| dispatch(cli, cfg))
}
