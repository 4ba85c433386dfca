//! Randomized gradient cross-checks: discrete backprop against central
//! differences, and the hybrid adjoint against discrete backprop as the RK4
//! substep count doubles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::relative_error;
use crate::models::{init_params, ModelConfig, ModelKind, Sequence, GROUP_CTRNN};
use crate::params::ParamStore;

use super::grad::{discrete_backprop_grad, finite_diff_grad, hybrid_adjoint_backward};

/// Differences below this are round-off and carry no convergence signal.
const ROUNDOFF_FLOOR: f64 = 1e-11;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradCheckConfig {
    /// Random models, cycled over the four kinds.
    pub models: usize,
    pub hidden: usize,
    pub field_hidden: Vec<usize>,
    pub readout_hidden: usize,
    /// Observation intervals per random sequence.
    pub steps: usize,
    /// Substeps of the first adjoint comparison; the table doubles it twice.
    pub substeps: usize,
    pub fd_step: f64,
    pub fd_tolerance: f64,
    pub adjoint_tolerance: f64,
    /// Required shrink factor of the adjoint discrepancy per substep doubling.
    pub min_ratio: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            models: 20,
            hidden: 3,
            field_hidden: vec![6],
            readout_hidden: 4,
            steps: 6,
            substeps: 8,
            fd_step: 1e-5,
            fd_tolerance: 1e-5,
            adjoint_tolerance: 1e-3,
            min_ratio: 8.0,
            seed: 0,
        }
    }
}

impl GradCheckConfig {
    pub fn validate(&self) -> Result<()> {
        if self.models == 0 || self.hidden == 0 || self.steps == 0 || self.substeps == 0 {
            return Err(Error::InvalidInput("gradcheck sizes must be at least 1".into()));
        }
        let positive = [self.fd_step, self.fd_tolerance, self.adjoint_tolerance, self.min_ratio];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidInput("gradcheck step and tolerances must be positive".into()));
        }
        Ok(())
    }

    fn model(&self, kind: ModelKind, substeps: usize) -> ModelConfig {
        ModelConfig {
            hidden: self.hidden,
            field_hidden: self.field_hidden.clone(),
            readout_hidden: self.readout_hidden,
            substeps,
            ..ModelConfig::new(kind)
        }
    }
}

/// Glorot init plus uniform noise on every entry, biases included.
pub fn randomized_params(config: &ModelConfig, seed: u64) -> Result<ParamStore> {
    let mut p = init_params(config, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    for (_, g) in p.iter_mut() {
        for v in g.values.iter_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
    if config.kind == ModelKind::Ctrnn {
        let tau = p.group_mut(GROUP_CTRNN)?.values.last_mut().unwrap();
        *tau = tau.abs().max(0.5);
    }
    Ok(p)
}

/// Irregularly spaced single-channel sequence with smooth input and target.
pub fn random_sequence(steps: usize, seed: u64) -> Result<Sequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w_u, w_y) = (rng.random_range(1.0..3.0), rng.random_range(0.5..2.0));
    let mut t = 0.0;
    let times: Vec<f64> = (0..=steps)
        .map(|k| {
            if k > 0 {
                t += rng.random_range(0.15..0.35);
            }
            t
        })
        .collect();
    let inputs = times.iter().map(|t| vec![(w_u * t).sin() + 0.3 * t]).collect();
    let targets = times.iter().map(|t| vec![0.5 * (w_y * t).cos()]).collect();
    Sequence::new(times, inputs, targets)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentError {
    pub segment: String,
    /// Discrete backprop against central differences.
    pub fd_rel: f64,
    /// Hybrid adjoint against discrete backprop, at 1x, 2x and 4x substeps.
    pub adjoint_rel: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub index: usize,
    pub kind: ModelKind,
    pub seed: u64,
    pub segments: Vec<SegmentError>,
    pub worst_fd_rel: f64,
    /// Whole-vector adjoint discrepancy at 1x, 2x and 4x substeps.
    pub adjoint_rel: [f64; 3],
    /// Shrink factors 1x→2x and 2x→4x; `None` once both sides are round-off.
    pub ratios: [Option<f64>; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubstepRow {
    pub substeps: usize,
    pub worst_adjoint_rel: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub config: GradCheckConfig,
    pub cases: Vec<CaseReport>,
    pub worst_fd_rel: f64,
    pub worst_adjoint_rel: f64,
    pub min_ratio: Option<f64>,
    pub substep_table: Vec<SubstepRow>,
    /// One line per violated tolerance, naming the model and segment.
    pub failures: Vec<String>,
    pub passed: bool,
}

fn case(cfg: &GradCheckConfig, index: usize) -> Result<CaseReport> {
    let kind = ModelKind::ALL[index % ModelKind::ALL.len()];
    let seed = cfg.seed.wrapping_mul(1000).wrapping_add(index as u64);
    let base = cfg.model(kind, cfg.substeps);
    let params = randomized_params(&base, seed)?;
    let seq = random_sequence(cfg.steps, seed ^ 0x5E05)?;

    let discrete = discrete_backprop_grad(&base, &params, &seq)?.grads.flatten();
    let fd = finite_diff_grad(&base, &params, &seq, cfg.fd_step)?.grads.flatten();
    let mut adjoint = Vec::with_capacity(3);
    let mut reference = Vec::with_capacity(3);
    for level in 0..3 {
        let c = cfg.model(kind, cfg.substeps << level);
        let d = if level == 0 { discrete.clone() } else { discrete_backprop_grad(&c, &params, &seq)?.grads.flatten() };
        adjoint.push(hybrid_adjoint_backward(&c, &params, &seq)?.grads.flatten());
        reference.push(d);
    }

    let segments = base
        .param_segments()?
        .into_iter()
        .map(|(segment, r)| SegmentError {
            fd_rel: relative_error(&discrete[r.clone()], &fd[r.clone()], 1e-12),
            adjoint_rel: [0, 1, 2].map(|l| relative_error(&adjoint[l][r.clone()], &reference[l][r.clone()], 1e-12)),
            segment,
        })
        .collect::<Vec<_>>();
    let adjoint_rel = [0, 1, 2].map(|l| relative_error(&adjoint[l], &reference[l], 1e-12));
    let ratios = [0, 1].map(|l| {
        let (a, b) = (adjoint_rel[l], adjoint_rel[l + 1]);
        (a > ROUNDOFF_FLOOR || b > ROUNDOFF_FLOOR).then(|| a / b.max(f64::MIN_POSITIVE))
    });
    Ok(CaseReport {
        index,
        kind,
        seed,
        worst_fd_rel: segments.iter().map(|s| s.fd_rel).fold(0.0, f64::max),
        segments,
        adjoint_rel,
        ratios,
    })
}

/// Run the suite; tolerance violations are reported, not returned as errors.
pub fn run_gradcheck(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    cfg.validate()?;
    let cases = (0..cfg.models).map(|i| case(cfg, i)).collect::<Result<Vec<_>>>()?;
    let mut failures = Vec::new();
    for c in &cases {
        for s in &c.segments {
            if !(s.fd_rel <= cfg.fd_tolerance) {
                failures.push(format!(
                    "model {} ({}): segment `{}` discrete vs finite-difference {:.3e} > {:.0e}",
                    c.index, c.kind, s.segment, s.fd_rel, cfg.fd_tolerance
                ));
            }
            if !(s.adjoint_rel[0] <= cfg.adjoint_tolerance) {
                failures.push(format!(
                    "model {} ({}): segment `{}` adjoint vs discrete {:.3e} > {:.0e}",
                    c.index, c.kind, s.segment, s.adjoint_rel[0], cfg.adjoint_tolerance
                ));
            }
        }
        if let Some(r) = c.ratios[0] {
            if !(r >= cfg.min_ratio) {
                failures.push(format!(
                    "model {} ({}): adjoint discrepancy shrank {r:.2}x on doubling {} substeps (< {})",
                    c.index, c.kind, cfg.substeps, cfg.min_ratio
                ));
            }
        }
    }
    let worst = |l: usize| cases.iter().map(|c| c.adjoint_rel[l]).fold(0.0, f64::max);
    let substep_table = (0..3)
        .map(|l| SubstepRow { substeps: cfg.substeps << l, worst_adjoint_rel: worst(l) })
        .collect();
    let min_ratio = cases.iter().filter_map(|c| c.ratios[0]).reduce(f64::min);
    Ok(GradCheckReport {
        config: cfg.clone(),
        worst_fd_rel: cases.iter().map(|c| c.worst_fd_rel).fold(0.0, f64::max),
        worst_adjoint_rel: worst(0),
        min_ratio,
        substep_table,
        passed: failures.is_empty(),
        failures,
        cases,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes_and_is_reproducible() {
        let cfg = GradCheckConfig { models: 4, ..Default::default() };
        let a = run_gradcheck(&cfg).unwrap();
        assert!(a.passed, "{:#?}", a.failures);
        assert_eq!(a.cases.len(), 4);
        let b = run_gradcheck(&cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tight_tolerance_names_segments() {
        let cfg = GradCheckConfig { models: 1, adjoint_tolerance: 1e-14, ..Default::default() };
        let r = run_gradcheck(&cfg).unwrap();
        assert!(!r.passed);
        assert!(r.failures.iter().any(|f| f.contains("ctrnn.A")), "{:?}", r.failures);
    }
}
