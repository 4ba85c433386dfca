//! Parameter gradients of the sequence loss: the hybrid adjoint pass, exact
//! reverse-mode through the RK4 steps, and central finite differences.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{
    forward_trace, Dynamics, ForwardTrace, ModelConfig, ModelParts, ModelSpecs, Sequence,
    GROUP_READOUT, GROUP_RNN,
};
use crate::params::ParamStore;
use crate::solve::{grid_time, rk4_step, rk4_trajectory, Rk4Work, VectorField};

use super::loss::loss_mse;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradMethod {
    /// Continuous adjoint inside each interval, exact backprop through the jumps.
    HybridAdjoint,
    /// Reverse-mode through every RK4 stage of the forward program.
    Discrete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GradOptions {
    pub method: GradMethod,
    /// Keep every forward substep state instead of recomputing per interval.
    pub cache: bool,
}

impl GradOptions {
    pub fn new(method: GradMethod) -> Self {
        Self { method, cache: false }
    }
}

/// Bookkeeping from one backward pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BackwardStats {
    pub intervals: usize,
    /// Intervals whose substep states were recomputed from `x_{i-1}`.
    pub recomputed_intervals: usize,
    /// Most substep states held at once.
    pub peak_live_states: usize,
}

#[derive(Debug, Clone)]
pub struct GradientReport {
    pub loss: f64,
    /// Same groups and layout as the model parameters.
    pub grads: ParamStore,
    pub stats: BackwardStats,
}

impl GradientReport {
    pub fn group(&self, name: &str) -> Result<&[f64]> {
        Ok(&self.grads.group(name)?.values)
    }
}

/// Augmented backward system `[x, a, g]' = [f, -aᵀ∂f/∂x, -aᵀ∂f/∂θ]`.
struct Augmented<'d> {
    dynamics: &'d dyn Dynamics,
    n: usize,
}

impl VectorField for Augmented<'_> {
    fn dim(&self) -> usize {
        2 * self.n + self.dynamics.theta_len()
    }

    fn eval(&self, t: f64, z: &[f64], out: &mut [f64]) -> Result<()> {
        let n = self.n;
        let (x, a) = (&z[..n], &z[n..2 * n]);
        let (dx, rest) = out.split_at_mut(n);
        self.dynamics.eval(t, x, dx)?;
        rest.fill(0.0);
        let (da, dg) = rest.split_at_mut(n);
        self.dynamics.vjp_acc(t, x, a, -1.0, da, dg)
    }
}

fn non_finite(v: &[f64]) -> bool {
    v.iter().any(|x| !x.is_finite())
}

/// Carry the adjoint `a` from `t1` back to `t0` through the augmented system,
/// resetting the state to the forward substep values at every node.
pub(crate) fn adjoint_interval(
    dynamics: &dyn Dynamics,
    states: &[Vec<f64>],
    t0: f64,
    t1: f64,
    a: &mut [f64],
    g_theta: &mut [f64],
) -> Result<()> {
    let n = a.len();
    let s = states.len() - 1;
    let aug = Augmented { dynamics, n };
    let mut z = vec![0.0; aug.dim()];
    z[..n].copy_from_slice(&states[s]);
    z[n..2 * n].copy_from_slice(a);
    let mut work = Rk4Work::new(z.len());
    for k in (0..s).rev() {
        let (ta, tb) = (grid_time(t0, t1, k, s), grid_time(t0, t1, k + 1, s));
        rk4_step(&aug, tb, ta, &mut z, &mut work)?;
        if non_finite(&z[n..]) {
            return Err(Error::Divergence { substep: k, t: ta });
        }
        z[..n].copy_from_slice(&states[k]);
    }
    a.copy_from_slice(&z[n..2 * n]);
    for (g, v) in g_theta.iter_mut().zip(&z[2 * n..]) {
        *g += v;
    }
    Ok(())
}

/// Exact reverse pass through the RK4 substeps of one interval; `xbar` enters
/// as the cotangent of the interval's end state and leaves as that of its start.
pub(crate) fn discrete_interval(
    dynamics: &dyn Dynamics,
    states: &[Vec<f64>],
    t0: f64,
    t1: f64,
    xbar: &mut [f64],
    g_theta: &mut [f64],
) -> Result<()> {
    let n = xbar.len();
    let s = states.len() - 1;
    let (mut k1, mut k2, mut k3) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let (mut y2, mut y3, mut y4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut ybar = vec![0.0; n];
    for k in (0..s).rev() {
        let (t, tn) = (grid_time(t0, t1, k, s), grid_time(t0, t1, k + 1, s));
        let h = tn - t;
        let th = t + 0.5 * h;
        let x = &states[k];
        dynamics.eval(t, x, &mut k1)?;
        for i in 0..n {
            y2[i] = x[i] + 0.5 * h * k1[i];
        }
        dynamics.eval(th, &y2, &mut k2)?;
        for i in 0..n {
            y3[i] = x[i] + 0.5 * h * k2[i];
        }
        dynamics.eval(th, &y3, &mut k3)?;
        for i in 0..n {
            y4[i] = x[i] + h * k3[i];
        }

        let out_bar = xbar.to_vec();
        let mut kb: [Vec<f64>; 4] = [
            out_bar.iter().map(|v| h / 6.0 * v).collect(),
            out_bar.iter().map(|v| h / 3.0 * v).collect(),
            out_bar.iter().map(|v| h / 3.0 * v).collect(),
            out_bar.iter().map(|v| h / 6.0 * v).collect(),
        ];
        // Stage 4 down to stage 1; each feeds its predecessor's k with weight c.
        let stages: [(f64, &[f64], f64); 4] = [(t, x, 0.0), (th, &y2, 0.5 * h), (th, &y3, 0.5 * h), (tn, &y4, h)];
        for j in (0..4).rev() {
            let (ts, ys, c) = stages[j];
            ybar.fill(0.0);
            dynamics.vjp_acc(ts, ys, &kb[j], 1.0, &mut ybar, g_theta)?;
            for i in 0..n {
                xbar[i] += ybar[i];
            }
            if j > 0 {
                for i in 0..n {
                    kb[j - 1][i] += c * ybar[i];
                }
            }
        }
        if non_finite(xbar) {
            return Err(Error::Divergence { substep: k, t });
        }
    }
    Ok(())
}

/// Gradients of a loss whose per-step cotangents `∂L/∂o_i` are `cots[i-1]`.
pub fn backward_pass(
    parts: &ModelParts<'_>,
    seq: &Sequence,
    trace: &ForwardTrace,
    cots: &[Vec<f64>],
    options: GradOptions,
    grads: &mut ParamStore,
) -> Result<BackwardStats> {
    let steps = seq.steps();
    if cots.len() != steps {
        return Err(Error::dim("loss cotangents", steps, cots.len()));
    }
    let cfg = parts.solve_config();
    let dynamics: &dyn Dynamics = parts.dynamics.as_ref();
    let n = parts.config.hidden;
    let mut g_theta = vec![0.0; dynamics.theta_len()];
    let mut g_rnn = vec![0.0; if parts.rnn.is_some() { parts.config.rnn_param_count() } else { 0 }];
    let mut g_read = vec![0.0; parts.readout.mlp.params.len()];
    let mut stats = BackwardStats {
        intervals: steps,
        ..BackwardStats::default()
    };
    if let Some(trajs) = &trace.trajectories {
        stats.peak_live_states = trajs.iter().map(Vec::len).sum();
    }

    let mut a = vec![0.0; n];
    let mut a_pre = vec![0.0; n];
    for i in (1..=steps).rev() {
        let x = &trace.post[i];
        let u = &seq.inputs[i];
        parts
            .readout
            .vjp_acc(x, u, parts.rate(seq, i), &cots[i - 1], &mut a, &mut g_read)?;
        match &parts.rnn {
            Some(cell) => {
                a_pre.fill(0.0);
                cell.vjp_acc(&trace.pre[i - 1], u, x, &a, &mut a_pre, &mut g_rnn)?;
            }
            None => a_pre.copy_from_slice(&a),
        }

        let (t0, t1) = (seq.times[i - 1], seq.times[i]);
        let recomputed;
        let states: &[Vec<f64>] = match &trace.trajectories {
            Some(trajs) => &trajs[i - 1],
            None => {
                recomputed = rk4_trajectory(dynamics, &trace.post[i - 1], t0, t1, &cfg)?;
                stats.recomputed_intervals += 1;
                stats.peak_live_states = stats.peak_live_states.max(recomputed.len());
                &recomputed
            }
        };
        match options.method {
            GradMethod::HybridAdjoint => adjoint_interval(dynamics, states, t0, t1, &mut a_pre, &mut g_theta)?,
            GradMethod::Discrete => discrete_interval(dynamics, states, t0, t1, &mut a_pre, &mut g_theta)?,
        }
        std::mem::swap(&mut a, &mut a_pre);
    }

    for (name, g) in [(parts.theta_group, g_theta), (GROUP_RNN, g_rnn), (GROUP_READOUT, g_read)] {
        if g.is_empty() && name == GROUP_RNN {
            continue;
        }
        if non_finite(&g) {
            return Err(Error::NonFiniteGradient { group: name.into() });
        }
        let dst = &mut grads.group_mut(name)?.values;
        if dst.len() != g.len() {
            return Err(Error::dim(format!("gradient group `{name}`"), dst.len(), g.len()));
        }
        dst.copy_from_slice(&g);
    }
    Ok(stats)
}

/// Loss value and per-step cotangents for outputs `o_1..o_N` against `y_1..y_N`.
pub type LossFn<'f> = dyn Fn(&[Vec<f64>], &[Vec<f64>]) -> Result<(f64, Vec<Vec<f64>>)> + 'f;

/// Forward pass, loss and backward pass for an arbitrary step-wise loss.
pub fn gradient_for_loss(
    config: &ModelConfig,
    params: &ParamStore,
    seq: &Sequence,
    options: GradOptions,
    loss: &LossFn<'_>,
) -> Result<GradientReport> {
    let specs = ModelSpecs::new(config)?;
    let parts = ModelParts::new(config, &specs, params, &seq.path)?;
    let trace = forward_trace(&parts, seq, options.cache)?;
    let (value, cots) = loss(&trace.outputs, &seq.targets[1..])?;
    if !value.is_finite() {
        return Err(Error::Divergence { substep: 0, t: seq.times[seq.steps()] });
    }
    let mut grads = params.zeros_like();
    let stats = backward_pass(&parts, seq, &trace, &cots, options, &mut grads)?;
    Ok(GradientReport { loss: value, grads, stats })
}

/// MSE gradient with the chosen method.
pub fn gradient(
    config: &ModelConfig,
    params: &ParamStore,
    seq: &Sequence,
    options: GradOptions,
) -> Result<GradientReport> {
    gradient_for_loss(config, params, seq, options, &loss_mse)
}

/// Hybrid adjoint gradient, recomputing interval trajectories on the way back.
pub fn hybrid_adjoint_backward(
    config: &ModelConfig,
    params: &ParamStore,
    seq: &Sequence,
) -> Result<GradientReport> {
    gradient(config, params, seq, GradOptions::new(GradMethod::HybridAdjoint))
}

/// Exact gradient of the discretized forward program.
pub fn discrete_backprop_grad(
    config: &ModelConfig,
    params: &ParamStore,
    seq: &Sequence,
) -> Result<GradientReport> {
    gradient(config, params, seq, GradOptions::new(GradMethod::Discrete))
}

/// MSE of the model on one sequence.
pub fn sequence_loss(config: &ModelConfig, params: &ParamStore, seq: &Sequence) -> Result<f64> {
    let specs = ModelSpecs::new(config)?;
    let parts = ModelParts::new(config, &specs, params, &seq.path)?;
    let trace = forward_trace(&parts, seq, false)?;
    Ok(loss_mse(&trace.outputs, &seq.targets[1..])?.0)
}

/// Central differences `(f(w + h e_k) - f(w - h e_k)) / 2h` for every coordinate.
pub fn central_diff<F>(f: F, w: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::InvalidInput(format!("finite-difference step must be positive, got {step}")));
    }
    (0..w.len())
        .into_par_iter()
        .map(|k| {
            let mut p = w.to_vec();
            p[k] = w[k] + step;
            let fp = f(&p)?;
            p[k] = w[k] - step;
            let fm = f(&p)?;
            Ok((fp - fm) / (2.0 * step))
        })
        .collect()
}

/// Finite-difference gradient of the MSE over every parameter.
pub fn finite_diff_grad(
    config: &ModelConfig,
    params: &ParamStore,
    seq: &Sequence,
    step: f64,
) -> Result<GradientReport> {
    let loss = sequence_loss(config, params, seq)?;
    let flat = params.flatten();
    let g = central_diff(
        |w| sequence_loss(config, &params.unflatten(w)?, seq),
        &flat,
        step,
    )?;
    Ok(GradientReport {
        loss,
        grads: params.unflatten(&g)?,
        stats: BackwardStats::default(),
    })
}
