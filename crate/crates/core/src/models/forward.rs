use crate::dataset::Waveform;
use crate::error::{Error, Result};
use crate::nn::MlpSpec;
use crate::params::ParamStore;
use crate::solve::{rk4_solve, rk4_trajectory, SolveConfig};
use crate::spline::{fit_natural_cubic, CubicSplinePath};

use super::cells::{ReadoutParams, RnnCellParams};
use super::config::{
    ModelConfig, ModelKind, GROUP_CTRNN, GROUP_FIELD, GROUP_READOUT, GROUP_RNN,
};
use super::dynamics::{CdeField, CtrnnField, Dynamics, OdeField};

/// Observation sequence prepared for a model: samples, targets and the
/// spline control path through the inputs.
#[derive(Debug, Clone)]
pub struct Sequence {
    pub times: Vec<f64>,
    /// `inputs[i]` is `u_i` (length `m`), `i = 0..=N`.
    pub inputs: Vec<Vec<f64>>,
    /// `targets[i]` is `y_i` (length `p`), `i = 0..=N`; index 0 is unused by
    /// the loss.
    pub targets: Vec<Vec<f64>>,
    pub path: CubicSplinePath,
    /// `du/dt` of the path at every sample time.
    pub rates: Vec<Vec<f64>>,
}

impl Sequence {
    pub fn new(times: Vec<f64>, inputs: Vec<Vec<f64>>, targets: Vec<Vec<f64>>) -> Result<Self> {
        if inputs.len() != times.len() || targets.len() != times.len() {
            return Err(Error::dim("sequence length", times.len(), inputs.len().min(targets.len())));
        }
        let m = inputs.first().map(Vec::len).unwrap_or(0);
        if m == 0 || inputs.iter().any(|u| u.len() != m) {
            return Err(Error::InvalidInput("inputs must share one non-zero width".into()));
        }
        let channels: Vec<Vec<f64>> = (0..m)
            .map(|c| inputs.iter().map(|u| u[c]).collect())
            .collect();
        let path = fit_natural_cubic(&times, &channels)?;
        let rates = times
            .iter()
            .map(|&t| path.derivative(t))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            times,
            inputs,
            targets,
            path,
            rates,
        })
    }

    pub fn from_waveform(w: &Waveform) -> Result<Self> {
        w.validate()?;
        Self::new(
            w.times.clone(),
            w.u.iter().map(|&v| vec![v]).collect(),
            w.y.iter().map(|&v| vec![v]).collect(),
        )
    }

    /// Number of observation intervals `N`.
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.inputs[0].len()
    }

    pub fn output_dim(&self) -> usize {
        self.targets[0].len()
    }
}

/// Owned layer specs that [`ModelParts`] borrows from.
#[derive(Debug, Clone)]
pub struct ModelSpecs {
    pub field: Option<MlpSpec>,
    pub readout: MlpSpec,
}

impl ModelSpecs {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            field: config.field_spec()?,
            readout: config.readout_spec()?,
        })
    }
}

/// Borrowed, shape-checked view of one model bound to one control path.
pub struct ModelParts<'a> {
    pub config: &'a ModelConfig,
    pub dynamics: Box<dyn Dynamics + Send + Sync + 'a>,
    /// Parameter group holding the continuous-dynamics parameters `θ`.
    pub theta_group: &'static str,
    pub rnn: Option<RnnCellParams<'a>>,
    pub readout: ReadoutParams<'a>,
}

impl<'a> ModelParts<'a> {
    pub fn new(
        config: &'a ModelConfig,
        specs: &'a ModelSpecs,
        params: &'a ParamStore,
        path: &'a CubicSplinePath,
    ) -> Result<Self> {
        config.check_params(params)?;
        if path.channels() != config.input_dim {
            return Err(Error::dim("model input channels", config.input_dim, path.channels()));
        }
        let n = config.hidden;
        let (dynamics, theta_group): (Box<dyn Dynamics + Send + Sync + 'a>, _) = match config.kind
        {
            ModelKind::Ctrnn => (
                Box::new(CtrnnField::new(n, &params.group(GROUP_CTRNN)?.values, path)?),
                GROUP_CTRNN,
            ),
            ModelKind::NodeRnn => (
                Box::new(OdeField::new(
                    specs.field.as_ref().expect("field spec"),
                    &params.group(GROUP_FIELD)?.values,
                )?),
                GROUP_FIELD,
            ),
            ModelKind::Ncde | ModelKind::NcdeRnn => (
                Box::new(CdeField::new(
                    specs.field.as_ref().expect("field spec"),
                    &params.group(GROUP_FIELD)?.values,
                    path,
                )?),
                GROUP_FIELD,
            ),
        };
        let rnn = if config.kind.has_rnn() {
            Some(RnnCellParams::new(
                n,
                config.input_dim,
                &params.group(GROUP_RNN)?.values,
            )?)
        } else {
            None
        };
        let readout = ReadoutParams::new(
            &specs.readout,
            &params.group(GROUP_READOUT)?.values,
            config.kind.is_cde(),
        )?;
        Ok(Self {
            config,
            dynamics,
            theta_group,
            rnn,
            readout,
        })
    }

    pub fn solve_config(&self) -> SolveConfig {
        SolveConfig {
            substeps: self.config.substeps,
        }
    }

    /// Readout's derivative input at sample `i`, for CDE kinds.
    pub fn rate<'s>(&self, seq: &'s Sequence, i: usize) -> Option<&'s [f64]> {
        self.config.kind.is_cde().then(|| seq.rates[i].as_slice())
    }

    pub fn output(&self, seq: &Sequence, i: usize, x: &[f64]) -> Result<Vec<f64>> {
        self.readout.forward(x, &seq.inputs[i], self.rate(seq, i))
    }
}

/// Everything a gradient pass needs from the forward evaluation.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// `pre[i-1] = x'_i`, the state at `t_i` before the discrete update.
    pub pre: Vec<Vec<f64>>,
    /// `post[i] = x_i`, `i = 0..=N` (`x_0 = 0`).
    pub post: Vec<Vec<f64>>,
    /// `outputs[i-1] = o_i`.
    pub outputs: Vec<Vec<f64>>,
    /// Substep states of every interval, when cached.
    pub trajectories: Option<Vec<Vec<Vec<f64>>>>,
}

/// Run the model over `seq`, optionally caching every RK4 substep state.
pub fn forward_trace(parts: &ModelParts<'_>, seq: &Sequence, cache: bool) -> Result<ForwardTrace> {
    let cfg = parts.solve_config();
    let n_steps = seq.steps();
    let mut x = vec![0.0; parts.config.hidden];
    let mut trace = ForwardTrace {
        pre: Vec::with_capacity(n_steps),
        post: Vec::with_capacity(n_steps + 1),
        outputs: Vec::with_capacity(n_steps),
        trajectories: cache.then(|| Vec::with_capacity(n_steps)),
    };
    trace.post.push(x.clone());
    for i in 1..=n_steps {
        let (t0, t1) = (seq.times[i - 1], seq.times[i]);
        let x_pre = if let Some(trajs) = trace.trajectories.as_mut() {
            let traj = rk4_trajectory(parts.dynamics.as_ref(), &x, t0, t1, &cfg)?;
            let end = traj.last().unwrap().clone();
            trajs.push(traj);
            end
        } else {
            rk4_solve(parts.dynamics.as_ref(), &x, t0, t1, &cfg)?
        };
        x = match &parts.rnn {
            Some(cell) => cell.forward(&x_pre, &seq.inputs[i])?,
            None => x_pre.clone(),
        };
        trace.outputs.push(parts.output(seq, i, &x)?);
        trace.pre.push(x_pre);
        trace.post.push(x.clone());
    }
    Ok(trace)
}

/// Model outputs `o_1..o_N` and the final hidden state.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    pub outputs: Vec<Vec<f64>>,
    pub final_state: Vec<f64>,
}

pub fn forward_sequence(
    config: &ModelConfig,
    params: &ParamStore,
    seq: &Sequence,
) -> Result<ModelOutput> {
    let specs = ModelSpecs::new(config)?;
    let parts = ModelParts::new(config, &specs, params, &seq.path)?;
    let mut trace = forward_trace(&parts, seq, false)?;
    Ok(ModelOutput {
        outputs: std::mem::take(&mut trace.outputs),
        final_state: trace.post.pop().unwrap(),
    })
}

/// Evaluate a model on a single-channel waveform; outputs align with samples
/// `1..=N` (the first sample only seeds the state and the control path).
pub fn model_forward(
    config: &ModelConfig,
    params: &ParamStore,
    waveform: &Waveform,
) -> Result<ModelOutput> {
    if config.input_dim != 1 || config.output_dim != 1 {
        return Err(Error::InvalidInput(
            "waveforms carry one input and one output channel".into(),
        ));
    }
    forward_sequence(config, params, &Sequence::from_waveform(waveform)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::config::init_params;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn waveform(n: usize, seed: u64) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let times: Vec<f64> = (0..n).map(|k| k as f64 * 0.2).collect();
        let u: Vec<f64> = times.iter().map(|t| (2.0 * t).sin() + 0.1 * rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = u.iter().map(|v| 0.5 * v).collect();
        Waveform::new("w", times, u, y, 1.0, 1.0).unwrap()
    }

    fn small(kind: ModelKind) -> ModelConfig {
        ModelConfig {
            hidden: 3,
            field_hidden: vec![5],
            readout_hidden: 4,
            ..ModelConfig::new(kind)
        }
    }

    /// Plain discrete RNN + readout, written directly from the cell equations.
    fn discrete_rnn(config: &ModelConfig, params: &ParamStore, w: &Waveform) -> Vec<f64> {
        let specs = ModelSpecs::new(config).unwrap();
        let seq = Sequence::from_waveform(w).unwrap();
        let parts = ModelParts::new(config, &specs, params, &seq.path).unwrap();
        let cell = parts.rnn.unwrap();
        let mut x = vec![0.0; config.hidden];
        let mut out = Vec::new();
        for i in 1..seq.times.len() {
            x = cell.forward(&x, &seq.inputs[i]).unwrap();
            out.push(parts.output(&seq, i, &x).unwrap()[0]);
        }
        out
    }

    #[test]
    fn zero_field_reduces_to_discrete_rnn() {
        let w = waveform(12, 1);
        for kind in [ModelKind::NodeRnn, ModelKind::NcdeRnn] {
            let c = small(kind);
            let mut p = init_params(&c, 3).unwrap();
            p.group_mut(GROUP_FIELD).unwrap().values.fill(0.0);
            let got = model_forward(&c, &p, &w).unwrap();
            let expect = discrete_rnn(&c, &p, &w);
            let bits: Vec<u64> = got.outputs.iter().map(|o| o[0].to_bits()).collect();
            assert_eq!(bits, expect.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }
    }

    #[test]
    fn constant_input_freezes_cde_state() {
        let times: Vec<f64> = (0..6).map(|k| k as f64 * 0.3).collect();
        let w = Waveform::new("c", times, vec![0.4; 6], vec![0.0; 6], 0.0, 1.0).unwrap();
        let c = small(ModelKind::Ncde);
        let p = init_params(&c, 5).unwrap();
        let out = model_forward(&c, &p, &w).unwrap();
        assert!(out.final_state.iter().all(|v| *v == 0.0));

        let c = small(ModelKind::NcdeRnn);
        let p = init_params(&c, 5).unwrap();
        let specs = ModelSpecs::new(&c).unwrap();
        let seq = Sequence::from_waveform(&w).unwrap();
        let parts = ModelParts::new(&c, &specs, &p, &seq.path).unwrap();
        let tr = forward_trace(&parts, &seq, false).unwrap();
        for i in 1..tr.post.len() {
            assert_eq!(tr.pre[i - 1], tr.post[i - 1]);
        }
    }

    #[test]
    fn ctrnn_pure_decay() {
        let times: Vec<f64> = (0..9).map(|k| k as f64 * 0.25).collect();
        let u: Vec<f64> = times.iter().map(|t| t.cos()).collect();
        let seq = Sequence::new(
            times.clone(),
            u.iter().map(|v| vec![*v]).collect(),
            u.iter().map(|_| vec![0.0]).collect(),
        )
        .unwrap();
        let c = small(ModelKind::Ctrnn);
        let mut p = init_params(&c, 2).unwrap();
        let g = &mut p.group_mut(GROUP_CTRNN).unwrap().values;
        let len = g.len();
        g[..len - 1].fill(0.0);
        g[len - 1] = 0.8;
        let specs = ModelSpecs::new(&c).unwrap();
        let parts = ModelParts::new(&c, &specs, &p, &seq.path).unwrap();
        let x0 = [0.5, -1.0, 2.0];
        let x = crate::solve::rk4_solve(parts.dynamics.as_ref(), &x0, 0.0, 2.0, &SolveConfig::new(40).unwrap()).unwrap();
        for (xi, x0i) in x.iter().zip(x0) {
            assert!((xi - x0i * (-2.0f64 / 0.8).exp()).abs() <= 1e-6);
        }
        // From the x₀ = 0 start the state stays at rest.
        let out = forward_sequence(&c, &p, &seq).unwrap();
        assert!(out.final_state.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn forward_is_deterministic() {
        let w = waveform(10, 4);
        for kind in ModelKind::ALL {
            let c = small(kind);
            let p = init_params(&c, 8).unwrap();
            assert_eq!(model_forward(&c, &p, &w).unwrap(), model_forward(&c, &p, &w).unwrap());
        }
    }

    #[test]
    fn node_rnn_refinement_converges() {
        let w = waveform(16, 6);
        let mut c = small(ModelKind::NodeRnn);
        let mut p = init_params(&c, 9).unwrap();
        p.group_mut(GROUP_FIELD).unwrap().values.iter_mut().for_each(|v| *v *= 2.0);
        let mut prev: Option<Vec<f64>> = None;
        let mut diffs = Vec::new();
        for s in [1, 2, 4, 8] {
            c.substeps = s;
            let o: Vec<f64> = model_forward(&c, &p, &w).unwrap().outputs.iter().map(|v| v[0]).collect();
            if let Some(q) = prev {
                diffs.push(o.iter().zip(&q).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
            }
            prev = Some(o);
        }
        for d in diffs.windows(2) {
            assert!(d[0] / d[1] >= 8.0, "{diffs:?}");
        }
    }

    #[test]
    fn params_mismatch_is_an_error() {
        let w = waveform(5, 1);
        let c = small(ModelKind::NodeRnn);
        let p = init_params(&small(ModelKind::Ncde), 1).unwrap();
        assert!(model_forward(&c, &p, &w).is_err());
    }
}
