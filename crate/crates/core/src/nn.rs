//! Small multilayer perceptron: tanh on hidden layers, identity on the output
//! layer, with a hand-written reverse pass.
//!
//! Flat parameter layout for widths `[w0, w1, ..., wL]`: for every layer `l`
//! the weight block `W_l` (`w_{l+1} × w_l`, row-major) followed by the bias
//! `b_l` (`w_{l+1}`).

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{outer_acc, MatRef};
use crate::params::ParamGroup;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    widths: Vec<usize>,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "an MLP needs at least two widths, got {widths:?}"
            )));
        }
        if widths.contains(&0) {
            return Err(Error::InvalidInput(format!(
                "MLP widths must be >= 1, got {widths:?}"
            )));
        }
        Ok(Self { widths })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.widths
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    /// `(weight range, bias range)` of every layer in the flat layout.
    pub fn layer_ranges(&self) -> Vec<(Range<usize>, Range<usize>)> {
        let mut offset = 0;
        self.widths
            .windows(2)
            .map(|w| {
                let wr = offset..offset + w[0] * w[1];
                let br = wr.end..wr.end + w[1];
                offset = br.end;
                (wr, br)
            })
            .collect()
    }

    fn check_params(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::dim("mlp parameters", self.param_count(), params.len()));
        }
        Ok(())
    }
}

/// An MLP spec paired with a borrowed parameter vector.
#[derive(Debug, Clone, Copy)]
pub struct Mlp<'a> {
    pub spec: &'a MlpSpec,
    pub params: &'a [f64],
}

/// Post-activation values of every layer from one forward pass.
#[derive(Debug, Clone, Default)]
pub struct MlpTape {
    acts: Vec<Vec<f64>>,
}

impl MlpTape {
    pub fn output(&self) -> &[f64] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

impl<'a> Mlp<'a> {
    pub fn new(spec: &'a MlpSpec, params: &'a [f64]) -> Result<Self> {
        spec.check_params(params)?;
        Ok(Self { spec, params })
    }

    fn layer(&self, l: usize, ranges: &(Range<usize>, Range<usize>)) -> (MatRef<'a>, &'a [f64]) {
        let w = &self.spec.widths;
        (
            MatRef::new(w[l + 1], w[l], &self.params[ranges.0.clone()]),
            &self.params[ranges.1.clone()],
        )
    }

    /// Forward pass that keeps every layer's activation for a later reverse
    /// pass.
    pub fn forward_tape(&self, x: &[f64], tape: &mut MlpTape) -> Result<()> {
        if x.len() != self.spec.input_dim() {
            return Err(Error::dim("mlp layer 0 input", self.spec.input_dim(), x.len()));
        }
        let nl = self.spec.num_layers();
        tape.acts.resize(nl + 1, Vec::new());
        tape.acts[0].clear();
        tape.acts[0].extend_from_slice(x);
        for (l, ranges) in self.spec.layer_ranges().iter().enumerate() {
            let (w, b) = self.layer(l, ranges);
            let (prev, next) = tape.acts.split_at_mut(l + 1);
            let out = &mut next[0];
            out.clear();
            out.extend_from_slice(b);
            w.matvec_acc(&prev[l], out);
            if l + 1 < nl {
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut tape = MlpTape::default();
        self.forward_tape(x, &mut tape)?;
        Ok(tape.acts.pop().unwrap())
    }

    /// Reverse pass over a recorded tape: `grad_x += scale · cotᵀ ∂y/∂x` and
    /// `grad_params += scale · cotᵀ ∂y/∂p`. Either accumulator may be skipped.
    pub fn vjp_acc(
        &self,
        tape: &MlpTape,
        cot: &[f64],
        scale: f64,
        grad_x: Option<&mut [f64]>,
        mut grad_params: Option<&mut [f64]>,
    ) -> Result<()> {
        if cot.len() != self.spec.output_dim() {
            return Err(Error::dim("mlp cotangent", self.spec.output_dim(), cot.len()));
        }
        if let Some(gp) = grad_params.as_deref() {
            self.spec.check_params(gp)?;
        }
        let ranges = self.spec.layer_ranges();
        let nl = self.spec.num_layers();
        let mut delta = cot.to_vec();
        let mut grad_x = grad_x;
        for l in (0..nl).rev() {
            let (w, _) = self.layer(l, &ranges[l]);
            let input = &tape.acts[l];
            if let Some(gp) = grad_params.as_deref_mut() {
                outer_acc(&delta, input, scale, &mut gp[ranges[l].0.clone()]);
                for (g, d) in gp[ranges[l].1.clone()].iter_mut().zip(&delta) {
                    *g += scale * d;
                }
            }
            if l > 0 {
                let mut prev = vec![0.0; input.len()];
                w.matvec_t_acc(&delta, &mut prev);
                for (p, a) in prev.iter_mut().zip(input) {
                    *p *= 1.0 - a * a;
                }
                delta = prev;
            } else if let Some(gx) = grad_x.as_deref_mut() {
                if gx.len() != input.len() {
                    return Err(Error::dim("mlp grad_x", input.len(), gx.len()));
                }
                let mut tmp = vec![0.0; input.len()];
                w.matvec_t_acc(&delta, &mut tmp);
                for (g, t) in gx.iter_mut().zip(tmp) {
                    *g += scale * t;
                }
            }
        }
        Ok(())
    }
}

/// Evaluate the network at `x`.
pub fn mlp_forward(spec: &MlpSpec, params: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    Mlp::new(spec, params)?.forward(x)
}

/// Vector–Jacobian product: returns `(cotᵀ ∂y/∂x, cotᵀ ∂y/∂params)`.
pub fn mlp_vjp(
    spec: &MlpSpec,
    params: &[f64],
    x: &[f64],
    cotangent: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mlp = Mlp::new(spec, params)?;
    let mut tape = MlpTape::default();
    mlp.forward_tape(x, &mut tape)?;
    let mut gx = vec![0.0; spec.input_dim()];
    let mut gp = vec![0.0; spec.param_count()];
    mlp.vjp_acc(&tape, cotangent, 1.0, Some(&mut gx), Some(&mut gp))?;
    Ok((gx, gp))
}

/// Glorot-uniform weights on `±sqrt(6 / (fan_in + fan_out))`, zero biases.
pub fn param_init(spec: &MlpSpec, seed: u64) -> ParamGroup {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = vec![0.0; spec.param_count()];
    for (l, (wr, _)) in spec.layer_ranges().into_iter().enumerate() {
        let bound = glorot_bound(spec.widths[l], spec.widths[l + 1]);
        for v in &mut values[wr] {
            *v = rng.random_range(-bound..bound);
        }
    }
    ParamGroup::new(spec.widths.clone(), values)
}

pub(crate) fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::relative_error;
    use rand::Rng;

    /// Straightforward re-implementation with nested loops and explicit
    /// indexing, kept separate from the production path.
    fn naive_forward(widths: &[usize], p: &[f64], x: &[f64]) -> Vec<f64> {
        let mut a = x.to_vec();
        let mut off = 0;
        for l in 0..widths.len() - 1 {
            let (fi, fo) = (widths[l], widths[l + 1]);
            let mut z = vec![0.0; fo];
            for r in 0..fo {
                let mut s = p[off + fi * fo + r];
                for c in 0..fi {
                    s += p[off + r * fi + c] * a[c];
                }
                z[r] = if l + 2 < widths.len() { s.tanh() } else { s };
            }
            off += fi * fo + fo;
            a = z;
        }
        a
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn zero_params_give_zero() {
        let spec = MlpSpec::new(vec![3, 5, 2]).unwrap();
        let p = vec![0.0; spec.param_count()];
        assert_eq!(mlp_forward(&spec, &p, &[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_single_layer() {
        let spec = MlpSpec::new(vec![2, 2]).unwrap();
        let p = vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        assert_eq!(mlp_forward(&spec, &p, &[0.3, -0.7]).unwrap(), vec![0.3, -0.7]);
    }

    #[test]
    fn matches_naive_reimplementation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let widths = vec![4, 7, 6, 3];
        let spec = MlpSpec::new(widths.clone()).unwrap();
        for _ in 0..10 {
            let p = random_vec(&mut rng, spec.param_count());
            let x = random_vec(&mut rng, 4);
            let a = mlp_forward(&spec, &p, &x).unwrap();
            let b = naive_forward(&widths, &p, &x);
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() <= 1e-15, "{u} vs {v}");
            }
        }
    }

    #[test]
    fn dimension_errors_name_the_layer() {
        let spec = MlpSpec::new(vec![2, 3]).unwrap();
        let p = vec![0.0; spec.param_count()];
        let err = mlp_forward(&spec, &p, &[1.0]).unwrap_err().to_string();
        assert!(err.contains("layer 0"), "{err}");
        assert!(mlp_forward(&spec, &p[1..], &[1.0, 2.0]).is_err());
        assert!(mlp_vjp(&spec, &p, &[1.0, 2.0], &[1.0]).is_err());
        assert!(MlpSpec::new(vec![3]).is_err());
        assert!(MlpSpec::new(vec![3, 0]).is_err());
    }

    #[test]
    fn zero_cotangent_zero_gradients() {
        let spec = MlpSpec::new(vec![3, 4, 2]).unwrap();
        let p = param_init(&spec, 5).values;
        let (gx, gp) = mlp_vjp(&spec, &p, &[0.1, 0.2, 0.3], &[0.0, 0.0]).unwrap();
        assert!(gx.iter().chain(&gp).all(|v| *v == 0.0));
    }

    #[test]
    fn linear_net_grad_x_is_transpose() {
        let spec = MlpSpec::new(vec![3, 2]).unwrap();
        let mut p = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        p.extend([0.5, -0.5]);
        let (gx, _) = mlp_vjp(&spec, &p, &[9.0, 9.0, 9.0], &[1.0, -1.0]).unwrap();
        assert_eq!(gx, vec![-3.0, -3.0, -3.0]);
    }

    fn fd_check(spec: &MlpSpec, p: &[f64], x: &[f64], cot: &[f64]) -> (f64, f64) {
        let h = 1e-6;
        let scalar = |p: &[f64], x: &[f64]| -> f64 {
            mlp_forward(spec, p, x)
                .unwrap()
                .iter()
                .zip(cot)
                .map(|(a, b)| a * b)
                .sum()
        };
        let (gx, gp) = mlp_vjp(spec, p, x, cot).unwrap();
        let fdx: Vec<f64> = (0..x.len())
            .map(|i| {
                let (mut xp, mut xm) = (x.to_vec(), x.to_vec());
                xp[i] += h;
                xm[i] -= h;
                (scalar(p, &xp) - scalar(p, &xm)) / (2.0 * h)
            })
            .collect();
        let fdp: Vec<f64> = (0..p.len())
            .map(|i| {
                let (mut pp, mut pm) = (p.to_vec(), p.to_vec());
                pp[i] += h;
                pm[i] -= h;
                (scalar(&pp, x) - scalar(&pm, x)) / (2.0 * h)
            })
            .collect();
        (relative_error(&gx, &fdx, 1e-12), relative_error(&gp, &fdp, 1e-12))
    }

    #[test]
    fn vjp_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut worst: f64 = 0.0;
        for _ in 0..20 {
            let depth = rng.random_range(2..5);
            let widths: Vec<usize> = (0..depth).map(|_| rng.random_range(1..7)).collect();
            let spec = MlpSpec::new(widths).unwrap();
            let p = random_vec(&mut rng, spec.param_count());
            let x = random_vec(&mut rng, spec.input_dim());
            let cot = random_vec(&mut rng, spec.output_dim());
            let (ex, ep) = fd_check(&spec, &p, &x, &cot);
            worst = worst.max(ex).max(ep);
        }
        assert!(worst <= 1e-6, "worst relative error {worst:e}");
    }

    #[test]
    fn vjp_is_linear_in_cotangent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = MlpSpec::new(vec![3, 5, 4]).unwrap();
        let p = random_vec(&mut rng, spec.param_count());
        let x = random_vec(&mut rng, 3);
        let c1 = random_vec(&mut rng, 4);
        let c2 = random_vec(&mut rng, 4);
        let (alpha, beta) = (0.7, -1.3);
        let mix: Vec<f64> = c1.iter().zip(&c2).map(|(a, b)| alpha * a + beta * b).collect();
        let (gx1, gp1) = mlp_vjp(&spec, &p, &x, &c1).unwrap();
        let (gx2, gp2) = mlp_vjp(&spec, &p, &x, &c2).unwrap();
        let (gxm, gpm) = mlp_vjp(&spec, &p, &x, &mix).unwrap();
        for (m, (a, b)) in gxm.iter().chain(&gpm).zip(gx1.iter().chain(&gp1).zip(gx2.iter().chain(&gp2))) {
            assert!((m - (alpha * a + beta * b)).abs() <= 1e-14);
        }
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let spec = MlpSpec::new(vec![4, 8]).unwrap();
        let a = param_init(&spec, 99);
        let b = param_init(&spec, 99);
        assert_eq!(a, b);
        assert_eq!(a.len(), 40);
        let bound = (6.0f64 / 12.0).sqrt();
        assert!(a.values[..32].iter().all(|w| w.abs() <= bound));
        assert!(a.values[32..].iter().all(|b| *b == 0.0));
        assert_ne!(param_init(&spec, 100), a);
    }
}
