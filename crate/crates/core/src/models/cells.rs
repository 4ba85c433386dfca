//! The discrete recurrent update and the input-aware readout head.

use crate::error::{Error, Result};
use crate::linalg::{outer_acc, MatRef};
use crate::nn::{Mlp, MlpSpec, MlpTape};

/// Vanilla tanh recurrent cell `x = tanh(W_h x' + W_u u + b)`, borrowed from
/// a flat `[W_h | W_u | b]` block.
#[derive(Debug, Clone, Copy)]
pub struct RnnCellParams<'a> {
    pub n: usize,
    pub m: usize,
    values: &'a [f64],
}

impl<'a> RnnCellParams<'a> {
    pub fn new(n: usize, m: usize, values: &'a [f64]) -> Result<Self> {
        let expected = n * n + n * m + n;
        if values.len() != expected {
            return Err(Error::dim("rnn cell parameters", expected, values.len()));
        }
        Ok(Self { n, m, values })
    }

    pub fn w_h(&self) -> MatRef<'a> {
        MatRef::new(self.n, self.n, &self.values[..self.n * self.n])
    }

    pub fn w_u(&self) -> MatRef<'a> {
        let s = self.n * self.n;
        MatRef::new(self.n, self.m, &self.values[s..s + self.n * self.m])
    }

    pub fn bias(&self) -> &'a [f64] {
        &self.values[self.n * self.n + self.n * self.m..]
    }

    fn check(&self, x_pre: &[f64], u: &[f64]) -> Result<()> {
        if x_pre.len() != self.n {
            return Err(Error::dim("rnn cell state", self.n, x_pre.len()));
        }
        if u.len() != self.m {
            return Err(Error::dim("rnn cell input", self.m, u.len()));
        }
        Ok(())
    }

    pub fn forward(&self, x_pre: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        self.check(x_pre, u)?;
        let mut z = self.bias().to_vec();
        self.w_h().matvec_acc(x_pre, &mut z);
        self.w_u().matvec_acc(u, &mut z);
        z.iter_mut().for_each(|v| *v = v.tanh());
        Ok(z)
    }

    /// Given the cell output `x` (from [`forward`](Self::forward)) and a
    /// cotangent `a` on it, accumulate `aᵀ ∂x/∂x'` into `grad_pre` and
    /// `aᵀ ∂x/∂φ` into `grad_params`.
    pub fn vjp_acc(
        &self,
        x_pre: &[f64],
        u: &[f64],
        x: &[f64],
        a: &[f64],
        grad_pre: &mut [f64],
        grad_params: &mut [f64],
    ) -> Result<()> {
        self.check(x_pre, u)?;
        if grad_params.len() != self.values.len() {
            return Err(Error::dim("rnn cell gradient", self.values.len(), grad_params.len()));
        }
        let dz: Vec<f64> = a.iter().zip(x).map(|(ai, xi)| ai * (1.0 - xi * xi)).collect();
        self.w_h().matvec_t_acc(&dz, grad_pre);
        let (n, m) = (self.n, self.m);
        outer_acc(&dz, x_pre, 1.0, &mut grad_params[..n * n]);
        outer_acc(&dz, u, 1.0, &mut grad_params[n * n..n * n + n * m]);
        for (g, d) in grad_params[n * n + n * m..].iter_mut().zip(&dz) {
            *g += d;
        }
        Ok(())
    }
}

/// One discrete recurrent update.
pub fn rnn_cell(params: &RnnCellParams<'_>, x_pre: &[f64], u: &[f64]) -> Result<Vec<f64>> {
    params.forward(x_pre, u)
}

/// Two-layer readout `W2 · tanh(W1 [x; u (; du/dt)] + b1) + b2`.
#[derive(Debug, Clone, Copy)]
pub struct ReadoutParams<'a> {
    pub mlp: Mlp<'a>,
    /// Whether the input derivative is part of the readout input.
    pub with_derivative: bool,
}

impl<'a> ReadoutParams<'a> {
    pub fn new(spec: &'a MlpSpec, values: &'a [f64], with_derivative: bool) -> Result<Self> {
        Ok(Self {
            mlp: Mlp::new(spec, values)?,
            with_derivative,
        })
    }

    pub fn assemble_input(&self, x: &[f64], u: &[f64], udot: Option<&[f64]>) -> Result<Vec<f64>> {
        match (self.with_derivative, udot) {
            (true, None) => Err(Error::InvalidInput(
                "controlled models need the input derivative in the readout".into(),
            )),
            (false, Some(_)) => Err(Error::InvalidInput(
                "input derivative given to a readout that does not use it".into(),
            )),
            _ => {
                let mut v = Vec::with_capacity(self.mlp.spec.input_dim());
                v.extend_from_slice(x);
                v.extend_from_slice(u);
                if let Some(d) = udot {
                    v.extend_from_slice(d);
                }
                if v.len() != self.mlp.spec.input_dim() {
                    return Err(Error::dim("readout input", self.mlp.spec.input_dim(), v.len()));
                }
                Ok(v)
            }
        }
    }

    pub fn forward(&self, x: &[f64], u: &[f64], udot: Option<&[f64]>) -> Result<Vec<f64>> {
        let input = self.assemble_input(x, u, udot)?;
        self.mlp.forward(&input)
    }

    /// Accumulate `cotᵀ ∂y/∂x` (state part only) and `cotᵀ ∂y/∂ψ`.
    pub fn vjp_acc(
        &self,
        x: &[f64],
        u: &[f64],
        udot: Option<&[f64]>,
        cot: &[f64],
        grad_x: &mut [f64],
        grad_params: &mut [f64],
    ) -> Result<()> {
        let input = self.assemble_input(x, u, udot)?;
        let mut tape = MlpTape::default();
        self.mlp.forward_tape(&input, &mut tape)?;
        let mut g_in = vec![0.0; input.len()];
        self.mlp
            .vjp_acc(&tape, cot, 1.0, Some(&mut g_in), Some(grad_params))?;
        for (g, v) in grad_x.iter_mut().zip(&g_in[..x.len()]) {
            *g += v;
        }
        Ok(())
    }
}

/// Evaluate the readout head.
pub fn readout(
    params: &ReadoutParams<'_>,
    x: &[f64],
    u: &[f64],
    udot: Option<&[f64]>,
) -> Result<Vec<f64>> {
    params.forward(x, u, udot)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::relative_error;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn zero_cell_outputs_zero() {
        let v = vec![0.0; 3 * 3 + 3 * 2 + 3];
        let cell = RnnCellParams::new(3, 2, &v).unwrap();
        assert_eq!(rnn_cell(&cell, &[1.0, -4.0, 2.0], &[7.0, 1.0]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn bias_saturates() {
        let mut v = vec![0.0; 2 * 2 + 2 + 2];
        v[6] = 5.0;
        v[7] = 5.0;
        let cell = RnnCellParams::new(2, 1, &v).unwrap();
        let out = rnn_cell(&cell, &[3.0, -3.0], &[1.0]).unwrap();
        assert!(out.iter().all(|o| (o - 1.0).abs() < 1e-4));
    }

    #[test]
    fn cell_matches_independent_arithmetic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (n, m) = (4, 2);
        let v = rand_vec(&mut rng, n * n + n * m + n);
        let x = rand_vec(&mut rng, n);
        let u = rand_vec(&mut rng, m);
        let cell = RnnCellParams::new(n, m, &v).unwrap();
        let got = rnn_cell(&cell, &x, &u).unwrap();
        for r in 0..n {
            let mut z = v[n * n + n * m + r];
            for c in 0..n {
                z += v[r * n + c] * x[c];
            }
            for c in 0..m {
                z += v[n * n + r * m + c] * u[c];
            }
            assert!((got[r] - z.tanh()).abs() <= 1e-15);
        }
    }

    #[test]
    fn cell_vjp_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (n, m) = (3, 2);
        let v = rand_vec(&mut rng, n * n + n * m + n);
        let x = rand_vec(&mut rng, n);
        let u = rand_vec(&mut rng, m);
        let a = rand_vec(&mut rng, n);
        let f = |v: &[f64], x: &[f64]| -> f64 {
            let c = RnnCellParams::new(n, m, v).unwrap();
            c.forward(x, &u).unwrap().iter().zip(&a).map(|(p, q)| p * q).sum()
        };
        let cell = RnnCellParams::new(n, m, &v).unwrap();
        let out = cell.forward(&x, &u).unwrap();
        let mut gx = vec![0.0; n];
        let mut gp = vec![0.0; v.len()];
        cell.vjp_acc(&x, &u, &out, &a, &mut gx, &mut gp).unwrap();
        let h = 1e-6;
        let fdp: Vec<f64> = (0..v.len())
            .map(|i| {
                let (mut p, mut q) = (v.clone(), v.clone());
                p[i] += h;
                q[i] -= h;
                (f(&p, &x) - f(&q, &x)) / (2.0 * h)
            })
            .collect();
        let fdx: Vec<f64> = (0..n)
            .map(|i| {
                let (mut p, mut q) = (x.clone(), x.clone());
                p[i] += h;
                q[i] -= h;
                (f(&v, &p) - f(&v, &q)) / (2.0 * h)
            })
            .collect();
        assert!(relative_error(&gp, &fdp, 1e-12) <= 1e-6);
        assert!(relative_error(&gx, &fdx, 1e-12) <= 1e-6);
    }

    #[test]
    fn readout_bias_only_and_zero() {
        let spec = MlpSpec::new(vec![4, 3, 1]).unwrap();
        let mut v = vec![0.0; spec.param_count()];
        let ro = ReadoutParams::new(&spec, &v, false).unwrap();
        assert_eq!(readout(&ro, &[1.0, 2.0, 3.0], &[4.0], None).unwrap(), vec![0.0]);
        *v.last_mut().unwrap() = 0.75;
        let ro = ReadoutParams::new(&spec, &v, false).unwrap();
        assert_eq!(readout(&ro, &[9.0, -2.0, 3.0], &[-4.0], None).unwrap(), vec![0.75]);
    }

    #[test]
    fn readout_derivative_presence_checked() {
        let spec = MlpSpec::new(vec![3, 2, 1]).unwrap();
        let v = vec![0.1; spec.param_count()];
        let ode = ReadoutParams::new(&spec, &v, false).unwrap();
        assert!(ode.forward(&[0.0, 0.0], &[1.0], Some(&[1.0])).is_err());
        let spec2 = MlpSpec::new(vec![4, 2, 1]).unwrap();
        let v2 = vec![0.1; spec2.param_count()];
        let cde = ReadoutParams::new(&spec2, &v2, true).unwrap();
        assert!(cde.forward(&[0.0, 0.0], &[1.0], None).is_err());
        assert!(cde.forward(&[0.0, 0.0], &[1.0], Some(&[1.0])).is_ok());
    }

    #[test]
    fn readout_vjp_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = MlpSpec::new(vec![5, 4, 2]).unwrap();
        let v = rand_vec(&mut rng, spec.param_count());
        let x = rand_vec(&mut rng, 3);
        let (u, ud) = ([0.3], [-0.8]);
        let cot = rand_vec(&mut rng, 2);
        let f = |v: &[f64]| -> f64 {
            let ro = ReadoutParams::new(&spec, v, true).unwrap();
            ro.forward(&x, &u, Some(&ud)).unwrap().iter().zip(&cot).map(|(a, b)| a * b).sum()
        };
        let ro = ReadoutParams::new(&spec, &v, true).unwrap();
        let mut gx = vec![0.0; 3];
        let mut gp = vec![0.0; v.len()];
        ro.vjp_acc(&x, &u, Some(&ud), &cot, &mut gx, &mut gp).unwrap();
        let h = 1e-6;
        let fd: Vec<f64> = (0..v.len())
            .map(|i| {
                let (mut p, mut q) = (v.clone(), v.clone());
                p[i] += h;
                q[i] -= h;
                (f(&p) - f(&q)) / (2.0 * h)
            })
            .collect();
        assert!(relative_error(&gp, &fd, 1e-12) <= 1e-6);
    }
}
