//! Continuous-time vector fields of the four model kinds, each with its
//! vector–Jacobian product for the gradient passes.

use crate::error::{Error, Result};
use crate::linalg::{outer_acc, MatRef};
use crate::nn::{Mlp, MlpSpec, MlpTape};
use crate::solve::VectorField;
use crate::spline::CubicSplinePath;

/// A parameterized vector field `f(t, x; θ)`.
pub trait Dynamics: VectorField {
    /// Number of parameters in `θ`.
    fn theta_len(&self) -> usize;

    /// `grad_x += scale · aᵀ ∂f/∂x` and `grad_theta += scale · aᵀ ∂f/∂θ`.
    fn vjp_acc(
        &self,
        t: f64,
        x: &[f64],
        a: &[f64],
        scale: f64,
        grad_x: &mut [f64],
        grad_theta: &mut [f64],
    ) -> Result<()>;
}

/// `dx/dt = f_θ(x)`.
#[derive(Debug, Clone, Copy)]
pub struct OdeField<'a> {
    mlp: Mlp<'a>,
}

impl<'a> OdeField<'a> {
    pub fn new(spec: &'a MlpSpec, params: &'a [f64]) -> Result<Self> {
        if spec.input_dim() != spec.output_dim() {
            return Err(Error::dim("ODE field output", spec.input_dim(), spec.output_dim()));
        }
        Ok(Self {
            mlp: Mlp::new(spec, params)?,
        })
    }
}

impl VectorField for OdeField<'_> {
    fn dim(&self) -> usize {
        self.mlp.spec.input_dim()
    }

    fn eval(&self, _t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        out.copy_from_slice(&self.mlp.forward(x)?);
        Ok(())
    }
}

impl Dynamics for OdeField<'_> {
    fn theta_len(&self) -> usize {
        self.mlp.params.len()
    }

    fn vjp_acc(
        &self,
        _t: f64,
        x: &[f64],
        a: &[f64],
        scale: f64,
        grad_x: &mut [f64],
        grad_theta: &mut [f64],
    ) -> Result<()> {
        let mut tape = MlpTape::default();
        self.mlp.forward_tape(x, &mut tape)?;
        self.mlp
            .vjp_acc(&tape, a, scale, Some(grad_x), Some(grad_theta))
    }
}

/// `dx/dt = F_θ(x) · dU/dt`, with the MLP output read row-major as `n × m`.
#[derive(Debug, Clone, Copy)]
pub struct CdeField<'a> {
    mlp: Mlp<'a>,
    m: usize,
    path: &'a CubicSplinePath,
}

impl<'a> CdeField<'a> {
    pub fn new(spec: &'a MlpSpec, params: &'a [f64], path: &'a CubicSplinePath) -> Result<Self> {
        let m = path.channels();
        if spec.output_dim() != spec.input_dim() * m {
            return Err(Error::dim(
                "CDE field output",
                spec.input_dim() * m,
                spec.output_dim(),
            ));
        }
        Ok(Self {
            mlp: Mlp::new(spec, params)?,
            m,
            path,
        })
    }

    fn control_rate(&self, t: f64) -> Result<Vec<f64>> {
        let mut du = vec![0.0; self.m];
        self.path.eval_into(t, None, Some(&mut du), None)?;
        Ok(du)
    }
}

impl VectorField for CdeField<'_> {
    fn dim(&self) -> usize {
        self.mlp.spec.input_dim()
    }

    fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        let du = self.control_rate(t)?;
        let mat = self.mlp.forward(x)?;
        out.fill(0.0);
        MatRef::new(out.len(), self.m, &mat).matvec_acc(&du, out);
        Ok(())
    }
}

impl Dynamics for CdeField<'_> {
    fn theta_len(&self) -> usize {
        self.mlp.params.len()
    }

    fn vjp_acc(
        &self,
        t: f64,
        x: &[f64],
        a: &[f64],
        scale: f64,
        grad_x: &mut [f64],
        grad_theta: &mut [f64],
    ) -> Result<()> {
        let du = self.control_rate(t)?;
        let n = x.len();
        let mut cot = vec![0.0; n * self.m];
        outer_acc(a, &du, 1.0, &mut cot);
        let mut tape = MlpTape::default();
        self.mlp.forward_tape(x, &mut tape)?;
        self.mlp
            .vjp_acc(&tape, &cot, scale, Some(grad_x), Some(grad_theta))
    }
}

/// `dx/dt = −x/τ + tanh(A x + B u(t) + b_u)` with `u(t)` read from the spline
/// path. Parameter block layout: `[A | B | b_u | τ]`.
#[derive(Debug, Clone, Copy)]
pub struct CtrnnField<'a> {
    n: usize,
    m: usize,
    values: &'a [f64],
    path: &'a CubicSplinePath,
}

/// Borrowed view of a CTRNN parameter block.
#[derive(Debug, Clone, Copy)]
pub struct CtrnnParams<'a> {
    pub a: MatRef<'a>,
    pub b: MatRef<'a>,
    pub b_u: &'a [f64],
    pub tau: f64,
}

impl<'a> CtrnnField<'a> {
    pub fn new(n: usize, values: &'a [f64], path: &'a CubicSplinePath) -> Result<Self> {
        let m = path.channels();
        let expected = n * n + n * m + n + 1;
        if values.len() != expected {
            return Err(Error::dim("ctrnn parameters", expected, values.len()));
        }
        let tau = values[expected - 1];
        if !(tau > 0.0) {
            return Err(Error::InvalidInput(format!("CTRNN time constant must be > 0, got {tau}")));
        }
        Ok(Self { n, m, values, path })
    }

    pub fn params(&self) -> CtrnnParams<'a> {
        let (n, m) = (self.n, self.m);
        CtrnnParams {
            a: MatRef::new(n, n, &self.values[..n * n]),
            b: MatRef::new(n, m, &self.values[n * n..n * n + n * m]),
            b_u: &self.values[n * n + n * m..n * n + n * m + n],
            tau: self.values[n * n + n * m + n],
        }
    }

    fn pre_activation(&self, t: f64, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let p = self.params();
        let mut u = vec![0.0; self.m];
        self.path.eval_into(t, Some(&mut u), None, None)?;
        let mut z = p.b_u.to_vec();
        p.a.matvec_acc(x, &mut z);
        p.b.matvec_acc(&u, &mut z);
        Ok((z, u))
    }
}

impl VectorField for CtrnnField<'_> {
    fn dim(&self) -> usize {
        self.n
    }

    fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        let (z, _) = self.pre_activation(t, x)?;
        let tau = self.params().tau;
        for ((o, zi), xi) in out.iter_mut().zip(&z).zip(x) {
            *o = -xi / tau + zi.tanh();
        }
        Ok(())
    }
}

impl Dynamics for CtrnnField<'_> {
    fn theta_len(&self) -> usize {
        self.values.len()
    }

    fn vjp_acc(
        &self,
        t: f64,
        x: &[f64],
        a: &[f64],
        scale: f64,
        grad_x: &mut [f64],
        grad_theta: &mut [f64],
    ) -> Result<()> {
        let (n, m) = (self.n, self.m);
        let p = self.params();
        let (z, u) = self.pre_activation(t, x)?;
        let dz: Vec<f64> = a
            .iter()
            .zip(&z)
            .map(|(ai, zi)| {
                let s = zi.tanh();
                ai * (1.0 - s * s)
            })
            .collect();
        let mut gx = vec![0.0; n];
        p.a.matvec_t_acc(&dz, &mut gx);
        for ((g, gi), ai) in grad_x.iter_mut().zip(&gx).zip(a) {
            *g += scale * (gi - ai / p.tau);
        }
        outer_acc(&dz, x, scale, &mut grad_theta[..n * n]);
        outer_acc(&dz, &u, scale, &mut grad_theta[n * n..n * n + n * m]);
        for (g, d) in grad_theta[n * n + n * m..n * n + n * m + n].iter_mut().zip(&dz) {
            *g += scale * d;
        }
        let ax: f64 = a.iter().zip(x).map(|(ai, xi)| ai * xi).sum();
        grad_theta[n * n + n * m + n] += scale * ax / (p.tau * p.tau);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::relative_error;
    use crate::nn::param_init;
    use crate::spline::fit_natural_cubic;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn path() -> CubicSplinePath {
        let t: Vec<f64> = (0..7).map(|k| k as f64 * 0.5).collect();
        let u1: Vec<f64> = t.iter().map(|x| (x * 1.1).sin()).collect();
        let u2: Vec<f64> = t.iter().map(|x| 0.3 * x - 0.2).collect();
        fit_natural_cubic(&t, &[u1, u2]).unwrap()
    }

    // Builds the field for a parameter vector and hands it to the callback.
    type Make<'m> = dyn Fn(&[f64], &mut dyn FnMut(&dyn Dynamics)) + 'm;

    fn fd_vjp(
        make: &Make<'_>,
        theta: &[f64],
        t: f64,
        x: &[f64],
        a: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let h = 1e-6;
        let n = x.len();
        let s = |th: &[f64], x: &[f64]| -> f64 {
            let mut o = vec![0.0; n];
            make(th, &mut |f| f.eval(t, x, &mut o).unwrap());
            o.iter().zip(a).map(|(p, q)| p * q).sum()
        };
        let gx = (0..n)
            .map(|i| {
                let (mut p, mut q) = (x.to_vec(), x.to_vec());
                p[i] += h;
                q[i] -= h;
                (s(theta, &p) - s(theta, &q)) / (2.0 * h)
            })
            .collect();
        let gt = (0..theta.len())
            .map(|i| {
                let (mut p, mut q) = (theta.to_vec(), theta.to_vec());
                p[i] += h;
                q[i] -= h;
                (s(&p, x) - s(&q, x)) / (2.0 * h)
            })
            .collect();
        (gx, gt)
    }

    fn check(make: &Make<'_>, theta: &[f64], n: usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let t = 1.3;
        let mut gx = vec![0.0; n];
        let mut gt = vec![0.0; theta.len()];
        make(theta, &mut |f| f.vjp_acc(t, &x, &a, 1.0, &mut gx, &mut gt).unwrap());
        let (fx, ft) = fd_vjp(make, theta, t, &x, &a);
        assert!(relative_error(&gx, &fx, 1e-12) <= 1e-6);
        assert!(relative_error(&gt, &ft, 1e-12) <= 1e-6);
    }

    #[test]
    fn ode_field_vjp() {
        let spec = MlpSpec::new(vec![3, 5, 3]).unwrap();
        let theta = param_init(&spec, 4).values;
        check(&|th, k| k(&OdeField::new(&spec, th).unwrap()), &theta, 3);
    }

    #[test]
    fn cde_field_vjp() {
        let p = path();
        let spec = MlpSpec::new(vec![3, 4, 6]).unwrap();
        let theta = param_init(&spec, 5).values;
        check(&|th, k| k(&CdeField::new(&spec, th, &p).unwrap()), &theta, 3);
    }

    #[test]
    fn ctrnn_field_vjp() {
        let p = path();
        let (n, m) = (3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut theta: Vec<f64> = (0..n * n + n * m + n).map(|_| rng.random_range(-1.0..1.0)).collect();
        theta.push(0.7);
        check(&|th, k| k(&CtrnnField::new(n, th, &p).unwrap()), &theta, n);
    }

    #[test]
    fn ctrnn_rejects_nonpositive_tau() {
        let p = path();
        let theta = vec![0.0; 1 + 2 + 1 + 1];
        assert!(CtrnnField::new(1, &theta, &p).is_err());
    }
}
