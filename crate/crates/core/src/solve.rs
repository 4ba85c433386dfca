//! Fixed-step classical RK4 for plain and path-controlled vector fields.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Mlp, MlpSpec};
use crate::spline::CubicSplinePath;

/// `(t, x) → dx/dt` with a fixed state dimension.
pub trait VectorField {
    fn dim(&self) -> usize;
    fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()>;
}

impl<F> VectorField for (usize, F)
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    fn dim(&self) -> usize {
        self.0
    }

    fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        (self.1)(t, x, out);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolveConfig {
    /// RK4 steps per integration interval.
    pub substeps: usize,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self { substeps: 4 }
    }
}

impl SolveConfig {
    pub fn new(substeps: usize) -> Result<Self> {
        if substeps == 0 {
            return Err(Error::InvalidInput("substeps must be >= 1".into()));
        }
        Ok(Self { substeps })
    }

    pub fn direction(t0: f64, t1: f64) -> Direction {
        if t1 >= t0 {
            Direction::Forward
        } else {
            Direction::Backward
        }
    }
}

/// Scratch buffers for one RK4 step.
#[derive(Debug, Clone)]
pub struct Rk4Work {
    k: [Vec<f64>; 4],
    y: Vec<f64>,
}

impl Rk4Work {
    pub fn new(dim: usize) -> Self {
        Self {
            k: std::array::from_fn(|_| vec![0.0; dim]),
            y: vec![0.0; dim],
        }
    }
}

/// Node time `k` of a uniform grid from `t0` to `t1`; the last node is `t1`
/// exactly.
#[inline]
pub fn grid_time(t0: f64, t1: f64, k: usize, n: usize) -> f64 {
    if k == n {
        t1
    } else {
        t0 + (t1 - t0) * (k as f64 / n as f64)
    }
}

/// One classical RK4 step from `(t, x)` to `t_next = t + h`, in place.
pub fn rk4_step<F: VectorField + ?Sized>(
    field: &F,
    t: f64,
    t_next: f64,
    x: &mut [f64],
    work: &mut Rk4Work,
) -> Result<()> {
    let h = t_next - t;
    let th = t + 0.5 * h;
    let Rk4Work { k, y } = work;
    let [k1, k2, k3, k4] = k;

    field.eval(t, x, k1)?;
    for ((yi, xi), ki) in y.iter_mut().zip(x.iter()).zip(k1.iter()) {
        *yi = xi + 0.5 * h * ki;
    }
    field.eval(th, y, k2)?;
    for ((yi, xi), ki) in y.iter_mut().zip(x.iter()).zip(k2.iter()) {
        *yi = xi + 0.5 * h * ki;
    }
    field.eval(th, y, k3)?;
    for ((yi, xi), ki) in y.iter_mut().zip(x.iter()).zip(k3.iter()) {
        *yi = xi + h * ki;
    }
    field.eval(t_next, y, k4)?;
    for (i, xi) in x.iter_mut().enumerate() {
        *xi += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    Ok(())
}

fn check_start(dim: usize, x0: &[f64], t0: f64, t1: f64) -> Result<()> {
    if x0.len() != dim {
        return Err(Error::dim("rk4 initial state", dim, x0.len()));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("initial state must be finite".into()));
    }
    if t0 == t1 || !t0.is_finite() || !t1.is_finite() {
        return Err(Error::InvalidInput(format!(
            "integration span must be finite and non-empty, got ({t0}, {t1})"
        )));
    }
    Ok(())
}

/// Integrate from `t0` to `t1` (either direction) with uniform steps and
/// return the end state.
pub fn rk4_solve<F: VectorField + ?Sized>(
    field: &F,
    x0: &[f64],
    t0: f64,
    t1: f64,
    config: &SolveConfig,
) -> Result<Vec<f64>> {
    check_start(field.dim(), x0, t0, t1)?;
    let n = config.substeps.max(1);
    let mut x = x0.to_vec();
    let mut work = Rk4Work::new(x.len());
    for k in 0..n {
        let (ta, tb) = (grid_time(t0, t1, k, n), grid_time(t0, t1, k + 1, n));
        rk4_step(field, ta, tb, &mut x, &mut work)?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { substep: k, t: tb });
        }
    }
    Ok(x)
}

/// Like [`rk4_solve`] but returns the state at every substep node
/// (`substeps + 1` states including `x0`).
pub fn rk4_trajectory<F: VectorField + ?Sized>(
    field: &F,
    x0: &[f64],
    t0: f64,
    t1: f64,
    config: &SolveConfig,
) -> Result<Vec<Vec<f64>>> {
    check_start(field.dim(), x0, t0, t1)?;
    let n = config.substeps.max(1);
    let mut out = Vec::with_capacity(n + 1);
    out.push(x0.to_vec());
    let mut x = x0.to_vec();
    let mut work = Rk4Work::new(x.len());
    for k in 0..n {
        let (ta, tb) = (grid_time(t0, t1, k, n), grid_time(t0, t1, k + 1, n));
        rk4_step(field, ta, tb, &mut x, &mut work)?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { substep: k, t: tb });
        }
        out.push(x.clone());
    }
    Ok(out)
}

/// Mapping from state to an `(n × m)` kernel matrix, row-major.
pub trait MatrixField {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn eval_matrix(&self, x: &[f64], out: &mut [f64]) -> Result<()>;
}

/// An MLP whose `n·m` outputs are read row-major as the kernel matrix.
#[derive(Debug, Clone, Copy)]
pub struct MlpMatrixField<'a> {
    pub mlp: Mlp<'a>,
    pub control_dim: usize,
}

impl<'a> MlpMatrixField<'a> {
    pub fn new(spec: &'a MlpSpec, params: &'a [f64], control_dim: usize) -> Result<Self> {
        let mlp = Mlp::new(spec, params)?;
        if control_dim == 0 || spec.output_dim() != spec.input_dim() * control_dim {
            return Err(Error::dim(
                "controlled field MLP output",
                spec.input_dim() * control_dim,
                spec.output_dim(),
            ));
        }
        Ok(Self { mlp, control_dim })
    }
}

impl MatrixField for MlpMatrixField<'_> {
    fn state_dim(&self) -> usize {
        self.mlp.spec.input_dim()
    }

    fn control_dim(&self) -> usize {
        self.control_dim
    }

    fn eval_matrix(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        out.copy_from_slice(&self.mlp.forward(x)?);
        Ok(())
    }
}

/// `dx/dt = F(x) · dU/dt` for a matrix-valued `F` and spline control `U`.
pub struct ControlledField<'p, M> {
    kernel: M,
    path: &'p CubicSplinePath,
}

/// Wrap a kernel and a control path into a plain vector field.
pub fn controlled_field<M: MatrixField>(
    kernel: M,
    path: &CubicSplinePath,
) -> Result<ControlledField<'_, M>> {
    if path.channels() != kernel.control_dim() {
        return Err(Error::dim(
            "controlled field path channels",
            kernel.control_dim(),
            path.channels(),
        ));
    }
    Ok(ControlledField { kernel, path })
}

impl<M: MatrixField> VectorField for ControlledField<'_, M> {
    fn dim(&self) -> usize {
        self.kernel.state_dim()
    }

    fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        let (n, m) = (self.kernel.state_dim(), self.kernel.control_dim());
        let mut mat = vec![0.0; n * m];
        self.kernel.eval_matrix(x, &mut mat)?;
        let mut du = vec![0.0; m];
        self.path.eval_into(t, None, Some(&mut du), None)?;
        for (r, o) in out.iter_mut().enumerate() {
            *o = mat[r * m..(r + 1) * m]
                .iter()
                .zip(&du)
                .map(|(a, b)| a * b)
                .sum();
        }
        Ok(())
    }
}
