//! Training loss and the evaluation metric.

use crate::error::{Error, Result};

/// Mean squared error over all steps and channels, with `∂L/∂o_i`.
pub fn loss_mse(outputs: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<(f64, Vec<Vec<f64>>)> {
    if outputs.len() != targets.len() {
        return Err(Error::dim("loss steps", targets.len(), outputs.len()));
    }
    let mut count = 0usize;
    for (o, y) in outputs.iter().zip(targets) {
        if o.len() != y.len() {
            return Err(Error::dim("loss channels", y.len(), o.len()));
        }
        count += o.len();
    }
    if count == 0 {
        return Err(Error::InvalidInput("loss over an empty sequence".into()));
    }
    let scale = 1.0 / count as f64;
    let mut total = 0.0;
    let cots = outputs
        .iter()
        .zip(targets)
        .map(|(o, y)| {
            o.iter()
                .zip(y)
                .map(|(oi, yi)| {
                    let d = oi - yi;
                    total += d * d;
                    2.0 * scale * d
                })
                .collect()
        })
        .collect();
    Ok((total * scale, cots))
}

/// Root mean squared error of one record divided by the range of its targets.
pub fn nrmse(outputs: &[f64], targets: &[f64]) -> Result<f64> {
    if outputs.len() != targets.len() || targets.is_empty() {
        return Err(Error::dim("nrmse samples", targets.len(), outputs.len()));
    }
    let (lo, hi) = targets
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let range = hi - lo;
    if !(range > 0.0) {
        return Err(Error::InvalidInput("nrmse needs targets with non-zero range".into()));
    }
    let mse = outputs
        .iter()
        .zip(targets)
        .map(|(o, y)| (o - y) * (o - y))
        .sum::<f64>()
        / targets.len() as f64;
    Ok(mse.sqrt() / range)
}

/// Per-record NRMSE averaged over a set of `(outputs, targets)` pairs.
pub fn mean_nrmse<'a, I>(pairs: I) -> Result<f64>
where
    I: IntoIterator<Item = (&'a [f64], &'a [f64])>,
{
    let (mut sum, mut n) = (0.0, 0usize);
    for (o, y) in pairs {
        sum += nrmse(o, y)?;
        n += 1;
    }
    if n == 0 {
        return Err(Error::InvalidInput("nrmse over an empty set".into()));
    }
    Ok(sum / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn perfect_and_unit_offset() {
        let y = vec![vec![0.5, -1.0], vec![2.0, 0.0]];
        let (l, c) = loss_mse(&y, &y).unwrap();
        assert_eq!(l, 0.0);
        assert!(c.iter().flatten().all(|&v| v == 0.0));
        let o: Vec<Vec<f64>> = y.iter().map(|r| r.iter().map(|v| v + 1.0).collect()).collect();
        assert_eq!(loss_mse(&o, &y).unwrap().0, 1.0);
    }

    #[test]
    fn cotangents_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut o: Vec<Vec<f64>> = (0..6).map(|_| (0..2).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let y: Vec<Vec<f64>> = (0..6).map(|_| (0..2).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let (_, cots) = loss_mse(&o, &y).unwrap();
        let h = 1e-6;
        for i in 0..6 {
            for c in 0..2 {
                let v = o[i][c];
                o[i][c] = v + h;
                let lp = loss_mse(&o, &y).unwrap().0;
                o[i][c] = v - h;
                let lm = loss_mse(&o, &y).unwrap().0;
                o[i][c] = v;
                assert!(((lp - lm) / (2.0 * h) - cots[i][c]).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn loss_shape_errors() {
        assert!(loss_mse(&[vec![1.0]], &[]).is_err());
        assert!(loss_mse(&[vec![1.0]], &[vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn nrmse_basics() {
        let y = [0.0, 1.0, -1.0, 0.5];
        assert_eq!(nrmse(&y, &y).unwrap(), 0.0);
        // Constant error 0.1 over a range of 2.
        let o: Vec<f64> = y.iter().map(|v| v + 0.1).collect();
        assert!((nrmse(&o, &y).unwrap() - 0.05).abs() <= 1e-15);
        assert!(nrmse(&[1.0, 1.0], &[2.0, 2.0]).is_err());
    }

    #[test]
    fn nrmse_affine_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let y: Vec<f64> = (0..50).map(|_| rng.random_range(-1.0..1.0)).collect();
        let o: Vec<f64> = y.iter().map(|v| v + rng.random_range(-0.1..0.1)).collect();
        let base = nrmse(&o, &y).unwrap();
        let map = |v: &f64| 3.7 * v - 12.0;
        let o2: Vec<f64> = o.iter().map(map).collect();
        let y2: Vec<f64> = y.iter().map(map).collect();
        assert!((nrmse(&o2, &y2).unwrap() - base).abs() <= 1e-12);
    }

    #[test]
    fn mean_over_set() {
        let y1 = [0.0, 2.0];
        let o1 = [0.0, 2.0];
        let y2 = [0.0, 1.0];
        let o2 = [0.1, 1.1];
        let m = mean_nrmse([(&o1[..], &y1[..]), (&o2[..], &y2[..])]).unwrap();
        assert!((m - 0.05).abs() <= 1e-15);
    }
}
