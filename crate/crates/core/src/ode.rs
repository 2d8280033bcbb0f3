//! Adaptive Dormand–Prince 5(4) integration for small first-order systems.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self { rtol: 1e-10, atol: 1e-10, max_steps: 200_000 }
    }
}

impl OdeOptions {
    pub fn with_tolerance(tol: f64) -> Self {
        Self { rtol: tol, atol: tol, ..Self::default() }
    }
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B_LOW: [f64; 7] = [5179.0 / 57600.0, 0.0, 7571.0 / 16695.0, 393.0 / 640.0, -92097.0 / 339200.0, 187.0 / 2100.0, 1.0 / 40.0];

/// Integrate `y' = f(t, y)` from `t0` to `t_end` (either direction).
pub fn integrate<F>(f: &F, t0: f64, y0: &[f64], t_end: f64, opts: &OdeOptions) -> Result<Vec<f64>>
where
    F: Fn(f64, &[f64], &mut [f64]) -> Result<()>,
{
    let mut out = integrate_to_points(f, t0, y0, &[t_end], opts)?;
    Ok(out.pop().unwrap())
}

/// Integrate through a monotone sequence of output points, stepping onto
/// each exactly. Returns the state at every point.
pub fn integrate_to_points<F>(f: &F, t0: f64, y0: &[f64], points: &[f64], opts: &OdeOptions) -> Result<Vec<Vec<f64>>>
where
    F: Fn(f64, &[f64], &mut [f64]) -> Result<()>,
{
    let dim = y0.len();
    let mut t = t0;
    let mut y = y0.to_vec();
    let mut out = Vec::with_capacity(points.len());
    let span = points.iter().fold(0.0f64, |m, p| m.max((p - t0).abs()));
    let mut h_abs = if span > 0.0 { (span * 1e-3).max(1e-8) } else { 1.0 };
    let mut k = vec![vec![0.0; dim]; 7];
    let mut stage = vec![0.0; dim];
    let mut y_new = vec![0.0; dim];
    let mut steps = 0usize;

    for &target in points {
        let dir = if target >= t { 1.0 } else { -1.0 };
        let mut have_k0 = false;
        while (target - t).abs() > 1e-14 * target.abs().max(1.0) {
            steps += 1;
            if steps > opts.max_steps {
                return Err(Error::Convergence(format!("step limit reached at t = {t}")));
            }
            let remaining = (target - t).abs();
            let last = h_abs >= remaining;
            let h = dir * h_abs.min(remaining);
            if !have_k0 {
                f(t, &y, &mut k[0])?;
                have_k0 = true;
            }
            for s in 1..7 {
                for d in 0..dim {
                    let mut acc = y[d];
                    for (j, kj) in k.iter().enumerate().take(s) {
                        acc += h * A[s][j] * kj[d];
                    }
                    stage[d] = acc;
                }
                f(t + C[s] * h, &stage, &mut k[s])?;
            }
            // stage 7 evaluated at y_new (FSAL)
            let mut err = 0.0;
            for d in 0..dim {
                let mut hi = y[d];
                let mut lo = y[d];
                for s in 0..7 {
                    hi += h * B[s] * k[s][d];
                    lo += h * B_LOW[s] * k[s][d];
                }
                y_new[d] = hi;
                let sc = opts.atol + opts.rtol * y[d].abs().max(hi.abs());
                err += ((hi - lo) / sc).powi(2);
            }
            let err = (err / dim.max(1) as f64).sqrt();
            if !err.is_finite() {
                h_abs *= 0.2;
                have_k0 = true;
                if h_abs < 1e-300 {
                    return Err(Error::Convergence(format!("non-finite derivative near t = {t}")));
                }
                continue;
            }
            if err <= 1.0 {
                t = if last { target } else { t + h };
                y.copy_from_slice(&y_new);
                // FSAL: the last stage was evaluated at (t + h, y_new)
                let (first, rest) = k.split_at_mut(1);
                first[0].copy_from_slice(&rest[5]);
                let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                if !last || factor > 1.0 {
                    h_abs *= factor;
                }
            } else {
                h_abs *= (0.9 * err.powf(-0.2)).clamp(0.1, 0.9);
                if h_abs < 1e-14 * t.abs().max(1.0) {
                    return Err(Error::Convergence(format!("step size underflow at t = {t}")));
                }
            }
        }
        t = target;
        out.push(y.clone());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay() {
        let f = |_t: f64, y: &[f64], d: &mut [f64]| {
            d[0] = -y[0];
            Ok(())
        };
        let y = integrate(&f, 0.0, &[1.0], 3.0, &OdeOptions::with_tolerance(1e-12)).unwrap();
        assert!((y[0] - (-3.0f64).exp()).abs() < 1e-11);
        let back = integrate(&f, 3.0, &y, 0.0, &OdeOptions::with_tolerance(1e-12)).unwrap();
        assert!((back[0] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn harmonic_oscillator_through_points() {
        let f = |_t: f64, y: &[f64], d: &mut [f64]| {
            d[0] = y[1];
            d[1] = -y[0];
            Ok(())
        };
        let pts: Vec<f64> = (1..=20).map(|k| 0.5 * k as f64).collect();
        let out = integrate_to_points(&f, 0.0, &[0.0, 1.0], &pts, &OdeOptions::with_tolerance(1e-11)).unwrap();
        for (p, y) in pts.iter().zip(&out) {
            assert!((y[0] - p.sin()).abs() < 1e-9, "{p}: {}", y[0]);
        }
    }

    #[test]
    fn errors_in_rhs_propagate() {
        let f = |t: f64, _y: &[f64], _d: &mut [f64]| {
            if t > 0.5 {
                Err(Error::Domain("stop".into()))
            } else {
                Ok(())
            }
        };
        assert!(integrate(&f, 0.0, &[0.0], 1.0, &OdeOptions::default()).is_err());
    }
}
