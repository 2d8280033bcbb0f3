//! Piecewise cubic Hermite interpolation on sorted abscissae.

use crate::error::{Error, Result};

/// Index `k` with `xs[k] <= x <= xs[k + 1]`, or `None` outside the range.
pub fn locate(xs: &[f64], x: f64) -> Option<usize> {
    let n = xs.len();
    if n < 2 || !(xs[0] <= x && x <= xs[n - 1]) {
        return None;
    }
    let k = xs.partition_point(|v| *v <= x);
    Some(k.clamp(1, n - 1) - 1)
}

/// Cubic Hermite value and derivative on `[x0, x1]`.
pub fn hermite(x0: f64, x1: f64, y0: f64, y1: f64, d0: f64, d1: f64, x: f64) -> (f64, f64) {
    let h = x1 - x0;
    let s = (x - x0) / h;
    let (s2, s3) = (s * s, s * s * s);
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    let value = h00 * y0 + h10 * h * d0 + h01 * y1 + h11 * h * d1;
    let dh00 = (6.0 * s2 - 6.0 * s) / h;
    let dh10 = 3.0 * s2 - 4.0 * s + 1.0;
    let dh01 = (-6.0 * s2 + 6.0 * s) / h;
    let dh11 = 3.0 * s2 - 2.0 * s;
    (value, dh00 * y0 + dh10 * d0 + dh01 * y1 + dh11 * d1)
}

/// Hermite interpolant through `(xs, ys)` with slopes `ds`.
#[derive(Debug, Clone)]
pub struct HermiteCurve {
    xs: Vec<f64>,
    ys: Vec<f64>,
    ds: Vec<f64>,
}

impl HermiteCurve {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>, ds: Vec<f64>) -> Result<Self> {
        if xs.len() < 2 || xs.len() != ys.len() || xs.len() != ds.len() {
            return Err(Error::Dimension("hermite curve needs matching arrays of length >= 2".into()));
        }
        if xs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Domain("hermite abscissae must be strictly increasing".into()));
        }
        Ok(Self { xs, ys, ds })
    }

    /// Same, with slopes limited (Fritsch–Carlson) so that monotone data
    /// give a monotone interpolant.
    pub fn monotone(xs: Vec<f64>, ys: Vec<f64>, mut ds: Vec<f64>) -> Result<Self> {
        let n = xs.len();
        if n >= 2 && ys.len() == n && ds.len() == n {
            for k in 0..n - 1 {
                let delta = (ys[k + 1] - ys[k]) / (xs[k + 1] - xs[k]);
                if delta == 0.0 {
                    ds[k] = 0.0;
                    ds[k + 1] = 0.0;
                    continue;
                }
                for j in [k, k + 1] {
                    if ds[j].signum() != delta.signum() {
                        ds[j] = 0.0;
                    }
                }
                let (a, b) = (ds[k] / delta, ds[k + 1] / delta);
                let r = a * a + b * b;
                if r > 9.0 {
                    let tau = 3.0 / r.sqrt();
                    ds[k] = tau * a * delta;
                    ds[k + 1] = tau * b * delta;
                }
            }
        }
        Self::new(xs, ys, ds)
    }

    pub fn range(&self) -> (f64, f64) {
        (self.xs[0], self.xs[self.xs.len() - 1])
    }

    /// Value and slope at `x`; outside the abscissa range is a domain error.
    pub fn eval(&self, x: f64) -> Result<(f64, f64)> {
        let k = locate(&self.xs, x).ok_or_else(|| {
            let (a, b) = self.range();
            Error::Domain(format!("{x} outside interpolation range [{a}, {b}]"))
        })?;
        Ok(hermite(self.xs[k], self.xs[k + 1], self.ys[k], self.ys[k + 1], self.ds[k], self.ds[k + 1], x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_is_reproduced() {
        let f = |x: f64| x * x * x - 2.0 * x + 1.0;
        let df = |x: f64| 3.0 * x * x - 2.0;
        let xs: Vec<f64> = (0..5).map(|k| k as f64 * 0.7).collect();
        let c = HermiteCurve::new(xs.clone(), xs.iter().map(|x| f(*x)).collect(), xs.iter().map(|x| df(*x)).collect()).unwrap();
        for x in [0.1, 1.0, 2.2, 2.8] {
            let (v, d) = c.eval(x).unwrap();
            assert!((v - f(x)).abs() < 1e-12 && (d - df(x)).abs() < 1e-12);
        }
        assert!(c.eval(3.0).is_err());
    }

    #[test]
    fn limiter_keeps_monotone_data_monotone() {
        let xs = vec![0.0, 1.0, 2.0, 3.0];
        let ys = vec![0.0, 0.0, 1.0, 1.0];
        let c = HermiteCurve::monotone(xs, ys, vec![0.0, 5.0, 5.0, 0.0]).unwrap();
        let mut prev = -1.0;
        for k in 0..=300 {
            let v = c.eval(k as f64 * 0.01).unwrap().0;
            assert!(v >= prev - 1e-15);
            prev = v;
        }
    }
}
