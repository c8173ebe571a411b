//! Small least-squares and one-dimensional search routines.

use nalgebra::{DMatrix, DVector};

use crate::error::{NvError, Result};

/// Minimum-norm least-squares solution of `A x ≈ y` via SVD.
pub fn linear_least_squares(a: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    if a.nrows() != y.len() {
        return Err(NvError::Dimension(format!("{} rows vs {} samples", a.nrows(), y.len())));
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    svd.solve(y, smax * 1e-13).map_err(|e| NvError::Fit(e.to_string()))
}

/// Maximizer of a unimodal function on `[a, b]`.
pub fn golden_section_max<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - g * (b - a);
    let mut x2 = a + g * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while (b - a).abs() > tol {
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = f(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = f(x1);
        }
    }
    0.5 * (a + b)
}

/// Grid scan followed by golden-section refinement around the best grid point.
pub fn grid_then_golden_max<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, n_grid: usize, tol: f64) -> f64 {
    let step = (hi - lo) / (n_grid - 1) as f64;
    let mut best = (lo, f64::NEG_INFINITY);
    for i in 0..n_grid {
        let x = lo + step * i as f64;
        let v = f(x);
        if v > best.1 {
            best = (x, v);
        }
    }
    let a = (best.0 - step).max(lo);
    let b = (best.0 + step).min(hi);
    golden_section_max(f, a, b, tol)
}

/// Root of a function with a sign change on `[lo, hi]`.
pub fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> Result<f64> {
    let (mut flo, fhi) = (f(lo), f(hi));
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() {
        return Err(NvError::Fit(format!("no sign change on [{lo}, {hi}]")));
    }
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 || (hi - lo).abs() < tol {
            return Ok(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Clone, Debug, PartialEq)]
pub struct LmResult {
    pub params: Vec<f64>,
    pub cost: f64,
    pub iterations: usize,
}

/// Levenberg–Marquardt with forward-difference Jacobian.
pub fn levenberg_marquardt<F>(residuals: F, p0: &[f64], max_iter: usize) -> Result<LmResult>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let mut p = p0.to_vec();
    let mut r = residuals(&p);
    let mut cost: f64 = r.iter().map(|x| x * x).sum();
    if !cost.is_finite() {
        return Err(NvError::Fit("non-finite initial residual".into()));
    }
    let mut lambda = 1e-3;
    let n = p.len();
    let m = r.len();
    let mut it = 0;
    while it < max_iter {
        it += 1;
        let mut j = DMatrix::<f64>::zeros(m, n);
        for k in 0..n {
            let h = 1e-7 * p[k].abs().max(1e-7);
            let mut q = p.clone();
            q[k] += h;
            let rq = residuals(&q);
            for i in 0..m {
                j[(i, k)] = (rq[i] - r[i]) / h;
            }
        }
        let rv = DVector::from_vec(r.clone());
        let jtj = j.transpose() * &j;
        let g = j.transpose() * rv;
        let mut improved = false;
        for _ in 0..30 {
            let mut a = jtj.clone();
            for k in 0..n {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let Some(delta) = a.lu().solve(&(-&g)) else {
                lambda *= 10.0;
                continue;
            };
            let q: Vec<f64> = p.iter().zip(delta.iter()).map(|(a, b)| a + b).collect();
            let rq = residuals(&q);
            let cq: f64 = rq.iter().map(|x| x * x).sum();
            if cq.is_finite() && cq < cost {
                let rel = (cost - cq) / cost.max(1e-300);
                p = q;
                r = rq;
                cost = cq;
                lambda = (lambda / 3.0).max(1e-12);
                improved = true;
                if rel < 1e-15 {
                    return Ok(LmResult { params: p, cost, iterations: it });
                }
                break;
            }
            lambda *= 4.0;
        }
        if !improved {
            break;
        }
    }
    Ok(LmResult {
        params: p,
        cost,
        iterations: it,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SinusoidFit {
    pub frequency: f64,
    /// `y ≈ a cos(2π f t) + b sin(2π f t) + offset`
    pub cos_amp: f64,
    pub sin_amp: f64,
    pub offset: f64,
    pub rss: f64,
}

impl SinusoidFit {
    pub fn amplitude(&self) -> f64 {
        self.cos_amp.hypot(self.sin_amp)
    }
}

fn sinusoid_projection(t: &[f64], y: &DVector<f64>, f: f64) -> (DVector<f64>, f64) {
    let w = std::f64::consts::TAU * f;
    let a = DMatrix::from_fn(t.len(), 3, |i, k| match k {
        0 => (w * t[i]).cos(),
        1 => (w * t[i]).sin(),
        _ => 1.0,
    });
    let x = linear_least_squares(&a, y).unwrap_or_else(|_| DVector::zeros(3));
    let rss = (a * &x - y).norm_squared();
    (x, rss)
}

/// Variable-projection sinusoid fit: linear amplitudes profiled out, frequency searched in `[f_lo, f_hi]`.
pub fn fit_sinusoid(t: &[f64], y: &[f64], f_lo: f64, f_hi: f64) -> Result<SinusoidFit> {
    if t.len() != y.len() || t.len() < 4 {
        return Err(NvError::Fit("need at least 4 matching samples".into()));
    }
    let yv = DVector::from_column_slice(y);
    let f = grid_then_golden_max(|f| -sinusoid_projection(t, &yv, f).1, f_lo, f_hi, 2001, f_hi * 1e-14);
    let (x, rss) = sinusoid_projection(t, &yv, f);
    Ok(SinusoidFit {
        frequency: f,
        cos_amp: x[0],
        sin_amp: x[1],
        offset: x[2],
        rss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn least_squares_recovers_line() {
        let a = DMatrix::from_fn(10, 2, |i, k| if k == 0 { 1.0 } else { i as f64 });
        let y = DVector::from_fn(10, |i, _| 2.0 - 0.5 * i as f64);
        let x = linear_least_squares(&a, &y).unwrap();
        assert!((x[0] - 2.0).abs() < 1e-12 && (x[1] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn golden_and_bisect() {
        let x = golden_section_max(|x| -(x - 1.3).powi(2), 0.0, 3.0, 1e-10);
        assert!((x - 1.3).abs() < 1e-8);
        let r = bisect(|x| x * x - 2.0, 0.0, 2.0, 1e-14).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-12);
        assert!(bisect(|x| x * x + 1.0, 0.0, 2.0, 1e-14).is_err());
    }

    #[test]
    fn lm_fits_gaussian() {
        let xs: Vec<f64> = (0..50).map(|i| i as f64 * 0.2).collect();
        let model = |p: &[f64], x: f64| p[0] * (-(x - p[1]).powi(2) / (2.0 * p[2] * p[2])).exp();
        let ys: Vec<f64> = xs.iter().map(|&x| model(&[2.0, 4.1, 0.7], x)).collect();
        let res = levenberg_marquardt(
            |p| xs.iter().zip(&ys).map(|(&x, &y)| model(p, x) - y).collect(),
            &[1.5, 3.8, 1.0],
            200,
        )
        .unwrap();
        assert!((res.params[1] - 4.1).abs() < 1e-6);
        assert!((res.params[2].abs() - 0.7).abs() < 1e-6);
    }

    #[test]
    fn sinusoid_frequency_recovery() {
        let t: Vec<f64> = (0..200).map(|i| i as f64 * 1e-6).collect();
        let y: Vec<f64> = t.iter().map(|&t| 0.3 + 0.8 * (std::f64::consts::TAU * 4.93e3 * t + 0.4).cos()).collect();
        let fit = fit_sinusoid(&t, &y, 1e3, 2e4).unwrap();
        assert!((fit.frequency / 4.93e3 - 1.0).abs() < 1e-9);
        assert!((fit.amplitude() - 0.8).abs() < 1e-8);
    }
}
