//! Small nonlinear and linear least-squares helpers.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Relative cost decrease below which the fit is converged.
    pub tolerance: f64,
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            tolerance: 1e-15,
            lower: None,
            upper: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmResult {
    pub params: Vec<f64>,
    /// Sum of squared residuals.
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn clamp(x: &mut [f64], opts: &LmOptions) {
    if let Some(lo) = &opts.lower {
        x.iter_mut().zip(lo).for_each(|(v, l)| *v = v.max(*l));
    }
    if let Some(hi) = &opts.upper {
        x.iter_mut().zip(hi).for_each(|(v, h)| *v = v.min(*h));
    }
}

fn cost_of(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

/// Levenberg–Marquardt with a central-difference Jacobian. `residual(x, out)`
/// fills `out` (length `n_residuals`).
pub fn levenberg_marquardt<F>(
    residual: F,
    n_residuals: usize,
    x0: &[f64],
    opts: &LmOptions,
) -> LmResult
where
    F: Fn(&[f64], &mut [f64]),
{
    let n = x0.len();
    let mut x = x0.to_vec();
    clamp(&mut x, opts);
    let mut r = vec![0.0; n_residuals];
    residual(&x, &mut r);
    let mut cost = cost_of(&r);
    let mut lambda = 1e-3;
    let mut rp = vec![0.0; n_residuals];
    let mut rm = vec![0.0; n_residuals];
    let mut trial_r = vec![0.0; n_residuals];
    let mut converged = false;
    let mut it = 0;
    while it < opts.max_iterations {
        it += 1;
        if !cost.is_finite() {
            break;
        }
        let mut jac = DMatrix::<f64>::zeros(n_residuals, n);
        for j in 0..n {
            let h = 1e-7 * x[j].abs().max(1e-3);
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            residual(&xp, &mut rp);
            residual(&xm, &mut rm);
            for i in 0..n_residuals {
                jac[(i, j)] = (rp[i] - rm[i]) / (2.0 * h);
            }
        }
        let rv = DVector::from_column_slice(&r);
        let mut jtj = jac.transpose() * &jac;
        let mut jtr = jac.transpose() * &rv;
        // Parameters held at a bound by the gradient drop out of the step.
        for j in 0..n {
            let at_lower = opts
                .lower
                .as_ref()
                .is_some_and(|lo| x[j] <= lo[j] && jtr[j] > 0.0);
            let at_upper = opts
                .upper
                .as_ref()
                .is_some_and(|hi| x[j] >= hi[j] && jtr[j] < 0.0);
            if at_lower || at_upper {
                jtj.row_mut(j).fill(0.0);
                jtj.column_mut(j).fill(0.0);
                jtj[(j, j)] = 1.0;
                jtr[j] = 0.0;
            }
        }
        if jtr.amax() < 1e-300 || cost == 0.0 {
            converged = true;
            break;
        }
        let mut improved = false;
        for _ in 0..30 {
            let mut a = jtj.clone();
            for k in 0..n {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let step = match a.lu().solve(&(-&jtr)) {
                Some(s) => s,
                None => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let mut trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            clamp(&mut trial, opts);
            residual(&trial, &mut trial_r);
            let c = cost_of(&trial_r);
            if c.is_finite() && c < cost {
                let rel = (cost - c) / cost.max(1e-300);
                x = trial;
                std::mem::swap(&mut r, &mut trial_r);
                cost = c;
                lambda = (lambda / 3.0).max(1e-12);
                improved = true;
                if rel < opts.tolerance {
                    converged = true;
                }
                break;
            }
            lambda *= 4.0;
            if lambda > 1e16 {
                break;
            }
        }
        if !improved {
            // No descent direction left: a (local) minimum.
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }
    LmResult {
        params: x,
        cost,
        iterations: it,
        converged,
    }
}

/// Least-squares line `y = slope·x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

impl LinearFit {
    /// x where the line crosses zero.
    pub fn root(&self) -> Option<f64> {
        if self.slope == 0.0 {
            None
        } else {
            Some(-self.intercept / self.slope)
        }
    }
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InsufficientSampling(
            "linear fit needs at least two paired points".into(),
        ));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Degenerate("all x values coincide".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - slope * a - intercept).powi(2))
        .sum();
    let r_squared = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else {
        1.0
    };
    Ok(LinearFit {
        slope,
        intercept,
        r_squared,
    })
}

/// Frequency (cycles per unit of `t`) with the largest periodogram power of
/// the mean-subtracted samples, searched up to the Nyquist frequency of the
/// mean spacing. Returns 0 for constant data.
pub fn dominant_frequency(t: &[f64], y: &[f64]) -> f64 {
    let n = t.len();
    if n < 3 {
        return 0.0;
    }
    let span = t[n - 1] - t[0];
    if span <= 0.0 {
        return 0.0;
    }
    let mean = y.iter().sum::<f64>() / n as f64;
    let dev: Vec<f64> = y.iter().map(|v| v - mean).collect();
    if dev.iter().all(|v| v.abs() < 1e-12) {
        return 0.0;
    }
    let nyquist = 0.5 * (n - 1) as f64 / span;
    let df = 1.0 / (8.0 * span);
    let power = |f: f64| {
        let (mut re, mut im) = (0.0, 0.0);
        for (tk, v) in t.iter().zip(&dev) {
            let ph = std::f64::consts::TAU * f * tk;
            re += v * ph.cos();
            im += v * ph.sin();
        }
        re * re + im * im
    };
    let steps = (nyquist / df).ceil() as usize;
    let mut best = (0.0, power(0.0));
    for k in 1..=steps {
        let f = k as f64 * df;
        let p = power(f);
        if p > best.1 {
            best = (f, p);
        }
    }
    // Golden-section refinement inside the winning bin.
    let (mut a, mut b) = ((best.0 - df).max(0.0), best.0 + df);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..60 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if power(c) > power(d) {
            b = d;
        } else {
            a = c;
        }
    }
    0.5 * (a + b)
}
