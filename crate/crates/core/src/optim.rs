//! Damped projected Newton ascent for small concave problems with box
//! constraints. Used by the EM M-step for RRUM and CRUM items.

/// A smooth concave objective.
pub trait Concave {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    /// Gradient and row-major Hessian at `x`.
    fn derivatives(&self, x: &[f64], grad: &mut [f64], hess: &mut [f64]);
}

#[derive(Debug, Clone)]
pub struct NewtonOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Solve `a x = b` in place for symmetric positive definite `a` (n x n).
/// Returns false when the factorization breaks down.
fn cholesky_solve(a: &mut [f64], b: &mut [f64], n: usize) -> bool {
    for j in 0..n {
        let mut d = a[j * n + j];
        for c in 0..j {
            d -= a[j * n + c] * a[j * n + c];
        }
        if d <= 0.0 || !d.is_finite() {
            return false;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for c in 0..j {
                s -= a[i * n + c] * a[j * n + c];
            }
            a[i * n + j] = s / d;
        }
    }
    for i in 0..n {
        let mut s = b[i];
        for c in 0..i {
            s -= a[i * n + c] * b[c];
        }
        b[i] = s / a[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for c in i + 1..n {
            s -= a[c * n + i] * b[c];
        }
        b[i] = s / a[i * n + i];
    }
    true
}

fn project(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((v, lo), hi) in x.iter_mut().zip(lower).zip(upper) {
        *v = v.clamp(*lo, *hi);
    }
}

/// Maximize `f` over the box `[lower, upper]` starting from `x0`.
///
/// Every accepted step is non-decreasing in `f`, so the result is never
/// worse than the (projected) start.
pub fn maximize_in_box<F: Concave>(f: &F, x0: &[f64], lower: &[f64], upper: &[f64], max_iter: usize) -> NewtonOutcome {
    let n = f.dim();
    let mut x = x0.to_vec();
    project(&mut x, lower, upper);
    let mut fx = f.value(&x);
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n * n];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < max_iter {
        iterations += 1;
        f.derivatives(&x, &mut grad, &mut hess);
        let width = |i: usize| (upper[i] - lower[i]).abs().max(1.0);
        let free: Vec<usize> = (0..n)
            .filter(|&i| {
                let at_lo = x[i] <= lower[i] + 1e-12 * width(i) && grad[i] < 0.0;
                let at_hi = x[i] >= upper[i] - 1e-12 * width(i) && grad[i] > 0.0;
                !(at_lo || at_hi)
            })
            .collect();
        let scale = 1.0 + fx.abs();
        let pg = free.iter().map(|&i| grad[i].abs()).fold(0.0, f64::max);
        if free.is_empty() || pg < 1e-11 * scale {
            converged = true;
            break;
        }

        let nf = free.len();
        let diag_scale = free.iter().map(|&i| -hess[i * n + i]).fold(0.0, f64::max).max(1e-12);
        let mut ridge = 0.0;
        let mut step = vec![0.0; nf];
        let mut solved = false;
        for _ in 0..20 {
            let mut a = vec![0.0; nf * nf];
            for (r, &i) in free.iter().enumerate() {
                for (c, &j) in free.iter().enumerate() {
                    a[r * nf + c] = -hess[i * n + j];
                }
                a[r * nf + r] += ridge;
            }
            step.iter_mut().zip(&free).for_each(|(s, &i)| *s = grad[i]);
            if cholesky_solve(&mut a, &mut step, nf) {
                solved = true;
                break;
            }
            ridge = if ridge == 0.0 { 1e-10 * diag_scale } else { ridge * 10.0 };
        }
        if !solved {
            step.iter_mut().zip(&free).for_each(|(s, &i)| *s = grad[i] / diag_scale);
        }

        let mut accepted = None;
        let mut t = 1.0;
        for _ in 0..40 {
            let mut cand = x.clone();
            for (s, &i) in step.iter().zip(&free) {
                cand[i] += t * s;
            }
            project(&mut cand, lower, upper);
            let fc = f.value(&cand);
            if fc.is_finite() && fc >= fx {
                accepted = Some((cand, fc));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((cand, fc)) => {
                let moved = cand.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                let gain = fc - fx;
                x = cand;
                fx = fc;
                if moved < 1e-12 || gain <= 1e-15 * scale {
                    converged = true;
                    break;
                }
            }
            None => {
                // no ascent at machine precision
                converged = true;
                break;
            }
        }
    }
    NewtonOutcome { x, value: fx, iterations, converged }
}
