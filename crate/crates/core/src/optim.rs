//! Unconstrained BFGS minimisation with central-difference gradients.

#[derive(Debug, Clone)]
pub(crate) struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct BfgsOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
    pub value_tol: f64,
    pub fd_step: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            grad_tol: 1e-6,
            value_tol: 1e-10,
            fd_step: 1e-5,
        }
    }
}

fn gradient<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64], fx: f64, step: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = step * (1.0 + x[i].abs());
            xp[i] = x[i] + h;
            let up = f(&xp);
            xp[i] = x[i] - h;
            let down = f(&xp);
            xp[i] = x[i];
            if up.is_finite() && down.is_finite() {
                (up - down) / (2.0 * h)
            } else if up.is_finite() {
                (up - fx) / h
            } else if down.is_finite() {
                (fx - down) / h
            } else {
                0.0
            }
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimises `f` from `x0`. Non-finite function values are treated as
/// infeasible and rejected by the line search.
pub(crate) fn bfgs<F: Fn(&[f64]) -> f64>(f: F, x0: &[f64], opts: BfgsOptions) -> Minimum {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut fx = f(&x);
    if n == 0 || !fx.is_finite() {
        return Minimum { x, value: fx };
    }
    let mut g = gradient(&f, &x, fx, opts.fd_step);
    // inverse Hessian approximation, row-major
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        h[i * n + i] = 1.0;
    }
    for _ in 0..opts.max_iter {
        let gnorm = g.iter().map(|v| v.abs()).fold(0.0, f64::max);
        if gnorm < opts.grad_tol {
            break;
        }
        let mut dir: Vec<f64> = (0..n).map(|i| -dot(&h[i * n..(i + 1) * n], &g)).collect();
        let mut slope = dot(&dir, &g);
        if slope >= 0.0 {
            // lost descent; restart from steepest descent
            for i in 0..n {
                for j in 0..n {
                    h[i * n + j] = if i == j { 1.0 } else { 0.0 };
                }
            }
            dir = g.iter().map(|v| -v).collect();
            slope = dot(&dir, &g);
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let xn: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + step * d).collect();
            let fxn = f(&xn);
            if fxn.is_finite() && fxn <= fx + 1e-4 * step * slope {
                accepted = Some((xn, fxn));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fxn)) = accepted else {
            break;
        };
        let gn = gradient(&f, &xn, fxn, opts.fd_step);
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        let improvement = fx - fxn;
        x = xn;
        g = gn;
        fx = fxn;
        if improvement.abs() < opts.value_tol * (1.0 + fx.abs()) {
            break;
        }
        if sy > 1e-12 {
            let hy: Vec<f64> = (0..n).map(|i| dot(&h[i * n..(i + 1) * n], &y)).collect();
            let yhy = dot(&y, &hy);
            let rho = 1.0 / sy;
            for i in 0..n {
                for j in 0..n {
                    h[i * n + j] += rho * ((1.0 + rho * yhy) * s[i] * s[j] - hy[i] * s[j] - s[i] * hy[j]);
                }
            }
        }
    }
    Minimum { x, value: fx }
}
