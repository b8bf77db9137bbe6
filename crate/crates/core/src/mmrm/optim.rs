//! BFGS with Armijo backtracking, maximising a smooth objective.

#[derive(Debug, Clone)]
pub struct BfgsOptions {
    pub max_iterations: usize,
    /// Stop when `|Δf| / max(|f|, 1)` falls below this ...
    pub rel_tol: f64,
    /// ... and `max |∇f| < grad_tol · (1 + |f|)`.
    pub grad_tol: f64,
    /// Largest allowed step in any coordinate.
    pub max_step: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions {
            max_iterations: 500,
            rel_tol: 1e-10,
            grad_tol: 1e-6,
            max_step: 2.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BfgsOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub start_value: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl BfgsOutcome {
    pub fn gradient_norm(&self) -> f64 {
        max_abs(&self.gradient)
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Maximises `f`, which returns the value and gradient. Errors at the starting point are
/// returned; errors at trial points during the line search reject the step.
pub fn maximize<E, F>(mut f: F, x0: Vec<f64>, opts: &BfgsOptions) -> Result<BfgsOutcome, E>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>), E>,
{
    let n = x0.len();
    // minimise g = -f
    let (f0, g0) = f(&x0)?;
    let mut x = x0;
    let mut fx = -f0;
    let mut gx: Vec<f64> = g0.iter().map(|v| -v).collect();
    let start_value = f0;
    let mut h = identity(n);
    let mut h_is_identity = true;
    let mut iterations = 0;
    let mut converged = false;

    let grad_ok = |fx: f64, gx: &[f64]| max_abs(gx) < opts.grad_tol * (1.0 + fx.abs());

    while iterations < opts.max_iterations {
        iterations += 1;
        let mut d: Vec<f64> = (0..n).map(|i| -dot(&h[i], &gx)).collect();
        let mut slope = dot(&gx, &d);
        if !(slope < 0.0) {
            h = identity(n);
            h_is_identity = true;
            d = gx.iter().map(|v| -v).collect();
            slope = dot(&gx, &d);
        }
        let big = max_abs(&d);
        if big > opts.max_step {
            let shrink = opts.max_step / big;
            d.iter_mut().for_each(|v| *v *= shrink);
            slope *= shrink;
        }

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + alpha * di).collect();
            if let Ok((fv, gv)) = f(&trial) {
                let ft = -fv;
                if ft.is_finite() && ft <= fx + 1e-4 * alpha * slope {
                    accepted = Some((trial, ft, gv.iter().map(|v| -v).collect::<Vec<f64>>()));
                    break;
                }
            }
            alpha *= 0.5;
        }

        let Some((x_new, f_new, g_new)) = accepted else {
            if grad_ok(fx, &gx) {
                converged = true;
                break;
            }
            if h_is_identity {
                break;
            }
            h = identity(n);
            h_is_identity = true;
            continue;
        };

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&gx).map(|(a, b)| a - b).collect();
        let ys = dot(&y, &s);
        if ys > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if h_is_identity {
                let scale = ys / dot(&y, &y);
                h.iter_mut()
                    .enumerate()
                    .for_each(|(i, row)| row.iter_mut().enumerate().for_each(|(j, v)| *v = if i == j { scale } else { 0.0 }));
            }
            bfgs_update(&mut h, &s, &y, ys);
            h_is_identity = false;
        }

        let rel_change = (f_new - fx).abs() / f_new.abs().max(1.0);
        x = x_new;
        fx = f_new;
        gx = g_new;
        if rel_change < opts.rel_tol && grad_ok(fx, &gx) {
            converged = true;
            break;
        }
    }

    Ok(BfgsOutcome {
        x,
        value: -fx,
        gradient: gx.iter().map(|v| -v).collect(),
        start_value,
        iterations,
        converged,
    })
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

/// Inverse-Hessian update `H ← (I - ρ s y') H (I - ρ y s') + ρ s s'`.
fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], ys: f64) {
    let n = s.len();
    let rho = 1.0 / ys;
    let hy: Vec<f64> = (0..n).map(|i| dot(&h[i], y)).collect();
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i][j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}
