//! Box-constrained BFGS used to maximize the log marginal likelihood over
//! the three log-hyperparameters.

pub(crate) struct Bounds {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

impl Bounds {
    fn clip(&self, x: [f64; 3]) -> [f64; 3] {
        let mut out = x;
        for i in 0..3 {
            out[i] = x[i].clamp(self.lo[i], self.hi[i]);
        }
        out
    }
}

pub(crate) struct Outcome {
    pub x: [f64; 3],
    pub value: f64,
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Maximizes `f` (returning value and gradient) from `x0` inside `bounds`.
/// Every accepted step increases `f`, so the result is never worse than the
/// clipped start. Non-finite evaluations are rejected as steps.
pub(crate) fn maximize<F>(f: F, x0: [f64; 3], bounds: &Bounds, max_iter: usize) -> Outcome
where
    F: Fn([f64; 3]) -> Option<(f64, [f64; 3])>,
{
    let mut x = bounds.clip(x0);
    let Some((mut fx, mut g)) = f(x) else {
        return Outcome {
            x,
            value: f64::NEG_INFINITY,
        };
    };
    // inverse Hessian of -f
    let mut h = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    for _ in 0..max_iter {
        // ascent direction d = H g, with bound-active coordinates frozen
        let free = |i: usize, d: f64| !((x[i] <= bounds.lo[i] && d < 0.0) || (x[i] >= bounds.hi[i] && d > 0.0));
        let mut d: [f64; 3] = std::array::from_fn(|i| h[i][0] * g[0] + h[i][1] * g[1] + h[i][2] * g[2]);
        for (i, di) in d.iter_mut().enumerate() {
            if !free(i, *di) {
                *di = 0.0;
            }
        }
        if dot(&d, &g) <= 0.0 {
            h = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
            d = g;
            for (i, di) in d.iter_mut().enumerate() {
                if !free(i, *di) {
                    *di = 0.0;
                }
            }
        }
        let pg = d.iter().map(|v| v.abs()).fold(0.0, f64::max);
        if pg < 1e-8 {
            break;
        }
        // cap the first trial step at a unit move in log space
        let norm = dot(&d, &d).sqrt();
        let mut step = if norm > 1.0 { 1.0 / norm } else { 1.0 };
        let mut accepted = None;
        for _ in 0..50 {
            let mut trial = [0.0; 3];
            for i in 0..3 {
                trial[i] = x[i] + step * d[i];
            }
            let trial = bounds.clip(trial);
            let s = [trial[0] - x[0], trial[1] - x[1], trial[2] - x[2]];
            if let Some((ft, gt)) = f(trial) {
                if ft.is_finite() && ft >= fx + 1e-4 * dot(&g, &s) && ft > fx {
                    accepted = Some((trial, ft, gt, s));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((xn, fxn, gn, s)) = accepted else { break };
        // BFGS update on the minimization problem (gradient of -f is -g)
        let yv = [g[0] - gn[0], g[1] - gn[1], g[2] - gn[2]];
        let sy = dot(&s, &yv);
        if sy > 1e-12 {
            let rho = 1.0 / sy;
            let mut hy = [0.0; 3];
            for i in 0..3 {
                hy[i] = h[i][0] * yv[0] + h[i][1] * yv[1] + h[i][2] * yv[2];
            }
            let yhy = dot(&yv, &hy);
            let mut hn = h;
            for i in 0..3 {
                for j in 0..3 {
                    hn[i][j] = h[i][j] - rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
                }
            }
            h = hn;
        }
        let improvement = fxn - fx;
        x = xn;
        fx = fxn;
        g = gn;
        if improvement < 1e-12 * (1.0 + fx.abs()) {
            break;
        }
    }
    Outcome { x, value: fx }
}
