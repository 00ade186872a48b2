//! Small smooth unconstrained minimizer: L-BFGS (two-loop recursion) with
//! Armijo backtracking and finite-difference gradients. Problem sizes here
//! are a few dozen variables, so simplicity beats sophistication.

use crate::scalar::Real;

pub struct LbfgsOptions<S> {
    pub max_iters: usize,
    pub grad_tol: S,
    pub memory: usize,
}

impl<S: Real> Default for LbfgsOptions<S> {
    fn default() -> Self {
        Self {
            max_iters: 150,
            grad_tol: S::of(1e-10),
            memory: 8,
        }
    }
}

fn dot<S: Real>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).fold(S::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Central-difference gradient.
pub fn fd_gradient<S: Real>(f: &dyn Fn(&[S]) -> S, x: &[S], h: S) -> Vec<S> {
    let mut g = vec![S::zero(); x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let xi = x[i];
        probe[i] = xi + h;
        let up = f(&probe);
        probe[i] = xi - h;
        let down = f(&probe);
        probe[i] = xi;
        g[i] = (up - down) / (h + h);
    }
    g
}

/// Minimizes `f` from `x0`; returns the best point and value found.
pub fn lbfgs<S: Real>(
    f: &dyn Fn(&[S]) -> S,
    grad: Option<&dyn Fn(&[S]) -> Vec<S>>,
    x0: &[S],
    opts: &LbfgsOptions<S>,
) -> (Vec<S>, S) {
    let n = x0.len();
    let h = S::of(1e-6);
    let geval = move |x: &[S]| -> Vec<S> {
        match grad {
            Some(gf) => gf(x),
            None => fd_gradient(f, x, h),
        }
    };
    let mut x = x0.to_vec();
    let mut fx = f(&x);
    let mut g = geval(&x);
    let mut s_hist: Vec<Vec<S>> = Vec::new();
    let mut y_hist: Vec<Vec<S>> = Vec::new();
    let mut rho_hist: Vec<S> = Vec::new();

    for _ in 0..opts.max_iters {
        let gnorm = dot(&g, &g).sqrt();
        if gnorm <= opts.grad_tol {
            break;
        }
        // Two-loop recursion for the search direction.
        let mut q = g.clone();
        let m = s_hist.len();
        let mut alpha = vec![S::zero(); m];
        for i in (0..m).rev() {
            alpha[i] = rho_hist[i] * dot(&s_hist[i], &q);
            for t in 0..n {
                let yv = y_hist[i][t];
                q[t] = q[t] - alpha[i] * yv;
            }
        }
        let gamma = if m > 0 {
            let sy = dot(&s_hist[m - 1], &y_hist[m - 1]);
            let yy = dot(&y_hist[m - 1], &y_hist[m - 1]);
            if yy > S::zero() {
                sy / yy
            } else {
                S::one()
            }
        } else {
            S::one()
        };
        for v in q.iter_mut() {
            *v *= gamma;
        }
        for i in 0..m {
            let beta = rho_hist[i] * dot(&y_hist[i], &q);
            for t in 0..n {
                let sv = s_hist[i][t];
                q[t] = q[t] + (alpha[i] - beta) * sv;
            }
        }
        // Descent direction; fall back to steepest descent if curvature
        // information went bad.
        let mut dir: Vec<S> = q.iter().map(|&v| -v).collect();
        let mut is_sd = false;
        if dot(&dir, &g) >= S::zero() {
            dir = g.iter().map(|&v| -v).collect();
            is_sd = true;
        }

        let mut hit = line_search(f, &geval, &x, fx, &g, &dir);
        if hit.is_none() && !is_sd {
            // The quasi-Newton direction failed outright; drop the history
            // and retry along the gradient with a unit-scale move.
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            let scale = S::one() / (S::one() + gnorm);
            let sd: Vec<S> = g.iter().map(|&v| -v * scale).collect();
            hit = line_search(f, &geval, &x, fx, &g, &sd);
        }
        let Some((cand, fc, gc)) = hit else { break };
        #[cfg(feature = "opt-trace")]
        eprintln!(
            "lbfgs: fx {:.6e} -> {:.6e}, |g| {:.3e}, sd {}, m {}",
            fx.as_f64(),
            fc.as_f64(),
            gnorm.as_f64(),
            is_sd,
            s_hist.len()
        );
        let s_vec: Vec<S> = cand.iter().zip(&x).map(|(&a, &b)| a - b).collect();
        let y_vec: Vec<S> = gc.iter().zip(&g).map(|(&a, &b)| a - b).collect();
        let sy = dot(&s_vec, &y_vec);
        let ss = dot(&s_vec, &s_vec);
        let yy = dot(&y_vec, &y_vec);
        if sy > S::of(1e-12) * (ss * yy).sqrt() {
            s_hist.push(s_vec);
            y_hist.push(y_vec);
            rho_hist.push(S::one() / sy);
            if s_hist.len() > opts.memory {
                s_hist.remove(0);
                y_hist.remove(0);
                rho_hist.remove(0);
            }
        }
        x = cand;
        fx = fc;
        g = gc;
    }
    (x, fx)
}

/// Weak-Wolfe line search by bisection bracketing: sufficient decrease plus
/// a curvature condition, which keeps the quasi-Newton pairs well posed on
/// nonconvex objectives. Returns the accepted point with its value and
/// gradient; falls back to the best plain-Armijo point if bracketing stalls.
fn line_search<S: Real>(
    f: &dyn Fn(&[S]) -> S,
    geval: &dyn Fn(&[S]) -> Vec<S>,
    x: &[S],
    fx: S,
    g: &[S],
    dir: &[S],
) -> Option<(Vec<S>, S, Vec<S>)> {
    let slope = dot(dir, g);
    if !(slope < S::zero()) {
        return None;
    }
    let c1 = S::of(1e-4);
    let c2 = S::of(0.9);
    let mut lo = S::zero();
    let mut hi = S::infinity();
    let mut t = S::one();
    let mut fallback: Option<(Vec<S>, S)> = None;
    for _ in 0..50 {
        let cand: Vec<S> = x
            .iter()
            .zip(dir)
            .map(|(&xi, &di)| xi + t * di)
            .collect();
        let fc = f(&cand);
        if !fc.is_finite() || fc > fx + c1 * t * slope {
            hi = t;
        } else {
            if fallback.as_ref().map_or(true, |(_, fb)| fc < *fb) {
                fallback = Some((cand.clone(), fc));
            }
            let gc = geval(&cand);
            if dot(dir, &gc) < c2 * slope {
                lo = t;
            } else {
                return Some((cand, fc, gc));
            }
        }
        t = if hi.is_finite() {
            S::of(0.5) * (lo + hi)
        } else {
            t + t
        };
        if t < S::of(1e-20) || (hi.is_finite() && hi - lo < S::of(1e-16) * hi.max(S::one())) {
            break;
        }
    }
    fallback.map(|(cand, fc)| {
        let gc = geval(&cand);
        (cand, fc, gc)
    })
}
