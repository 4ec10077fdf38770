//! Independent numerical references used by tests.
//!
//! Nothing in here is part of the production computation paths: these
//! routines exist so that closed-form implementations can be checked
//! against a second, dumber route (quadrature, finite differences,
//! empirical distribution comparisons).

/// Adaptive Simpson quadrature of `f` over `[a, b]` to absolute tolerance `tol`.
///
/// Classic recursive bisection with the Richardson error estimate. Slow and
/// steady on purpose; the integrands here are smooth except for isolated
/// kinks, which the recursion resolves.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
    }

    #[allow(clippy::too_many_arguments)]
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        m: f64,
        fm: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (lm, flm, left) = simpson(f, a, fa, m, fm);
        let (rm, frm, right) = simpson(f, m, fm, b, fb);
        let err = left + right - whole;
        if depth == 0 || err.abs() <= 15.0 * tol {
            return left + right + err / 15.0;
        }
        recurse(f, a, fa, m, fm, lm, flm, left, tol * 0.5, depth - 1)
            + recurse(f, m, fm, b, fb, rm, frm, right, tol * 0.5, depth - 1)
    }

    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let (m, fm, whole) = simpson(f, a, fa, b, fb);
    recurse(f, a, fa, b, fb, m, fm, whole, tol, 60)
}

/// Central-difference gradient of `f` at `theta`, step `h_j = scale * max(1, |theta_j|)`.
pub fn central_gradient<F: Fn(&[f64]) -> f64>(f: &F, theta: &[f64], scale: f64) -> Vec<f64> {
    let mut grad = vec![0.0; theta.len()];
    let mut work = theta.to_vec();
    for j in 0..theta.len() {
        let h = scale * theta[j].abs().max(1.0);
        work[j] = theta[j] + h;
        let up = f(&work);
        work[j] = theta[j] - h;
        let down = f(&work);
        work[j] = theta[j];
        grad[j] = (up - down) / (2.0 * h);
    }
    grad
}

/// Central-difference Hessian of `f` at `theta` (symmetrized).
pub fn central_hessian<F: Fn(&[f64]) -> f64>(f: &F, theta: &[f64], scale: f64) -> Vec<Vec<f64>> {
    let p = theta.len();
    let mut hess = vec![vec![0.0; p]; p];
    let mut work = theta.to_vec();
    let step = |j: usize| scale * theta[j].abs().max(1.0);
    let f0 = f(theta);
    for j in 0..p {
        let hj = step(j);
        // diagonal: (f(+h) - 2 f(0) + f(-h)) / h^2
        work[j] = theta[j] + hj;
        let up = f(&work);
        work[j] = theta[j] - hj;
        let down = f(&work);
        work[j] = theta[j];
        hess[j][j] = (up - 2.0 * f0 + down) / (hj * hj);
        for k in (j + 1)..p {
            let hk = step(k);
            work[j] = theta[j] + hj;
            work[k] = theta[k] + hk;
            let pp = f(&work);
            work[k] = theta[k] - hk;
            let pm = f(&work);
            work[j] = theta[j] - hj;
            let mm = f(&work);
            work[k] = theta[k] + hk;
            let mp = f(&work);
            work[j] = theta[j];
            work[k] = theta[k];
            let v = (pp - pm - mp + mm) / (4.0 * hj * hk);
            hess[j][k] = v;
            hess[k][j] = v;
        }
    }
    hess
}

/// One-sample Kolmogorov-Smirnov statistic of `sample` against the CDF `cdf`.
pub fn ks_statistic<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> f64 {
    let mut sorted = sample.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite sample value"));
    let n = sorted.len() as f64;
    let mut d = 0.0f64;
    for (i, x) in sorted.iter().enumerate() {
        let c = cdf(*x);
        d = d.max((i as f64 + 1.0) / n - c).max(c - i as f64 / n);
    }
    d
}

/// Standard normal CDF via erfc-style Abramowitz-Stegun 7.1.26 rational
/// approximation, |err| < 1.5e-7. Good enough for KS checks in tests.
pub fn standard_normal_cdf(x: f64) -> f64 {
    let t = 1.0 / (1.0 + 0.2316419 * x.abs());
    let poly = t
        * (0.319381530
            + t * (-0.356563782 + t * (1.781477937 + t * (-1.821255978 + t * 1.330274429))));
    let tail = (-(x * x) / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt() * poly;
    if x >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}
