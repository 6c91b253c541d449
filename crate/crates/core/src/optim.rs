//! Small unconstrained minimizers used by the likelihood fits.

use crate::Real;

/// Outcome of a minimization.
#[derive(Debug, Clone)]
pub struct Minimum<T> {
    pub x: Vec<T>,
    pub value: T,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Stop when the relative change of the objective falls below this.
    pub rel_tol: f64,
    /// Stop when the largest parameter step falls below this.
    pub step_tol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self { max_iter: 200, rel_tol: 1e-10, step_tol: 1e-8 }
    }
}

fn central_gradient<T: Real, F: FnMut(&[T]) -> T>(f: &mut F, x: &[T], grad: &mut [T]) {
    let h0 = T::default_epsilon().powf(T::lit(1.0 / 3.0));
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let h = h0 * T::one().max(x[i].abs());
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        grad[i] = (up - down) / (h + h);
    }
}

/// Quasi-Newton (BFGS) minimization with central-difference gradients and a
/// backtracking Armijo line search. Non-finite objective values are treated
/// as +∞, so the objective may reject points by returning NaN.
pub fn bfgs<T: Real, F: FnMut(&[T]) -> T>(mut f: F, x0: &[T], opts: BfgsOptions) -> Minimum<T> {
    let n = x0.len();
    let mut eval = |x: &[T]| {
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            T::max_value().unwrap()
        }
    };
    let mut x = x0.to_vec();
    let mut fx = eval(&x);
    let mut g = vec![T::zero(); n];
    central_gradient(&mut eval, &x, &mut g);
    let mut h = nalgebra::DMatrix::<T>::identity(n, n);
    let rel_tol = T::tol(opts.rel_tol);
    let step_tol = T::tol(opts.step_tol);
    let c1 = T::lit(1e-4);

    for iter in 0..opts.max_iter {
        let gv = nalgebra::DVector::from_column_slice(&g);
        let mut dir = -(&h * &gv);
        let mut slope = dir.dot(&gv);
        if !(slope < T::zero()) {
            h = nalgebra::DMatrix::identity(n, n);
            dir = -gv.clone();
            slope = dir.dot(&gv);
        }
        if slope.abs() <= T::default_epsilon() * T::lit(16.0) * (T::one() + fx.abs()) {
            return Minimum { x, value: fx, iterations: iter, converged: true };
        }
        let mut t = T::one();
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<T> = x.iter().zip(dir.iter()).map(|(&xi, &di)| xi + t * di).collect();
            let ft = eval(&trial);
            if ft <= fx + c1 * t * slope {
                accepted = Some((trial, ft));
                break;
            }
            t *= T::lit(0.5);
        }
        let Some((x_new, f_new)) = accepted else {
            // No descent possible along the search direction: at a minimum to
            // working precision.
            return Minimum { x, value: fx, iterations: iter, converged: true };
        };
        let mut g_new = vec![T::zero(); n];
        central_gradient(&mut eval, &x_new, &mut g_new);

        let s = nalgebra::DVector::from_iterator(n, x_new.iter().zip(&x).map(|(&a, &b)| a - b));
        let yv = nalgebra::DVector::from_iterator(n, g_new.iter().zip(&g).map(|(&a, &b)| a - b));
        let sy = s.dot(&yv);
        if sy > T::default_epsilon() * s.norm() * yv.norm() {
            let rho = T::one() / sy;
            let eye = nalgebra::DMatrix::<T>::identity(n, n);
            let left = &eye - (&s * yv.transpose()) * rho;
            let right = &eye - (&yv * s.transpose()) * rho;
            h = &left * &h * &right + (&s * s.transpose()) * rho;
        }

        let rel_change = (fx - f_new).abs() / (T::one() + fx.abs());
        let max_step = s.amax();
        x = x_new;
        fx = f_new;
        g = g_new;
        if rel_change < rel_tol || max_step < step_tol {
            return Minimum { x, value: fx, iterations: iter + 1, converged: true };
        }
    }
    Minimum { x, value: fx, iterations: opts.max_iter, converged: false }
}

/// Derivative-free Nelder–Mead simplex minimization. Converges when the
/// spread of objective values across the simplex falls below `tol`.
pub fn nelder_mead<T: Real, F: FnMut(&[T]) -> T>(mut f: F, x0: &[T], step: T, tol: f64, max_evals: usize) -> Minimum<T> {
    let n = x0.len();
    let tol = T::tol(tol);
    let mut evals = 0usize;
    let mut eval = |x: &[T], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            T::max_value().unwrap()
        }
    };
    let mut simplex: Vec<Vec<T>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += step;
        simplex.push(v);
    }
    let mut values: Vec<T> = simplex.iter().map(|v| eval(v, &mut evals)).collect();
    let (alpha, gamma, rho, sigma) = (T::one(), T::lit(2.0), T::lit(0.5), T::lit(0.5));

    loop {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(std::cmp::Ordering::Equal));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();
        let spread = values[n] - values[0];
        let size = simplex[1..]
            .iter()
            .flat_map(|v| v.iter().zip(&simplex[0]).map(|(&a, &b)| (a - b).abs()))
            .fold(T::zero(), |m, d| m.max(d));
        if spread <= tol && size <= tol.sqrt() {
            return Minimum { x: simplex[0].clone(), value: values[0], iterations: evals, converged: true };
        }
        if evals >= max_evals {
            return Minimum { x: simplex[0].clone(), value: values[0], iterations: evals, converged: false };
        }
        let mut centroid = vec![T::zero(); n];
        for v in &simplex[..n] {
            for (c, &vi) in centroid.iter_mut().zip(v) {
                *c += vi / T::from_usize_lossy(n);
            }
        }
        let along = |coef: T| -> Vec<T> { centroid.iter().zip(&simplex[n]).map(|(&c, &w)| c + coef * (c - w)).collect() };
        let xr = along(alpha);
        let fr = eval(&xr, &mut evals);
        if fr < values[0] {
            let xe = along(gamma);
            let fe = eval(&xe, &mut evals);
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
        } else if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
        } else {
            let xc = along(-rho);
            let fc = eval(&xc, &mut evals);
            if fc < values[n] {
                simplex[n] = xc;
                values[n] = fc;
            } else {
                for i in 1..=n {
                    let shrunk: Vec<T> = simplex[i].iter().zip(&simplex[0]).map(|(&v, &b)| b + sigma * (v - b)).collect();
                    values[i] = eval(&shrunk, &mut evals);
                    simplex[i] = shrunk;
                }
            }
        }
    }
}
