//! Limited-memory BFGS used by the preimage solve.
//!
//! The line search backtracks on the sufficient-decrease (Armijo, c₁ = 1e-4)
//! condition and expands on the weak curvature condition (c₂ = 0.9), a
//! bisection scheme that keeps every stored curvature pair positive. Accepted
//! steps always decrease the objective.

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Armijo sufficient-decrease constant.
pub const ARMIJO_C: f64 = 1e-4;
/// Weak Wolfe curvature constant.
const CURVATURE_C: f64 = 0.9;
const MAX_LINE_STEPS: usize = 60;

#[derive(Debug, Clone)]
pub struct LbfgsOutcome {
    pub x: DVector<f64>,
    pub value: f64,
    pub grad_inf_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimizes `f` starting from `x0`.
///
/// `memory` curvature pairs drive the two-loop recursion. Terminates when the
/// gradient sup-norm drops below `grad_tol`, after `max_iters` iterations, or
/// when no decreasing step exists at machine precision. The returned value
/// never exceeds `f(x0)`.
pub fn lbfgs<F>(
    mut eval: F,
    x0: &DVector<f64>,
    memory: usize,
    max_iters: usize,
    grad_tol: f64,
) -> Result<LbfgsOutcome>
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
{
    let mut x = x0.clone();
    let (mut fx, mut grad) = eval(&x);
    check_finite(fx, &grad, &x, 0)?;

    let mut s_hist: Vec<DVector<f64>> = Vec::with_capacity(memory);
    let mut y_hist: Vec<DVector<f64>> = Vec::with_capacity(memory);
    let mut rho_hist: Vec<f64> = Vec::with_capacity(memory);
    let mut gamma = 1.0;

    let mut iterations = 0;
    while iterations < max_iters {
        let gnorm = grad.amax();
        if gnorm < grad_tol {
            return Ok(LbfgsOutcome {
                x,
                value: fx,
                grad_inf_norm: gnorm,
                iterations,
                converged: true,
            });
        }

        // Two-loop recursion for the search direction.
        let mut q = grad.clone();
        let hist = s_hist.len();
        let mut alphas = vec![0.0; hist];
        for i in (0..hist).rev() {
            let alpha = rho_hist[i] * s_hist[i].dot(&q);
            alphas[i] = alpha;
            q.axpy(-alpha, &y_hist[i], 1.0);
        }
        q *= gamma;
        for i in 0..hist {
            let beta = rho_hist[i] * y_hist[i].dot(&q);
            q.axpy(alphas[i] - beta, &s_hist[i], 1.0);
        }
        let mut direction = -q;

        let mut slope = grad.dot(&direction);
        if !slope.is_finite() || slope >= 0.0 {
            // Curvature information is unusable; restart from steepest descent.
            direction = -grad.clone();
            slope = grad.dot(&direction);
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            gamma = 1.0;
        }

        // Weak-Wolfe line search by bisection: shrink while sufficient
        // decrease fails, expand while the curvature condition fails.
        let mut lo = 0.0f64;
        let mut hi = f64::INFINITY;
        let mut t = 1.0f64;
        let mut accepted: Option<(DVector<f64>, f64, DVector<f64>)> = None;
        let mut fallback: Option<(DVector<f64>, f64, DVector<f64>)> = None;
        for _ in 0..MAX_LINE_STEPS {
            let candidate = &x + &direction * t;
            let (fc, gc) = eval(&candidate);
            if !fc.is_finite() || fc > fx + ARMIJO_C * t * slope {
                hi = t;
            } else {
                check_finite(fc, &gc, &candidate, iterations + 1)?;
                if gc.dot(&direction) < CURVATURE_C * slope {
                    // Decrease is fine but the step is too short for a
                    // well-posed curvature pair; remember it and expand.
                    if fallback.as_ref().map_or(true, |(_, fb, _)| fc < *fb) {
                        fallback = Some((candidate, fc, gc));
                    }
                    lo = t;
                } else {
                    accepted = Some((candidate, fc, gc));
                    break;
                }
            }
            t = if hi.is_finite() { 0.5 * (lo + hi) } else { 2.0 * t };
            if t <= 0.0 || (hi.is_finite() && (hi - lo) < 1e-20 * hi.max(1.0)) {
                break;
            }
        }

        let Some((x_new, f_new, g_new)) = accepted.or(fallback) else {
            // No decreasing step exists along this direction at machine
            // precision; report the best point found so far.
            return Ok(LbfgsOutcome {
                x,
                value: fx,
                grad_inf_norm: grad.amax(),
                iterations,
                converged: false,
            });
        };

        let s = &x_new - &x;
        let y = &g_new - &grad;
        let sy = s.dot(&y);
        if sy > 1e-10 * s.norm() * y.norm() {
            if s_hist.len() == memory {
                s_hist.remove(0);
                y_hist.remove(0);
                rho_hist.remove(0);
            }
            gamma = sy / y.dot(&y);
            rho_hist.push(1.0 / sy);
            s_hist.push(s);
            y_hist.push(y);
        }

        x = x_new;
        fx = f_new;
        grad = g_new;
        iterations += 1;
    }

    let gnorm = grad.amax();
    Ok(LbfgsOutcome {
        x,
        value: fx,
        grad_inf_norm: gnorm,
        iterations,
        converged: gnorm < grad_tol,
    })
}

fn check_finite(f: f64, g: &DVector<f64>, x: &DVector<f64>, iteration: usize) -> Result<()> {
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite objective or gradient at iteration {iteration}, iterate {:?}",
            x.as_slice()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_quadratic_exactly() {
        // f(x) = ½‖x - c‖², minimum at c.
        let c = DVector::from_vec(vec![1.0, -2.0, 3.0]);
        let target = c.clone();
        let out = lbfgs(
            move |x: &DVector<f64>| {
                let d = x - &target;
                (0.5 * d.norm_squared(), d)
            },
            &DVector::zeros(3),
            10,
            200,
            1e-10,
        )
        .unwrap();
        assert!(out.converged);
        assert!((out.x - c).norm() < 1e-8);
    }

    #[test]
    fn minimizes_ill_conditioned_quadratic() {
        // f(x) = ½ Σ wᵢ xᵢ², condition number 1e4.
        let w = [1.0, 31.0, 4.0e2, 1.0e4];
        let out = lbfgs(
            |x: &DVector<f64>| {
                let f = 0.5 * x.iter().zip(w).map(|(v, wi)| wi * v * v).sum::<f64>();
                let g = DVector::from_fn(4, |i, _| w[i] * x[i]);
                (f, g)
            },
            &DVector::from_vec(vec![1.0, 1.0, 1.0, 1.0]),
            10,
            300,
            1e-10,
        )
        .unwrap();
        assert!(out.converged, "stopped after {} iterations", out.iterations);
        assert!(out.x.amax() < 1e-8);
    }

    #[test]
    fn minimizes_rosenbrock() {
        let out = lbfgs(
            |x: &DVector<f64>| {
                let (a, b) = (x[0], x[1]);
                let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
                let g = DVector::from_vec(vec![
                    -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
                    200.0 * (b - a * a),
                ]);
                (f, g)
            },
            &DVector::from_vec(vec![-1.2, 1.0]),
            10,
            500,
            1e-9,
        )
        .unwrap();
        assert!(out.converged, "stopped after {} iterations", out.iterations);
        assert!((out.x[0] - 1.0).abs() < 1e-6 && (out.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn never_increases_objective() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let x0 = DVector::from_fn(4, |_, _| rng.random_range(-2.0..2.0));
            let (f0, _) = nonconvex(&x0);
            let out = lbfgs(nonconvex, &x0, 5, 50, 1e-8).unwrap();
            assert!(out.value <= f0 + 1e-15);
        }
    }

    #[test]
    fn zero_gradient_start_terminates_immediately() {
        let out = lbfgs(
            |x: &DVector<f64>| (x.norm_squared(), x * 2.0),
            &DVector::zeros(2),
            10,
            100,
            1e-8,
        )
        .unwrap();
        assert!(out.converged);
        assert_eq!(out.iterations, 0);
    }

    #[test]
    fn non_finite_objective_is_reported() {
        let err = lbfgs(
            |x: &DVector<f64>| (f64::NAN, x.clone()),
            &DVector::zeros(2),
            10,
            100,
            1e-8,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
    }

    fn nonconvex(x: &DVector<f64>) -> (f64, DVector<f64>) {
        let f = x.iter().map(|v| v.sin() + 0.1 * v * v).sum::<f64>();
        let g = DVector::from_fn(x.len(), |i, _| x[i].cos() + 0.2 * x[i]);
        (f, g)
    }
}
