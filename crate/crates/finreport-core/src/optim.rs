//! Derivative-free simplex minimization (Nelder-Mead). Deterministic:
//! the search path depends only on the starting point and step size.

#[derive(Debug, Clone)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub fx: f64,
    pub iterations: usize,
    pub converged: bool,
}

const ALPHA: f64 = 1.0; // reflection
const GAMMA: f64 = 2.0; // expansion
const RHO: f64 = 0.5; // contraction
const SIGMA: f64 = 0.5; // shrink

/// Minimize `f` from `x0`. The objective may return `INFINITY` to mark
/// infeasible points. Stops when the simplex function spread drops
/// below `tol` or after `max_iter` iterations.
pub fn nelder_mead<F: Fn(&[f64]) -> f64>(
    f: F,
    x0: &[f64],
    step: f64,
    max_iter: usize,
    tol: f64,
) -> NelderMeadResult {
    let n = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), f(x0)));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += if x[i] != 0.0 { step * x[i].abs() } else { step };
        let fx = f(&x);
        simplex.push((x, fx));
    }

    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        if worst.is_finite() && (worst - best).abs() <= tol {
            converged = true;
            break;
        }

        // Centroid of all but the worst vertex.
        let mut centroid = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            for (c, v) in centroid.iter_mut().zip(x) {
                *c += v / n as f64;
            }
        }

        let point = |scale: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n].0)
                .map(|(c, w)| c + scale * (c - w))
                .collect()
        };

        let reflected = point(ALPHA);
        let f_reflected = f(&reflected);

        if f_reflected < simplex[0].1 {
            let expanded = point(ALPHA * GAMMA);
            let f_expanded = f(&expanded);
            simplex[n] = if f_expanded < f_reflected {
                (expanded, f_expanded)
            } else {
                (reflected, f_reflected)
            };
        } else if f_reflected < simplex[n - 1].1 {
            simplex[n] = (reflected, f_reflected);
        } else {
            let contracted = if f_reflected < simplex[n].1 {
                point(ALPHA * RHO)
            } else {
                point(-RHO)
            };
            let f_contracted = f(&contracted);
            if f_contracted < simplex[n].1.min(f_reflected) {
                simplex[n] = (contracted, f_contracted);
            } else {
                // Shrink toward the best vertex.
                let best_x = simplex[0].0.clone();
                for (x, fx) in simplex.iter_mut().skip(1) {
                    for (v, b) in x.iter_mut().zip(&best_x) {
                        *v = b + SIGMA * (*v - b);
                    }
                    *fx = f(x);
                }
            }
        }
    }

    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
    NelderMeadResult {
        x: simplex[0].0.clone(),
        fx: simplex[0].1,
        iterations,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_quadratic() {
        let f = |x: &[f64]| (x[0] - 3.0).powi(2) + (x[1] + 1.0).powi(2);
        let result = nelder_mead(f, &[0.0, 0.0], 0.5, 500, 1e-12);
        assert!(result.converged);
        assert!((result.x[0] - 3.0).abs() < 1e-5);
        assert!((result.x[1] + 1.0).abs() < 1e-5);
    }

    #[test]
    fn minimizes_rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let result = nelder_mead(f, &[-1.2, 1.0], 0.5, 5000, 1e-14);
        assert!((result.x[0] - 1.0).abs() < 1e-4, "x = {:?}", result.x);
        assert!((result.x[1] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn handles_infeasible_regions() {
        let f = |x: &[f64]| {
            if x[0] < 0.0 {
                f64::INFINITY
            } else {
                (x[0] - 2.0).powi(2)
            }
        };
        let result = nelder_mead(f, &[5.0], 0.5, 500, 1e-12);
        assert!((result.x[0] - 2.0).abs() < 1e-5);
    }

    #[test]
    fn deterministic() {
        let f = |x: &[f64]| x.iter().map(|v| v.powi(2)).sum::<f64>();
        let a = nelder_mead(f, &[1.0, 2.0, 3.0], 0.3, 300, 1e-12);
        let b = nelder_mead(f, &[1.0, 2.0, 3.0], 0.3, 300, 1e-12);
        assert_eq!(a.x, b.x);
        assert_eq!(a.fx, b.fx);
    }
}
