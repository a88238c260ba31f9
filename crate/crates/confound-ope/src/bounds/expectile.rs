//! Weighted asymmetric squared loss and its minimizers.
//!
//! The loss `ℓ_Γ(z) = ½(Γ·(z)_−² + (z)_+²)` penalizes undershooting `Γ` times
//! harder than overshooting; its minimizer over a constant is a weighted
//! expectile that tilts toward the lower tail as `Γ` grows. The tabular path
//! solves the first-order condition by monotone bisection; the linear path
//! minimizes the empirical objective over coefficients by full-batch gradient
//! descent with backtracking line search.

use serde::{Deserialize, Serialize};

/// `½(Γ·(z)_−² + (z)_+²)`.
pub fn loss(z: f64, gamma: f64) -> f64 {
    if z >= 0.0 {
        0.5 * z * z
    } else {
        0.5 * gamma * z * z
    }
}

/// Derivative `(z)_+ − Γ·(z)_−`; strictly increasing in `z`.
pub fn loss_deriv(z: f64, gamma: f64) -> f64 {
    if z >= 0.0 {
        z
    } else {
        gamma * z
    }
}

pub const BISECTION_DERIV_TOL: f64 = 1e-10;

/// Weighted `Γ`-expectile: the unique root of
/// `Σ_i w_i ℓ'_Γ(z_i − κ) = 0`.
///
/// Bisection over `[min z − 1, max z + 1]`; the weighted derivative mean is
/// strictly decreasing in `κ`, so the root is unique. Terminates when the
/// mean derivative is below `1e-10` in magnitude or the bracket collapses.
///
/// Panics in debug builds if called with no samples or nonpositive weights;
/// callers guarantee at least one sample.
pub fn weighted_expectile(z: &[f64], w: &[f64], gamma: f64) -> f64 {
    debug_assert!(!z.is_empty());
    debug_assert_eq!(z.len(), w.len());
    let total_w: f64 = w.iter().sum();
    debug_assert!(total_w > 0.0);
    let mut lo = z.iter().cloned().fold(f64::INFINITY, f64::min) - 1.0;
    let mut hi = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 1.0;
    let mean_deriv = |kappa: f64| -> f64 {
        let mut s = 0.0;
        for (&zi, &wi) in z.iter().zip(w) {
            s += wi * loss_deriv(zi - kappa, gamma);
        }
        s / total_w
    };
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..200 {
        mid = 0.5 * (lo + hi);
        let g = mean_deriv(mid);
        if g.abs() < BISECTION_DERIV_TOL {
            return mid;
        }
        if g > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < f64::EPSILON * hi.abs().max(lo.abs()).max(1.0) {
            return mid;
        }
    }
    mid
}

/// Settings for the gradient-descent coefficient solver.
#[derive(Copy, Clone, Debug, Serialize, Deserialize)]
pub struct GdOptions {
    pub grad_tol: f64,
    pub max_iters: usize,
    /// Ridge on the coefficients; keeps the minimizer unique when the design
    /// is rank-deficient.
    pub ridge: f64,
}

impl Default for GdOptions {
    fn default() -> Self {
        GdOptions {
            grad_tol: 1e-7,
            max_iters: 50_000,
            ridge: 1e-8,
        }
    }
}

/// Outcome of one linear fit.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LinearFitResult {
    /// Coefficients on `[1, x_1, ..., x_d]` in the original feature scale.
    pub raw_coefs: Vec<f64>,
    /// Coefficients in the internal standardized scale (solver state, used
    /// for warm starts).
    pub std_coefs: Vec<f64>,
    pub iterations: usize,
    pub grad_norm: f64,
    pub objective: f64,
}

/// A weighted linear asymmetric-loss problem with fixed design, prepared once
/// and solved for several `Γ` values.
///
/// Rows are `[1, x...]`; non-intercept columns are standardized internally so
/// plain gradient descent is well conditioned, and results are reported in
/// the original scale.
pub struct LinearExpectileProblem {
    /// Row-major whitened design, `n` rows of `dk` kept columns (intercept
    /// first).
    phi: Vec<f64>,
    z: Vec<f64>,
    w: Vec<f64>,
    /// Kept-column count after dropping constants and duplicates.
    dk: usize,
    /// Full feature count including the intercept.
    d_full: usize,
    kept: Vec<usize>,
    n_rows: usize,
    /// Divisor of the empirical objective (the full-dataset size, so units
    /// match the tabular path).
    n_total: f64,
    col_mean: Vec<f64>,
    col_scale: Vec<f64>,
    /// Lower-triangular whitening factor: the standardized kept design has
    /// second moment `L Lᵀ`, and the solver works on `L⁻¹ φ`.
    chol: Vec<Vec<f64>>,
}

fn cholesky_lower(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                if s <= 0.0 {
                    return None;
                }
                l[i][j] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    Some(l)
}

fn forward_solve(l: &[Vec<f64>], b: &mut [f64]) {
    for i in 0..b.len() {
        let mut s = b[i];
        for j in 0..i {
            s -= l[i][j] * b[j];
        }
        b[i] = s / l[i][i];
    }
}

fn transpose_solve(l: &[Vec<f64>], b: &mut [f64]) {
    for i in (0..b.len()).rev() {
        let mut s = b[i];
        for j in i + 1..b.len() {
            s -= l[j][i] * b[j];
        }
        b[i] = s / l[i][i];
    }
}

impl LinearExpectileProblem {
    /// `rows[i]` are raw features (without intercept) of sample `i`.
    ///
    /// Preparation standardizes every column, drops constants and exact
    /// duplicates (up to sign), and whitens what is left; first-order
    /// descent is then well conditioned regardless of feature scales or
    /// correlations. Results are reported in the original feature scale.
    pub fn new(rows: &[Vec<f64>], z: Vec<f64>, w: Vec<f64>, n_total: usize) -> Self {
        let n_rows = rows.len();
        let raw_d = rows.first().map(|r| r.len()).unwrap_or(0);
        let d_full = raw_d + 1;
        let mut col_mean = vec![0.0; d_full];
        let mut col_scale = vec![1.0; d_full];
        let mut dropped = vec![false; d_full];
        for j in 0..raw_d {
            let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n_rows.max(1) as f64;
            let var = rows
                .iter()
                .map(|r| (r[j] - mean) * (r[j] - mean))
                .sum::<f64>()
                / n_rows.max(1) as f64;
            col_mean[j + 1] = mean;
            if var > 1e-24 {
                col_scale[j + 1] = var.sqrt();
            } else {
                dropped[j + 1] = true;
            }
        }
        let std_col = |r: &Vec<f64>, j: usize| (r[j - 1] - col_mean[j]) / col_scale[j];
        // Drop exact duplicates (up to sign) of earlier standardized
        // columns, e.g. an interaction that coincides with its factor on
        // this action's samples.
        for j in 2..d_full {
            if dropped[j] {
                continue;
            }
            for k in 1..j {
                if dropped[k] {
                    continue;
                }
                let mut diff = 0.0;
                let mut sum = 0.0;
                for r in rows {
                    let a = std_col(r, j);
                    let b = std_col(r, k);
                    diff += (a - b) * (a - b);
                    sum += (a + b) * (a + b);
                }
                if diff <= 1e-18 * n_rows as f64 || sum <= 1e-18 * n_rows as f64 {
                    dropped[j] = true;
                    break;
                }
            }
        }
        let kept: Vec<usize> = (0..d_full).filter(|&j| !dropped[j]).collect();
        let dk = kept.len();
        let mut std_rows = Vec::with_capacity(n_rows * dk);
        for r in rows {
            for &j in &kept {
                if j == 0 {
                    std_rows.push(1.0);
                } else {
                    std_rows.push(std_col(r, j));
                }
            }
        }
        // Second moment of the standardized kept design, with a small
        // diagonal bump so the factorization exists even under near-exact
        // collinearity.
        let mut second = vec![vec![0.0; dk]; dk];
        for i in 0..n_rows {
            let row = &std_rows[i * dk..(i + 1) * dk];
            for a in 0..dk {
                for b in 0..=a {
                    second[a][b] += row[a] * row[b];
                }
            }
        }
        for a in 0..dk {
            for b in 0..=a {
                second[a][b] /= n_rows.max(1) as f64;
                second[b][a] = second[a][b];
            }
            second[a][a] += 1e-9;
        }
        let chol = cholesky_lower(&second).expect("bumped second moment is positive definite");
        let mut phi = std_rows;
        let mut buf = vec![0.0; dk];
        for i in 0..n_rows {
            buf.copy_from_slice(&phi[i * dk..(i + 1) * dk]);
            forward_solve(&chol, &mut buf);
            phi[i * dk..(i + 1) * dk].copy_from_slice(&buf);
        }
        LinearExpectileProblem {
            phi,
            z,
            w,
            dk,
            d_full,
            kept,
            n_rows,
            n_total: n_total as f64,
            col_mean,
            col_scale,
            chol,
        }
    }

    pub fn n_samples(&self) -> usize {
        self.n_rows
    }

    fn objective(&self, theta: &[f64], gamma: f64, ridge: f64, sign: f64) -> f64 {
        let mut total = 0.0;
        for i in 0..self.n_rows {
            let phi = &self.phi[i * self.dk..(i + 1) * self.dk];
            let pred: f64 = theta.iter().zip(phi).map(|(a, b)| a * b).sum();
            total += self.w[i] * loss(sign * self.z[i] - pred, gamma);
        }
        total / self.n_total + 0.5 * ridge * theta.iter().map(|t| t * t).sum::<f64>()
    }

    /// Directional objective change for the step `theta -> theta - alpha g`,
    /// where `step_i = alpha * gᵀφ_i` shifts residual `r_i` to `r_i + step_i`.
    ///
    /// Computed per sample from the shift rather than as a difference of two
    /// large objective values; this keeps the backtracking test exact even
    /// when the objective is many orders of magnitude above the decrease.
    fn objective_delta(
        &self,
        residuals: &[f64],
        gphi: &[f64],
        alpha: f64,
        gamma: f64,
    ) -> f64 {
        let mut delta = 0.0;
        for i in 0..self.n_rows {
            let r = residuals[i];
            let s = alpha * gphi[i];
            let r_new = r + s;
            let c_old = if r >= 0.0 { 1.0 } else { gamma };
            let c_new = if r_new >= 0.0 { 1.0 } else { gamma };
            delta += if c_old == c_new {
                // Same quadratic piece: 0.5 c ((r+s)^2 - r^2) without
                // cancellation.
                self.w[i] * 0.5 * c_old * s * (2.0 * r + s)
            } else {
                // The residual crossed zero, so both |r| and |r+s| are at
                // most |s| and the direct difference is well conditioned.
                self.w[i] * 0.5 * (c_new * r_new * r_new - c_old * r * r)
            };
        }
        delta / self.n_total
    }

    /// Minimizes the empirical objective for `gamma`. `init` warm-starts from
    /// a previous solution's `std_coefs`; `negate` fits against `-z` (the
    /// upper-bound direction).
    pub fn solve(
        &self,
        gamma: f64,
        opts: &GdOptions,
        init: Option<&[f64]>,
        negate: bool,
    ) -> Result<LinearFitResult, (usize, f64)> {
        let sign = if negate { -1.0 } else { 1.0 };
        let mut theta = match init {
            Some(t) if t.len() == self.dk => t.to_vec(),
            _ => vec![0.0; self.dk],
        };
        let predictions = |theta: &[f64]| -> Vec<f64> {
            (0..self.n_rows)
                .map(|i| {
                    let phi = &self.phi[i * self.dk..(i + 1) * self.dk];
                    theta.iter().zip(phi).map(|(a, b)| a * b).sum()
                })
                .collect()
        };
        let mut pred = predictions(&theta);
        let mut residuals: Vec<f64> = (0..self.n_rows)
            .map(|i| sign * self.z[i] - pred[i])
            .collect();
        let mut grad = vec![0.0; self.dk];
        let mut gphi = vec![0.0; self.n_rows];
        let mut alpha: f64 = 1.0;
        for iter in 0..opts.max_iters {
            for g in grad.iter_mut() {
                *g = 0.0;
            }
            for i in 0..self.n_rows {
                let phi = &self.phi[i * self.dk..(i + 1) * self.dk];
                let slope = -self.w[i] * loss_deriv(residuals[i], gamma);
                for (g, &x) in grad.iter_mut().zip(phi) {
                    *g += slope * x;
                }
            }
            for (j, g) in grad.iter_mut().enumerate() {
                *g = *g / self.n_total + opts.ridge * theta[j];
            }
            let grad_sq: f64 = grad.iter().map(|g| g * g).sum();
            let grad_norm = grad_sq.sqrt();
            if grad_norm < opts.grad_tol {
                let objective = self.objective(&theta, gamma, opts.ridge, sign);
                return Ok(self.finish(theta, iter, grad_norm, objective));
            }
            for i in 0..self.n_rows {
                let phi = &self.phi[i * self.dk..(i + 1) * self.dk];
                gphi[i] = grad.iter().zip(phi).map(|(a, b)| a * b).sum();
            }
            let theta_dot_g: f64 = theta.iter().zip(&grad).map(|(a, b)| a * b).sum();
            // Backtracking line search on the exact objective change,
            // growing the trial step after each accepted iterate.
            alpha = (alpha * 2.0).min(1e12);
            let mut accepted = false;
            for _ in 0..200 {
                let ridge_delta =
                    0.5 * opts.ridge * (alpha * alpha * grad_sq - 2.0 * alpha * theta_dot_g);
                let delta = self.objective_delta(&residuals, &gphi, alpha, gamma) + ridge_delta;
                if delta <= -1e-4 * alpha * grad_sq {
                    for (t, g) in theta.iter_mut().zip(&grad) {
                        *t -= alpha * g;
                    }
                    for i in 0..self.n_rows {
                        residuals[i] += alpha * gphi[i];
                    }
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !accepted {
                return Err((iter, grad_norm));
            }
            // Refresh the incremental residuals now and then to shed
            // accumulated rounding.
            if iter % 512 == 511 {
                pred = predictions(&theta);
                for i in 0..self.n_rows {
                    residuals[i] = sign * self.z[i] - pred[i];
                }
            }
        }
        let grad_norm = {
            for g in grad.iter_mut() {
                *g = 0.0;
            }
            for i in 0..self.n_rows {
                let phi = &self.phi[i * self.dk..(i + 1) * self.dk];
                let slope = -self.w[i] * loss_deriv(residuals[i], gamma);
                for (g, &x) in grad.iter_mut().zip(phi) {
                    *g += slope * x;
                }
            }
            for (j, g) in grad.iter_mut().enumerate() {
                *g = *g / self.n_total + opts.ridge * theta[j];
            }
            grad.iter().map(|g| g * g).sum::<f64>().sqrt()
        };
        if grad_norm < opts.grad_tol {
            let objective = self.objective(&theta, gamma, opts.ridge, sign);
            Ok(self.finish(theta, opts.max_iters, grad_norm, objective))
        } else {
            Err((opts.max_iters, grad_norm))
        }
    }

    fn finish(
        &self,
        theta: Vec<f64>,
        iterations: usize,
        grad_norm: f64,
        objective: f64,
    ) -> LinearFitResult {
        // Whitened -> standardized kept coefficients.
        let mut beta = theta.clone();
        transpose_solve(&self.chol, &mut beta);
        // Standardized kept -> raw full coefficients.
        let mut raw = vec![0.0; self.d_full];
        for (pos, &j) in self.kept.iter().enumerate() {
            if j == 0 {
                raw[0] += beta[pos];
            } else {
                raw[j] = beta[pos] / self.col_scale[j];
                raw[0] -= beta[pos] * self.col_mean[j] / self.col_scale[j];
            }
        }
        LinearFitResult {
            raw_coefs: raw,
            std_coefs: theta,
            iterations,
            grad_norm,
            objective,
        }
    }
}

/// Evaluates raw coefficients on a raw feature vector.
pub fn predict_raw(raw_coefs: &[f64], features: &[f64]) -> f64 {
    let mut v = raw_coefs[0];
    for (j, &x) in features.iter().enumerate() {
        v += raw_coefs[j + 1] * x;
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn symmetric_loss_gives_weighted_mean() {
        let z = [1.0, 2.0, 6.0];
        let w = [1.0, 1.0, 2.0];
        let kappa = weighted_expectile(&z, &w, 1.0);
        assert!((kappa - 15.0 / 4.0).abs() < 1e-9);
    }

    #[test]
    fn two_point_expectile_closed_form() {
        // (1-k) = 3(k+1)  =>  k = -1/2.
        let kappa = weighted_expectile(&[-1.0, 1.0], &[1.0, 1.0], 3.0);
        assert!((kappa + 0.5).abs() < 1e-9);
    }

    #[test]
    fn single_sample_is_its_own_expectile() {
        for gamma in [1.0, 2.0, 17.0] {
            let kappa = weighted_expectile(&[0.37], &[0.8], gamma);
            assert!((kappa - 0.37).abs() < 1e-9);
        }
    }

    #[test]
    fn expectile_is_nonincreasing_in_gamma() {
        let mut rng = crate::rng::substream(5, "expectile-mono", 0);
        let z: Vec<f64> = (0..200).map(|_| rng.gen::<f64>() * 4.0 - 2.0).collect();
        let w: Vec<f64> = (0..200).map(|_| rng.gen::<f64>() + 0.1).collect();
        let mut prev = f64::INFINITY;
        for gamma in [1.0, 1.5, 2.0, 4.0, 8.0, 32.0] {
            let kappa = weighted_expectile(&z, &w, gamma);
            assert!(kappa <= prev + 1e-10);
            prev = kappa;
        }
    }

    #[test]
    fn bisection_matches_grid_search() {
        let mut rng = crate::rng::substream(6, "expectile-grid", 0);
        for case in 0..20 {
            let n = 50 + case * 7;
            let z: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 10.0 - 5.0).collect();
            let w: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() + 0.05).collect();
            for gamma in [1.0, 2.0, 5.0, 20.0] {
                let kappa = weighted_expectile(&z, &w, gamma);
                let lo = z.iter().cloned().fold(f64::INFINITY, f64::min) - 1.0;
                let hi = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 1.0;
                let m = 10_000;
                let step = (hi - lo) / m as f64;
                let mut best = lo;
                let mut best_obj = f64::INFINITY;
                for j in 0..=m {
                    let k = lo + j as f64 * step;
                    let obj: f64 = z
                        .iter()
                        .zip(&w)
                        .map(|(&zi, &wi)| wi * loss(zi - k, gamma))
                        .sum();
                    if obj < best_obj {
                        best_obj = obj;
                        best = k;
                    }
                }
                assert!(
                    (kappa - best).abs() <= step,
                    "gamma {gamma}: bisection {kappa} vs grid {best} (step {step})"
                );
            }
        }
    }

    #[test]
    fn intercept_only_linear_matches_scalar_expectile() {
        let mut rng = crate::rng::substream(7, "lin-intercept", 0);
        let n = 300;
        let z: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 6.0 - 3.0).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() + 0.2).collect();
        let problem =
            LinearExpectileProblem::new(&vec![Vec::new(); n], z.clone(), w.clone(), n);
        for gamma in [1.0, 2.0, 5.0] {
            let fit = problem
                .solve(
                    gamma,
                    &GdOptions {
                        ridge: 0.0,
                        ..GdOptions::default()
                    },
                    None,
                    false,
                )
                .unwrap();
            let kappa = weighted_expectile(&z, &w, gamma);
            assert!(
                (fit.raw_coefs[0] - kappa).abs() < 1e-6,
                "gamma {gamma}: {} vs {kappa}",
                fit.raw_coefs[0]
            );
        }
    }

    #[test]
    fn symmetric_linear_fit_matches_weighted_least_squares() {
        // gamma = 1 reduces to WLS; compare against the normal equations.
        let mut rng = crate::rng::substream(8, "lin-wls", 0);
        let n = 500;
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| vec![rng.gen::<f64>() * 2.0 - 1.0, rng.gen::<f64>()])
            .collect();
        let w: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() + 0.5).collect();
        let z: Vec<f64> = rows
            .iter()
            .map(|r| 0.7 + 1.3 * r[0] - 2.0 * r[1] + rng.gen::<f64>() * 0.5)
            .collect();
        let problem = LinearExpectileProblem::new(&rows, z.clone(), w.clone(), n);
        let fit = problem
            .solve(
                1.0,
                &GdOptions {
                    ridge: 0.0,
                    ..GdOptions::default()
                },
                None,
                false,
            )
            .unwrap();
        // 3x3 normal equations on [1, x0, x1].
        let mut xtx = [[0.0; 3]; 3];
        let mut xty = [0.0; 3];
        for (r, (&zi, &wi)) in rows.iter().zip(z.iter().zip(&w)) {
            let x = [1.0, r[0], r[1]];
            for a in 0..3 {
                xty[a] += wi * x[a] * zi;
                for b in 0..3 {
                    xtx[a][b] += wi * x[a] * x[b];
                }
            }
        }
        // Solve by Gaussian elimination.
        let mut m = [[0.0; 4]; 3];
        for a in 0..3 {
            m[a][..3].copy_from_slice(&xtx[a]);
            m[a][3] = xty[a];
        }
        for col in 0..3 {
            let piv = (col..3).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs())).unwrap();
            m.swap(col, piv);
            for row in 0..3 {
                if row != col {
                    let f = m[row][col] / m[col][col];
                    for c in col..4 {
                        m[row][c] -= f * m[col][c];
                    }
                }
            }
        }
        let beta: Vec<f64> = (0..3).map(|a| m[a][3] / m[a][a]).collect();
        for j in 0..3 {
            assert!(
                (fit.raw_coefs[j] - beta[j]).abs() < 1e-5,
                "coef {j}: gd {} vs wls {}",
                fit.raw_coefs[j],
                beta[j]
            );
        }
    }
}
