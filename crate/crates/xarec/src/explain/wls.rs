//! Weighted least squares and a weighted Lasso path, the regression core
//! behind the LIME surrogates.

use nalgebra::{DMatrix, DVector};

/// Solve `min_{b0, b} sum_i w_i (y_i - b0 - x_i . b)^2` unregularized via the
/// normal equations. `x` is `n x p` row-major. Returns `(intercept, coefs)`,
/// or `None` when the system is singular.
pub fn weighted_least_squares(x: &[Vec<f64>], y: &[f64], w: &[f64]) -> Option<(f64, Vec<f64>)> {
    let n = y.len();
    let p = x.first().map(|r| r.len()).unwrap_or(0);
    // scaled augmented design sqrt(w) * [1 | X], so A = D^T D and rhs = D^T (sqrt(w) y)
    let mut design = DMatrix::zeros(n, p + 1);
    let mut rhs_y = DVector::zeros(n);
    for i in 0..n {
        let sw = w[i].max(0.0).sqrt();
        design[(i, 0)] = sw;
        for j in 0..p {
            design[(i, j + 1)] = sw * x[i][j];
        }
        rhs_y[i] = sw * y[i];
    }
    let a = design.tr_mul(&design);
    let b = design.tr_mul(&rhs_y);
    solve_spd(a, DVector::from_column_slice(b.as_slice())).map(|beta| (beta[0], beta.as_slice()[1..].to_vec()))
}

/// Cholesky with an LU fallback; `None` when genuinely singular.
pub(crate) fn solve_spd(a: DMatrix<f64>, b: DVector<f64>) -> Option<DVector<f64>> {
    if let Some(chol) = a.clone().cholesky() {
        return Some(chol.solve(&b));
    }
    a.lu().solve(&b)
}

fn soft_threshold(z: f64, lambda: f64) -> f64 {
    if z > lambda {
        z - lambda
    } else if z < -lambda {
        z + lambda
    } else {
        0.0
    }
}

/// Weighted Lasso at one penalty via cyclic coordinate descent, intercept
/// unpenalized. `weights` are normalized internally so the penalty scale
/// does not depend on the sample count.
fn weighted_lasso(
    x: &[Vec<f64>],
    y: &[f64],
    w_norm: &[f64],
    lambda: f64,
    beta0: &mut f64,
    beta: &mut [f64],
    col_sq: &[f64],
) {
    let n = y.len();
    let p = beta.len();
    // residual r_i = y_i - beta0 - x_i.beta
    let mut r: Vec<f64> = (0..n).map(|i| y[i] - *beta0 - x[i].iter().zip(beta.iter()).map(|(a, b)| a * b).sum::<f64>()).collect();
    for _sweep in 0..200 {
        let mut max_delta = 0.0f64;
        // intercept
        let shift: f64 = (0..n).map(|i| w_norm[i] * r[i]).sum();
        *beta0 += shift;
        for i in 0..n {
            r[i] -= shift;
        }
        max_delta = max_delta.max(shift.abs());
        for j in 0..p {
            if col_sq[j] == 0.0 {
                continue;
            }
            let old = beta[j];
            let rho: f64 = (0..n).map(|i| w_norm[i] * x[i][j] * r[i]).sum::<f64>() + col_sq[j] * old;
            let new = soft_threshold(rho, lambda) / col_sq[j];
            if new != old {
                let delta = new - old;
                for i in 0..n {
                    r[i] -= delta * x[i][j];
                }
                beta[j] = new;
                max_delta = max_delta.max(delta.abs());
            }
        }
        if max_delta < 1e-9 {
            break;
        }
    }
}

/// Walk a geometric Lasso penalty path from `lambda_max` downwards and stop
/// at the first penalty where at least `target` features are active; return
/// the `target` strongest of them (all active features when fewer exist).
///
/// This realizes "select the top-b features via Lasso": the surrogate's
/// complexity cap is the stopping point of the regularization path.
pub fn weighted_lasso_path(x: &[Vec<f64>], y: &[f64], w: &[f64], target: usize) -> Vec<usize> {
    let n = y.len();
    let p = x.first().map(|r| r.len()).unwrap_or(0);
    if p == 0 || n == 0 || target == 0 {
        return Vec::new();
    }
    let w_sum: f64 = w.iter().sum();
    if w_sum <= 0.0 {
        return Vec::new();
    }
    let w_norm: Vec<f64> = w.iter().map(|wi| wi / w_sum).collect();
    let col_sq: Vec<f64> = (0..p).map(|j| (0..n).map(|i| w_norm[i] * x[i][j] * x[i][j]).sum()).collect();

    let y_bar: f64 = (0..n).map(|i| w_norm[i] * y[i]).sum();
    let lambda_max = (0..p)
        .map(|j| (0..n).map(|i| w_norm[i] * x[i][j] * (y[i] - y_bar)).sum::<f64>().abs())
        .fold(0.0f64, f64::max);
    if lambda_max <= 0.0 {
        return Vec::new();
    }

    let steps = 60usize;
    let ratio: f64 = 1e-3;
    let mut beta0 = y_bar;
    let mut beta = vec![0.0; p];
    for k in 1..=steps {
        let lambda = lambda_max * ratio.powf(k as f64 / steps as f64);
        weighted_lasso(x, y, &w_norm, lambda, &mut beta0, &mut beta, &col_sq);
        let mut active: Vec<usize> = (0..p).filter(|&j| beta[j] != 0.0).collect();
        if active.len() >= target {
            active.sort_by(|&a, &b| beta[b].abs().partial_cmp(&beta[a].abs()).unwrap().then(a.cmp(&b)));
            active.truncate(target);
            active.sort_unstable();
            return active;
        }
    }
    (0..p).filter(|&j| beta[j] != 0.0).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn random_problem(n: usize, p: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..p).map(|_| f64::from(rng.gen_range(0..2u32))).collect()).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..2.0)).collect();
        let coef: Vec<f64> = (0..p).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> =
            x.iter().map(|row| 0.3 + row.iter().zip(&coef).map(|(a, b)| a * b).sum::<f64>() + rng.gen_range(-0.01..0.01)).collect();
        (x, y, w)
    }

    /// Independent oracle: Gauss-Jordan elimination on the normal equations.
    fn wls_oracle(x: &[Vec<f64>], y: &[f64], w: &[f64]) -> (f64, Vec<f64>) {
        let n = y.len();
        let p = x[0].len();
        let dim = p + 1;
        let mut a = vec![vec![0.0f64; dim + 1]; dim];
        for i in 0..n {
            let mut row = vec![1.0];
            row.extend_from_slice(&x[i]);
            for j in 0..dim {
                for k in 0..dim {
                    a[j][k] += w[i] * row[j] * row[k];
                }
                a[j][dim] += w[i] * row[j] * y[i];
            }
        }
        for col in 0..dim {
            let pivot = (col..dim).max_by(|&r1, &r2| a[r1][col].abs().partial_cmp(&a[r2][col].abs()).unwrap()).unwrap();
            a.swap(col, pivot);
            let pv = a[col][col];
            for k in col..=dim {
                a[col][k] /= pv;
            }
            for r in 0..dim {
                if r != col {
                    let f = a[r][col];
                    for k in col..=dim {
                        a[r][k] -= f * a[col][k];
                    }
                }
            }
        }
        (a[0][dim], (1..dim).map(|j| a[j][dim]).collect())
    }

    #[test]
    fn wls_matches_gauss_jordan_oracle() {
        for seed in 0..5 {
            let (x, y, w) = random_problem(200, 7, seed);
            let (b0, beta) = weighted_least_squares(&x, &y, &w).unwrap();
            let (ob0, obeta) = wls_oracle(&x, &y, &w);
            assert!((b0 - ob0).abs() < 1e-8, "intercept {b0} vs {ob0}");
            for (a, b) in beta.iter().zip(&obeta) {
                assert!((a - b).abs() < 1e-8, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn lasso_path_recovers_sparse_support() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let n = 600;
        let p = 20;
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..p).map(|_| f64::from(rng.gen_range(0..2u32))).collect()).collect();
        // only features 2, 7, 13 matter
        let y: Vec<f64> = x.iter().map(|r| 1.0 + 0.8 * r[2] - 0.6 * r[7] + 0.4 * r[13]).collect();
        let w = vec![1.0; n];
        let selected = weighted_lasso_path(&x, &y, &w, 3);
        assert_eq!(selected, vec![2, 7, 13]);
    }

    #[test]
    fn constant_response_selects_nothing() {
        let (x, _, w) = random_problem(100, 5, 3);
        let y = vec![0.5; 100];
        assert!(weighted_lasso_path(&x, &y, &w, 3).is_empty());
    }
}
