//! Weighted least squares through column-equilibrated normal equations.

use crate::error::{Error, Result};
use crate::numeric::linalg::{cholesky_solve, dot, Matrix};
use crate::scalar::Real;

/// Coefficients of an affine model; the intercept, when the design has
/// one, is simply the coefficient of its constant column.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFit<T> {
    pub coefficients: Vec<T>,
    /// Set when the normal matrix was singular and a ridge of
    /// `1e-8 * trace / q` was added to its diagonal.
    pub ridge_applied: bool,
}

impl<T: Real> LinearFit<T> {
    #[inline]
    pub fn predict(&self, row: &[T]) -> T {
        dot(&self.coefficients, row)
    }
}

fn pivot_tolerance<T: Real>() -> T {
    T::epsilon() * T::lit(1e3)
}

/// Minimizes `sum_i w_i (y_i - x_i . beta)^2`.
pub fn fit_wls<T: Real>(design: &Matrix<T>, response: &[T], weights: &[T]) -> Result<LinearFit<T>> {
    let (n, q) = (design.rows(), design.cols());
    if response.len() != n || weights.len() != n {
        return Err(Error::Dimension(format!(
            "design has {n} rows, response {} and weights {}",
            response.len(),
            weights.len()
        )));
    }
    if q == 0 {
        return Err(Error::Dimension("design has no columns".into()));
    }
    if q > n {
        return Err(Error::Dimension(format!("{q} coefficients from {n} rows")));
    }
    if weights.iter().any(|w| !(*w >= T::zero()) || !w.is_finite()) {
        return Err(Error::InvalidArgument(
            "weights must be finite and nonnegative".into(),
        ));
    }
    if weights.iter().all(|w| *w == T::zero()) {
        return Err(Error::ZeroWeights);
    }
    if design
        .as_slice()
        .iter()
        .chain(response)
        .any(|v| !v.is_finite())
    {
        return Err(Error::NonFinite("design or response".into()));
    }

    let mut gram = Matrix::zeros(q, q);
    let mut rhs = vec![T::zero(); q];
    for i in 0..n {
        let w = weights[i];
        if w == T::zero() {
            continue;
        }
        let row = design.row(i);
        let wy = w * response[i];
        for a in 0..q {
            let wa = w * row[a];
            if wa == T::zero() {
                continue;
            }
            rhs[a] += row[a] * wy;
            for b in a..q {
                gram[(a, b)] += wa * row[b];
            }
        }
    }
    for a in 0..q {
        for b in 0..a {
            gram[(a, b)] = gram[(b, a)];
        }
    }

    if let Some(beta) = solve_scaled(&gram, &rhs) {
        return Ok(LinearFit {
            coefficients: beta,
            ridge_applied: false,
        });
    }
    let ridge = T::lit(1e-8) * gram.trace() / T::from_count(q);
    let ridge = if ridge > T::zero() {
        ridge
    } else {
        T::lit(1e-8)
    };
    for a in 0..q {
        gram[(a, a)] += ridge;
    }
    solve_scaled(&gram, &rhs)
        .map(|beta| LinearFit {
            coefficients: beta,
            ridge_applied: true,
        })
        .ok_or_else(|| Error::Singular("weighted normal matrix after ridge".into()))
}

fn solve_scaled<T: Real>(gram: &Matrix<T>, rhs: &[T]) -> Option<Vec<T>> {
    let q = rhs.len();
    let scale: Vec<T> = (0..q)
        .map(|j| {
            let d = gram[(j, j)];
            if d > T::zero() {
                d.sqrt()
            } else {
                T::one()
            }
        })
        .collect();
    let mut scaled = gram.clone();
    for a in 0..q {
        for b in 0..q {
            scaled[(a, b)] = gram[(a, b)] / (scale[a] * scale[b]);
        }
    }
    let b: Vec<T> = rhs.iter().zip(&scale).map(|(&r, &s)| r / s).collect();
    let z = cholesky_solve(&scaled, &b, pivot_tolerance())?;
    Some(z.iter().zip(&scale).map(|(&v, &s)| v / s).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn design(rows: &[Vec<f64>]) -> Matrix<f64> {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn intercept_only_is_mean() {
        let y = [1.0, 4.0, 2.5, -3.0];
        let x = design(&vec![vec![1.0]; 4]);
        let fit = fit_wls(&x, &y, &[1.0; 4]).unwrap();
        assert!((fit.coefficients[0] - 1.125).abs() < 1e-14);
        assert!(!fit.ridge_applied);
    }

    #[test]
    fn exact_line_any_weights() {
        let xs = [0.0, 1.0, 2.5, 4.0, 7.0];
        let x = design(&xs.iter().map(|&v| vec![1.0, v]).collect::<Vec<_>>());
        let y: Vec<f64> = xs.iter().map(|v| 2.0 + 3.0 * v).collect();
        let fit = fit_wls(&x, &y, &[0.2, 3.0, 1.0, 0.7, 9.0]).unwrap();
        assert!((fit.coefficients[0] - 2.0).abs() < 1e-10);
        assert!((fit.coefficients[1] - 3.0).abs() < 1e-10);
    }

    /// Plain Gauss-Jordan on the unscaled normal equations.
    fn normal_equation_oracle(x: &[Vec<f64>], y: &[f64], w: &[f64]) -> Vec<f64> {
        let q = x[0].len();
        let mut aug = vec![vec![0.0; q + 1]; q];
        for i in 0..x.len() {
            for a in 0..q {
                for b in 0..q {
                    aug[a][b] += w[i] * x[i][a] * x[i][b];
                }
                aug[a][q] += w[i] * x[i][a] * y[i];
            }
        }
        for c in 0..q {
            let p = (c..q)
                .max_by(|&i, &j| aug[i][c].abs().partial_cmp(&aug[j][c].abs()).unwrap())
                .unwrap();
            aug.swap(c, p);
            for r in 0..q {
                if r != c {
                    let f = aug[r][c] / aug[c][c];
                    for k in c..=q {
                        aug[r][k] -= f * aug[c][k];
                    }
                }
            }
        }
        (0..q).map(|i| aug[i][q] / aug[i][i]).collect()
    }

    #[test]
    fn random_problem_matches_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rows: Vec<Vec<f64>> = (0..50)
            .map(|_| vec![1.0, rng.random_range(-2.0..2.0), rng.random_range(0.0..5.0)])
            .collect();
        let y: Vec<f64> = rows
            .iter()
            .map(|r| 0.5 - r[1] + 0.25 * r[2] + rng.random_range(-0.3..0.3))
            .collect();
        let w: Vec<f64> = (0..50).map(|_| rng.random_range(0.1..2.0)).collect();
        let fit = fit_wls(&design(&rows), &y, &w).unwrap();
        let oracle = normal_equation_oracle(&rows, &y, &w);
        for (a, b) in fit.coefficients.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn collinear_design_gets_ridge() {
        let rows: Vec<Vec<f64>> = (0..6)
            .map(|i| vec![1.0, i as f64, 2.0 * i as f64])
            .collect();
        let y: Vec<f64> = (0..6).map(|i| i as f64).collect();
        let fit = fit_wls(&design(&rows), &y, &[1.0; 6]).unwrap();
        assert!(fit.ridge_applied);
        assert!(fit.coefficients.iter().all(|c| c.is_finite()));
        // Still reproduces the response up to ridge-sized error.
        for (r, yi) in rows.iter().zip(&y) {
            assert!((fit.predict(r) - yi).abs() < 1e-4);
        }
    }

    #[test]
    fn errors() {
        let x = design(&[vec![1.0], vec![1.0]]);
        assert!(matches!(
            fit_wls(&x, &[1.0], &[1.0, 1.0]),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            fit_wls(&x, &[1.0, 2.0], &[0.0, 0.0]),
            Err(Error::ZeroWeights)
        ));
        let wide = design(&[vec![1.0, 2.0, 3.0]]);
        assert!(matches!(
            fit_wls(&wide, &[1.0], &[1.0]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn f32_fits_too() {
        let x =
            Matrix::<f32>::from_rows(&[vec![1.0, 0.0], vec![1.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let fit = fit_wls(&x, &[1.0, 3.0, 5.0], &[1.0, 1.0, 1.0]).unwrap();
        assert!((fit.coefficients[1] - 2.0).abs() < 1e-5);
    }

    proptest::proptest! {
        #[test]
        fn residuals_are_weight_orthogonal(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 40;
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| vec![1.0, rng.random_range(-3.0..3.0), rng.random_range(-1.0..1.0)])
                .collect();
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..3.0)).collect();
            let fit = fit_wls(&design(&rows), &y, &w).unwrap();
            let scale: f64 = y.iter().zip(&w).map(|(a, b)| a.abs() * b).sum::<f64>() * 3.0 + 1.0;
            for j in 0..3 {
                let s: f64 = (0..n).map(|i| w[i] * (y[i] - fit.predict(&rows[i])) * rows[i][j]).sum();
                proptest::prop_assert!(s.abs() < 1e-7 * scale);
            }
        }
    }
}
