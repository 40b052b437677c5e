//! Multiple linear regression on the one-hot design.

use crate::dataset::{one_hot, DenseMatrix, EncodedDataset, FeatureRows};
use crate::nd::gemm::{gemm, Layout};

use super::ClassicalError;

/// Default ridge added to the normal equations; resolves the collinearity
/// between each one-hot group and the intercept.
pub const DEFAULT_RIDGE: f64 = 1e-8;

/// `y = β₀ + Σ βⱼ·xⱼ` fitted by ridge-regularized least squares with an
/// unpenalized intercept.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearFit {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    /// Population standard deviation of each design column on the fit data.
    pub column_std: Vec<f64>,
}

impl LinearFit {
    pub fn predict(&self, x: &DenseMatrix) -> Vec<f64> {
        (0..x.rows)
            .map(|i| {
                self.intercept
                    + x.row(i)
                        .iter()
                        .zip(&self.coefficients)
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
            })
            .collect()
    }

    /// `y − ŷ`, the residual term of the fitted equation.
    pub fn residuals(&self, x: &DenseMatrix, y: &[f64]) -> Vec<f64> {
        self.predict(x).iter().zip(y).map(|(p, t)| t - p).collect()
    }
}

/// Solves `(XcᵀXc + ridge·I)β = Xcᵀyc` on column-centered data, then sets
/// `β₀ = ȳ − x̄·β`.
///
/// The system is solved in column-scaled coordinates for conditioning;
/// the scaling is exact, so the solution is the one stated above. Columns
/// that are constant on the fit data get a zero coefficient.
pub fn fit_linear(x: &DenseMatrix, y: &[f64], ridge: f64) -> Result<LinearFit, ClassicalError> {
    let (n, p) = (x.rows, x.cols);
    if n == 0 {
        return Err(ClassicalError::EmptyTrainingSet);
    }
    if y.len() != n {
        return Err(ClassicalError::Solver(format!("{} targets for {n} rows", y.len())));
    }
    if !(ridge >= 0.0) {
        return Err(ClassicalError::Solver(format!("ridge must be >= 0, got {ridge}")));
    }
    let nf = n as f64;
    let y_mean = y.iter().sum::<f64>() / nf;
    let mut means = vec![0.0; p];
    for i in 0..n {
        means.iter_mut().zip(x.row(i)).for_each(|(m, v)| *m += v);
    }
    means.iter_mut().for_each(|m| *m /= nf);

    let mut norms = vec![0.0; p];
    for i in 0..n {
        for (j, v) in x.row(i).iter().enumerate() {
            norms[j] += (v - means[j]).powi(2);
        }
    }
    norms.iter_mut().for_each(|s| *s = s.sqrt());
    let column_std: Vec<f64> = norms.iter().map(|s| s / nf.sqrt()).collect();
    let active: Vec<usize> = (0..p)
        .filter(|&j| norms[j] > 1e-12 * (1.0 + means[j].abs()) * nf.sqrt())
        .collect();
    let q = active.len();

    let mut coefficients = vec![0.0; p];
    if q > 0 {
        // Z = Xc·D⁻¹ restricted to active columns
        let mut z = vec![0.0; n * q];
        for i in 0..n {
            let row = x.row(i);
            for (a, &j) in active.iter().enumerate() {
                z[i * q + a] = (row[j] - means[j]) / norms[j];
            }
        }
        let yc: Vec<f64> = y.iter().map(|v| v - y_mean).collect();
        let mut gram = vec![0.0; q * q];
        gemm(q, n, q, &z, Layout::Transposed, &z, Layout::Plain, 0.0, &mut gram);
        for (a, &j) in active.iter().enumerate() {
            gram[a * q + a] += ridge / (norms[j] * norms[j]);
        }
        let mut rhs = vec![0.0; q];
        gemm(q, n, 1, &z, Layout::Transposed, &yc, Layout::Plain, 0.0, &mut rhs);
        let gamma = cholesky_solve(&mut gram, &rhs, q)?;
        for (a, &j) in active.iter().enumerate() {
            coefficients[j] = gamma[a] / norms[j];
        }
    }
    let intercept = y_mean - means.iter().zip(&coefficients).map(|(m, b)| m * b).sum::<f64>();
    if !intercept.is_finite() || coefficients.iter().any(|c| !c.is_finite()) {
        return Err(ClassicalError::Solver("non-finite coefficients".into()));
    }
    Ok(LinearFit {
        intercept,
        coefficients,
        column_std,
    })
}

/// In-place Cholesky factorization of the symmetric matrix `a` followed by
/// forward and back substitution.
fn cholesky_solve(a: &mut [f64], b: &[f64], n: usize) -> Result<Vec<f64>, ClassicalError> {
    let scale = (0..n).map(|i| a[i * n + i].abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > scale * 1e-15) {
            return Err(ClassicalError::Solver(format!(
                "normal equations are numerically singular at column {j}"
            )));
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    let mut z = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            z[i] -= a[i * n + k] * z[k];
        }
        z[i] /= a[i * n + i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            z[i] -= a[k * n + i] * z[k];
        }
        z[i] /= a[i * n + i];
    }
    Ok(z)
}

/// Linear model bound to the schema it was fitted on. Consumes the raw
/// (unstandardized) one-hot design.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel {
    pub schema_hash: u64,
    pub fit: LinearFit,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinearConfig {
    pub ridge: f64,
}

impl Default for LinearConfig {
    fn default() -> Self {
        Self { ridge: DEFAULT_RIDGE }
    }
}

impl LinearModel {
    pub fn fit(train: &EncodedDataset, cfg: &LinearConfig) -> Result<Self, ClassicalError> {
        let x = one_hot(train.features());
        Ok(Self {
            schema_hash: train.schema().fingerprint(),
            fit: fit_linear(&x, train.targets(), cfg.ridge)?,
        })
    }

    pub fn predict(&self, rows: &FeatureRows) -> Result<Vec<f64>, ClassicalError> {
        super::check_schema(self.schema_hash, rows)?;
        Ok(self.fit.predict(&one_hot(rows)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn design(rows: &[&[f64]]) -> DenseMatrix {
        DenseMatrix {
            rows: rows.len(),
            cols: rows[0].len(),
            data: rows.concat(),
        }
    }

    #[test]
    fn recovers_noiseless_line() {
        let x = design(&[&[0.0], &[1.0], &[2.0], &[3.0], &[7.5]]);
        let y: Vec<f64> = x.data.iter().map(|v| 2.0 * v + 1.0).collect();
        let fit = fit_linear(&x, &y, DEFAULT_RIDGE).unwrap();
        assert!((fit.intercept - 1.0).abs() < 1e-8);
        assert!((fit.coefficients[0] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn constant_target_gives_flat_model() {
        let x = design(&[&[0.0, 5.0], &[1.0, 3.0], &[2.0, 9.0], &[4.0, 1.0]]);
        let fit = fit_linear(&x, &[4.0; 4], DEFAULT_RIDGE).unwrap();
        assert!(fit.coefficients.iter().all(|c| c.abs() < 1e-12));
        assert!((fit.intercept - 4.0).abs() < 1e-12);
    }

    #[test]
    fn constant_columns_get_zero_weight() {
        let x = design(&[&[1.0, 3.0], &[2.0, 3.0], &[3.0, 3.0]]);
        let fit = fit_linear(&x, &[1.0, 2.0, 3.0], 0.0).unwrap();
        assert_eq!(fit.coefficients[1], 0.0);
        assert!((fit.coefficients[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn collinear_design_needs_ridge() {
        // second column duplicates the first
        let x = design(&[&[1.0, 1.0], &[2.0, 2.0], &[4.0, 4.0]]);
        assert!(matches!(
            fit_linear(&x, &[1.0, 2.0, 3.0], 0.0),
            Err(ClassicalError::Solver(_))
        ));
        let fit = fit_linear(&x, &[1.0, 2.0, 4.0], DEFAULT_RIDGE).unwrap();
        let pred = fit.predict(&x);
        assert!((pred[2] - 4.0).abs() < 1e-6);
    }

    #[test]
    fn empty_design_rejected() {
        let x = DenseMatrix {
            rows: 0,
            cols: 2,
            data: vec![],
        };
        assert_eq!(fit_linear(&x, &[], 0.0).unwrap_err(), ClassicalError::EmptyTrainingSet);
    }
}
