use statrs::distribution::{ContinuousCDF, FisherSnedecor, StudentsT};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum OlsError {
    #[error("need more observations ({n}) than columns ({p})")]
    TooFewRows { n: usize, p: usize },
    #[error("design is rank deficient; dependent columns: {}", .0.join(", "))]
    Singular(Vec<String>),
    #[error("row {row} has {got} values, expected {expected}")]
    Ragged { row: usize, got: usize, expected: usize },
    #[error("non-finite value in design or response")]
    NonFinite,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub t_value: f64,
    pub p_value: f64,
}

/// Classical least-squares fit summary.
#[derive(Clone, Debug, PartialEq)]
pub struct FitReport {
    pub coefficients: Vec<Coefficient>,
    pub n: usize,
    /// Residual standard error.
    pub sigma: f64,
    /// Residual degrees of freedom, `n - p`.
    pub df: usize,
    pub r_squared: f64,
    pub adj_r_squared: f64,
    pub f_statistic: f64,
    pub f_df: (usize, usize),
    pub f_p_value: f64,
    pub residuals: Vec<f64>,
    pub fitted: Vec<f64>,
    pub has_intercept: bool,
}

impl FitReport {
    pub fn coefficient(&self, name: &str) -> Option<&Coefficient> {
        self.coefficients.iter().find(|c| c.name == name)
    }

    /// Two-sided confidence interval for coefficient `j`.
    pub fn confidence_interval(&self, j: usize, level: f64) -> (f64, f64) {
        let c = &self.coefficients[j];
        let t = StudentsT::new(0.0, 1.0, self.df as f64).expect("df > 0").inverse_cdf(0.5 + level / 2.0);
        (c.estimate - t * c.std_error, c.estimate + t * c.std_error)
    }
}

/// Householder QR of a column-major `n x p` matrix. Returns the packed
/// reflectors, the `R` diagonal and the reflector scalings.
struct Qr {
    cols: Vec<Vec<f64>>,
    rdiag: Vec<f64>,
}

impl Qr {
    fn new(mut cols: Vec<Vec<f64>>) -> Self {
        let p = cols.len();
        let n = cols.first().map_or(0, Vec::len);
        let mut rdiag = vec![0.0; p];
        for k in 0..p {
            let norm = cols[k][k..].iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                rdiag[k] = 0.0;
                continue;
            }
            let alpha = if cols[k][k] > 0.0 { -norm } else { norm };
            // v = x - alpha e1, stored in place below the diagonal
            cols[k][k] -= alpha;
            let vnorm2: f64 = cols[k][k..].iter().map(|v| v * v).sum();
            for j in k + 1..p {
                let dot: f64 = (k..n).map(|i| cols[k][i] * cols[j][i]).sum();
                let f = 2.0 * dot / vnorm2;
                for i in k..n {
                    let vk = cols[k][i];
                    cols[j][i] -= f * vk;
                }
            }
            rdiag[k] = alpha;
        }
        Self { cols, rdiag }
    }

    /// Applies Q^T to `y` in place.
    fn qt_mul(&self, y: &mut [f64]) {
        let n = y.len();
        for (k, col) in self.cols.iter().enumerate() {
            if self.rdiag[k] == 0.0 {
                continue;
            }
            let vnorm2: f64 = col[k..].iter().map(|v| v * v).sum();
            let dot: f64 = (k..n).map(|i| col[i] * y[i]).sum();
            let f = 2.0 * dot / vnorm2;
            for i in k..n {
                y[i] -= f * col[i];
            }
        }
    }

    fn r(&self, i: usize, j: usize) -> f64 {
        match i.cmp(&j) {
            std::cmp::Ordering::Equal => self.rdiag[i],
            std::cmp::Ordering::Less => self.cols[j][i],
            std::cmp::Ordering::Greater => 0.0,
        }
    }
}

/// Least squares of `y` on the rows of `x` via Householder QR.
///
/// `names` labels the columns. When a column is constant 1 the model is
/// treated as having an intercept: R-squared is centered and the F test is
/// for all other coefficients being zero.
pub fn ols_fit(names: &[String], x: &[Vec<f64>], y: &[f64]) -> Result<FitReport, OlsError> {
    let n = y.len();
    let p = names.len();
    if n <= p {
        return Err(OlsError::TooFewRows { n, p });
    }
    for (row, r) in x.iter().enumerate() {
        if r.len() != p {
            return Err(OlsError::Ragged { row, got: r.len(), expected: p });
        }
    }
    if x.len() != n {
        return Err(OlsError::Ragged { row: x.len(), got: 0, expected: p });
    }
    if x.iter().flatten().chain(y).any(|v| !v.is_finite()) {
        return Err(OlsError::NonFinite);
    }
    let cols: Vec<Vec<f64>> = (0..p).map(|j| x.iter().map(|r| r[j]).collect()).collect();
    let col_norms: Vec<f64> = cols.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let qr = Qr::new(cols.clone());

    let dependent: Vec<String> = (0..p)
        .filter(|&j| qr.rdiag[j].abs() <= 1e-10 * col_norms[j].max(f64::MIN_POSITIVE))
        .map(|j| names[j].clone())
        .collect();
    if !dependent.is_empty() {
        return Err(OlsError::Singular(dependent));
    }

    let mut qty = y.to_vec();
    qr.qt_mul(&mut qty);
    let mut beta = vec![0.0; p];
    for i in (0..p).rev() {
        let s: f64 = (i + 1..p).map(|j| qr.r(i, j) * beta[j]).sum();
        beta[i] = (qty[i] - s) / qr.r(i, i);
    }

    // R^{-1}, upper triangular, for the coefficient covariance.
    let mut rinv = vec![vec![0.0; p]; p];
    for j in 0..p {
        rinv[j][j] = 1.0 / qr.r(j, j);
        for i in (0..j).rev() {
            let s: f64 = (i + 1..=j).map(|k| qr.r(i, k) * rinv[k][j]).sum();
            rinv[i][j] = -s / qr.r(i, i);
        }
    }

    let fitted: Vec<f64> = x.iter().map(|r| r.iter().zip(&beta).map(|(a, b)| a * b).sum()).collect();
    let residuals: Vec<f64> = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
    let rss: f64 = residuals.iter().map(|e| e * e).sum();
    let df = n - p;
    let sigma2 = rss / df as f64;
    let sigma = sigma2.sqrt();

    let has_intercept = cols.iter().any(|c| c.iter().all(|v| *v == 1.0));
    let tss = if has_intercept {
        let mean = y.iter().sum::<f64>() / n as f64;
        y.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
    } else {
        y.iter().map(|v| v * v).sum::<f64>()
    };
    let r_squared = if tss > 0.0 { (1.0 - rss / tss).clamp(0.0, 1.0) } else { 1.0 };
    let df_model = if has_intercept { p - 1 } else { p };
    let df_total = if has_intercept { n - 1 } else { n };
    let adj_r_squared = 1.0 - (1.0 - r_squared) * df_total as f64 / df as f64;

    let tdist = StudentsT::new(0.0, 1.0, df as f64).expect("df > 0");
    let coefficients = (0..p)
        .map(|j| {
            let var: f64 = (j..p).map(|k| rinv[j][k].powi(2)).sum::<f64>() * sigma2;
            let se = var.sqrt();
            let t = beta[j] / se;
            let p_value = if t.is_finite() { 2.0 * tdist.sf(t.abs()) } else { 0.0 };
            Coefficient { name: names[j].clone(), estimate: beta[j], std_error: se, t_value: t, p_value }
        })
        .collect();

    let (f_statistic, f_p_value) = if df_model > 0 {
        let f = ((tss - rss) / df_model as f64) / sigma2;
        let fd = FisherSnedecor::new(df_model as f64, df as f64).expect("positive df");
        let pv = if f.is_finite() { fd.sf(f.max(0.0)) } else { 0.0 };
        (f, pv)
    } else {
        (f64::NAN, f64::NAN)
    };

    Ok(FitReport {
        coefficients,
        n,
        sigma,
        df,
        r_squared,
        adj_r_squared,
        f_statistic,
        f_df: (df_model, df),
        f_p_value,
        residuals,
        fitted,
        has_intercept,
    })
}
