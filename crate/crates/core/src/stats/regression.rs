//! Ordinary least squares on one predictor.

use serde::{Deserialize, Serialize};

use super::dist::student_t_two_sided;
use super::StatsError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub slope: f64,
    pub intercept: f64,
    pub slope_std_error: f64,
    pub r_squared: f64,
    pub t_statistic: f64,
    /// Two-sided, `n − 2` degrees of freedom.
    pub p_value: f64,
    pub n: usize,
}

pub fn linear_regression(x: &[f64], y: &[f64]) -> Result<RegressionResult, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::Argument(format!("x has {} values, y has {}", x.len(), y.len())));
    }
    let n = x.len();
    if n < 3 {
        return Err(StatsError::Argument(format!("regression needs at least 3 points, got {n}")));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(StatsError::Argument("non-finite regression input".into()));
    }
    let nf = n as f64;
    let (mx, my) = (x.iter().sum::<f64>() / nf, y.iter().sum::<f64>() / nf);
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let xscale = x.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    if sxx <= (1e-13 * xscale).powi(2) * nf {
        return Err(StatsError::DegeneratePredictor);
    }
    let yscale = y.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if syy <= (1e-13 * yscale).powi(2) * nf {
        // constant response: nothing to explain
        return Ok(RegressionResult {
            slope: 0.0,
            intercept: my,
            slope_std_error: 0.0,
            r_squared: 0.0,
            t_statistic: 0.0,
            p_value: 1.0,
            n,
        });
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res = y.iter().zip(x).map(|(b, a)| (b - intercept - slope * a).powi(2)).sum::<f64>();
    let r_squared = (1.0 - ss_res / syy).clamp(0.0, 1.0);
    let df = nf - 2.0;
    let se = (ss_res / df / sxx).sqrt();
    let (t, p) = if se > 0.0 {
        let t = slope / se;
        (t, student_t_two_sided(t, df))
    } else {
        (f64::INFINITY.copysign(slope), 0.0)
    };
    Ok(RegressionResult { slope, intercept, slope_std_error: se, r_squared, t_statistic: t, p_value: p, n })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_fit() {
        let x = [0.0, 1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let r = linear_regression(&x, &y).unwrap();
        assert!((r.slope - 2.0).abs() < 1e-14 && (r.intercept - 1.0).abs() < 1e-14);
        assert!((r.r_squared - 1.0).abs() < 1e-14);
        assert!(r.p_value < 1e-10);
    }

    #[test]
    fn constant_response() {
        let r = linear_regression(&[1.0, 2.0, 3.0, 4.0], &[0.1; 4]).unwrap();
        assert_eq!((r.slope, r.r_squared, r.p_value), (0.0, 0.0, 1.0));
    }

    #[test]
    fn normal_equations_oracle() {
        // solve [n Σx; Σx Σx²][b0; b1] = [Σy; Σxy] by Cramer's rule
        let x = [1.0, 2.0, 4.0, 5.0, 8.0];
        let y = [3.1, 4.9, 9.2, 10.8, 17.5];
        let (n, sx, sxx) = (5.0, x.iter().sum::<f64>(), x.iter().map(|v| v * v).sum::<f64>());
        let (sy, sxy) = (y.iter().sum::<f64>(), x.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>());
        let det = n * sxx - sx * sx;
        let b1 = (n * sxy - sx * sy) / det;
        let b0 = (sxx * sy - sx * sxy) / det;
        let r = linear_regression(&x, &y).unwrap();
        assert!((r.slope - b1).abs() < 1e-12 && (r.intercept - b0).abs() < 1e-12);
        // t from residual variance, computed independently
        let res: f64 = x.iter().zip(&y).map(|(a, b)| (b - b0 - b1 * a).powi(2)).sum();
        let se = (res / 3.0 / (sxx - sx * sx / n)).sqrt();
        assert!((r.t_statistic - b1 / se).abs() < 1e-9);
    }

    #[test]
    fn degenerate_predictor() {
        assert!(matches!(
            linear_regression(&[2.0; 5], &[1.0, 2.0, 3.0, 4.0, 5.0]),
            Err(StatsError::DegeneratePredictor)
        ));
        assert!(linear_regression(&[1.0, 2.0], &[1.0, 2.0]).is_err());
    }
}
