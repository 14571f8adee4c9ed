//! Envelope fits `y ~ C log^p(2+t) / (2+t)^q` for measured decay series.

use crate::error::{Error, Result};

/// Fitted envelope constants for one decay series.
#[derive(Clone, Debug)]
pub struct RateFit {
    pub log_power: f64,
    pub poly_power: f64,
    /// Envelope mode: smallest C with `y_j <= C env(t_j)` for every point.
    pub constant: f64,
    /// Least-squares C minimizing `sum (y - C env)^2`.
    pub lsq_constant: f64,
    /// Normalized RMS residual of the least-squares fit.
    pub residual: f64,
    /// Envelope constant of the first half over the second half; the halves
    /// share the middle sample for odd-length series.
    pub stability_ratio: f64,
    pub n_points: usize,
}

/// The envelope shape `log^p(2+t) / (2+t)^q`.
pub fn envelope(t: f64, log_power: f64, poly_power: f64) -> f64 {
    (2.0 + t).ln().powf(log_power) / (2.0 + t).powf(poly_power)
}

/// Fit the envelope constants of `values` over `times`.
pub fn rate_fit(times: &[f64], values: &[f64], log_power: f64, poly_power: f64) -> Result<RateFit> {
    if times.len() != values.len() {
        return Err(Error::InvalidParameter(
            "rate fit needs matching time and value lengths".into(),
        ));
    }
    if times.len() < 3 {
        return Err(Error::InvalidParameter(format!(
            "rate fit needs at least 3 points, got {}",
            times.len()
        )));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter("rate fit times must increase".into()));
    }
    if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidParameter(
            "rate fit values must be finite and non-negative".into(),
        ));
    }
    let n = times.len();
    let envs: Vec<f64> = times.iter().map(|&t| envelope(t, log_power, poly_power)).collect();
    let ratios: Vec<f64> = values.iter().zip(&envs).map(|(y, e)| y / e).collect();
    let constant = ratios.iter().fold(0.0f64, |m, &r| m.max(r));

    let mid = (n - 1) / 2;
    let first = ratios[..=mid].iter().fold(0.0f64, |m, &r| m.max(r));
    let second = ratios[mid..].iter().fold(0.0f64, |m, &r| m.max(r));
    let stability_ratio = if second == 0.0 && first == 0.0 {
        1.0
    } else {
        first / second.max(f64::MIN_POSITIVE)
    };

    let num: f64 = values.iter().zip(&envs).map(|(y, e)| y * e).sum();
    let den: f64 = envs.iter().map(|e| e * e).sum();
    let lsq_constant = if den > 0.0 { num / den } else { 0.0 };
    let scale = values.iter().fold(0.0f64, |m, &y| m.max(y)).max(f64::MIN_POSITIVE);
    let residual = (values
        .iter()
        .zip(&envs)
        .map(|(y, e)| (y - lsq_constant * e).powi(2))
        .sum::<f64>()
        / n as f64)
        .sqrt()
        / scale;

    Ok(RateFit {
        log_power,
        poly_power,
        constant,
        lsq_constant,
        residual,
        stability_ratio,
        n_points: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_envelope_series_fits_with_unit_constant() {
        let times: Vec<f64> = vec![25.0, 50.0, 100.0, 200.0];
        let values: Vec<f64> = times.iter().map(|&t| envelope(t, 6.0, 1.0)).collect();
        let fit = rate_fit(&times, &values, 6.0, 1.0).unwrap();
        assert!((fit.constant - 1.0).abs() < 1e-12);
        assert!((fit.stability_ratio - 1.0).abs() < 1e-12);
        assert!(fit.residual < 1e-12);
    }

    #[test]
    fn constant_series_with_zero_powers() {
        let times = vec![1.0, 2.0, 4.0, 8.0];
        let values = vec![3.5; 4];
        let fit = rate_fit(&times, &values, 0.0, 0.0).unwrap();
        assert!((fit.constant - 3.5).abs() < 1e-14);
        assert!((fit.lsq_constant - 3.5).abs() < 1e-14);
        assert!((fit.stability_ratio - 1.0).abs() < 1e-14);
    }

    #[test]
    fn multiplicative_noise_moves_the_constant_boundedly() {
        let times: Vec<f64> = vec![25.0, 50.0, 100.0, 200.0, 400.0];
        let clean: Vec<f64> = times.iter().map(|&t| 2.0 * envelope(t, 6.0, 1.0)).collect();
        // deterministic +-10% pattern
        let noisy: Vec<f64> = clean
            .iter()
            .enumerate()
            .map(|(i, y)| y * if i % 2 == 0 { 1.1 } else { 0.9 })
            .collect();
        let fit_clean = rate_fit(&times, &clean, 6.0, 1.0).unwrap();
        let fit_noisy = rate_fit(&times, &noisy, 6.0, 1.0).unwrap();
        assert!((fit_noisy.constant - fit_clean.constant).abs() <= 0.15 * fit_clean.constant);
    }

    #[test]
    fn too_few_points_rejected() {
        assert!(rate_fit(&[1.0, 2.0], &[1.0, 1.0], 6.0, 1.0).is_err());
        assert!(rate_fit(&[2.0, 1.0, 3.0], &[1.0, 1.0, 1.0], 6.0, 1.0).is_err());
    }
}
