//! Diagonal Gaussian action distribution with a state-independent log std.

use std::f64::consts::{E, PI};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// `0.5 · ln(2π)`
pub fn half_log_two_pi() -> f64 {
    0.5 * (2.0 * PI).ln()
}

/// `0.5 · ln(2πe)`, the per-dimension entropy of a unit Gaussian.
pub fn half_log_two_pi_e() -> f64 {
    0.5 * (2.0 * PI * E).ln()
}

/// Log-density of `action` and the distribution's entropy. `log_std` is
/// clamped to `[LOG_STD_MIN, LOG_STD_MAX]`.
pub fn gaussian_head(mean: &[f64], log_std: &[f64], action: &[f64]) -> (f64, f64) {
    debug_assert_eq!(mean.len(), log_std.len());
    debug_assert_eq!(mean.len(), action.len());
    let mut log_prob = 0.0;
    let mut entropy = 0.0;
    for ((&m, &ls), &a) in mean.iter().zip(log_std).zip(action) {
        let ls = ls.clamp(LOG_STD_MIN, LOG_STD_MAX);
        let z = (a - m) / ls.exp();
        log_prob -= 0.5 * z * z + ls + half_log_two_pi();
        entropy += ls + half_log_two_pi_e();
    }
    (log_prob, entropy)
}

/// Closed-form KL(old ‖ new) between diagonal Gaussians.
pub fn kl_diag(mu_old: &[f64], log_std_old: &[f64], mu_new: &[f64], log_std_new: &[f64]) -> f64 {
    let mut kl = 0.0;
    for i in 0..mu_old.len() {
        let so = log_std_old[i].clamp(LOG_STD_MIN, LOG_STD_MAX).exp();
        let sn = log_std_new[i].clamp(LOG_STD_MIN, LOG_STD_MAX).exp();
        let dm = mu_old[i] - mu_new[i];
        kl += (sn / so).ln() + (so * so + dm * dm) / (2.0 * sn * sn) - 0.5;
    }
    kl
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_prob_at_mean_unit_std() {
        let (lp, _) = gaussian_head(&[0.3; 8], &[0.0; 8], &[0.3; 8]);
        let want = -8.0 * 0.5 * (2.0 * PI).ln();
        assert!((lp - want).abs() < 1e-12);
        assert!((lp - -7.3515).abs() < 1e-3);
    }

    #[test]
    fn entropy_of_unit_std() {
        let (_, h) = gaussian_head(&[0.0; 8], &[0.0; 8], &[1.0; 8]);
        let want = 8.0 * 0.5 * (2.0 * PI * E).ln();
        assert!((h - want).abs() < 1e-12);
        assert!((h - 11.3515).abs() < 1e-3);
    }

    #[test]
    fn translation_invariant() {
        let mean = [0.1, -0.2, 0.3, 0.0, 1.0, -1.0, 0.5, 0.25];
        let ls = [-0.5, 0.0, 0.2, -1.0, 0.1, 0.3, -0.2, 0.0];
        let act = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7];
        let shift = [3.0, -2.0, 1.5, 0.0, 10.0, -7.0, 0.125, 4.0];
        let m2: Vec<f64> = mean.iter().zip(&shift).map(|(a, b)| a + b).collect();
        let a2: Vec<f64> = act.iter().zip(&shift).map(|(a, b)| a + b).collect();
        let (lp1, _) = gaussian_head(&mean, &ls, &act);
        let (lp2, _) = gaussian_head(&m2, &ls, &a2);
        assert!((lp1 - lp2).abs() < 1e-12);
    }

    #[test]
    fn log_std_is_clamped() {
        let (_, h) = gaussian_head(&[0.0], &[50.0], &[0.0]);
        assert!((h - (LOG_STD_MAX + half_log_two_pi_e())).abs() < 1e-12);
    }

    #[test]
    fn kl_of_identical_is_zero() {
        let m = [0.2, -0.4];
        let s = [0.1, -0.3];
        assert!(kl_diag(&m, &s, &m, &s).abs() < 1e-15);
        assert!(kl_diag(&m, &s, &[0.3, -0.4], &s) > 0.0);
    }
}
