use crate::error::{Error, Result};

/// Receive time `t̂` at element offset `δm` for a line at angle `α`, given the
/// nominal two-way time `t` of the focal point on that line:
/// `t̂ = t/2 + sqrt(t²/4 − t·sin α·δm/c + (δm/c)²)`.
pub fn compute_delay(t: f64, alpha: f64, delta_m: f64, c: f64) -> Result<f64> {
    let d = delta_m / c;
    let disc = t * t / 4.0 - t * alpha.sin() * d + d * d;
    if disc < 0.0 || !disc.is_finite() {
        return Err(Error::numerical(format!(
            "negative delay discriminant {disc} at t={t}, alpha={alpha}, delta={delta_m}"
        )));
    }
    Ok(t / 2.0 + disc.sqrt())
}

/// Unchecked variant for the focusing inner loop; the discriminant equals a
/// squared distance divided by c² and cannot go negative for `t ≥ 0`.
#[inline]
pub(crate) fn delay_unchecked(t: f64, sin_alpha: f64, delta_over_c: f64) -> f64 {
    let disc = t * t / 4.0 - t * sin_alpha * delta_over_c + delta_over_c * delta_over_c;
    t / 2.0 + disc.max(0.0).sqrt()
}

/// Rotates `(i, q)` by `ω0·Δt`.
pub fn phase_rotate(i: f64, q: f64, dt: f64, omega0: f64) -> (f64, f64) {
    let (s, c) = (omega0 * dt).sin_cos();
    (c * i - s * q, s * i + c * q)
}

/// Two-tap linear interpolation weights at fractional index `pos`: returns
/// `(n0, w0, w1)` for samples `n0` and `n0 + 1`; taps outside `[0, len)` are zero padding.
#[inline]
pub(crate) fn interp_taps(pos: f64) -> (isize, f64, f64) {
    let n0 = pos.floor();
    let frac = pos - n0;
    (n0 as isize, 1.0 - frac, frac)
}

/// Linear interpolation of `signal` at time `t_hat`, zero outside `[0, T−1]`.
pub fn sample_delayed(signal: &[f64], t_hat: f64, fs: f64) -> f64 {
    let (n0, w0, w1) = interp_taps(t_hat * fs);
    let at = |n: isize| {
        if n >= 0 && (n as usize) < signal.len() {
            signal[n as usize]
        } else {
            0.0
        }
    };
    w0 * at(n0) + w1 * at(n0 + 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn center_element_identity() {
        let t = 20e-6;
        for alpha in [-0.5, 0.0, 0.3] {
            assert_eq!(compute_delay(t, alpha, 0.0, 1540.0).unwrap(), t);
        }
    }

    #[test]
    fn zero_time_reduces_to_element_distance() {
        let t_hat = compute_delay(0.0, 0.2, 1.54e-3, 1540.0).unwrap();
        assert!((t_hat - 1e-6).abs() < 1e-18);
    }

    #[test]
    fn rotation_cases() {
        assert_eq!(phase_rotate(0.3, -0.7, 0.0, 1e7), (0.3, -0.7));
        let omega = 2.0 * std::f64::consts::PI * 2.5e6;
        let dt = std::f64::consts::FRAC_PI_2 / omega;
        let (i, q) = phase_rotate(1.0, 0.0, dt, omega);
        assert!(i.abs() < 1e-15 && (q - 1.0).abs() < 1e-15);
    }

    #[test]
    fn interpolation_cases() {
        let s = [1.0, 3.0, 7.0, -2.0];
        let fs = 1.0;
        assert_eq!(sample_delayed(&s, 2.0 / fs, fs), 7.0);
        assert_eq!(sample_delayed(&s, 1.5 / fs, fs), 5.0);
        assert_eq!(sample_delayed(&s, -1.0 / fs, fs), 0.0);
        assert_eq!(sample_delayed(&s, 5.0 / fs, fs), 0.0);
        assert_eq!(sample_delayed(&s, 3.0 / fs, fs), -2.0);
    }
}
