//! Zero-order Bessel functions and the analytic background wavefield.
//!
//! `J0` and `Y0` use the ascending power series below [`ASYMPTOTIC_CROSSOVER`]
//! and the Hankel asymptotic expansion above it. The crossover sits where the
//! smallest asymptotic term (roughly `exp(-2x)`) drops below `1e-10`, while the
//! f64 series still loses less than `1e-12` to cancellation.

use std::f64::consts::{FRAC_PI_4, PI};

use num_complex::Complex64;

/// Complex field value. `re`/`im` carry whatever units the context implies.
pub type ComplexValue = Complex64;

/// Euler–Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Arguments at or above this value use the asymptotic expansion.
pub const ASYMPTOTIC_CROSSOVER: f64 = 12.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SpecfunError {
    #[error("argument {x} outside the domain of {function}")]
    Domain { function: &'static str, x: f64 },
    #[error("receiver coincides with the source (|x - xs| = 0)")]
    Singularity,
    #[error("non-physical parameter {name} = {value}")]
    Parameter { name: &'static str, value: f64 },
}

pub fn bessel_j0(x: f64) -> Result<f64, SpecfunError> {
    if !x.is_finite() || x < 0.0 {
        return Err(SpecfunError::Domain { function: "j0", x });
    }
    Ok(if x < ASYMPTOTIC_CROSSOVER {
        j0_series(x)
    } else {
        let (j0, _) = hankel_asymptotic(x);
        j0
    })
}

pub fn bessel_y0(x: f64) -> Result<f64, SpecfunError> {
    if !x.is_finite() || x <= 0.0 {
        return Err(SpecfunError::Domain { function: "y0", x });
    }
    Ok(if x < ASYMPTOTIC_CROSSOVER {
        y0_series(x)
    } else {
        let (_, y0) = hankel_asymptotic(x);
        y0
    })
}

/// `H0^(2)(x) = J0(x) - i Y0(x)`.
pub fn hankel2_0(x: f64) -> Result<ComplexValue, SpecfunError> {
    if !x.is_finite() || x <= 0.0 {
        return Err(SpecfunError::Domain { function: "hankel2_0", x });
    }
    let (j0, y0) = if x < ASYMPTOTIC_CROSSOVER {
        (j0_series(x), y0_series(x))
    } else {
        hankel_asymptotic(x)
    };
    Ok(Complex64::new(j0, -y0))
}

/// Homogeneous-medium Green's function `(i/4) H0^(2)(omega |x - xs| / v0)`.
///
/// Points are `(x, z)` in km, `omega` in rad/s and `v0` in km/s. It solves
/// `(omega^2 / v0^2 + laplacian) u0 = delta(x - xs)` with an outgoing
/// (`exp(+i omega t)`) radiation condition.
pub fn background_wavefield(
    x: (f64, f64),
    xs: (f64, f64),
    omega: f64,
    v0: f64,
) -> Result<ComplexValue, SpecfunError> {
    if !(omega > 0.0 && omega.is_finite()) {
        return Err(SpecfunError::Parameter { name: "omega", value: omega });
    }
    if !(v0 > 0.0 && v0.is_finite()) {
        return Err(SpecfunError::Parameter { name: "v0", value: v0 });
    }
    let r = (x.0 - xs.0).hypot(x.1 - xs.1);
    if r == 0.0 {
        return Err(SpecfunError::Singularity);
    }
    let h = hankel2_0(omega / v0 * r)?;
    // (i/4)(J0 - i Y0) = (Y0 + i J0) / 4
    Ok(Complex64::new(-h.im, h.re) * 0.25)
}

fn j0_series(x: f64) -> f64 {
    let q = 0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 0.0;
    loop {
        k += 1.0;
        term *= -q / (k * k);
        sum += term;
        if term.abs() < 1e-17 * sum.abs().max(1e-300) && k > q.sqrt() {
            break;
        }
    }
    sum
}

fn y0_series(x: f64) -> f64 {
    let q = 0.25 * x * x;
    let mut term = 1.0;
    let mut harmonic = 0.0;
    let mut tail = 0.0;
    let mut k = 0.0;
    loop {
        k += 1.0;
        term *= -q / (k * k);
        harmonic += 1.0 / k;
        let t = -term * harmonic;
        tail += t;
        if t.abs() < 1e-17 * tail.abs().max(1e-300) && k > q.sqrt() {
            break;
        }
    }
    2.0 / PI * (((0.5 * x).ln() + EULER_GAMMA) * j0_series(x) + tail)
}

/// Returns `(J0(x), Y0(x))` from the Hankel expansion `P cos chi - Q sin chi`.
fn hankel_asymptotic(x: f64) -> (f64, f64) {
    let (p, q) = hankel_pq(x);
    let chi = x - FRAC_PI_4;
    let (s, c) = chi.sin_cos();
    let amp = (2.0 / (PI * x)).sqrt();
    (amp * (p * c - q * s), amp * (p * s + q * c))
}

/// Asymptotic `P0(x)`, `Q0(x)`, truncated at the smallest term.
fn hankel_pq(x: f64) -> (f64, f64) {
    let z = 8.0 * x;
    let mut p = 1.0;
    let mut q = 0.0;
    let mut term: f64 = 1.0;
    let mut prev = f64::INFINITY;
    for k in 1..60 {
        let odd = (2 * k - 1) as f64;
        term *= -(odd * odd) / (k as f64 * z);
        let mag = term.abs();
        if mag > prev || mag < 1e-18 {
            break;
        }
        prev = mag;
        // c_k alternates between Q (odd k) and P (even k) with sign (-1)^floor(k/2)
        let signed = if (k / 2) % 2 == 0 { term } else { -term };
        if k % 2 == 1 {
            q += signed;
        } else {
            p += signed;
        }
    }
    (p, q)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn j0_at_zero_is_one() {
        assert_eq!(bessel_j0(0.0).unwrap(), 1.0);
    }

    #[test]
    fn j0_first_zero() {
        assert!(bessel_j0(2.404_825_557_695_773).unwrap().abs() < 1e-9);
    }

    #[test]
    fn y0_log_singularity() {
        assert!(bessel_y0(1e-8).unwrap() < -10.0);
    }

    #[test]
    fn domain_errors() {
        assert!(bessel_j0(-1.0).is_err());
        assert!(bessel_j0(f64::NAN).is_err());
        assert!(bessel_j0(f64::INFINITY).is_err());
        assert!(bessel_y0(0.0).is_err());
        assert!(bessel_y0(-2.0).is_err());
        assert!(hankel2_0(0.0).is_err());
    }

    #[test]
    fn hankel_parts_match_bessels() {
        for &x in &[0.5, 1.0, 5.0, 20.0] {
            let h = hankel2_0(x).unwrap();
            assert_eq!(h.re, bessel_j0(x).unwrap());
            assert_eq!(h.im, -bessel_y0(x).unwrap());
        }
    }

    #[test]
    fn regimes_agree_at_crossover() {
        let x = ASYMPTOTIC_CROSSOVER;
        let (ja, ya) = hankel_asymptotic(x);
        assert!((ja - j0_series(x)).abs() < 1e-10);
        assert!((ya - y0_series(x)).abs() < 1e-10);
    }

    #[test]
    fn background_rejects_coincident_points() {
        let err = background_wavefield((0.3, 0.4), (0.3, 0.4), 10.0, 2.0).unwrap_err();
        assert_eq!(err, SpecfunError::Singularity);
        assert!(background_wavefield((0.0, 0.0), (1.0, 0.0), 0.0, 2.0).is_err());
        assert!(background_wavefield((0.0, 0.0), (1.0, 0.0), 1.0, -2.0).is_err());
    }

    #[test]
    fn background_scale_invariance() {
        let a = background_wavefield((0.1, 0.7), (0.5, 0.025), 2.0 * PI * 3.0, 2.0).unwrap();
        let b = background_wavefield((0.1, 0.7), (0.5, 0.025), 4.0 * PI * 3.0, 4.0).unwrap();
        assert!((a - b).norm() < 1e-15);
    }
}
