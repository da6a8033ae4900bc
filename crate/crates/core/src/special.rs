//! Scalar special functions shared by the tape and the layers.

use std::f64::consts::FRAC_2_SQRT_PI;

/// Error function (double precision, from `libm`).
pub fn erf(x: f64) -> f64 {
    libm::erf(x)
}

/// Derivative of [`erf`]: `2/sqrt(pi) * exp(-x^2)`.
pub fn erf_derivative(x: f64) -> f64 {
    FRAC_2_SQRT_PI * (-x * x).exp()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn erf_reference_points() {
        assert_eq!(erf(0.0), 0.0);
        // Tabulated erf values.
        for (x, want) in [
            (0.5, 0.520_499_877_813_046_5),
            (0.75, 0.711_155_633_653_515_1),
            (1.0, 0.842_700_792_949_714_9),
            (2.0, 0.995_322_265_018_952_7),
        ] {
            assert!((erf(x) - want).abs() < 1e-15, "erf({x})");
            assert!((erf(-x) + want).abs() < 1e-15);
        }
        assert_eq!(erf(1e6), 1.0);
    }

    #[test]
    fn erf_derivative_matches_central_difference() {
        let h = 1e-6;
        for i in -40..=40 {
            let x = i as f64 * 0.1 + 0.013;
            let fd = (erf(x + h) - erf(x - h)) / (2.0 * h);
            assert!((fd - erf_derivative(x)).abs() < 1e-9, "x={x}");
        }
    }

    #[test]
    fn sigmoid_basics() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(800.0) <= 1.0 && sigmoid(-800.0) >= 0.0);
    }
}
