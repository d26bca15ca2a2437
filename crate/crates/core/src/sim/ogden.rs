//! One-term Ogden energy for unconfined uniaxial compression.
//!
//! The principal compressive stretch is `λ2`; incompressibility gives
//! `λ1 = λ3 = λ2^(-1/2)`, so the density reduces to a function of `λ2` alone:
//!
//! ```text
//! W(λ2) = (2μ/α²) (2 λ2^(-α/2) + λ2^α - 3)
//! ```

/// Strain-energy density at stretch `lambda` (same units as `mu`).
pub fn energy_density(mu: f64, alpha: f64, lambda: f64) -> f64 {
    2.0 * mu / (alpha * alpha) * (2.0 * lambda.powf(-alpha / 2.0) + lambda.powf(alpha) - 3.0)
}

/// dW/dλ2.
pub fn energy_density_slope(mu: f64, alpha: f64, lambda: f64) -> f64 {
    2.0 * mu / alpha * (lambda.powf(alpha - 1.0) - lambda.powf(-alpha / 2.0 - 1.0))
}

/// d²W/dλ2².
pub fn energy_density_curvature(mu: f64, alpha: f64, lambda: f64) -> f64 {
    2.0 * mu / alpha
        * ((alpha - 1.0) * lambda.powf(alpha - 2.0)
            + (alpha / 2.0 + 1.0) * lambda.powf(-alpha / 2.0 - 2.0))
}

/// Compressive stretch produced by a lateral deflection.
pub fn stretch_from_deflection(deflection: f64, t_char: f64) -> f64 {
    1.0 - deflection.abs() / t_char
}
