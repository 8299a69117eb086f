//! Conditional value at risk of a Gaussian cost.

use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// `phi(Phi^-1(alpha)) / alpha`: the number of standard deviations the CVaR
/// of the worst `alpha` tail sits above the mean.
pub fn cvar_std_factor(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Input(format!("risk level {alpha} not in (0, 1]")));
    }
    let n = Normal::standard();
    Ok(n.pdf(n.inverse_cdf(alpha)) / alpha)
}

/// CVaR at risk level `alpha` of a cost distributed as `N(mean, var)`.
pub fn cvar_gaussian(mean: f64, var: f64, alpha: f64) -> Result<f64> {
    if !(var >= 0.0) {
        return Err(Error::Input(format!("variance {var} is negative")));
    }
    Ok(mean + cvar_std_factor(alpha)? * var.sqrt())
}
