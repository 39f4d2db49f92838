//! Time-since-infection infectiousness profile: a mode-normalized Gamma
//! density windowed by smooth latent/recovery gates so the timing
//! parameters stay learnable.

use crate::autodiff::{lgamma, AdError, Tape, Tensor};

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Unwindowed profile: Gamma density at t divided by its value at the mode
/// (v - 1) * lambda. Requires t > 0 and v > 1.
pub fn gamma_ratio_scalar(t: f64, v: f64, lambda: f64) -> f64 {
    debug_assert!(t > 0.0 && v > 1.0 && lambda > 0.0);
    let log_g = |x: f64| (v - 1.0) * x.ln() - x / lambda - lgamma(v) - v * lambda.ln();
    let mode = (v - 1.0) * lambda;
    (log_g(t) - log_g(mode)).exp()
}

/// Windowed profile value in [0,1].
pub fn profile_scalar(t: f64, v: f64, lambda: f64, theta_ei: f64, theta_ir: f64, k: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    gamma_ratio_scalar(t, v, lambda) * sigmoid(k * (t - theta_ei)) * sigmoid(k * (theta_ir - t))
}

/// Tape version over a vector of elapsed times (all entries > 0); scalar
/// parameters broadcast, so gradients flow to v, lambda, theta_ei, theta_ir.
pub fn infectiousness_profile(
    tape: &mut Tape,
    t_since_infection: &Tensor,
    v: &Tensor,
    lambda: &Tensor,
    theta_ei: &Tensor,
    theta_ir: &Tensor,
    gate_sharpness: f64,
) -> Result<Tensor, AdError> {
    if t_since_infection.values().iter().any(|&t| t <= 0.0) {
        return Err(AdError::DomainError("profile times must be positive".into()));
    }
    if gate_sharpness <= 0.0 {
        return Err(AdError::DomainError("gate sharpness must be positive".into()));
    }

    let vm1 = tape.add_scalar(v, -1.0)?;
    let mode = tape.mul(&vm1, lambda)?;
    let lg_v = tape.lgamma(v)?;
    let ln_lambda = tape.log(lambda)?;
    let v_ln_lambda = tape.mul(v, &ln_lambda)?;

    // log density up to the common normalizer
    let log_g = |tape: &mut Tape, t: &Tensor| -> Result<Tensor, AdError> {
        let ln_t = tape.log(t)?;
        let a = tape.mul(&vm1, &ln_t)?;
        let b = tape.div(t, lambda)?;
        let ab = tape.sub(&a, &b)?;
        let c = tape.sub(&ab, &lg_v)?;
        tape.sub(&c, &v_ln_lambda)
    };

    let log_gt = log_g(tape, t_since_infection)?;
    let log_gm = log_g(tape, &mode)?;
    let log_ratio = tape.sub(&log_gt, &log_gm)?;
    let ratio = tape.exp(&log_ratio)?;

    // smooth window sigmoid(k (t - theta_ei)) * sigmoid(k (theta_ir - t))
    let t_minus_ei = tape.sub(t_since_infection, theta_ei)?;
    let left_arg = tape.scale(&t_minus_ei, gate_sharpness)?;
    let left = tape.sigmoid(&left_arg)?;
    let ir_minus_t = tape.sub(theta_ir, t_since_infection)?;
    let right_arg = tape.scale(&ir_minus_t, gate_sharpness)?;
    let right = tape.sigmoid(&right_arg)?;

    let windowed = tape.mul(&ratio, &left)?;
    tape.mul(&windowed, &right)
}
