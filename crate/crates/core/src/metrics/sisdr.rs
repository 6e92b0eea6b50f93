use crate::error::{Error, Result};

/// Returned by [`si_sdr`] when the residual energy is below
/// [`RESIDUAL_FLOOR`].
pub const SI_SDR_INFINITE: f64 = f64::INFINITY;
pub const RESIDUAL_FLOOR: f64 = 1e-30;

/// Scale-invariant SDR in dB after removing the mean of both signals.
pub fn si_sdr(estimate: &[f64], reference: &[f64]) -> Result<f64> {
    if estimate.len() != reference.len() || estimate.is_empty() {
        return Err(Error::shape(
            "si_sdr",
            format!("lengths {} and {}", estimate.len(), reference.len()),
        ));
    }
    let centered = |x: &[f64]| {
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        x.iter().map(|v| v - mean).collect::<Vec<_>>()
    };
    let e = centered(estimate);
    let r = centered(reference);
    let rr: f64 = r.iter().map(|v| v * v).sum();
    if rr == 0.0 {
        return Err(Error::SilentInput);
    }
    let alpha = e.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>() / rr;
    let (mut target, mut residual) = (0.0, 0.0);
    for (a, b) in e.iter().zip(&r) {
        let s = alpha * b;
        target += s * s;
        residual += (a - s) * (a - s);
    }
    if residual < RESIDUAL_FLOOR {
        return Ok(SI_SDR_INFINITE);
    }
    Ok(10.0 * (target / residual).log10())
}
