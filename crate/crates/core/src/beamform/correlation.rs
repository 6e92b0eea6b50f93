use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// Floor on the PHAT denominator.
pub const PHAT_FLOOR: f64 = 1e-12;

fn check_lengths(op: &'static str, a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape(
            op,
            format!("lengths {} and {} differ", a.len(), b.len()),
        ));
    }
    if a.is_empty() {
        return Err(Error::shape(op, "signals must be non-empty"));
    }
    Ok(())
}

/// Real cross-correlation values over a symmetric lag range.
#[derive(Clone, Debug, PartialEq)]
pub struct Correlation {
    /// `values[k]` belongs to lag `k as i64 - max_lag`.
    pub values: Vec<f64>,
    pub max_lag: usize,
}

impl Correlation {
    pub fn lags(&self) -> impl Iterator<Item = i64> + '_ {
        let m = self.max_lag as i64;
        (-m..=m).take(self.values.len())
    }

    pub fn at(&self, lag: i64) -> Option<f64> {
        let k = lag + self.max_lag as i64;
        (k >= 0)
            .then(|| self.values.get(k as usize).copied())
            .flatten()
    }

    /// `lag,value` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lag,value\n");
        for (lag, v) in self.lags().zip(&self.values) {
            out.push_str(&format!("{lag},{v:e}\n"));
        }
        out
    }
}

/// `R(tau) = sum_t x1[t] x2[t + tau]` for `tau` in `-(N-1)..=N-1`, with zero
/// extension outside the signals. Computed by direct summation.
pub fn cross_correlation(x1: &[f64], x2: &[f64]) -> Result<Correlation> {
    check_lengths("cross_correlation", x1, x2)?;
    let n = x1.len();
    let values = (0..2 * n - 1)
        .map(|k| {
            let tau = k as i64 - (n as i64 - 1);
            let (a, b) = if tau >= 0 {
                (&x1[..n - tau as usize], &x2[tau as usize..])
            } else {
                (&x1[(-tau) as usize..], &x2[..n - (-tau) as usize])
            };
            a.iter().zip(b).map(|(p, q)| p * q).sum()
        })
        .collect();
    Ok(Correlation {
        values,
        max_lag: n - 1,
    })
}

/// Smallest power of two that holds a full linear correlation of `n`
/// samples.
pub fn linear_fft_length(n: usize) -> usize {
    (2 * n).saturating_sub(1).max(1).next_power_of_two()
}

fn spectrum(x: &[f64], len: usize, planner: &mut FftPlanner<f64>) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    buf.resize(len, Complex64::new(0.0, 0.0));
    planner.plan_fft_forward(len).process(&mut buf);
    buf
}

/// `S(f) = X1(f) conj(X2(f))` on the zero-padded `fft_length` grid (all
/// bins). `None` selects [`linear_fft_length`].
pub fn cross_spectral_density(
    x1: &[f64],
    x2: &[f64],
    fft_length: Option<usize>,
) -> Result<Vec<Complex64>> {
    check_lengths("cross_spectral_density", x1, x2)?;
    let k = fft_length.unwrap_or_else(|| linear_fft_length(x1.len()));
    if k < x1.len() {
        return Err(Error::InvalidConfig(format!(
            "fft length {k} is shorter than the signals ({})",
            x1.len()
        )));
    }
    let mut planner = FftPlanner::new();
    let a = spectrum(x1, k, &mut planner);
    let b = spectrum(x2, k, &mut planner);
    Ok(a.iter().zip(&b).map(|(p, q)| p * q.conj()).collect())
}

/// TDOA estimate and the PHAT-weighted correlation it was taken from.
#[derive(Clone, Debug, PartialEq)]
pub struct GccPhat {
    /// Positive when the second signal lags the first.
    pub delay: i64,
    pub curve: Correlation,
}

/// GCC-PHAT between `x_i` and `x_r`, searched over `|tau| <= max_lag`.
///
/// The curve is the inverse transform of `conj(X_i) X_r / |X_i X_r|`, so a
/// copy of `x_i` delayed by `d` samples in `x_r` peaks at `tau = +d`. Ties go
/// to the smaller `|tau|`, then to the negative lag.
pub fn gcc_phat(x_i: &[f64], x_r: &[f64], max_lag: usize) -> Result<GccPhat> {
    check_lengths("gcc_phat", x_i, x_r)?;
    let n = x_i.len();
    if max_lag >= n {
        return Err(Error::InvalidConfig(format!(
            "max_lag {max_lag} must be below the length {n}"
        )));
    }
    let silent = |x: &[f64]| x.iter().all(|&v| v == 0.0);
    if silent(x_i) || silent(x_r) {
        return Err(Error::DegenerateSpectrum);
    }
    let k = linear_fft_length(n);
    let mut planner = FftPlanner::new();
    let a = spectrum(x_i, k, &mut planner);
    let b = spectrum(x_r, k, &mut planner);
    let mut g: Vec<Complex64> = a
        .iter()
        .zip(&b)
        .map(|(p, q)| {
            let c = p.conj() * q;
            c / c.norm().max(PHAT_FLOOR)
        })
        .collect();
    planner.plan_fft_inverse(k).process(&mut g);
    let scale = 1.0 / k as f64;
    let m = max_lag as i64;
    let values: Vec<f64> = (-m..=m)
        .map(|tau| g[tau.rem_euclid(k as i64) as usize].re * scale)
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateSpectrum);
    }

    let mut best = 0i64;
    let mut best_value = values[max_lag];
    for d in 1..=m {
        for tau in [-d, d] {
            let v = values[(tau + m) as usize];
            if v > best_value {
                best = tau;
                best_value = v;
            }
        }
    }
    Ok(GccPhat {
        delay: best,
        curve: Correlation { values, max_lag },
    })
}
