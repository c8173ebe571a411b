//! Zero-padded FFT of scans and Gaussian fits of the spectral peaks.
//!
//! A time-domain decay `exp(-(t/T)²)` has a Gaussian line of standard deviation
//! `w = 1/(√2 π T)`; [`width_to_lifetime`] inverts that relation.

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{NvError, Result};
use crate::fit::levenberg_marquardt;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumPeak {
    pub frequency_hz: f64,
    pub amplitude: f64,
    /// Gaussian standard deviation.
    pub width_hz: f64,
    pub fit_error: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub freq_hz: Vec<f64>,
    pub values: Vec<Complex<f64>>,
}

impl Spectrum {
    pub fn magnitude(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.norm()).collect()
    }

    pub fn bin_width(&self) -> f64 {
        self.freq_hz[1] - self.freq_hz[0]
    }
}

pub fn width_to_lifetime(width_hz: f64) -> f64 {
    1.0 / (2f64.sqrt() * std::f64::consts::PI * width_hz)
}

pub fn lifetime_to_width(t: f64) -> f64 {
    1.0 / (2f64.sqrt() * std::f64::consts::PI * t)
}

/// One-sided spectrum `(2/N) Σ (s_n - s̄) e^{-2πi k n / M}` with `M ≥ pad·N` a power of two.
pub fn spectrum(signal: &[f64], dt: f64, pad: usize) -> Result<Spectrum> {
    let n = signal.len();
    if n < 16 {
        return Err(NvError::InvalidArgument("spectrum needs at least 16 samples".into()));
    }
    if !(dt > 0.0) || pad == 0 {
        return Err(NvError::InvalidArgument("need dt > 0 and pad >= 1".into()));
    }
    let m = (n * pad).next_power_of_two();
    let mean = signal.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<Complex<f64>> = signal.iter().map(|v| Complex::new(v - mean, 0.0)).collect();
    buf.resize(m, Complex::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(m).process(&mut buf);
    let scale = 2.0 / n as f64;
    let half = m / 2 + 1;
    Ok(Spectrum {
        freq_hz: (0..half).map(|k| k as f64 / (m as f64 * dt)).collect(),
        values: buf[..half].iter().map(|v| v * scale).collect(),
    })
}

fn fit_peak(spec: &Spectrum, k: usize) -> SpectrumPeak {
    let rot = Complex::from_polar(1.0, -spec.values[k].arg());
    let re: Vec<f64> = spec.values.iter().map(|v| (v * rot).re).collect();
    let top = re[k];
    let (mut lo, mut hi) = (k, k);
    while lo > 0 && re[lo - 1] > 0.5 * top && re[lo - 1] < re[lo] + 1e-15 * top.abs() {
        lo -= 1;
    }
    while hi + 1 < re.len() && re[hi + 1] > 0.5 * top && re[hi + 1] < re[hi] + 1e-15 * top.abs() {
        hi += 1;
    }
    while hi - lo < 4 {
        lo = lo.saturating_sub(1);
        hi = (hi + 1).min(re.len() - 1);
    }
    let f0 = spec.freq_hz[k];
    let df = spec.bin_width();
    let xs: Vec<f64> = (lo..=hi).map(|i| (spec.freq_hz[i] - f0) / df).collect();
    let ys: Vec<f64> = (lo..=hi).map(|i| re[i] / top).collect();
    let half_width = ((hi - lo) as f64 / 2.0).max(1.0) / 1.1774;
    let res = levenberg_marquardt(
        |p| {
            xs.iter()
                .zip(&ys)
                .map(|(&x, &y)| p[0] * (-(x - p[1]).powi(2) / (2.0 * p[2] * p[2])).exp() - y)
                .collect()
        },
        &[1.0, 0.0, half_width],
        200,
    );
    match res {
        Ok(r) if r.params.iter().all(|v| v.is_finite()) && r.params[2].abs() > 0.0 && r.params[1].abs() < (hi - lo) as f64 => {
            SpectrumPeak {
                frequency_hz: f0 + r.params[1] * df,
                amplitude: r.params[0] * top,
                width_hz: r.params[2].abs() * df,
                fit_error: None,
            }
        }
        Ok(r) => SpectrumPeak {
            frequency_hz: f0,
            amplitude: top,
            width_hz: half_width * df,
            fit_error: Some(format!("fit diverged: {:?}", r.params)),
        },
        Err(e) => SpectrumPeak {
            frequency_hz: f0,
            amplitude: top,
            width_hz: half_width * df,
            fit_error: Some(e.to_string()),
        },
    }
}

/// Local maxima above `rel_threshold` of the largest non-DC magnitude, each with a Gaussian fit.
pub fn find_peaks(spec: &Spectrum, rel_threshold: f64) -> Vec<SpectrumPeak> {
    let mag = spec.magnitude();
    let max = mag.iter().skip(1).cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return Vec::new();
    }
    (1..mag.len() - 1)
        .filter(|&k| mag[k] >= rel_threshold * max && mag[k] > mag[k - 1] && mag[k] >= mag[k + 1])
        .map(|k| fit_peak(spec, k))
        .collect()
}

/// Peaks of a sampled signal, tallest first.
pub fn fft_spectrum(signal: &[f64], dt: f64, pad: usize) -> Result<Vec<SpectrumPeak>> {
    let spec = spectrum(signal, dt, pad)?;
    let mut peaks = find_peaks(&spec, 0.05);
    peaks.sort_by(|a, b| b.amplitude.partial_cmp(&a.amplitude).unwrap_or(std::cmp::Ordering::Equal));
    Ok(peaks)
}

/// Peak closest to `f` within `tol`.
pub fn peak_near(peaks: &[SpectrumPeak], f: f64, tol: f64) -> Option<&SpectrumPeak> {
    peaks
        .iter()
        .filter(|p| (p.frequency_hz - f).abs() <= tol)
        .min_by(|a, b| {
            (a.frequency_hz - f)
                .abs()
                .partial_cmp(&(b.frequency_hz - f).abs())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::TAU;

    #[test]
    fn pure_cosine_peak() {
        let dt = 20e-9;
        let s: Vec<f64> = (0..1000).map(|i| (TAU * 6e6 * i as f64 * dt).cos()).collect();
        let spec = spectrum(&s, dt, 4).unwrap();
        let peaks = fft_spectrum(&s, dt, 4).unwrap();
        assert!((peaks[0].frequency_hz - 6e6).abs() <= spec.bin_width());
    }

    #[test]
    fn gaussian_decay_width() {
        let dt = 20e-9;
        let t_decay = 28.2e-6;
        let s: Vec<f64> = (0..10000)
            .map(|i| {
                let t = i as f64 * dt;
                (-(t / t_decay).powi(2)).exp() * (TAU * 6e6 * t).cos()
            })
            .collect();
        let peaks = fft_spectrum(&s, dt, 4).unwrap();
        let p = peak_near(&peaks, 6e6, 1e5).unwrap();
        assert!(p.fit_error.is_none());
        let t_fit = width_to_lifetime(p.width_hz);
        assert!((t_fit / t_decay - 1.0).abs() < 0.05, "{t_fit}");
    }

    #[test]
    fn mixture_amplitude_ratio() {
        let dt = 20e-9;
        let t_decay = 8.0e-6;
        let s: Vec<f64> = (0..10000)
            .map(|i| {
                let t = i as f64 * dt;
                let e = (-(t / t_decay).powi(2)).exp();
                0.49 * e * (TAU * 6e6 * t).cos() + 0.42 * e * (TAU * 3e6 * t).cos()
            })
            .collect();
        let peaks = fft_spectrum(&s, dt, 4).unwrap();
        let a6 = peak_near(&peaks, 6e6, 1e5).unwrap().amplitude;
        let a3 = peak_near(&peaks, 3e6, 1e5).unwrap().amplitude;
        assert!(((a6 / a3) / (0.49 / 0.42) - 1.0).abs() < 0.05);
    }

    #[test]
    fn short_signal_rejected() {
        assert!(spectrum(&[0.0; 8], 1e-9, 2).is_err());
    }
}
