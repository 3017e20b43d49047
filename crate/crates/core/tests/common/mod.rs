//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use statrs::distribution::{ContinuousCDF, Normal};

/// One-sided Welch PSD: Hann window, 50% overlap. Returns `(freqs, psd)`.
pub fn welch(x: &[f64], fs: f64, nperseg: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(x.len() >= nperseg);
    let window: Vec<f64> = (0..nperseg)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / nperseg as f64).cos())
        .collect();
    let wsum: f64 = window.iter().map(|w| w * w).sum();
    let fft = FftPlanner::new().plan_fft_forward(nperseg);
    let step = nperseg / 2;
    let bins = nperseg / 2 + 1;
    let mut psd = vec![0.0; bins];
    let mut count = 0;
    let mut start = 0;
    while start + nperseg <= x.len() {
        let seg = &x[start..start + nperseg];
        let mean = seg.iter().sum::<f64>() / nperseg as f64;
        let mut buf: Vec<Complex64> = seg
            .iter()
            .zip(&window)
            .map(|(v, w)| Complex64::new((v - mean) * w, 0.0))
            .collect();
        fft.process(&mut buf);
        for k in 0..bins {
            let scale = if k == 0 || (nperseg % 2 == 0 && k == nperseg / 2) { 1.0 } else { 2.0 };
            psd[k] += scale * buf[k].norm_sqr() / (fs * wsum);
        }
        count += 1;
        start += step;
    }
    psd.iter_mut().for_each(|p| *p /= count as f64);
    let freqs = (0..bins).map(|k| k as f64 * fs / nperseg as f64).collect();
    (freqs, psd)
}

pub fn band_power(x: &[f64], fs: f64, lo: f64, hi: f64) -> f64 {
    let (f, p) = welch(x, fs, (2.0 * fs) as usize);
    let df = f[1] - f[0];
    f.iter().zip(&p).filter(|(f, _)| **f >= lo && **f <= hi).map(|(_, p)| p * df).sum()
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Two-sided Mann-Whitney U p-value (normal approximation, no tie handling).
pub fn mann_whitney_p(a: &[f64], b: &[f64]) -> f64 {
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let u: f64 = a
        .iter()
        .map(|x| b.iter().map(|y| if x > y { 1.0 } else if x == y { 0.5 } else { 0.0 }).sum::<f64>())
        .sum();
    let mean = n1 * n2 / 2.0;
    let sd = (n1 * n2 * (n1 + n2 + 1.0) / 12.0).sqrt();
    let z = (u - mean).abs() / sd;
    2.0 * (1.0 - Normal::new(0.0, 1.0).unwrap().cdf(z))
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}
