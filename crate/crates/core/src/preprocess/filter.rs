//! Butterworth band-pass design and zero-phase filtering.
//!
//! Design: analog low-pass prototype of order `N`, low-pass → band-pass
//! transform around the prewarped band edges, bilinear transform. The
//! result has `2N` poles, `N` zeros at z = 1 and `N` at z = -1, stored as
//! `N` second-order sections with numerator `g·(1 - z⁻²)`.
//!
//! Filtering runs the cascade forward, then backward over the reversed
//! output, so phase cancels and the magnitude response is squared. Edges
//! are handled like the usual `filtfilt`: the signal is extended at both
//! ends by odd reflection about its end points (`3·(2N + 1)` samples, or
//! `len - 1` for short signals), each pass starts from the steady-state
//! section state for a constant input equal to its first sample, and the
//! extension is cut away afterwards.

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};

/// Prototype order used by the band-pass stage.
pub const BUTTER_ORDER: usize = 4;

/// One biquad: `b = [b0, b1, b2]`, `a = [1, a1, a2]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Section {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Section {
    fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        (self.b[0] + z_inv * self.b[1] + z2 * self.b[2]) / (self.a[0] + z_inv * self.a[1] + z2 * self.a[2])
    }

    /// Transposed direct form II state after an infinitely long unit input.
    fn steady_state(&self) -> [f64; 2] {
        let [b0, b1, b2] = self.b;
        let [_, a1, a2] = self.a;
        // (I - Aᵀ) z = b[1..] - a[1..]·b0 with Aᵀ = [[-a1, 1], [-a2, 0]]
        let r0 = b1 - a1 * b0;
        let r1 = b2 - a2 * b0;
        let det = (1.0 + a1) + a2;
        let z0 = (r0 + r1) / det;
        let z1 = r1 - a2 * z0;
        [z0, z1]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BandPass {
    pub sections: Vec<Section>,
    pub fs: f64,
    pub lo: f64,
    pub hi: f64,
}

impl BandPass {
    /// Digital Butterworth band-pass for edges `lo < hi` (Hz) at rate `fs`.
    pub fn design(order: usize, lo: f64, hi: f64, fs: f64) -> Result<Self> {
        if order == 0 || order % 2 != 0 {
            return Err(Error::invalid(format!("filter order must be even and >= 2, got {order}")));
        }
        if !(fs > 0.0) || !(0.0 < lo && lo < hi && hi < fs / 2.0) {
            return Err(Error::invalid(format!(
                "band {lo}-{hi} Hz must satisfy 0 < lo < hi < fs/2 = {}",
                fs / 2.0
            )));
        }
        let k = 2.0 * fs;
        let w1 = k * (std::f64::consts::PI * lo / fs).tan();
        let w2 = k * (std::f64::consts::PI * hi / fs).tan();
        let bw = w2 - w1;
        let w0sq = w1 * w2;

        let mut poles = Vec::with_capacity(order);
        for i in 0..order {
            let theta = std::f64::consts::PI * (2 * i + order + 1) as f64 / (2 * order) as f64;
            let p = Complex64::from_polar(1.0, theta);
            if p.im <= 0.0 {
                continue;
            }
            let half = p * bw / 2.0;
            let root = (half * half - w0sq).sqrt();
            for s in [half + root, half - root] {
                let z = (k + s) / (k - s);
                // one representative per conjugate pair
                poles.push(if z.im < 0.0 { z.conj() } else { z });
            }
        }

        let center = 2.0 * (w0sq.sqrt() / k).atan();
        let z_inv = Complex64::from_polar(1.0, -center);
        let sections = poles
            .into_iter()
            .map(|z| {
                let mut sec = Section {
                    b: [1.0, 0.0, -1.0],
                    a: [1.0, -2.0 * z.re, z.norm_sqr()],
                };
                let g = 1.0 / sec.response(z_inv).norm();
                sec.b = [g, 0.0, -g];
                sec
            })
            .collect();
        Ok(Self { sections, fs, lo, hi })
    }

    /// Single-pass magnitude response at `freq` Hz.
    pub fn magnitude(&self, freq: f64) -> f64 {
        let z_inv = Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * freq / self.fs);
        self.sections.iter().map(|s| s.response(z_inv)).product::<Complex64>().norm()
    }

    /// Causal single pass starting from the steady state for `x[0]`.
    fn pass(&self, x: &mut [f64]) {
        let Some(&first) = x.first() else { return };
        let mut scale = first;
        for sec in &self.sections {
            let zi = sec.steady_state();
            let mut z = [zi[0] * scale, zi[1] * scale];
            let [b0, b1, b2] = sec.b;
            let [_, a1, a2] = sec.a;
            // steady-state output of this section for a constant input
            let dc_gain = (b0 + b1 + b2) / (1.0 + a1 + a2);
            for v in x.iter_mut() {
                let xin = *v;
                let y = b0 * xin + z[0];
                z[0] = b1 * xin - a1 * y + z[1];
                z[1] = b2 * xin - a2 * y;
                *v = y;
            }
            scale *= dc_gain;
        }
    }

    /// Zero-phase filtering of one channel; output length equals input length.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n < 2 {
            return x.to_vec();
        }
        let pad = (3 * (2 * self.sections.len() + 1)).min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));
        self.pass(&mut ext);
        ext.reverse();
        self.pass(&mut ext);
        ext.reverse();
        ext[pad..pad + n].to_vec()
    }
}

/// Analog Butterworth band-pass magnitude after prewarping, i.e. the exact
/// single-pass response the bilinear design should realize.
pub fn butterworth_magnitude(order: usize, lo: f64, hi: f64, fs: f64, freq: f64) -> f64 {
    let warp = |f: f64| 2.0 * fs * (std::f64::consts::PI * f / fs).tan();
    let (w1, w2, w) = (warp(lo), warp(hi), warp(freq));
    let omega = (w * w - w1 * w2) / (w * (w2 - w1));
    1.0 / (1.0 + omega.powi(2 * order as i32)).sqrt()
}
