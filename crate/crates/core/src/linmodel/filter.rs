//! Butterworth band-pass design (bilinear transform) and zero-phase
//! second-order-section filtering.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};

/// One biquad, `a[0]` normalized to 1, evaluated in transposed direct form II.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[1] + self.a[2])
    }

    /// State reached after an infinitely long unit step.
    fn step_state(&self) -> [f64; 2] {
        let g = self.dc_gain();
        let z2 = self.b[2] - self.a[2] * g;
        let z1 = self.b[1] - self.a[1] * g + z2;
        [z1, z2]
    }

    fn response(&self, z_inv: Complex64) -> Complex64 {
        let z_inv2 = z_inv * z_inv;
        let num = self.b[0] + z_inv * self.b[1] + z_inv2 * self.b[2];
        let den = self.a[0] + z_inv * self.a[1] + z_inv2 * self.a[2];
        num / den
    }
}

/// Cascade of biquads.
#[derive(Debug, Clone, PartialEq)]
pub struct SosFilter {
    sections: Vec<Biquad>,
}

impl SosFilter {
    pub fn from_sections(sections: Vec<Biquad>) -> Self {
        Self { sections }
    }

    pub fn sections(&self) -> &[Biquad] {
        &self.sections
    }

    /// Digital Butterworth band-pass of prototype order `order`
    /// (the resulting filter has `2 * order` poles, `order` sections).
    pub fn butterworth_band_pass(order: usize, low_hz: f64, high_hz: f64, fs: f64) -> Result<Self> {
        if order == 0 {
            return Err(Error::rejected("filter order must be at least 1"));
        }
        if !(fs > 0.0 && low_hz > 0.0 && low_hz < high_hz && high_hz < fs / 2.0) {
            return Err(Error::rejected(format!(
                "invalid band {low_hz}-{high_hz} Hz for sample rate {fs} Hz"
            )));
        }
        let fs2 = 2.0 * fs;
        let w_low = fs2 * (PI * low_hz / fs).tan();
        let w_high = fs2 * (PI * high_hz / fs).tan();
        let bandwidth = w_high - w_low;
        let w0_sq = w_low * w_high;

        let mut poles = Vec::with_capacity(2 * order);
        for k in 0..order {
            let theta = PI * (2 * k + order + 1) as f64 / (2 * order) as f64;
            let proto = Complex64::from_polar(1.0, theta);
            let half = proto * (bandwidth / 2.0);
            let root = (half * half - w0_sq).sqrt();
            for s in [half + root, half - root] {
                poles.push((fs2 + s) / (fs2 - s));
            }
        }

        let mut sections = Vec::with_capacity(order);
        let mut reals = Vec::new();
        for p in &poles {
            if p.im > 1e-12 {
                sections.push(Biquad {
                    b: [1.0, 0.0, -1.0],
                    a: [1.0, -2.0 * p.re, p.norm_sqr()],
                });
            } else if p.im.abs() <= 1e-12 {
                reals.push(p.re);
            }
        }
        for pair in reals.chunks(2) {
            let (p1, p2) = (pair[0], pair.get(1).copied().unwrap_or(0.0));
            sections.push(Biquad {
                b: [1.0, 0.0, -1.0],
                a: [1.0, -(p1 + p2), p1 * p2],
            });
        }
        if sections.len() != order {
            return Err(Error::rejected(format!(
                "pole pairing produced {} sections for order {order}",
                sections.len()
            )));
        }

        let mut filter = Self { sections };
        // Butterworth band-pass has unit gain at the warped centre frequency.
        let omega0 = 2.0 * (w0_sq.sqrt() / fs2).atan();
        let gain = filter.response_at_omega(omega0).norm();
        for v in filter.sections[0].b.iter_mut() {
            *v /= gain;
        }
        Ok(filter)
    }

    fn response_at_omega(&self, omega: f64) -> Complex64 {
        let z_inv = Complex64::from_polar(1.0, -omega);
        self.sections
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(z_inv))
    }

    /// Complex single-pass frequency response at `freq_hz`.
    pub fn response(&self, freq_hz: f64, fs: f64) -> Complex64 {
        self.response_at_omega(2.0 * PI * freq_hz / fs)
    }

    fn steady_state(&self) -> Vec<[f64; 2]> {
        let mut scale = 1.0;
        self.sections
            .iter()
            .map(|s| {
                let st = s.step_state();
                let out = [st[0] * scale, st[1] * scale];
                scale *= s.dc_gain();
                out
            })
            .collect()
    }

    /// Causal filtering, starting from `init` state scaled by `x0`.
    fn run(&self, x: &mut [f64], init: &[[f64; 2]], x0: f64) {
        for (sec, st) in self.sections.iter().zip(init) {
            let (mut z1, mut z2) = (st[0] * x0, st[1] * x0);
            for v in x.iter_mut() {
                let input = *v;
                let y = sec.b[0] * input + z1;
                z1 = sec.b[1] * input - sec.a[1] * y + z2;
                z2 = sec.b[2] * input - sec.a[2] * y;
                *v = y;
            }
        }
    }

    /// Causal filtering from rest.
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let mut out = x.to_vec();
        let zero = vec![[0.0; 2]; self.sections.len()];
        self.run(&mut out, &zero, 0.0);
        out
    }

    /// Forward-backward filtering with odd-extension padding and
    /// steady-state initial conditions. Linear in `x`.
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

        let zi = self.steady_state();
        let x0 = ext[0];
        self.run(&mut ext, &zi, x0);
        ext.reverse();
        let y0 = ext[0];
        self.run(&mut ext, &zi, y0);
        ext.reverse();
        ext[pad..pad + n].to_vec()
    }
}
