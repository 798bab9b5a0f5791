#![allow(dead_code)]

use std::f64::consts::PI;

use dipoleforge::linmodel::{ClassLabel, Marker, MultichannelRecording};
use dipoleforge::synthscene::pink_noise;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn labels(c: usize) -> Vec<String> {
    (0..c).map(|i| format!("ch{i}")).collect()
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

/// Narrow-band oscillation around `freq` with slowly drifting phase and amplitude.
pub fn alpha_like(rng: &mut ChaCha8Rng, n: usize, fs: f64, freq: f64) -> Vec<f64> {
    let mut phase: f64 = rng.random_range(0.0..2.0 * PI);
    let mut amp: f64 = 1.0;
    (0..n)
        .map(|_| {
            phase += 2.0 * PI * freq / fs + 0.02 * normal(rng);
            amp = (amp + 0.01 * normal(rng) - 0.005 * (amp - 1.0)).max(0.2);
            amp * phase.sin()
        })
        .collect()
}

pub struct PlantedScene {
    pub recording: MultichannelRecording,
    /// The planted oscillatory source.
    pub source: Vec<f64>,
    pub pattern: DVector<f64>,
}

/// `c` channels mixing one 10 Hz source, `c − 1` pink background sources
/// through random patterns, plus white sensor noise.
pub fn planted_oscillation(seed: u64, c: usize, seconds: f64, fs: f64) -> PlantedScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (seconds * fs) as usize;
    let mixing = gaussian_matrix(&mut rng, c, c);
    let mut sources = DMatrix::zeros(c, n);
    let source = alpha_like(&mut rng, n, fs, 10.0);
    for (j, v) in source.iter().enumerate() {
        sources[(0, j)] = 1.5 * v;
    }
    for i in 1..c {
        let pink = pink_noise(n, &mut rng);
        for (j, v) in pink.iter().enumerate() {
            sources[(i, j)] = *v;
        }
    }
    let mut data = &mixing * &sources;
    for v in data.iter_mut() {
        *v += 0.05 * normal(&mut rng);
    }
    PlantedScene {
        recording: MultichannelRecording::new(data, fs, labels(c), vec![]).unwrap(),
        source,
        pattern: mixing.column(0).into_owned(),
    }
}

pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    sab / (saa * sbb).sqrt()
}

/// Recording with alternating-class markers every `spacing` samples.
pub fn with_markers(data: DMatrix<f64>, fs: f64, first: usize, spacing: usize) -> MultichannelRecording {
    let n = data.ncols();
    let c = data.nrows();
    let markers = (0..)
        .map(|t| first + t * spacing)
        .take_while(|&s| s < n)
        .enumerate()
        .map(|(t, sample)| Marker {
            sample,
            label: if t % 2 == 0 { ClassLabel::Left } else { ClassLabel::Right },
        })
        .collect();
    MultichannelRecording::new(data, fs, labels(c), markers).unwrap()
}
