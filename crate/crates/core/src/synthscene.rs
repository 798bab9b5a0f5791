//! Virtual participants with planted oscillatory motor sources.
//!
//! Each participant has one 10 Hz source per hemisphere near the motor
//! strip whose amplitude drops during imagery of the contralateral hand,
//! a number of pink-noise background dipoles at random voxels, and white
//! sensor noise. Participants differ by a jitter of the task dipoles'
//! voxel and orientation, by their background dipoles and by the random
//! phases and amplitudes of every trial.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Vector3};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::headmodel::{Dipole, HeadModel};
use crate::linmodel::{ClassLabel, Marker, MultichannelRecording};
use crate::rng;

/// Microvolts per (V / A·m leadfield unit × nA·m moment).
const MICROVOLT_PER_NAM: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub n_participants: usize,
    pub trials_per_class: usize,
    pub sample_rate: f64,
    pub fixation_s: f64,
    pub task_s: f64,
    pub blank_s: f64,
    /// Relative amplitude reduction of the contralateral source during the task.
    pub erd_depth: f64,
    pub task_frequency_hz: f64,
    /// Lateral (x) offsets of the task dipoles, metres; negative is left.
    pub task_lateral_offsets: Vec<f64>,
    /// Distance of the task dipoles from the head centre, metres.
    pub task_radius: f64,
    /// Moment of every task dipole, nA·m.
    pub task_moment_nam: f64,
    /// Log-normal sigma of the per-trial task amplitude.
    pub trial_amplitude_sigma: f64,
    /// Log-normal sigma of the per-participant task amplitude.
    pub participant_amplitude_sigma: f64,
    /// Broadband (pink) activity of each task dipole, nA·m; independent of
    /// the oscillation and of the class.
    pub task_background_nam: f64,
    pub n_noise_dipoles: usize,
    /// Moment of every background dipole, nA·m (unit-variance pink time course).
    pub noise_moment_nam: f64,
    /// Ratio of noise-free sensor RMS to white sensor-noise RMS; infinite → no sensor noise.
    pub snr: f64,
    /// Largest per-axis voxel offset of the task dipoles between participants.
    pub jitter_steps: i32,
    /// Largest orientation change of the task dipoles between participants, degrees.
    pub jitter_rotation_deg: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            n_participants: 18,
            trials_per_class: 75,
            sample_rate: 100.0,
            fixation_s: 2.0,
            task_s: 4.0,
            blank_s: 2.0,
            erd_depth: 0.5,
            task_frequency_hz: 10.0,
            task_lateral_offsets: vec![-0.04, 0.04],
            task_radius: 0.068,
            task_moment_nam: 20.0,
            trial_amplitude_sigma: 0.3,
            participant_amplitude_sigma: 0.3,
            task_background_nam: 10.0,
            n_noise_dipoles: 10,
            noise_moment_nam: 10.0,
            snr: 20.0,
            jitter_steps: 2,
            jitter_rotation_deg: 25.0,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_participants == 0 || self.trials_per_class == 0 {
            return Err(Error::config("need at least one participant and one trial per class"));
        }
        if !(self.sample_rate > 2.0 * self.task_frequency_hz) {
            return Err(Error::config("sample rate must exceed twice the task frequency"));
        }
        if !(0.0..1.0).contains(&self.erd_depth) {
            return Err(Error::config(format!("erd_depth must lie in [0, 1), got {}", self.erd_depth)));
        }
        for (name, v) in [("fixation_s", self.fixation_s), ("task_s", self.task_s), ("blank_s", self.blank_s)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be non-negative")));
            }
        }
        if !(self.task_s > 0.0) {
            return Err(Error::config("task_s must be positive"));
        }
        if self.task_lateral_offsets.is_empty() {
            return Err(Error::config("at least one task dipole is required"));
        }
        if !(self.task_background_nam >= 0.0) {
            return Err(Error::config("task_background_nam must be non-negative"));
        }
        if !(self.snr > 0.0) {
            return Err(Error::config(format!("snr must be positive, got {}", self.snr)));
        }
        if self.jitter_steps < 0 || !(self.jitter_rotation_deg >= 0.0) {
            return Err(Error::config("jitter must be non-negative"));
        }
        Ok(())
    }

    fn trial_samples(&self) -> usize {
        ((self.fixation_s + self.task_s + self.blank_s) * self.sample_rate).round() as usize
    }

    fn cue_sample(&self) -> usize {
        (self.fixation_s * self.sample_rate).round() as usize
    }

    fn task_samples(&self) -> usize {
        (self.task_s * self.sample_rate).round() as usize
    }
}

/// Class whose task window suppresses a source at lateral offset `x`.
fn contralateral_class(x: f64) -> Option<ClassLabel> {
    if x < 0.0 {
        Some(ClassLabel::Right)
    } else if x > 0.0 {
        Some(ClassLabel::Left)
    } else {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDipole {
    pub dipole: Dipole,
    /// Class that suppresses this source, if any.
    pub suppressed_by: Option<ClassLabel>,
    /// Per-participant amplitude factor.
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantTruth {
    pub participant: usize,
    pub task_dipoles: Vec<TaskDipole>,
    pub noise_dipoles: Vec<Dipole>,
    /// Per trial (marker order) and task dipole: task-window amplitude, nA·m.
    pub trial_amplitudes: Vec<Vec<f64>>,
    pub sensor_noise_rms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub config: SceneConfig,
    /// Nominal (unjittered) task voxels.
    pub nominal_task_voxels: Vec<usize>,
    pub participants: Vec<ParticipantTruth>,
}

#[derive(Debug, Clone)]
pub struct SyntheticParticipant {
    pub recording: MultichannelRecording,
    pub truth: ParticipantTruth,
    /// Task sources then background sources, sources × samples, nA·m.
    pub source_time_courses: DMatrix<f64>,
}

/// Scene generator bound to a head model.
#[derive(Debug, Clone)]
pub struct Scene<'m> {
    model: &'m HeadModel,
    config: SceneConfig,
    nominal: Vec<(usize, Vector3<f64>)>,
}

impl<'m> Scene<'m> {
    pub fn new(model: &'m HeadModel, config: SceneConfig) -> Result<Self> {
        config.validate()?;
        let spacing = model.grid_spacing();
        let mut nominal = Vec::new();
        for &x in &config.task_lateral_offsets {
            let z2 = config.task_radius.powi(2) - x * x;
            if !(z2 > 0.0) {
                return Err(Error::config(format!("task offset {x} m exceeds task radius {}", config.task_radius)));
            }
            let pos = Vector3::new(x, 0.0, z2.sqrt());
            let v = model.nearest_voxel(&pos);
            if (model.voxels()[v] - pos).norm() > spacing * 3f64.sqrt() / 2.0 + 1e-12 {
                return Err(Error::config(format!(
                    "task dipole at ({x:.3}, 0, {:.3}) m lies outside the voxel grid",
                    z2.sqrt()
                )));
            }
            nominal.push((v, pos.normalize()));
        }
        Ok(Self { model, config, nominal })
    }

    pub fn config(&self) -> &SceneConfig {
        &self.config
    }

    pub fn model(&self) -> &'m HeadModel {
        self.model
    }

    pub fn nominal_task_voxels(&self) -> Vec<usize> {
        self.nominal.iter().map(|(v, _)| *v).collect()
    }

    fn jittered_voxel(&self, origin: usize, r: &mut ChaCha8Rng) -> usize {
        let j = self.config.jitter_steps;
        if j == 0 {
            return origin;
        }
        let o = self.model.lattice_point(origin);
        let candidates: Vec<usize> = (0..self.model.n_voxels())
            .filter(|&i| {
                let p = self.model.lattice_point(i);
                (0..3).all(|a| (p[a] - o[a]).abs() <= j)
            })
            .collect();
        candidates[r.random_range(0..candidates.len())]
    }

    /// Generates one participant; independent of every other participant.
    pub fn participant(&self, index: usize) -> Result<SyntheticParticipant> {
        let cfg = &self.config;
        let fs = cfg.sample_rate;
        let n_trials = 2 * cfg.trials_per_class;
        let trial_len = cfg.trial_samples();
        let n_samples = n_trials * trial_len;
        let p = index as u64;

        let mut geo = rng::stream(cfg.seed, &[p, 0]);
        let amp_dist = LogNormal::new(0.0, cfg.participant_amplitude_sigma.max(0.0)).map_err(|e| Error::config(e.to_string()))?;
        let task_dipoles: Vec<TaskDipole> = self
            .nominal
            .iter()
            .zip(&cfg.task_lateral_offsets)
            .map(|((v, radial), &x)| {
                let voxel = self.jittered_voxel(*v, &mut geo);
                let moment = rng::small_rotation(&mut geo, cfg.jitter_rotation_deg) * radial;
                TaskDipole {
                    dipole: Dipole { voxel_index: voxel, moment },
                    suppressed_by: contralateral_class(x),
                    gain: amp_dist.sample(&mut geo),
                }
            })
            .collect();
        let noise_dipoles: Vec<Dipole> = (0..cfg.n_noise_dipoles)
            .map(|_| Dipole {
                voxel_index: geo.random_range(0..self.model.n_voxels()),
                moment: rng::unit_vector(&mut geo),
            })
            .collect();

        let mut classes: Vec<ClassLabel> = ClassLabel::ALL
            .iter()
            .flat_map(|c| std::iter::repeat_n(*c, cfg.trials_per_class))
            .collect();
        classes.shuffle(&mut rng::stream(cfg.seed, &[p, 1]));
        let markers: Vec<Marker> = classes
            .iter()
            .enumerate()
            .map(|(t, &label)| Marker {
                sample: t * trial_len + cfg.cue_sample(),
                label,
            })
            .collect();

        let n_task = task_dipoles.len();
        let mut sources = DMatrix::zeros(n_task + noise_dipoles.len(), n_samples);
        let mut trial_amplitudes = vec![vec![0.0; n_task]; n_trials];
        let mut osc = rng::stream(cfg.seed, &[p, 2]);
        let trial_dist = LogNormal::new(0.0, cfg.trial_amplitude_sigma.max(0.0)).map_err(|e| Error::config(e.to_string()))?;
        let omega = 2.0 * PI * cfg.task_frequency_hz / fs;
        let ramp = (0.25 * fs).round().max(1.0);
        let (cue, task_len) = (cfg.cue_sample() as f64, cfg.task_samples() as f64);
        for (s, td) in task_dipoles.iter().enumerate() {
            for t in 0..n_trials {
                let base = cfg.task_moment_nam * td.gain * trial_dist.sample(&mut osc);
                let phase: f64 = osc.random_range(0.0..2.0 * PI);
                let suppressed = td.suppressed_by == Some(classes[t]);
                let depth = if suppressed { cfg.erd_depth } else { 0.0 };
                trial_amplitudes[t][s] = base * (1.0 - depth);
                for i in 0..trial_len {
                    let u = i as f64;
                    // Smooth entry into and exit from the task window.
                    let w = ((u - cue) / ramp).clamp(0.0, 1.0).min(((cue + task_len - u) / ramp).clamp(0.0, 1.0));
                    let envelope = base * (1.0 - depth * w);
                    sources[(s, t * trial_len + i)] = envelope * (omega * u + phase).sin();
                }
            }
        }
        if cfg.task_background_nam > 0.0 {
            for s in 0..n_task {
                let mut r = rng::stream(cfg.seed, &[p, 5, s as u64]);
                for (i, v) in pink_noise(n_samples, &mut r).iter().enumerate() {
                    sources[(s, i)] += v * cfg.task_background_nam;
                }
            }
        }
        for (k, _) in noise_dipoles.iter().enumerate() {
            let mut r = rng::stream(cfg.seed, &[p, 3, k as u64]);
            let pink = pink_noise(n_samples, &mut r);
            for (i, v) in pink.iter().enumerate() {
                sources[(n_task + k, i)] = v * cfg.noise_moment_nam;
            }
        }

        let c = self.model.n_channels();
        let mut gain = DMatrix::zeros(c, sources.nrows());
        for (s, d) in task_dipoles.iter().map(|t| &t.dipole).chain(&noise_dipoles).enumerate() {
            gain.set_column(s, &(self.model.dipole_field(d)? * MICROVOLT_PER_NAM));
        }
        let mut data = &gain * &sources;
        let mut sensor_noise_rms = 0.0;
        if cfg.snr.is_finite() {
            let signal_rms = (data.norm_squared() / data.len() as f64).sqrt();
            sensor_noise_rms = signal_rms / cfg.snr;
            let mut r = rng::stream(cfg.seed, &[p, 4]);
            for v in data.iter_mut() {
                let e: f64 = StandardNormal.sample(&mut r);
                *v += e * sensor_noise_rms;
            }
        }

        let mut recording = MultichannelRecording::new(data, fs, self.model.channel_labels(), markers)?;
        recording.set_metadata("participant", serde_json::json!(index));
        recording.set_metadata("scene_seed", serde_json::json!(cfg.seed));
        recording.set_metadata("unit", serde_json::json!("uV"));
        Ok(SyntheticParticipant {
            recording,
            truth: ParticipantTruth {
                participant: index,
                task_dipoles,
                noise_dipoles,
                trial_amplitudes,
                sensor_noise_rms,
            },
            source_time_courses: sources,
        })
    }

    pub fn ground_truth(&self, participants: Vec<ParticipantTruth>) -> GroundTruth {
        GroundTruth {
            config: self.config.clone(),
            nominal_task_voxels: self.nominal_task_voxels(),
            participants,
        }
    }
}

/// Unit-variance noise with a 1/f power spectrum (zero mean).
pub fn pink_noise(n: usize, r: &mut ChaCha8Rng) -> Vec<f64> {
    if n < 2 {
        return vec![0.0; n];
    }
    let mut buf: Vec<Complex<f64>> = (0..n)
        .map(|_| Complex::new(StandardNormal.sample(r), 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    buf[0] = Complex::new(0.0, 0.0);
    for (k, v) in buf.iter_mut().enumerate().skip(1) {
        let f = k.min(n - k) as f64;
        *v /= f.sqrt();
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let re: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let mean = re.iter().sum::<f64>() / n as f64;
    let sd = (re.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    re.iter().map(|v| (v - mean) / sd).collect()
}

/// Spatial field (µV per nA·m) of every source, in source order.
pub fn source_fields(model: &HeadModel, truth: &ParticipantTruth) -> Result<Vec<DVector<f64>>> {
    truth
        .task_dipoles
        .iter()
        .map(|t| &t.dipole)
        .chain(&truth.noise_dipoles)
        .map(|d| Ok(model.dipole_field(d)? * MICROVOLT_PER_NAM))
        .collect()
}
