//! Feature extraction and shrinkage LDA.
//!
//! Pipeline: small Laplacian derivations → zero-phase band-pass → epochs
//! after each cue → log-variance per epoch and channel → LDA with the
//! covariance shrunk towards a scaled identity.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linmodel::{band_pass, ClassLabel, MultichannelRecording};
use crate::montage::{electrode_position, LAPLACIAN_CENTERS_10_20};

pub const LAPLACIAN_NEIGHBORS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub centers: Vec<String>,
    pub band: (f64, f64),
    pub epoch_offset_s: f64,
    pub epoch_duration_s: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            centers: LAPLACIAN_CENTERS_10_20.iter().map(|s| s.to_string()).collect(),
            band: (8.0, 13.0),
            epoch_offset_s: 1.0,
            epoch_duration_s: 3.5,
        }
    }
}

/// Laplacian derivations as a centers × channels weight matrix.
pub fn laplacian_weights(labels: &[String], positions: &[Vector3<f64>], centers: &[String]) -> Result<DMatrix<f64>> {
    if labels.len() != positions.len() {
        return Err(Error::config("one position per channel label required"));
    }
    if labels.len() < LAPLACIAN_NEIGHBORS + 1 {
        return Err(Error::config(format!(
            "{} channels cannot provide {LAPLACIAN_NEIGHBORS} neighbors",
            labels.len()
        )));
    }
    let mut w = DMatrix::zeros(centers.len(), labels.len());
    for (row, center) in centers.iter().enumerate() {
        let ci = labels
            .iter()
            .position(|l| l == center)
            .ok_or_else(|| Error::config(format!("Laplacian center {center} is not a recorded channel")))?;
        // Distances are rounded so that mirror-symmetric neighbors tie exactly.
        let mut order: Vec<(i64, usize)> = (0..labels.len())
            .filter(|&j| j != ci)
            .map(|j| (((positions[j] - positions[ci]).norm() * 1e9).round() as i64, j))
            .collect();
        order.sort_unstable();
        w[(row, ci)] = 1.0;
        for &(_, j) in order.iter().take(LAPLACIAN_NEIGHBORS) {
            w[(row, j)] = -1.0 / LAPLACIAN_NEIGHBORS as f64;
        }
    }
    Ok(w)
}

/// Applies Laplacian derivations using standard 10-10 electrode positions.
pub fn laplacian_filter(rec: &MultichannelRecording, centers: &[String]) -> Result<MultichannelRecording> {
    let positions = rec
        .channel_labels()
        .iter()
        .map(|l| electrode_position(l))
        .collect::<Result<Vec<_>>>()?;
    let w = laplacian_weights(rec.channel_labels(), &positions, centers)?;
    rec.with_channels(w * rec.data(), centers.to_vec())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Epochs {
    /// One channels × samples matrix per accepted trial.
    pub data: Vec<DMatrix<f64>>,
    pub labels: Vec<ClassLabel>,
    pub channel_labels: Vec<String>,
    /// Indices of markers whose window left the recording.
    pub rejected: Vec<usize>,
}

pub fn extract_epochs(rec: &MultichannelRecording, offset_s: f64, duration_s: f64) -> Result<Epochs> {
    let fs = rec.sample_rate();
    let offset = (offset_s * fs).round() as i64;
    let len = (duration_s * fs).round() as i64;
    if len < 2 {
        return Err(Error::config(format!("epoch of {duration_s} s is shorter than two samples")));
    }
    let mut out = Epochs {
        data: Vec::new(),
        labels: Vec::new(),
        channel_labels: rec.channel_labels().to_vec(),
        rejected: Vec::new(),
    };
    for (i, m) in rec.markers().iter().enumerate() {
        let start = m.sample as i64 + offset;
        if start < 0 || start + len > rec.n_samples() as i64 {
            out.rejected.push(i);
            continue;
        }
        out.data.push(rec.data().columns(start as usize, len as usize).into_owned());
        out.labels.push(m.label);
    }
    if out.data.is_empty() {
        return Err(Error::EmptyEpochs { rejected: out.rejected.len() });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    /// trials × features.
    pub x: DMatrix<f64>,
    pub labels: Vec<ClassLabel>,
    pub channel_labels: Vec<String>,
}

impl FeatureSet {
    pub fn n_trials(&self) -> usize {
        self.x.nrows()
    }

    /// Row-wise concatenation; all sets must share channel labels.
    pub fn concat(sets: &[&FeatureSet]) -> Result<FeatureSet> {
        let first = sets.first().ok_or_else(|| Error::rejected("nothing to concatenate"))?;
        let f = first.x.ncols();
        let n: usize = sets.iter().map(|s| s.n_trials()).sum();
        let mut x = DMatrix::zeros(n, f);
        let mut labels = Vec::with_capacity(n);
        let mut row = 0;
        for s in sets {
            if s.channel_labels != first.channel_labels {
                return Err(Error::rejected("feature sets have different channels"));
            }
            x.rows_mut(row, s.n_trials()).copy_from(&s.x);
            row += s.n_trials();
            labels.extend_from_slice(&s.labels);
        }
        Ok(FeatureSet {
            x,
            labels,
            channel_labels: first.channel_labels.clone(),
        })
    }
}

/// ln of the unbiased variance of every epoch channel.
pub fn logvar_features(epochs: &Epochs) -> Result<FeatureSet> {
    let n = epochs.data.len();
    let f = epochs.channel_labels.len();
    let mut x = DMatrix::zeros(n, f);
    for (t, e) in epochs.data.iter().enumerate() {
        if e.nrows() != f || e.ncols() < 2 {
            return Err(Error::rejected(format!("epoch {t} has shape {:?}", e.shape())));
        }
        for ch in 0..f {
            let row = e.row(ch);
            let mean = row.mean();
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (e.ncols() - 1) as f64;
            if !(var > 0.0) {
                return Err(Error::DegenerateFeature { trial: t, channel: ch });
            }
            x[(t, ch)] = var.ln();
        }
    }
    Ok(FeatureSet {
        x,
        labels: epochs.labels.clone(),
        channel_labels: epochs.channel_labels.clone(),
    })
}

/// Laplacian → band-pass → epochs → log-variance.
pub fn extract_features(rec: &MultichannelRecording, cfg: &PipelineConfig) -> Result<FeatureSet> {
    let lap = laplacian_filter(rec, &cfg.centers)?;
    let filtered = band_pass(&lap, cfg.band.0, cfg.band.1)?;
    logvar_features(&extract_epochs(&filtered, cfg.epoch_offset_s, cfg.epoch_duration_s)?)
}

/// Shrinkage covariance of zero-mean observations (rows of `samples`).
///
/// `S = XᵀX / n`; the intensity is the summed estimated variance of the
/// entries of `S` over their summed squared distance to `ν·I`, clipped to
/// `[0, 1]`. Callers remove means beforehand.
pub fn ledoit_wolf_covariance(samples: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let (n, f) = samples.shape();
    if n < 2 {
        return Err(Error::rejected(format!("shrinkage needs at least 2 observations, got {n}")));
    }
    if f == 0 {
        return Err(Error::rejected("no features"));
    }
    let nf = n as f64;
    let s = samples.tr_mul(samples) / nf;
    let nu = s.trace() / f as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..f {
        for j in i..f {
            let mut acc = 0.0;
            for k in 0..n {
                let d = samples[(k, i)] * samples[(k, j)] - s[(i, j)];
                acc += d * d;
            }
            let var = acc / (nf * (nf - 1.0));
            let target = if i == j { nu } else { 0.0 };
            let dev = (s[(i, j)] - target).powi(2);
            let mult = if i == j { 1.0 } else { 2.0 };
            num += mult * var;
            den += mult * dev;
        }
    }
    let lambda = if den > 0.0 { (num / den).clamp(0.0, 1.0) } else { 0.0 };
    let shrunk = &s * (1.0 - lambda) + DMatrix::identity(f, f) * (lambda * nu);
    Ok((shrunk, lambda))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub shrinkage: f64,
    pub channel_labels: Vec<String>,
}

pub const LDA_FILE: &str = "lda.json";

impl LdaModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

fn class_mean(x: &DMatrix<f64>, labels: &[ClassLabel], class: ClassLabel) -> (DVector<f64>, usize) {
    let mut sum = DVector::zeros(x.ncols());
    let mut count = 0;
    for (i, l) in labels.iter().enumerate() {
        if *l == class {
            sum += x.row(i).transpose();
            count += 1;
        }
    }
    (sum / count.max(1) as f64, count)
}

/// Trains `Right` (positive score) against `Left`.
pub fn lda_train(features: &FeatureSet) -> Result<LdaModel> {
    lda_train_with(features, None)
}

/// As [`lda_train`], optionally forcing the shrinkage intensity.
pub fn lda_train_with(features: &FeatureSet, shrinkage: Option<f64>) -> Result<LdaModel> {
    let x = &features.x;
    if x.nrows() != features.labels.len() {
        return Err(Error::rejected("one label per trial required"));
    }
    let (mu_pos, n_pos) = class_mean(x, &features.labels, ClassLabel::Right);
    let (mu_neg, n_neg) = class_mean(x, &features.labels, ClassLabel::Left);
    if n_pos < 2 || n_neg < 2 {
        return Err(Error::rejected(format!(
            "LDA needs at least 2 trials per class, got {n_neg} left / {n_pos} right"
        )));
    }
    let mut centered = x.clone();
    for (i, l) in features.labels.iter().enumerate() {
        let mu = if *l == ClassLabel::Right { &mu_pos } else { &mu_neg };
        let mut row = centered.row_mut(i);
        row -= mu.transpose();
    }
    let (cov, lambda) = match shrinkage {
        None => ledoit_wolf_covariance(&centered)?,
        Some(l) => {
            if !(0.0..=1.0).contains(&l) {
                return Err(Error::config(format!("shrinkage {l} outside [0, 1]")));
            }
            let f = x.ncols();
            let s = centered.tr_mul(&centered) / centered.nrows() as f64;
            let nu = s.trace() / f as f64;
            (&s * (1.0 - l) + DMatrix::identity(f, f) * (l * nu), l)
        }
    };
    let diff = &mu_pos - &mu_neg;
    let weights = cov
        .clone()
        .cholesky()
        .map(|c| c.solve(&diff))
        .ok_or_else(|| Error::DegenerateDecomposition {
            reason: "shrunk covariance is not positive definite".into(),
            condition: f64::INFINITY,
        })?;
    let bias = -weights.dot(&(&mu_pos + &mu_neg)) / 2.0;
    Ok(LdaModel {
        weights: weights.iter().copied().collect(),
        bias,
        shrinkage: lambda,
        channel_labels: features.channel_labels.clone(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub labels: Vec<ClassLabel>,
    pub scores: Vec<f64>,
}

pub fn lda_predict(model: &LdaModel, features: &FeatureSet) -> Result<Predictions> {
    if features.x.ncols() != model.weights.len() {
        return Err(Error::rejected(format!(
            "model expects {} features, got {}",
            model.weights.len(),
            features.x.ncols()
        )));
    }
    let w = DVector::from_column_slice(&model.weights);
    let scores: Vec<f64> = (0..features.x.nrows())
        .map(|i| features.x.row(i).transpose().dot(&w) + model.bias)
        .collect();
    let labels = scores
        .iter()
        .map(|&s| if s >= 0.0 { ClassLabel::Right } else { ClassLabel::Left })
        .collect();
    Ok(Predictions { labels, scores })
}

/// Fraction of trials whose predicted label matches.
pub fn accuracy(model: &LdaModel, features: &FeatureSet) -> Result<f64> {
    let p = lda_predict(model, features)?;
    if p.labels.is_empty() {
        return Err(Error::rejected("no trials to score"));
    }
    let hits = p.labels.iter().zip(&features.labels).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / p.labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linmodel::Marker;

    fn labels(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn identical_channels_cancel() {
        let names = labels(&["C3", "FC3", "CP3", "C5", "C1", "Cz"]);
        let row: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        let data = DMatrix::from_fn(6, 50, |_, j| row[j]);
        let rec = MultichannelRecording::new(data, 100.0, names, vec![]).unwrap();
        let out = laplacian_filter(&rec, &labels(&["C3"])).unwrap();
        assert_eq!(out.n_channels(), 1);
        assert!(out.data().amax() < 1e-12);
    }

    #[test]
    fn unknown_center_is_a_configuration_error() {
        let rec = MultichannelRecording::new(DMatrix::zeros(5, 10), 100.0, labels(&["C3", "FC3", "CP3", "C5", "C1"]), vec![]).unwrap();
        assert!(matches!(laplacian_filter(&rec, &labels(&["C4"])), Err(Error::Configuration(_))));
        let small = MultichannelRecording::new(DMatrix::zeros(4, 10), 100.0, labels(&["C3", "FC3", "CP3", "C5"]), vec![]).unwrap();
        assert!(matches!(laplacian_filter(&small, &labels(&["C3"])), Err(Error::Configuration(_))));
    }

    #[test]
    fn epoch_window_at_100_hz() {
        let data = DMatrix::from_fn(2, 1000, |i, j| (i * 1000 + j) as f64);
        let rec = MultichannelRecording::new(
            data,
            100.0,
            labels(&["a", "b"]),
            vec![
                Marker { sample: 0, label: ClassLabel::Left },
                Marker { sample: 300, label: ClassLabel::Right },
                Marker { sample: 600, label: ClassLabel::Left },
            ],
        )
        .unwrap();
        let e = extract_epochs(&rec, 1.0, 3.5).unwrap();
        assert_eq!(e.data.len(), 2);
        assert_eq!(e.data[0].ncols(), 350);
        assert_eq!(e.data[0][(0, 0)], 100.0);
        assert_eq!(e.data[0][(0, 349)], 449.0);
        assert_eq!(e.labels, vec![ClassLabel::Left, ClassLabel::Right]);
        assert_eq!(e.rejected, vec![2]);
        let late = rec.with_markers(vec![Marker { sample: 900, label: ClassLabel::Left }]).unwrap();
        assert!(matches!(extract_epochs(&late, 1.0, 3.5), Err(Error::EmptyEpochs { rejected: 1 })));
    }

    #[test]
    fn constant_channel_is_degenerate() {
        let epochs = Epochs {
            data: vec![DMatrix::from_fn(2, 10, |i, j| if i == 0 { j as f64 } else { 1.0 })],
            labels: vec![ClassLabel::Left],
            channel_labels: labels(&["a", "b"]),
            rejected: vec![],
        };
        assert!(matches!(
            logvar_features(&epochs),
            Err(Error::DegenerateFeature { trial: 0, channel: 1 })
        ));
    }

    #[test]
    fn shrinkage_needs_two_rows() {
        assert!(ledoit_wolf_covariance(&DMatrix::from_element(1, 3, 1.0)).is_err());
    }

    #[test]
    fn single_class_is_rejected() {
        let fs = FeatureSet {
            x: DMatrix::from_fn(4, 2, |i, j| (i + j) as f64),
            labels: vec![ClassLabel::Left; 4],
            channel_labels: labels(&["a", "b"]),
        };
        assert!(lda_train(&fs).is_err());
    }

    #[test]
    fn lda_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = LdaModel {
            weights: vec![0.5, -1.25],
            bias: 0.1,
            shrinkage: 0.3,
            channel_labels: labels(&["C3", "C4"]),
        };
        let p = dir.path().join(LDA_FILE);
        m.save(&p).unwrap();
        assert_eq!(LdaModel::load(&p).unwrap(), m);
        let wrong = FeatureSet {
            x: DMatrix::zeros(1, 3),
            labels: vec![ClassLabel::Left],
            channel_labels: labels(&["a", "b", "c"]),
        };
        assert!(lda_predict(&m, &wrong).is_err());
    }
}
