//! Linear model of multichannel EEG.
//!
//! Recordings are mixtures `x(t) = A s(t) + n(t)` of source time courses
//! projected through spatial patterns. Spatial filters `W` recover sources
//! as `y(t) = Wᵀ x(t)`, and a filter matrix is converted into the matching
//! pattern matrix with `A = Σ W (Wᵀ Σ W)⁻¹`.

pub mod filter;

use std::collections::{BTreeMap, HashSet};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use filter::{Biquad, SosFilter};

/// Prototype order of each pass of the zero-phase band-pass.
pub const BAND_PASS_ORDER: usize = 4;

/// Largest condition number of `Wᵀ Σ W` accepted by [`filters_to_patterns`].
pub const MAX_PATTERN_CONDITION: f64 = 1e10;

/// Seconds discarded at each end of band-passed data before estimating
/// covariances.
pub const EDGE_DISCARD_S: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassLabel {
    Left,
    Right,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 2] = [ClassLabel::Left, ClassLabel::Right];

    pub fn other(self) -> Self {
        match self {
            ClassLabel::Left => ClassLabel::Right,
            ClassLabel::Right => ClassLabel::Left,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ClassLabel::Left => "left",
            ClassLabel::Right => "right",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Marker {
    pub sample: usize,
    pub label: ClassLabel,
}

/// Sampled multichannel signal, channels × samples.
#[derive(Debug, Clone, PartialEq)]
pub struct MultichannelRecording {
    data: DMatrix<f64>,
    sample_rate: f64,
    channel_labels: Vec<String>,
    markers: Vec<Marker>,
    metadata: BTreeMap<String, serde_json::Value>,
}

impl MultichannelRecording {
    pub fn new(
        data: DMatrix<f64>,
        sample_rate: f64,
        channel_labels: Vec<String>,
        markers: Vec<Marker>,
    ) -> Result<Self> {
        let (c, t) = data.shape();
        if c < 1 || t < 1 {
            return Err(Error::rejected(format!(
                "recording needs at least 1 channel and 1 sample, got {c}x{t}"
            )));
        }
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(Error::rejected(format!("invalid sample rate {sample_rate}")));
        }
        if channel_labels.len() != c {
            return Err(Error::rejected(format!(
                "{} channel labels for {c} channels",
                channel_labels.len()
            )));
        }
        let mut seen = HashSet::new();
        for l in &channel_labels {
            if !seen.insert(l.as_str()) {
                return Err(Error::rejected(format!("duplicate channel label {l}")));
            }
        }
        if let Some(m) = markers.iter().find(|m| m.sample >= t) {
            return Err(Error::rejected(format!(
                "marker at sample {} outside recording of {t} samples",
                m.sample
            )));
        }
        Ok(Self {
            data,
            sample_rate,
            channel_labels,
            markers,
            metadata: BTreeMap::new(),
        })
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn channel_labels(&self) -> &[String] {
        &self.channel_labels
    }

    pub fn markers(&self) -> &[Marker] {
        &self.markers
    }

    pub fn metadata(&self) -> &BTreeMap<String, serde_json::Value> {
        &self.metadata
    }

    pub fn n_channels(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.data.ncols()
    }

    pub fn channel_index(&self, label: &str) -> Option<usize> {
        self.channel_labels.iter().position(|l| l == label)
    }

    pub fn set_metadata(&mut self, key: impl Into<String>, value: serde_json::Value) {
        self.metadata.insert(key.into(), value);
    }

    pub fn with_metadata(mut self, metadata: BTreeMap<String, serde_json::Value>) -> Self {
        self.metadata = metadata;
        self
    }

    /// Same sample rate, markers and metadata with new data and channels.
    pub fn with_channels(&self, data: DMatrix<f64>, channel_labels: Vec<String>) -> Result<Self> {
        if data.ncols() != self.n_samples() {
            return Err(Error::rejected(format!(
                "sample count {} differs from template's {}",
                data.ncols(),
                self.n_samples()
            )));
        }
        Ok(Self::new(data, self.sample_rate, channel_labels, self.markers.clone())?
            .with_metadata(self.metadata.clone()))
    }

    /// Same metadata with data of identical shape.
    pub fn with_data(&self, data: DMatrix<f64>) -> Result<Self> {
        if data.shape() != self.data.shape() {
            return Err(Error::rejected(format!(
                "data shape {:?} differs from template shape {:?}",
                data.shape(),
                self.data.shape()
            )));
        }
        Ok(Self { data, ..self.clone() })
    }

    pub fn with_markers(&self, markers: Vec<Marker>) -> Result<Self> {
        Ok(Self::new(
            self.data.clone(),
            self.sample_rate,
            self.channel_labels.clone(),
            markers,
        )?
        .with_metadata(self.metadata.clone()))
    }

    pub fn into_data(self) -> DMatrix<f64> {
        self.data
    }
}

/// Component time courses, components × samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceActivity {
    pub data: DMatrix<f64>,
    /// Objective value per component (empty when the filters carry no score).
    pub component_scores: Vec<f64>,
}

impl SourceActivity {
    pub fn new(data: DMatrix<f64>, component_scores: Vec<f64>) -> Result<Self> {
        if !component_scores.is_empty() {
            if component_scores.len() != data.nrows() {
                return Err(Error::rejected(format!(
                    "{} scores for {} components",
                    component_scores.len(),
                    data.nrows()
                )));
            }
            if component_scores.windows(2).any(|w| w[1] > w[0]) {
                return Err(Error::rejected("component scores must be non-increasing"));
            }
        }
        Ok(Self {
            data,
            component_scores,
        })
    }

    pub fn n_components(&self) -> usize {
        self.data.nrows()
    }
}

/// Paired backward (filters) and forward (patterns) model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub filters: DMatrix<f64>,
    pub patterns: DMatrix<f64>,
    pub covariance: DMatrix<f64>,
}

impl Decomposition {
    pub fn n_channels(&self) -> usize {
        self.filters.nrows()
    }

    pub fn n_components(&self) -> usize {
        self.filters.ncols()
    }

    pub fn is_square(&self) -> bool {
        self.n_channels() == self.n_components()
    }
}

/// `y = Wᵀ x`.
pub fn apply_backward(rec: &MultichannelRecording, filters: &DMatrix<f64>) -> Result<SourceActivity> {
    if filters.nrows() != rec.n_channels() {
        return Err(Error::rejected(format!(
            "filter matrix has {} rows for {} channels",
            filters.nrows(),
            rec.n_channels()
        )));
    }
    SourceActivity::new(filters.tr_mul(rec.data()), Vec::new())
}

/// `x = A s + n`; sample rate, labels, markers and metadata come from `template`.
pub fn apply_forward(
    patterns: &DMatrix<f64>,
    sources: &SourceActivity,
    noise: Option<&MultichannelRecording>,
    template: &MultichannelRecording,
) -> Result<MultichannelRecording> {
    if patterns.ncols() != sources.n_components() {
        return Err(Error::rejected(format!(
            "{} patterns for {} sources",
            patterns.ncols(),
            sources.n_components()
        )));
    }
    let mut out = patterns * &sources.data;
    if let Some(n) = noise {
        if n.data().shape() != out.shape() {
            return Err(Error::rejected(format!(
                "noise shape {:?} does not match output shape {:?}",
                n.data().shape(),
                out.shape()
            )));
        }
        out += n.data();
    }
    if out.shape() != template.data().shape() {
        return Err(Error::rejected(format!(
            "output shape {:?} does not match template shape {:?}",
            out.shape(),
            template.data().shape()
        )));
    }
    template.with_data(out)
}

/// Condition number of a symmetric matrix from its eigenvalues
/// (infinite when the smallest eigenvalue is not positive).
pub fn symmetric_condition(m: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(m.clone()).eigenvalues;
    let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

/// `A = Σ W (Wᵀ Σ W)⁻¹`.
pub fn filters_to_patterns(filters: &DMatrix<f64>, covariance: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let c = covariance.nrows();
    if covariance.ncols() != c || filters.nrows() != c {
        return Err(Error::rejected(format!(
            "filters {:?} incompatible with covariance {:?}",
            filters.shape(),
            covariance.shape()
        )));
    }
    let sigma_w = covariance * filters;
    let mut gram = filters.tr_mul(&sigma_w);
    gram = (&gram + gram.transpose()) * 0.5;
    let condition = symmetric_condition(&gram);
    if !(condition < MAX_PATTERN_CONDITION) {
        return Err(Error::DegenerateDecomposition {
            reason: "Wᵀ Σ W is not invertible".into(),
            condition,
        });
    }
    let lu = gram.lu();
    let solved = lu
        .solve(&sigma_w.transpose())
        .ok_or_else(|| Error::DegenerateDecomposition {
            reason: "Wᵀ Σ W is singular".into(),
            condition,
        })?;
    Ok(solved.transpose())
}

/// Mean-removed covariance of the rows of `data`, 1/(T−1) normalization.
pub fn covariance_of(data: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let t = data.ncols();
    if t < 2 {
        return Err(Error::rejected(format!("covariance needs at least 2 samples, got {t}")));
    }
    let mean = data.column_mean();
    let mut centered = data.clone();
    for mut col in centered.column_iter_mut() {
        col -= &mean;
    }
    let mut cov = &centered * centered.transpose();
    cov /= (t - 1) as f64;
    Ok((&cov + cov.transpose()) * 0.5)
}

pub fn sample_covariance(rec: &MultichannelRecording) -> Result<DMatrix<f64>> {
    covariance_of(rec.data())
}

/// Drops `samples` columns at both ends.
pub fn trim_edges(data: &DMatrix<f64>, samples: usize) -> Result<DMatrix<f64>> {
    let t = data.ncols();
    if 2 * samples >= t {
        return Err(Error::rejected(format!(
            "cannot discard {samples} samples at each end of {t} samples"
        )));
    }
    Ok(data.columns(samples, t - 2 * samples).into_owned())
}

/// Zero-phase filtering of every channel of `data`.
pub fn filter_rows(data: &DMatrix<f64>, filter: &SosFilter) -> DMatrix<f64> {
    let (c, t) = data.shape();
    let rows: Vec<Vec<f64>> = (0..c)
        .into_par_iter()
        .map(|i| {
            let row: Vec<f64> = data.row(i).iter().copied().collect();
            filter.filtfilt(&row)
        })
        .collect();
    DMatrix::from_fn(c, t, |i, j| rows[i][j])
}

pub fn band_pass_data(data: &DMatrix<f64>, sample_rate: f64, low_hz: f64, high_hz: f64) -> Result<DMatrix<f64>> {
    let filter = SosFilter::butterworth_band_pass(BAND_PASS_ORDER, low_hz, high_hz, sample_rate)?;
    Ok(filter_rows(data, &filter))
}

/// Zero-phase Butterworth band-pass of each channel.
pub fn band_pass(rec: &MultichannelRecording, low_hz: f64, high_hz: f64) -> Result<MultichannelRecording> {
    let out = band_pass_data(rec.data(), rec.sample_rate(), low_hz, high_hz)?;
    rec.with_data(out)
}

pub fn frobenius_relative_error(actual: &DMatrix<f64>, expected: &DMatrix<f64>) -> f64 {
    let denom = expected.norm();
    let diff = (actual - expected).norm();
    if denom == 0.0 {
        diff
    } else {
        diff / denom
    }
}

/// Subtracts the channel mean from every sample (average reference).
pub fn average_reference(v: &DVector<f64>) -> DVector<f64> {
    let mean = v.mean();
    v.map(|x| x - mean)
}
