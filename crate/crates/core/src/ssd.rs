//! Spatio-spectral decomposition.
//!
//! Finds spatial filters maximizing `wᵀ C_s w / wᵀ (C_s + C_n) w`, where
//! `C_s` is the covariance of the signal-band filtered data and `C_n` the
//! covariance of the summed flanking-band filtered data. The generalized
//! eigenproblem is solved after whitening `C_s + C_n` restricted to its
//! numerical rank.

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linmodel::{
    band_pass_data, covariance_of, filters_to_patterns, trim_edges, Decomposition, MultichannelRecording,
    SourceActivity, EDGE_DISCARD_S,
};

/// Eigenvalues of `C_s + C_n` below this fraction of the largest are dropped.
pub const RANK_THRESHOLD: f64 = 1e-10;

/// Minimum duration, in seconds, left after discarding filter edges.
pub const MIN_DURATION_S: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsdBands {
    pub signal: (f64, f64),
    pub flank_low: (f64, f64),
    pub flank_high: (f64, f64),
}

impl Default for SsdBands {
    fn default() -> Self {
        Self {
            signal: (8.0, 13.0),
            flank_low: (5.0, 8.0),
            flank_high: (13.0, 16.0),
        }
    }
}

impl SsdBands {
    pub fn validate(&self, sample_rate: f64) -> Result<()> {
        for (name, (lo, hi)) in [("signal", self.signal), ("flank_low", self.flank_low), ("flank_high", self.flank_high)] {
            if !(lo > 0.0 && lo < hi && hi < sample_rate / 2.0) {
                return Err(Error::rejected(format!(
                    "{name} band {lo}-{hi} Hz invalid for sample rate {sample_rate} Hz"
                )));
            }
        }
        if self.flank_low.1 > self.signal.0 || self.signal.1 > self.flank_high.0 {
            return Err(Error::rejected("flanking bands must not overlap the signal band"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SsdResult {
    pub decomposition: Decomposition,
    pub sources: SourceActivity,
    /// Numerical rank of `C_s + C_n`.
    pub effective_rank: usize,
    pub bands: SsdBands,
}

fn edge_samples(sample_rate: f64) -> usize {
    (EDGE_DISCARD_S * sample_rate).round() as usize
}

/// Signal-band and flank-band data with filter edges removed.
fn band_views(data: &DMatrix<f64>, sample_rate: f64, bands: &SsdBands) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let edge = edge_samples(sample_rate);
    let signal = band_pass_data(data, sample_rate, bands.signal.0, bands.signal.1)?;
    let flank = band_pass_data(data, sample_rate, bands.flank_low.0, bands.flank_low.1)?
        + band_pass_data(data, sample_rate, bands.flank_high.0, bands.flank_high.1)?;
    Ok((trim_edges(&signal, edge)?, trim_edges(&flank, edge)?))
}

/// Ratio of signal-band to flank-band power of one time course, measured by
/// filtering it with the same filters and edge handling as the decomposition.
pub fn band_power_ratio(timecourse: &[f64], sample_rate: f64, bands: &SsdBands) -> Result<f64> {
    let data = DMatrix::from_row_slice(1, timecourse.len(), timecourse);
    let (s, n) = band_views(&data, sample_rate, bands)?;
    let var = |m: &DMatrix<f64>| {
        let mean = m.mean();
        m.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
    };
    Ok(var(&s) / var(&n))
}

/// Spatio-spectral decomposition of `rec`; `n_components = None` keeps the
/// effective rank.
pub fn ssd_decompose(rec: &MultichannelRecording, bands: &SsdBands, n_components: Option<usize>) -> Result<SsdResult> {
    let fs = rec.sample_rate();
    bands.validate(fs)?;
    let edge = edge_samples(fs);
    let usable = rec.n_samples().saturating_sub(2 * edge) as f64 / fs;
    if usable < MIN_DURATION_S {
        return Err(Error::rejected(format!(
            "recording leaves {usable:.2} s after edge discard, need at least {MIN_DURATION_S} s"
        )));
    }

    let (signal, flank) = band_views(rec.data(), fs, bands)?;
    let c_signal = covariance_of(&signal)?;
    let c_flank = covariance_of(&flank)?;
    let c_total = &c_signal + &c_flank;

    // Whitening of C_s + C_n restricted to its numerical rank.
    let eig = SymmetricEigen::new(c_total.clone());
    let max_ev = eig.eigenvalues.max();
    let mut kept: Vec<usize> = (0..eig.eigenvalues.len())
        .filter(|&i| max_ev > 0.0 && eig.eigenvalues[i] > RANK_THRESHOLD * max_ev)
        .collect();
    kept.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let rank = kept.len();
    if rank < 2 {
        return Err(Error::DegenerateDecomposition {
            reason: format!("C_s + C_n has effective rank {rank}"),
            condition: f64::INFINITY,
        });
    }
    let c = rec.n_channels();
    let mut whitener = DMatrix::zeros(c, rank);
    for (j, &i) in kept.iter().enumerate() {
        whitener.set_column(j, &(eig.eigenvectors.column(i) / eig.eigenvalues[i].sqrt()));
    }

    let mut reduced = whitener.tr_mul(&c_signal) * &whitener;
    reduced = (&reduced + reduced.transpose()) * 0.5;
    let inner = SymmetricEigen::new(reduced);
    let mut order: Vec<usize> = (0..rank).collect();
    order.sort_by(|&a, &b| inner.eigenvalues[b].total_cmp(&inner.eigenvalues[a]).then(a.cmp(&b)));

    let d = n_components.unwrap_or(rank);
    if d == 0 || d > rank {
        return Err(Error::rejected(format!(
            "requested {d} components, effective rank is {rank}"
        )));
    }
    let mut filters = DMatrix::zeros(c, d);
    let mut scores = Vec::with_capacity(d);
    for (j, &i) in order.iter().take(d).enumerate() {
        let lambda = inner.eigenvalues[i].clamp(0.0, 1.0);
        let mut w = &whitener * inner.eigenvectors.column(i);
        // Unit signal-band power per filter.
        let signal_power = (w.transpose() * &c_signal * &w)[(0, 0)];
        if signal_power > 0.0 {
            w /= signal_power.sqrt();
        }
        filters.set_column(j, &w);
        scores.push(lambda);
    }

    let covariance = covariance_of(rec.data())?;
    let mut patterns = filters_to_patterns(&filters, &covariance)?;
    for j in 0..d {
        let col = patterns.column(j);
        let peak = col.iamax();
        if col[peak] < 0.0 {
            patterns.column_mut(j).neg_mut();
            filters.column_mut(j).neg_mut();
        }
    }

    let sources = SourceActivity::new(filters.tr_mul(rec.data()), scores)?;
    Ok(SsdResult {
        decomposition: Decomposition {
            filters,
            patterns,
            covariance,
        },
        sources,
        effective_rank: rank,
        bands: *bands,
    })
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, |x| x.len());
    if rows.iter().any(|x| x.len() != c) {
        return Err(Error::Format(format!("ragged {what} matrix")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

/// On-disk form of a decomposition (`ssd.json`); matrices as row-major nested arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsdFile {
    pub bands: SsdBands,
    pub channel_labels: Vec<String>,
    pub effective_rank: usize,
    pub component_scores: Vec<f64>,
    pub filters: Vec<Vec<f64>>,
    pub patterns: Vec<Vec<f64>>,
    pub covariance: Vec<Vec<f64>>,
}

impl SsdFile {
    pub fn from_result(result: &SsdResult, channel_labels: &[String]) -> Self {
        Self {
            bands: result.bands,
            channel_labels: channel_labels.to_vec(),
            effective_rank: result.effective_rank,
            component_scores: result.sources.component_scores.clone(),
            filters: to_rows(&result.decomposition.filters),
            patterns: to_rows(&result.decomposition.patterns),
            covariance: to_rows(&result.decomposition.covariance),
        }
    }

    pub fn decomposition(&self) -> Result<Decomposition> {
        Ok(Decomposition {
            filters: from_rows(&self.filters, "filter")?,
            patterns: from_rows(&self.patterns, "pattern")?,
            covariance: from_rows(&self.covariance, "covariance")?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Pattern column `j` of a decomposition.
pub fn pattern(dec: &Decomposition, j: usize) -> DVector<f64> {
    dec.patterns.column(j).into_owned()
}
