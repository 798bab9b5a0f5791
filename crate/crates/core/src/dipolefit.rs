//! Single-dipole MUSIC scan of a spatial pattern over the head-model grid.

use nalgebra::{DMatrix, DVector, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::headmodel::HeadModel;
use crate::linmodel::average_reference;

/// Subspace correlation below which a fit is flagged as low confidence.
pub const DEFAULT_QUALITY_THRESHOLD: f64 = 0.90;

/// Relative singular-value cutoff when orthonormalizing a leadfield.
pub const RANK_CUTOFF: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DipoleFit {
    pub voxel_index: usize,
    /// Unit vector.
    pub moment: Vector3<f64>,
    pub subspace_correlation: f64,
    pub pattern_index: usize,
    /// The winning leadfield had fewer than three significant singular values.
    pub reduced_rank: bool,
    pub low_confidence: bool,
}

pub fn fit_quality_gate(fit: &DipoleFit, threshold: f64) -> bool {
    fit.subspace_correlation >= threshold
}

#[derive(Debug, Clone)]
struct VoxelBasis {
    /// Orthonormal basis of the leadfield column space, c × rank.
    basis: DMatrix<f64>,
    /// Pseudo-inverse of the leadfield, 3 × c.
    pinv: DMatrix<f64>,
}

impl VoxelBasis {
    fn new(leadfield: &DMatrix<f64>) -> Self {
        let svd = leadfield.clone().svd(true, true);
        let u = svd.u.expect("left singular vectors requested");
        let v_t = svd.v_t.expect("right singular vectors requested");
        let s_max = svd.singular_values.max();
        let keep: Vec<usize> = (0..svd.singular_values.len())
            .filter(|&i| s_max > 0.0 && svd.singular_values[i] > RANK_CUTOFF * s_max)
            .collect();
        let c = leadfield.nrows();
        let mut basis = DMatrix::zeros(c, keep.len());
        let mut pinv = DMatrix::zeros(3, c);
        for (j, &i) in keep.iter().enumerate() {
            basis.set_column(j, &u.column(i));
            pinv += v_t.row(i).transpose() * u.column(i).transpose() / svd.singular_values[i];
        }
        Self { basis, pinv }
    }

    fn rank(&self) -> usize {
        self.basis.ncols()
    }
}

/// Precomputed per-voxel subspaces of one head model.
#[derive(Debug, Clone)]
pub struct MusicScanner<'m> {
    model: &'m HeadModel,
    bases: Vec<VoxelBasis>,
}

impl<'m> MusicScanner<'m> {
    pub fn new(model: &'m HeadModel) -> Self {
        let bases = model.leadfield_cache().par_iter().map(VoxelBasis::new).collect();
        Self { model, bases }
    }

    pub fn model(&self) -> &'m HeadModel {
        self.model
    }

    fn unit_pattern(&self, pattern: &DVector<f64>) -> Result<DVector<f64>> {
        if pattern.len() != self.model.n_channels() {
            return Err(Error::rejected(format!(
                "pattern has {} entries for {} electrodes",
                pattern.len(),
                self.model.n_channels()
            )));
        }
        let referenced = average_reference(pattern);
        let norm = referenced.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::rejected("pattern is zero after average referencing"));
        }
        Ok(referenced / norm)
    }

    /// Subspace correlation of `pattern` with every voxel's leadfield.
    pub fn scan(&self, pattern: &DVector<f64>) -> Result<Vec<f64>> {
        let unit = self.unit_pattern(pattern)?;
        Ok(self
            .bases
            .par_iter()
            .map(|b| (b.basis.tr_mul(&unit)).norm().min(1.0))
            .collect())
    }

    /// Best single-dipole fit of `pattern`.
    pub fn fit(&self, pattern: &DVector<f64>, pattern_index: usize) -> Result<DipoleFit> {
        let rho = self.scan(pattern)?;
        let mut best = 0;
        for (i, r) in rho.iter().enumerate() {
            if *r > rho[best] {
                best = i;
            }
        }
        let basis = &self.bases[best];
        let referenced = average_reference(pattern);
        let m = &basis.pinv * referenced;
        let moment = Vector3::new(m[0], m[1], m[2]);
        let norm = moment.norm();
        if !(norm > 0.0) {
            return Err(Error::rejected("least-squares moment vanished"));
        }
        let correlation = rho[best];
        Ok(DipoleFit {
            voxel_index: best,
            moment: moment / norm,
            subspace_correlation: correlation,
            pattern_index,
            reduced_rank: basis.rank() < 3,
            low_confidence: correlation < DEFAULT_QUALITY_THRESHOLD,
        })
    }
}

/// Fits one pattern against `model`; builds a scanner for the call.
pub fn music_fit(pattern: &DVector<f64>, model: &HeadModel) -> Result<DipoleFit> {
    MusicScanner::new(model).fit(pattern, 0)
}
