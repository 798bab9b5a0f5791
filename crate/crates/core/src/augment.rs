//! Imaginary-participant generation.
//!
//! A recording is decomposed with SSD, each selected component's pattern is
//! fitted with a single dipole, the dipole is moved to nearby grid voxels,
//! and the unchanged source time courses are re-projected through the
//! patterns of the moved dipoles. Unselected components keep their
//! original patterns and the part of the recording not explained by the
//! decomposition is added back unmodified.

use nalgebra::{DMatrix, DVector, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dipolefit::{fit_quality_gate, DipoleFit, MusicScanner};
use crate::error::{Error, Result};
use crate::headmodel::{Dipole, HeadModel};
use crate::linmodel::{average_reference, Decomposition, MultichannelRecording, SourceActivity};
use crate::rng;
use crate::ssd::{ssd_decompose, SsdBands};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ComponentSelection {
    All,
    Strongest { count: usize },
    QualityGated { threshold: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationConfig {
    /// Total number of versions per participant, the original included.
    pub n_variants: usize,
    /// Minimum dipole displacement in metres.
    pub min_shift: f64,
    pub components: ComponentSelection,
    pub seed: u64,
    /// When set, each moved dipole is also rotated about a random axis by
    /// up to this many degrees.
    pub max_rotation_deg: Option<f64>,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            n_variants: 5,
            min_shift: 0.015,
            components: ComponentSelection::All,
            seed: 0,
            max_rotation_deg: None,
        }
    }
}

impl AugmentationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_variants == 0 {
            return Err(Error::config("n_variants must be at least 1"));
        }
        if !(self.min_shift >= 0.0) {
            return Err(Error::config(format!("min_shift must be non-negative, got {}", self.min_shift)));
        }
        if let Some(a) = self.max_rotation_deg {
            if !(0.0..=180.0).contains(&a) {
                return Err(Error::config(format!("max_rotation_deg must lie in [0, 180], got {a}")));
            }
        }
        Ok(())
    }
}

/// `A · S` together with what the decomposition failed to explain.
#[derive(Debug, Clone)]
pub struct Regeneration {
    pub recording: MultichannelRecording,
    /// True when the decomposition is not square, so `A · S` is a projection.
    pub lossy: bool,
    /// Frobenius norm of `original − A · S`.
    pub residual_norm: f64,
}

/// Re-projects all components through their original patterns.
pub fn regenerate(dec: &Decomposition, sources: &SourceActivity, original: &MultichannelRecording) -> Result<Regeneration> {
    if dec.n_components() != sources.n_components() || dec.n_channels() != original.n_channels() {
        return Err(Error::rejected(format!(
            "decomposition {}x{} does not match {} sources / {} channels",
            dec.n_channels(),
            dec.n_components(),
            sources.n_components(),
            original.n_channels()
        )));
    }
    let rebuilt = &dec.patterns * &sources.data;
    let residual_norm = (original.data() - &rebuilt).norm();
    Ok(Regeneration {
        recording: original.with_data(rebuilt)?,
        lossy: !dec.is_square(),
        residual_norm,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedPattern {
    pub pattern: DVector<f64>,
    /// The target voxel was the fitted voxel itself.
    pub identity_shift: bool,
}

/// Pattern of `moment` placed at `target_voxel`. The field replaces the
/// average-referenced part of `original`, rescaled to its norm and signed to
/// correlate positively with it; the common-mode part of `original` is kept,
/// since a dipole field carries none and dropping it would make the pattern
/// matrix singular.
pub fn shifted_pattern(model: &HeadModel, original: &DVector<f64>, moment: &Vector3<f64>, target_voxel: usize) -> Result<DVector<f64>> {
    let field = model.dipole_field(&Dipole {
        voxel_index: target_voxel,
        moment: *moment,
    })?;
    let field_norm = field.norm();
    if !(field_norm > 0.0) {
        return Err(Error::rejected(format!("dipole at voxel {target_voxel} produces no field")));
    }
    let referenced = average_reference(original);
    let common = original.mean();
    let mut scaled = field * (referenced.norm() / field_norm);
    if scaled.dot(&referenced) < 0.0 {
        scaled.neg_mut();
    }
    Ok(scaled.add_scalar(common))
}

/// Augmented pattern of component `component_index` with its fitted dipole
/// moved to `target_voxel`.
pub fn augment_component(
    dec: &Decomposition,
    component_index: usize,
    fit: &DipoleFit,
    target_voxel: usize,
    model: &HeadModel,
) -> Result<AugmentedPattern> {
    if component_index >= dec.n_components() {
        return Err(Error::rejected(format!(
            "component {component_index} out of range ({} components)",
            dec.n_components()
        )));
    }
    if fit.pattern_index != component_index {
        return Err(Error::rejected(format!(
            "fit belongs to component {}, not {component_index}",
            fit.pattern_index
        )));
    }
    let original = dec.patterns.column(component_index).into_owned();
    Ok(AugmentedPattern {
        pattern: shifted_pattern(model, &original, &fit.moment, target_voxel)?,
        identity_shift: target_voxel == fit.voxel_index,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentReport {
    pub index: usize,
    pub score: f64,
    pub fit: DipoleFit,
    pub selected: bool,
    pub targets: Vec<usize>,
    /// Displacement of each target from the fitted voxel, metres.
    pub shifts_m: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationReport {
    pub config: AugmentationConfig,
    pub bands: SsdBands,
    pub effective_rank: usize,
    pub n_components: usize,
    pub lossy: bool,
    pub residual_norm: f64,
    /// How augmented patterns are scaled.
    pub pattern_scaling: String,
    pub components: Vec<ComponentReport>,
}

#[derive(Debug, Clone)]
pub struct GeneratedParticipant {
    pub variants: Vec<MultichannelRecording>,
    pub report: AugmentationReport,
}

fn selected(selection: &ComponentSelection, index: usize, fit: &DipoleFit) -> bool {
    match *selection {
        ComponentSelection::All => true,
        ComponentSelection::Strongest { count } => index < count,
        ComponentSelection::QualityGated { threshold } => fit_quality_gate(fit, threshold),
    }
}

/// Generates `n_variants − 1` imaginary-participant versions of `rec`.
pub fn generate_participant(
    rec: &MultichannelRecording,
    scanner: &MusicScanner<'_>,
    cfg: &AugmentationConfig,
    bands: &SsdBands,
) -> Result<GeneratedParticipant> {
    cfg.validate()?;
    let model = scanner.model();
    if model.channel_labels() != rec.channel_labels() {
        return Err(Error::rejected("recording channels do not match the head model electrodes"));
    }
    let ssd = ssd_decompose(rec, bands, None)?;
    let dec = &ssd.decomposition;
    let sources = &ssd.sources;
    let n_shifts = cfg.n_variants - 1;

    let fits = (0..dec.n_components())
        .into_par_iter()
        .map(|i| scanner.fit(&dec.patterns.column(i).into_owned(), i))
        .collect::<Result<Vec<_>>>()?;

    let mut components = Vec::with_capacity(fits.len());
    for (i, fit) in fits.iter().enumerate() {
        let is_selected = selected(&cfg.components, i, fit);
        let targets = if is_selected {
            model
                .nearest_voxels(fit.voxel_index, n_shifts, cfg.min_shift)
                .map_err(|e| match e {
                    Error::InsufficientNeighbors { requested, available, .. } => Error::InsufficientNeighbors {
                        requested,
                        available,
                        component: Some(i),
                    },
                    other => other,
                })?
        } else {
            Vec::new()
        };
        let origin = model.voxels()[fit.voxel_index];
        let shifts_m = targets.iter().map(|&t| (model.voxels()[t] - origin).norm()).collect();
        components.push(ComponentReport {
            index: i,
            score: sources.component_scores[i],
            fit: *fit,
            selected: is_selected,
            targets,
            shifts_m,
        });
    }

    let rebuilt = &dec.patterns * &sources.data;
    let residual = rec.data() - &rebuilt;
    let residual_norm = residual.norm();

    let variants = (0..n_shifts)
        .into_par_iter()
        .map(|j| -> Result<MultichannelRecording> {
            let mut patterns = dec.patterns.clone();
            for comp in components.iter().filter(|c| c.selected) {
                let mut moment = comp.fit.moment;
                if let Some(max_deg) = cfg.max_rotation_deg {
                    let mut r = rng::stream(cfg.seed, &[j as u64, comp.index as u64]);
                    moment = rng::small_rotation(&mut r, max_deg) * moment;
                }
                let original = dec.patterns.column(comp.index).into_owned();
                let p = shifted_pattern(model, &original, &moment, comp.targets[j])?;
                patterns.set_column(comp.index, &p);
            }
            let data: DMatrix<f64> = &patterns * &sources.data + &residual;
            let mut out = rec.with_data(data)?;
            out.set_metadata("variant", serde_json::json!(j + 1));
            out.set_metadata("augmentation_seed", serde_json::json!(cfg.seed));
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(GeneratedParticipant {
        variants,
        report: AugmentationReport {
            config: cfg.clone(),
            bands: *bands,
            effective_rank: ssd.effective_rank,
            n_components: dec.n_components(),
            lossy: !dec.is_square(),
            residual_norm,
            pattern_scaling: "dipole field rescaled to the norm of the average-referenced original pattern, signed for positive correlation with it; the original common-mode offset is kept".into(),
            components,
        },
    })
}
