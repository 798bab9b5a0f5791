//! Three-concentric-sphere volume conductor.
//!
//! The scalp potential of a current dipole inside the innermost sphere is
//! the gradient, with respect to the source position, of the monopole
//! series
//!
//! ```text
//! Φ(r0) = 1/(4π σ_brain R) Σ_{n≥1} f_n (|r0|/R)^n P_n(cos γ)
//! ```
//!
//! where `R` is the scalp radius and `f_n` follows from continuity of the
//! potential and of the normal current at every interface plus an
//! insulating outer boundary (`f_n = (2n+1)/n` for a homogeneous sphere).
//! The coefficients approach `a + b/n` for large `n`, and the leading
//! deviation from it is a layer reflection decaying like `(α + β/n) q^n`
//! with `q` the squared ratio of adjacent radii. Both parts are summed in
//! closed form (the reflection as an image source at `q r0`), so only a
//! small remainder is expanded in Legendre terms and the truncated series
//! converges quickly even for superficial sources.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::montage::Montage;

/// Inner and outer radius of the cortical shell, as fractions of the brain radius.
pub const SHELL_INNER: f64 = 0.4;
pub const SHELL_OUTER: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeadModelConfig {
    /// Brain, skull and scalp radius in metres.
    pub radii: [f64; 3],
    /// Brain, skull and scalp conductivity in S/m.
    pub conductivities: [f64; 3],
    pub grid_spacing: f64,
    pub montage: String,
    /// Optional subset of montage labels to keep, in montage order.
    pub channels: Option<Vec<String>>,
    pub series_degree: usize,
}

impl Default for HeadModelConfig {
    fn default() -> Self {
        Self {
            radii: [0.080, 0.085, 0.092],
            conductivities: [0.33, 0.0042, 0.33],
            grid_spacing: 0.01,
            montage: crate::montage::MONTAGE_10_10_61.to_string(),
            channels: None,
            series_degree: 60,
        }
    }
}

impl HeadModelConfig {
    fn validate(&self) -> Result<()> {
        let [rb, rs, rc] = self.radii;
        if !(rb > 0.0 && rb < rs && rs < rc) {
            return Err(Error::config(format!("radii must satisfy 0 < brain < skull < scalp, got {:?}", self.radii)));
        }
        if self.conductivities.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::config(format!("conductivities must be positive, got {:?}", self.conductivities)));
        }
        if !(self.grid_spacing > 0.0 && self.grid_spacing.is_finite()) {
            return Err(Error::config(format!("invalid grid spacing {}", self.grid_spacing)));
        }
        if self.series_degree == 0 {
            return Err(Error::config("series degree must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Electrode {
    pub label: String,
    pub position: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dipole {
    pub voxel_index: usize,
    pub moment: Vector3<f64>,
}

/// How the Legendre series is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeriesMode {
    /// Closed-form asymptotic part plus a truncated remainder series.
    Accelerated,
    /// Plain truncated series, for verification.
    Raw,
}

/// Monopole transfer coefficients of the layered sphere.
#[derive(Debug, Clone, PartialEq)]
struct SeriesCoefficients {
    /// `f[n-1]` for n = 1..=degree.
    f: Vec<f64>,
    asymptote: f64,
    first_order: f64,
    /// Decay ratio and `(α, β)` of the reflection term.
    reflection_ratio: f64,
    reflection: (f64, f64),
    norm_radii: [f64; 3],
    sigma: [f64; 3],
}

/// Coefficient `f_n` for a dipole in the innermost shell, radii normalized to
/// the outer radius.
fn transfer_coefficient(n: usize, radii: &[f64; 3], sigma: &[f64; 3]) -> f64 {
    let nf = n as f64;
    let (mut a, mut b) = ((nf + 1.0) / nf, 1.0);
    let outer_potential = a + b;
    for layer in (0..2).rev() {
        let rho = radii[layer];
        let rn = rho.powi(n as i32);
        let rn1 = rn * rho;
        let phi = a * rn + b / rn1;
        let flux = sigma[layer + 1] * (nf * a * rn / rho - (nf + 1.0) * b / (rn1 * rho));
        let d = flux / sigma[layer];
        let inner_growing = (d * rho + (nf + 1.0) * phi) / (2.0 * nf + 1.0);
        let inner_decaying = phi - inner_growing;
        a = inner_growing / rn;
        b = inner_decaying * rn1;
    }
    outer_potential / b
}

impl SeriesCoefficients {
    fn new(degree: usize, radii: &[f64; 3], sigma: &[f64; 3]) -> Self {
        let scale = radii[2];
        let norm = [radii[0] / scale, radii[1] / scale, 1.0];
        let f = (1..=degree).map(|n| transfer_coefficient(n, &norm, sigma)).collect();
        let sigma = *sigma;
        let sigma = &sigma;
        // Richardson extrapolation of f_n ≈ a + b/n + c/n².
        let (n1, n2, n3) = (500.0, 1000.0, 2000.0);
        let (f1, f2, f3) = (
            transfer_coefficient(500, &norm, sigma),
            transfer_coefficient(1000, &norm, sigma),
            transfer_coefficient(2000, &norm, sigma),
        );
        let m = nalgebra::Matrix3::new(1.0, 1.0 / n1, 1.0 / (n1 * n1), 1.0, 1.0 / n2, 1.0 / (n2 * n2), 1.0, 1.0 / n3, 1.0 / (n3 * n3));
        let sol = m
            .lu()
            .solve(&Vector3::new(f1, f2, f3))
            .expect("Richardson system is well-posed");
        let (a, b, c) = (sol[0], sol[1], sol[2]);
        let q = (norm[0] / norm[1]).max(norm[1]).powi(2);
        let scaled_residual = |n: f64| {
            let f_n = transfer_coefficient(n as usize, &norm, sigma);
            (f_n - a - b / n - c / (n * n)) / q.powf(n)
        };
        let (m1, m2) = (60.0, 100.0);
        let (r1, r2) = (scaled_residual(m1), scaled_residual(m2));
        let beta = (r1 - r2) / (1.0 / m1 - 1.0 / m2);
        let alpha = r2 - beta / m2;
        Self {
            f,
            asymptote: a,
            first_order: b,
            reflection_ratio: q,
            reflection: (alpha, beta),
            norm_radii: norm,
            sigma: *sigma,
        }
    }

    /// Extends the stored coefficients to at least `degree` terms.
    fn extended(&self, degree: usize) -> std::borrow::Cow<'_, Self> {
        if degree <= self.f.len() {
            return std::borrow::Cow::Borrowed(self);
        }
        let mut out = self.clone();
        out.f.extend((self.f.len() + 1..=degree).map(|n| transfer_coefficient(n, &self.norm_radii, &self.sigma)));
        std::borrow::Cow::Owned(out)
    }

    /// Part of `f_n` not covered by the closed-form sums.
    fn remainder(&self, n: usize, mode: SeriesMode) -> f64 {
        let f_n = self.f[n - 1];
        match mode {
            SeriesMode::Raw => f_n,
            SeriesMode::Accelerated => {
                let nf = n as f64;
                let (alpha, beta) = self.reflection;
                f_n - self.asymptote - self.first_order / nf - self.reflection_ratio.powi(n as i32) * (alpha + beta / nf)
            }
        }
    }
}

/// `Σ_{n≥1} ∇[t^n P_n]` and `Σ_{n≥1} ∇[t^n P_n]/n` for a source at `r0`
/// and an electrode on the unit sphere.
fn closed_form_gradients(r0: &Vector3<f64>, electrode: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let dv = electrode - r0;
    let d = dv.norm();
    let g1 = dv / (d * d * d);
    let g2 = (electrode * d + dv) / (d * (1.0 - electrode.dot(r0) + d));
    (g1, g2)
}

/// Compensated accumulation of 3-vectors.
#[derive(Default)]
struct KahanSum3 {
    sum: Vector3<f64>,
    carry: Vector3<f64>,
}

impl KahanSum3 {
    fn add(&mut self, v: Vector3<f64>) {
        let y = v - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }
}

/// Gradient with respect to `r0` of the monopole series, normalized units
/// (electrode on the unit sphere, `|r0| < 1`).
fn potential_gradient(coeffs: &SeriesCoefficients, degree: usize, r0: &Vector3<f64>, electrode: &Vector3<f64>, mode: SeriesMode) -> Vector3<f64> {
    let t = r0.norm();
    let mut total = KahanSum3::default();
    if mode == SeriesMode::Accelerated {
        let (g1, g2) = closed_form_gradients(r0, electrode);
        total.add(g1 * coeffs.asymptote + g2 * coeffs.first_order);
        let q = coeffs.reflection_ratio;
        let (alpha, beta) = coeffs.reflection;
        let (h1, h2) = closed_form_gradients(&(r0 * q), electrode);
        total.add((h1 * alpha + h2 * beta) * q);
    }
    if t < 1e-300 {
        total.add(electrode * coeffs.remainder(1, mode));
        return total.sum;
    }
    let r0_hat = r0 / t;
    let x = r0_hat.dot(electrode).clamp(-1.0, 1.0);
    let tangential = electrode - r0_hat * x;
    let (mut p_prev, mut p) = (1.0, x);
    let (mut dp_prev, mut dp) = (0.0, 1.0);
    let mut t_pow = 1.0;
    for n in 1..=degree.min(coeffs.f.len()) {
        let nf = n as f64;
        let e = coeffs.remainder(n, mode);
        total.add((r0_hat * (nf * p) + tangential * dp) * (e * t_pow));
        let p_next = ((2.0 * nf + 1.0) * x * p - nf * p_prev) / (nf + 1.0);
        let dp_next = dp_prev + (2.0 * nf + 1.0) * p;
        p_prev = p;
        p = p_next;
        dp_prev = dp;
        dp = dp_next;
        t_pow *= t;
    }
    total.sum
}

#[derive(Debug)]
pub struct HeadModel {
    config: HeadModelConfig,
    electrodes: Vec<Electrode>,
    voxels: Vec<Vector3<f64>>,
    lattice: Vec<[i32; 3]>,
    coeffs: SeriesCoefficients,
    leadfields: OnceLock<Vec<DMatrix<f64>>>,
}

impl Clone for HeadModel {
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            electrodes: self.electrodes.clone(),
            voxels: self.voxels.clone(),
            lattice: self.lattice.clone(),
            coeffs: self.coeffs.clone(),
            leadfields: self.leadfields.clone(),
        }
    }
}

/// Regular lattice points inside the cortical shell, x-major then y, then z.
pub fn cortical_lattice(brain_radius: f64, spacing: f64) -> Vec<[i32; 3]> {
    let outer = SHELL_OUTER * brain_radius;
    let inner = SHELL_INNER * brain_radius;
    let k = (outer / spacing).floor() as i32;
    let mut out = Vec::new();
    for i in -k..=k {
        for j in -k..=k {
            for l in -k..=k {
                let r = spacing * ((i * i + j * j + l * l) as f64).sqrt();
                if r >= inner && r <= outer {
                    out.push([i, j, l]);
                }
            }
        }
    }
    out
}

impl HeadModel {
    /// Builds a model with electrodes from a built-in montage.
    pub fn build(config: HeadModelConfig) -> Result<Self> {
        config.validate()?;
        let montage = Montage::standard(&config.montage)?;
        let scalp = config.radii[2];
        let mut electrodes: Vec<Electrode> = montage
            .labels
            .iter()
            .zip(&montage.positions)
            .map(|(l, p)| Electrode {
                label: l.clone(),
                position: p * scalp,
            })
            .collect();
        if let Some(subset) = &config.channels {
            for s in subset {
                if !montage.labels.contains(s) {
                    return Err(Error::config(format!("channel {s} not in montage {}", montage.name)));
                }
            }
            electrodes.retain(|e| subset.contains(&e.label));
        }
        Self::with_electrodes(config, electrodes)
    }

    /// Builds a model with explicit electrode positions (projected onto the scalp).
    pub fn with_electrodes(config: HeadModelConfig, electrodes: Vec<Electrode>) -> Result<Self> {
        config.validate()?;
        if electrodes.len() < 2 {
            return Err(Error::config("a head model needs at least 2 electrodes"));
        }
        let scalp = config.radii[2];
        let electrodes = electrodes
            .into_iter()
            .map(|e| {
                let n = e.position.norm();
                if n == 0.0 {
                    Err(Error::config(format!("electrode {} at the origin", e.label)))
                } else {
                    Ok(Electrode {
                        position: e.position * (scalp / n),
                        label: e.label,
                    })
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let lattice = cortical_lattice(config.radii[0], config.grid_spacing);
        if lattice.is_empty() {
            return Err(Error::config(format!(
                "grid spacing {} m leaves no voxel in the cortical shell",
                config.grid_spacing
            )));
        }
        let voxels = lattice
            .iter()
            .map(|p| Vector3::new(p[0] as f64, p[1] as f64, p[2] as f64) * config.grid_spacing)
            .collect();
        let coeffs = SeriesCoefficients::new(config.series_degree, &config.radii, &config.conductivities);
        Ok(Self {
            config,
            electrodes,
            voxels,
            lattice,
            coeffs,
            leadfields: OnceLock::new(),
        })
    }

    pub fn config(&self) -> &HeadModelConfig {
        &self.config
    }

    pub fn electrodes(&self) -> &[Electrode] {
        &self.electrodes
    }

    pub fn channel_labels(&self) -> Vec<String> {
        self.electrodes.iter().map(|e| e.label.clone()).collect()
    }

    pub fn n_channels(&self) -> usize {
        self.electrodes.len()
    }

    pub fn voxels(&self) -> &[Vector3<f64>] {
        &self.voxels
    }

    pub fn n_voxels(&self) -> usize {
        self.voxels.len()
    }

    pub fn voxel(&self, index: usize) -> Result<&Vector3<f64>> {
        self.voxels
            .get(index)
            .ok_or_else(|| Error::rejected(format!("voxel index {index} out of range ({} voxels)", self.voxels.len())))
    }

    /// Integer lattice coordinates of a voxel.
    pub fn lattice_point(&self, index: usize) -> [i32; 3] {
        self.lattice[index]
    }

    pub fn grid_spacing(&self) -> f64 {
        self.config.grid_spacing
    }

    /// Largest per-axis lattice offset between two voxels.
    pub fn grid_steps(&self, a: usize, b: usize) -> i32 {
        let (p, q) = (self.lattice[a], self.lattice[b]);
        (0..3).map(|i| (p[i] - q[i]).abs()).max().unwrap_or(0)
    }

    /// Voxel nearest to an arbitrary position (ties → lowest index).
    pub fn nearest_voxel(&self, position: &Vector3<f64>) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (i, v) in self.voxels.iter().enumerate() {
            let d = (v - position).norm_squared();
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }

    /// Raw (unreferenced) electrode potentials of a dipole at an arbitrary
    /// position strictly inside the brain sphere.
    pub fn potentials_at(&self, position: &Vector3<f64>, moment: &Vector3<f64>, degree: usize, mode: SeriesMode) -> DVector<f64> {
        let scalp = self.config.radii[2];
        let r0 = position / scalp;
        let factor = 1.0 / (4.0 * PI * self.config.conductivities[0] * scalp * scalp);
        let coeffs = self.coeffs.extended(degree);
        DVector::from_iterator(
            self.electrodes.len(),
            self.electrodes.iter().map(|e| {
                let g = potential_gradient(&coeffs, degree, &r0, &(e.position / scalp), mode);
                g.dot(moment) * factor
            }),
        )
    }

    /// Average-referenced c × 3 leadfield at an arbitrary position.
    pub fn leadfield_at(&self, position: &Vector3<f64>, degree: usize, mode: SeriesMode) -> DMatrix<f64> {
        let c = self.electrodes.len();
        let mut l = DMatrix::zeros(c, 3);
        for axis in 0..3 {
            let mut m = Vector3::zeros();
            m[axis] = 1.0;
            let col = crate::linmodel::average_reference(&self.potentials_at(position, &m, degree, mode));
            l.set_column(axis, &col);
        }
        l
    }

    fn compute_leadfield(&self, index: usize) -> DMatrix<f64> {
        self.leadfield_at(&self.voxels[index], self.config.series_degree, SeriesMode::Accelerated)
    }

    /// Average-referenced leadfield of a grid voxel.
    pub fn leadfield(&self, voxel_index: usize) -> Result<DMatrix<f64>> {
        self.voxel(voxel_index)?;
        Ok(match self.leadfields.get() {
            Some(cache) => cache[voxel_index].clone(),
            None => self.compute_leadfield(voxel_index),
        })
    }

    /// Leadfields of every voxel, computed once.
    pub fn leadfield_cache(&self) -> &[DMatrix<f64>] {
        self.leadfields.get_or_init(|| {
            (0..self.voxels.len())
                .into_par_iter()
                .map(|i| self.compute_leadfield(i))
                .collect()
        })
    }

    /// Average-referenced scalp pattern of a dipole.
    pub fn dipole_field(&self, dipole: &Dipole) -> Result<DVector<f64>> {
        self.voxel(dipole.voxel_index)?;
        let l = match self.leadfields.get() {
            Some(cache) => &cache[dipole.voxel_index] * dipole.moment,
            None => self.compute_leadfield(dipole.voxel_index) * dipole.moment,
        };
        Ok(l)
    }

    /// The `count` voxels nearest to `origin` (excluding it) whose distance is
    /// at least `min_distance`, ordered by distance then index.
    pub fn nearest_voxels(&self, origin: usize, count: usize, min_distance: f64) -> Result<Vec<usize>> {
        self.voxel(origin)?;
        if !(min_distance >= 0.0) {
            return Err(Error::rejected(format!("min_distance must be non-negative, got {min_distance}")));
        }
        if count == 0 {
            return Ok(Vec::new());
        }
        let o = self.lattice[origin];
        let s2 = self.config.grid_spacing * self.config.grid_spacing;
        let min2 = min_distance * min_distance;
        let mut candidates: Vec<(i64, usize)> = self
            .lattice
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != origin)
            .map(|(i, p)| {
                let d2: i64 = (0..3).map(|k| ((p[k] - o[k]) as i64).pow(2)).sum();
                (d2, i)
            })
            .filter(|(d2, _)| (*d2 as f64) * s2 >= min2 * (1.0 - 1e-12))
            .collect();
        if candidates.len() < count {
            return Err(Error::InsufficientNeighbors {
                requested: count,
                available: candidates.len(),
                component: None,
            });
        }
        candidates.sort_unstable();
        Ok(candidates.into_iter().take(count).map(|(_, i)| i).collect())
    }

    /// Writes `headmodel.json` and, when requested, the `leadfield.f64` cache.
    pub fn save(&self, dir: &Path, with_leadfield_cache: bool) -> Result<()> {
        fs::create_dir_all(dir)?;
        let cache = if with_leadfield_cache {
            let lf = self.leadfield_cache();
            let c = self.n_channels();
            let mut bytes = Vec::with_capacity(lf.len() * c * 3 * 8);
            for l in lf {
                for i in 0..c {
                    for j in 0..3 {
                        bytes.extend_from_slice(&l[(i, j)].to_le_bytes());
                    }
                }
            }
            fs::write(dir.join(LEADFIELD_FILE), bytes)?;
            Some(LeadfieldCacheHeader {
                file: LEADFIELD_FILE.to_string(),
                shape: [lf.len(), c, 3],
                dtype: "float64".into(),
                byte_order: "little".into(),
            })
        } else {
            None
        };
        let doc = HeadModelFile {
            config: self.config.clone(),
            electrodes: self.electrodes.clone(),
            n_voxels: self.voxels.len(),
            leadfield_cache: cache,
        };
        fs::write(dir.join(HEADMODEL_FILE), serde_json::to_string_pretty(&doc)?)?;
        Ok(())
    }

    /// Loads a model from `headmodel.json` (or a directory containing it).
    /// A leadfield cache, when present, is read instead of recomputed.
    pub fn load(path: &Path) -> Result<Self> {
        let file = if path.is_dir() { path.join(HEADMODEL_FILE) } else { path.to_path_buf() };
        let doc: HeadModelFile = serde_json::from_str(&fs::read_to_string(&file)?)?;
        let model = Self::with_electrodes(doc.config, doc.electrodes)?;
        if model.n_voxels() != doc.n_voxels {
            return Err(Error::Format(format!(
                "headmodel.json lists {} voxels but the configuration yields {}",
                doc.n_voxels,
                model.n_voxels()
            )));
        }
        if let Some(h) = doc.leadfield_cache {
            let dir = file.parent().unwrap_or(Path::new("."));
            let bytes = fs::read(dir.join(&h.file))?;
            let c = model.n_channels();
            if h.shape != [model.n_voxels(), c, 3] || bytes.len() != h.shape.iter().product::<usize>() * 8 {
                return Err(Error::Format(format!("leadfield cache shape {:?} does not match model", h.shape)));
            }
            let values: Vec<f64> = bytes
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect();
            let lf = values
                .chunks_exact(c * 3)
                .map(|block| DMatrix::from_row_slice(c, 3, block))
                .collect();
            let _ = model.leadfields.set(lf);
        }
        Ok(model)
    }
}

pub const HEADMODEL_FILE: &str = "headmodel.json";
pub const LEADFIELD_FILE: &str = "leadfield.f64";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LeadfieldCacheHeader {
    file: String,
    /// voxels × channels × 3, row-major.
    shape: [usize; 3],
    dtype: String,
    byte_order: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct HeadModelFile {
    config: HeadModelConfig,
    electrodes: Vec<Electrode>,
    n_voxels: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    leadfield_cache: Option<LeadfieldCacheHeader>,
}
