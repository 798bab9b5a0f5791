//! Leave-one-participant-out comparison of training with and without
//! imaginary participants.
//!
//! For every seed each participant contributes a k-trials-per-class
//! subsample to the training pools of the other participants. The baseline
//! arm trains on those subsamples; the augmented arm additionally trains on
//! the N−1 imaginary versions generated from each subsample. Both arms are
//! tested on all original trials of the held-out participant.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::distribution::{Binomial, DiscreteCDF};

use crate::augment::{generate_participant, AugmentationConfig, ComponentSelection};
use crate::classify::{accuracy, extract_features, lda_train, FeatureSet, PipelineConfig};
use crate::dipolefit::MusicScanner;
use crate::error::{Error, Result};
use crate::headmodel::HeadModelConfig;
use crate::io::read_recording;
use crate::linmodel::{ClassLabel, Marker, MultichannelRecording};
use crate::rng;
use crate::ssd::SsdBands;
use crate::synthscene::{Scene, SceneConfig};

const STREAM_SUBSAMPLE: u64 = 1;
const STREAM_AUGMENT: u64 = 2;
const STREAM_TEST: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Training trials per class taken from each training participant.
    pub k: usize,
    /// Versions per participant, original included; 1 disables augmentation.
    pub n_variants: usize,
    /// Test trials per class of the held-out participant; all when unset.
    pub test_trials_per_target: Option<usize>,
    pub seeds: Vec<u64>,
    /// Seconds kept before and after each selected cue when subsampling.
    pub segment_s: (f64, f64),
    pub min_shift: f64,
    pub components: ComponentSelection,
    pub max_rotation_deg: Option<f64>,
    pub pipeline: PipelineConfig,
    pub ssd: SsdBands,
    pub headmodel: HeadModelConfig,
    pub scene: SceneConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            k: 15,
            n_variants: 5,
            test_trials_per_target: None,
            seeds: (0..10).collect(),
            segment_s: (2.0, 6.0),
            min_shift: 0.015,
            components: ComponentSelection::All,
            max_rotation_deg: None,
            pipeline: PipelineConfig::default(),
            ssd: SsdBands::default(),
            headmodel: HeadModelConfig::default(),
            scene: SceneConfig::default(),
        }
    }
}

impl EvalConfig {
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        toml::from_str(&fs::read_to_string(path)?).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::config("k must be at least 1"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("at least one seed is required"));
        }
        if !(self.segment_s.0 >= 0.0 && self.segment_s.1 > 0.0) {
            return Err(Error::config("segment bounds must be non-negative"));
        }
        self.augmentation(0).validate()
    }

    /// Augmentation settings for one participant/seed stream.
    pub fn augmentation(&self, seed: u64) -> AugmentationConfig {
        AugmentationConfig {
            n_variants: self.n_variants,
            min_shift: self.min_shift,
            components: self.components,
            seed,
            max_rotation_deg: self.max_rotation_deg,
        }
    }
}

/// Keeps `k` randomly chosen trials per class, in their original order.
///
/// The returned recording holds only the samples from `before_s` before to
/// `after_s` after each kept cue, concatenated, with markers re-indexed.
pub fn subsample_trials(rec: &MultichannelRecording, k: usize, seed: u64, segment_s: (f64, f64)) -> Result<MultichannelRecording> {
    let mut r = rng::stream(seed, &[]);
    let mut keep = vec![false; rec.markers().len()];
    for class in ClassLabel::ALL {
        let idx: Vec<usize> = rec
            .markers()
            .iter()
            .enumerate()
            .filter(|(_, m)| m.label == class)
            .map(|(i, _)| i)
            .collect();
        if idx.len() < k {
            return Err(Error::rejected(format!(
                "{} {} trials available, {k} requested",
                idx.len(),
                class.as_str()
            )));
        }
        for j in index::sample(&mut r, idx.len(), k) {
            keep[idx[j]] = true;
        }
    }
    let fs = rec.sample_rate();
    let before = (segment_s.0 * fs).round() as usize;
    let after = (segment_s.1 * fs).round() as usize;
    let mut columns = Vec::new();
    let mut markers = Vec::new();
    for (m, _) in rec.markers().iter().zip(&keep).filter(|(_, k)| **k) {
        let start = m.sample.saturating_sub(before);
        let end = (m.sample + after).min(rec.n_samples());
        markers.push(Marker {
            sample: columns.len() + (m.sample - start),
            label: m.label,
        });
        columns.extend(start..end);
    }
    let data = rec.data().select_columns(&columns);
    let mut out = MultichannelRecording::new(data, fs, rec.channel_labels().to_vec(), markers)?.with_metadata(rec.metadata().clone());
    out.set_metadata("subsample_seed", serde_json::json!(seed));
    out.set_metadata("subsample_k", serde_json::json!(k));
    Ok(out)
}

/// SHA-256 of a recording's samples, labels, rate and markers.
pub fn recording_hash(rec: &MultichannelRecording) -> String {
    let mut h = Sha256::new();
    h.update(rec.sample_rate().to_le_bytes());
    for l in rec.channel_labels() {
        h.update(l.as_bytes());
        h.update([0]);
    }
    for m in rec.markers() {
        h.update((m.sample as u64).to_le_bytes());
        h.update(m.label.as_str().as_bytes());
    }
    for v in rec.data().iter() {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

fn features_hash(f: &FeatureSet) -> String {
    let mut h = Sha256::new();
    for v in f.x.iter() {
        h.update(v.to_le_bytes());
    }
    for l in &f.labels {
        h.update(l.as_str().as_bytes());
    }
    hex::encode(h.finalize())
}

/// Where participants come from.
pub trait Dataset: Sync {
    fn len(&self) -> usize;
    fn id(&self, index: usize) -> String;
    fn load(&self, index: usize) -> Result<MultichannelRecording>;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Participants generated on demand from a synthetic scene.
pub struct SyntheticDataset<'a> {
    pub scene: &'a Scene<'a>,
}

impl Dataset for SyntheticDataset<'_> {
    fn len(&self) -> usize {
        self.scene.config().n_participants
    }

    fn id(&self, index: usize) -> String {
        format!("P{:02}", index + 1)
    }

    fn load(&self, index: usize) -> Result<MultichannelRecording> {
        Ok(crate::io::quantize(&self.scene.participant(index)?.recording))
    }
}

/// Recording directories, one per participant, in sorted name order.
pub struct DirectoryDataset {
    pub dirs: Vec<PathBuf>,
}

impl DirectoryDataset {
    /// Every subdirectory of `root` holding a recording.
    pub fn scan(root: &Path) -> Result<Self> {
        let mut dirs: Vec<PathBuf> = fs::read_dir(root)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(crate::io::META_FILE).is_file())
            .collect();
        dirs.sort();
        if dirs.is_empty() {
            return Err(Error::rejected(format!("no recordings below {}", root.display())));
        }
        Ok(Self { dirs })
    }
}

impl Dataset for DirectoryDataset {
    fn len(&self) -> usize {
        self.dirs.len()
    }

    fn id(&self, index: usize) -> String {
        self.dirs[index]
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| index.to_string())
    }

    fn load(&self, index: usize) -> Result<MultichannelRecording> {
        read_recording(&self.dirs[index])
    }
}

/// Training material one participant contributes for one seed.
#[derive(Debug, Clone)]
struct Contribution {
    subsample_hash: String,
    baseline: FeatureSet,
    /// Features of the imaginary versions; empty set when N = 1.
    augmented: Option<FeatureSet>,
}

#[derive(Debug, Clone)]
struct Prepared {
    id: String,
    data_hash: String,
    test: FeatureSet,
    per_seed: Vec<Contribution>,
}

fn class_subset(features: &FeatureSet, per_class: usize, seed: u64) -> Result<FeatureSet> {
    let mut r = rng::stream(seed, &[]);
    let mut keep = vec![false; features.n_trials()];
    for class in ClassLabel::ALL {
        let idx: Vec<usize> = (0..features.n_trials()).filter(|&i| features.labels[i] == class).collect();
        if idx.len() < per_class {
            return Err(Error::rejected(format!(
                "{} {} test trials available, {per_class} requested",
                idx.len(),
                class.as_str()
            )));
        }
        for j in index::sample(&mut r, idx.len(), per_class) {
            keep[idx[j]] = true;
        }
    }
    let rows: Vec<usize> = (0..keep.len()).filter(|&i| keep[i]).collect();
    Ok(FeatureSet {
        x: features.x.select_rows(&rows),
        labels: rows.iter().map(|&i| features.labels[i]).collect(),
        channel_labels: features.channel_labels.clone(),
    })
}

fn prepare(dataset: &dyn Dataset, index: usize, scanner: &MusicScanner<'_>, cfg: &EvalConfig) -> Result<Prepared> {
    let rec = dataset.load(index)?;
    let data_hash = recording_hash(&rec);
    let test = extract_features(&rec, &cfg.pipeline)?;
    let p = index as u64;
    let per_seed = cfg
        .seeds
        .iter()
        .map(|&seed| -> Result<Contribution> {
            let sub = subsample_trials(&rec, cfg.k, rng::derive_seed(seed, &[STREAM_SUBSAMPLE, p]), cfg.segment_s)?;
            let baseline = extract_features(&sub, &cfg.pipeline)?;
            let augmented = if cfg.n_variants > 1 {
                let aug_cfg = cfg.augmentation(rng::derive_seed(seed, &[STREAM_AUGMENT, p]));
                let generated = generate_participant(&sub, scanner, &aug_cfg, &cfg.ssd)?;
                let sets = generated
                    .variants
                    .iter()
                    .map(|v| extract_features(v, &cfg.pipeline))
                    .collect::<Result<Vec<_>>>()?;
                Some(FeatureSet::concat(&sets.iter().collect::<Vec<_>>())?)
            } else {
                None
            };
            Ok(Contribution {
                subsample_hash: recording_hash(&sub),
                baseline,
                augmented,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Prepared {
        id: dataset.id(index),
        data_hash,
        test,
        per_seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSource {
    pub participant: String,
    pub subsample_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldAudit {
    pub target_data_hash: String,
    pub test_features_hash: String,
    /// Recomputed after both arms were trained and scored.
    pub test_features_hash_after: String,
    pub augmentation_sources: Vec<AugmentationSource>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub seed: u64,
    pub target: String,
    pub baseline_accuracy: f64,
    pub augmented_accuracy: f64,
    pub n_train_baseline: usize,
    pub n_train_augmented: usize,
    pub n_test: usize,
    pub audit: FoldAudit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub mean: f64,
    pub sem: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignTest {
    pub improved: usize,
    pub worsened: usize,
    pub ties: usize,
    /// One-sided p-value of "no improvement".
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantRow {
    pub participant: String,
    pub baseline: f64,
    pub augmented: f64,
}

/// Mean ± SEM across participants for one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub baseline: ArmSummary,
    pub augmented: ArmSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub config: EvalConfig,
    pub participants: Vec<String>,
    pub excluded: Vec<(String, String)>,
    pub folds: Vec<FoldResult>,
    /// Seed-averaged accuracies, sorted ascending by baseline.
    pub table: Vec<ParticipantRow>,
    pub per_seed: Vec<SeedSummary>,
    /// Across participants, on the seed-averaged accuracies.
    pub baseline: ArmSummary,
    pub augmented: ArmSummary,
    pub sign_test: SignTest,
    pub audit_passed: bool,
}

/// Sample mean and standard error of the mean.
pub fn mean_sem(values: &[f64]) -> ArmSummary {
    let n = values.len() as f64;
    if values.is_empty() {
        return ArmSummary { mean: f64::NAN, sem: f64::NAN };
    }
    let mean = values.iter().sum::<f64>() / n;
    let sem = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() / n.sqrt()
    };
    ArmSummary { mean, sem }
}

/// One-sided sign test of `after > before` over paired values; ties dropped.
pub fn sign_test(pairs: &[(f64, f64)]) -> SignTest {
    let improved = pairs.iter().filter(|(b, a)| a > b).count();
    let worsened = pairs.iter().filter(|(b, a)| a < b).count();
    let ties = pairs.len() - improved - worsened;
    let n = (improved + worsened) as u64;
    let p_value = if improved == 0 {
        1.0
    } else {
        let binom = Binomial::new(0.5, n).expect("valid binomial parameters");
        binom.sf(improved as u64 - 1)
    };
    SignTest {
        improved,
        worsened,
        ties,
        p_value,
    }
}

/// Runs the full comparison over every seed in `cfg`.
pub fn loso_evaluate(dataset: &dyn Dataset, scanner: &MusicScanner<'_>, cfg: &EvalConfig) -> Result<EvalResult> {
    cfg.validate()?;
    if dataset.len() < 2 {
        return Err(Error::rejected("leave-one-out evaluation needs at least 2 participants"));
    }
    let outcomes: Vec<Result<Prepared>> = (0..dataset.len())
        .into_par_iter()
        .map(|i| prepare(dataset, i, scanner, cfg))
        .collect();
    let mut prepared = Vec::new();
    let mut excluded = Vec::new();
    for (i, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(p) => prepared.push(p),
            Err(e) => excluded.push((dataset.id(i), e.to_string())),
        }
    }
    if prepared.len() < 2 {
        return Err(Error::rejected(format!(
            "only {} participants survived preprocessing",
            prepared.len()
        )));
    }

    let jobs: Vec<(usize, usize)> = (0..cfg.seeds.len())
        .flat_map(|s| (0..prepared.len()).map(move |t| (s, t)))
        .collect();
    let folds = jobs
        .par_iter()
        .map(|&(s, t)| fold(&prepared, s, t, cfg))
        .collect::<Result<Vec<_>>>()?;

    let mut per_participant: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for f in &folds {
        let e = per_participant.entry(&f.target).or_default();
        e.0.push(f.baseline_accuracy);
        e.1.push(f.augmented_accuracy);
    }
    let avg = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let mut table: Vec<ParticipantRow> = prepared
        .iter()
        .map(|p| {
            let (b, a) = &per_participant[p.id.as_str()];
            ParticipantRow {
                participant: p.id.clone(),
                baseline: avg(b),
                augmented: avg(a),
            }
        })
        .collect();
    let baseline = mean_sem(&table.iter().map(|r| r.baseline).collect::<Vec<_>>());
    let augmented = mean_sem(&table.iter().map(|r| r.augmented).collect::<Vec<_>>());
    table.sort_by(|x, y| x.baseline.total_cmp(&y.baseline).then_with(|| x.participant.cmp(&y.participant)));
    let per_seed = cfg
        .seeds
        .iter()
        .map(|&seed| {
            let of_seed: Vec<&FoldResult> = folds.iter().filter(|f| f.seed == seed).collect();
            SeedSummary {
                seed,
                baseline: mean_sem(&of_seed.iter().map(|f| f.baseline_accuracy).collect::<Vec<_>>()),
                augmented: mean_sem(&of_seed.iter().map(|f| f.augmented_accuracy).collect::<Vec<_>>()),
            }
        })
        .collect();
    let pairs: Vec<(f64, f64)> = folds.iter().map(|f| (f.baseline_accuracy, f.augmented_accuracy)).collect();
    Ok(EvalResult {
        config: cfg.clone(),
        participants: prepared.iter().map(|p| p.id.clone()).collect(),
        excluded,
        audit_passed: folds.iter().all(|f| f.audit.passed),
        folds,
        table,
        per_seed,
        baseline,
        augmented,
        sign_test: sign_test(&pairs),
    })
}

fn fold(prepared: &[Prepared], s: usize, t: usize, cfg: &EvalConfig) -> Result<FoldResult> {
    let target = &prepared[t];
    let seed = cfg.seeds[s];
    let train: Vec<&Prepared> = prepared.iter().enumerate().filter(|(i, _)| *i != t).map(|(_, p)| p).collect();
    let base_sets: Vec<&FeatureSet> = train.iter().map(|p| &p.per_seed[s].baseline).collect();
    let baseline_train = FeatureSet::concat(&base_sets)?;
    let mut aug_sets = base_sets.clone();
    let mut sources = Vec::new();
    for p in &train {
        let c = &p.per_seed[s];
        if let Some(a) = &c.augmented {
            aug_sets.push(a);
            sources.push(AugmentationSource {
                participant: p.id.clone(),
                subsample_hash: c.subsample_hash.clone(),
            });
        }
    }
    let augmented_train = FeatureSet::concat(&aug_sets)?;
    let test = match cfg.test_trials_per_target {
        Some(n) => class_subset(&target.test, n, rng::derive_seed(seed, &[STREAM_TEST, t as u64]))?,
        None => target.test.clone(),
    };
    let test_hash_before = features_hash(&test);
    let baseline_accuracy = accuracy(&lda_train(&baseline_train)?, &test)?;
    let augmented_accuracy = if cfg.n_variants > 1 {
        accuracy(&lda_train(&augmented_train)?, &test)?
    } else {
        baseline_accuracy
    };
    let target_subsample = &target.per_seed[s].subsample_hash;
    let test_hash_after = features_hash(&test);
    let passed = test_hash_before == test_hash_after
        && sources.iter().all(|src| {
            src.participant != target.id && src.subsample_hash != *target_subsample && src.subsample_hash != target.data_hash
        });
    Ok(FoldResult {
        seed,
        target: target.id.clone(),
        baseline_accuracy,
        augmented_accuracy,
        n_train_baseline: baseline_train.n_trials(),
        n_train_augmented: augmented_train.n_trials(),
        n_test: test.n_trials(),
        audit: FoldAudit {
            target_data_hash: target.data_hash.clone(),
            test_features_hash: test_hash_before,
            test_features_hash_after: test_hash_after,
            augmentation_sources: sources,
            passed,
        },
    })
}

pub const RESULTS_JSON: &str = "results.json";
pub const RESULTS_CSV: &str = "results.csv";

/// Writes `results.json` and `results.csv` and returns the text summary.
pub fn report(result: &EvalResult, out_dir: &Path) -> Result<String> {
    if result.folds.is_empty() {
        return Err(Error::rejected("no results to report"));
    }
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join(RESULTS_JSON), serde_json::to_string_pretty(result)?)?;
    let mut csv = String::from("participant,arm,seed,accuracy\n");
    for f in &result.folds {
        csv.push_str(&format!("{},baseline,{},{}\n", f.target, f.seed, f.baseline_accuracy));
        csv.push_str(&format!("{},augmented,{},{}\n", f.target, f.seed, f.augmented_accuracy));
    }
    fs::write(out_dir.join(RESULTS_CSV), csv)?;
    Ok(summary_text(result))
}

pub fn summary_text(result: &EvalResult) -> String {
    let mut s = String::from("participant  baseline  augmented\n");
    for r in &result.table {
        s.push_str(&format!("{:<11}  {:>8.4}  {:>9.4}\n", r.participant, r.baseline, r.augmented));
    }
    for r in &result.per_seed {
        s.push_str(&format!(
            "seed {:<6}  baseline {:.4} ± {:.4}  augmented {:.4} ± {:.4}\n",
            r.seed, r.baseline.mean, r.baseline.sem, r.augmented.mean, r.augmented.sem
        ));
    }
    s.push_str(&format!(
        "baseline  (N=1): {:.4} ± {:.4}\naugmented (N={}): {:.4} ± {:.4}\n",
        result.baseline.mean, result.baseline.sem, result.config.n_variants, result.augmented.mean, result.augmented.sem
    ));
    s.push_str(&format!(
        "sign test: {} improved, {} worsened, {} ties, p = {:.3e}\nleakage audit: {}\n",
        result.sign_test.improved,
        result.sign_test.worsened,
        result.sign_test.ties,
        result.sign_test.p_value,
        if result.audit_passed { "passed" } else { "FAILED" }
    ));
    s
}
