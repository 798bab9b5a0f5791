mod common;

use dipoleforge::augment::{augment_component, generate_participant, regenerate, shifted_pattern, AugmentationConfig, ComponentSelection};
use dipoleforge::dipolefit::MusicScanner;
use dipoleforge::headmodel::{Dipole, HeadModel, HeadModelConfig};
use dipoleforge::linmodel::{average_reference, frobenius_relative_error, ClassLabel, Marker, MultichannelRecording};
use dipoleforge::ssd::{pattern, ssd_decompose, SsdBands};
use dipoleforge::synthscene::pink_noise;
use nalgebra::{DMatrix, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{alpha_like, normal};

fn model() -> HeadModel {
    HeadModel::build(HeadModelConfig {
        grid_spacing: 0.015,
        channels: Some(
            dipoleforge::montage::SENSORIMOTOR_CENTERS
                .iter()
                .chain(["Fz", "Pz", "F3", "F4", "P3", "P4", "T7", "T8", "O1", "O2", "Fp1", "Fp2"].iter())
                .map(|s| s.to_string())
                .collect(),
        ),
        ..HeadModelConfig::default()
    })
    .unwrap()
}

/// One oscillating dipole at `voxel` plus pink background dipoles and white noise.
fn recording(model: &HeadModel, voxel: usize, moment: Vector3<f64>, seed: u64) -> MultichannelRecording {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fs = 100.0;
    let n = 6000;
    let alpha = alpha_like(&mut rng, n, fs, 10.0);
    let field = model.dipole_field(&Dipole { voxel_index: voxel, moment }).unwrap();
    let mut data = &field * DMatrix::from_row_slice(1, n, &alpha) * 3.0;
    for _ in 0..6 {
        let v = rng.random_range(0..model.n_voxels());
        let q = Vector3::new(normal(&mut rng), normal(&mut rng), normal(&mut rng));
        let f = model.dipole_field(&Dipole { voxel_index: v, moment: q }).unwrap();
        data += f * DMatrix::from_row_slice(1, n, &pink_noise(n, &mut rng));
    }
    let scale = data.norm() / ((data.len() as f64).sqrt());
    for x in data.iter_mut() {
        *x += 0.05 * scale * normal(&mut rng);
    }
    let markers = (0..20)
        .map(|i| Marker {
            sample: 200 + 280 * i,
            label: if i % 2 == 0 { ClassLabel::Left } else { ClassLabel::Right },
        })
        .collect();
    MultichannelRecording::new(data, fs, model.channel_labels(), markers).unwrap()
}

fn cfg(n: usize) -> AugmentationConfig {
    AugmentationConfig {
        n_variants: n,
        ..AugmentationConfig::default()
    }
}

#[test]
fn one_variant_means_no_imaginary_participants() {
    let model = model();
    let scanner = MusicScanner::new(&model);
    let rec = recording(&model, 30, Vector3::z(), 1);
    let out = generate_participant(&rec, &scanner, &cfg(1), &SsdBands::default()).unwrap();
    assert!(out.variants.is_empty());
    assert!(out.report.components.iter().all(|c| c.targets.is_empty()));
}

#[test]
fn untouched_components_regenerate_the_recording() {
    let model = model();
    let scanner = MusicScanner::new(&model);
    let rec = recording(&model, 30, Vector3::z(), 2);
    let mut c = cfg(3);
    c.components = ComponentSelection::Strongest { count: 0 };
    let out = generate_participant(&rec, &scanner, &c, &SsdBands::default()).unwrap();
    assert_eq!(out.variants.len(), 2);
    for v in &out.variants {
        assert!(frobenius_relative_error(v.data(), rec.data()) < 1e-9);
    }

    let ssd = ssd_decompose(&rec, &SsdBands::default(), None).unwrap();
    let regen = regenerate(&ssd.decomposition, &ssd.sources, &rec).unwrap();
    assert!(!regen.lossy);
    assert!(frobenius_relative_error(regen.recording.data(), rec.data()) < 1e-9);
}

#[test]
fn the_oscillating_component_refits_at_its_target() {
    let model = model();
    let scanner = MusicScanner::new(&model);
    let voxel = model.nearest_voxel(&Vector3::new(-0.04, 0.0, 0.055));
    let q = Vector3::new(0.3, 0.1, 0.9).normalize();
    let rec = recording(&model, voxel, q, 3);
    let out = generate_participant(&rec, &scanner, &cfg(2), &SsdBands::default()).unwrap();
    let first = &out.report.components[0];
    assert!(model.grid_steps(first.fit.voxel_index, voxel) <= 1);
    let target = first.targets[0];
    assert!(first.shifts_m[0] >= 0.015 - 1e-12);

    let again = ssd_decompose(&out.variants[0], &SsdBands::default(), None).unwrap();
    let refit = scanner.fit(&pattern(&again.decomposition, 0), 0).unwrap();
    assert!(model.grid_steps(refit.voxel_index, target) <= 1, "refit {} target {target}", refit.voxel_index);
}

#[test]
fn variants_keep_time_courses_and_markers() {
    let model = model();
    let scanner = MusicScanner::new(&model);
    let rec = recording(&model, 50, Vector3::x(), 4);
    let out = generate_participant(&rec, &scanner, &cfg(4), &SsdBands::default()).unwrap();
    let ssd = ssd_decompose(&rec, &SsdBands::default(), None).unwrap();
    let dec = &ssd.decomposition;
    let residual = rec.data() - &dec.patterns * &ssd.sources.data;
    for (j, v) in out.variants.iter().enumerate() {
        assert_eq!(v.markers(), rec.markers());
        assert_eq!(v.channel_labels(), rec.channel_labels());
        assert_eq!(v.sample_rate(), rec.sample_rate());
        assert_eq!(v.metadata()["variant"], serde_json::json!(j + 1));

        let mut patterns = dec.patterns.clone();
        for comp in &out.report.components {
            let fit = scanner.fit(&pattern(dec, comp.index), comp.index).unwrap();
            let p = augment_component(dec, comp.index, &fit, comp.targets[j], &model).unwrap();
            let original = dec.patterns.column(comp.index).into_owned();
            assert!((p.pattern.norm() - original.norm()).abs() < 1e-9 * p.pattern.norm());
            assert!((p.pattern.mean() - original.mean()).abs() < 1e-9 * original.norm());
            assert!(average_reference(&p.pattern).dot(&average_reference(&original)) >= 0.0);
            assert!(!p.identity_shift);
            patterns.set_column(comp.index, &p.pattern);
        }
        let recovered = patterns.clone().pseudo_inverse(1e-12).unwrap() * (v.data() - &residual);
        assert!(frobenius_relative_error(&recovered, &ssd.sources.data) < 1e-6);
    }
}

#[test]
fn generation_is_deterministic() {
    let model = model();
    let scanner = MusicScanner::new(&model);
    let rec = recording(&model, 70, Vector3::y(), 5);
    let mut c = cfg(3);
    c.max_rotation_deg = Some(20.0);
    c.seed = 9;
    let a = generate_participant(&rec, &scanner, &c, &SsdBands::default()).unwrap();
    let b = generate_participant(&rec, &scanner, &c, &SsdBands::default()).unwrap();
    assert_eq!(a.report, b.report);
    for (x, y) in a.variants.iter().zip(&b.variants) {
        assert_eq!(x.data(), y.data());
    }
    c.seed = 10;
    let d = generate_participant(&rec, &scanner, &c, &SsdBands::default()).unwrap();
    assert_ne!(a.variants[0].data(), d.variants[0].data());
}

#[test]
fn identity_target_reproduces_the_pattern_direction() {
    let model = model();
    let q = Vector3::new(0.0, 0.6, 0.8);
    let field = model.dipole_field(&Dipole { voxel_index: 12, moment: q }).unwrap();
    let original = (&field * -2.0).add_scalar(0.3 * field.amax());
    let p = shifted_pattern(&model, &original, &q, 12).unwrap();
    assert!((p - &original).amax() < 1e-12 * original.amax());
}

#[test]
fn mirrored_sources_get_mirrored_shift_distances() {
    let model = model();
    let scanner = MusicScanner::new(&model);
    let left = model.nearest_voxel(&Vector3::new(-0.045, 0.0, 0.05));
    let p = model.voxels()[left];
    let right = model.nearest_voxel(&Vector3::new(-p.x, p.y, p.z));
    let mut dists = Vec::new();
    for v in [left, right] {
        let targets = model.nearest_voxels(v, 4, 0.015).unwrap();
        let mut d: Vec<i64> = targets
            .iter()
            .map(|&t| ((model.voxels()[t] - model.voxels()[v]).norm() * 1e9).round() as i64)
            .collect();
        d.sort();
        dists.push(d);
    }
    assert_eq!(dists[0], dists[1]);
    let _ = scanner;
}

#[test]
fn impossible_shifts_name_the_component() {
    let model = model();
    let scanner = MusicScanner::new(&model);
    let rec = recording(&model, 30, Vector3::z(), 6);
    let mut c = cfg(3);
    c.min_shift = 1.0;
    match generate_participant(&rec, &scanner, &c, &SsdBands::default()).unwrap_err() {
        dipoleforge::Error::InsufficientNeighbors { component, requested, .. } => {
            assert_eq!(component, Some(0));
            assert_eq!(requested, 2);
        }
        e => panic!("unexpected {e}"),
    }
}

#[test]
fn mismatched_channels_are_rejected() {
    let model = model();
    let scanner = MusicScanner::new(&model);
    let rec = recording(&model, 30, Vector3::z(), 7);
    let mut labels = rec.channel_labels().to_vec();
    labels.swap(0, 1);
    let swapped = rec.with_channels(rec.data().clone(), labels).unwrap();
    assert_eq!(
        generate_participant(&swapped, &scanner, &cfg(2), &SsdBands::default()).unwrap_err().kind(),
        "rejected_input"
    );
}
