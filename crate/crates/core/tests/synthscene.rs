use dipoleforge::classify::{extract_features, PipelineConfig};
use dipoleforge::dipolefit::MusicScanner;
use dipoleforge::headmodel::{HeadModel, HeadModelConfig};
use dipoleforge::linmodel::ClassLabel;
use dipoleforge::ssd::{pattern, ssd_decompose, SsdBands};
use dipoleforge::synthscene::{source_fields, Scene, SceneConfig};

fn model() -> HeadModel {
    HeadModel::build(HeadModelConfig::default()).unwrap()
}

/// Mean C3 and C4 Laplacian log-variance difference, Left minus Right.
fn lateral_contrast(model: &HeadModel, cfg: SceneConfig) -> (f64, f64) {
    let scene = Scene::new(model, cfg).unwrap();
    let p = scene.participant(0).unwrap();
    let pipeline = PipelineConfig {
        centers: vec!["C3".into(), "C4".into()],
        ..PipelineConfig::default()
    };
    let f = extract_features(&p.recording, &pipeline).unwrap();
    let mut sums = [[0.0; 2]; 2];
    let mut counts = [0.0; 2];
    for (i, l) in f.labels.iter().enumerate() {
        let k = usize::from(*l == ClassLabel::Right);
        counts[k] += 1.0;
        for ch in 0..2 {
            sums[k][ch] += f.x[(i, ch)];
        }
    }
    let diff = |ch: usize| sums[0][ch] / counts[0] - sums[1][ch] / counts[1];
    (diff(0), diff(1))
}

fn quiet(cfg: SceneConfig) -> SceneConfig {
    SceneConfig {
        trials_per_class: 60,
        trial_amplitude_sigma: 0.0,
        task_background_nam: 0.0,
        n_noise_dipoles: 0,
        snr: f64::INFINITY,
        ..cfg
    }
}

#[test]
fn without_desynchronization_classes_are_indistinguishable() {
    let model = model();
    let (c3, c4) = lateral_contrast(&model, quiet(SceneConfig { erd_depth: 0.0, ..SceneConfig::default() }));
    assert!(c3.abs() < 0.02 && c4.abs() < 0.02, "{c3} {c4}");
}

#[test]
fn desynchronization_is_contralateral() {
    let model = model();
    let (c3, c4) = lateral_contrast(&model, quiet(SceneConfig::default()));
    // Right-hand imagery suppresses the left source under C3, and vice versa.
    assert!(c3 > 0.3, "{c3}");
    assert!(c4 < -0.3, "{c4}");
}

#[test]
fn single_noiseless_source_has_rank_one() {
    let model = model();
    let cfg = quiet(SceneConfig {
        task_lateral_offsets: vec![-0.04],
        trials_per_class: 5,
        ..SceneConfig::default()
    });
    let scene = Scene::new(&model, cfg).unwrap();
    let p = scene.participant(2).unwrap();
    let sv = p.recording.data().clone().singular_values();
    assert!(sv[1] < 1e-10 * sv[0]);
    let field = &source_fields(&model, &p.truth).unwrap()[0];
    let rebuilt = field * p.source_time_courses.row(0);
    assert!((p.recording.data() - rebuilt).amax() < 1e-12 * p.recording.data().amax());
}

#[test]
fn trials_are_balanced_and_cued_on_schedule() {
    let model = model();
    let cfg = SceneConfig {
        trials_per_class: 12,
        ..SceneConfig::default()
    };
    let scene = Scene::new(&model, cfg.clone()).unwrap();
    let p = scene.participant(1).unwrap();
    let rec = &p.recording;
    let trial = ((cfg.fixation_s + cfg.task_s + cfg.blank_s) * cfg.sample_rate) as usize;
    assert_eq!(rec.n_samples(), 24 * trial);
    assert_eq!(rec.markers().len(), 24);
    assert_eq!(rec.markers().iter().filter(|m| m.label == ClassLabel::Left).count(), 12);
    for (t, m) in rec.markers().iter().enumerate() {
        assert_eq!(m.sample, t * trial + (cfg.fixation_s * cfg.sample_rate) as usize);
    }
    assert_eq!(p.truth.trial_amplitudes.len(), 24);
    assert_eq!(rec.channel_labels(), &model.channel_labels()[..]);
    assert_eq!(rec.metadata()["participant"], serde_json::json!(1));
}

#[test]
fn participants_are_reproducible_and_independent() {
    let model = model();
    let small = SceneConfig {
        trials_per_class: 6,
        n_participants: 3,
        ..SceneConfig::default()
    };
    let big = SceneConfig {
        n_participants: 10,
        ..small.clone()
    };
    let a = Scene::new(&model, small.clone()).unwrap().participant(2).unwrap();
    let b = Scene::new(&model, big).unwrap().participant(2).unwrap();
    assert_eq!(a.recording.data(), b.recording.data());
    assert_eq!(a.truth, b.truth);
    let c = Scene::new(&model, small.clone()).unwrap().participant(1).unwrap();
    assert_ne!(a.recording.data(), c.recording.data());
    let d = Scene::new(&model, SceneConfig { seed: 5, ..small }).unwrap().participant(2).unwrap();
    assert_ne!(a.recording.data(), d.recording.data());
}

#[test]
fn jitter_stays_within_bounds() {
    let model = model();
    let cfg = SceneConfig {
        trials_per_class: 2,
        ..SceneConfig::default()
    };
    let scene = Scene::new(&model, cfg.clone()).unwrap();
    let nominal = scene.nominal_task_voxels();
    for i in 0..18 {
        let p = scene.participant(i).unwrap();
        for (td, &v) in p.truth.task_dipoles.iter().zip(&nominal) {
            assert!(model.grid_steps(td.dipole.voxel_index, v) <= cfg.jitter_steps);
            let radial = model.voxels()[v].normalize();
            assert!(td.dipole.moment.dot(&radial) >= cfg.jitter_rotation_deg.to_radians().cos() - 1e-9);
        }
    }
}

#[test]
fn dominant_component_localizes_a_task_source() {
    let model = model();
    let scanner = MusicScanner::new(&model);
    let scene = Scene::new(&model, SceneConfig::default()).unwrap();
    let n = scene.config().n_participants;
    let mut hits = 0;
    for i in 0..n {
        let p = scene.participant(i).unwrap();
        let ssd = ssd_decompose(&p.recording, &SsdBands::default(), None).unwrap();
        let fit = scanner.fit(&pattern(&ssd.decomposition, 0), 0).unwrap();
        if p.truth.task_dipoles.iter().any(|td| model.grid_steps(fit.voxel_index, td.dipole.voxel_index) <= 2) {
            hits += 1;
        }
    }
    assert!(hits as f64 >= 0.8 * n as f64, "{hits}/{n}");
}

#[test]
fn task_sources_off_the_grid_are_rejected() {
    let model = model();
    for cfg in [
        SceneConfig { task_radius: 0.2, ..SceneConfig::default() },
        SceneConfig { task_lateral_offsets: vec![0.09], ..SceneConfig::default() },
        SceneConfig { erd_depth: 1.0, ..SceneConfig::default() },
    ] {
        assert_eq!(Scene::new(&model, cfg).unwrap_err().kind(), "configuration");
    }
}
