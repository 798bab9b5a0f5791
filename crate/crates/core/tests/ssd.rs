mod common;

use std::f64::consts::PI;

use common::{correlation, gaussian_matrix, labels, planted_oscillation};
use dipoleforge::augment::regenerate;
use dipoleforge::linmodel::MultichannelRecording;
use dipoleforge::ssd::{band_power_ratio, ssd_decompose, SsdBands, SsdFile};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[test]
fn sinusoid_channel_dominates_first_filter() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let fs = 100.0;
    let n = 3000;
    let sine: Vec<f64> = (0..n).map(|i| (2.0 * PI * 10.0 * i as f64 / fs).sin()).collect();
    let data = DMatrix::from_fn(2, n, |i, j| {
        let e: f64 = StandardNormal.sample(&mut rng);
        if i == 0 {
            sine[j] + 0.1 * e
        } else {
            e
        }
    });
    let rec = MultichannelRecording::new(data, fs, labels(2), vec![]).unwrap();
    let r = ssd_decompose(&rec, &SsdBands::default(), None).unwrap();
    let w = r.decomposition.filters.column(0);
    assert!(w[0].abs() > 5.0 * w[1].abs(), "filter {w:?}");
    let comp: Vec<f64> = r.sources.data.row(0).iter().copied().collect();
    assert!(correlation(&comp, &sine).abs() > 0.95);
}

#[test]
fn flank_band_oscillations_score_below_one_half() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let fs = 100.0;
    let n = 3000;
    let c = 4;
    let data = DMatrix::from_fn(c, n, |i, j| {
        let e: f64 = StandardNormal.sample(&mut rng);
        (2.0 * PI * 6.0 * j as f64 / fs + i as f64).sin() * (1.0 + i as f64) + 0.3 * e
    });
    let rec = MultichannelRecording::new(data, fs, labels(c), vec![]).unwrap();
    let r = ssd_decompose(&rec, &SsdBands::default(), None).unwrap();
    assert!(r.sources.component_scores.iter().all(|&l| l < 0.5), "{:?}", r.sources.component_scores);
}

#[test]
fn white_noise_scores_cluster() {
    let fs = 100.0;
    let n = 6000;
    let c = 4;
    let mut means = Vec::new();
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let rec = MultichannelRecording::new(gaussian_matrix(&mut rng, c, n), fs, labels(c), vec![]).unwrap();
        let s = ssd_decompose(&rec, &SsdBands::default(), None).unwrap().sources.component_scores;
        let spread = s[0] - s[c - 1];
        assert!(spread < 0.15, "seed {seed}: spread {spread}");
        means.push(s.iter().sum::<f64>() / c as f64);
    }
    // Expected share of signal-band power for white noise, from the filters themselves.
    let mut rng = ChaCha8Rng::seed_from_u64(999);
    let long: Vec<f64> = (0..200_000).map(|_| StandardNormal.sample(&mut rng)).collect();
    let ratio = band_power_ratio(&long, fs, &SsdBands::default()).unwrap();
    let expected = ratio / (1.0 + ratio);
    for m in means {
        assert!((m - expected).abs() < 0.05, "mean {m} vs {expected}");
    }
}

#[test]
fn scores_are_sorted_in_unit_interval_and_filters_are_orthogonal() {
    let scene = planted_oscillation(3, 8, 60.0, 100.0);
    let r = ssd_decompose(&scene.recording, &SsdBands::default(), None).unwrap();
    let s = &r.sources.component_scores;
    assert!(s.windows(2).all(|w| w[0] >= w[1]));
    assert!(s.iter().all(|l| (0.0..=1.0).contains(l)));
    // Filters are normalized to unit signal-band power, so wᵢᵀ C_s wⱼ = δᵢⱼ
    // implies (C_s + C_n)-orthogonality as well; check the latter directly.
    let fs = 100.0;
    let total = {
        let bands = SsdBands::default();
        let x = scene.recording.data();
        let f = |lo, hi| dipoleforge::linmodel::band_pass_data(x, fs, lo, hi).unwrap();
        let sig = f(bands.signal.0, bands.signal.1);
        let fl = f(bands.flank_low.0, bands.flank_low.1) + f(bands.flank_high.0, bands.flank_high.1);
        let trim = |m: DMatrix<f64>| dipoleforge::linmodel::trim_edges(&m, 100).unwrap();
        dipoleforge::linmodel::covariance_of(&trim(sig)).unwrap() + dipoleforge::linmodel::covariance_of(&trim(fl)).unwrap()
    };
    let w = &r.decomposition.filters;
    let g = w.transpose() * total * w;
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            if i != j {
                assert!(g[(i, j)].abs() < 1e-6 * (g[(i, i)] * g[(j, j)]).sqrt());
            }
        }
    }
}

#[test]
fn decomposition_is_deterministic_with_pinned_signs() {
    let scene = planted_oscillation(4, 6, 30.0, 100.0);
    let a = ssd_decompose(&scene.recording, &SsdBands::default(), None).unwrap();
    let b = ssd_decompose(&scene.recording, &SsdBands::default(), None).unwrap();
    assert_eq!(a, b);
    for j in 0..a.decomposition.n_components() {
        let col = a.decomposition.patterns.column(j);
        assert!(col[col.iamax()] > 0.0);
    }
}

#[test]
fn rank_deficient_input_is_reduced() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mixing = gaussian_matrix(&mut rng, 6, 4);
    let sources = gaussian_matrix(&mut rng, 4, 2000);
    let rec = MultichannelRecording::new(mixing * sources, 100.0, labels(6), vec![]).unwrap();
    let r = ssd_decompose(&rec, &SsdBands::default(), None).unwrap();
    assert_eq!(r.effective_rank, 4);
    assert_eq!(r.decomposition.n_components(), 4);
    let regen = regenerate(&r.decomposition, &r.sources, &rec).unwrap();
    assert!(regen.lossy);
    // All variance lives in a 4-dimensional subspace, so nothing is lost.
    assert!(regen.residual_norm < 1e-6 * rec.data().norm());
    let two = ssd_decompose(&rec, &SsdBands::default(), Some(2)).unwrap();
    assert_eq!(two.decomposition.n_components(), 2);
    assert!(ssd_decompose(&rec, &SsdBands::default(), Some(5)).is_err());
}

#[test]
fn lossy_residual_matches_projection_oracle() {
    let scene = planted_oscillation(8, 6, 30.0, 100.0);
    let rec = &scene.recording;
    let r = ssd_decompose(rec, &SsdBands::default(), Some(4)).unwrap();
    let regen = regenerate(&r.decomposition, &r.sources, rec).unwrap();
    assert!(regen.lossy);
    // A Wᵀ is the oblique projector onto span(A); the residual is (I − A Wᵀ) X.
    let a = &r.decomposition.patterns;
    let w = &r.decomposition.filters;
    let projector = DMatrix::identity(6, 6) - a * w.transpose();
    let expected = (projector * rec.data()).norm();
    assert!((regen.residual_norm - expected).abs() < 1e-8 * expected);
}

#[test]
fn short_or_invalid_input_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let rec = MultichannelRecording::new(gaussian_matrix(&mut rng, 3, 1100), 100.0, labels(3), vec![]).unwrap();
    assert!(ssd_decompose(&rec, &SsdBands::default(), None).is_err());
    let long = MultichannelRecording::new(gaussian_matrix(&mut rng, 3, 1300), 100.0, labels(3), vec![]).unwrap();
    let bad = SsdBands {
        signal: (8.0, 13.0),
        flank_low: (5.0, 9.0),
        flank_high: (13.0, 16.0),
    };
    assert!(ssd_decompose(&long, &bad, None).is_err());
    let one = MultichannelRecording::new(DMatrix::from_fn(3, 1300, |_, j| (j as f64).sin()), 100.0, labels(3), vec![]).unwrap();
    assert_eq!(ssd_decompose(&one, &SsdBands::default(), None).unwrap_err().kind(), "degenerate_decomposition");
}

#[test]
fn ssd_file_round_trip() {
    let scene = planted_oscillation(9, 4, 20.0, 100.0);
    let r = ssd_decompose(&scene.recording, &SsdBands::default(), None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ssd.json");
    let file = SsdFile::from_result(&r, scene.recording.channel_labels());
    file.save(&path).unwrap();
    let back = SsdFile::load(&path).unwrap();
    assert_eq!(back, file);
    assert_eq!(back.decomposition().unwrap(), r.decomposition);
}
