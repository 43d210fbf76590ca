mod common;

use binaural_rtf::covariance::{CovarianceState, CrossSpectrum, Smoothing, VadLabels};
use binaural_rtf::experiment::config::SceneConfig;
use binaural_rtf::linalg::{CMatrix, C64};
use binaural_rtf::rtf::{estimate_sc, true_rtf, Side};
use binaural_rtf::scene::{build_coherence_matrix, diffuse_noise_tensor};
use binaural_rtf::stft::{SpectralFrameTensor, StftConfig};

#[test]
fn long_term_noise_covariance_matches_coherence_model() {
    let cfg = StftConfig::default();
    let geometry = SceneConfig::default().geometry().unwrap();
    let head = geometry.head_positions();
    let c = geometry.speed_of_sound;
    let frames = 1001;
    let noise = diffuse_noise_tensor(head, c, frames, &cfg, 21, 0).unwrap();
    let external = SpectralFrameTensor::zeros(cfg, 1, frames);
    // one speech frame so both label kinds are present; the rest are noise
    let labels = VadLabels::new((0..frames).map(|l| l == 0).collect());
    let state =
        CovarianceState::initialize(&noise, &external, &labels, Smoothing::default()).unwrap();
    let variance = cfg.frame_len as f64 * cfg.overlap_gain().unwrap();
    for k in 1..cfg.num_bins() - 1 {
        let gamma = build_coherence_matrix(head, cfg.bin_frequency(k), c);
        let n = head.len();
        let rows: Vec<Vec<C64>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| C64::new(variance * gamma[(i, j)], 0.0))
                    .collect()
            })
            .collect();
        let expected = CMatrix::from_rows(&rows);
        let mut diff = state.bin(k).r_n.clone();
        diff.add_assign(&expected.scaled(-1.0));
        let rel = diff.frobenius_norm() / expected.frobenius_norm();
        assert!(rel < 0.1, "bin {k}: relative Frobenius error {rel}");
    }
}

fn mean_sc_error(frames: usize, seeds: std::ops::Range<u64>) -> f64 {
    let mut total = 0.0;
    let mut count = 0;
    for seed in seeds {
        let s = common::render(20.0, 0.0, "anechoic", 500 + seed);
        let n = s.num_head_mics();
        let noisy = s.noisy();
        let head = noisy.select_channels(&(0..n).collect::<Vec<_>>());
        let external = noisy.channel(n);
        let truth = true_rtf(&s.truth, Side::Left).unwrap();
        // every frame with speech energy, restricted to the first `frames` frames
        let labels = VadLabels::new(
            (0..head.num_frames())
                .map(|l| {
                    l < frames
                        && (0..head.num_bins()).any(|k| s.source.get(0, k, l).norm_sqr() > 0.0)
                })
                .collect(),
        );
        let cross = CrossSpectrum::long_term(&head, &external, &labels, 0.0).unwrap();
        for (k, t) in truth.iter().enumerate().skip(1) {
            if let Ok(est) = estimate_sc(cross.bin(k), Side::Left) {
                total += est.relative_error(t);
                count += 1;
            }
        }
    }
    total / count as f64
}

#[test]
fn sc_error_shrinks_with_more_frames() {
    let errors: Vec<f64> = [250, 500, 1000, 2000]
        .iter()
        .map(|&f| mean_sc_error(f, 0..10))
        .collect();
    for pair in errors.windows(2) {
        assert!(pair[1] < pair[0], "errors {errors:?}");
    }
}
