#![allow(dead_code)]

use binaural_rtf::experiment::build_scene;
use binaural_rtf::experiment::config::SceneConfig;
use binaural_rtf::experiment::Condition;
use binaural_rtf::scene::RenderedScene;
use binaural_rtf::stft::StftConfig;

pub fn scene_config(duration_s: f64) -> SceneConfig {
    SceneConfig {
        duration_s,
        ..SceneConfig::default()
    }
}

pub fn render(duration_s: f64, snr_db: f64, reverb: &str, seed: u64) -> RenderedScene {
    let cond = Condition {
        snr_db,
        reverb_label: reverb.into(),
        seed,
    };
    build_scene(&scene_config(duration_s), &StftConfig::default(), &cond).unwrap()
}

pub fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

pub fn db(x: f64) -> f64 {
    10.0 * x.log10()
}
