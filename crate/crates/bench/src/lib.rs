//! Shared inputs for the benchmarks.

use nkaec::scene::{render_scene, RandomSceneConfig};

/// Far-end and microphone signals of a simulated clipped-echo scene.
pub fn echo_signals(duration_s: f64, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let cfg = RandomSceneConfig {
        duration_s,
        truncate: Some(32),
        distance: [0.1, 0.5],
        clip_range: Some([0.05, 0.2]),
        ..Default::default()
    };
    let scene = cfg
        .sample(seed)
        .and_then(|s| s.build())
        .expect("valid scene config");
    let rendered = render_scene(&scene).expect("scene renders");
    (scene.farend.samples, rendered.mic.samples)
}
