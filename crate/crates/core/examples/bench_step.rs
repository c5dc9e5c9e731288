use std::time::Instant;
use svc_core::audio::Waveform;
use svc_core::config::RunConfig;
use svc_core::trainer::{single_clip_dataset, TrainState};

fn glide_clip(seconds: f64) -> Waveform {
    let rate = 24000u32;
    let n = (seconds * rate as f64) as usize;
    let mut phase = 0.0f64;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / rate as f64;
            let f0 = 140.0 + 80.0 * t / seconds + 4.0 * (2.0 * std::f64::consts::PI * 5.0 * t).sin();
            phase += 2.0 * std::f64::consts::PI * f0 / rate as f64;
            0.5 * phase.sin() + 0.25 * (2.0 * phase).sin() + 0.12 * (3.0 * phase).sin()
        })
        .collect();
    Waveform::new(samples, rate)
}

fn main() {
    let cfg = RunConfig::tiny();
    let clip = glide_clip(0.5);
    let (_, dataset) = single_clip_dataset(&cfg, &clip).unwrap();
    let mut state = TrainState::new(cfg).unwrap();
    // warmup
    for _ in 0..3 { state.train_step(&dataset).unwrap(); }
    let t0 = Instant::now();
    let n = 30;
    let mut last = None;
    for _ in 0..n {
        last = Some(state.train_step(&dataset).unwrap());
    }
    let dt = t0.elapsed().as_secs_f64();
    println!("{:.1} ms/step -> {:.1} s for 2000 steps", dt / n as f64 * 1000.0, dt / n as f64 * 2000.0);
    println!("losses at step {}: {:?}", state.step, last.unwrap());
}
