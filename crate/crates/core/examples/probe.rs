//! Scratch probe for training dynamics: runs a scaled-down pair of runs on a
//! suite image and prints metric trajectories. Not part of the test suite.

use freqsplat_core::freq_filter::FilterKind;
use freqsplat_core::schedule::{FrequencySchedule, ScheduleFamily};
use freqsplat_core::trainer::{train, TrainConfig, TrainMode};
use freqsplat_testkit::suite;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let image_name = args.get(1).map(String::as_str).unwrap_or("cartoon");
    let total: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let init: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1000);
    let grad_thresh: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(1e-4);

    let img = suite::acceptance_suite()
        .into_iter()
        .find(|(n, _)| *n == image_name)
        .map(|(_, i)| i)
        .expect("unknown image");

    let cutoff = total * 2 / 5;
    let schedule = FrequencySchedule::with_even_boundaries(
        ScheduleFamily::Step,
        FilterKind::Mean,
        15,
        cutoff,
        total,
        4,
    )
    .unwrap();

    for mode in [TrainMode::Baseline, TrainMode::FreqModulated] {
        let mut cfg = TrainConfig::new(schedule.clone(), mode, 0);
        cfg.init_count = init;
        cfg.adc.densify_until_iteration = total / 2;
        cfg.adc.densify_grad_threshold = grad_thresh;
        let start = std::time::Instant::now();
        let result = train(&img, &cfg).unwrap();
        println!(
            "== {} on {} ({}x{}), {} iters, wall {:.1}s",
            mode.name(),
            image_name,
            img.width(),
            img.height(),
            total,
            start.elapsed().as_secs_f64()
        );
        let mut prev_wall = 0.0;
        for rec in result.metrics.iter().step_by(4) {
            println!("  {rec}  wall+{:.2}s", rec.wall_time - prev_wall);
            prev_wall = rec.wall_time;
        }
        println!("  final: {}", result.final_metrics());
        let events: Vec<String> = result
            .events
            .iter()
            .map(|(it, r)| format!("{}:+{}c/{}s/-{}p={}", it, r.cloned, r.split, r.pruned, r.total_after))
            .collect();
        println!("  adc: {}", events.join(" "));
    }
}
