//! Scratch probe: distribution of per-Gaussian mean positional-gradient norms
//! during early training, to calibrate the densify threshold for this loss
//! scale. Also times forward/backward/ssim separately.

use freqsplat_core::splat::{render, render_backward, LossConfig, LossTarget, RenderOptions};
use freqsplat_core::trainer::initialize;
use freqsplat_testkit::suite;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let image_name = args.get(1).map(String::as_str).unwrap_or("cartoon");
    let init: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(200);
    let iters: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(150);

    let img = suite::acceptance_suite()
        .into_iter()
        .find(|(n, _)| *n == image_name)
        .map(|(_, i)| i)
        .unwrap();
    let (w, h) = (img.width(), img.height());
    let mut set = initialize(&img, init, 0).unwrap();
    let target = LossTarget::new(img.clone()).unwrap();
    let cfg = LossConfig::default();
    let opts = RenderOptions::default();

    // Rough training loop (SGD-ish) just to move opacity/scale into a
    // realistic regime before sampling gradient norms.
    let mut adam_m = vec![[0.0f64; 9]; set.len()];
    let mut adam_v = vec![[0.0f64; 9]; set.len()];
    let lrs = [0.03, 0.03, 1e-2, 1e-2, 1e-3, 5e-2, 2.5e-3, 2.5e-3, 2.5e-3];
    let mut t_fwd = 0.0;
    let mut t_bwd = 0.0;
    for it in 0..iters {
        let t0 = Instant::now();
        let out = render_backward(&mut set, &target, &cfg, [0.0; 3], &opts);
        t_bwd += t0.elapsed().as_secs_f64();
        for (i, g) in out.grads.iter().enumerate() {
            for p in 0..9 {
                adam_m[i][p] = 0.9 * adam_m[i][p] + 0.1 * g.0[p];
                adam_v[i][p] = 0.999 * adam_v[i][p] + 0.001 * g.0[p] * g.0[p];
                let step = lrs[p] * adam_m[i][p] / (adam_v[i][p].sqrt() + 1e-15);
                *set.gaussians[i].param_mut(p) -= step;
            }
        }
        if it % 50 == 0 {
            let mut norms: Vec<f64> = (0..set.len()).map(|i| set.mean_grad_norm(i)).collect();
            norms.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let pct = |p: f64| norms[(p * (norms.len() - 1) as f64) as usize];
            println!(
                "iter {it}: loss {:.4} grad-norm p10 {:.2e} p50 {:.2e} p90 {:.2e} p99 {:.2e} max {:.2e}",
                out.loss,
                pct(0.1),
                pct(0.5),
                pct(0.9),
                pct(0.99),
                norms[norms.len() - 1]
            );
            set.reset_grad_stats();
        }
    }

    let t0 = Instant::now();
    for _ in 0..20 {
        let _ = render(&set, w, h, [0.0; 3], &opts);
    }
    t_fwd = t0.elapsed().as_secs_f64() / 20.0;

    let t0 = Instant::now();
    let mut acc = 0.0;
    for _ in 0..20 {
        let out = render(&set, w, h, [0.0; 3], &opts);
        let ctx = freqsplat_core::imaging::SsimTargetCtx::new(&img).unwrap();
        let (s, g) = ctx.ssim_with_grad(&out.image).unwrap();
        acc += s + g[0];
    }
    let t_ssim = t0.elapsed().as_secs_f64() / 20.0 - t_fwd;
    println!(
        "timing: render {:.2}ms  ssim-with-grad {:.2}ms  full-backward avg {:.2}ms  ({acc:.3})",
        t_fwd * 1e3,
        t_ssim * 1e3,
        t_bwd / iters as f64 * 1e3
    );
}
