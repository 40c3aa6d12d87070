//! Analytic-gradient validation against the central-difference oracle.

use freqsplat_core::splat::{render_backward, LossConfig, RenderOptions};
use freqsplat_testkit::{finite_diff_gradients, gradcheck_scene, gradient_rel_error};

const BACKGROUND: [f64; 3] = [0.1, 0.1, 0.1];

#[test]
fn analytic_gradients_match_finite_differences() {
    let opts = RenderOptions::exact();
    let cfg = LossConfig::default();
    let mut worst = (0.0f64, 0u64, 0usize, 0usize);
    for seed in 0..5 {
        let (mut set, target) = gradcheck_scene(seed, 8, 16, 16);
        let analytic = render_backward(&mut set, &target, &cfg, BACKGROUND, &opts);
        let numeric = finite_diff_gradients(&set, &target, &cfg, BACKGROUND, &opts, 1e-4);
        for (gi, (a, n)) in analytic.grads.iter().zip(&numeric).enumerate() {
            for p in 0..9 {
                let rel = gradient_rel_error(a.0[p], n.0[p]);
                if rel > worst.0 {
                    worst = (rel, seed, gi, p);
                }
            }
        }
    }
    assert!(
        worst.0 < 1e-4,
        "worst relative error {} at seed {} gaussian {} param {}",
        worst.0,
        worst.1,
        worst.2,
        worst.3
    );
}

#[test]
fn finite_difference_error_shrinks_quadratically() {
    let opts = RenderOptions::exact();
    let cfg = LossConfig::default();
    let (mut set, target) = gradcheck_scene(99, 6, 16, 16);
    let analytic = render_backward(&mut set, &target, &cfg, BACKGROUND, &opts);
    let coarse = finite_diff_gradients(&set, &target, &cfg, BACKGROUND, &opts, 1e-3);
    let fine = finite_diff_gradients(&set, &target, &cfg, BACKGROUND, &opts, 5e-4);

    // Halving h should shrink the truncation error ~4x; use the median ratio
    // over parameters whose fine-h error is safely above the float noise.
    let mut ratios = Vec::new();
    for (gi, a) in analytic.grads.iter().enumerate() {
        for p in 0..9 {
            let e1 = (coarse[gi].0[p] - a.0[p]).abs();
            let e2 = (fine[gi].0[p] - a.0[p]).abs();
            if e2 > 1e-11 {
                ratios.push(e1 / e2);
            }
        }
    }
    assert!(!ratios.is_empty());
    ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = ratios[ratios.len() / 2];
    assert!(
        (2.5..=6.0).contains(&median),
        "median error ratio {median} not consistent with O(h^2)"
    );
}

#[test]
fn zero_loss_scene_has_vanishing_numeric_gradients() {
    let opts = RenderOptions::exact();
    let cfg = LossConfig::default();
    let (set, _) = gradcheck_scene(3, 4, 16, 16);
    let rendered = freqsplat_core::splat::render(&set, 16, 16, BACKGROUND, &opts);
    let target = freqsplat_core::splat::LossTarget::new(rendered.image).unwrap();
    // The L1 kink sits exactly at the evaluation point, so the stencil must be
    // tight enough that the quadratic remainder stays below the bound.
    let numeric = finite_diff_gradients(&set, &target, &cfg, BACKGROUND, &opts, 1e-7);
    for g in &numeric {
        for p in 0..9 {
            assert!(g.0[p].abs() < 1e-6, "numeric gradient {} at zero loss", g.0[p]);
        }
    }
}
