use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use texfilter::optimize::{
    detail_enhance, filter_direct, grad_reward_total, reward_total_frozen, OptimizeConfig, FREE_STEPS,
};
use texfilter::reward::texture_target;
use texfilter::{reward_total, Image, PyramidConfig, RewardWeights, UpsamplerKind};

/// Two flat regions with a fine checker on top.
fn textured(h: usize, w: usize, amp: f64) -> Image {
    Image::from_fn(h, w, 3, |y, x, c| {
        let base = if x < w / 2 { 0.3 } else { 0.65 } + 0.05 * c as f64;
        let sign = if (x / 2 + y / 2) % 2 == 0 { 1.0 } else { -1.0 };
        base + amp * sign
    })
}

#[test]
fn reward_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let pyr = PyramidConfig::with_depth(2);
    let src = textured(16, 16, 0.1);
    let res = Image::from_fn(16, 16, 3, |y, x, c| {
        (src.get(y, x, c) + rng.random_range(-0.05..0.05)).clamp(0.0, 1.0)
    });
    let target = texture_target(&src, &pyr, &UpsamplerKind::Bicubic).unwrap();
    let w = RewardWeights::default();
    let g = grad_reward_total(&src, &res, &target, &w, &pyr).unwrap();
    let scale = g.max_abs();
    let h = 1e-6;
    for i in (0..res.data().len()).step_by(7) {
        let at = |d: f64| {
            let mut grid = res.grid().clone();
            grid.data_mut()[i] += d;
            reward_total_frozen(&src, &grid, &target, &w, &pyr).unwrap().total
        };
        let fd = (at(h) - at(-h)) / (2.0 * h);
        let an = g.data()[i];
        let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-3 * scale);
        assert!(rel < 1e-4, "entry {i}: fd {fd} vs analytic {an}");
    }
}

#[test]
fn trace_is_monotone_inside_refresh_windows() {
    let src = textured(64, 64, 0.12);
    let cfg = OptimizeConfig {
        steps: 80,
        ..OptimizeConfig::default()
    };
    let (_, trace) = filter_direct(&src, &cfg).unwrap();
    assert_eq!(trace.entries.len(), 80);
    for pair in trace.entries.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if b.iteration > FREE_STEPS && !b.target_refreshed {
            assert!(
                b.reward.total >= a.reward.total,
                "iteration {}: {} < {}",
                b.iteration,
                b.reward.total,
                a.reward.total
            );
        }
    }
}

#[test]
fn filtering_raises_reward_and_removes_texture() {
    let src = textured(64, 64, 0.12);
    let cfg = OptimizeConfig {
        steps: 120,
        ..OptimizeConfig::default()
    };
    let (out, trace) = filter_direct(&src, &cfg).unwrap();
    assert!(trace.final_reward.total > trace.initial.total);
    let recomputed = reward_total(&src, &out, &cfg.weights, &cfg.pyramid, &cfg.upsampler).unwrap();
    assert!((recomputed.total - trace.final_reward.total).abs() < 1e-12);
    assert!(trace.final_reward.texture > trace.initial.texture);
    assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn filtering_is_deterministic() {
    let src = textured(32, 32, 0.1);
    let cfg = OptimizeConfig {
        steps: 40,
        ..OptimizeConfig::default()
    };
    let (a, ta) = filter_direct(&src, &cfg).unwrap();
    let (b, tb) = filter_direct(&src, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(ta.totals(), tb.totals());
}

#[test]
fn enhancing_with_unit_strength_returns_the_source() {
    let src = textured(32, 32, 0.1);
    let smooth = Image::filled(32, 32, 3, 0.5);
    let same = detail_enhance(&src, &smooth, 1.0).unwrap();
    assert!(same.data().iter().zip(src.data()).all(|(a, b)| (a - b).abs() < 1e-15));
    assert_eq!(detail_enhance(&src, &smooth, 0.0).unwrap(), smooth);
}

#[test]
fn too_small_input_is_rejected() {
    let src = Image::filled(8, 8, 1, 0.5);
    assert!(filter_direct(&src, &OptimizeConfig::default()).is_err());
}
