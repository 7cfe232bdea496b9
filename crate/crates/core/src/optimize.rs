//! Texture filtering by direct reward ascent on the output pixels.
//!
//! The result starts at the source image and follows Adam-scaled gradient
//! ascent on the total reward, projected onto `[0, 1]` after every step.
//! The texture term compares against an upsampled coarsest level that is
//! held fixed between refreshes (every `refresh_interval` iterations), so
//! gradients never flow through the upsampler. The structure term is
//! differentiated through the pyramid with [`adjoint_chain`].
//!
//! For strong high-frequency textures the source can be a strict local
//! maximum: the texture term stays flat until the pattern is almost gone
//! while fidelity drops linearly. The ascent therefore starts from the best
//! point of a short line search from the source toward its own texture
//! target, scored with the true reward.
//!
//! The source is a kink of the fidelity term, so the first iterations are
//! taken unconditionally. After that a step is only accepted if it does not
//! lower the current objective; on rejection the step length is halved and
//! retried. Within one refresh window the recorded totals are then
//! non-decreasing.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{ensure_same_dims, Error, Result};
use crate::image::{Grid, Image};
use crate::metrics::{mean_abs_diff_grid, SsimConfig, SsimForward, SsimReference};
use crate::pyramid::{adjoint_chain, coarsest_grid, PyramidConfig};
use crate::reward::{reward_total, texture_target, RewardBreakdown, RewardWeights};
use crate::upsample::UpsamplerKind;

const MAX_BACKTRACKS: usize = 6;
/// Iterations taken unconditionally before step acceptance starts.
pub const FREE_STEPS: usize = 20;
/// Fractions of the way from the source to its texture target tried as starts.
const WARM_START: [f64; 4] = [0.25, 0.5, 0.75, 1.0];
/// A warm start must beat the source by more than rounding noise.
const WARM_START_MARGIN: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizeConfig {
    pub steps: usize,
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub refresh_interval: usize,
    pub weights: RewardWeights,
    pub pyramid: PyramidConfig,
    pub upsampler: UpsamplerKind,
    /// Recorded with results; the ascent itself has no random component.
    pub seed: u64,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        Self {
            steps: 300,
            step_size: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            refresh_interval: 10,
            weights: RewardWeights::default(),
            pyramid: PyramidConfig::default(),
            upsampler: UpsamplerKind::Bicubic,
            seed: 0,
        }
    }
}

impl OptimizeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidArgument("steps must be >= 1".into()));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidArgument("step size must be positive".into()));
        }
        if self.refresh_interval == 0 {
            return Err(Error::InvalidArgument(
                "target refresh interval must be >= 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidArgument("moment decays must lie in [0, 1)".into()));
        }
        self.weights.validate()?;
        self.pyramid.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    /// Reward against the texture target in force during this iteration.
    pub reward: RewardBreakdown,
    pub target_refreshed: bool,
    pub step_accepted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeTrace {
    pub entries: Vec<TraceEntry>,
    pub initial: RewardBreakdown,
    pub final_reward: RewardBreakdown,
    pub wall_time: Duration,
}

impl OptimizeTrace {
    pub fn totals(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.reward.total).collect()
    }

    /// CSV with one line per iteration.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "iteration,r_texture,r_structure,r_fidelity,r_total,target_refreshed,step_accepted\n",
        );
        for e in &self.entries {
            s.push_str(&format!(
                "{},{:.9},{:.9},{:.9},{:.9},{},{}\n",
                e.iteration,
                e.reward.texture,
                e.reward.structure,
                e.reward.fidelity,
                e.reward.total,
                e.target_refreshed as u8,
                e.step_accepted as u8
            ));
        }
        s
    }
}

/// Total reward with a frozen texture target, with its gradient.
struct Objective<'a> {
    src: &'a Grid,
    src_coarse: Grid,
    target: SsimReference,
    weights: RewardWeights,
    pyramid: PyramidConfig,
}

impl<'a> Objective<'a> {
    fn new(src: &'a Grid, target: &Grid, weights: RewardWeights, pyramid: PyramidConfig) -> Result<Self> {
        ensure_same_dims("texture target", src.dims(), target.dims())?;
        Ok(Self {
            src,
            src_coarse: coarsest_grid(src, &pyramid)?,
            target: SsimReference::new(target, &SsimConfig::default())?,
            weights,
            pyramid,
        })
    }

    fn set_target(&mut self, target: &Grid) -> Result<()> {
        self.target = SsimReference::new(target, &SsimConfig::default())?;
        Ok(())
    }

    fn evaluate(&self, res: &Grid) -> Result<Evaluation> {
        ensure_same_dims("objective", self.src.dims(), res.dims())?;
        let ssim = self.target.forward(res)?;
        let res_coarse = coarsest_grid(res, &self.pyramid)?;
        let structure = 1.0 - mean_abs_diff_grid(&self.src_coarse, &res_coarse)?;
        let sq: f64 = res
            .data()
            .iter()
            .zip(self.src.data())
            .map(|(r, s)| (r - s) * (r - s))
            .sum();
        let rms = (sq / res.len() as f64).sqrt();
        Ok(Evaluation {
            reward: RewardBreakdown::new(ssim.value, structure, 1.0 - rms, &self.weights),
            ssim,
            res_coarse,
            rms,
        })
    }

    fn gradient(&self, res: &Grid, e: &Evaluation) -> Result<Grid> {
        let w = &self.weights;
        let n = res.len() as f64;
        let mut grad = if w.texture > 0.0 {
            self.target.backward(res, &e.ssim).map(|x| w.texture * x)
        } else {
            Grid::zeros(res.height(), res.width(), res.channels())
        };
        if w.structure > 0.0 {
            let scale = -w.structure / e.res_coarse.len() as f64;
            let sub = e.res_coarse.zip_map(&self.src_coarse, |r, s| {
                let d = r - s;
                // subgradient of |d| at 0 is taken as 0
                if d > 0.0 {
                    scale
                } else if d < 0.0 {
                    -scale
                } else {
                    0.0
                }
            })?;
            let back = adjoint_chain(&sub, (res.height(), res.width()), &self.pyramid)?;
            for (g, b) in grad.data_mut().iter_mut().zip(back.data()) {
                *g += b;
            }
        }
        if w.fidelity > 0.0 && e.rms > 0.0 {
            let scale = w.fidelity / (n * e.rms);
            for ((g, r), s) in grad.data_mut().iter_mut().zip(res.data()).zip(self.src.data()) {
                *g += scale * (s - r);
            }
        }
        Ok(grad)
    }

    fn value_and_grad(&self, res: &Grid) -> Result<(RewardBreakdown, Grid)> {
        let e = self.evaluate(res)?;
        let g = self.gradient(res, &e)?;
        Ok((e.reward, g))
    }
}

struct Evaluation {
    reward: RewardBreakdown,
    ssim: SsimForward,
    res_coarse: Grid,
    rms: f64,
}

/// Gradient of the total reward with respect to `i_res`, holding the texture target fixed.
pub fn grad_reward_total(
    i_src: &Image,
    i_res: &Image,
    frozen_texture_target: &Image,
    weights: &RewardWeights,
    pyramid: &PyramidConfig,
) -> Result<Grid> {
    weights.validate()?;
    ensure_same_dims("grad_reward_total", i_src.dims(), i_res.dims())?;
    let obj = Objective::new(i_src.grid(), frozen_texture_target.grid(), *weights, *pyramid)?;
    Ok(obj.value_and_grad(i_res.grid())?.1)
}

/// Total reward with a frozen texture target; the value side of [`grad_reward_total`].
pub fn reward_total_frozen(
    i_src: &Image,
    i_res: &Grid,
    frozen_texture_target: &Image,
    weights: &RewardWeights,
    pyramid: &PyramidConfig,
) -> Result<RewardBreakdown> {
    let obj = Objective::new(i_src.grid(), frozen_texture_target.grid(), *weights, *pyramid)?;
    Ok(obj.evaluate(i_res)?.reward)
}

fn check_finite(g: &Grid, iteration: usize) -> Result<()> {
    if !g.is_finite() {
        return Err(Error::NonFinite(format!(
            "reward gradient at iteration {iteration}"
        )));
    }
    Ok(())
}

/// Best of the source and the points `src + a (target - src)`, `a` in [`WARM_START`].
fn warm_start(i_src: &Image, source_reward: RewardBreakdown, cfg: &OptimizeConfig) -> Result<Grid> {
    let src = i_src.grid();
    let target = texture_target(i_src, &cfg.pyramid, &cfg.upsampler)?;
    let mut best = (source_reward.total + WARM_START_MARGIN, src.clone());
    for a in WARM_START {
        let mut x = src.clone();
        for (p, t) in x.data_mut().iter_mut().zip(target.grid().data()) {
            *p = (*p + a * (t - *p)).clamp(0.0, 1.0);
        }
        let img = x.clone().into_image_clamped();
        let r = reward_total(i_src, &img, &cfg.weights, &cfg.pyramid, &cfg.upsampler)?;
        if r.total > best.0 {
            best = (r.total, x);
        }
    }
    Ok(best.1)
}

/// Direct reward maximization starting from `i_src`.
///
/// Returns the best image seen at a target refresh or at the end, so the
/// returned total is never below the source's own total.
pub fn filter_direct(i_src: &Image, cfg: &OptimizeConfig) -> Result<(Image, OptimizeTrace)> {
    cfg.validate()?;
    cfg.pyramid.check_fits(i_src.height(), i_src.width())?;
    let start = Instant::now();
    let src = i_src.grid();

    let initial = reward_total(i_src, i_src, &cfg.weights, &cfg.pyramid, &cfg.upsampler)?;
    let mut x = warm_start(i_src, initial, cfg)?;
    let target = texture_target(&x.clone().into_image_clamped(), &cfg.pyramid, &cfg.upsampler)?;
    let mut obj = Objective::new(src, target.grid(), cfg.weights, cfg.pyramid)?;
    let (mut f, mut g) = obj.value_and_grad(&x)?;
    check_finite(&g, 0)?;
    let mut best = (f.total, x.clone());

    let mut m = vec![0.0; x.len()];
    let mut v = vec![0.0; x.len()];
    let mut lr_scale = 1.0;
    let mut entries = Vec::with_capacity(cfg.steps);

    for it in 0..cfg.steps {
        let refreshed = it > 0 && it % cfg.refresh_interval == 0;
        if refreshed {
            let current = x.clone().into_image_clamped();
            obj.set_target(texture_target(&current, &cfg.pyramid, &cfg.upsampler)?.grid())?;
            (f, g) = obj.value_and_grad(&x)?;
            check_finite(&g, it)?;
            // a fresh target makes the surrogate equal to the true reward
            if f.total > best.0 {
                best = (f.total, x.clone());
            }
            lr_scale = 1.0;
        }

        let t = (it + 1) as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let mut direction = vec![0.0; x.len()];
        for i in 0..x.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g.data()[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g.data()[i] * g.data()[i];
            direction[i] = (m[i] / bc1) / ((v[i] / bc2).sqrt() + cfg.epsilon);
        }

        let mut accepted = false;
        let tries = if it < FREE_STEPS { 1 } else { MAX_BACKTRACKS };
        for _ in 0..tries {
            let lr = cfg.step_size * lr_scale;
            let mut proposal = x.clone();
            for (p, d) in proposal.data_mut().iter_mut().zip(&direction) {
                *p = (*p + lr * d).clamp(0.0, 1.0);
            }
            let e = obj.evaluate(&proposal)?;
            if it < FREE_STEPS || e.reward.total >= f.total {
                g = obj.gradient(&proposal, &e)?;
                check_finite(&g, it)?;
                x = proposal;
                f = e.reward;
                accepted = true;
                lr_scale = (lr_scale * 2.0).min(1.0);
                break;
            }
            lr_scale *= 0.5;
        }

        entries.push(TraceEntry {
            iteration: it,
            reward: f,
            target_refreshed: refreshed,
            step_accepted: accepted,
        });
    }

    let current = x.into_image_clamped();
    let final_reward = reward_total(i_src, &current, &cfg.weights, &cfg.pyramid, &cfg.upsampler)?;
    let (out, final_reward) = if final_reward.total >= best.0 {
        (current, final_reward)
    } else {
        let img = best.1.into_image_clamped();
        let r = reward_total(i_src, &img, &cfg.weights, &cfg.pyramid, &cfg.upsampler)?;
        (img, r)
    };

    Ok((
        out,
        OptimizeTrace {
            entries,
            initial,
            final_reward,
            wall_time: start.elapsed(),
        },
    ))
}

/// `clamp(filtered + strength · (src - filtered))`.
pub fn detail_enhance(i_src: &Image, i_filtered: &Image, strength: f64) -> Result<Image> {
    ensure_same_dims("detail_enhance", i_src.dims(), i_filtered.dims())?;
    if !(strength >= 0.0 && strength.is_finite()) {
        return Err(Error::InvalidArgument(format!("strength {strength} must be >= 0")));
    }
    Ok(i_filtered
        .grid()
        .zip_map(i_src.grid(), |f, s| f + strength * (s - f))?
        .into_image_clamped())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_cfg(weights: RewardWeights) -> OptimizeConfig {
        OptimizeConfig {
            steps: 40,
            weights,
            pyramid: PyramidConfig::with_depth(3),
            ..OptimizeConfig::default()
        }
    }

    #[test]
    fn enhance_endpoints() {
        let src = Image::filled(3, 3, 1, 0.6);
        let filt = Image::filled(3, 3, 1, 0.5);
        assert_eq!(detail_enhance(&src, &filt, 1.0).unwrap(), src);
        assert_eq!(detail_enhance(&src, &filt, 0.0).unwrap(), filt);
        let boosted = detail_enhance(&src, &filt, 2.0).unwrap();
        assert!(boosted.data().iter().all(|v| (v - 0.7).abs() < 1e-12));
        assert!(detail_enhance(&src, &filt, -1.0).is_err());
    }

    #[test]
    fn constant_input_is_a_fixed_point() {
        let src = Image::filled(32, 32, 3, 0.45);
        let (out, trace) = filter_direct(&src, &small_cfg(RewardWeights::default())).unwrap();
        assert_eq!(out, src);
        assert!((trace.final_reward.total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fidelity_only_gradient_by_hand() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let src = Image::from_fn(16, 16, 1, |_, _, _| rng.random_range(0.2..0.8));
        let res = Image::from_fn(16, 16, 1, |y, x, _| src.get(y, x, 0) + rng.random_range(-0.1..0.1));
        let w = RewardWeights::new(0.0, 0.0, 1.0).unwrap();
        let cfg = PyramidConfig::with_depth(2);
        let g = grad_reward_total(&src, &res, &res, &w, &cfg).unwrap();
        let n = 256.0;
        let rms = crate::metrics::rms_diff(&src, &res).unwrap();
        for i in 0..256 {
            let want = (src.data()[i] - res.data()[i]) / (n * rms);
            assert!((g.data()[i] - want).abs() < 1e-14);
        }
    }

    #[test]
    fn only_texture_gradient_at_source() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let src = Image::from_fn(16, 16, 1, |_, _, _| rng.random_range(0.0..1.0));
        let cfg = PyramidConfig::with_depth(2);
        let k = UpsamplerKind::Bicubic;
        let target = texture_target(&src, &cfg, &k).unwrap();
        let only_sf = RewardWeights::new(0.0, 0.6, 0.2).unwrap();
        let g = grad_reward_total(&src, &src, &target, &only_sf, &cfg).unwrap();
        assert_eq!(g.max_abs(), 0.0);
        let full = grad_reward_total(&src, &src, &target, &RewardWeights::default(), &cfg).unwrap();
        let tex = crate::metrics::ssim_grad(&src, &target, &SsimConfig::default())
            .unwrap()
            .map(|v| 0.2 * v);
        assert_eq!(full, tex);
    }

    #[test]
    fn rejects_bad_config() {
        let src = Image::filled(32, 32, 1, 0.5);
        let mut cfg = OptimizeConfig::default();
        cfg.refresh_interval = 0;
        assert!(filter_direct(&src, &cfg).is_err());
        let cfg = OptimizeConfig::default();
        assert!(matches!(
            filter_direct(&Image::filled(8, 8, 1, 0.5), &cfg),
            Err(Error::TooSmall { .. })
        ));
    }
}
