//! Pyramid-based texture-filtering reward.
//!
//! * texture: SSIM between a result and its own coarsest pyramid level,
//!   upsampled back to full size. Texture does not survive the pyramid, so a
//!   texture-free result is close to its own reconstruction.
//! * structure: `1 - mean |G_src^N - G_res^N|` on the coarsest levels.
//! * fidelity: `1 - rms(I_src - I_res)`.
//!
//! The total is their weighted sum. [`normalize_group`] maps a group of
//! totals to `[0, 1]` scores for policy optimization.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_same_dims, Error, Result};
use crate::image::Image;
use crate::metrics::{mean_abs_diff, rms_diff, ssim};
use crate::pyramid::{build_pyramid, PyramidConfig};
use crate::upsample::{upsample_to, UpsamplerKind};

/// Weights of texture, structure and fidelity terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardWeights {
    pub texture: f64,
    pub structure: f64,
    pub fidelity: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            texture: 0.2,
            structure: 0.6,
            fidelity: 0.2,
        }
    }
}

impl RewardWeights {
    pub fn new(texture: f64, structure: f64, fidelity: f64) -> Result<Self> {
        let w = Self {
            texture,
            structure,
            fidelity,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.texture, self.structure, self.fidelity];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) || all.iter().all(|&w| w == 0.0) {
            return Err(Error::InvalidArgument(format!(
                "reward weights must be nonnegative with one positive, got {all:?}"
            )));
        }
        Ok(())
    }

    pub fn combine(&self, texture: f64, structure: f64, fidelity: f64) -> f64 {
        self.texture * texture + self.structure * structure + self.fidelity * fidelity
    }
}

impl std::str::FromStr for RewardWeights {
    type Err = Error;

    /// Parses `"0.2,0.6,0.2"`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::InvalidArgument(format!("weights `{s}`: {e}")))?;
        match parts.as_slice() {
            [a, b, c] => Self::new(*a, *b, *c),
            _ => Err(Error::InvalidArgument(format!(
                "weights `{s}` need three comma-separated values"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub texture: f64,
    pub structure: f64,
    pub fidelity: f64,
    pub total: f64,
}

impl RewardBreakdown {
    pub fn new(texture: f64, structure: f64, fidelity: f64, weights: &RewardWeights) -> Self {
        Self {
            texture,
            structure,
            fidelity,
            total: weights.combine(texture, structure, fidelity),
        }
    }
}

/// Raw group totals and their normalized scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyGroup {
    pub raw_totals: Vec<f64>,
    pub mean: f64,
    pub z_c: f64,
    pub normalized: Vec<f64>,
}

/// Degenerate-spread threshold below which every score is 1/2.
pub const MIN_GROUP_STD: f64 = 1e-12;

/// `r_i = 1/2 + 1/2 · clip((R_i - mean) / Z_c, -1, 1)`, with `Z_c` the population standard deviation.
pub fn normalize_group(raw_totals: &[f64]) -> Result<PolicyGroup> {
    if raw_totals.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "group needs at least 2 rewards, got {}",
            raw_totals.len()
        )));
    }
    if let Some(v) = raw_totals.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("group reward {v}")));
    }
    let n = raw_totals.len() as f64;
    let mean = raw_totals.iter().sum::<f64>() / n;
    let z_c = (raw_totals.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
    let normalized = if z_c < MIN_GROUP_STD {
        vec![0.5; raw_totals.len()]
    } else {
        raw_totals
            .iter()
            .map(|r| 0.5 + 0.5 * ((r - mean) / z_c).clamp(-1.0, 1.0))
            .collect()
    };
    Ok(PolicyGroup {
        raw_totals: raw_totals.to_vec(),
        mean,
        z_c,
        normalized,
    })
}

/// Upsampled coarsest level of `img`: the reference the texture term compares against.
pub fn texture_target(img: &Image, pyramid: &PyramidConfig, upsampler: &UpsamplerKind) -> Result<Image> {
    let p = build_pyramid(img, pyramid)?;
    upsample_to(p.coarsest(), (img.height(), img.width()), upsampler)
}

pub fn reward_texture(i_res: &Image, pyramid: &PyramidConfig, upsampler: &UpsamplerKind) -> Result<f64> {
    let target = texture_target(i_res, pyramid, upsampler)?;
    ssim(i_res, &target)
}

pub fn reward_structure(i_src: &Image, i_res: &Image, pyramid: &PyramidConfig) -> Result<f64> {
    ensure_same_dims("reward_structure", i_src.dims(), i_res.dims())?;
    let gs = build_pyramid(i_src, pyramid)?;
    let gr = build_pyramid(i_res, pyramid)?;
    Ok(1.0 - mean_abs_diff(gs.coarsest(), gr.coarsest())?)
}

pub fn reward_fidelity(i_src: &Image, i_res: &Image) -> Result<f64> {
    Ok(1.0 - rms_diff(i_src, i_res)?)
}

pub fn reward_total(
    i_src: &Image,
    i_res: &Image,
    weights: &RewardWeights,
    pyramid: &PyramidConfig,
    upsampler: &UpsamplerKind,
) -> Result<RewardBreakdown> {
    weights.validate()?;
    ensure_same_dims("reward_total", i_src.dims(), i_res.dims())?;
    let texture = reward_texture(i_res, pyramid, upsampler)?;
    let structure = reward_structure(i_src, i_res, pyramid)?;
    let fidelity = reward_fidelity(i_src, i_res)?;
    Ok(RewardBreakdown::new(texture, structure, fidelity, weights))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_regions(h: usize, w: usize) -> Image {
        Image::from_fn(h, w, 1, |_, x, _| if x < w / 2 { 0.2 } else { 0.8 })
    }

    fn with_checker(img: &Image, amp: f64) -> Image {
        Image::from_fn(img.height(), img.width(), img.channels(), |y, x, c| {
            img.get(y, x, c) + if (x + y) % 2 == 0 { amp } else { -amp }
        })
    }

    #[test]
    fn default_weights() {
        let w = RewardWeights::default();
        assert_eq!((w.texture, w.structure, w.fidelity), (0.2, 0.6, 0.2));
        assert!(RewardWeights::new(0.0, 0.0, 0.0).is_err());
        assert!(RewardWeights::new(-0.1, 1.0, 0.0).is_err());
        assert_eq!("1,0,0".parse::<RewardWeights>().unwrap().texture, 1.0);
    }

    #[test]
    fn normalize_hand_example() {
        let g = normalize_group(&[1.0, 2.0, 3.0]).unwrap();
        assert!((g.mean - 2.0).abs() < 1e-15);
        assert!((g.z_c - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(g.normalized, vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn normalize_degenerate_and_short() {
        let g = normalize_group(&[0.4; 5]).unwrap();
        assert!(g.normalized.iter().all(|&r| r == 0.5));
        assert!(normalize_group(&[1.0]).is_err());
        assert!(normalize_group(&[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn constant_image_scores_one() {
        let cfg = PyramidConfig::default();
        let img = Image::filled(32, 32, 3, 0.35);
        let r = reward_total(&img, &img, &RewardWeights::default(), &cfg, &UpsamplerKind::Bicubic)
            .unwrap();
        assert!((r.texture - 1.0).abs() < 1e-12);
        assert_eq!(r.structure, 1.0);
        assert_eq!(r.fidelity, 1.0);
        assert!((r.total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fidelity_values() {
        let z = Image::filled(4, 4, 1, 0.0);
        let o = Image::filled(4, 4, 1, 1.0);
        assert_eq!(reward_fidelity(&z, &o).unwrap(), 0.0);
        let a = Image::filled(4, 4, 1, 0.4);
        let b = Image::filled(4, 4, 1, 0.5);
        assert!((reward_fidelity(&a, &b).unwrap() - 0.9).abs() < 1e-12);
    }

    #[test]
    fn structure_sees_flattening_but_not_fine_texture() {
        let cfg = PyramidConfig::default();
        let src = two_regions(64, 64);
        let flat = Image::filled(64, 64, 1, src.grid().mean());
        let s_flat = reward_structure(&src, &flat, &cfg).unwrap();
        assert!(s_flat < 1.0 - 0.05, "{s_flat}");
        let tex = with_checker(&src, 0.1);
        let s_tex = reward_structure(&src, &tex, &cfg).unwrap();
        assert!((1.0 - s_tex) < 0.02, "{s_tex}");
    }

    #[test]
    fn texture_reward_prefers_smooth_results() {
        let cfg = PyramidConfig::default();
        let k = UpsamplerKind::Bicubic;
        assert!(reward_texture(&two_regions(512, 512), &cfg, &k).unwrap() >= 0.95);
        let src = two_regions(64, 64);
        let checker = with_checker(&Image::filled(64, 64, 1, 0.5), 0.2);
        let blurred = crate::pyramid::reduce(&checker, &PyramidConfig::with_depth(1))
            .and_then(|r| upsample_to(&r, (64, 64), &k))
            .unwrap();
        assert!(
            reward_texture(&checker, &cfg, &k).unwrap() < reward_texture(&blurred, &cfg, &k).unwrap()
        );
        let mut last = f64::INFINITY;
        for amp in [0.0, 0.05, 0.1, 0.2] {
            let r = reward_texture(&with_checker(&src, amp), &cfg, &k).unwrap();
            assert!(r < last, "amp {amp}: {r} !< {last}");
            last = r;
        }
    }

    #[test]
    fn single_weight_projects() {
        let cfg = PyramidConfig::default();
        let k = UpsamplerKind::Bicubic;
        let src = two_regions(32, 32);
        let res = with_checker(&src, 0.1);
        let r = reward_total(&src, &res, &RewardWeights::new(1.0, 0.0, 0.0).unwrap(), &cfg, &k)
            .unwrap();
        assert_eq!(r.total, r.texture);
    }
}
