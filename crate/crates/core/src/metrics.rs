//! Image distances and SSIM with its analytic gradient.
//!
//! SSIM uses Gaussian-weighted local moments (11×11, σ = 1.5) with reflect-101
//! borders, evaluated per channel and averaged over every pixel and channel.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_same_dims, Error, Result};
use crate::image::{Grid, Image};
use crate::sampling::{reflect101, AxisPlan, Separable};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimConfig {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

impl SsimConfig {
    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    /// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
    pub fn taps(&self) -> Vec<f64> {
        let r = (self.window / 2) as f64;
        let raw: Vec<f64> = (0..self.window)
            .map(|i| {
                let d = i as f64 - r;
                (-d * d / (2.0 * self.sigma * self.sigma)).exp()
            })
            .collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / s).collect()
    }

    fn window_operator(&self, h: usize, w: usize) -> Separable {
        let taps = self.taps();
        Separable {
            vertical: AxisPlan::convolve(h, &taps, reflect101),
            horizontal: AxisPlan::convolve(w, &taps, reflect101),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.window % 2 == 0 || self.sigma <= 0.0 || self.k1 <= 0.0 || self.k2 <= 0.0 {
            return Err(Error::InvalidArgument(format!("bad SSIM config {self:?}")));
        }
        Ok(())
    }
}

/// Precomputed local statistics of a fixed reference image `b`, so that
/// `ssim(a, b)` and its gradient in `a` can be evaluated repeatedly.
#[derive(Debug, Clone)]
pub struct SsimReference {
    cfg: SsimConfig,
    window: Separable,
    window_t: Separable,
    b: Grid,
    mu_b: Grid,
    e_bb: Grid,
}

impl SsimReference {
    pub fn new(reference: &Grid, cfg: &SsimConfig) -> Result<Self> {
        cfg.validate()?;
        let window = cfg.window_operator(reference.height(), reference.width());
        let window_t = window.adjoint();
        let mu_b = window.apply(reference);
        let e_bb = window.apply(&reference.map(|v| v * v));
        Ok(Self {
            cfg: *cfg,
            window,
            window_t,
            b: reference.clone(),
            mu_b,
            e_bb,
        })
    }

    pub fn reference(&self) -> &Grid {
        &self.b
    }

    /// Forward pass: mean SSIM plus the local statistics the gradient needs.
    pub(crate) fn forward(&self, a: &Grid) -> Result<SsimForward> {
        ensure_same_dims("ssim", a.dims(), self.b.dims())?;
        let mu_a = self.window.apply(a);
        let e_aa = self.window.apply(&a.map(|v| v * v));
        let e_ab = self.window.apply(&a.zip_map(&self.b, |x, y| x * y)?);
        let (c1, c2) = (self.cfg.c1(), self.cfg.c2());
        let mut sum = 0.0;
        for i in 0..a.len() {
            let (ma, mb) = (mu_a.data()[i], self.mu_b.data()[i]);
            let va = e_aa.data()[i] - ma * ma;
            let vb = self.e_bb.data()[i] - mb * mb;
            let cov = e_ab.data()[i] - ma * mb;
            sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
        Ok(SsimForward {
            value: sum / a.len() as f64,
            mu_a,
            e_aa,
            e_ab,
        })
    }

    pub fn value(&self, a: &Grid) -> Result<f64> {
        Ok(self.forward(a)?.value)
    }

    /// Gradient with respect to `a`, reusing a forward pass at `a`.
    pub(crate) fn backward(&self, a: &Grid, fwd: &SsimForward) -> Grid {
        let (c1, c2) = (self.cfg.c1(), self.cfg.c2());
        let n = a.len();
        let inv_n = 1.0 / n as f64;
        let (mu_a, e_aa, e_ab) = (&fwd.mu_a, &fwd.e_aa, &fwd.e_ab);
        let mut d_mu = Grid::zeros(a.height(), a.width(), a.channels());
        let mut d_aa = d_mu.clone();
        let mut d_ab = d_mu.clone();
        {
            let (gm, ga, gb) = (d_mu.data_mut(), d_aa.data_mut(), d_ab.data_mut());
            for i in 0..n {
                let (ma, mb) = (mu_a.data()[i], self.mu_b.data()[i]);
                let va = e_aa.data()[i] - ma * ma;
                let vb = self.e_bb.data()[i] - mb * mb;
                let cov = e_ab.data()[i] - ma * mb;
                let a1 = 2.0 * ma * mb + c1;
                let a2 = 2.0 * cov + c2;
                let b1 = ma * ma + mb * mb + c1;
                let b2 = va + vb + c2;
                let num = a1 * a2;
                let den = b1 * b2;
                // partials of num/den w.r.t. (mu_a, E[a²], E[ab]); va and cov depend on mu_a
                let dnum_dmu = 2.0 * mb * (a2 - a1);
                let dden_dmu = 2.0 * ma * (b2 - b1);
                gm[i] = (dnum_dmu * den - num * dden_dmu) / (den * den) * inv_n;
                ga[i] = -num * b1 / (den * den) * inv_n;
                gb[i] = 2.0 * a1 / den * inv_n;
            }
        }
        let mut grad = self.window_t.apply(&d_mu);
        let back_aa = self.window_t.apply(&d_aa);
        let back_ab = self.window_t.apply(&d_ab);
        {
            let g = grad.data_mut();
            let (xa, xb) = (a.data(), self.b.data());
            for i in 0..n {
                g[i] += 2.0 * xa[i] * back_aa.data()[i] + xb[i] * back_ab.data()[i];
            }
        }
        grad
    }

    /// Mean SSIM and its gradient with respect to `a`.
    pub fn value_and_grad(&self, a: &Grid) -> Result<(f64, Grid)> {
        let fwd = self.forward(a)?;
        let grad = self.backward(a, &fwd);
        Ok((fwd.value, grad))
    }
}

/// Local statistics of one SSIM evaluation.
#[derive(Debug, Clone)]
pub(crate) struct SsimForward {
    pub value: f64,
    mu_a: Grid,
    e_aa: Grid,
    e_ab: Grid,
}

pub fn ssim_with(a: &Image, b: &Image, cfg: &SsimConfig) -> Result<f64> {
    ensure_same_dims("ssim", a.dims(), b.dims())?;
    SsimReference::new(b.grid(), cfg)?.value(a.grid())
}

/// Mean structural similarity with the standard constants.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    ssim_with(a, b, &SsimConfig::default())
}

/// Gradient of `ssim(a, b)` with respect to `a`.
pub fn ssim_grad(a: &Image, b: &Image, cfg: &SsimConfig) -> Result<Grid> {
    ensure_same_dims("ssim_grad", a.dims(), b.dims())?;
    Ok(SsimReference::new(b.grid(), cfg)?.value_and_grad(a.grid())?.1)
}

pub fn mean_abs_diff(a: &Image, b: &Image) -> Result<f64> {
    mean_abs_diff_grid(a.grid(), b.grid())
}

pub fn mean_abs_diff_grid(a: &Grid, b: &Grid) -> Result<f64> {
    ensure_same_dims("mean_abs_diff", a.dims(), b.dims())?;
    let s: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum();
    Ok(s / a.len() as f64)
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    ensure_same_dims("mse", a.dims(), b.dims())?;
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(s / a.data().len() as f64)
}

pub fn rms_diff(a: &Image, b: &Image) -> Result<f64> {
    Ok(mse(a, b)?.sqrt())
}

/// Peak signal-to-noise ratio in dB for unit peak; identical images give `f64::INFINITY`.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / m).log10())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Ssim,
    Psnr,
    Mae,
    Rmse,
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ssim" => Ok(Metric::Ssim),
            "psnr" => Ok(Metric::Psnr),
            "mae" | "l1" | "mean_abs_diff" => Ok(Metric::Mae),
            "rmse" | "rms" | "l2" | "rms_diff" => Ok(Metric::Rmse),
            other => Err(Error::InvalidArgument(format!("unknown metric `{other}`"))),
        }
    }
}

impl Metric {
    pub fn evaluate(self, a: &Image, b: &Image) -> Result<f64> {
        match self {
            Metric::Ssim => ssim(a, b),
            Metric::Psnr => psnr(a, b),
            Metric::Mae => mean_abs_diff(a, b),
            Metric::Rmse => rms_diff(a, b),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> Image {
        Image::from_fn(h, w, c, |_, _, _| rng.random_range(0.0..1.0))
    }

    #[test]
    fn window_is_normalized() {
        let t = SsimConfig::default().taps();
        assert_eq!(t.len(), 11);
        assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(t.iter().all(|&v| v > 0.0));
        assert_eq!(t[0], t[10]);
    }

    #[test]
    fn identical_images_score_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_image(&mut rng, 13, 17, 3);
        assert!((ssim(&x, &x).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn two_constants_closed_form() {
        let cfg = SsimConfig::default();
        let a = Image::filled(12, 12, 1, 0.3);
        let b = Image::filled(12, 12, 1, 0.8);
        let want = (2.0 * 0.3 * 0.8 + cfg.c1()) / (0.09 + 0.64 + cfg.c1());
        assert!((ssim(&a, &b).unwrap() - want).abs() < 1e-9);
    }

    #[test]
    fn constant_gradient_matches_luminance_derivative() {
        // zero variances leave only the luminance term (2xy + C1)/(x² + y² + C1)
        let cfg = SsimConfig::default();
        let (x, y) = (0.3, 0.8);
        let c1 = cfg.c1();
        let num = 2.0 * x * y + c1;
        let den = x * x + y * y + c1;
        let dl = (2.0 * y * den - num * 2.0 * x) / (den * den);
        let (h, w) = (40, 40);
        let a = Image::filled(h, w, 1, x);
        let b = Image::filled(h, w, 1, y);
        let g = ssim_grad(&a, &b, &cfg).unwrap();
        // a uniform shift moves every local mean equally
        let total: f64 = g.data().iter().sum();
        assert!((total - dl).abs() < 1e-10, "{total} vs {dl}");
        // away from the borders each pixel feeds windows of total weight 1
        let n = (h * w) as f64;
        for yy in 6..h - 6 {
            for xx in 6..w - 6 {
                assert!((g.get(yy, xx, 0) - dl / n).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradient_vanishes_at_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_image(&mut rng, 12, 12, 1);
        let g = ssim_grad(&x, &x, &SsimConfig::default()).unwrap();
        assert!(g.max_abs() < 1e-12);
    }

    #[test]
    fn distances_on_simple_inputs() {
        let z = Image::filled(4, 4, 1, 0.0);
        let o = Image::filled(4, 4, 1, 1.0);
        assert_eq!(mean_abs_diff(&z, &o).unwrap(), 1.0);
        assert_eq!(rms_diff(&z, &o).unwrap(), 1.0);
        assert_eq!(psnr(&z, &o).unwrap(), 0.0);
        assert_eq!(psnr(&z, &z).unwrap(), f64::INFINITY);
        let a = Image::filled(3, 3, 3, 0.2);
        let b = Image::filled(3, 3, 3, 0.5);
        assert!((mean_abs_diff(&a, &b).unwrap() - 0.3).abs() < 1e-15);
        let half = Image::from_fn(4, 4, 1, |y, _, _| if y < 2 { 1.0 } else { 0.0 });
        assert!((rms_diff(&half, &z).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
        let tenth = Image::filled(4, 4, 1, 0.1);
        assert!((psnr(&tenth, &z).unwrap() - 20.0).abs() < 1e-12);
    }

    #[test]
    fn mismatched_dims_error() {
        let a = Image::filled(4, 4, 1, 0.0);
        let b = Image::filled(4, 5, 1, 0.0);
        assert!(matches!(ssim(&a, &b), Err(Error::DimensionMismatch(_))));
        assert!(mean_abs_diff(&a, &b).is_err());
        assert!(rms_diff(&a, &b).is_err());
        assert!(psnr(&a, &b).is_err());
        assert!(ssim_grad(&a, &b, &SsimConfig::default()).is_err());
    }

    #[test]
    fn metric_names_parse() {
        assert_eq!("SSIM".parse::<Metric>().unwrap(), Metric::Ssim);
        assert_eq!("l1".parse::<Metric>().unwrap(), Metric::Mae);
        assert!("lpips".parse::<Metric>().is_err());
    }
}
