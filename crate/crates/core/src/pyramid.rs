//! Gaussian pyramid: repeated 5-tap blur and 2× decimation, plus the exact
//! adjoint of one reduce step.
//!
//! Texture that is finer than a few pixels is attenuated at every level,
//! while large regions and edges survive down to the coarsest level.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Grid, Image};
use crate::sampling::{reflect101, AxisPlan, Separable};

/// Binomial Burt–Adelson kernel.
pub const BINOMIAL5: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

pub const DEFAULT_DEPTH: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PyramidConfig {
    pub depth: usize,
    pub kernel: [f64; 5],
}

impl Default for PyramidConfig {
    fn default() -> Self {
        Self {
            depth: DEFAULT_DEPTH,
            kernel: BINOMIAL5,
        }
    }
}

impl PyramidConfig {
    pub fn with_depth(depth: usize) -> Self {
        Self {
            depth,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::InvalidArgument("pyramid depth must be >= 1".into()));
        }
        let k = &self.kernel;
        let sum: f64 = k.iter().sum();
        if (sum - 1.0).abs() > 1e-12 || k[0] != k[4] || k[1] != k[3] {
            return Err(Error::InvalidArgument(
                "pyramid kernel must be symmetric and sum to 1".into(),
            ));
        }
        Ok(())
    }

    /// Minimum side length that admits `depth` reductions.
    pub fn min_side(&self) -> usize {
        1usize << self.depth
    }

    /// Dimensions of every level, finest first.
    pub fn level_dims(&self, height: usize, width: usize) -> Vec<(usize, usize)> {
        let mut dims = vec![(height, width)];
        for _ in 0..self.depth {
            let (h, w) = *dims.last().unwrap();
            dims.push((h.div_ceil(2), w.div_ceil(2)));
        }
        dims
    }

    pub fn check_fits(&self, height: usize, width: usize) -> Result<()> {
        self.validate()?;
        if height < self.min_side() || width < self.min_side() {
            return Err(Error::TooSmall {
                height,
                width,
                depth: self.depth,
            });
        }
        Ok(())
    }

    pub(crate) fn reduce_operator(&self, height: usize, width: usize) -> Separable {
        Separable {
            vertical: AxisPlan::convolve_decimate(height, &self.kernel, reflect101),
            horizontal: AxisPlan::convolve_decimate(width, &self.kernel, reflect101),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPyramid {
    levels: Vec<Image>,
}

impl GaussianPyramid {
    pub fn levels(&self) -> &[Image] {
        &self.levels
    }

    pub fn source(&self) -> &Image {
        &self.levels[0]
    }

    pub fn coarsest(&self) -> &Image {
        self.levels.last().expect("pyramid has at least one level")
    }

    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn into_levels(self) -> Vec<Image> {
        self.levels
    }
}

/// Linear part of [`reduce`], usable on signed grids.
pub fn reduce_grid(g: &Grid, cfg: &PyramidConfig) -> Result<Grid> {
    if g.height() < 2 || g.width() < 2 {
        return Err(Error::Degenerate(format!(
            "cannot reduce {}x{} (need both sides >= 2)",
            g.height(),
            g.width()
        )));
    }
    Ok(cfg.reduce_operator(g.height(), g.width()).apply(g))
}

/// Blur with reflect-101 borders, then keep even rows and columns.
pub fn reduce(img: &Image, cfg: &PyramidConfig) -> Result<Image> {
    Ok(reduce_grid(img.grid(), cfg)?.into_image_clamped())
}

pub fn build_pyramid(img: &Image, cfg: &PyramidConfig) -> Result<GaussianPyramid> {
    cfg.check_fits(img.height(), img.width())?;
    let mut levels = Vec::with_capacity(cfg.depth + 1);
    levels.push(img.clone());
    for _ in 0..cfg.depth {
        let next = reduce(levels.last().unwrap(), cfg)?;
        levels.push(next);
    }
    Ok(GaussianPyramid { levels })
}

/// Coarsest level only, on a signed grid.
pub fn coarsest_grid(g: &Grid, cfg: &PyramidConfig) -> Result<Grid> {
    cfg.check_fits(g.height(), g.width())?;
    let mut cur = reduce_grid(g, cfg)?;
    for _ in 1..cfg.depth {
        cur = reduce_grid(&cur, cfg)?;
    }
    Ok(cur)
}

/// Transpose of [`reduce`] as a linear map from `fine_dims` to `ceil(fine_dims / 2)`.
pub fn reduce_adjoint(
    grad_coarse: &Grid,
    fine_dims: (usize, usize),
    cfg: &PyramidConfig,
) -> Result<Grid> {
    let (fh, fw) = fine_dims;
    if fh < 2 || fw < 2 {
        return Err(Error::Degenerate(format!("fine dims {fh}x{fw}")));
    }
    if grad_coarse.height() != fh.div_ceil(2) || grad_coarse.width() != fw.div_ceil(2) {
        return Err(Error::DimensionMismatch(format!(
            "coarse {}x{} does not reduce from {fh}x{fw}",
            grad_coarse.height(),
            grad_coarse.width()
        )));
    }
    Ok(cfg.reduce_operator(fh, fw).adjoint().apply(grad_coarse))
}

/// Applies [`reduce_adjoint`] `depth` times, from the coarsest level back to `fine_dims`.
pub fn adjoint_chain(
    grad_coarsest: &Grid,
    fine_dims: (usize, usize),
    cfg: &PyramidConfig,
) -> Result<Grid> {
    let dims = cfg.level_dims(fine_dims.0, fine_dims.1);
    let mut cur = grad_coarsest.clone();
    for level in (0..cfg.depth).rev() {
        cur = reduce_adjoint(&cur, dims[level], cfg)?;
    }
    Ok(cur)
}
