//! Synthetic paired data: flat structure images as ground truth, and the
//! same images with an additive zero-mean texture as input.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{load_image, save_image, Grid, Image};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const DEFAULT_SUITE_COUNT: usize = 50;
pub const DEFAULT_SUITE_DIMS: (usize, usize) = (256, 256);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TextureKind {
    Checker,
    Stripes,
    ValueNoise,
    Brick,
    Dots,
}

impl TextureKind {
    pub const ALL: [TextureKind; 5] = [
        TextureKind::Checker,
        TextureKind::Stripes,
        TextureKind::ValueNoise,
        TextureKind::Brick,
        TextureKind::Dots,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextureSpec {
    pub kind: TextureKind,
    /// Repeat length in pixels.
    pub period: usize,
    pub amplitude: f64,
    /// Rotation of the pattern in degrees.
    pub orientation: f64,
    pub seed: u64,
}

impl TextureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.period < 2 {
            return Err(Error::InvalidArgument(format!(
                "texture period {} must be >= 2",
                self.period
            )));
        }
        if !(self.amplitude > 0.0 && self.amplitude <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "texture amplitude {} must lie in (0, 1]",
                self.amplitude
            )));
        }
        if !self.orientation.is_finite() {
            return Err(Error::InvalidArgument("texture orientation must be finite".into()));
        }
        Ok(())
    }
}

fn parity_sign(k: f64) -> f64 {
    if (k as i64).rem_euclid(2) == 0 {
        1.0
    } else {
        -1.0
    }
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Zero-mean single-channel field with values in `[-amplitude, amplitude]`.
pub fn gen_texture(spec: &TextureSpec, dims: (usize, usize)) -> Result<Grid> {
    spec.validate()?;
    let (h, w) = dims;
    if h < spec.period || w < spec.period {
        return Err(Error::InvalidArgument(format!(
            "texture period {} exceeds image size {h}x{w}",
            spec.period
        )));
    }
    let p = spec.period as f64;
    let (sin, cos) = spec.orientation.to_radians().sin_cos();
    let rotate = |y: usize, x: usize| {
        let (x, y) = (x as f64, y as f64);
        (x * cos + y * sin, -x * sin + y * cos)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let raw = match spec.kind {
        TextureKind::Checker => {
            let cell = p / 2.0;
            Grid::from_fn(h, w, 1, |y, x, _| {
                let (u, v) = rotate(y, x);
                parity_sign((u / cell).floor() + (v / cell).floor())
            })
        }
        TextureKind::Stripes => Grid::from_fn(h, w, 1, |y, x, _| {
            let (u, _) = rotate(y, x);
            parity_sign((2.0 * u / p).floor())
        }),
        TextureKind::ValueNoise => {
            // lattice values on a grid covering the rotated image
            let diag = ((h * h + w * w) as f64).sqrt();
            let n = (2.0 * diag / p).ceil() as usize + 3;
            let lattice: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let half = (n / 2) as f64;
            Grid::from_fn(h, w, 1, |y, x, _| {
                let (u, v) = rotate(y, x);
                let (gu, gv) = (u / p + half, v / p + half);
                let (iu, iv) = (gu.floor(), gv.floor());
                let (fu, fv) = (smoothstep(gu - iu), smoothstep(gv - iv));
                let (iu, iv) = (iu as usize, iv as usize);
                let at = |a: usize, b: usize| lattice[b * n + a];
                let top = at(iu, iv) * (1.0 - fu) + at(iu + 1, iv) * fu;
                let bottom = at(iu, iv + 1) * (1.0 - fu) + at(iu + 1, iv + 1) * fu;
                top * (1.0 - fv) + bottom * fv
            })
        }
        TextureKind::Brick => {
            let bh = (p / 2.0).max(2.0);
            let shade: Vec<f64> = (0..4096).map(|_| rng.random_range(-0.3..0.3)).collect();
            Grid::from_fn(h, w, 1, |y, x, _| {
                let (u, v) = rotate(y, x);
                let row = (v / bh).floor();
                let shifted = u + if parity_sign(row) < 0.0 { p / 2.0 } else { 0.0 };
                let col = (shifted / p).floor();
                let (fu, fv) = (shifted - col * p, v - row * bh);
                if fu < 1.0 || fv < 1.0 {
                    -1.0
                } else {
                    let k = ((row as i64).rem_euclid(64) * 64 + (col as i64).rem_euclid(64)) as usize;
                    0.7 + shade[k]
                }
            })
        }
        TextureKind::Dots => {
            let radius = (p / 4.0).max(0.5);
            let jitter: Vec<(f64, f64)> = (0..4096)
                .map(|_| {
                    let j = p / 4.0 - radius / 2.0;
                    (rng.random_range(-j.max(0.0)..=j.max(0.0)), rng.random_range(-j.max(0.0)..=j.max(0.0)))
                })
                .collect();
            Grid::from_fn(h, w, 1, |y, x, _| {
                let (u, v) = rotate(y, x);
                let (cu, cv) = ((u / p).floor(), (v / p).floor());
                let k = ((cv as i64).rem_euclid(64) * 64 + (cu as i64).rem_euclid(64)) as usize;
                let (ju, jv) = jitter[k];
                let du = u - (cu + 0.5) * p - ju;
                let dv = v - (cv + 0.5) * p - jv;
                if du * du + dv * dv <= radius * radius {
                    1.0
                } else {
                    -1.0
                }
            })
        }
    };

    let mean = raw.mean();
    let centered = raw.map(|v| v - mean);
    let peak = centered.max_abs();
    if peak == 0.0 {
        return Err(Error::Degenerate(format!(
            "{:?} texture with period {} is constant at {h}x{w}",
            spec.kind, spec.period
        )));
    }
    Ok(centered.map(|v| v * spec.amplitude / peak))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StructureKind {
    VoronoiFlat,
    PolygonFlat,
    RadialGradient,
    /// Equal-width vertical bands, left to right in palette order.
    Bands,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureSpec {
    pub kind: StructureKind,
    pub regions: usize,
    pub palette_seed: u64,
    /// Explicit colors, one per region; generated from `palette_seed` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub palette: Option<Vec<Vec<f64>>>,
    pub channels: usize,
}

impl StructureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.regions < 2 {
            return Err(Error::InvalidArgument(format!(
                "structure needs at least 2 regions, got {}",
                self.regions
            )));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::InvalidArgument(format!(
                "structure channels must be 1 or 3, got {}",
                self.channels
            )));
        }
        if let Some(p) = &self.palette {
            if p.len() != self.regions
                || p.iter()
                    .any(|c| c.len() != self.channels || c.iter().any(|v| !(0.0..=1.0).contains(v)))
            {
                return Err(Error::InvalidArgument(format!(
                    "palette needs {} colors of {} channels in [0, 1]",
                    self.regions, self.channels
                )));
            }
        }
        Ok(())
    }

    /// Region colors; generated palettes have pairwise distinct first channels.
    pub fn palette(&self) -> Vec<Vec<f64>> {
        if let Some(p) = &self.palette {
            return p.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.palette_seed);
        let k = self.regions;
        let mut levels: Vec<f64> = (0..k)
            .map(|i| 0.1 + 0.8 * (i as f64 + rng.random_range(0.1..0.9)) / k as f64)
            .collect();
        levels.shuffle(&mut rng);
        levels
            .into_iter()
            .map(|l| {
                let mut c = vec![l];
                c.extend((1..self.channels).map(|_| rng.random_range(0.1..0.9)));
                c
            })
            .collect()
    }
}

/// A structure image with the region index of every pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct Structure {
    pub image: Image,
    pub labels: Vec<usize>,
}

fn inside_convex(poly: &[(f64, f64)], x: f64, y: f64) -> bool {
    // vertices are in counter-clockwise angular order
    (0..poly.len()).all(|i| {
        let (ax, ay) = poly[i];
        let (bx, by) = poly[(i + 1) % poly.len()];
        (bx - ax) * (y - ay) - (by - ay) * (x - ax) >= 0.0
    })
}

pub fn gen_structure(spec: &StructureSpec, dims: (usize, usize)) -> Result<Structure> {
    spec.validate()?;
    let (h, w) = dims;
    if h == 0 || w == 0 {
        return Err(Error::InvalidArgument("structure image must be non-empty".into()));
    }
    let k = spec.regions;
    let palette = spec.palette();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.palette_seed ^ 0x5eed_5eed);
    let c = spec.channels;

    let from_labels = |labels: Vec<usize>| -> Result<Structure> {
        let image = Image::from_fn(h, w, c, |y, x, ch| palette[labels[y * w + x]][ch]);
        Ok(Structure { image, labels })
    };

    match spec.kind {
        StructureKind::Bands => {
            if k > w {
                return Err(Error::InvalidArgument(format!("{k} bands do not fit in width {w}")));
            }
            let labels = (0..h * w).map(|i| (i % w) * k / w).collect();
            from_labels(labels)
        }
        StructureKind::VoronoiFlat => {
            if k > h * w {
                return Err(Error::InvalidArgument(format!("{k} regions exceed {h}x{w} pixels")));
            }
            // distinct pixel sites: each site owns at least its own pixel
            let mut all: Vec<usize> = (0..h * w).collect();
            let (sites, _) = all.partial_shuffle(&mut rng, k);
            let sites: Vec<(f64, f64)> = sites.iter().map(|&i| ((i / w) as f64, (i % w) as f64)).collect();
            let labels = (0..h * w)
                .map(|i| {
                    let (y, x) = ((i / w) as f64, (i % w) as f64);
                    let mut best = (f64::INFINITY, 0);
                    for (j, &(sy, sx)) in sites.iter().enumerate() {
                        let d = (y - sy).powi(2) + (x - sx).powi(2);
                        if d < best.0 {
                            best = (d, j);
                        }
                    }
                    best.1
                })
                .collect();
            from_labels(labels)
        }
        StructureKind::PolygonFlat => {
            let scale = h.min(w) as f64;
            let polys: Vec<Vec<(f64, f64)>> = (1..k)
                .map(|_| {
                    let cx = rng.random_range(0.0..w as f64);
                    let cy = rng.random_range(0.0..h as f64);
                    let r = rng.random_range(0.15..0.4) * scale;
                    let n = rng.random_range(3..=7);
                    let mut angles: Vec<f64> =
                        (0..n).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
                    angles.sort_by(f64::total_cmp);
                    angles
                        .into_iter()
                        .map(|a| (cx + r * a.cos(), cy + r * a.sin()))
                        .collect()
                })
                .collect();
            let labels = (0..h * w)
                .map(|i| {
                    let (y, x) = ((i / w) as f64 + 0.5, (i % w) as f64 + 0.5);
                    polys
                        .iter()
                        .enumerate()
                        .rev()
                        .find(|(_, p)| inside_convex(p, x, y))
                        .map_or(0, |(j, _)| j + 1)
                })
                .collect();
            from_labels(labels)
        }
        StructureKind::RadialGradient => {
            let cy = rng.random_range(0.0..h as f64);
            let cx = rng.random_range(0.0..w as f64);
            let rmax = [(0.0, 0.0), (0.0, w as f64), (h as f64, 0.0), (h as f64, w as f64)]
                .iter()
                .map(|&(y, x)| ((y - cy).powi(2) + (x - cx).powi(2)).sqrt())
                .fold(0.0, f64::max);
            let pos = |y: usize, x: usize| {
                let r = ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)).sqrt();
                (r / rmax).min(1.0) * (k - 1) as f64
            };
            let labels = (0..h * w).map(|i| pos(i / w, i % w).round() as usize).collect();
            // piecewise-linear between palette stops along the radius
            let image = Image::from_fn(h, w, c, |y, x, ch| {
                let s = pos(y, x);
                let lo = (s.floor() as usize).min(k - 2);
                let f = s - lo as f64;
                palette[lo][ch] * (1.0 - f) + palette[lo + 1][ch] * f
            });
            Ok(Structure { image, labels })
        }
    }
}

/// `clamp(structure + alpha · texture)`; a one-channel texture is added to every channel.
pub fn blend(structure: &Image, texture: &Grid, alpha: f64) -> Result<Image> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidArgument(format!("blend alpha {alpha} must lie in (0, 1]")));
    }
    if (texture.height(), texture.width()) != (structure.height(), structure.width())
        || (texture.channels() != 1 && texture.channels() != structure.channels())
    {
        return Err(Error::DimensionMismatch(format!(
            "blend: structure {:?}, texture {:?}",
            structure.dims(),
            texture.dims()
        )));
    }
    let tc = texture.channels();
    Ok(Image::from_fn(
        structure.height(),
        structure.width(),
        structure.channels(),
        |y, x, c| structure.get(y, x, c) + alpha * texture.get(y, x, c.min(tc - 1)),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub version: u32,
    pub id: String,
    /// Paths relative to the manifest's directory.
    pub input: PathBuf,
    pub gt: PathBuf,
    pub height: usize,
    pub width: usize,
    pub texture: TextureSpec,
    pub structure: StructureSpec,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairManifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl PairManifest {
    pub fn input_path(&self, e: &ManifestEntry) -> PathBuf {
        self.root.join(&e.input)
    }

    pub fn gt_path(&self, e: &ManifestEntry) -> PathBuf {
        self.root.join(&e.gt)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::Manifest {
            path: path.to_path_buf(),
            reason,
        };
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut entries = Vec::new();
        let mut ids = std::collections::HashSet::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let e: ManifestEntry =
                serde_json::from_str(&line).map_err(|e| bad(format!("line {}: {e}", n + 1)))?;
            if e.version != MANIFEST_VERSION {
                return Err(bad(format!("line {}: unsupported version {}", n + 1, e.version)));
            }
            if !ids.insert(e.id.clone()) {
                return Err(bad(format!("line {}: duplicate id {}", n + 1, e.id)));
            }
            entries.push(e);
        }
        if entries.is_empty() {
            return Err(bad("no entries".into()));
        }
        let root = path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf);
        Ok(Self { root, entries })
    }

    /// Every referenced file exists and decodes to the recorded size.
    pub fn validate(&self) -> Result<()> {
        for e in &self.entries {
            for p in [self.input_path(e), self.gt_path(e)] {
                let img = load_image(&p)?;
                if (img.height(), img.width()) != (e.height, e.width) {
                    return Err(Error::Manifest {
                        path: p,
                        reason: format!(
                            "entry {} records {}x{}, file is {}x{}",
                            e.id,
                            e.height,
                            e.width,
                            img.height(),
                            img.width()
                        ),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            s.push_str(&serde_json::to_string(e).expect("manifest entries serialize"));
            s.push('\n');
        }
        s
    }
}

/// Random pair parameters for a suite, drawn sequentially from one seed.
fn suite_specs(count: usize, dims: (usize, usize), seed: u64) -> Vec<ManifestEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let structures = [
        StructureKind::VoronoiFlat,
        StructureKind::PolygonFlat,
        StructureKind::RadialGradient,
    ];
    (0..count)
        .map(|i| {
            let kind = TextureKind::ALL[i % TextureKind::ALL.len()];
            let period = *[2usize, 3, 4, 6].choose(&mut rng).expect("nonempty");
            let orientation = match kind {
                TextureKind::Checker | TextureKind::Stripes | TextureKind::Brick => {
                    *[0.0, 45.0, 90.0].choose(&mut rng).expect("nonempty")
                }
                _ => rng.random_range(0.0..180.0),
            };
            let texture = TextureSpec {
                kind,
                period: period.min(dims.0).min(dims.1).max(2),
                amplitude: rng.random_range(0.1..0.2),
                orientation,
                seed: rng.random(),
            };
            let structure = StructureSpec {
                kind: structures[(i / TextureKind::ALL.len()) % structures.len()],
                regions: rng.random_range(3..=7),
                palette_seed: rng.random(),
                palette: None,
                channels: 3,
            };
            let id = format!("pair_{i:04}");
            ManifestEntry {
                version: MANIFEST_VERSION,
                input: PathBuf::from(format!("{id}_input.png")),
                gt: PathBuf::from(format!("{id}_gt.png")),
                id,
                height: dims.0,
                width: dims.1,
                texture,
                structure,
                alpha: 1.0,
            }
        })
        .collect()
}

/// Input and ground-truth images of one manifest entry, generated in memory.
pub fn render_pair(e: &ManifestEntry) -> Result<(Image, Image)> {
    let gt = gen_structure(&e.structure, (e.height, e.width))?.image;
    let tex = gen_texture(&e.texture, (e.height, e.width))?;
    Ok((blend(&gt, &tex, e.alpha)?, gt))
}

/// Writes `count` input/ground-truth PNG pairs and `manifest.jsonl` into `out_dir`.
pub fn gen_suite(count: usize, dims: (usize, usize), seed: u64, out_dir: &Path) -> Result<PairManifest> {
    if count == 0 {
        return Err(Error::InvalidArgument("suite count must be >= 1".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let entries = suite_specs(count, dims, seed);
    entries.par_iter().try_for_each(|e| -> Result<()> {
        let (input, gt) = render_pair(e)?;
        save_image(&input, &out_dir.join(&e.input))?;
        save_image(&gt, &out_dir.join(&e.gt))
    })?;
    let manifest = PairManifest {
        root: out_dir.to_path_buf(),
        entries,
    };
    let path = out_dir.join(MANIFEST_FILE);
    let tmp = out_dir.join(format!(".{MANIFEST_FILE}.tmp"));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(manifest.to_jsonl().as_bytes())?;
        f.sync_all()?;
        fs::rename(&tmp, &path)
    };
    write().map_err(|e| Error::Write {
        path: path.clone(),
        reason: e.to_string(),
    })?;
    Ok(manifest)
}
