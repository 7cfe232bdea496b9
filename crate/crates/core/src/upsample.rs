//! Structure-preserving upsamplers used to bring the coarsest pyramid level
//! back to full resolution.
//!
//! Built-in kinds are separable resamplers with half-sample symmetric
//! borders. The external kind hands the image to a user command through
//! temporary PNG files:
//!
//! ```text
//! command template:  my-sr --scale {scale} -i {in} -o {out}
//! ```
//!
//! `{in}` and `{out}` are required; `{scale}` is optional. The command runs
//! under `sh -c` and must write an image of exactly `factor ×` the input size.

use std::fmt;
use std::path::Path;
use std::process::{Command, Stdio};
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{load_image, save_image, Grid, Image};
use crate::sampling::{reflect_symmetric, AxisPlan, Separable};

pub const DEFAULT_TIMEOUT_SECS: u64 = 120;
pub const ALLOWED_FACTORS: [usize; 4] = [2, 4, 8, 16];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalCommand {
    pub template: String,
    pub timeout_secs: u64,
}

impl ExternalCommand {
    pub fn new(template: impl Into<String>) -> Result<Self> {
        let template = template.into();
        if !template.contains("{in}") || !template.contains("{out}") {
            return Err(Error::InvalidArgument(format!(
                "external command `{template}` must contain {{in}} and {{out}}"
            )));
        }
        Ok(Self {
            template,
            timeout_secs: DEFAULT_TIMEOUT_SECS,
        })
    }

    fn render(&self, input: &Path, output: &Path, scale: usize) -> String {
        self.template
            .replace("{in}", &shell_quote(&input.to_string_lossy()))
            .replace("{out}", &shell_quote(&output.to_string_lossy()))
            .replace("{scale}", &scale.to_string())
    }

    /// Runs the command on `img`; the produced image must be `expect_dims`.
    pub fn run(&self, img: &Image, expect_dims: (usize, usize), scale: usize) -> Result<Image> {
        // unique per call, removed on drop
        let dir = tempfile::Builder::new()
            .prefix("texfilter-ext-")
            .tempdir()
            .map_err(|e| Error::io(std::env::temp_dir(), e))?;
        let input = dir.path().join("in.png");
        let output = dir.path().join("out.png");
        save_image(img, &input)?;
        let command = self.render(&input, &output, scale);
        run_shell(&command, Duration::from_secs(self.timeout_secs))?;
        if !output.exists() {
            return Err(Error::ExternalMissingOutput { command });
        }
        let out = load_image(&output)?;
        if (out.height(), out.width()) != expect_dims {
            return Err(Error::ExternalWrongDims {
                command,
                got_h: out.height(),
                got_w: out.width(),
                want_h: expect_dims.0,
                want_w: expect_dims.1,
            });
        }
        if out.channels() != img.channels() {
            return Ok(match (img.channels(), out.channels()) {
                (1, 3) => crate::image::to_luma(&out)?,
                _ => Image::from_fn(out.height(), out.width(), 3, |y, x, _| out.get(y, x, 0)),
            });
        }
        Ok(out)
    }
}

fn shell_quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', r"'\''"))
}

/// Runs `sh -c command`, killing it after `timeout`.
pub(crate) fn run_shell(command: &str, timeout: Duration) -> Result<()> {
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(command)
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| Error::ExternalFailed {
            command: command.to_string(),
            status: "spawn failure".into(),
            stderr: e.to_string(),
        })?;
    let start = Instant::now();
    let status = loop {
        match child.try_wait() {
            Ok(Some(status)) => break status,
            Ok(None) if start.elapsed() >= timeout => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(Error::ExternalTimeout {
                    command: command.to_string(),
                    seconds: timeout.as_secs(),
                });
            }
            Ok(None) => std::thread::sleep(Duration::from_millis(5)),
            Err(e) => {
                return Err(Error::ExternalFailed {
                    command: command.to_string(),
                    status: "wait failure".into(),
                    stderr: e.to_string(),
                })
            }
        }
    };
    if !status.success() {
        let mut stderr = String::new();
        if let Some(mut pipe) = child.stderr.take() {
            use std::io::Read;
            let _ = pipe.read_to_string(&mut stderr);
        }
        return Err(Error::ExternalFailed {
            command: command.to_string(),
            status: status.to_string(),
            stderr: stderr.trim().to_string(),
        });
    }
    Ok(())
}

/// Serialized as its display string, e.g. `"bicubic"` or `"external:sr {in} {out}"`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum UpsamplerKind {
    Nearest,
    Bilinear,
    Bicubic,
    Lanczos3,
    External(ExternalCommand),
}

impl Default for UpsamplerKind {
    fn default() -> Self {
        UpsamplerKind::Bicubic
    }
}

impl fmt::Display for UpsamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UpsamplerKind::Nearest => f.write_str("nearest"),
            UpsamplerKind::Bilinear => f.write_str("bilinear"),
            UpsamplerKind::Bicubic => f.write_str("bicubic"),
            UpsamplerKind::Lanczos3 => f.write_str("lanczos3"),
            UpsamplerKind::External(c) => write!(f, "external:{}", c.template),
        }
    }
}

impl From<UpsamplerKind> for String {
    fn from(k: UpsamplerKind) -> String {
        k.to_string()
    }
}

impl TryFrom<String> for UpsamplerKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl FromStr for UpsamplerKind {
    type Err = Error;

    /// `nearest`, `bilinear`, `bicubic`, `lanczos3`, or `external:<template>`.
    fn from_str(s: &str) -> Result<Self> {
        if let Some(t) = s.strip_prefix("external:") {
            return Ok(UpsamplerKind::External(ExternalCommand::new(t)?));
        }
        match s.to_ascii_lowercase().as_str() {
            "nearest" => Ok(UpsamplerKind::Nearest),
            "bilinear" | "linear" => Ok(UpsamplerKind::Bilinear),
            "bicubic" | "cubic" => Ok(UpsamplerKind::Bicubic),
            "lanczos3" | "lanczos" => Ok(UpsamplerKind::Lanczos3),
            other => Err(Error::InvalidArgument(format!("unknown upsampler `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Filter {
    Nearest,
    Triangle,
    CatmullRom,
    Lanczos3,
}

impl Filter {
    fn support(self) -> f64 {
        match self {
            Filter::Nearest => 0.5,
            Filter::Triangle => 1.0,
            Filter::CatmullRom => 2.0,
            Filter::Lanczos3 => 3.0,
        }
    }

    fn eval(self, x: f64) -> f64 {
        let ax = x.abs();
        match self {
            Filter::Nearest => 1.0,
            Filter::Triangle => (1.0 - ax).max(0.0),
            Filter::CatmullRom => {
                // Keys cubic, a = -0.5
                let a = -0.5;
                if ax < 1.0 {
                    (a + 2.0) * ax.powi(3) - (a + 3.0) * ax * ax + 1.0
                } else if ax < 2.0 {
                    a * ax.powi(3) - 5.0 * a * ax * ax + 8.0 * a * ax - 4.0 * a
                } else {
                    0.0
                }
            }
            Filter::Lanczos3 => {
                if ax < 1e-12 {
                    1.0
                } else if ax < 3.0 {
                    let px = std::f64::consts::PI * ax;
                    3.0 * px.sin() * (px / 3.0).sin() / (px * px)
                } else {
                    0.0
                }
            }
        }
    }
}

fn resize_plan(n_in: usize, n_out: usize, filter: Filter) -> AxisPlan {
    let ratio = n_in as f64 / n_out as f64;
    if filter == Filter::Nearest {
        return AxisPlan::from_taps(n_in, n_out, |o, taps| {
            let i = (((o as f64 + 0.5) * ratio).floor() as usize).min(n_in - 1);
            taps.push((i, 1.0));
        });
    }
    // widen the kernel when shrinking
    let scale = ratio.max(1.0);
    let support = filter.support() * scale;
    AxisPlan::from_taps(n_in, n_out, |o, taps| {
        let center = (o as f64 + 0.5) * ratio - 0.5;
        let lo = (center - support).floor() as isize;
        let hi = (center + support).ceil() as isize;
        let mut total = 0.0;
        let start = taps.len();
        for i in lo..=hi {
            let w = filter.eval((i as f64 - center) / scale);
            if w != 0.0 {
                taps.push((reflect_symmetric(i, n_in), w));
                total += w;
            }
        }
        for t in &mut taps[start..] {
            t.1 /= total;
        }
    })
}

fn builtin_filter(kind: &UpsamplerKind) -> Option<Filter> {
    match kind {
        UpsamplerKind::Nearest => Some(Filter::Nearest),
        UpsamplerKind::Bilinear => Some(Filter::Triangle),
        UpsamplerKind::Bicubic => Some(Filter::CatmullRom),
        UpsamplerKind::Lanczos3 => Some(Filter::Lanczos3),
        UpsamplerKind::External(_) => None,
    }
}

/// Separable resampling of a signed grid to exactly `height × width`.
pub(crate) fn resize_grid(g: &Grid, height: usize, width: usize, filter: Filter) -> Grid {
    if (g.height(), g.width()) == (height, width) {
        return g.clone();
    }
    Separable {
        vertical: resize_plan(g.height(), height, filter),
        horizontal: resize_plan(g.width(), width, filter),
    }
    .apply(g)
}

/// Resizes to exact dimensions with a built-in kernel; external kinds fall back to bicubic.
pub fn resize(img: &Image, height: usize, width: usize, kind: &UpsamplerKind) -> Image {
    let filter = builtin_filter(kind).unwrap_or(Filter::CatmullRom);
    resize_grid(img.grid(), height, width, filter).into_image_clamped()
}

/// Upsamples by a power-of-two factor in {2, 4, 8, 16}.
pub fn upsample(img: &Image, factor: usize, kind: &UpsamplerKind) -> Result<Image> {
    if !ALLOWED_FACTORS.contains(&factor) {
        return Err(Error::InvalidArgument(format!(
            "upsampling factor {factor} not in {ALLOWED_FACTORS:?}"
        )));
    }
    let dims = (img.height() * factor, img.width() * factor);
    match kind {
        UpsamplerKind::External(cmd) => cmd.run(img, dims, factor),
        _ => Ok(resize(img, dims.0, dims.1, kind)),
    }
}

/// Upsamples to exactly `target` by power-of-two steps followed by an
/// exact-size resample (absorbs the off-by-one sizes of odd pyramid levels).
pub fn upsample_to(img: &Image, target: (usize, usize), kind: &UpsamplerKind) -> Result<Image> {
    let (th, tw) = target;
    if th < img.height() || tw < img.width() {
        return Err(Error::InvalidArgument(format!(
            "target {th}x{tw} smaller than source {}x{}",
            img.height(),
            img.width()
        )));
    }
    let mut cur = img.clone();
    while cur.height() < th || cur.width() < tw {
        // smallest power of two reaching the target, at most 16 per step
        let need = (th as f64 / cur.height() as f64).max(tw as f64 / cur.width() as f64);
        let factor = ALLOWED_FACTORS
            .iter()
            .copied()
            .find(|&f| f as f64 >= need)
            .unwrap_or(16);
        cur = upsample(&cur, factor, kind)?;
    }
    if (cur.height(), cur.width()) != target {
        cur = resize(&cur, th, tw, kind);
    }
    Ok(cur)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds() -> Vec<UpsamplerKind> {
        vec![
            UpsamplerKind::Nearest,
            UpsamplerKind::Bilinear,
            UpsamplerKind::Bicubic,
            UpsamplerKind::Lanczos3,
        ]
    }

    #[test]
    fn constants_survive_every_kind_and_factor() {
        let img = Image::filled(3, 5, 3, 0.4);
        for kind in kinds() {
            for f in ALLOWED_FACTORS {
                let up = upsample(&img, f, &kind).unwrap();
                assert_eq!(up.dims(), (3 * f, 5 * f, 3));
                assert!(up.data().iter().all(|v| (v - 0.4).abs() < 1e-12), "{kind}");
            }
        }
    }

    #[test]
    fn single_pixel_nearest() {
        let img = Image::filled(1, 1, 1, 0.3);
        let up = upsample(&img, 2, &UpsamplerKind::Nearest).unwrap();
        assert_eq!(up.dims(), (2, 2, 1));
        assert!(up.data().iter().all(|&v| v == 0.3));
    }

    #[test]
    fn bilinear_ramp_by_hand() {
        // source samples at x = 0, 1; output centers map to -0.25, 0.25, 0.75, 1.25
        // with the edge sample mirrored outside
        let img = Image::new(1, 2, 1, vec![0.0, 1.0]).unwrap();
        let up = upsample(&img, 2, &UpsamplerKind::Bilinear).unwrap();
        assert_eq!(up.dims(), (2, 4, 1));
        let want = [0.0, 0.25, 0.75, 1.0];
        for row in 0..2 {
            for (x, w) in want.iter().enumerate() {
                assert!((up.get(row, x, 0) - w).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn smooth_kernels_reproduce_ramps_inside() {
        let n = 32;
        let img = Image::from_fn(4, n, 1, |_, x, _| 0.1 + 0.8 * x as f64 / (n - 1) as f64);
        for kind in [UpsamplerKind::Bicubic, UpsamplerKind::Lanczos3] {
            let up = upsample(&img, 4, &kind).unwrap();
            for xo in 16..(4 * n - 16) {
                let xs = (xo as f64 + 0.5) / 4.0 - 0.5;
                let want = 0.1 + 0.8 * xs / (n - 1) as f64;
                assert!((up.get(5, xo, 0) - want).abs() < 1e-3, "{kind} at {xo}");
            }
        }
    }

    #[test]
    fn upsample_to_exact_power_matches_upsample() {
        let img = Image::from_fn(32, 32, 1, |y, x, _| ((y * 7 + x * 3) % 11) as f64 / 10.0);
        let a = upsample_to(&img, (512, 512), &UpsamplerKind::Bicubic).unwrap();
        let b = upsample(&img, 16, &UpsamplerKind::Bicubic).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn upsample_to_handles_odd_chains() {
        let cfg = crate::pyramid::PyramidConfig::default();
        let coarse = *cfg.level_dims(520, 520).last().unwrap();
        assert_eq!(coarse, (33, 33));
        let img = Image::filled(coarse.0, coarse.1, 1, 0.6);
        let up = upsample_to(&img, (520, 520), &UpsamplerKind::Bicubic).unwrap();
        assert_eq!(up.dims(), (520, 520, 1));
        let same = upsample_to(&img, coarse, &UpsamplerKind::Bicubic).unwrap();
        assert_eq!(same, img);
        assert!(upsample_to(&img, (10, 40), &UpsamplerKind::Bicubic).is_err());
    }

    #[test]
    fn rejects_bad_factor_and_template() {
        let img = Image::filled(2, 2, 1, 0.0);
        assert!(upsample(&img, 3, &UpsamplerKind::Bicubic).is_err());
        assert!(ExternalCommand::new("cp {in} somewhere").is_err());
        assert!("external:cp {in} {out}".parse::<UpsamplerKind>().is_ok());
        assert!("sinc".parse::<UpsamplerKind>().is_err());
    }

    #[test]
    fn external_failures_are_distinct() {
        let img = Image::filled(2, 2, 1, 0.5);
        let fail = UpsamplerKind::External(ExternalCommand::new("exit 3 # {in} {out}").unwrap());
        assert!(matches!(
            upsample(&img, 2, &fail),
            Err(Error::ExternalFailed { .. })
        ));
        let silent = UpsamplerKind::External(ExternalCommand::new("true {in} {out}").unwrap());
        assert!(matches!(
            upsample(&img, 2, &silent),
            Err(Error::ExternalMissingOutput { .. })
        ));
        let copy = UpsamplerKind::External(ExternalCommand::new("cp {in} {out}").unwrap());
        assert!(matches!(
            upsample(&img, 2, &copy),
            Err(Error::ExternalWrongDims { .. })
        ));
        let mut slow = ExternalCommand::new("sleep 5; cp {in} {out}").unwrap();
        slow.timeout_secs = 0;
        assert!(matches!(
            slow.run(&img, (2, 2), 1),
            Err(Error::ExternalTimeout { .. })
        ));
    }
}
