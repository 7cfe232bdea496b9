//! Benchmark harness: runs filters over a pair manifest and scores the
//! outputs against ground truth.

use std::fmt;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::PairManifest;
use crate::error::{Error, Result};
use crate::image::{load_image, Image};
use crate::metrics::{psnr, ssim};
use crate::optimize::{filter_direct, OptimizeConfig};
use crate::reward::{reward_total, RewardBreakdown};
use crate::sampling::{reflect101, AxisPlan, Separable};
use crate::upsample::ExternalCommand;

pub const DEFAULT_BLUR_SIGMA: f64 = 1.5;

/// A filter under evaluation.
#[derive(Debug, Clone, PartialEq)]
pub enum Method {
    /// The input itself.
    Identity,
    Blur { sigma: f64 },
    /// [`filter_direct`] with the harness configuration.
    Direct,
    /// The ground truth; an upper bound on every score.
    Gt,
    External { name: String, command: ExternalCommand },
}

impl Method {
    pub fn name(&self) -> String {
        match self {
            Method::Identity => "identity".into(),
            Method::Blur { sigma } => format!("blur:{sigma}"),
            Method::Direct => "direct".into(),
            Method::Gt => "gt".into(),
            Method::External { name, .. } => name.clone(),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    /// `identity`, `blur`, `blur:<sigma>`, `direct`, `gt`, or `<name>=<command>`.
    fn from_str(s: &str) -> Result<Self> {
        if let Some((name, command)) = s.split_once('=') {
            let name = name.trim();
            if name.is_empty() {
                return Err(Error::InvalidArgument(format!("method `{s}` has an empty name")));
            }
            return Ok(Method::External {
                name: name.to_string(),
                command: ExternalCommand::new(command)?,
            });
        }
        match s.trim() {
            "identity" => Ok(Method::Identity),
            "direct" => Ok(Method::Direct),
            "gt" => Ok(Method::Gt),
            "blur" => Ok(Method::Blur {
                sigma: DEFAULT_BLUR_SIGMA,
            }),
            other => match other.strip_prefix("blur:").map(str::parse::<f64>) {
                Some(Ok(sigma)) if sigma > 0.0 && sigma.is_finite() => Ok(Method::Blur { sigma }),
                _ => Err(Error::InvalidArgument(format!("unknown method `{s}`"))),
            },
        }
    }
}

/// Separable Gaussian blur with radius `ceil(3σ)` and mirrored borders.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Result<Image> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("blur sigma {sigma} must be > 0")));
    }
    let r = (3.0 * sigma).ceil() as isize;
    let mut taps: Vec<f64> = (-r..=r).map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= s);
    let op = Separable {
        vertical: AxisPlan::convolve(img.height(), &taps, reflect101),
        horizontal: AxisPlan::convolve(img.width(), &taps, reflect101),
    };
    Ok(op.apply(img.grid()).into_image_clamped())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub optimize: OptimizeConfig,
    /// Worker threads; 0 uses all available cores.
    pub jobs: usize,
    /// Record wall time per job; disable for byte-reproducible reports.
    pub timing: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            optimize: OptimizeConfig::default(),
            jobs: 0,
            timing: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub pair: String,
    pub method: String,
    /// Infinite when the output equals ground truth.
    pub psnr: f64,
    pub ssim: f64,
    pub reward: RewardBreakdown,
    /// Seconds.
    pub runtime: f64,
    /// `None` on success, otherwise the failure message; metrics are NaN then.
    pub error: Option<String>,
}

impl EvalRow {
    pub fn ok(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    /// One row per method averaging its successful rows, with `pair = "mean"`.
    pub means: Vec<EvalRow>,
}

fn produce(method: &Method, input: &Image, gt: &Image, cfg: &EvalConfig) -> Result<Image> {
    match method {
        Method::Identity => Ok(input.clone()),
        Method::Gt => Ok(gt.clone()),
        Method::Blur { sigma } => gaussian_blur(input, *sigma),
        Method::Direct => Ok(filter_direct(input, &cfg.optimize)?.0),
        Method::External { command, .. } => command.run(input, (input.height(), input.width()), 1),
    }
}

fn score(pair: &str, method: &Method, input: &Image, gt: &Image, cfg: &EvalConfig) -> EvalRow {
    let start = Instant::now();
    let result = produce(method, input, gt, cfg).and_then(|out| {
        let runtime = start.elapsed().as_secs_f64();
        if out.channels() != gt.channels() {
            return Err(Error::DimensionMismatch(format!(
                "output has {} channels, ground truth {}",
                out.channels(),
                gt.channels()
            )));
        }
        let o = &cfg.optimize;
        Ok((
            psnr(&out, gt)?,
            ssim(&out, gt)?,
            reward_total(input, &out, &o.weights, &o.pyramid, &o.upsampler)?,
            runtime,
        ))
    });
    match result {
        Ok((psnr, ssim, reward, runtime)) => EvalRow {
            pair: pair.to_string(),
            method: method.name(),
            psnr,
            ssim,
            reward,
            runtime: if cfg.timing { runtime } else { 0.0 },
            error: None,
        },
        Err(e) => failed_row(pair, method, &e),
    }
}

fn failed_row(pair: &str, method: &Method, e: &Error) -> EvalRow {
    let nan = f64::NAN;
    EvalRow {
        pair: pair.to_string(),
        method: method.name(),
        psnr: nan,
        ssim: nan,
        reward: RewardBreakdown {
            texture: nan,
            structure: nan,
            fidelity: nan,
            total: nan,
        },
        runtime: nan,
        error: Some(e.to_string()),
    }
}

fn mean_row(method: &str, rows: &[&EvalRow]) -> EvalRow {
    let ok: Vec<&&EvalRow> = rows.iter().filter(|r| r.ok()).collect();
    let n = ok.len() as f64;
    let avg = |f: &dyn Fn(&EvalRow) -> f64| {
        if ok.is_empty() {
            f64::NAN
        } else {
            ok.iter().map(|r| f(r)).sum::<f64>() / n
        }
    };
    EvalRow {
        pair: "mean".into(),
        method: method.to_string(),
        psnr: avg(&|r| r.psnr),
        ssim: avg(&|r| r.ssim),
        reward: RewardBreakdown {
            texture: avg(&|r| r.reward.texture),
            structure: avg(&|r| r.reward.structure),
            fidelity: avg(&|r| r.reward.fidelity),
            total: avg(&|r| r.reward.total),
        },
        runtime: avg(&|r| r.runtime),
        error: (ok.len() < rows.len()).then(|| format!("{} of {} pairs failed", rows.len() - ok.len(), rows.len())),
    }
}

/// Scores every method on every pair; a failing job becomes a failed row.
pub fn run_eval(manifest: &PairManifest, methods: &[Method], cfg: &EvalConfig) -> Result<EvalReport> {
    if methods.is_empty() {
        return Err(Error::InvalidArgument("no methods to evaluate".into()));
    }
    let mut names: Vec<String> = methods.iter().map(Method::name).collect();
    names.sort();
    if names.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidArgument("method names must be unique".into()));
    }
    manifest.validate()?;
    cfg.optimize.validate()?;

    let jobs: Vec<(usize, usize)> = (0..manifest.entries.len())
        .flat_map(|p| (0..methods.len()).map(move |m| (p, m)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))?;
    let rows: Vec<EvalRow> = pool.install(|| {
        jobs.par_iter()
            .map(|&(p, m)| {
                let e = &manifest.entries[p];
                let loaded = load_image(manifest.input_path(e))
                    .and_then(|i| Ok((i, load_image(manifest.gt_path(e))?)));
                match loaded {
                    Ok((input, gt)) => score(&e.id, &methods[m], &input, &gt, cfg),
                    Err(err) => failed_row(&e.id, &methods[m], &err),
                }
            })
            .collect()
    });
    let means = methods
        .iter()
        .map(|m| {
            let name = m.name();
            let of: Vec<&EvalRow> = rows.iter().filter(|r| r.method == name).collect();
            mean_row(&name, &of)
        })
        .collect();
    Ok(EvalReport { rows, means })
}

fn fmt_value(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else if v == f64::INFINITY {
        "inf".into()
    } else {
        format!("{v:.6}")
    }
}

pub const REPORT_COLUMNS: [&str; 10] = [
    "pair",
    "method",
    "psnr",
    "ssim",
    "r_texture",
    "r_structure",
    "r_fidelity",
    "r_total",
    "runtime",
    "status",
];

fn record(r: &EvalRow) -> Vec<String> {
    vec![
        r.pair.clone(),
        r.method.clone(),
        fmt_value(r.psnr),
        fmt_value(r.ssim),
        fmt_value(r.reward.texture),
        fmt_value(r.reward.structure),
        fmt_value(r.reward.fidelity),
        fmt_value(r.reward.total),
        fmt_value(r.runtime),
        match &r.error {
            None => "ok".into(),
            Some(e) => format!("failed: {e}"),
        },
    ]
}

impl EvalReport {
    /// Data rows followed by the per-method mean rows.
    pub fn all_rows(&self) -> impl Iterator<Item = &EvalRow> {
        self.rows.iter().chain(&self.means)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| Error::InvalidArgument(format!("csv: {e}"));
        w.write_record(REPORT_COLUMNS).map_err(err)?;
        for r in self.all_rows() {
            w.write_record(record(r)).map_err(err)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::InvalidArgument(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_markdown(&self) -> String {
        let mut s = format!("| {} |\n", REPORT_COLUMNS.join(" | "));
        s.push_str(&format!("|{}\n", "---|".repeat(REPORT_COLUMNS.len())));
        for r in self.all_rows() {
            let cells: Vec<String> = record(r).into_iter().map(|c| c.replace('|', "\\|")).collect();
            s.push_str(&format!("| {} |\n", cells.join(" | ")));
        }
        s
    }

    /// Writes whichever of the CSV and Markdown reports are requested.
    pub fn write(&self, csv_path: Option<&Path>, markdown_path: Option<&Path>) -> Result<()> {
        if let Some(p) = csv_path {
            std::fs::write(p, self.to_csv()?).map_err(|e| Error::io(p, e))?;
        }
        if let Some(p) = markdown_path {
            std::fs::write(p, self.to_markdown()).map_err(|e| Error::io(p, e))?;
        }
        Ok(())
    }
}
