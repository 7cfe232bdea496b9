use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use texfilter::config::{AppConfig, CONFIG_ENV};
use texfilter::dataset::{gen_suite, MANIFEST_FILE};
use texfilter::eval::{run_eval, EvalConfig, Method};
use texfilter::fm::{train_toy_rft, ToyModel};
use texfilter::metrics::Metric;
use texfilter::optimize::{detail_enhance, filter_direct};
use texfilter::{
    build_pyramid, load_image, reward_total, save_image, upsample, upsample_to, Error, ErrorClass,
    Result, RewardWeights, UpsamplerKind,
};

#[derive(Parser)]
#[command(name = "texfilter", version, about = "Texture filtering with a Gaussian-pyramid reward")]
struct Cli {
    /// JSON config file with defaults for every subcommand.
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    /// Print the version and resolved config to stderr.
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct RewardArgs {
    /// Texture, structure and fidelity weights, e.g. `0.2,0.6,0.2`.
    #[arg(long)]
    weights: Option<RewardWeights>,
    /// Pyramid depth N.
    #[arg(long)]
    depth: Option<usize>,
    /// nearest, bilinear, bicubic, lanczos3 or `external:<command with {in} {out}>`.
    #[arg(long)]
    upsampler: Option<UpsamplerKind>,
}

#[derive(Args, Clone, Default)]
struct OptimizeArgs {
    #[command(flatten)]
    reward: RewardArgs,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    step_size: Option<f64>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Iterations between texture-target refreshes.
    #[arg(long)]
    refresh_interval: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write every pyramid level as `level_<i>.png`.
    Pyramid {
        input: PathBuf,
        out_dir: PathBuf,
        #[arg(long)]
        depth: Option<usize>,
    },
    /// Print one score between two images.
    Metric {
        a: PathBuf,
        b: PathBuf,
        /// ssim, psnr, mae or rmse.
        #[arg(long, default_value = "ssim")]
        metric: Metric,
    },
    Upsample {
        input: PathBuf,
        output: PathBuf,
        /// 2, 4, 8 or 16; ignored when --height and --width are given.
        #[arg(long, default_value_t = 2)]
        factor: usize,
        #[arg(long, requires = "width")]
        height: Option<usize>,
        #[arg(long, requires = "height")]
        width: Option<usize>,
        #[arg(long)]
        upsampler: Option<UpsamplerKind>,
    },
    /// Print the reward breakdown of a result as one JSON line.
    Reward {
        source: PathBuf,
        result: PathBuf,
        #[command(flatten)]
        reward: RewardArgs,
    },
    /// Filter an image by direct reward ascent.
    Filter {
        input: PathBuf,
        output: PathBuf,
        #[command(flatten)]
        opt: OptimizeArgs,
        /// Per-iteration reward trace as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Amplify the detail layer `input - filtered`.
    Enhance {
        input: PathBuf,
        output: PathBuf,
        /// Precomputed filtered image; filtered on the fly when absent.
        #[arg(long)]
        filtered: Option<PathBuf>,
        #[arg(long, default_value_t = 2.0)]
        strength: f64,
        #[command(flatten)]
        opt: OptimizeArgs,
    },
    /// Generate a synthetic input/ground-truth suite with a manifest.
    Synth {
        out_dir: PathBuf,
        #[arg(long, default_value_t = texfilter::dataset::DEFAULT_SUITE_COUNT)]
        count: usize,
        #[arg(long, default_value_t = texfilter::dataset::DEFAULT_SUITE_DIMS.0)]
        height: usize,
        #[arg(long, default_value_t = texfilter::dataset::DEFAULT_SUITE_DIMS.1)]
        width: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Score methods on every pair of a manifest.
    Eval {
        manifest: PathBuf,
        /// identity, blur[:sigma], direct, gt or name=command; repeatable.
        #[arg(long = "method", default_values = ["identity", "blur", "direct"])]
        methods: Vec<Method>,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        markdown: Option<PathBuf>,
        /// Worker threads; 0 uses every core.
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        /// Report zero runtimes so reports are reproducible byte for byte.
        #[arg(long)]
        no_timing: bool,
        #[command(flatten)]
        opt: OptimizeArgs,
    },
    /// Reward-weighted fine-tuning of a 1-D toy flow model; prints the reward curve as CSV.
    ToyRft {
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        group_size: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        solver_steps: Option<usize>,
        #[arg(long)]
        inner_steps: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long, default_value_t = 16)]
        hidden: usize,
        /// Point the reward pulls samples towards.
        #[arg(long, default_value_t = 1.5)]
        target: f64,
        /// Number of conditioning values, spread over [0, 1].
        #[arg(long, default_value_t = 2)]
        conditions: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn apply_reward(cfg: &mut AppConfig, a: &RewardArgs) {
    let o = &mut cfg.optimize;
    if let Some(w) = a.weights {
        o.weights = w;
    }
    if let Some(d) = a.depth {
        o.pyramid.depth = d;
    }
    if let Some(u) = &a.upsampler {
        o.upsampler = u.clone();
    }
}

fn apply_optimize(cfg: &mut AppConfig, a: &OptimizeArgs) {
    apply_reward(cfg, &a.reward);
    let o = &mut cfg.optimize;
    macro_rules! set {
        ($($field:ident),*) => {$(if let Some(v) = a.$field { o.$field = v; })*};
    }
    set!(steps, step_size, beta1, beta2, epsilon, refresh_interval, seed);
}

fn write_text(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::Io {
            path: p.to_path_buf(),
            source: e,
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = AppConfig::resolve(cli.config.as_deref())?;
    match &cli.command {
        Command::Pyramid { depth, .. } => apply_reward(
            &mut cfg,
            &RewardArgs {
                depth: *depth,
                ..RewardArgs::default()
            },
        ),
        Command::Upsample { upsampler, .. } => apply_reward(
            &mut cfg,
            &RewardArgs {
                upsampler: upsampler.clone(),
                ..RewardArgs::default()
            },
        ),
        Command::Reward { reward, .. } => apply_reward(&mut cfg, reward),
        Command::Filter { opt, .. } | Command::Enhance { opt, .. } | Command::Eval { opt, .. } => {
            apply_optimize(&mut cfg, opt)
        }
        Command::ToyRft {
            beta,
            group_size,
            epochs,
            solver_steps,
            inner_steps,
            learning_rate,
            ..
        } => {
            let p = &mut cfg.policy;
            macro_rules! set {
                ($($field:ident),*) => {$(if let Some(v) = $field { p.$field = *v; })*};
            }
            set!(beta, group_size, epochs, solver_steps, inner_steps, learning_rate);
        }
        Command::Metric { .. } | Command::Synth { .. } => {}
    }
    cfg.validate()?;
    if cli.verbose {
        eprintln!("texfilter {}", env!("CARGO_PKG_VERSION"));
        eprintln!("config {}", cfg.to_json());
    }
    let o = &cfg.optimize;

    match cli.command {
        Command::Pyramid { input, out_dir, .. } => {
            let img = load_image(&input)?;
            let p = build_pyramid(&img, &o.pyramid)?;
            std::fs::create_dir_all(&out_dir).map_err(|e| Error::Io {
                path: out_dir.clone(),
                source: e,
            })?;
            let mut sizes = Vec::new();
            for (i, level) in p.levels().iter().enumerate() {
                save_image(level, out_dir.join(format!("level_{i}.png")))?;
                sizes.push([level.height(), level.width()]);
            }
            println!("{}", serde_json::json!({ "levels": sizes }));
        }
        Command::Metric { a, b, metric } => {
            let v = metric.evaluate(&load_image(&a)?, &load_image(&b)?)?;
            println!("{v}");
        }
        Command::Upsample {
            input,
            output,
            factor,
            height,
            width,
            ..
        } => {
            let img = load_image(&input)?;
            let out = match (height, width) {
                (Some(h), Some(w)) => upsample_to(&img, (h, w), &o.upsampler)?,
                _ => upsample(&img, factor, &o.upsampler)?,
            };
            save_image(&out, &output)?;
        }
        Command::Reward { source, result, .. } => {
            let r = reward_total(
                &load_image(&source)?,
                &load_image(&result)?,
                &o.weights,
                &o.pyramid,
                &o.upsampler,
            )?;
            println!("{}", serde_json::to_string(&r).expect("reward serializes"));
        }
        Command::Filter {
            input,
            output,
            trace,
            ..
        } => {
            let (out, tr) = filter_direct(&load_image(&input)?, o)?;
            save_image(&out, &output)?;
            if let Some(p) = trace {
                write_text(Some(&p), &tr.to_csv())?;
            }
            if cli.verbose {
                eprintln!(
                    "reward {:.6} -> {:.6} in {:.2}s",
                    tr.initial.total,
                    tr.final_reward.total,
                    tr.wall_time.as_secs_f64()
                );
            }
        }
        Command::Enhance {
            input,
            output,
            filtered,
            strength,
            ..
        } => {
            let src = load_image(&input)?;
            let smooth = match filtered {
                Some(p) => load_image(&p)?,
                None => filter_direct(&src, o)?.0,
            };
            save_image(&detail_enhance(&src, &smooth, strength)?, &output)?;
        }
        Command::Synth {
            out_dir,
            count,
            height,
            width,
            seed,
        } => {
            gen_suite(count, (height, width), seed, &out_dir)?;
            println!("{}", out_dir.join(MANIFEST_FILE).display());
        }
        Command::Eval {
            manifest,
            methods,
            csv,
            markdown,
            jobs,
            no_timing,
            ..
        } => {
            let m = texfilter::dataset::PairManifest::load(&manifest)?;
            let ecfg = EvalConfig {
                optimize: o.clone(),
                jobs,
                timing: !no_timing,
            };
            let report = run_eval(&m, &methods, &ecfg)?;
            report.write(csv.as_deref(), markdown.as_deref())?;
            if csv.is_none() && markdown.is_none() {
                print!("{}", report.to_markdown());
            }
            let failed = report.rows.iter().filter(|r| !r.ok()).count();
            if failed > 0 {
                eprintln!("{failed} of {} jobs failed; see the status column", report.rows.len());
            }
        }
        Command::ToyRft {
            hidden,
            target,
            conditions,
            seed,
            output,
            ..
        } => {
            if conditions == 0 {
                return Err(Error::InvalidArgument("need at least one condition".into()));
            }
            let conds: Vec<Vec<f64>> = (0..conditions)
                .map(|i| vec![if conditions == 1 { 0.0 } else { i as f64 / (conditions - 1) as f64 }])
                .collect();
            let model = ToyModel::new(1, 1, hidden, seed)?;
            let (_, curve) =
                train_toy_rft(model, &conds, |x| -(x[0] - target).powi(2), &cfg.policy, seed)?;
            write_text(output.as_deref(), &curve.to_csv())?;
        }
    }
    Ok(())
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Usage => 2,
        ErrorClass::Io => 3,
        ErrorClass::Computation => 4,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.class()))
        }
    }
}
