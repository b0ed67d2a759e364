//! `occvo`: moving-object detection and masked visual odometry over a TUM-layout
//! directory or a synthetic suite.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use occvo::dataset::read_intrinsics;
use occvo::pipeline::{run, Input, Manifest, PoseMode, RunConfig};
use occvo::synth::{SUITE_HEIGHT, SUITE_NAMES, SUITE_WIDTH};
use occvo::{CameraIntrinsics, Error};

#[derive(Debug, Parser)]
#[command(name = "occvo", version, about)]
struct Cli {
    /// TUM-layout sequence directory (rgb.txt, depth.txt, optional groundtruth.txt).
    #[arg(long, conflicts_with_all = ["suite", "manifest"])]
    input: Option<PathBuf>,

    /// Synthetic suite name.
    #[arg(long, conflicts_with = "manifest")]
    suite: Option<String>,

    /// Re-run the configuration stored in a previous run's manifest.json.
    #[arg(long)]
    manifest: Option<PathBuf>,

    /// estimate, external-file or ground-truth.
    #[arg(long, default_value = "estimate")]
    pose_mode: String,

    /// TUM trajectory used by the external-file pose mode.
    #[arg(long)]
    ext_trajectory: Option<PathBuf>,

    /// Intrinsics file ("fx fy cx cy width height") or the same six values comma-separated.
    #[arg(long)]
    intrinsics: Option<String>,

    /// Depth PNG units per metre.
    #[arg(long)]
    depth_scale: Option<f64>,

    #[arg(long)]
    alpha: Option<f64>,

    #[arg(long)]
    beta: Option<f64>,

    /// Smallest object component kept in the mask (pixels).
    #[arg(long)]
    min_component: Option<usize>,

    /// Bi-square threshold of the intensity residual (intensity in [0, 1]).
    #[arg(long = "kI")]
    k_intensity: Option<f64>,

    /// Bi-square threshold of the depth residual (m).
    #[arg(long = "kZ")]
    k_depth: Option<f64>,

    /// Weight of the depth residual.
    #[arg(long)]
    gamma: Option<f64>,

    #[arg(long)]
    pyramid_levels: Option<usize>,

    /// Frame offset of the relative pose error.
    #[arg(long)]
    rpe_delta: Option<usize>,

    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Noise seed of synthetic suites.
    #[arg(long)]
    seed: Option<u64>,

    /// Directory of ground-truth object masks named <timestamp>.png.
    #[arg(long)]
    eval_gt_masks: Option<PathBuf>,

    /// Synthetic suite resolution.
    #[arg(long, default_value_t = SUITE_WIDTH)]
    width: usize,

    #[arg(long, default_value_t = SUITE_HEIGHT)]
    height: usize,

    /// Run odometry on every pixel instead of the detected background.
    #[arg(long)]
    no_mask: bool,

    /// Leave newly discovered pixels at zero instead of predicting them.
    #[arg(long)]
    no_predict: bool,
}

fn parse_intrinsics(s: &str) -> Result<CameraIntrinsics, Error> {
    let path = Path::new(s);
    if path.exists() {
        return read_intrinsics(path);
    }
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| {
            Error::Config(format!(
                "intrinsics '{s}' is neither a file nor six comma-separated numbers"
            ))
        })?;
    if v.len() != 6 || v[4].fract() != 0.0 || v[5].fract() != 0.0 || v[4] < 1.0 || v[5] < 1.0 {
        return Err(Error::Config(format!(
            "intrinsics '{s}' must be fx,fy,cx,cy,width,height"
        )));
    }
    CameraIntrinsics::new(v[0], v[1], v[2], v[3], v[4] as usize, v[5] as usize)
}

fn build_config(cli: &Cli) -> Result<RunConfig, Error> {
    if let Some(m) = &cli.manifest {
        let mut c = Manifest::read(m)?.config;
        if let Some(out) = &cli.out {
            c.out = out.clone();
        }
        c.validate()?;
        return Ok(c);
    }
    let out = cli
        .out
        .clone()
        .ok_or_else(|| Error::Config("--out is required".into()))?;
    let input = match (&cli.input, &cli.suite) {
        (Some(p), None) => Input::Tum { path: p.clone() },
        (None, Some(name)) => Input::Suite {
            name: name.clone(),
            width: cli.width,
            height: cli.height,
        },
        _ => {
            return Err(Error::Config(format!(
                "exactly one of --input or --suite is required (suites: {})",
                SUITE_NAMES.join(", ")
            )))
        }
    };
    let mut config = RunConfig::new(input, out);

    let s = &mut config.settings;
    s.pose_mode = cli.pose_mode.parse::<PoseMode>()?;
    s.mask_odometry = !cli.no_mask;
    s.occlusion.predict_new_area = !cli.no_predict;
    if let Some(v) = cli.alpha {
        s.occlusion.alpha = v;
    }
    if let Some(v) = cli.beta {
        s.occlusion.beta = v;
    }
    if let Some(v) = cli.min_component {
        s.occlusion.min_component_px = v;
    }
    if let Some(v) = cli.k_intensity {
        s.dvo.k_intensity = v;
    }
    if let Some(v) = cli.k_depth {
        s.dvo.k_depth = v;
    }
    if let Some(v) = cli.gamma {
        s.dvo.gamma = v;
    }
    if let Some(v) = cli.pyramid_levels {
        s.dvo.pyramid_levels = v;
    }
    config.ext_trajectory = cli.ext_trajectory.clone();
    if let Some(k) = &cli.intrinsics {
        config.intrinsics = Some(parse_intrinsics(k)?);
    }
    if let Some(v) = cli.depth_scale {
        config.depth_scale = v;
    }
    if let Some(v) = cli.rpe_delta {
        config.rpe_delta = v;
    }
    if let Some(v) = cli.seed {
        config.seed = v;
    }
    config.gt_masks = cli.eval_gt_masks.clone();
    config.validate()?;
    Ok(config)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let config = match build_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match run(&config) {
        Ok(report) => {
            let mut out = std::io::stdout().lock();
            let _ = writeln!(out, "frames {}", report.frames);
            if let Some(f1) = report.segmentation.as_ref().and_then(|s| s.mean_f1) {
                let _ = writeln!(out, "mean_f1 {f1:.6}");
            }
            if let Some(r) = &report.rpe {
                let _ = writeln!(
                    out,
                    "rpe_delta {} trans_rmse {:.6} rot_rmse {:.6}",
                    r.delta, r.trans_rmse, r.rot_rmse
                );
            }
            let _ = writeln!(out, "output {}", config.out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e.root(), Error::Config(_)) {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
