//! Per-sequence orchestration: odometry, detection, outputs and metrics.
//!
//! For every frame the camera motion to the previous frame is obtained first
//! (estimated with the latest background mask, or taken from a trajectory),
//! then the detection state is advanced. Runs are deterministic: the same
//! configuration produces byte-identical masks and trajectories.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{
    associate, list_timestamped_pngs, load_sequence, pose_lookup, read_depth_png, read_intrinsics,
    read_mask_png, read_rgb_png, read_trajectory, timestamp_name, write_mask_png, write_text,
    write_trajectory, Sequence, Trajectory, DEFAULT_ASSOC_TOLERANCE, DEFAULT_DEPTH_SCALE,
};
use crate::error::{Error, Result};
use crate::eval::{
    f1_frame, rpe_poses, write_f1_csv, write_rpe_csv, FrameScore, RpeScore, SegmentationScore,
};
use crate::geometry::{CameraIntrinsics, RigidTransform, Twist};
use crate::image::{to_gray, DepthImage, Image, IntensityImage, Mask, LUMA_WEIGHTS};
use crate::occlusion::{AccumulationState, OcclusionParams, StepOutput};
use crate::odometry::{estimate_pose, DvoParams, Frame, WarmStart};
use crate::synth::{render_frame, suite, SceneSpec, SUITE_HEIGHT, SUITE_WIDTH};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoseMode {
    /// Dense odometry gated by the background mask.
    #[default]
    Estimate,
    /// Relative motion from an external trajectory file.
    External,
    /// Relative motion from the sequence's ground truth.
    GroundTruth,
}

impl std::str::FromStr for PoseMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "estimate" => Ok(PoseMode::Estimate),
            "external" | "external-file" => Ok(PoseMode::External),
            "ground-truth" | "ground_truth" | "gt" => Ok(PoseMode::GroundTruth),
            _ => Err(Error::Config(format!("unknown pose mode '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Input {
    Tum {
        path: PathBuf,
    },
    Suite {
        name: String,
        width: usize,
        height: usize,
    },
}

/// Detection and odometry settings shared by file-based and in-memory runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Settings {
    pub pose_mode: PoseMode,
    pub occlusion: OcclusionParams,
    pub dvo: DvoParams,
    /// Restrict odometry residuals to the background mask. Off gives plain
    /// robust DVO.
    pub mask_odometry: bool,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            pose_mode: PoseMode::Estimate,
            occlusion: OcclusionParams::default(),
            dvo: DvoParams::default(),
            mask_odometry: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub input: Input,
    pub settings: Settings,
    pub ext_trajectory: Option<PathBuf>,
    /// Overrides `intrinsics.txt` in the input directory and the default model.
    pub intrinsics: Option<CameraIntrinsics>,
    pub depth_scale: f64,
    pub assoc_tolerance: f64,
    /// Largest distance to a trajectory sample accepted for a frame pose.
    pub pose_max_gap: f64,
    pub out: PathBuf,
    pub eval_f1: bool,
    pub eval_rpe: bool,
    pub rpe_delta: usize,
    /// Directory of `<timestamp>.png` object masks for TUM input.
    pub gt_masks: Option<PathBuf>,
    /// Noise seed of synthetic suites.
    pub seed: u64,
}

impl RunConfig {
    pub fn new(input: Input, out: PathBuf) -> Self {
        RunConfig {
            input,
            settings: Settings::default(),
            ext_trajectory: None,
            intrinsics: None,
            depth_scale: DEFAULT_DEPTH_SCALE,
            assoc_tolerance: DEFAULT_ASSOC_TOLERANCE,
            pose_max_gap: 0.05,
            out,
            eval_f1: true,
            eval_rpe: true,
            rpe_delta: 150,
            gt_masks: None,
            seed: 7,
        }
    }

    pub fn suite(name: &str, out: PathBuf) -> Self {
        Self::new(
            Input::Suite {
                name: name.to_string(),
                width: SUITE_WIDTH,
                height: SUITE_HEIGHT,
            },
            out,
        )
    }

    pub fn validate(&self) -> Result<()> {
        self.settings.occlusion.validate()?;
        self.settings.dvo.validate()?;
        if let Some(k) = &self.intrinsics {
            k.validate()?;
        }
        if !(self.depth_scale > 0.0) {
            return Err(Error::Config(format!(
                "depth scale must be positive, got {}",
                self.depth_scale
            )));
        }
        if !(self.assoc_tolerance >= 0.0) || !(self.pose_max_gap >= 0.0) {
            return Err(Error::Config("tolerances must be non-negative".into()));
        }
        if self.settings.pose_mode == PoseMode::External && self.ext_trajectory.is_none() {
            return Err(Error::Config(
                "external pose mode needs a trajectory file".into(),
            ));
        }
        if let Input::Suite {
            name,
            width,
            height,
        } = &self.input
        {
            if suite(name, *width, *height).is_none() {
                return Err(Error::Config(format!("unknown synthetic suite '{name}'")));
            }
            if *width < 16 || *height < 12 {
                return Err(Error::Config(format!(
                    "suite resolution {width}x{height} is too small"
                )));
            }
        }
        Ok(())
    }
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config: RunConfig,
}

impl Manifest {
    pub fn new(config: RunConfig) -> Self {
        Manifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config,
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text =
            serde_json::to_string_pretty(self).map_err(|e| Error::format(path, e.to_string()))?;
        write_text(path, &(text + "\n"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdometryInfo {
    pub twist: Twist,
    pub iterations: usize,
    pub cost: f64,
}

#[derive(Debug, Clone)]
pub struct FrameStep {
    /// World-from-camera.
    pub pose: RigidTransform,
    /// Current-to-previous motion used for this frame; identity on the first.
    pub motion: RigidTransform,
    pub mask: Mask,
    pub detection: Option<StepOutput>,
    pub odometry: Option<OdometryInfo>,
}

/// Stateful frame-by-frame driver.
#[derive(Debug, Clone)]
pub struct Pipeline {
    k: CameraIntrinsics,
    settings: Settings,
    state: Option<AccumulationState>,
    pose: RigidTransform,
    last_twist: Twist,
    frame: usize,
}

impl Pipeline {
    pub fn new(k: CameraIntrinsics, settings: Settings) -> Result<Self> {
        k.validate()?;
        settings.occlusion.validate()?;
        settings.dvo.validate()?;
        Ok(Pipeline {
            k,
            settings,
            state: None,
            pose: RigidTransform::identity(),
            last_twist: Twist::zero(),
            frame: 0,
        })
    }

    pub fn state(&self) -> Option<&AccumulationState> {
        self.state.as_ref()
    }

    /// Processes the next frame. `known_pose` (world-from-camera) is required
    /// in the external and ground-truth modes and ignored when estimating.
    pub fn step(
        &mut self,
        intensity: IntensityImage,
        depth: DepthImage,
        known_pose: Option<RigidTransform>,
    ) -> Result<FrameStep> {
        let frame = self.frame;
        let estimate = self.settings.pose_mode == PoseMode::Estimate;
        let known = if estimate {
            None
        } else {
            Some(
                known_pose
                    .ok_or_else(|| Error::Config("missing frame pose".into()).at(frame, "pose"))?,
            )
        };
        let dims = self.k.dims();
        intensity
            .as_image()
            .ensure_dims(dims)
            .map_err(|e| e.at(frame, "input"))?;
        depth
            .as_image()
            .ensure_dims(dims)
            .map_err(|e| e.at(frame, "input"))?;

        let Some(state) = self.state.as_mut() else {
            self.pose = known.unwrap_or_else(RigidTransform::identity);
            self.state = Some(
                AccumulationState::new(intensity, depth).map_err(|e| e.at(frame, "detection"))?,
            );
            self.frame += 1;
            return Ok(FrameStep {
                pose: self.pose,
                motion: RigidTransform::identity(),
                mask: Image::filled(dims.0, dims.1, false),
                detection: None,
                odometry: None,
            });
        };

        let (motion, odometry) = match known {
            Some(p) => (self.pose.inverse() * p, None),
            None => {
                let init = match self.settings.dvo.warm_start {
                    WarmStart::Zero => Twist::zero(),
                    WarmStart::ConstantVelocity => self.last_twist,
                };
                let gate = self.settings.mask_odometry.then(|| state.background());
                let est = estimate_pose(
                    Frame::new(state.intensity(), state.depth()),
                    Frame::new(&intensity, &depth),
                    gate,
                    &init,
                    &self.settings.dvo,
                    &self.k,
                )
                .map_err(|e| e.at(frame, "odometry"))?;
                self.last_twist = est.twist;
                let info = OdometryInfo {
                    twist: est.twist,
                    iterations: est.iterations,
                    cost: est.report.cost,
                };
                (est.motion, Some(info))
            }
        };
        let out = state
            .step(intensity, depth, &motion, &self.k, &self.settings.occlusion)
            .map_err(|e| e.at(frame, "detection"))?;
        self.pose = known.unwrap_or(self.pose * motion);
        self.frame += 1;
        Ok(FrameStep {
            pose: self.pose,
            motion,
            mask: out.object_mask.clone(),
            detection: Some(out),
            odometry,
        })
    }
}

/// Result of running a synthetic scene in memory.
#[derive(Debug, Clone)]
pub struct SceneRun {
    pub steps: Vec<FrameStep>,
    pub gt_masks: Vec<Mask>,
    pub gt_poses: Vec<RigidTransform>,
    pub timestamps: Vec<f64>,
}

impl SceneRun {
    pub fn scores(&self) -> Result<Vec<FrameScore>> {
        self.steps
            .iter()
            .zip(&self.gt_masks)
            .map(|(s, g)| f1_frame(&s.mask, g))
            .collect()
    }

    pub fn segmentation(&self) -> Result<SegmentationScore> {
        SegmentationScore::from_frames(self.scores()?)
    }

    pub fn poses(&self) -> Vec<RigidTransform> {
        self.steps.iter().map(|s| s.pose).collect()
    }

    pub fn rpe(&self, delta: usize) -> Result<RpeScore> {
        rpe_poses(&self.poses(), &self.gt_poses, delta)
    }
}

/// Renders and processes a synthetic scene frame by frame.
pub fn run_scene(spec: &SceneSpec, settings: &Settings) -> Result<SceneRun> {
    spec.validate()?;
    let mut pipeline = Pipeline::new(spec.intrinsics, *settings)?;
    let mut run = SceneRun {
        steps: Vec::with_capacity(spec.frames),
        gt_masks: Vec::with_capacity(spec.frames),
        gt_poses: Vec::with_capacity(spec.frames),
        timestamps: Vec::with_capacity(spec.frames),
    };
    for i in 0..spec.frames {
        let f = render_frame(spec, i).map_err(|e| e.at(i, "render"))?;
        run.steps
            .push(pipeline.step(f.intensity, f.depth, Some(f.pose))?);
        run.gt_masks.push(f.mask);
        run.gt_poses.push(f.pose);
        run.timestamps.push(f.timestamp);
    }
    Ok(run)
}

/// Summary of a file-producing run.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub frames: usize,
    pub trajectory: Trajectory,
    pub segmentation: Option<SegmentationScore>,
    pub rpe: Option<RpeScore>,
}

struct LoadedFrame {
    timestamp: f64,
    intensity: IntensityImage,
    depth: DepthImage,
    pose: Option<RigidTransform>,
    gt_pose: Option<RigidTransform>,
    gt_mask: Option<Mask>,
}

enum Source {
    Tum {
        seq: Sequence,
        external: Option<Trajectory>,
        gt_masks: Vec<Option<PathBuf>>,
    },
    Suite {
        spec: SceneSpec,
        external: Option<Trajectory>,
    },
}

fn external_trajectory(config: &RunConfig) -> Result<Option<Trajectory>> {
    match (&config.settings.pose_mode, &config.ext_trajectory) {
        (PoseMode::External, Some(p)) => Ok(Some(read_trajectory(p)?)),
        _ => Ok(None),
    }
}

fn open_source(config: &RunConfig) -> Result<(Source, CameraIntrinsics)> {
    match &config.input {
        Input::Suite {
            name,
            width,
            height,
        } => {
            let mut spec = suite(name, *width, *height)
                .ok_or_else(|| Error::Config(format!("unknown synthetic suite '{name}'")))?;
            spec.seed = config.seed;
            if let Some(k) = config.intrinsics {
                spec.intrinsics = k;
            }
            let k = spec.intrinsics;
            let external = external_trajectory(config)?;
            Ok((Source::Suite { spec, external }, k))
        }
        Input::Tum { path } => {
            let mut entries = fs::read_dir(path).map_err(|e| Error::io(path, e))?;
            if entries.next().is_none() {
                return Err(Error::EmptySequence);
            }
            let seq = load_sequence(path, config.assoc_tolerance)?;
            let k = match config.intrinsics {
                Some(k) => k,
                None if path.join("intrinsics.txt").exists() => {
                    read_intrinsics(&path.join("intrinsics.txt"))?
                }
                None => CameraIntrinsics::default(),
            };
            let external = external_trajectory(config)?;
            let gt_masks = match &config.gt_masks {
                Some(dir) => {
                    let files = list_timestamped_pngs(dir)?;
                    let ft: Vec<f64> = files.iter().map(|f| f.0).collect();
                    let st: Vec<f64> = seq.frames.iter().map(|f| f.timestamp).collect();
                    let mut out = vec![None; seq.frames.len()];
                    for (i, j) in associate(&st, &ft, config.assoc_tolerance) {
                        out[i] = Some(files[j].1.clone());
                    }
                    out
                }
                None => {
                    let dir = path.join("masks");
                    if dir.is_dir() {
                        seq.frames
                            .iter()
                            .map(|f| {
                                let p = dir.join(format!("{}.png", timestamp_name(f.timestamp)));
                                p.exists().then_some(p)
                            })
                            .collect()
                    } else {
                        vec![None; seq.frames.len()]
                    }
                }
            };
            Ok((
                Source::Tum {
                    seq,
                    external,
                    gt_masks,
                },
                k,
            ))
        }
    }
}

impl Source {
    fn len(&self) -> usize {
        match self {
            Source::Tum { seq, .. } => seq.frames.len(),
            Source::Suite { spec, .. } => spec.frames,
        }
    }

    fn load(&self, i: usize, config: &RunConfig) -> Result<LoadedFrame> {
        match self {
            Source::Suite { spec, external } => {
                let f = render_frame(spec, i)?;
                let pose = match (config.settings.pose_mode, external) {
                    (PoseMode::Estimate, _) => None,
                    (PoseMode::External, Some(traj)) => {
                        Some(pose_lookup(traj, f.timestamp, config.pose_max_gap)?)
                    }
                    (PoseMode::External, None) => {
                        return Err(Error::Config("no external trajectory".into()))
                    }
                    (PoseMode::GroundTruth, _) => Some(f.pose),
                };
                Ok(LoadedFrame {
                    timestamp: f.timestamp,
                    intensity: f.intensity,
                    depth: f.depth,
                    pose,
                    gt_pose: Some(f.pose),
                    gt_mask: Some(f.mask),
                })
            }
            Source::Tum {
                seq,
                external,
                gt_masks,
            } => {
                let rec = &seq.frames[i];
                let intensity = to_gray(&read_rgb_png(&rec.rgb_path)?, LUMA_WEIGHTS);
                let depth = read_depth_png(&rec.depth_path, config.depth_scale)?;
                let pose = match config.settings.pose_mode {
                    PoseMode::Estimate => None,
                    PoseMode::External => {
                        let traj = external
                            .as_ref()
                            .ok_or_else(|| Error::Config("no external trajectory".into()))?;
                        Some(pose_lookup(traj, rec.timestamp, config.pose_max_gap)?)
                    }
                    PoseMode::GroundTruth => {
                        let gt = seq.groundtruth.as_ref().ok_or_else(|| {
                            Error::Config("sequence has no groundtruth.txt".into())
                        })?;
                        Some(pose_lookup(gt, rec.timestamp, config.pose_max_gap)?)
                    }
                };
                let gt_pose = seq
                    .groundtruth
                    .as_ref()
                    .and_then(|g| pose_lookup(g, rec.timestamp, config.pose_max_gap).ok());
                let gt_mask = gt_masks[i].as_deref().map(read_mask_png).transpose()?;
                Ok(LoadedFrame {
                    timestamp: rec.timestamp,
                    intensity,
                    depth,
                    pose,
                    gt_pose,
                    gt_mask,
                })
            }
        }
    }
}

/// Runs the configured sequence and writes masks/, trajectory.txt, f1.csv,
/// rpe.csv and manifest.json into `config.out`.
pub fn run(config: &RunConfig) -> Result<RunReport> {
    config.validate()?;
    let (source, k) = open_source(config)?;
    let n = source.len();
    if n == 0 {
        return Err(Error::EmptySequence);
    }
    let out = &config.out;
    fs::create_dir_all(out.join("masks")).map_err(|e| Error::io(out, e))?;
    Manifest::new(config.clone()).write(&out.join("manifest.json"))?;

    let mut pipeline = Pipeline::new(k, config.settings)?;
    let mut trajectory = Trajectory::new();
    let mut scores = Vec::new();
    let mut score_times = Vec::new();
    let mut est_poses = Vec::new();
    let mut gt_poses = Vec::new();
    let mut pose_times = Vec::new();
    for i in 0..n {
        let f = source.load(i, config).map_err(|e| e.at(i, "load"))?;
        let step = pipeline.step(f.intensity, f.depth, f.pose)?;
        write_mask_png(
            &out.join("masks")
                .join(format!("{}.png", timestamp_name(f.timestamp))),
            &step.mask,
        )
        .map_err(|e| e.at(i, "write"))?;
        trajectory
            .push(f.timestamp, step.pose)
            .map_err(|e| e.at(i, "trajectory"))?;
        if config.eval_f1 {
            if let Some(gt) = &f.gt_mask {
                scores.push(f1_frame(&step.mask, gt).map_err(|e| e.at(i, "eval"))?);
                score_times.push(f.timestamp);
            }
        }
        if let Some(g) = f.gt_pose {
            est_poses.push(step.pose);
            gt_poses.push(g);
            pose_times.push(f.timestamp);
        }
        log::debug!("frame {i}: {} object pixels", step.mask.count());
    }
    write_trajectory(&trajectory, &out.join("trajectory.txt"))?;

    let segmentation = if scores.is_empty() {
        None
    } else {
        let s = SegmentationScore::from_frames(scores)?;
        write_f1_csv(&out.join("f1.csv"), &score_times, &s)?;
        Some(s)
    };
    let rpe = if config.eval_rpe && !gt_poses.is_empty() {
        match rpe_poses(&est_poses, &gt_poses, config.rpe_delta) {
            Ok(r) => {
                write_rpe_csv(&out.join("rpe.csv"), &pose_times, &r)?;
                Some(r)
            }
            Err(e @ Error::InsufficientTrajectory { .. }) => {
                log::warn!("skipping relative pose error: {e}");
                None
            }
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    Ok(RunReport {
        frames: n,
        trajectory,
        segmentation,
        rpe,
    })
}
