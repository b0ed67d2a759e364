//! Segmentation and trajectory metrics.
//!
//! F1 is computed per frame and averaged over the frames that contain a
//! ground-truth object. Relative pose error uses a fixed frame offset and
//! reports translational RMSE in meters and rotational RMSE in degrees.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::dataset::{associate, write_text, Trajectory};
use crate::error::{Error, Result};
use crate::geometry::RigidTransform;
use crate::image::Mask;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrameScore {
    /// NaN when nothing was predicted.
    pub precision: f64,
    /// NaN when the ground truth is empty.
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl FrameScore {
    /// Whether this frame enters the sequence mean (ground truth present).
    pub fn counts(&self) -> bool {
        self.tp + self.fn_ > 0
    }
}

pub fn f1_frame(pred: &Mask, gt: &Mask) -> Result<FrameScore> {
    gt.ensure_dims(pred.dims())?;
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        match (p, g) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    Ok(score_from_counts(tp, fp, fn_))
}

pub fn score_from_counts(tp: usize, fp: usize, fn_: usize) -> FrameScore {
    let ratio = |n: usize, d: usize| {
        if d == 0 {
            f64::NAN
        } else {
            n as f64 / d as f64
        }
    };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if tp == 0 {
        // covers empty predictions, empty ground truth and disjoint masks;
        // the all-empty frame is excluded from the mean anyway
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    FrameScore {
        precision,
        recall,
        f1,
        tp,
        fp,
        fn_,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentationScore {
    pub frames: Vec<FrameScore>,
    /// Mean F1 over frames with nonempty ground truth; `None` if there are none.
    pub mean_f1: Option<f64>,
}

impl SegmentationScore {
    pub fn from_frames(frames: Vec<FrameScore>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::EmptySequence);
        }
        let counted: Vec<f64> = frames.iter().filter(|f| f.counts()).map(|f| f.f1).collect();
        let mean_f1 =
            (!counted.is_empty()).then(|| counted.iter().sum::<f64>() / counted.len() as f64);
        Ok(SegmentationScore { frames, mean_f1 })
    }

    pub fn counted_frames(&self) -> usize {
        self.frames.iter().filter(|f| f.counts()).count()
    }
}

pub fn f1_sequence(frames: &[(Mask, Mask)]) -> Result<SegmentationScore> {
    let scores = frames
        .iter()
        .map(|(p, g)| f1_frame(p, g))
        .collect::<Result<Vec<_>>>()?;
    SegmentationScore::from_frames(scores)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairError {
    /// Index of the first pose of the pair.
    pub index: usize,
    pub translation: f64,
    /// Degrees.
    pub rotation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RpeScore {
    pub delta: usize,
    pub trans_rmse: f64,
    /// Degrees.
    pub rot_rmse: f64,
    pub pairs: Vec<PairError>,
}

/// Relative pose error between two index-aligned pose lists (world-from-camera).
pub fn rpe_poses(
    estimated: &[RigidTransform],
    gt: &[RigidTransform],
    delta: usize,
) -> Result<RpeScore> {
    if estimated.len() != gt.len() {
        return Err(Error::Config(format!(
            "trajectory lengths differ: {} estimated vs {} ground truth",
            estimated.len(),
            gt.len()
        )));
    }
    let n = estimated.len();
    if n == 0 || (delta > 0 && n <= delta) {
        return Err(Error::InsufficientTrajectory { poses: n, delta });
    }
    let pairs: Vec<PairError> = (0..n - delta)
        .map(|i| {
            let q = gt[i].inverse() * gt[i + delta];
            let p = estimated[i].inverse() * estimated[i + delta];
            let e = q.inverse() * p;
            PairError {
                index: i,
                translation: e.translation.norm(),
                rotation: e.rotation_angle().to_degrees(),
            }
        })
        .collect();
    let rmse = |f: fn(&PairError) -> f64| {
        if pairs.is_empty() {
            0.0
        } else {
            (pairs.iter().map(|p| f(p).powi(2)).sum::<f64>() / pairs.len() as f64).sqrt()
        }
    };
    Ok(RpeScore {
        delta,
        trans_rmse: rmse(|p| p.translation),
        rot_rmse: rmse(|p| p.rotation),
        pairs,
    })
}

/// Relative pose error after associating the trajectories by timestamp.
pub fn rpe(
    estimated: &Trajectory,
    gt: &Trajectory,
    delta: usize,
    tolerance: f64,
) -> Result<RpeScore> {
    let pairs = associate(&estimated.timestamps(), &gt.timestamps(), tolerance);
    let est: Vec<RigidTransform> = pairs.iter().map(|&(i, _)| estimated.poses()[i].1).collect();
    let reference: Vec<RigidTransform> = pairs.iter().map(|&(_, j)| gt.poses()[j].1).collect();
    rpe_poses(&est, &reference, delta)
}

fn num(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        format!("{v:.6}")
    }
}

/// `timestamp,precision,recall,f1` per frame and a closing `mean` row.
pub fn f1_csv(timestamps: &[f64], score: &SegmentationScore) -> String {
    let mut s = String::from("timestamp,precision,recall,f1\n");
    for (t, f) in timestamps.iter().zip(&score.frames) {
        let _ = writeln!(
            s,
            "{t:.6},{},{},{}",
            num(f.precision),
            num(f.recall),
            num(f.f1)
        );
    }
    let _ = writeln!(
        s,
        "mean,,,{}",
        score.mean_f1.map(num).unwrap_or_else(|| "nan".to_string())
    );
    s
}

/// Per-pair errors followed by an `rmse` row.
pub fn rpe_csv(timestamps: &[f64], score: &RpeScore) -> String {
    let mut s = String::from("timestamp,trans_m,rot_deg\n");
    for p in &score.pairs {
        let t = timestamps.get(p.index).copied().unwrap_or(p.index as f64);
        let _ = writeln!(s, "{t:.6},{},{}", num(p.translation), num(p.rotation));
    }
    let _ = writeln!(s, "rmse,{},{}", num(score.trans_rmse), num(score.rot_rmse));
    s
}

pub fn write_f1_csv(path: &Path, timestamps: &[f64], score: &SegmentationScore) -> Result<()> {
    write_text(path, &f1_csv(timestamps, score))
}

pub fn write_rpe_csv(path: &Path, timestamps: &[f64], score: &RpeScore) -> Result<()> {
    write_text(path, &rpe_csv(timestamps, score))
}
