//! Trajectory accuracy: absolute translation error after rigid alignment,
//! relative pose error, and the error of dynamic point tracks.

mod tum;

pub use tum::{read_tum, write_tum};

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::geometry::{Point3, Pose, Rotation};
use crate::numfmt::sig;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("frame indices must be strictly increasing (frame {0})")]
    UnorderedFrames(u32),
    #[error("trajectories share {found} frames, need at least {needed}")]
    InsufficientOverlap { found: usize, needed: usize },
    #[error("no common point keys")]
    NoCommonPoints,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Camera poses ordered by frame index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    frames: Vec<u32>,
    poses: Vec<Pose>,
}

impl Trajectory {
    pub fn new(entries: Vec<(u32, Pose)>) -> Result<Self, MetricsError> {
        for w in entries.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(MetricsError::UnorderedFrames(w[1].0));
            }
        }
        let (frames, poses) = entries.into_iter().unzip();
        Ok(Trajectory { frames, poses })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[u32] {
        &self.frames
    }

    pub fn poses(&self) -> &[Pose] {
        &self.poses
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &Pose)> {
        self.frames.iter().copied().zip(&self.poses)
    }

    /// Every pose premultiplied by `g`.
    pub fn transformed(&self, g: &Pose) -> Trajectory {
        Trajectory { frames: self.frames.clone(), poses: self.poses.iter().map(|p| g.compose(p)).collect() }
    }
}

/// Pairs of poses at the frames both trajectories contain, in frame order.
fn common(est: &Trajectory, gt: &Trajectory) -> Vec<(Pose, Pose)> {
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::new();
    while i < est.frames.len() && j < gt.frames.len() {
        match est.frames[i].cmp(&gt.frames[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push((est.poses[i], gt.poses[j]));
                i += 1;
                j += 1;
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlignMode {
    /// Least-squares rigid transform over all common translations.
    Rigid,
    /// Transform mapping the first estimated pose onto the first true pose.
    FirstFrame,
}

impl AlignMode {
    pub fn name(self) -> &'static str {
        match self {
            AlignMode::Rigid => "rigid",
            AlignMode::FirstFrame => "first-frame",
        }
    }
}

/// Transform `A` with `A * est ~ gt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alignment {
    pub transform: Pose,
    pub mode: AlignMode,
    /// Fewer than three common frames or collinear positions: the rotation
    /// about the line of positions is not determined by the data.
    pub degenerate: bool,
}

/// Least-squares rotation `R` and translation `t` with `R a_k + t ~ b_k`
/// (Kabsch, no scale). Also reports whether the rotation is underdetermined.
///
/// When the cross-covariance has rank one (two frames, or collinear
/// positions) every rotation taking its right singular vector to its left
/// one is optimal; the smallest such rotation is used.
fn procrustes(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> (Matrix3<f64>, Vector3<f64>, bool) {
    let n = a.len() as f64;
    let ca = a.iter().sum::<Vector3<f64>>() / n;
    let cb = b.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    for (x, y) in a.iter().zip(b) {
        h += (y - cb) * (x - ca).transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let s0 = svd.singular_values[order[0]];
    let s1 = svd.singular_values[order[1]];
    let rank_one = s1 <= 1e-9 * s0;
    let r = if s0 <= f64::MIN_POSITIVE {
        Matrix3::identity()
    } else if rank_one {
        let from = v_t.row(order[0]).transpose();
        let to = u.column(order[0]).into_owned();
        minimal_rotation(&from, &to)
    } else {
        let mut d = Matrix3::identity();
        if (u * v_t).determinant() < 0.0 {
            d[(2, 2)] = -1.0;
        }
        u * d * v_t
    };
    (r, cb - r * ca, a.len() < 3 || rank_one)
}

/// Smallest rotation taking unit vector `from` to unit vector `to`.
fn minimal_rotation(from: &Vector3<f64>, to: &Vector3<f64>) -> Matrix3<f64> {
    match nalgebra::Rotation3::rotation_between(from, to) {
        Some(r) => r.into_inner(),
        // Opposite vectors: half turn about any perpendicular axis.
        None => {
            let axis = from.cross(&Vector3::x());
            let axis = if axis.norm() < 1e-6 { from.cross(&Vector3::y()) } else { axis };
            nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), std::f64::consts::PI).into_inner()
        }
    }
}

pub fn align(est: &Trajectory, gt: &Trajectory, mode: AlignMode) -> Result<Alignment, MetricsError> {
    let pairs = common(est, gt);
    if pairs.is_empty() {
        return Err(MetricsError::InsufficientOverlap { found: 0, needed: 1 });
    }
    if mode == AlignMode::FirstFrame || pairs.len() == 1 {
        let (e, g) = pairs[0];
        let degenerate = mode == AlignMode::Rigid;
        return Ok(Alignment { transform: g.compose(&e.inverse()), mode: AlignMode::FirstFrame, degenerate });
    }
    let a: Vec<Vector3<f64>> = pairs.iter().map(|(e, _)| e.translation).collect();
    let b: Vec<Vector3<f64>> = pairs.iter().map(|(_, g)| g.translation).collect();
    let (r, t, degenerate) = procrustes(&a, &b);
    let rotation = Rotation::from_unit_quaternion(nalgebra::UnitQuaternion::from_matrix(&r));
    Ok(Alignment { transform: Pose::new(rotation, t), mode, degenerate })
}

/// RMSE of aligned translation errors, plus the per-frame errors.
pub fn ate(est: &Trajectory, gt: &Trajectory, mode: AlignMode) -> Result<(f64, Vec<f64>, Alignment), MetricsError> {
    let alignment = align(est, gt, mode)?;
    let errors: Vec<f64> = common(est, gt)
        .iter()
        .map(|(e, g)| (alignment.transform.act(&e.translation) - g.translation).norm())
        .collect();
    Ok((rmse(&errors), errors, alignment))
}

fn rmse(errors: &[f64]) -> f64 {
    if errors.is_empty() {
        return 0.0;
    }
    (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt()
}

/// Relative pose error over steps of `delta` common frames.
#[derive(Debug, Clone, PartialEq)]
pub struct RelativeError {
    pub rot_rmse_deg: f64,
    pub trans_rmse: f64,
    pub rot_deg: Vec<f64>,
    pub trans: Vec<f64>,
}

pub fn rpe(est: &Trajectory, gt: &Trajectory, delta: usize) -> Result<RelativeError, MetricsError> {
    let pairs = common(est, gt);
    let delta = delta.max(1);
    if pairs.len() < delta + 1 {
        return Err(MetricsError::InsufficientOverlap { found: pairs.len(), needed: delta + 1 });
    }
    let mut rot_deg = Vec::new();
    let mut trans = Vec::new();
    for k in 0..pairs.len() - delta {
        let (e0, g0) = pairs[k];
        let (e1, g1) = pairs[k + delta];
        let rel_gt = g0.inverse().compose(&g1);
        let rel_est = e0.inverse().compose(&e1);
        let err = rel_gt.inverse().compose(&rel_est);
        rot_deg.push(err.rotation.angle().to_degrees());
        trans.push(err.translation.norm());
    }
    Ok(RelativeError { rot_rmse_deg: rmse(&rot_deg), trans_rmse: rmse(&trans), rot_deg, trans })
}

/// RMSE of point position errors over the common keys, after mapping the
/// estimates with the camera alignment.
pub fn dynamic_point_ate<K: Ord>(
    est: &BTreeMap<K, Point3>,
    gt: &BTreeMap<K, Point3>,
    alignment: &Pose,
) -> Result<f64, MetricsError> {
    let errors: Vec<f64> = est
        .iter()
        .filter_map(|(k, p)| gt.get(k).map(|g| (alignment.act(p) - g).norm()))
        .collect();
    if errors.is_empty() {
        return Err(MetricsError::NoCommonPoints);
    }
    Ok(rmse(&errors))
}

/// Camera accuracy of one estimate against ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub ate_rmse: f64,
    pub rpe_rot_rmse_deg: f64,
    pub rpe_trans_rmse: f64,
    pub ate_series: Vec<f64>,
    pub rpe: RelativeError,
    pub delta: usize,
    pub alignment: Alignment,
}

pub fn evaluate(est: &Trajectory, gt: &Trajectory, mode: AlignMode, delta: usize) -> Result<MetricReport, MetricsError> {
    let (ate_rmse, ate_series, alignment) = ate(est, gt, mode)?;
    let rpe = rpe(est, gt, delta)?;
    Ok(MetricReport {
        ate_rmse,
        rpe_rot_rmse_deg: rpe.rot_rmse_deg,
        rpe_trans_rmse: rpe.trans_rmse,
        ate_series,
        rpe,
        delta: delta.max(1),
        alignment,
    })
}

impl MetricReport {
    pub const CSV_HEADER: &'static str = "ate_m,rpe_rot_deg,rpe_trans_m,frames,delta,alignment,degenerate";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            sig(self.ate_rmse, 9),
            sig(self.rpe_rot_rmse_deg, 9),
            sig(self.rpe_trans_rmse, 9),
            self.ate_series.len(),
            self.delta,
            self.alignment.mode.name(),
            self.alignment.degenerate
        )
    }

    /// Flat `key value` record.
    pub fn to_record(&self) -> String {
        let mut out = String::new();
        let t = &self.alignment.transform;
        let [qw, qx, qy, qz] = t.rotation.wxyz();
        let _ = writeln!(out, "ate_m {}", sig(self.ate_rmse, 9));
        let _ = writeln!(out, "rpe_rot_deg {}", sig(self.rpe_rot_rmse_deg, 9));
        let _ = writeln!(out, "rpe_trans_m {}", sig(self.rpe_trans_rmse, 9));
        let _ = writeln!(out, "frames {}", self.ate_series.len());
        let _ = writeln!(out, "rpe_delta {}", self.delta);
        let _ = writeln!(out, "alignment {}", self.alignment.mode.name());
        let _ = writeln!(out, "alignment_degenerate {}", self.alignment.degenerate);
        let nums: Vec<String> =
            [t.translation.x, t.translation.y, t.translation.z, qx, qy, qz, qw].iter().map(|v| sig(*v, 9)).collect();
        let _ = writeln!(out, "alignment_transform {}", nums.join(" "));
        out
    }
}
