//! Seeded scenario generator: a camera moving past static landmarks and
//! articulated objects under constant motion, with noisy 3D measurements
//! inside a finite field of view. Also builds the factor graph for each
//! ablation mode and runs the ablation study.

mod ablation;
mod config;
pub mod rng;
mod strategy;

pub use ablation::{
    corrupt_motion_factors, run_ablation, AblationOptions, AblationTable, CellMetrics, CellResult, ModeSummary,
    Stat,
};
pub use config::{
    cart, human14, preset, walker, CameraConfig, FovConfig, GraphOptions, MotionConfig, MotionSharing,
    NoiseConfig, ObjectConfig, PartConfig, RigidityTopology, SimConfig, StaticConfig, Waypoint, PRESET_NAMES,
};
pub use strategy::{build_graph, AblationMode, Assembled, BeforeBa, BuildInput, Components, GraphStrategy, StrategyRegistry};

use std::collections::BTreeMap;

use nalgebra::Vector3;
use thiserror::Error;

use crate::geometry::{Point3, Pose, Rotation, Twist};
use crate::graph::{GraphError, Values, VariableId};
use crate::metrics::Trajectory;
use rng::{gaussian3, stream, Stream};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error("mode {mode} needs {missing}, which the dataset does not contain")]
    ModeMismatch { mode: String, missing: &'static str },
    #[error("unknown mode {0:?}")]
    UnknownMode(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// What a measurement refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Landmark {
    Static(u32),
    Dynamic { object: u32, part: u32, point: u32 },
}

impl Landmark {
    /// Graph variable of this landmark at `frame`.
    pub fn variable(self, frame: u32) -> VariableId {
        match self {
            Landmark::Static(point) => VariableId::StaticPoint { point },
            Landmark::Dynamic { object, part, point } => VariableId::DynamicPoint { object, part, point, frame },
        }
    }
}

/// A landmark measured in the camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub landmark: Landmark,
    pub z: Point3,
}

/// True state of one rigid part.
#[derive(Debug, Clone, PartialEq)]
pub struct PartTruth {
    pub object: u32,
    pub part: u32,
    /// World motion applied between every pair of consecutive frames.
    pub motion: Pose,
    /// `tracks[point][frame]`.
    pub tracks: Vec<Vec<Point3>>,
    /// Point pairs carrying a rigidity constraint, with their lengths.
    pub segments: Vec<(u32, u32, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub cameras: Vec<Pose>,
    pub static_points: Vec<Point3>,
    pub parts: Vec<PartTruth>,
    pub sharing: MotionSharing,
}

impl GroundTruth {
    pub fn trajectory(&self) -> Trajectory {
        Trajectory::new(self.cameras.iter().enumerate().map(|(k, p)| (k as u32, *p)).collect())
            .expect("frames are consecutive")
    }

    /// `(object, part, point, frame)` to position, for every frame.
    pub fn dynamic_points(&self) -> BTreeMap<(u32, u32, u32, u32), Point3> {
        let mut out = BTreeMap::new();
        for part in &self.parts {
            for (i, track) in part.tracks.iter().enumerate() {
                for (k, p) in track.iter().enumerate() {
                    out.insert((part.object, part.part, i as u32, k as u32), *p);
                }
            }
        }
        out
    }

    /// Every variable of every mode at its true value.
    pub fn values(&self) -> Values {
        let mut v = Values::new();
        let ins = |v: &mut Values, id, val| v.insert(id, val).expect("ids are unique");
        for (k, p) in self.cameras.iter().enumerate() {
            ins(&mut v, VariableId::CameraPose { frame: k as u32 }, crate::graph::Value::Pose(*p));
        }
        for (i, p) in self.static_points.iter().enumerate() {
            ins(&mut v, VariableId::StaticPoint { point: i as u32 }, crate::graph::Value::Point(*p));
        }
        for part in &self.parts {
            let (object, pid) = (part.object, part.part);
            for (i, track) in part.tracks.iter().enumerate() {
                for (k, p) in track.iter().enumerate() {
                    let id = VariableId::DynamicPoint { object, part: pid, point: i as u32, frame: k as u32 };
                    ins(&mut v, id, crate::graph::Value::Point(*p));
                }
            }
            for &(i, j, s) in &part.segments {
                ins(&mut v, VariableId::SegmentLength { object, part: pid, i, j }, crate::graph::Value::Scalar(s));
            }
            for frame in motion_frames(self.sharing, self.cameras.len() as u32) {
                ins(&mut v, VariableId::ObjectMotion { object, part: pid, frame }, crate::graph::Value::Pose(part.motion));
            }
        }
        v
    }
}

/// Frames that key the motion variables of one part.
pub(crate) fn motion_frames(sharing: MotionSharing, frames: u32) -> std::ops::Range<u32> {
    match sharing {
        MotionSharing::PerPart => 0..1,
        MotionSharing::PerFramePair => 0..frames.saturating_sub(1),
    }
}

/// Noisy measurements per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SimDataset {
    pub frames: Vec<Vec<Measurement>>,
    /// Measurement standard deviation used for generation.
    pub sigma: f64,
    pub options: GraphOptions,
    /// Rigidity pairs per `(object, part)`.
    pub segments: BTreeMap<(u32, u32), Vec<(u32, u32)>>,
    pub warnings: Vec<String>,
}

impl SimDataset {
    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    /// `(static, dynamic)` measurement counts of one frame.
    pub fn visible_counts(&self, frame: usize) -> (usize, usize) {
        let s = self.frames[frame].iter().filter(|m| matches!(m.landmark, Landmark::Static(_))).count();
        (s, self.frames[frame].len() - s)
    }

    pub fn measurement(&self, frame: usize, landmark: Landmark) -> Option<&Measurement> {
        self.frames.get(frame)?.iter().find(|m| m.landmark == landmark)
    }

    pub fn was_visible(&self, frame: usize, landmark: Landmark) -> bool {
        self.measurement(frame, landmark).is_some()
    }

    /// Dynamic measurements per static measurement over the sequence.
    pub fn dynamic_per_static(&self) -> f64 {
        let (s, d) = (0..self.frames.len()).map(|k| self.visible_counts(k)).fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
        d as f64 / s.max(1) as f64
    }

    pub fn has_static(&self) -> bool {
        self.frames.iter().flatten().any(|m| matches!(m.landmark, Landmark::Static(_)))
    }

    pub fn has_dynamic(&self) -> bool {
        self.frames.iter().flatten().any(|m| matches!(m.landmark, Landmark::Dynamic { .. }))
    }
}

fn v3(a: [f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

fn camera_pose(cfg: &CameraConfig, frame: u32, frames: u32) -> Pose {
    let w = &cfg.waypoints;
    let (a, b, t) = if w.len() == 1 {
        (w[0], w[0], 0.0)
    } else {
        let u = frame as f64 / (frames - 1) as f64 * (w.len() - 1) as f64;
        let i = (u.floor() as usize).min(w.len() - 2);
        (w[i], w[i + 1], u - i as f64)
    };
    let pos = v3(a.position) * (1.0 - t) + v3(b.position) * t;
    let yaw = a.yaw_deg * (1.0 - t) + b.yaw_deg * t;
    Pose::new(Rotation::from_yaw_deg(yaw), pos)
}

pub fn part_motion(m: &MotionConfig) -> Pose {
    let omega = v3(m.omega_deg).map(f64::to_radians);
    let c = Pose::from_translation(v3(m.pivot));
    c.compose(&Pose::exp(&Twist::new(omega, v3(m.velocity)))).compose(&c.inverse())
}

fn in_view(fov: &FovConfig, camera: &Pose, p: &Point3) -> bool {
    let q = camera.inverse_act(p);
    let r = q.norm();
    if r > fov.max_range || r == 0.0 {
        return false;
    }
    let angle = (q.z / r).clamp(-1.0, 1.0).acos().to_degrees();
    angle <= fov.half_angle_deg
}

pub(crate) fn rigidity_pairs(n: u32, topology: RigidityTopology) -> Vec<(u32, u32)> {
    match topology {
        RigidityTopology::Clique => (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect(),
        RigidityTopology::ChainCross => {
            let mut pairs: Vec<(u32, u32)> = (0..n.saturating_sub(1)).map(|i| (i, i + 1)).collect();
            if n >= 3 {
                pairs.push((0, n - 1));
            }
            pairs
        }
    }
}

/// Ground truth and measurements for `config`. Pure in `config`.
pub fn generate(config: &SimConfig) -> Result<(GroundTruth, SimDataset), SimError> {
    config.validate()?;
    let n = config.frames;
    let seed = config.seed;
    let cameras: Vec<Pose> = (0..n).map(|k| camera_pose(&config.camera, k, n)).collect();
    let sc = &config.static_landmarks;
    let static_points: Vec<Point3> = (0..sc.count)
        .map(|i| {
            let mut r = stream(seed, Stream::StaticPosition { point: i });
            Vector3::from_fn(|a, _| {
                let u: f64 = rand::Rng::random(&mut r);
                sc.box_min[a] + u * (sc.box_max[a] - sc.box_min[a])
            })
        })
        .collect();

    let mut parts = Vec::new();
    let mut segments = BTreeMap::new();
    for (l, obj) in config.objects.iter().enumerate() {
        for (r, pc) in obj.parts.iter().enumerate() {
            let motion = part_motion(&pc.motion);
            let tracks: Vec<Vec<Point3>> = pc
                .points
                .iter()
                .map(|p0| {
                    let mut p = v3(*p0);
                    (0..n)
                        .map(|k| {
                            if k > 0 {
                                p = motion.act(&p);
                            }
                            p
                        })
                        .collect()
                })
                .collect();
            let pairs = rigidity_pairs(pc.points.len() as u32, config.graph.rigidity);
            let segs = pairs
                .iter()
                .map(|&(i, j)| (i, j, (v3(pc.points[i as usize]) - v3(pc.points[j as usize])).norm()))
                .collect();
            segments.insert((l as u32, r as u32), pairs);
            parts.push(PartTruth { object: l as u32, part: r as u32, motion, tracks, segments: segs });
        }
    }

    let sigma = config.noise.measurement;
    let mut frames = Vec::with_capacity(n as usize);
    let mut warnings = Vec::new();
    let mut tracked: Vec<bool> = vec![false; static_points.len()];
    for k in 0..n {
        let cam = &cameras[k as usize];
        let mut candidates: Vec<(bool, f64, u32)> = static_points
            .iter()
            .enumerate()
            .filter(|(_, p)| in_view(&config.fov, cam, p))
            .map(|(i, p)| (!tracked[i], (cam.translation - p).norm(), i as u32))
            .collect();
        candidates.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)));
        candidates.truncate(sc.visible_per_frame as usize);
        let mut chosen: Vec<u32> = candidates.iter().map(|c| c.2).collect();
        chosen.sort_unstable();
        tracked.iter_mut().for_each(|t| *t = false);
        let mut meas = Vec::new();
        for &i in &chosen {
            tracked[i as usize] = true;
            let mut r = stream(seed, Stream::StaticMeasurement { point: i, frame: k });
            let z = cam.inverse_act(&static_points[i as usize]) + gaussian3(&mut r, sigma);
            meas.push(Measurement { landmark: Landmark::Static(i), z });
        }
        if chosen.is_empty() {
            warnings.push(format!("frame {k}: no static landmark in view"));
        }
        for part in &parts {
            for (i, track) in part.tracks.iter().enumerate() {
                let p = &track[k as usize];
                if !in_view(&config.fov, cam, p) {
                    continue;
                }
                let point = i as u32;
                let (object, pid) = (part.object, part.part);
                let mut r = stream(seed, Stream::DynamicMeasurement { object, part: pid, point, frame: k });
                let z = cam.inverse_act(p) + gaussian3(&mut r, sigma);
                meas.push(Measurement { landmark: Landmark::Dynamic { object, part: pid, point }, z });
            }
        }
        frames.push(meas);
    }
    let truth = GroundTruth { cameras, static_points, parts, sharing: config.graph.motion };
    Ok((truth, SimDataset { frames, sigma, options: config.graph, segments, warnings }))
}

/// Initial guess for every variable the dataset can support. Frame 0 keeps
/// its true pose (it anchors the gauge); every other camera becomes
/// `exp(xi) * P` for a random twist `xi`. Points come from back-projecting
/// their measurement through the noisy camera.
pub fn perturb_initialization(truth: &GroundTruth, dataset: &SimDataset, config: &SimConfig) -> Values {
    let mut values = Values::new();
    let rot_sigma = config.noise.init_rotation_deg.to_radians();
    let trans_sigma = config.noise.init_translation;
    let mut poses = Vec::with_capacity(truth.cameras.len());
    for (k, gt) in truth.cameras.iter().enumerate() {
        let pose = if k == 0 || (rot_sigma == 0.0 && trans_sigma == 0.0) {
            *gt
        } else {
            let mut r = stream(config.seed, Stream::InitPose { frame: k as u32 });
            let omega = gaussian3(&mut r, rot_sigma);
            let v = gaussian3(&mut r, trans_sigma);
            Pose::exp(&Twist::new(omega, v)).compose(gt)
        };
        poses.push(pose);
        values.insert_pose(VariableId::CameraPose { frame: k as u32 }, pose).expect("fresh id");
    }
    for (k, meas) in dataset.frames.iter().enumerate() {
        for m in meas {
            let id = m.landmark.variable(k as u32);
            if !values.contains(&id) {
                values.insert_point(id, poses[k].act(&m.z)).expect("fresh id");
            }
        }
    }
    for (&(object, part), pairs) in &dataset.segments {
        for &(i, j) in pairs {
            let first = (0..dataset.frames.len() as u32).find_map(|k| {
                let a = values.point(&VariableId::DynamicPoint { object, part, point: i, frame: k }).ok()?;
                let b = values.point(&VariableId::DynamicPoint { object, part, point: j, frame: k }).ok()?;
                Some((a - b).norm())
            });
            if let Some(s) = first {
                values.insert_scalar(VariableId::SegmentLength { object, part, i, j }, s).expect("fresh id");
            }
        }
        for frame in motion_frames(dataset.options.motion, dataset.frames.len() as u32) {
            values.insert_pose(VariableId::ObjectMotion { object, part, frame }, Pose::identity()).expect("fresh id");
        }
    }
    values
}
