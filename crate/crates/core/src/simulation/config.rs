//! Scenario configuration and the built-in presets.

use serde::{Deserialize, Serialize};

use super::SimError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub name: String,
    pub frames: u32,
    pub seed: u64,
    /// Target number of dynamic observations per static observation.
    pub dynamic_per_static: f64,
    pub camera: CameraConfig,
    pub static_landmarks: StaticConfig,
    pub noise: NoiseConfig,
    pub fov: FovConfig,
    pub graph: GraphOptions,
    pub objects: Vec<ObjectConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraConfig {
    /// Visited at evenly spaced frames; positions and yaw are interpolated
    /// linearly in between.
    pub waypoints: Vec<Waypoint>,
}

/// Camera axes: z forward, y down. Yaw turns about y.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoint {
    pub position: [f64; 3],
    pub yaw_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StaticConfig {
    pub count: u32,
    pub box_min: [f64; 3],
    pub box_max: [f64; 3],
    /// At most this many static landmarks are measured per frame.
    pub visible_per_frame: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub init_translation: f64,
    pub init_rotation_deg: f64,
    pub measurement: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FovConfig {
    pub max_range: f64,
    /// Cone around the forward axis. 180 sees everything.
    pub half_angle_deg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RigidityTopology {
    /// Consecutive points plus one pair closing the chain.
    ChainCross,
    Clique,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MotionSharing {
    /// One motion per part for the whole sequence.
    PerPart,
    /// One motion per part and consecutive frame pair.
    PerFramePair,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphOptions {
    pub rigidity: RigidityTopology,
    pub motion: MotionSharing,
    /// Factor standard deviations never drop below this, so a noiseless
    /// scenario still has finite weights.
    pub min_sigma: f64,
}

impl Default for GraphOptions {
    fn default() -> Self {
        GraphOptions { rigidity: RigidityTopology::ChainCross, motion: MotionSharing::PerPart, min_sigma: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectConfig {
    pub name: String,
    pub parts: Vec<PartConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartConfig {
    pub name: String,
    /// World coordinates at frame 0.
    pub points: Vec<[f64; 3]>,
    pub motion: MotionConfig,
}

/// Per-frame world motion `C exp(omega, v) C^-1` with `C` the translation
/// to `pivot`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionConfig {
    pub omega_deg: [f64; 3],
    pub velocity: [f64; 3],
    pub pivot: [f64; 3],
}

impl MotionConfig {
    fn translation(v: [f64; 3]) -> Self {
        MotionConfig { omega_deg: [0.0; 3], velocity: v, pivot: [0.0; 3] }
    }
}

fn finite(xs: &[f64]) -> bool {
    xs.iter().all(|x| x.is_finite())
}

impl SimConfig {
    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        if self.frames < 2 {
            return bad("frames must be at least 2".into());
        }
        if self.camera.waypoints.is_empty() {
            return bad("camera.waypoints must not be empty".into());
        }
        if self.camera.waypoints.iter().any(|w| !finite(&w.position) || !w.yaw_deg.is_finite()) {
            return bad("camera.waypoints must be finite".into());
        }
        let s = &self.static_landmarks;
        if s.count == 0 || s.visible_per_frame == 0 {
            return bad("static_landmarks.count and visible_per_frame must be positive".into());
        }
        if !finite(&s.box_min) || !finite(&s.box_max) || (0..3).any(|i| s.box_min[i] > s.box_max[i]) {
            return bad("static_landmarks box must be finite with box_min <= box_max".into());
        }
        let n = &self.noise;
        for (name, v) in [
            ("noise.init_translation", n.init_translation),
            ("noise.init_rotation_deg", n.init_rotation_deg),
            ("noise.measurement", n.measurement),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a finite value >= 0"));
            }
        }
        if !(self.fov.max_range > 0.0) || !(self.fov.half_angle_deg > 0.0 && self.fov.half_angle_deg <= 180.0) {
            return bad("fov.max_range must be positive and fov.half_angle_deg in (0, 180]".into());
        }
        if !(self.graph.min_sigma > 0.0 && self.graph.min_sigma.is_finite()) {
            return bad("graph.min_sigma must be positive".into());
        }
        if !(self.dynamic_per_static >= 0.0 && self.dynamic_per_static.is_finite()) {
            return bad("dynamic_per_static must be >= 0".into());
        }
        for (l, obj) in self.objects.iter().enumerate() {
            if obj.parts.is_empty() {
                return bad(format!("object {l} ({}) has no parts", obj.name));
            }
            for (r, part) in obj.parts.iter().enumerate() {
                let where_ = format!("object {l} ({}) part {r} ({})", obj.name, part.name);
                if part.points.len() < 2 {
                    return bad(format!("{where_} needs at least 2 points"));
                }
                let m = &part.motion;
                if !part.points.iter().all(|p| finite(p)) || !finite(&m.omega_deg) || !finite(&m.velocity) || !finite(&m.pivot) {
                    return bad(format!("{where_} has non-finite numbers"));
                }
                for i in 0..part.points.len() {
                    for j in i + 1..part.points.len() {
                        let (a, b) = (part.points[i], part.points[j]);
                        let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
                        if d <= 1e-6 {
                            return bad(format!("{where_}: points {i} and {j} are closer than 1e-6 m"));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn dynamic_point_count(&self) -> usize {
        self.objects.iter().flat_map(|o| &o.parts).map(|p| p.points.len()).sum()
    }

    /// Same scenario with every noise level set to zero.
    pub fn noiseless(&self) -> Self {
        SimConfig { noise: NoiseConfig { init_translation: 0.0, init_rotation_deg: 0.0, measurement: 0.0 }, ..self.clone() }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        SimConfig { seed, ..self.clone() }
    }
}

pub const PRESET_NAMES: [&str; 6] = ["group1", "group2", "group3", "group4", "default", "turn"];

pub fn preset(name: &str) -> Option<SimConfig> {
    match name {
        "group1" => Some(group(18)),
        "group2" => Some(group(36)),
        "group3" => Some(group(54)),
        "group4" => Some(group(72)),
        "default" => Some(default_scene()),
        "turn" => Some(turn()),
        _ => None,
    }
}

fn noise() -> NoiseConfig {
    NoiseConfig { init_translation: 0.05, init_rotation_deg: 2.9, measurement: 0.05 }
}

/// A walker with a translating torso and two arms turning about the walking
/// direction. Twelve points, four per part.
pub fn walker() -> ObjectConfig {
    let v = [0.25, 0.0, 0.0];
    let arm = |name: &str, dz: f64, spin: f64| PartConfig {
        name: name.into(),
        points: vec![
            [0.5, -1.4, 5.5 + dz],
            [0.55, -1.1, 5.5 + 1.2 * dz],
            [0.45, -0.85, 5.5 + 1.3 * dz],
            [0.6, -0.7, 5.5 + 1.1 * dz],
        ],
        motion: MotionConfig { omega_deg: [spin, 0.0, 0.0], velocity: v, pivot: [0.5, -1.4, 5.5 + dz] },
    };
    ObjectConfig {
        name: "walker".into(),
        parts: vec![
            PartConfig {
                name: "torso".into(),
                points: vec![[0.5, -1.5, 5.5], [0.4, -0.9, 5.3], [0.6, -0.9, 5.7], [0.5, -1.2, 5.9]],
                motion: MotionConfig::translation(v),
            },
            arm("left-arm", -0.35, 3.0),
            arm("right-arm", 0.35, -3.0),
        ],
    }
}

/// Fourteen key points: a six-point torso (head, neck, shoulders, hips) and
/// two-point upper and lower limbs. Coordinates are made-up fixture data.
pub fn human14() -> ObjectConfig {
    let v = [0.25, 0.0, 0.0];
    let limb = |name: &str, a: [f64; 3], b: [f64; 3], pivot: [f64; 3], spin: f64| PartConfig {
        name: name.into(),
        points: vec![a, b],
        motion: MotionConfig { omega_deg: [spin, 0.0, 0.0], velocity: v, pivot },
    };
    let (ls, rs) = ([0.5, -1.4, 5.8], [0.5, -1.4, 6.2]);
    let (lh, rh) = ([0.5, -0.9, 5.85], [0.5, -0.9, 6.15]);
    ObjectConfig {
        name: "human14".into(),
        parts: vec![
            PartConfig {
                name: "torso".into(),
                points: vec![[0.55, -1.65, 6.0], [0.5, -1.45, 6.0], ls, rs, lh, rh],
                motion: MotionConfig::translation(v),
            },
            limb("left-arm", [0.5, -1.1, 5.7], [0.45, -0.85, 5.65], ls, 2.0),
            limb("right-arm", [0.5, -1.1, 6.3], [0.55, -0.85, 6.35], rs, -2.0),
            limb("left-leg", [0.55, -0.5, 5.85], [0.5, -0.05, 5.85], lh, 1.5),
            limb("right-leg", [0.45, -0.5, 6.15], [0.5, -0.05, 6.15], rh, -1.5),
        ],
    }
}

/// Four corners of a box turning slowly about the vertical axis.
pub fn cart() -> ObjectConfig {
    ObjectConfig {
        name: "cart".into(),
        parts: vec![PartConfig {
            name: "body".into(),
            points: vec![[-0.5, -0.4, 8.0], [0.5, -0.4, 8.0], [0.5, -0.9, 8.6], [-0.5, -0.4, 8.6]],
            motion: MotionConfig { omega_deg: [0.0, 1.0, 0.0], velocity: [0.2, 0.0, 0.0], pivot: [0.0, -0.5, 8.3] },
        }],
    }
}

fn straight(frames: u32, step: f64) -> CameraConfig {
    CameraConfig {
        waypoints: vec![
            Waypoint { position: [0.0, 0.0, 0.0], yaw_deg: 0.0 },
            Waypoint { position: [step * (frames - 1) as f64, 0.0, 0.0], yaw_deg: 0.0 },
        ],
    }
}

/// Straight camera, one walker, eight static landmarks per frame. The
/// eighteen-frame version is the reference ablation scenario.
fn group(frames: u32) -> SimConfig {
    let length = 0.3 * (frames - 1) as f64;
    SimConfig {
        name: format!("group{}", frames / 18),
        frames,
        seed: 0,
        dynamic_per_static: 1.5,
        camera: straight(frames, 0.3),
        static_landmarks: StaticConfig {
            count: (40.0 * (length + 14.0) / 19.1).round() as u32,
            box_min: [-4.0, -2.0, 4.0],
            box_max: [length + 10.0, 2.0, 14.0],
            visible_per_frame: 8,
        },
        noise: noise(),
        fov: FovConfig { max_range: 15.0, half_angle_deg: 45.0 },
        graph: GraphOptions::default(),
        objects: vec![walker()],
    }
}

/// Ten static landmarks per frame against a fourteen-point human and a cart,
/// eighteen dynamic points in all.
fn default_scene() -> SimConfig {
    let frames = 24;
    SimConfig {
        name: "default".into(),
        frames,
        seed: 0,
        dynamic_per_static: 1.8,
        camera: straight(frames, 0.25),
        static_landmarks: StaticConfig {
            count: 60,
            box_min: [-4.0, -3.0, 4.0],
            box_max: [12.0, 2.0, 14.0],
            visible_per_frame: 10,
        },
        noise: noise(),
        fov: FovConfig { max_range: 15.0, half_angle_deg: 45.0 },
        graph: GraphOptions::default(),
        objects: vec![human14(), cart()],
    }
}

/// Straight segment followed by a 90 degree turn to the right.
fn turn() -> SimConfig {
    SimConfig {
        name: "turn".into(),
        frames: 36,
        seed: 0,
        dynamic_per_static: 1.5,
        camera: CameraConfig {
            waypoints: vec![
                Waypoint { position: [0.0, 0.0, 0.0], yaw_deg: 0.0 },
                Waypoint { position: [4.0, 0.0, 0.0], yaw_deg: 0.0 },
                Waypoint { position: [6.0, 0.0, 2.0], yaw_deg: 90.0 },
                Waypoint { position: [6.0, 0.0, 6.0], yaw_deg: 90.0 },
            ],
        },
        static_landmarks: StaticConfig {
            count: 120,
            box_min: [-4.0, -2.0, -4.0],
            box_max: [22.0, 2.0, 16.0],
            visible_per_frame: 8,
        },
        noise: noise(),
        fov: FovConfig { max_range: 15.0, half_angle_deg: 45.0 },
        graph: GraphOptions::default(),
        objects: vec![walker()],
    }
}
