//! Ablation modes as named graph-building strategies.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::Matrix3;

use super::{Landmark, SimDataset, SimError};
use crate::graph::{FactorGraph, MotionFactor, ObservationFactor, RigidityFactor, Values, VariableId};

/// What a strategy builds from.
#[derive(Debug, Clone, Copy)]
pub struct BuildInput<'a> {
    pub dataset: &'a SimDataset,
    pub init: &'a Values,
}

/// Turns a dataset into the graph one ablation mode optimizes.
pub trait GraphStrategy: Send + Sync {
    fn name(&self) -> &str;

    /// `None` means nothing is optimized and the initial guess is evaluated.
    fn build(&self, input: &BuildInput<'_>) -> Result<Option<FactorGraph>, SimError>;
}

/// Factor kinds a graph includes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Components {
    pub static_observations: bool,
    pub dynamic_observations: bool,
    pub rigidity: bool,
    pub motion: bool,
}

/// Builds a graph from the enabled components; the first camera is held
/// constant.
#[derive(Debug, Clone)]
pub struct Assembled {
    pub name: String,
    pub components: Components,
}

impl Assembled {
    pub fn new(name: &str, components: Components) -> Self {
        Assembled { name: name.into(), components }
    }
}

impl GraphStrategy for Assembled {
    fn name(&self) -> &str {
        &self.name
    }

    fn build(&self, input: &BuildInput<'_>) -> Result<Option<FactorGraph>, SimError> {
        assemble(&self.name, self.components, input).map(Some)
    }
}

/// Evaluates the initial guess directly.
#[derive(Debug, Clone, Copy)]
pub struct BeforeBa;

impl GraphStrategy for BeforeBa {
    fn name(&self) -> &str {
        "before-ba"
    }

    fn build(&self, _input: &BuildInput<'_>) -> Result<Option<FactorGraph>, SimError> {
        Ok(None)
    }
}

fn assemble(name: &str, c: Components, input: &BuildInput<'_>) -> Result<FactorGraph, SimError> {
    let ds = input.dataset;
    let mismatch = |missing| SimError::ModeMismatch { mode: name.to_string(), missing };
    if c.static_observations && !ds.has_static() {
        return Err(mismatch("static measurements"));
    }
    let dynamic = c.dynamic_observations || c.rigidity || c.motion;
    if dynamic && !ds.has_dynamic() {
        return Err(mismatch("dynamic measurements"));
    }
    let sigma = ds.sigma.max(ds.options.min_sigma);
    let var = sigma * sigma;
    let cov = Matrix3::identity() * var;
    let mut g = FactorGraph::new();
    for k in 0..ds.num_frames() as u32 {
        g.add_variable(VariableId::CameraPose { frame: k })?;
    }
    g.hold_constant(VariableId::CameraPose { frame: 0 })?;

    let mut observed: BTreeMap<(u32, u32, u32, u32), ()> = BTreeMap::new();
    for (k, meas) in ds.frames.iter().enumerate() {
        let k = k as u32;
        for m in meas {
            let keep = match m.landmark {
                Landmark::Static(_) => c.static_observations,
                Landmark::Dynamic { object, part, point } => {
                    if dynamic {
                        observed.insert((object, part, point, k), ());
                    }
                    dynamic
                }
            };
            if !keep {
                continue;
            }
            let point = m.landmark.variable(k);
            g.ensure_variable(point);
            g.add_factor(ObservationFactor::new(VariableId::CameraPose { frame: k }, point, m.z, cov)?)?;
        }
    }
    let seen = |object, part, point, frame| observed.contains_key(&(object, part, point, frame));
    if c.rigidity {
        for (&(object, part), pairs) in &ds.segments {
            for &(i, j) in pairs {
                let segment = VariableId::SegmentLength { object, part, i, j };
                for k in 0..ds.num_frames() as u32 {
                    if seen(object, part, i, k) && seen(object, part, j, k) {
                        g.ensure_variable(segment);
                        let pi = VariableId::DynamicPoint { object, part, point: i, frame: k };
                        let pj = VariableId::DynamicPoint { object, part, point: j, frame: k };
                        g.add_factor(RigidityFactor::new(pi, pj, segment, var)?)?;
                    }
                }
            }
        }
    }
    if c.motion {
        let points: Vec<(u32, u32, u32)> = observed.keys().map(|&(l, r, i, _)| (l, r, i)).collect();
        let mut points = points;
        points.dedup();
        for (object, part, point) in points {
            for k in 0..ds.num_frames().saturating_sub(1) as u32 {
                if !(seen(object, part, point, k) && seen(object, part, point, k + 1)) {
                    continue;
                }
                let frame = match ds.options.motion {
                    super::MotionSharing::PerPart => 0,
                    super::MotionSharing::PerFramePair => k,
                };
                let motion = VariableId::ObjectMotion { object, part, frame };
                g.ensure_variable(motion);
                let prev = VariableId::DynamicPoint { object, part, point, frame: k };
                let next = VariableId::DynamicPoint { object, part, point, frame: k + 1 };
                g.add_factor(MotionFactor::new(prev, next, motion, cov)?)?;
            }
        }
    }
    Ok(g)
}

/// The ablation modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AblationMode {
    BeforeBa,
    StaticOnly,
    NoMotion,
    NoRigidity,
    Full,
    /// Every observation, no rigidity or motion factors. Timing baseline.
    ObservationsOnly,
}

impl AblationMode {
    pub const ALL: [AblationMode; 6] = [
        AblationMode::BeforeBa,
        AblationMode::StaticOnly,
        AblationMode::NoMotion,
        AblationMode::NoRigidity,
        AblationMode::Full,
        AblationMode::ObservationsOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationMode::BeforeBa => "before-ba",
            AblationMode::StaticOnly => "static-only",
            AblationMode::NoMotion => "no-motion",
            AblationMode::NoRigidity => "no-rigidity",
            AblationMode::Full => "full",
            AblationMode::ObservationsOnly => "observations-only",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == name)
    }

    pub fn components(self) -> Option<Components> {
        let all = Components { static_observations: true, dynamic_observations: true, rigidity: true, motion: true };
        match self {
            AblationMode::BeforeBa => None,
            AblationMode::StaticOnly => Some(Components { static_observations: true, ..Components::default() }),
            AblationMode::NoMotion => Some(Components { motion: false, ..all }),
            AblationMode::NoRigidity => Some(Components { rigidity: false, ..all }),
            AblationMode::Full => Some(all),
            AblationMode::ObservationsOnly => Some(Components { rigidity: false, motion: false, ..all }),
        }
    }

    pub fn strategy(self) -> Arc<dyn GraphStrategy> {
        match self.components() {
            None => Arc::new(BeforeBa),
            Some(c) => Arc::new(Assembled::new(self.name(), c)),
        }
    }
}

/// Strategies by name.
#[derive(Clone, Default)]
pub struct StrategyRegistry {
    strategies: BTreeMap<String, Arc<dyn GraphStrategy>>,
}

impl StrategyRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn builtin() -> Self {
        let mut r = Self::empty();
        for m in AblationMode::ALL {
            r.register(m.strategy());
        }
        r
    }

    /// Replaces any strategy of the same name.
    pub fn register(&mut self, strategy: Arc<dyn GraphStrategy>) {
        self.strategies.insert(strategy.name().to_string(), strategy);
    }

    pub fn get(&self, name: &str) -> Option<Arc<dyn GraphStrategy>> {
        self.strategies.get(name).cloned()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.strategies.keys().map(String::as_str)
    }

    /// Looks up every name, failing on the first unknown one.
    pub fn resolve<S: AsRef<str>>(&self, names: &[S]) -> Result<Vec<Arc<dyn GraphStrategy>>, SimError> {
        names
            .iter()
            .map(|n| self.get(n.as_ref()).ok_or_else(|| SimError::UnknownMode(n.as_ref().to_string())))
            .collect()
    }
}

pub fn build_graph(dataset: &SimDataset, init: &Values, mode: AblationMode) -> Result<Option<FactorGraph>, SimError> {
    mode.strategy().build(&BuildInput { dataset, init })
}
