//! Typed variables, residual factors and the weighted least-squares cost.
//!
//! A [`FactorGraph`] declares variables by [`VariableId`], holds factors as
//! trait objects, and records which variables are held constant. Current
//! estimates live separately in [`Values`] so one frozen graph can be
//! evaluated at many states.

mod factor;
mod motion;
mod observation;
mod rigidity;
pub mod text;

pub use factor::{
    chi2, jacobians, residual, Factor, FactorKind, FactorRegistry, FactorSpec,
};
pub use motion::MotionFactor;
pub use observation::ObservationFactor;
pub use rigidity::RigidityFactor;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix};
use thiserror::Error;

use crate::geometry::{Point3, Pose};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("variable {0} declared twice")]
    DuplicateVariable(VariableId),
    #[error("factor id {0} used twice")]
    DuplicateFactor(FactorId),
    #[error("reference to undeclared variable {0}")]
    DanglingReference(VariableId),
    #[error("no value for variable {0}")]
    MissingValue(VariableId),
    #[error("variable {id} has kind {found:?}, expected {expected}")]
    KindMismatch { id: VariableId, expected: &'static str, found: VariableKind },
    #[error("value for {0} does not match its kind")]
    ValueMismatch(VariableId),
    #[error("covariance is not symmetric positive definite")]
    NonSpdCovariance,
    #[error("invalid factor: {0}")]
    InvalidFactor(String),
    #[error("degenerate geometry: {0}")]
    Degenerate(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VariableKind {
    CameraPose,
    StaticPoint,
    DynamicPoint,
    SegmentLength,
    ObjectMotion,
}

impl VariableKind {
    /// Dimension of the tangent space used by the solver.
    pub fn tangent_dim(self) -> usize {
        match self {
            VariableKind::CameraPose | VariableKind::ObjectMotion => 6,
            VariableKind::StaticPoint | VariableKind::DynamicPoint => 3,
            VariableKind::SegmentLength => 1,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            VariableKind::CameraPose => "POSE",
            VariableKind::StaticPoint => "SPOINT",
            VariableKind::DynamicPoint => "DPOINT",
            VariableKind::SegmentLength => "SEGMENT",
            VariableKind::ObjectMotion => "MOTION",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        Some(match tag {
            "POSE" => VariableKind::CameraPose,
            "SPOINT" => VariableKind::StaticPoint,
            "DPOINT" => VariableKind::DynamicPoint,
            "SEGMENT" => VariableKind::SegmentLength,
            "MOTION" => VariableKind::ObjectMotion,
            _ => return None,
        })
    }

    /// Number of integer indices following the tag in the text format.
    pub fn index_count(self) -> usize {
        match self {
            VariableKind::CameraPose | VariableKind::StaticPoint => 1,
            VariableKind::ObjectMotion => 3,
            VariableKind::DynamicPoint | VariableKind::SegmentLength => 4,
        }
    }
}

/// Identity of one optimization variable.
///
/// Object motions are keyed by the first frame of the interval they cover;
/// a motion shared by every frame pair of a part uses `frame = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VariableId {
    CameraPose { frame: u32 },
    StaticPoint { point: u32 },
    DynamicPoint { object: u32, part: u32, point: u32, frame: u32 },
    SegmentLength { object: u32, part: u32, i: u32, j: u32 },
    ObjectMotion { object: u32, part: u32, frame: u32 },
}

impl VariableId {
    pub fn kind(&self) -> VariableKind {
        match self {
            VariableId::CameraPose { .. } => VariableKind::CameraPose,
            VariableId::StaticPoint { .. } => VariableKind::StaticPoint,
            VariableId::DynamicPoint { .. } => VariableKind::DynamicPoint,
            VariableId::SegmentLength { .. } => VariableKind::SegmentLength,
            VariableId::ObjectMotion { .. } => VariableKind::ObjectMotion,
        }
    }

    pub fn indices(&self) -> Vec<u32> {
        match *self {
            VariableId::CameraPose { frame } => vec![frame],
            VariableId::StaticPoint { point } => vec![point],
            VariableId::DynamicPoint { object, part, point, frame } => {
                vec![object, part, point, frame]
            }
            VariableId::SegmentLength { object, part, i, j } => vec![object, part, i, j],
            VariableId::ObjectMotion { object, part, frame } => vec![object, part, frame],
        }
    }

    pub fn from_indices(kind: VariableKind, idx: &[u32]) -> Option<Self> {
        if idx.len() != kind.index_count() {
            return None;
        }
        Some(match kind {
            VariableKind::CameraPose => VariableId::CameraPose { frame: idx[0] },
            VariableKind::StaticPoint => VariableId::StaticPoint { point: idx[0] },
            VariableKind::DynamicPoint => VariableId::DynamicPoint {
                object: idx[0],
                part: idx[1],
                point: idx[2],
                frame: idx[3],
            },
            VariableKind::SegmentLength => {
                VariableId::SegmentLength { object: idx[0], part: idx[1], i: idx[2], j: idx[3] }
            }
            VariableKind::ObjectMotion => {
                VariableId::ObjectMotion { object: idx[0], part: idx[1], frame: idx[2] }
            }
        })
    }

    pub fn expect_kind(&self, kind: VariableKind) -> Result<(), GraphError> {
        if self.kind() == kind {
            Ok(())
        } else {
            Err(GraphError::KindMismatch { id: *self, expected: kind.tag(), found: self.kind() })
        }
    }
}

impl fmt::Display for VariableId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.kind().tag())?;
        for i in self.indices() {
            write!(f, " {i}")?;
        }
        Ok(())
    }
}

/// Stable identifier of a factor within a graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FactorId(pub u64);

impl fmt::Display for FactorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Value {
    Pose(Pose),
    Point(Point3),
    Scalar(f64),
}

impl Value {
    pub fn matches(&self, kind: VariableKind) -> bool {
        matches!(
            (self, kind),
            (Value::Pose(_), VariableKind::CameraPose | VariableKind::ObjectMotion)
                | (Value::Point(_), VariableKind::StaticPoint | VariableKind::DynamicPoint)
                | (Value::Scalar(_), VariableKind::SegmentLength)
        )
    }

    pub fn as_pose(&self) -> Option<&Pose> {
        match self {
            Value::Pose(p) => Some(p),
            _ => None,
        }
    }

    pub fn as_point(&self) -> Option<&Point3> {
        match self {
            Value::Point(p) => Some(p),
            _ => None,
        }
    }

    pub fn as_scalar(&self) -> Option<f64> {
        match self {
            Value::Scalar(s) => Some(*s),
            _ => None,
        }
    }

    /// Applies a tangent increment: left twist for poses, addition otherwise.
    pub fn retract(&self, delta: &[f64]) -> Value {
        match self {
            Value::Pose(p) => {
                let xi = nalgebra::Vector6::from_column_slice(delta);
                Value::Pose(p.retract(&xi.into()))
            }
            Value::Point(p) => Value::Point(p + Point3::from_column_slice(delta)),
            Value::Scalar(s) => Value::Scalar(s + delta[0]),
        }
    }
}

/// Current estimate of every variable, ordered by id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Values {
    map: BTreeMap<VariableId, Value>,
}

impl Values {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: VariableId, value: Value) -> Result<(), GraphError> {
        if !value.matches(id.kind()) {
            return Err(GraphError::ValueMismatch(id));
        }
        self.map.insert(id, value);
        Ok(())
    }

    pub fn insert_pose(&mut self, id: VariableId, pose: Pose) -> Result<(), GraphError> {
        self.insert(id, Value::Pose(pose))
    }

    pub fn insert_point(&mut self, id: VariableId, p: Point3) -> Result<(), GraphError> {
        self.insert(id, Value::Point(p))
    }

    pub fn insert_scalar(&mut self, id: VariableId, s: f64) -> Result<(), GraphError> {
        self.insert(id, Value::Scalar(s))
    }

    pub fn get(&self, id: &VariableId) -> Result<&Value, GraphError> {
        self.map.get(id).ok_or(GraphError::MissingValue(*id))
    }

    pub fn pose(&self, id: &VariableId) -> Result<&Pose, GraphError> {
        self.get(id)?.as_pose().ok_or(GraphError::ValueMismatch(*id))
    }

    pub fn point(&self, id: &VariableId) -> Result<&Point3, GraphError> {
        self.get(id)?.as_point().ok_or(GraphError::ValueMismatch(*id))
    }

    pub fn scalar(&self, id: &VariableId) -> Result<f64, GraphError> {
        self.get(id)?.as_scalar().ok_or(GraphError::ValueMismatch(*id))
    }

    pub fn contains(&self, id: &VariableId) -> bool {
        self.map.contains_key(id)
    }

    pub fn remove(&mut self, id: &VariableId) -> Option<Value> {
        self.map.remove(id)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&VariableId, &Value)> {
        self.map.iter()
    }

    /// Camera poses in frame order.
    pub fn camera_poses(&self) -> Vec<(u32, Pose)> {
        self.map
            .iter()
            .filter_map(|(id, v)| match (id, v) {
                (VariableId::CameraPose { frame }, Value::Pose(p)) => Some((*frame, *p)),
                _ => None,
            })
            .collect()
    }
}

/// Checks a covariance for symmetry and positive definiteness and returns the
/// lower-triangular whitening matrix `W = L^-1` (`Omega = L L^T`), so that
/// `|W r|^2 = r^T Omega^-1 r`.
pub(crate) fn whitening(cov: &DMatrix<f64>) -> Result<DMatrix<f64>, GraphError> {
    let n = cov.nrows();
    if n == 0 || cov.ncols() != n || cov.iter().any(|v| !v.is_finite()) {
        return Err(GraphError::NonSpdCovariance);
    }
    let scale = cov.amax().max(f64::MIN_POSITIVE);
    if (cov - cov.transpose()).amax() > 1e-12 * scale {
        return Err(GraphError::NonSpdCovariance);
    }
    let chol = Cholesky::new(cov.clone()).ok_or(GraphError::NonSpdCovariance)?;
    let l = chol.l();
    if (0..n).any(|i| l[(i, i)] <= 0.0 || !l[(i, i)].is_finite()) {
        return Err(GraphError::NonSpdCovariance);
    }
    l.solve_lower_triangular(&DMatrix::identity(n, n)).ok_or(GraphError::NonSpdCovariance)
}

#[derive(Debug, Clone)]
pub struct FactorEntry {
    pub id: FactorId,
    pub factor: Arc<dyn Factor>,
}

/// Variables, factors and gauge anchors of one least-squares problem.
#[derive(Debug, Clone, Default)]
pub struct FactorGraph {
    variables: BTreeSet<VariableId>,
    factors: Vec<FactorEntry>,
    factor_ids: HashSet<FactorId>,
    constants: BTreeSet<VariableId>,
    next_id: u64,
}

impl FactorGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_variable(&mut self, id: VariableId) -> Result<(), GraphError> {
        if !self.variables.insert(id) {
            return Err(GraphError::DuplicateVariable(id));
        }
        Ok(())
    }

    /// Declares `id` unless it already exists.
    pub fn ensure_variable(&mut self, id: VariableId) {
        self.variables.insert(id);
    }

    pub fn add_factor<F: Factor + 'static>(&mut self, factor: F) -> Result<FactorId, GraphError> {
        self.add_shared_factor(Arc::new(factor))
    }

    pub fn add_shared_factor(&mut self, factor: Arc<dyn Factor>) -> Result<FactorId, GraphError> {
        let id = FactorId(self.next_id);
        self.insert_factor(id, factor)?;
        Ok(id)
    }

    /// Inserts a factor under a caller-chosen id (used when reading files).
    pub fn insert_factor(&mut self, id: FactorId, factor: Arc<dyn Factor>) -> Result<(), GraphError> {
        if self.factor_ids.contains(&id) {
            return Err(GraphError::DuplicateFactor(id));
        }
        for key in factor.keys() {
            if !self.variables.contains(key) {
                return Err(GraphError::DanglingReference(*key));
            }
        }
        self.factor_ids.insert(id);
        self.next_id = self.next_id.max(id.0 + 1);
        self.factors.push(FactorEntry { id, factor });
        Ok(())
    }

    pub fn hold_constant(&mut self, id: VariableId) -> Result<(), GraphError> {
        if !self.variables.contains(&id) {
            return Err(GraphError::DanglingReference(id));
        }
        self.constants.insert(id);
        Ok(())
    }

    pub fn is_constant(&self, id: &VariableId) -> bool {
        self.constants.contains(id)
    }

    pub fn constants(&self) -> &BTreeSet<VariableId> {
        &self.constants
    }

    pub fn variables(&self) -> &BTreeSet<VariableId> {
        &self.variables
    }

    pub fn contains_variable(&self, id: &VariableId) -> bool {
        self.variables.contains(id)
    }

    pub fn factors(&self) -> &[FactorEntry] {
        &self.factors
    }

    pub fn factor(&self, id: FactorId) -> Option<&Arc<dyn Factor>> {
        self.factors.iter().find(|e| e.id == id).map(|e| &e.factor)
    }

    pub fn num_factors(&self) -> usize {
        self.factors.len()
    }

    pub fn count_variables(&self, kind: VariableKind) -> usize {
        self.variables.iter().filter(|v| v.kind() == kind).count()
    }

    pub fn count_factors(&self, kind: FactorKind) -> usize {
        self.factors.iter().filter(|e| e.factor.kind() == kind).count()
    }

    /// Removes the listed factors; unknown ids are ignored.
    pub fn remove_factors(&mut self, ids: &BTreeSet<FactorId>) {
        self.factors.retain(|e| !ids.contains(&e.id));
        self.factor_ids.retain(|id| !ids.contains(id));
    }

    /// Removes a variable together with every factor that references it.
    pub fn remove_variable(&mut self, id: &VariableId) -> Vec<FactorId> {
        let removed: BTreeSet<FactorId> = self
            .factors
            .iter()
            .filter(|e| e.factor.keys().contains(id))
            .map(|e| e.id)
            .collect();
        self.remove_factors(&removed);
        self.variables.remove(id);
        self.constants.remove(id);
        removed.into_iter().collect()
    }

    /// Checks that every variable has a value of the right kind.
    pub fn check_values(&self, values: &Values) -> Result<(), GraphError> {
        for id in &self.variables {
            if !values.get(id)?.matches(id.kind()) {
                return Err(GraphError::ValueMismatch(*id));
            }
        }
        Ok(())
    }

    /// Weighted sum of squared residuals, `sum r^T Omega^-1 r`.
    pub fn cost(&self, values: &Values) -> Result<f64, GraphError> {
        self.factors.iter().map(|e| chi2(e.factor.as_ref(), values)).sum()
    }
}
