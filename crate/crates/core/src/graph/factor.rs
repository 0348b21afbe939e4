use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{GraphError, Value, VariableId, Values};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FactorKind {
    Observation,
    Rigidity,
    Motion,
}

impl FactorKind {
    pub fn tag(self) -> &'static str {
        match self {
            FactorKind::Observation => "OBSERVATION",
            FactorKind::Rigidity => "RIGIDITY",
            FactorKind::Motion => "MOTION",
        }
    }
}

/// A residual term `r(x)` with covariance `Omega`, contributing `r^T Omega^-1 r`.
///
/// Variables are passed in the order of [`Factor::keys`]. Jacobian blocks are
/// taken w.r.t. the tangent space of each key: left twists for poses and
/// motions, plain coordinates for points and segment lengths.
pub trait Factor: Send + Sync + fmt::Debug {
    fn kind(&self) -> FactorKind;

    fn keys(&self) -> &[VariableId];

    /// Residual dimension.
    fn dim(&self) -> usize;

    fn covariance(&self) -> DMatrix<f64>;

    /// Lower-triangular `W` with `W^T W = Omega^-1`.
    fn whitening(&self) -> &DMatrix<f64>;

    fn residual_into(&self, vars: &[&Value], out: &mut DVector<f64>) -> Result<(), GraphError>;

    /// Writes one `dim x tangent_dim` block per key into `out`.
    fn jacobians_into(&self, vars: &[&Value], out: &mut [DMatrix<f64>]) -> Result<(), GraphError>;

    /// Numeric parameters in text-format order (measurement, then covariance).
    fn params(&self) -> Vec<f64>;

    /// Observation of a static landmark; such factors are never pruned.
    fn observes_static(&self) -> bool {
        false
    }
}

pub(crate) fn gather<'a>(
    factor: &dyn Factor,
    values: &'a Values,
) -> Result<Vec<&'a Value>, GraphError> {
    factor.keys().iter().map(|k| values.get(k)).collect()
}

/// Unweighted residual of `factor` at `values`.
pub fn residual(factor: &dyn Factor, values: &Values) -> Result<DVector<f64>, GraphError> {
    let vars = gather(factor, values)?;
    let mut r = DVector::zeros(factor.dim());
    factor.residual_into(&vars, &mut r)?;
    Ok(r)
}

/// Unweighted Jacobian blocks, one per referenced variable.
pub fn jacobians(
    factor: &dyn Factor,
    values: &Values,
) -> Result<Vec<(VariableId, DMatrix<f64>)>, GraphError> {
    let vars = gather(factor, values)?;
    let mut blocks: Vec<DMatrix<f64>> = factor
        .keys()
        .iter()
        .map(|k| DMatrix::zeros(factor.dim(), k.kind().tangent_dim()))
        .collect();
    factor.jacobians_into(&vars, &mut blocks)?;
    Ok(factor.keys().iter().copied().zip(blocks).collect())
}

/// `r^T Omega^-1 r` of one factor.
pub fn chi2(factor: &dyn Factor, values: &Values) -> Result<f64, GraphError> {
    let r = residual(factor, values)?;
    Ok((factor.whitening() * r).norm_squared())
}

pub(crate) fn expect_pose<'a>(
    v: &'a Value,
    id: &VariableId,
) -> Result<&'a crate::geometry::Pose, GraphError> {
    v.as_pose().ok_or(GraphError::ValueMismatch(*id))
}

pub(crate) fn expect_point<'a>(
    v: &'a Value,
    id: &VariableId,
) -> Result<&'a crate::geometry::Point3, GraphError> {
    v.as_point().ok_or(GraphError::ValueMismatch(*id))
}

pub(crate) fn expect_scalar(v: &Value, id: &VariableId) -> Result<f64, GraphError> {
    v.as_scalar().ok_or(GraphError::ValueMismatch(*id))
}

pub type FactorBuilder = fn(&[VariableId], &[f64]) -> Result<Arc<dyn Factor>, GraphError>;

/// How to read one factor kind back from text.
#[derive(Clone, Copy)]
pub struct FactorSpec {
    pub tag: &'static str,
    pub arity: usize,
    pub params: usize,
    pub build: FactorBuilder,
}

impl fmt::Debug for FactorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FactorSpec")
            .field("tag", &self.tag)
            .field("arity", &self.arity)
            .field("params", &self.params)
            .finish()
    }
}

/// Factor kinds by text tag.
#[derive(Debug, Clone, Default)]
pub struct FactorRegistry {
    specs: BTreeMap<&'static str, FactorSpec>,
}

impl FactorRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Registry holding the observation, rigidity and motion factors.
    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register(super::ObservationFactor::spec());
        r.register(super::RigidityFactor::spec());
        r.register(super::MotionFactor::spec());
        r
    }

    pub fn register(&mut self, spec: FactorSpec) {
        self.specs.insert(spec.tag, spec);
    }

    pub fn get(&self, tag: &str) -> Option<&FactorSpec> {
        self.specs.get(tag)
    }

    pub fn tags(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.specs.keys().copied()
    }
}

/// Rebuilds a symmetric 3x3 matrix from `xx xy xz yy yz zz`.
pub(crate) fn sym3_from_upper(u: &[f64]) -> nalgebra::Matrix3<f64> {
    nalgebra::Matrix3::new(u[0], u[1], u[2], u[1], u[3], u[4], u[2], u[4], u[5])
}

pub(crate) fn upper_of_sym3(m: &nalgebra::Matrix3<f64>) -> [f64; 6] {
    [m[(0, 0)], m[(0, 1)], m[(0, 2)], m[(1, 1)], m[(1, 2)], m[(2, 2)]]
}
