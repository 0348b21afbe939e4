use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::factor::{expect_point, expect_scalar, FactorSpec};
use super::{Factor, FactorKind, GraphError, Value, VariableId};

/// Below this separation the direction of `p_i - p_j` is undefined.
pub const COINCIDENT_TOLERANCE: f64 = 1e-9;

/// Two points of one rigid part keep the distance `s`: `r = |p_i - p_j| - s`.
#[derive(Debug, Clone)]
pub struct RigidityFactor {
    keys: [VariableId; 3],
    variance: f64,
    whitening: DMatrix<f64>,
}

impl RigidityFactor {
    pub fn new(
        point_i: VariableId,
        point_j: VariableId,
        segment: VariableId,
        variance: f64,
    ) -> Result<Self, GraphError> {
        let (
            VariableId::DynamicPoint { object: oi, part: ri, point: pi, frame: fi },
            VariableId::DynamicPoint { object: oj, part: rj, point: pj, frame: fj },
        ) = (point_i, point_j)
        else {
            return Err(GraphError::InvalidFactor(format!(
                "rigidity needs two dynamic points, got {point_i} and {point_j}"
            )));
        };
        let VariableId::SegmentLength { object, part, i, j } = segment else {
            return Err(GraphError::KindMismatch {
                id: segment,
                expected: "SEGMENT",
                found: segment.kind(),
            });
        };
        if pi == pj {
            return Err(GraphError::InvalidFactor("rigidity between a point and itself".into()));
        }
        if oi != oj || ri != rj || fi != fj {
            return Err(GraphError::InvalidFactor(format!(
                "rigidity points {point_i} and {point_j} are not on one part in one frame"
            )));
        }
        let same_pair = (i, j) == (pi, pj) || (i, j) == (pj, pi);
        if object != oi || part != ri || !same_pair {
            return Err(GraphError::InvalidFactor(format!(
                "segment {segment} does not join {point_i} and {point_j}"
            )));
        }
        if !(variance.is_finite() && variance > 0.0) {
            return Err(GraphError::NonSpdCovariance);
        }
        let whitening = DMatrix::from_element(1, 1, 1.0 / variance.sqrt());
        Ok(Self { keys: [point_i, point_j, segment], variance, whitening })
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn spec() -> FactorSpec {
        FactorSpec { tag: FactorKind::Rigidity.tag(), arity: 3, params: 1, build: Self::build }
    }

    fn build(keys: &[VariableId], p: &[f64]) -> Result<Arc<dyn Factor>, GraphError> {
        Ok(Arc::new(Self::new(keys[0], keys[1], keys[2], p[0])?))
    }
}

impl Factor for RigidityFactor {
    fn kind(&self) -> FactorKind {
        FactorKind::Rigidity
    }

    fn keys(&self) -> &[VariableId] {
        &self.keys
    }

    fn dim(&self) -> usize {
        1
    }

    fn covariance(&self) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, self.variance)
    }

    fn whitening(&self) -> &DMatrix<f64> {
        &self.whitening
    }

    fn residual_into(&self, vars: &[&Value], out: &mut DVector<f64>) -> Result<(), GraphError> {
        let pi = expect_point(vars[0], &self.keys[0])?;
        let pj = expect_point(vars[1], &self.keys[1])?;
        let s = expect_scalar(vars[2], &self.keys[2])?;
        out[0] = (pi - pj).norm() - s;
        Ok(())
    }

    fn jacobians_into(&self, vars: &[&Value], out: &mut [DMatrix<f64>]) -> Result<(), GraphError> {
        let pi = expect_point(vars[0], &self.keys[0])?;
        let pj = expect_point(vars[1], &self.keys[1])?;
        expect_scalar(vars[2], &self.keys[2])?;
        let d = pi - pj;
        let n = d.norm();
        if n <= COINCIDENT_TOLERANCE {
            return Err(GraphError::Degenerate(format!(
                "{} and {} coincide",
                self.keys[0], self.keys[1]
            )));
        }
        let u = d / n;
        for k in 0..3 {
            out[0][(0, k)] = u[k];
            out[1][(0, k)] = -u[k];
        }
        out[2][(0, 0)] = -1.0;
        Ok(())
    }

    fn params(&self) -> Vec<f64> {
        vec![self.variance]
    }
}
