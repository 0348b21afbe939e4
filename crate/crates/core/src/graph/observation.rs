use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix3};

use super::factor::{expect_point, expect_pose, sym3_from_upper, upper_of_sym3, FactorSpec};
use super::{whitening, Factor, FactorKind, GraphError, Value, VariableId, VariableKind};
use crate::geometry::Point3;

/// A landmark measured in the camera frame: `r = P^-1 * p - z`.
#[derive(Debug, Clone)]
pub struct ObservationFactor {
    keys: [VariableId; 2],
    measured: Point3,
    covariance: Matrix3<f64>,
    whitening: DMatrix<f64>,
}

impl ObservationFactor {
    pub fn new(
        camera: VariableId,
        point: VariableId,
        measured: Point3,
        covariance: Matrix3<f64>,
    ) -> Result<Self, GraphError> {
        camera.expect_kind(VariableKind::CameraPose)?;
        match (camera, point) {
            (_, VariableId::StaticPoint { .. }) => {}
            (VariableId::CameraPose { frame }, VariableId::DynamicPoint { frame: pf, .. }) => {
                if frame != pf {
                    return Err(GraphError::InvalidFactor(format!(
                        "camera {camera} observes dynamic point of another frame ({point})"
                    )));
                }
            }
            _ => {
                return Err(GraphError::KindMismatch {
                    id: point,
                    expected: "SPOINT or DPOINT",
                    found: point.kind(),
                })
            }
        }
        if measured.iter().any(|v| !v.is_finite()) {
            return Err(GraphError::InvalidFactor("non-finite measurement".into()));
        }
        let whitening = whitening(&DMatrix::from_iterator(3, 3, covariance.iter().copied()))?;
        Ok(Self { keys: [camera, point], measured, covariance, whitening })
    }

    pub fn isotropic(
        camera: VariableId,
        point: VariableId,
        measured: Point3,
        sigma: f64,
    ) -> Result<Self, GraphError> {
        Self::new(camera, point, measured, Matrix3::identity() * (sigma * sigma))
    }

    pub fn measured(&self) -> &Point3 {
        &self.measured
    }

    pub fn camera(&self) -> VariableId {
        self.keys[0]
    }

    pub fn point(&self) -> VariableId {
        self.keys[1]
    }

    pub fn spec() -> FactorSpec {
        FactorSpec { tag: FactorKind::Observation.tag(), arity: 2, params: 9, build: Self::build }
    }

    fn build(keys: &[VariableId], p: &[f64]) -> Result<Arc<dyn Factor>, GraphError> {
        let z = Point3::new(p[0], p[1], p[2]);
        Ok(Arc::new(Self::new(keys[0], keys[1], z, sym3_from_upper(&p[3..9]))?))
    }
}

impl Factor for ObservationFactor {
    fn kind(&self) -> FactorKind {
        FactorKind::Observation
    }

    fn keys(&self) -> &[VariableId] {
        &self.keys
    }

    fn dim(&self) -> usize {
        3
    }

    fn covariance(&self) -> DMatrix<f64> {
        DMatrix::from_iterator(3, 3, self.covariance.iter().copied())
    }

    fn whitening(&self) -> &DMatrix<f64> {
        &self.whitening
    }

    fn residual_into(&self, vars: &[&Value], out: &mut DVector<f64>) -> Result<(), GraphError> {
        let pose = expect_pose(vars[0], &self.keys[0])?;
        let p = expect_point(vars[1], &self.keys[1])?;
        out.copy_from(&(pose.inverse_act(p) - self.measured));
        Ok(())
    }

    fn jacobians_into(&self, vars: &[&Value], out: &mut [DMatrix<f64>]) -> Result<(), GraphError> {
        let pose = expect_pose(vars[0], &self.keys[0])?;
        let p = expect_point(vars[1], &self.keys[1])?;
        let (j_pose, j_point) = pose.inverse_act_jacobians(p);
        out[0].copy_from(&j_pose);
        out[1].copy_from(&j_point);
        Ok(())
    }

    fn params(&self) -> Vec<f64> {
        let mut v = self.measured.as_slice().to_vec();
        v.extend(upper_of_sym3(&self.covariance));
        v
    }

    fn observes_static(&self) -> bool {
        self.keys[1].kind() == VariableKind::StaticPoint
    }
}
