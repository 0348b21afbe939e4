use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix3};

use super::factor::{expect_point, expect_pose, sym3_from_upper, upper_of_sym3, FactorSpec};
use super::{whitening, Factor, FactorKind, GraphError, Value, VariableId, VariableKind};
use crate::geometry::hat;

/// A point of one rigid part follows the part motion between consecutive
/// frames: `r = p_{k+1} - T * p_k`.
#[derive(Debug, Clone)]
pub struct MotionFactor {
    keys: [VariableId; 3],
    covariance: Matrix3<f64>,
    whitening: DMatrix<f64>,
}

impl MotionFactor {
    pub fn new(
        prev: VariableId,
        next: VariableId,
        motion: VariableId,
        covariance: Matrix3<f64>,
    ) -> Result<Self, GraphError> {
        Self::build_checked(prev, next, motion, covariance, false)
    }

    pub fn isotropic(
        prev: VariableId,
        next: VariableId,
        motion: VariableId,
        sigma: f64,
    ) -> Result<Self, GraphError> {
        Self::new(prev, next, motion, Matrix3::identity() * (sigma * sigma))
    }

    /// Like [`MotionFactor::new`] but tolerates a wrong point association
    /// (`next` is another point of the same part), as a faulty tracker would
    /// produce. Used to inject outliers.
    pub fn with_association_error(
        prev: VariableId,
        next: VariableId,
        motion: VariableId,
        covariance: Matrix3<f64>,
    ) -> Result<Self, GraphError> {
        Self::build_checked(prev, next, motion, covariance, true)
    }

    fn build_checked(
        prev: VariableId,
        next: VariableId,
        motion: VariableId,
        covariance: Matrix3<f64>,
        allow_mismatch: bool,
    ) -> Result<Self, GraphError> {
        let (
            VariableId::DynamicPoint { object: oa, part: ra, point: pa, frame: fa },
            VariableId::DynamicPoint { object: ob, part: rb, point: pb, frame: fb },
        ) = (prev, next)
        else {
            return Err(GraphError::InvalidFactor(format!(
                "motion needs two dynamic points, got {prev} and {next}"
            )));
        };
        motion.expect_kind(VariableKind::ObjectMotion)?;
        let VariableId::ObjectMotion { object, part, frame } = motion else { unreachable!() };
        if oa != ob || ra != rb || fb != fa + 1 {
            return Err(GraphError::InvalidFactor(format!(
                "{prev} and {next} are not consecutive frames of one part"
            )));
        }
        if pa != pb && !allow_mismatch {
            return Err(GraphError::InvalidFactor(format!("{prev} and {next} are different points")));
        }
        if object != oa || part != ra || frame > fa {
            return Err(GraphError::InvalidFactor(format!(
                "motion {motion} does not cover {prev} -> {next}"
            )));
        }
        let whitening = whitening(&DMatrix::from_iterator(3, 3, covariance.iter().copied()))?;
        Ok(Self { keys: [prev, next, motion], covariance, whitening })
    }

    pub fn prev(&self) -> VariableId {
        self.keys[0]
    }

    pub fn next(&self) -> VariableId {
        self.keys[1]
    }

    pub fn motion(&self) -> VariableId {
        self.keys[2]
    }

    pub fn spec() -> FactorSpec {
        FactorSpec { tag: FactorKind::Motion.tag(), arity: 3, params: 6, build: Self::build }
    }

    // Files may carry injected association errors, so reading is permissive.
    fn build(keys: &[VariableId], p: &[f64]) -> Result<Arc<dyn Factor>, GraphError> {
        let cov = sym3_from_upper(p);
        Ok(Arc::new(Self::with_association_error(keys[0], keys[1], keys[2], cov)?))
    }
}

impl Factor for MotionFactor {
    fn kind(&self) -> FactorKind {
        FactorKind::Motion
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
        let prev = expect_point(vars[0], &self.keys[0])?;
        let next = expect_point(vars[1], &self.keys[1])?;
        let motion = expect_pose(vars[2], &self.keys[2])?;
        out.copy_from(&(next - motion.act(prev)));
        Ok(())
    }

    fn jacobians_into(&self, vars: &[&Value], out: &mut [DMatrix<f64>]) -> Result<(), GraphError> {
        let prev = expect_point(vars[0], &self.keys[0])?;
        expect_point(vars[1], &self.keys[1])?;
        let motion = expect_pose(vars[2], &self.keys[2])?;
        let y = motion.act(prev);
        out[0].copy_from(&(-motion.rotation.matrix()));
        out[1].copy_from(&Matrix3::identity());
        out[2].fixed_view_mut::<3, 3>(0, 0).copy_from(&hat(&y));
        out[2].fixed_view_mut::<3, 3>(0, 3).copy_from(&(-Matrix3::identity()));
        Ok(())
    }

    fn params(&self) -> Vec<f64> {
        upper_of_sym3(&self.covariance).to_vec()
    }
}
