//! Model description loading and validation.
//!
//! Models are TOML documents listing the 18 joints in pipeline order plus
//! the two palm frames. The loader enforces the fixed layout (`base_x`,
//! `base_y`, `base_yaw` first, then 15 upper-body joints) so row-group
//! selection elsewhere can rely on indices alone.

use std::path::Path;

use nalgebra::DVector;
use serde::Deserialize;
use thiserror::Error;

use crate::rotation::Quaternion;

use super::N_DOF;

/// The default bundled model: a differential-drive-style torso with two
/// 6-DOF arms, palm frames facing each other at the zero configuration.
pub const DEFAULT_MODEL: &str = include_str!("../../models/eva_like.model");

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("failed to read model file: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse model file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("model must define exactly {N_DOF} joints, found {0}")]
    WrongJointCount(usize),
    #[error("joint {index} ({name}) must be {expected}")]
    BadBaseLayout {
        index: usize,
        name: String,
        expected: &'static str,
    },
    #[error("joint {0} references unknown parent {1}")]
    UnknownParent(String, String),
    #[error("joint {0} parent {1} must appear earlier in the list")]
    ParentOrder(String, String),
    #[error("joint {0} axis must have unit length")]
    BadAxis(String),
    #[error("joint {0} has invalid limits (need pos.lo < pos.hi and vel.lo < 0 < vel.hi)")]
    BadLimits(String),
    #[error("model must define end effectors right_palm and left_palm")]
    MissingEndEffector,
    #[error("end effector {0} references unknown parent {1}")]
    BadEndEffectorParent(String, String),
    #[error("configuration has {0} entries, model needs {N_DOF}")]
    WrongConfigurationLength(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointKind {
    Prismatic,
    Revolute,
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq)]
pub struct JointLimits {
    /// Position range `[lo, hi]`; radians or meters by joint kind.
    pub pos: [f64; 2],
    /// Velocity range `[lo, hi]`.
    pub vel: [f64; 2],
}

#[derive(Clone, Debug)]
pub struct Joint {
    pub name: String,
    pub kind: JointKind,
    /// Motion axis in the joint's local frame, unit length.
    pub axis: [f64; 3],
    /// Fixed translation from the parent frame.
    pub origin: [f64; 3],
    /// Fixed rotation from the parent frame.
    pub orient: Quaternion,
    /// Index of the parent joint; `None` for the first base joint.
    pub parent: Option<usize>,
    pub limits: JointLimits,
}

#[derive(Clone, Debug)]
pub struct EndEffector {
    pub name: String,
    pub parent: usize,
    pub origin: [f64; 3],
    pub orient: Quaternion,
}

/// Validated kinematic model with the fixed 18-row layout.
#[derive(Clone, Debug)]
pub struct KinematicModel {
    pub name: String,
    joints: Vec<Joint>,
    right: EndEffector,
    left: EndEffector,
}

#[derive(Deserialize)]
struct JointSpec {
    name: String,
    parent: String,
    kind: JointKind,
    axis: [f64; 3],
    #[serde(default)]
    origin: [f64; 3],
    #[serde(default)]
    rpy: [f64; 3],
    limits: JointLimits,
}

#[derive(Deserialize)]
struct EndEffectorSpec {
    name: String,
    parent: String,
    #[serde(default)]
    origin: [f64; 3],
    #[serde(default)]
    rpy: [f64; 3],
}

#[derive(Deserialize)]
struct ModelSpec {
    name: String,
    #[serde(rename = "joint")]
    joints: Vec<JointSpec>,
    #[serde(rename = "end_effector")]
    end_effectors: Vec<EndEffectorSpec>,
}

fn rpy_quat(rpy: [f64; 3]) -> Quaternion {
    let rz = Quaternion::from_axis_angle([0.0, 0.0, 1.0], rpy[2]);
    let ry = Quaternion::from_axis_angle([0.0, 1.0, 0.0], rpy[1]);
    let rx = Quaternion::from_axis_angle([1.0, 0.0, 0.0], rpy[0]);
    rz.mul(&ry).mul(&rx)
}

impl KinematicModel {
    pub fn from_str(text: &str) -> Result<Self, ModelError> {
        let spec: ModelSpec = toml::from_str(text)?;
        Self::from_spec(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        Self::from_str(&std::fs::read_to_string(path)?)
    }

    /// The bundled default model.
    pub fn bundled() -> Self {
        Self::from_str(DEFAULT_MODEL).expect("bundled model must validate")
    }

    fn from_spec(spec: ModelSpec) -> Result<Self, ModelError> {
        if spec.joints.len() != N_DOF {
            return Err(ModelError::WrongJointCount(spec.joints.len()));
        }

        let expected_base: [(&str, JointKind, [f64; 3]); 3] = [
            ("a prismatic x-translation with parent `world`", JointKind::Prismatic, [1.0, 0.0, 0.0]),
            ("a prismatic y-translation", JointKind::Prismatic, [0.0, 1.0, 0.0]),
            ("a revolute yaw about z", JointKind::Revolute, [0.0, 0.0, 1.0]),
        ];
        for (i, (expected, kind, axis)) in expected_base.iter().enumerate() {
            let j = &spec.joints[i];
            let parent_ok = if i == 0 {
                j.parent == "world"
            } else {
                j.parent == spec.joints[i - 1].name
            };
            if j.kind != *kind || j.axis != *axis || !parent_ok {
                return Err(ModelError::BadBaseLayout {
                    index: i,
                    name: j.name.clone(),
                    expected,
                });
            }
        }

        let mut joints = Vec::with_capacity(N_DOF);
        for (i, j) in spec.joints.iter().enumerate() {
            let parent = if j.parent == "world" {
                if i != 0 {
                    return Err(ModelError::UnknownParent(j.name.clone(), j.parent.clone()));
                }
                None
            } else {
                let idx = spec
                    .joints
                    .iter()
                    .position(|p| p.name == j.parent)
                    .ok_or_else(|| ModelError::UnknownParent(j.name.clone(), j.parent.clone()))?;
                if idx >= i {
                    return Err(ModelError::ParentOrder(j.name.clone(), j.parent.clone()));
                }
                Some(idx)
            };
            let norm = (j.axis[0].powi(2) + j.axis[1].powi(2) + j.axis[2].powi(2)).sqrt();
            if (norm - 1.0).abs() > 1e-9 {
                return Err(ModelError::BadAxis(j.name.clone()));
            }
            if j.limits.pos[0] >= j.limits.pos[1]
                || j.limits.vel[0] >= 0.0
                || j.limits.vel[1] <= 0.0
            {
                return Err(ModelError::BadLimits(j.name.clone()));
            }
            joints.push(Joint {
                name: j.name.clone(),
                kind: j.kind,
                axis: j.axis,
                origin: j.origin,
                orient: rpy_quat(j.rpy),
                parent,
                limits: j.limits,
            });
        }

        let mut right = None;
        let mut left = None;
        for ee in &spec.end_effectors {
            let parent = spec
                .joints
                .iter()
                .position(|p| p.name == ee.parent)
                .ok_or_else(|| {
                    ModelError::BadEndEffectorParent(ee.name.clone(), ee.parent.clone())
                })?;
            let built = EndEffector {
                name: ee.name.clone(),
                parent,
                origin: ee.origin,
                orient: rpy_quat(ee.rpy),
            };
            match ee.name.as_str() {
                "right_palm" => right = Some(built),
                "left_palm" => left = Some(built),
                _ => {}
            }
        }
        let (right, left) = match (right, left) {
            (Some(r), Some(l)) => (r, l),
            _ => return Err(ModelError::MissingEndEffector),
        };

        Ok(Self {
            name: spec.name,
            joints,
            right,
            left,
        })
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn right_palm(&self) -> &EndEffector {
        &self.right
    }

    pub fn left_palm(&self) -> &EndEffector {
        &self.left
    }

    pub fn position_lower(&self) -> DVector<f64> {
        DVector::from_iterator(N_DOF, self.joints.iter().map(|j| j.limits.pos[0]))
    }

    pub fn position_upper(&self) -> DVector<f64> {
        DVector::from_iterator(N_DOF, self.joints.iter().map(|j| j.limits.pos[1]))
    }

    pub fn velocity_lower(&self) -> DVector<f64> {
        DVector::from_iterator(N_DOF, self.joints.iter().map(|j| j.limits.vel[0]))
    }

    pub fn velocity_upper(&self) -> DVector<f64> {
        DVector::from_iterator(N_DOF, self.joints.iter().map(|j| j.limits.vel[1]))
    }

    /// Checks length and position limits of a configuration.
    pub fn check_configuration(&self, q: &[f64]) -> Result<(), ModelError> {
        if q.len() != N_DOF {
            return Err(ModelError::WrongConfigurationLength(q.len()));
        }
        for (i, j) in self.joints.iter().enumerate() {
            if q[i] < j.limits.pos[0] || q[i] > j.limits.pos[1] {
                return Err(ModelError::BadLimits(j.name.clone()));
            }
        }
        Ok(())
    }
}
