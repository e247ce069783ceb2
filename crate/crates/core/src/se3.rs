//! Rigid-body kinematics for end-effector action chunks.
//!
//! Each action chunk is a window of 7-DoF increments
//! `[dx, dy, dz, droll, dpitch, dyaw, gripper]`. The increments are composed
//! into poses (body frame, right-multiplied by default) and the window's motion
//! is summarised by the arc length of the resulting end-effector positions.

use serde::{Deserialize, Serialize};

use crate::error::{AdpError, Result};

pub type Mat3 = [[f64; 3]; 3];
pub type Vec3 = [f64; 3];

const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

/// One 7-DoF action step. Lengths in meters, angles in radians.
///
/// The gripper command is carried through but never enters the kinematics.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ActionIncrement {
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
    pub droll: f64,
    pub dpitch: f64,
    pub dyaw: f64,
    pub gripper: f64,
}

impl ActionIncrement {
    pub fn new(translation: Vec3, rotation: Vec3, gripper: f64) -> Self {
        Self {
            dx: translation[0],
            dy: translation[1],
            dz: translation[2],
            droll: rotation[0],
            dpitch: rotation[1],
            dyaw: rotation[2],
            gripper,
        }
    }

    pub fn from_array(a: [f64; 7]) -> Self {
        Self::new([a[0], a[1], a[2]], [a[3], a[4], a[5]], a[6])
    }

    pub fn to_array(&self) -> [f64; 7] {
        [
            self.dx,
            self.dy,
            self.dz,
            self.droll,
            self.dpitch,
            self.dyaw,
            self.gripper,
        ]
    }

    pub fn translation(&self) -> Vec3 {
        [self.dx, self.dy, self.dz]
    }

    pub fn validate(&self) -> Result<()> {
        if self.to_array().iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(AdpError::invalid(format!(
                "action increment has non-finite component: {:?}",
                self.to_array()
            )))
        }
    }
}

/// Order in which the three axis rotations are multiplied.
///
/// `Xyz` means `R = Rx(roll) * Ry(pitch) * Rz(yaw)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EulerOrder {
    #[default]
    Xyz,
    Xzy,
    Yxz,
    Yzx,
    Zxy,
    Zyx,
}

/// Which side the increment is multiplied on when composing poses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CompositionFrame {
    /// `T' = T * dT` (increment expressed in the end-effector frame).
    #[default]
    Body,
    /// `T' = dT * T` (increment expressed in the world frame).
    World,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FkConvention {
    #[serde(default)]
    pub euler_order: EulerOrder,
    #[serde(default)]
    pub frame: CompositionFrame,
}

fn rot_x(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]]
}

fn rot_y(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]]
}

fn rot_z(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
}

pub(crate) fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut r = [[0.0; 3]; 3];
    for (i, row) in r.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    r
}

pub(crate) fn mat_vec(a: &Mat3, v: &Vec3) -> Vec3 {
    [
        a[0][0] * v[0] + a[0][1] * v[1] + a[0][2] * v[2],
        a[1][0] * v[0] + a[1][1] * v[1] + a[1][2] * v[2],
        a[2][0] * v[0] + a[2][1] * v[1] + a[2][2] * v[2],
    ]
}

pub fn determinant(m: &Mat3) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Rotation for roll/pitch/yaw increments, `Rx(roll) * Ry(pitch) * Rz(yaw)`.
pub fn euler_to_rotation(droll: f64, dpitch: f64, dyaw: f64) -> Result<Mat3> {
    euler_to_rotation_ordered(droll, dpitch, dyaw, EulerOrder::Xyz)
}

pub fn euler_to_rotation_ordered(
    droll: f64,
    dpitch: f64,
    dyaw: f64,
    order: EulerOrder,
) -> Result<Mat3> {
    if !(droll.is_finite() && dpitch.is_finite() && dyaw.is_finite()) {
        return Err(AdpError::invalid(format!(
            "euler angles must be finite, got ({droll}, {dpitch}, {dyaw})"
        )));
    }
    let (x, y, z) = (rot_x(droll), rot_y(dpitch), rot_z(dyaw));
    let (a, b, c) = match order {
        EulerOrder::Xyz => (x, y, z),
        EulerOrder::Xzy => (x, z, y),
        EulerOrder::Yxz => (y, x, z),
        EulerOrder::Yzx => (y, z, x),
        EulerOrder::Zxy => (z, x, y),
        EulerOrder::Zyx => (z, y, x),
    };
    Ok(mat_mul(&mat_mul(&a, &b), &c))
}

/// End-effector pose in SE(3).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: IDENTITY,
            translation: [0.0; 3],
        }
    }

    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self> {
        let pose = Self {
            rotation,
            translation,
        };
        pose.validate(1e-9)?;
        Ok(pose)
    }

    /// Checks `R^T R = I` and `det R = +1` within `tol`.
    pub fn validate(&self, tol: f64) -> Result<()> {
        let finite = self.rotation.iter().flatten().all(|v| v.is_finite())
            && self.translation.iter().all(|v| v.is_finite());
        if !finite {
            return Err(AdpError::invalid("pose has non-finite entries"));
        }
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3)
                    .map(|k| self.rotation[k][i] * self.rotation[k][j])
                    .sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (dot - want).abs() > tol {
                    return Err(AdpError::invalid("pose rotation is not orthonormal"));
                }
            }
        }
        if (determinant(&self.rotation) - 1.0).abs() > tol {
            return Err(AdpError::invalid("pose rotation has determinant != +1"));
        }
        Ok(())
    }

    /// Translation part of the pose.
    pub fn position(&self) -> Vec3 {
        self.translation
    }

    /// `self * other` as homogeneous transforms.
    pub fn compose(&self, other: &Pose) -> Pose {
        let t = mat_vec(&self.rotation, &other.translation);
        Pose {
            rotation: mat_mul(&self.rotation, &other.rotation),
            translation: [
                self.translation[0] + t[0],
                self.translation[1] + t[1],
                self.translation[2] + t[2],
            ],
        }
    }

    /// Gram-Schmidt on the rotation columns, for long compositions.
    pub fn reorthonormalize(&mut self) {
        let col = |m: &Mat3, j: usize| [m[0][j], m[1][j], m[2][j]];
        let r = &self.rotation;
        let normalize = |v: Vec3| {
            let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            [v[0] / n, v[1] / n, v[2] / n]
        };
        let dot = |a: Vec3, b: Vec3| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
        let e0 = normalize(col(r, 0));
        let c1 = col(r, 1);
        let d = dot(e0, c1);
        let e1 = normalize([c1[0] - d * e0[0], c1[1] - d * e0[1], c1[2] - d * e0[2]]);
        let e2 = [
            e0[1] * e1[2] - e0[2] * e1[1],
            e0[2] * e1[0] - e0[0] * e1[2],
            e0[0] * e1[1] - e0[1] * e1[0],
        ];
        for i in 0..3 {
            self.rotation[i] = [e0[i], e1[i], e2[i]];
        }
    }
}

fn increment_pose(inc: &ActionIncrement, order: EulerOrder) -> Result<Pose> {
    inc.validate()?;
    Ok(Pose {
        rotation: euler_to_rotation_ordered(inc.droll, inc.dpitch, inc.dyaw, order)?,
        translation: inc.translation(),
    })
}

/// Body-frame composition: translation gains `R * v`, rotation becomes `R * dR`.
pub fn compose_step(pose: &Pose, inc: &ActionIncrement) -> Result<Pose> {
    compose_step_with(pose, inc, FkConvention::default())
}

pub fn compose_step_with(pose: &Pose, inc: &ActionIncrement, conv: FkConvention) -> Result<Pose> {
    let step = increment_pose(inc, conv.euler_order)?;
    Ok(match conv.frame {
        CompositionFrame::Body => pose.compose(&step),
        CompositionFrame::World => step.compose(pose),
    })
}

/// One action chunk together with the pose it starts from.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionWindow {
    /// 1-based window ordinal within the episode.
    pub index: usize,
    pub increments: Vec<ActionIncrement>,
    pub start_pose: Pose,
}

impl ActionWindow {
    /// Window starting at the identity pose.
    pub fn new(index: usize, increments: Vec<ActionIncrement>) -> Self {
        Self {
            index,
            increments,
            start_pose: Pose::identity(),
        }
    }

    pub fn with_start_pose(mut self, pose: Pose) -> Self {
        self.start_pose = pose;
        self
    }

    pub fn omega(&self) -> usize {
        self.increments.len()
    }

    /// Checks the window is non-empty, holds exactly `omega` steps when given,
    /// and that every increment is finite.
    pub fn validate(&self, omega: Option<usize>) -> Result<()> {
        if self.increments.is_empty() {
            return Err(AdpError::invalid("action window is empty"));
        }
        if let Some(w) = omega {
            if self.increments.len() != w {
                return Err(AdpError::invalid(format!(
                    "window {} has {} steps, expected {w}",
                    self.index,
                    self.increments.len()
                )));
            }
        }
        self.increments
            .iter()
            .try_for_each(ActionIncrement::validate)
    }
}

/// End-effector positions over the window: the start position followed by
/// the position after each increment, `omega + 1` entries in total.
pub fn fk_window(window: &ActionWindow) -> Result<Vec<Vec3>> {
    fk_window_with(window, FkConvention::default())
}

pub fn fk_window_with(window: &ActionWindow, conv: FkConvention) -> Result<Vec<Vec3>> {
    window.validate(None)?;
    let mut pose = window.start_pose;
    let mut positions = Vec::with_capacity(window.increments.len() + 1);
    positions.push(pose.position());
    for inc in &window.increments {
        pose = compose_step_with(&pose, inc, conv)?;
        positions.push(pose.position());
    }
    Ok(positions)
}

/// Arc length of the end-effector path over the window, in meters.
pub fn window_distance(window: &ActionWindow) -> Result<f64> {
    window_distance_with(window, FkConvention::default())
}

pub fn window_distance_with(window: &ActionWindow, conv: FkConvention) -> Result<f64> {
    let positions = fk_window_with(window, conv)?;
    Ok(positions
        .windows(2)
        .map(|pair| {
            let (a, b) = (pair[0], pair[1]);
            ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2) + (b[2] - a[2]).powi(2)).sqrt()
        })
        .sum())
}
