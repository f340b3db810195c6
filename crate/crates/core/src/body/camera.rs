use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const ORTHONORMAL_TOL: f64 = 1e-9;

/// Rigid camera-to-world transform `x_world = R x_cam + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl CameraPose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let pose = CameraPose {
            rotation,
            translation,
        };
        pose.validate()?;
        Ok(pose)
    }

    pub fn identity() -> Self {
        CameraPose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Camera at `eye` looking at `target`, OpenCV axes (x right, y down,
    /// z forward) with world z up.
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>) -> Result<Self> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::arg("look_at: eye and target coincide"))?;
        let up = Vector3::new(0.0, 0.0, 1.0);
        let right = forward
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::arg("look_at: viewing direction is vertical"))?;
        let down = forward.cross(&right);
        let rotation = Matrix3::from_columns(&[right, down, forward]);
        CameraPose::new(rotation, eye)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rotation.iter().chain(self.translation.iter()).any(|v| !v.is_finite()) {
            return Err(Error::arg("camera pose has non-finite entries"));
        }
        let gram = self.rotation.transpose() * self.rotation;
        let dev = (gram - Matrix3::identity()).abs().max();
        if dev > ORTHONORMAL_TOL {
            return Err(Error::arg(format!(
                "camera rotation is not orthonormal (|R^T R - I| = {dev:e})"
            )));
        }
        let det = self.rotation.determinant();
        if (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::arg(format!(
                "camera rotation has determinant {det}, expected +1"
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        CameraPose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }
}

/// Maps camera-frame vertices and joints into the world frame.
pub fn compose_world(
    vertices_cam: &[Vector3<f64>],
    joints_cam: &[Vector3<f64>],
    cam: &CameraPose,
) -> Result<(Vec<Vector3<f64>>, Vec<Vector3<f64>>)> {
    cam.validate()?;
    let v = vertices_cam.iter().map(|p| cam.apply(p)).collect();
    let j = joints_cam.iter().map(|p| cam.apply(p)).collect();
    Ok((v, j))
}
