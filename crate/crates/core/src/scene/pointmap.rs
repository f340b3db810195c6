use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::body::CameraPose;
use crate::{Error, Result};

/// Default side of the square RoI sampling window, in pixels.
pub const DEFAULT_ROI_WINDOW: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointFrame {
    Camera,
    World,
}

/// Per-pixel 3D points with a validity mask, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Pointmap {
    height: usize,
    width: usize,
    points: Vec<Vector3<f64>>,
    valid: Vec<bool>,
    frame: PointFrame,
}

impl Pointmap {
    pub fn new(
        height: usize,
        width: usize,
        points: Vec<Vector3<f64>>,
        valid: Vec<bool>,
        frame: PointFrame,
    ) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::arg("pointmap needs at least one pixel"));
        }
        let n = height * width;
        if points.len() != n || valid.len() != n {
            return Err(Error::arg(format!(
                "pointmap {height}x{width} needs {n} points and mask entries"
            )));
        }
        if points
            .iter()
            .zip(&valid)
            .any(|(p, v)| *v && !p.iter().all(|c| c.is_finite()))
        {
            return Err(Error::arg("valid pointmap entries must be finite"));
        }
        Ok(Pointmap {
            height,
            width,
            points,
            valid,
            frame,
        })
    }

    /// Fully valid map filled by `f(row, col)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        frame: PointFrame,
        mut f: impl FnMut(usize, usize) -> Vector3<f64>,
    ) -> Result<Self> {
        let mut points = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                points.push(f(r, c));
            }
        }
        Pointmap::new(height, width, points, vec![true; height * width], frame)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn frame(&self) -> PointFrame {
        self.frame
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn valid_mask(&self) -> &[bool] {
        &self.valid
    }

    pub fn point(&self, row: usize, col: usize) -> Vector3<f64> {
        self.points[row * self.width + col]
    }

    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        self.valid[row * self.width + col]
    }

    pub fn set_valid(&mut self, row: usize, col: usize, valid: bool) {
        self.valid[row * self.width + col] = valid;
    }

    pub fn valid_points(&self) -> impl Iterator<Item = &Vector3<f64>> {
        self.points.iter().zip(&self.valid).filter(|(_, v)| **v).map(|(p, _)| p)
    }

    fn map_points(&self, cam: &CameraPose, frame: PointFrame) -> Pointmap {
        Pointmap {
            points: self.points.iter().map(|p| cam.apply(p)).collect(),
            frame,
            ..self.clone()
        }
    }
}

/// Camera-frame pointmap to world frame with the camera-to-world pose.
pub fn pointmap_to_world(pm: &Pointmap, cam: &CameraPose) -> Result<Pointmap> {
    if pm.frame != PointFrame::Camera {
        return Err(Error::arg("pointmap_to_world expects a camera-frame pointmap"));
    }
    cam.validate()?;
    Ok(pm.map_points(cam, PointFrame::World))
}

/// World-frame pointmap back to the camera frame.
pub fn pointmap_to_camera(pm: &Pointmap, cam: &CameraPose) -> Result<Pointmap> {
    if pm.frame != PointFrame::World {
        return Err(Error::arg("pointmap_to_camera expects a world-frame pointmap"));
    }
    cam.validate()?;
    Ok(pm.map_points(&cam.inverse(), PointFrame::Camera))
}

/// 2D anchor of one person: `u = [x, y]` with `x` along columns and `y`
/// along rows, in continuous pixel units (pixel centres at integers).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub u: [f64; 2],
    pub person: usize,
}

impl Anchor {
    pub fn new(x: f64, y: f64, person: usize) -> Self {
        Anchor { u: [x, y], person }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PooledGeometry {
    pub point: Vector3<f64>,
    pub valid: bool,
}

impl PooledGeometry {
    pub fn invalid() -> Self {
        PooledGeometry {
            point: Vector3::zeros(),
            valid: false,
        }
    }
}

/// Averages RoIAlign-style bilinear samples over a `window x window` grid
/// with one-pixel spacing centred on the anchor.
///
/// Samples outside `[-0.5, W - 0.5] x [-0.5, H - 0.5]` or touching an
/// invalid support pixel are skipped; the mean is taken over the rest.
pub fn roi_geo_pool(pm: &Pointmap, anchor: &Anchor, window: usize) -> Result<PooledGeometry> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(Error::arg(format!("RoI window must be odd and positive, got {window}")));
    }
    let [x, y] = anchor.u;
    let (w, h) = (pm.width as f64, pm.height as f64);
    if !(x.is_finite() && y.is_finite())
        || !(-0.5..=w - 0.5).contains(&x)
        || !(-0.5..=h - 0.5).contains(&y)
    {
        return Err(Error::OutOfBounds {
            x,
            y,
            width: pm.width,
            height: pm.height,
        });
    }

    let half = (window / 2) as f64;
    let mut sum = Vector3::zeros();
    let mut count = 0usize;
    for i in 0..window {
        for j in 0..window {
            let sx = x + j as f64 - half;
            let sy = y + i as f64 - half;
            if let Some(p) = bilinear(pm, sx, sy) {
                sum += p;
                count += 1;
            }
        }
    }
    if count == 0 {
        return Ok(PooledGeometry::invalid());
    }
    Ok(PooledGeometry {
        point: sum / count as f64,
        valid: true,
    })
}

fn bilinear(pm: &Pointmap, x: f64, y: f64) -> Option<Vector3<f64>> {
    let (w, h) = (pm.width as f64, pm.height as f64);
    if x < -0.5 || x > w - 0.5 || y < -0.5 || y > h - 0.5 {
        return None;
    }
    let xc = x.clamp(0.0, w - 1.0);
    let yc = y.clamp(0.0, h - 1.0);
    let c0 = xc.floor() as usize;
    let r0 = yc.floor() as usize;
    let c1 = (c0 + 1).min(pm.width - 1);
    let r1 = (r0 + 1).min(pm.height - 1);
    let fx = xc - c0 as f64;
    let fy = yc - r0 as f64;
    if !(pm.is_valid(r0, c0) && pm.is_valid(r0, c1) && pm.is_valid(r1, c0) && pm.is_valid(r1, c1)) {
        return None;
    }
    Some(
        pm.point(r0, c0) * ((1.0 - fx) * (1.0 - fy))
            + pm.point(r0, c1) * (fx * (1.0 - fy))
            + pm.point(r1, c0) * ((1.0 - fx) * fy)
            + pm.point(r1, c1) * (fx * fy),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::rodrigues;

    fn ramp(h: usize, w: usize) -> Pointmap {
        Pointmap::from_fn(h, w, PointFrame::World, |r, c| {
            Vector3::new(c as f64, r as f64, 0.1 * c as f64 + 0.2 * r as f64)
        })
        .unwrap()
    }

    #[test]
    fn window_one_at_grid_node() {
        let pm = ramp(5, 6);
        let g = roi_geo_pool(&pm, &Anchor::new(2.0, 3.0, 0), 1).unwrap();
        assert!(g.valid);
        assert_eq!(g.point, pm.point(3, 2));
    }

    #[test]
    fn constant_map_pools_to_constant() {
        let c = Vector3::new(0.25, -1.5, 3.0);
        let pm = Pointmap::from_fn(7, 9, PointFrame::World, |_, _| c).unwrap();
        for (x, y, w) in [(0.0, 0.0, 5), (4.3, 2.7, 3), (8.5, 6.5, 7), (-0.5, 3.0, 1)] {
            let g = roi_geo_pool(&pm, &Anchor::new(x, y, 0), w).unwrap();
            assert!((g.point - c).norm() < 1e-12);
        }
    }

    #[test]
    fn ramp_matches_scalar_bilinear() {
        let pm = ramp(4, 4);
        let g = roi_geo_pool(&pm, &Anchor::new(1.5, 1.5, 0), 3).unwrap();
        // oracle: scalar bilinear per coordinate over the 9 sample points
        let coord = |r: usize, c: usize, k: usize| pm.point(r, c)[k];
        let mut expected = [0.0; 3];
        let mut n = 0.0;
        for dy in [-1.0, 0.0, 1.0] {
            for dx in [-1.0, 0.0, 1.0] {
                let (sx, sy): (f64, f64) = (1.5 + dx, 1.5 + dy);
                let (sx, sy) = (sx.clamp(0.0, 3.0), sy.clamp(0.0, 3.0));
                let (c0, r0) = (sx.floor() as usize, sy.floor() as usize);
                let (c1, r1) = ((c0 + 1).min(3), (r0 + 1).min(3));
                let (fx, fy) = (sx - c0 as f64, sy - r0 as f64);
                for (k, e) in expected.iter_mut().enumerate() {
                    let top = coord(r0, c0, k) * (1.0 - fx) + coord(r0, c1, k) * fx;
                    let bot = coord(r1, c0, k) * (1.0 - fx) + coord(r1, c1, k) * fx;
                    *e += top * (1.0 - fy) + bot * fy;
                }
                n += 1.0;
            }
        }
        for k in 0..3 {
            assert!((g.point[k] - expected[k] / n).abs() < 1e-12);
        }
    }

    #[test]
    fn skips_invalid_support() {
        let mut pm = ramp(4, 4);
        pm.set_valid(1, 1, false);
        // window 1 at (1.5, 1.5) touches pixel (1,1) -> nothing valid
        let g = roi_geo_pool(&pm, &Anchor::new(1.5, 1.5, 0), 1).unwrap();
        assert!(!g.valid);
        assert_eq!(g.point, Vector3::zeros());
        // at the grid node (2, 2) the support avoids (1, 1)
        let g = roi_geo_pool(&pm, &Anchor::new(2.0, 2.0, 0), 1).unwrap();
        assert!(g.valid);
    }

    #[test]
    fn anchor_bounds_and_window() {
        let pm = ramp(4, 5);
        assert!(matches!(
            roi_geo_pool(&pm, &Anchor::new(4.6, 1.0, 0), 3),
            Err(Error::OutOfBounds { .. })
        ));
        assert!(roi_geo_pool(&pm, &Anchor::new(-0.5, -0.5, 0), 3).is_ok());
        assert!(roi_geo_pool(&pm, &Anchor::new(1.0, 1.0, 0), 4).is_err());
        assert!(roi_geo_pool(&pm, &Anchor::new(1.0, 1.0, 0), 0).is_err());
    }

    #[test]
    fn translation_equivariant() {
        let pm = ramp(6, 6);
        let c = Vector3::new(3.0, -2.0, 0.5);
        let shifted = Pointmap::from_fn(6, 6, PointFrame::World, |r, col| pm.point(r, col) + c)
            .unwrap();
        let a = Anchor::new(2.3, 3.6, 0);
        let g0 = roi_geo_pool(&pm, &a, 5).unwrap();
        let g1 = roi_geo_pool(&shifted, &a, 5).unwrap();
        assert!((g1.point - g0.point - c).norm() < 1e-12);
    }

    #[test]
    fn world_camera_round_trip() {
        let cam = CameraPose::new(
            rodrigues(&Vector3::new(0.3, -0.7, 1.1)),
            Vector3::new(1.0, 2.0, -0.5),
        )
        .unwrap();
        let pm = Pointmap::from_fn(3, 4, PointFrame::Camera, |r, c| {
            Vector3::new(c as f64 * 0.1, r as f64 * 0.2, 2.0 + 0.05 * (r * c) as f64)
        })
        .unwrap();
        let world = pointmap_to_world(&pm, &cam).unwrap();
        assert_eq!(world.frame(), PointFrame::World);
        for (a, b) in pm.points().iter().zip(world.points()) {
            assert_eq!(*b, cam.apply(a));
        }
        let back = pointmap_to_camera(&world, &cam).unwrap();
        for (a, b) in pm.points().iter().zip(back.points()) {
            assert!((a - b).norm() < 1e-9);
        }
        assert!(pointmap_to_world(&world, &cam).is_err());
    }

    #[test]
    fn identity_and_translation_cameras() {
        let pm = Pointmap::from_fn(2, 2, PointFrame::Camera, |r, c| {
            Vector3::new(r as f64, c as f64, 1.0)
        })
        .unwrap();
        let same = pointmap_to_world(&pm, &CameraPose::identity()).unwrap();
        assert_eq!(same.points(), pm.points());
        let t = Vector3::new(0.5, 0.0, -1.0);
        let cam = CameraPose::new(nalgebra::Matrix3::identity(), t).unwrap();
        let moved = pointmap_to_world(&pm, &cam).unwrap();
        for (a, b) in pm.points().iter().zip(moved.points()) {
            assert_eq!(*b, a + t);
        }
        assert_eq!(moved.valid_mask(), pm.valid_mask());
    }
}
