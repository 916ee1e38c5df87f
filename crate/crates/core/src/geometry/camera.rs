use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{Color, GeometryError, PointCloud, Pose};

/// Segment id written to pixels that received no point.
pub const NO_SEGMENT: u32 = 0;

/// Pinhole intrinsics plus the world→camera extrinsic.
///
/// Pixel `(col, row)` has its center at image coordinates `(col, row)`, so a
/// camera-frame point projects to column `round(fx·x/z + cx)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub extrinsic: Pose,
}

impl CameraModel {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        extrinsic: Pose,
    ) -> Result<Self, GeometryError> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            extrinsic,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Square camera with the given horizontal field of view (radians).
    pub fn with_fov(size: usize, fov: f64, extrinsic: Pose) -> Result<Self, GeometryError> {
        let f = (size as f64 / 2.0) / (fov / 2.0).tan();
        let c = (size as f64 - 1.0) / 2.0;
        Self::new(f, f, c, c, size, size, extrinsic)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let ok = self.fx.is_finite()
            && self.fy.is_finite()
            && self.fx > 0.0
            && self.fy > 0.0
            && self.width > 0
            && self.height > 0
            && self.cx >= 0.0
            && self.cy >= 0.0
            && self.cx < self.width as f64
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(GeometryError::InvalidCamera)
        }
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        self.extrinsic.inverse().translation
    }

    /// World-frame unit direction of the ray through a pixel center.
    pub fn pixel_ray(&self, col: usize, row: usize) -> Vector3<f64> {
        let d = Vector3::new(
            (col as f64 - self.cx) / self.fx,
            (row as f64 - self.cy) / self.fy,
            1.0,
        );
        self.extrinsic.rotation.inverse().rotate(&d).normalize()
    }

    /// World point seen at a pixel center with the given z-depth.
    pub fn unproject_pixel(&self, col: usize, row: usize, depth: f64) -> Vector3<f64> {
        let p = Vector3::new(
            (col as f64 - self.cx) * depth / self.fx,
            (row as f64 - self.cy) * depth / self.fy,
            depth,
        );
        self.extrinsic.inverse().apply(&p)
    }

    /// Pixel and z-depth of a world point; `None` when behind the camera or
    /// outside the image.
    pub fn project_point(&self, x: &Vector3<f64>) -> Option<(usize, usize, f64)> {
        let p = self.extrinsic.apply(x);
        if !(p.z > 0.0) {
            return None;
        }
        let u = (self.fx * p.x / p.z + self.cx + 0.5).floor();
        let v = (self.fy * p.y / p.z + self.cy + 0.5).floor();
        if u < 0.0 || v < 0.0 || u >= self.width as f64 || v >= self.height as f64 {
            return None;
        }
        Some((u as usize, v as usize, p.z))
    }

    /// Largest lateral displacement introduced by snapping a point at z-depth
    /// `depth` to its pixel center.
    pub fn half_pixel_bound(&self, depth: f64) -> f64 {
        depth * 0.5 * (1.0 / (self.fx * self.fx) + 1.0 / (self.fy * self.fy)).sqrt()
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }
}

/// RGB-D frame with a per-pixel segmentation channel.
///
/// Planes are stored row-major; depth is camera z in meters with `0` marking
/// pixels without a measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneObservation {
    pub rgb: Vec<Color>,
    pub depth: Vec<f64>,
    pub segmentation: Vec<u32>,
    pub camera: CameraModel,
}

impl SceneObservation {
    pub fn new(
        rgb: Vec<Color>,
        depth: Vec<f64>,
        segmentation: Vec<u32>,
        camera: CameraModel,
    ) -> Result<Self, GeometryError> {
        camera.validate()?;
        let n = camera.num_pixels();
        for (field, got) in [
            ("rgb", rgb.len()),
            ("depth", depth.len()),
            ("segmentation", segmentation.len()),
        ] {
            if got != n {
                return Err(GeometryError::LengthMismatch {
                    field,
                    expected: n,
                    got,
                });
            }
        }
        if depth.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(GeometryError::InvalidDepth);
        }
        if rgb.iter().flatten().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(GeometryError::ColorRange);
        }
        Ok(Self {
            rgb,
            depth,
            segmentation,
            camera,
        })
    }

    /// Observation with no valid pixels.
    pub fn blank(camera: CameraModel) -> Self {
        let n = camera.num_pixels();
        Self {
            rgb: vec![[0.0; 3]; n],
            depth: vec![0.0; n],
            segmentation: vec![NO_SEGMENT; n],
            camera,
        }
    }

    pub fn width(&self) -> usize {
        self.camera.width
    }

    pub fn height(&self) -> usize {
        self.camera.height
    }

    pub fn index(&self, col: usize, row: usize) -> usize {
        row * self.camera.width + col
    }

    pub fn valid_pixels(&self) -> usize {
        self.depth.iter().filter(|d| **d > 0.0).count()
    }

    pub fn contains_segment(&self, id: u32) -> bool {
        self.segmentation
            .iter()
            .zip(&self.depth)
            .any(|(s, d)| *s == id && *d > 0.0)
    }
}

const DEFAULT_COLOR: Color = [0.5, 0.5, 0.5];

/// Z-buffered pinhole rendering of a cloud.
///
/// The nearest point wins each pixel; on exactly equal depth the lower point
/// index is kept. Pixels that receive no point get depth 0 and segment
/// [`NO_SEGMENT`].
pub fn project(cloud: &PointCloud, camera: &CameraModel) -> SceneObservation {
    let mut obs = SceneObservation::blank(*camera);
    let colors = cloud.colors();
    let labels = cloud.labels();
    for (i, x) in cloud.points().iter().enumerate() {
        let Some((col, row, z)) = camera.project_point(x) else {
            continue;
        };
        let k = obs.index(col, row);
        if obs.depth[k] == 0.0 || z < obs.depth[k] {
            obs.depth[k] = z;
            obs.rgb[k] = colors.map_or(DEFAULT_COLOR, |c| c[i]);
            obs.segmentation[k] = labels.map_or(NO_SEGMENT, |l| l[i]);
        }
    }
    obs
}

/// Back-projects every valid pixel to a world-frame point, carrying color and
/// segment label.
pub fn unproject(obs: &SceneObservation) -> PointCloud {
    unproject_where(obs, |_| true)
}

pub(crate) fn unproject_where(
    obs: &SceneObservation,
    mut keep: impl FnMut(u32) -> bool,
) -> PointCloud {
    let cam = &obs.camera;
    let mut points = Vec::new();
    let mut colors = Vec::new();
    let mut labels = Vec::new();
    for row in 0..cam.height {
        for col in 0..cam.width {
            let k = row * cam.width + col;
            let z = obs.depth[k];
            if z > 0.0 && keep(obs.segmentation[k]) {
                points.push(cam.unproject_pixel(col, row, z));
                colors.push(obs.rgb[k]);
                labels.push(obs.segmentation[k]);
            }
        }
    }
    // Pixel data were validated on construction, so these cannot fail.
    PointCloud::new(points)
        .and_then(|c| c.with_colors(colors))
        .and_then(|c| c.with_labels(labels))
        .unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Rotation;
    use approx::assert_abs_diff_eq;

    fn axis_camera() -> CameraModel {
        CameraModel::new(100.0, 100.0, 32.0, 24.0, 64, 48, Pose::identity()).unwrap()
    }

    #[test]
    fn camera_validation() {
        assert!(CameraModel::new(0.0, 1.0, 1.0, 1.0, 4, 4, Pose::identity()).is_err());
        assert!(CameraModel::new(1.0, 1.0, 4.0, 1.0, 4, 4, Pose::identity()).is_err());
        assert!(CameraModel::new(1.0, 1.0, -0.1, 1.0, 4, 4, Pose::identity()).is_err());
    }

    #[test]
    fn optical_axis_point_lands_on_principal_point() {
        let cam = axis_camera();
        let c = PointCloud::new(vec![Vector3::new(0.0, 0.0, 2.0)]).unwrap();
        let obs = project(&c, &cam);
        assert_eq!(obs.depth[obs.index(32, 24)], 2.0);
        assert_eq!(obs.valid_pixels(), 1);
        let back = unproject(&obs);
        assert_eq!(back.points()[0], Vector3::new(0.0, 0.0, 2.0));
    }

    #[test]
    fn z_buffer_keeps_nearer_point() {
        let cam = axis_camera();
        let c = PointCloud::new(vec![
            Vector3::new(0.0, 0.0, 3.0),
            Vector3::new(0.0, 0.0, 1.5),
        ])
        .unwrap()
        .with_colors(vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        .unwrap()
        .with_labels(vec![5, 6])
        .unwrap();
        let obs = project(&c, &cam);
        let k = obs.index(32, 24);
        assert_eq!(obs.depth[k], 1.5);
        assert_eq!(obs.rgb[k], [0.0, 1.0, 0.0]);
        assert_eq!(obs.segmentation[k], 6);
    }

    #[test]
    fn equal_depth_tie_goes_to_lower_index() {
        let cam = axis_camera();
        let c = PointCloud::new(vec![
            Vector3::new(0.0, 0.0, 1.0),
            Vector3::new(0.001, 0.0, 1.0),
        ])
        .unwrap()
        .with_labels(vec![1, 2])
        .unwrap();
        let obs = project(&c, &cam);
        assert_eq!(obs.segmentation[obs.index(32, 24)], 1);
    }

    #[test]
    fn invalid_depth_gives_empty_cloud() {
        let obs = SceneObservation::blank(axis_camera());
        assert!(unproject(&obs).is_empty());
    }

    #[test]
    fn points_behind_camera_are_dropped() {
        let c = PointCloud::new(vec![Vector3::new(0.0, 0.0, -1.0)]).unwrap();
        assert_eq!(project(&c, &axis_camera()).valid_pixels(), 0);
    }

    #[test]
    fn look_at_camera_sees_target_at_center() {
        let eye = Vector3::new(0.8, 0.1, 0.6);
        let target = Vector3::new(0.0, 0.0, 0.0);
        let ext = Pose::look_at(&eye, &target, &Vector3::z()).unwrap();
        let cam = CameraModel::with_fov(129, 0.8, ext).unwrap();
        let (u, v, z) = cam.project_point(&target).unwrap();
        assert_eq!((u, v), (64, 64));
        assert_abs_diff_eq!(z, eye.norm(), epsilon = 1e-12);
        // Image rows grow downwards: a point above the target is in the upper half.
        let (_, v_up, _) = cam.project_point(&Vector3::new(0.0, 0.0, 0.1)).unwrap();
        assert!(v_up < 64);
        let ray = cam.pixel_ray(64, 64);
        assert_abs_diff_eq!(ray, (target - eye).normalize(), epsilon = 1e-12);
        let _ = Rotation::identity();
    }

    #[test]
    fn observation_rejects_mismatched_planes() {
        let cam = axis_camera();
        let n = cam.num_pixels();
        assert!(
            SceneObservation::new(vec![[0.0; 3]; n], vec![0.0; n - 1], vec![0; n], cam).is_err()
        );
        assert!(SceneObservation::new(vec![[0.0; 3]; n], vec![-1.0; n], vec![0; n], cam).is_err());
    }
}
