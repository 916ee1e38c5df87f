use nalgebra::Vector3;

use super::{GeometryError, KdTree, Pose, ScaleTransform};

pub type Color = [f32; 3];

/// Points with optional per-point colors, segment labels and sample ids.
///
/// `point_ids` identify the model sample a point was generated from. Oracle
/// adapters fill them in so that clouds of the same object in two states can
/// be paired index-for-index before registration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    points: Vec<Vector3<f64>>,
    colors: Option<Vec<Color>>,
    labels: Option<Vec<u32>>,
    point_ids: Option<Vec<u32>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>) -> Result<Self, GeometryError> {
        if points.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(GeometryError::NonFinite);
        }
        Ok(Self {
            points,
            ..Default::default()
        })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn with_colors(mut self, colors: Vec<Color>) -> Result<Self, GeometryError> {
        check_len("colors", self.points.len(), colors.len())?;
        if colors.iter().flatten().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(GeometryError::ColorRange);
        }
        self.colors = Some(colors);
        Ok(self)
    }

    pub fn with_labels(mut self, labels: Vec<u32>) -> Result<Self, GeometryError> {
        check_len("labels", self.points.len(), labels.len())?;
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn with_point_ids(mut self, ids: Vec<u32>) -> Result<Self, GeometryError> {
        check_len("point_ids", self.points.len(), ids.len())?;
        self.point_ids = Some(ids);
        Ok(self)
    }

    /// Uniform label for every point.
    pub fn labeled(self, label: u32) -> Self {
        let n = self.points.len();
        Self {
            labels: Some(vec![label; n]),
            ..self
        }
    }

    pub fn painted(self, color: Color) -> Self {
        let n = self.points.len();
        Self {
            colors: Some(vec![color; n]),
            ..self
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn colors(&self) -> Option<&[Color]> {
        self.colors.as_deref()
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    pub fn point_ids(&self) -> Option<&[u32]> {
        self.point_ids.as_deref()
    }

    pub fn label(&self, i: usize) -> Option<u32> {
        self.labels.as_ref().map(|l| l[i])
    }

    pub fn centroid(&self) -> Option<Vector3<f64>> {
        if self.points.is_empty() {
            return None;
        }
        let sum: Vector3<f64> = self.points.iter().sum();
        Some(sum / self.points.len() as f64)
    }

    /// Points at the given indices, attributes carried along.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            colors: self
                .colors
                .as_ref()
                .map(|c| indices.iter().map(|&i| c[i]).collect()),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
            point_ids: self
                .point_ids
                .as_ref()
                .map(|d| indices.iter().map(|&i| d[i]).collect()),
        }
    }

    pub fn filter(&self, mut keep: impl FnMut(usize) -> bool) -> PointCloud {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(i)).collect();
        self.select(&idx)
    }

    /// Points whose label equals `label`; an unlabeled cloud yields nothing.
    pub fn with_label(&self, label: u32) -> PointCloud {
        match &self.labels {
            Some(l) => self.filter(|i| l[i] == label),
            None => PointCloud::empty(),
        }
    }

    /// Set union (concatenation). Attributes survive only when both sides
    /// carry them, except that an empty side never erases them.
    pub fn union(&self, other: &PointCloud) -> PointCloud {
        if self.is_empty() {
            return other.clone();
        }
        if other.is_empty() {
            return self.clone();
        }
        fn join<T: Clone>(a: &Option<Vec<T>>, b: &Option<Vec<T>>) -> Option<Vec<T>> {
            match (a, b) {
                (Some(a), Some(b)) => Some(a.iter().chain(b).cloned().collect()),
                _ => None,
            }
        }
        PointCloud {
            points: self.points.iter().chain(&other.points).copied().collect(),
            colors: join(&self.colors, &other.colors),
            labels: join(&self.labels, &other.labels),
            point_ids: join(&self.point_ids, &other.point_ids),
        }
    }

    pub(crate) fn map_points(&self, f: impl Fn(&Vector3<f64>) -> Vector3<f64>) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(f).collect(),
            ..self.clone()
        }
    }

    /// Same attributes with new positions; lengths must match.
    pub(crate) fn with_positions(&self, points: Vec<Vector3<f64>>) -> PointCloud {
        assert_eq!(points.len(), self.points.len());
        PointCloud {
            points,
            ..self.clone()
        }
    }

    /// One point per occupied voxel of edge `size`: the centroid, the mean
    /// color and the label of the first point that fell in. Output order
    /// follows voxel keys, so it is deterministic. Point ids are dropped.
    pub fn voxel_downsample(&self, size: f64) -> Result<PointCloud, GeometryError> {
        if !(size.is_finite() && size > 0.0) {
            return Err(GeometryError::InvalidScale(size));
        }
        let mut cells: std::collections::BTreeMap<[i64; 3], (Vector3<f64>, [f64; 3], u32, usize)> =
            Default::default();
        for (i, p) in self.points.iter().enumerate() {
            let key = [0, 1, 2].map(|k| (p[k] / size).floor() as i64);
            let color = self
                .colors
                .as_ref()
                .map_or([0.0; 3], |c| c[i].map(f64::from));
            let label = self.labels.as_ref().map_or(0, |l| l[i]);
            let e = cells
                .entry(key)
                .or_insert((Vector3::zeros(), [0.0; 3], label, 0));
            e.0 += p;
            for k in 0..3 {
                e.1[k] += color[k];
            }
            e.3 += 1;
        }
        let mut out = PointCloud {
            points: cells.values().map(|(s, _, _, n)| s / *n as f64).collect(),
            ..Default::default()
        };
        if self.colors.is_some() {
            out.colors = Some(
                cells
                    .values()
                    .map(|(_, c, _, n)| c.map(|v| (v / *n as f64) as f32))
                    .collect(),
            );
        }
        if self.labels.is_some() {
            out.labels = Some(cells.values().map(|(_, _, l, _)| *l).collect());
        }
        Ok(out)
    }

    /// Axis-aligned bounds, `None` for an empty cloud.
    pub fn bounds(&self) -> Option<(Vector3<f64>, Vector3<f64>)> {
        let first = self.points.first()?;
        Some(
            self.points
                .iter()
                .fold((*first, *first), |(lo, hi), p| (lo.inf(p), hi.sup(p))),
        )
    }
}

fn check_len(field: &'static str, expected: usize, got: usize) -> Result<(), GeometryError> {
    if expected == got {
        Ok(())
    } else {
        Err(GeometryError::LengthMismatch {
            field,
            expected,
            got,
        })
    }
}

/// Maps every point through `x ↦ R·(s·x) + t`; attributes are preserved.
pub fn apply_transform(pose: &Pose, scale: &ScaleTransform, cloud: &PointCloud) -> PointCloud {
    let s = scale.factor();
    cloud.map_points(|x| pose.apply(&(x * s)))
}

/// Symmetric Chamfer distance: the mean nearest-neighbour distance from `a`
/// to `b` plus the mean from `b` to `a`, halved. Two empty clouds are at
/// distance zero; one empty side gives infinity.
pub fn chamfer_distance(a: &PointCloud, b: &PointCloud) -> f64 {
    match (a.is_empty(), b.is_empty()) {
        (true, true) => return 0.0,
        (true, false) | (false, true) => return f64::INFINITY,
        _ => {}
    }
    0.5 * (directed_mean_distance(a, b) + directed_mean_distance(b, a))
}

/// Mean over points of `from` of the distance to their nearest neighbour in `to`.
pub fn directed_mean_distance(from: &PointCloud, to: &PointCloud) -> f64 {
    let tree = KdTree::build(to.points());
    let total: f64 = from
        .points()
        .iter()
        .map(|p| {
            tree.nearest(p)
                .map(|(_, d2)| d2.sqrt())
                .unwrap_or(f64::INFINITY)
        })
        .sum();
    total / from.len() as f64
}

/// Largest nearest-neighbour distance from `from` into `to`.
pub fn directed_max_distance(from: &PointCloud, to: &PointCloud) -> f64 {
    let tree = KdTree::build(to.points());
    from.points()
        .iter()
        .map(|p| {
            tree.nearest(p)
                .map(|(_, d2)| d2.sqrt())
                .unwrap_or(f64::INFINITY)
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Rotation;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::FRAC_PI_2;

    fn cloud(pts: &[[f64; 3]]) -> PointCloud {
        PointCloud::new(pts.iter().map(|p| Vector3::from(*p)).collect()).unwrap()
    }

    #[test]
    fn transform_examples() {
        let c = cloud(&[[1.0, 1.0, 1.0]]);
        let same = apply_transform(&Pose::identity(), &ScaleTransform::unit(), &c);
        assert_eq!(same, c);
        let scaled = apply_transform(&Pose::identity(), &ScaleTransform::new(2.0).unwrap(), &c);
        assert_eq!(scaled.points()[0], Vector3::new(2.0, 2.0, 2.0));
        let p = Pose::new(Rotation::rot_z(FRAC_PI_2), Vector3::new(0.0, 0.0, 1.0));
        let moved = apply_transform(&p, &ScaleTransform::unit(), &cloud(&[[1.0, 0.0, 0.0]]));
        assert_abs_diff_eq!(
            moved.points()[0],
            Vector3::new(0.0, 1.0, 1.0),
            epsilon = 1e-15
        );
        assert!(apply_transform(&p, &ScaleTransform::unit(), &PointCloud::empty()).is_empty());
    }

    #[test]
    fn attributes_survive_transform() {
        let c = cloud(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
            .with_colors(vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
            .unwrap()
            .with_labels(vec![4, 7])
            .unwrap();
        let moved = apply_transform(
            &Pose::from_translation(Vector3::x()),
            &ScaleTransform::unit(),
            &c,
        );
        assert_eq!(moved.colors(), c.colors());
        assert_eq!(moved.labels(), Some(&[4, 7][..]));
    }

    #[test]
    fn invalid_clouds_are_rejected() {
        assert!(PointCloud::new(vec![Vector3::new(f64::NAN, 0.0, 0.0)]).is_err());
        let c = cloud(&[[0.0; 3]]);
        assert!(c.clone().with_labels(vec![1, 2]).is_err());
        assert!(c.with_colors(vec![[2.0, 0.0, 0.0]]).is_err());
    }

    #[test]
    fn chamfer_of_shifted_cloud() {
        let a = cloud(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        let b = apply_transform(
            &Pose::from_translation(Vector3::new(0.0, 0.1, 0.0)),
            &ScaleTransform::unit(),
            &a,
        );
        assert_abs_diff_eq!(chamfer_distance(&a, &b), 0.1, epsilon = 1e-12);
        assert_eq!(chamfer_distance(&a, &a), 0.0);
        assert_eq!(
            chamfer_distance(&PointCloud::empty(), &PointCloud::empty()),
            0.0
        );
        assert!(chamfer_distance(&a, &PointCloud::empty()).is_infinite());
    }

    #[test]
    fn union_and_label_filter() {
        let a = cloud(&[[0.0; 3]]).labeled(1);
        let b = cloud(&[[1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]).labeled(2);
        let u = a.union(&b);
        assert_eq!(u.len(), 3);
        assert_eq!(u.with_label(2).len(), 2);
        assert_eq!(u.with_label(9).len(), 0);
        assert_eq!(PointCloud::empty().union(&b), b);
    }
}
