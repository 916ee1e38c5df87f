//! Solid primitives with exact ray intersection, containment tests and
//! area-uniform surface sampling.

use nalgebra::{Vector2, Vector3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{Color, PointCloud, Pose};

/// Shapes are centered on their local origin; cylinders and holes run along local z.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Primitive {
    Cuboid {
        half: Vector3<f64>,
    },
    Cylinder {
        radius: f64,
        half_height: f64,
    },
    /// Cuboid with a vertical through-hole of `hole_radius` at `hole_center` (local x, y).
    HoledCuboid {
        half: Vector3<f64>,
        hole_center: Vector2<f64>,
        hole_radius: f64,
    },
}

const EPS: f64 = 1e-12;

impl Primitive {
    /// Entry distance of the ray `o + t·d` (`d` unit) into the solid, local frame.
    pub fn intersect(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<f64> {
        match *self {
            Primitive::Cuboid { half } => {
                box_interval(o, d, &half).and_then(|(t0, t1)| entry(t0, t1))
            }
            Primitive::Cylinder {
                radius,
                half_height,
            } => {
                let (t0, t1) = slab(o.z, d.z, half_height)?;
                let (c0, c1) = disk_interval(o.x, o.y, d.x, d.y, radius)?;
                entry(t0.max(c0), t1.min(c1))
            }
            Primitive::HoledCuboid {
                half,
                hole_center,
                hole_radius,
            } => {
                let (t0, t1) = box_interval(o, d, &half)?;
                let t0 = t0.max(0.0);
                if t0 > t1 {
                    return None;
                }
                match disk_interval(
                    o.x - hole_center.x,
                    o.y - hole_center.y,
                    d.x,
                    d.y,
                    hole_radius,
                ) {
                    // Inside the hole at the box entry: the solid starts where the ray leaves the hole.
                    Some((c0, c1)) if c0 <= t0 && t0 < c1 => (c1 <= t1).then_some(c1),
                    _ => Some(t0),
                }
            }
        }
    }

    pub fn contains(&self, p: &Vector3<f64>, margin: f64) -> bool {
        match *self {
            Primitive::Cuboid { half } => (0..3).all(|k| p[k].abs() < half[k] - margin),
            Primitive::Cylinder {
                radius,
                half_height,
            } => p.z.abs() < half_height - margin && p.xy().norm() < radius - margin,
            Primitive::HoledCuboid {
                half,
                hole_center,
                hole_radius,
            } => {
                (0..3).all(|k| p[k].abs() < half[k] - margin)
                    && (p.xy() - hole_center).norm() > hole_radius + margin
            }
        }
    }

    pub fn surface_area(&self) -> f64 {
        match *self {
            Primitive::Cuboid { half } => {
                8.0 * (half.x * half.y + half.y * half.z + half.x * half.z)
            }
            Primitive::Cylinder {
                radius,
                half_height,
            } => 2.0 * std::f64::consts::PI * radius * (radius + 2.0 * half_height),
            Primitive::HoledCuboid {
                half, hole_radius, ..
            } => {
                let disk = std::f64::consts::PI * hole_radius * hole_radius;
                8.0 * (half.x * half.y + half.y * half.z + half.x * half.z) - 2.0 * disk
                    + 2.0 * std::f64::consts::PI * hole_radius * 2.0 * half.z
            }
        }
    }

    /// Radius of a bounding sphere about the local origin.
    pub fn bounding_radius(&self) -> f64 {
        match *self {
            Primitive::Cuboid { half } | Primitive::HoledCuboid { half, .. } => half.norm(),
            Primitive::Cylinder {
                radius,
                half_height,
            } => (radius * radius + half_height * half_height).sqrt(),
        }
    }

    pub fn sample_surface<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector3<f64> {
        match *self {
            Primitive::Cuboid { half } => sample_box_face(&half, rng),
            Primitive::Cylinder {
                radius,
                half_height,
            } => {
                let side = 2.0 * std::f64::consts::PI * radius * 2.0 * half_height;
                let caps = 2.0 * std::f64::consts::PI * radius * radius;
                let phi = rng.random_range(0.0..std::f64::consts::TAU);
                if rng.random_range(0.0..side + caps) < side {
                    Vector3::new(
                        radius * phi.cos(),
                        radius * phi.sin(),
                        rng.random_range(-half_height..=half_height),
                    )
                } else {
                    let r = radius * rng.random_range(0.0f64..1.0).sqrt();
                    let z = if rng.random_bool(0.5) {
                        half_height
                    } else {
                        -half_height
                    };
                    Vector3::new(r * phi.cos(), r * phi.sin(), z)
                }
            }
            Primitive::HoledCuboid {
                half,
                hole_center,
                hole_radius,
            } => {
                let wall = std::f64::consts::TAU * hole_radius * 2.0 * half.z;
                let total = self.surface_area();
                if rng.random_range(0.0..total) < wall {
                    let phi = rng.random_range(0.0..std::f64::consts::TAU);
                    return Vector3::new(
                        hole_center.x + hole_radius * phi.cos(),
                        hole_center.y + hole_radius * phi.sin(),
                        rng.random_range(-half.z..=half.z),
                    );
                }
                loop {
                    let p = sample_box_face(&half, rng);
                    let on_cap = (p.z.abs() - half.z).abs() < EPS;
                    if !(on_cap && (p.xy() - hole_center).norm() < hole_radius) {
                        return p;
                    }
                }
            }
        }
    }
}

fn sample_box_face<R: Rng + ?Sized>(half: &Vector3<f64>, rng: &mut R) -> Vector3<f64> {
    let areas = [half.y * half.z, half.x * half.z, half.x * half.y];
    let total: f64 = areas.iter().sum();
    let mut pick = rng.random_range(0.0..total);
    let mut axis = 2;
    for (k, a) in areas.iter().enumerate() {
        if pick < *a {
            axis = k;
            break;
        }
        pick -= a;
    }
    let mut p = Vector3::new(
        rng.random_range(-half.x..=half.x),
        rng.random_range(-half.y..=half.y),
        rng.random_range(-half.z..=half.z),
    );
    p[axis] = if rng.random_bool(0.5) {
        half[axis]
    } else {
        -half[axis]
    };
    p
}

fn entry(t0: f64, t1: f64) -> Option<f64> {
    if t1 < t0 || t1 <= 0.0 {
        None
    } else {
        Some(t0.max(0.0))
    }
}

fn slab(o: f64, d: f64, half: f64) -> Option<(f64, f64)> {
    if d.abs() < EPS {
        return (o.abs() <= half).then_some((f64::NEG_INFINITY, f64::INFINITY));
    }
    let a = (-half - o) / d;
    let b = (half - o) / d;
    Some((a.min(b), a.max(b)))
}

fn box_interval(o: &Vector3<f64>, d: &Vector3<f64>, half: &Vector3<f64>) -> Option<(f64, f64)> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for k in 0..3 {
        let (a, b) = slab(o[k], d[k], half[k])?;
        t0 = t0.max(a);
        t1 = t1.min(b);
    }
    (t0 <= t1).then_some((t0, t1))
}

/// Parameter interval where the 2-d ray lies inside the disk of radius `r`.
fn disk_interval(ox: f64, oy: f64, dx: f64, dy: f64, r: f64) -> Option<(f64, f64)> {
    let a = dx * dx + dy * dy;
    let c = ox * ox + oy * oy - r * r;
    if a < EPS {
        return (c <= 0.0).then_some((f64::NEG_INFINITY, f64::INFINITY));
    }
    let b = ox * dx + oy * dy;
    let disc = b * b - a * c;
    if disc < 0.0 {
        return None;
    }
    let s = disc.sqrt();
    // Numerically stable roots.
    let q = if b >= 0.0 { -(b + s) } else { -b + s };
    let (r0, r1) = if q == 0.0 { (0.0, 0.0) } else { (q / a, c / q) };
    Some((r0.min(r1), r0.max(r1)))
}

/// A primitive placed in an object's body frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Part {
    pub shape: Primitive,
    pub offset: Pose,
}

/// Rigid object made of a union of parts with one color.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectModel {
    pub parts: Vec<Part>,
    pub color: Color,
}

impl ObjectModel {
    pub fn single(shape: Primitive, color: Color) -> Self {
        Self {
            parts: vec![Part {
                shape,
                offset: Pose::identity(),
            }],
            color,
        }
    }

    /// Nearest entry distance of a world ray into the object placed at `pose`.
    pub fn intersect(&self, pose: &Pose, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        self.parts
            .iter()
            .filter_map(|part| {
                let to_local = pose.compose(&part.offset).inverse();
                let o = to_local.apply(origin);
                let d = to_local.rotation.rotate(dir);
                part.shape.intersect(&o, &d)
            })
            .min_by(f64::total_cmp)
    }

    /// Whether a body-frame point lies inside some part by more than `margin`.
    pub fn contains(&self, p: &Vector3<f64>, margin: f64) -> bool {
        self.parts
            .iter()
            .any(|part| part.shape.contains(&part.offset.inverse().apply(p), margin))
    }

    pub fn bounding_radius(&self) -> f64 {
        self.parts
            .iter()
            .map(|p| p.offset.translation.norm() + p.shape.bounding_radius())
            .fold(0.0, f64::max)
    }

    /// `n` body-frame surface samples, drawn area-proportionally across parts
    /// from a fixed seed so the same model always yields the same samples.
    /// Samples buried inside another part are kept: they are harmless for
    /// rendering because the z-buffer hides them.
    pub fn surface_samples(&self, n: usize, seed: u64) -> Vec<Vector3<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let areas: Vec<f64> = self.parts.iter().map(|p| p.shape.surface_area()).collect();
        let total: f64 = areas.iter().sum();
        (0..n)
            .map(|_| {
                let mut pick = rng.random_range(0.0..total);
                let mut idx = areas.len() - 1;
                for (k, a) in areas.iter().enumerate() {
                    if pick < *a {
                        idx = k;
                        break;
                    }
                    pick -= a;
                }
                let part = &self.parts[idx];
                part.offset.apply(&part.shape.sample_surface(&mut rng))
            })
            .collect()
    }

    /// Surface samples as a labeled, colored cloud carrying sample ids.
    pub fn sample_cloud(&self, n: usize, seed: u64, label: u32) -> PointCloud {
        let pts = self.surface_samples(n, seed);
        let ids = (0..pts.len() as u32).collect();
        PointCloud::new(pts)
            .expect("finite samples")
            .painted(self.color)
            .labeled(label)
            .with_point_ids(ids)
            .expect("matching length")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_rays_hit_expected_faces() {
        let down = Vector3::new(0.0, 0.0, -1.0);
        let o = Vector3::new(0.0, 0.0, 1.0);
        let c = Primitive::Cuboid {
            half: Vector3::new(0.1, 0.2, 0.3),
        };
        assert!((c.intersect(&o, &down).unwrap() - 0.7).abs() < 1e-15);
        let cyl = Primitive::Cylinder {
            radius: 0.05,
            half_height: 0.1,
        };
        assert!((cyl.intersect(&o, &down).unwrap() - 0.9).abs() < 1e-15);
        let side = Vector3::new(1.0, 0.0, 0.0);
        assert!(
            (cyl.intersect(&Vector3::new(-1.0, 0.0, 0.0), &side).unwrap() - 0.95).abs() < 1e-12
        );
        assert!(cyl
            .intersect(&Vector3::new(-1.0, 0.2, 0.0), &side)
            .is_none());
    }

    #[test]
    fn ray_through_hole_reaches_the_wall_or_misses() {
        let h = Primitive::HoledCuboid {
            half: Vector3::new(0.1, 0.1, 0.05),
            hole_center: Vector2::new(0.0, 0.0),
            hole_radius: 0.02,
        };
        let down = Vector3::new(0.0, 0.0, -1.0);
        assert!(h.intersect(&Vector3::new(0.0, 0.0, 1.0), &down).is_none());
        assert!((h.intersect(&Vector3::new(0.05, 0.0, 1.0), &down).unwrap() - 0.95).abs() < 1e-12);
        // Slanted ray entering the hole then hitting its wall.
        let d = Vector3::new(1.0, 0.0, -1.0).normalize();
        let o = Vector3::new(-0.01 - 0.5, 0.0, 0.05 + 0.5);
        let t = h.intersect(&o, &d).unwrap();
        let p = o + d * t;
        assert!((p.x - 0.02).abs() < 1e-12 && p.z < 0.05);
    }

    #[test]
    fn samples_lie_on_the_surface() {
        let m = ObjectModel {
            parts: vec![
                Part {
                    shape: Primitive::Cylinder {
                        radius: 0.02,
                        half_height: 0.05,
                    },
                    offset: Pose::identity(),
                },
                Part {
                    shape: Primitive::HoledCuboid {
                        half: Vector3::new(0.05, 0.05, 0.01),
                        hole_center: Vector2::new(0.01, 0.0),
                        hole_radius: 0.01,
                    },
                    offset: Pose::from_translation(Vector3::new(0.3, 0.0, 0.0)),
                },
            ],
            color: [1.0, 0.0, 0.0],
        };
        let pts = m.surface_samples(2000, 7);
        assert_eq!(pts, m.surface_samples(2000, 7));
        for p in &pts {
            assert!(!m.contains(p, 1e-9), "sample {p:?} strictly inside");
            assert!(
                m.contains(p, -1e-9) || p.x > 0.2,
                "sample {p:?} off the cylinder surface"
            );
        }
    }
}
