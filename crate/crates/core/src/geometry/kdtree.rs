use nalgebra::Vector3;

/// Static 3-d tree over a borrowed point slice, for nearest-neighbour lookups.
///
/// Points are stored by index; the tree never copies coordinates.
pub struct KdTree<'a> {
    points: &'a [Vector3<f64>],
    order: Vec<usize>,
    // Split coordinate of the node whose median sits at this position.
    split: Vec<f64>,
}

const LEAF: usize = 8;

impl<'a> KdTree<'a> {
    pub fn build(points: &'a [Vector3<f64>]) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut split = vec![0.0; points.len()];
        build_rec(points, &mut order, &mut split, 0);
        Self {
            points,
            order,
            split,
        }
    }

    /// Index and squared distance of the closest point; ties go to the
    /// first point encountered, which is deterministic for a given input.
    pub fn nearest(&self, q: &Vector3<f64>) -> Option<(usize, f64)> {
        if self.order.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(q, 0, self.order.len(), 0, &mut best);
        Some(best)
    }

    fn search(
        &self,
        q: &Vector3<f64>,
        lo: usize,
        hi: usize,
        depth: usize,
        best: &mut (usize, f64),
    ) {
        if hi - lo <= LEAF {
            for &i in &self.order[lo..hi] {
                let d2 = (self.points[i] - q).norm_squared();
                if d2 < best.1 || (d2 == best.1 && i < best.0) {
                    *best = (i, d2);
                }
            }
            return;
        }
        let axis = depth % 3;
        let mid = lo + (hi - lo) / 2;
        let diff = q[axis] - self.split[mid];
        let (near, far) = if diff < 0.0 {
            ((lo, mid), (mid, hi))
        } else {
            ((mid, hi), (lo, mid))
        };
        self.search(q, near.0, near.1, depth + 1, best);
        if diff * diff <= best.1 {
            self.search(q, far.0, far.1, depth + 1, best);
        }
    }
}

fn build_rec(points: &[Vector3<f64>], order: &mut [usize], split: &mut [f64], depth: usize) {
    if order.len() <= LEAF {
        return;
    }
    let axis = depth % 3;
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| points[a][axis].total_cmp(&points[b][axis]));
    split[mid] = points[order[mid]][axis];
    let (left, right) = order.split_at_mut(mid);
    let (split_left, split_right) = split.split_at_mut(mid);
    build_rec(points, left, split_left, depth + 1);
    build_rec(points, right, split_right, depth + 1);
}
