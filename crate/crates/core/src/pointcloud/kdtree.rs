use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::Point3;

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

/// Static 3D k-d tree over a borrowed point slice.
///
/// The tree stores only a permutation of point indices; the points
/// themselves are passed back in at query time so the owning cloud keeps a
/// single copy.
#[derive(Debug, Clone)]
pub struct KdTree {
    nodes: Vec<Node>,
    order: Vec<usize>,
    root: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    dist2: f64,
    index: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist2
            .total_cmp(&other.dist2)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[inline]
fn dist2(a: &Point3<f64>, b: &Point3<f64>) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    dx * dx + dy * dy + dz * dz
}

impl KdTree {
    pub fn build(points: &[Point3<f64>]) -> Self {
        let mut tree = KdTree {
            nodes: Vec::new(),
            order: (0..points.len()).collect(),
            root: None,
        };
        if !points.is_empty() {
            let root = tree.build_range(points, 0, points.len());
            tree.root = Some(root);
        }
        tree
    }

    fn build_range(&mut self, points: &[Point3<f64>], start: usize, end: usize) -> usize {
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return self.nodes.len() - 1;
        }
        let slice = &mut self.order[start..end];
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in slice.iter() {
            for a in 0..3 {
                lo[a] = lo[a].min(points[i][a]);
                hi[a] = hi[a].max(points[i][a]);
            }
        }
        let axis = (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .unwrap_or(0);
        let mid = slice.len() / 2;
        slice.select_nth_unstable_by(mid, |&i, &j| {
            points[i][axis]
                .total_cmp(&points[j][axis])
                .then(i.cmp(&j))
        });
        let value = points[slice[mid]][axis];

        let placeholder = self.nodes.len();
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build_range(points, start, start + mid);
        let right = self.build_range(points, start + mid, end);
        self.nodes[placeholder] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        placeholder
    }

    pub fn knn(&self, points: &[Point3<f64>], query: &Point3<f64>, k: usize) -> Vec<(usize, f64)> {
        let Some(root) = self.root else {
            return Vec::new();
        };
        let k = k.min(points.len());
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.knn_visit(root, points, query, k, &mut heap);
        let mut out: Vec<Candidate> = heap.into_vec();
        out.sort();
        out.into_iter().map(|c| (c.index, c.dist2.sqrt())).collect()
    }

    fn knn_visit(
        &self,
        node: usize,
        points: &[Point3<f64>],
        query: &Point3<f64>,
        k: usize,
        heap: &mut BinaryHeap<Candidate>,
    ) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &index in &self.order[start..end] {
                    let cand = Candidate {
                        dist2: dist2(&points[index], query),
                        index,
                    };
                    if heap.len() < k {
                        heap.push(cand);
                    } else if heap.peek().is_some_and(|worst| cand < *worst) {
                        heap.pop();
                        heap.push(cand);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = query[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.knn_visit(near, points, query, k, heap);
                let must_visit = heap.len() < k
                    || heap.peek().is_some_and(|worst| diff * diff <= worst.dist2);
                if must_visit {
                    self.knn_visit(far, points, query, k, heap);
                }
            }
        }
    }

    pub fn within_radius(&self, points: &[Point3<f64>], query: &Point3<f64>, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        if let Some(root) = self.root {
            let r2 = radius * radius;
            self.radius_visit(root, points, query, r2, &mut out);
        }
        out.sort_unstable();
        out
    }

    fn radius_visit(&self, node: usize, points: &[Point3<f64>], query: &Point3<f64>, r2: f64, out: &mut Vec<usize>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                out.extend(
                    self.order[start..end]
                        .iter()
                        .copied()
                        .filter(|&i| dist2(&points[i], query) <= r2),
                );
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = query[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.radius_visit(near, points, query, r2, out);
                if diff * diff <= r2 {
                    self.radius_visit(far, points, query, r2, out);
                }
            }
        }
    }
}
