use std::cmp::Ordering;

use crate::linalg::Vec3;

const LEAF_SIZE: usize = 8;

#[derive(Clone, Debug)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

/// Static 3-d tree over a point slice. Queries return exact k nearest
/// neighbors ordered by `(squared distance, index)`, so ties go to the
/// lowest index.
#[derive(Clone, Debug)]
pub struct KdTree<'a> {
    points: &'a [Vec3],
    order: Vec<u32>,
    nodes: Vec<Node>,
}

fn dist2(a: &Vec3, b: &Vec3) -> f64 {
    let d = *a - *b;
    d.dot(&d)
}

#[inline]
fn closer(a: (f64, u32), b: (f64, u32)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

impl<'a> KdTree<'a> {
    pub fn new(points: &'a [Vec3]) -> Self {
        let mut tree = KdTree {
            points,
            order: (0..points.len() as u32).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            tree.build(0, points.len());
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let slice = &mut self.order[start..end];
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in slice.iter() {
            let p = &self.points[i as usize];
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let axis = (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).partial_cmp(&(hi[b] - lo[b])).unwrap_or(Ordering::Equal))
            .unwrap_or(0);
        let mid = slice.len() / 2;
        let pts = self.points;
        slice.select_nth_unstable_by(mid, |&a, &b| {
            pts[a as usize][axis]
                .partial_cmp(&pts[b as usize][axis])
                .unwrap_or(Ordering::Equal)
                .then(a.cmp(&b))
        });
        let value = pts[slice[mid] as usize][axis];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build(start, start + mid);
        let right = self.build(start + mid, end);
        self.nodes[id] = Node::Split { axis, value, left, right };
        id
    }

    /// Indices of the `k` nearest points to `q`, nearest first.
    pub fn knn(&self, q: &Vec3, k: usize) -> Vec<u32> {
        let k = k.min(self.len());
        if k == 0 {
            return Vec::new();
        }
        let mut best: Vec<(f64, u32)> = Vec::with_capacity(k + 1);
        self.search(0, q, k, &mut best);
        best.into_iter().map(|(_, i)| i).collect()
    }

    fn search(&self, node: usize, q: &Vec3, k: usize, best: &mut Vec<(f64, u32)>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let cand = (dist2(q, &self.points[i as usize]), i);
                    if best.len() == k && !closer(cand, best[k - 1]) {
                        continue;
                    }
                    let pos = best.partition_point(|&b| closer(b, cand));
                    best.insert(pos, cand);
                    best.truncate(k);
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, k, best);
                // ties at equal distance may still hide a lower index
                if best.len() < k || diff * diff <= best[k - 1].0 {
                    self.search(far, q, k, best);
                }
            }
        }
    }
}

/// Exhaustive k-nearest-neighbor search with the same ordering as [`KdTree`].
pub fn knn_brute_force(points: &[Vec3], q: &Vec3, k: usize) -> Vec<u32> {
    let mut all: Vec<(f64, u32)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| (dist2(q, p), i as u32))
        .collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1)));
    all.truncate(k);
    all.into_iter().map(|(_, i)| i).collect()
}
