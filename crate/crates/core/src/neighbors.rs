//! Exact k-nearest-neighbour search with a kd-tree.
//!
//! Results are ordered by `(squared distance, point index)`, so ties resolve
//! to the lowest index and agree with a brute-force scan.

use rayon::prelude::*;

use crate::error::{Error, Result};

const LEAF_SIZE: usize = 16;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { dim: usize, value: f64, left: usize, right: usize },
}

#[derive(Debug, Clone)]
pub struct KdTree {
    dim: usize,
    points: Vec<f64>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub sq_distance: f64,
}

impl Neighbor {
    pub fn distance(&self) -> f64 {
        self.sq_distance.sqrt()
    }
}

#[inline]
pub fn sq_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        s += d * d;
    }
    s
}

impl KdTree {
    /// Builds over `points`, a row-major `n x dim` buffer.
    pub fn new(points: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("points need at least one dimension".into()));
        }
        if points.len() % dim != 0 {
            return Err(Error::Shape(format!(
                "{} coordinates do not split into {dim}-dimensional points",
                points.len()
            )));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("kd-tree coordinates".into()));
        }
        let n = points.len() / dim;
        let mut tree = KdTree {
            dim,
            points,
            order: (0..n).collect(),
            nodes: Vec::new(),
        };
        if n > 0 {
            tree.build(0, n);
        }
        Ok(tree)
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { start, end });
        if end - start <= LEAF_SIZE {
            return id;
        }
        let mut best_dim = 0;
        let mut best_spread = -1.0;
        for d in 0..self.dim {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &i in &self.order[start..end] {
                let v = self.points[i * self.dim + d];
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if hi - lo > best_spread {
                best_spread = hi - lo;
                best_dim = d;
            }
        }
        if best_spread <= 0.0 {
            return id;
        }
        let mid = start + (end - start) / 2;
        let (dim, pts) = (self.dim, &self.points);
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            pts[a * dim + best_dim].total_cmp(&pts[b * dim + best_dim])
        });
        let value = self.points[self.order[mid] * dim + best_dim];
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split {
            dim: best_dim,
            value,
            left,
            right,
        };
        id
    }

    /// The `k` nearest points to `query`, closest first.
    pub fn nearest(&self, query: &[f64], k: usize) -> Vec<Neighbor> {
        assert_eq!(query.len(), self.dim, "query dimension");
        let mut best: Vec<Neighbor> = Vec::with_capacity(k + 1);
        if k > 0 && !self.is_empty() {
            self.search(0, query, k, &mut best);
        }
        best
    }

    fn search(&self, node: usize, q: &[f64], k: usize, best: &mut Vec<Neighbor>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d = sq_distance(q, self.point(i));
                    if best.len() == k {
                        let worst = best[k - 1];
                        if (d, i) >= (worst.sq_distance, worst.index) {
                            continue;
                        }
                    }
                    let at = best.partition_point(|n| (n.sq_distance, n.index) < (d, i));
                    best.insert(at, Neighbor { index: i, sq_distance: d });
                    best.truncate(k);
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = q[dim] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, k, best);
                // Points on the far side are at least |diff| away along `dim`.
                if best.len() < k || diff * diff <= best[k - 1].sq_distance {
                    self.search(far, q, k, best);
                }
            }
        }
    }

    /// `nearest` for every row of the row-major `queries` buffer, in order.
    pub fn nearest_all(&self, queries: &[f64], k: usize) -> Vec<Vec<Neighbor>> {
        queries
            .par_chunks(self.dim)
            .map(|q| self.nearest(q, k))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute(points: &[f64], dim: usize, q: &[f64], k: usize) -> Vec<Neighbor> {
        let mut all: Vec<Neighbor> = points
            .chunks(dim)
            .enumerate()
            .map(|(i, p)| Neighbor {
                index: i,
                sq_distance: sq_distance(q, p),
            })
            .collect();
        all.sort_by(|a, b| {
            a.sq_distance
                .total_cmp(&b.sq_distance)
                .then(a.index.cmp(&b.index))
        });
        all.truncate(k);
        all
    }

    #[test]
    fn ties_break_by_index() {
        let t = KdTree::new(vec![1.0, -1.0, 1.0, 3.0], 1).unwrap();
        let n = t.nearest(&[0.0], 3);
        assert_eq!(n.iter().map(|n| n.index).collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    #[test]
    fn empty_and_shape_errors() {
        let t = KdTree::new(vec![], 2).unwrap();
        assert!(t.nearest(&[0.0, 0.0], 2).is_empty());
        assert!(KdTree::new(vec![1.0, 2.0, 3.0], 2).is_err());
        assert!(KdTree::new(vec![f64::NAN], 1).is_err());
    }

    #[test]
    fn duplicate_points_are_all_returned() {
        let pts: Vec<f64> = std::iter::repeat_n([0.5, 0.5], 100).flatten().collect();
        let t = KdTree::new(pts.clone(), 2).unwrap();
        let n = t.nearest(&[0.5, 0.5], 5);
        assert_eq!(n, brute(&pts, 2, &[0.5, 0.5], 5));
    }

    proptest! {
        #[test]
        fn matches_brute_force(
            dim in 1usize..5,
            raw in proptest::collection::vec(-3i32..3, 0..400),
            q in proptest::collection::vec(-4i32..4, 4),
            k in 1usize..7,
        ) {
            // Coarse integer grid so exact ties are common.
            let n = raw.len() / dim;
            let pts: Vec<f64> = raw[..n * dim].iter().map(|&v| v as f64 * 0.5).collect();
            let q: Vec<f64> = q[..dim].iter().map(|&v| v as f64 * 0.5).collect();
            let t = KdTree::new(pts.clone(), dim).unwrap();
            prop_assert_eq!(t.nearest(&q, k), brute(&pts, dim, &q, k));
        }
    }
}
