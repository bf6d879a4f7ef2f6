//! Exact k-nearest-neighbour search over flat point arrays.
//!
//! Neighbours are ordered by `(squared Euclidean distance, index)`, so ties
//! always resolve to the lowest index and results match an exhaustive scan
//! exactly, distances included.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

const LEAF_SIZE: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub dist_sq: f64,
}

impl Neighbor {
    pub fn dist(&self) -> f64 {
        self.dist_sq.sqrt()
    }
}

impl Eq for Neighbor {}

impl Ord for Neighbor {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist_sq
            .total_cmp(&other.dist_sq)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Neighbor {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Squared Euclidean distance, accumulated in coordinate order.
#[inline]
pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        s += d * d;
    }
    s
}

#[derive(Clone, Debug)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        dim: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Clone, Debug)]
pub struct KdTree {
    dim: usize,
    /// Coordinates in tree order.
    coords: Vec<f64>,
    /// Original index of each point in tree order.
    ids: Vec<usize>,
    nodes: Vec<Node>,
}

impl KdTree {
    /// Builds over all points of a flat `n × dim` array.
    pub fn build(points: &[f64], dim: usize) -> Self {
        assert!(dim > 0 && points.len().is_multiple_of(dim));
        let ids: Vec<usize> = (0..points.len() / dim).collect();
        Self::build_subset(points, dim, &ids)
    }

    /// Builds over the listed points only; reported indices are the original ones.
    pub fn build_subset(points: &[f64], dim: usize, subset: &[usize]) -> Self {
        assert!(dim > 0);
        let mut ids = subset.to_vec();
        let mut nodes = Vec::new();
        if !ids.is_empty() {
            let n = ids.len();
            Self::build_rec(points, dim, &mut ids, 0, n, &mut nodes);
        }
        let mut coords = Vec::with_capacity(ids.len() * dim);
        for &i in &ids {
            coords.extend_from_slice(&points[i * dim..(i + 1) * dim]);
        }
        KdTree {
            dim,
            coords,
            ids,
            nodes,
        }
    }

    fn build_rec(
        points: &[f64],
        dim: usize,
        ids: &mut [usize],
        start: usize,
        end: usize,
        nodes: &mut Vec<Node>,
    ) -> usize {
        let me = nodes.len();
        if end - start <= LEAF_SIZE {
            nodes.push(Node::Leaf { start, end });
            return me;
        }
        // split on the dimension of largest spread
        let slice = &ids[start..end];
        let (mut best_dim, mut best_spread) = (0, -1.0);
        for d in 0..dim {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &i in slice {
                let v = points[i * dim + d];
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if hi - lo > best_spread {
                best_spread = hi - lo;
                best_dim = d;
            }
        }
        if best_spread <= 0.0 {
            nodes.push(Node::Leaf { start, end });
            return me;
        }
        let mid = (end - start) / 2;
        ids[start..end].select_nth_unstable_by(mid, |&a, &b| {
            points[a * dim + best_dim].total_cmp(&points[b * dim + best_dim])
        });
        let value = points[ids[start + mid] * dim + best_dim];
        nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = Self::build_rec(points, dim, ids, start, start + mid, nodes);
        let right = Self::build_rec(points, dim, ids, start + mid, end, nodes);
        nodes[me] = Node::Split {
            dim: best_dim,
            value,
            left,
            right,
        };
        me
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// The `k` nearest points to `q`, ascending.
    pub fn knn(&self, q: &[f64], k: usize) -> Vec<Neighbor> {
        self.knn_filtered(q, k, |_| true)
    }

    /// The `k` nearest points among those whose original index passes `accept`.
    pub fn knn_filtered<F: Fn(usize) -> bool>(&self, q: &[f64], k: usize, accept: F) -> Vec<Neighbor> {
        assert_eq!(q.len(), self.dim);
        if k == 0 || self.nodes.is_empty() {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search(0, q, k, &accept, &mut heap);
        heap.into_sorted_vec()
    }

    fn search<F: Fn(usize) -> bool>(
        &self,
        node: usize,
        q: &[f64],
        k: usize,
        accept: &F,
        heap: &mut BinaryHeap<Neighbor>,
    ) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for slot in start..end {
                    let index = self.ids[slot];
                    if !accept(index) {
                        continue;
                    }
                    let p = &self.coords[slot * self.dim..(slot + 1) * self.dim];
                    let cand = Neighbor {
                        index,
                        dist_sq: dist_sq(q, p),
                    };
                    if heap.len() < k {
                        heap.push(cand);
                    } else if cand < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(cand);
                    }
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
                self.search(near, q, k, accept, heap);
                // a plane exactly at the worst distance may still hide a lower-index tie
                if heap.len() < k || diff * diff <= heap.peek().unwrap().dist_sq {
                    self.search(far, q, k, accept, heap);
                }
            }
        }
    }
}
