//! Static 3D kd-tree for k-nearest-neighbour and fixed-radius queries.
//!
//! Query results are ordered by `(distance, index)` so that ties resolve the
//! same way regardless of how the tree happened to be split.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::num::{cmp_scalar, Scalar, Vec3};

const LEAF_SIZE: usize = 12;

#[derive(Debug, Clone)]
enum Node<T> {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: T, left: usize, right: usize },
}

#[derive(Debug, Clone)]
pub struct KdTree<T> {
    points: Vec<Vec3<T>>,
    order: Vec<usize>,
    nodes: Vec<Node<T>>,
}

struct Candidate<T> {
    dist_sq: T,
    index: usize,
}

impl<T: Scalar> PartialEq for Candidate<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<T: Scalar> Eq for Candidate<T> {}

impl<T: Scalar> PartialOrd for Candidate<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T: Scalar> Ord for Candidate<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        cmp_scalar(self.dist_sq, other.dist_sq).then(self.index.cmp(&other.index))
    }
}

impl<T: Scalar> KdTree<T> {
    pub fn build(points: &[Vec3<T>]) -> Self {
        let mut tree = KdTree {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            tree.build_node(0, points.len());
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let axis = self.widest_axis(start, end);
        let mid = (start + end) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            cmp_scalar(points[a][axis], points[b][axis]).then(a.cmp(&b))
        });
        let value = self.points[self.order[mid]][axis];
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id] = Node::Split { axis, value, left, right };
        id
    }

    fn widest_axis(&self, start: usize, end: usize) -> usize {
        let mut lo = [T::infinity(); 3];
        let mut hi = [T::neg_infinity(); 3];
        for &i in &self.order[start..end] {
            let p = self.points[i];
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let spread = [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]];
        let mut best = 0;
        for a in 1..3 {
            if spread[a] > spread[best] {
                best = a;
            }
        }
        best
    }

    /// The `k` nearest points to `query` as `(index, distance)`, nearest first.
    pub fn nearest_k(&self, query: Vec3<T>, k: usize) -> Vec<(usize, T)> {
        if k == 0 || self.nodes.is_empty() {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.knn_recurse(0, query, k, &mut heap);
        let mut out: Vec<Candidate<T>> = heap.into_vec();
        out.sort();
        out.into_iter().map(|c| (c.index, c.dist_sq.sqrt())).collect()
    }

    pub fn nearest(&self, query: Vec3<T>) -> Option<(usize, T)> {
        self.nearest_k(query, 1).into_iter().next()
    }

    fn knn_recurse(&self, node: usize, q: Vec3<T>, k: usize, heap: &mut BinaryHeap<Candidate<T>>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let cand = Candidate { dist_sq: self.points[i].distance_sq(q), index: i };
                    if heap.len() < k {
                        heap.push(cand);
                    } else if let Some(worst) = heap.peek() {
                        if cand < *worst {
                            heap.pop();
                            heap.push(cand);
                        }
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < T::zero() { (left, right) } else { (right, left) };
                self.knn_recurse(near, q, k, heap);
                let must_visit = heap.len() < k
                    || heap.peek().is_none_or(|w| diff * diff <= w.dist_sq);
                if must_visit {
                    self.knn_recurse(far, q, k, heap);
                }
            }
        }
    }

    /// Indices of all points within `radius` of `query` (inclusive), ascending.
    pub fn within_radius(&self, query: Vec3<T>, radius: T) -> Vec<usize> {
        let mut out = Vec::new();
        if !self.nodes.is_empty() {
            self.radius_recurse(0, query, radius * radius, &mut out);
        }
        out.sort_unstable();
        out
    }

    fn radius_recurse(&self, node: usize, q: Vec3<T>, r_sq: T, out: &mut Vec<usize>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                out.extend(
                    self.order[start..end]
                        .iter()
                        .copied()
                        .filter(|&i| self.points[i].distance_sq(q) <= r_sq),
                );
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < T::zero() { (left, right) } else { (right, left) };
                self.radius_recurse(near, q, r_sq, out);
                if diff * diff <= r_sq {
                    self.radius_recurse(far, q, r_sq, out);
                }
            }
        }
    }
}

/// Connected components of the graph joining points closer than `radius`
/// (inclusive). Each component is sorted; components are ordered by their
/// smallest index.
pub fn connected_components<T: Scalar>(points: &[Vec3<T>], radius: T) -> Vec<Vec<usize>> {
    let tree = KdTree::build(points);
    let mut seen = vec![false; points.len()];
    let mut out = Vec::new();
    for start in 0..points.len() {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut component = vec![start];
        let mut stack = vec![start];
        while let Some(i) = stack.pop() {
            for j in tree.within_radius(points[i], radius) {
                if !seen[j] {
                    seen[j] = true;
                    component.push(j);
                    stack.push(j);
                }
            }
        }
        component.sort_unstable();
        out.push(component);
    }
    out
}
