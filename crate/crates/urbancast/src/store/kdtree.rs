//! Exact 2-d KD-tree over region centroids.
//!
//! Queries return the k nearest points by squared Euclidean distance with
//! ties broken by ascending id, matching a brute-force scan exactly. Built
//! once at database construction; immutable afterwards.

use std::collections::BinaryHeap;

#[derive(Debug, Clone, Copy)]
struct Node {
    id: u64,
    x: f64,
    y: f64,
    left: usize,
    right: usize,
}

const NIL: usize = usize::MAX;

#[derive(Debug, Clone)]
pub struct KdTree {
    nodes: Vec<Node>,
    root: usize,
}

/// Max-heap entry ordered by (squared distance, id) so the lexicographically
/// worst candidate sits on top.
#[derive(Debug, PartialEq)]
struct HeapItem {
    d2: f64,
    id: u64,
}

impl Eq for HeapItem {}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // Distances are validated finite at construction.
        self.d2
            .partial_cmp(&other.d2)
            .unwrap()
            .then_with(|| self.id.cmp(&other.id))
    }
}

impl KdTree {
    pub fn build(points: &[(u64, f64, f64)]) -> Self {
        let mut nodes: Vec<Node> = points
            .iter()
            .map(|&(id, x, y)| Node { id, x, y, left: NIL, right: NIL })
            .collect();
        let mut order: Vec<usize> = (0..nodes.len()).collect();
        let root = Self::build_rec(&mut nodes, &mut order, 0);
        KdTree { nodes, root }
    }

    fn build_rec(nodes: &mut [Node], order: &mut [usize], depth: usize) -> usize {
        if order.is_empty() {
            return NIL;
        }
        let axis = depth % 2;
        order.sort_by(|&a, &b| {
            let ka = if axis == 0 { nodes[a].x } else { nodes[a].y };
            let kb = if axis == 0 { nodes[b].x } else { nodes[b].y };
            ka.total_cmp(&kb).then(nodes[a].id.cmp(&nodes[b].id))
        });
        let mid = order.len() / 2;
        let idx = order[mid];
        let (lo, rest) = order.split_at_mut(mid);
        let hi = &mut rest[1..];
        let left = Self::build_rec(nodes, lo, depth + 1);
        let right = Self::build_rec(nodes, hi, depth + 1);
        nodes[idx].left = left;
        nodes[idx].right = right;
        idx
    }

    /// The k points nearest to (qx, qy), excluding `exclude`, as
    /// (id, distance) pairs sorted ascending by (distance, id).
    pub fn nearest(&self, qx: f64, qy: f64, k: usize, exclude: u64) -> Vec<(u64, f64)> {
        if k == 0 || self.nodes.is_empty() {
            return Vec::new();
        }
        let mut heap: BinaryHeap<HeapItem> = BinaryHeap::with_capacity(k + 1);
        self.search(self.root, qx, qy, k, exclude, 0, &mut heap);
        let mut out: Vec<(u64, f64)> = heap
            .into_iter()
            .map(|item| (item.id, item.d2.sqrt()))
            .collect();
        out.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
        out
    }

    fn search(
        &self,
        idx: usize,
        qx: f64,
        qy: f64,
        k: usize,
        exclude: u64,
        depth: usize,
        heap: &mut BinaryHeap<HeapItem>,
    ) {
        if idx == NIL {
            return;
        }
        let node = &self.nodes[idx];
        if node.id != exclude {
            let dx = node.x - qx;
            let dy = node.y - qy;
            let item = HeapItem { d2: dx * dx + dy * dy, id: node.id };
            if heap.len() < k {
                heap.push(item);
            } else if item < *heap.peek().unwrap() {
                heap.pop();
                heap.push(item);
            }
        }
        let axis = depth % 2;
        let (nkey, qkey) = if axis == 0 { (node.x, qx) } else { (node.y, qy) };
        let (near, far) = if qkey < nkey {
            (node.left, node.right)
        } else {
            (node.right, node.left)
        };
        self.search(near, qx, qy, k, exclude, depth + 1, heap);
        // The far side may hold an equal-distance point with a smaller id,
        // so it is pruned only on strictly larger plane distance.
        let plane_d2 = (qkey - nkey) * (qkey - nkey);
        let explore_far = heap.len() < k || plane_d2 <= heap.peek().unwrap().d2;
        if explore_far {
            self.search(far, qx, qy, k, exclude, depth + 1, heap);
        }
    }
}
