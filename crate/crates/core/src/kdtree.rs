//! Static k-d tree for exact single-nearest-neighbour queries under squared
//! Euclidean distance. Ties are resolved towards the smallest point index, so
//! results agree with a linear scan.

const LEAF_SIZE: usize = 8;

#[derive(Debug)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { dim: usize, value: f64, left: usize, right: usize },
}

#[derive(Debug)]
pub struct KdTree<'a> {
    /// Row-major point coordinates, `dim` values per point.
    points: &'a [f64],
    dim: usize,
    /// Point indices (rows of `points`) in tree order.
    order: Vec<usize>,
    nodes: Vec<Node>,
}

/// Squared Euclidean distance, summed in coordinate order.
#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        s += d * d;
    }
    s
}

impl<'a> KdTree<'a> {
    /// Builds a tree over the rows `members` of `points`.
    pub fn new(points: &'a [f64], dim: usize, members: Vec<usize>) -> Self {
        assert!(dim > 0);
        let mut tree = KdTree {
            points,
            dim,
            order: members,
            nodes: Vec::new(),
        };
        if !tree.order.is_empty() {
            let n = tree.order.len();
            tree.build(0, n);
        }
        tree
    }

    #[cfg(test)]
    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    #[inline]
    fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let dim = self.widest_dim(start, end);
        let mid = start + (end - start) / 2;
        let (points, d) = (self.points, self.dim);
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a * d + dim].total_cmp(&points[b * d + dim])
        });
        let value = points[self.order[mid] * d + dim];
        self.nodes.push(Node::Split { dim, value, left: 0, right: 0 });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        if let Node::Split { left: l, right: r, .. } = &mut self.nodes[id] {
            *l = left;
            *r = right;
        }
        id
    }

    fn widest_dim(&self, start: usize, end: usize) -> usize {
        let mut best = (0, f64::NEG_INFINITY);
        for k in 0..self.dim {
            let (lo, hi) = self.order[start..end]
                .iter()
                .map(|&i| self.point(i)[k])
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            if hi - lo > best.1 {
                best = (k, hi - lo);
            }
        }
        best.0
    }

    /// Nearest member to `query`, skipping `exclude`. Returns `(index, squared distance)`.
    pub fn nearest(&self, query: &[f64], exclude: Option<usize>) -> Option<(usize, f64)> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(0, query, exclude, &mut best);
        (best.0 != usize::MAX).then_some(best)
    }

    fn search(&self, node: usize, q: &[f64], exclude: Option<usize>, best: &mut (usize, f64)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    if Some(i) == exclude {
                        continue;
                    }
                    let d = squared_distance(q, self.point(i));
                    if d < best.1 || (d == best.1 && i < best.0) {
                        *best = (i, d);
                    }
                }
            }
            Node::Split { dim, value, left, right } => {
                let diff = q[dim] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, exclude, best);
                // Equal-distance candidates on the far side may carry a smaller index.
                if diff * diff <= best.1 {
                    self.search(far, q, exclude, best);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn agrees_with_linear_scan_including_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for dim in 1..5 {
            // coarse grid values force many exact ties
            let n = 300;
            let pts: Vec<f64> = (0..n * dim).map(|_| f64::from(rng.gen_range(0..6u8))).collect();
            let members: Vec<usize> = (0..n).filter(|i| i % 3 != 0).collect();
            let tree = KdTree::new(&pts, dim, members.clone());
            for _ in 0..200 {
                let q: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..7.0f64).round()).collect();
                let exclude = Some(members[rng.gen_range(0..members.len())]);
                let mut expect = (usize::MAX, f64::INFINITY);
                for &i in &members {
                    if Some(i) == exclude {
                        continue;
                    }
                    let d = squared_distance(&q, &pts[i * dim..(i + 1) * dim]);
                    if d < expect.1 {
                        expect = (i, d);
                    }
                }
                assert_eq!(tree.nearest(&q, exclude), Some(expect));
            }
        }
    }

    #[test]
    fn empty_tree() {
        let tree = KdTree::new(&[], 2, vec![]);
        assert!(tree.is_empty());
        assert_eq!(tree.nearest(&[0.0, 0.0], None), None);
    }
}
