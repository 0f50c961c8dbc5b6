//! Static 3-D kd-tree for nearest and k-nearest neighbour queries.

use crate::Vec3;

const LEAF: usize = 8;

#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Vec3>,
    idx: Vec<usize>,
    nodes: Vec<KdNode>,
}

#[derive(Debug, Clone)]
struct KdNode {
    start: usize,
    end: usize,
    axis: usize,
    split: f64,
    left: usize,
    right: usize,
}

impl KdTree {
    pub fn new(points: Vec<Vec3>) -> Self {
        let n = points.len();
        let mut t = KdTree {
            points,
            idx: (0..n).collect(),
            nodes: Vec::new(),
        };
        if n > 0 {
            t.build(0, n);
        }
        t
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(KdNode {
            start,
            end,
            axis: 0,
            split: 0.0,
            left: usize::MAX,
            right: usize::MAX,
        });
        if end - start <= LEAF {
            return id;
        }
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for &i in &self.idx[start..end] {
            lo = lo.inf(&self.points[i]);
            hi = hi.sup(&self.points[i]);
        }
        let axis = (hi - lo).imax();
        let mid = (start + end) / 2;
        let pts = &self.points;
        self.idx[start..end].select_nth_unstable_by(mid - start, |&a, &b| pts[a][axis].total_cmp(&pts[b][axis]));
        let split = self.points[self.idx[mid]][axis];
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        let n = &mut self.nodes[id];
        n.axis = axis;
        n.split = split;
        n.left = left;
        n.right = right;
        id
    }

    /// Index and squared distance of the point closest to `q`; ties resolve to the lower index.
    pub fn nearest(&self, q: &Vec3) -> Option<(usize, f64)> {
        self.knn(q, 1).into_iter().next()
    }

    /// The `k` closest points, sorted by (squared distance, index).
    pub fn knn(&self, q: &Vec3, k: usize) -> Vec<(usize, f64)> {
        let mut best: Vec<(usize, f64)> = Vec::with_capacity(k + 1);
        if self.nodes.is_empty() || k == 0 {
            return best;
        }
        self.search(0, q, k, &mut best);
        best
    }

    fn search(&self, n: usize, q: &Vec3, k: usize, best: &mut Vec<(usize, f64)>) {
        let node = &self.nodes[n];
        if node.left == usize::MAX {
            for &i in &self.idx[node.start..node.end] {
                let d2 = (self.points[i] - q).norm_squared();
                let worse = |&(j, dj): &(usize, f64)| dj > d2 || (dj == d2 && j > i);
                if best.len() < k || best.last().is_some_and(worse) {
                    let pos = best.partition_point(|e| !worse(e));
                    best.insert(pos, (i, d2));
                    best.truncate(k);
                }
            }
            return;
        }
        let diff = q[node.axis] - node.split;
        let (near, far) = if diff < 0.0 {
            (node.left, node.right)
        } else {
            (node.right, node.left)
        };
        self.search(near, q, k, best);
        if best.len() < k || diff * diff <= best.last().unwrap().1 {
            self.search(far, q, k, best);
        }
    }
}
