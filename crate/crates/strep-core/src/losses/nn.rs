//! Exact nearest-neighbor search for Chamfer terms.
//!
//! Two interchangeable routes: an O(n²) scan and a k-d tree. Both use the
//! identical distance expression and the identical `(distance, index)`
//! tie-break (lowest index wins on exact ties), so their results are equal
//! bit for bit — the tree is an accelerator, not an approximation.

/// Squared Euclidean distance, accumulated in coordinate order. Both search
/// routes must call this exact function so their distances agree bitwise.
#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut d = 0.0;
    for c in 0..a.len() {
        let t = a[c] - b[c];
        d += t * t;
    }
    d
}

/// For each query row, the index of the closest reference row (brute force).
pub fn nearest_brute(queries: &[f64], refs: &[f64], dim: usize) -> Vec<u32> {
    let nq = queries.len() / dim;
    let nr = refs.len() / dim;
    let mut out = Vec::with_capacity(nq);
    for q in queries.chunks_exact(dim) {
        let mut best = (f64::INFINITY, 0u32);
        for i in 0..nr {
            let d = sq_dist(q, &refs[i * dim..i * dim + dim]);
            if d < best.0 {
                best = (d, i as u32);
            }
        }
        out.push(best.1);
    }
    out
}

/// Subranges of ≤ this many points are scanned linearly.
const LEAF: usize = 8;

/// Balanced k-d tree over a borrowed flat point buffer. Nodes are implicit:
/// the median element of each canonically sorted subrange splits it, cycling
/// the axis with depth.
pub struct KdTree<'a> {
    pts: &'a [f64],
    dim: usize,
    idx: Vec<u32>,
}

impl<'a> KdTree<'a> {
    pub fn build(pts: &'a [f64], dim: usize) -> KdTree<'a> {
        let n = pts.len() / dim;
        let mut idx: Vec<u32> = (0..n as u32).collect();
        build_range(pts, dim, &mut idx, 0);
        KdTree { pts, dim, idx }
    }

    /// Index of the nearest point to `q` under the shared tie-break.
    pub fn nearest(&self, q: &[f64]) -> u32 {
        let mut best = (f64::INFINITY, 0u32);
        self.search(0, self.idx.len(), 0, q, &mut best);
        best.1
    }

    fn consider(&self, i: u32, q: &[f64], best: &mut (f64, u32)) {
        let p = &self.pts[i as usize * self.dim..(i as usize + 1) * self.dim];
        let d = sq_dist(q, p);
        if d < best.0 || (d == best.0 && i < best.1) {
            *best = (d, i);
        }
    }

    fn search(&self, lo: usize, hi: usize, depth: usize, q: &[f64], best: &mut (f64, u32)) {
        if hi - lo <= LEAF {
            for &i in &self.idx[lo..hi] {
                self.consider(i, q, best);
            }
            return;
        }
        let mid = (lo + hi) / 2;
        let axis = depth % self.dim;
        let node = self.idx[mid];
        self.consider(node, q, best);
        let split = self.pts[node as usize * self.dim + axis];
        let delta = q[axis] - split;
        let (near, far) = if delta < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search(near.0, near.1, depth + 1, q, best);
        // An equal-distance, lower-index candidate may sit exactly on the
        // slab boundary, so prune only when strictly farther.
        if delta * delta <= best.0 {
            self.search(far.0, far.1, depth + 1, q, best);
        }
    }
}

fn build_range(pts: &[f64], dim: usize, idx: &mut [u32], depth: usize) {
    if idx.len() <= LEAF {
        return;
    }
    let axis = depth % dim;
    // Total order (coordinate, index): canonical tree shape for determinism.
    idx.sort_unstable_by(|&a, &b| {
        let ca = pts[a as usize * dim + axis];
        let cb = pts[b as usize * dim + axis];
        ca.partial_cmp(&cb).unwrap().then(a.cmp(&b))
    });
    let mid = idx.len() / 2;
    let (left, rest) = idx.split_at_mut(mid);
    build_range(pts, dim, left, depth + 1);
    build_range(pts, dim, &mut rest[1..], depth + 1);
}

/// Nearest reference index per query row; switches to the k-d tree above the
/// size where brute force stops being competitive. Both routes are exact.
pub fn nearest(queries: &[f64], refs: &[f64], dim: usize) -> Vec<u32> {
    let nr = refs.len() / dim;
    if nr <= 256 {
        return nearest_brute(queries, refs, dim);
    }
    let tree = KdTree::build(refs, dim);
    queries.chunks_exact(dim).map(|q| tree.nearest(q)).collect()
}
