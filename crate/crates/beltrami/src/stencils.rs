//! Nearest-neighbor search and tangent-plane stencil geometry.
//!
//! Neighbors are exact Euclidean K-nearest in the ambient space, ties broken
//! by ascending point index. Search goes through a ball tree, which keeps
//! query cost tied to the intrinsic rather than ambient dimension for
//! manifold-supported clouds (the flat tori live in R^12 and R^16 where a
//! k-d tree degrades badly).

use crate::error::{Error, Result};
use crate::manifolds::PointCloud;

const LEAF_SIZE: usize = 24;

struct Node {
    center: Vec<f64>,
    radius: f64,
    kind: NodeKind,
}

enum NodeKind {
    Leaf { start: usize, end: usize },
    Split { left: usize, right: usize },
}

/// Immutable spatial index over a cloud's ambient coordinates.
pub struct NeighborIndex {
    dim: usize,
    len: usize,
    points: Vec<f64>,
    /// Point indices, permuted so every leaf owns a contiguous range.
    order: Vec<u32>,
    nodes: Vec<Node>,
    root: usize,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Builds the k-NN index over the cloud's ambient points.
pub fn build_knn_index(cloud: &PointCloud) -> NeighborIndex {
    NeighborIndex::new(cloud.points.clone(), cloud.n, cloud.len)
}

impl NeighborIndex {
    fn new(points: Vec<f64>, dim: usize, len: usize) -> Self {
        assert!(len >= 2, "index needs at least 2 points");
        let mut idx = NeighborIndex {
            dim,
            len,
            points,
            order: (0..len as u32).collect(),
            nodes: Vec::with_capacity(2 * len / LEAF_SIZE + 2),
            root: 0,
        };
        idx.root = idx.build(0, len);
        idx
    }

    fn pt(&self, i: u32) -> &[f64] {
        let i = i as usize;
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    fn bounding_ball(&self, start: usize, end: usize) -> (Vec<f64>, f64) {
        let mut center = vec![0.0; self.dim];
        for &i in &self.order[start..end] {
            for (c, x) in center.iter_mut().zip(self.pt(i)) {
                *c += x;
            }
        }
        let count = (end - start) as f64;
        for c in &mut center {
            *c /= count;
        }
        let radius = self.order[start..end]
            .iter()
            .map(|&i| dist2(&center, self.pt(i)))
            .fold(0.0f64, f64::max)
            .sqrt();
        (center, radius)
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let (center, radius) = self.bounding_ball(start, end);
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node { center, radius, kind: NodeKind::Leaf { start, end } });
            return self.nodes.len() - 1;
        }
        // Split along the direction between the two (approximately) farthest
        // points of the ball: pick the point farthest from the centroid, then
        // the point farthest from it.
        let far = |from: &[f64], order: &[u32], points: &NeighborIndex| {
            let mut best = order[0];
            let mut best_d = -1.0;
            for &i in order {
                let d = dist2(from, points.pt(i));
                if d > best_d {
                    best_d = d;
                    best = i;
                }
            }
            best
        };
        let a = far(&center, &self.order[start..end], self);
        let pa = self.pt(a).to_vec();
        let b = far(&pa, &self.order[start..end], self);
        let pb = self.pt(b).to_vec();
        let axis: Vec<f64> = pa.iter().zip(&pb).map(|(x, y)| y - x).collect();

        let mid = start + (end - start) / 2;
        let dim = self.dim;
        let points = std::mem::take(&mut self.points);
        let proj = |i: u32| -> f64 {
            let p = &points[i as usize * dim..(i as usize + 1) * dim];
            p.iter().zip(&axis).map(|(x, t)| x * t).sum()
        };
        self.order[start..end].select_nth_unstable_by(mid - start, |&i, &j| {
            proj(i).total_cmp(&proj(j)).then(i.cmp(&j))
        });
        self.points = points;

        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes.push(Node { center, radius, kind: NodeKind::Split { left, right } });
        self.nodes.len() - 1
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Exact k-nearest neighbors of point `i`, the point itself first, the
    /// rest sorted by ascending distance with ties broken by ascending index.
    pub fn knn(&self, i: usize, k: usize) -> Result<Vec<usize>> {
        if k == 0 || k > self.len {
            return Err(Error::Argument(format!(
                "K = {k} out of range for a cloud of {} points",
                self.len
            )));
        }
        let query = self.pt(i as u32).to_vec();
        // Max-heap of (dist, idx) keys holding the best k seen so far.
        let mut heap: Vec<(f64, u32)> = Vec::with_capacity(k + 1);
        let worse = |a: (f64, u32), b: (f64, u32)| a.0 > b.0 || (a.0 == b.0 && a.1 > b.1);
        let mut visit = vec![self.root];
        while let Some(ni) = visit.pop() {
            let node = &self.nodes[ni];
            if heap.len() == k {
                let bound = dist2(&query, &node.center).sqrt() - node.radius;
                if bound > heap[0].0 {
                    continue;
                }
            }
            match node.kind {
                NodeKind::Leaf { start, end } => {
                    for &j in &self.order[start..end] {
                        let cand = (dist2(&query, self.pt(j)).sqrt(), j);
                        if heap.len() < k {
                            heap.push(cand);
                            heap_up(&mut heap, worse);
                        } else if worse(heap[0], cand) {
                            heap[0] = cand;
                            heap_down(&mut heap, worse);
                        }
                    }
                }
                NodeKind::Split { left, right } => {
                    // Visit the nearer child first so the bound tightens early.
                    let dl = dist2(&query, &self.nodes[left].center);
                    let dr = dist2(&query, &self.nodes[right].center);
                    if dl <= dr {
                        visit.push(right);
                        visit.push(left);
                    } else {
                        visit.push(left);
                        visit.push(right);
                    }
                }
            }
        }
        heap.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        if heap[0].1 as usize != i {
            return Err(Error::DegenerateStencil {
                base: i,
                reason: format!("point {} duplicates point {}", i, heap[0].1),
            });
        }
        Ok(heap.into_iter().map(|(_, j)| j as usize).collect())
    }
}

fn heap_up(heap: &mut [(f64, u32)], worse: impl Fn((f64, u32), (f64, u32)) -> bool) {
    let mut i = heap.len() - 1;
    while i > 0 {
        let parent = (i - 1) / 2;
        if worse(heap[i], heap[parent]) {
            heap.swap(i, parent);
            i = parent;
        } else {
            break;
        }
    }
}

fn heap_down(heap: &mut [(f64, u32)], worse: impl Fn((f64, u32), (f64, u32)) -> bool) {
    let mut i = 0;
    loop {
        let (l, r) = (2 * i + 1, 2 * i + 2);
        let mut top = i;
        if l < heap.len() && worse(heap[l], heap[top]) {
            top = l;
        }
        if r < heap.len() && worse(heap[r], heap[top]) {
            top = r;
        }
        if top == i {
            break;
        }
        heap.swap(i, top);
        i = top;
    }
}

/// One base point's neighbors with projected tangent-plane coordinates.
#[derive(Clone, Debug)]
pub struct Stencil {
    pub base: usize,
    /// `neighbors[0] == base`.
    pub neighbors: Vec<usize>,
    /// Intrinsic dimension of the projection.
    pub dim: usize,
    /// Row-major `K x d` Monge coordinates; row 0 is the origin.
    pub theta: Vec<f64>,
    /// `theta / d_max`, all pairwise distances in [0, 1].
    pub theta_norm: Vec<f64>,
    /// Stencil diameter: max pairwise projected distance.
    pub d_max: f64,
    /// Stencil radius: max projected distance from the base.
    pub r_max: f64,
}

impl Stencil {
    pub fn k(&self) -> usize {
        self.neighbors.len()
    }

    pub fn theta_row(&self, k: usize) -> &[f64] {
        &self.theta[k * self.dim..(k + 1) * self.dim]
    }

    pub fn theta_norm_row(&self, k: usize) -> &[f64] {
        &self.theta_norm[k * self.dim..(k + 1) * self.dim]
    }
}

/// Projects neighbor offsets onto the base point's tangent frame and
/// normalizes by the stencil diameter.
pub fn monge_project(cloud: &PointCloud, neighbors: &[usize]) -> Result<Stencil> {
    let base = neighbors[0];
    let (d, n) = (cloud.d, cloud.n);
    let k = neighbors.len();
    let x0 = cloud.point(base);

    let mut theta = vec![0.0; k * d];
    for (row, &j) in neighbors.iter().enumerate() {
        let xj = cloud.point(j);
        for i in 0..d {
            let t = cloud.frame_vec(base, i);
            theta[row * d + i] = (0..n).map(|a| t[a] * (xj[a] - x0[a])).sum();
        }
    }

    let mut d_max = 0.0f64;
    let mut r_max = 0.0f64;
    for a in 0..k {
        let ta = &theta[a * d..(a + 1) * d];
        r_max = r_max.max(dist2(ta, &theta[0..d]).sqrt());
        for b in a + 1..k {
            d_max = d_max.max(dist2(ta, &theta[b * d..(b + 1) * d]).sqrt());
        }
    }
    if d_max == 0.0 {
        return Err(Error::DegenerateStencil {
            base,
            reason: "all neighbors project onto the base point".into(),
        });
    }
    let theta_norm = theta.iter().map(|v| v / d_max).collect();
    Ok(Stencil { base, neighbors: neighbors.to_vec(), dim: d, theta, theta_norm, d_max, r_max })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifolds::{ManifoldSpec, SamplingMode};

    fn brute_knn(cloud: &PointCloud, i: usize, k: usize) -> Vec<usize> {
        let mut all: Vec<(f64, usize)> = (0..cloud.len)
            .map(|j| (dist2(cloud.point(i), cloud.point(j)).sqrt(), j))
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        all.truncate(k);
        all.into_iter().map(|(_, j)| j).collect()
    }

    #[test]
    fn two_points_trivial_query() {
        let cloud = ManifoldSpec::Ellipse1d.sample_points(2, SamplingMode::Random, 3).unwrap();
        let index = build_knn_index(&cloud);
        assert_eq!(index.knn(0, 2).unwrap(), vec![0, 1]);
    }

    #[test]
    fn equispaced_ellipse_neighbors_are_symmetric() {
        let cloud = ManifoldSpec::Ellipse1d.sample_points(400, SamplingMode::WellSampled, 0).unwrap();
        let index = build_knn_index(&cloud);
        let got = index.knn(0, 3).unwrap();
        assert_eq!(got[0], 0);
        let mut rest = got[1..].to_vec();
        rest.sort_unstable();
        assert_eq!(rest, vec![1, 399]);
    }

    #[test]
    fn matches_brute_force_on_every_manifold() {
        for spec in crate::manifolds::ALL_MANIFOLDS {
            let cloud = spec.sample_points(700, SamplingMode::Random, 17).unwrap();
            let index = build_knn_index(&cloud);
            for q in 0..100 {
                let i = (q * 7) % cloud.len;
                let got = index.knn(i, 25).unwrap();
                let want = brute_knn(&cloud, i, 25);
                assert_eq!(got, want, "{} query {}", spec.name(), i);
            }
        }
    }

    #[test]
    fn ties_on_a_grid_break_by_index() {
        // Equispaced ellipse has exactly tied neighbor distances by symmetry.
        let cloud = ManifoldSpec::Ellipse1d.sample_points(64, SamplingMode::WellSampled, 0).unwrap();
        let index = build_knn_index(&cloud);
        for i in 0..64 {
            assert_eq!(index.knn(i, 9).unwrap(), brute_knn(&cloud, i, 9), "base {i}");
        }
    }

    #[test]
    fn k_out_of_range_is_an_error() {
        let cloud = ManifoldSpec::Ellipse1d.sample_points(50, SamplingMode::WellSampled, 0).unwrap();
        let index = build_knn_index(&cloud);
        assert!(matches!(index.knn(0, 51), Err(Error::Argument(_))));
        assert!(index.knn(0, 50).is_ok());
    }

    #[test]
    fn base_projects_to_origin_and_norms_are_unit_bounded() {
        let cloud = ManifoldSpec::Rbc2d.sample_points(600, SamplingMode::Random, 5).unwrap();
        let index = build_knn_index(&cloud);
        for i in [0, 13, 99, 400] {
            let s = monge_project(&cloud, &index.knn(i, 20).unwrap()).unwrap();
            assert!(s.theta_row(0).iter().all(|&v| v == 0.0));
            assert!(s.r_max <= s.d_max && s.d_max <= 2.0 * s.r_max + 1e-15);
            for a in 0..s.k() {
                let norm = dist2(s.theta_norm_row(a), &vec![0.0; s.dim]).sqrt();
                assert!(norm <= 1.0 + 1e-12);
                for b in 0..s.k() {
                    let pd = dist2(s.theta_norm_row(a), s.theta_norm_row(b)).sqrt();
                    assert!(pd <= 1.0 + 1e-12);
                }
            }
        }
    }

    #[test]
    fn offset_along_frame_vector_projects_exactly() {
        // Two-point cloud, offset exactly along the first frame vector.
        let mut cloud = ManifoldSpec::Ellipse1d.sample_points(2, SamplingMode::WellSampled, 0).unwrap();
        let h = 0.37;
        let t0: Vec<f64> = cloud.frame_vec(0, 0).to_vec();
        for a in 0..cloud.n {
            cloud.points[cloud.n + a] = cloud.points[a] + h * t0[a];
        }
        let s = monge_project(&cloud, &[0, 1]).unwrap();
        assert!((s.theta_row(1)[0] - h).abs() < 1e-14);
        assert!((s.d_max - h).abs() < 1e-14);
    }

    #[test]
    fn projection_is_non_expansive_on_flat_torus() {
        let cloud = ManifoldSpec::FlatTorus3d.sample_points(400, SamplingMode::Random, 8).unwrap();
        let index = build_knn_index(&cloud);
        for i in [0, 50, 200] {
            let s = monge_project(&cloud, &index.knn(i, 15).unwrap()).unwrap();
            for a in 0..s.k() {
                for b in 0..s.k() {
                    let proj = dist2(s.theta_row(a), s.theta_row(b)).sqrt();
                    let amb = dist2(cloud.point(s.neighbors[a]), cloud.point(s.neighbors[b])).sqrt();
                    assert!(proj <= amb + 1e-12);
                }
            }
        }
    }

    #[test]
    fn ambient_scaling_scales_diameter_and_fixes_norms() {
        let cloud = ManifoldSpec::BumpySphere2d.sample_points(300, SamplingMode::Random, 4).unwrap();
        let index = build_knn_index(&cloud);
        let neigh = index.knn(7, 18).unwrap();
        let s1 = monge_project(&cloud, &neigh).unwrap();
        let scaled = cloud.scaled_ambient(3.0);
        let s2 = monge_project(&scaled, &neigh).unwrap();
        assert!((s2.d_max / s1.d_max - 3.0).abs() < 1e-13);
        for (a, b) in s1.theta_norm.iter().zip(&s2.theta_norm) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn degenerate_stencil_detected() {
        let mut cloud = ManifoldSpec::Ellipse1d.sample_points(3, SamplingMode::WellSampled, 0).unwrap();
        // Collapse point 1 and 2 onto point 0.
        for j in 1..3 {
            for a in 0..cloud.n {
                cloud.points[j * cloud.n + a] = cloud.points[a];
            }
        }
        assert!(matches!(
            monge_project(&cloud, &[0, 1, 2]),
            Err(Error::DegenerateStencil { .. })
        ));
    }
}
