//! Exact nearest-vertex queries (k-d tree) and ray casting against
//! triangles (bounding volume hierarchy).

use crate::error::{Error, Result};
use crate::mesh::{TriMesh, Vec3};

const LEAF_SIZE: usize = 8;

#[derive(Debug)]
enum KdNode {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

/// k-d tree over a point set answering exact nearest-neighbour queries.
/// Ties between equidistant points resolve to the lowest original index.
#[derive(Debug)]
pub struct NearestIndex {
    points: Vec<(Vec3, u32)>,
    nodes: Vec<KdNode>,
    triangles: Option<TriangleBvh>,
}

impl NearestIndex {
    pub fn new(points: &[Vec3]) -> Self {
        let mut pts: Vec<(Vec3, u32)> = points.iter().enumerate().map(|(i, p)| (*p, i as u32)).collect();
        let mut nodes = Vec::new();
        if !pts.is_empty() {
            let n = pts.len();
            build_kd(&mut pts, 0, n, &mut nodes);
        }
        NearestIndex {
            points: pts,
            nodes,
            triangles: None,
        }
    }

    /// Index a mesh's vertices and faces.
    pub fn from_mesh(mesh: &TriMesh) -> Self {
        let mut idx = NearestIndex::new(&mesh.vertices);
        idx.triangles = Some(TriangleBvh::new(&mesh.vertices, &mesh.triangles));
        idx
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Nearest indexed vertex and its Euclidean distance.
    pub fn nearest_vertex(&self, query: &Vec3) -> Result<(usize, f64)> {
        if self.points.is_empty() {
            return Err(Error::EmptyIndex);
        }
        let mut best = (f64::INFINITY, u32::MAX);
        self.search(0, query, &mut best);
        Ok((best.1 as usize, best.0.sqrt()))
    }

    fn search(&self, node: usize, q: &Vec3, best: &mut (f64, u32)) {
        match self.nodes[node] {
            KdNode::Leaf { start, end } => {
                for (p, i) in &self.points[start..end] {
                    let d2 = (p - q).norm_squared();
                    if d2 < best.0 || (d2 == best.0 && *i < best.1) {
                        *best = (d2, *i);
                    }
                }
            }
            KdNode::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, best);
                // Equal distance still has to be visited for the tie rule.
                if diff * diff <= best.0 {
                    self.search(far, q, best);
                }
            }
        }
    }

    pub fn triangles(&self) -> Option<&TriangleBvh> {
        self.triangles.as_ref()
    }
}

fn build_kd(pts: &mut [(Vec3, u32)], start: usize, end: usize, nodes: &mut Vec<KdNode>) -> usize {
    let id = nodes.len();
    if end - start <= LEAF_SIZE {
        nodes.push(KdNode::Leaf { start, end });
        return id;
    }
    let slice = &mut pts[start..end];
    let (lo, hi) = slice.iter().fold(
        (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY)),
        |(lo, hi), (p, _)| (lo.inf(p), hi.sup(p)),
    );
    let extent = hi - lo;
    let axis = extent.imax();
    if extent[axis] == 0.0 {
        nodes.push(KdNode::Leaf { start, end });
        return id;
    }
    let mid = slice.len() / 2;
    slice.select_nth_unstable_by(mid, |a, b| a.0[axis].total_cmp(&b.0[axis]));
    let value = slice[mid].0[axis];
    nodes.push(KdNode::Leaf { start: 0, end: 0 });
    // Left holds coordinates <= value, right >= value; the search treats
    // the split plane as belonging to both sides.
    let left = build_kd(pts, start, start + mid, nodes);
    let right = build_kd(pts, start + mid, end, nodes);
    nodes[id] = KdNode::Split {
        axis,
        value,
        left,
        right,
    };
    id
}

/// Ray hit on a triangle with barycentric weights of its three corners.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayHit {
    pub t: f64,
    pub triangle: usize,
    pub bary: [f64; 3],
}

#[derive(Clone, Copy, Debug)]
struct Aabb {
    lo: Vec3,
    hi: Vec3,
}

impl Aabb {
    fn empty() -> Self {
        Aabb {
            lo: Vec3::repeat(f64::INFINITY),
            hi: Vec3::repeat(f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: &Vec3) {
        self.lo = self.lo.inf(p);
        self.hi = self.hi.sup(p);
    }

    fn union(&self, o: &Aabb) -> Aabb {
        Aabb {
            lo: self.lo.inf(&o.lo),
            hi: self.hi.sup(&o.hi),
        }
    }

    /// Slab test; returns the entry parameter if the ray meets the box
    /// within `[0, t_max]`.
    fn hit(&self, origin: &Vec3, inv_dir: &Vec3, t_max: f64) -> Option<f64> {
        let mut t0 = 0.0f64;
        let mut t1 = t_max;
        for a in 0..3 {
            let mut ta = (self.lo[a] - origin[a]) * inv_dir[a];
            let mut tb = (self.hi[a] - origin[a]) * inv_dir[a];
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            // NaN from 0 * inf means the ray lies in the slab plane.
            if ta.is_nan() || tb.is_nan() {
                if origin[a] < self.lo[a] || origin[a] > self.hi[a] {
                    return None;
                }
                continue;
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
            if t0 > t1 {
                return None;
            }
        }
        Some(t0)
    }
}

#[derive(Debug)]
enum BvhNode {
    Leaf { bounds: Aabb, start: usize, end: usize },
    Inner { bounds: Aabb, left: usize, right: usize },
}

/// Bounding volume hierarchy over mesh faces for ray queries.
#[derive(Debug)]
pub struct TriangleBvh {
    corners: Vec<[Vec3; 3]>,
    order: Vec<u32>,
    nodes: Vec<BvhNode>,
}

impl TriangleBvh {
    pub fn new(vertices: &[Vec3], triangles: &[[u32; 3]]) -> Self {
        let corners: Vec<[Vec3; 3]> = triangles
            .iter()
            .map(|t| [vertices[t[0] as usize], vertices[t[1] as usize], vertices[t[2] as usize]])
            .collect();
        let mut order: Vec<u32> = (0..corners.len() as u32).collect();
        let centroids: Vec<Vec3> = corners.iter().map(|c| (c[0] + c[1] + c[2]) / 3.0).collect();
        let mut nodes = Vec::new();
        if !corners.is_empty() {
            let n = order.len();
            build_bvh(&corners, &centroids, &mut order, 0, n, &mut nodes);
        }
        TriangleBvh {
            corners,
            order,
            nodes,
        }
    }

    /// Nearest hit with `t` in `[0, t_max]` along `dir` (not necessarily unit).
    pub fn raycast(&self, origin: &Vec3, dir: &Vec3, t_max: f64) -> Option<RayHit> {
        if self.nodes.is_empty() {
            return None;
        }
        let inv = Vec3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        let mut best: Option<RayHit> = None;
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let limit = best.map_or(t_max, |b| b.t);
            match &self.nodes[n] {
                BvhNode::Leaf { bounds, start, end } => {
                    if bounds.hit(origin, &inv, limit).is_none() {
                        continue;
                    }
                    for &tri in &self.order[*start..*end] {
                        let lim = best.map_or(t_max, |b| b.t);
                        if let Some((t, bary)) = intersect(&self.corners[tri as usize], origin, dir) {
                            let better = match best {
                                None => t <= lim,
                                Some(b) => t < b.t || (t == b.t && (tri as usize) < b.triangle),
                            };
                            if t >= 0.0 && better {
                                best = Some(RayHit {
                                    t,
                                    triangle: tri as usize,
                                    bary,
                                });
                            }
                        }
                    }
                }
                BvhNode::Inner { bounds, left, right } => {
                    if bounds.hit(origin, &inv, limit).is_some() {
                        stack.push(*right);
                        stack.push(*left);
                    }
                }
            }
        }
        best
    }
}

fn build_bvh(
    corners: &[[Vec3; 3]],
    centroids: &[Vec3],
    order: &mut [u32],
    start: usize,
    end: usize,
    nodes: &mut Vec<BvhNode>,
) -> usize {
    let mut bounds = Aabb::empty();
    let mut cbounds = Aabb::empty();
    for &t in &order[start..end] {
        for c in &corners[t as usize] {
            bounds.grow(c);
        }
        cbounds.grow(&centroids[t as usize]);
    }
    let id = nodes.len();
    let extent = cbounds.hi - cbounds.lo;
    let axis = extent.imax();
    if end - start <= 4 || extent[axis] == 0.0 {
        nodes.push(BvhNode::Leaf { bounds, start, end });
        return id;
    }
    let mid = (end - start) / 2;
    order[start..end].select_nth_unstable_by(mid, |a, b| {
        centroids[*a as usize][axis].total_cmp(&centroids[*b as usize][axis])
    });
    nodes.push(BvhNode::Leaf {
        bounds,
        start: 0,
        end: 0,
    });
    let left = build_bvh(corners, centroids, order, start, start + mid, nodes);
    let right = build_bvh(corners, centroids, order, start + mid, end, nodes);
    let lb = node_bounds(&nodes[left]);
    let rb = node_bounds(&nodes[right]);
    nodes[id] = BvhNode::Inner {
        bounds: lb.union(&rb),
        left,
        right,
    };
    id
}

fn node_bounds(n: &BvhNode) -> Aabb {
    match n {
        BvhNode::Leaf { bounds, .. } | BvhNode::Inner { bounds, .. } => *bounds,
    }
}

/// Möller–Trumbore; two-sided. Returns `(t, barycentrics)`.
fn intersect(tri: &[Vec3; 3], origin: &Vec3, dir: &Vec3) -> Option<(f64, [f64; 3])> {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-14 * e1.norm() * e2.norm() * dir.norm() {
        return None;
    }
    let inv = 1.0 / det;
    let s = origin - tri[0];
    let u = s.dot(&p) * inv;
    if !(-1e-12..=1.0 + 1e-12).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = dir.dot(&q) * inv;
    if v < -1e-12 || u + v > 1.0 + 1e-12 {
        return None;
    }
    let t = e2.dot(&q) * inv;
    Some((t, [1.0 - u - v, u, v]))
}
