use crate::image::ImageRGB;
use crate::mesh::{vertex_normals, TriMesh, Vec3};

use super::{shade, Camera, Pose, RenderOutput, SHIllumination};

/// Near clipping plane, camera-space millimetres.
const NEAR: f64 = 1.0;

/// Visible-surface information per pixel, independent of shading.
#[derive(Clone, Debug, PartialEq)]
pub struct Fragments {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<f64>,
    pub triangle: Vec<Option<u32>>,
    /// Perspective-correct barycentric weights of the triangle's corners.
    pub bary: Vec<[f64; 3]>,
}

impl Fragments {
    pub fn is_foreground(&self, i: usize) -> bool {
        self.triangle[i].is_some()
    }

    /// Foreground pixel indices in row-major order.
    pub fn foreground(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.triangle.len()).filter(|&i| self.triangle[i].is_some())
    }

    /// Interpolate a per-vertex quantity at pixel `i`.
    pub fn interpolate(&self, i: usize, triangles: &[[u32; 3]], values: &[Vec3]) -> Vec3 {
        let t = triangles[self.triangle[i].expect("foreground pixel") as usize];
        let b = self.bary[i];
        values[t[0] as usize] * b[0] + values[t[1] as usize] * b[1] + values[t[2] as usize] * b[2]
    }
}

#[derive(Clone, Copy)]
struct ClipVertex {
    p: Vec3,
    bary: [f64; 3],
}

fn lerp(a: &ClipVertex, b: &ClipVertex, t: f64) -> ClipVertex {
    let mut bary = [0.0; 3];
    for k in 0..3 {
        bary[k] = a.bary[k] + t * (b.bary[k] - a.bary[k]);
    }
    ClipVertex {
        p: a.p + (b.p - a.p) * t,
        bary,
    }
}

/// Sutherland–Hodgman against `z >= NEAR`.
fn clip_near(poly: &[ClipVertex]) -> Vec<ClipVertex> {
    let mut out = Vec::with_capacity(4);
    for i in 0..poly.len() {
        let a = &poly[i];
        let b = &poly[(i + 1) % poly.len()];
        let (ina, inb) = (a.p.z >= NEAR, b.p.z >= NEAR);
        if ina {
            out.push(*a);
        }
        if ina != inb {
            out.push(lerp(a, b, (NEAR - a.p.z) / (b.p.z - a.p.z)));
        }
    }
    out
}

struct ScreenVertex {
    x: f64,
    y: f64,
    inv_z: f64,
    bary_over_z: [f64; 3],
}

fn edge(a: &ScreenVertex, b: &ScreenVertex, x: f64, y: f64) -> f64 {
    (b.x - a.x) * (y - a.y) - (b.y - a.y) * (x - a.x)
}

/// Fill rule for pixel centers exactly on an edge: asymmetric in the edge
/// direction, so a shared edge belongs to exactly one of its triangles.
fn owns_edge(a: &ScreenVertex, b: &ScreenVertex) -> bool {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    dy > 0.0 || (dy == 0.0 && dx < 0.0)
}

fn raster_triangle(sv: [ScreenVertex; 3], id: u32, frags: &mut Fragments) {
    let area = edge(&sv[0], &sv[1], sv[2].x, sv[2].y);
    if area == 0.0 || !area.is_finite() {
        return;
    }
    let [a, b, c] = sv;
    let (a, b, c) = if area > 0.0 { (a, b, c) } else { (a, c, b) };
    let area = area.abs();
    let (w, h) = (frags.width as f64, frags.height as f64);
    let xmin = a.x.min(b.x).min(c.x).floor().max(0.0);
    let xmax = a.x.max(b.x).max(c.x).ceil().min(w);
    let ymin = a.y.min(b.y).min(c.y).floor().max(0.0);
    let ymax = a.y.max(b.y).max(c.y).ceil().min(h);
    if xmin >= xmax || ymin >= ymax {
        return;
    }
    let edges = [(&b, &c), (&c, &a), (&a, &b)];
    let owns = edges.map(|(p, q)| owns_edge(p, q));
    let corners = [&a, &b, &c];
    for py in ymin as usize..ymax as usize {
        let y = py as f64 + 0.5;
        for px in xmin as usize..xmax as usize {
            let x = px as f64 + 0.5;
            let mut l = [0.0; 3];
            let mut inside = true;
            for k in 0..3 {
                let e = edge(edges[k].0, edges[k].1, x, y);
                if e < 0.0 || (e == 0.0 && !owns[k]) {
                    inside = false;
                    break;
                }
                l[k] = e / area;
            }
            if !inside {
                continue;
            }
            let inv_z: f64 = (0..3).map(|k| l[k] * corners[k].inv_z).sum();
            let depth = 1.0 / inv_z;
            let i = py * frags.width + px;
            if depth < frags.depth[i] {
                let mut bary = [0.0; 3];
                for (j, slot) in bary.iter_mut().enumerate() {
                    *slot = (0..3).map(|k| l[k] * corners[k].bary_over_z[j]).sum::<f64>() * depth;
                }
                frags.depth[i] = depth;
                frags.triangle[i] = Some(id);
                frags.bary[i] = bary;
            }
        }
    }
}

/// Z-buffered coverage of `vertices` (model space) seen through `pose` and
/// `camera`. Back faces are culled; triangles crossing the near plane are
/// clipped.
pub fn rasterize_geometry(vertices: &[Vec3], triangles: &[[u32; 3]], pose: &Pose, camera: &Camera) -> Fragments {
    let n = camera.width * camera.height;
    let mut frags = Fragments {
        width: camera.width,
        height: camera.height,
        depth: vec![f64::INFINITY; n],
        triangle: vec![None; n],
        bary: vec![[0.0; 3]; n],
    };
    let cam: Vec<Vec3> = vertices.iter().map(|v| pose.apply(v)).collect();
    for (id, t) in triangles.iter().enumerate() {
        let [p0, p1, p2] = t.map(|i| cam[i as usize]);
        let normal = (p1 - p0).cross(&(p2 - p0));
        if normal.dot(&p0) >= 0.0 {
            continue;
        }
        let poly = [
            ClipVertex { p: p0, bary: [1.0, 0.0, 0.0] },
            ClipVertex { p: p1, bary: [0.0, 1.0, 0.0] },
            ClipVertex { p: p2, bary: [0.0, 0.0, 1.0] },
        ];
        let poly = if poly.iter().all(|v| v.p.z >= NEAR) {
            poly.to_vec()
        } else {
            clip_near(&poly)
        };
        if poly.len() < 3 {
            continue;
        }
        let screen: Vec<ScreenVertex> = poly
            .iter()
            .map(|v| {
                let inv_z = 1.0 / v.p.z;
                ScreenVertex {
                    x: camera.focal * v.p.x * inv_z + camera.principal.x,
                    y: camera.focal * v.p.y * inv_z + camera.principal.y,
                    inv_z,
                    bary_over_z: v.bary.map(|b| b * inv_z),
                }
            })
            .collect();
        for k in 1..screen.len() - 1 {
            let pick = |s: &ScreenVertex| ScreenVertex {
                x: s.x,
                y: s.y,
                inv_z: s.inv_z,
                bary_over_z: s.bary_over_z,
            };
            raster_triangle([pick(&screen[0]), pick(&screen[k]), pick(&screen[k + 1])], id as u32, &mut frags);
        }
    }
    frags
}

/// Color fragments by interpolating per-vertex colors; background is black.
pub fn rasterize_colors(frags: &Fragments, triangles: &[[u32; 3]], colors: &[Vec3]) -> RenderOutput {
    let mut color = ImageRGB::new(frags.width, frags.height, Vec3::zeros());
    for i in frags.foreground() {
        color.pixels[i] = frags.interpolate(i, triangles, colors);
    }
    RenderOutput {
        color,
        depth: frags.depth.clone(),
        mask: frags.triangle.iter().map(Option::is_some).collect(),
        triangle: frags.triangle.clone(),
    }
}

/// Gouraud-shaded rendering: vertices are lit in camera space, clamped to
/// `[0, 1]`, then interpolated perspective-correctly.
pub fn rasterize(mesh: &TriMesh, pose: &Pose, camera: &Camera, sh: &SHIllumination) -> RenderOutput {
    let frags = rasterize_geometry(&mesh.vertices, &mesh.triangles, pose, camera);
    let colors = vertex_colors(mesh, pose, sh);
    rasterize_colors(&frags, &mesh.triangles, &colors)
}

/// Shaded per-vertex colors with normals rotated into camera space.
pub fn vertex_colors(mesh: &TriMesh, pose: &Pose, sh: &SHIllumination) -> Vec<Vec3> {
    vertex_normals(mesh)
        .iter()
        .zip(&mesh.albedo)
        .map(|(n, a)| shade(a, &(pose.rotation * n), sh))
        .collect()
}
