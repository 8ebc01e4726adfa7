//! Procedural test meshes: icospheres and a bilaterally symmetric head.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use crate::mesh::{TriMesh, Vec3};

/// Geodesic sphere centred at the origin with constant albedo.
pub fn icosphere(subdivisions: usize, radius: f64, albedo: Vec3) -> TriMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vec3> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|p| Vec3::from(*p).normalize())
    .collect();
    let mut faces: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut midpoint = BTreeMap::new();
        let mut mid = |a: u32, b: u32, vertices: &mut Vec<Vec3>| -> u32 {
            let key = (a.min(b), a.max(b));
            *midpoint.entry(key).or_insert_with(|| {
                vertices.push(((vertices[a as usize] + vertices[b as usize]) / 2.0).normalize());
                (vertices.len() - 1) as u32
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = mid(a, b, &mut vertices);
            let bc = mid(b, c, &mut vertices);
            let ca = mid(c, a, &mut vertices);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    let n = vertices.len();
    TriMesh::new(
        vertices.into_iter().map(|v| v * radius).collect(),
        faces,
        vec![albedo; n],
    )
    .expect("icosphere is valid")
}

/// Parameters of the procedural head.
#[derive(Clone, Debug)]
pub struct SyntheticFace {
    /// Latitude rings excluding the poles.
    pub rings: usize,
    /// Vertices per ring; must be even for exact mirror pairs.
    pub segments: usize,
    pub radii: Vec3,
    pub skin: Vec3,
    pub dark: Vec3,
}

impl Default for SyntheticFace {
    /// About 2000 vertices.
    fn default() -> Self {
        SyntheticFace {
            rings: 39,
            segments: 52,
            radii: Vec3::new(75.0, 100.0, 90.0),
            skin: Vec3::new(0.82, 0.62, 0.52),
            dark: Vec3::new(0.30, 0.18, 0.14),
        }
    }
}

impl SyntheticFace {
    pub fn small() -> Self {
        SyntheticFace {
            rings: 15,
            segments: 20,
            ..Default::default()
        }
    }

    /// Ellipsoidal head facing +z with +y up, symmetric under `x → -x`,
    /// with dark eyes, brows, mouth and hair on a skin-toned base.
    pub fn build(&self) -> TriMesh {
        assert!(self.segments.is_multiple_of(2) && self.segments >= 4 && self.rings >= 2);
        let (nr, ns) = (self.rings, self.segments);
        let mut dirs = vec![Vec3::new(0.0, 1.0, 0.0)];
        for i in 1..=nr {
            let theta = PI * i as f64 / (nr + 1) as f64;
            for j in 0..ns {
                let phi = 2.0 * PI * j as f64 / ns as f64;
                dirs.push(Vec3::new(theta.sin() * phi.sin(), theta.cos(), theta.sin() * phi.cos()));
            }
        }
        dirs.push(Vec3::new(0.0, -1.0, 0.0));
        // Snap the mirror plane exactly so mirror pairs are exact.
        for d in &mut dirs {
            if d.x.abs() < 1e-12 {
                d.x = 0.0;
            }
        }

        let vertices: Vec<Vec3> = dirs
            .iter()
            .map(|d| {
                let mut p = d.component_mul(&self.radii);
                // Nose: a smooth ridge on the front, centred slightly below the equator.
                let nose = (-(d.x / 0.12).powi(2) - ((d.y + 0.05) / 0.22).powi(2)).exp();
                if d.z > 0.0 {
                    p.z += 22.0 * nose * d.z;
                }
                p
            })
            .collect();

        let albedo = dirs.iter().map(|d| if is_dark(d) { self.dark } else { self.skin }).collect();

        let ring = |i: usize, j: usize| (1 + (i * ns) + (j % ns)) as u32;
        let south = (1 + nr * ns) as u32;
        let mut triangles = Vec::new();
        // Winding is counter-clockwise seen from outside.
        for j in 0..ns {
            triangles.push([0, ring(0, j), ring(0, j + 1)]);
        }
        for i in 0..nr - 1 {
            for j in 0..ns {
                let (a, b, c, d) = (ring(i, j), ring(i, j + 1), ring(i + 1, j), ring(i + 1, j + 1));
                triangles.push([a, c, d]);
                triangles.push([a, d, b]);
            }
        }
        for j in 0..ns {
            triangles.push([south, ring(nr - 1, j + 1), ring(nr - 1, j)]);
        }

        let mesh = TriMesh::new(vertices, triangles, albedo).expect("synthetic face is valid");
        let landmarks = self.landmarks(&mesh);
        mesh.with_landmarks(landmarks).expect("landmarks are in range")
    }

    fn landmarks(&self, mesh: &TriMesh) -> BTreeMap<String, usize> {
        // Targets on the unit direction sphere; snapped to the closest vertex
        // direction, with mirrored targets snapped to mirrored vertices.
        let targets = [
            ("left_eye", Vec3::new(0.36, 0.22, 0.9)),
            ("nose_tip", Vec3::new(0.0, -0.05, 1.0)),
            ("left_mouth", Vec3::new(0.24, -0.42, 0.87)),
            ("chin", Vec3::new(0.0, -0.72, 0.69)),
            ("forehead", Vec3::new(0.0, 0.55, 0.83)),
            ("left_ear", Vec3::new(1.0, 0.0, 0.0)),
        ];
        let dir_of = |i: usize| mesh.vertices[i].component_div(&self.radii).normalize();
        let closest = |t: &Vec3| {
            let t = t.normalize();
            (0..mesh.num_vertices())
                .max_by(|&a, &b| dir_of(a).dot(&t).total_cmp(&dir_of(b).dot(&t)).then(b.cmp(&a)))
                .unwrap()
        };
        let mut out = BTreeMap::new();
        for (name, t) in targets {
            let i = closest(&t);
            if let Some(side) = name.strip_prefix("left_") {
                let m = closest(&Vec3::new(-t.x, t.y, t.z));
                out.insert(format!("left_{side}"), i);
                out.insert(format!("right_{side}"), m);
            } else {
                out.insert(name.to_string(), i);
            }
        }
        out
    }
}

fn is_dark(d: &Vec3) -> bool {
    let front = d.z > 0.0;
    let ellipse = |cx: f64, cy: f64, rx: f64, ry: f64| ((d.x - cx) / rx).powi(2) + ((d.y - cy) / ry).powi(2) <= 1.0;
    let eye = front && (ellipse(0.36, 0.22, 0.13, 0.08) || ellipse(-0.36, 0.22, 0.13, 0.08));
    let brow = front && (ellipse(0.36, 0.40, 0.17, 0.05) || ellipse(-0.36, 0.40, 0.17, 0.05));
    let mouth = front && ellipse(0.0, -0.42, 0.26, 0.08);
    // Hair: top of the head and the back.
    let hair = d.y > 0.62 || (d.z < -0.25 && d.y > -0.2);
    eye || brow || mouth || hair
}
