//! Triangle meshes with per-vertex albedo and named landmarks.
//!
//! Positions are in millimetres, albedo is linear RGB in `[0, 1]^3`.

mod obj;
mod ply;

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ply::PlyEncoding;

pub type Vec3 = Vector3<f64>;

/// On-disk mesh formats.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MeshFormat {
    PlyAscii,
    PlyBinary,
    Obj,
}

impl MeshFormat {
    /// Guess a format from a file extension. PLY output defaults to binary.
    pub fn from_path(path: &Path) -> Option<MeshFormat> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "ply" => Some(MeshFormat::PlyBinary),
            "obj" => Some(MeshFormat::Obj),
            _ => None,
        }
    }
}

/// A vertex-colored triangle mesh.
///
/// Invariants (checked by [`TriMesh::new`] and [`TriMesh::validate`]):
/// one albedo per vertex with every channel in `[0, 1]`, triangle indices in
/// range with three distinct corners, landmark indices in range.
#[derive(Clone, Debug, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
    pub albedo: Vec<Vec3>,
    pub landmarks: BTreeMap<String, usize>,
}

impl TriMesh {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[u32; 3]>, albedo: Vec<Vec3>) -> Result<Self> {
        let mesh = TriMesh {
            vertices,
            triangles,
            albedo,
            landmarks: BTreeMap::new(),
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn with_landmarks(mut self, landmarks: BTreeMap<String, usize>) -> Result<Self> {
        self.landmarks = landmarks;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        if self.albedo.len() != n {
            return Err(Error::InvalidMesh(format!(
                "{} albedo entries for {} vertices",
                self.albedo.len(),
                n
            )));
        }
        if let Some((i, _)) = self
            .vertices
            .iter()
            .enumerate()
            .find(|(_, v)| !v.iter().all(|c| c.is_finite()))
        {
            return Err(Error::InvalidMesh(format!("vertex {i} is not finite")));
        }
        if let Some((i, _)) = self
            .albedo
            .iter()
            .enumerate()
            .find(|(_, a)| !a.iter().all(|c| (0.0..=1.0).contains(c)))
        {
            return Err(Error::InvalidMesh(format!("albedo of vertex {i} outside [0,1]")));
        }
        for (t, tri) in self.triangles.iter().enumerate() {
            if tri.iter().any(|&i| i as usize >= n) {
                return Err(Error::InvalidMesh(format!("triangle {t} indexes past {n} vertices")));
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(Error::InvalidMesh(format!("triangle {t} is degenerate: {tri:?}")));
            }
        }
        for (name, &i) in &self.landmarks {
            if i >= n {
                return Err(Error::InvalidMesh(format!("landmark {name} indexes vertex {i} of {n}")));
            }
        }
        Ok(())
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    /// Same topology and landmark names, new positions and albedo.
    pub fn with_fields(&self, vertices: Vec<Vec3>, albedo: Vec<Vec3>) -> TriMesh {
        debug_assert_eq!(vertices.len(), self.vertices.len());
        debug_assert_eq!(albedo.len(), self.vertices.len());
        TriMesh {
            vertices,
            triangles: self.triangles.clone(),
            albedo,
            landmarks: self.landmarks.clone(),
        }
    }

    pub fn same_topology(&self, other: &TriMesh) -> bool {
        self.vertices.len() == other.vertices.len() && self.triangles == other.triangles
    }

    /// Positions flattened as `[x0, y0, z0, x1, ...]`.
    pub fn flat_positions(&self) -> Vec<f64> {
        flatten(&self.vertices)
    }

    pub fn flat_albedo(&self) -> Vec<f64> {
        flatten(&self.albedo)
    }

    pub fn bounding_box(&self) -> Option<(Vec3, Vec3)> {
        let first = *self.vertices.first()?;
        Some(self.vertices.iter().fold((first, first), |(lo, hi), v| {
            (lo.inf(v), hi.sup(v))
        }))
    }

    pub fn centroid(&self) -> Vec3 {
        if self.vertices.is_empty() {
            return Vec3::zeros();
        }
        self.vertices.iter().sum::<Vec3>() / self.vertices.len() as f64
    }

    /// Reflect every vertex through the mirror plane. Winding is flipped so
    /// that faces keep pointing outward.
    pub fn mirrored(&self, mirror: MirrorTransform) -> TriMesh {
        let m = mirror.matrix();
        TriMesh {
            vertices: self.vertices.iter().map(|v| m * v).collect(),
            triangles: self.triangles.iter().map(|t| [t[0], t[2], t[1]]).collect(),
            albedo: self.albedo.clone(),
            landmarks: self.landmarks.clone(),
        }
    }

    pub fn load(path: impl AsRef<Path>, default_albedo: Option<Vec3>) -> Result<TriMesh> {
        let path = path.as_ref();
        let format = MeshFormat::from_path(path)
            .ok_or_else(|| Error::Parse(format!("unknown mesh extension: {}", path.display())))?;
        load_mesh(path, format, default_albedo)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let format = MeshFormat::from_path(path)
            .ok_or_else(|| Error::Parse(format!("unknown mesh extension: {}", path.display())))?;
        save_mesh(self, path, format)
    }
}

pub(crate) fn flatten(v: &[Vec3]) -> Vec<f64> {
    v.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
}

pub(crate) fn unflatten(flat: &[f64]) -> Vec<Vec3> {
    flat.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect()
}

/// Load a mesh. Files without vertex colors need `default_albedo`.
pub fn load_mesh(path: &Path, format: MeshFormat, default_albedo: Option<Vec3>) -> Result<TriMesh> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let raw = match format {
        MeshFormat::PlyAscii | MeshFormat::PlyBinary => ply::parse(&bytes)?,
        MeshFormat::Obj => obj::parse(&bytes)?,
    };
    raw.into_mesh(default_albedo)
}

pub fn save_mesh(mesh: &TriMesh, path: &Path, format: MeshFormat) -> Result<()> {
    mesh.validate()?;
    let bytes = match format {
        MeshFormat::PlyAscii => ply::write(mesh, PlyEncoding::Ascii),
        MeshFormat::PlyBinary => ply::write(mesh, PlyEncoding::BinaryLittleEndian),
        MeshFormat::Obj => obj::write(mesh),
    };
    crate::io_util::write_atomic(path, &bytes)
}

/// Parsed geometry before color defaults and validation are applied.
pub(crate) struct RawMesh {
    pub vertices: Vec<Vec3>,
    pub colors: Option<Vec<Vec3>>,
    pub triangles: Vec<[u32; 3]>,
}

impl RawMesh {
    fn into_mesh(self, default_albedo: Option<Vec3>) -> Result<TriMesh> {
        let albedo = match (self.colors, default_albedo) {
            (Some(c), _) => c,
            (None, Some(d)) => vec![d; self.vertices.len()],
            (None, None) => return Err(Error::MissingColor),
        };
        TriMesh::new(self.vertices, self.triangles, albedo)
    }
}

/// Split a polygon into a triangle fan.
pub(crate) fn fan(poly: &[u32], out: &mut Vec<[u32; 3]>) -> Result<()> {
    if poly.len() < 3 {
        return Err(Error::Parse(format!("face with {} vertices", poly.len())));
    }
    for k in 1..poly.len() - 1 {
        out.push([poly[0], poly[k], poly[k + 1]]);
    }
    Ok(())
}

/// Coordinate axis negated by a mirror transform.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    #[default]
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

impl std::str::FromStr for Axis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "x" => Ok(Axis::X),
            "y" => Ok(Axis::Y),
            "z" => Ok(Axis::Z),
            _ => Err(Error::InvalidArgument(format!("unknown axis {s:?}"))),
        }
    }
}

/// Reflection negating the left-right component of a point.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MirrorTransform {
    pub axis: Axis,
}

impl MirrorTransform {
    pub fn new(axis: Axis) -> Self {
        MirrorTransform { axis }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        let mut m = Matrix3::identity();
        m[(self.axis.index(), self.axis.index())] = -1.0;
        m
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        let mut q = *p;
        q[self.axis.index()] = -q[self.axis.index()];
        q
    }
}

/// Area-weighted vertex normals. Vertices without any non-degenerate incident
/// face get the zero vector, which callers treat as invalid.
pub fn vertex_normals(mesh: &TriMesh) -> Vec<Vec3> {
    vertex_normals_from(&mesh.vertices, &mesh.triangles)
}

pub fn vertex_normals_from(vertices: &[Vec3], triangles: &[[u32; 3]]) -> Vec<Vec3> {
    let mut acc = vec![Vec3::zeros(); vertices.len()];
    for t in triangles {
        let (a, b, c) = (
            vertices[t[0] as usize],
            vertices[t[1] as usize],
            vertices[t[2] as usize],
        );
        // Cross product length is twice the area, so this is area weighting.
        let n = (b - a).cross(&(c - a));
        for &i in t {
            acc[i as usize] += n;
        }
    }
    for n in &mut acc {
        let len = n.norm();
        if len > 0.0 && len.is_finite() {
            *n /= len;
        } else {
            *n = Vec3::zeros();
        }
    }
    acc
}

/// Read mesh landmarks from `{"name": {"vertex": i}}` JSON.
pub fn read_mesh_landmarks(path: &Path) -> Result<BTreeMap<String, usize>> {
    #[derive(Deserialize)]
    struct Entry {
        vertex: usize,
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let raw: BTreeMap<String, Entry> = serde_json::from_str(&text)?;
    Ok(raw.into_iter().map(|(k, v)| (k, v.vertex)).collect())
}

pub fn write_mesh_landmarks(path: &Path, landmarks: &BTreeMap<String, usize>) -> Result<()> {
    let value: BTreeMap<&String, serde_json::Value> = landmarks
        .iter()
        .map(|(k, v)| (k, serde_json::json!({ "vertex": v })))
        .collect();
    crate::io_util::write_atomic(path, serde_json::to_string_pretty(&value)?.as_bytes())
}
