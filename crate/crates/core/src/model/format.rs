//! Binary `.ss3dmm` container: magic, version, JSON metadata, little-endian
//! `f32` arrays, `u32` triangles and a CRC32 trailer.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{MorphableModel, Provenance};
use crate::error::{Error, Result};
use crate::io_util::write_atomic;
use crate::lowrank::LowRankGP;
use crate::mesh::{unflatten, TriMesh};

pub const MAGIC: &[u8; 7] = b"SS3DMM\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Metadata {
    name: String,
    vertices: usize,
    triangles: usize,
    shape_rank: usize,
    albedo_rank: usize,
    landmarks: BTreeMap<String, usize>,
    provenance: Provenance,
}

fn put_f32s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
}

fn put_gp(out: &mut Vec<u8>, gp: &LowRankGP) {
    put_f32s(out, gp.mean.as_slice());
    put_f32s(out, gp.eigenvalues.as_slice());
    put_f32s(out, gp.basis.as_slice());
}

pub fn model_bytes(model: &MorphableModel) -> Result<Vec<u8>> {
    let meta = Metadata {
        name: model.name.clone(),
        vertices: model.reference.num_vertices(),
        triangles: model.reference.triangles.len(),
        shape_rank: model.shape_rank(),
        albedo_rank: model.albedo_rank(),
        landmarks: model.reference.landmarks.clone(),
        provenance: model.provenance.clone(),
    };
    let json = serde_json::to_vec(&meta)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    put_gp(&mut out, &model.shape);
    put_gp(&mut out, &model.albedo);
    for t in &model.reference.triangles {
        for i in t {
            out.extend_from_slice(&i.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

/// Write atomically; a failed save leaves any existing file untouched.
pub fn save_model(model: &MorphableModel, path: &Path) -> Result<()> {
    write_atomic(path, &model_bytes(model)?)
}

pub fn load_model(path: &Path) -> Result<MorphableModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    model_from_bytes(&bytes)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Parse("model file is truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::Parse("array too large".into()))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }

    fn gp(&mut self, n: usize, rank: usize) -> Result<LowRankGP> {
        let mean = self.f32s(3 * n)?;
        let eig = self.f32s(rank)?;
        let basis = self.f32s(3 * n * rank)?;
        LowRankGP::from_parts(
            DVector::from_vec(mean),
            DMatrix::from_vec(3 * n, rank, basis),
            DVector::from_vec(eig),
        )
    }
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<MorphableModel> {
    if bytes.len() < MAGIC.len() + 4 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Parse("not a model file".into()));
    }
    let version = u32::from_le_bytes(bytes[7..11].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch(version));
    }
    if bytes.len() < 4 + 11 {
        return Err(Error::Parse("model file is truncated".into()));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(trailer.try_into().unwrap()) {
        return Err(Error::Checksum);
    }
    let mut r = Reader { buf: body, pos: 11 };
    let len = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
    let len = usize::try_from(len).map_err(|_| Error::Parse("metadata too large".into()))?;
    let meta: Metadata = serde_json::from_slice(r.take(len)?)?;
    let n = meta.vertices;
    let shape = r.gp(n, meta.shape_rank)?;
    let albedo = r.gp(n, meta.albedo_rank)?;
    let tri_bytes = r.take(meta.triangles.checked_mul(12).ok_or_else(|| Error::Parse("array too large".into()))?)?;
    let triangles = tri_bytes
        .chunks_exact(12)
        .map(|c| {
            let i = |k: usize| u32::from_le_bytes(c[4 * k..4 * k + 4].try_into().unwrap());
            [i(0), i(1), i(2)]
        })
        .collect();
    if r.pos != body.len() {
        return Err(Error::Parse("trailing bytes in model file".into()));
    }
    let reference = TriMesh::new(
        unflatten(shape.mean.as_slice()),
        triangles,
        unflatten(albedo.mean.as_slice()),
    )?
    .with_landmarks(meta.landmarks)?;
    MorphableModel::new(&meta.name, reference, shape, albedo, meta.provenance)
}
