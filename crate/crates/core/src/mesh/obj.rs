//! Wavefront OBJ with the common `v x y z r g b` vertex-color extension.

use super::{fan, RawMesh, TriMesh, Vec3};
use crate::error::{Error, Result};

pub(crate) fn parse(bytes: &[u8]) -> Result<RawMesh> {
    let text = std::str::from_utf8(bytes).map_err(|_| Error::Parse("OBJ is not UTF-8".into()))?;
    let mut vertices = Vec::new();
    let mut colors = Vec::new();
    let mut triangles = Vec::new();
    let mut poly = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("");
        let mut tok = line.split_whitespace();
        let bad = |what: &str| Error::Parse(format!("OBJ line {}: {what}", lineno + 1));
        match tok.next() {
            Some("v") => {
                let nums: Vec<f64> = tok
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad("bad number"))?;
                match nums.len() {
                    3 | 4 => vertices.push(Vec3::new(nums[0], nums[1], nums[2])),
                    6 | 7 => {
                        vertices.push(Vec3::new(nums[0], nums[1], nums[2]));
                        colors.push(Vec3::new(nums[3], nums[4], nums[5]));
                    }
                    n => return Err(bad(&format!("vertex with {n} components"))),
                }
            }
            Some("f") => {
                poly.clear();
                for t in tok {
                    let idx = t.split('/').next().unwrap_or("");
                    let i: i64 = idx.parse().map_err(|_| bad("bad face index"))?;
                    let resolved = if i > 0 {
                        i - 1
                    } else if i < 0 {
                        vertices.len() as i64 + i
                    } else {
                        return Err(bad("face index 0"));
                    };
                    if resolved < 0 {
                        return Err(bad("face index out of range"));
                    }
                    poly.push(resolved as u32);
                }
                fan(&poly, &mut triangles)?;
            }
            _ => {}
        }
    }
    let colors = if colors.is_empty() {
        None
    } else if colors.len() == vertices.len() {
        Some(colors)
    } else {
        return Err(Error::Parse("only some OBJ vertices carry colors".into()));
    };
    Ok(RawMesh {
        vertices,
        colors,
        triangles,
    })
}

pub(crate) fn write(mesh: &TriMesh) -> Vec<u8> {
    use std::fmt::Write;
    let mut s = String::new();
    for (v, a) in mesh.vertices.iter().zip(&mesh.albedo) {
        let _ = writeln!(s, "v {} {} {} {} {} {}", v.x, v.y, v.z, a.x, a.y, a.z);
    }
    for t in &mesh.triangles {
        let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    s.into_bytes()
}
