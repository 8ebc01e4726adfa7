//! PLY reader/writer: ASCII and binary little-endian.

use super::{fan, RawMesh, TriMesh, Vec3};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlyEncoding {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Result<Scalar> {
        Ok(match s {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return Err(Error::Parse(format!("unknown PLY type {s:?}"))),
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn is_integer(self) -> bool {
        !matches!(self, Scalar::F32 | Scalar::F64)
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { name: String, count: Scalar, item: Scalar },
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

struct Header {
    encoding: PlyEncoding,
    elements: Vec<Element>,
    body_offset: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let mut offset = 0;
    let mut lines = Vec::new();
    loop {
        let end = bytes[offset..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Parse("PLY header not terminated".into()))?;
        let line = std::str::from_utf8(&bytes[offset..offset + end])
            .map_err(|_| Error::Parse("PLY header is not UTF-8".into()))?
            .trim_end_matches('\r')
            .trim()
            .to_string();
        offset += end + 1;
        if line == "end_header" {
            break;
        }
        lines.push(line);
    }
    let mut it = lines.into_iter();
    if it.next().as_deref() != Some("ply") {
        return Err(Error::Parse("missing 'ply' magic".into()));
    }
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    for line in it {
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            [] => {}
            ["comment", ..] | ["obj_info", ..] => {}
            ["format", fmt, _version] => {
                encoding = Some(match *fmt {
                    "ascii" => PlyEncoding::Ascii,
                    "binary_little_endian" => PlyEncoding::BinaryLittleEndian,
                    "binary_big_endian" => {
                        return Err(Error::Parse("big-endian PLY is not supported".into()))
                    }
                    other => return Err(Error::Parse(format!("unknown PLY format {other:?}"))),
                })
            }
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad element count {count:?}")))?,
                props: Vec::new(),
            }),
            ["property", "list", count, item, name] => elements
                .last_mut()
                .ok_or_else(|| Error::Parse("property before element".into()))?
                .props
                .push(Property::List {
                    name: name.to_string(),
                    count: Scalar::parse(count)?,
                    item: Scalar::parse(item)?,
                }),
            ["property", ty, name] => elements
                .last_mut()
                .ok_or_else(|| Error::Parse("property before element".into()))?
                .props
                .push(Property::Scalar {
                    name: name.to_string(),
                    ty: Scalar::parse(ty)?,
                }),
            _ => return Err(Error::Parse(format!("bad PLY header line {line:?}"))),
        }
    }
    Ok(Header {
        encoding: encoding.ok_or_else(|| Error::Parse("PLY header lacks format".into()))?,
        elements,
        body_offset: offset,
    })
}

/// Sequential reader over a PLY body in either encoding.
enum Body<'a> {
    Ascii(std::str::SplitAsciiWhitespace<'a>),
    Binary { bytes: &'a [u8], pos: usize },
}

impl Body<'_> {
    fn next(&mut self, ty: Scalar) -> Result<f64> {
        match self {
            Body::Ascii(tokens) => {
                let t = tokens
                    .next()
                    .ok_or_else(|| Error::Parse("PLY body ended early".into()))?;
                t.parse::<f64>()
                    .map_err(|_| Error::Parse(format!("bad PLY number {t:?}")))
            }
            Body::Binary { bytes, pos } => {
                let size = ty.size();
                if *pos + size > bytes.len() {
                    return Err(Error::Parse("PLY body ended early".into()));
                }
                let v = ty.read_le(&bytes[*pos..*pos + size]);
                *pos += size;
                Ok(v)
            }
        }
    }
}

pub(crate) fn parse(bytes: &[u8]) -> Result<RawMesh> {
    let header = parse_header(bytes)?;
    let body_bytes = &bytes[header.body_offset..];
    let mut body = match header.encoding {
        PlyEncoding::Ascii => Body::Ascii(
            std::str::from_utf8(body_bytes)
                .map_err(|_| Error::Parse("ASCII PLY body is not UTF-8".into()))?
                .split_ascii_whitespace(),
        ),
        PlyEncoding::BinaryLittleEndian => Body::Binary {
            bytes: body_bytes,
            pos: 0,
        },
    };

    let mut vertices = Vec::new();
    let mut colors: Option<Vec<Vec3>> = None;
    let mut triangles = Vec::new();
    for el in &header.elements {
        match el.name.as_str() {
            "vertex" => {
                let find = |n: &str| {
                    el.props.iter().position(
                        |p| matches!(p, Property::Scalar { name, .. } if name == n),
                    )
                };
                let xyz = [find("x"), find("y"), find("z")];
                if xyz.iter().any(Option::is_none) {
                    return Err(Error::Parse("vertex element lacks x/y/z".into()));
                }
                let rgb = [
                    find("red").or(find("r")),
                    find("green").or(find("g")),
                    find("blue").or(find("b")),
                ];
                let has_color = rgb.iter().all(Option::is_some);
                let color_scale = if has_color {
                    match &el.props[rgb[0].unwrap()] {
                        Property::Scalar { ty, .. } if ty.is_integer() => 1.0 / 255.0,
                        _ => 1.0,
                    }
                } else {
                    1.0
                };
                let mut cols = Vec::with_capacity(if has_color { el.count } else { 0 });
                vertices.reserve(el.count);
                let mut values = vec![0.0; el.props.len()];
                for _ in 0..el.count {
                    for (k, p) in el.props.iter().enumerate() {
                        values[k] = match p {
                            Property::Scalar { ty, .. } => body.next(*ty)?,
                            Property::List { count, item, .. } => {
                                let c = body.next(*count)? as usize;
                                for _ in 0..c {
                                    body.next(*item)?;
                                }
                                0.0
                            }
                        };
                    }
                    vertices.push(Vec3::new(
                        values[xyz[0].unwrap()],
                        values[xyz[1].unwrap()],
                        values[xyz[2].unwrap()],
                    ));
                    if has_color {
                        cols.push(
                            Vec3::new(
                                values[rgb[0].unwrap()],
                                values[rgb[1].unwrap()],
                                values[rgb[2].unwrap()],
                            ) * color_scale,
                        );
                    }
                }
                if has_color {
                    colors = Some(cols);
                }
            }
            "face" => {
                let list = el.props.iter().position(|p| {
                    matches!(p, Property::List { name, .. }
                        if name == "vertex_indices" || name == "vertex_index")
                });
                let list = list.ok_or_else(|| Error::Parse("face element lacks vertex_indices".into()))?;
                let mut poly = Vec::new();
                for _ in 0..el.count {
                    for (k, p) in el.props.iter().enumerate() {
                        match p {
                            Property::Scalar { ty, .. } => {
                                body.next(*ty)?;
                            }
                            Property::List { count, item, .. } => {
                                let c = body.next(*count)? as usize;
                                poly.clear();
                                for _ in 0..c {
                                    let v = body.next(*item)?;
                                    if v < 0.0 || v.fract() != 0.0 {
                                        return Err(Error::Parse(format!("bad vertex index {v}")));
                                    }
                                    poly.push(v as u32);
                                }
                                if k == list {
                                    fan(&poly, &mut triangles)?;
                                }
                            }
                        }
                    }
                }
            }
            _ => {
                for _ in 0..el.count {
                    for p in &el.props {
                        match p {
                            Property::Scalar { ty, .. } => {
                                body.next(*ty)?;
                            }
                            Property::List { count, item, .. } => {
                                let c = body.next(*count)? as usize;
                                for _ in 0..c {
                                    body.next(*item)?;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(RawMesh {
        vertices,
        colors,
        triangles,
    })
}

fn to_byte(c: f64) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub(crate) fn write(mesh: &TriMesh, encoding: PlyEncoding) -> Vec<u8> {
    let format = match encoding {
        PlyEncoding::Ascii => "ascii",
        PlyEncoding::BinaryLittleEndian => "binary_little_endian",
    };
    let mut out = format!(
        "ply\nformat {format} 1.0\nelement vertex {}\n\
         property float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\n\
         element face {}\nproperty list uchar int vertex_indices\nend_header\n",
        mesh.vertices.len(),
        mesh.triangles.len()
    )
    .into_bytes();
    match encoding {
        PlyEncoding::Ascii => {
            use std::fmt::Write;
            let mut s = String::new();
            for (v, a) in mesh.vertices.iter().zip(&mesh.albedo) {
                let _ = writeln!(
                    s,
                    "{} {} {} {} {} {}",
                    v.x as f32,
                    v.y as f32,
                    v.z as f32,
                    to_byte(a.x),
                    to_byte(a.y),
                    to_byte(a.z)
                );
            }
            for t in &mesh.triangles {
                let _ = writeln!(s, "3 {} {} {}", t[0], t[1], t[2]);
            }
            out.extend_from_slice(s.as_bytes());
        }
        PlyEncoding::BinaryLittleEndian => {
            for (v, a) in mesh.vertices.iter().zip(&mesh.albedo) {
                for c in [v.x, v.y, v.z] {
                    out.extend_from_slice(&(c as f32).to_le_bytes());
                }
                out.extend_from_slice(&[to_byte(a.x), to_byte(a.y), to_byte(a.z)]);
            }
            for t in &mesh.triangles {
                out.push(3);
                for &i in t {
                    out.extend_from_slice(&(i as i32).to_le_bytes());
                }
            }
        }
    }
    out
}
