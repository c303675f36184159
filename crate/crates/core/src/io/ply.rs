//! PLY meshes with per-vertex `red green blue` and `objectId`.
//!
//! Reads ASCII and binary (both endiannesses). Unknown elements and
//! properties are skipped; polygons are fan-triangulated.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::mesh::SceneModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
    BinaryBigEndian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
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
    fn parse(s: &str) -> Option<Scalar> {
        Some(match s {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
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

    fn is_float(self) -> bool {
        matches!(self, Scalar::F32 | Scalar::F64)
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar(Scalar, String),
    List(Scalar, Scalar, String),
}

impl Property {
    fn name(&self) -> &str {
        match self {
            Property::Scalar(_, n) | Property::List(_, _, n) => n,
        }
    }
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

/// Reads values of one element instance from either body encoding.
trait Source {
    fn begin_instance(&mut self) -> std::result::Result<(), String>;
    fn scalar(&mut self, ty: Scalar) -> std::result::Result<f64, String>;
    fn end_instance(&mut self) -> std::result::Result<(), String>;
    fn line(&self) -> usize;
}

struct AsciiSource<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
    tokens: Vec<&'a str>,
    pos: usize,
    line: usize,
}

impl Source for AsciiSource<'_> {
    fn begin_instance(&mut self) -> std::result::Result<(), String> {
        loop {
            let (i, l) = self.lines.next().ok_or("unexpected end of file")?;
            self.line = i;
            let toks: Vec<&str> = l.split_whitespace().collect();
            if !toks.is_empty() {
                self.tokens = toks;
                self.pos = 0;
                return Ok(());
            }
        }
    }

    fn scalar(&mut self, ty: Scalar) -> std::result::Result<f64, String> {
        let tok = *self
            .tokens
            .get(self.pos)
            .ok_or_else(|| format!("expected {} values, found fewer", self.pos + 1))?;
        self.pos += 1;
        if ty.is_float() {
            tok.parse::<f64>().map_err(|_| format!("bad number `{tok}`"))
        } else {
            tok.parse::<i64>()
                .map(|v| v as f64)
                .map_err(|_| format!("bad integer `{tok}`"))
        }
    }

    fn end_instance(&mut self) -> std::result::Result<(), String> {
        if self.pos != self.tokens.len() {
            return Err(format!("expected {} values, found {}", self.pos, self.tokens.len()));
        }
        Ok(())
    }

    fn line(&self) -> usize {
        self.line
    }
}

struct BinarySource<'a> {
    data: &'a [u8],
    pos: usize,
    big_endian: bool,
    header_lines: usize,
}

impl Source for BinarySource<'_> {
    fn begin_instance(&mut self) -> std::result::Result<(), String> {
        Ok(())
    }

    fn scalar(&mut self, ty: Scalar) -> std::result::Result<f64, String> {
        let n = ty.size();
        let bytes = self
            .data
            .get(self.pos..self.pos + n)
            .ok_or_else(|| format!("truncated binary body at byte {}", self.pos))?;
        self.pos += n;
        let mut b = [0u8; 8];
        b[..n].copy_from_slice(bytes);
        if self.big_endian {
            b[..n].reverse();
        }
        Ok(match ty {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(b),
        })
    }

    fn end_instance(&mut self) -> std::result::Result<(), String> {
        Ok(())
    }

    fn line(&self) -> usize {
        // Binary bodies have no lines; errors point past the header.
        self.header_lines + 1
    }
}

pub fn read_ply(path: &Path) -> Result<SceneModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_ply(&bytes, path)
}

pub fn parse_ply(bytes: &[u8], path: &Path) -> Result<SceneModel> {
    let perr = |line: usize, msg: String| Error::parse(path, line, msg);

    // Header.
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    let mut pos = 0usize;
    let mut line_no = 0usize;
    let mut body_start = None;
    while pos < bytes.len() {
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .map_or(bytes.len(), |e| pos + e);
        line_no += 1;
        let line = std::str::from_utf8(&bytes[pos..end])
            .map_err(|_| perr(line_no, "header is not valid UTF-8".into()))?
            .trim_end_matches('\r')
            .trim();
        pos = end + 1;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            [] => {}
            ["ply"] if line_no == 1 => {}
            _ if line_no == 1 => return Err(perr(1, "missing `ply` magic".into())),
            ["format", f, _] => {
                format = Some(match *f {
                    "ascii" => PlyFormat::Ascii,
                    "binary_little_endian" => PlyFormat::BinaryLittleEndian,
                    "binary_big_endian" => PlyFormat::BinaryBigEndian,
                    other => return Err(perr(line_no, format!("unknown format `{other}`"))),
                })
            }
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| perr(line_no, format!("bad element count `{count}`")))?,
                properties: Vec::new(),
            }),
            ["property", "list", ct, it, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| perr(line_no, "property before any element".into()))?;
                let ct = Scalar::parse(ct).ok_or_else(|| perr(line_no, format!("unknown type `{ct}`")))?;
                let it = Scalar::parse(it).ok_or_else(|| perr(line_no, format!("unknown type `{it}`")))?;
                el.properties.push(Property::List(ct, it, name.to_string()));
            }
            ["property", ty, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| perr(line_no, "property before any element".into()))?;
                let ty = Scalar::parse(ty).ok_or_else(|| perr(line_no, format!("unknown type `{ty}`")))?;
                el.properties.push(Property::Scalar(ty, name.to_string()));
            }
            ["end_header"] => {
                body_start = Some(pos.min(bytes.len()));
                break;
            }
            _ => return Err(perr(line_no, format!("unrecognized header line `{line}`"))),
        }
    }
    let body_start = body_start.ok_or_else(|| perr(line_no, "missing `end_header`".into()))?;
    let format = format.ok_or_else(|| perr(2, "missing `format` line".into()))?;

    let vertex_el = elements
        .iter()
        .find(|e| e.name == "vertex")
        .ok_or_else(|| perr(line_no, "no `vertex` element".into()))?;
    for c in ["x", "y", "z"] {
        if !vertex_el.properties.iter().any(|p| p.name() == c) {
            return Err(perr(line_no, format!("vertex element lacks property `{c}`")));
        }
    }
    let n_vertices = vertex_el.count;

    let body = &bytes[body_start..];
    let text;
    let mut src: Box<dyn Source> = match format {
        PlyFormat::Ascii => {
            text = std::str::from_utf8(body).map_err(|_| perr(line_no + 1, "body is not valid UTF-8".into()))?;
            Box::new(AsciiSource {
                lines: text.lines().enumerate(),
                tokens: Vec::new(),
                pos: 0,
                line: 0,
            })
        }
        PlyFormat::BinaryLittleEndian | PlyFormat::BinaryBigEndian => Box::new(BinarySource {
            data: body,
            pos: 0,
            big_endian: format == PlyFormat::BinaryBigEndian,
            header_lines: line_no,
        }),
    };
    let ascii = format == PlyFormat::Ascii;
    let header_lines = line_no;
    let at = |src: &dyn Source| {
        if ascii {
            header_lines + 1 + src.line()
        } else {
            src.line()
        }
    };

    let mut vertices = Vec::with_capacity(n_vertices);
    let mut colors = Vec::with_capacity(n_vertices);
    let mut labels = Vec::with_capacity(n_vertices);
    let mut triangles = Vec::new();

    for el in &elements {
        for instance in 0..el.count {
            src.begin_instance().map_err(|m| perr(at(src.as_ref()), m))?;
            let mut xyz = [0.0; 3];
            let mut rgb = [0u8; 3];
            let mut label = 0u16;
            let mut face: Option<Vec<u32>> = None;
            for p in &el.properties {
                match p {
                    Property::Scalar(ty, name) => {
                        let v = src.scalar(*ty).map_err(|m| perr(at(src.as_ref()), m))?;
                        if el.name != "vertex" {
                            continue;
                        }
                        match name.as_str() {
                            "x" => xyz[0] = v,
                            "y" => xyz[1] = v,
                            "z" => xyz[2] = v,
                            "red" | "green" | "blue" => {
                                let c = if ty.is_float() { (v * 255.0).round() } else { v };
                                if !(0.0..=255.0).contains(&c) {
                                    return Err(perr(at(src.as_ref()), format!("color value {v} out of range")));
                                }
                                let i = match name.as_str() {
                                    "red" => 0,
                                    "green" => 1,
                                    _ => 2,
                                };
                                rgb[i] = c as u8;
                            }
                            n if n.eq_ignore_ascii_case("objectid") => {
                                if !(0.0..=65535.0).contains(&v) || v.fract() != 0.0 {
                                    return Err(perr(at(src.as_ref()), format!("objectId {v} is not a 16-bit label")));
                                }
                                label = v as u16;
                            }
                            _ => {}
                        }
                    }
                    Property::List(ct, it, name) => {
                        let n = src.scalar(*ct).map_err(|m| perr(at(src.as_ref()), m))?;
                        if n < 0.0 {
                            return Err(perr(at(src.as_ref()), format!("negative list length {n}")));
                        }
                        let mut items = Vec::with_capacity(n as usize);
                        for _ in 0..n as usize {
                            items.push(src.scalar(*it).map_err(|m| perr(at(src.as_ref()), m))?);
                        }
                        if el.name == "face" && (name == "vertex_indices" || name == "vertex_index") {
                            let mut idx = Vec::with_capacity(items.len());
                            for v in items {
                                if v < 0.0 || v >= n_vertices as f64 {
                                    return Err(perr(
                                        at(src.as_ref()),
                                        format!("face {instance}: vertex index {v} out of range (0..{n_vertices})"),
                                    ));
                                }
                                idx.push(v as u32);
                            }
                            face = Some(idx);
                        }
                    }
                }
            }
            src.end_instance().map_err(|m| perr(at(src.as_ref()), m))?;
            if el.name == "vertex" {
                if !xyz.iter().all(|c| c.is_finite()) {
                    return Err(perr(at(src.as_ref()), format!("vertex {instance} is not finite")));
                }
                vertices.push(Vector3::new(xyz[0], xyz[1], xyz[2]));
                colors.push(rgb);
                labels.push(label);
            } else if let Some(idx) = face {
                if idx.len() < 3 {
                    return Err(perr(
                        at(src.as_ref()),
                        format!("face {instance} has {} vertices", idx.len()),
                    ));
                }
                for k in 1..idx.len() - 1 {
                    triangles.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
        }
    }
    SceneModel::new(vertices, colors, labels, triangles).map_err(|e| Error::File {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn write_ply(path: &Path, model: &SceneModel, format: PlyFormat) -> Result<()> {
    let bytes = encode_ply(model, format);
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_ply(model: &SceneModel, format: PlyFormat) -> Vec<u8> {
    let mut out = Vec::new();
    let fmt = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
        PlyFormat::BinaryBigEndian => "binary_big_endian",
    };
    let _ = write!(
        out,
        "ply\nformat {fmt} 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nproperty ushort objectId\n\
         element face {}\nproperty list uchar int vertex_indices\nend_header\n",
        model.vertices().len(),
        model.triangles().len()
    );
    let verts = model.vertices().iter().zip(model.colors()).zip(model.labels());
    match format {
        PlyFormat::Ascii => {
            for ((v, c), l) in verts {
                let _ = writeln!(out, "{} {} {} {} {} {} {}", v.x, v.y, v.z, c[0], c[1], c[2], l);
            }
            for t in model.triangles() {
                let _ = writeln!(out, "3 {} {} {}", t[0], t[1], t[2]);
            }
        }
        PlyFormat::BinaryLittleEndian | PlyFormat::BinaryBigEndian => {
            let be = format == PlyFormat::BinaryBigEndian;
            let put = |out: &mut Vec<u8>, mut b: Vec<u8>| {
                if be {
                    b.reverse();
                }
                out.extend_from_slice(&b);
            };
            for ((v, c), l) in verts {
                for x in v.iter() {
                    put(&mut out, x.to_le_bytes().to_vec());
                }
                out.extend_from_slice(c);
                put(&mut out, l.to_le_bytes().to_vec());
            }
            for t in model.triangles() {
                out.push(3);
                for i in t {
                    put(&mut out, (*i as i32).to_le_bytes().to_vec());
                }
            }
        }
    }
    out
}
