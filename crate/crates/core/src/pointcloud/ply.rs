//! PLY reader/writer for the point subset this crate needs.
//!
//! Supported: `ascii 1.0` and `binary_little_endian 1.0`, a `vertex` element
//! with `x`, `y`, `z` as `float`/`float32` (or `double`), any number of other
//! scalar or list properties and elements, which are skipped. Clouds are
//! written with float32 coordinates only.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Point3;

use super::{PointCloud, PointCloudError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Ascii,
    BinaryLe,
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
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
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

    fn decode_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes([b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]]),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

/// A parsed PLY: the vertex cloud plus header comments.
#[derive(Debug, Clone)]
pub struct PlyCloud {
    pub cloud: PointCloud,
    pub comments: Vec<String>,
}

pub fn load_ply(path: impl AsRef<Path>) -> Result<PointCloud> {
    Ok(read_ply_file(path)?.cloud)
}

pub fn read_ply_file(path: impl AsRef<Path>) -> Result<PlyCloud> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    parse_ply(&bytes)
}

pub fn save_ply(cloud: &PointCloud, path: impl AsRef<Path>, binary: bool) -> Result<()> {
    save_ply_with_comments(cloud, path, binary, &[])
}

pub fn save_ply_with_comments(
    cloud: &PointCloud,
    path: impl AsRef<Path>,
    binary: bool,
    comments: &[String],
) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_ply(cloud, &mut out, binary, comments)?;
    out.flush()?;
    Ok(())
}

pub fn write_ply<W: Write>(cloud: &PointCloud, out: &mut W, binary: bool, comments: &[String]) -> Result<()> {
    let format = if binary { "binary_little_endian" } else { "ascii" };
    writeln!(out, "ply")?;
    writeln!(out, "format {format} 1.0")?;
    writeln!(out, "comment frame_id {}", cloud.frame_id())?;
    for c in comments {
        writeln!(out, "comment {c}")?;
    }
    writeln!(out, "element vertex {}", cloud.len())?;
    writeln!(out, "property float x")?;
    writeln!(out, "property float y")?;
    writeln!(out, "property float z")?;
    writeln!(out, "end_header")?;
    for p in cloud.points() {
        let (x, y, z) = (p.x as f32, p.y as f32, p.z as f32);
        if binary {
            out.write_all(&x.to_le_bytes())?;
            out.write_all(&y.to_le_bytes())?;
            out.write_all(&z.to_le_bytes())?;
        } else {
            writeln!(out, "{x} {y} {z}")?;
        }
    }
    Ok(())
}

fn header_err(line: usize, message: impl Into<String>) -> PointCloudError {
    PointCloudError::PlyHeader {
        line,
        message: message.into(),
    }
}

pub fn parse_ply(bytes: &[u8]) -> Result<PlyCloud> {
    let mut pos = 0usize;
    let mut line_no = 0usize;
    let next_line = |pos: &mut usize| -> Option<String> {
        if *pos >= bytes.len() {
            return None;
        }
        let end = bytes[*pos..].iter().position(|&b| b == b'\n').map_or(bytes.len(), |e| *pos + e);
        let line = String::from_utf8_lossy(&bytes[*pos..end]).trim_end_matches('\r').to_string();
        *pos = (end + 1).min(bytes.len());
        Some(line)
    };

    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    let mut comments = Vec::new();
    let mut ended = false;
    while let Some(line) = next_line(&mut pos) {
        line_no += 1;
        let mut tok = line.split_whitespace();
        let Some(keyword) = tok.next() else {
            continue;
        };
        if line_no == 1 {
            if keyword != "ply" {
                return Err(header_err(1, "missing 'ply' magic"));
            }
            continue;
        }
        match keyword {
            "format" => {
                format = Some(match tok.next() {
                    Some("ascii") => Format::Ascii,
                    Some("binary_little_endian") => Format::BinaryLe,
                    Some(other) => return Err(header_err(line_no, format!("unsupported format '{other}'"))),
                    None => return Err(header_err(line_no, "format line without a format")),
                });
                if tok.next() != Some("1.0") {
                    return Err(header_err(line_no, "unsupported PLY version"));
                }
            }
            "comment" => comments.push(line.trim_start()["comment".len()..].trim().to_string()),
            "obj_info" => {}
            "element" => {
                let name = tok.next().ok_or_else(|| header_err(line_no, "element without a name"))?;
                let count = tok
                    .next()
                    .and_then(|c| c.parse::<usize>().ok())
                    .ok_or_else(|| header_err(line_no, "element count is not a non-negative integer"))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            "property" => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| header_err(line_no, "property before any element"))?;
                let ty = tok.next().ok_or_else(|| header_err(line_no, "property without a type"))?;
                let property = if ty == "list" {
                    let count = tok.next().and_then(Scalar::parse);
                    let item = tok.next().and_then(Scalar::parse);
                    match (count, item, tok.next()) {
                        (Some(count), Some(item), Some(_name)) => Property::List { count, item },
                        _ => return Err(header_err(line_no, "malformed list property")),
                    }
                } else {
                    let ty = Scalar::parse(ty).ok_or_else(|| header_err(line_no, format!("unknown property type '{ty}'")))?;
                    let name = tok.next().ok_or_else(|| header_err(line_no, "property without a name"))?;
                    Property::Scalar {
                        name: name.to_string(),
                        ty,
                    }
                };
                element.properties.push(property);
            }
            "end_header" => {
                ended = true;
                break;
            }
            other => return Err(header_err(line_no, format!("unexpected header keyword '{other}'"))),
        }
    }
    if !ended {
        return Err(header_err(line_no.max(1), "missing end_header"));
    }
    let format = format.ok_or_else(|| header_err(line_no, "no format line"))?;

    let vertex_pos = elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| header_err(line_no, "no vertex element"))?;
    let coord_slot = |axis: &str| -> Result<usize> {
        elements[vertex_pos]
            .properties
            .iter()
            .position(|p| matches!(p, Property::Scalar { name, ty } if name == axis && matches!(ty, Scalar::F32 | Scalar::F64)))
            .ok_or_else(|| header_err(line_no, format!("vertex element lacks a float '{axis}' property")))
    };
    let slots = [coord_slot("x")?, coord_slot("y")?, coord_slot("z")?];

    let body = &bytes[pos..];
    let points = match format {
        Format::Ascii => read_ascii(body, &elements, vertex_pos, slots)?,
        Format::BinaryLe => read_binary(body, &elements, vertex_pos, slots)?,
    };
    let frame_id = comments
        .iter()
        .find_map(|c| c.strip_prefix("frame_id ").map(|s| s.trim().to_string()))
        .unwrap_or_else(|| "unknown".to_string());
    let cloud = PointCloud::new(points, frame_id).map_err(|e| match e {
        PointCloudError::NonFinite { index } => PointCloudError::PlyData {
            index,
            message: "non-finite coordinate".into(),
        },
        other => other,
    })?;
    Ok(PlyCloud { cloud, comments })
}

fn read_ascii(body: &[u8], elements: &[Element], vertex_pos: usize, slots: [usize; 3]) -> Result<Vec<Point3<f64>>> {
    let text = String::from_utf8_lossy(body);
    let mut tokens = text.split_whitespace();
    let mut points = Vec::with_capacity(elements[vertex_pos].count);
    for (ei, element) in elements.iter().enumerate() {
        for row in 0..element.count {
            let data_err = |message: &str| PointCloudError::PlyData {
                index: row,
                message: format!("{} (element '{}')", message, element.name),
            };
            let mut coords = [0.0f64; 3];
            for (pi, property) in element.properties.iter().enumerate() {
                match property {
                    Property::Scalar { .. } => {
                        let t = tokens.next().ok_or_else(|| data_err("unexpected end of data"))?;
                        if ei == vertex_pos {
                            if let Some(axis) = slots.iter().position(|&s| s == pi) {
                                coords[axis] = t.parse::<f64>().map_err(|_| data_err("unparsable coordinate"))?;
                            }
                        }
                    }
                    Property::List { .. } => {
                        let n = tokens
                            .next()
                            .and_then(|t| t.parse::<usize>().ok())
                            .ok_or_else(|| data_err("bad list length"))?;
                        for _ in 0..n {
                            tokens.next().ok_or_else(|| data_err("unexpected end of data"))?;
                        }
                    }
                }
            }
            if ei == vertex_pos {
                points.push(Point3::new(coords[0], coords[1], coords[2]));
            }
        }
    }
    Ok(points)
}

fn read_binary(body: &[u8], elements: &[Element], vertex_pos: usize, slots: [usize; 3]) -> Result<Vec<Point3<f64>>> {
    let mut cursor = 0usize;
    let mut points = Vec::with_capacity(elements[vertex_pos].count);
    for (ei, element) in elements.iter().enumerate() {
        for row in 0..element.count {
            let truncated = || PointCloudError::PlyData {
                index: row,
                message: format!("truncated binary data (element '{}')", element.name),
            };
            let mut take = |n: usize| -> Result<&[u8]> {
                let slice = body.get(cursor..cursor + n).ok_or_else(truncated)?;
                cursor += n;
                Ok(slice)
            };
            let mut coords = [0.0f64; 3];
            for (pi, property) in element.properties.iter().enumerate() {
                match *property {
                    Property::Scalar { ty, .. } => {
                        let raw = take(ty.size())?;
                        if ei == vertex_pos {
                            if let Some(axis) = slots.iter().position(|&s| s == pi) {
                                coords[axis] = ty.decode_le(raw);
                            }
                        }
                    }
                    Property::List { count, item } => {
                        let n = count.decode_le(take(count.size())?);
                        if !(n >= 0.0) {
                            return Err(truncated());
                        }
                        take(n as usize * item.size())?;
                    }
                }
            }
            if ei == vertex_pos {
                points.push(Point3::new(coords[0], coords[1], coords[2]));
            }
        }
    }
    Ok(points)
}
