//! Colored point clouds as PLY: `x y z` plus `red green blue` vertex
//! properties, ASCII or binary little-endian.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::DataBatch;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlyFormat {
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
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn is_float(self) -> bool {
        matches!(self, Self::F32 | Self::F64)
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug)]
enum Property {
    Scalar(String, Scalar),
    List,
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

struct Header {
    format: PlyFormat,
    elements: Vec<Element>,
    data_start: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let mut pos = 0;
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    let mut first = true;
    loop {
        let line_start = pos;
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|i| pos + i)
            .ok_or_else(|| Error::parse(pos as u64, "header not terminated by end_header"))?;
        pos = end + 1;
        let line = String::from_utf8_lossy(&bytes[line_start..end]);
        let words: Vec<&str> = line.split_whitespace().collect();
        let off = line_start as u64;
        if first {
            if words != ["ply"] {
                return Err(Error::parse(0, "missing 'ply' magic"));
            }
            first = false;
            continue;
        }
        match words.as_slice() {
            [] => {}
            ["comment", ..] | ["obj_info", ..] => {}
            ["format", f, _version] => {
                format = Some(match *f {
                    "ascii" => PlyFormat::Ascii,
                    "binary_little_endian" => PlyFormat::BinaryLittleEndian,
                    other => {
                        return Err(Error::parse(off, format!("unsupported format {other:?}")));
                    }
                })
            }
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| Error::parse(off, format!("invalid element count {count:?}")))?,
                props: Vec::new(),
            }),
            ["property", "list", _, _, _] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::parse(off, "property before any element"))?;
                el.props.push(Property::List);
            }
            ["property", ty, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::parse(off, "property before any element"))?;
                let ty = Scalar::parse(ty)
                    .ok_or_else(|| Error::parse(off, format!("unknown property type {ty:?}")))?;
                el.props.push(Property::Scalar(name.to_string(), ty));
            }
            ["end_header"] => break,
            _ => return Err(Error::parse(off, format!("unexpected header line {line:?}"))),
        }
    }
    Ok(Header {
        format: format.ok_or_else(|| Error::parse(0, "missing format line"))?,
        elements,
        data_start: pos,
    })
}

const REQUIRED: [&str; 6] = ["x", "y", "z", "red", "green", "blue"];

/// Parses a PLY file into world positions and 0–255 colors. Float color
/// properties are taken to be on the 0–1 scale.
pub fn decode_ply(bytes: &[u8]) -> Result<DataBatch> {
    let header = parse_header(bytes)?;
    let vi = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| Error::parse(0, "no vertex element"))?;
    let vertex = &header.elements[vi];
    let mut slots = [usize::MAX; 6];
    let mut types = [Scalar::F32; 6];
    for (slot, want) in REQUIRED.iter().enumerate() {
        let idx = vertex
            .props
            .iter()
            .position(|p| matches!(p, Property::Scalar(n, _) if n == want))
            .ok_or_else(|| Error::parse(0, format!("vertex element lacks property \"{want}\"")))?;
        slots[slot] = idx;
        if let Property::Scalar(_, t) = vertex.props[idx] {
            types[slot] = t;
        }
    }
    if vertex.props.iter().any(|p| matches!(p, Property::List)) {
        return Err(Error::parse(0, "list properties on vertices are not supported"));
    }
    let color_scale: Vec<f64> = (3..6)
        .map(|s| if types[s].is_float() { 255.0 } else { 1.0 })
        .collect();
    let mut batch = DataBatch::with_capacity(3, vertex.count);
    let mut values = vec![0.0; vertex.props.len()];
    let types: Vec<Scalar> = vertex
        .props
        .iter()
        .map(|p| match p {
            Property::Scalar(_, t) => *t,
            Property::List => unreachable!(),
        })
        .collect();
    let push = |values: &[f64], batch: &mut DataBatch| {
        batch.push(
            &[values[slots[0]], values[slots[1]], values[slots[2]]],
            &[
                values[slots[3]] * color_scale[0],
                values[slots[4]] * color_scale[1],
                values[slots[5]] * color_scale[2],
            ],
        );
    };

    match header.format {
        PlyFormat::Ascii => {
            let mut pos = header.data_start;
            let next_line = |pos: &mut usize| -> Option<(usize, String)> {
                while *pos < bytes.len() {
                    let start = *pos;
                    let end = bytes[start..]
                        .iter()
                        .position(|&b| b == b'\n')
                        .map_or(bytes.len(), |i| start + i);
                    *pos = end + 1;
                    let line = String::from_utf8_lossy(&bytes[start..end]).trim().to_string();
                    if !line.is_empty() {
                        return Some((start, line));
                    }
                }
                None
            };
            for el in &header.elements[..vi] {
                for _ in 0..el.count {
                    next_line(&mut pos)
                        .ok_or_else(|| Error::parse(bytes.len() as u64, format!("truncated {} data", el.name)))?;
                }
            }
            for n in 0..vertex.count {
                let (start, line) = next_line(&mut pos).ok_or_else(|| {
                    Error::parse(bytes.len() as u64, format!("file ends after {n} of {} vertices", vertex.count))
                })?;
                let words: Vec<&str> = line.split_whitespace().collect();
                if words.len() < values.len() {
                    return Err(Error::parse(start as u64, format!("vertex {n} has {} values", words.len())));
                }
                for ((v, w), t) in values.iter_mut().zip(&words).zip(&types) {
                    let bad = |_| Error::parse(start as u64, format!("invalid number {w:?}"));
                    // float properties hold single precision; round like a binary file would
                    *v = if *t == Scalar::F32 {
                        w.parse::<f32>().map_err(bad)? as f64
                    } else {
                        w.parse::<f64>().map_err(bad)?
                    };
                }
                push(&values, &mut batch);
            }
        }
        PlyFormat::BinaryLittleEndian => {
            let mut pos = header.data_start;
            for el in &header.elements[..vi] {
                let mut size = 0;
                for p in &el.props {
                    match p {
                        Property::Scalar(_, t) => size += t.size(),
                        Property::List => {
                            return Err(Error::parse(
                                pos as u64,
                                format!("cannot skip list element {:?} before vertices", el.name),
                            ))
                        }
                    }
                }
                pos += size * el.count;
            }
            let stride: usize = types.iter().map(|t| t.size()).sum();
            for n in 0..vertex.count {
                if pos + stride > bytes.len() {
                    return Err(Error::parse(
                        bytes.len() as u64,
                        format!("file ends inside vertex {n} of {}", vertex.count),
                    ));
                }
                let mut o = pos;
                for (v, t) in values.iter_mut().zip(&types) {
                    *v = t.read_le(&bytes[o..]);
                    o += t.size();
                }
                pos += stride;
                push(&values, &mut batch);
            }
        }
    }
    if batch.spatial_values().iter().any(|v| !v.is_finite()) {
        return Err(Error::parse(header.data_start as u64, "non-finite vertex coordinate"));
    }
    Ok(batch)
}

/// Writes positions as float32 and colors as uchar (rounded and clamped).
pub fn encode_ply(batch: &DataBatch, format: PlyFormat) -> Result<Vec<u8>> {
    if !batch.is_empty() && batch.dim() != 3 {
        return Err(Error::Dimension {
            expected: 3,
            found: batch.dim(),
        });
    }
    let fmt = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    let mut out = format!(
        "ply\nformat {fmt} 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        batch.len()
    )
    .into_bytes();
    let byte = |v: f64| v.round().clamp(0.0, 255.0) as u8;
    for i in 0..batch.len() {
        let s = batch.spatial(i);
        let c = batch.color(i);
        match format {
            PlyFormat::Ascii => {
                let line = format!(
                    "{} {} {} {} {} {}\n",
                    s[0] as f32,
                    s[1] as f32,
                    s[2] as f32,
                    byte(c[0]),
                    byte(c[1]),
                    byte(c[2])
                );
                out.extend(line.into_bytes());
            }
            PlyFormat::BinaryLittleEndian => {
                for v in s {
                    out.extend((*v as f32).to_le_bytes());
                }
                out.extend([byte(c[0]), byte(c[1]), byte(c[2])]);
            }
        }
    }
    Ok(out)
}

pub fn load_pointcloud(path: &Path) -> Result<DataBatch> {
    decode_ply(&fs::read(path)?)
}

pub fn save_pointcloud(batch: &DataBatch, path: &Path, format: PlyFormat) -> Result<()> {
    fs::write(path, encode_ply(batch, format)?)?;
    Ok(())
}
