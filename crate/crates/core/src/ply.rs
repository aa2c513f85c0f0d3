//! PLY mesh reading and writing (ASCII and binary little-endian).
//!
//! Recognized vertex properties: `x`, `y`, `z`, an optional `uchar label`
//! holding a ground-truth class index, and optional `prob_<Class>` properties
//! holding a fused class distribution. Faces come from a `vertex_indices` (or
//! `vertex_index`) list; polygons with more than three corners are fanned
//! into triangles. Any other element or property is parsed and ignored.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Point3;
use thiserror::Error;

use crate::geometry::{ClassDistribution, ClassSet, GeometryError, SemanticMesh};

#[derive(Debug, Error)]
pub enum PlyError {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("malformed PLY header: {0}")]
    Header(String),
    #[error("malformed PLY body: {0}")]
    Body(String),
    #[error("unsupported PLY format `{0}`")]
    UnsupportedFormat(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
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

    fn decode(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => f64::from(b[0] as i8),
            Self::U8 => f64::from(b[0]),
            Self::I16 => f64::from(i16::from_le_bytes([b[0], b[1]])),
            Self::U16 => f64::from(u16::from_le_bytes([b[0], b[1]])),
            Self::I32 => f64::from(i32::from_le_bytes([b[0], b[1], b[2], b[3]])),
            Self::U32 => f64::from(u32::from_le_bytes([b[0], b[1], b[2], b[3]])),
            Self::F32 => f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])),
            Self::F64 => f64::from_le_bytes(b[..8].try_into().expect("8 bytes")),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar {
        name: String,
        ty: ScalarType,
    },
    List {
        name: String,
        count: ScalarType,
        item: ScalarType,
    },
}

impl Property {
    fn name(&self) -> &str {
        match self {
            Property::Scalar { name, .. } | Property::List { name, .. } => name,
        }
    }
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

#[derive(Debug, Clone)]
enum Value {
    Scalar(f64),
    List(Vec<f64>),
}

/// Contents of a PLY file in the terms this crate cares about.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlyData {
    pub vertices: Vec<Point3<f64>>,
    pub triangles: Vec<[u32; 3]>,
    pub labels: Option<Vec<u8>>,
    /// Class names from `prob_<Class>` properties and per-vertex values.
    pub probabilities: Option<(Vec<String>, Vec<Vec<f64>>)>,
}

impl PlyData {
    /// Builds a mesh over `classes`. Stored probabilities are used when their
    /// class names match the set exactly, otherwise vertices start uniform.
    pub fn into_mesh(self, classes: &ClassSet) -> Result<SemanticMesh, PlyError> {
        let n = self.vertices.len();
        let distributions = match self.probabilities {
            Some((names, values)) if names == classes.names() => values
                .into_iter()
                .map(|p| ClassDistribution::with_tolerance(p, 1e-4))
                .collect::<Result<Vec<_>, _>>()?,
            _ => vec![ClassDistribution::uniform(classes.len()); n],
        };
        let mesh = SemanticMesh::from_parts(self.vertices, self.triangles, distributions, None)?;
        Ok(match self.labels {
            Some(labels) => mesh.with_labels(labels, classes)?,
            None => mesh,
        })
    }
}

pub fn read_path(path: impl AsRef<Path>) -> Result<PlyData, PlyError> {
    read(BufReader::new(File::open(path)?))
}

pub fn read_mesh(path: impl AsRef<Path>, classes: &ClassSet) -> Result<SemanticMesh, PlyError> {
    read_path(path)?.into_mesh(classes)
}

pub fn read<R: BufRead>(mut input: R) -> Result<PlyData, PlyError> {
    let (format, elements) = read_header(&mut input)?;
    let mut data = PlyData::default();
    for element in &elements {
        let rows = match format {
            PlyFormat::Ascii => read_ascii_rows(&mut input, element)?,
            PlyFormat::BinaryLittleEndian => read_binary_rows(&mut input, element)?,
        };
        match element.name.as_str() {
            "vertex" => absorb_vertices(&mut data, element, rows)?,
            "face" => absorb_faces(&mut data, element, rows)?,
            _ => {}
        }
    }
    Ok(data)
}

fn read_header<R: BufRead>(input: &mut R) -> Result<(PlyFormat, Vec<Element>), PlyError> {
    let mut line = String::new();
    input.read_line(&mut line)?;
    if line.trim() != "ply" {
        return Err(PlyError::Header("missing `ply` magic".into()));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        line.clear();
        if input.read_line(&mut line)? == 0 {
            return Err(PlyError::Header("missing end_header".into()));
        }
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["end_header"] => break,
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["format", "ascii", _] => format = Some(PlyFormat::Ascii),
            ["format", "binary_little_endian", _] => format = Some(PlyFormat::BinaryLittleEndian),
            ["format", other, ..] => return Err(PlyError::UnsupportedFormat((*other).to_string())),
            ["element", name, count] => elements.push(Element {
                name: (*name).to_string(),
                count: count
                    .parse()
                    .map_err(|_| PlyError::Header(format!("element count `{count}`")))?,
                properties: Vec::new(),
            }),
            ["property", "list", count, item, name] => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| PlyError::Header("property before element".into()))?;
                let count = ScalarType::parse(count).ok_or_else(|| PlyError::Header(format!("type `{count}`")))?;
                let item = ScalarType::parse(item).ok_or_else(|| PlyError::Header(format!("type `{item}`")))?;
                element.properties.push(Property::List {
                    name: (*name).to_string(),
                    count,
                    item,
                });
            }
            ["property", ty, name] => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| PlyError::Header("property before element".into()))?;
                let ty = ScalarType::parse(ty).ok_or_else(|| PlyError::Header(format!("type `{ty}`")))?;
                element.properties.push(Property::Scalar {
                    name: (*name).to_string(),
                    ty,
                });
            }
            _ => return Err(PlyError::Header(format!("unexpected line `{}`", line.trim()))),
        }
    }
    let format = format.ok_or_else(|| PlyError::Header("missing format line".into()))?;
    Ok((format, elements))
}

fn read_ascii_rows<R: BufRead>(input: &mut R, element: &Element) -> Result<Vec<Vec<Value>>, PlyError> {
    let mut rows = Vec::with_capacity(element.count);
    let mut line = String::new();
    while rows.len() < element.count {
        line.clear();
        if input.read_line(&mut line)? == 0 {
            return Err(PlyError::Body(format!(
                "expected {} {} rows, got {}",
                element.count,
                element.name,
                rows.len()
            )));
        }
        if line.trim().is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let mut next = || -> Result<f64, PlyError> {
            let t = tokens
                .next()
                .ok_or_else(|| PlyError::Body(format!("short {} row", element.name)))?;
            t.parse::<f64>()
                .map_err(|_| PlyError::Body(format!("bad number `{t}`")))
        };
        let mut row = Vec::with_capacity(element.properties.len());
        for p in &element.properties {
            row.push(match p {
                Property::Scalar { .. } => Value::Scalar(next()?),
                Property::List { .. } => {
                    let n = next()?;
                    if n < 0.0 || n.fract() != 0.0 {
                        return Err(PlyError::Body(format!("list length {n}")));
                    }
                    Value::List((0..n as usize).map(|_| next()).collect::<Result<_, _>>()?)
                }
            });
        }
        rows.push(row);
    }
    Ok(rows)
}

fn read_binary_rows<R: Read>(input: &mut R, element: &Element) -> Result<Vec<Vec<Value>>, PlyError> {
    let mut rows = Vec::with_capacity(element.count);
    let mut buf = [0u8; 8];
    let mut scalar = |input: &mut R, ty: ScalarType| -> Result<f64, PlyError> {
        input
            .read_exact(&mut buf[..ty.size()])
            .map_err(|e| PlyError::Body(format!("truncated {}: {e}", element.name)))?;
        Ok(ty.decode(&buf))
    };
    for _ in 0..element.count {
        let mut row = Vec::with_capacity(element.properties.len());
        for p in &element.properties {
            row.push(match *p {
                Property::Scalar { ty, .. } => Value::Scalar(scalar(input, ty)?),
                Property::List { count, item, .. } => {
                    let n = scalar(input, count)?;
                    if n < 0.0 {
                        return Err(PlyError::Body(format!("list length {n}")));
                    }
                    Value::List((0..n as usize).map(|_| scalar(input, item)).collect::<Result<_, _>>()?)
                }
            });
        }
        rows.push(row);
    }
    Ok(rows)
}

fn absorb_vertices(data: &mut PlyData, element: &Element, rows: Vec<Vec<Value>>) -> Result<(), PlyError> {
    let position = |name: &str| element.properties.iter().position(|p| p.name() == name);
    let (Some(x), Some(y), Some(z)) = (position("x"), position("y"), position("z")) else {
        return Err(PlyError::Header("vertex element needs x, y and z".into()));
    };
    let label = position("label");
    let prob: Vec<(usize, String)> = element
        .properties
        .iter()
        .enumerate()
        .filter_map(|(i, p)| p.name().strip_prefix("prob_").map(|c| (i, c.to_string())))
        .collect();
    let scalar = |row: &[Value], i: usize| match row[i] {
        Value::Scalar(v) => Ok(v),
        Value::List(_) => Err(PlyError::Body("expected scalar vertex property".into())),
    };
    let mut labels = Vec::new();
    let mut probs = Vec::new();
    for row in &rows {
        data.vertices
            .push(Point3::new(scalar(row, x)?, scalar(row, y)?, scalar(row, z)?));
        if let Some(l) = label {
            let v = scalar(row, l)?;
            if !(0.0..=255.0).contains(&v) {
                return Err(PlyError::Body(format!("label {v} out of range")));
            }
            labels.push(v as u8);
        }
        if !prob.is_empty() {
            probs.push(
                prob.iter()
                    .map(|(i, _)| scalar(row, *i))
                    .collect::<Result<Vec<_>, _>>()?,
            );
        }
    }
    if label.is_some() {
        data.labels = Some(labels);
    }
    if !prob.is_empty() {
        data.probabilities = Some((prob.into_iter().map(|(_, n)| n).collect(), probs));
    }
    Ok(())
}

fn absorb_faces(data: &mut PlyData, element: &Element, rows: Vec<Vec<Value>>) -> Result<(), PlyError> {
    let Some(idx) = element
        .properties
        .iter()
        .position(|p| matches!(p, Property::List { name, .. } if name == "vertex_indices" || name == "vertex_index"))
    else {
        return Err(PlyError::Header("face element needs a vertex_indices list".into()));
    };
    for row in rows {
        let Value::List(ref corners) = row[idx] else {
            unreachable!("list property parsed as list")
        };
        if corners.len() < 3 {
            return Err(PlyError::Body(format!("face with {} corners", corners.len())));
        }
        let c: Vec<u32> = corners
            .iter()
            .map(|&v| {
                if v < 0.0 || v > f64::from(u32::MAX) {
                    Err(PlyError::Body(format!("vertex index {v}")))
                } else {
                    Ok(v as u32)
                }
            })
            .collect::<Result<_, _>>()?;
        for k in 1..c.len() - 1 {
            data.triangles.push([c[0], c[k], c[k + 1]]);
        }
    }
    Ok(())
}

/// What to include besides geometry when writing a mesh.
#[derive(Debug, Clone, Copy)]
pub struct WriteOptions<'a> {
    pub format: PlyFormat,
    /// Write the mesh's ground-truth labels (if any) as `uchar label`.
    pub labels: bool,
    /// Write per-vertex distributions as `double prob_<Class>`.
    pub probabilities: Option<&'a ClassSet>,
}

impl Default for WriteOptions<'_> {
    fn default() -> Self {
        Self {
            format: PlyFormat::BinaryLittleEndian,
            labels: true,
            probabilities: None,
        }
    }
}

pub fn write_path(path: impl AsRef<Path>, mesh: &SemanticMesh, options: WriteOptions<'_>) -> Result<(), PlyError> {
    let mut out = BufWriter::new(File::create(path)?);
    write(&mut out, mesh, options)?;
    out.flush()?;
    Ok(())
}

pub fn write<W: Write>(out: &mut W, mesh: &SemanticMesh, options: WriteOptions<'_>) -> Result<(), PlyError> {
    let labels = mesh.labels().filter(|_| options.labels);
    let format = match options.format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    writeln!(out, "ply\nformat {format} 1.0")?;
    writeln!(out, "element vertex {}", mesh.vertices().len())?;
    writeln!(out, "property double x\nproperty double y\nproperty double z")?;
    if labels.is_some() {
        writeln!(out, "property uchar label")?;
    }
    if let Some(classes) = options.probabilities {
        for name in classes.names() {
            writeln!(out, "property double prob_{name}")?;
        }
    }
    writeln!(out, "element face {}", mesh.triangles().len())?;
    writeln!(out, "property list uchar uint vertex_indices\nend_header")?;

    let probs = options.probabilities.is_some();
    match options.format {
        PlyFormat::Ascii => {
            for (i, v) in mesh.vertices().iter().enumerate() {
                write!(out, "{} {} {}", v.x, v.y, v.z)?;
                if let Some(l) = labels {
                    write!(out, " {}", l[i])?;
                }
                if probs {
                    for p in mesh.distributions()[i].probabilities() {
                        write!(out, " {p}")?;
                    }
                }
                writeln!(out)?;
            }
            for t in mesh.triangles() {
                writeln!(out, "3 {} {} {}", t[0], t[1], t[2])?;
            }
        }
        PlyFormat::BinaryLittleEndian => {
            let mut buf = Vec::with_capacity(mesh.vertices().len() * 32 + mesh.triangles().len() * 13);
            for (i, v) in mesh.vertices().iter().enumerate() {
                for c in [v.x, v.y, v.z] {
                    buf.extend_from_slice(&c.to_le_bytes());
                }
                if let Some(l) = labels {
                    buf.push(l[i]);
                }
                if probs {
                    for p in mesh.distributions()[i].probabilities() {
                        buf.extend_from_slice(&p.to_le_bytes());
                    }
                }
            }
            for t in mesh.triangles() {
                buf.push(3);
                for i in t {
                    buf.extend_from_slice(&i.to_le_bytes());
                }
            }
            out.write_all(&buf)?;
        }
    }
    Ok(())
}
