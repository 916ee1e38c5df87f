//! PLY point clouds.
//!
//! Two encodings are written: ASCII (`double` positions, exact round trip) and
//! a compact `binary_little_endian` form with `float` positions, `uchar`
//! colors and `uint` labels. Only the attributes a cloud carries are written.
//! The reader accepts any vertex property layout made of scalar properties
//! and picks out `x y z`, `red green blue` and `label`.

use std::io::{BufRead, Read, Write};

use nalgebra::Vector3;

use super::{CountingReader, FormatError};
use crate::geometry::{Color, PointCloud};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyEncoding {
    Ascii,
    BinaryLittleEndian,
}

pub fn write_ply<W: Write>(
    mut w: W,
    cloud: &PointCloud,
    encoding: PlyEncoding,
) -> std::io::Result<()> {
    let pos_ty = match encoding {
        PlyEncoding::Ascii => "double",
        PlyEncoding::BinaryLittleEndian => "float",
    };
    let fmt = match encoding {
        PlyEncoding::Ascii => "ascii",
        PlyEncoding::BinaryLittleEndian => "binary_little_endian",
    };
    writeln!(w, "ply\nformat {fmt} 1.0")?;
    writeln!(w, "element vertex {}", cloud.len())?;
    for axis in ["x", "y", "z"] {
        writeln!(w, "property {pos_ty} {axis}")?;
    }
    if cloud.colors().is_some() {
        writeln!(
            w,
            "property uchar red\nproperty uchar green\nproperty uchar blue"
        )?;
    }
    if cloud.labels().is_some() {
        writeln!(w, "property uint label")?;
    }
    writeln!(w, "end_header")?;

    let colors = cloud.colors();
    let labels = cloud.labels();
    for (i, p) in cloud.points().iter().enumerate() {
        match encoding {
            PlyEncoding::Ascii => {
                write!(w, "{} {} {}", p.x, p.y, p.z)?;
                if let Some(c) = colors {
                    let [r, g, b] = color_to_u8(c[i]);
                    write!(w, " {r} {g} {b}")?;
                }
                if let Some(l) = labels {
                    write!(w, " {}", l[i])?;
                }
                writeln!(w)?;
            }
            PlyEncoding::BinaryLittleEndian => {
                for v in [p.x, p.y, p.z] {
                    w.write_all(&(v as f32).to_le_bytes())?;
                }
                if let Some(c) = colors {
                    w.write_all(&color_to_u8(c[i]))?;
                }
                if let Some(l) = labels {
                    w.write_all(&l[i].to_le_bytes())?;
                }
            }
        }
    }
    w.flush()
}

pub(crate) fn color_to_u8(c: Color) -> [u8; 3] {
    c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
}

pub(crate) fn color_from_u8(c: [u8; 3]) -> Color {
    c.map(|v| v as f32 / 255.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
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

struct Element {
    name: String,
    count: usize,
    props: Vec<(String, Scalar)>,
}

pub fn read_ply<R: Read>(reader: R) -> Result<PointCloud, FormatError> {
    let mut r = CountingReader::new(std::io::BufReader::new(reader));
    let mut line = String::new();
    let next_line = |r: &mut CountingReader<_>, line: &mut String| -> Result<(), FormatError> {
        line.clear();
        let start = r.offset();
        let n = r.read_line(line).map_err(|e| FormatError::io(start, e))?;
        if n == 0 {
            return Err(FormatError::Truncated { offset: start });
        }
        Ok(())
    };

    next_line(&mut r, &mut line)?;
    if line.trim_end() != "ply" {
        return Err(FormatError::malformed(0, "missing `ply` magic"));
    }
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let offset = r.offset();
        next_line(&mut r, &mut line)?;
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["format", "ascii", _] => encoding = Some(PlyEncoding::Ascii),
            ["format", "binary_little_endian", _] => {
                encoding = Some(PlyEncoding::BinaryLittleEndian)
            }
            ["format", other, ..] => {
                return Err(FormatError::malformed(
                    offset,
                    format!("unsupported PLY format `{other}`"),
                ))
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => {
                let count = count.parse().map_err(|_| {
                    FormatError::malformed(offset, format!("bad element count `{count}`"))
                })?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            ["property", "list", ..] => {
                return Err(FormatError::malformed(
                    offset,
                    "list properties are not supported",
                ));
            }
            ["property", ty, name] => {
                let ty = Scalar::parse(ty).ok_or_else(|| {
                    FormatError::malformed(offset, format!("unknown property type `{ty}`"))
                })?;
                let el = elements
                    .last_mut()
                    .ok_or_else(|| FormatError::malformed(offset, "property before any element"))?;
                el.props.push((name.to_string(), ty));
            }
            ["end_header"] => break,
            _ => {
                return Err(FormatError::malformed(
                    offset,
                    format!("unexpected header line `{}`", line.trim_end()),
                ))
            }
        }
    }
    let encoding =
        encoding.ok_or_else(|| FormatError::malformed(r.offset(), "header has no format line"))?;

    let mut cloud = None;
    for el in &elements {
        let rows = read_rows(&mut r, el, encoding)?;
        if el.name == "vertex" {
            cloud = Some(rows_to_cloud(el, rows, r.offset())?);
        }
        if cloud.is_some() && encoding == PlyEncoding::BinaryLittleEndian {
            break;
        }
    }
    cloud.ok_or_else(|| FormatError::malformed(r.offset(), "no vertex element"))
}

fn read_rows<R: BufRead>(
    r: &mut CountingReader<R>,
    el: &Element,
    encoding: PlyEncoding,
) -> Result<Vec<Vec<f64>>, FormatError> {
    let mut rows = Vec::with_capacity(el.count);
    match encoding {
        PlyEncoding::Ascii => {
            let mut line = String::new();
            for _ in 0..el.count {
                line.clear();
                let offset = r.offset();
                if r.read_line(&mut line)
                    .map_err(|e| FormatError::io(offset, e))?
                    == 0
                {
                    return Err(FormatError::Truncated { offset });
                }
                let vals: Result<Vec<f64>, _> =
                    line.split_whitespace().map(str::parse::<f64>).collect();
                let vals = vals.map_err(|_| FormatError::malformed(offset, "non-numeric value"))?;
                if vals.len() != el.props.len() {
                    return Err(FormatError::malformed(
                        offset,
                        format!("expected {} values, found {}", el.props.len(), vals.len()),
                    ));
                }
                rows.push(vals);
            }
        }
        PlyEncoding::BinaryLittleEndian => {
            let stride: usize = el.props.iter().map(|(_, t)| t.size()).sum();
            let mut buf = vec![0u8; stride];
            for _ in 0..el.count {
                let offset = r.offset();
                r.read_exact(&mut buf)
                    .map_err(|_| FormatError::Truncated { offset })?;
                let mut at = 0;
                let vals = el
                    .props
                    .iter()
                    .map(|(_, t)| {
                        let v = t.decode_le(&buf[at..at + t.size()]);
                        at += t.size();
                        v
                    })
                    .collect();
                rows.push(vals);
            }
        }
    }
    Ok(rows)
}

fn rows_to_cloud(
    el: &Element,
    rows: Vec<Vec<f64>>,
    offset: u64,
) -> Result<PointCloud, FormatError> {
    let find = |name: &str| el.props.iter().position(|(n, _)| n == name);
    let (Some(ix), Some(iy), Some(iz)) = (find("x"), find("y"), find("z")) else {
        return Err(FormatError::malformed(offset, "vertex element lacks x/y/z"));
    };
    let color_idx = match (find("red"), find("green"), find("blue")) {
        (Some(r), Some(g), Some(b)) => Some([r, g, b]),
        _ => None,
    };
    let label_idx = find("label");
    let points = rows
        .iter()
        .map(|v| Vector3::new(v[ix], v[iy], v[iz]))
        .collect();
    let mut cloud =
        PointCloud::new(points).map_err(|e| FormatError::malformed(offset, e.to_string()))?;
    if let Some(ci) = color_idx {
        let is_float = matches!(el.props[ci[0]].1, Scalar::F32 | Scalar::F64);
        let colors = rows
            .iter()
            .map(|v| {
                ci.map(|k| {
                    if is_float {
                        v[k] as f32
                    } else {
                        (v[k] / 255.0) as f32
                    }
                })
            })
            .collect();
        cloud = cloud
            .with_colors(colors)
            .map_err(|e| FormatError::malformed(offset, e.to_string()))?;
    }
    if let Some(li) = label_idx {
        let labels = rows.iter().map(|v| v[li] as u32).collect();
        cloud = cloud
            .with_labels(labels)
            .map_err(|e| FormatError::malformed(offset, e.to_string()))?;
    }
    Ok(cloud)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> PointCloud {
        PointCloud::new(vec![
            Vector3::new(0.1, -0.25, 1.5),
            Vector3::new(1.0 / 3.0, 2.0, -7.125),
        ])
        .unwrap()
        .with_colors(vec![[1.0, 0.0, 0.5], [0.2, 0.4, 0.6]])
        .unwrap()
        .with_labels(vec![3, 70000])
        .unwrap()
    }

    #[test]
    fn ascii_roundtrip_is_exact_for_positions() {
        let mut buf = Vec::new();
        write_ply(&mut buf, &sample(), PlyEncoding::Ascii).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("ply\nformat ascii 1.0\nelement vertex 2\n"));
        let back = read_ply(&buf[..]).unwrap();
        assert_eq!(back.points(), sample().points());
        assert_eq!(back.labels(), sample().labels());
        assert_eq!(back.colors().unwrap()[0], [1.0, 0.0, 128.0 / 255.0]);
    }

    #[test]
    fn binary_layout_is_compact() {
        let mut buf = Vec::new();
        write_ply(&mut buf, &sample(), PlyEncoding::BinaryLittleEndian).unwrap();
        let header_end = buf.windows(11).position(|w| w == b"end_header\n").unwrap() + 11;
        // 3×f32 + 3×u8 + u32 per vertex
        assert_eq!(buf.len() - header_end, 2 * 19);
        let back = read_ply(&buf[..]).unwrap();
        assert_eq!(back.points()[1].x, (1.0f64 / 3.0) as f32 as f64);
        assert_eq!(back.labels().unwrap()[1], 70000);
    }

    #[test]
    fn bare_points_roundtrip() {
        let c = PointCloud::new(vec![Vector3::new(1.0, 2.0, 3.0)]).unwrap();
        let mut buf = Vec::new();
        write_ply(&mut buf, &c, PlyEncoding::Ascii).unwrap();
        let back = read_ply(&buf[..]).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn truncated_binary_reports_offset() {
        let mut buf = Vec::new();
        write_ply(&mut buf, &sample(), PlyEncoding::BinaryLittleEndian).unwrap();
        buf.truncate(buf.len() - 5);
        match read_ply(&buf[..]) {
            Err(FormatError::Truncated { offset }) => {
                assert_eq!(offset as usize, buf.len() + 5 - 19)
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn garbage_is_rejected() {
        assert!(matches!(
            read_ply(&b"hello"[..]),
            Err(FormatError::Malformed { offset: 0, .. })
        ));
        let bad = b"ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nend_header\n1\n";
        assert!(read_ply(&bad[..]).is_err());
    }
}
