//! Observation container: one JSON header line followed by three raw planes,
//! row-major and little-endian: depth as f32, RGB as u8 triples, segmentation
//! as u32.

use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use super::{color_from_u8, color_to_u8, CountingReader, FormatError};
use crate::geometry::{CameraModel, SceneObservation};

pub const CONTAINER_MAGIC: &str = "i2a-observation";
pub const CONTAINER_VERSION: u32 = 1;
const MAX_HEADER: u64 = 64 * 1024;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    camera: CameraModel,
    planes: Vec<String>,
}

const PLANES: [&str; 3] = ["depth_f32", "rgb_u8", "segmentation_u32"];

pub fn write_observation<W: Write>(mut w: W, obs: &SceneObservation) -> std::io::Result<()> {
    let header = Header {
        format: CONTAINER_MAGIC.into(),
        version: CONTAINER_VERSION,
        camera: obs.camera,
        planes: PLANES.iter().map(|s| s.to_string()).collect(),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    let n = obs.camera.num_pixels();
    let mut buf = Vec::with_capacity(n * 11);
    for d in &obs.depth {
        buf.extend_from_slice(&(*d as f32).to_le_bytes());
    }
    for c in &obs.rgb {
        buf.extend_from_slice(&color_to_u8(*c));
    }
    for s in &obs.segmentation {
        buf.extend_from_slice(&s.to_le_bytes());
    }
    w.write_all(&buf)?;
    w.flush()
}

/// Reads one container. The reader is buffered internally, so bytes after the
/// container may be consumed.
pub fn read_observation<R: Read>(reader: R) -> Result<SceneObservation, FormatError> {
    let mut r = CountingReader::new(BufReader::new(reader));
    read_observation_from(&mut r)
}

pub(crate) fn read_observation_from<R: BufRead>(
    r: &mut CountingReader<R>,
) -> Result<SceneObservation, FormatError> {
    let start = r.offset();
    let mut line = Vec::new();
    let n = (&mut *r)
        .take(MAX_HEADER)
        .read_until(b'\n', &mut line)
        .map_err(|e| FormatError::io(start, e))?;
    if n == 0 || line.last() != Some(&b'\n') {
        if n as u64 >= MAX_HEADER {
            return Err(FormatError::malformed(start, "header line too long"));
        }
        return Err(FormatError::Truncated { offset: r.offset() });
    }
    let header: Header = serde_json::from_slice(&line)
        .map_err(|e| FormatError::malformed(start, format!("bad header: {e}")))?;
    if header.format != CONTAINER_MAGIC {
        return Err(FormatError::malformed(
            start,
            format!("unknown format `{}`", header.format),
        ));
    }
    if header.version != CONTAINER_VERSION {
        return Err(FormatError::malformed(
            start,
            format!("unsupported version {}", header.version),
        ));
    }
    if header.planes != PLANES {
        return Err(FormatError::malformed(start, "unexpected plane layout"));
    }
    header
        .camera
        .validate()
        .map_err(|e| FormatError::malformed(start, e.to_string()))?;
    let n = header.camera.num_pixels();

    let mut read_plane = |len: usize| -> Result<Vec<u8>, FormatError> {
        let mut buf = vec![0u8; len];
        let mut got = 0;
        while got < len {
            let k = r
                .read(&mut buf[got..])
                .map_err(|e| FormatError::io(r.offset(), e))?;
            if k == 0 {
                return Err(FormatError::Truncated { offset: r.offset() });
            }
            got += k;
        }
        Ok(buf)
    };
    let depth_bytes = read_plane(n * 4)?;
    let rgb_bytes = read_plane(n * 3)?;
    let seg_bytes = read_plane(n * 4)?;

    let depth: Vec<f64> = depth_bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    let rgb = rgb_bytes
        .chunks_exact(3)
        .map(|b| color_from_u8([b[0], b[1], b[2]]))
        .collect();
    let segmentation = seg_bytes
        .chunks_exact(4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    SceneObservation::new(rgb, depth, segmentation, header.camera)
        .map_err(|e| FormatError::malformed(start, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Pose;

    fn sample() -> SceneObservation {
        let cam = CameraModel::new(
            50.0,
            60.0,
            2.0,
            1.5,
            4,
            3,
            Pose::from_translation(nalgebra::Vector3::new(0.0, 0.0, 1.0)),
        )
        .unwrap();
        let n = cam.num_pixels();
        let depth = (0..n)
            .map(|i| if i % 3 == 0 { 0.0 } else { 0.25 * i as f64 })
            .collect();
        let rgb = (0..n).map(|i| [i as f32 / 255.0, 1.0, 0.0]).collect();
        let seg = (0..n as u32).map(|i| i * 1000).collect();
        SceneObservation::new(rgb, depth, seg, cam).unwrap()
    }

    #[test]
    fn roundtrip() {
        let obs = sample();
        let mut buf = Vec::new();
        write_observation(&mut buf, &obs).unwrap();
        let back = read_observation(&buf[..]).unwrap();
        assert_eq!(back, obs);
    }

    #[test]
    fn truncation_reports_offset_past_header() {
        let mut buf = Vec::new();
        write_observation(&mut buf, &sample()).unwrap();
        let header_len = buf.iter().position(|b| *b == b'\n').unwrap() + 1;
        buf.truncate(header_len + 10);
        let err = read_observation(&buf[..]).unwrap_err();
        assert!(matches!(err, FormatError::Truncated { .. }));
        assert_eq!(err.offset() as usize, header_len + 10);
    }

    #[test]
    fn rejects_foreign_header() {
        let err = read_observation(&b"{\"format\":\"png\"}\n"[..]).unwrap_err();
        assert!(matches!(err, FormatError::Malformed { offset: 0, .. }));
        assert!(read_observation(&b"\x89PNG"[..]).is_err());
    }

    #[test]
    fn sequential_reads_share_a_stream() {
        let mut buf = Vec::new();
        write_observation(&mut buf, &sample()).unwrap();
        write_observation(&mut buf, &sample()).unwrap();
        let mut r = CountingReader::new(&buf[..]);
        read_observation_from(&mut r).unwrap();
        read_observation_from(&mut r).unwrap();
        assert_eq!(r.offset() as usize, buf.len());
    }
}
