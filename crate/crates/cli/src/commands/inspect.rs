use std::path::Path;

use i2a_core::geometry::{unproject, PointCloud, Pose, SceneObservation};
use i2a_core::io::{read_observation, read_ply, write_ply, PlyEncoding, CONTAINER_MAGIC};
use i2a_core::policy::{CheckpointManifest, CHECKPOINT_FORMAT};
use serde_json::Value;

use crate::config::ExperimentConfig;
use crate::dataset::{json_error_offset, parse_json, DatasetManifest, DATASET_FORMAT};
use crate::error::{CliError, CliResult};
use crate::run::{read_file, write_atomic};

fn unknown(path: &Path, offset: u64, reason: impl Into<String>) -> CliError {
    CliError::UnknownFormat {
        path: path.to_path_buf(),
        offset,
        reason: reason.into(),
    }
}

fn describe_cloud(cloud: &PointCloud) {
    println!("point cloud: {} points", cloud.len());
    if let Some((lo, hi)) = cloud.bounds() {
        println!("  min      [{:.6}, {:.6}, {:.6}]", lo.x, lo.y, lo.z);
        println!("  max      [{:.6}, {:.6}, {:.6}]", hi.x, hi.y, hi.z);
    }
    if let Some(c) = cloud.centroid() {
        println!("  centroid [{:.6}, {:.6}, {:.6}]", c.x, c.y, c.z);
    }
    println!("  colors: {}", cloud.colors().is_some());
    if let Some(labels) = cloud.labels() {
        let mut counts = std::collections::BTreeMap::new();
        for l in labels {
            *counts.entry(*l).or_insert(0usize) += 1;
        }
        println!("  labels: {counts:?}");
    }
}

fn describe_observation(obs: &SceneObservation) {
    let cam = &obs.camera;
    println!("observation: {}x{}", cam.width, cam.height);
    println!(
        "  intrinsics fx {} fy {} cx {} cy {}",
        cam.fx, cam.fy, cam.cx, cam.cy
    );
    println!("  camera pose:");
    print_matrix(&cam.extrinsic, "    ");
    let valid = obs.depth.iter().filter(|d| **d > 0.0).count();
    println!("  valid depth pixels: {valid}");
    let mut counts = std::collections::BTreeMap::new();
    for s in &obs.segmentation {
        *counts.entry(*s).or_insert(0usize) += 1;
    }
    println!("  segments: {counts:?}");
}

fn print_matrix(p: &Pose, indent: &str) {
    for row in p.to_rows() {
        println!(
            "{indent}[{:>12.8} {:>12.8} {:>12.8} {:>12.8}]",
            row[0], row[1], row[2], row[3]
        );
    }
}

/// Replaces every serialized pose with its 4×4 matrix rows.
fn poses_as_matrices(v: &mut Value) {
    let is_pose = v.as_object().is_some_and(|m| {
        m.len() == 2 && m.contains_key("rotation") && m.contains_key("translation")
    });
    if is_pose {
        if let Ok(p) = serde_json::from_value::<Pose>(v.clone()) {
            *v = serde_json::to_value(p.to_rows()).expect("serializable");
            return;
        }
    }
    match v {
        Value::Object(m) => m.values_mut().for_each(poses_as_matrices),
        Value::Array(a) => a.iter_mut().for_each(poses_as_matrices),
        _ => {}
    }
}

/// Pretty JSON with 4×4 matrices printed one row per line.
fn render_json(v: &Value) -> String {
    let text = serde_json::to_string_pretty(v).expect("serializable");
    let mut out = String::new();
    let lines: Vec<&str> = text.lines().collect();
    let mut i = 0;
    while i < lines.len() {
        // A matrix is `[` followed by four rows of four numbers.
        if lines[i].trim_end().ends_with('[') {
            if let Some((rows, used)) = collapse_matrix(&lines[i..]) {
                out.push_str(lines[i]);
                out.push('\n');
                let indent: String = lines[i + 1].chars().take_while(|c| *c == ' ').collect();
                for (k, r) in rows.iter().enumerate() {
                    let comma = if k + 1 < rows.len() { "," } else { "" };
                    out.push_str(&format!("{indent}[{}]{comma}\n", r.join(", ")));
                }
                i += used - 1;
                out.push_str(lines[i]);
                out.push('\n');
                i += 1;
                continue;
            }
        }
        out.push_str(lines[i]);
        out.push('\n');
        i += 1;
    }
    out
}

fn collapse_matrix(lines: &[&str]) -> Option<(Vec<Vec<String>>, usize)> {
    let mut rows = Vec::new();
    let mut i = 1;
    for _ in 0..4 {
        if lines.get(i)?.trim() != "[" {
            return None;
        }
        let mut row = Vec::new();
        for k in 0..4 {
            let t = lines.get(i + 1 + k)?.trim().trim_end_matches(',');
            t.parse::<f64>().ok()?;
            row.push(t.to_string());
        }
        if !lines.get(i + 5)?.trim().starts_with(']') {
            return None;
        }
        rows.push(row);
        i += 6;
    }
    lines
        .get(i)?
        .trim()
        .starts_with(']')
        .then_some((rows, i + 1))
}

fn export(cloud: &PointCloud, ply: Option<&Path>) -> CliResult<()> {
    if let Some(p) = ply {
        let mut bytes = Vec::new();
        write_ply(&mut bytes, cloud, PlyEncoding::Ascii).map_err(anyhow::Error::from)?;
        write_atomic(p, &bytes)?;
        println!("wrote {}", p.display());
    }
    Ok(())
}

/// Dumps any artifact this tool writes: PLY clouds, observation containers,
/// JSON manifests and records, and TOML configs.
pub fn inspect(path: &Path, ply: Option<&Path>) -> CliResult<()> {
    let bytes = read_file(path)?;
    if bytes.starts_with(b"ply") {
        let cloud = read_ply(&bytes[..]).map_err(|e| unknown(path, e.offset(), e.to_string()))?;
        describe_cloud(&cloud);
        return export(&cloud, ply);
    }
    let first_line = bytes.split(|b| *b == b'\n').next().unwrap_or(&[]);
    let magic = format!("\"format\":\"{CONTAINER_MAGIC}\"");
    if first_line.starts_with(b"{")
        && first_line
            .windows(magic.len())
            .any(|w| w == magic.as_bytes())
    {
        let obs =
            read_observation(&bytes[..]).map_err(|e| unknown(path, e.offset(), e.to_string()))?;
        describe_observation(&obs);
        return export(&unproject(&obs), ply);
    }
    if path.extension().is_some_and(|e| e == "toml") {
        let text = std::str::from_utf8(&bytes)
            .map_err(|e| unknown(path, e.valid_up_to() as u64, "not UTF-8 text"))?;
        let cfg = ExperimentConfig::parse(text, path)?;
        println!(
            "{}",
            render_json(&serde_json::to_value(&cfg).expect("serializable"))
        );
        println!("config sha256: {}", cfg.hash());
        return Ok(());
    }
    if bytes.first().is_some_and(|b| *b == b'{' || *b == b'[')
        || bytes.iter().all(u8::is_ascii_whitespace)
    {
        let mut value: Value = serde_json::from_slice(&bytes)
            .map_err(|e| unknown(path, json_error_offset(&bytes, &e), e.to_string()))?;
        match value.get("format").and_then(Value::as_str) {
            Some(CHECKPOINT_FORMAT) => {
                let m: CheckpointManifest = parse_json(path, &bytes)?;
                println!(
                    "checkpoint: epoch {} / {}, {} tensors, {} optimizer steps",
                    m.epoch,
                    m.train.epochs,
                    m.tensors.len(),
                    m.step
                );
            }
            Some(DATASET_FORMAT) => {
                let m: DatasetManifest = parse_json(path, &bytes)?;
                println!(
                    "dataset: {} demonstrations, {} files, variant {}",
                    m.entries.len(),
                    m.files.len(),
                    m.variant
                );
            }
            _ => {}
        }
        poses_as_matrices(&mut value);
        print!("{}", render_json(&value));
        return Ok(());
    }
    Err(unknown(path, 0, "unrecognized leading bytes"))
}
