use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use i2a_core::geometry::PointCloud;
use i2a_core::io::read_ply;
use i2a_core::registration::{centroid_alignment, icp_register, kabsch_register};
use serde::Serialize;

use super::{matrix_rows, print_json, Context};
use crate::error::{CliError, CliResult};
use crate::run::InputFile;

#[derive(Serialize)]
struct Output {
    method: &'static str,
    transform: [[f64; 4]; 4],
    rmsd: f64,
    num_points: usize,
}

pub fn read_cloud(path: &Path) -> CliResult<PointCloud> {
    let f = File::open(path).map_err(|e| CliError::io(path, e))?;
    read_ply(BufReader::new(f)).map_err(|e| CliError::UnknownFormat {
        path: path.to_path_buf(),
        offset: e.offset(),
        reason: e.to_string(),
    })
}

/// Prints the rigid transform taking `src` onto `dst`. With an output
/// directory the result is also written to `transform.json`.
pub fn register(ctx: &Context, src: &Path, dst: &Path, icp: bool) -> CliResult<()> {
    let a = read_cloud(src)?;
    let b = read_cloud(dst)?;
    let (method, result) = if icp {
        ("icp", icp_register(&a, &b, &centroid_alignment(&a, &b)))
    } else {
        ("kabsch", kabsch_register(&a, &b))
    };
    let result = result.map_err(anyhow::Error::from)?;
    let out = Output {
        method,
        transform: matrix_rows(&result.transform),
        rmsd: result.rmsd,
        num_points: result.num_points,
    };
    print_json(&out)?;
    if ctx.config.out_dir.is_some() {
        let dir = ctx.output()?;
        let mut json = serde_json::to_vec_pretty(&out).map_err(anyhow::Error::from)?;
        json.push(b'\n');
        dir.write("transform.json", &json)?;
        let mut meta = ctx.metadata("register")?;
        meta.inputs.push(InputFile::hash(src)?);
        meta.inputs.push(InputFile::hash(dst)?);
        dir.write_metadata(&meta)?;
    }
    Ok(())
}
