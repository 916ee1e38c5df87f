//! External-program adapters.
//!
//! Each call spawns the program, writes one JSON request line followed by an
//! observation container to its stdin, and reads one container back from
//! stdout. A nonzero exit status is an adapter error. The segmenter variant
//! expects the response's segmentation plane to use the benchmark segment ids.

use std::io::Write;
use std::path::PathBuf;
use std::process::{Command, Stdio};

use serde::Serialize;

use super::{split_by_labels, ImageEditor, SegmentationOutcome, Segmenter, SynthesisError};
use crate::geometry::SceneObservation;
use crate::io::{read_observation, write_observation};

#[derive(Serialize)]
struct Request<'a> {
    op: &'a str,
    instruction: &'a str,
}

#[derive(Debug, Clone)]
pub struct SubprocessAdapter {
    pub program: PathBuf,
    pub args: Vec<String>,
}

impl SubprocessAdapter {
    pub fn new(program: impl Into<PathBuf>, args: Vec<String>) -> Self {
        Self {
            program: program.into(),
            args,
        }
    }

    fn call(
        &self,
        op: &str,
        obs: &SceneObservation,
        instruction: &str,
    ) -> Result<SceneObservation, SynthesisError> {
        let err = |what: &str, e: &dyn std::fmt::Display| {
            SynthesisError::Adapter(format!("{}: {what}: {e}", self.program.display()))
        };
        let mut request =
            serde_json::to_vec(&Request { op, instruction }).map_err(|e| err("encode", &e))?;
        request.push(b'\n');
        write_observation(&mut request, obs).map_err(|e| err("encode", &e))?;

        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| err("spawn", &e))?;
        let mut stdin = child.stdin.take().expect("piped stdin");
        // Feed stdin from a thread so a child that writes before reading
        // everything cannot deadlock against us.
        let writer = std::thread::spawn(move || {
            let r = stdin.write_all(&request);
            drop(stdin);
            r
        });
        let output = child.wait_with_output().map_err(|e| err("wait", &e))?;
        let write_result = writer
            .join()
            .map_err(|_| SynthesisError::Adapter("stdin writer panicked".into()))?;
        if !output.status.success() {
            let stderr = String::from_utf8_lossy(&output.stderr);
            return Err(err(
                "exited with",
                &format!("{} {}", output.status, stderr.trim()),
            ));
        }
        write_result.map_err(|e| err("write", &e))?;
        read_observation(&output.stdout[..]).map_err(|e| err("response", &e))
    }
}

impl ImageEditor for SubprocessAdapter {
    fn imagine(
        &mut self,
        obs: &SceneObservation,
        instruction: &str,
    ) -> Result<SceneObservation, SynthesisError> {
        let out = self.call("imagine", obs, instruction)?;
        if out.camera != obs.camera {
            return Err(SynthesisError::Adapter(
                "response changed the camera".into(),
            ));
        }
        Ok(out)
    }
}

impl Segmenter for SubprocessAdapter {
    fn segment(
        &mut self,
        obs: &SceneObservation,
        instruction: &str,
    ) -> Result<SegmentationOutcome, SynthesisError> {
        split_by_labels(&self.call("segment", obs, instruction)?)
    }
}
