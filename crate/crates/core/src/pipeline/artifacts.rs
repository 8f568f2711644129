use serde::{Deserialize, Serialize};
use serde_json::json;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::error::{CodecError, Result};
use crate::zoo::format::Envelope;

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRef {
    /// Relative to the run directory.
    pub path: String,
    pub crc32: String,
}

/// Provenance of one command invocation. The copy embedded in each binary
/// artifact omits output checksums and wall time so reruns stay
/// byte-identical; both live in the sidecar written next to the outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub toolkit_version: String,
    pub inputs: Vec<ArtifactRef>,
    pub outputs: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestSidecar {
    #[serde(flatten)]
    pub manifest: RunManifest,
    pub output_checksums: Vec<ArtifactRef>,
    pub wall_time_ms: u128,
}

/// Exclusive writer claim on an output path, released on drop.
pub struct Lock {
    path: PathBuf,
}

impl Lock {
    pub fn acquire(target: &Path) -> Result<Lock> {
        let mut name = target.as_os_str().to_owned();
        name.push(".lock");
        let path = PathBuf::from(name);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(Lock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(CodecError::Locked(target.display().to_string()))
            }
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for Lock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let _lock = Lock::acquire(path)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn crc_hex(bytes: &[u8]) -> String {
    format!("{:08x}", crc32fast::hash(bytes))
}

/// One command's view of the run directory: reads are checksummed and
/// recorded as inputs, writes are locked, atomic and recorded as outputs.
pub struct Session {
    dir: PathBuf,
    command: String,
    config_hash: String,
    seed: u64,
    inputs: Vec<ArtifactRef>,
    outputs: Vec<ArtifactRef>,
    started: Instant,
}

impl Session {
    pub fn new(dir: &Path, command: &str, config_hash: &str, seed: u64) -> Result<Session> {
        fs::create_dir_all(dir)?;
        Ok(Session {
            dir: dir.to_path_buf(),
            command: command.to_string(),
            config_hash: config_hash.to_string(),
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: Instant::now(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn relative(&self, path: &Path) -> String {
        path.strip_prefix(&self.dir).unwrap_or(path).display().to_string()
    }

    fn manifest(&self, outputs: Vec<String>) -> RunManifest {
        RunManifest {
            command: self.command.clone(),
            config_hash: self.config_hash.clone(),
            seed: self.seed,
            toolkit_version: TOOLKIT_VERSION.to_string(),
            inputs: self.inputs.clone(),
            outputs,
        }
    }

    /// Reads and verifies an envelope, recording it as an input.
    pub fn read(&mut self, name: &str) -> Result<Envelope> {
        let path = self.path(name);
        let bytes = fs::read(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => CodecError::MissingArtifact(path.display().to_string()),
            _ => CodecError::Io(e),
        })?;
        let env = Envelope::from_bytes(&bytes)?;
        self.inputs.push(ArtifactRef {
            path: self.relative(&path),
            crc32: crc_hex(&bytes),
        });
        Ok(env)
    }

    pub fn exists(&self, name: &str) -> bool {
        self.path(name).exists()
    }

    /// Writes an envelope with this command's manifest embedded in its header.
    pub fn write(&mut self, name: &str, mut env: Envelope) -> Result<PathBuf> {
        let path = self.path(name);
        let manifest = self.manifest(vec![name.to_string()]);
        env.header
            .as_object_mut()
            .ok_or_else(|| CodecError::Format("header must be a JSON object".into()))?
            .insert("manifest".into(), json!(manifest));
        let bytes = env.to_bytes()?;
        self.commit(&path, &bytes)?;
        Ok(path)
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<PathBuf> {
        let path = self.path(name);
        self.commit(&path, text.as_bytes())?;
        Ok(path)
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.path(name);
        self.commit(&path, bytes)?;
        Ok(path)
    }

    fn commit(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        write_atomic(path, bytes)?;
        self.outputs.push(ArtifactRef {
            path: self.relative(path),
            crc32: crc_hex(bytes),
        });
        Ok(())
    }

    /// Writes `<command>.manifest.json` and returns the output paths.
    pub fn finish(self) -> Result<Vec<PathBuf>> {
        let names: Vec<String> = self.outputs.iter().map(|o| o.path.clone()).collect();
        let sidecar = ManifestSidecar {
            manifest: self.manifest(names.clone()),
            output_checksums: self.outputs.clone(),
            wall_time_ms: self.started.elapsed().as_millis(),
        };
        let path = self.path(&format!("{}.manifest.json", self.command));
        write_atomic(&path, &serde_json::to_vec_pretty(&sidecar)?)?;
        Ok(names.iter().map(|n| self.dir.join(n)).collect())
    }
}

/// CSV with a one-line `# schema:` header.
pub fn csv(schema: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut s = format!("# schema: {}\n", schema.join(","));
    for r in rows {
        s.push_str(&r.join(","));
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn session_records_inputs_and_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = Session::new(dir.path(), "first", "abc", 3).unwrap();
        let mut env = Envelope::new("thing");
        env.push("x", Tensor::from_vec(vec![1.0, 2.0]));
        s.write("a.cdec", env).unwrap();
        s.write_text("t.csv", &csv(&["a", "b"], vec![vec!["1".into(), "2".into()]])).unwrap();
        let outs = s.finish().unwrap();
        assert_eq!(outs.len(), 2);

        let mut s = Session::new(dir.path(), "second", "abc", 3).unwrap();
        let env = s.read("a.cdec").unwrap();
        assert_eq!(env.header["manifest"]["command"], "first");
        assert_eq!(env.header["manifest"]["outputs"][0], "a.cdec");
        s.write_text("u.csv", "x\n").unwrap();
        s.finish().unwrap();
        let side: ManifestSidecar =
            serde_json::from_slice(&fs::read(dir.path().join("second.manifest.json")).unwrap()).unwrap();
        assert_eq!(side.manifest.inputs[0].path, "a.cdec");
        assert_eq!(side.output_checksums[0].path, "u.csv");
        assert_eq!(fs::read_to_string(dir.path().join("t.csv")).unwrap(), "# schema: a,b\n1,2\n");
    }

    #[test]
    fn missing_and_locked() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = Session::new(dir.path(), "c", "h", 0).unwrap();
        assert_eq!(s.read("nope.cdec").unwrap_err().category(), "missing-artifact");
        let target = dir.path().join("busy.csv");
        let held = Lock::acquire(&target).unwrap();
        assert_eq!(s.write_text("busy.csv", "x").unwrap_err().category(), "locked");
        drop(held);
        s.write_text("busy.csv", "x").unwrap();
        assert!(!dir.path().join("busy.csv.lock").exists());
    }

    #[test]
    fn corrupted_input_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = Session::new(dir.path(), "c", "h", 0).unwrap();
        let mut env = Envelope::new("thing");
        env.push("x", Tensor::from_vec(vec![1.0, 2.0, 3.0]));
        let p = s.write("a.cdec", env).unwrap();
        let mut bytes = fs::read(&p).unwrap();
        let n = bytes.len();
        bytes[n - 10] ^= 1;
        fs::write(&p, bytes).unwrap();
        assert_eq!(s.read("a.cdec").unwrap_err().category(), "format");
    }
}
