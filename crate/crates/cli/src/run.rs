//! Run directories and their manifests.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct InputRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config: Value,
    pub seed: Option<u64>,
    pub version: &'static str,
    pub started_utc: String,
    pub inputs: Vec<InputRecord>,
    pub outputs: Vec<String>,
    pub notes: Vec<String>,
    pub wall_clock_secs: f64,
}

/// `runs/<timestamp>-<command>/` plus the bookkeeping for its manifest.
pub struct RunDir {
    path: PathBuf,
    started: Instant,
    manifest: Manifest,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

impl RunDir {
    pub fn create(
        root: &Path,
        command: &str,
        argv: Vec<String>,
        seed: Option<u64>,
    ) -> Result<Self> {
        let now = chrono::Utc::now();
        let stamp = now.format("%Y%m%dT%H%M%S%.3fZ").to_string();
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        let mut n = 0;
        let path = loop {
            let name = if n == 0 {
                format!("{stamp}-{command}")
            } else {
                format!("{stamp}-{command}-{n}")
            };
            let p = root.join(name);
            match fs::create_dir(&p) {
                Ok(()) => break p,
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => n += 1,
                Err(e) => return Err(e).with_context(|| format!("creating {}", p.display())),
            }
        };
        Ok(Self {
            path,
            started: Instant::now(),
            manifest: Manifest {
                command: command.to_string(),
                argv,
                config: Value::Null,
                seed,
                version: env!("CARGO_PKG_VERSION"),
                started_utc: now.to_rfc3339(),
                inputs: Vec::new(),
                outputs: Vec::new(),
                notes: Vec::new(),
                wall_clock_secs: 0.0,
            },
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn set_config(&mut self, config: &impl Serialize) -> Result<()> {
        self.manifest.config = serde_json::to_value(config)?;
        Ok(())
    }

    pub fn note(&mut self, note: impl Into<String>) {
        self.manifest.notes.push(note.into());
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let sha256 = sha256_file(path)?;
        self.manifest.inputs.push(InputRecord {
            path: path.display().to_string(),
            sha256,
        });
        Ok(())
    }

    /// Records a file the run produced (inside or outside the run directory).
    pub fn output(&mut self, path: &Path) {
        self.manifest.outputs.push(path.display().to_string());
    }

    /// Path inside the run directory, recorded as an output.
    pub fn file(&mut self, name: &str) -> PathBuf {
        let p = self.path.join(name);
        self.output(&p);
        p
    }

    pub fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<PathBuf> {
        let p = self.file(name);
        write_atomic(&p, &serde_json::to_vec_pretty(value)?)?;
        Ok(p)
    }

    /// Writes `manifest.json`, checking every listed output exists.
    pub fn finish(mut self) -> Result<PathBuf> {
        for out in &self.manifest.outputs {
            anyhow::ensure!(Path::new(out).exists(), "run output {out} was not written");
        }
        self.manifest.wall_clock_secs = self.started.elapsed().as_secs_f64();
        let p = self.path.join("manifest.json");
        write_atomic(&p, &serde_json::to_vec_pretty(&self.manifest)?)?;
        Ok(self.path)
    }
}

/// Write to a sibling temp file, then rename over the target.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f =
            fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}
