//! Output directory bookkeeping: every artifact is hashed into `manifest.json`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Serialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Timing {
    pub step: String,
    pub seconds: f64,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub preset: Option<String>,
    pub config: Option<PathBuf>,
    pub seed: u64,
    pub out: PathBuf,
    pub jobs: Option<usize>,
    pub artifacts: Vec<Artifact>,
    pub warnings: Vec<String>,
    /// Wall-clock seconds; the only field expected to differ between runs.
    pub timings: Vec<Timing>,
}

/// Artifacts are rendered into memory first and written in one go; the
/// directory is only created by the first write, so a run that fails during
/// validation leaves nothing behind.
pub struct OutputDir {
    root: PathBuf,
    manifest: Manifest,
    clock: Instant,
}

impl OutputDir {
    pub fn new(root: &Path, manifest: Manifest) -> Self {
        OutputDir { root: root.to_path_buf(), manifest, clock: Instant::now() }
    }

    /// Records the time since the previous call under `step`.
    pub fn lap(&mut self, step: &str) {
        let seconds = self.clock.elapsed().as_secs_f64();
        self.clock = Instant::now();
        self.manifest.timings.push(Timing { step: step.to_string(), seconds });
    }

    pub fn warn(&mut self, warnings: impl IntoIterator<Item = String>) {
        for w in warnings {
            log::warn!("{w}");
            self.manifest.warnings.push(w);
        }
    }

    pub fn write<F>(&mut self, name: &str, render: F) -> anyhow::Result<()>
    where
        F: FnOnce(&mut Vec<u8>) -> budget_market::Result<()>,
    {
        let mut buf = Vec::new();
        render(&mut buf).with_context(|| format!("rendering {name}"))?;
        self.put(name, &buf)
    }

    fn put(&mut self, name: &str, bytes: &[u8]) -> anyhow::Result<()> {
        std::fs::create_dir_all(&self.root).with_context(|| format!("creating {}", self.root.display()))?;
        let path = self.root.join(name);
        std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.manifest.artifacts.push(Artifact {
            path: name.to_string(),
            sha256: hex::encode(Sha256::digest(bytes)),
            bytes: bytes.len(),
        });
        Ok(())
    }

    /// Writes a file the generator produces itself (by path) and hashes it.
    pub fn adopt(&mut self, name: &str, produce: impl FnOnce(&Path) -> budget_market::Result<()>) -> anyhow::Result<()> {
        std::fs::create_dir_all(&self.root).with_context(|| format!("creating {}", self.root.display()))?;
        let path = self.root.join(name);
        produce(&path).with_context(|| format!("writing {}", path.display()))?;
        let bytes = std::fs::read(&path).with_context(|| format!("reading back {}", path.display()))?;
        self.manifest.artifacts.push(Artifact {
            path: name.to_string(),
            sha256: hex::encode(Sha256::digest(&bytes)),
            bytes: bytes.len(),
        });
        Ok(())
    }

    pub fn finish(self) -> anyhow::Result<Manifest> {
        std::fs::create_dir_all(&self.root).with_context(|| format!("creating {}", self.root.display()))?;
        let path = self.root.join(MANIFEST);
        let text = serde_json::to_string_pretty(&self.manifest)?;
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(self.manifest)
    }
}
