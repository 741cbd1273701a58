//! Output directory handling. Every file is written under a temporary name
//! and renamed into place once complete, so readers never see a partial
//! file; the manifest goes last and marks the run as finished.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{Context, Result};

pub const MANIFEST: &str = "manifest";

pub struct OutDir {
    root: PathBuf,
}

/// A file being written; it appears under its final name on [`Self::commit`].
pub struct PendingFile {
    tmp: PathBuf,
    dest: PathBuf,
    writer: BufWriter<File>,
    committed: bool,
}

impl PendingFile {
    pub fn writer(&mut self) -> &mut BufWriter<File> {
        &mut self.writer
    }

    pub fn commit(mut self) -> Result<()> {
        self.writer.flush()?;
        fs::rename(&self.tmp, &self.dest).with_context(|| format!("cannot move {} into place", self.dest.display()))?;
        self.committed = true;
        Ok(())
    }
}

impl Drop for PendingFile {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_file(&self.tmp);
        }
    }
}

impl OutDir {
    pub fn create(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root).with_context(|| format!("cannot create {}", root.display()))?;
        // A stale manifest would mark this run finished before it is.
        match fs::remove_file(root.join(MANIFEST)) {
            Err(e) if e.kind() != std::io::ErrorKind::NotFound => return Err(e.into()),
            _ => {}
        }
        Ok(Self { root })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    /// `name` may contain `/`; missing parent directories are created.
    pub fn begin(&self, name: &str) -> Result<PendingFile> {
        let dest = self.root.join(name);
        let parent = dest.parent().expect("output file has a parent");
        fs::create_dir_all(parent)?;
        let file_name = dest.file_name().expect("output file has a name").to_string_lossy();
        let tmp = parent.join(format!(".{file_name}.tmp"));
        let file = File::create(&tmp).with_context(|| format!("cannot create {}", tmp.display()))?;
        Ok(PendingFile {
            tmp,
            dest,
            writer: BufWriter::new(file),
            committed: false,
        })
    }

    pub fn write(&self, name: &str, bytes: &[u8]) -> Result<()> {
        let mut f = self.begin(name)?;
        f.writer().write_all(bytes)?;
        f.commit()
    }

    pub fn write_manifest(&self, manifest: &Manifest) -> Result<()> {
        self.write(MANIFEST, manifest.to_string().as_bytes())
    }
}

/// `key = value` lines describing a finished run.
#[derive(Debug, Default)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        let mut m = Self::default();
        m.set("command", command);
        m
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn set_path(&mut self, key: &str, path: &Path) {
        self.set(key, path.display());
    }

    pub fn set_ms(&mut self, stage: &str, d: Duration) {
        self.set(&format!("time.{stage}_ms"), format!("{:.3}", d.as_secs_f64() * 1e3));
    }
}

impl std::fmt::Display for Manifest {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}
