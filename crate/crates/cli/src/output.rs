//! Output directory: CSV files stamped with the config hash, JSON sidecars.

use serde::Serialize;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

pub struct Output {
    pub dir: PathBuf,
    pub hash: String,
    pub files: Vec<String>,
}

impl Output {
    pub fn create(dir: &Path, hash: &str) -> std::io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Output { dir: dir.to_path_buf(), hash: hash.to_string(), files: Vec::new() })
    }

    fn open(&mut self, name: &str) -> std::io::Result<BufWriter<File>> {
        self.files.push(name.to_string());
        Ok(BufWriter::new(File::create(self.dir.join(name))?))
    }

    /// CSV with a `# config_sha256=…` first line.
    pub fn csv<I>(&mut self, name: &str, header: &[&str], rows: I) -> crate::Result<()>
    where
        I: IntoIterator<Item = Vec<String>>,
    {
        let mut f = self.open(name)?;
        writeln!(f, "# config_sha256={}", self.hash)?;
        let mut w = csv::Writer::from_writer(f);
        w.write_record(header)?;
        for r in rows {
            w.write_record(&r)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Hash-stamped text file filled by `fill` (for library CSV writers).
    pub fn stamped(&mut self, name: &str, fill: impl FnOnce(&mut dyn Write) -> kinlab::Result<()>) -> crate::Result<()> {
        let mut f = self.open(name)?;
        writeln!(f, "# config_sha256={}", self.hash)?;
        fill(&mut f)?;
        f.flush()?;
        Ok(())
    }

    /// Raw file (snapshots, binary fields, JSONL).
    pub fn raw(&mut self, name: &str, fill: impl FnOnce(&mut dyn Write) -> kinlab::Result<()>) -> crate::Result<()> {
        let mut f = self.open(name)?;
        fill(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> crate::Result<()> {
        let mut f = self.open(name)?;
        serde_json::to_writer_pretty(&mut f, value)?;
        writeln!(f)?;
        f.flush()?;
        Ok(())
    }
}

/// Shortest round-trip decimal form.
pub fn num(x: f64) -> String {
    format!("{x}")
}
