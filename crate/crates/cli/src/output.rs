use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use qnode_core::TimeTagStream;

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    JsonLines,
}

/// Output directory. Every file is read back after writing.
pub struct OutDir {
    dir: PathBuf,
    format: Format,
}

impl OutDir {
    pub fn create(dir: &Path, format: Format) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            format,
        })
    }

    pub fn write(&self, name: &str, text: &str) -> io::Result<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, text)?;
        if fs::read(&path)? != text.as_bytes() {
            return Err(io::Error::other(format!(
                "{} did not read back intact",
                path.display()
            )));
        }
        Ok(path)
    }

    /// Writes `stem.csv` or `stem.jsonl` according to the format.
    pub fn write_table(&self, stem: &str, csv: &str, jsonl: &str) -> io::Result<PathBuf> {
        match self.format {
            Format::Csv => self.write(&format!("{stem}.csv"), csv),
            Format::JsonLines => self.write(&format!("{stem}.jsonl"), jsonl),
        }
    }

    pub fn write_stream(&self, stem: &str, s: &TimeTagStream) -> io::Result<PathBuf> {
        match self.format {
            Format::Csv => self.write(&format!("{stem}.txt"), &s.to_text()),
            Format::JsonLines => self.write(&format!("{stem}.jsonl"), &s.to_json_lines()),
        }
    }
}
