use std::path::{Path, PathBuf};

use chromalog::clicklog::DatasetSplit;
use chromalog::{Error, Result};

/// Resolves relative paths against the data directory, when one is set.
pub struct Ctx {
    data_dir: Option<PathBuf>,
}

impl Ctx {
    pub fn new(data_dir: Option<PathBuf>) -> Self {
        Ctx { data_dir }
    }

    pub fn path(&self, p: &Path) -> PathBuf {
        match &self.data_dir {
            Some(dir) if p.is_relative() => dir.join(p),
            _ => p.to_path_buf(),
        }
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn read_split(path: &Path) -> Result<DatasetSplit> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path.display().to_string(), e.line(), e.to_string()))
}

pub fn write_split(path: &Path, split: &DatasetSplit) -> Result<()> {
    let text = serde_json::to_string_pretty(split).expect("split serialises");
    write_text(path, &(text + "\n"))
}

/// Comma-separated layer widths, such as `1024,512`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Widths(pub Vec<usize>);

impl std::str::FromStr for Widths {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s.trim().is_empty() {
            return Ok(Widths(Vec::new()));
        }
        s.split(',')
            .map(|w| w.trim().parse::<usize>().map_err(|e| format!("bad width `{w}`: {e}")))
            .collect::<std::result::Result<_, _>>()
            .map(Widths)
    }
}

/// Parses `NAME=PATH`.
pub fn parse_named(s: &str) -> std::result::Result<(String, PathBuf), String> {
    let (name, path) = s.split_once('=').ok_or_else(|| format!("expected NAME=PATH, got `{s}`"))?;
    Ok((name.to_string(), PathBuf::from(path)))
}
