use std::fmt::Write as _;
use std::path::Path;

use super::tensor::Matrix;
use super::Parameters;
use crate::error::{Error, Result};

const HEADER: &str = "chromalog-checkpoint v1";

/// Text container for a model: kind tag, JSON configuration and every
/// parameter tensor with its shape. Floats are written in shortest
/// round-trip form so save/load is bit-exact.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub config: serde_json::Value,
    pub tensors: Vec<Matrix>,
}

impl Checkpoint {
    pub fn capture<M: Parameters>(kind: &str, config: serde_json::Value, model: &M) -> Self {
        Checkpoint {
            kind: kind.to_string(),
            config,
            tensors: model.params().into_iter().cloned().collect(),
        }
    }

    /// Copies stored tensors into `model`, checking count and shapes.
    pub fn restore_into<M: Parameters>(&self, model: &mut M) -> Result<()> {
        let mut targets = model.params_mut();
        if targets.len() != self.tensors.len() {
            return Err(Error::LengthMismatch {
                expected: targets.len(),
                actual: self.tensors.len(),
            });
        }
        for (dst, src) in targets.iter_mut().zip(&self.tensors) {
            if dst.shape() != src.shape() {
                return Err(Error::InvalidConfig(format!(
                    "tensor shape {:?} does not match model shape {:?}",
                    src.shape(),
                    dst.shape()
                )));
            }
            **dst = src.clone();
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{HEADER}");
        let _ = writeln!(out, "kind {}", self.kind);
        let _ = writeln!(out, "config {}", self.config);
        let _ = writeln!(out, "tensors {}", self.tensors.len());
        for t in &self.tensors {
            let _ = write!(out, "{} {}", t.rows(), t.cols());
            for v in t.as_slice() {
                let _ = write!(out, " {v:?}");
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| Error::format(origin, 0, format!("unexpected end of file, expected {what}")))
        };
        let (n, header) = next("header")?;
        if header != HEADER {
            return Err(Error::format(origin, n + 1, format!("expected `{HEADER}`")));
        }
        let field = |(n, line): (usize, &str), key: &str| -> Result<String> {
            line.strip_prefix(key)
                .and_then(|rest| rest.strip_prefix(' '))
                .map(str::to_string)
                .ok_or_else(|| Error::format(origin, n + 1, format!("expected `{key}` line")))
        };
        let kind = field(next("kind")?, "kind")?;
        let config_line = next("config")?;
        let config = serde_json::from_str(&field(config_line, "config")?)
            .map_err(|e| Error::format(origin, config_line.0 + 1, format!("bad config: {e}")))?;
        let count_line = next("tensor count")?;
        let count: usize = field(count_line, "tensors")?
            .parse()
            .map_err(|_| Error::format(origin, count_line.0 + 1, "bad tensor count"))?;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let (n, line) = next("tensor")?;
            let bad = |msg: String| Error::format(origin, n + 1, msg);
            let mut parts = line.split(' ');
            let mut dim = || -> Result<usize> {
                parts
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| bad("bad tensor shape".into()))
            };
            let (rows, cols) = (dim()?, dim()?);
            let data = parts
                .map(|s| s.parse::<f64>().map_err(|e| bad(format!("bad value `{s}`: {e}"))))
                .collect::<Result<Vec<f64>>>()?;
            if data.len() != rows * cols {
                return Err(bad(format!("expected {} values, found {}", rows * cols, data.len())));
            }
            tensors.push(Matrix::from_vec(rows, cols, data)?);
        }
        Ok(Checkpoint { kind, config, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Loads a checkpoint and verifies its kind tag.
    pub fn load_kind(path: &Path, kind: &str) -> Result<Self> {
        let ck = Self::load(path)?;
        if ck.kind != kind {
            return Err(Error::format(
                path.display().to_string(),
                2,
                format!("checkpoint holds a `{}`, expected `{kind}`", ck.kind),
            ));
        }
        Ok(ck)
    }
}
