use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const DEFAULT_EMBEDDING_DIM: usize = 300;

/// Frozen token → vector lookup.
pub trait EmbeddingProvider {
    fn dim(&self) -> usize;
    fn lookup(&self, token: &str) -> Vec<f64>;
}

/// Deterministic unit-norm vector per token, seeded from a SHA-256 of the token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HashEmbedding {
    dim: usize,
    seed: u64,
}

impl HashEmbedding {
    pub fn new(dim: usize, seed: u64) -> Self {
        HashEmbedding { dim, seed }
    }
}

impl EmbeddingProvider for HashEmbedding {
    fn dim(&self) -> usize {
        self.dim
    }

    fn lookup(&self, token: &str) -> Vec<f64> {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(token.as_bytes());
        let digest: [u8; 32] = hasher.finalize().into();
        let mut rng = ChaCha8Rng::from_seed(digest);
        let mut v: Vec<f64> = (0..self.dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

/// Vectors read from a `token v_1 ... v_D` text file, with hashed vectors for
/// tokens not in the file.
#[derive(Debug, Clone)]
pub struct TableEmbedding {
    table: HashMap<String, Vec<f64>>,
    fallback: HashEmbedding,
}

impl TableEmbedding {
    pub fn parse(text: &str, origin: &str, seed: u64) -> Result<Self> {
        let mut table = HashMap::new();
        let mut dim = None;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let token = parts.next().unwrap_or_default().to_string();
            let values = parts
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|e| Error::format(origin, i + 1, format!("bad embedding value: {e}")))?;
            match dim {
                None if values.is_empty() => {
                    return Err(Error::format(origin, i + 1, "embedding line has no values"))
                }
                None => dim = Some(values.len()),
                Some(d) if d != values.len() => {
                    return Err(Error::format(
                        origin,
                        i + 1,
                        format!("expected {d} values, found {}", values.len()),
                    ))
                }
                Some(_) => {}
            }
            table.insert(token, values);
        }
        let dim = dim.ok_or(Error::Empty("embedding file"))?;
        Ok(TableEmbedding {
            table,
            fallback: HashEmbedding::new(dim, seed),
        })
    }

    pub fn load(path: &Path, seed: u64) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string(), seed)
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

impl EmbeddingProvider for TableEmbedding {
    fn dim(&self) -> usize {
        self.fallback.dim
    }

    fn lookup(&self, token: &str) -> Vec<f64> {
        match self.table.get(token) {
            Some(v) => v.clone(),
            None => self.fallback.lookup(token),
        }
    }
}

/// Serializable description of where embeddings come from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EmbeddingSpec {
    Hash { dim: usize, seed: u64 },
    File { path: PathBuf, seed: u64 },
}

impl Default for EmbeddingSpec {
    fn default() -> Self {
        EmbeddingSpec::Hash {
            dim: DEFAULT_EMBEDDING_DIM,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub enum Embeddings {
    Hash(HashEmbedding),
    Table(TableEmbedding),
}

impl Embeddings {
    pub fn from_spec(spec: &EmbeddingSpec) -> Result<Self> {
        match spec {
            EmbeddingSpec::Hash { dim, seed } => {
                if *dim == 0 {
                    return Err(Error::InvalidConfig("embedding dimension must be positive".into()));
                }
                Ok(Embeddings::Hash(HashEmbedding::new(*dim, *seed)))
            }
            EmbeddingSpec::File { path, seed } => Ok(Embeddings::Table(TableEmbedding::load(path, *seed)?)),
        }
    }
}

impl EmbeddingProvider for Embeddings {
    fn dim(&self) -> usize {
        match self {
            Embeddings::Hash(e) => e.dim(),
            Embeddings::Table(e) => e.dim(),
        }
    }

    fn lookup(&self, token: &str) -> Vec<f64> {
        match self {
            Embeddings::Hash(e) => e.lookup(token),
            Embeddings::Table(e) => e.lookup(token),
        }
    }
}

/// One vector per token; an empty token list yields a single zero vector.
pub fn embed_tokens<S: AsRef<str>>(tokens: &[S], provider: &dyn EmbeddingProvider) -> Vec<Vec<f64>> {
    if tokens.is_empty() {
        return vec![vec![0.0; provider.dim()]];
    }
    tokens.iter().map(|t| provider.lookup(t.as_ref())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_vectors_are_stable_and_bounded() {
        let e = HashEmbedding::new(300, 0);
        let a = e.lookup("red");
        assert_eq!(a.len(), 300);
        assert_eq!(a, e.lookup("red"));
        assert_ne!(a, e.lookup("blue"));
        assert_ne!(a, HashEmbedding::new(300, 1).lookup("red"));
        let norm = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm <= 1.0 + 1e-12);
    }

    #[test]
    fn table_lookup_with_fallback() {
        let text = "red 0.5 0.25 -1\nsky 1 2 3\n";
        let e = TableEmbedding::parse(text, "mem", 7).unwrap();
        assert_eq!(e.len(), 2);
        assert_eq!(e.lookup("red"), vec![0.5, 0.25, -1.0]);
        assert_eq!(e.lookup("unknown"), HashEmbedding::new(3, 7).lookup("unknown"));
        let seq = embed_tokens(&["sky", "red"], &e);
        assert_eq!(seq, vec![vec![1.0, 2.0, 3.0], vec![0.5, 0.25, -1.0]]);
    }

    #[test]
    fn empty_tokens_give_zero_placeholder() {
        let e = HashEmbedding::new(8, 0);
        let seq = embed_tokens::<&str>(&[], &e);
        assert_eq!(seq, vec![vec![0.0; 8]]);
    }

    #[test]
    fn malformed_table_reports_line() {
        let err = TableEmbedding::parse("a 1 2\nb 1\n", "emb.txt", 0).unwrap_err();
        assert!(matches!(err, Error::Format { line: 2, .. }));
        let err = TableEmbedding::parse("a 1 x\n", "emb.txt", 0).unwrap_err();
        assert!(matches!(err, Error::Format { line: 1, .. }));
        assert!(TableEmbedding::parse("\n", "emb.txt", 0).is_err());
    }
}
