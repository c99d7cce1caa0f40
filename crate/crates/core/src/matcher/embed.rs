use std::hash::Hasher;

use fnv::FnvHasher;

/// Sentence embedding backend. Outputs must be unit-norm and deterministic.
pub trait EmbeddingProvider {
    /// Stable identifier, used to key cached embeddings.
    fn id(&self) -> &str;
    fn dimension(&self) -> usize;
    fn embed(&self, text: &str) -> Vec<f64>;
}

/// Baseline provider: the set of lowercase alphanumeric tokens, each hashed
/// into one of `dimension` buckets, L2-normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenHashEmbedding {
    pub dimension: usize,
}

impl Default for TokenHashEmbedding {
    fn default() -> Self {
        Self { dimension: 64 }
    }
}

pub fn tokens(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let mut out: Vec<String> =
        lower.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(str::to_string).collect();
    out.sort();
    out.dedup();
    out
}

pub fn bucket(token: &str, dimension: usize) -> usize {
    let mut h = FnvHasher::default();
    h.write(token.as_bytes());
    (h.finish() % dimension as u64) as usize
}

impl EmbeddingProvider for TokenHashEmbedding {
    fn id(&self) -> &str {
        "token-hash"
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dimension];
        for t in tokens(text) {
            v[bucket(&t, self.dimension)] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            // no tokens: a fixed unit vector keeps the output unit-norm
            v[0] = 1.0;
            return v;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        v
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}
