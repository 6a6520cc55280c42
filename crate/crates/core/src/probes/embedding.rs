use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::gradcore::Tensor;

pub const EMBEDDING_DIM: usize = 300;

/// Seeded stand-in for a word-embedding table: one unit-variance Gaussian
/// row per vocabulary item.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub vectors: Tensor,
}

impl EmbeddingTable {
    pub fn seeded(vocab: usize, seed: u64) -> Result<Self> {
        if vocab == 0 {
            return Err(Error::Config("empty vocabulary".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, 1.0).expect("unit normal");
        let data = (0..vocab * EMBEDDING_DIM).map(|_| n.sample(&mut rng)).collect();
        Ok(Self { vectors: Tensor::matrix(vocab, EMBEDDING_DIM, data) })
    }

    pub fn vocab(&self) -> usize {
        self.vectors.rows()
    }

    pub fn lookup(&self, word: usize) -> Result<&[f64]> {
        if word >= self.vocab() {
            return Err(Error::Data(format!("word {word} outside vocabulary of {}", self.vocab())));
        }
        Ok(self.vectors.row(word))
    }

    /// Stacked embeddings of `words`.
    pub fn rows(&self, words: &[usize]) -> Result<Tensor> {
        for &w in words {
            self.lookup(w)?;
        }
        Ok(self.vectors.select_rows(words))
    }
}
