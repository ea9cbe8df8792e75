//! Attribute tokens and the recurrent attribute encoder.
//!
//! Active attribute bits become tokens in ascending index order; a
//! unidirectional GRU reads them and its last hidden state is the global
//! embedding while the per-step states form the local embeddings.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{GruCell, Module, Param};
use crate::tensor::Tensor;

pub const EMBED_DIM: usize = 128;
pub const WORD_DIM: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct AttributeEmbedding {
    /// `[d]`
    pub global_vec: Tensor,
    /// `[t, d]`, row `i` belongs to `token_ids[i]`.
    pub local_mat: Tensor,
    pub token_ids: Vec<usize>,
}

/// Indices of the set bits, ascending.
pub fn tokenize_attributes(attributes: &[u8]) -> Result<Vec<usize>> {
    let ids: Vec<usize> = attributes
        .iter()
        .enumerate()
        .filter(|(_, &b)| b != 0)
        .map(|(i, _)| i)
        .collect();
    if ids.is_empty() {
        return Err(Error::EmptyCondition);
    }
    Ok(ids)
}

#[derive(Clone, Debug)]
pub struct AttrEncoder {
    pub embedding: Param,
    pub gru: GruCell,
    vocab: usize,
}

impl AttrEncoder {
    pub fn new(vocab: usize, rng: &mut ChaCha8Rng) -> Self {
        Self::with_dims(vocab, WORD_DIM, EMBED_DIM, rng)
    }

    pub fn with_dims(vocab: usize, word_dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        AttrEncoder {
            embedding: Param::uniform("attr.embedding", &[vocab, word_dim], 1, rng),
            gru: GruCell::new("attr.gru", word_dim, hidden, rng),
            vocab,
        }
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn dim(&self) -> usize {
        self.gru.hidden()
    }

    fn check_ids(&self, ids: &[usize]) -> Result<()> {
        if ids.is_empty() {
            return Err(Error::EmptyCondition);
        }
        if let Some(&id) = ids.iter().find(|&&i| i >= self.vocab) {
            return Err(Error::Vocabulary { id, vocab: self.vocab });
        }
        Ok(())
    }

    /// Returns `(global [1, d], local [t, d])`.
    pub fn forward(&self, g: &mut Graph, ids: &[usize]) -> Result<(Var, Var)> {
        self.check_ids(ids)?;
        let table = g.param(&self.embedding);
        let words = g.gather_rows(table, ids);
        let local = self.gru.run(g, words);
        let global = g.narrow(local, 0, ids.len() - 1, 1);
        Ok((global, local))
    }

    pub fn encode_attributes(&self, ids: &[usize]) -> Result<AttributeEmbedding> {
        let mut g = Graph::new();
        g.freeze(self.params());
        let (global, local) = self.forward(&mut g, ids)?;
        let d = self.dim();
        Ok(AttributeEmbedding {
            global_vec: g.value(global).clone().reshape(&[d]),
            local_mat: g.value(local).clone(),
            token_ids: ids.to_vec(),
        })
    }
}

impl Module for AttrEncoder {
    fn params(&self) -> Vec<&Param> {
        let mut p = vec![&self.embedding];
        p.extend(self.gru.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = vec![&mut self.embedding];
        p.extend(self.gru.params_mut());
        p
    }
}
