//! Reference document encoder: mean-pooled token embeddings, an affine
//! projection and a tanh squashing, `v = tanh(W · mean(E[tokens]) + b)`.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;

use crate::corpus::{Document, TokenId};
use crate::error::{Error, Result};
use crate::linalg::{axpy, Matrix};

#[derive(Clone, Debug, PartialEq)]
pub struct DocEmbedding(pub Vec<f64>);

impl DocEmbedding {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// Anything that maps a tokenized document to a fixed-width vector.
pub trait DocumentEncoder {
    fn output_dim(&self) -> usize;
    fn encode(&self, doc: &Document) -> Result<DocEmbedding>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    /// `(|V| + 1) × D`; row 0 is UNK.
    pub token_embeddings: Matrix,
    /// `O × D`
    pub projection: Matrix,
    pub bias: Vec<f64>,
}

impl EncoderParams {
    pub fn zeros(vocab_rows: usize, embed_dim: usize, output_dim: usize) -> Self {
        EncoderParams {
            token_embeddings: Matrix::zeros(vocab_rows, embed_dim),
            projection: Matrix::zeros(output_dim, embed_dim),
            bias: vec![0.0; output_dim],
        }
    }

    /// Token rows uniform in `±0.5/D`, projection uniform in `±1/√D`, zero bias.
    pub fn init<R: Rng + ?Sized>(
        vocab_rows: usize,
        embed_dim: usize,
        output_dim: usize,
        rng: &mut R,
    ) -> Self {
        let d = embed_dim as f64;
        let token_embeddings = Matrix::uniform(vocab_rows, embed_dim, 0.5 / d, rng);
        let projection = Matrix::uniform(output_dim, embed_dim, 1.0 / d.sqrt(), rng);
        EncoderParams {
            token_embeddings,
            projection,
            bias: vec![0.0; output_dim],
        }
    }

    pub fn vocab_rows(&self) -> usize {
        self.token_embeddings.rows()
    }

    pub fn embed_dim(&self) -> usize {
        self.token_embeddings.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.projection.rows()
    }

    fn check_tokens(&self, doc: &Document) -> Result<()> {
        if doc.tokens.is_empty() {
            return Err(Error::EmptyDocument(doc.id.clone()));
        }
        let rows = self.vocab_rows();
        match doc.tokens.iter().find(|&&t| t as usize >= rows) {
            Some(&token) => Err(Error::TokenOutOfRange { token, rows }),
            None => Ok(()),
        }
    }

    fn pooled(&self, tokens: &[TokenId]) -> Vec<f64> {
        let mut pooled = vec![0.0; self.embed_dim()];
        let w = 1.0 / tokens.len() as f64;
        for &t in tokens {
            axpy(w, self.token_embeddings.row(t as usize), &mut pooled);
        }
        pooled
    }

    fn forward(&self, pooled: &[f64]) -> Vec<f64> {
        let mut z = self.projection.matvec(pooled);
        for (zi, bi) in z.iter_mut().zip(&self.bias) {
            *zi = (*zi + bi).tanh();
        }
        z
    }

    pub fn is_finite(&self) -> bool {
        self.token_embeddings.is_finite()
            && self.projection.is_finite()
            && self.bias.iter().all(|b| b.is_finite())
    }
}

impl DocumentEncoder for EncoderParams {
    fn output_dim(&self) -> usize {
        EncoderParams::output_dim(self)
    }

    fn encode(&self, doc: &Document) -> Result<DocEmbedding> {
        encode(doc, self)
    }
}

pub fn encode(doc: &Document, params: &EncoderParams) -> Result<DocEmbedding> {
    params.check_tokens(doc)?;
    Ok(DocEmbedding(params.forward(&params.pooled(&doc.tokens))))
}

/// Gradient of `upstream · encode(doc)` with respect to every encoder
/// parameter. Token rows are sparse: only rows occurring in the document.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderGrads {
    pub token_rows: BTreeMap<TokenId, Vec<f64>>,
    pub projection: Matrix,
    pub bias: Vec<f64>,
}

pub fn encode_grad(doc: &Document, params: &EncoderParams, upstream: &[f64]) -> Result<EncoderGrads> {
    params.check_tokens(doc)?;
    if upstream.len() != params.output_dim() {
        return Err(Error::Dimension(format!(
            "upstream has {} entries, encoder outputs {}",
            upstream.len(),
            params.output_dim()
        )));
    }
    let pooled = params.pooled(&doc.tokens);
    let out = params.forward(&pooled);
    // dL/dz through tanh
    let dz: Vec<f64> = upstream
        .iter()
        .zip(&out)
        .map(|(u, y)| u * (1.0 - y * y))
        .collect();
    let mut projection = Matrix::zeros(params.output_dim(), params.embed_dim());
    projection.add_outer(1.0, &dz, &pooled);
    let dpooled = params.projection.matvec_t(&dz);

    let share = 1.0 / doc.tokens.len() as f64;
    let mut token_rows: BTreeMap<TokenId, Vec<f64>> = BTreeMap::new();
    for &t in &doc.tokens {
        let row = token_rows
            .entry(t)
            .or_insert_with(|| vec![0.0; params.embed_dim()]);
        axpy(share, &dpooled, row);
    }
    Ok(EncoderGrads {
        token_rows,
        projection,
        bias: dz,
    })
}

/// Externally computed document vectors keyed by document id.
#[derive(Clone, Debug, Default)]
pub struct PrecomputedEncoder {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl PrecomputedEncoder {
    pub fn new(dim: usize) -> Self {
        PrecomputedEncoder {
            dim,
            vectors: HashMap::new(),
        }
    }

    pub fn insert(&mut self, id: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::Dimension(format!(
                "vector of length {} for encoder of width {}",
                vector.len(),
                self.dim
            )));
        }
        self.vectors.insert(id.into(), vector);
        Ok(())
    }
}

impl DocumentEncoder for PrecomputedEncoder {
    fn output_dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, doc: &Document) -> Result<DocEmbedding> {
        self.vectors
            .get(&doc.id)
            .cloned()
            .map(DocEmbedding)
            .ok_or_else(|| Error::MissingEmbedding(doc.id.clone()))
    }
}
