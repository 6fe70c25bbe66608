//! Compact weight-shared bi-encoder: token embeddings, mean pooling and an
//! affine projection, `v = proj · mean(embed[t_i]) + bias`.
//!
//! Parameters are stored as `T` (f32 for training, f64 for gradient checks);
//! every reduction accumulates in f64.

use std::collections::BTreeMap;
use std::fmt::Debug;
use std::path::Path;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;

use crate::corpus::{Vocab, UNK};
use crate::io::{self, BinReader, BinWriter, IoError};
use crate::rng::item_rng;

const MAGIC: &[u8; 4] = b"AUGT";
const FORMAT_VERSION: u32 = 1;
const FLAG_NORMALIZE: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum EncoderError {
    #[error("cannot encode an empty token sequence")]
    EmptyInput,
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("token id {id} outside vocabulary of size {vocab}")]
    TokenOutOfRange { id: u32, vocab: usize },
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] IoError),
}

pub trait Scalar: Float + FromPrimitive + ToPrimitive + Send + Sync + Debug + 'static {}
impl Scalar for f32 {}
impl Scalar for f64 {}

#[inline]
fn f<T: Scalar>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

#[inline]
fn t<T: Scalar>(x: f64) -> T {
    T::from_f64(x).unwrap_or_else(T::nan)
}

/// Trainable tensors, row-major. `proj[i * dim + j]` maps input `j` to output `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<T = f32> {
    pub vocab_size: usize,
    pub dim: usize,
    pub embed: Vec<T>,
    pub proj: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVec(pub Vec<f64>);

impl EmbeddingVec {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// Gradients with the shapes of [`EncoderParams`]; embedding rows are kept
/// only for tokens that were touched.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub dim: usize,
    pub d_embed: BTreeMap<u32, Vec<f64>>,
    pub d_proj: Vec<f64>,
    pub d_bias: Vec<f64>,
}

impl GradientSet {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            d_embed: BTreeMap::new(),
            d_proj: vec![0.0; dim * dim],
            d_bias: vec![0.0; dim],
        }
    }

    pub fn add_assign(&mut self, other: &GradientSet) {
        debug_assert_eq!(self.dim, other.dim);
        for (row, g) in &other.d_embed {
            let dst = self
                .d_embed
                .entry(*row)
                .or_insert_with(|| vec![0.0; self.dim]);
            for (a, b) in dst.iter_mut().zip(g) {
                *a += b;
            }
        }
        for (a, b) in self.d_proj.iter_mut().zip(&other.d_proj) {
            *a += b;
        }
        for (a, b) in self.d_bias.iter_mut().zip(&other.d_bias) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.d_proj.iter().chain(&self.d_bias).all(|x| x.is_finite())
            && self.d_embed.values().flatten().all(|x| x.is_finite())
    }
}

impl<T: Scalar> EncoderParams<T> {
    /// `embed ~ U(±1/√H)`, `proj = I + U(±0.01)`, `bias = 0`.
    pub fn init(vocab_size: usize, dim: usize, seed: u64) -> Self {
        assert!(vocab_size >= 1 && dim >= 1, "vocab_size and dim must be positive");
        let mut rng = item_rng(seed, "encoder-init", "");
        let a = 1.0 / (dim as f64).sqrt();
        let embed = (0..vocab_size * dim)
            .map(|_| t(rng.random_range(-a..a)))
            .collect();
        let proj = (0..dim * dim)
            .map(|k| {
                let eye = if k / dim == k % dim { 1.0 } else { 0.0 };
                t(eye + rng.random_range(-0.01..0.01))
            })
            .collect();
        Self {
            vocab_size,
            dim,
            embed,
            proj,
            bias: vec![T::zero(); dim],
        }
    }

    /// Appends freshly initialized embedding rows (seeded per row index).
    pub fn grow_vocab(&mut self, new_size: usize, seed: u64) {
        let a = 1.0 / (self.dim as f64).sqrt();
        for row in self.vocab_size..new_size {
            let mut rng = item_rng(seed, "encoder-grow", &row.to_string());
            for _ in 0..self.dim {
                self.embed.push(t(rng.random_range(-a..a)));
            }
        }
        self.vocab_size = self.vocab_size.max(new_size);
    }

    pub fn cast<U: Scalar>(&self) -> EncoderParams<U> {
        EncoderParams {
            vocab_size: self.vocab_size,
            dim: self.dim,
            embed: self.embed.iter().map(|&x| t(f(x))).collect(),
            proj: self.proj.iter().map(|&x| t(f(x))).collect(),
            bias: self.bias.iter().map(|&x| t(f(x))).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.embed
            .iter()
            .chain(&self.proj)
            .chain(&self.bias)
            .all(|x| x.is_finite())
    }

    fn check_tokens(&self, tokens: &[u32]) -> Result<(), EncoderError> {
        if tokens.is_empty() {
            return Err(EncoderError::EmptyInput);
        }
        if let Some(&id) = tokens.iter().find(|&&id| id as usize >= self.vocab_size) {
            return Err(EncoderError::TokenOutOfRange {
                id,
                vocab: self.vocab_size,
            });
        }
        Ok(())
    }

    fn mean_embedding(&self, tokens: &[u32]) -> Vec<f64> {
        let h = self.dim;
        let mut mean = vec![0.0f64; h];
        for &tok in tokens {
            let row = &self.embed[tok as usize * h..(tok as usize + 1) * h];
            for (m, &x) in mean.iter_mut().zip(row) {
                *m += f(x);
            }
        }
        let inv = 1.0 / tokens.len() as f64;
        mean.iter_mut().for_each(|m| *m *= inv);
        mean
    }
}

pub fn encode<T: Scalar>(params: &EncoderParams<T>, tokens: &[u32]) -> Result<EmbeddingVec, EncoderError> {
    params.check_tokens(tokens)?;
    let h = params.dim;
    let mean = params.mean_embedding(tokens);
    let out = (0..h)
        .map(|i| {
            let row = &params.proj[i * h..(i + 1) * h];
            row.iter().zip(&mean).map(|(&p, m)| f(p) * m).sum::<f64>() + f(params.bias[i])
        })
        .collect();
    Ok(EmbeddingVec(out))
}

/// Gradient of `upstream · encode(params, tokens)` with respect to the parameters.
pub fn encode_backward<T: Scalar>(
    params: &EncoderParams<T>,
    tokens: &[u32],
    upstream: &[f64],
) -> Result<GradientSet, EncoderError> {
    params.check_tokens(tokens)?;
    let h = params.dim;
    if upstream.len() != h {
        return Err(EncoderError::DimMismatch(upstream.len(), h));
    }
    let mean = params.mean_embedding(tokens);
    let mut grads = GradientSet::zeros(h);
    grads.d_bias.copy_from_slice(upstream);
    for i in 0..h {
        for j in 0..h {
            grads.d_proj[i * h + j] = upstream[i] * mean[j];
        }
    }
    // projᵀ · upstream, spread evenly over token occurrences
    let inv = 1.0 / tokens.len() as f64;
    let mut d_mean = vec![0.0f64; h];
    for i in 0..h {
        let g = upstream[i];
        for j in 0..h {
            d_mean[j] += f(params.proj[i * h + j]) * g;
        }
    }
    for &tok in tokens {
        let row = grads.d_embed.entry(tok).or_insert_with(|| vec![0.0; h]);
        for (r, d) in row.iter_mut().zip(&d_mean) {
            *r += d * inv;
        }
    }
    Ok(grads)
}

pub fn similarity(u: &EmbeddingVec, v: &EmbeddingVec) -> Result<f64, EncoderError> {
    if u.dim() != v.dim() {
        return Err(EncoderError::DimMismatch(u.dim(), v.dim()));
    }
    Ok(dot(&u.0, &v.0))
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// L2-normalizes `v` in place and returns the pre-normalization norm.
pub fn normalize(v: &mut EmbeddingVec) -> f64 {
    let n = v.norm().max(1e-12);
    v.0.iter_mut().for_each(|x| *x /= n);
    n
}

/// Maps an upstream gradient on `u = v/|v|` back to `v`, given `u` and `|v|`.
pub fn normalize_backward(unit: &[f64], norm: f64, upstream: &[f64]) -> Vec<f64> {
    let proj = dot(unit, upstream);
    unit.iter()
        .zip(upstream)
        .map(|(u, g)| (g - u * proj) / norm)
        .collect()
}

/// A trained encoder together with its vocabulary and producing configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub vocab: Vocab,
    pub params: EncoderParams<f32>,
    /// Cosine similarity instead of a raw inner product.
    pub normalize: bool,
    /// JSON record of the producing configuration and seed.
    pub metadata: String,
}

impl Model {
    pub fn new(vocab: Vocab, dim: usize, seed: u64) -> Self {
        let params = EncoderParams::init(vocab.len(), dim, seed);
        Self {
            vocab,
            params,
            normalize: false,
            metadata: "{}".into(),
        }
    }

    /// Token ids for `text`; an all-punctuation text maps to a single UNK.
    pub fn token_ids(&self, text: &str) -> Vec<u32> {
        let seq = self.vocab.tokenize(text);
        if seq.tokens.is_empty() {
            vec![UNK]
        } else {
            seq.tokens
        }
    }

    pub fn encode_text(&self, text: &str) -> EmbeddingVec {
        let mut v = encode(&self.params, &self.token_ids(text)).expect("token ids are in range");
        if self.normalize {
            normalize(&mut v);
        }
        v
    }

    /// Layout: magic `AUGT`, u32 version, u32 H, u32 V, u32 flags, u64 vocab min_freq,
    /// V length-prefixed terms, length-prefixed JSON metadata, then the f32
    /// tensors embed (V×H), proj (H×H), bias (H). All little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let p = &self.params;
        let mut w = BinWriter::new();
        w.magic(MAGIC);
        w.u32(FORMAT_VERSION);
        w.u32(p.dim as u32);
        w.u32(p.vocab_size as u32);
        w.u32(if self.normalize { FLAG_NORMALIZE } else { 0 });
        w.u64(self.vocab.min_freq());
        for term in self.vocab.terms() {
            w.str(term);
        }
        w.str(&self.metadata);
        w.f32_slice(&p.embed);
        w.f32_slice(&p.proj);
        w.f32_slice(&p.bias);
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EncoderError> {
        let mut r = BinReader::new(bytes);
        r.expect_magic(MAGIC)?;
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(IoError::Version(version).into());
        }
        let dim = r.u32()? as usize;
        let vocab_size = r.u32()? as usize;
        let flags = r.u32()?;
        let min_freq = r.u64()?;
        if dim == 0 || vocab_size == 0 {
            return Err(EncoderError::Invalid("zero-sized tensors".into()));
        }
        let terms = (0..vocab_size).map(|_| r.str()).collect::<Result<Vec<_>, _>>()?;
        let vocab = Vocab::from_terms(terms, min_freq).map_err(EncoderError::Invalid)?;
        let metadata = r.str()?;
        let params = EncoderParams {
            vocab_size,
            dim,
            embed: r.f32_vec(vocab_size * dim)?,
            proj: r.f32_vec(dim * dim)?,
            bias: r.f32_vec(dim)?,
        };
        r.finish()?;
        Ok(Self {
            vocab,
            params,
            normalize: flags & FLAG_NORMALIZE != 0,
            metadata,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), EncoderError> {
        Ok(io::write_bytes(path, &self.to_bytes())?)
    }

    pub fn load(path: &Path) -> Result<Self, EncoderError> {
        Self::from_bytes(&io::read_bytes(path)?)
    }
}
