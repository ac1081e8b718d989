//! Embeddings, dense layers, stacked bidirectional LSTMs and dot attention.

use super::tape::{Graph, Mat, ParamId, ParamStore, Var};
use crate::dataset::{tokenize, Vocabulary, WordVectors, PAD};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NeuralError {
    #[error("sequence has no unmasked position")]
    AllMasked,
    #[error("header level has no names")]
    EmptyLevel,
    #[error("mask length {mask} does not match sequence length {len}")]
    MaskLength { mask: usize, len: usize },
}

pub fn uniform_init(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> Mat {
    let dist = Uniform::new_inclusive(-bound, bound).expect("valid bound");
    Mat::from_shape_fn((rows, cols), |_| dist.sample(rng))
}

pub fn normal_init(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Mat {
    let dist = Normal::new(0.0, std).expect("valid std");
    Mat::from_shape_fn((rows, cols), |_| dist.sample(rng))
}

/// Inverted dropout; absent in evaluation mode.
pub struct Dropout {
    pub p: f64,
    pub rng: ChaCha8Rng,
}

impl Dropout {
    pub fn apply(&mut self, g: &mut Graph<'_>, x: Var) -> Var {
        if self.p <= 0.0 {
            return x;
        }
        let keep = 1.0 - self.p;
        let (r, c) = g.shape(x);
        let mask = Mat::from_shape_fn((r, c), |_| {
            if self.rng.random::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        let m = g.constant(mask);
        g.mul(x, m)
    }
}

pub fn maybe_dropout(g: &mut Graph<'_>, x: Var, dropout: &mut Option<&mut Dropout>) -> Var {
    match dropout {
        Some(d) => d.apply(g, x),
        None => x,
    }
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, input: usize, output: usize) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        Linear {
            weight: store.add(format!("{name}.weight"), uniform_init(rng, input, output, bound)),
            bias: store.add(format!("{name}.bias"), uniform_init(rng, 1, output, bound)),
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let xw = g.matmul(x, w);
        g.add_row(xw, b)
    }
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct Embedding {
    pub table: ParamId,
    pub dim: usize,
}

impl Embedding {
    /// Random init with the PAD row zeroed.
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, vocab: usize, dim: usize) -> Self {
        let table = normal_init(rng, vocab, dim, 1.0 / (dim as f64).sqrt());
        Embedding {
            table: store.add_embedding(name, table, PAD),
            dim,
        }
    }

    /// Copies pretrained rows for known tokens; unknown tokens draw from N(0, 0.01).
    pub fn with_pretrained(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        vocab: &Vocabulary,
        vectors: &WordVectors,
    ) -> Self {
        let dim = vectors.dim;
        let mut table = normal_init(rng, vocab.len(), dim, 0.1);
        for (id, tok) in vocab.tokens().iter().enumerate() {
            if let Some(v) = vectors.vectors.get(tok) {
                table.row_mut(id).assign(&ndarray::ArrayView1::from(v.as_slice()));
            }
        }
        Embedding {
            table: store.add_embedding(name, table, PAD),
            dim,
        }
    }

    pub fn lookup(&self, g: &mut Graph<'_>, ids: &[usize]) -> Var {
        g.gather(self.table, ids)
    }
}

/// Token ids of every header name at one level, flattened in column order.
pub fn level_token_ids(names: &[String], vocab: &Vocabulary) -> Vec<usize> {
    names
        .iter()
        .flat_map(|n| tokenize(n))
        .map(|t| vocab.id(&t))
        .collect()
}

/// Mean embedding over all tokens of all names at one header level.
pub fn average_level_embedding(
    g: &mut Graph<'_>,
    names: &[String],
    vocab: &Vocabulary,
    embedding: &Embedding,
) -> Result<Var, NeuralError> {
    let ids = level_token_ids(names, vocab);
    if ids.is_empty() {
        return Err(NeuralError::EmptyLevel);
    }
    let rows = embedding.lookup(g, &ids);
    Ok(g.mean_rows(rows))
}

/// One direction of one LSTM layer. Gate order in the packed weights: input, forget, cell, output.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct LstmCell {
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub bias: ParamId,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, input: usize, hidden: usize) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut bias = uniform_init(rng, 1, 4 * hidden, bound);
        bias.slice_mut(ndarray::s![.., hidden..2 * hidden]).fill(1.0);
        LstmCell {
            w_input: store.add(format!("{name}.w_input"), uniform_init(rng, input, 4 * hidden, bound)),
            w_hidden: store.add(format!("{name}.w_hidden"), uniform_init(rng, hidden, 4 * hidden, bound)),
            bias: store.add(format!("{name}.bias"), bias),
            hidden,
        }
    }

    /// Runs over the rows of `x`; returns one `1×H` state per row in input order.
    pub fn run(&self, g: &mut Graph<'_>, x: Var, reverse: bool) -> Vec<Var> {
        let steps = g.shape(x).0;
        let h_dim = self.hidden;
        let wx = g.param(self.w_input);
        let wh = g.param(self.w_hidden);
        let b = g.param(self.bias);
        let projected = g.matmul(x, wx);
        let projected = g.add_row(projected, b);

        let mut h = g.zeros(1, h_dim);
        let mut c = g.zeros(1, h_dim);
        let mut out = vec![h; steps];
        let order: Vec<usize> = if reverse {
            (0..steps).rev().collect()
        } else {
            (0..steps).collect()
        };
        for t in order {
            let xt = g.row(projected, t);
            let hh = g.matmul(h, wh);
            let gates = g.add(xt, hh);
            let i = g.slice_cols(gates, 0, h_dim);
            let f = g.slice_cols(gates, h_dim, h_dim);
            let cand = g.slice_cols(gates, 2 * h_dim, h_dim);
            let o = g.slice_cols(gates, 3 * h_dim, h_dim);
            let i = g.sigmoid(i);
            let f = g.sigmoid(f);
            let cand = g.tanh(cand);
            let o = g.sigmoid(o);
            let keep = g.mul(f, c);
            let write = g.mul(i, cand);
            c = g.add(keep, write);
            let tc = g.tanh(c);
            h = g.mul(o, tc);
            out[t] = h;
        }
        out
    }
}

/// Stacked bidirectional LSTM; each layer's output is `[forward ; backward]`.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct BiLstm {
    pub layers: Vec<(LstmCell, LstmCell)>,
    pub hidden: usize,
}

impl BiLstm {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        input: usize,
        hidden: usize,
        layers: usize,
    ) -> Self {
        let layers = (0..layers.max(1))
            .map(|l| {
                let inp = if l == 0 { input } else { 2 * hidden };
                (
                    LstmCell::new(store, rng, &format!("{name}.l{l}.fwd"), inp, hidden),
                    LstmCell::new(store, rng, &format!("{name}.l{l}.bwd"), inp, hidden),
                )
            })
            .collect();
        BiLstm { layers, hidden }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.hidden
    }

    /// `T×in` to `T×2H`. Dropout is applied between layers.
    pub fn forward(&self, g: &mut Graph<'_>, x: Var, dropout: &mut Option<&mut Dropout>) -> Var {
        let mut input = x;
        for (l, (fwd, bwd)) in self.layers.iter().enumerate() {
            if l > 0 {
                input = maybe_dropout(g, input, dropout);
            }
            let f = fwd.run(g, input, false);
            let b = bwd.run(g, input, true);
            let rows: Vec<Var> = f
                .into_iter()
                .zip(b)
                .map(|(fh, bh)| g.concat_cols(&[fh, bh]))
                .collect();
            input = g.concat_rows(&rows);
        }
        input
    }
}

/// Graph nodes of an encoded sequence.
#[derive(Debug, Clone, Copy)]
pub struct EncodedSequence {
    /// `T×2H`; masked rows are zero.
    pub states: Var,
    /// `1×2H`, the state at the last live position.
    pub final_state: Var,
    /// `1×T`; zero at masked positions.
    pub attention: Var,
    /// `1×2H`, attention-weighted sum of states.
    pub attended: Var,
}

/// Luong dot attention: `softmax(states · query)` with masked positions excluded.
pub fn dot_attention(g: &mut Graph<'_>, states: Var, query: Var, mask: Option<&[bool]>) -> (Var, Var) {
    let scores = g.matmul_t(query, states);
    let weights = g.softmax(scores, mask);
    let attended = g.matmul(weights, states);
    (weights, attended)
}

/// Bidirectional recurrent pass over the unmasked rows of `inputs`, then dot
/// attention with the last live state as query.
pub fn encode_sequence(
    g: &mut Graph<'_>,
    encoder: &BiLstm,
    inputs: Var,
    mask: &[bool],
    dropout: &mut Option<&mut Dropout>,
) -> Result<EncodedSequence, NeuralError> {
    let len = g.shape(inputs).0;
    if mask.len() != len {
        return Err(NeuralError::MaskLength { mask: mask.len(), len });
    }
    let live: Vec<usize> = (0..len).filter(|&i| mask[i]).collect();
    if live.is_empty() {
        return Err(NeuralError::AllMasked);
    }
    let compact = if live.len() == len {
        inputs
    } else {
        let rows: Vec<Var> = live.iter().map(|&i| g.row(inputs, i)).collect();
        g.concat_rows(&rows)
    };
    let compact = maybe_dropout(g, compact, dropout);
    let live_states = encoder.forward(g, compact, dropout);
    let final_state = g.row(live_states, live.len() - 1);

    let states = if live.len() == len {
        live_states
    } else {
        let width = encoder.output_dim();
        let mut rows = Vec::with_capacity(len);
        let mut next = 0;
        for &keep in mask {
            if keep {
                rows.push(g.row(live_states, next));
                next += 1;
            } else {
                rows.push(g.zeros(1, width));
            }
        }
        g.concat_rows(&rows)
    };
    let (attention, attended) = dot_attention(g, states, final_state, Some(mask));
    Ok(EncodedSequence {
        states,
        final_state,
        attention,
        attended,
    })
}

/// Plain-valued result of [`SequenceEncoder::encode`].
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceEncoding {
    pub states: Mat,
    pub final_state: Vec<f64>,
    pub attention: Vec<f64>,
}

/// A standalone bidirectional encoder with its own parameters.
pub struct SequenceEncoder {
    pub params: ParamStore,
    pub encoder: BiLstm,
}

impl SequenceEncoder {
    pub fn new(rng: &mut ChaCha8Rng, input: usize, hidden: usize, layers: usize) -> Self {
        let mut params = ParamStore::new();
        let encoder = BiLstm::new(&mut params, rng, "encoder", input, hidden, layers);
        SequenceEncoder { params, encoder }
    }

    pub fn encode(&self, inputs: &Mat, mask: &[bool]) -> Result<SequenceEncoding, NeuralError> {
        let mut g = Graph::new(&self.params);
        let x = g.constant(inputs.clone());
        let enc = encode_sequence(&mut g, &self.encoder, x, mask, &mut None)?;
        Ok(SequenceEncoding {
            states: g.value(enc.states).clone(),
            final_state: g.value(enc.final_state).iter().copied().collect(),
            attention: g.value(enc.attention).iter().copied().collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Vocabulary;
    use ndarray::array;
    use rand::SeedableRng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(3)
    }

    #[test]
    fn singleton_sequence_attends_fully() {
        let enc = SequenceEncoder::new(&mut rng(), 4, 3, 2);
        let out = enc.encode(&Mat::ones((1, 4)), &[true]).unwrap();
        assert_eq!(out.attention, vec![1.0]);
    }

    #[test]
    fn identical_states_split_attention_evenly() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let states = g.constant(array![[0.3, -0.2], [0.3, -0.2]]);
        let q = g.constant(array![[1.0, 2.0]]);
        let (w, _) = dot_attention(&mut g, states, q, None);
        assert_eq!(g.value(w), &array![[0.5, 0.5]]);
    }

    #[test]
    fn random_sequence_attention_sums_to_one() {
        let mut r = rng();
        let enc = SequenceEncoder::new(&mut r, 6, 5, 2);
        let x = normal_init(&mut r, 5, 6, 1.0);
        let out = enc.encode(&x, &[true; 5]).unwrap();
        let total: f64 = out.attention.iter().sum();
        assert!((total - 1.0).abs() < 1e-6);
        assert!(out.attention.iter().all(|&a| a >= 0.0));
    }

    #[test]
    fn all_masked_input_is_rejected() {
        let enc = SequenceEncoder::new(&mut rng(), 2, 2, 1);
        assert_eq!(
            enc.encode(&Mat::ones((3, 2)), &[false; 3]).unwrap_err(),
            NeuralError::AllMasked
        );
    }

    #[test]
    fn masked_content_does_not_matter() {
        let mut r = rng();
        let enc = SequenceEncoder::new(&mut r, 3, 4, 2);
        let mut x = normal_init(&mut r, 4, 3, 1.0);
        let mask = [true, false, true, false];
        let a = enc.encode(&x, &mask).unwrap();
        x.row_mut(1).fill(42.0);
        x.row_mut(3).fill(-7.0);
        let b = enc.encode(&x, &mask).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.attention[1], 0.0);
        assert_eq!(a.states.row(3).sum(), 0.0);
    }

    #[test]
    fn level_average_matches_hand_mean() {
        let mut vocab = Vocabulary::new(false);
        for t in ["prec", "rec", "task", "1"] {
            vocab.insert(t);
        }
        let mut store = ParamStore::new();
        let mut table = Mat::zeros((vocab.len(), 2));
        table.row_mut(vocab.id("prec")).assign(&array![1.0, 0.0]);
        table.row_mut(vocab.id("rec")).assign(&array![0.0, 2.0]);
        table.row_mut(vocab.id("task")).assign(&array![3.0, 1.0]);
        table.row_mut(vocab.id("1")).assign(&array![-1.0, 5.0]);
        let emb = Embedding {
            table: store.add_embedding("e", table, PAD),
            dim: 2,
        };
        let mut g = Graph::new(&store);
        let names: Vec<String> = ["prec", "rec", "prec", "rec"].iter().map(|s| s.to_string()).collect();
        let v = average_level_embedding(&mut g, &names, &vocab, &emb).unwrap();
        assert_eq!(g.value(v), &array![[0.5, 1.0]]);

        let names = vec!["task 1".to_string(), "task 1".to_string()];
        let v = average_level_embedding(&mut g, &names, &vocab, &emb).unwrap();
        // (task + 1 + task + 1) / 4 = ((3-1+3-1)/4, (1+5+1+5)/4)
        assert_eq!(g.value(v), &array![[1.0, 3.0]]);

        let single = vec!["prec".to_string()];
        let v = average_level_embedding(&mut g, &single, &vocab, &emb).unwrap();
        assert_eq!(g.value(v), &array![[1.0, 0.0]]);

        assert_eq!(
            average_level_embedding(&mut g, &[], &vocab, &emb).unwrap_err(),
            NeuralError::EmptyLevel
        );
    }
}
