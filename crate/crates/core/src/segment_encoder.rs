//! Per-segment transformer model.
//!
//! The table is serialized as a sequence of segments, each `[CLS] tokens [SEP]`:
//! the caption first, then every row-header level, then every column-header
//! level. Alternate segments carry the A/B segment embedding. The `[CLS]`
//! state of segment `i` scores level `i`; the first `[CLS]` also feeds the
//! location softmax and the metric-vocabulary softmax.

use crate::dataset::{tokenize, Vocabulary};
use crate::evaluation::{Prediction, TableClass};
use crate::model::{argmax, check_alpha, check_table, ModelError, NeuralModel};
use crate::neural::layers::{maybe_dropout, normal_init, Dropout, Linear};
use crate::neural::{Gradients, Graph, Mat, ParamId, ParamStore, Var};
use crate::table::{Axis, LocationClass, TableInstance};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// What a segment holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentKind {
    Caption,
    Level(Axis, usize),
}

/// Token ids of the serialized table with segment bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentedInput {
    pub ids: Vec<usize>,
    /// `false` for segment A (odd 1-based index), `true` for B.
    pub segment_b: Vec<bool>,
    /// Position of each segment's `[CLS]`.
    pub cls_positions: Vec<usize>,
    pub kinds: Vec<SegmentKind>,
}

impl SegmentedInput {
    /// Builds the sequence, trimming the longest segment body until it fits in `max_len`.
    /// `cls` and `sep` are the ids of the two marker tokens.
    pub fn build(table: &TableInstance, vocab: &Vocabulary, cls: usize, sep: usize, max_len: usize) -> Self {
        let mut kinds = vec![SegmentKind::Caption];
        let mut bodies: Vec<Vec<usize>> = vec![table.caption.iter().map(|t| vocab.id(t)).collect()];
        for level in table.flatten_levels() {
            kinds.push(SegmentKind::Level(level.axis, level.level));
            let text = level.names.join(" ");
            bodies.push(tokenize(&text).iter().map(|t| vocab.id(t)).collect());
        }
        let mut total: usize = bodies.iter().map(|b| b.len() + 2).sum();
        while total > max_len {
            let longest = (0..bodies.len())
                .max_by_key(|&i| (bodies[i].len(), std::cmp::Reverse(i)))
                .expect("at least the caption segment");
            if bodies[longest].is_empty() {
                break;
            }
            bodies[longest].pop();
            total -= 1;
        }
        let mut ids = Vec::with_capacity(total);
        let mut segment_b = Vec::with_capacity(total);
        let mut cls_positions = Vec::with_capacity(bodies.len());
        for (i, body) in bodies.iter().enumerate() {
            let b = (i + 1) % 2 == 0;
            cls_positions.push(ids.len());
            ids.push(cls);
            ids.extend_from_slice(body);
            ids.push(sep);
            segment_b.extend(std::iter::repeat_n(b, body.len() + 2));
        }
        SegmentedInput {
            ids,
            segment_b,
            cls_positions,
            kinds,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn segments(&self) -> usize {
        self.kinds.len()
    }

    /// 0-based segment holding the given level.
    pub fn segment_of(&self, axis: Axis, level: usize) -> Option<usize> {
        self.kinds.iter().position(|k| *k == SegmentKind::Level(axis, level))
    }
}

/// A contextual encoder over token ids. Parameters live in the model's store.
pub trait EncoderBackend: Send + Sync {
    /// `T×width` states. `segment_b` is `None` when segment embeddings are disabled.
    fn encode(
        &self,
        g: &mut Graph<'_>,
        ids: &[usize],
        segment_b: Option<&[bool]>,
        dropout: &mut Option<&mut Dropout>,
    ) -> Var;
    fn width(&self) -> usize;
    fn max_len(&self) -> usize;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransformerConfig {
    pub width: usize,
    pub heads: usize,
    pub layers: usize,
    pub ffn: usize,
    pub max_len: usize,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        TransformerConfig {
            width: 128,
            heads: 4,
            layers: 2,
            ffn: 256,
            max_len: 512,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    gamma: ParamId,
    beta: ParamId,
}

impl Norm {
    fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        Norm {
            gamma: store.add(format!("{name}.gamma"), Mat::ones((1, width))),
            beta: store.add(format!("{name}.beta"), Mat::zeros((1, width))),
        }
    }

    fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        g.layer_norm(x, gamma, beta)
    }
}

#[derive(Debug, Clone, Copy)]
struct Block {
    query: Linear,
    key: Linear,
    value: Linear,
    out: Linear,
    norm1: Norm,
    up: Linear,
    down: Linear,
    norm2: Norm,
}

/// Small post-norm transformer encoder with token, position and A/B embeddings.
#[derive(Debug, Clone)]
pub struct ToyTransformer {
    config: TransformerConfig,
    tokens: ParamId,
    positions: ParamId,
    segments: ParamId,
    embed_norm: Norm,
    blocks: Vec<Block>,
}

impl ToyTransformer {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, vocab_size: usize, config: TransformerConfig) -> Self {
        let d = config.width;
        assert!(config.heads > 0 && d.is_multiple_of(config.heads), "width must split evenly across heads");
        let tokens = store.add_embedding("transformer.tokens", normal_init(rng, vocab_size, d, 0.02), crate::dataset::PAD);
        let positions = store.add("transformer.positions", normal_init(rng, config.max_len, d, 0.02));
        let segments = store.add("transformer.segments", normal_init(rng, 2, d, 0.02));
        let embed_norm = Norm::new(store, "transformer.embed_norm", d);
        let blocks = (0..config.layers)
            .map(|l| {
                let p = format!("transformer.l{l}");
                Block {
                    query: Linear::new(store, rng, &format!("{p}.query"), d, d),
                    key: Linear::new(store, rng, &format!("{p}.key"), d, d),
                    value: Linear::new(store, rng, &format!("{p}.value"), d, d),
                    out: Linear::new(store, rng, &format!("{p}.out"), d, d),
                    norm1: Norm::new(store, &format!("{p}.norm1"), d),
                    up: Linear::new(store, rng, &format!("{p}.up"), d, config.ffn),
                    down: Linear::new(store, rng, &format!("{p}.down"), config.ffn, d),
                    norm2: Norm::new(store, &format!("{p}.norm2"), d),
                }
            })
            .collect();
        ToyTransformer {
            config,
            tokens,
            positions,
            segments,
            embed_norm,
            blocks,
        }
    }

    fn attention(&self, g: &mut Graph<'_>, block: &Block, x: Var) -> Var {
        let d = self.config.width;
        let dh = d / self.config.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let q = block.query.forward(g, x);
        let k = block.key.forward(g, x);
        let v = block.value.forward(g, x);
        let mut heads = Vec::with_capacity(self.config.heads);
        for h in 0..self.config.heads {
            let qh = g.slice_cols(q, h * dh, dh);
            let kh = g.slice_cols(k, h * dh, dh);
            let vh = g.slice_cols(v, h * dh, dh);
            let scores = g.matmul_t(qh, kh);
            let scores = g.scale(scores, scale);
            let weights = g.softmax(scores, None);
            heads.push(g.matmul(weights, vh));
        }
        let joined = g.concat_cols(&heads);
        block.out.forward(g, joined)
    }
}

impl EncoderBackend for ToyTransformer {
    fn encode(
        &self,
        g: &mut Graph<'_>,
        ids: &[usize],
        segment_b: Option<&[bool]>,
        dropout: &mut Option<&mut Dropout>,
    ) -> Var {
        let len = ids.len();
        let tok = g.gather(self.tokens, ids);
        let pos_ids: Vec<usize> = (0..len).collect();
        let pos = g.gather(self.positions, &pos_ids);
        let mut x = g.add(tok, pos);
        if let Some(flags) = segment_b {
            let seg_ids: Vec<usize> = flags.iter().map(|&b| usize::from(b)).collect();
            let seg = g.gather(self.segments, &seg_ids);
            x = g.add(x, seg);
        }
        x = self.embed_norm.forward(g, x);
        x = maybe_dropout(g, x, dropout);
        for block in &self.blocks {
            let attended = self.attention(g, block, x);
            let attended = maybe_dropout(g, attended, dropout);
            let sum = g.add(x, attended);
            x = block.norm1.forward(g, sum);
            let hidden = block.up.forward(g, x);
            let hidden = g.gelu(hidden);
            let ffn = block.down.forward(g, hidden);
            let ffn = maybe_dropout(g, ffn, dropout);
            let sum = g.add(x, ffn);
            x = block.norm2.forward(g, sum);
        }
        x
    }

    fn width(&self) -> usize {
        self.config.width
    }

    fn max_len(&self) -> usize {
        self.config.max_len
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegEncConfig {
    #[serde(flatten)]
    pub transformer: TransformerConfig,
    pub dropout: f64,
    pub alpha: f64,
    pub no_segment_embeddings: bool,
}

impl Default for SegEncConfig {
    fn default() -> Self {
        SegEncConfig {
            transformer: TransformerConfig::default(),
            dropout: 0.1,
            alpha: 0.5,
            no_segment_embeddings: false,
        }
    }
}

/// Plain-valued forward result.
#[derive(Debug, Clone, PartialEq)]
pub struct SegOutput {
    /// (capt, rh, ch).
    pub p_hloc: [f64; 3],
    /// Per-segment sigmoid scores.
    pub p_hlevel: Vec<f64>,
    /// `p_hlevel` normalized over segments.
    pub w_hlevel: Vec<f64>,
    pub p_vocab: Vec<f64>,
    pub kinds: Vec<SegmentKind>,
}

struct Heads {
    location: Linear,
    level: Linear,
    generate: Linear,
}

pub struct SegmentEncoder {
    pub config: SegEncConfig,
    pub vocab: Vocabulary,
    pub metric_vocab: Vocabulary,
    params: ParamStore,
    backend: Option<Box<dyn EncoderBackend>>,
    heads: Heads,
}

struct SegNodes {
    p_hloc: Var,
    p_hlevel: Var,
    p_vocab: Var,
    input: SegmentedInput,
}

impl SegmentEncoder {
    /// Model with the default toy transformer backend.
    pub fn new(config: SegEncConfig, vocab: Vocabulary, metric_vocab: Vocabulary, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let backend = ToyTransformer::new(&mut params, &mut rng, vocab.len() + 2, config.transformer);
        let heads = Self::make_heads(&mut params, &mut rng, config.transformer.width, metric_vocab.len());
        SegmentEncoder {
            config,
            vocab,
            metric_vocab,
            params,
            backend: Some(Box::new(backend)),
            heads,
        }
    }

    /// Model whose encoder is supplied later with [`attach_backend`](Self::attach_backend).
    /// `build` receives the shared store and the embedding-table size.
    pub fn with_backend<F>(config: SegEncConfig, vocab: Vocabulary, metric_vocab: Vocabulary, seed: u64, build: Option<F>) -> Self
    where
        F: FnOnce(&mut ParamStore, &mut ChaCha8Rng, usize) -> Box<dyn EncoderBackend>,
    {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let backend = build.map(|f| f(&mut params, &mut rng, vocab.len() + 2));
        let width = backend.as_ref().map_or(config.transformer.width, |b| b.width());
        let heads = Self::make_heads(&mut params, &mut rng, width, metric_vocab.len());
        SegmentEncoder {
            config,
            vocab,
            metric_vocab,
            params,
            backend,
            heads,
        }
    }

    fn make_heads(params: &mut ParamStore, rng: &mut ChaCha8Rng, width: usize, metric: usize) -> Heads {
        Heads {
            location: Linear::new(params, rng, "head.location", width, 3),
            level: Linear::new(params, rng, "head.level", width, 1),
            generate: Linear::new(params, rng, "head.generate", width, metric),
        }
    }

    pub fn cls_id(&self) -> usize {
        self.vocab.len()
    }

    pub fn sep_id(&self) -> usize {
        self.vocab.len() + 1
    }

    pub fn segmented(&self, table: &TableInstance) -> Result<SegmentedInput, ModelError> {
        let backend = self.backend.as_ref().ok_or(ModelError::MissingBackend)?;
        Ok(SegmentedInput::build(table, &self.vocab, self.cls_id(), self.sep_id(), backend.max_len()))
    }

    fn forward_nodes(
        &self,
        g: &mut Graph<'_>,
        table: &TableInstance,
        mut dropout: Option<&mut Dropout>,
    ) -> Result<SegNodes, ModelError> {
        let backend = self.backend.as_ref().ok_or(ModelError::MissingBackend)?;
        let input = self.segmented(table)?;
        let flags = (!self.config.no_segment_embeddings).then_some(input.segment_b.as_slice());
        let states = backend.encode(g, &input.ids, flags, &mut dropout);
        let cls_rows: Vec<Var> = input.cls_positions.iter().map(|&p| g.row(states, p)).collect();
        let first = maybe_dropout(g, cls_rows[0], &mut dropout);

        let logits = self.heads.location.forward(g, first);
        let mask = [true, table.row_levels() > 0, table.column_levels() > 0];
        let p_hloc = g.softmax(logits, Some(&mask));

        let stacked = g.concat_rows(&cls_rows);
        let stacked = maybe_dropout(g, stacked, &mut dropout);
        let level_logits = self.heads.level.forward(g, stacked);
        let p_hlevel = g.sigmoid(level_logits);

        let vocab_logits = self.heads.generate.forward(g, first);
        let vocab_mask: Vec<bool> = (0..self.metric_vocab.len())
            .map(|i| !Vocabulary::is_reserved(i))
            .collect();
        let p_vocab = g.softmax(vocab_logits, Some(&vocab_mask));
        Ok(SegNodes {
            p_hloc,
            p_hlevel,
            p_vocab,
            input,
        })
    }

    pub fn forward(&self, table: &TableInstance) -> Result<SegOutput, ModelError> {
        check_table(table)?;
        let mut g = Graph::new(&self.params);
        let n = self.forward_nodes(&mut g, table, None)?;
        let p: Vec<f64> = g.value(n.p_hloc).iter().copied().collect();
        let p_hlevel: Vec<f64> = g.value(n.p_hlevel).iter().copied().collect();
        Ok(SegOutput {
            p_hloc: [p[0], p[1], p[2]],
            w_hlevel: normalize_levels(&p_hlevel),
            p_hlevel,
            p_vocab: g.value(n.p_vocab).iter().copied().collect(),
            kinds: n.input.kinds,
        })
    }

    fn loss_node(
        &self,
        g: &mut Graph<'_>,
        table: &TableInstance,
        dropout: Option<&mut Dropout>,
    ) -> Result<Var, ModelError> {
        let alpha = self.config.alpha;
        check_alpha(alpha)?;
        let n = self.forward_nodes(g, table, dropout)?;
        let gold = LocationClass::from(table.target.location);
        let p_gold = g.pick(n.p_hloc, 0, gold.index());
        let ln_loc = g.ln(p_gold);
        let segment = gold_segment(table);
        let s = g.pick(n.p_hlevel, segment, 0);
        let ln_s = g.ln(s);
        let total_s = g.sum(n.p_hlevel);
        let ln_total = g.ln(total_s);
        let ln_w = g.sub(ln_s, ln_total);
        let ln_both = g.add(ln_loc, ln_w);
        let mut loss = g.scale(ln_both, -(1.0 - alpha));
        if let Some(id) = self.generation_target(table) {
            let p = g.pick(n.p_vocab, 0, id);
            let ln_p = g.ln(p);
            let term = g.scale(ln_p, -alpha);
            loss = g.add(loss, term);
        }
        Ok(loss)
    }

    fn generation_target(&self, table: &TableInstance) -> Option<usize> {
        if table.target.location.axis().is_some() {
            return None;
        }
        let token = table.gold_token()?;
        self.metric_vocab.get(&token).filter(|&id| !Vocabulary::is_reserved(id))
    }

    pub fn loss_with_params(&self, params: &ParamStore, table: &TableInstance) -> Result<(f64, Gradients), ModelError> {
        let mut g = Graph::new(params);
        let mut grads = Gradients::new(params);
        let loss = self.loss_node(&mut g, table, None)?;
        g.backward(loss, &mut grads);
        Ok((g.scalar(loss), grads))
    }

    pub fn has_backend(&self) -> bool {
        self.backend.is_some()
    }
}

/// 0-based segment that should receive the level weight: the caption for
/// out-of-header targets, otherwise the gold level's segment.
pub fn gold_segment(table: &TableInstance) -> usize {
    table.gold_flat_index().unwrap_or(0)
}

/// `p_i / Σ p`.
pub fn normalize_levels(p_hlevel: &[f64]) -> Vec<f64> {
    let total: f64 = p_hlevel.iter().sum();
    p_hlevel.iter().map(|p| p / total).collect()
}

/// Objective on plain outputs; agrees with the training graph.
pub fn loss(output: &SegOutput, table: &TableInstance, alpha: f64, metric_vocab: &Vocabulary) -> Result<f64, ModelError> {
    check_alpha(alpha)?;
    let gold = LocationClass::from(table.target.location);
    let mut l = -(1.0 - alpha) * (output.p_hloc[gold.index()].ln() + output.w_hlevel[gold_segment(table)].ln());
    if table.target.location.axis().is_none() {
        if let Some(id) = table
            .gold_token()
            .and_then(|t| metric_vocab.get(&t))
            .filter(|&id| !Vocabulary::is_reserved(id))
        {
            l -= alpha * output.p_vocab[id].ln();
        }
    }
    Ok(l)
}

/// Location argmax, then the best segment on the chosen axis or a generated token.
pub fn resolve(output: &SegOutput, table: &TableInstance, metric_vocab: &Vocabulary) -> Prediction {
    let hloc = LocationClass::from_index(argmax(&output.p_hloc).expect("three classes"));
    let (class, level, tokens) = match hloc {
        LocationClass::Rh | LocationClass::Ch => {
            let axis = if hloc == LocationClass::Rh { Axis::Row } else { Axis::Column };
            let candidates: Vec<(usize, f64)> = output
                .kinds
                .iter()
                .zip(&output.w_hlevel)
                .filter_map(|(k, &w)| match k {
                    SegmentKind::Level(a, l) if *a == axis => Some((*l, w)),
                    _ => None,
                })
                .collect();
            let weights: Vec<f64> = candidates.iter().map(|c| c.1).collect();
            let level = candidates[argmax(&weights).expect("location mask excludes absent axes")].0;
            let names = table.level_names(axis, level).unwrap_or_default().to_vec();
            let class = if axis == Axis::Row { TableClass::LRow } else { TableClass::LCol };
            (class, Some(level), names)
        }
        LocationClass::Capt => {
            let best = argmax(&output.p_vocab).unwrap_or(crate::dataset::UNK);
            let token = metric_vocab.token(best).to_string();
            let n = if table.n_cols() > 0 { table.n_cols() } else { table.n_rows() };
            (TableClass::Gen, None, vec![token; n.max(1)])
        }
    };
    Prediction {
        id: table.id.clone(),
        class,
        tokens,
        p_hloc: Some(output.p_hloc),
        level,
    }
}

impl NeuralModel for SegmentEncoder {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn accumulate_gradients(
        &self,
        table: &TableInstance,
        dropout: Option<&mut Dropout>,
        grads: &mut Gradients,
    ) -> Result<f64, ModelError> {
        check_table(table)?;
        let mut g = Graph::new(&self.params);
        let loss = self.loss_node(&mut g, table, dropout)?;
        g.backward(loss, grads);
        Ok(g.scalar(loss))
    }

    fn predict(&self, table: &TableInstance) -> Result<Prediction, ModelError> {
        let out = self.forward(table)?;
        Ok(resolve(&out, table, &self.metric_vocab))
    }

    fn has_copy(&self) -> bool {
        false
    }
}

#[derive(Serialize, Deserialize)]
pub(crate) struct SegEncCheckpoint {
    pub config: SegEncConfig,
    pub vocab: Vocabulary,
    pub metric_vocab: Vocabulary,
}

impl SegmentEncoder {
    pub(crate) fn checkpoint_meta(&self) -> SegEncCheckpoint {
        SegEncCheckpoint {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            metric_vocab: self.metric_vocab.clone(),
        }
    }

    pub(crate) fn from_checkpoint(meta: SegEncCheckpoint, bytes: &[u8]) -> Result<Self, String> {
        let mut model = SegmentEncoder::new(meta.config, meta.vocab, meta.metric_vocab, 0);
        model.params.load_bytes(bytes)?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{build_vocabularies, generate_synthetic, SynthSpec};
    use crate::table::fixtures::model_comparison;
    use crate::table::{Location, MetricTarget};

    fn tiny() -> SegEncConfig {
        SegEncConfig {
            transformer: TransformerConfig {
                width: 8,
                heads: 2,
                layers: 1,
                ffn: 12,
                max_len: 64,
            },
            dropout: 0.0,
            ..SegEncConfig::default()
        }
    }

    fn model_for(tables: &[TableInstance]) -> SegmentEncoder {
        let (v, m) = build_vocabularies(tables);
        SegmentEncoder::new(tiny(), v, m, 5)
    }

    #[test]
    fn example_table_has_five_segments() {
        let t = model_comparison();
        let model = model_for(std::slice::from_ref(&t));
        let input = model.segmented(&t).unwrap();
        assert_eq!(input.segments(), 5);
        assert_eq!(
            input.kinds,
            vec![
                SegmentKind::Caption,
                SegmentKind::Level(Axis::Row, 1),
                SegmentKind::Level(Axis::Row, 2),
                SegmentKind::Level(Axis::Column, 1),
                SegmentKind::Level(Axis::Column, 2),
            ]
        );
        for (i, &p) in input.cls_positions.iter().enumerate() {
            assert_eq!(input.ids[p], model.cls_id());
            assert_eq!(input.segment_b[p], i % 2 == 1);
        }
        assert_eq!(input.ids.iter().filter(|&&i| i == model.sep_id()).count(), 5);
        assert_eq!(gold_segment(&t), 4);
    }

    #[test]
    fn truncation_keeps_markers() {
        let t = model_comparison();
        let (v, _) = build_vocabularies(std::slice::from_ref(&t));
        let full = SegmentedInput::build(&t, &v, 100, 101, 512);
        let cut = SegmentedInput::build(&t, &v, 100, 101, 20);
        assert!(full.len() > 20);
        assert_eq!(cut.len(), 20);
        assert_eq!(cut.ids.iter().filter(|&&i| i == 100).count(), 5);
        assert_eq!(cut.ids.iter().filter(|&&i| i == 101).count(), 5);
    }

    #[test]
    fn caption_only_table_has_unit_level_weight() {
        let mut t = model_comparison();
        t.row_headers.clear();
        t.column_headers.clear();
        t.cells.clear();
        t.caption.push("bleu".into());
        t.target = MetricTarget {
            location: Location::OutOfHeader,
            level: None,
            tokens: vec!["bleu".into()],
        };
        let model = model_for(std::slice::from_ref(&t));
        if t.is_valid() {
            let out = model.forward(&t).unwrap();
            assert_eq!(out.w_hlevel, vec![1.0]);
        }
        assert_eq!(normalize_levels(&[0.3]), vec![1.0]);
    }

    #[test]
    fn equal_scores_give_uniform_weights_and_ln5_loss() {
        let w = normalize_levels(&[0.4; 5]);
        assert!(w.iter().all(|x| (x - 0.2).abs() < 1e-15));
        let t = model_comparison();
        let (_, m) = build_vocabularies(std::slice::from_ref(&t));
        let out = SegOutput {
            p_hloc: [0.0, 0.0, 1.0],
            p_hlevel: vec![0.4; 5],
            w_hlevel: w,
            p_vocab: vec![0.0; m.len()],
            kinds: vec![SegmentKind::Caption; 5],
        };
        let l = loss(&out, &t, 0.0, &m).unwrap();
        assert!((l - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn distributions_are_normalized_and_graph_loss_matches() {
        let tables = generate_synthetic(4, 10, &SynthSpec::default());
        let model = model_for(&tables);
        for t in &tables {
            let out = model.forward(t).unwrap();
            assert!((out.p_hloc.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!((out.w_hlevel.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!((out.p_vocab.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let (graph, _) = model.loss_with_params(model.params(), t).unwrap();
            let plain = loss(&out, t, model.config.alpha, &model.metric_vocab).unwrap();
            assert!((graph - plain).abs() < 1e-9);
            let p = model.predict(t).unwrap();
            assert!(matches!(p.class, TableClass::LRow | TableClass::LCol | TableClass::Gen));
        }
    }

    #[test]
    fn segment_flags_change_the_encoding() {
        let t = model_comparison();
        let mut model = model_for(std::slice::from_ref(&t));
        let with = model.forward(&t).unwrap();
        model.config.no_segment_embeddings = true;
        let without = model.forward(&t).unwrap();
        assert_ne!(with.p_hloc, without.p_hloc);
    }

    #[test]
    fn missing_backend_is_an_error() {
        let t = model_comparison();
        let (v, m) = build_vocabularies(std::slice::from_ref(&t));
        type Build = fn(&mut ParamStore, &mut ChaCha8Rng, usize) -> Box<dyn EncoderBackend>;
        let model = SegmentEncoder::with_backend::<Build>(tiny(), v, m, 0, None);
        assert!(matches!(model.forward(&t), Err(ModelError::MissingBackend)));
        assert!(matches!(model.predict(&t), Err(ModelError::MissingBackend)));
    }

    #[test]
    fn gradient_check_on_one_table() {
        let tables = generate_synthetic(8, 6, &SynthSpec::default());
        let t = tables
            .iter()
            .find(|t| t.target.location == Location::OutOfHeader)
            .unwrap()
            .clone();
        let model = model_for(&tables);
        let mut params = model.params().clone();
        let err = crate::neural::gradient_check(&mut params, 1e-5, 10, 2, |p| model.loss_with_params(p, &t).unwrap());
        assert!(err <= 1e-3, "relative error {err}");
    }
}
