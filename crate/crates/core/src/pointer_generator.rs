//! Pointer-generator with supervised header-level attention.
//!
//! Header levels are embedded as the mean of their token vectors and run
//! through one BiLSTM per axis; the caption gets its own BiLSTM. Each encoder
//! uses dot attention with its last state as query, and its context is
//! `[last state ; attended state]`. The location gate reads the two header
//! contexts; the level weights are the per-axis attentions scaled by the
//! axis probability; the copy switch and the metric-vocabulary softmax read
//! the caption context.

use crate::dataset::{Vocabulary, WordVectors};
use crate::evaluation::{Prediction, TableClass};
use crate::model::{argmax, check_alpha, check_table, ModelError, NeuralModel};
use crate::neural::layers::{encode_sequence, maybe_dropout, BiLstm, Dropout, Embedding, Linear};
use crate::neural::{Gradients, Graph, ParamStore, Var};
use crate::table::{normalize_token, Axis, LocationClass, TableInstance};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PgConfig {
    pub embedding_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub dropout: f64,
    pub alpha: f64,
    /// Fix the copy switch at zero.
    pub no_copy: bool,
    /// Remove the caption branch entirely: no out-of-header predictions.
    pub no_generation: bool,
    /// Train the copy-gate BCE on every table instead of out-of-header ones only.
    pub copy_gate_all_examples: bool,
}

impl Default for PgConfig {
    fn default() -> Self {
        PgConfig {
            embedding_dim: 300,
            hidden: 256,
            layers: 2,
            dropout: 0.1,
            alpha: 0.5,
            no_copy: false,
            no_generation: false,
            copy_gate_all_examples: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Layout {
    embedding: Embedding,
    caption: BiLstm,
    rows: BiLstm,
    columns: BiLstm,
    location: Linear,
    copy: Linear,
    generate: Linear,
}

/// Distribution over metric vocabulary ∪ caption tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedDistribution {
    /// Metric vocabulary entries (reserved ids excluded) then unseen caption tokens in order.
    pub tokens: Vec<String>,
    /// `p_copy · Σ a_capt` over caption positions holding the token.
    pub copy_mass: Vec<f64>,
    /// `(1 − p_copy) · P_vocab`.
    pub generate_mass: Vec<f64>,
}

impl ExtendedDistribution {
    pub fn build(
        p_copy: f64,
        caption: &[String],
        caption_attention: &[f64],
        p_vocab: &[f64],
        metric_vocab: &Vocabulary,
    ) -> Self {
        let mut tokens: Vec<String> = metric_vocab.tokens().iter().skip(2).cloned().collect();
        let mut generate_mass: Vec<f64> = p_vocab.iter().skip(2).map(|p| (1.0 - p_copy) * p).collect();
        let mut copy_mass = vec![0.0; tokens.len()];
        for (tok, &a) in caption.iter().zip(caption_attention) {
            let key = normalize_token(tok);
            let slot = match metric_vocab.get(&key).filter(|&id| !Vocabulary::is_reserved(id)) {
                Some(id) => id - 2,
                None => match tokens[metric_vocab.len() - 2..].iter().position(|t| *t == key) {
                    Some(pos) => metric_vocab.len() - 2 + pos,
                    None => {
                        tokens.push(key);
                        copy_mass.push(0.0);
                        generate_mass.push(0.0);
                        tokens.len() - 1
                    }
                },
            };
            copy_mass[slot] += p_copy * a;
        }
        ExtendedDistribution {
            tokens,
            copy_mass,
            generate_mass,
        }
    }

    pub fn prob(&self, i: usize) -> f64 {
        self.copy_mass[i] + self.generate_mass[i]
    }

    pub fn probs(&self) -> Vec<f64> {
        (0..self.tokens.len()).map(|i| self.prob(i)).collect()
    }

    pub fn prob_of(&self, token: &str) -> f64 {
        let key = normalize_token(token);
        self.tokens.iter().position(|t| *t == key).map_or(0.0, |i| self.prob(i))
    }

    pub fn total(&self) -> f64 {
        self.probs().iter().sum()
    }
}

/// Plain-valued forward result for one table.
#[derive(Debug, Clone, PartialEq)]
pub struct PgOutput {
    /// (capt, rh, ch).
    pub p_hloc: [f64; 3],
    /// Row levels then column levels; each axis's attention times its location probability.
    pub level_weights: Vec<f64>,
    pub row_levels: usize,
    pub p_copy: f64,
    /// Over the full metric vocabulary; reserved ids carry zero.
    pub p_vocab: Vec<f64>,
    pub caption_attention: Vec<f64>,
    pub extended: ExtendedDistribution,
}

struct Nodes {
    p_hloc: Var,
    row_attention: Option<Var>,
    column_attention: Option<Var>,
    p_copy: Option<Var>,
    p_vocab: Var,
    caption_attention: Var,
}

pub struct PointerGenerator {
    pub config: PgConfig,
    pub vocab: Vocabulary,
    pub metric_vocab: Vocabulary,
    params: ParamStore,
    layout: Layout,
}

impl PointerGenerator {
    /// Fresh model. With `vectors`, the embedding width follows the vector file.
    pub fn new(
        mut config: PgConfig,
        vocab: Vocabulary,
        metric_vocab: Vocabulary,
        seed: u64,
        vectors: Option<&WordVectors>,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let embedding = match vectors {
            Some(v) => {
                config.embedding_dim = v.dim;
                Embedding::with_pretrained(&mut params, &mut rng, "embedding", &vocab, v)
            }
            None => Embedding::new(&mut params, &mut rng, "embedding", vocab.len(), config.embedding_dim),
        };
        let d = config.embedding_dim;
        let h = config.hidden;
        let caption = BiLstm::new(&mut params, &mut rng, "caption", d, h, config.layers);
        let rows = BiLstm::new(&mut params, &mut rng, "rows", d, h, config.layers);
        let columns = BiLstm::new(&mut params, &mut rng, "columns", d, h, config.layers);
        let location = Linear::new(&mut params, &mut rng, "location", 8 * h, 3);
        let copy = Linear::new(&mut params, &mut rng, "copy", 4 * h, 1);
        let generate = Linear::new(&mut params, &mut rng, "generate", 4 * h, metric_vocab.len());
        PointerGenerator {
            config,
            vocab,
            metric_vocab,
            params,
            layout: Layout {
                embedding,
                caption,
                rows,
                columns,
                location,
                copy,
                generate,
            },
        }
    }

    /// Context `[last ; attended]` (1×4H) and attention for one header axis, or `None` if absent.
    fn header_context(
        &self,
        g: &mut Graph<'_>,
        table: &TableInstance,
        axis: Axis,
        dropout: &mut Option<&mut Dropout>,
    ) -> Result<Option<(Var, Var)>, ModelError> {
        let levels = table.levels(axis);
        if levels.is_empty() {
            return Ok(None);
        }
        let mut rows = Vec::with_capacity(levels.len());
        for names in levels {
            rows.push(crate::neural::average_level_embedding(
                g,
                names,
                &self.vocab,
                &self.layout.embedding,
            )?);
        }
        let inputs = g.concat_rows(&rows);
        let encoder = match axis {
            Axis::Row => &self.layout.rows,
            Axis::Column => &self.layout.columns,
        };
        let enc = encode_sequence(g, encoder, inputs, &vec![true; levels.len()], dropout)?;
        let ctx = g.concat_cols(&[enc.final_state, enc.attended]);
        Ok(Some((ctx, enc.attention)))
    }

    fn forward_nodes(
        &self,
        g: &mut Graph<'_>,
        table: &TableInstance,
        mut dropout: Option<&mut Dropout>,
    ) -> Result<Nodes, ModelError> {
        let h4 = 4 * self.config.hidden;
        let row = self.header_context(g, table, Axis::Row, &mut dropout)?;
        let col = self.header_context(g, table, Axis::Column, &mut dropout)?;
        let row_ctx = match row {
            Some((c, _)) => c,
            None => g.zeros(1, h4),
        };
        let col_ctx = match col {
            Some((c, _)) => c,
            None => g.zeros(1, h4),
        };
        let header_ctx = g.concat_cols(&[row_ctx, col_ctx]);
        let header_ctx = maybe_dropout(g, header_ctx, &mut dropout);
        let logits = self.layout.location.forward(g, header_ctx);
        let mask = [!self.config.no_generation, row.is_some(), col.is_some()];
        let p_hloc = g.softmax(logits, Some(&mask));

        let ids: Vec<usize> = table.caption.iter().map(|t| self.vocab.id(t)).collect();
        let caption_inputs = self.layout.embedding.lookup(g, &ids);
        let enc = encode_sequence(g, &self.layout.caption, caption_inputs, &vec![true; ids.len()], &mut dropout)?;
        let caption_ctx = g.concat_cols(&[enc.final_state, enc.attended]);
        let caption_ctx = maybe_dropout(g, caption_ctx, &mut dropout);

        let p_copy = if self.config.no_copy {
            None
        } else {
            let logit = self.layout.copy.forward(g, caption_ctx);
            Some(g.sigmoid(logit))
        };
        let vocab_logits = self.layout.generate.forward(g, caption_ctx);
        let vocab_mask: Vec<bool> = (0..self.metric_vocab.len())
            .map(|i| !Vocabulary::is_reserved(i))
            .collect();
        let p_vocab = g.softmax(vocab_logits, Some(&vocab_mask));

        Ok(Nodes {
            p_hloc,
            row_attention: row.map(|(_, a)| a),
            column_attention: col.map(|(_, a)| a),
            p_copy,
            p_vocab,
            caption_attention: enc.attention,
        })
    }

    /// Runs the model on a valid table (dropout off).
    pub fn forward(&self, table: &TableInstance) -> Result<PgOutput, ModelError> {
        check_table(table)?;
        let mut g = Graph::new(&self.params);
        let n = self.forward_nodes(&mut g, table, None)?;
        let row = |v: Var| -> Vec<f64> { g.value(v).iter().copied().collect() };
        let p = row(n.p_hloc);
        let p_hloc = [p[0], p[1], p[2]];
        let mut level_weights: Vec<f64> = n
            .row_attention
            .map(|a| row(a).into_iter().map(|x| x * p_hloc[1]).collect())
            .unwrap_or_default();
        if let Some(a) = n.column_attention {
            level_weights.extend(row(a).into_iter().map(|x| x * p_hloc[2]));
        }
        let p_copy = n.p_copy.map_or(0.0, |v| g.scalar(v));
        let p_vocab = row(n.p_vocab);
        let caption_attention = row(n.caption_attention);
        let extended = ExtendedDistribution::build(
            p_copy,
            &table.caption,
            &caption_attention,
            &p_vocab,
            &self.metric_vocab,
        );
        Ok(PgOutput {
            p_hloc,
            level_weights,
            row_levels: table.row_levels(),
            p_copy,
            p_vocab,
            caption_attention,
            extended,
        })
    }

    /// Training objective as a graph node. `None` when the table contributes no loss.
    fn loss_node(
        &self,
        g: &mut Graph<'_>,
        table: &TableInstance,
        dropout: Option<&mut Dropout>,
    ) -> Result<Option<Var>, ModelError> {
        let cfg = &self.config;
        check_alpha(cfg.alpha)?;
        let gold = LocationClass::from(table.target.location);
        if cfg.no_generation && gold == LocationClass::Capt {
            return Ok(None);
        }
        let n = self.forward_nodes(g, table, dropout)?;

        let p_gold = g.pick(n.p_hloc, 0, gold.index());
        let mut location_term = g.ln(p_gold);
        if let (Some(axis), Some(level)) = (table.target.location.axis(), table.target.level) {
            // ln(a_k · p_axis / (p_rh + p_ch))
            let attention = match axis {
                Axis::Row => n.row_attention,
                Axis::Column => n.column_attention,
            }
            .expect("valid in-header target has levels on its axis");
            let a = g.pick(attention, 0, level - 1);
            let ln_a = g.ln(a);
            let p_capt = g.pick(n.p_hloc, 0, 0);
            let in_header = g.affine(p_capt, -1.0, 1.0);
            let ln_in = g.ln(in_header);
            let ln_axis = g.ln(p_gold);
            let t = g.add(ln_a, ln_axis);
            let level_term = g.sub(t, ln_in);
            location_term = g.add(location_term, level_term);
        }
        let mut total = g.scale(location_term, -(1.0 - cfg.alpha));

        let out_of_header = gold == LocationClass::Capt;
        let gold_token = table.gold_token().unwrap_or_default();
        if let Some(p_copy) = n.p_copy {
            if out_of_header || cfg.copy_gate_all_examples {
                let target = table
                    .caption
                    .iter()
                    .any(|c| normalize_token(c) == gold_token);
                let p = if target { p_copy } else { g.affine(p_copy, -1.0, 1.0) };
                let ln_p = g.ln(p);
                let term = g.scale(ln_p, -cfg.alpha);
                total = g.add(total, term);
            }
        }
        if out_of_header {
            let gen_id = self
                .metric_vocab
                .get(&gold_token)
                .filter(|&id| !Vocabulary::is_reserved(id));
            let generated = gen_id.map(|id| g.pick(n.p_vocab, 0, id));
            let positions: Vec<usize> = table
                .caption
                .iter()
                .enumerate()
                .filter(|(_, c)| normalize_token(c) == gold_token)
                .map(|(i, _)| i)
                .collect();
            let prob = match n.p_copy {
                None => generated,
                Some(p_copy) => {
                    let copied = if positions.is_empty() {
                        None
                    } else {
                        let picks: Vec<Var> =
                            positions.iter().map(|&i| g.pick(n.caption_attention, 0, i)).collect();
                        let stacked = g.concat_cols(&picks);
                        let mass = g.sum(stacked);
                        Some(g.mul(p_copy, mass))
                    };
                    let gen = generated.map(|pv| {
                        let keep = g.affine(p_copy, -1.0, 1.0);
                        g.mul(keep, pv)
                    });
                    match (copied, gen) {
                        (Some(c), Some(v)) => Some(g.add(c, v)),
                        (c, v) => c.or(v),
                    }
                }
            };
            // A gold token reachable by neither path has no gradient signal; skip it.
            if let Some(prob) = prob {
                let ln_p = g.ln(prob);
                let term = g.scale(ln_p, -cfg.alpha);
                total = g.add(total, term);
            }
        }
        Ok(Some(total))
    }

    /// Loss and gradients for one table with dropout disabled.
    pub fn loss_and_gradients(&self, table: &TableInstance) -> Result<(f64, Gradients), ModelError> {
        let mut grads = Gradients::new(&self.params);
        let loss = self.accumulate_gradients(table, None, &mut grads)?;
        Ok((loss, grads))
    }

    /// Same as [`loss_and_gradients`](Self::loss_and_gradients) but against an external store
    /// of identical layout (finite-difference checks perturb a copy).
    pub fn loss_with_params(&self, params: &ParamStore, table: &TableInstance) -> Result<(f64, Gradients), ModelError> {
        let mut g = Graph::new(params);
        let mut grads = Gradients::new(params);
        let Some(loss) = self.loss_node(&mut g, table, None)? else {
            return Ok((0.0, grads));
        };
        g.backward(loss, &mut grads);
        Ok((g.scalar(loss), grads))
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }
}

impl NeuralModel for PointerGenerator {
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
        let Some(loss) = self.loss_node(&mut g, table, dropout)? else {
            return Ok(0.0);
        };
        g.backward(loss, grads);
        Ok(g.scalar(loss))
    }

    fn predict(&self, table: &TableInstance) -> Result<Prediction, ModelError> {
        let out = self.forward(table)?;
        Ok(resolve(&out, table))
    }

    fn has_copy(&self) -> bool {
        !self.config.no_copy && !self.config.no_generation
    }
}

/// Options of the plain-valued loss that mirror the model's ablation flags.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossOptions {
    pub no_copy: bool,
    pub copy_gate_all_examples: bool,
}

/// Objective evaluated on plain outputs; agrees with the training graph.
pub fn loss(output: &PgOutput, table: &TableInstance, alpha: f64, opts: LossOptions) -> Result<f64, ModelError> {
    check_alpha(alpha)?;
    let gold = LocationClass::from(table.target.location);
    let p_gold = output.p_hloc[gold.index()];
    let mut location_term = -p_gold.ln();
    if let Some(flat) = table.gold_flat_index() {
        let live: f64 = output.p_hloc[1] + output.p_hloc[2];
        location_term -= (output.level_weights[flat - 1] / live).ln();
    }
    let mut gen_term = 0.0;
    if (gold == LocationClass::Capt || opts.copy_gate_all_examples) && !opts.no_copy {
        let target = table.gold_token_in_caption();
        let p = if target { output.p_copy } else { 1.0 - output.p_copy };
        gen_term -= p.ln();
    }
    if gold == LocationClass::Capt {
        let token = table.gold_token().unwrap_or_default();
        let p = output.extended.prob_of(&token);
        if p > 0.0 {
            gen_term -= p.ln();
        }
    }
    Ok((1.0 - alpha) * location_term + alpha * gen_term)
}

/// Turns a forward result into a class and metric token list.
pub fn resolve(output: &PgOutput, table: &TableInstance) -> Prediction {
    let hloc = LocationClass::from_index(argmax(&output.p_hloc).expect("three classes"));
    let u = output.row_levels;
    let (class, level, tokens) = match hloc {
        LocationClass::Rh | LocationClass::Ch => {
            let (axis, weights, class) = if hloc == LocationClass::Rh {
                (Axis::Row, &output.level_weights[..u], TableClass::LRow)
            } else {
                (Axis::Column, &output.level_weights[u..], TableClass::LCol)
            };
            let level = argmax(weights).expect("location gate masks absent axes") + 1;
            let names = table.level_names(axis, level).unwrap_or_default().to_vec();
            (class, Some(level), names)
        }
        LocationClass::Capt => {
            let ext = &output.extended;
            let best = argmax(&ext.probs());
            let (token, class) = match best {
                Some(i) => {
                    let class = if ext.copy_mass[i] > ext.generate_mass[i] {
                        TableClass::CCapt
                    } else {
                        TableClass::Gen
                    };
                    (ext.tokens[i].clone(), class)
                }
                None => (crate::dataset::UNK_TOKEN.to_string(), TableClass::Gen),
            };
            let n = if table.n_cols() > 0 { table.n_cols() } else { table.n_rows() };
            (class, None, vec![token; n.max(1)])
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

#[derive(Serialize, Deserialize)]
pub(crate) struct PgCheckpoint {
    pub config: PgConfig,
    pub vocab: Vocabulary,
    pub metric_vocab: Vocabulary,
}

impl PointerGenerator {
    pub(crate) fn checkpoint_meta(&self) -> PgCheckpoint {
        PgCheckpoint {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            metric_vocab: self.metric_vocab.clone(),
        }
    }

    pub(crate) fn from_checkpoint(meta: PgCheckpoint, bytes: &[u8]) -> Result<Self, String> {
        let mut model = PointerGenerator::new(meta.config, meta.vocab, meta.metric_vocab, 0, None);
        model.params.load_bytes(bytes)?;
        Ok(model)
    }
}
