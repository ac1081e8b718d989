//! tf.idf features with one-vs-rest linear SVMs.
//!
//! One classifier picks the location label (`none`, `rh:k`, `ch:l`) from
//! position-tagged header and caption tokens; a second maps caption tokens to
//! the metric token of out-of-header tables.

use crate::dataset::UNK_TOKEN;
use crate::evaluation::{Prediction, TableClass};
use crate::table::{normalize_token, Axis, Location, TableInstance};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SvmError {
    #[error("tf-idf transform called before fit")]
    NotFitted,
    #[error("cannot fit on an empty training set")]
    EmptyTrainingSet,
    #[error("model file: {0}")]
    Serde(#[from] serde_json::Error),
}

/// Sparse row: sorted `(feature, value)` pairs.
pub type SparseVec = Vec<(usize, f64)>;

/// Raw-count tf times smoothed idf `ln((1 + N) / (1 + df)) + 1`, L2-normalized.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TfIdf {
    fitted: bool,
    terms: BTreeMap<String, usize>,
    idf: Vec<f64>,
}

impl TfIdf {
    pub fn fit(docs: &[Vec<String>]) -> Self {
        let mut df: BTreeMap<&str, usize> = BTreeMap::new();
        for doc in docs {
            let mut seen: Vec<&str> = doc.iter().map(String::as_str).collect();
            seen.sort_unstable();
            seen.dedup();
            for t in seen {
                *df.entry(t).or_default() += 1;
            }
        }
        let n = docs.len() as f64;
        let mut terms = BTreeMap::new();
        let mut idf = Vec::with_capacity(df.len());
        for (i, (t, d)) in df.into_iter().enumerate() {
            terms.insert(t.to_string(), i);
            idf.push(((1.0 + n) / (1.0 + d as f64)).ln() + 1.0);
        }
        TfIdf {
            fitted: true,
            terms,
            idf,
        }
    }

    pub fn dim(&self) -> usize {
        self.idf.len()
    }

    pub fn idf(&self, term: &str) -> Option<f64> {
        self.terms.get(term).map(|&i| self.idf[i])
    }

    /// Unknown terms are dropped.
    pub fn transform(&self, doc: &[String]) -> Result<SparseVec, SvmError> {
        if !self.fitted {
            return Err(SvmError::NotFitted);
        }
        let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
        for t in doc {
            if let Some(&i) = self.terms.get(t) {
                *counts.entry(i).or_default() += 1.0;
            }
        }
        let mut v: SparseVec = counts.into_iter().map(|(i, c)| (i, c * self.idf[i])).collect();
        let norm = v.iter().map(|(_, x)| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|(_, x)| *x /= norm);
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmConfig {
    /// Hinge-loss weight.
    pub c: f64,
    pub max_iter: usize,
    /// Stop when the projected-gradient spread falls below this.
    pub tolerance: f64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            c: 1.0,
            max_iter: 1000,
            tolerance: 1e-4,
        }
    }
}

fn dot(w: &[f64], x: &SparseVec) -> f64 {
    x.iter().map(|&(i, v)| w[i] * v).sum::<f64>() + w[w.len() - 1]
}

/// One-vs-rest L2-regularized hinge-loss SVM trained by dual coordinate descent.
/// The bias is an extra always-one feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSvm {
    pub classes: Vec<String>,
    weights: Vec<Vec<f64>>,
}

impl LinearSvm {
    pub fn fit(xs: &[SparseVec], labels: &[String], dim: usize, config: SvmConfig, seed: u64) -> Result<Self, SvmError> {
        if xs.is_empty() {
            return Err(SvmError::EmptyTrainingSet);
        }
        let mut classes: Vec<String> = labels.to_vec();
        classes.sort();
        classes.dedup();
        let q: Vec<f64> = xs.iter().map(|x| x.iter().map(|(_, v)| v * v).sum::<f64>() + 1.0).collect();
        let mut weights = Vec::with_capacity(classes.len());
        for (k, class) in classes.iter().enumerate() {
            let y: Vec<f64> = labels.iter().map(|l| if l == class { 1.0 } else { -1.0 }).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64));
            weights.push(dual_cd(xs, &y, &q, dim, config, &mut rng));
        }
        Ok(LinearSvm { classes, weights })
    }

    pub fn decision_function(&self, x: &SparseVec) -> Vec<f64> {
        self.weights.iter().map(|w| dot(w, x)).collect()
    }

    /// Highest-scoring class among those `allowed`; ties go to the earlier class.
    pub fn predict_restricted(&self, x: &SparseVec, allowed: impl Fn(&str) -> bool) -> Option<&str> {
        let scores = self.decision_function(x);
        let mut best: Option<usize> = None;
        for (i, c) in self.classes.iter().enumerate() {
            if allowed(c) && best.is_none_or(|b| scores[i] > scores[b]) {
                best = Some(i);
            }
        }
        best.map(|i| self.classes[i].as_str())
    }
}

fn dual_cd(xs: &[SparseVec], y: &[f64], q: &[f64], dim: usize, config: SvmConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut w = vec![0.0; dim + 1];
    let mut alpha = vec![0.0; xs.len()];
    let mut order: Vec<usize> = (0..xs.len()).collect();
    for _ in 0..config.max_iter {
        order.shuffle(rng);
        let (mut max_pg, mut min_pg) = (f64::NEG_INFINITY, f64::INFINITY);
        for &i in &order {
            let g = y[i] * dot(&w, &xs[i]) - 1.0;
            let pg = if alpha[i] == 0.0 {
                g.min(0.0)
            } else if alpha[i] == config.c {
                g.max(0.0)
            } else {
                g
            };
            max_pg = max_pg.max(pg);
            min_pg = min_pg.min(pg);
            if pg != 0.0 {
                let old = alpha[i];
                alpha[i] = (old - g / q[i]).clamp(0.0, config.c);
                let delta = (alpha[i] - old) * y[i];
                for &(j, v) in &xs[i] {
                    w[j] += delta * v;
                }
                w[dim] += delta;
            }
        }
        if max_pg - min_pg < config.tolerance {
            break;
        }
    }
    w
}

/// Location label of a target: `none`, `rh:k` or `ch:l`.
pub fn location_label(t: &TableInstance) -> String {
    match (t.target.location, t.target.level) {
        (Location::RowHeader, Some(k)) => format!("rh:{k}"),
        (Location::ColumnHeader, Some(l)) => format!("ch:{l}"),
        _ => "none".to_string(),
    }
}

fn label_is_valid(label: &str, t: &TableInstance) -> bool {
    match label.split_once(':') {
        None => label == "none",
        Some((axis, k)) => {
            let Ok(k) = k.parse::<usize>() else { return false };
            let levels = if axis == "rh" { t.row_levels() } else { t.column_levels() };
            k >= 1 && k <= levels
        }
    }
}

/// Position-tagged tokens: `cap=`, `rh{k}=`, `ch{l}=`, plus level-count features.
pub fn location_features(t: &TableInstance) -> Vec<String> {
    let mut out: Vec<String> = t.caption.iter().map(|c| format!("cap={}", normalize_token(c))).collect();
    for (axis, prefix) in [(Axis::Row, "rh"), (Axis::Column, "ch")] {
        for (k, names) in t.levels(axis).iter().enumerate() {
            for name in names {
                for tok in crate::dataset::tokenize(name) {
                    out.push(format!("{prefix}{}={tok}", k + 1));
                }
            }
        }
    }
    out.push(format!("nrl={}", t.row_levels()));
    out.push(format!("ncl={}", t.column_levels()));
    out
}

fn caption_features(t: &TableInstance) -> Vec<String> {
    t.caption.iter().map(|c| normalize_token(c)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmBaseline {
    pub config: SvmConfig,
    location_tfidf: TfIdf,
    location: LinearSvm,
    token_tfidf: TfIdf,
    token: Option<LinearSvm>,
}

impl SvmBaseline {
    pub fn fit(tables: &[TableInstance], config: SvmConfig, seed: u64) -> Result<Self, SvmError> {
        let docs: Vec<Vec<String>> = tables.iter().map(location_features).collect();
        let location_tfidf = TfIdf::fit(&docs);
        let xs = docs
            .iter()
            .map(|d| location_tfidf.transform(d))
            .collect::<Result<Vec<_>, _>>()?;
        let labels: Vec<String> = tables.iter().map(location_label).collect();
        let location = LinearSvm::fit(&xs, &labels, location_tfidf.dim(), config, seed)?;

        let out: Vec<&TableInstance> = tables
            .iter()
            .filter(|t| t.target.location == Location::OutOfHeader)
            .collect();
        let token_docs: Vec<Vec<String>> = out.iter().map(|t| caption_features(t)).collect();
        let token_tfidf = TfIdf::fit(&token_docs);
        let token = if out.is_empty() {
            None
        } else {
            let xs = token_docs
                .iter()
                .map(|d| token_tfidf.transform(d))
                .collect::<Result<Vec<_>, _>>()?;
            let labels: Vec<String> = out.iter().map(|t| t.gold_token().unwrap_or_default()).collect();
            Some(LinearSvm::fit(&xs, &labels, token_tfidf.dim(), config, seed)?)
        };
        Ok(SvmBaseline {
            config,
            location_tfidf,
            location,
            token_tfidf,
            token,
        })
    }

    pub fn location_scores(&self, t: &TableInstance) -> Result<Vec<f64>, SvmError> {
        let x = self.location_tfidf.transform(&location_features(t))?;
        Ok(self.location.decision_function(&x))
    }

    pub fn predict(&self, t: &TableInstance) -> Result<Prediction, SvmError> {
        let x = self.location_tfidf.transform(&location_features(t))?;
        let label = self
            .location
            .predict_restricted(&x, |l| label_is_valid(l, t))
            .unwrap_or("none")
            .to_string();
        let (class, level, tokens) = match label.split_once(':') {
            Some((axis, k)) => {
                let k: usize = k.parse().expect("validated label");
                let (axis, class) = if axis == "rh" {
                    (Axis::Row, TableClass::LRow)
                } else {
                    (Axis::Column, TableClass::LCol)
                };
                (class, Some(k), t.level_names(axis, k).unwrap_or_default().to_vec())
            }
            None => {
                let token = match &self.token {
                    Some(svm) => {
                        let x = self.token_tfidf.transform(&caption_features(t))?;
                        svm.predict_restricted(&x, |_| true).unwrap_or(UNK_TOKEN).to_string()
                    }
                    None => UNK_TOKEN.to_string(),
                };
                let n = if t.n_cols() > 0 { t.n_cols() } else { t.n_rows() };
                (TableClass::Gen, None, vec![token; n.max(1)])
            }
        };
        Ok(Prediction {
            id: t.id.clone(),
            class,
            tokens,
            p_hloc: None,
            level,
        })
    }

    pub fn to_json(&self) -> Result<String, SvmError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, SvmError> {
        Ok(serde_json::from_str(s)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, SynthSpec};
    use crate::evaluation::EvalReport;
    use crate::table::fixtures::model_comparison;

    fn words(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn idf_and_normalization() {
        let docs = vec![words("a b"), words("a c"), words("a a d")];
        let tf = TfIdf::fit(&docs);
        assert!((tf.idf("a").unwrap() - 1.0).abs() < 1e-12);
        assert!((tf.idf("b").unwrap() - (2.0f64.ln() + 1.0)).abs() < 1e-12);
        let v = tf.transform(&words("a a b zzz")).unwrap();
        let norm: f64 = v.iter().map(|(_, x)| x * x).sum();
        assert!((norm - 1.0).abs() < 1e-12);
        // raw counts: a → 2·1, b → 1·(ln 2 + 1)
        let ratio = v[0].1 / v[1].1;
        assert!((ratio - 2.0 / (2.0f64.ln() + 1.0)).abs() < 1e-12);
        assert!(TfIdf::fit(&docs).transform(&words("zzz")).unwrap().is_empty());
    }

    #[test]
    fn transform_before_fit_fails() {
        assert!(matches!(TfIdf::default().transform(&words("a")), Err(SvmError::NotFitted)));
    }

    #[test]
    fn separable_data_is_fit() {
        let docs = vec![words("x x"), words("x"), words("y"), words("y y")];
        let tf = TfIdf::fit(&docs);
        let xs: Vec<_> = docs.iter().map(|d| tf.transform(d).unwrap()).collect();
        let labels: Vec<String> = ["p", "p", "q", "q"].iter().map(|s| s.to_string()).collect();
        let svm = LinearSvm::fit(&xs, &labels, tf.dim(), SvmConfig::default(), 0).unwrap();
        for (x, l) in xs.iter().zip(&labels) {
            assert_eq!(svm.predict_restricted(x, |_| true).unwrap(), l);
        }
        assert!(LinearSvm::fit(&[], &[], 0, SvmConfig::default(), 0).is_err());
    }

    #[test]
    fn refit_is_deterministic_and_round_trips() {
        let tables = generate_synthetic(3, 40, &SynthSpec::default());
        let a = SvmBaseline::fit(&tables, SvmConfig::default(), 9).unwrap();
        let b = SvmBaseline::fit(&tables, SvmConfig::default(), 9).unwrap();
        assert_eq!(a, b);
        for t in &tables {
            assert_eq!(a.location_scores(t).unwrap(), b.location_scores(t).unwrap());
        }
        let back = SvmBaseline::from_json(&a.to_json().unwrap()).unwrap();
        assert_eq!(back.predict(&tables[0]).unwrap(), a.predict(&tables[0]).unwrap());
    }

    #[test]
    fn predictions_respect_table_shape() {
        let train = generate_synthetic(3, 60, &SynthSpec::default());
        let model = SvmBaseline::fit(&train, SvmConfig::default(), 1).unwrap();
        let mut t = model_comparison();
        t.row_headers.clear();
        let p = model.predict(&t).unwrap();
        assert_ne!(p.class, TableClass::LRow);
        if let Some(k) = p.level {
            assert!(k <= t.column_levels());
        }
        let preds: Vec<_> = train.iter().map(|t| model.predict(t).unwrap()).collect();
        let report = EvalReport::build(&preds, &train, false, Default::default()).unwrap();
        assert!(report.acc_hloc > 0.8, "training-set location accuracy {}", report.acc_hloc);
    }

    #[test]
    fn labels() {
        let t = model_comparison();
        assert_eq!(location_label(&t), "ch:2");
        assert!(label_is_valid("rh:2", &t) && !label_is_valid("rh:3", &t) && label_is_valid("none", &t));
    }
}
