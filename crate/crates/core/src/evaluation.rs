//! Location and token accuracies, confusion matrices and the evaluation report.

use crate::table::{normalize_token, Location, TableInstance};
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("{predictions} predictions for {golds} gold tables")]
    LengthMismatch { predictions: usize, golds: usize },
    #[error("prediction {index} has id {predicted}, gold id is {gold}")]
    IdMismatch {
        index: usize,
        predicted: String,
        gold: String,
    },
    #[error("report invariant broken: {0}")]
    Invariant(String),
}

/// Resolved output classes, in confusion-matrix order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TableClass {
    LRow,
    LCol,
    CCapt,
    Gen,
}

impl TableClass {
    pub const ALL: [TableClass; 4] = [TableClass::LRow, TableClass::LCol, TableClass::CCapt, TableClass::Gen];

    pub fn index(self) -> usize {
        match self {
            TableClass::LRow => 0,
            TableClass::LCol => 1,
            TableClass::CCapt => 2,
            TableClass::Gen => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TableClass::LRow => "LRow",
            TableClass::LCol => "LCol",
            TableClass::CCapt => "CCapt",
            TableClass::Gen => "Gen",
        }
    }

    /// Gold class of a table. Out-of-header golds split on whether the token is in the caption.
    pub fn of_gold(t: &TableInstance) -> TableClass {
        match t.target.location {
            Location::RowHeader => TableClass::LRow,
            Location::ColumnHeader => TableClass::LCol,
            Location::OutOfHeader if t.gold_token_in_caption() => TableClass::CCapt,
            Location::OutOfHeader => TableClass::Gen,
        }
    }

    /// Folds CCapt into Gen, for models without a copy path.
    pub fn without_copy(self) -> TableClass {
        if self == TableClass::CCapt {
            TableClass::Gen
        } else {
            self
        }
    }
}

impl fmt::Display for TableClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One model's answer for one table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub class: TableClass,
    pub tokens: Vec<String>,
    /// Location probabilities in (capt, rh, ch) order, when the model has them.
    pub p_hloc: Option<[f64; 3]>,
    /// 1-based level within the predicted axis.
    pub level: Option<usize>,
}

impl Prediction {
    pub fn location(&self) -> Location {
        match self.class {
            TableClass::LRow => Location::RowHeader,
            TableClass::LCol => Location::ColumnHeader,
            TableClass::CCapt | TableClass::Gen => Location::OutOfHeader,
        }
    }

    /// A prediction that copies the gold answer.
    pub fn oracle(t: &TableInstance) -> Prediction {
        Prediction {
            id: t.id.clone(),
            class: TableClass::of_gold(t),
            tokens: t.target.tokens.clone(),
            p_hloc: None,
            level: t.target.level,
        }
    }
}

/// How out-of-header golds enter `acc_hlevel`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LevelConvention {
    /// Out-of-header gold counts as level-correct iff the prediction is out-of-header.
    #[default]
    LocationMatch,
    /// Only in-header golds enter the level accuracy.
    InHeaderOnly,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// `(acc_hloc, acc_hlevel)` over aligned `(location, level)` pairs.
pub fn location_accuracy(
    predictions: &[(Location, Option<usize>)],
    golds: &[(Location, Option<usize>)],
    convention: LevelConvention,
) -> Result<(f64, f64), EvalError> {
    if predictions.len() != golds.len() {
        return Err(EvalError::LengthMismatch {
            predictions: predictions.len(),
            golds: golds.len(),
        });
    }
    let mut loc_hits = 0;
    let mut level_hits = 0;
    let mut level_total = 0;
    for (p, g) in predictions.iter().zip(golds) {
        if p.0 == g.0 {
            loc_hits += 1;
        }
        match g.0 {
            Location::OutOfHeader => {
                if convention == LevelConvention::LocationMatch {
                    level_total += 1;
                    if p.0 == Location::OutOfHeader {
                        level_hits += 1;
                    }
                }
            }
            _ => {
                level_total += 1;
                if p.0 == g.0 && p.1 == g.1 {
                    level_hits += 1;
                }
            }
        }
    }
    Ok((ratio(loc_hits, predictions.len()), ratio(level_hits, level_total)))
}

/// Per-table token comparison counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TokenCounts {
    pub exact_pairs: usize,
    pub ocm_pairs: usize,
    /// `max(|predicted|, |gold|)`.
    pub denominator: usize,
    pub list_match: bool,
}

/// True iff the characters of `predicted` occur in `gold` in the same order.
pub fn ordered_char_match(predicted: &str, gold: &str) -> bool {
    let pred = normalize_token(predicted);
    let gold = normalize_token(gold);
    let mut rest = gold.chars();
    pred.chars().all(|c| rest.any(|g| g == c))
}

pub fn compare_tokens(predicted: &[String], gold: &[String]) -> TokenCounts {
    let mut counts = TokenCounts {
        denominator: predicted.len().max(gold.len()),
        ..TokenCounts::default()
    };
    for (p, g) in predicted.iter().zip(gold) {
        if normalize_token(p) == normalize_token(g) {
            counts.exact_pairs += 1;
        }
        if ordered_char_match(p, g) {
            counts.ocm_pairs += 1;
        }
    }
    counts.list_match = predicted.len() == gold.len() && counts.exact_pairs == gold.len();
    counts
}

/// `(acc_m_sm, acc_m_token_sm)`.
pub fn token_accuracy_sm(predictions: &[Vec<String>], golds: &[Vec<String>]) -> Result<(f64, f64), EvalError> {
    check_len(predictions.len(), golds.len())?;
    let mut lists = 0;
    let mut pairs = 0;
    let mut den = 0;
    for (p, g) in predictions.iter().zip(golds) {
        let c = compare_tokens(p, g);
        lists += c.list_match as usize;
        pairs += c.exact_pairs;
        den += c.denominator;
    }
    Ok((ratio(lists, predictions.len()), ratio(pairs, den)))
}

/// `acc_m_token_ocm`, with the same pair alignment and denominator as the string-match score.
pub fn token_accuracy_ocm(predictions: &[Vec<String>], golds: &[Vec<String>]) -> Result<f64, EvalError> {
    check_len(predictions.len(), golds.len())?;
    let (hits, den) = predictions
        .iter()
        .zip(golds)
        .map(|(p, g)| compare_tokens(p, g))
        .fold((0, 0), |(h, d), c| (h + c.ocm_pairs, d + c.denominator));
    Ok(ratio(hits, den))
}

fn check_len(p: usize, g: usize) -> Result<(), EvalError> {
    if p != g {
        Err(EvalError::LengthMismatch { predictions: p, golds: g })
    } else {
        Ok(())
    }
}

/// Rows are actual classes, columns predicted, both in [`TableClass::ALL`] order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix(pub [[usize; 4]; 4]);

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.0.iter().flatten().sum()
    }

    pub fn get(&self, actual: TableClass, predicted: TableClass) -> usize {
        self.0[actual.index()][predicted.index()]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("actual\\predicted");
        for c in TableClass::ALL {
            out.push(',');
            out.push_str(c.name());
        }
        out.push('\n');
        for a in TableClass::ALL {
            out.push_str(a.name());
            for p in TableClass::ALL {
                out.push_str(&format!(",{}", self.get(a, p)));
            }
            out.push('\n');
        }
        out
    }
}

pub fn confusion_matrix(predicted: &[TableClass], actual: &[TableClass]) -> Result<ConfusionMatrix, EvalError> {
    check_len(predicted.len(), actual.len())?;
    let mut m = ConfusionMatrix::default();
    for (p, a) in predicted.iter().zip(actual) {
        m.0[a.index()][p.index()] += 1;
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub acc_hloc: f64,
    pub acc_hlevel: f64,
    pub acc_m_sm: f64,
    pub acc_m_token_sm: f64,
    pub acc_m_token_ocm: f64,
    pub confusion: ConfusionMatrix,
    pub n_tables: usize,
    pub has_copy: bool,
    pub level_convention: LevelConvention,
    /// Free-form run metadata such as ablation flags.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl EvalReport {
    /// Scores `predictions` against `golds` (aligned by position and id).
    ///
    /// For models without a copy path CCapt is folded into Gen on both axes.
    pub fn build(
        predictions: &[Prediction],
        golds: &[TableInstance],
        has_copy: bool,
        convention: LevelConvention,
    ) -> Result<EvalReport, EvalError> {
        check_len(predictions.len(), golds.len())?;
        for (i, (p, g)) in predictions.iter().zip(golds).enumerate() {
            if p.id != g.id {
                return Err(EvalError::IdMismatch {
                    index: i,
                    predicted: p.id.clone(),
                    gold: g.id.clone(),
                });
            }
        }
        let pred_loc: Vec<_> = predictions.iter().map(|p| (p.location(), p.level)).collect();
        let gold_loc: Vec<_> = golds.iter().map(|g| (g.target.location, g.target.level)).collect();
        let (acc_hloc, acc_hlevel) = location_accuracy(&pred_loc, &gold_loc, convention)?;

        let pred_tokens: Vec<Vec<String>> = predictions.iter().map(|p| p.tokens.clone()).collect();
        let gold_tokens: Vec<Vec<String>> = golds.iter().map(|g| g.target.tokens.clone()).collect();
        let (acc_m_sm, acc_m_token_sm) = token_accuracy_sm(&pred_tokens, &gold_tokens)?;
        let acc_m_token_ocm = token_accuracy_ocm(&pred_tokens, &gold_tokens)?;

        let fold = |c: TableClass| if has_copy { c } else { c.without_copy() };
        let pred_classes: Vec<_> = predictions.iter().map(|p| fold(p.class)).collect();
        let gold_classes: Vec<_> = golds.iter().map(|g| fold(TableClass::of_gold(g))).collect();
        let confusion = confusion_matrix(&pred_classes, &gold_classes)?;

        let report = EvalReport {
            acc_hloc,
            acc_hlevel,
            acc_m_sm,
            acc_m_token_sm,
            acc_m_token_ocm,
            confusion,
            n_tables: golds.len(),
            has_copy,
            level_convention: convention,
            notes: Vec::new(),
        };
        report.check()?;
        Ok(report)
    }

    /// Verifies the report-level invariants.
    pub fn check(&self) -> Result<(), EvalError> {
        let accs = [
            self.acc_hloc,
            self.acc_hlevel,
            self.acc_m_sm,
            self.acc_m_token_sm,
            self.acc_m_token_ocm,
        ];
        if accs.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(EvalError::Invariant(format!("accuracy outside [0, 1]: {accs:?}")));
        }
        if self.acc_m_token_ocm < self.acc_m_token_sm {
            return Err(EvalError::Invariant(format!(
                "acc_m_token_ocm {} < acc_m_token_sm {}",
                self.acc_m_token_ocm, self.acc_m_token_sm
            )));
        }
        if self.confusion.total() != self.n_tables {
            return Err(EvalError::Invariant(format!(
                "confusion matrix holds {} tables, expected {}",
                self.confusion.total(),
                self.n_tables
            )));
        }
        if !self.has_copy
            && TableClass::ALL
                .iter()
                .any(|&c| self.confusion.get(TableClass::CCapt, c) + self.confusion.get(c, TableClass::CCapt) > 0)
        {
            return Err(EvalError::Invariant("CCapt entries in a copy-free report".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Percentages in the usual column order.
    pub fn summary_line(&self) -> String {
        format!(
            "acc_hloc {:.2}  acc_hlevel {:.2}  acc_m_sm {:.2}  acc_m_token_sm {:.2}  acc_m_token_ocm {:.2}  (n={})",
            100.0 * self.acc_hloc,
            100.0 * self.acc_hlevel,
            100.0 * self.acc_m_sm,
            100.0 * self.acc_m_token_sm,
            100.0 * self.acc_m_token_ocm,
            self.n_tables
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::fixtures::model_comparison;

    fn toks(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn location_examples() {
        let p = [
            (Location::ColumnHeader, Some(1)),
            (Location::RowHeader, Some(1)),
            (Location::OutOfHeader, None),
        ];
        let g = [
            (Location::ColumnHeader, Some(1)),
            (Location::ColumnHeader, Some(1)),
            (Location::OutOfHeader, None),
        ];
        let (hloc, hlevel) = location_accuracy(&p, &g, LevelConvention::LocationMatch).unwrap();
        assert!((hloc - 2.0 / 3.0).abs() < 1e-12);
        assert!((hlevel - 2.0 / 3.0).abs() < 1e-12);

        let (hloc, hlevel) = location_accuracy(
            &[(Location::ColumnHeader, Some(2))],
            &[(Location::ColumnHeader, Some(1))],
            LevelConvention::LocationMatch,
        )
        .unwrap();
        assert_eq!((hloc, hlevel), (1.0, 0.0));

        let (hloc, hlevel) = location_accuracy(&g, &g, LevelConvention::LocationMatch).unwrap();
        assert_eq!((hloc, hlevel), (1.0, 1.0));

        assert!(location_accuracy(&g[..1], &g, LevelConvention::LocationMatch).is_err());
    }

    #[test]
    fn in_header_only_convention_skips_caption_golds() {
        let p = [(Location::RowHeader, Some(1)), (Location::RowHeader, Some(1))];
        let g = [(Location::RowHeader, Some(1)), (Location::OutOfHeader, None)];
        let (_, lvl) = location_accuracy(&p, &g, LevelConvention::InHeaderOnly).unwrap();
        assert_eq!(lvl, 1.0);
        let (_, lvl) = location_accuracy(&p, &g, LevelConvention::LocationMatch).unwrap();
        assert_eq!(lvl, 0.5);
    }

    #[test]
    fn f1_versus_f_dash_1() {
        let p = vec![toks(&["f1", "f1", "f1"])];
        let g = vec![toks(&["f-1", "f-1", "f-1"])];
        assert_eq!(token_accuracy_sm(&p, &g).unwrap(), (0.0, 0.0));
        assert_eq!(token_accuracy_ocm(&p, &g).unwrap(), 1.0);
    }

    #[test]
    fn token_sm_examples() {
        let same = vec![toks(&["prec", "rec"])];
        assert_eq!(token_accuracy_sm(&same, &same).unwrap(), (1.0, 1.0));
        let p = vec![toks(&["p", "rec"])];
        let g = vec![toks(&["prec", "rec"])];
        assert_eq!(token_accuracy_sm(&p, &g).unwrap(), (0.0, 0.5));
    }

    #[test]
    fn length_mismatch_counts_both_directions() {
        let p = vec![toks(&["bleu"])];
        let g = vec![toks(&["bleu", "bleu", "bleu"])];
        assert_eq!(token_accuracy_sm(&p, &g).unwrap(), (0.0, 1.0 / 3.0));
        let (_, tok) = token_accuracy_sm(&g, &p).unwrap();
        assert_eq!(tok, 1.0 / 3.0);
    }

    #[test]
    fn ocm_examples() {
        assert!(ordered_char_match("RG1", "ROUGE-1"));
        assert!(ordered_char_match("prec", "precision"));
        assert!(ordered_char_match("rec", "prec"));
        assert!(!ordered_char_match("1rg", "rouge-1"));
        assert!(!ordered_char_match("precision", "prec"));
    }

    #[test]
    fn confusion_examples() {
        let all = TableClass::ALL;
        let m = confusion_matrix(&all, &all).unwrap();
        for a in all {
            for p in all {
                assert_eq!(m.get(a, p), usize::from(a == p));
            }
        }
        let csv = m.to_csv();
        assert!(csv.starts_with("actual\\predicted,LRow,LCol,CCapt,Gen\n"));
        assert!(csv.contains("\nLCol,0,1,0,0\n"));
    }

    #[test]
    fn oracle_report_is_perfect() {
        let t = model_comparison();
        let r = EvalReport::build(&[Prediction::oracle(&t)], &[t], true, LevelConvention::LocationMatch).unwrap();
        assert_eq!(
            [r.acc_hloc, r.acc_hlevel, r.acc_m_sm, r.acc_m_token_sm, r.acc_m_token_ocm],
            [1.0; 5]
        );
        assert_eq!(r.confusion.get(TableClass::LCol, TableClass::LCol), 1);
    }

    #[test]
    fn copy_free_reports_fold_ccapt() {
        let mut t = model_comparison();
        t.target = crate::table::MetricTarget {
            location: Location::OutOfHeader,
            level: None,
            tokens: vec!["task".into(); 4],
        };
        assert_eq!(TableClass::of_gold(&t), TableClass::CCapt);
        let p = Prediction::oracle(&t);
        let r = EvalReport::build(std::slice::from_ref(&p), std::slice::from_ref(&t), false, LevelConvention::LocationMatch)
            .unwrap();
        assert_eq!(r.confusion.get(TableClass::Gen, TableClass::Gen), 1);
        let col: usize = TableClass::ALL.iter().map(|&a| r.confusion.get(a, TableClass::CCapt)).sum();
        assert_eq!(col, 0);
    }

    #[test]
    fn id_misalignment_is_rejected() {
        let t = model_comparison();
        let mut p = Prediction::oracle(&t);
        p.id = "other".into();
        assert!(matches!(
            EvalReport::build(&[p], &[t], true, LevelConvention::LocationMatch),
            Err(EvalError::IdMismatch { .. })
        ));
    }
}
