//! Multi-level header tables and their metric-type targets.
//!
//! A table carries a tokenized caption, `u` levels of row headers (each with
//! one name per row), `v` levels of column headers (one name per column) and
//! the cell grid. Levels are 1-based throughout the public API.

use serde::{Deserialize, Serialize};
use std::fmt;

/// Header axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Row,
    Column,
}

/// Where the gold metric-type lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Location {
    #[serde(rename = "rh")]
    RowHeader,
    #[serde(rename = "ch")]
    ColumnHeader,
    #[serde(rename = "none")]
    OutOfHeader,
}

impl Location {
    pub fn axis(self) -> Option<Axis> {
        match self {
            Location::RowHeader => Some(Axis::Row),
            Location::ColumnHeader => Some(Axis::Column),
            Location::OutOfHeader => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Location::RowHeader => "rh",
            Location::ColumnHeader => "ch",
            Location::OutOfHeader => "none",
        }
    }

    pub fn parse(s: &str) -> Option<Location> {
        match s {
            "rh" => Some(Location::RowHeader),
            "ch" => Some(Location::ColumnHeader),
            "none" => Some(Location::OutOfHeader),
            _ => None,
        }
    }
}

/// The three outputs of the header-location gate, in gate order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LocationClass {
    Capt,
    Rh,
    Ch,
}

impl LocationClass {
    pub const ALL: [LocationClass; 3] = [LocationClass::Capt, LocationClass::Rh, LocationClass::Ch];

    pub fn index(self) -> usize {
        match self {
            LocationClass::Capt => 0,
            LocationClass::Rh => 1,
            LocationClass::Ch => 2,
        }
    }

    pub fn from_index(i: usize) -> LocationClass {
        Self::ALL[i]
    }
}

impl From<Location> for LocationClass {
    fn from(l: Location) -> Self {
        match l {
            Location::RowHeader => LocationClass::Rh,
            Location::ColumnHeader => LocationClass::Ch,
            Location::OutOfHeader => LocationClass::Capt,
        }
    }
}

impl From<LocationClass> for Location {
    fn from(c: LocationClass) -> Self {
        match c {
            LocationClass::Rh => Location::RowHeader,
            LocationClass::Ch => Location::ColumnHeader,
            LocationClass::Capt => Location::OutOfHeader,
        }
    }
}

/// Gold answer for one table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricTarget {
    pub location: Location,
    /// 1-based header level; present iff `location` is in a header.
    pub level: Option<usize>,
    pub tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableInstance {
    pub id: String,
    /// Lowercased caption tokens.
    pub caption: Vec<String>,
    pub row_headers: Vec<Vec<String>>,
    pub column_headers: Vec<Vec<String>>,
    pub cells: Vec<Vec<String>>,
    pub target: MetricTarget,
}

/// A single rule broken by a table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: &'static str,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

/// One entry of the canonical level ordering (row levels first, then column levels).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlatLevel<'a> {
    pub axis: Axis,
    /// 1-based level within its axis.
    pub level: usize,
    pub names: &'a [String],
}

impl TableInstance {
    /// `u`, the number of row-header levels.
    pub fn row_levels(&self) -> usize {
        self.row_headers.len()
    }

    /// `v`, the number of column-header levels.
    pub fn column_levels(&self) -> usize {
        self.column_headers.len()
    }

    pub fn levels(&self, axis: Axis) -> &[Vec<String>] {
        match axis {
            Axis::Row => &self.row_headers,
            Axis::Column => &self.column_headers,
        }
    }

    /// `n_r`: the cell grid's row count, or the first row level's length without cells.
    pub fn n_rows(&self) -> usize {
        if self.cells.is_empty() {
            self.row_headers.first().map_or(0, Vec::len)
        } else {
            self.cells.len()
        }
    }

    /// `n_c`: the cell grid's column count, or the first column level's length without cells.
    pub fn n_cols(&self) -> usize {
        match self.cells.first() {
            Some(row) => row.len(),
            None => self.column_headers.first().map_or(0, Vec::len),
        }
    }

    /// Header names at a 1-based level, if that level exists.
    pub fn level_names(&self, axis: Axis, level: usize) -> Option<&[String]> {
        if level == 0 {
            return None;
        }
        self.levels(axis).get(level - 1).map(Vec::as_slice)
    }

    /// Checks every structural rule and returns what is broken. Never fails.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut push = |field: &'static str, rule: String| out.push(Violation { field, rule });

        if self.caption.is_empty() {
            push("caption", "caption must be non-empty".into());
        }
        let u = self.row_levels();
        let v = self.column_levels();
        if u + v == 0 {
            push("headers", "table needs at least one header level".into());
        }

        let n_r = self.n_rows();
        let n_c = self.n_cols();
        for (k, level) in self.row_headers.iter().enumerate() {
            if level.len() != n_r {
                push(
                    "row_headers",
                    format!("level {} has {} entries, expected n_r = {}", k + 1, level.len(), n_r),
                );
            }
            if level.iter().any(|n| n.trim().is_empty()) {
                push("row_headers", format!("level {} contains an empty header name", k + 1));
            }
        }
        for (l, level) in self.column_headers.iter().enumerate() {
            if level.len() != n_c {
                push(
                    "column_headers",
                    format!("level {} has {} entries, expected n_c = {}", l + 1, level.len(), n_c),
                );
            }
            if level.iter().any(|n| n.trim().is_empty()) {
                push("column_headers", format!("level {} contains an empty header name", l + 1));
            }
        }
        if self.cells.iter().any(|r| r.len() != n_c) {
            push("cells", format!("every cell row must have n_c = {} entries", n_c));
        }

        let t = &self.target;
        if t.tokens.is_empty() {
            push("target.tokens", "metric token list must be non-empty".into());
        }
        match t.location {
            Location::RowHeader | Location::ColumnHeader => {
                let axis = t.location.axis().expect("in-header location");
                let (count, expected_len, field) = match axis {
                    Axis::Row => (u, n_r, "target.level"),
                    Axis::Column => (v, n_c, "target.level"),
                };
                match t.level {
                    None => push(field, "in-header target needs a level".into()),
                    Some(lvl) if lvl == 0 || lvl > count => push(
                        field,
                        format!("level {} outside 1..={} for axis {:?}", lvl, count, axis),
                    ),
                    Some(lvl) => {
                        if t.tokens.len() != expected_len {
                            push(
                                "target.tokens",
                                format!(
                                    "{} tokens, expected {} for {:?} target",
                                    t.tokens.len(),
                                    expected_len,
                                    axis
                                ),
                            );
                        } else if self.levels(axis)[lvl - 1] != t.tokens {
                            push(
                                "target.tokens",
                                format!("tokens differ from {:?} header names at level {}", axis, lvl),
                            );
                        }
                    }
                }
            }
            Location::OutOfHeader => {
                if t.level.is_some() {
                    push("target.level", "out-of-header target must not carry a level".into());
                }
                if let Some(first) = t.tokens.first() {
                    if t.tokens.iter().any(|w| w != first) {
                        push(
                            "target.tokens",
                            "out-of-header metric tokens must all be identical".into(),
                        );
                    }
                    if first.trim().is_empty() {
                        push("target.tokens", "metric token must be non-empty".into());
                    }
                }
            }
        }
        out
    }

    pub fn is_valid(&self) -> bool {
        self.validate().is_empty()
    }

    /// Row levels `1..=u` followed by column levels `1..=v`.
    pub fn flatten_levels(&self) -> Vec<FlatLevel<'_>> {
        let rows = self.row_headers.iter().enumerate().map(|(k, names)| FlatLevel {
            axis: Axis::Row,
            level: k + 1,
            names,
        });
        let cols = self.column_headers.iter().enumerate().map(|(l, names)| FlatLevel {
            axis: Axis::Column,
            level: l + 1,
            names,
        });
        rows.chain(cols).collect()
    }

    /// 1-based position of `(axis, level)` in [`flatten_levels`](Self::flatten_levels).
    pub fn flat_index(&self, axis: Axis, level: usize) -> Option<usize> {
        let count = self.levels(axis).len();
        if level == 0 || level > count {
            return None;
        }
        Some(match axis {
            Axis::Row => level,
            Axis::Column => self.row_levels() + level,
        })
    }

    /// Inverse of [`flat_index`](Self::flat_index).
    pub fn unflatten(&self, flat: usize) -> Option<(Axis, usize)> {
        let u = self.row_levels();
        if flat == 0 || flat > u + self.column_levels() {
            None
        } else if flat <= u {
            Some((Axis::Row, flat))
        } else {
            Some((Axis::Column, flat - u))
        }
    }

    /// Flat gold level index, for in-header targets.
    pub fn gold_flat_index(&self) -> Option<usize> {
        let axis = self.target.location.axis()?;
        self.flat_index(axis, self.target.level?)
    }

    /// Normalized gold metric token for out-of-header targets.
    pub fn gold_token(&self) -> Option<String> {
        self.target.tokens.first().map(|t| normalize_token(t))
    }

    /// Whether the normalized gold token appears among the caption tokens.
    pub fn gold_token_in_caption(&self) -> bool {
        match self.gold_token() {
            Some(tok) => self.caption.iter().any(|c| normalize_token(c) == tok),
            None => false,
        }
    }
}

/// Lowercase and trim; the comparison key for metric tokens.
pub fn normalize_token(s: &str) -> String {
    s.trim().to_lowercase()
}


#[cfg(test)]
mod tests {
    use super::fixtures::model_comparison;
    use super::*;

    #[test]
    fn two_level_example_is_valid() {
        assert!(model_comparison().validate().is_empty());
    }

    #[test]
    fn short_row_level_is_one_rectangularity_violation() {
        let mut t = model_comparison();
        t.row_headers[0].pop();
        let v = t.validate();
        assert_eq!(v.len(), 1, "{v:?}");
        assert_eq!(v[0].field, "row_headers");
    }

    #[test]
    fn mixed_out_of_header_tokens_violate_uniformity() {
        let mut t = model_comparison();
        t.target = MetricTarget {
            location: Location::OutOfHeader,
            level: None,
            tokens: vec!["bleu".into(), "rouge".into()],
        };
        let v = t.validate();
        assert_eq!(v.len(), 1, "{v:?}");
        assert!(v[0].rule.contains("identical"));
    }

    #[test]
    fn level_and_token_mismatches_are_reported() {
        let mut t = model_comparison();
        t.target.level = Some(3);
        assert_eq!(t.validate().len(), 1);
        t.target.level = Some(1);
        assert_eq!(t.validate().len(), 1);
        t.target.level = None;
        assert_eq!(t.validate().len(), 1);
    }

    #[test]
    fn empty_caption_and_blank_names() {
        let mut t = model_comparison();
        t.caption.clear();
        t.column_headers[0][1] = "  ".into();
        let fields: Vec<_> = t.validate().iter().map(|v| v.field).collect();
        assert_eq!(fields, vec!["caption", "column_headers"]);
    }

    #[test]
    fn flatten_orders_rows_then_columns() {
        let t = model_comparison();
        let flat = t.flatten_levels();
        let keys: Vec<_> = flat.iter().map(|f| (f.axis, f.level)).collect();
        assert_eq!(
            keys,
            vec![(Axis::Row, 1), (Axis::Row, 2), (Axis::Column, 1), (Axis::Column, 2)]
        );
        assert_eq!(t.gold_flat_index(), Some(4));
        for (i, f) in flat.iter().enumerate() {
            assert_eq!(t.flat_index(f.axis, f.level), Some(i + 1));
            assert_eq!(t.unflatten(i + 1), Some((f.axis, f.level)));
        }
    }

    #[test]
    fn column_only_table_flattens_to_one_entry() {
        let mut t = model_comparison();
        t.row_headers.clear();
        t.column_headers.remove(0);
        t.target.level = Some(1);
        assert!(t.is_valid(), "{:?}", t.validate());
        let flat = t.flatten_levels();
        assert_eq!(flat.len(), 1);
        assert_eq!((flat[0].axis, flat[0].level), (Axis::Column, 1));
    }

    #[test]
    fn location_class_round_trip() {
        for c in LocationClass::ALL {
            assert_eq!(LocationClass::from(Location::from(c)), c);
            assert_eq!(LocationClass::from_index(c.index()), c);
        }
    }
}
