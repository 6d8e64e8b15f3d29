//! In-memory property graph over string-labelled entities.
//!
//! The graph is a set of directed tuples `(head, relation, tail)`, each
//! optionally annotated with a flat string-to-string property map. Tuples
//! are deduplicated on insert (property maps participate in identity), every
//! label is matched exactly and case-sensitively, and the whole structure is
//! immutable once loaded. Lookups the agent needs while exploring, "is this
//! entity a head", "which relations leave it", "which tuples match
//! `(head, relation)`", are answered from indexes built at load time.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One directed edge: `head --relation--> tail`, plus optional properties.
///
/// Ordering and equality cover all four fields, so a `BTreeSet<Tuple>`
/// iterates in a stable order and two tuples differing only in properties
/// are distinct edges.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Tuple {
    #[serde(rename = "h")]
    pub head: String,
    #[serde(rename = "r")]
    pub relation: String,
    #[serde(rename = "t")]
    pub tail: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub props: BTreeMap<String, String>,
}

impl Tuple {
    pub fn new(
        head: impl Into<String>,
        relation: impl Into<String>,
        tail: impl Into<String>,
    ) -> Self {
        Tuple {
            head: head.into(),
            relation: relation.into(),
            tail: tail.into(),
            props: BTreeMap::new(),
        }
    }

    pub fn with_prop(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.props.insert(key.into(), value.into());
        self
    }
}

impl fmt::Display for Tuple {
    /// Renders as `(head, relation, tail)`, with properties appended as
    /// `[k=v; k=v]` when present. This is the form shown to the model.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.head, self.relation, self.tail)?;
        if !self.props.is_empty() {
            let rendered: Vec<String> = self
                .props
                .iter()
                .map(|(k, v)| format!("{}={}", k, v))
                .collect();
            write!(f, " [{}]", rendered.join("; "))?;
        }
        Ok(())
    }
}

/// Input syntaxes accepted by [`PropertyGraph::load`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphFormat {
    /// One JSON object per line: `{"h": ..., "r": ..., "t": ..., "props": {...}}`.
    /// `props` is optional and must map string keys to string values.
    Jsonl,
    /// Three tab-separated columns per line: head, relation, tail. No properties.
    Tsv,
}

impl GraphFormat {
    /// Picks a format from a file extension (`.jsonl`/`.json` vs `.tsv`).
    pub fn from_path(path: &Path) -> Result<GraphFormat, GraphError> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => Ok(GraphFormat::Jsonl),
            Some("tsv") => Ok(GraphFormat::Tsv),
            other => Err(GraphError::UnknownFormat {
                extension: other.unwrap_or("").to_string(),
            }),
        }
    }
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("empty graph: input contained no tuples")]
    EmptyGraph,
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("cannot infer graph format from extension {extension:?} (expected .jsonl or .tsv)")]
    UnknownFormat { extension: String },
    #[error("io error reading graph: {0}")]
    Io(#[from] io::Error),
}

// Wire form of a JSONL record. `props` is kept as raw JSON so that
// non-string values can be rejected with a line number instead of a
// generic serde error.
#[derive(Deserialize)]
struct JsonlRecord {
    h: String,
    r: String,
    t: String,
    #[serde(default)]
    props: Option<serde_json::Map<String, serde_json::Value>>,
}

/// Immutable, indexed collection of [`Tuple`]s.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PropertyGraph {
    tuples: BTreeSet<Tuple>,
    entities: BTreeSet<String>,
    relations: BTreeSet<String>,
    // head -> labels of relations leaving it
    head_relations: BTreeMap<String, BTreeSet<String>>,
    // (head, relation) -> matching tuples
    pair_index: BTreeMap<(String, String), BTreeSet<Tuple>>,
}

impl PropertyGraph {
    /// Builds a graph from an iterator of tuples, deduplicating and
    /// validating as it goes. Fails on an empty collection, an empty head,
    /// or an empty relation label.
    pub fn from_tuples<I>(tuples: I) -> Result<PropertyGraph, GraphError>
    where
        I: IntoIterator<Item = Tuple>,
    {
        let mut set = BTreeSet::new();
        for (i, tuple) in tuples.into_iter().enumerate() {
            validate_tuple(&tuple, i + 1)?;
            set.insert(tuple);
        }
        Self::from_set(set)
    }

    fn from_set(tuples: BTreeSet<Tuple>) -> Result<PropertyGraph, GraphError> {
        if tuples.is_empty() {
            return Err(GraphError::EmptyGraph);
        }
        let mut entities = BTreeSet::new();
        let mut relations = BTreeSet::new();
        let mut head_relations: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        let mut pair_index: BTreeMap<(String, String), BTreeSet<Tuple>> = BTreeMap::new();
        for tuple in &tuples {
            entities.insert(tuple.head.clone());
            entities.insert(tuple.tail.clone());
            relations.insert(tuple.relation.clone());
            head_relations
                .entry(tuple.head.clone())
                .or_default()
                .insert(tuple.relation.clone());
            pair_index
                .entry((tuple.head.clone(), tuple.relation.clone()))
                .or_default()
                .insert(tuple.clone());
        }
        Ok(PropertyGraph {
            tuples,
            entities,
            relations,
            head_relations,
            pair_index,
        })
    }

    /// Reads a graph from a buffered reader in the given format.
    /// Blank lines are skipped; any malformed line aborts the load with its
    /// line number.
    pub fn load(reader: impl BufRead, format: GraphFormat) -> Result<PropertyGraph, GraphError> {
        let mut set = BTreeSet::new();
        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx + 1;
            let line = line?;
            let text = line.trim_end_matches('\r');
            if text.trim().is_empty() {
                continue;
            }
            let tuple = match format {
                GraphFormat::Jsonl => parse_jsonl_line(text, line_no)?,
                GraphFormat::Tsv => parse_tsv_line(text, line_no)?,
            };
            validate_tuple(&tuple, line_no)?;
            set.insert(tuple);
        }
        Self::from_set(set)
    }

    /// Loads a graph file, inferring the format from the extension.
    pub fn load_path(path: impl AsRef<Path>) -> Result<PropertyGraph, GraphError> {
        let path = path.as_ref();
        let format = GraphFormat::from_path(path)?;
        let file = File::open(path)?;
        Self::load(BufReader::new(file), format)
    }

    /// Writes the graph back out as JSONL, one tuple per line in stable
    /// (sorted) order. Loading the output reproduces the graph exactly.
    pub fn write_jsonl(&self, mut writer: impl Write) -> io::Result<()> {
        for tuple in &self.tuples {
            let line = serde_json::to_string(tuple).expect("tuple serialization cannot fail");
            writeln!(writer, "{}", line)?;
        }
        Ok(())
    }

    pub fn tuple_count(&self) -> usize {
        self.tuples.len()
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    /// All tuples in sorted order.
    pub fn tuples(&self) -> impl Iterator<Item = &Tuple> {
        self.tuples.iter()
    }

    /// All entity labels (heads and tails), sorted.
    pub fn entities(&self) -> impl Iterator<Item = &str> {
        self.entities.iter().map(String::as_str)
    }

    /// All relation labels in use, sorted.
    pub fn relation_labels(&self) -> impl Iterator<Item = &str> {
        self.relations.iter().map(String::as_str)
    }

    /// True when `entity` is the head of at least one tuple. Matching is
    /// exact and case-sensitive; there is no normalization step anywhere in
    /// the lookup path.
    pub fn has_head(&self, entity: &str) -> bool {
        self.head_relations.contains_key(entity)
    }

    /// Labels of relations leaving `anchor`, sorted. Empty when `anchor` is
    /// not a head entity.
    pub fn outgoing_relations(&self, anchor: &str) -> BTreeSet<String> {
        self.head_relations.get(anchor).cloned().unwrap_or_default()
    }

    /// Every tuple matching `(anchor, relation)` exactly, sorted. Empty when
    /// nothing matches.
    pub fn triples(&self, anchor: &str, relation: &str) -> BTreeSet<Tuple> {
        self.pair_index
            .get(&(anchor.to_string(), relation.to_string()))
            .cloned()
            .unwrap_or_default()
    }
}

fn validate_tuple(tuple: &Tuple, line: usize) -> Result<(), GraphError> {
    if tuple.head.is_empty() {
        return Err(GraphError::Malformed {
            line,
            reason: "head must be nonempty".into(),
        });
    }
    if tuple.relation.is_empty() {
        return Err(GraphError::Malformed {
            line,
            reason: "relation must be nonempty".into(),
        });
    }
    Ok(())
}

fn parse_jsonl_line(text: &str, line: usize) -> Result<Tuple, GraphError> {
    let record: JsonlRecord =
        serde_json::from_str(text).map_err(|e| GraphError::Malformed {
            line,
            reason: e.to_string(),
        })?;
    let mut props = BTreeMap::new();
    if let Some(map) = record.props {
        for (key, value) in map {
            match value {
                serde_json::Value::String(s) => {
                    props.insert(key, s);
                }
                other => {
                    return Err(GraphError::Malformed {
                        line,
                        reason: format!(
                            "property {:?} must be a string, got {}",
                            key,
                            json_kind(&other)
                        ),
                    });
                }
            }
        }
    }
    Ok(Tuple {
        head: record.h,
        relation: record.r,
        tail: record.t,
        props,
    })
}

fn parse_tsv_line(text: &str, line: usize) -> Result<Tuple, GraphError> {
    let fields: Vec<&str> = text.split('\t').collect();
    if fields.len() != 3 {
        return Err(GraphError::Malformed {
            line,
            reason: format!("expected 3 tab-separated fields, got {}", fields.len()),
        });
    }
    Ok(Tuple::new(fields[0], fields[1], fields[2]))
}

fn json_kind(value: &serde_json::Value) -> &'static str {
    match value {
        serde_json::Value::Null => "null",
        serde_json::Value::Bool(_) => "a boolean",
        serde_json::Value::Number(_) => "a number",
        serde_json::Value::String(_) => "a string",
        serde_json::Value::Array(_) => "an array",
        serde_json::Value::Object(_) => "an object",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Cursor;

    fn kelidar_fixture() -> PropertyGraph {
        PropertyGraph::from_tuples(vec![
            Tuple::new("Mahmoud Dowlatabadi", "notable work", "Kelidar"),
            Tuple::new("Mahmoud Dowlatabadi", "genre", "short story"),
            Tuple::new("Kelidar", "genre", "novel"),
            Tuple::new("The Makioka Sisters", "genre", "novel"),
        ])
        .unwrap()
    }

    #[test]
    fn indexes_answer_basic_queries() {
        let g = kelidar_fixture();
        assert_eq!(g.tuple_count(), 4);
        assert!(g.has_head("Kelidar"));
        assert!(!g.has_head("novel")); // tail-only entity is not a head
        assert!(!g.has_head("kelidar")); // case matters

        let rels = g.outgoing_relations("Mahmoud Dowlatabadi");
        assert_eq!(
            rels.iter().collect::<Vec<_>>(),
            vec!["genre", "notable work"]
        );

        let hits = g.triples("Kelidar", "genre");
        assert_eq!(hits.len(), 1);
        assert_eq!(hits.iter().next().unwrap().tail, "novel");
        assert!(g.triples("Kelidar", "author").is_empty());
        assert!(g.triples("nobody", "genre").is_empty());
    }

    #[test]
    fn duplicate_tuples_collapse() {
        let g = PropertyGraph::from_tuples(vec![
            Tuple::new("a", "r", "b"),
            Tuple::new("a", "r", "b"),
            Tuple::new("a", "r", "b").with_prop("since", "1990"),
        ])
        .unwrap();
        // the bare tuple dedups; the propertied variant is a distinct edge
        assert_eq!(g.tuple_count(), 2);
        assert_eq!(g.triples("a", "r").len(), 2);
    }

    #[test]
    fn empty_input_is_an_error() {
        let err = PropertyGraph::load(Cursor::new(""), GraphFormat::Jsonl).unwrap_err();
        assert!(matches!(err, GraphError::EmptyGraph));
        let err = PropertyGraph::from_tuples(Vec::new()).unwrap_err();
        assert!(matches!(err, GraphError::EmptyGraph));
    }

    #[test]
    fn malformed_lines_report_position() {
        let input = "{\"h\":\"a\",\"r\":\"r\",\"t\":\"b\"}\nnot json\n";
        let err = PropertyGraph::load(Cursor::new(input), GraphFormat::Jsonl).unwrap_err();
        match err {
            GraphError::Malformed { line, .. } => assert_eq!(line, 2),
            other => panic!("expected Malformed, got {other:?}"),
        }

        let err =
            PropertyGraph::load(Cursor::new("a\tb\n"), GraphFormat::Tsv).unwrap_err();
        match err {
            GraphError::Malformed { line, reason } => {
                assert_eq!(line, 1);
                assert!(reason.contains("3 tab-separated"));
            }
            other => panic!("expected Malformed, got {other:?}"),
        }
    }

    #[test]
    fn nested_props_rejected() {
        let input = r#"{"h":"a","r":"r","t":"b","props":{"year":1990}}"#;
        let err = PropertyGraph::load(Cursor::new(input), GraphFormat::Jsonl).unwrap_err();
        match err {
            GraphError::Malformed { line, reason } => {
                assert_eq!(line, 1);
                assert!(reason.contains("year"));
                assert!(reason.contains("a number"));
            }
            other => panic!("expected Malformed, got {other:?}"),
        }
    }

    #[test]
    fn empty_head_or_relation_rejected() {
        let input = r#"{"h":"","r":"r","t":"b"}"#;
        assert!(PropertyGraph::load(Cursor::new(input), GraphFormat::Jsonl).is_err());
        let input = r#"{"h":"a","r":"","t":"b"}"#;
        assert!(PropertyGraph::load(Cursor::new(input), GraphFormat::Jsonl).is_err());
        // empty tail is allowed: tails may be literals
        let input = r#"{"h":"a","r":"r","t":""}"#;
        assert!(PropertyGraph::load(Cursor::new(input), GraphFormat::Jsonl).is_ok());
    }

    #[test]
    fn blank_lines_and_crlf_tolerated() {
        let input = "a\tr\tb\r\n\n  \nc\tr\td\n";
        let g = PropertyGraph::load(Cursor::new(input), GraphFormat::Tsv).unwrap();
        assert_eq!(g.tuple_count(), 2);
    }

    #[test]
    fn display_includes_sorted_props() {
        let t = Tuple::new("a", "r", "b")
            .with_prop("z", "1")
            .with_prop("k", "2");
        assert_eq!(t.to_string(), "(a, r, b) [k=2; z=1]");
        assert_eq!(Tuple::new("a", "r", "b").to_string(), "(a, r, b)");
    }

    // strategy for small random graphs with overlapping labels
    fn arb_tuple() -> impl Strategy<Value = Tuple> {
        let label = prop::sample::select(vec![
            "alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta",
        ]);
        let rel = prop::sample::select(vec!["r1", "r2", "r3"]);
        (label.clone(), rel, label).prop_map(|(h, r, t)| Tuple::new(h, r, t))
    }

    proptest! {
        // load(write(g)) == g: serialization is an exact round trip
        #[test]
        fn jsonl_round_trip(tuples in prop::collection::vec(arb_tuple(), 1..40)) {
            let g = PropertyGraph::from_tuples(tuples).unwrap();
            let mut buf = Vec::new();
            g.write_jsonl(&mut buf).unwrap();
            let g2 = PropertyGraph::load(Cursor::new(buf), GraphFormat::Jsonl).unwrap();
            prop_assert_eq!(g, g2);
        }

        // indexed lookups agree with a linear scan over the tuple set
        #[test]
        fn indexes_match_full_scan(tuples in prop::collection::vec(arb_tuple(), 1..40)) {
            let g = PropertyGraph::from_tuples(tuples).unwrap();
            for head in ["alpha", "beta", "missing"] {
                let scanned: BTreeSet<String> = g
                    .tuples()
                    .filter(|t| t.head == head)
                    .map(|t| t.relation.clone())
                    .collect();
                prop_assert_eq!(g.outgoing_relations(head), scanned);
                for rel in ["r1", "r2", "r9"] {
                    let scanned: BTreeSet<Tuple> = g
                        .tuples()
                        .filter(|t| t.head == head && t.relation == rel)
                        .cloned()
                        .collect();
                    prop_assert_eq!(g.triples(head, rel), scanned);
                }
            }
        }
    }
}
