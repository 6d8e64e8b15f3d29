//! Stage prompts and the reply grammar the model answers in.
//!
//! # Prompt packs
//!
//! A pack is one template per conversation stage, keyed by [`Stage`]. The
//! default pack ships inside the binary (see the `prompts/` directory of the
//! crate source); [`PromptPack::load_dir`] loads a customized pack from a
//! directory holding one `<stage>.txt` file per stage. Templates use
//! `{{name}}` placeholders. Each stage has a fixed set of placeholders that
//! must appear in its template, and loading fails if one is missing, so a
//! broken pack is rejected before any run starts. The pack's content hash is
//! recorded in every trace, which is what makes a trace attributable to the
//! exact prompt wording that produced it.
//!
//! # Reply grammar
//!
//! Decisions must be carried in a fenced block:
//!
//! ```text
//! ```reply
//! key: value
//! ```
//! ```
//!
//! Everything outside the block is ignored, and when several blocks appear
//! the last one wins, so chain-of-thought text costs nothing. Inside a
//! block, a line starting with a known key begins a field and following
//! lines without a key continue it. The keys per stage:
//!
//! * `anchor_select`: `anchor` (an entity label)
//! * `relation_select`: `relation` (a 1-based index into the offered list,
//!   an exact relation name, or `none` to decline the anchor)
//! * `reasoning_infer`: `tuples` (comma-separated 1-based indices, or
//!   `none`), `implication` (free text), `continue` (`yes`/`no`, defaults
//!   to yes when absent)
//! * `final_answer`: `verdict` (exactly `True`, `False`, or `None`),
//!   `justification` (free text, optional)
//!
//! Summaries are not structured: the whole completion is the summary.
//!
//! Parsing never panics. A malformed reply comes back as a [`ParseFailure`]
//! whose reason is phrased so it can be shown to the model on retry.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::eval::Verdict;
use crate::graph::Tuple;

/// The conversation stages the agent drives. Every LLM call and every
/// transcript entry is tagged with one of these.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    System,
    AnchorSelect,
    RelationSelect,
    ReasoningInfer,
    Summarize,
    FinalAnswer,
    RetryNotice,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::System,
        Stage::AnchorSelect,
        Stage::RelationSelect,
        Stage::ReasoningInfer,
        Stage::Summarize,
        Stage::FinalAnswer,
        Stage::RetryNotice,
    ];

    /// Stable identifier used for pack file names and transcript tags.
    pub fn name(self) -> &'static str {
        match self {
            Stage::System => "system",
            Stage::AnchorSelect => "anchor_select",
            Stage::RelationSelect => "relation_select",
            Stage::ReasoningInfer => "reasoning_infer",
            Stage::Summarize => "summarize",
            Stage::FinalAnswer => "final_answer",
            Stage::RetryNotice => "retry_notice",
        }
    }

    pub fn from_name(name: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|s| s.name() == name)
    }

    /// Placeholders that must appear in this stage's template.
    pub fn required_placeholders(self) -> &'static [&'static str] {
        match self {
            Stage::System | Stage::AnchorSelect => &[],
            Stage::RelationSelect => &["anchor", "relations"],
            Stage::ReasoningInfer => &["anchor", "relation", "tuples"],
            Stage::Summarize => &["steps"],
            Stage::FinalAnswer => &["summaries"],
            Stage::RetryNotice => &["failure_reason"],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("prompt pack: missing file for stage {stage} ({path})")]
    MissingStage { stage: Stage, path: String },
    #[error("stage {stage}: template is missing required placeholder {{{{{placeholder}}}}}")]
    MissingPlaceholder { stage: Stage, placeholder: String },
    #[error("stage {stage}: no value bound for placeholder {{{{{placeholder}}}}}")]
    UnboundPlaceholder { stage: Stage, placeholder: String },
    #[error("io error loading prompt pack: {0}")]
    Io(#[from] std::io::Error),
}

/// One stage's template text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    stage: Stage,
    body: String,
}

impl PromptTemplate {
    /// Validates that every placeholder the stage requires is present.
    pub fn new(stage: Stage, body: impl Into<String>) -> Result<PromptTemplate, PromptError> {
        let body = body.into();
        for name in stage.required_placeholders() {
            if !scan_placeholders(&body).any(|p| p == *name) {
                return Err(PromptError::MissingPlaceholder {
                    stage,
                    placeholder: (*name).to_string(),
                });
            }
        }
        Ok(PromptTemplate { stage, body })
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    /// Substitutes `{{name}}` placeholders from `bindings`. Values are
    /// inserted verbatim and never rescanned, so a value containing `{{`
    /// cannot inject a second expansion. A placeholder without a binding is
    /// an error; unused bindings are fine.
    pub fn render(&self, bindings: &BTreeMap<String, String>) -> Result<String, PromptError> {
        let mut out = String::with_capacity(self.body.len());
        let mut rest = self.body.as_str();
        while let Some(start) = rest.find("{{") {
            out.push_str(&rest[..start]);
            let after = &rest[start + 2..];
            match after.find("}}") {
                Some(end) if is_placeholder_name(&after[..end]) => {
                    let name = &after[..end];
                    match bindings.get(name) {
                        Some(value) => out.push_str(value),
                        None => {
                            return Err(PromptError::UnboundPlaceholder {
                                stage: self.stage,
                                placeholder: name.to_string(),
                            })
                        }
                    }
                    rest = &after[end + 2..];
                }
                _ => {
                    // not a placeholder; keep the braces literally
                    out.push_str("{{");
                    rest = after;
                }
            }
        }
        out.push_str(rest);
        Ok(out)
    }
}

fn is_placeholder_name(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

fn scan_placeholders(body: &str) -> impl Iterator<Item = &str> {
    let mut rest = body;
    std::iter::from_fn(move || loop {
        let start = rest.find("{{")?;
        let after = &rest[start + 2..];
        match after.find("}}") {
            Some(end) if is_placeholder_name(&after[..end]) => {
                let name = &after[..end];
                rest = &after[end + 2..];
                return Some(name);
            }
            _ => {
                rest = after;
            }
        }
    })
}

/// A complete set of stage templates plus its content hash.
#[derive(Debug, Clone)]
pub struct PromptPack {
    name: String,
    templates: BTreeMap<Stage, PromptTemplate>,
    hash: String,
}

impl PromptPack {
    /// The pack compiled into the crate.
    pub fn builtin() -> PromptPack {
        let sources = [
            (Stage::System, include_str!("../prompts/system.txt")),
            (
                Stage::AnchorSelect,
                include_str!("../prompts/anchor_select.txt"),
            ),
            (
                Stage::RelationSelect,
                include_str!("../prompts/relation_select.txt"),
            ),
            (
                Stage::ReasoningInfer,
                include_str!("../prompts/reasoning_infer.txt"),
            ),
            (Stage::Summarize, include_str!("../prompts/summarize.txt")),
            (
                Stage::FinalAnswer,
                include_str!("../prompts/final_answer.txt"),
            ),
            (
                Stage::RetryNotice,
                include_str!("../prompts/retry_notice.txt"),
            ),
        ];
        let mut templates = BTreeMap::new();
        for (stage, body) in sources {
            let template = PromptTemplate::new(stage, body)
                .expect("builtin templates carry their required placeholders");
            templates.insert(stage, template);
        }
        PromptPack::from_templates("builtin", templates)
    }

    /// Loads `<stage>.txt` files from a directory. Every stage must be
    /// present and every template must carry its required placeholders.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<PromptPack, PromptError> {
        let dir = dir.as_ref();
        let mut templates = BTreeMap::new();
        for stage in Stage::ALL {
            let path = dir.join(format!("{}.txt", stage.name()));
            if !path.is_file() {
                return Err(PromptError::MissingStage {
                    stage,
                    path: path.display().to_string(),
                });
            }
            let body = fs::read_to_string(&path)?;
            templates.insert(stage, PromptTemplate::new(stage, body)?);
        }
        let name = dir
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or("pack")
            .to_string();
        Ok(PromptPack::from_templates(name, templates))
    }

    fn from_templates(name: &str, templates: BTreeMap<Stage, PromptTemplate>) -> PromptPack {
        let mut hasher = Sha256::new();
        for (stage, template) in &templates {
            hasher.update(stage.name().as_bytes());
            hasher.update([0]);
            hasher.update(template.body().as_bytes());
            hasher.update([0]);
        }
        let digest = hasher.finalize();
        let mut hash = String::with_capacity(7 + 64);
        hash.push_str("sha256:");
        for byte in digest {
            hash.push_str(&format!("{:02x}", byte));
        }
        PromptPack {
            name: name.to_string(),
            templates,
            hash,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Content hash over all stage bodies; recorded in traces and reports.
    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn template(&self, stage: Stage) -> &PromptTemplate {
        &self.templates[&stage]
    }

    /// Renders a stage template against the given bindings.
    pub fn render(
        &self,
        stage: Stage,
        bindings: &BTreeMap<String, String>,
    ) -> Result<String, PromptError> {
        self.template(stage).render(bindings)
    }

    /// Writes the pack out as a directory of `<stage>.txt` files, the same
    /// layout `load_dir` reads.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<(), PromptError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        for (stage, template) in &self.templates {
            fs::write(dir.join(format!("{}.txt", stage.name())), template.body())?;
        }
        Ok(())
    }
}

/// Renders `items` as a 1-based numbered list, one item per line. This is
/// the ordering the model's index replies refer to.
pub fn render_numbered<I>(items: I) -> String
where
    I: IntoIterator,
    I::Item: fmt::Display,
{
    let mut out = String::new();
    for (i, item) in items.into_iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&format!("{}. {}", i + 1, item));
    }
    out
}

/// Convenience for building render bindings.
pub fn bindings<const N: usize>(pairs: [(&str, String); N]) -> BTreeMap<String, String> {
    pairs
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
}

// ---------------------------------------------------------------------------
// Reply parsing
// ---------------------------------------------------------------------------

/// What the engine offered the model alongside the prompt, needed to
/// resolve index replies.
#[derive(Debug, Clone, Copy)]
pub enum Offered<'a> {
    Nothing,
    Relations(&'a [String]),
    Tuples(&'a [Tuple]),
}

/// A relation reply: either a concrete label or a decline.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RelationChoice {
    Named(String),
    Decline,
}

/// A parsed reasoning reply. `selected` holds the offered tuples the
/// indices resolved to, in index order, deduplicated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReasoningReply {
    pub selected: Vec<Tuple>,
    pub implication: String,
    pub continue_flag: bool,
}

/// Any well-formed reply, by stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StructuredReply {
    Anchor { candidate: String },
    Relation(RelationChoice),
    Reasoning(ReasoningReply),
    Summary(String),
    Final { verdict: Verdict, justification: String },
}

/// A reply that did not conform to the grammar. The reason is written to be
/// shown back to the model in a retry notice.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{stage} reply not usable: {reason}")]
pub struct ParseFailure {
    pub stage: Stage,
    pub reason: String,
}

impl ParseFailure {
    fn new(stage: Stage, reason: impl Into<String>) -> ParseFailure {
        ParseFailure {
            stage,
            reason: reason.into(),
        }
    }
}

const KNOWN_KEYS: [&str; 7] = [
    "anchor",
    "relation",
    "tuples",
    "implication",
    "continue",
    "verdict",
    "justification",
];

/// Extracts the fenced reply blocks from a completion, in order.
fn reply_blocks(raw: &str) -> Vec<String> {
    let mut blocks = Vec::new();
    let mut current: Option<Vec<&str>> = None;
    for line in raw.lines() {
        let trimmed = line.trim();
        match &mut current {
            None if trimmed == "```reply" => current = Some(Vec::new()),
            None => {}
            Some(lines) => {
                if trimmed == "```" {
                    blocks.push(lines.join("\n"));
                    current = None;
                } else {
                    lines.push(line);
                }
            }
        }
    }
    // an unterminated block is not a block
    blocks
}

/// Splits a block into key/value fields. A line beginning `key:` for a
/// known key opens a field; other lines continue the open field and are
/// ignored before the first one.
fn parse_fields(block: &str) -> BTreeMap<String, String> {
    let mut fields: BTreeMap<String, String> = BTreeMap::new();
    let mut open: Option<String> = None;
    for line in block.lines() {
        let mut matched = None;
        if let Some(colon) = line.find(':') {
            let key = line[..colon].trim();
            if KNOWN_KEYS.contains(&key) {
                matched = Some((key.to_string(), line[colon + 1..].trim().to_string()));
            }
        }
        match matched {
            Some((key, value)) => {
                fields.insert(key.clone(), value);
                open = Some(key);
            }
            None => {
                if let Some(key) = &open {
                    let entry = fields.get_mut(key).expect("open field exists");
                    if !entry.is_empty() {
                        entry.push('\n');
                    }
                    entry.push_str(line.trim());
                }
            }
        }
    }
    fields
}

fn last_block_fields(stage: Stage, raw: &str) -> Result<BTreeMap<String, String>, ParseFailure> {
    let blocks = reply_blocks(raw);
    match blocks.last() {
        Some(block) => Ok(parse_fields(block)),
        None => Err(ParseFailure::new(
            stage,
            "no ```reply block found; put your decision in a fenced ```reply block",
        )),
    }
}

fn require<'m>(
    fields: &'m BTreeMap<String, String>,
    stage: Stage,
    key: &str,
) -> Result<&'m str, ParseFailure> {
    match fields.get(key).map(String::as_str) {
        Some(v) if !v.is_empty() => Ok(v),
        Some(_) => Err(ParseFailure::new(
            stage,
            format!("key {:?} is present but empty", key),
        )),
        None => Err(ParseFailure::new(
            stage,
            format!("missing key {:?} in the reply block", key),
        )),
    }
}

fn parse_index(stage: Stage, key: &str, value: &str, len: usize) -> Result<usize, ParseFailure> {
    let n: usize = value.parse().map_err(|_| {
        ParseFailure::new(
            stage,
            format!("{key} value {value:?} is neither an index nor usable text"),
        )
    })?;
    if n == 0 || n > len {
        return Err(ParseFailure::new(
            stage,
            format!("{key} index {n} is out of range 1..={len}"),
        ));
    }
    Ok(n - 1)
}

/// Parses one completion against the grammar for `stage`.
///
/// All index resolution happens here: relation index replies resolve
/// against `Offered::Relations`, tuple index replies against
/// `Offered::Tuples`. Summaries pass through verbatim. This function never
/// panics; any malformed reply is a [`ParseFailure`].
pub fn parse_reply(
    stage: Stage,
    raw: &str,
    offered: Offered<'_>,
) -> Result<StructuredReply, ParseFailure> {
    match stage {
        Stage::Summarize => Ok(StructuredReply::Summary(raw.to_string())),
        Stage::AnchorSelect => {
            let fields = last_block_fields(stage, raw)?;
            let candidate = require(&fields, stage, "anchor")?;
            Ok(StructuredReply::Anchor {
                candidate: candidate.to_string(),
            })
        }
        Stage::RelationSelect => {
            let fields = last_block_fields(stage, raw)?;
            let value = require(&fields, stage, "relation")?;
            if value.eq_ignore_ascii_case("none") {
                return Ok(StructuredReply::Relation(RelationChoice::Decline));
            }
            let relations = match offered {
                Offered::Relations(r) => r,
                _ => &[],
            };
            let choice = if value.chars().all(|c| c.is_ascii_digit()) {
                let idx = parse_index(stage, "relation", value, relations.len())?;
                RelationChoice::Named(relations[idx].clone())
            } else {
                RelationChoice::Named(value.to_string())
            };
            Ok(StructuredReply::Relation(choice))
        }
        Stage::ReasoningInfer => {
            let fields = last_block_fields(stage, raw)?;
            let tuples_value = require(&fields, stage, "tuples")?;
            let implication = require(&fields, stage, "implication")?.to_string();
            let offered_tuples = match offered {
                Offered::Tuples(t) => t,
                _ => &[],
            };
            let mut selected = Vec::new();
            if !tuples_value.eq_ignore_ascii_case("none") {
                let mut seen = std::collections::BTreeSet::new();
                for part in tuples_value.split(',') {
                    let part = part.trim();
                    if part.is_empty() {
                        continue;
                    }
                    let idx = parse_index(stage, "tuples", part, offered_tuples.len())?;
                    if seen.insert(idx) {
                        selected.push(offered_tuples[idx].clone());
                    }
                }
            }
            let continue_flag = match fields.get("continue").map(String::as_str) {
                None | Some("") => true,
                Some(v) if v.eq_ignore_ascii_case("yes") || v.eq_ignore_ascii_case("true") => true,
                Some(v) if v.eq_ignore_ascii_case("no") || v.eq_ignore_ascii_case("false") => {
                    false
                }
                Some(v) => {
                    return Err(ParseFailure::new(
                        stage,
                        format!("continue value {v:?} must be yes or no"),
                    ))
                }
            };
            Ok(StructuredReply::Reasoning(ReasoningReply {
                selected,
                implication,
                continue_flag,
            }))
        }
        Stage::FinalAnswer => {
            let fields = last_block_fields(stage, raw)?;
            let value = require(&fields, stage, "verdict")?;
            let verdict = match value {
                "True" => Verdict::True,
                "False" => Verdict::False,
                "None" => Verdict::None,
                other => {
                    return Err(ParseFailure::new(
                        stage,
                        format!("verdict {other:?} must be exactly True, False, or None"),
                    ))
                }
            };
            let justification = fields.get("justification").cloned().unwrap_or_default();
            Ok(StructuredReply::Final {
                verdict,
                justification,
            })
        }
        Stage::System | Stage::RetryNotice => Err(ParseFailure::new(
            stage,
            "stage has no reply grammar".to_string(),
        )),
    }
}

/// Total final-verdict parser: a completion that fails the grammar becomes
/// an abstention rather than an error, so a run always produces a verdict.
pub fn verdict_from_reply(raw: &str) -> (Verdict, String) {
    match parse_reply(Stage::FinalAnswer, raw, Offered::Nothing) {
        Ok(StructuredReply::Final {
            verdict,
            justification,
        }) => (verdict, justification),
        Ok(_) => unreachable!("final stage parses to Final"),
        Err(failure) => (
            Verdict::None,
            format!("final reply could not be parsed ({})", failure.reason),
        ),
    }
}
