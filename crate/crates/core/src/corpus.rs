//! Annotated conversation data model and the JSONL interchange formats.
//!
//! A corpus file holds one [`Conversation`] per line. Every value is fully
//! validated on load; a malformed line never yields a partial conversation.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// The four reserved task symbols that can be inlined into a transcript.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskToken {
    #[serde(rename = "SC")]
    SpeakerChange,
    #[serde(rename = "EP")]
    Endpoint,
    #[serde(rename = "NE_OPEN")]
    EntityOpen,
    #[serde(rename = "NE_CLOSE")]
    EntityClose,
}

impl TaskToken {
    pub const ALL: [TaskToken; 4] = [
        TaskToken::SpeakerChange,
        TaskToken::Endpoint,
        TaskToken::EntityOpen,
        TaskToken::EntityClose,
    ];

    /// Reserved surface string used in plain-text renderings and vocabularies.
    pub fn surface(self) -> &'static str {
        match self {
            TaskToken::SpeakerChange => "[SC]",
            TaskToken::Endpoint => "[EP]",
            TaskToken::EntityOpen => "[NE]",
            TaskToken::EntityClose => "[/NE]",
        }
    }

    /// Short kind name as it appears in the JSONL `"t"` field.
    pub fn kind_name(self) -> &'static str {
        match self {
            TaskToken::SpeakerChange => "SC",
            TaskToken::Endpoint => "EP",
            TaskToken::EntityOpen => "NE_OPEN",
            TaskToken::EntityClose => "NE_CLOSE",
        }
    }

    pub fn from_surface(s: &str) -> Option<TaskToken> {
        TaskToken::ALL.into_iter().find(|t| t.surface() == s)
    }

    pub fn from_kind_name(s: &str) -> Option<TaskToken> {
        TaskToken::ALL.into_iter().find(|t| t.kind_name() == s)
    }
}

impl fmt::Display for TaskToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.surface())
    }
}

/// One element of a token-augmented transcript.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Item {
    Word(String),
    Token(TaskToken),
}

impl Item {
    pub fn word(w: impl Into<String>) -> Item {
        Item::Word(w.into())
    }

    pub fn as_word(&self) -> Option<&str> {
        match self {
            Item::Word(w) => Some(w),
            Item::Token(_) => None,
        }
    }

    pub fn as_token(&self) -> Option<TaskToken> {
        match self {
            Item::Token(t) => Some(*t),
            Item::Word(_) => None,
        }
    }

    pub fn is_token(&self, token: TaskToken) -> bool {
        self.as_token() == Some(token)
    }

    pub fn surface(&self) -> &str {
        match self {
            Item::Word(w) => w,
            Item::Token(t) => t.surface(),
        }
    }
}

impl fmt::Display for Item {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.surface())
    }
}

/// Parse whitespace-separated text, recognizing reserved surfaces as tokens.
pub fn parse_items(text: &str) -> Vec<Item> {
    text.split_whitespace()
        .map(|s| match TaskToken::from_surface(s) {
            Some(t) => Item::Token(t),
            None => Item::Word(s.to_string()),
        })
        .collect()
}

/// Render items as whitespace-separated text.
pub fn render_items(items: &[Item]) -> String {
    let mut out = String::new();
    for (i, item) in items.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(item.surface());
    }
    out
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ItemRepr {
    Word { w: String },
    Token { t: TaskToken },
}

impl Serialize for Item {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Item::Word(w) => ItemRepr::Word { w: w.clone() },
            Item::Token(t) => ItemRepr::Token { t: *t },
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Item {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        Ok(match ItemRepr::deserialize(deserializer)? {
            ItemRepr::Word { w } => Item::Word(w),
            ItemRepr::Token { t } => Item::Token(t),
        })
    }
}

/// Inclusive word-index range of one reference entity within a segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EntitySpan {
    pub start_word_index: usize,
    pub end_word_index: usize,
}

impl EntitySpan {
    pub fn new(start_word_index: usize, end_word_index: usize) -> Self {
        EntitySpan {
            start_word_index,
            end_word_index,
        }
    }
}

impl Serialize for EntitySpan {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        [self.start_word_index, self.end_word_index].serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for EntitySpan {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let [start, end] = <[usize; 2]>::deserialize(deserializer)?;
        Ok(EntitySpan::new(start, end))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    pub speaker: String,
    pub words: Vec<String>,
    #[serde(default)]
    pub entities: Vec<EntitySpan>,
}

impl Segment {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }

    /// Surface text of each entity, words joined by a single space.
    pub fn entity_texts(&self) -> Vec<String> {
        self.entities
            .iter()
            .map(|e| self.words[e.start_word_index..=e.end_word_index].join(" "))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Conversation {
    pub id: String,
    pub segments: Vec<Segment>,
}

impl Conversation {
    /// Check every conversation and segment invariant.
    pub fn validate(&self) -> Result<()> {
        let invalid = |field: String, message: String| Error::Invalid {
            id: self.id.clone(),
            field,
            message,
        };
        if self.segments.is_empty() {
            return Err(invalid("segments".into(), "at least one segment is required".into()));
        }
        let mut prev_start = f64::NEG_INFINITY;
        for (si, seg) in self.segments.iter().enumerate() {
            let field = |name: &str| format!("segments[{si}].{name}");
            if !seg.start.is_finite() || seg.start < 0.0 {
                return Err(invalid(field("start"), format!("must be a non-negative number, got {}", seg.start)));
            }
            if !seg.end.is_finite() || seg.end <= seg.start {
                return Err(invalid(field("end"), format!("end {} must exceed start {}", seg.end, seg.start)));
            }
            if seg.start < prev_start {
                return Err(invalid(field("start"), format!("segments out of order: {} after {}", seg.start, prev_start)));
            }
            prev_start = seg.start;
            for (wi, w) in seg.words.iter().enumerate() {
                if let Some(reason) = word_problem(w) {
                    return Err(invalid(format!("segments[{si}].words[{wi}]"), reason));
                }
            }
            let mut prev_end: Option<usize> = None;
            for (ei, span) in seg.entities.iter().enumerate() {
                let f = format!("segments[{si}].entities[{ei}]");
                if span.start_word_index > span.end_word_index {
                    return Err(invalid(f, "start_word_index exceeds end_word_index".into()));
                }
                if span.end_word_index >= seg.words.len() {
                    return Err(invalid(
                        f,
                        format!("end_word_index {} out of bounds for {} words", span.end_word_index, seg.words.len()),
                    ));
                }
                if let Some(pe) = prev_end {
                    if span.start_word_index <= pe {
                        return Err(invalid(f, "entity spans must be ordered and non-overlapping".into()));
                    }
                }
                prev_end = Some(span.end_word_index);
            }
        }
        Ok(())
    }

    /// Earliest start and latest end across all segments.
    pub fn bounds(&self) -> (f64, f64) {
        let start = self.segments.first().map_or(0.0, |s| s.start);
        let end = self.segments.iter().map(|s| s.end).fold(start, f64::max);
        (start, end)
    }
}

fn word_problem(w: &str) -> Option<String> {
    if w.is_empty() {
        return Some("empty word".into());
    }
    if w.chars().any(char::is_whitespace) {
        return Some(format!("word {w:?} contains whitespace"));
    }
    TaskToken::ALL
        .into_iter()
        .find(|t| w.contains(t.surface()))
        .map(|t| format!("word {w:?} contains reserved token {}", t.surface()))
}

/// Read a JSONL file, decoding each non-blank line as `T`.
pub(crate) fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|source| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            source,
        })?;
        out.push(value);
    }
    Ok(out)
}

pub(crate) fn write_jsonl_to<T: Serialize, W: Write>(mut writer: W, values: &[T]) -> std::io::Result<()> {
    for value in values {
        serde_json::to_writer(&mut writer, value)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

pub(crate) fn write_jsonl<T: Serialize>(path: &Path, values: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_jsonl_to(BufWriter::new(file), values).map_err(|e| Error::io(path, e))
}

/// Load and validate a corpus JSONL file, preserving line order.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Conversation>> {
    let conversations: Vec<Conversation> = read_jsonl(path.as_ref())?;
    for c in &conversations {
        c.validate()?;
    }
    Ok(conversations)
}

pub fn save_corpus(conversations: &[Conversation], path: impl AsRef<Path>) -> Result<()> {
    write_jsonl(path.as_ref(), conversations)
}
