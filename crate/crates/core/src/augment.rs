//! Utterance packing and task-token augmentation.
//!
//! Consecutive segments of a conversation are packed greedily into
//! utterances of bounded duration. Their words are concatenated and task
//! tokens are inserted inline: `[EP]` after every segment, `[SC]` right after
//! the `[EP]` that closes a segment followed by a different speaker, and
//! `[NE] ... [/NE]` around every reference entity.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{read_jsonl, write_jsonl, Conversation, Item, Segment, TaskToken};
use crate::error::{Error, Result};

/// Subset of the non-ASR tasks whose tokens are emitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct TaskSet {
    pub speaker_change: bool,
    pub endpoint: bool,
    pub entities: bool,
}

impl TaskSet {
    pub const ALL: TaskSet = TaskSet {
        speaker_change: true,
        endpoint: true,
        entities: true,
    };
    pub const NONE: TaskSet = TaskSet {
        speaker_change: false,
        endpoint: false,
        entities: false,
    };

    pub fn includes(&self, token: TaskToken) -> bool {
        match token {
            TaskToken::SpeakerChange => self.speaker_change,
            TaskToken::Endpoint => self.endpoint,
            TaskToken::EntityOpen | TaskToken::EntityClose => self.entities,
        }
    }

    pub fn is_subset_of(&self, other: &TaskSet) -> bool {
        (!self.speaker_change || other.speaker_change)
            && (!self.endpoint || other.endpoint)
            && (!self.entities || other.entities)
    }

    /// Task tokens this set can produce.
    pub fn tokens(&self) -> Vec<TaskToken> {
        TaskToken::ALL.into_iter().filter(|t| self.includes(*t)).collect()
    }
}

impl FromStr for TaskSet {
    type Err = Error;

    /// Parses a comma-separated list such as `sc,ep,ne`; the empty string is
    /// the ASR-only set.
    fn from_str(s: &str) -> Result<Self> {
        let mut set = TaskSet::NONE;
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part.to_ascii_lowercase().as_str() {
                "sc" => set.speaker_change = true,
                "ep" => set.endpoint = true,
                "ne" => set.entities = true,
                other => return Err(Error::Config(format!("unknown task {other:?} (expected sc, ep, ne)"))),
            }
        }
        Ok(set)
    }
}

impl fmt::Display for TaskSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if self.speaker_change {
            parts.push("sc");
        }
        if self.endpoint {
            parts.push("ep");
        }
        if self.entities {
            parts.push("ne");
        }
        f.write_str(&parts.join(","))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PackConfig {
    pub max_duration: f64,
    pub tasks: TaskSet,
}

impl Default for PackConfig {
    fn default() -> Self {
        PackConfig {
            max_duration: 20.0,
            tasks: TaskSet::ALL,
        }
    }
}

impl PackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_duration > 0.0 && self.max_duration.is_finite()) {
            return Err(Error::Config(format!("max_duration must be positive, got {}", self.max_duration)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Utterance {
    pub conversation_id: String,
    pub audio_start: f64,
    pub audio_end: f64,
    pub items: Vec<Item>,
    #[serde(rename = "source_segments")]
    pub source_segment_indices: Vec<usize>,
    #[serde(default)]
    pub oversize: bool,
}

impl Utterance {
    /// Stable identifier: conversation id plus the start time in milliseconds.
    pub fn key(&self) -> String {
        utterance_key(&self.conversation_id, self.audio_start)
    }

    pub fn duration(&self) -> f64 {
        self.audio_end - self.audio_start
    }

    pub fn words(&self) -> Vec<&str> {
        self.items.iter().filter_map(Item::as_word).collect()
    }
}

pub fn utterance_key(conversation_id: &str, audio_start: f64) -> String {
    format!("{conversation_id}@{}", (audio_start * 1000.0).round() as i64)
}

/// Greedy left-to-right packing into utterances of at most
/// `config.max_duration` seconds, each carrying its augmented item sequence.
pub fn pack_segments(conversation: &Conversation, config: &PackConfig) -> Vec<Utterance> {
    let segments = &conversation.segments;
    let mut out = Vec::new();
    let mut first = 0;
    while first < segments.len() {
        let window_start = segments[first].start;
        let mut window_end = segments[first].end;
        let mut last = first;
        while last + 1 < segments.len() {
            let candidate_end = window_end.max(segments[last + 1].end);
            if candidate_end - window_start > config.max_duration {
                break;
            }
            window_end = candidate_end;
            last += 1;
        }
        let oversize = window_end - window_start > config.max_duration;
        let packed: Vec<&Segment> = segments[first..=last].iter().collect();
        out.push(Utterance {
            conversation_id: conversation.id.clone(),
            audio_start: window_start,
            audio_end: window_end,
            items: augment_text(&packed, config.tasks),
            source_segment_indices: (first..=last).collect(),
            oversize,
        });
        first = last + 1;
    }
    out
}

/// Concatenate segment words, inserting the tokens of the enabled tasks.
pub fn augment_text(segments: &[&Segment], tasks: TaskSet) -> Vec<Item> {
    augment_timed(segments, tasks).into_iter().map(|(item, _)| item).collect()
}

/// Same as [`augment_text`], pairing every item with a nominal time: word
/// onsets are spread evenly over the segment, `[EP]`/`[SC]` sit at the
/// segment end, `[NE]` at the entity onset and `[/NE]` at its offset.
fn augment_timed(segments: &[&Segment], tasks: TaskSet) -> Vec<(Item, f64)> {
    let mut items = Vec::new();
    for (si, seg) in segments.iter().enumerate() {
        let n = seg.words.len().max(1) as f64;
        let step = seg.duration() / n;
        let onset = |k: usize| seg.start + k as f64 * step;
        let mut entities = seg.entities.iter().peekable();
        for (wi, w) in seg.words.iter().enumerate() {
            let opens = entities.peek().is_some_and(|e| e.start_word_index == wi);
            if opens && tasks.entities {
                items.push((Item::Token(TaskToken::EntityOpen), onset(wi)));
            }
            items.push((Item::Word(w.clone()), onset(wi)));
            if entities.peek().is_some_and(|e| e.end_word_index == wi) {
                entities.next();
                if tasks.entities {
                    items.push((Item::Token(TaskToken::EntityClose), onset(wi + 1)));
                }
            }
        }
        if tasks.endpoint {
            items.push((Item::Token(TaskToken::Endpoint), seg.end));
        }
        if tasks.speaker_change {
            if let Some(next) = segments.get(si + 1) {
                if next.speaker != seg.speaker {
                    items.push((Item::Token(TaskToken::SpeakerChange), seg.end));
                }
            }
        }
    }
    items
}

/// Nominal time of every item of `utterance`, recovered from the source
/// segments in `conversation`.
pub fn item_times(utterance: &Utterance, conversation: &Conversation) -> Result<Vec<f64>> {
    let missing = || Error::MissingSource(utterance.key());
    if conversation.id != utterance.conversation_id {
        return Err(missing());
    }
    let segments = utterance
        .source_segment_indices
        .iter()
        .map(|&i| conversation.segments.get(i))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(missing)?;
    // Utterance items are the full augmentation minus whole token kinds, so a
    // leftmost subsequence match recovers the correspondence.
    let full = augment_timed(&segments, TaskSet::ALL);
    let mut cursor = full.iter();
    utterance
        .items
        .iter()
        .map(|item| {
            cursor
                .by_ref()
                .find(|(candidate, _)| candidate == item)
                .map(|(_, t)| *t)
                .ok_or_else(missing)
        })
        .collect()
}

/// Remove every task token, keeping words in order.
pub fn strip_tokens(items: &[Item]) -> Vec<String> {
    items.iter().filter_map(|i| i.as_word().map(str::to_string)).collect()
}

pub fn load_utterances(path: impl AsRef<Path>) -> Result<Vec<Utterance>> {
    read_jsonl(path.as_ref())
}

pub fn save_utterances(utterances: &[Utterance], path: impl AsRef<Path>) -> Result<()> {
    write_jsonl(path.as_ref(), utterances)
}

/// Dataset summary in the shape of a token-metadata table. Token percentages
/// use the word count (tokens excluded) as denominator.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsReport {
    pub utterances: usize,
    pub words: usize,
    pub duration_seconds: f64,
    pub token_counts: BTreeMap<String, usize>,
    pub token_percent: BTreeMap<String, f64>,
    pub entities: usize,
    pub unique_entities: usize,
    pub oversize_utterances: usize,
}

impl StatsReport {
    pub fn count(&self, token: TaskToken) -> usize {
        self.token_counts.get(token.kind_name()).copied().unwrap_or(0)
    }

    pub fn percent(&self, token: TaskToken) -> f64 {
        self.token_percent.get(token.kind_name()).copied().unwrap_or(0.0)
    }
}

impl fmt::Display for StatsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "# token percentages are relative to word count (tokens excluded)")?;
        writeln!(f, "utterances\t{}", self.utterances)?;
        writeln!(f, "words\t{}", self.words)?;
        writeln!(f, "duration_h\t{:.4}", self.duration_seconds / 3600.0)?;
        for (kind, count) in &self.token_counts {
            writeln!(f, "{kind}\t{count}\t{:.2}%", self.token_percent[kind])?;
        }
        writeln!(f, "#NE\t{}", self.entities)?;
        writeln!(f, "#uniq\t{}", self.unique_entities)?;
        write!(f, "oversize\t{}", self.oversize_utterances)
    }
}

pub fn corpus_stats(utterances: &[Utterance]) -> StatsReport {
    let mut counts: BTreeMap<String, usize> = TaskToken::ALL.iter().map(|t| (t.kind_name().to_string(), 0)).collect();
    let mut words = 0;
    let mut duration = 0.0;
    let mut entities = 0;
    let mut unique = BTreeSet::new();
    for u in utterances {
        duration += u.duration();
        for item in &u.items {
            match item {
                Item::Word(_) => words += 1,
                Item::Token(t) => *counts.get_mut(t.kind_name()).unwrap() += 1,
            }
        }
        for e in crate::extract::extract_entities(&u.items).entities {
            entities += 1;
            unique.insert(e.text());
        }
    }
    let percent = counts
        .iter()
        .map(|(k, &c)| {
            let p = if words == 0 { 0.0 } else { 100.0 * c as f64 / words as f64 };
            (k.clone(), p)
        })
        .collect();
    StatsReport {
        utterances: utterances.len(),
        words,
        duration_seconds: duration,
        token_counts: counts,
        token_percent: percent,
        entities,
        unique_entities: unique.len(),
        oversize_utterances: utterances.iter().filter(|u| u.oversize).count(),
    }
}
