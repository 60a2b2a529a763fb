//! Post-processing of token-augmented decoder output into entities, timed
//! speaker-change/endpoint events, speaker turns, and speech regions.

use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::corpus::{read_jsonl, write_jsonl, Item, TaskToken};
use crate::error::{Error, Result};
use crate::metrics::TIME_EPSILON;

/// Acoustic frame geometry of the encoder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameSpec {
    pub frame_duration: f64,
    pub frame_stride: f64,
}

impl Default for FrameSpec {
    fn default() -> Self {
        FrameSpec {
            frame_duration: 0.025,
            frame_stride: 0.020,
        }
    }
}

impl FrameSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.frame_stride > 0.0 && self.frame_duration > 0.0) {
            return Err(Error::Config("frame duration and stride must be positive".into()));
        }
        if self.frame_duration < self.frame_stride {
            return Err(Error::Config(format!(
                "frame duration {} is shorter than stride {}",
                self.frame_duration, self.frame_stride
            )));
        }
        Ok(())
    }

    /// Nearest frame index for an offset (seconds) from the audio start.
    pub fn frame_at(&self, offset: f64) -> u64 {
        (offset / self.frame_stride).round().max(0.0) as u64
    }
}

/// Start time of frame `frame_index`.
pub fn token_time(frame_index: u64, spec: &FrameSpec, audio_start: f64) -> f64 {
    audio_start + frame_index as f64 * spec.frame_stride
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Emission {
    pub item: Item,
    pub frame: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum EmissionRepr {
    Word { w: String, f: u64 },
    Token { t: TaskToken, f: u64 },
}

impl Serialize for Emission {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match &self.item {
            Item::Word(w) => EmissionRepr::Word { w: w.clone(), f: self.frame },
            Item::Token(t) => EmissionRepr::Token { t: *t, f: self.frame },
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Emission {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        Ok(match EmissionRepr::deserialize(deserializer)? {
            EmissionRepr::Word { w, f } => Emission { item: Item::Word(w), frame: f },
            EmissionRepr::Token { t, f } => Emission { item: Item::Token(t), frame: f },
        })
    }
}

/// Decoder output for one utterance: symbols with their emission frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hypothesis {
    pub conversation_id: String,
    pub audio_start: f64,
    pub emissions: Vec<Emission>,
}

impl Hypothesis {
    pub fn key(&self) -> String {
        crate::augment::utterance_key(&self.conversation_id, self.audio_start)
    }

    pub fn items(&self) -> Vec<Item> {
        self.emissions.iter().map(|e| e.item.clone()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.emissions.windows(2).any(|w| w[1].frame < w[0].frame) {
            return Err(Error::Invalid {
                id: self.key(),
                field: "emissions".into(),
                message: "frame indices must be non-decreasing".into(),
            });
        }
        Ok(())
    }
}

pub fn load_hypotheses(path: impl AsRef<Path>) -> Result<Vec<Hypothesis>> {
    let hyps: Vec<Hypothesis> = read_jsonl(path.as_ref())?;
    for h in &hyps {
        h.validate()?;
    }
    Ok(hyps)
}

pub fn save_hypotheses(hyps: &[Hypothesis], path: impl AsRef<Path>) -> Result<()> {
    write_jsonl(path.as_ref(), hyps)
}

/// Words found between a matched `[NE]`/`[/NE]` pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entity {
    pub words: Vec<String>,
    /// Inclusive indices into the token-stripped word sequence.
    pub word_span: (usize, usize),
}

impl Entity {
    pub fn text(&self) -> String {
        self.words.join(" ")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EntityExtraction {
    pub entities: Vec<Entity>,
    pub unmatched_open: usize,
    pub unmatched_close: usize,
}

/// Pair every `[NE]` with the nearest following `[/NE]` that has no `[NE]` in
/// between. An outer open superseded by a later open is unmatched, and an
/// empty pair counts as one unmatched open plus one unmatched close.
pub fn extract_entities(items: &[Item]) -> EntityExtraction {
    let mut out = EntityExtraction::default();
    let mut word_index = 0;
    // Stripped index of the first word after the pending open.
    let mut pending: Option<usize> = None;
    let mut words: Vec<String> = Vec::new();
    for item in items {
        match item {
            Item::Word(w) => {
                if pending.is_some() {
                    words.push(w.clone());
                }
                word_index += 1;
            }
            Item::Token(TaskToken::EntityOpen) => {
                if pending.is_some() {
                    out.unmatched_open += 1;
                }
                pending = Some(word_index);
                words.clear();
            }
            Item::Token(TaskToken::EntityClose) => match pending.take() {
                Some(start) if !words.is_empty() => out.entities.push(Entity {
                    words: std::mem::take(&mut words),
                    word_span: (start, word_index - 1),
                }),
                Some(_) => {
                    out.unmatched_open += 1;
                    out.unmatched_close += 1;
                }
                None => out.unmatched_close += 1,
            },
            Item::Token(_) => {}
        }
    }
    if pending.is_some() {
        out.unmatched_open += 1;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimedEvent {
    pub kind: TaskToken,
    pub time: f64,
}

/// One event per `[SC]`/`[EP]` emission, in emission order.
pub fn extract_timed_events(hyp: &Hypothesis, spec: &FrameSpec) -> Vec<TimedEvent> {
    hyp.emissions
        .iter()
        .filter_map(|e| match e.item {
            Item::Token(kind @ (TaskToken::SpeakerChange | TaskToken::Endpoint)) => Some(TimedEvent {
                kind,
                time: token_time(e.frame, spec, hyp.audio_start),
            }),
            _ => None,
        })
        .collect()
}

/// Closed time interval in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
}

impl Interval {
    pub fn new(start: f64, end: f64) -> Self {
        Interval { start, end }
    }

    pub fn len(&self) -> f64 {
        (self.end - self.start).max(0.0)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn overlap(&self, other: &Interval) -> f64 {
        (self.end.min(other.end) - self.start.max(other.start)).max(0.0)
    }
}

/// Split `[start, end]` at every change time strictly inside it.
pub fn turns_from_events(change_times: &[f64], start: f64, end: f64) -> Vec<Interval> {
    let mut turns = Vec::new();
    let mut cursor = start;
    for &t in change_times {
        if t > cursor && t < end {
            turns.push(Interval::new(cursor, t));
            cursor = t;
        }
    }
    if end > cursor {
        turns.push(Interval::new(cursor, end));
    }
    turns
}

/// Speech claimed by endpoint events: within each span, speech runs from the
/// span start (or the previous endpoint) up to each endpoint. Audio after the
/// last endpoint of a span is non-speech.
pub fn speech_regions_from_endpoints(endpoint_times: &[f64], spans: &[Interval]) -> Vec<Interval> {
    let mut regions = Vec::new();
    for span in spans {
        let mut cursor = span.start;
        for &t in endpoint_times {
            if t < span.start - TIME_EPSILON || t > span.end + TIME_EPSILON {
                continue;
            }
            let t = t.min(span.end);
            if t > cursor {
                regions.push(Interval::new(cursor, t));
                cursor = t;
            }
        }
    }
    regions
}
