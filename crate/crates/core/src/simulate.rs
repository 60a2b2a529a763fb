//! Deterministic synthetic conversations and decoder-style hypotheses.
//!
//! Every conversation and every corrupted utterance draws from its own
//! ChaCha stream (`seed`, `stream = index`), so results do not depend on
//! generation order. Times are generated on a 20 ms grid.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{item_times, pack_segments, PackConfig, Utterance};
use crate::corpus::{write_jsonl, Conversation, EntitySpan, Item, Segment, TaskToken};
use crate::error::{Error, Result};
use crate::extract::{Emission, FrameSpec, Hypothesis};

const WORDS: &str = include_str!("../data/words.txt");
const ENTITIES: &str = include_str!("../data/entities.txt");
const GRID_MS: u64 = 20;

pub fn word_inventory() -> Vec<&'static str> {
    WORDS.lines().map(str::trim).filter(|l| !l.is_empty()).collect()
}

pub fn entity_inventory() -> Vec<Vec<&'static str>> {
    ENTITIES
        .lines()
        .map(|l| l.split_whitespace().collect::<Vec<_>>())
        .filter(|e| !e.is_empty())
        .collect()
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub n_conversations: usize,
    pub speakers_per_conversation: (usize, usize),
    pub segments_per_conversation: (usize, usize),
    /// Seconds.
    pub segment_duration: (f64, f64),
    pub words_per_second: f64,
    /// Probability of starting an entity at each word position.
    pub entity_rate: f64,
    /// Seconds of silence between consecutive segments.
    pub pause_range: (f64, f64),
    /// Probability that the next segment keeps the current speaker.
    pub speaker_keep_prob: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 42,
            n_conversations: 20,
            speakers_per_conversation: (2, 2),
            segments_per_conversation: (10, 30),
            segment_duration: (1.0, 8.0),
            words_per_second: 2.5,
            entity_rate: 0.04,
            pause_range: (0.0, 1.0),
            speaker_keep_prob: 0.3,
        }
    }
}

fn check_prob(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be a probability, got {p}")))
    }
}

fn check_range<T: PartialOrd + std::fmt::Debug>(name: &str, (lo, hi): (T, T)) -> Result<()> {
    if lo <= hi {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} range is empty: {lo:?}..{hi:?}")))
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        check_range("speakers_per_conversation", self.speakers_per_conversation)?;
        check_range("segments_per_conversation", self.segments_per_conversation)?;
        check_range("segment_duration", self.segment_duration)?;
        check_range("pause_range", self.pause_range)?;
        if self.speakers_per_conversation.0 == 0 || self.segments_per_conversation.0 == 0 {
            return Err(Error::Config("speaker and segment counts must be at least 1".into()));
        }
        if self.segment_duration.0 <= 0.0 || self.pause_range.0 < 0.0 {
            return Err(Error::Config("segment durations must be positive and pauses non-negative".into()));
        }
        if self.words_per_second.is_nan() || self.words_per_second <= 0.0 {
            return Err(Error::Config("words_per_second must be positive".into()));
        }
        check_prob("entity_rate", self.entity_rate)?;
        check_prob("speaker_keep_prob", self.speaker_keep_prob)
    }
}

/// Duration drawn on the 20 ms grid, in milliseconds.
fn grid_ms(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> u64 {
    let lo_steps = (lo * 1000.0 / GRID_MS as f64).ceil() as u64;
    let hi_steps = ((hi * 1000.0 / GRID_MS as f64).floor() as u64).max(lo_steps);
    rng.gen_range(lo_steps..=hi_steps) * GRID_MS
}

fn generate_conversation(config: &SimConfig, index: usize, words: &[&str], entities: &[Vec<&str>]) -> Conversation {
    let mut rng = stream_rng(config.seed, index as u64);
    let (s_lo, s_hi) = config.speakers_per_conversation;
    let n_speakers = rng.gen_range(s_lo..=s_hi);
    let (g_lo, g_hi) = config.segments_per_conversation;
    let n_segments = rng.gen_range(g_lo..=g_hi);
    let mut speaker = 0;
    let mut clock_ms = 0;
    let mut segments = Vec::with_capacity(n_segments);
    for i in 0..n_segments {
        if i > 0 {
            clock_ms += grid_ms(&mut rng, config.pause_range);
            if n_speakers > 1 && !rng.gen_bool(config.speaker_keep_prob) {
                speaker = (speaker + 1 + rng.gen_range(0..n_speakers - 1)) % n_speakers;
            }
        }
        let duration_ms = grid_ms(&mut rng, config.segment_duration).max(GRID_MS);
        let target = ((duration_ms as f64 / 1000.0) * config.words_per_second).round().max(1.0) as usize;
        let mut seg_words: Vec<String> = Vec::with_capacity(target + 2);
        let mut spans = Vec::new();
        while seg_words.len() < target {
            if rng.gen_bool(config.entity_rate) {
                let entity = entities.choose(&mut rng).expect("entity inventory is not empty");
                let start = seg_words.len();
                seg_words.extend(entity.iter().map(|w| w.to_string()));
                spans.push(EntitySpan::new(start, seg_words.len() - 1));
            } else {
                seg_words.push(words.choose(&mut rng).expect("word inventory is not empty").to_string());
            }
        }
        segments.push(Segment {
            start: clock_ms as f64 / 1000.0,
            end: (clock_ms + duration_ms) as f64 / 1000.0,
            speaker: format!("spk{speaker}"),
            words: seg_words,
            entities: spans,
        });
        clock_ms += duration_ms;
    }
    Conversation {
        id: format!("sim{index:05}"),
        segments,
    }
}

pub fn generate_corpus(config: &SimConfig) -> Vec<Conversation> {
    let words = word_inventory();
    let entities = entity_inventory();
    (0..config.n_conversations)
        .map(|i| generate_conversation(config, i, &words, &entities))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub sub_rate: f64,
    pub del_rate: f64,
    pub ins_rate: f64,
    pub token_drop_rate: f64,
    /// Inclusive range of frame offsets added to each emission.
    pub frame_jitter: (i64, i64),
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            sub_rate: 0.0,
            del_rate: 0.0,
            ins_rate: 0.0,
            token_drop_rate: 0.0,
            frame_jitter: (0, 0),
            seed: 7,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        check_prob("sub_rate", self.sub_rate)?;
        check_prob("del_rate", self.del_rate)?;
        check_prob("ins_rate", self.ins_rate)?;
        check_prob("token_drop_rate", self.token_drop_rate)?;
        check_prob("sub_rate + del_rate", self.sub_rate + self.del_rate)?;
        check_range("frame_jitter", self.frame_jitter)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum Edit {
    /// Reference word at `ref_index` (token-stripped) replaced by `word`.
    Sub { ref_index: usize, word: String },
    Del { ref_index: usize },
    /// `word` inserted right after the reference word at `after`.
    Ins { after: usize, word: String },
    Drop { token: TaskToken },
}

/// Ground-truth record of what the corruption did to one utterance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditLog {
    pub utt: String,
    pub edits: Vec<Edit>,
}

impl EditLog {
    /// Number of word-level edits (substitutions, deletions, insertions).
    pub fn word_edits(&self) -> usize {
        self.edits.iter().filter(|e| !matches!(e, Edit::Drop { .. })).count()
    }
}

/// Corrupt a reference utterance into a hypothesis. `times` holds the
/// nominal time of every reference item; `stream` selects the random stream.
pub fn corrupt(
    reference: &Utterance,
    times: &[f64],
    noise: &NoiseConfig,
    frames: &FrameSpec,
    stream: u64,
) -> (Hypothesis, EditLog) {
    let words = word_inventory();
    let mut rng = stream_rng(noise.seed, stream);
    let mut emissions = Vec::with_capacity(reference.items.len());
    let mut edits = Vec::new();
    let mut word_index = 0;
    for (item, &t) in reference.items.iter().zip(times) {
        let frame = frames.frame_at(t - reference.audio_start);
        match item {
            Item::Word(w) => {
                let u: f64 = rng.gen();
                if u < noise.del_rate {
                    edits.push(Edit::Del { ref_index: word_index });
                } else if u < noise.del_rate + noise.sub_rate {
                    let replacement = loop {
                        let c = *words.choose(&mut rng).unwrap();
                        if c != w {
                            break c.to_string();
                        }
                    };
                    edits.push(Edit::Sub { ref_index: word_index, word: replacement.clone() });
                    emissions.push(Emission { item: Item::Word(replacement), frame });
                } else {
                    emissions.push(Emission { item: item.clone(), frame });
                }
                if rng.gen_bool(noise.ins_rate) {
                    let inserted = words.choose(&mut rng).unwrap().to_string();
                    edits.push(Edit::Ins { after: word_index, word: inserted.clone() });
                    emissions.push(Emission { item: Item::Word(inserted), frame });
                }
                word_index += 1;
            }
            Item::Token(t) => {
                if rng.gen_bool(noise.token_drop_rate) {
                    edits.push(Edit::Drop { token: *t });
                } else {
                    emissions.push(Emission { item: item.clone(), frame });
                }
            }
        }
    }

    let (j_lo, j_hi) = noise.frame_jitter;
    let mut floor = 0u64;
    for e in &mut emissions {
        let offset = if j_lo == j_hi { j_lo } else { rng.gen_range(j_lo..=j_hi) };
        let jittered = (e.frame as i64 + offset).max(0) as u64;
        floor = floor.max(jittered);
        e.frame = floor;
    }

    let hyp = Hypothesis {
        conversation_id: reference.conversation_id.clone(),
        audio_start: reference.audio_start,
        emissions,
    };
    let log = EditLog { utt: reference.key(), edits };
    (hyp, log)
}

/// Everything produced by one end-to-end simulation run.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub corpus: Vec<Conversation>,
    pub utterances: Vec<Utterance>,
    pub hypotheses: Vec<Hypothesis>,
    pub edit_logs: Vec<EditLog>,
}

pub fn simulate(sim: &SimConfig, pack: &PackConfig, noise: &NoiseConfig, frames: &FrameSpec) -> Result<Simulation> {
    sim.validate()?;
    pack.validate()?;
    noise.validate()?;
    frames.validate()?;
    let corpus = generate_corpus(sim);
    let mut utterances = Vec::new();
    let mut hypotheses = Vec::new();
    let mut edit_logs = Vec::new();
    for conversation in &corpus {
        for utt in pack_segments(conversation, pack) {
            let times = item_times(&utt, conversation)?;
            let (hyp, log) = corrupt(&utt, &times, noise, frames, utterances.len() as u64);
            hypotheses.push(hyp);
            edit_logs.push(log);
            utterances.push(utt);
        }
    }
    Ok(Simulation { corpus, utterances, hypotheses, edit_logs })
}

pub fn save_edit_logs(logs: &[EditLog], path: impl AsRef<Path>) -> Result<()> {
    write_jsonl(path.as_ref(), logs)
}

pub fn load_edit_logs(path: impl AsRef<Path>) -> Result<Vec<EditLog>> {
    crate::corpus::read_jsonl(path.as_ref())
}
