//! Corpus-level evaluation: pairs hypotheses with reference utterances and
//! pools every metric across the corpus.

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};

use serde::Serialize;

use crate::align::{levenshtein_align, EditCounts, WerResult};
use crate::augment::{item_times, strip_tokens, Utterance};
use crate::corpus::{Conversation, Item, TaskToken};
use crate::error::{Error, Result};
use crate::extract::{
    extract_entities, extract_timed_events, speech_regions_from_endpoints, turns_from_events, FrameSpec, Hypothesis,
    Interval,
};
use crate::metrics::{
    coverage_sums, ner_exact, ner_soft, timestamp_counts, token_counts, CollarConfig, Counts, CoverageSums,
    DetectionSums, Prf,
};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EvalConfig {
    pub collar: CollarConfig,
    pub frames: FrameSpec,
    /// Also report per-utterance macro averages.
    pub macro_average: bool,
}

/// Scores of one reference/hypothesis utterance pair.
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceScores {
    pub key: String,
    pub edits: EditCounts,
    pub ner_exact: Counts,
    pub ner_soft: Counts,
    pub scd_text: Counts,
    pub ep_text: Counts,
}

impl UtteranceScores {
    pub fn wer(&self) -> WerResult {
        WerResult::from_counts(self.edits)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Degenerate {
    /// Pooled reference has no words.
    pub wer: bool,
    /// No reference speech regions; FA/MS are relative to total duration.
    pub detection: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MacroAverages {
    pub wer: f64,
    pub ner_exact_f1: f64,
    pub ner_soft_f1: f64,
    pub scd_text_f1: f64,
    pub ep_text_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub wer: f64,
    pub ner_exact: Prf,
    pub ner_soft: Prf,
    pub scd_text: Prf,
    pub ep_text: Prf,
    pub scd_time: Prf,
    pub ep_time: Prf,
    pub coverage: f64,
    pub purity: f64,
    pub cp_f1: f64,
    pub fa: f64,
    pub ms: f64,
    pub der: f64,
    pub degenerate: Degenerate,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r#macro: Option<MacroAverages>,
    #[serde(skip)]
    pub utterances: Vec<UtteranceScores>,
}

impl EvalReport {
    /// Per-utterance breakdown as tab-separated values with a header row.
    pub fn utterance_tsv(&self) -> String {
        let mut out = String::from(
            "utterance\tref_words\terrors\twer\tner_exact_tp\tner_exact_fp\tner_exact_fn\tner_soft_tp\tner_soft_fp\tner_soft_fn\tscd_tp\tscd_fp\tscd_fn\tep_tp\tep_fp\tep_fn\n",
        );
        for u in &self.utterances {
            let w = u.wer();
            write!(out, "{}\t{}\t{}\t{:.6}", u.key, u.edits.ref_len(), u.edits.errors(), w.rate).unwrap();
            for c in [u.ner_exact, u.ner_soft, u.scd_text, u.ep_text] {
                write!(out, "\t{}\t{}\t{}", c.tp, c.fp, c.fn_).unwrap();
            }
            out.push('\n');
        }
        out
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "WER          {:.4}{}", self.wer, if self.degenerate.wer { " (empty reference)" } else { "" })?;
        for (name, p) in [
            ("NER exact", &self.ner_exact),
            ("NER soft", &self.ner_soft),
            ("SCD text", &self.scd_text),
            ("EP text", &self.ep_text),
            ("SCD time", &self.scd_time),
            ("EP time", &self.ep_time),
        ] {
            writeln!(
                f,
                "{name:<12} P {:.4}  R {:.4}  F1 {:.4}  (tp {} fp {} fn {})",
                p.precision, p.recall, p.f1, p.tp, p.fp, p.fn_
            )?;
        }
        writeln!(f, "Coverage     {:.4}  Purity {:.4}  F1 {:.4}", self.coverage, self.purity, self.cp_f1)?;
        write!(
            f,
            "FA {:.4}  MS {:.4}  DER {:.4}{}",
            self.fa,
            self.ms,
            self.der,
            if self.degenerate.detection { " (no reference speech)" } else { "" }
        )
    }
}

#[derive(Default)]
struct ConversationEvents {
    ref_sc: Vec<f64>,
    hyp_sc: Vec<f64>,
    ref_ep: Vec<f64>,
    hyp_ep: Vec<f64>,
    spans: Vec<Interval>,
}

fn token_times(items: &[Item], times: &[f64], token: TaskToken) -> Vec<f64> {
    items.iter().zip(times).filter(|(i, _)| i.is_token(token)).map(|(_, &t)| t).collect()
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

pub fn score_utterance(reference: &Utterance, hypothesis: &[Item]) -> UtteranceScores {
    let ref_words = strip_tokens(&reference.items);
    let hyp_words = strip_tokens(hypothesis);
    let word_alignment = levenshtein_align(&ref_words, &hyp_words);
    let ref_entities = extract_entities(&reference.items);
    let hyp_entities = extract_entities(hypothesis);
    let item_alignment = levenshtein_align(&reference.items, hypothesis);
    UtteranceScores {
        key: reference.key(),
        edits: word_alignment.counts(),
        ner_exact: ner_exact(&ref_entities, &hyp_entities, &word_alignment).counts(),
        ner_soft: ner_soft(&ref_entities, &hyp_entities, &word_alignment).counts(),
        scd_text: token_counts(&reference.items, hypothesis, &item_alignment, TaskToken::SpeakerChange),
        ep_text: token_counts(&reference.items, hypothesis, &item_alignment, TaskToken::Endpoint),
    }
}

/// Score `hypotheses` against `references`. Reference event times come from
/// the source segments in `corpus`. Every reference utterance needs exactly
/// one hypothesis and vice versa.
pub fn evaluate_corpus(
    corpus: &[Conversation],
    references: &[Utterance],
    hypotheses: &[Hypothesis],
    config: &EvalConfig,
) -> Result<EvalReport> {
    config.frames.validate()?;
    if hypotheses.is_empty() {
        return Err(Error::EmptyHypotheses);
    }
    let mut by_key: HashMap<String, &Hypothesis> = HashMap::new();
    let mut duplicates = Vec::new();
    for h in hypotheses {
        if by_key.insert(h.key(), h).is_some() {
            duplicates.push(h.key());
        }
    }
    if !duplicates.is_empty() {
        return Err(Error::DuplicateHypotheses(duplicates));
    }
    let ref_keys: HashMap<String, ()> = references.iter().map(|u| (u.key(), ())).collect();
    let unknown: Vec<String> = hypotheses.iter().map(Hypothesis::key).filter(|k| !ref_keys.contains_key(k)).collect();
    if !unknown.is_empty() {
        return Err(Error::UnknownUtterances(unknown));
    }
    let missing: Vec<String> = references.iter().map(Utterance::key).filter(|k| !by_key.contains_key(k)).collect();
    if !missing.is_empty() {
        return Err(Error::MissingHypotheses(missing));
    }

    let conversations: HashMap<&str, &Conversation> = corpus.iter().map(|c| (c.id.as_str(), c)).collect();
    let mut per_conversation: BTreeMap<&str, ConversationEvents> = BTreeMap::new();
    let mut scores = Vec::with_capacity(references.len());

    for reference in references {
        let hyp = by_key[&reference.key()];
        let conversation = conversations
            .get(reference.conversation_id.as_str())
            .ok_or_else(|| Error::MissingSource(reference.key()))?;
        let hyp_items = hyp.items();
        scores.push(score_utterance(reference, &hyp_items));

        let times = item_times(reference, conversation)?;
        let events = extract_timed_events(hyp, &config.frames);
        let entry = per_conversation.entry(reference.conversation_id.as_str()).or_default();
        entry.ref_sc.extend(token_times(&reference.items, &times, TaskToken::SpeakerChange));
        entry.ref_ep.extend(token_times(&reference.items, &times, TaskToken::Endpoint));
        for e in events {
            match e.kind {
                TaskToken::SpeakerChange => entry.hyp_sc.push(e.time),
                _ => entry.hyp_ep.push(e.time),
            }
        }
        entry.spans.push(Interval::new(reference.audio_start, reference.audio_end));
    }

    let mut scd_time = Counts::default();
    let mut ep_time = Counts::default();
    let mut coverage = CoverageSums::default();
    let mut detection = DetectionSums::default();
    for (id, ev) in per_conversation {
        let (ref_sc, hyp_sc) = (sorted(ev.ref_sc), sorted(ev.hyp_sc));
        let (ref_ep, hyp_ep) = (sorted(ev.ref_ep), sorted(ev.hyp_ep));
        scd_time += timestamp_counts(&ref_sc, &hyp_sc, config.collar);
        ep_time += timestamp_counts(&ref_ep, &hyp_ep, config.collar);

        let (start, end) = conversations[id].bounds();
        coverage += coverage_sums(&turns_from_events(&ref_sc, start, end), &turns_from_events(&hyp_sc, start, end))?;

        let total: f64 = ev.spans.iter().map(Interval::len).sum();
        detection += DetectionSums::measure(
            &speech_regions_from_endpoints(&ref_ep, &ev.spans),
            &speech_regions_from_endpoints(&hyp_ep, &ev.spans),
            total,
        );
    }

    let mut edits = EditCounts::default();
    for s in &scores {
        edits += s.edits;
    }
    let wer = WerResult::from_counts(edits);
    let pool = |f: fn(&UtteranceScores) -> Counts| scores.iter().map(f).sum::<Counts>().prf();
    let cp = coverage.result();
    let rates = detection.rates();

    let macro_averages = config.macro_average.then(|| {
        let n = scores.len().max(1) as f64;
        let mean = |f: &dyn Fn(&UtteranceScores) -> f64| scores.iter().map(f).sum::<f64>() / n;
        MacroAverages {
            wer: mean(&|s| s.wer().rate),
            ner_exact_f1: mean(&|s| s.ner_exact.prf().f1),
            ner_soft_f1: mean(&|s| s.ner_soft.prf().f1),
            scd_text_f1: mean(&|s| s.scd_text.prf().f1),
            ep_text_f1: mean(&|s| s.ep_text.prf().f1),
        }
    });

    Ok(EvalReport {
        wer: wer.rate,
        ner_exact: pool(|s| s.ner_exact),
        ner_soft: pool(|s| s.ner_soft),
        scd_text: pool(|s| s.scd_text),
        ep_text: pool(|s| s.ep_text),
        scd_time: scd_time.prf(),
        ep_time: ep_time.prf(),
        coverage: cp.coverage,
        purity: cp.purity,
        cp_f1: cp.f1,
        fa: rates.fa,
        ms: rates.ms,
        der: rates.der,
        degenerate: Degenerate {
            wer: wer.degenerate_reference,
            detection: rates.degenerate,
        },
        r#macro: macro_averages,
        utterances: scores,
    })
}
