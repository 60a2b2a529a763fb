//! Scoring primitives: precision/recall/F1 bookkeeping, NER exact and soft
//! match, text- and time-based event F1, segment coverage/purity, and
//! speech detection error rates.

use serde::{Serialize, Serializer};

use crate::align::{levenshtein_align, Alignment, OpKind};
use crate::corpus::{Item, TaskToken};
use crate::error::{Error, Result};
use crate::extract::{Entity, EntityExtraction, Interval};

/// Absolute slack added to time comparisons so that frame arithmetic
/// (`start + k * stride`) does not miss exact boundaries by an ulp.
pub const TIME_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Counts {
    pub fn new(tp: usize, fp: usize, fn_: usize) -> Self {
        Counts { tp, fp, fn_ }
    }

    pub fn prf(&self) -> Prf {
        Prf::from_counts(*self)
    }
}

impl std::ops::AddAssign for Counts {
    fn add_assign(&mut self, o: Counts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

impl std::iter::Sum for Counts {
    fn sum<I: Iterator<Item = Counts>>(iter: I) -> Counts {
        let mut total = Counts::default();
        for c in iter {
            total += c;
        }
        total
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Prf {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn from_counts(c: Counts) -> Prf {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(c.tp, c.tp + c.fp);
        let recall = ratio(c.tp, c.tp + c.fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Prf { tp: c.tp, fp: c.fp, fn_: c.fn_, precision, recall, f1 }
    }

    pub fn counts(&self) -> Counts {
        Counts::new(self.tp, self.fp, self.fn_)
    }
}

impl Serialize for Prf {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr {
            p: f64,
            r: f64,
            f1: f64,
            tp: usize,
            fp: usize,
            #[serde(rename = "fn")]
            fn_: usize,
        }
        Repr {
            p: self.precision,
            r: self.recall,
            f1: self.f1,
            tp: self.tp,
            fp: self.fp,
            fn_: self.fn_,
        }
        .serialize(serializer)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollarConfig {
    pub collar: f64,
}

impl Default for CollarConfig {
    fn default() -> Self {
        CollarConfig { collar: 0.250 }
    }
}

impl CollarConfig {
    pub fn new(collar: f64) -> Result<Self> {
        if !(collar >= 0.0 && collar.is_finite()) {
            return Err(Error::Config(format!("collar must be non-negative, got {collar}")));
        }
        Ok(CollarConfig { collar })
    }
}

/// Entity match counts under the given pairing predicate. Hypothesis
/// entities are visited left to right and each takes the leftmost unused
/// reference entity that satisfies `pairs`.
fn match_entities(
    reference: &EntityExtraction,
    hypothesis: &EntityExtraction,
    mut pairs: impl FnMut(&Entity, &Entity) -> bool,
) -> Counts {
    let mut used = vec![false; reference.entities.len()];
    let mut tp = 0;
    for h in &hypothesis.entities {
        let hit = reference
            .entities
            .iter()
            .enumerate()
            .find(|(i, r)| !used[*i] && pairs(r, h))
            .map(|(i, _)| i);
        if let Some(i) = hit {
            used[i] = true;
            tp += 1;
        }
    }
    Counts {
        tp,
        fp: hypothesis.entities.len() - tp + hypothesis.unmatched_open + hypothesis.unmatched_close,
        fn_: reference.entities.len() - tp + reference.unmatched_open + reference.unmatched_close,
    }
}

/// Position of every hypothesis word in the reference, with whether it is an
/// exact match.
fn hyp_links(alignment: &Alignment) -> Vec<Option<(usize, bool)>> {
    let hyp_len = alignment.ops.iter().filter(|o| o.hyp_index.is_some()).count();
    let mut links = vec![None; hyp_len];
    for op in &alignment.ops {
        if let (Some(r), Some(h)) = (op.ref_index, op.hyp_index) {
            links[h] = Some((r, op.kind == OpKind::Match));
        }
    }
    links
}

/// Exact-match NER: a hypothesis entity counts only when every one of its
/// words is an exact alignment match and together they cover precisely one
/// reference entity span. `alignment` is over token-stripped words.
pub fn ner_exact(reference: &EntityExtraction, hypothesis: &EntityExtraction, alignment: &Alignment) -> Prf {
    let links = hyp_links(alignment);
    match_entities(reference, hypothesis, |r, h| {
        let (hs, he) = h.word_span;
        let (rs, re) = r.word_span;
        he - hs == re - rs
            && (hs..=he).all(|k| links.get(k).copied().flatten() == Some((rs + k - hs, true)))
    })
    .prf()
}

/// Soft-match NER: a hypothesis entity counts when any of its words is
/// aligned (match or substitution) into a reference entity span.
pub fn ner_soft(reference: &EntityExtraction, hypothesis: &EntityExtraction, alignment: &Alignment) -> Prf {
    let links = hyp_links(alignment);
    match_entities(reference, hypothesis, |r, h| {
        let (rs, re) = r.word_span;
        let (hs, he) = h.word_span;
        (hs..=he).any(|k| links.get(k).copied().flatten().is_some_and(|(ri, _)| ri >= rs && ri <= re))
    })
    .prf()
}

/// Counts for one task token over an alignment of full item sequences: a
/// reference token aligned to the same token is a TP, any other reference
/// token is a FN, and any hypothesis token not matched is a FP.
pub fn token_counts(reference: &[Item], hypothesis: &[Item], alignment: &Alignment, token: TaskToken) -> Counts {
    let mut c = Counts::default();
    for op in &alignment.ops {
        let r = op.ref_index.is_some_and(|i| reference[i].is_token(token));
        let h = op.hyp_index.is_some_and(|i| hypothesis[i].is_token(token));
        match (op.kind, r, h) {
            (OpKind::Match, true, _) => c.tp += 1,
            (_, true, true) => unreachable!("identical tokens always align as a match"),
            (_, true, false) => c.fn_ += 1,
            (_, false, true) => c.fp += 1,
            _ => {}
        }
    }
    c
}

pub fn scd_text_f1(reference: &[Item], hypothesis: &[Item]) -> Prf {
    let alignment = levenshtein_align(reference, hypothesis);
    token_counts(reference, hypothesis, &alignment, TaskToken::SpeakerChange).prf()
}

pub fn ep_text_f1(reference: &[Item], hypothesis: &[Item]) -> Prf {
    let alignment = levenshtein_align(reference, hypothesis);
    token_counts(reference, hypothesis, &alignment, TaskToken::Endpoint).prf()
}

/// One-to-one greedy matching of sorted timestamps: each hypothesis time,
/// in order, takes the earliest unmatched reference time within the collar.
pub fn timestamp_counts(reference: &[f64], hypothesis: &[f64], collar: CollarConfig) -> Counts {
    let tol = collar.collar + TIME_EPSILON;
    let mut next = 0;
    let mut tp = 0;
    for &h in hypothesis {
        // References too early for h are too early for every later h too.
        while next < reference.len() && reference[next] < h - tol {
            next += 1;
        }
        if next < reference.len() && reference[next] <= h + tol {
            tp += 1;
            next += 1;
        }
    }
    Counts::new(tp, hypothesis.len() - tp, reference.len() - tp)
}

pub fn timestamp_f1(reference: &[f64], hypothesis: &[f64], collar: CollarConfig) -> Prf {
    timestamp_counts(reference, hypothesis, collar).prf()
}

/// Numerator and denominator sums behind coverage and purity, so that
/// several conversations can be pooled before dividing.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CoverageSums {
    pub covered: f64,
    pub reference_total: f64,
    pub pure: f64,
    pub hypothesis_total: f64,
}

impl CoverageSums {
    pub fn coverage(&self) -> f64 {
        if self.reference_total > 0.0 { self.covered / self.reference_total } else { 1.0 }
    }

    pub fn purity(&self) -> f64 {
        if self.hypothesis_total > 0.0 { self.pure / self.hypothesis_total } else { 1.0 }
    }

    pub fn result(&self) -> CoveragePurity {
        let (c, p) = (self.coverage(), self.purity());
        CoveragePurity { coverage: c, purity: p, f1: harmonic(c, p) }
    }
}

impl std::ops::AddAssign for CoverageSums {
    fn add_assign(&mut self, o: Self) {
        self.covered += o.covered;
        self.reference_total += o.reference_total;
        self.pure += o.pure;
        self.hypothesis_total += o.hypothesis_total;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoveragePurity {
    pub coverage: f64,
    pub purity: f64,
    pub f1: f64,
}

fn harmonic(a: f64, b: f64) -> f64 {
    if a + b == 0.0 { 0.0 } else { 2.0 * a * b / (a + b) }
}

fn extent(turns: &[Interval]) -> (f64, f64) {
    let start = turns.iter().map(|t| t.start).fold(f64::INFINITY, f64::min);
    let end = turns.iter().map(|t| t.end).fold(f64::NEG_INFINITY, f64::max);
    (start, end)
}

/// Sum over `a` of the largest overlap with any element of `b`.
fn best_overlap_sum(a: &[Interval], b: &[Interval]) -> f64 {
    a.iter()
        .map(|x| b.iter().map(|y| x.overlap(y)).fold(0.0, f64::max))
        .sum()
}

pub fn coverage_sums(reference: &[Interval], hypothesis: &[Interval]) -> Result<CoverageSums> {
    let (re, he) = (extent(reference), extent(hypothesis));
    let close = |a: f64, b: f64| (a - b).abs() <= TIME_EPSILON || (a.is_infinite() && a == b);
    if !(close(re.0, he.0) && close(re.1, he.1)) {
        return Err(Error::ExtentMismatch { reference: re, hypothesis: he });
    }
    Ok(CoverageSums {
        covered: best_overlap_sum(reference, hypothesis),
        reference_total: reference.iter().map(Interval::len).sum(),
        pure: best_overlap_sum(hypothesis, reference),
        hypothesis_total: hypothesis.iter().map(Interval::len).sum(),
    })
}

/// Segment coverage and purity of two partitions of the same time extent.
pub fn coverage_purity(reference: &[Interval], hypothesis: &[Interval]) -> Result<CoveragePurity> {
    Ok(coverage_sums(reference, hypothesis)?.result())
}

/// Sort and merge overlapping or touching intervals, dropping empty ones.
pub fn merge_intervals(intervals: &[Interval]) -> Vec<Interval> {
    let mut sorted: Vec<Interval> = intervals.iter().copied().filter(|i| !i.is_empty()).collect();
    sorted.sort_by(|a, b| a.start.total_cmp(&b.start).then(a.end.total_cmp(&b.end)));
    let mut out: Vec<Interval> = Vec::with_capacity(sorted.len());
    for iv in sorted {
        match out.last_mut() {
            Some(last) if iv.start <= last.end => last.end = last.end.max(iv.end),
            _ => out.push(iv),
        }
    }
    out
}

/// Raw durations behind FA/MS/DER, poolable across conversations.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DetectionSums {
    pub false_alarm: f64,
    pub missed: f64,
    pub reference_speech: f64,
    pub total_duration: f64,
}

impl std::ops::AddAssign for DetectionSums {
    fn add_assign(&mut self, o: Self) {
        self.false_alarm += o.false_alarm;
        self.missed += o.missed;
        self.reference_speech += o.reference_speech;
        self.total_duration += o.total_duration;
    }
}

/// Length of `a` not covered by `b`, both merged and sorted. Pieces shorter
/// than `TIME_EPSILON` are rounding residue and are ignored.
fn outside_length(a: &[Interval], b: &[Interval]) -> f64 {
    let mut total = 0.0;
    let mut piece = |lo: f64, hi: f64| {
        if hi - lo > TIME_EPSILON {
            total += hi - lo;
        }
    };
    let mut j = 0;
    for iv in a {
        let mut cursor = iv.start;
        while j < b.len() && b[j].end <= cursor {
            j += 1;
        }
        let mut k = j;
        while k < b.len() && b[k].start < iv.end {
            piece(cursor, b[k].start.min(iv.end));
            cursor = cursor.max(b[k].end);
            k += 1;
        }
        piece(cursor, iv.end);
    }
    total
}

impl DetectionSums {
    pub fn measure(reference: &[Interval], hypothesis: &[Interval], total_duration: f64) -> DetectionSums {
        let r = merge_intervals(reference);
        let h = merge_intervals(hypothesis);
        DetectionSums {
            false_alarm: outside_length(&h, &r),
            missed: outside_length(&r, &h),
            reference_speech: r.iter().map(Interval::len).sum(),
            total_duration,
        }
    }

    /// Rates relative to reference speech time. With no reference speech the
    /// rates fall back to the total duration and the result is flagged.
    pub fn rates(&self) -> DetectionRates {
        let (den, degenerate) = if self.reference_speech > 0.0 {
            (self.reference_speech, false)
        } else {
            (self.total_duration, true)
        };
        let rate = |x: f64| if den > 0.0 { x / den } else { 0.0 };
        let fa = rate(self.false_alarm);
        let ms = rate(self.missed);
        DetectionRates { fa, ms, der: fa + ms, degenerate }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct DetectionRates {
    pub fa: f64,
    pub ms: f64,
    pub der: f64,
    pub degenerate: bool,
}

pub fn detection_metrics(reference: &[Interval], hypothesis: &[Interval], total_duration: f64) -> DetectionRates {
    DetectionSums::measure(reference, hypothesis, total_duration).rates()
}
