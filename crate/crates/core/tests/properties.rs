mod common;

use convtok::align::{edit_distance, levenshtein_align, wer, OpKind};
use convtok::augment::{augment_text, pack_segments, strip_tokens, PackConfig, TaskSet};
use convtok::corpus::{load_corpus, save_corpus, Conversation, EntitySpan, Item, Segment, TaskToken};
use convtok::evaluate::{evaluate_corpus, EvalConfig};
use convtok::extract::{extract_entities, token_time, turns_from_events, FrameSpec, Interval};
use convtok::metrics::{
    coverage_purity, ner_exact, ner_soft, timestamp_counts, timestamp_f1, CollarConfig, Counts,
};
use convtok::simulate::{corrupt, NoiseConfig};
use convtok::tokenizer::{task_token_surfaces, train_bpe};
use proptest::prelude::*;

const WORDS: [&str; 8] = ["a", "bb", "cab", "dé", "ok", "hello", "x", "yes"];

/// One generated segment: (duration in half seconds, pause in half seconds,
/// speaker, word choices, entity start offsets/lengths).
type SegSpec = (u32, u32, u8, Vec<usize>, Vec<(usize, usize)>);

fn seg_spec() -> impl Strategy<Value = SegSpec> {
    (
        1u32..50,
        0u32..6,
        0u8..3,
        prop::collection::vec(0usize..WORDS.len(), 1..8),
        prop::collection::vec((0usize..3, 1usize..3), 0..3),
    )
}

fn build(specs: Vec<SegSpec>) -> Conversation {
    let mut clock = 0.0;
    let mut segments = Vec::new();
    for (dur, pause, speaker, words, entity_specs) in specs {
        clock += pause as f64 * 0.5;
        let start = clock;
        clock += dur as f64 * 0.5;
        let words: Vec<String> = words.iter().map(|&i| WORDS[i].to_string()).collect();
        let mut entities = Vec::new();
        let mut cursor = 0;
        for (gap, len) in entity_specs {
            let s = cursor + gap;
            let e = s + len - 1;
            if e >= words.len() {
                break;
            }
            entities.push(EntitySpan::new(s, e));
            cursor = e + 1;
        }
        segments.push(Segment {
            start,
            end: clock,
            speaker: format!("s{speaker}"),
            words,
            entities,
        });
    }
    Conversation { id: "p".into(), segments }
}

fn conversation() -> impl Strategy<Value = Conversation> {
    prop::collection::vec(seg_spec(), 1..12).prop_map(build)
}

fn task_set() -> impl Strategy<Value = TaskSet> {
    (any::<bool>(), any::<bool>(), any::<bool>()).prop_map(|(speaker_change, endpoint, entities)| TaskSet {
        speaker_change,
        endpoint,
        entities,
    })
}

fn items_text() -> impl Strategy<Value = Vec<Item>> {
    prop::collection::vec(
        prop_oneof![
            4 => (0usize..WORDS.len()).prop_map(|i| Item::word(WORDS[i])),
            1 => prop::sample::select(TaskToken::ALL.to_vec()).prop_map(Item::Token),
        ],
        0..10,
    )
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, ..ProptestConfig::default() })]

    #[test]
    fn corpus_round_trip(c in conversation()) {
        c.validate().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        save_corpus(std::slice::from_ref(&c), &path).unwrap();
        prop_assert_eq!(load_corpus(&path).unwrap(), vec![c]);
    }

    #[test]
    fn augmentation_invariants(c in conversation(), tasks in task_set(), max in 1.0f64..30.0) {
        let config = PackConfig { max_duration: max, tasks };
        let utts = pack_segments(&c, &config);

        let flattened: Vec<usize> = utts.iter().flat_map(|u| u.source_segment_indices.clone()).collect();
        prop_assert_eq!(flattened, (0..c.segments.len()).collect::<Vec<_>>());

        for u in &utts {
            prop_assert!(u.duration() <= max + 1e-9 || (u.oversize && u.source_segment_indices.len() == 1));
            let segs: Vec<&Segment> = u.source_segment_indices.iter().map(|&i| &c.segments[i]).collect();
            let plain: Vec<String> = segs.iter().flat_map(|s| s.words.clone()).collect();
            prop_assert_eq!(strip_tokens(&u.items), plain);

            let count = |t: TaskToken| u.items.iter().filter(|i| i.is_token(t)).count();
            if tasks.endpoint {
                prop_assert!(count(TaskToken::Endpoint) >= count(TaskToken::SpeakerChange));
                for (k, item) in u.items.iter().enumerate() {
                    if item.is_token(TaskToken::SpeakerChange) {
                        prop_assert!(k > 0 && u.items[k - 1].is_token(TaskToken::Endpoint));
                    }
                }
            }
            let mut depth = 0i32;
            for item in &u.items {
                match item.as_token() {
                    Some(TaskToken::EntityOpen) => depth += 1,
                    Some(TaskToken::EntityClose) => depth -= 1,
                    _ => {}
                }
                prop_assert!(depth == 0 || depth == 1);
            }
            prop_assert_eq!(depth, 0);
            for t in TaskToken::ALL {
                if !tasks.includes(t) {
                    prop_assert_eq!(count(t), 0);
                }
            }
        }
    }

    #[test]
    fn task_subset_monotonicity(c in conversation(), big in task_set(), small in task_set()) {
        let small = TaskSet {
            speaker_change: small.speaker_change && big.speaker_change,
            endpoint: small.endpoint && big.endpoint,
            entities: small.entities && big.entities,
        };
        let segs: Vec<&Segment> = c.segments.iter().collect();
        let full = augment_text(&segs, big);
        let filtered: Vec<Item> = full
            .into_iter()
            .filter(|i| i.as_token().is_none_or(|t| small.includes(t)))
            .collect();
        prop_assert_eq!(augment_text(&segs, small), filtered);
    }

    #[test]
    fn extraction_recovers_reference_entities(c in conversation()) {
        let segs: Vec<&Segment> = c.segments.iter().collect();
        let items = augment_text(&segs, TaskSet::ALL);
        let x = extract_entities(&items);
        prop_assert_eq!((x.unmatched_open, x.unmatched_close), (0, 0));
        let mut expected = Vec::new();
        let mut offset = 0;
        for s in &c.segments {
            for e in &s.entities {
                expected.push((offset + e.start_word_index, offset + e.end_word_index));
            }
            offset += s.words.len();
        }
        let got: Vec<(usize, usize)> = x.entities.iter().map(|e| e.word_span).collect();
        prop_assert_eq!(got, expected);

        let no_events: Vec<Item> = items
            .iter()
            .filter(|i| !i.is_token(TaskToken::SpeakerChange) && !i.is_token(TaskToken::Endpoint))
            .cloned()
            .collect();
        prop_assert_eq!(extract_entities(&no_events), x);
    }

    #[test]
    fn alignment_cost_matches_wagner_fischer(a in items_text(), b in items_text()) {
        let al = levenshtein_align(&a, &b);
        prop_assert_eq!(al.distance(), edit_distance(&a, &b));
        prop_assert_eq!(al.distance(), levenshtein_align(&b, &a).distance());
        let refs: Vec<usize> = al.ops.iter().filter_map(|o| o.ref_index).collect();
        let hyps: Vec<usize> = al.ops.iter().filter_map(|o| o.hyp_index).collect();
        prop_assert_eq!(refs, (0..a.len()).collect::<Vec<_>>());
        prop_assert_eq!(hyps, (0..b.len()).collect::<Vec<_>>());
        for op in &al.ops {
            if let (Some(r), Some(h)) = (op.ref_index, op.hyp_index) {
                prop_assert_eq!(op.kind == OpKind::Match, a[r] == b[h]);
            }
        }
        prop_assert_eq!(wer(&a, &a).rate, 0.0);
        prop_assert!(wer(&a, &b).rate >= 0.0);
    }

    #[test]
    fn soft_match_dominates_exact(a in items_text(), b in items_text()) {
        let (rw, hw) = (strip_tokens(&a), strip_tokens(&b));
        let al = levenshtein_align(&rw, &hw);
        let (re, he) = (extract_entities(&a), extract_entities(&b));
        let exact = ner_exact(&re, &he, &al);
        let soft = ner_soft(&re, &he, &al);
        prop_assert!(exact.tp <= soft.tp);
        prop_assert!(exact.f1 <= soft.f1 + 1e-12);
    }

    #[test]
    fn greedy_collar_matching_is_maximum(
        mut r in prop::collection::vec(0u32..400, 0..9),
        mut h in prop::collection::vec(0u32..400, 0..9),
        collar in 0u32..40,
    ) {
        r.sort();
        h.sort();
        let r: Vec<f64> = r.iter().map(|&x| x as f64 * 0.01).collect();
        let h: Vec<f64> = h.iter().map(|&x| x as f64 * 0.01).collect();
        let collar = collar as f64 * 0.01;
        let c = timestamp_counts(&r, &h, CollarConfig::new(collar).unwrap());
        prop_assert_eq!(c.tp, common::max_collar_matching(&r, &h, collar));
    }

    #[test]
    fn wider_collar_never_lowers_f1(
        mut r in prop::collection::vec(0u32..400, 0..9),
        mut h in prop::collection::vec(0u32..400, 0..9),
        narrow in 0u32..30,
        extra in 0u32..30,
    ) {
        r.sort();
        h.sort();
        let r: Vec<f64> = r.iter().map(|&x| x as f64 * 0.01).collect();
        let h: Vec<f64> = h.iter().map(|&x| x as f64 * 0.01).collect();
        let lo = timestamp_f1(&r, &h, CollarConfig::new(narrow as f64 * 0.01).unwrap());
        let hi = timestamp_f1(&r, &h, CollarConfig::new((narrow + extra) as f64 * 0.01).unwrap());
        prop_assert!(lo.f1 <= hi.f1 + 1e-12);
    }

    #[test]
    fn turns_partition_bounds(mut times in prop::collection::vec(-2.0f64..12.0, 0..8)) {
        times.sort_by(f64::total_cmp);
        let turns = turns_from_events(&times, 0.0, 10.0);
        prop_assert_eq!(turns.first().unwrap().start, 0.0);
        prop_assert_eq!(turns.last().unwrap().end, 10.0);
        for w in turns.windows(2) {
            prop_assert_eq!(w[0].end, w[1].start);
        }
        prop_assert!(turns.iter().all(|t| t.end > t.start));
    }

    #[test]
    fn coverage_role_swap(mut a in prop::collection::vec(1u32..99, 0..6), mut b in prop::collection::vec(1u32..99, 0..6)) {
        a.sort();
        b.sort();
        let cuts = |v: &[u32]| -> Vec<f64> { v.iter().map(|&x| x as f64 * 0.1).collect() };
        let ta = turns_from_events(&cuts(&a), 0.0, 10.0);
        let tb = turns_from_events(&cuts(&b), 0.0, 10.0);
        let ab = coverage_purity(&ta, &tb).unwrap();
        let ba = coverage_purity(&tb, &ta).unwrap();
        prop_assert!((ab.coverage - ba.purity).abs() < 1e-12);
        prop_assert!((ab.purity - ba.coverage).abs() < 1e-12);
        let sampled = common::coverage_by_sampling(&ta, &tb, 1000);
        prop_assert!((ab.coverage - sampled).abs() < 1e-6);
    }

    #[test]
    fn detection_agrees_with_sampling(
        r in prop::collection::vec((0u32..100, 1u32..30), 0..5),
        h in prop::collection::vec((0u32..100, 1u32..30), 0..5),
    ) {
        let build = |v: &[(u32, u32)]| -> Vec<Interval> {
            v.iter().map(|&(s, l)| Interval::new(s as f64 * 0.1, (s + l) as f64 * 0.1)).collect()
        };
        let (r, h) = (build(&r), build(&h));
        let d = convtok::metrics::DetectionSums::measure(&r, &h, 13.0);
        // Endpoints lie on a 0.1 grid, so 0.001-wide bins integrate exactly up to rounding.
        let missed = common::measure_by_sampling(&r, &h, false, 0.0, 13.0, 13_000);
        let false_alarm = common::measure_by_sampling(&h, &r, false, 0.0, 13.0, 13_000);
        prop_assert!((d.missed - missed).abs() < 1e-6, "{} vs {}", d.missed, missed);
        prop_assert!((d.false_alarm - false_alarm).abs() < 1e-6);
    }

    #[test]
    fn token_time_is_monotone(a in 0u64..100_000, b in 0u64..100_000, start in 0.0f64..1000.0) {
        let spec = FrameSpec::default();
        let (lo, hi) = (a.min(b), a.max(b));
        prop_assert!(token_time(lo, &spec, start) <= token_time(hi, &spec, start));
        prop_assert!(token_time(lo, &spec, start) >= start);
    }

    #[test]
    fn jittered_frames_stay_monotone(c in conversation(), lo in -30i64..0, hi in 0i64..30, seed in any::<u64>()) {
        let noise = NoiseConfig { frame_jitter: (lo, hi), ins_rate: 0.3, del_rate: 0.1, seed, ..NoiseConfig::default() };
        for (k, u) in pack_segments(&c, &PackConfig::default()).iter().enumerate() {
            let times = convtok::augment::item_times(u, &c).unwrap();
            let (h, _) = corrupt(u, &times, &noise, &FrameSpec::default(), k as u64);
            prop_assert!(h.validate().is_ok());
        }
    }

    #[test]
    fn micro_average_is_pooled_counts(c in conversation(), seed in any::<u64>()) {
        let utts = pack_segments(&c, &PackConfig::default());
        let noise = NoiseConfig { sub_rate: 0.2, del_rate: 0.1, ins_rate: 0.1, token_drop_rate: 0.2, seed, ..NoiseConfig::default() };
        let frames = FrameSpec::default();
        let hyps: Vec<_> = utts
            .iter()
            .enumerate()
            .map(|(k, u)| corrupt(u, &convtok::augment::item_times(u, &c).unwrap(), &noise, &frames, k as u64).0)
            .collect();
        let report = evaluate_corpus(&[c], &utts, &hyps, &EvalConfig::default()).unwrap();
        let pooled: Counts = report.utterances.iter().map(|u| u.ner_exact).sum();
        prop_assert_eq!(report.ner_exact.counts(), pooled);
        let pooled: Counts = report.utterances.iter().map(|u| u.scd_text).sum();
        prop_assert_eq!(report.scd_text.counts(), pooled);
        let errors: usize = report.utterances.iter().map(|u| u.edits.errors()).sum();
        let words: usize = report.utterances.iter().map(|u| u.edits.ref_len()).sum();
        prop_assert!((report.wer - errors as f64 / words as f64).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn tokenizer_laws(convs in prop::collection::vec(conversation(), 1..4)) {
        let corpus: Vec<Vec<Item>> = convs
            .iter()
            .flat_map(|c| pack_segments(c, &PackConfig::default()))
            .map(|u| u.items)
            .collect();
        let protected = task_token_surfaces();
        let mut previous: Option<Vec<usize>> = None;
        for size in [30, 40, 60, 120] {
            let vocab = match train_bpe(&corpus, size, &protected) {
                Ok(v) => v,
                Err(convtok::Error::VocabTooSmall { .. }) => continue,
                Err(e) => panic!("{e}"),
            };
            for t in TaskToken::ALL {
                prop_assert_eq!(vocab.encode(&[Item::Token(t)]).len(), 1);
            }
            let lengths: Vec<usize> = corpus.iter().map(|s| vocab.encode(s).len()).collect();
            for s in &corpus {
                prop_assert_eq!(&vocab.decode(&vocab.encode(s)).unwrap(), s);
            }
            if let Some(prev) = &previous {
                for (a, b) in prev.iter().zip(&lengths) {
                    prop_assert!(b <= a);
                }
            }
            previous = Some(lengths);
            prop_assert_eq!(train_bpe(&corpus, size, &protected).unwrap().to_text(), vocab.to_text());
        }
    }
}

#[test]
fn detection_matches_sampled_measure() {
    let r = vec![Interval::new(0.0, 3.0), Interval::new(5.0, 9.0)];
    let h = vec![Interval::new(1.0, 6.0), Interval::new(8.5, 10.0)];
    let d = convtok::metrics::detection_metrics(&r, &h, 10.0);
    let missed = common::measure_by_sampling(&r, &h, false, 0.0, 10.0, 100_000);
    let false_alarm = common::measure_by_sampling(&h, &r, false, 0.0, 10.0, 100_000);
    assert!((d.ms - missed / 7.0).abs() < 1e-3);
    assert!((d.fa - false_alarm / 7.0).abs() < 1e-3);
    assert!((d.der - d.fa - d.ms).abs() < 1e-12);
}
