//! Byte-pair-encoding subword vocabulary with atomic task tokens.
//!
//! Every word is split into characters behind a word-boundary marker
//! (`▁hello` becomes `▁ h e l l o`) and adjacent symbols are merged greedily
//! by pair frequency; ties go to the lexicographically smallest pair.
//! Protected strings (the task-token surfaces) are never split: each is one
//! vocabulary piece and is emitted as a single id.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use crate::corpus::{Item, TaskToken};
use crate::error::{Error, Result};

pub const WORD_BOUNDARY: char = '\u{2581}';
pub const RESERVED: [&str; 4] = ["<pad>", "<unk>", "<bos>", "<eos>"];
pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const BOS_ID: u32 = 2;
pub const EOS_ID: u32 = 3;
pub const DEFAULT_VOCAB_SIZE: usize = 500;

const FORMAT_HEADER: &str = "convtok-vocab 1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    vocab_size: usize,
    pieces: Vec<String>,
    piece_ids: HashMap<String, u32>,
    protected: BTreeSet<String>,
    merges: Vec<(String, String)>,
    merge_ranks: HashMap<(String, String), usize>,
}

impl Vocab {
    fn from_parts(
        vocab_size: usize,
        pieces: Vec<String>,
        protected: BTreeSet<String>,
        merges: Vec<(String, String)>,
    ) -> Self {
        let piece_ids = pieces.iter().enumerate().map(|(i, p)| (p.clone(), i as u32)).collect();
        let merge_ranks = merges.iter().enumerate().map(|(i, m)| (m.clone(), i)).collect();
        Vocab {
            vocab_size,
            pieces,
            piece_ids,
            protected,
            merges,
            merge_ranks,
        }
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    /// Size requested at training time; `len()` may be smaller when the
    /// corpus runs out of pairs to merge.
    pub fn requested_size(&self) -> usize {
        self.vocab_size
    }

    pub fn pieces(&self) -> &[String] {
        &self.pieces
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn protected(&self) -> impl Iterator<Item = &str> {
        self.protected.iter().map(String::as_str)
    }

    pub fn id_of(&self, piece: &str) -> Option<u32> {
        self.piece_ids.get(piece).copied()
    }

    pub fn piece(&self, id: u32) -> Option<&str> {
        self.pieces.get(id as usize).map(String::as_str)
    }

    fn is_protected_id(&self, id: u32) -> bool {
        self.pieces.get(id as usize).is_some_and(|p| self.protected.contains(p))
    }

    /// Apply the merge table to one word, in training order.
    fn segment_word(&self, word: &str) -> Vec<Option<String>> {
        let mut symbols: Vec<Option<String>> = std::iter::once(WORD_BOUNDARY)
            .chain(word.chars())
            .enumerate()
            .map(|(i, c)| {
                let s = c.to_string();
                let interior_marker = i > 0 && c == WORD_BOUNDARY;
                (!interior_marker && self.piece_ids.contains_key(&s)).then_some(s)
            })
            .collect();
        let mut next_rank = 0;
        loop {
            let best = symbols
                .windows(2)
                .filter_map(|w| match (&w[0], &w[1]) {
                    (Some(a), Some(b)) => self.merge_ranks.get(&(a.clone(), b.clone())).copied(),
                    _ => None,
                })
                .filter(|&r| r >= next_rank)
                .min();
            let Some(rank) = best else { break };
            let (a, b) = &self.merges[rank];
            symbols = merge_symbols(symbols, a, b);
            next_rank = rank + 1;
        }
        symbols
    }

    /// Encode items to piece ids. Protected tokens become one id each;
    /// characters outside the vocabulary become `<unk>`.
    pub fn encode(&self, items: &[Item]) -> Vec<u32> {
        let mut ids = Vec::new();
        for item in items {
            match item {
                Item::Token(t) => ids.push(self.id_of(t.surface()).filter(|&id| self.is_protected_id(id)).unwrap_or(UNK_ID)),
                Item::Word(w) => ids.extend(
                    self.segment_word(w)
                        .into_iter()
                        .map(|s| s.and_then(|s| self.id_of(&s)).unwrap_or(UNK_ID)),
                ),
            }
        }
        ids
    }

    /// Inverse of [`Vocab::encode`] for in-alphabet input. Reserved control
    /// ids other than `<unk>` are skipped.
    pub fn decode(&self, ids: &[u32]) -> Result<Vec<Item>> {
        let mut items = Vec::new();
        let mut current: Option<String> = None;
        for &id in ids {
            let piece = self.piece(id).ok_or(Error::IdOutOfRange { id, size: self.len() })?;
            match id {
                PAD_ID | BOS_ID | EOS_ID => continue,
                UNK_ID => current.get_or_insert_with(String::new).push_str(RESERVED[UNK_ID as usize]),
                _ if self.is_protected_id(id) => {
                    items.extend(current.take().map(Item::Word));
                    items.push(match TaskToken::from_surface(piece) {
                        Some(t) => Item::Token(t),
                        None => Item::Word(piece.to_string()),
                    });
                }
                _ => match piece.strip_prefix(WORD_BOUNDARY) {
                    Some(rest) => {
                        items.extend(current.take().map(Item::Word));
                        current = Some(rest.to_string());
                    }
                    None => current.get_or_insert_with(String::new).push_str(piece),
                },
            }
        }
        items.extend(current.take().map(Item::Word));
        Ok(items)
    }

    /// Plain-text serialization; `from_text(to_text())` is lossless.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{FORMAT_HEADER}").unwrap();
        writeln!(out, "vocab_size {}", self.vocab_size).unwrap();
        let protected: Vec<&str> = self.protected().collect();
        writeln!(out, "protected {}", protected.join(" ")).unwrap();
        writeln!(out, "pieces {}", self.pieces.len()).unwrap();
        for (i, p) in self.pieces.iter().enumerate() {
            writeln!(out, "{i}\t{p}").unwrap();
        }
        writeln!(out, "merges {}", self.merges.len()).unwrap();
        for (a, b) in &self.merges {
            writeln!(out, "{a}\t{b}").unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Vocab> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = |expect: &str| {
            lines.next().ok_or_else(|| Error::VocabFormat {
                line: 0,
                message: format!("unexpected end of file, expected {expect}"),
            })
        };
        let bad = |line: usize, message: String| Error::VocabFormat { line, message };

        let (ln, header) = next("header")?;
        if header != FORMAT_HEADER {
            return Err(bad(ln, format!("expected {FORMAT_HEADER:?}")));
        }
        let keyed = |(ln, line): (usize, &str), key: &str| -> Result<String> {
            line.strip_prefix(key)
                .and_then(|rest| rest.strip_prefix(' ').or(rest.is_empty().then_some("")))
                .map(str::to_string)
                .ok_or_else(|| bad(ln, format!("expected `{key}` line")))
        };
        let count = |ln: usize, s: String| s.parse::<usize>().map_err(|e| bad(ln, e.to_string()));

        let l = next("vocab_size")?;
        let vocab_size = count(l.0, keyed(l, "vocab_size")?)?;
        let l = next("protected")?;
        let protected: BTreeSet<String> = keyed(l, "protected")?.split(' ').filter(|s| !s.is_empty()).map(String::from).collect();
        let l = next("pieces")?;
        let n_pieces = count(l.0, keyed(l, "pieces")?)?;
        let mut pieces = Vec::with_capacity(n_pieces);
        for expected in 0..n_pieces {
            let (ln, line) = next("piece")?;
            let (id, piece) = line.split_once('\t').ok_or_else(|| bad(ln, "expected `id<TAB>piece`".into()))?;
            if id.parse::<usize>().ok() != Some(expected) {
                return Err(bad(ln, format!("expected id {expected}, found {id:?}")));
            }
            pieces.push(piece.to_string());
        }
        let l = next("merges")?;
        let n_merges = count(l.0, keyed(l, "merges")?)?;
        let mut merges = Vec::with_capacity(n_merges);
        for _ in 0..n_merges {
            let (ln, line) = next("merge")?;
            let (a, b) = line.split_once('\t').ok_or_else(|| bad(ln, "expected `left<TAB>right`".into()))?;
            merges.push((a.to_string(), b.to_string()));
        }

        if pieces.iter().take(RESERVED.len()).ne(RESERVED.iter().copied()) {
            return Err(bad(0, "reserved pieces must occupy ids 0..3".into()));
        }
        let unique: HashSet<&String> = pieces.iter().collect();
        if unique.len() != pieces.len() {
            return Err(bad(0, "duplicate piece".into()));
        }
        if let Some(p) = protected.iter().find(|p| !unique.contains(p)) {
            return Err(bad(0, format!("protected symbol {p:?} has no piece")));
        }
        if let Some((a, b)) = merges.iter().find(|(a, b)| !unique.contains(&format!("{a}{b}"))) {
            return Err(bad(0, format!("merge {a:?} + {b:?} produces no known piece")));
        }
        Ok(Vocab::from_parts(vocab_size, pieces, protected, merges))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Vocab> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Vocab::from_text(&text)
    }
}

fn merge_symbols(symbols: Vec<Option<String>>, a: &str, b: &str) -> Vec<Option<String>> {
    let mut out = Vec::with_capacity(symbols.len());
    let mut iter = symbols.into_iter().peekable();
    while let Some(sym) = iter.next() {
        let is_a = sym.as_deref() == Some(a);
        let next_is_b = iter.peek().is_some_and(|n| n.as_deref() == Some(b));
        if is_a && next_is_b {
            iter.next();
            out.push(Some(format!("{a}{b}")));
        } else {
            out.push(sym);
        }
    }
    out
}

/// Smallest vocabulary that can hold the reserved ids, the protected
/// symbols and the base characters of `items`.
pub fn minimum_vocab_size(items: &[Vec<Item>], protected: &[&str]) -> usize {
    let protected: BTreeSet<&str> = protected.iter().copied().collect();
    let (words, _) = training_words(items, &protected);
    RESERVED.len() + protected.len() + base_alphabet(&words).len()
}

fn training_words<'a>(items: &'a [Vec<Item>], protected: &BTreeSet<&str>) -> (BTreeMap<&'a str, u64>, usize) {
    let mut words = BTreeMap::new();
    let mut skipped = 0;
    for item in items.iter().flatten() {
        let text = item.surface();
        if matches!(item, Item::Token(_)) && protected.contains(text) {
            continue;
        }
        if text.contains(WORD_BOUNDARY) {
            skipped += 1;
            continue;
        }
        *words.entry(text).or_insert(0) += 1;
    }
    (words, skipped)
}

fn base_alphabet(words: &BTreeMap<&str, u64>) -> BTreeSet<char> {
    let mut chars: BTreeSet<char> = words.keys().flat_map(|w| w.chars()).collect();
    if !words.is_empty() {
        chars.insert(WORD_BOUNDARY);
    }
    chars
}

#[derive(PartialEq, Eq)]
struct Candidate {
    count: u64,
    left: String,
    right: String,
    pair: (u32, u32),
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.count
            .cmp(&other.count)
            .then_with(|| (&other.left, &other.right).cmp(&(&self.left, &self.right)))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Train a BPE vocabulary of at most `vocab_size` pieces over the words of
/// `items`. Protected strings get their own pieces and never take part in
/// merges.
pub fn train_bpe(items: &[Vec<Item>], vocab_size: usize, protected: &[&str]) -> Result<Vocab> {
    let protected_set: BTreeSet<&str> = protected.iter().copied().collect();
    if let Some(p) = protected_set.iter().find(|p| p.is_empty() || p.chars().any(char::is_whitespace)) {
        return Err(Error::Config(format!("protected symbol {p:?} must be non-empty without whitespace")));
    }
    let (word_counts, _) = training_words(items, &protected_set);
    let alphabet = base_alphabet(&word_counts);
    for p in &protected_set {
        let mut chars = p.chars();
        let single = chars.next().filter(|_| chars.next().is_none());
        if single.is_some_and(|c| alphabet.contains(&c)) || word_counts.keys().any(|w| w.contains(p)) || RESERVED.contains(p) {
            return Err(Error::ProtectedCollision(p.to_string()));
        }
    }
    let minimum = RESERVED.len() + protected_set.len() + alphabet.len();
    if vocab_size < minimum {
        return Err(Error::VocabTooSmall { requested: vocab_size, minimum });
    }

    let mut pieces: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
    pieces.extend(protected_set.iter().map(|s| s.to_string()));
    let first_char_id = pieces.len() as u32;
    pieces.extend(alphabet.iter().map(char::to_string));
    let mut piece_ids: HashMap<String, u32> = pieces.iter().enumerate().map(|(i, p)| (p.clone(), i as u32)).collect();
    let char_id = |c: char| first_char_id + alphabet.range(..c).count() as u32;

    let mut words: Vec<(Vec<u32>, u64)> = word_counts
        .iter()
        .map(|(w, &n)| (std::iter::once(WORD_BOUNDARY).chain(w.chars()).map(char_id).collect(), n))
        .collect();

    let mut pair_counts: HashMap<(u32, u32), u64> = HashMap::new();
    let mut occurrences: HashMap<(u32, u32), BTreeSet<usize>> = HashMap::new();
    for (wi, (symbols, n)) in words.iter().enumerate() {
        for w in symbols.windows(2) {
            *pair_counts.entry((w[0], w[1])).or_insert(0) += n;
            occurrences.entry((w[0], w[1])).or_default().insert(wi);
        }
    }
    let candidate = |pair: (u32, u32), count: u64, pieces: &[String]| Candidate {
        count,
        left: pieces[pair.0 as usize].clone(),
        right: pieces[pair.1 as usize].clone(),
        pair,
    };
    let mut heap: BinaryHeap<Candidate> = pair_counts.iter().map(|(&p, &c)| candidate(p, c, &pieces)).collect();

    let mut merges = Vec::new();
    while pieces.len() < vocab_size {
        let Some(top) = heap.pop() else { break };
        let current = pair_counts.get(&top.pair).copied().unwrap_or(0);
        if current == 0 || current != top.count {
            continue;
        }
        let (a, b) = top.pair;
        let merged = format!("{}{}", top.left, top.right);
        let merged_id = *piece_ids.entry(merged.clone()).or_insert_with(|| {
            pieces.push(merged);
            (pieces.len() - 1) as u32
        });
        merges.push((top.left, top.right));

        let mut touched: HashSet<(u32, u32)> = HashSet::new();
        for wi in occurrences.remove(&top.pair).unwrap_or_default() {
            let (symbols, n) = &mut words[wi];
            let n = *n;
            let mut updated = Vec::with_capacity(symbols.len());
            let mut i = 0;
            while i < symbols.len() {
                if i + 1 < symbols.len() && symbols[i] == a && symbols[i + 1] == b {
                    updated.push(merged_id);
                    i += 2;
                } else {
                    updated.push(symbols[i]);
                    i += 1;
                }
            }
            if updated.len() == symbols.len() {
                continue;
            }
            for w in symbols.windows(2) {
                let c = pair_counts.get_mut(&(w[0], w[1])).unwrap();
                *c -= n;
                touched.insert((w[0], w[1]));
            }
            for w in updated.windows(2) {
                *pair_counts.entry((w[0], w[1])).or_insert(0) += n;
                occurrences.entry((w[0], w[1])).or_default().insert(wi);
                touched.insert((w[0], w[1]));
            }
            *symbols = updated;
        }
        pair_counts.remove(&top.pair);
        for pair in touched {
            match pair_counts.get(&pair).copied() {
                Some(0) => {
                    pair_counts.remove(&pair);
                }
                Some(c) => heap.push(candidate(pair, c, &pieces)),
                None => {}
            }
        }
    }

    let protected = protected_set.iter().map(|s| s.to_string()).collect();
    Ok(Vocab::from_parts(vocab_size, pieces, protected, merges))
}

/// Surfaces of all four task tokens.
pub fn task_token_surfaces() -> Vec<&'static str> {
    TaskToken::ALL.iter().map(|t| t.surface()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::parse_items;

    fn corpus(lines: &[&str]) -> Vec<Vec<Item>> {
        lines.iter().map(|l| parse_items(l)).collect()
    }

    #[test]
    fn first_merge_on_repeated_word() {
        // "aa aa aa": symbols ▁ a a. Pairs (▁,a) and (a,a) both occur 3
        // times; "a" < "▁" so (a,a) wins the tie.
        let c = corpus(&["aa aa aa"]);
        let base = minimum_vocab_size(&c, &[]);
        assert_eq!(base, 4 + 2);
        let v = train_bpe(&c, base + 5, &[]).unwrap();
        assert_eq!(v.merges()[0], ("a".to_string(), "a".to_string()));
        assert_eq!(v.merges()[1], ("▁".to_string(), "aa".to_string()));
        assert_eq!(v.merges().len(), 2);
        assert_eq!(v.encode(&parse_items("aa")), vec![v.id_of("▁aa").unwrap()]);
    }

    #[test]
    fn protected_token_is_one_id() {
        let c = corpus(&["hello [SC] hi [EP]"]);
        let v = train_bpe(&c, 40, &task_token_surfaces()).unwrap();
        let ids = v.encode(&parse_items("[SC]"));
        assert_eq!(ids.len(), 1);
        assert_eq!(v.piece(ids[0]), Some("[SC]"));
        let ne = v.encode(&parse_items("[NE]"));
        assert_eq!(ne.len(), 1);
        for p in ["[", "NE", "]"] {
            assert_ne!(v.id_of(p), Some(ne[0]));
        }
    }

    #[test]
    fn training_is_deterministic() {
        let c = corpus(&["the cat sat on the mat [EP]", "the [NE] bat [/NE] [EP] [SC]"]);
        let a = train_bpe(&c, 60, &task_token_surfaces()).unwrap();
        let b = train_bpe(&c, 60, &task_token_surfaces()).unwrap();
        assert_eq!(a.to_text(), b.to_text());
    }

    #[test]
    fn round_trip_and_unknowns() {
        let c = corpus(&["hello there [EP] [SC] hi [EP]"]);
        let v = train_bpe(&c, 50, &task_token_surfaces()).unwrap();
        let items = parse_items("hello [EP] [SC] hi [EP]");
        assert_eq!(v.decode(&v.encode(&items)).unwrap(), items);
        let ids = v.encode(&parse_items("hez"));
        assert!(ids.contains(&UNK_ID));
        assert!(v.decode(&[]).unwrap().is_empty());
        let err = v.decode(&[v.len() as u32]).unwrap_err();
        assert!(matches!(err, Error::IdOutOfRange { .. }));
    }

    #[test]
    fn too_small_vocab_names_minimum() {
        let c = corpus(&["abc"]);
        // 4 reserved + 4 protected + {▁, a, b, c}
        match train_bpe(&c, 11, &task_token_surfaces()) {
            Err(Error::VocabTooSmall { minimum, .. }) => assert_eq!(minimum, 12),
            other => panic!("{other:?}"),
        }
        assert!(train_bpe(&c, 12, &task_token_surfaces()).is_ok());
    }

    #[test]
    fn protected_collision() {
        let c = corpus(&["abc"]);
        assert!(matches!(train_bpe(&c, 100, &["a"]), Err(Error::ProtectedCollision(_))));
        assert!(matches!(train_bpe(&c, 100, &["bc"]), Err(Error::ProtectedCollision(_))));
    }

    #[test]
    fn text_format_is_lossless() {
        let c = corpus(&["low lower lowest [NE] newer [/NE] wider [EP]"]);
        let v = train_bpe(&c, 45, &task_token_surfaces()).unwrap();
        let text = v.to_text();
        let back = Vocab::from_text(&text).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.to_text(), text);
        assert!(Vocab::from_text("garbage").is_err());
    }

    #[test]
    fn reserved_ids() {
        let v = train_bpe(&corpus(&["x"]), 20, &[]).unwrap();
        for (i, r) in RESERVED.iter().enumerate() {
            assert_eq!(v.id_of(r), Some(i as u32));
        }
    }

    #[test]
    fn control_ids_are_skipped_in_decode() {
        let v = train_bpe(&corpus(&["ab ab"]), 20, &[]).unwrap();
        let mut ids = vec![BOS_ID];
        ids.extend(v.encode(&parse_items("ab")));
        ids.push(EOS_ID);
        ids.push(PAD_ID);
        assert_eq!(v.decode(&ids).unwrap(), parse_items("ab"));
    }
}
