//! Unit-cost edit-distance alignment and word error rate.

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OpKind {
    Match,
    Substitute,
    Insert,
    Delete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct AlignOp {
    pub kind: OpKind,
    pub ref_index: Option<usize>,
    pub hyp_index: Option<usize>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct EditCounts {
    pub matches: usize,
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
}

impl EditCounts {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    pub fn ref_len(&self) -> usize {
        self.matches + self.substitutions + self.deletions
    }

    pub fn hyp_len(&self) -> usize {
        self.matches + self.substitutions + self.insertions
    }
}

impl std::ops::AddAssign for EditCounts {
    fn add_assign(&mut self, o: Self) {
        self.matches += o.matches;
        self.substitutions += o.substitutions;
        self.deletions += o.deletions;
        self.insertions += o.insertions;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Alignment {
    pub ops: Vec<AlignOp>,
}

impl Alignment {
    pub fn counts(&self) -> EditCounts {
        let mut c = EditCounts::default();
        for op in &self.ops {
            match op.kind {
                OpKind::Match => c.matches += 1,
                OpKind::Substitute => c.substitutions += 1,
                OpKind::Delete => c.deletions += 1,
                OpKind::Insert => c.insertions += 1,
            }
        }
        c
    }

    pub fn distance(&self) -> usize {
        self.counts().errors()
    }

    /// For each hypothesis position, the reference position it is paired with
    /// (match or substitution), if any.
    pub fn hyp_to_ref(&self, hyp_len: usize) -> Vec<Option<usize>> {
        let mut map = vec![None; hyp_len];
        for op in &self.ops {
            if let (Some(r), Some(h)) = (op.ref_index, op.hyp_index) {
                map[h] = Some(r);
            }
        }
        map
    }
}

/// Minimum-cost alignment with unit costs. The backtrace runs from the end of
/// both sequences and prefers match, then substitution, deletion, insertion.
pub fn levenshtein_align<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> Alignment {
    let n = reference.len();
    let m = hypothesis.len();
    let width = m + 1;
    let mut dp = vec![0u32; (n + 1) * width];
    for (j, cell) in dp[..width].iter_mut().enumerate() {
        *cell = j as u32;
    }
    for i in 1..=n {
        dp[i * width] = i as u32;
        for j in 1..=m {
            let diag = dp[(i - 1) * width + j - 1] + u32::from(reference[i - 1] != hypothesis[j - 1]);
            let up = dp[(i - 1) * width + j] + 1;
            let left = dp[i * width + j - 1] + 1;
            dp[i * width + j] = diag.min(up).min(left);
        }
    }

    let mut ops = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = dp[i * width + j];
        if i > 0 && j > 0 {
            let same = reference[i - 1] == hypothesis[j - 1];
            let diag = dp[(i - 1) * width + j - 1];
            if same && here == diag {
                ops.push(AlignOp { kind: OpKind::Match, ref_index: Some(i - 1), hyp_index: Some(j - 1) });
                i -= 1;
                j -= 1;
                continue;
            }
            if !same && here == diag + 1 {
                ops.push(AlignOp { kind: OpKind::Substitute, ref_index: Some(i - 1), hyp_index: Some(j - 1) });
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && here == dp[(i - 1) * width + j] + 1 {
            ops.push(AlignOp { kind: OpKind::Delete, ref_index: Some(i - 1), hyp_index: None });
            i -= 1;
        } else {
            ops.push(AlignOp { kind: OpKind::Insert, ref_index: None, hyp_index: Some(j - 1) });
            j -= 1;
        }
    }
    ops.reverse();
    Alignment { ops }
}

/// Two-row Wagner-Fischer distance, independent of the backtracking aligner.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WerResult {
    pub rate: f64,
    pub counts: EditCounts,
    /// Set when the reference is empty but the hypothesis is not; `rate` is
    /// then the hypothesis length.
    pub degenerate_reference: bool,
}

impl WerResult {
    pub fn from_counts(counts: EditCounts) -> Self {
        let errors = counts.errors();
        let ref_len = counts.ref_len();
        let (rate, degenerate) = match (ref_len, errors) {
            (0, 0) => (0.0, false),
            (0, e) => (e as f64, true),
            (r, e) => (e as f64 / r as f64, false),
        };
        WerResult { rate, counts, degenerate_reference: degenerate }
    }
}

/// Word error rate of token-stripped word sequences.
pub fn wer<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> WerResult {
    WerResult::from_counts(levenshtein_align(reference, hypothesis).counts())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    fn kinds(a: &Alignment) -> Vec<OpKind> {
        a.ops.iter().map(|o| o.kind).collect()
    }

    #[test]
    fn identity_alignment() {
        let a = levenshtein_align(&toks("a b c"), &toks("a b c"));
        assert_eq!(kinds(&a), vec![OpKind::Match; 3]);
        assert_eq!(a.distance(), 0);
    }

    #[test]
    fn single_substitution() {
        let a = levenshtein_align(&toks("a b c"), &toks("a x c"));
        assert_eq!(kinds(&a), vec![OpKind::Match, OpKind::Substitute, OpKind::Match]);
        assert_eq!(a.distance(), 1);
    }

    #[test]
    fn delete_against_empty() {
        let a = levenshtein_align(&toks("a"), &toks(""));
        assert_eq!(a.ops, vec![AlignOp { kind: OpKind::Delete, ref_index: Some(0), hyp_index: None }]);
    }

    #[test]
    fn wer_examples() {
        assert_eq!(wer(&toks("a b c"), &toks("a b c")).rate, 0.0);
        assert!((wer(&toks("a b c"), &toks("a x c")).rate - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(wer(&toks("a b"), &toks("a b c d")).rate, 1.0);
    }

    #[test]
    fn empty_reference_is_flagged() {
        let r = wer(&toks(""), &toks("x y"));
        assert!(r.degenerate_reference);
        assert_eq!(r.rate, 2.0);
        let r = wer::<&str>(&[], &[]);
        assert!(!r.degenerate_reference);
        assert_eq!(r.rate, 0.0);
    }

    #[test]
    fn tie_break_prefers_substitution() {
        // "a b" vs "b a": two substitutions or delete+match+insert, both cost 2.
        let a = levenshtein_align(&toks("a b"), &toks("b a"));
        assert_eq!(kinds(&a), vec![OpKind::Substitute, OpKind::Substitute]);
        assert_eq!(edit_distance(&toks("a b"), &toks("b a")), 2);
    }

    #[test]
    fn hyp_to_ref_map() {
        let a = levenshtein_align(&toks("a b c"), &toks("a c"));
        assert_eq!(a.hyp_to_ref(2), vec![Some(0), Some(2)]);
    }
}
