//! Independent reference implementations used to check the library.

#![allow(dead_code)]

use convtok::extract::Interval;

/// Minimal edit cost by enumerating every monotone set of aligned pairs
/// (each pair a match or substitution). Unpaired positions on either side
/// are deletions or insertions. Exponential; only for short inputs.
pub fn exhaustive_edit_cost<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    fn walk<T: PartialEq>(a: &[T], b: &[T], i0: usize, j0: usize, pairs: usize, subs: usize, best: &mut usize) {
        let cost = subs + (a.len() - pairs) + (b.len() - pairs);
        *best = (*best).min(cost);
        for i in i0..a.len() {
            for j in j0..b.len() {
                walk(a, b, i + 1, j + 1, pairs + 1, subs + usize::from(a[i] != b[j]), best);
            }
        }
    }
    let mut best = usize::MAX;
    walk(a, b, 0, 0, 0, 0, &mut best);
    best
}

/// All sequences over `alphabet` of length `0..=max_len`.
pub fn all_sequences(alphabet: &[u8], max_len: usize) -> Vec<Vec<u8>> {
    let mut out = vec![vec![]];
    let mut frontier: Vec<Vec<u8>> = vec![vec![]];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &frontier {
            for &c in alphabet {
                let mut t = s.clone();
                t.push(c);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// Maximum bipartite matching between reference and hypothesis times where
/// an edge exists when the times differ by at most `collar`. Exact search
/// over subsets of used references.
pub fn max_collar_matching(reference: &[f64], hypothesis: &[f64], collar: f64) -> usize {
    assert!(reference.len() <= 16);
    let mut memo = std::collections::HashMap::new();
    fn best(
        h: usize,
        used: u32,
        r: &[f64],
        hy: &[f64],
        collar: f64,
        memo: &mut std::collections::HashMap<(usize, u32), usize>,
    ) -> usize {
        if h == hy.len() {
            return 0;
        }
        if let Some(&v) = memo.get(&(h, used)) {
            return v;
        }
        let mut v = best(h + 1, used, r, hy, collar, memo);
        for (k, &t) in r.iter().enumerate() {
            if used & (1 << k) == 0 && (t - hy[h]).abs() <= collar + 1e-9 {
                v = v.max(1 + best(h + 1, used | (1 << k), r, hy, collar, memo));
            }
        }
        memo.insert((h, used), v);
        v
    }
    best(0, 0, reference, hypothesis, collar, &mut memo)
}

/// Coverage by midpoint-rule integration on a fine grid: for each reference
/// turn, measure how much of it lies in each hypothesis turn.
pub fn coverage_by_sampling(reference: &[Interval], hypothesis: &[Interval], steps_per_unit: usize) -> f64 {
    let mut covered = 0.0;
    let mut total = 0.0;
    for r in reference {
        let n = ((r.end - r.start) * steps_per_unit as f64).round().max(1.0) as usize;
        let dt = (r.end - r.start) / n as f64;
        let mut per_hyp = vec![0.0; hypothesis.len()];
        for k in 0..n {
            let t = r.start + (k as f64 + 0.5) * dt;
            if let Some(i) = hypothesis.iter().position(|h| t >= h.start && t < h.end) {
                per_hyp[i] += dt;
            }
        }
        covered += per_hyp.iter().cloned().fold(0.0, f64::max);
        total += r.end - r.start;
    }
    covered / total
}

/// Length of a union of intervals by sampling.
pub fn measure_by_sampling(a: &[Interval], predicate_b: &[Interval], want_in_b: bool, lo: f64, hi: f64, n: usize) -> f64 {
    let dt = (hi - lo) / n as f64;
    (0..n)
        .map(|k| lo + (k as f64 + 0.5) * dt)
        .filter(|&t| a.iter().any(|i| t >= i.start && t < i.end))
        .filter(|&t| predicate_b.iter().any(|i| t >= i.start && t < i.end) == want_in_b)
        .count() as f64
        * dt
}
