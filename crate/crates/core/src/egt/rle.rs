//! Run-length encoded token columns.

use crate::interner::TokenHandle;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Run {
    pub len: usize,
    pub value: TokenHandle,
}

/// A column of tokens stored as maximal runs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RleColumn {
    runs: Vec<Run>,
    len: usize,
}

impl RleColumn {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn constant(len: usize, value: TokenHandle) -> Self {
        let mut c = Self::new();
        c.push_run(len, value);
        c
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn runs(&self) -> &[Run] {
        &self.runs
    }

    #[inline]
    pub fn push(&mut self, value: TokenHandle) {
        self.push_run(1, value);
    }

    #[inline]
    pub fn push_run(&mut self, len: usize, value: TokenHandle) {
        if len == 0 {
            return;
        }
        self.len += len;
        match self.runs.last_mut() {
            Some(last) if last.value == value => last.len += len,
            _ => self.runs.push(Run { len, value }),
        }
    }

    pub fn append(&mut self, other: RleColumn) {
        let mut runs = other.runs.into_iter();
        if let Some(first) = runs.next() {
            self.push_run(first.len, first.value);
        }
        self.len += runs.as_slice().iter().map(|r| r.len).sum::<usize>();
        self.runs.extend(runs);
    }

    pub fn first(&self) -> Option<TokenHandle> {
        self.runs.first().map(|r| r.value)
    }

    pub fn iter(&self) -> impl Iterator<Item = TokenHandle> + '_ {
        self.runs.iter().flat_map(|r| std::iter::repeat_n(r.value, r.len))
    }

    pub fn to_vec(&self) -> Vec<TokenHandle> {
        self.iter().collect()
    }

    /// Number of distinct values, counting stops once `cap` is reached.
    pub fn distinct_capped(&self, cap: usize) -> usize {
        let mut seen: Vec<TokenHandle> = Vec::new();
        self.collect_distinct(&mut seen, cap);
        seen.len()
    }

    /// Adds unseen values to `seen` until it holds `cap` entries.
    pub(crate) fn collect_distinct(&self, seen: &mut Vec<TokenHandle>, cap: usize) {
        if cap > 64 {
            let mut set: rustc_hash::FxHashSet<TokenHandle> = seen.iter().copied().collect();
            for r in &self.runs {
                if set.len() >= cap {
                    break;
                }
                if set.insert(r.value) {
                    seen.push(r.value);
                }
            }
            return;
        }
        for r in &self.runs {
            if seen.len() >= cap {
                return;
            }
            if !seen.contains(&r.value) {
                seen.push(r.value);
            }
        }
    }

    /// Removes the first `k` logical entries and returns them as runs.
    pub fn drain_front(&mut self, k: usize) -> Vec<Run> {
        let k = k.min(self.len);
        let mut out = Vec::new();
        let mut left = k;
        let mut whole = 0;
        for r in &self.runs {
            if left == 0 {
                break;
            }
            if r.len <= left {
                out.push(*r);
                left -= r.len;
                whole += 1;
            } else {
                out.push(Run { len: left, value: r.value });
                left = 0;
            }
        }
        self.runs.drain(..whole);
        if let Some(partial) = out.last().filter(|_| out.len() > whole) {
            self.runs[0].len -= partial.len;
        }
        self.len -= k;
        out
    }
}

impl FromIterator<TokenHandle> for RleColumn {
    fn from_iter<I: IntoIterator<Item = TokenHandle>>(iter: I) -> Self {
        let mut c = RleColumn::new();
        for v in iter {
            c.push(v);
        }
        c
    }
}

/// Walks a column in row order, handing out the runs that cover successive
/// row ranges. Used to split several columns along one partition column
/// without expanding runs.
pub(crate) struct RunCursor<'a> {
    runs: &'a [Run],
    idx: usize,
    used: usize,
}

impl<'a> RunCursor<'a> {
    pub(crate) fn new(col: &'a RleColumn) -> Self {
        RunCursor { runs: &col.runs, idx: 0, used: 0 }
    }

    /// Emits the next `n` rows into `out`.
    pub(crate) fn take_into(&mut self, mut n: usize, out: &mut RleColumn) {
        while n > 0 {
            let r = self.runs[self.idx];
            let avail = r.len - self.used;
            let step = avail.min(n);
            out.push_run(step, r.value);
            n -= step;
            self.used += step;
            if self.used == r.len {
                self.idx += 1;
                self.used = 0;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::interner::Interner;

    fn handles(n: usize) -> (Interner, Vec<TokenHandle>) {
        let mut t = Interner::new();
        let hs = (0..n).map(|i| t.intern(&format!("t{i}")).unwrap()).collect();
        (t, hs)
    }

    #[test]
    fn push_merges_runs() {
        let (_t, h) = handles(2);
        let (a, b) = (h[0], h[1]);
        let c: RleColumn = [a, a, a].into_iter().collect();
        assert_eq!(c.runs(), [Run { len: 3, value: a }]);
        let c: RleColumn = [a, b, a].into_iter().collect();
        assert_eq!(c.runs(), [Run { len: 1, value: a }, Run { len: 1, value: b }, Run { len: 1, value: a }]);
        assert_eq!(c.len(), 3);
    }

    #[test]
    fn drain_front_splits_runs() {
        let (_t, h) = handles(3);
        let mut c: RleColumn = [h[0], h[0], h[1], h[1], h[1], h[2]].into_iter().collect();
        let out = c.drain_front(3);
        assert_eq!(out, [Run { len: 2, value: h[0] }, Run { len: 1, value: h[1] }]);
        assert_eq!(c.to_vec(), [h[1], h[1], h[2]]);
        assert_eq!(c.runs().len(), 2);
        assert_eq!(c.drain_front(3).len(), 2);
        assert!(c.is_empty());
    }

    proptest! {
        #[test]
        fn matches_flat_list(vals in prop::collection::vec(0usize..4, 0..400), cut in 0usize..400, cap in 1usize..6) {
            let (_t, h) = handles(4);
            let flat: Vec<TokenHandle> = vals.iter().map(|&v| h[v]).collect();
            let mut c: RleColumn = flat.iter().copied().collect();
            prop_assert_eq!(c.to_vec(), flat.clone());
            prop_assert_eq!(c.len(), flat.len());
            prop_assert!(c.runs().windows(2).all(|w| w[0].value != w[1].value));
            let distinct: std::collections::BTreeSet<_> = flat.iter().collect();
            prop_assert_eq!(c.distinct_capped(cap), distinct.len().min(cap));

            let k = cut.min(flat.len());
            let drained: Vec<TokenHandle> = c.drain_front(k).iter()
                .flat_map(|r| std::iter::repeat_n(r.value, r.len)).collect();
            prop_assert_eq!(&drained[..], &flat[..k]);
            prop_assert_eq!(c.to_vec(), flat[k..].to_vec());

            let mut joined: RleColumn = flat[..k].iter().copied().collect();
            joined.append(c);
            prop_assert_eq!(joined.to_vec(), flat.clone());
            prop_assert!(joined.runs().windows(2).all(|w| w[0].value != w[1].value));
        }
    }

    #[test]
    fn ten_thousand_random_pushes() {
        use rand::{Rng, SeedableRng};
        let (_t, h) = handles(5);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut flat = Vec::new();
        let mut c = RleColumn::new();
        for _ in 0..10_000 {
            // sticky values so runs actually form
            let v = if rng.gen_bool(0.7) { flat.last().copied().unwrap_or(h[0]) } else { h[rng.gen_range(0..5)] };
            flat.push(v);
            c.push(v);
        }
        assert_eq!(c.to_vec(), flat);
        assert!(c.runs().len() < flat.len());
    }
}
