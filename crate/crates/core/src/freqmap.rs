//! Per-bucket column statistics.
//!
//! For every column of a bucket the map keeps the exact occurrence count of
//! each token. The dominant (most frequent) token per column feeds the
//! adaptive threshold used to pick the static backbone of the bucket's tree.

use std::cell::Cell;
use std::fmt::Write as _;

use rustc_hash::FxHashMap;

use crate::error::{KelpError, Result};
use crate::ingest::TokenizedLine;
use crate::interner::{Interner, TokenHandle};

/// How the decay of the three largest column maxima is turned into a slope.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum SlopeMode {
    /// Least-squares slope of `ln(freq)` against rank 0, 1, 2.
    #[default]
    LnRank,
    /// Least-squares slope of the raw frequencies against rank. `e^|slope|`
    /// saturates almost immediately, which makes every column eligible; kept
    /// for experimentation only.
    RawRank,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdReport {
    pub top3: [u64; 3],
    pub slope: f64,
    pub threshold: u64,
    pub global_max: u64,
}

#[derive(Debug, Default, Clone)]
struct ColumnCounts {
    counts: FxHashMap<TokenHandle, u64>,
    // Cached argmax by (count desc, handle asc). Invalidated when the cached
    // token is decremented and recomputed lazily.
    top: Cell<Option<(TokenHandle, u64)>>,
    stale: Cell<bool>,
}

impl ColumnCounts {
    fn bump(&mut self, t: TokenHandle) {
        let c = self.counts.entry(t).or_insert(0);
        *c += 1;
        let c = *c;
        if self.stale.get() {
            return;
        }
        match self.top.get() {
            Some((bt, bc)) if bc > c || (bc == c && bt < t) => {}
            _ => self.top.set(Some((t, c))),
        }
    }

    fn dominant(&self) -> Option<(TokenHandle, u64)> {
        if self.stale.get() {
            let best = self.counts.iter().map(|(&t, &c)| (t, c)).min_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
            self.top.set(best);
            self.stale.set(false);
        }
        self.top.get()
    }
}

#[derive(Debug, Clone)]
pub struct FrequencyMap {
    cols: Vec<ColumnCounts>,
    total_lines: u64,
    slope_mode: SlopeMode,
}

impl FrequencyMap {
    pub fn new(width: usize) -> Self {
        Self::with_mode(width, SlopeMode::default())
    }

    pub fn with_mode(width: usize, slope_mode: SlopeMode) -> Self {
        FrequencyMap { cols: vec![ColumnCounts::default(); width], total_lines: 0, slope_mode }
    }

    pub fn width(&self) -> usize {
        self.cols.len()
    }

    pub fn total_lines(&self) -> u64 {
        self.total_lines
    }

    pub fn is_empty(&self) -> bool {
        self.total_lines == 0
    }

    pub fn count(&self, col: usize, token: TokenHandle) -> u64 {
        self.cols.get(col).and_then(|c| c.counts.get(&token)).copied().unwrap_or(0)
    }

    pub fn distinct(&self, col: usize) -> usize {
        self.cols.get(col).map_or(0, |c| c.counts.len())
    }

    /// Adds one line. Each token gains one interner reference.
    pub fn record(&mut self, line: &TokenizedLine, interner: &mut Interner) -> Result<()> {
        if line.len() != self.cols.len() {
            return Err(KelpError::Routing { expected: self.cols.len(), got: line.len() });
        }
        for (col, &t) in self.cols.iter_mut().zip(&line.tokens) {
            interner.retain(t, 1)?;
            col.bump(t);
        }
        self.total_lines += 1;
        Ok(())
    }

    /// Removes `n` occurrences of `token` from `column` and releases the
    /// matching interner references. Does not touch `total_lines`; see
    /// [`FrequencyMap::forget_lines`].
    pub fn decrement(&mut self, column: usize, token: TokenHandle, n: u64, interner: &mut Interner) -> Result<()> {
        let col =
            self.cols.get_mut(column).ok_or_else(|| KelpError::invariant(format!("column {column} out of range")))?;
        let have = col.counts.get(&token).copied().unwrap_or(0);
        if have < n {
            return Err(KelpError::invariant(format!("decrement of {n} on col {column} {token:?} holding {have}")));
        }
        if n == 0 {
            return Ok(());
        }
        if have == n {
            col.counts.remove(&token);
        } else {
            col.counts.insert(token, have - n);
        }
        if matches!(col.top.get(), Some((t, _)) if t == token) {
            col.stale.set(true);
        }
        interner.release(token, n)?;
        Ok(())
    }

    /// Lowers the line total after a caller decremented whole lines.
    pub fn forget_lines(&mut self, n: u64) -> Result<()> {
        self.total_lines =
            self.total_lines.checked_sub(n).ok_or_else(|| KelpError::invariant("line total underflow"))?;
        Ok(())
    }

    /// The most frequent token of each column, ties to the lowest handle.
    pub fn dominant(&self, col: usize) -> Option<(TokenHandle, u64)> {
        self.cols.get(col).and_then(ColumnCounts::dominant)
    }

    pub fn compute_threshold(&self) -> Result<ThresholdReport> {
        if self.total_lines == 0 {
            return Err(KelpError::invariant("threshold on empty frequency map"));
        }
        let mut maxima: Vec<u64> = (0..self.cols.len()).map(|c| self.dominant(c).map_or(0, |(_, f)| f)).collect();
        maxima.sort_unstable_by(|a, b| b.cmp(a));
        let mut top3 = [0u64; 3];
        for (i, slot) in top3.iter_mut().enumerate() {
            *slot = maxima[i.min(maxima.len() - 1)];
        }
        let slope = match self.slope_mode {
            SlopeMode::LnRank => rank_slope(top3.map(|f| (f.max(1) as f64).ln())),
            SlopeMode::RawRank => rank_slope(top3.map(|f| f as f64)),
        };
        Ok(ThresholdReport { top3, slope, threshold: threshold_from_slope(slope), global_max: top3[0] })
    }

    /// Columns whose dominant frequency `f` satisfies `f >= global_max / T`,
    /// paired with that dominant token, in column order.
    pub fn root_eligible_columns(&self, report: &ThresholdReport) -> Vec<(usize, TokenHandle)> {
        let t = u128::from(report.threshold.max(1));
        (0..self.cols.len())
            .filter_map(|c| self.dominant(c).map(|(tok, f)| (c, tok, f)))
            .filter(|&(_, _, f)| u128::from(f) * t >= u128::from(report.global_max))
            .map(|(c, tok, _)| (c, tok))
            .collect()
    }

    /// Every `(column, token, count)` entry, columns ascending, then count
    /// descending, then handle.
    pub fn entries(&self) -> Vec<(usize, TokenHandle, u64)> {
        let mut out = Vec::new();
        for (c, col) in self.cols.iter().enumerate() {
            let mut row: Vec<_> = col.counts.iter().map(|(&t, &n)| (c, t, n)).collect();
            row.sort_unstable_by(|a, b| b.2.cmp(&a.2).then(a.1.cmp(&b.1)));
            out.extend(row);
        }
        out
    }

    /// Debug dump: `col<TAB>token<TAB>count`, one entry per line.
    pub fn dump_tsv(&self, interner: &Interner) -> Result<String> {
        let mut s = String::from("col\ttoken\tcount\n");
        for (c, t, n) in self.entries() {
            let _ = writeln!(s, "{c}\t{}\t{n}", interner.resolve(t)?);
        }
        Ok(s)
    }

    /// Checks that each column sums to `total_lines`.
    pub fn check_column_sums(&self) -> Result<()> {
        for (c, col) in self.cols.iter().enumerate() {
            let sum: u64 = col.counts.values().sum();
            if sum != self.total_lines {
                return Err(KelpError::invariant(format!("column {c} sums to {sum}, expected {}", self.total_lines)));
            }
        }
        Ok(())
    }
}

/// Least-squares slope of three values against x = 0, 1, 2.
fn rank_slope(y: [f64; 3]) -> f64 {
    let mean = (y[0] + y[1] + y[2]) / 3.0;
    // sum (x - 1)^2 = 2
    (-(y[0] - mean) + (y[2] - mean)) / 2.0
}

/// `max(1, floor((e^|slope| + 1) / 2))`, saturating.
pub fn threshold_from_slope(slope: f64) -> u64 {
    let v = ((slope.abs().exp() + 1.0) / 2.0).floor();
    if v.is_nan() || v < 1.0 {
        1
    } else if v >= u64::MAX as f64 {
        u64::MAX
    } else {
        v as u64
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::ingest::{tokenize, TokenizerConfig};

    fn line(t: &mut Interner, s: &str) -> TokenizedLine {
        tokenize(s, 0, &TokenizerConfig::default(), t).unwrap().unwrap()
    }

    fn client_stream() -> (Interner, FrequencyMap) {
        let mut t = Interner::new();
        let mut fm = FrequencyMap::new(7);
        for s in ["Connected to client Sid on port 8080", "Connected to client Luke on port 8000"] {
            let l = line(&mut t, s);
            fm.record(&l, &mut t).unwrap();
        }
        (t, fm)
    }

    #[test]
    fn client_stream_counts() {
        let (t, fm) = client_stream();
        let h = |s| t.lookup(s).unwrap();
        assert_eq!(fm.count(0, h("Connected")), 2);
        assert_eq!(fm.count(2, h("client")), 2);
        assert_eq!(fm.count(3, h("Sid")), 1);
        assert_eq!(fm.count(3, h("Luke")), 1);
        assert_eq!(fm.count(5, h("port")), 2);
        fm.check_column_sums().unwrap();
        // one reference per occurrence
        assert_eq!(t.refcount(h("Connected")).unwrap(), 2);
        assert_eq!(t.refcount(h("Sid")).unwrap(), 1);
    }

    #[test]
    fn record_rejects_wrong_width() {
        let mut t = Interner::new();
        let mut fm = FrequencyMap::new(3);
        let l = line(&mut t, "a b");
        assert!(matches!(fm.record(&l, &mut t), Err(KelpError::Routing { expected: 3, got: 2 })));
    }

    #[test]
    fn record_twice_doubles() {
        let mut t = Interner::new();
        let mut fm = FrequencyMap::new(3);
        let l = line(&mut t, "x y z");
        fm.record(&l, &mut t).unwrap();
        fm.record(&l, &mut t).unwrap();
        for (c, &h) in l.tokens.iter().enumerate() {
            assert_eq!(fm.count(c, h), 2);
        }
    }

    #[test]
    fn decrement_removes_and_releases() {
        let (mut t, mut fm) = client_stream();
        let sid = t.lookup("Sid").unwrap();
        let luke = t.lookup("Luke").unwrap();
        fm.decrement(3, sid, 1, &mut t).unwrap();
        assert_eq!(fm.distinct(3), 1);
        assert_eq!(fm.count(3, luke), 1);
        assert!(t.lookup("Sid").is_none(), "last reference reclaimed the slot");
        assert!(matches!(fm.decrement(3, luke, 2, &mut t), Err(KelpError::Invariant(_))));
    }

    #[test]
    fn threshold_examples() {
        let (_, fm) = client_stream();
        let r = fm.compute_threshold().unwrap();
        assert_eq!(r.top3, [2, 2, 2]);
        assert_eq!(r.slope, 0.0);
        assert_eq!(r.threshold, 1);

        // (e^4, e^2, e^0): slope -2, T = floor((e^2 + 1) / 2) = 4
        let s = rank_slope([4.0, 2.0, 0.0]);
        assert!((s + 2.0).abs() < 1e-12);
        assert_eq!(threshold_from_slope(s), 4);

        // (8, 8, 1)
        let s = rank_slope([8f64.ln(), 8f64.ln(), 0.0]);
        assert!((s + 1.0397).abs() < 1e-4, "{s}");
        assert_eq!(threshold_from_slope(s), 1);
    }

    #[test]
    fn least_squares_matches_normal_equations() {
        // Independent oracle: general least-squares fit via normal equations.
        let fit = |y: [f64; 3]| {
            let xs = [0.0, 1.0, 2.0];
            let n = 3.0;
            let sx: f64 = xs.iter().sum();
            let sy: f64 = y.iter().sum();
            let sxx: f64 = xs.iter().map(|x| x * x).sum();
            let sxy: f64 = xs.iter().zip(y).map(|(x, y)| x * y).sum();
            (n * sxy - sx * sy) / (n * sxx - sx * sx)
        };
        for y in [[3.0, 1.0, 0.5], [9.0, 9.0, 9.0], [5.5, 2.0, 1.9]] {
            assert!((fit(y) - rank_slope(y)).abs() < 1e-12);
        }
    }

    #[test]
    fn eligibility_examples() {
        let (t, fm) = client_stream();
        let r = fm.compute_threshold().unwrap();
        let cols: Vec<usize> = fm.root_eligible_columns(&r).into_iter().map(|(c, _)| c).collect();
        assert_eq!(cols, [0, 1, 2, 4, 5]);
        let picks = fm.root_eligible_columns(&r);
        assert_eq!(picks[0].1, t.lookup("Connected").unwrap());

        // f = (100, 60, 3) with T = 2
        let mut t = Interner::new();
        let mut fm = FrequencyMap::new(3);
        for i in 0..100 {
            let b = if i < 60 { "b".to_string() } else { format!("b{i}") };
            let c = if i < 3 { "c".to_string() } else { format!("c{i}") };
            let l = line(&mut t, &format!("a {b} {c}"));
            fm.record(&l, &mut t).unwrap();
        }
        let report = ThresholdReport { top3: [100, 60, 3], slope: 0.0, threshold: 2, global_max: 100 };
        let cols: Vec<usize> = fm.root_eligible_columns(&report).into_iter().map(|(c, _)| c).collect();
        assert_eq!(cols, [0, 1]);
    }

    #[test]
    fn constant_columns_all_eligible() {
        let mut t = Interner::new();
        let mut fm = FrequencyMap::new(4);
        for _ in 0..50 {
            let l = line(&mut t, "w x y z");
            fm.record(&l, &mut t).unwrap();
        }
        let r = fm.compute_threshold().unwrap();
        assert_eq!(fm.root_eligible_columns(&r).len(), 4);
    }

    #[test]
    fn few_columns_pad_by_repetition() {
        let mut t = Interner::new();
        let mut fm = FrequencyMap::new(1);
        for s in ["a", "a", "b"] {
            let l = line(&mut t, s);
            fm.record(&l, &mut t).unwrap();
        }
        assert_eq!(fm.compute_threshold().unwrap().top3, [2, 2, 2]);
        assert!(FrequencyMap::new(2).compute_threshold().is_err());
    }

    #[test]
    fn dump_layout() {
        let (t, fm) = client_stream();
        let dump = fm.dump_tsv(&t).unwrap();
        let lines: Vec<&str> = dump.lines().collect();
        assert_eq!(lines[0], "col\ttoken\tcount");
        assert!(lines.contains(&"3\tSid\t1"));
        let sid = lines.iter().position(|l| *l == "3\tSid\t1").unwrap();
        assert_eq!(lines[sid + 1], "3\tLuke\t1");
    }

    #[test]
    fn stale_top_recomputed_after_decrement() {
        let mut t = Interner::new();
        let mut fm = FrequencyMap::new(1);
        for s in ["a", "a", "a", "b", "b"] {
            let l = line(&mut t, s);
            fm.record(&l, &mut t).unwrap();
        }
        let a = t.lookup("a").unwrap();
        let b = t.lookup("b").unwrap();
        assert_eq!(fm.dominant(0), Some((a, 3)));
        fm.decrement(0, a, 2, &mut t).unwrap();
        fm.forget_lines(2).unwrap();
        assert_eq!(fm.dominant(0), Some((b, 2)));
    }

    proptest! {
        #[test]
        fn column_sums_conserved(rows in prop::collection::vec(prop::collection::vec(0u8..5, 3), 1..200),
                                 drops in prop::collection::vec(any::<prop::sample::Index>(), 0..50)) {
            let mut t = Interner::new();
            let mut fm = FrequencyMap::new(3);
            let mut live: Vec<TokenizedLine> = Vec::new();
            for r in &rows {
                let s = r.iter().map(|v| format!("v{v}")).collect::<Vec<_>>().join(" ");
                let l = line(&mut t, &s);
                fm.record(&l, &mut t).unwrap();
                live.push(l);
            }
            for d in drops {
                if live.is_empty() { break; }
                let l = live.remove(d.index(live.len()));
                for (c, &h) in l.tokens.iter().enumerate() {
                    fm.decrement(c, h, 1, &mut t).unwrap();
                }
                fm.forget_lines(1).unwrap();
            }
            prop_assert_eq!(fm.total_lines(), live.len() as u64);
            fm.check_column_sums().unwrap();
            // dominant cache agrees with a fresh scan
            for c in 0..3 {
                let mut counts = std::collections::BTreeMap::new();
                for l in &live { *counts.entry(l.tokens[c]).or_insert(0u64) += 1; }
                let best = counts.iter().map(|(&h, &n)| (h, n)).min_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
                prop_assert_eq!(fm.dominant(c), best);
            }
            if !live.is_empty() {
                let r1 = fm.compute_threshold().unwrap();
                let r2 = fm.compute_threshold().unwrap();
                prop_assert_eq!(&r1, &r2);
                prop_assert!(r1.threshold >= 1);
                prop_assert!(r1.slope <= 0.0);
                prop_assert!(r1.top3[0] >= r1.top3[1] && r1.top3[1] >= r1.top3[2]);
            }
        }

        #[test]
        fn threshold_monotone_in_decay(a in 1u64..10_000, r1 in 0.0f64..1.0, r2 in 0.0f64..1.0) {
            // steeper ln-decay never lowers T
            let (lo, hi) = if r1 < r2 { (r1, r2) } else { (r2, r1) };
            let ya = (a as f64).ln();
            let shallow = rank_slope([ya, ya - lo, ya - 2.0 * lo]);
            let steep = rank_slope([ya, ya - hi, ya - 2.0 * hi]);
            prop_assert!(threshold_from_slope(steep) >= threshold_from_slope(shallow));
        }
    }
}
