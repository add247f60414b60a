//! Columnar row buffer backing dynamic leaves.

use rustc_hash::FxHashMap;

use super::rle::{RleColumn, Run, RunCursor};
use crate::error::{KelpError, Result};
use crate::interner::TokenHandle;

/// Buffered rows of a dynamic leaf, one RLE column per unconstrained column.
///
/// `discarded` counts rows dropped by trimming; they still count towards the
/// leaf's template. `hints` holds, per column, a lower bound on the number of
/// distinct values the column has shown, so trimming cannot make a varying
/// column look constant. `dropped` summarises, per column, the values of the
/// discarded rows.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RowStore {
    cols: Vec<usize>,
    columns: Vec<RleColumn>,
    rows: usize,
    discarded: u64,
    hints: Vec<u32>,
    dropped: Vec<Dropped>,
}

/// Values seen in one column of the discarded rows.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub(crate) enum Dropped {
    #[default]
    Nothing,
    Const(TokenHandle),
    Mixed,
}

impl Dropped {
    fn see(self, v: TokenHandle) -> Self {
        match self {
            Dropped::Nothing => Dropped::Const(v),
            Dropped::Const(x) if x == v => self,
            _ => Dropped::Mixed,
        }
    }

    fn join(self, other: Dropped) -> Self {
        match other {
            Dropped::Nothing => self,
            Dropped::Const(v) => self.see(v),
            Dropped::Mixed => Dropped::Mixed,
        }
    }
}

impl RowStore {
    /// Empty store over `cols`, which must be strictly increasing.
    pub fn new(cols: Vec<usize>) -> Self {
        debug_assert!(cols.windows(2).all(|w| w[0] < w[1]));
        let n = cols.len();
        RowStore {
            cols,
            columns: vec![RleColumn::new(); n],
            rows: 0,
            discarded: 0,
            hints: vec![0; n],
            dropped: vec![Dropped::Nothing; n],
        }
    }

    /// Store with no columns holding `rows` identical rows.
    pub fn blank(rows: usize, discarded: u64) -> Self {
        RowStore { rows, discarded, ..Self::default() }
    }

    pub fn from_rows(cols: Vec<usize>, rows: &[Vec<TokenHandle>]) -> Self {
        let mut s = RowStore::new(cols);
        for r in rows {
            s.push_values(r);
        }
        s
    }

    pub fn cols(&self) -> &[usize] {
        &self.cols
    }

    pub fn columns(&self) -> &[RleColumn] {
        &self.columns
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn discarded(&self) -> u64 {
        self.discarded
    }

    /// Rows this leaf has ever represented, including trimmed ones.
    pub fn represented(&self) -> u64 {
        self.rows as u64 + self.discarded
    }

    pub fn hint(&self, idx: usize) -> u32 {
        self.hints[idx]
    }

    pub(crate) fn dropped(&self, idx: usize) -> Dropped {
        self.dropped[idx]
    }

    pub fn position(&self, col: usize) -> Option<usize> {
        self.cols.binary_search(&col).ok()
    }

    pub fn column(&self, col: usize) -> Option<&RleColumn> {
        self.position(col).map(|i| &self.columns[i])
    }

    /// Appends a full-width line, keeping only this store's columns.
    #[inline]
    pub fn push_line(&mut self, tokens: &[TokenHandle]) {
        for (c, column) in self.cols.iter().zip(self.columns.iter_mut()) {
            column.push(tokens[*c]);
        }
        self.rows += 1;
    }

    /// Appends a row given as one value per store column.
    pub fn push_values(&mut self, values: &[TokenHandle]) {
        assert_eq!(values.len(), self.cols.len());
        for (column, &v) in self.columns.iter_mut().zip(values) {
            column.push(v);
        }
        self.rows += 1;
    }

    /// Effective cardinality of a column: observed distinct values (capped),
    /// raised to the remembered lower bound and to what the discarded rows
    /// are known to add.
    pub fn cardinality(&self, idx: usize, cap: usize) -> usize {
        let seen = self.columns[idx].distinct_capped(cap);
        let dropped = match self.dropped[idx] {
            Dropped::Nothing => 0,
            Dropped::Const(v) if seen == 0 || (seen == 1 && self.columns[idx].first() == Some(v)) => 1,
            Dropped::Const(_) | Dropped::Mixed => 2,
        };
        seen.max(self.hints[idx] as usize).max(dropped)
    }

    /// The value every represented row holds in a column, if there is one.
    pub fn constant(&self, idx: usize) -> Option<TokenHandle> {
        if self.cardinality(idx, 2) != 1 {
            return None;
        }
        match self.dropped[idx] {
            Dropped::Const(v) => Some(v),
            _ => self.columns[idx].first(),
        }
    }

    /// Groups row indices by their value at `col`, in order of first appearance.
    pub fn partition(&self, col: usize) -> Result<Vec<(TokenHandle, Vec<usize>)>> {
        let idx = self.position(col).ok_or_else(|| KelpError::Structural(format!("column {col} not in store")))?;
        let mut order: Vec<(TokenHandle, Vec<usize>)> = Vec::new();
        let mut slot: FxHashMap<TokenHandle, usize> = FxHashMap::default();
        let mut row = 0;
        for r in self.columns[idx].runs() {
            let i = *slot.entry(r.value).or_insert_with(|| {
                order.push((r.value, Vec::new()));
                order.len() - 1
            });
            order[i].1.extend(row..row + r.len);
            row += r.len;
        }
        Ok(order)
    }

    /// Splits the store on `col`: one sub-store per distinct value (first
    /// appearance order) holding that value's rows minus `col`. Only run
    /// headers are rewritten. Discarded rows go to their value when they all
    /// shared one, otherwise they are shared out in proportion to row counts
    /// and every child receiving some inherits the discard summary. Hints
    /// start over, since a parent's trimmed variety says nothing about any
    /// one child.
    pub fn split_by(self, col: usize) -> Result<Vec<(TokenHandle, RowStore)>> {
        let idx = self.position(col).ok_or_else(|| KelpError::Structural(format!("column {col} not in store")))?;
        let mut rest_cols = self.cols.clone();
        rest_cols.remove(idx);

        let mut parts: Vec<(TokenHandle, RowStore)> = Vec::new();
        let mut slot: FxHashMap<TokenHandle, usize> = FxHashMap::default();
        let mut cursors: Vec<RunCursor<'_>> =
            self.columns.iter().enumerate().filter(|&(i, _)| i != idx).map(|(_, c)| RunCursor::new(c)).collect();
        for r in self.columns[idx].runs() {
            let i = *slot.entry(r.value).or_insert_with(|| {
                parts.push((r.value, RowStore::new(rest_cols.clone())));
                parts.len() - 1
            });
            let part = &mut parts[i].1;
            for (cur, out) in cursors.iter_mut().zip(part.columns.iter_mut()) {
                cur.take_into(r.len, out);
            }
            part.rows += r.len;
        }

        if self.discarded > 0 {
            let mut rest_dropped = self.dropped.clone();
            let key = rest_dropped.remove(idx);
            if let Dropped::Const(v) = key {
                // every discarded row belongs to `v`
                let i = *slot.entry(v).or_insert_with(|| {
                    parts.push((v, RowStore::new(rest_cols.clone())));
                    parts.len() - 1
                });
                parts[i].1.discarded = self.discarded;
                parts[i].1.dropped = rest_dropped;
            } else {
                let sizes: Vec<usize> = parts.iter().map(|(_, s)| s.rows).collect();
                for (share, (_, s)) in apportion(self.discarded, &sizes).into_iter().zip(&mut parts) {
                    s.discarded = share;
                    s.dropped = rest_dropped.clone();
                }
            }
        }
        Ok(parts)
    }

    /// Moves the discarded rows into an otherwise empty store over the same
    /// columns. Their summary goes with them; hints stay behind.
    pub(crate) fn take_discarded(&mut self) -> RowStore {
        let n = self.cols.len();
        RowStore {
            cols: self.cols.clone(),
            columns: vec![RleColumn::new(); n],
            rows: 0,
            discarded: std::mem::take(&mut self.discarded),
            hints: vec![0; n],
            dropped: std::mem::replace(&mut self.dropped, vec![Dropped::Nothing; n]),
        }
    }

    /// Adds a column whose value is `value` on every row.
    pub fn add_constant_column(&mut self, col: usize, value: TokenHandle) {
        let at = match self.cols.binary_search(&col) {
            Ok(_) => panic!("column {col} already present"),
            Err(at) => at,
        };
        self.cols.insert(at, col);
        self.columns.insert(at, RleColumn::constant(self.rows, value));
        self.hints.insert(at, 0);
        let d = if self.discarded > 0 { Dropped::Const(value) } else { Dropped::Nothing };
        self.dropped.insert(at, d);
    }

    /// Concatenates `other` below `self`. Both must cover the same columns.
    pub fn append(&mut self, other: RowStore) {
        assert_eq!(self.cols, other.cols, "appending stores over different columns");
        for (mine, theirs) in self.columns.iter_mut().zip(other.columns) {
            mine.append(theirs);
        }
        for (mine, theirs) in self.hints.iter_mut().zip(other.hints) {
            *mine = (*mine).max(theirs);
        }
        for (mine, theirs) in self.dropped.iter_mut().zip(other.dropped) {
            *mine = mine.join(theirs);
        }
        self.rows += other.rows;
        self.discarded += other.discarded;
    }

    /// Drops the oldest `k` rows, returning the removed runs per column (in
    /// column order) after folding their distinct counts, capped at
    /// `hint_cap`, into the hints.
    pub(crate) fn drain_front(&mut self, k: usize, hint_cap: usize) -> Vec<(usize, Vec<Run>)> {
        let k = k.min(self.rows);
        let mut out = Vec::with_capacity(self.cols.len());
        for i in 0..self.cols.len() {
            let seen = self.columns[i].distinct_capped(hint_cap) as u32;
            self.hints[i] = self.hints[i].max(seen);
            let runs = self.columns[i].drain_front(k);
            self.dropped[i] = runs.iter().fold(self.dropped[i], |d, r| d.see(r.value));
            out.push((self.cols[i], runs));
        }
        self.rows -= k;
        self.discarded += k as u64;
        out
    }

    /// Expands the store into rows, one value per store column.
    pub fn materialize(&self) -> Vec<Vec<TokenHandle>> {
        let mut rows = vec![Vec::with_capacity(self.cols.len()); self.rows];
        for column in &self.columns {
            for (row, v) in rows.iter_mut().zip(column.iter()) {
                row.push(v);
            }
        }
        rows
    }
}

/// Largest-remainder split of `total` in proportion to `weights`; ties go to
/// the earlier entry.
pub(crate) fn apportion(total: u64, weights: &[usize]) -> Vec<u64> {
    let sum: u128 = weights.iter().map(|&w| w as u128).sum();
    if sum == 0 {
        return vec![0; weights.len()];
    }
    let mut shares: Vec<u64> = Vec::with_capacity(weights.len());
    let mut rems: Vec<(u128, usize)> = Vec::with_capacity(weights.len());
    for (i, &w) in weights.iter().enumerate() {
        let num = total as u128 * w as u128;
        shares.push((num / sum) as u64);
        rems.push((num % sum, i));
    }
    let mut left = total - shares.iter().sum::<u64>();
    rems.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for (_, i) in rems {
        if left == 0 {
            break;
        }
        shares[i] += 1;
        left -= 1;
    }
    shares
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use proptest::prelude::*;

    use super::*;
    use crate::interner::Interner;

    fn hs(n: usize) -> Vec<TokenHandle> {
        let mut t = Interner::new();
        (0..n).map(|i| t.intern(&format!("v{i}")).unwrap()).collect()
    }

    #[test]
    fn partition_single_value() {
        let h = hs(1);
        let s = RowStore::from_rows(vec![0], &[vec![h[0]], vec![h[0]]]);
        assert_eq!(s.partition(0).unwrap(), [(h[0], vec![0, 1])]);
        assert!(matches!(s.partition(4), Err(KelpError::Structural(_))));
    }

    #[test]
    fn apportion_is_exact() {
        assert_eq!(apportion(10, &[1, 1, 1]), [4, 3, 3]);
        assert_eq!(apportion(7, &[5, 0, 2]), [5, 0, 2]);
        assert_eq!(apportion(0, &[3, 4]), [0, 0]);
    }

    #[test]
    fn trimmed_values_follow_their_branch() {
        // col 0: a b b, col 1: y x x; the trimmed row is (a, y)
        let h = hs(4);
        let (a, b, x, y) = (h[0], h[1], h[2], h[3]);
        let mut s = RowStore::from_rows(vec![0, 1], &[vec![a, y], vec![b, x], vec![b, x]]);
        s.drain_front(1, 9);
        assert_eq!(s.constant(0), None);
        let parts = s.split_by(0).unwrap();
        assert_eq!(parts.len(), 2);
        let (vb, pb) = &parts[0];
        assert_eq!((*vb, pb.rows(), pb.discarded(), pb.constant(0)), (b, 2, 0, Some(x)));
        let (va, pa) = &parts[1];
        assert_eq!((*va, pa.rows(), pa.discarded(), pa.constant(0)), (a, 0, 1, Some(y)));
    }

    #[test]
    fn trimmed_values_keep_a_column_varying() {
        let h = hs(2);
        let mut s = RowStore::from_rows(vec![0], &[vec![h[0]], vec![h[1]], vec![h[1]]]);
        s.drain_front(1, 9);
        assert_eq!(s.cardinality(0, 9), 2);
        assert_eq!(s.constant(0), None);
        let ghost = s.take_discarded();
        assert_eq!((ghost.rows(), ghost.discarded(), ghost.cardinality(0, 9)), (0, 1, 1));
        assert_eq!(ghost.constant(0), Some(h[0]));
        // the hint still remembers both values
        assert_eq!((s.discarded(), s.constant(0)), (0, None));
    }

    fn store_strategy() -> impl Strategy<Value = (usize, Vec<Vec<usize>>)> {
        (1usize..5).prop_flat_map(|w| (Just(w), prop::collection::vec(prop::collection::vec(0usize..4, w), 0..120)))
    }

    proptest! {
        // Brute-force groupby oracle over the materialized rows.
        #[test]
        fn partition_and_split_match_groupby((w, raw) in store_strategy(), pick in any::<prop::sample::Index>()) {
            let h = hs(4);
            let cols: Vec<usize> = (0..w).map(|c| c * 2 + 1).collect();
            let rows: Vec<Vec<TokenHandle>> = raw.iter().map(|r| r.iter().map(|&v| h[v]).collect()).collect();
            let s = RowStore::from_rows(cols.clone(), &rows);
            prop_assert_eq!(s.materialize(), rows.clone());
            let ci = pick.index(w);
            let col = cols[ci];

            let mut oracle: BTreeMap<TokenHandle, Vec<usize>> = BTreeMap::new();
            for (i, r) in rows.iter().enumerate() {
                oracle.entry(r[ci]).or_default().push(i);
            }
            let part = s.partition(col).unwrap();
            let as_map: BTreeMap<_, _> = part.iter().cloned().collect();
            prop_assert_eq!(&as_map, &oracle);
            let covered: usize = part.iter().map(|(_, r)| r.len()).sum();
            prop_assert_eq!(covered, rows.len());

            let split = s.clone().split_by(col).unwrap();
            prop_assert_eq!(split.len(), part.len());
            for ((v, sub), (pv, idxs)) in split.iter().zip(&part) {
                prop_assert_eq!(v, pv);
                let expect: Vec<Vec<TokenHandle>> = idxs.iter().map(|&i| {
                    let mut r = rows[i].clone();
                    r.remove(ci);
                    r
                }).collect();
                prop_assert_eq!(sub.materialize(), expect);
                prop_assert!(!sub.cols().contains(&col));
            }
        }

        #[test]
        fn split_then_rebuild_round_trips((w, raw) in store_strategy(), disc in 0u64..50) {
            let h = hs(4);
            let cols: Vec<usize> = (0..w).collect();
            let rows: Vec<Vec<TokenHandle>> = raw.iter().map(|r| r.iter().map(|&v| h[v]).collect()).collect();
            let mut s = RowStore::from_rows(cols, &rows);
            if rows.is_empty() { return Ok(()); }
            s.discarded = disc;
            let total = s.represented();
            let parts = s.split_by(0).unwrap();
            let sum: u64 = parts.iter().map(|(_, p)| p.represented()).sum();
            prop_assert_eq!(sum, total);
            let mut rebuilt: Option<RowStore> = None;
            for (v, mut p) in parts {
                p.add_constant_column(0, v);
                match rebuilt.as_mut() { Some(r) => r.append(p), None => rebuilt = Some(p) }
            }
            let rebuilt = rebuilt.unwrap();
            prop_assert_eq!(rebuilt.rows(), rows.len());
            let mut a = rebuilt.materialize(); a.sort();
            let mut b = rows.clone(); b.sort();
            prop_assert_eq!(a, b);
        }
    }
}
