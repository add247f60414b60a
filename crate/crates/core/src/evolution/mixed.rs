//! Per-value analysis of a column with too many distinct values to split on.
//!
//! Lines are grouped by their token in the column. Each group gets a
//! signature: for every other unpinned column, the single token all of its
//! lines share, or a marker when they disagree. A value earns its own branch
//! when
//!
//! - it has at least `min_support` lines,
//! - fewer than `branch_threshold + 1` supported values share its signature,
//! - its signature is not a strict refinement of such a crowded signature,
//! - and it holds at least a `1 / branch_threshold` share of the lines that
//!   agree with its signature.
//!
//! Everything else is left to the level's open branch.

use rustc_hash::{FxHashMap, FxHashSet};

use crate::egt::{ChildSet, Run};
use crate::interner::TokenHandle;

use super::EvolutionConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum State {
    Unset,
    Const(TokenHandle),
    Mixed,
}

impl State {
    fn see(&mut self, v: TokenHandle) {
        match *self {
            State::Unset => *self = State::Const(v),
            State::Const(x) if x != v => *self = State::Mixed,
            _ => {}
        }
    }
}

struct Groups<'a> {
    col: usize,
    /// Position of a column among `others`, `usize::MAX` if absent.
    slot: Vec<usize>,
    others: &'a [usize],
    index: FxHashMap<TokenHandle, usize>,
    values: Vec<TokenHandle>,
    rows: Vec<u64>,
    states: Vec<State>,
}

impl<'a> Groups<'a> {
    fn new(col: usize, others: &'a [usize]) -> Self {
        let top = others.iter().copied().chain([col]).max().unwrap_or(0);
        let mut slot = vec![usize::MAX; top + 1];
        for (i, &c) in others.iter().enumerate() {
            slot[c] = i;
        }
        Groups {
            col,
            slot,
            others,
            index: FxHashMap::default(),
            values: Vec::new(),
            rows: Vec::new(),
            states: Vec::new(),
        }
    }

    fn slot_of(&self, c: usize) -> Option<usize> {
        self.slot.get(c).copied().filter(|&s| s != usize::MAX)
    }

    fn group(&mut self, v: TokenHandle) -> usize {
        let k = self.others.len();
        *self.index.entry(v).or_insert_with(|| {
            self.values.push(v);
            self.rows.push(0);
            self.states.extend(std::iter::repeat_n(State::Unset, k));
            self.values.len() - 1
        })
    }

    fn see(&mut self, g: usize, s: usize, v: TokenHandle) {
        let k = self.others.len();
        self.states[g * k + s].see(v);
    }

    fn mixed(&mut self, g: usize, s: usize) {
        let k = self.others.len();
        self.states[g * k + s] = State::Mixed;
    }

    fn signature(&self, g: usize) -> &[State] {
        let k = self.others.len();
        &self.states[g * k..(g + 1) * k]
    }

    fn walk(&mut self, cs: &ChildSet, pins: &mut Vec<(usize, TokenHandle)>) {
        match cs {
            ChildSet::Static(b) => {
                for n in b {
                    match n.value {
                        Some(v) => {
                            pins.push((n.col, v));
                            self.walk(&n.child, pins);
                            pins.pop();
                        }
                        None => self.walk(&n.child, pins),
                    }
                }
            }
            ChildSet::Count(t) => {
                if t.retained == 0 {
                    return;
                }
                let v = pinned(pins, self.col).expect("count leaf pins every column");
                let g = self.group(v);
                self.rows[g] += t.retained;
                self.see_pins(g, pins);
            }
            ChildSet::Dynamic(s) => {
                if s.rows() == 0 {
                    return;
                }
                if let Some(v) = pinned(pins, self.col) {
                    let g = self.group(v);
                    self.rows[g] += s.rows() as u64;
                    self.see_pins(g, pins);
                    for (i, &c) in s.cols().iter().enumerate() {
                        let Some(slot) = self.slot_of(c) else { continue };
                        if let Some(v) = s.constant(i) {
                            self.see(g, slot, v);
                        } else {
                            self.mixed(g, slot);
                        }
                    }
                    return;
                }
                let ci = s.position(self.col).expect("column is free below this node");
                let key_runs = s.columns()[ci].runs();
                let gids: Vec<usize> = key_runs.iter().map(|r| self.group(r.value)).collect();
                for (r, &g) in key_runs.iter().zip(&gids) {
                    self.rows[g] += r.len as u64;
                }
                let mut seen_groups = gids.clone();
                seen_groups.sort_unstable();
                seen_groups.dedup();
                for &g in &seen_groups {
                    self.see_pins(g, pins);
                }
                for (i, &c) in s.cols().iter().enumerate() {
                    if i == ci {
                        continue;
                    }
                    let Some(slot) = self.slot_of(c) else { continue };
                    overlap(key_runs, s.columns()[i].runs(), |ki, v| self.see(gids[ki], slot, v));
                }
            }
        }
    }

    fn see_pins(&mut self, g: usize, pins: &[(usize, TokenHandle)]) {
        for &(c, v) in pins {
            if let Some(slot) = self.slot_of(c) {
                self.see(g, slot, v);
            }
        }
    }
}

fn pinned(pins: &[(usize, TokenHandle)], col: usize) -> Option<TokenHandle> {
    pins.iter().find(|p| p.0 == col).map(|p| p.1)
}

/// Calls `f(key_run_index, value)` for every stretch of rows on which both
/// run lists are constant.
fn overlap(key: &[Run], other: &[Run], mut f: impl FnMut(usize, TokenHandle)) {
    let (mut i, mut j) = (0, 0);
    let (mut left_i, mut left_j) = (key.first().map_or(0, |r| r.len), other.first().map_or(0, |r| r.len));
    while i < key.len() && j < other.len() {
        f(i, other[j].value);
        let step = left_i.min(left_j);
        left_i -= step;
        left_j -= step;
        if left_i == 0 {
            i += 1;
            left_i = key.get(i).map_or(0, |r| r.len);
        }
        if left_j == 0 {
            j += 1;
            left_j = other.get(j).map_or(0, |r| r.len);
        }
    }
}

/// Lines below `cs` agreeing with every constant of `sig`.
fn matching_lines(cs: &ChildSet, sig: &[(usize, TokenHandle)]) -> u64 {
    match cs {
        ChildSet::Count(t) => t.retained,
        ChildSet::Static(b) => b
            .iter()
            .filter(|n| match n.value {
                Some(v) => sig.iter().all(|&(c, x)| c != n.col || x == v),
                None => true,
            })
            .map(|n| matching_lines(&n.child, sig))
            .sum(),
        ChildSet::Dynamic(s) => {
            let mut live: Vec<(usize, usize)> = vec![(0, s.rows())];
            for &(c, x) in sig {
                let Some(i) = s.position(c) else { continue };
                let mut hits = Vec::new();
                let mut at = 0;
                for r in s.columns()[i].runs() {
                    if r.value == x {
                        hits.push((at, at + r.len));
                    }
                    at += r.len;
                }
                live = intersect(&live, &hits);
                if live.is_empty() {
                    return 0;
                }
            }
            live.iter().map(|&(a, b)| (b - a) as u64).sum()
        }
    }
}

fn intersect(a: &[(usize, usize)], b: &[(usize, usize)]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        let lo = a[i].0.max(b[j].0);
        let hi = a[i].1.min(b[j].1);
        if lo < hi {
            out.push((lo, hi));
        }
        if a[i].1 < b[j].1 {
            i += 1;
        } else {
            j += 1;
        }
    }
    out
}

/// `a` pins everything `f` pins and at least one column `f` leaves open.
fn refines(a: &[State], f: &[State]) -> bool {
    let mut extra = false;
    for (x, y) in a.iter().zip(f) {
        match (x, y) {
            (State::Const(p), State::Const(q)) if p != q => return false,
            (State::Mixed, State::Const(_)) => return false,
            (State::Const(_), State::Mixed) => extra = true,
            _ => {}
        }
    }
    extra
}

/// Values of `col` that deserve a branch of their own. `others` lists the
/// remaining unpinned columns of `cs`.
pub(super) fn branch_values(
    cs: &ChildSet,
    col: usize,
    others: &[usize],
    cfg: &EvolutionConfig,
) -> FxHashSet<TokenHandle> {
    let mut groups = Groups::new(col, others);
    groups.walk(cs, &mut Vec::new());

    let supported: Vec<usize> =
        (0..groups.values.len()).filter(|&g| groups.rows[g] >= cfg.min_support as u64).collect();
    let mut classes: FxHashMap<&[State], usize> = FxHashMap::default();
    for &g in &supported {
        *classes.entry(groups.signature(g)).or_default() += 1;
    }
    let crowded: Vec<&[State]> = classes.iter().filter(|&(_, &n)| n > cfg.branch_threshold).map(|(&s, _)| s).collect();

    let mut out = FxHashSet::default();
    for g in supported {
        let sig = groups.signature(g);
        if classes[sig] > cfg.branch_threshold || crowded.iter().any(|f| refines(sig, f)) {
            continue;
        }
        let consts: Vec<(usize, TokenHandle)> = others
            .iter()
            .zip(sig)
            .filter_map(|(&c, s)| match s {
                State::Const(v) => Some((c, *v)),
                _ => None,
            })
            .collect();
        let context = matching_lines(cs, &consts);
        if groups.rows[g].saturating_mul(cfg.branch_threshold as u64) >= context {
            out.insert(groups.values[g]);
        }
    }
    out
}
