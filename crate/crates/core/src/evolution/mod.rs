//! Tree restructuring: pull, root validation, re-evaluation and trimming.
//!
//! Re-evaluation is a recursive split/collapse pass. At every level the free
//! columns are tried in order of distinct-value count across the subtree.
//! A column with at most `branch_threshold` values, each backed by
//! `min_support` lines on average, is pulled into static branches. A column
//! with more values is analysed value by value (see [`mixed`]): values that
//! behave like a template literal get branches and the rest share one open
//! branch. When no value qualifies the column becomes a wildcard and the next
//! column is tried. Once every column is decided the remainder collapses into
//! one dynamic leaf.
//!
//! The outcome only depends on the lines held below a node, so running the
//! pass twice gives the same tree.
//!
//! Trimmed rows follow a split only when they all held the same value in the
//! split column. Otherwise they stay on the level's open branch.

use rustc_hash::{FxHashMap, FxHashSet};
use serde::Serialize;

use crate::egt::{ChildSet, Dropped, RootNode, RowStore, StaticNode};
use crate::error::{KelpError, Result};
use crate::freqmap::{FrequencyMap, ThresholdReport};
use crate::interner::{Interner, TokenHandle};

mod mixed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvolutionConfig {
    /// Columns with more distinct values than this become wildcards.
    pub branch_threshold: usize,
    /// Rows a dynamic leaf keeps before the oldest are discarded.
    pub trim_capacity: usize,
    /// Lines per bucket between unconditional re-evaluation passes.
    pub reeval_interval: u64,
    /// Minimum average lines per value before a column may be split on.
    pub min_support: usize,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        EvolutionConfig { branch_threshold: 8, trim_capacity: 4096, reeval_interval: 10_000, min_support: 2 }
    }
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.branch_threshold == 0 || self.trim_capacity == 0 || self.reeval_interval == 0 || self.min_support == 0 {
            return Err(KelpError::Config("evolution parameters must be at least 1".into()));
        }
        Ok(())
    }
}

/// Splits `children` on `col`, one static node per distinct value.
///
/// A level already split on `col` is returned as is. Nested static levels are
/// pulled recursively and re-attached below the new nodes, so `col` bubbles up
/// to the top.
pub fn pull(children: ChildSet, col: usize) -> Result<Vec<StaticNode>> {
    if !children.covers(col) {
        return Err(KelpError::Structural(format!("column {col} is not free on every path")));
    }
    Ok(pull_covered(children, col))
}

fn pull_covered(children: ChildSet, col: usize) -> Vec<StaticNode> {
    match children {
        ChildSet::Count(_) => unreachable!("covers() rejects counts"),
        ChildSet::Dynamic(store) if store.represented() == 0 => vec![StaticNode::open(col, ChildSet::Dynamic(store))],
        ChildSet::Dynamic(mut store) => {
            let i = store.position(col).expect("covers() checked the column");
            // trimmed rows of unknown value cannot follow a branch
            let ghost = (store.discarded() > 0 && !matches!(store.dropped(i), Dropped::Const(_)))
                .then(|| store.take_discarded());
            let mut nodes: Vec<StaticNode> = store
                .split_by(col)
                .expect("covers() checked the column")
                .into_iter()
                .map(|(v, sub)| StaticNode::new(col, v, ChildSet::leaf(sub)))
                .collect();
            if let Some(g) = ghost {
                nodes.push(StaticNode::open(col, ChildSet::Dynamic(g)));
            }
            nodes
        }
        ChildSet::Static(mut branches) if branches[0].col == col => {
            let Some(open) = branches.pop_if(|n| n.is_open()) else {
                return branches;
            };
            for node in pull_covered(open.child, col) {
                match branches.iter_mut().find(|b| b.value == node.value) {
                    Some(b) => merge_into(&mut b.child, node.child),
                    None => branches.push(node),
                }
            }
            branches
        }
        ChildSet::Static(branches) => {
            let mut out: Vec<StaticNode> = Vec::new();
            let mut slot: FxHashMap<Option<TokenHandle>, usize> = FxHashMap::default();
            for b in branches {
                let (bcol, bval) = (b.col, b.value);
                for node in pull_covered(b.child, col) {
                    let inner = StaticNode { col: bcol, value: bval, child: node.child };
                    match slot.get(&node.value) {
                        Some(&i) => match &mut out[i].child {
                            ChildSet::Static(v) => v.push(inner),
                            _ => unreachable!(),
                        },
                        None => {
                            slot.insert(node.value, out.len());
                            out.push(StaticNode { col, value: node.value, child: ChildSet::Static(vec![inner]) });
                        }
                    }
                }
            }
            out
        }
    }
}

/// Appends the lines of `other` to `dst`. Both cover the same columns.
fn merge_into(dst: &mut ChildSet, other: ChildSet) {
    let cols = dst.columns();
    let mut store = std::mem::replace(dst, ChildSet::Count(Default::default())).into_store(&cols);
    store.append(other.into_store(&cols));
    *dst = ChildSet::leaf(store);
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationOutcome {
    pub promoted: Vec<usize>,
    pub demoted: Vec<usize>,
    pub threshold: u64,
    pub global_max: u64,
}

impl ValidationOutcome {
    pub fn changed(&self) -> bool {
        !self.promoted.is_empty() || !self.demoted.is_empty()
    }
}

/// Re-selects the static backbone from the frequency map. Newly eligible
/// columns are pulled to the top of the tree; dropped ones are left for the
/// next re-evaluation to dissolve. Any change sets the root's re-evaluation
/// flag.
pub fn validate_root(root: &mut RootNode, fm: &FrequencyMap) -> Result<ValidationOutcome> {
    let report: ThresholdReport = fm.compute_threshold()?;
    let eligible = fm.root_eligible_columns(&report);
    let mut outcome = ValidationOutcome {
        promoted: Vec::new(),
        demoted: Vec::new(),
        threshold: report.threshold,
        global_max: report.global_max,
    };
    if eligible == root.constraints {
        return Ok(outcome);
    }
    outcome.promoted = eligible.iter().filter(|p| !root.constraints.contains(p)).map(|p| p.0).collect();
    outcome.demoted = root.constraints.iter().filter(|p| !eligible.contains(p)).map(|p| p.0).collect();

    if root.children.retained_lines() > 0 {
        // pulling in descending order leaves the lowest column on top
        for &col in outcome.promoted.iter().rev() {
            let children = std::mem::replace(&mut root.children, ChildSet::Count(Default::default()));
            root.children = ChildSet::Static(pull(children, col)?);
        }
    }
    root.constraints = eligible;
    root.reeval_flag = true;
    Ok(outcome)
}

/// Re-evaluates the whole tree and clears the flag.
pub fn reeval_root(root: &mut RootNode, cfg: &EvolutionConfig) {
    let free: Vec<usize> = (0..root.width()).collect();
    let children = std::mem::replace(&mut root.children, ChildSet::Count(Default::default()));
    root.children = reeval(children, &free, cfg);
    root.reeval_flag = false;
}

/// Recursive restructuring of `children`. `free` (ascending) lists the
/// columns still open for a decision; any other unpinned column is already a
/// wildcard.
pub fn reeval(children: ChildSet, free: &[usize], cfg: &EvolutionConfig) -> ChildSet {
    let rows = children.retained_lines() as usize;
    if rows == 0 {
        return children;
    }
    let cap = cfg.branch_threshold.saturating_add(1);
    let mut order: Vec<(usize, usize)> = free.iter().map(|&c| (cardinality(&children, c, cap), c)).collect();
    order.sort_unstable();
    let mut open: Vec<usize> = free.to_vec();
    for (card, col) in order {
        open.retain(|&c| c != col);
        if card <= cfg.branch_threshold && card.saturating_mul(cfg.min_support) <= rows {
            let branches = pull_covered(children, col)
                .into_iter()
                .map(|n| StaticNode { col, value: n.value, child: reeval(n.child, &open, cfg) })
                .collect();
            return ChildSet::Static(branches);
        }
        let others: Vec<usize> = children.columns().into_iter().filter(|&c| c != col).collect();
        let keep = mixed::branch_values(&children, col, &others, cfg);
        if keep.is_empty() {
            continue;
        }
        let level = split_mixed(children, col, &keep);
        return ChildSet::Static(
            level.into_iter().map(|n| StaticNode { col, value: n.value, child: reeval(n.child, &open, cfg) }).collect(),
        );
    }
    collapse(children)
}

/// Pulls `col`, keeping a branch for each value in `keep` and folding the
/// rest into a trailing open branch. An existing level with exactly these
/// branches is left alone.
fn split_mixed(children: ChildSet, col: usize, keep: &FxHashSet<TokenHandle>) -> Vec<StaticNode> {
    if let ChildSet::Static(b) = &children {
        let pinned = b.iter().filter_map(|n| n.value).filter(|v| keep.contains(v)).count();
        if b[0].col == col && pinned == keep.len() && pinned == b.iter().filter(|n| !n.is_open()).count() {
            let ChildSet::Static(b) = children else { unreachable!() };
            return b;
        }
    }
    let cols = children.columns();
    let rest: Vec<usize> = cols.iter().copied().filter(|&c| c != col).collect();
    let mut level = Vec::new();
    let mut residual: Option<RowStore> = None;
    for n in pull_covered(children, col) {
        let sub = match n.value {
            Some(v) if keep.contains(&v) => {
                level.push(n);
                continue;
            }
            Some(v) => {
                let mut sub = n.child.into_store(&rest);
                sub.add_constant_column(col, v);
                sub
            }
            None => n.child.into_store(&cols),
        };
        match residual.as_mut() {
            Some(r) => r.append(sub),
            None => residual = Some(sub),
        }
    }
    if let Some(r) = residual {
        level.push(StaticNode::open(col, ChildSet::leaf(r)));
    }
    level
}

/// Merges a subtree into one dynamic leaf.
fn collapse(children: ChildSet) -> ChildSet {
    match children {
        ChildSet::Static(_) => {
            let cols = children.columns();
            ChildSet::leaf(children.into_store(&cols))
        }
        leaf => leaf,
    }
}

/// Distinct values of `col` across the subtree, counted up to `cap`. Trim
/// hints and the values of discarded rows act as a lower bound.
pub fn cardinality(cs: &ChildSet, col: usize, cap: usize) -> usize {
    let mut seen = Vec::new();
    let mut hint = 0u32;
    collect_values(cs, col, cap, &mut seen, &mut hint);
    seen.len().max(hint as usize)
}

fn collect_values(cs: &ChildSet, col: usize, cap: usize, seen: &mut Vec<TokenHandle>, hint: &mut u32) {
    if seen.len() >= cap {
        return;
    }
    match cs {
        ChildSet::Count(_) => {}
        ChildSet::Dynamic(s) => {
            if let Some(i) = s.position(col) {
                *hint = (*hint).max(s.hint(i));
                match s.dropped(i) {
                    Dropped::Const(v) if !seen.contains(&v) => seen.push(v),
                    Dropped::Mixed => *hint = (*hint).max(2),
                    _ => {}
                }
                s.columns()[i].collect_distinct(seen, cap);
            }
        }
        ChildSet::Static(branches) => {
            if branches[0].col == col {
                for b in branches {
                    if seen.len() >= cap {
                        return;
                    }
                    match b.value {
                        Some(v) if !seen.contains(&v) => seen.push(v),
                        Some(_) => {}
                        None => collect_values(&b.child, col, cap, seen, hint),
                    }
                }
            } else {
                for b in branches {
                    collect_values(&b.child, col, cap, seen, hint);
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct TrimStats {
    pub leaves_trimmed: u64,
    pub rows_discarded: u64,
}

/// Drops the oldest rows of every dynamic leaf above `trim_capacity`. The
/// frequency map and interner references of the dropped lines are released;
/// tree shape, template rendering and template counts are unchanged.
pub fn trim(
    root: &mut RootNode,
    fm: &mut FrequencyMap,
    interner: &mut Interner,
    cfg: &EvolutionConfig,
) -> Result<TrimStats> {
    let mut stats = TrimStats::default();
    let mut path = Vec::new();
    trim_walk(&mut root.children, &mut path, fm, interner, cfg, &mut stats)?;
    Ok(stats)
}

fn trim_walk(
    cs: &mut ChildSet,
    path: &mut Vec<(usize, TokenHandle)>,
    fm: &mut FrequencyMap,
    interner: &mut Interner,
    cfg: &EvolutionConfig,
    stats: &mut TrimStats,
) -> Result<()> {
    match cs {
        ChildSet::Count(_) => Ok(()),
        ChildSet::Static(branches) => {
            for b in branches {
                match b.value {
                    Some(v) => {
                        path.push((b.col, v));
                        trim_walk(&mut b.child, path, fm, interner, cfg, stats)?;
                        path.pop();
                    }
                    None => trim_walk(&mut b.child, path, fm, interner, cfg, stats)?,
                }
            }
            Ok(())
        }
        ChildSet::Dynamic(store) => {
            if store.rows() <= cfg.trim_capacity {
                return Ok(());
            }
            let k = store.rows() - cfg.trim_capacity;
            // hints are only ever compared against the branch threshold
            release_rows(store, k, cfg.branch_threshold.saturating_add(1), path, fm, interner)?;
            stats.leaves_trimmed += 1;
            stats.rows_discarded += k as u64;
            Ok(())
        }
    }
}

fn release_rows(
    store: &mut RowStore,
    k: usize,
    hint_cap: usize,
    path: &[(usize, TokenHandle)],
    fm: &mut FrequencyMap,
    interner: &mut Interner,
) -> Result<()> {
    for (col, runs) in store.drain_front(k, hint_cap) {
        for r in runs {
            fm.decrement(col, r.value, r.len as u64, interner)?;
        }
    }
    for &(col, v) in path {
        fm.decrement(col, v, k as u64, interner)?;
    }
    fm.forget_lines(k as u64)
}
