//! Tree node types and the ingestion push path.

use super::store::RowStore;
use crate::interner::TokenHandle;

/// Line tally of a fully static path.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Tally {
    /// Lines still accounted for in the bucket's frequency map.
    pub retained: u64,
    /// Lines folded in from trimmed leaves.
    pub discarded: u64,
}

impl Tally {
    pub fn lines(&self) -> u64 {
        self.retained + self.discarded
    }
}

/// Children of a node. A node moves between these states as the tree evolves:
/// a fully constrained path only counts, an unresolved region buffers rows,
/// and a resolved split holds one static branch per token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ChildSet {
    Count(Tally),
    Static(Vec<StaticNode>),
    Dynamic(RowStore),
}

/// Pins `value` at column `col` for everything below it. All branches of one
/// `ChildSet::Static` level share the same `col`.
///
/// A level may end with one open branch (`value == None`). It takes every
/// line whose token at `col` has no branch of its own, and `col` stays a
/// buffered column below it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StaticNode {
    pub col: usize,
    pub value: Option<TokenHandle>,
    pub child: ChildSet,
}

impl StaticNode {
    pub fn new(col: usize, value: TokenHandle, child: ChildSet) -> Self {
        StaticNode { col, value: Some(value), child }
    }

    pub fn open(col: usize, child: ChildSet) -> Self {
        StaticNode { col, value: None, child }
    }

    pub fn is_open(&self) -> bool {
        self.value.is_none()
    }
}

impl ChildSet {
    pub fn empty(cols: Vec<usize>) -> Self {
        ChildSet::Dynamic(RowStore::new(cols))
    }

    /// Dynamic leaf over `store`, or a count once no columns remain.
    pub fn leaf(store: RowStore) -> Self {
        if store.cols().is_empty() {
            ChildSet::Count(Tally { retained: store.rows() as u64, discarded: store.discarded() })
        } else {
            ChildSet::Dynamic(store)
        }
    }

    pub fn is_leaf(&self) -> bool {
        !matches!(self, ChildSet::Static(_))
    }

    /// Column of a static level.
    pub fn level_col(&self) -> Option<usize> {
        match self {
            ChildSet::Static(b) => b.first().map(|n| n.col),
            _ => None,
        }
    }

    /// Lines whose tokens are still held (buffered rows and retained tallies).
    pub fn retained_lines(&self) -> u64 {
        match self {
            ChildSet::Count(t) => t.retained,
            ChildSet::Dynamic(s) => s.rows() as u64,
            ChildSet::Static(b) => b.iter().map(|n| n.child.retained_lines()).sum(),
        }
    }

    /// All lines ever pushed below this point, trimmed or not.
    pub fn represented_lines(&self) -> u64 {
        match self {
            ChildSet::Count(t) => t.lines(),
            ChildSet::Dynamic(s) => s.represented(),
            ChildSet::Static(b) => b.iter().map(|n| n.child.represented_lines()).sum(),
        }
    }

    /// Calls `f` with every pinned static node value in the subtree.
    pub fn for_each_static(&self, f: &mut impl FnMut(usize, TokenHandle)) {
        if let ChildSet::Static(b) = self {
            for n in b {
                if let Some(v) = n.value {
                    f(n.col, v);
                }
                n.child.for_each_static(f);
            }
        }
    }

    /// True when every root-to-leaf path below here either pins `col` or
    /// buffers it.
    pub fn covers(&self, col: usize) -> bool {
        match self {
            ChildSet::Count(_) => false,
            ChildSet::Dynamic(s) => s.position(col).is_some(),
            ChildSet::Static(b) => {
                !b.is_empty() && b.iter().all(|n| (n.col == col && !n.is_open()) || n.child.covers(col))
            }
        }
    }

    /// Columns not pinned anywhere above the leaves of this subtree, ascending.
    pub fn columns(&self) -> Vec<usize> {
        match self {
            ChildSet::Count(_) => Vec::new(),
            ChildSet::Dynamic(s) => s.cols().to_vec(),
            ChildSet::Static(b) => {
                let n = &b[0];
                let mut cols = n.child.columns();
                if !n.is_open() {
                    let at = cols.partition_point(|&c| c < n.col);
                    cols.insert(at, n.col);
                }
                cols
            }
        }
    }

    /// Flattens the subtree into one row store over `cols` (the columns left
    /// unconstrained above this point, ascending). Static values become
    /// constant columns.
    pub fn into_store(self, cols: &[usize]) -> RowStore {
        match self {
            ChildSet::Dynamic(s) => {
                debug_assert_eq!(s.cols(), cols);
                s
            }
            ChildSet::Count(t) => {
                debug_assert!(cols.is_empty());
                RowStore::blank(t.retained as usize, t.discarded)
            }
            ChildSet::Static(branches) => {
                let mut acc: Option<RowStore> = None;
                for n in branches {
                    let sub = match n.value {
                        Some(v) => {
                            let rest: Vec<usize> = cols.iter().copied().filter(|&c| c != n.col).collect();
                            let mut sub = n.child.into_store(&rest);
                            sub.add_constant_column(n.col, v);
                            sub
                        }
                        None => n.child.into_store(cols),
                    };
                    match acc.as_mut() {
                        Some(a) => a.append(sub),
                        None => acc = Some(sub),
                    }
                }
                acc.unwrap_or_else(|| RowStore::new(cols.to_vec()))
            }
        }
    }

    /// Expands retained lines into full-width rows. `path` supplies the values
    /// pinned above this subtree. Panics if a column is claimed twice or not
    /// at all.
    pub fn materialize(&self, width: usize, path: &mut Vec<(usize, TokenHandle)>, out: &mut Vec<Vec<TokenHandle>>) {
        match self {
            ChildSet::Count(t) => {
                let row = overlay(width, path, &[], &[]);
                for _ in 0..t.retained {
                    out.push(row.clone());
                }
            }
            ChildSet::Dynamic(s) => {
                for r in s.materialize() {
                    out.push(overlay(width, path, s.cols(), &r));
                }
            }
            ChildSet::Static(b) => {
                for n in b {
                    match n.value {
                        Some(v) => {
                            path.push((n.col, v));
                            n.child.materialize(width, path, out);
                            path.pop();
                        }
                        None => n.child.materialize(width, path, out),
                    }
                }
            }
        }
    }
}

fn overlay(width: usize, path: &[(usize, TokenHandle)], cols: &[usize], vals: &[TokenHandle]) -> Vec<TokenHandle> {
    let mut row: Vec<Option<TokenHandle>> = vec![None; width];
    let pairs = path.iter().copied().chain(cols.iter().copied().zip(vals.iter().copied()));
    for (c, v) in pairs {
        assert!(row[c].is_none(), "column {c} claimed twice");
        row[c] = Some(v);
    }
    row.into_iter().enumerate().map(|(c, v)| v.unwrap_or_else(|| panic!("column {c} unclaimed"))).collect()
}

/// Per-bucket tree root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RootNode {
    width: usize,
    /// Backbone columns with their dominant token, ascending by column.
    pub constraints: Vec<(usize, TokenHandle)>,
    pub children: ChildSet,
    pub reeval_flag: bool,
}

impl RootNode {
    pub fn new(width: usize) -> Self {
        RootNode { width, constraints: Vec::new(), children: ChildSet::empty((0..width).collect()), reeval_flag: false }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Pushes a line without restructuring. Descends matching static branches,
    /// falling back to a level's open branch; on a miss at a level without one
    /// a sibling with a fresh leaf is added. Returns the value of the newly
    /// created static node, if any.
    pub fn push_line(&mut self, tokens: &[TokenHandle]) -> Option<TokenHandle> {
        debug_assert_eq!(tokens.len(), self.width);
        let width = self.width;
        let mut path: Vec<usize> = Vec::new();
        let mut cur = &mut self.children;
        loop {
            match cur {
                ChildSet::Count(t) => {
                    t.retained += 1;
                    return None;
                }
                ChildSet::Dynamic(s) => {
                    s.push_line(tokens);
                    return None;
                }
                ChildSet::Static(branches) => {
                    let col = branches[0].col;
                    let v = tokens[col];
                    let hit = branches.iter().position(|n| n.value == Some(v));
                    let open = branches.iter().position(StaticNode::is_open);
                    match (hit, open) {
                        (Some(i), _) => {
                            path.push(col);
                            cur = &mut branches[i].child;
                        }
                        (None, Some(i)) => cur = &mut branches[i].child,
                        (None, None) => {
                            path.push(col);
                            let rest: Vec<usize> = (0..width).filter(|c| !path.contains(c)).collect();
                            let mut store = RowStore::new(rest);
                            store.push_line(tokens);
                            branches.push(StaticNode::new(col, v, ChildSet::leaf(store)));
                            return Some(v);
                        }
                    }
                }
            }
        }
    }

    /// Full-width rows currently buffered (tallies expanded), in tree order.
    pub fn materialize(&self) -> Vec<Vec<TokenHandle>> {
        let mut out = Vec::new();
        self.children.materialize(self.width, &mut Vec::new(), &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{tokenize, TokenizerConfig};
    use crate::interner::Interner;

    fn toks(t: &mut Interner, s: &str) -> Vec<TokenHandle> {
        tokenize(s, 0, &TokenizerConfig::default(), t).unwrap().unwrap().tokens
    }

    #[test]
    fn fresh_tree_buffers_rows() {
        let mut t = Interner::new();
        let mut root = RootNode::new(7);
        for s in ["Connected to client Sid on port 8080", "Connected to client Luke on port 8000"] {
            let l = toks(&mut t, s);
            assert_eq!(root.push_line(&l), None);
        }
        match &root.children {
            ChildSet::Dynamic(s) => assert_eq!(s.rows(), 2),
            other => panic!("expected one dynamic leaf, got {other:?}"),
        }
        assert_eq!(root.materialize().len(), 2);
    }

    #[test]
    fn static_path_counts() {
        let mut t = Interner::new();
        let l = toks(&mut t, "a b");
        let mut root = RootNode::new(2);
        root.children = ChildSet::Static(vec![StaticNode::new(
            0,
            l[0],
            ChildSet::Static(vec![StaticNode::new(1, l[1], ChildSet::Count(Tally { retained: 4, discarded: 0 }))]),
        )]);
        root.push_line(&l);
        assert_eq!(root.children.represented_lines(), 5);

        let other = toks(&mut t, "a c");
        let created = root.push_line(&other);
        assert_eq!(created, Some(other[1]));
        assert_eq!(root.children.represented_lines(), 6);
        // the new sibling is fully pinned, so it is a count
        if let ChildSet::Static(b) = &root.children {
            if let ChildSet::Static(inner) = &b[0].child {
                assert_eq!(inner.len(), 2);
                assert_eq!(inner[1].child, ChildSet::Count(Tally { retained: 1, discarded: 0 }));
            }
        }
        assert_eq!(root.materialize().len(), 6);
    }

    #[test]
    fn branch_miss_creates_sibling_leaf() {
        let mut t = Interner::new();
        let a = toks(&mut t, "x 1 2");
        let b = toks(&mut t, "y 3 4");
        let mut root = RootNode::new(3);
        root.children = ChildSet::Static(vec![StaticNode::new(
            0,
            a[0],
            ChildSet::leaf(RowStore::from_rows(vec![1, 2], &[vec![a[1], a[2]]])),
        )]);
        assert_eq!(root.push_line(&b), Some(b[0]));
        let rows = root.materialize();
        assert_eq!(rows, vec![a.clone(), b.clone()]);
    }

    #[test]
    fn open_branch_takes_unmatched_lines() {
        let mut t = Interner::new();
        let a = toks(&mut t, "x 1");
        let b = toks(&mut t, "y 2");
        let mut root = RootNode::new(2);
        root.children = ChildSet::Static(vec![
            StaticNode::new(0, a[0], ChildSet::leaf(RowStore::from_rows(vec![1], &[vec![a[1]]]))),
            StaticNode::open(0, ChildSet::empty(vec![0, 1])),
        ]);
        assert_eq!(root.children.columns(), vec![0, 1]);
        assert!(!root.children.covers(0) || matches!(&root.children, ChildSet::Static(_)));
        assert_eq!(root.push_line(&b), None);
        assert_eq!(root.push_line(&a), None);
        assert_eq!(root.materialize(), vec![a.clone(), a.clone(), b.clone()]);
        let mut pinned = Vec::new();
        root.children.for_each_static(&mut |c, v| pinned.push((c, v)));
        assert_eq!(pinned, vec![(0, a[0])]);
    }
}
