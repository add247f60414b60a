#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use kelp::egt::{extract_templates, ChildSet, RootNode};
use kelp::evolution::{pull, reeval_root, trim, validate_root, EvolutionConfig, TrimStats};
use kelp::freqmap::FrequencyMap;
use kelp::ingest::{tokenize, TokenizerConfig};
use kelp::interner::{Interner, TokenHandle};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A template of one width: per column either a literal or a slot alphabet.
#[derive(Debug, Clone)]
pub struct Family {
    pub id: usize,
    /// `None` is a literal column, `Some(n)` a slot with `n` values.
    pub cols: Vec<Option<u32>>,
}

impl Family {
    pub fn line(&self, rng: &mut ChaCha8Rng) -> String {
        self.cols
            .iter()
            .enumerate()
            .map(|(c, slot)| match slot {
                None => format!("w{}c{c}", self.id % 3),
                Some(n) => format!("v{}c{c}x{}", self.id, rng.gen_range(0..*n)),
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// A few families of one width. Literal tokens are shared across families
/// often enough to make trees branch.
pub fn families(rng: &mut ChaCha8Rng, width: usize, count: usize) -> Vec<Family> {
    (0..count)
        .map(|id| Family {
            id,
            cols: (0..width).map(|_| if rng.gen_bool(0.4) { Some(rng.gen_range(1..40)) } else { None }).collect(),
        })
        .collect()
}

pub fn lines(rng: &mut ChaCha8Rng, fams: &[Family], n: usize) -> Vec<String> {
    (0..n)
        .map(|_| {
            let f = &fams[rng.gen_range(0..fams.len())];
            f.line(rng)
        })
        .collect()
}

/// One bucket's worth of state, driven the way the engine drives it.
pub struct Tree {
    pub interner: Interner,
    pub fm: FrequencyMap,
    pub root: RootNode,
    pub pushed: u64,
}

impl Tree {
    pub fn new(width: usize) -> Self {
        Tree { interner: Interner::new(), fm: FrequencyMap::new(width), root: RootNode::new(width), pushed: 0 }
    }

    pub fn push(&mut self, line: &str) {
        let l = tokenize(line, self.pushed, &TokenizerConfig::default(), &mut self.interner).unwrap().unwrap();
        self.fm.record(&l, &mut self.interner).unwrap();
        self.root.push_line(&l.tokens);
        self.pushed += 1;
    }

    /// Root validation, skipped while nothing is buffered.
    pub fn validate(&mut self) {
        if self.fm.is_empty() {
            return;
        }
        validate_root(&mut self.root, &self.fm).unwrap();
    }

    pub fn reeval(&mut self, cfg: &EvolutionConfig) {
        reeval_root(&mut self.root, cfg);
    }

    /// Pulls `col` at the root when every path still has it free.
    pub fn pull(&mut self, col: usize) {
        if self.root.children.retained_lines() == 0 || !self.root.children.covers(col) {
            return;
        }
        let cs = std::mem::replace(&mut self.root.children, ChildSet::Count(Default::default()));
        self.root.children = ChildSet::Static(pull(cs, col).unwrap());
    }

    /// Trims with every static value held once more, as the engine holds
    /// tokens its tree structure still renders.
    pub fn trim(&mut self, cfg: &EvolutionConfig) -> TrimStats {
        let mut held = Vec::new();
        self.root.children.for_each_static(&mut |_, v| held.push(v));
        for v in held {
            self.interner.retain(v, 1).unwrap();
        }
        trim(&mut self.root, &mut self.fm, &mut self.interner, cfg).unwrap()
    }

    pub fn dump(&self) -> String {
        extract_templates(&self.root, &self.interner)
            .unwrap()
            .iter()
            .map(|t| format!("{}\t{}\n", t.count, t.render()))
            .collect()
    }

    pub fn rows(&self) -> Vec<Vec<TokenHandle>> {
        self.root.materialize()
    }
}

/// Random tree: lines from a few families pushed in two rounds with random
/// pulls, validations and re-evaluations in between.
pub fn random_tree(seed: u64, cfg: &EvolutionConfig) -> Tree {
    let mut r = rng(seed);
    let width = r.gen_range(2..7);
    let count = r.gen_range(1..7);
    let fams = families(&mut r, width, count);
    let n = r.gen_range(20..400);
    let all = lines(&mut r, &fams, n);
    let cut = r.gen_range(0..=n);
    let mut t = Tree::new(width);
    for l in &all[..cut] {
        t.push(l);
    }
    for _ in 0..r.gen_range(0..3) {
        let c = r.gen_range(0..width);
        t.pull(c);
    }
    if r.gen_bool(0.5) {
        t.validate();
    }
    t.reeval(cfg);
    for l in &all[cut..] {
        t.push(l);
    }
    t.validate();
    t.reeval(cfg);
    t
}
