//! Template rendering and per-line matching.

use std::fmt;

use rustc_hash::FxHashMap;
use serde::{Serialize, Serializer};

use super::node::{ChildSet, RootNode};
use crate::error::Result;
use crate::interner::{Interner, TokenHandle};

pub const WILDCARD: &str = "<*>";

/// Stable template identity: 64-bit FNV-1a of the rendered template.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EventId(pub u64);

impl EventId {
    pub fn of(rendered: &str) -> Self {
        EventId(fnv1a(rendered.as_bytes()))
    }
}

impl fmt::Display for EventId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl Serialize for EventId {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum TemplatePart {
    Static(String),
    Wildcard,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedTemplate {
    pub parts: Vec<TemplatePart>,
    pub count: u64,
    pub event_id: EventId,
    text: String,
    id_text: String,
    pins: Vec<Option<TokenHandle>>,
}

impl ParsedTemplate {
    pub fn render(&self) -> &str {
        &self.text
    }

    /// `event_id` in its display form.
    pub fn id_text(&self) -> &str {
        &self.id_text
    }

    pub fn wildcards(&self) -> usize {
        self.parts.iter().filter(|p| **p == TemplatePart::Wildcard).count()
    }

    /// Static token handles by column, `None` at wildcards.
    pub fn pins(&self) -> &[Option<TokenHandle>] {
        &self.pins
    }

    fn static_agreement(&self, line: &[Option<TokenHandle>]) -> (usize, bool) {
        let mut agree = 0;
        let mut all = true;
        for (p, t) in self.pins.iter().zip(line) {
            if let Some(p) = p {
                if Some(*p) == *t {
                    agree += 1;
                } else {
                    all = false;
                }
            }
        }
        (agree, all)
    }
}

pub fn render_parts(parts: &[TemplatePart]) -> String {
    let mut s = String::new();
    for (i, p) in parts.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        match p {
            TemplatePart::Static(t) => s.push_str(t),
            TemplatePart::Wildcard => s.push_str(WILDCARD),
        }
    }
    s
}

/// One template per root-to-leaf path, in depth-first order.
pub fn extract_templates(root: &RootNode, interner: &Interner) -> Result<Vec<ParsedTemplate>> {
    Ok(TemplateIndex::build(root, interner)?.templates)
}

/// Templates of one bucket plus the leaf each one came from.
#[derive(Debug, Clone, Default)]
pub struct TemplateIndex {
    pub templates: Vec<ParsedTemplate>,
    by_path: FxHashMap<Vec<u32>, usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TemplateMatch {
    pub template: usize,
    /// False when the line disagreed with some static part and the closest
    /// template was chosen instead.
    pub exact: bool,
}

impl TemplateIndex {
    pub fn build(root: &RootNode, interner: &Interner) -> Result<Self> {
        let mut idx = TemplateIndex::default();
        let mut pins = vec![None; root.width()];
        let mut path = Vec::new();
        idx.walk(&root.children, &mut pins, &mut path, interner)?;
        Ok(idx)
    }

    fn walk(
        &mut self,
        cs: &ChildSet,
        pins: &mut Vec<Option<TokenHandle>>,
        path: &mut Vec<u32>,
        interner: &Interner,
    ) -> Result<()> {
        match cs {
            ChildSet::Static(branches) => {
                for (i, n) in branches.iter().enumerate() {
                    pins[n.col] = n.value;
                    path.push(i as u32);
                    self.walk(&n.child, pins, path, interner)?;
                    path.pop();
                    pins[n.col] = None;
                }
                Ok(())
            }
            ChildSet::Count(t) => self.emit(pins.clone(), t.lines(), path, interner),
            ChildSet::Dynamic(s) => {
                if s.represented() == 0 {
                    return Ok(());
                }
                let mut leaf_pins = pins.clone();
                for (i, &c) in s.cols().iter().enumerate() {
                    if let Some(v) = s.constant(i) {
                        leaf_pins[c] = Some(v);
                    }
                }
                self.emit(leaf_pins, s.represented(), path, interner)
            }
        }
    }

    fn emit(&mut self, pins: Vec<Option<TokenHandle>>, count: u64, path: &[u32], interner: &Interner) -> Result<()> {
        let parts = pins
            .iter()
            .map(|p| match p {
                Some(h) => interner.resolve(*h).map(|s| TemplatePart::Static(s.to_string())),
                None => Ok(TemplatePart::Wildcard),
            })
            .collect::<Result<Vec<_>>>()?;
        let text = render_parts(&parts);
        let event_id = EventId::of(&text);
        self.by_path.insert(path.to_vec(), self.templates.len());
        self.templates.push(ParsedTemplate { parts, count, event_id, text, id_text: event_id.to_string(), pins });
        Ok(())
    }

    /// Finds the template for a line given as per-column handles (`None` for
    /// tokens the interner has never seen). Returns `None` only when the
    /// bucket has no templates.
    pub fn match_tokens(&self, root: &RootNode, line: &[Option<TokenHandle>]) -> Option<TemplateMatch> {
        if self.templates.is_empty() {
            return None;
        }
        let mut path = Vec::new();
        let mut cur = &root.children;
        loop {
            match cur {
                ChildSet::Static(branches) => {
                    let col = branches[0].col;
                    let hit = branches
                        .iter()
                        .position(|n| n.value.is_some() && n.value == line[col])
                        .or_else(|| branches.iter().position(|n| n.is_open()));
                    match hit {
                        Some(i) => {
                            path.push(i as u32);
                            cur = &branches[i].child;
                        }
                        None => return Some(self.closest(line)),
                    }
                }
                _ => {
                    let Some(&t) = self.by_path.get(&path) else {
                        return Some(self.closest(line));
                    };
                    let (_, exact) = self.templates[t].static_agreement(line);
                    if exact {
                        return Some(TemplateMatch { template: t, exact });
                    }
                    // nearest container wins unless another template fits exactly
                    let alt = self.closest(line);
                    return Some(if alt.exact { alt } else { TemplateMatch { template: t, exact: false } });
                }
            }
        }
    }

    fn closest(&self, line: &[Option<TokenHandle>]) -> TemplateMatch {
        let mut best = (0usize, false, 0usize, 0u64);
        for (i, t) in self.templates.iter().enumerate() {
            let (agree, all) = t.static_agreement(line);
            let key = (all, agree, t.count);
            if i == 0 || key > (best.1, best.2, best.3) {
                best = (i, all, agree, t.count);
            }
        }
        TemplateMatch { template: best.0, exact: best.1 }
    }
}
