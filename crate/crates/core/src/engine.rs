//! Streaming orchestration: segregation, evolution and restructuring per
//! bucket, plus matching and auditing once a stream has been flushed.

use std::collections::BTreeMap;

use log::{debug, trace};
use rustc_hash::FxHashMap;
use serde::Serialize;

use crate::egt::{ChildSet, ParsedTemplate, RootNode, TemplateIndex, TemplatePart, WILDCARD};
use crate::error::{KelpError, Result};
use crate::evolution::{reeval_root, trim, validate_root, EvolutionConfig};
use crate::freqmap::{FrequencyMap, SlopeMode};
use crate::ingest::{route, tokenize, BatchStats, TokenizerConfig};
use crate::interner::{Interner, TokenHandle};

/// Event id reported for lines whose token count was never seen.
pub const UNSEEN_SHAPE: &str = "unseen-shape";

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub tokenizer: TokenizerConfig,
    pub evolution: EvolutionConfig,
    pub slope_mode: SlopeMode,
    /// Lines between root validations.
    pub batch_size: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            tokenizer: TokenizerConfig::default(),
            evolution: EvolutionConfig::default(),
            slope_mode: SlopeMode::default(),
            batch_size: 2048,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        self.evolution.validate()?;
        if self.batch_size == 0 {
            return Err(KelpError::Config("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug)]
struct Bucket {
    fm: FrequencyMap,
    root: RootNode,
    /// Static node values currently retained in the interner, with multiplicity.
    held: FxHashMap<TokenHandle, u64>,
    pushed: u64,
    since_reeval: u64,
    index: Option<TemplateIndex>,
}

impl Bucket {
    fn new(width: usize, mode: SlopeMode) -> Self {
        Bucket {
            fm: FrequencyMap::with_mode(width, mode),
            root: RootNode::new(width),
            held: FxHashMap::default(),
            pushed: 0,
            since_reeval: 0,
            index: None,
        }
    }

    /// Re-aligns structural interner references with the tree.
    fn sync_holds(&mut self, interner: &mut Interner) -> Result<()> {
        let mut now: FxHashMap<TokenHandle, u64> = FxHashMap::default();
        self.root.children.for_each_static(&mut |_, v| *now.entry(v).or_default() += 1);
        for (&h, &n) in &now {
            let old = self.held.get(&h).copied().unwrap_or(0);
            if n > old {
                interner.retain(h, n - old)?;
            }
        }
        for (&h, &old) in &self.held {
            let n = now.get(&h).copied().unwrap_or(0);
            if old > n {
                interner.release(h, old - n)?;
            }
        }
        self.held = now;
        Ok(())
    }
}

/// Template of one bucket as reported by [`Engine::templates`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TemplateRecord {
    pub event_id: String,
    pub count: u64,
    pub template: String,
    pub width: usize,
}

/// Structured result for one input line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParsedLine {
    pub line_no: u64,
    pub event_id: String,
    pub template: String,
    pub variables: Vec<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct AuditReport {
    pub buckets: usize,
    pub live_tokens: usize,
    pub held_tokens: usize,
    pub retained_lines: u64,
    pub represented_lines: u64,
}

pub struct Engine {
    cfg: EngineConfig,
    interner: Interner,
    buckets: BTreeMap<usize, Bucket>,
    stats: BatchStats,
    next_line_no: u64,
}

impl Engine {
    pub fn new(cfg: EngineConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Engine {
            cfg,
            interner: Interner::new(),
            buckets: BTreeMap::new(),
            stats: BatchStats::default(),
            next_line_no: 1,
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn interner(&self) -> &Interner {
        &self.interner
    }

    pub fn stats(&self) -> &BatchStats {
        &self.stats
    }

    pub fn bucket_count(&self) -> usize {
        self.buckets.len()
    }

    pub fn bucket_widths(&self) -> impl Iterator<Item = usize> + '_ {
        self.buckets.keys().copied()
    }

    pub fn root(&self, width: usize) -> Option<&RootNode> {
        self.buckets.get(&width).map(|b| &b.root)
    }

    pub fn frequency_map(&self, width: usize) -> Option<&FrequencyMap> {
        self.buckets.get(&width).map(|b| &b.fm)
    }

    /// Feeds lines in batches of the configured size.
    pub fn ingest<I, S>(&mut self, lines: I) -> Result<BatchStats>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut total = BatchStats::default();
        let mut batch: Vec<S> = Vec::with_capacity(self.cfg.batch_size);
        for line in lines {
            batch.push(line);
            if batch.len() == self.cfg.batch_size {
                total.absorb(&self.ingest_batch(&batch)?);
                batch.clear();
            }
        }
        if !batch.is_empty() {
            total.absorb(&self.ingest_batch(&batch)?);
        }
        Ok(total)
    }

    /// Pushes one batch, then validates, re-evaluates and trims every bucket
    /// the batch touched.
    pub fn ingest_batch<S: AsRef<str>>(&mut self, lines: &[S]) -> Result<BatchStats> {
        let mut st = BatchStats::default();
        let mut touched: Vec<usize> = Vec::new();
        for line in lines {
            let line_no = self.next_line_no;
            self.next_line_no += 1;
            st.lines += 1;
            let Some(tl) = tokenize(line.as_ref(), line_no, &self.cfg.tokenizer, &mut self.interner)? else {
                st.skipped += 1;
                continue;
            };
            let width = route(&tl).0;
            let mode = self.cfg.slope_mode;
            let bucket = self.buckets.entry(width).or_insert_with(|| {
                st.new_buckets += 1;
                Bucket::new(width, mode)
            });
            bucket.fm.record(&tl, &mut self.interner)?;
            bucket.root.push_line(&tl.tokens);
            bucket.pushed += 1;
            bucket.since_reeval += 1;
            bucket.index = None;
            if !touched.contains(&width) {
                touched.push(width);
            }
            st.accepted += 1;
        }
        for width in touched {
            self.evolve(width, false, &mut st)?;
        }
        trace!("batch: {st:?}");
        self.stats.absorb(&st);
        Ok(st)
    }

    fn evolve(&mut self, width: usize, force: bool, st: &mut BatchStats) -> Result<()> {
        let evo = self.cfg.evolution;
        let bucket = self.buckets.get_mut(&width).expect("touched bucket exists");
        if bucket.fm.is_empty() {
            return Ok(());
        }
        let outcome = validate_root(&mut bucket.root, &bucket.fm)?;
        st.validations += 1;
        if outcome.changed() {
            debug!(
                "bucket {width}: promoted {:?} demoted {:?} (T={})",
                outcome.promoted, outcome.demoted, outcome.threshold
            );
        }
        if force || bucket.root.reeval_flag || bucket.since_reeval >= evo.reeval_interval {
            reeval_root(&mut bucket.root, &evo);
            bucket.since_reeval = 0;
            st.reeval_passes += 1;
        }
        bucket.sync_holds(&mut self.interner)?;
        let ts = trim(&mut bucket.root, &mut bucket.fm, &mut self.interner, &evo)?;
        if ts.rows_discarded > 0 {
            debug!("bucket {width}: trimmed {} rows from {} leaves", ts.rows_discarded, ts.leaves_trimmed);
        }
        st.trimmed_rows += ts.rows_discarded;
        Ok(())
    }

    /// Final restructuring of every bucket and template index rebuild. Must be
    /// called before matching.
    pub fn flush(&mut self) -> Result<()> {
        let widths: Vec<usize> = self.buckets.keys().copied().collect();
        let mut st = BatchStats::default();
        for w in widths {
            self.evolve(w, true, &mut st)?;
            let b = self.buckets.get_mut(&w).expect("bucket exists");
            b.index = Some(TemplateIndex::build(&b.root, &self.interner)?);
        }
        self.stats.absorb(&st);
        Ok(())
    }

    fn index(&self, width: usize) -> Result<Option<(&Bucket, &TemplateIndex)>> {
        let Some(b) = self.buckets.get(&width) else {
            return Ok(None);
        };
        let idx =
            b.index.as_ref().ok_or_else(|| KelpError::invariant(format!("bucket {width} matched before flush")))?;
        Ok(Some((b, idx)))
    }

    /// Templates of all buckets, by width then tree order. Paths rendering to
    /// the same string are reported once with their counts summed.
    pub fn templates(&self) -> Result<Vec<TemplateRecord>> {
        let mut out: Vec<TemplateRecord> = Vec::new();
        for &w in self.buckets.keys() {
            let (_, idx) = self.index(w)?.expect("bucket exists");
            let mut pos: FxHashMap<String, usize> = FxHashMap::default();
            for t in &idx.templates {
                let template = t.render().to_string();
                match pos.get(&template) {
                    Some(&i) => out[i].count += t.count,
                    None => {
                        pos.insert(template.clone(), out.len());
                        out.push(TemplateRecord {
                            event_id: t.id_text().to_string(),
                            count: t.count,
                            template,
                            width: w,
                        });
                    }
                }
            }
        }
        Ok(out)
    }

    /// Template dump: `event_id<TAB>count<TAB>template` per line.
    pub fn template_dump(&self) -> Result<String> {
        let mut s = String::new();
        for t in self.templates()? {
            s.push_str(&t.event_id);
            s.push('\t');
            s.push_str(&t.count.to_string());
            s.push('\t');
            s.push_str(&t.template);
            s.push('\n');
        }
        Ok(s)
    }

    /// Maps a line to its template and variables without changing any state.
    /// Returns `None` for blank lines.
    pub fn match_line(&self, line: &str, line_no: u64) -> Result<Option<ParsedLine>> {
        let raw: Vec<&str> = self.cfg.tokenizer.split(line.trim_end_matches(['\n', '\r'])).collect();
        if raw.is_empty() {
            return Ok(None);
        }
        let unseen = || ParsedLine {
            line_no,
            event_id: UNSEEN_SHAPE.to_string(),
            template: vec![WILDCARD; raw.len()].join(" "),
            variables: raw.iter().map(|s| s.to_string()).collect(),
        };
        let Some((bucket, idx)) = self.index(raw.len())? else {
            return Ok(Some(unseen()));
        };
        let handles: Vec<Option<TokenHandle>> = raw.iter().map(|s| self.interner.lookup(s)).collect();
        let Some(m) = idx.match_tokens(&bucket.root, &handles) else {
            return Ok(Some(unseen()));
        };
        let t: &ParsedTemplate = &idx.templates[m.template];
        let variables = t
            .parts
            .iter()
            .zip(&raw)
            .filter(|(p, _)| **p == TemplatePart::Wildcard)
            .map(|(_, s)| s.to_string())
            .collect();
        Ok(Some(ParsedLine { line_no, event_id: t.id_text().to_string(), template: t.render().to_string(), variables }))
    }

    /// Ingests every line, flushes, then matches every line again.
    pub fn parse_all<S: AsRef<str>>(cfg: EngineConfig, lines: &[S]) -> Result<(Engine, Vec<ParsedLine>)> {
        let mut e = Engine::new(cfg)?;
        e.ingest(lines)?;
        e.flush()?;
        let mut out = Vec::with_capacity(lines.len());
        for (i, l) in lines.iter().enumerate() {
            if let Some(p) = e.match_line(l.as_ref(), i as u64 + 1)? {
                out.push(p);
            }
        }
        Ok((e, out))
    }

    /// Cross-checks frequency maps, tree conservation and interner references.
    pub fn audit(&self) -> Result<AuditReport> {
        let mut expected: FxHashMap<TokenHandle, u64> = FxHashMap::default();
        let mut rep = AuditReport { buckets: self.buckets.len(), ..Default::default() };
        for (&w, b) in &self.buckets {
            b.fm.check_column_sums()?;
            let retained = b.root.children.retained_lines();
            let represented = b.root.children.represented_lines();
            if b.fm.total_lines() != retained {
                return Err(KelpError::invariant(format!(
                    "bucket {w}: frequency map holds {} lines, tree retains {retained}",
                    b.fm.total_lines()
                )));
            }
            if represented != b.pushed {
                return Err(KelpError::invariant(format!(
                    "bucket {w}: tree represents {represented} lines, {} pushed",
                    b.pushed
                )));
            }
            let mut now: FxHashMap<TokenHandle, u64> = FxHashMap::default();
            b.root.children.for_each_static(&mut |_, v| *now.entry(v).or_default() += 1);
            if now != b.held {
                return Err(KelpError::invariant(format!("bucket {w}: structural holds out of sync")));
            }
            for (_, t, n) in b.fm.entries() {
                *expected.entry(t).or_default() += n;
            }
            for (&t, &n) in &b.held {
                *expected.entry(t).or_default() += n;
            }
            rep.held_tokens += b.held.len();
            rep.retained_lines += retained;
            rep.represented_lines += represented;
        }
        let live: FxHashMap<TokenHandle, u64> = self.interner.live().collect();
        if live != expected {
            let stray = live.iter().filter(|(h, n)| expected.get(h) != Some(n)).count()
                + expected.keys().filter(|h| !live.contains_key(h)).count();
            return Err(KelpError::invariant(format!(
                "interner holds {} live tokens, {} referenced ({stray} disagree)",
                live.len(),
                expected.len()
            )));
        }
        rep.live_tokens = live.len();
        Ok(rep)
    }

    /// Rows currently buffered in dynamic leaves across all buckets.
    pub fn buffered_rows(&self) -> u64 {
        fn walk(cs: &ChildSet) -> u64 {
            match cs {
                ChildSet::Count(_) => 0,
                ChildSet::Dynamic(s) => s.rows() as u64,
                ChildSet::Static(b) => b.iter().map(|n| walk(&n.child)).sum(),
            }
        }
        self.buckets.values().map(|b| walk(&b.root.children)).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(lines: &[&str], cfg: EngineConfig) -> Engine {
        let mut e = Engine::new(cfg).unwrap();
        e.ingest(lines.iter().copied()).unwrap();
        e.flush().unwrap();
        e
    }

    #[test]
    fn empty_input_has_no_templates() {
        let e = run(&[], EngineConfig::default());
        assert!(e.templates().unwrap().is_empty());
        assert_eq!(e.template_dump().unwrap(), "");
        e.audit().unwrap();
    }

    #[test]
    fn generalized_template_and_variables() {
        let e = run(
            &["Connected to internal service on port 8080", "Connected to external service on port 443"],
            EngineConfig::default(),
        );
        let ts = e.templates().unwrap();
        assert_eq!(ts.len(), 1);
        assert_eq!(ts[0].template, "Connected to <*> service on port <*>");
        let p = e.match_line("Connected to internal service on port 8080", 1).unwrap().unwrap();
        assert_eq!(p.variables, ["internal", "8080"]);
        assert_eq!(p.event_id, ts[0].event_id);
    }

    #[test]
    fn fully_static_line_has_no_variables() {
        let lines = vec!["disk check passed"; 20];
        let e = run(&lines, EngineConfig::default());
        let p = e.match_line("disk check passed", 1).unwrap().unwrap();
        assert!(p.variables.is_empty());
        assert_eq!(p.template, "disk check passed");
        assert_eq!(e.templates().unwrap()[0].count, 20);
    }

    #[test]
    fn unseen_width_and_blank_lines() {
        let e = run(&["a b c", "a b d"], EngineConfig::default());
        let p = e.match_line("only two", 9).unwrap().unwrap();
        assert_eq!(p.event_id, UNSEEN_SHAPE);
        assert_eq!(p.variables, ["only", "two"]);
        assert!(e.match_line("   ", 1).unwrap().is_none());
        assert_eq!(e.stats().skipped, 0);
    }

    #[test]
    fn matching_requires_flush() {
        let mut e = Engine::new(EngineConfig::default()).unwrap();
        e.ingest(["x y"]).unwrap();
        assert!(matches!(e.match_line("x y", 1), Err(KelpError::Invariant(_))));
    }

    #[test]
    fn round_trip_and_audit_with_trim() {
        let mut lines = Vec::new();
        for i in 0..3000 {
            lines.push(format!("worker {} finished job j{i} in {}ms", i % 4, i % 97));
            lines.push(format!("cache {} miss for key k{}", if i % 2 == 0 { "L1" } else { "L2" }, i * 7));
            lines.push("heartbeat ok".to_string());
        }
        let mut cfg = EngineConfig::default();
        cfg.evolution.trim_capacity = 64;
        cfg.evolution.reeval_interval = 500;
        cfg.batch_size = 256;
        let mut e = Engine::new(cfg).unwrap();
        e.ingest(&lines).unwrap();
        e.audit().unwrap();
        e.flush().unwrap();
        let rep = e.audit().unwrap();
        assert_eq!(rep.represented_lines, lines.len() as u64);
        assert!(rep.retained_lines < lines.len() as u64);
        assert!(e.stats().trimmed_rows > 0);
        for (i, l) in lines.iter().enumerate() {
            let p = e.match_line(l, i as u64 + 1).unwrap().unwrap();
            let mut vars = p.variables.iter();
            let rebuilt: Vec<&str> =
                p.template.split(' ').map(|t| if t == WILDCARD { vars.next().unwrap().as_str() } else { t }).collect();
            assert_eq!(rebuilt.join(" "), *l);
        }
        let total: u64 = e.templates().unwrap().iter().map(|t| t.count).sum();
        assert_eq!(total, lines.len() as u64);
    }

    #[test]
    fn zero_batch_size_is_rejected() {
        let cfg = EngineConfig { batch_size: 0, ..Default::default() };
        assert!(matches!(Engine::new(cfg), Err(KelpError::Config(_))));
    }
}
