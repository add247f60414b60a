//! Synthetic benchmark generation with ground truth.
//!
//! A pool of event templates is loaded, a random subset is drawn and given
//! Zipf weights, and every slot is filled from a per-tier value source:
//! tier 1 and tier 2 draw from fixed per-slot alphabets of 50 and 500 random
//! strings, tier 3 draws a fresh string for every occurrence.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use log::{debug, warn};
use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustc_hash::FxHashSet;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::egt::WILDCARD;
use crate::error::{KelpError, Result};

/// Template pool shipped with the crate.
pub const BUNDLED_POOL: &str = include_str!("../data/pool.txt");

const ALNUM: &[u8] = b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SkeletonPart {
    Literal(String),
    /// A token with one or more slots; fillers go between the pieces.
    Slot {
        pieces: Vec<String>,
    },
}

impl SkeletonPart {
    fn gaps(&self) -> usize {
        match self {
            SkeletonPart::Literal(_) => 0,
            SkeletonPart::Slot { pieces } => pieces.len() - 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSkeleton {
    pub parts: Vec<SkeletonPart>,
    /// 1-based position in the loaded pool.
    pub origin: usize,
}

impl TemplateSkeleton {
    pub fn parse(line: &str, origin: usize) -> Self {
        let parts = line
            .split_whitespace()
            .map(|tok| {
                if tok.contains(WILDCARD) {
                    SkeletonPart::Slot { pieces: tok.split(WILDCARD).map(str::to_string).collect() }
                } else {
                    SkeletonPart::Literal(tok.to_string())
                }
            })
            .collect();
        TemplateSkeleton { parts, origin }
    }

    pub fn literal_count(&self) -> usize {
        self.parts.iter().filter(|p| matches!(p, SkeletonPart::Literal(_))).count()
    }

    pub fn slot_count(&self) -> usize {
        self.parts.iter().map(SkeletonPart::gaps).sum()
    }

    /// Pool-file form, slots written as `<*>`.
    pub fn to_pool_line(&self) -> String {
        self.parts
            .iter()
            .map(|p| match p {
                SkeletonPart::Literal(s) => s.clone(),
                SkeletonPart::Slot { pieces } => pieces.join(WILDCARD),
            })
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Ground-truth template: every token holding a slot is a wildcard.
    pub fn template(&self) -> String {
        self.parts
            .iter()
            .map(|p| match p {
                SkeletonPart::Literal(s) => s.as_str(),
                SkeletonPart::Slot { .. } => WILDCARD,
            })
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn event_id(&self) -> String {
        format!("E{}", self.origin)
    }
}

/// Parses pool text. Comments and blank lines are skipped, templates without
/// a literal token are dropped, and later duplicates of a ground-truth
/// template are ignored.
pub fn parse_pool(text: &str) -> Result<Vec<TemplateSkeleton>> {
    let mut seen = FxHashSet::default();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let sk = TemplateSkeleton::parse(line, out.len() + 1);
        if sk.literal_count() == 0 {
            warn!("pool line {}: no literal token, skipped", i + 1);
            continue;
        }
        if !seen.insert(sk.template()) {
            debug!("pool line {}: duplicate template, skipped", i + 1);
            continue;
        }
        out.push(sk);
    }
    if out.is_empty() {
        return Err(KelpError::Config("template pool has no usable templates".into()));
    }
    Ok(out)
}

pub fn load_pool(path: &Path) -> Result<Vec<TemplateSkeleton>> {
    parse_pool(&fs::read_to_string(path).map_err(KelpError::file(path))?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenerationConfig {
    pub seed: u64,
    pub n_lines: usize,
    pub tier: u8,
    /// `None` selects the bundled pool.
    pub pool_path: Option<PathBuf>,
    pub zipf_s: f64,
    pub template_count_range: (usize, usize),
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            seed: 42,
            n_lines: 100_000,
            tier: 1,
            pool_path: None,
            zipf_s: 1.2,
            template_count_range: (165, 180),
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.tier) {
            return Err(KelpError::Config(format!("tier must be 1, 2 or 3, got {}", self.tier)));
        }
        let (lo, hi) = self.template_count_range;
        if lo == 0 || lo > hi {
            return Err(KelpError::Config(format!("bad template count range [{lo}, {hi}]")));
        }
        if !(self.zipf_s.is_finite() && self.zipf_s >= 0.0) {
            return Err(KelpError::Config("zipf exponent must be a non-negative number".into()));
        }
        Ok(())
    }

    fn alphabet_size(&self) -> Option<usize> {
        match self.tier {
            1 => Some(50),
            2 => Some(500),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ManifestTemplate {
    pub event_id: String,
    pub template: String,
    pub weight: f64,
    pub lines: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub config: GenerationConfig,
    pub template_count: usize,
    pub slot_values: String,
    pub pool_sha256: String,
    pub log_sha256: String,
    pub truth_sha256: String,
    pub templates: Vec<ManifestTemplate>,
}

impl Manifest {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    /// Newline-terminated raw log lines.
    pub log: String,
    /// Ground-truth CSV.
    pub truth: String,
    pub manifest: Manifest,
    /// Per line, index into `manifest.templates`.
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn lines(&self) -> impl Iterator<Item = &str> {
        self.log.lines()
    }

    pub fn write(&self, log: &Path, truth: &Path, manifest: &Path) -> Result<()> {
        fs::write(log, &self.log).map_err(KelpError::file(log))?;
        fs::write(truth, &self.truth).map_err(KelpError::file(truth))?;
        fs::write(manifest, self.manifest.to_json()?).map_err(KelpError::file(manifest))?;
        Ok(())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn random_string(rng: &mut ChaCha8Rng, min: usize, max: usize) -> String {
    let n = rng.gen_range(min..=max);
    (0..n).map(|_| ALNUM[rng.gen_range(0..ALNUM.len())] as char).collect()
}

/// Fills one slot token. Candidates colliding with a literal are redrawn.
fn fill(
    pieces: &[String],
    values: &mut dyn FnMut(usize, &mut ChaCha8Rng) -> String,
    literals: &FxHashSet<&str>,
    rng: &mut ChaCha8Rng,
) -> String {
    loop {
        let mut tok = pieces[0].clone();
        for (g, piece) in pieces[1..].iter().enumerate() {
            tok.push_str(&values(g, rng));
            tok.push_str(piece);
        }
        if !literals.contains(tok.as_str()) {
            return tok;
        }
    }
}

/// Generates a dataset from the configured pool.
pub fn generate(cfg: &GenerationConfig) -> Result<Dataset> {
    let text = match &cfg.pool_path {
        Some(p) => fs::read_to_string(p).map_err(KelpError::file(p))?,
        None => BUNDLED_POOL.to_string(),
    };
    generate_from_text(cfg, &text)
}

pub fn generate_from_text(cfg: &GenerationConfig, pool_text: &str) -> Result<Dataset> {
    cfg.validate()?;
    let pool = parse_pool(pool_text)?;
    let (lo, hi) = cfg.template_count_range;
    if pool.len() < lo {
        return Err(KelpError::Config(format!("pool holds {} templates, at least {lo} required", pool.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let count = rng.gen_range(lo..=hi).min(pool.len());
    if cfg.n_lines < count {
        return Err(KelpError::Config(format!("{} lines cannot cover {count} templates", cfg.n_lines)));
    }
    let mut picked: Vec<usize> = index::sample(&mut rng, pool.len(), count).into_vec();
    picked.sort_unstable();
    let chosen: Vec<&TemplateSkeleton> = picked.iter().map(|&i| &pool[i]).collect();

    let mut ranks: Vec<usize> = (1..=count).collect();
    ranks.shuffle(&mut rng);
    let weights: Vec<f64> = ranks.iter().map(|&r| (r as f64).powf(-cfg.zipf_s)).collect();
    let sampler = WeightedIndex::new(&weights).map_err(|e| KelpError::Config(format!("template weights: {e}")))?;

    let literals: FxHashSet<&str> = pool
        .iter()
        .flat_map(|s| s.parts.iter())
        .filter_map(|p| match p {
            SkeletonPart::Literal(s) => Some(s.as_str()),
            SkeletonPart::Slot { .. } => None,
        })
        .collect();

    // per template, per gap alphabet (tiers 1 and 2)
    let alphabets: Vec<Vec<Vec<String>>> = match cfg.alphabet_size() {
        Some(size) => chosen
            .iter()
            .map(|sk| {
                (0..sk.slot_count())
                    .map(|_| {
                        let mut set = BTreeSet::new();
                        let mut vals = Vec::with_capacity(size);
                        while vals.len() < size {
                            let v = random_string(&mut rng, 4, 12);
                            if !literals.contains(v.as_str()) && set.insert(v.clone()) {
                                vals.push(v);
                            }
                        }
                        vals
                    })
                    .collect()
            })
            .collect(),
        None => Vec::new(),
    };

    let mut log = String::with_capacity(cfg.n_lines * 64);
    let mut labels = Vec::with_capacity(cfg.n_lines);
    let mut lines_per = vec![0usize; count];
    let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    wtr.write_record(["LineId", "EventId", "EventTemplate"])?;
    let gt: Vec<String> = chosen.iter().map(|sk| sk.template()).collect();
    let ids: Vec<String> = chosen.iter().map(|sk| sk.event_id()).collect();

    for line_no in 0..cfg.n_lines {
        let t = if line_no < count { line_no } else { sampler.sample(&mut rng) };
        let sk = chosen[t];
        let mut gap_base = 0;
        for (i, part) in sk.parts.iter().enumerate() {
            if i > 0 {
                log.push(' ');
            }
            match part {
                SkeletonPart::Literal(s) => log.push_str(s),
                SkeletonPart::Slot { pieces } => {
                    let base = gap_base;
                    let mut values = |g: usize, rng: &mut ChaCha8Rng| match cfg.alphabet_size() {
                        Some(_) => alphabets[t][base + g].choose(rng).expect("non-empty").clone(),
                        None => random_string(rng, 8, 16),
                    };
                    log.push_str(&fill(pieces, &mut values, &literals, &mut rng));
                    gap_base += part.gaps();
                }
            }
        }
        log.push('\n');
        labels.push(t);
        lines_per[t] += 1;
        wtr.write_record([(line_no + 1).to_string().as_str(), ids[t].as_str(), gt[t].as_str()])?;
    }
    let truth =
        String::from_utf8(wtr.into_inner().map_err(|e| KelpError::Io(e.into_error()))?).expect("csv output is utf-8");

    let total_w: f64 = weights.iter().sum();
    let manifest = Manifest {
        config: cfg.clone(),
        template_count: count,
        slot_values: match cfg.alphabet_size() {
            Some(n) => format!("{n} per slot"),
            None => "fresh per occurrence".to_string(),
        },
        pool_sha256: sha256_hex(pool_text.as_bytes()),
        log_sha256: sha256_hex(log.as_bytes()),
        truth_sha256: sha256_hex(truth.as_bytes()),
        templates: (0..count)
            .map(|t| ManifestTemplate {
                event_id: ids[t].clone(),
                template: gt[t].clone(),
                weight: weights[t] / total_w,
                lines: lines_per[t],
            })
            .collect(),
    };
    Ok(Dataset { log, truth, manifest, labels })
}
