//! Grouping, parsing and F1 group accuracy against ground truth.
//!
//! Groups are compared by exact line membership. Templates are compared as
//! strings after runs of adjacent wildcards are collapsed into one.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::Path;
use std::time::Instant;

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::egt::WILDCARD;
use crate::engine::ParsedLine;
use crate::error::{KelpError, Result};

/// A partition of line numbers into labelled groups.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Grouping {
    assignment: BTreeMap<u64, usize>,
    groups: Vec<Vec<u64>>,
    labels: Vec<String>,
    by_label: FxHashMap<String, usize>,
    templates: Vec<Option<String>>,
    variables: FxHashMap<u64, Vec<String>>,
}

impl Grouping {
    pub fn new() -> Self {
        Self::default()
    }

    /// Assigns `line` to the group named `label`. The first template seen for
    /// a label is kept.
    pub fn insert(&mut self, line: u64, label: &str, template: Option<&str>) -> Result<()> {
        let gid = self.group_of_label(label);
        if self.assignment.insert(line, gid).is_some() {
            return Err(KelpError::Evaluation(format!("line {line} listed twice")));
        }
        self.groups[gid].push(line);
        if self.templates[gid].is_none() {
            self.templates[gid] = template.map(str::to_string);
        }
        Ok(())
    }

    fn group_of_label(&mut self, label: &str) -> usize {
        if let Some(&g) = self.by_label.get(label) {
            return g;
        }
        self.by_label.insert(label.to_string(), self.labels.len());
        self.labels.push(label.to_string());
        self.groups.push(Vec::new());
        self.templates.push(None);
        self.labels.len() - 1
    }

    pub fn from_parsed(lines: &[ParsedLine]) -> Result<Self> {
        let mut g = Grouping::new();
        for p in lines {
            g.insert(p.line_no, &p.event_id, Some(&p.template))?;
            g.set_variables(p.line_no, p.variables.clone());
        }
        Ok(g)
    }

    pub fn set_variables(&mut self, line: u64, vars: Vec<String>) {
        self.variables.insert(line, vars);
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    pub fn group_of(&self, line: u64) -> Option<usize> {
        self.assignment.get(&line).copied()
    }

    pub fn template_of(&self, line: u64) -> Option<&str> {
        self.group_of(line).and_then(|g| self.templates[g].as_deref())
    }

    fn check_universe(&self, other: &Grouping) -> Result<()> {
        if self.assignment.len() != other.assignment.len()
            || self.assignment.keys().zip(other.assignment.keys()).any(|(a, b)| a != b)
        {
            let missing = other.assignment.keys().find(|k| !self.assignment.contains_key(k));
            let extra = self.assignment.keys().find(|k| !other.assignment.contains_key(k));
            return Err(KelpError::Evaluation(format!(
                "line sets differ ({} vs {} lines; first missing {:?}, first extra {:?})",
                self.assignment.len(),
                other.assignment.len(),
                missing,
                extra
            )));
        }
        Ok(())
    }
}

/// Predicted groups whose line set equals some truth group, as (pred, gt).
fn exact_pairs(pred: &Grouping, gt: &Grouping) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (p, lines) in pred.groups.iter().enumerate() {
        let Some(&first) = lines.first() else { continue };
        let g = gt.assignment[&first];
        if gt.groups[g].len() == lines.len() && lines.iter().all(|l| gt.assignment[l] == g) {
            out.push((p, g));
        }
    }
    out
}

pub fn grouping_accuracy(pred: &Grouping, gt: &Grouping) -> Result<f64> {
    pred.check_universe(gt)?;
    if gt.is_empty() {
        return Ok(1.0);
    }
    let correct: usize = exact_pairs(pred, gt).iter().map(|&(p, _)| pred.groups[p].len()).sum();
    Ok(correct as f64 / gt.len() as f64)
}

/// Collapses runs of adjacent wildcard tokens.
pub fn normalize_template(t: &str) -> String {
    let mut out: Vec<&str> = Vec::new();
    for tok in t.split_whitespace() {
        if tok == WILDCARD && out.last() == Some(&WILDCARD) {
            continue;
        }
        out.push(tok);
    }
    out.join(" ")
}

pub fn parse_accuracy(pred: &Grouping, gt: &Grouping) -> Result<f64> {
    pred.check_universe(gt)?;
    if gt.is_empty() {
        return Ok(1.0);
    }
    let norm = |g: &Grouping, side: &str| -> Result<Vec<String>> {
        g.templates
            .iter()
            .enumerate()
            .map(|(i, t)| {
                t.as_deref()
                    .map(normalize_template)
                    .ok_or_else(|| KelpError::Evaluation(format!("{side} group {} has no template", g.labels[i])))
            })
            .collect()
    };
    let pt = norm(pred, "predicted")?;
    let gtt = norm(gt, "truth")?;
    let correct = pred.assignment.iter().filter(|(l, &p)| pt[p] == gtt[gt.assignment[*l]]).count();
    Ok(correct as f64 / gt.len() as f64)
}

pub fn fga(pred: &Grouping, gt: &Grouping) -> Result<f64> {
    pred.check_universe(gt)?;
    if pred.group_count() == 0 && gt.group_count() == 0 {
        return Ok(1.0);
    }
    let hits = exact_pairs(pred, gt).len() as f64;
    let precision = if pred.group_count() == 0 { 0.0 } else { hits / pred.group_count() as f64 };
    let recall = if gt.group_count() == 0 { 0.0 } else { hits / gt.group_count() as f64 };
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Lines whose extracted variables differ from the tokens under the truth
/// template's wildcards. The raw line is rebuilt from the predicted template
/// and variables. `None` when the prediction carries no variables.
pub fn variable_mismatches(pred: &Grouping, gt: &Grouping) -> Option<u64> {
    if pred.variables.is_empty() {
        return None;
    }
    let mut bad = 0;
    for (&line, vars) in &pred.variables {
        let (Some(pt), Some(gtt)) = (pred.template_of(line), gt.template_of(line)) else {
            bad += 1;
            continue;
        };
        let mut it = vars.iter();
        let raw: Vec<&str> = pt
            .split_whitespace()
            .map(|t| if t == WILDCARD { it.next().map_or("", String::as_str) } else { t })
            .collect();
        let gtoks: Vec<&str> = gtt.split_whitespace().collect();
        if raw.len() != gtoks.len() {
            bad += 1;
            continue;
        }
        let want = raw.iter().zip(&gtoks).filter(|(_, g)| **g == WILDCARD).map(|(r, _)| *r);
        if !want.eq(vars.iter().map(String::as_str)) {
            bad += 1;
        }
    }
    Some(bad)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    #[serde(rename = "GA")]
    pub ga: f64,
    #[serde(rename = "PA")]
    pub pa: f64,
    #[serde(rename = "FGA")]
    pub fga: f64,
    pub pred_groups: usize,
    pub gt_groups: usize,
    pub runtime_seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variable_mismatches: Option<u64>,
}

pub fn evaluate(pred: &Grouping, gt: &Grouping) -> Result<Report> {
    let start = Instant::now();
    let ga = grouping_accuracy(pred, gt)?;
    let pa = parse_accuracy(pred, gt)?;
    let fga = fga(pred, gt)?;
    Ok(Report {
        ga,
        pa,
        fga,
        pred_groups: pred.group_count(),
        gt_groups: gt.group_count(),
        runtime_seconds: start.elapsed().as_secs_f64(),
        variable_mismatches: variable_mismatches(pred, gt),
    })
}

#[derive(Debug, Deserialize)]
struct ParsedRecord {
    line_no: u64,
    event_id: String,
    template: String,
    #[serde(default)]
    variables: Option<serde_json::Value>,
}

fn record_vars(v: Option<serde_json::Value>) -> Result<Option<Vec<String>>> {
    match v {
        None | Some(serde_json::Value::Null) => Ok(None),
        // CSV stores the list as a JSON string
        Some(serde_json::Value::String(s)) if s.is_empty() => Ok(None),
        Some(serde_json::Value::String(s)) => Ok(Some(serde_json::from_str(&s)?)),
        Some(v) => Ok(Some(serde_json::from_value(v)?)),
    }
}

/// Reads parser output in JSON-lines or CSV form (detected from content).
pub fn read_parsed(text: &str) -> Result<Grouping> {
    let mut g = Grouping::new();
    let first = text.trim_start().chars().next();
    if first == Some('{') {
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: ParsedRecord = serde_json::from_str(line)
                .map_err(|e| KelpError::Evaluation(format!("parsed output line {}: {e}", i + 1)))?;
            add_record(&mut g, rec)?;
        }
    } else if first.is_some() {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        for rec in rdr.records() {
            let rec = rec?;
            let get = |i: usize| rec.get(i).unwrap_or("");
            let line_no = get(0).parse().map_err(|_| KelpError::Evaluation(format!("bad line number {:?}", get(0))))?;
            let vars = rec.get(3).map(|s| serde_json::Value::String(s.to_string()));
            add_record(
                &mut g,
                ParsedRecord { line_no, event_id: get(1).to_string(), template: get(2).to_string(), variables: vars },
            )?;
        }
    }
    Ok(g)
}

fn add_record(g: &mut Grouping, rec: ParsedRecord) -> Result<()> {
    g.insert(rec.line_no, &rec.event_id, Some(&rec.template))?;
    if let Some(v) = record_vars(rec.variables)? {
        g.set_variables(rec.line_no, v);
    }
    Ok(())
}

/// Reads a `LineId,EventId,EventTemplate` truth file.
pub fn read_truth(text: &str) -> Result<Grouping> {
    let mut g = Grouping::new();
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| KelpError::Evaluation(format!("truth file lacks a {name} column")))
    };
    let (li, ei, ti) = (col("LineId")?, col("EventId")?, col("EventTemplate")?);
    for rec in rdr.records() {
        let rec = rec?;
        let line: u64 = rec[li].parse().map_err(|_| KelpError::Evaluation(format!("bad LineId {:?}", &rec[li])))?;
        g.insert(line, &rec[ei], Some(&rec[ti]))?;
    }
    Ok(g)
}

pub fn read_file(path: &Path) -> Result<String> {
    let mut s = String::new();
    fs::File::open(path).and_then(|mut f| f.read_to_string(&mut s)).map_err(KelpError::file(path))?;
    Ok(s)
}
