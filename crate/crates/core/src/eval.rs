//! Symbol error rate, symbol mapping, forced-alignment verdicts and alignment
//! export.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Segment, SymbolTable};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Levenshtein distance with unit costs.
pub fn edit_distance<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=hypothesis.len()).collect();
    let mut cur = vec![0; hypothesis.len() + 1];
    for (i, r) in reference.iter().enumerate() {
        cur[0] = i + 1;
        for (j, h) in hypothesis.iter().enumerate() {
            let sub = prev[j] + usize::from(r != h);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[hypothesis.len()]
}

/// Maps decoded symbol ids onto scored ids and drops end-of-sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SymbolMap {
    map: HashMap<usize, usize>,
    eos: usize,
}

impl SymbolMap {
    pub fn identity(eos: usize) -> Self {
        SymbolMap {
            map: HashMap::new(),
            eos,
        }
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, usize)>, eos: usize) -> Self {
        SymbolMap {
            map: pairs.into_iter().collect(),
            eos,
        }
    }

    /// Parses lines of `from to` symbol names; unlisted symbols map to
    /// themselves.
    pub fn parse(text: &str, table: &SymbolTable) -> Result<Self> {
        let mut map = HashMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut cols = line.split_whitespace();
            let (Some(from), Some(to), None) = (cols.next(), cols.next(), cols.next()) else {
                return Err(Error::Config(format!("mapping line {}: expected two symbols", n + 1)));
            };
            let lookup = |s: &str| {
                table
                    .id(s)
                    .ok_or_else(|| Error::Config(format!("mapping line {}: unknown symbol {s:?}", n + 1)))
            };
            map.insert(lookup(from)?, lookup(to)?);
        }
        Ok(SymbolMap { map, eos: table.eos() })
    }

    pub fn load(path: impl AsRef<Path>, table: &SymbolTable) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::parse(&text, table)
    }

    pub fn map_symbol(&self, s: usize) -> usize {
        self.map.get(&s).copied().unwrap_or(s)
    }

    /// Mapped sequence with eos removed; adjacent duplicates are kept.
    pub fn apply(&self, seq: &[usize]) -> Vec<usize> {
        seq.iter()
            .filter(|&&s| s != self.eos)
            .map(|&s| self.map_symbol(s))
            .collect()
    }
}

/// Error counts of one utterance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Errors {
    pub errors: usize,
    pub ref_len: usize,
}

/// Scores one hypothesis; `None` is a failed decode and counts every
/// reference symbol as wrong.
pub fn score_utterance(reference: &[usize], hypothesis: Option<&[usize]>, map: &SymbolMap) -> Result<Errors> {
    let r = map.apply(reference);
    if r.is_empty() {
        return Err(Error::contract("reference is empty after mapping"));
    }
    let errors = match hypothesis {
        Some(h) => edit_distance(&r, &map.apply(h)),
        None => r.len(),
    };
    Ok(Errors { errors, ref_len: r.len() })
}

/// Total edit distance over total reference length.
pub fn per(refs: &[Vec<usize>], hyps: &[Option<Vec<usize>>], map: &SymbolMap) -> Result<f64> {
    if refs.len() != hyps.len() {
        return Err(Error::contract(format!("{} references but {} hypotheses", refs.len(), hyps.len())));
    }
    if refs.is_empty() {
        return Err(Error::contract("error rate of an empty corpus"));
    }
    let mut errors = 0;
    let mut total = 0;
    for (r, h) in refs.iter().zip(hyps) {
        let e = score_utterance(r, h.as_deref(), map)?;
        errors += e.errors;
        total += e.ref_len;
    }
    Ok(errors as f64 / total as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentVerdict {
    /// Alignment mass inside each scored step's window.
    pub inside: Vec<f64>,
    pub correct_steps: usize,
    pub correct: bool,
}

/// Slack for floating-point sums that should equal the mass threshold.
const MASS_TOLERANCE: f64 = 1e-9;

/// Step `i` is correct when at least `mass` of row `i` lies in the closed
/// window `[start − slack, end + slack]` of segment `i`. A final eos row
/// (one row more than segments) is not scored.
pub fn alignment_correct(a: &Tensor, segments: &[Segment], slack: usize, mass: f64) -> Result<AlignmentVerdict> {
    if a.rank() != 2 {
        return Err(Error::contract("alignment matrix must be rank 2"));
    }
    let rows = a.rows();
    if rows != segments.len() && rows != segments.len() + 1 {
        return Err(Error::contract(format!(
            "{rows} alignment rows for {} segments",
            segments.len()
        )));
    }
    let l = a.cols();
    let mut inside = Vec::with_capacity(segments.len());
    for (i, s) in segments.iter().enumerate() {
        let lo = s.start.saturating_sub(slack);
        let hi = s.end.saturating_add(slack).min(l.saturating_sub(1));
        let m: f64 = if lo <= hi { a.row(i)[lo..=hi].iter().sum() } else { 0.0 };
        inside.push(m.clamp(0.0, 1.0));
    }
    let correct_steps = inside.iter().filter(|m| **m >= mass - MASS_TOLERANCE).count();
    Ok(AlignmentVerdict {
        correct: correct_steps == inside.len(),
        correct_steps,
        inside,
    })
}

/// Full-precision CSV, one row per output step.
pub fn alignment_csv(a: &Tensor) -> String {
    let mut s = String::new();
    for i in 0..a.rows() {
        for (j, v) in a.row(i).iter().enumerate() {
            if j > 0 {
                s.push(',');
            }
            write!(s, "{v:?}").expect("writing to a string");
        }
        s.push('\n');
    }
    s
}

pub fn parse_alignment_csv(text: &str) -> Result<Tensor> {
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|e| Error::Config(format!("bad CSV value {v:?}: {e}"))))
                .collect()
        })
        .collect::<Result<_>>()?;
    Tensor::from_rows(&rows)
}

/// Binary 8-bit PGM, pixel = round(255 · a / max a).
pub fn alignment_pgm(a: &Tensor) -> Vec<u8> {
    let max = a.data().iter().copied().fold(0.0, f64::max);
    let mut out = format!("P5\n{} {}\n255\n", a.cols(), a.rows()).into_bytes();
    out.extend(a.data().iter().map(|v| {
        if max > 0.0 {
            (255.0 * v / max).round().clamp(0.0, 255.0) as u8
        } else {
            0
        }
    }));
    out
}

/// Writes `<stem>.csv` and `<stem>.pgm`.
pub fn export_alignment(a: &Tensor, stem: impl AsRef<Path>) -> Result<()> {
    let stem = stem.as_ref();
    let csv = stem.with_extension("csv");
    fs::write(&csv, alignment_csv(a)).map_err(|e| Error::file(&csv, e))?;
    let pgm = stem.with_extension("pgm");
    fs::write(&pgm, alignment_pgm(a)).map_err(|e| Error::file(&pgm, e))
}
