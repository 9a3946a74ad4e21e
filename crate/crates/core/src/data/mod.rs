//! Utterances, symbol tables, the synthetic task, feature post-processing and
//! dataset files.

mod features;
mod io;
mod synth;

pub use features::{append_end_frame, compute_deltas, concat_utterances, FeaturePipeline, NormStats, RepeatMode};
pub use io::{load_dataset, read_fseq, store_dataset, write_fseq, ManifestEntry};
pub use synth::{synth_corpus, synth_generate, synth_generate_with, Prototypes, SynthCorpus, SynthTaskConfig};

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Ground-truth position of one output symbol; `end` is inclusive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "(usize, usize, usize)", into = "(usize, usize, usize)")]
pub struct Segment {
    pub symbol: usize,
    pub start: usize,
    pub end: usize,
}

impl From<(usize, usize, usize)> for Segment {
    fn from((symbol, start, end): (usize, usize, usize)) -> Self {
        Segment { symbol, start, end }
    }
}

impl From<Segment> for (usize, usize, usize) {
    fn from(s: Segment) -> Self {
        (s.symbol, s.start, s.end)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    /// `[L′, d]` feature matrix.
    pub features: Tensor,
    /// Output symbols, without eos.
    pub targets: Vec<usize>,
    pub segments: Option<Vec<Segment>>,
}

impl Utterance {
    pub fn frames(&self) -> usize {
        self.features.rows()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Targets followed by `eos`.
    pub fn targets_with_eos(&self, eos: usize) -> Vec<usize> {
        let mut y = self.targets.clone();
        y.push(eos);
        y
    }

    /// Checks segment ordering, bounds and agreement with the targets.
    pub fn validate(&self) -> Result<()> {
        if self.features.rank() != 2 {
            return Err(Error::contract(format!("{}: features must be a matrix", self.id)));
        }
        let Some(segs) = &self.segments else {
            return Ok(());
        };
        if segs.len() != self.targets.len() {
            return Err(Error::contract(format!(
                "{}: {} segments for {} targets",
                self.id,
                segs.len(),
                self.targets.len()
            )));
        }
        let mut next_free = 0;
        for (s, &y) in segs.iter().zip(&self.targets) {
            if s.symbol != y || s.start < next_free || s.end < s.start || s.end >= self.frames() {
                return Err(Error::contract(format!("{}: malformed segment {s:?}", self.id)));
            }
            next_free = s.end + 1;
        }
        Ok(())
    }
}

pub type Dataset = Vec<Utterance>;

/// Symbol names; the line number in the symbol file is the id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SymbolTable {
    names: Vec<String>,
}

pub const EOS: &str = "eos";
pub const SOS: &str = "sos";
pub const PAU: &str = "pau";

impl SymbolTable {
    pub fn new(names: Vec<String>) -> Result<Self> {
        for required in [EOS, SOS, PAU] {
            if !names.iter().any(|n| n == required) {
                return Err(Error::Config(format!("symbol table lacks \"{required}\"")));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for n in &names {
            if n.is_empty() || n.chars().any(char::is_whitespace) || !seen.insert(n) {
                return Err(Error::Config(format!("bad or duplicate symbol name {n:?}")));
            }
        }
        Ok(SymbolTable { names })
    }

    /// `eos`, `sos`, `pau`, then `content` symbols named `s1`, `s2`, ….
    pub fn synthetic(content: usize) -> Self {
        let mut names: Vec<String> = [EOS, SOS, PAU].iter().map(|s| s.to_string()).collect();
        names.extend((1..=content).map(|i| format!("s{i}")));
        SymbolTable { names }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn eos(&self) -> usize {
        self.id(EOS).expect("validated")
    }

    pub fn sos(&self) -> usize {
        self.id(SOS).expect("validated")
    }

    pub fn pau(&self) -> usize {
        self.id(PAU).expect("validated")
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn store(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = self.names.join("\n");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        SymbolTable::new(text.lines().map(|l| l.trim().to_string()).filter(|l| !l.is_empty()).collect())
    }
}
