//! Left-to-right beam search with end-of-sequence handling and beam widening.
//!
//! Finished hypotheses stay in the pool and compete with unfinished ones on
//! raw log-probability; the search ends as soon as the best hypothesis in the
//! pool is finished. No length normalization is applied.

use serde::{Deserialize, Serialize};

use crate::attention::NormalizerConfig;
use crate::error::{Error, Result};
use crate::model::{Arsg, GeneratorState, Pending, Session};

/// Scores returned for one hypothesis expansion.
pub struct Scored<P> {
    /// Log-probability of every vocabulary symbol.
    pub log_probs: Vec<f64>,
    /// Number of attention scores evaluated to produce them.
    pub evaluations: usize,
    pub pending: P,
}

/// Anything that can be decoded symbol by symbol.
pub trait StepModel {
    type State: Clone;
    type Pending;

    fn vocab(&self) -> usize;
    fn eos(&self) -> usize;
    fn initial(&self) -> Result<Self::State>;
    fn score(&self, state: &Self::State) -> Result<Scored<Self::Pending>>;
    fn advance(&self, state: &Self::State, pending: &Self::Pending, y: usize) -> Result<Self::State>;
}

impl StepModel for Session<'_> {
    type State = GeneratorState;
    type Pending = Pending;

    fn vocab(&self) -> usize {
        self.model.dims.vocab
    }

    fn eos(&self) -> usize {
        self.model.dims.eos
    }

    fn initial(&self) -> Result<GeneratorState> {
        self.initial_state()
    }

    fn score(&self, state: &GeneratorState) -> Result<Scored<Pending>> {
        let (pending, log_probs) = self.attend(state)?;
        Ok(Scored {
            log_probs,
            evaluations: pending.scores_evaluated,
            pending,
        })
    }

    fn advance(&self, state: &GeneratorState, pending: &Pending, y: usize) -> Result<GeneratorState> {
        Session::advance(self, state, pending, y)
    }
}

#[derive(Clone, Debug)]
pub struct Hypothesis<S> {
    /// Emitted symbols, without eos.
    pub symbols: Vec<usize>,
    pub log_prob: f64,
    /// State after consuming `symbols`; `None` once finished.
    pub state: Option<S>,
    pub finished: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchStats {
    /// Output steps taken.
    pub steps: usize,
    /// Hypothesis expansions (one attention step each).
    pub expansions: usize,
    pub score_evaluations: usize,
    pub max_evaluations_per_expansion: usize,
}

impl SearchStats {
    fn merge(&mut self, other: &SearchStats) {
        self.steps += other.steps;
        self.expansions += other.expansions;
        self.score_evaluations += other.score_evaluations;
        self.max_evaluations_per_expansion = self.max_evaluations_per_expansion.max(other.max_evaluations_per_expansion);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchResult {
    pub symbols: Vec<usize>,
    pub log_prob: f64,
    pub stats: SearchStats,
}

/// Beam search at a fixed width. Fails with [`Error::NoEos`] when no
/// hypothesis has finished after `max_len` steps.
pub fn beam_search<M: StepModel>(model: &M, width: usize, max_len: usize) -> Result<SearchResult> {
    if width == 0 {
        return Err(Error::contract("beam width must be positive"));
    }
    let eos = model.eos();
    let mut stats = SearchStats::default();
    let mut beam = vec![Hypothesis {
        symbols: Vec::new(),
        log_prob: 0.0,
        state: Some(model.initial()?),
        finished: false,
    }];

    struct Candidate {
        parent: usize,
        symbol: Option<usize>,
        log_prob: f64,
    }

    for _ in 0..max_len {
        stats.steps += 1;
        let mut candidates = Vec::new();
        let mut pendings = Vec::with_capacity(beam.len());
        for (i, hyp) in beam.iter().enumerate() {
            let Some(state) = hyp.state.as_ref().filter(|_| !hyp.finished) else {
                candidates.push(Candidate {
                    parent: i,
                    symbol: None,
                    log_prob: hyp.log_prob,
                });
                pendings.push(None);
                continue;
            };
            let scored = model.score(state)?;
            stats.expansions += 1;
            stats.score_evaluations += scored.evaluations;
            stats.max_evaluations_per_expansion = stats.max_evaluations_per_expansion.max(scored.evaluations);
            if scored.log_probs.len() != model.vocab() {
                return Err(Error::contract("step model returned a distribution of the wrong size"));
            }
            for (y, lp) in scored.log_probs.iter().enumerate() {
                if *lp == f64::NEG_INFINITY {
                    continue;
                }
                candidates.push(Candidate {
                    parent: i,
                    symbol: Some(y),
                    log_prob: hyp.log_prob + lp,
                });
            }
            pendings.push(Some(scored.pending));
        }
        // Stable sort keeps parent order, then symbol order, among ties.
        candidates.sort_by(|a, b| b.log_prob.total_cmp(&a.log_prob));
        candidates.truncate(width);

        let mut next = Vec::with_capacity(candidates.len());
        for c in candidates {
            let parent = &beam[c.parent];
            match c.symbol {
                None => next.push(parent.clone()),
                Some(y) if y == eos => next.push(Hypothesis {
                    symbols: parent.symbols.clone(),
                    log_prob: c.log_prob,
                    state: None,
                    finished: true,
                }),
                Some(y) => {
                    let state = parent.state.as_ref().expect("unfinished hypothesis has a state");
                    let pending = pendings[c.parent].as_ref().expect("expanded hypothesis has scores");
                    let mut symbols = parent.symbols.clone();
                    symbols.push(y);
                    next.push(Hypothesis {
                        symbols,
                        log_prob: c.log_prob,
                        state: Some(model.advance(state, pending, y)?),
                        finished: false,
                    });
                }
            }
        }
        beam = next;
        debug_assert!(distinct(&beam), "duplicate hypotheses in beam");
        if beam.is_empty() {
            break;
        }
        if beam[0].finished {
            let best = beam.swap_remove(0);
            return Ok(SearchResult {
                symbols: best.symbols,
                log_prob: best.log_prob,
                stats,
            });
        }
    }
    match beam.into_iter().find(|h| h.finished) {
        Some(best) => Ok(SearchResult {
            symbols: best.symbols,
            log_prob: best.log_prob,
            stats,
        }),
        None => Err(Error::NoEos {
            widths: vec![width],
            max_len,
        }),
    }
}

fn distinct<S>(beam: &[Hypothesis<S>]) -> bool {
    let mut seen = std::collections::HashSet::new();
    beam.iter().all(|h| seen.insert((&h.symbols, h.finished)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BeamConfig {
    pub initial_width: usize,
    pub max_width: usize,
    /// Fixed output length cap; derived from the input length when absent.
    pub max_len: Option<usize>,
    /// Estimated input frames per output symbol for the derived cap.
    pub frames_per_symbol: f64,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig {
            initial_width: 10,
            max_width: 40,
            max_len: None,
            frames_per_symbol: 4.0,
        }
    }
}

impl BeamConfig {
    pub fn fixed(width: usize) -> Self {
        BeamConfig {
            initial_width: width,
            max_width: width,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.initial_width == 0 || self.initial_width > self.max_width {
            return Err(Error::Config(format!(
                "beam widths must satisfy 1 ≤ initial ({}) ≤ max ({})",
                self.initial_width, self.max_width
            )));
        }
        if !(self.frames_per_symbol > 0.0) {
            return Err(Error::Config("frames_per_symbol must be positive".into()));
        }
        Ok(())
    }

    /// `max_len` if set, else `⌈3·L / frames_per_symbol⌉`.
    pub fn max_len_for(&self, input_len: usize) -> usize {
        self.max_len
            .unwrap_or_else(|| ((3 * input_len) as f64 / self.frames_per_symbol).ceil() as usize)
            .max(1)
    }

    /// Widths tried in order: doubling from the initial width, capped at the max.
    pub fn schedule(&self) -> Vec<usize> {
        let mut out = vec![self.initial_width];
        let mut w = self.initial_width;
        while w < self.max_width {
            w = (w * 2).min(self.max_width);
            out.push(w);
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    pub symbols: Vec<usize>,
    pub log_prob: f64,
    pub widths: Vec<usize>,
    pub stats: SearchStats,
}

impl Decoded {
    pub fn attempts(&self) -> usize {
        self.widths.len()
    }
}

/// Beam search that retries at wider beams when no hypothesis emits eos.
pub fn decode_with_widening<M: StepModel>(model: &M, cfg: &BeamConfig, max_len: usize) -> Result<Decoded> {
    cfg.validate()?;
    let mut stats = SearchStats::default();
    let mut tried = Vec::new();
    for width in cfg.schedule() {
        tried.push(width);
        match beam_search(model, width, max_len) {
            Ok(r) => {
                stats.merge(&r.stats);
                return Ok(Decoded {
                    symbols: r.symbols,
                    log_prob: r.log_prob,
                    widths: tried,
                    stats,
                });
            }
            Err(Error::NoEos { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::NoEos { widths: tried, max_len })
}

/// Decodes features with a trained model.
pub fn decode_features(
    model: &Arsg,
    x: &crate::tensor::Tensor,
    norm: NormalizerConfig,
    beam: &BeamConfig,
) -> Result<Decoded> {
    let session = model.session(model.encode(x)?, norm)?;
    let max_len = beam.max_len_for(x.rows());
    decode_with_widening(&session, beam, max_len)
}

/// Step model driven by a lookup function of the emitted prefix. Used as an
/// oracle in tests and for fault injection.
pub struct TableModel<F> {
    pub vocab: usize,
    pub eos: usize,
    /// Log-probabilities of the next symbol given the prefix.
    pub table: F,
}

impl<F> StepModel for TableModel<F>
where
    F: Fn(&[usize]) -> Vec<f64>,
{
    type State = Vec<usize>;
    type Pending = ();

    fn vocab(&self) -> usize {
        self.vocab
    }

    fn eos(&self) -> usize {
        self.eos
    }

    fn initial(&self) -> Result<Vec<usize>> {
        Ok(Vec::new())
    }

    fn score(&self, state: &Vec<usize>) -> Result<Scored<()>> {
        Ok(Scored {
            log_probs: (self.table)(state),
            evaluations: 1,
            pending: (),
        })
    }

    fn advance(&self, state: &Vec<usize>, _: &(), y: usize) -> Result<Vec<usize>> {
        let mut next = state.clone();
        next.push(y);
        Ok(next)
    }
}
