use serde::{Deserialize, Serialize};

use super::{Segment, Utterance};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Symmetric first difference with clamped edges, applied per column.
fn delta(x: &Tensor) -> Tensor {
    let (l, d) = (x.rows(), x.cols());
    let mut out = vec![0.0; l * d];
    for t in 0..l {
        let prev = x.row(t.saturating_sub(1));
        let next = x.row((t + 1).min(l - 1));
        for c in 0..d {
            out[t * d + c] = (next[c] - prev[c]) / 2.0;
        }
    }
    Tensor::from_parts(vec![l, d], out)
}

/// `x ‖ Δx ‖ ΔΔx`, tripling the column count.
pub fn compute_deltas(x: &Tensor) -> Result<Tensor> {
    if x.rank() != 2 || x.rows() == 0 {
        return Err(Error::contract("deltas need a non-empty feature matrix"));
    }
    let d1 = delta(x);
    let d2 = delta(&d1);
    let (l, d) = (x.rows(), x.cols());
    let mut out = Vec::with_capacity(l * 3 * d);
    for t in 0..l {
        out.extend_from_slice(x.row(t));
        out.extend_from_slice(d1.row(t));
        out.extend_from_slice(d2.row(t));
    }
    Ok(Tensor::from_parts(vec![l, 3 * d], out))
}

/// Per-feature mean and standard deviation over training frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    /// Fits on all frames of `mats`, in order. Uses the population variance
    /// so the standardized training data has unit variance exactly.
    pub fn fit<'a>(mats: impl IntoIterator<Item = &'a Tensor>) -> Result<NormStats> {
        let mats: Vec<&Tensor> = mats.into_iter().collect();
        let Some(first) = mats.first() else {
            return Err(Error::contract("cannot fit normalization on an empty set"));
        };
        let d = first.cols();
        let mut n = 0usize;
        let mut sum = vec![0.0; d];
        for m in &mats {
            if m.cols() != d {
                return Err(Error::contract("feature dimensions differ across utterances"));
            }
            for t in 0..m.rows() {
                for (s, v) in sum.iter_mut().zip(m.row(t)) {
                    *s += v;
                }
            }
            n += m.rows();
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let mut sq = vec![0.0; d];
        for m in &mats {
            for t in 0..m.rows() {
                for ((s, v), mu) in sq.iter_mut().zip(m.row(t)).zip(&mean) {
                    *s += (v - mu) * (v - mu);
                }
            }
        }
        let std: Vec<f64> = sq.iter().map(|s| (s / n as f64).sqrt()).collect();
        for (i, s) in std.iter().enumerate() {
            if !(*s > 1e-12) {
                return Err(Error::ZeroVariance(i));
            }
        }
        Ok(NormStats { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        if x.rank() != 2 || x.cols() != self.dim() {
            return Err(Error::Shape {
                op: "standardize",
                shapes: vec![x.shape().to_vec(), vec![self.dim()]],
            });
        }
        let d = self.dim();
        let mut out = x.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let c = i % d;
            *v = (*v - self.mean[c]) / self.std[c];
        }
        Ok(out)
    }

    pub fn apply_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

/// Appends one all-zero frame; segments are unchanged.
pub fn append_end_frame(utt: &Utterance) -> Utterance {
    let (l, d) = (utt.frames(), utt.dim());
    let mut data = utt.features.data().to_vec();
    data.resize((l + 1) * d, 0.0);
    Utterance {
        features: Tensor::from_parts(vec![l + 1, d], data),
        ..utt.clone()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RepeatMode {
    /// One utterance repeated.
    Same,
    /// Randomly chosen utterances.
    Mixed,
}

impl std::str::FromStr for RepeatMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "same" => Ok(RepeatMode::Same),
            "mixed" => Ok(RepeatMode::Mixed),
            _ => Err(Error::Config(format!("repeat mode must be same or mixed, got {s:?}"))),
        }
    }
}

impl std::fmt::Display for RepeatMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RepeatMode::Same => "same",
            RepeatMode::Mixed => "mixed",
        })
    }
}

/// Joins processed utterances (without end frames) with `pause_frames` copies
/// of `pause_frame` between consecutive parts, inserts the pause symbol into
/// targets and segments, and appends the end frame once.
///
/// With `pause_frames = 0` nothing is inserted: a pause symbol without frames
/// could not be aligned anywhere.
pub fn concat_utterances(utts: &[Utterance], pause_frame: &[f64], pause_frames: usize, pause_symbol: usize) -> Result<Utterance> {
    let Some(first) = utts.first() else {
        return Err(Error::contract("nothing to concatenate"));
    };
    let d = first.dim();
    if pause_frame.len() != d || utts.iter().any(|u| u.dim() != d) {
        return Err(Error::contract("feature dimensions differ across concatenated parts"));
    }
    let mut data = Vec::new();
    let mut targets = Vec::new();
    let mut segments = Some(Vec::new());
    let mut offset = 0;
    for (i, u) in utts.iter().enumerate() {
        if i > 0 && pause_frames > 0 {
            for _ in 0..pause_frames {
                data.extend_from_slice(pause_frame);
            }
            targets.push(pause_symbol);
            if let Some(s) = segments.as_mut() {
                s.push(Segment {
                    symbol: pause_symbol,
                    start: offset,
                    end: offset + pause_frames - 1,
                });
            }
            offset += pause_frames;
        }
        data.extend_from_slice(u.features.data());
        targets.extend_from_slice(&u.targets);
        match (&u.segments, segments.as_mut()) {
            (Some(src), Some(dst)) => dst.extend(src.iter().map(|s| Segment {
                symbol: s.symbol,
                start: s.start + offset,
                end: s.end + offset,
            })),
            _ => segments = None,
        }
        offset += u.frames();
    }
    let joined = Utterance {
        id: utts.iter().map(|u| u.id.as_str()).collect::<Vec<_>>().join("+"),
        features: Tensor::from_parts(vec![offset, d], data),
        targets,
        segments,
    };
    Ok(append_end_frame(&joined))
}

/// Deltas, standardization with training statistics, and the end frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeaturePipeline {
    pub deltas: bool,
    pub stats: NormStats,
    /// Raw pause prototype; the zero vector of the processed space is used
    /// when absent.
    pub pause: Option<Vec<f64>>,
}

impl FeaturePipeline {
    /// Fits statistics on the raw training set.
    pub fn fit(train: &[Utterance], deltas: bool, pause: Option<Vec<f64>>) -> Result<Self> {
        let expanded: Vec<Tensor> = train
            .iter()
            .map(|u| if deltas { compute_deltas(&u.features) } else { Ok(u.features.clone()) })
            .collect::<Result<_>>()?;
        let stats = NormStats::fit(expanded.iter())?;
        Ok(FeaturePipeline { deltas, stats, pause })
    }

    pub fn raw_dim(&self) -> usize {
        if self.deltas {
            self.stats.dim() / 3
        } else {
            self.stats.dim()
        }
    }

    /// Processed width, i.e. the model's input width.
    pub fn dim(&self) -> usize {
        self.stats.dim()
    }

    /// Deltas and standardization, no end frame.
    pub fn standardize(&self, utt: &Utterance) -> Result<Utterance> {
        if utt.dim() != self.raw_dim() {
            return Err(Error::Shape {
                op: "feature pipeline",
                shapes: vec![utt.features.shape().to_vec(), vec![self.raw_dim()]],
            });
        }
        let x = if self.deltas { compute_deltas(&utt.features)? } else { utt.features.clone() };
        Ok(Utterance {
            features: self.stats.apply(&x)?,
            ..utt.clone()
        })
    }

    /// Full processing of a single utterance.
    pub fn process(&self, utt: &Utterance) -> Result<Utterance> {
        Ok(append_end_frame(&self.standardize(utt)?))
    }

    /// The processed pause frame: a steady pause prototype has zero deltas.
    pub fn pause_frame(&self) -> Vec<f64> {
        match &self.pause {
            Some(raw) => {
                let mut row = raw.clone();
                if self.deltas {
                    row.resize(3 * raw.len(), 0.0);
                }
                self.stats.apply_row(&row)
            }
            None => vec![0.0; self.dim()],
        }
    }

    /// Standardizes raw parts and concatenates them.
    pub fn concat(&self, raw: &[Utterance], pause_frames: usize, pause_symbol: usize) -> Result<Utterance> {
        let parts: Vec<Utterance> = raw.iter().map(|u| self.standardize(u)).collect::<Result<_>>()?;
        concat_utterances(&parts, &self.pause_frame(), pause_frames, pause_symbol)
    }
}
