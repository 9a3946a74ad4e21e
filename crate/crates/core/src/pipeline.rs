//! Dataset-level decoding, forced alignment, long-utterance evaluation and
//! beam sweeps. Utterances are processed in parallel and reported in input
//! order, so results do not depend on the thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use rand_distr::{Distribution, Normal};

use crate::attention::{Normalizer, NormalizerConfig};
use crate::checkpoint::ModelBundle;
use crate::data::{FeaturePipeline, RepeatMode, Utterance};
use crate::decoding::{decode_features, BeamConfig};
use crate::error::{Error, Result};
use crate::eval::{alignment_correct, score_utterance, AlignmentVerdict, SymbolMap};
use crate::gradcheck::{self, GradCheckReport};
use crate::model::{Arsg, ModelDims};
use crate::params::ParamSet;
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Applies the bundle's feature pipeline (if any) to raw utterances.
pub fn prepare(bundle: &ModelBundle, raw: &[Utterance]) -> Result<Vec<Utterance>> {
    match &bundle.pipeline {
        Some(p) => raw.par_iter().map(|u| p.process(u)).collect(),
        None => Ok(raw.to_vec()),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeRecord {
    pub id: String,
    /// `None` when no beam produced eos.
    pub hypothesis: Option<Vec<usize>>,
    pub log_prob: Option<f64>,
    pub beam_attempts: usize,
    pub score_evaluations: usize,
    pub max_evaluations_per_step: usize,
    pub errors: usize,
    pub ref_len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeReport {
    pub records: Vec<DecodeRecord>,
    pub per: f64,
    pub failures: usize,
}

impl DecodeReport {
    fn from_records(records: Vec<DecodeRecord>) -> Result<Self> {
        let total: usize = records.iter().map(|r| r.ref_len).sum();
        if total == 0 {
            return Err(Error::contract("error rate of an empty corpus"));
        }
        let errors: usize = records.iter().map(|r| r.errors).sum();
        Ok(DecodeReport {
            failures: records.iter().filter(|r| r.hypothesis.is_none()).count(),
            per: errors as f64 / total as f64,
            records,
        })
    }
}

/// Decodes one processed utterance and scores it against its targets.
pub fn decode_one(model: &Arsg, u: &Utterance, norm: NormalizerConfig, beam: &BeamConfig, map: &SymbolMap) -> Result<DecodeRecord> {
    let (hyp, log_prob, attempts, evals, max_evals) = match decode_features(model, &u.features, norm, beam) {
        Ok(d) => (
            Some(d.symbols.clone()),
            Some(d.log_prob),
            d.attempts(),
            d.stats.score_evaluations,
            d.stats.max_evaluations_per_expansion,
        ),
        Err(Error::NoEos { widths, .. }) => (None, None, widths.len(), 0, 0),
        Err(e) => return Err(e),
    };
    let e = score_utterance(&u.targets, hyp.as_deref(), map)?;
    Ok(DecodeRecord {
        id: u.id.clone(),
        hypothesis: hyp,
        log_prob,
        beam_attempts: attempts,
        score_evaluations: evals,
        max_evaluations_per_step: max_evals,
        errors: e.errors,
        ref_len: e.ref_len,
    })
}

/// Decodes processed utterances; failed decodes count as fully wrong.
pub fn decode_dataset(
    model: &Arsg,
    utts: &[Utterance],
    norm: NormalizerConfig,
    beam: &BeamConfig,
    map: &SymbolMap,
) -> Result<DecodeReport> {
    norm.validate()?;
    beam.validate()?;
    let records = utts
        .par_iter()
        .map(|u| decode_one(model, u, norm, beam, map))
        .collect::<Result<Vec<_>>>()?;
    DecodeReport::from_records(records)
}

/// PER at each fixed beam width, without widening.
pub fn beam_sweep(
    model: &Arsg,
    utts: &[Utterance],
    norm: NormalizerConfig,
    base: &BeamConfig,
    widths: &[usize],
    map: &SymbolMap,
) -> Result<Vec<(usize, f64)>> {
    if widths.is_empty() {
        return Err(Error::Config("beam sweep needs at least one width".into()));
    }
    widths
        .iter()
        .map(|&w| {
            let beam = BeamConfig {
                initial_width: w,
                max_width: w,
                ..*base
            };
            Ok((w, decode_dataset(model, utts, norm, &beam, map)?.per))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignRecord {
    pub id: String,
    pub frames: usize,
    pub verdict: AlignmentVerdict,
}

/// Forced alignment of processed utterances with segments. Utterances
/// without segments are skipped with a warning.
pub fn align_dataset(
    model: &Arsg,
    utts: &[Utterance],
    norm: NormalizerConfig,
    slack: usize,
    mass: f64,
) -> Result<Vec<(AlignRecord, Tensor)>> {
    norm.validate()?;
    let eos = model.dims.eos;
    let out: Vec<Option<(AlignRecord, Tensor)>> = utts
        .par_iter()
        .map(|u| {
            let Some(segs) = &u.segments else {
                log::warn!("{}: no segments, skipped", u.id);
                return Ok(None);
            };
            let a = model.forced_align(&u.features, &u.targets_with_eos(eos), &norm)?;
            let verdict = alignment_correct(&a, segs, slack, mass)?;
            Ok(Some((
                AlignRecord {
                    id: u.id.clone(),
                    frames: u.frames(),
                    verdict,
                },
                a,
            )))
        })
        .collect::<Result<_>>()?;
    Ok(out.into_iter().flatten().collect())
}

/// Builds level-`n` concatenations of raw test utterances: in `Same` mode
/// each utterance repeated `n` times; in `Mixed` mode each utterance followed
/// by `n − 1` others drawn uniformly with the seed.
pub fn concatenations(
    pipeline: &FeaturePipeline,
    raw: &[Utterance],
    level: usize,
    mode: RepeatMode,
    pause_frames: usize,
    pause_symbol: usize,
    seed: u64,
) -> Result<Vec<Utterance>> {
    if level == 0 {
        return Err(Error::Config("concatenation level must be ≥ 1".into()));
    }
    (0..raw.len())
        .map(|i| {
            let parts: Vec<Utterance> = match mode {
                RepeatMode::Same => vec![raw[i].clone(); level],
                RepeatMode::Mixed => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream((level as u64) << 32 | i as u64);
                    std::iter::once(raw[i].clone())
                        .chain((1..level).map(|_| raw[rng.random_range(0..raw.len())].clone()))
                        .collect()
                }
            };
            pipeline.concat(&parts, pause_frames, pause_symbol)
        })
        .collect()
}

/// One line of the long-utterance report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LongRow {
    pub level: usize,
    pub mode: RepeatMode,
    /// Total input frames at this level.
    pub frames: usize,
    /// Correctly aligned output steps summed over utterances.
    pub aligned: usize,
    pub per: f64,
}

pub const LONG_CSV_HEADER: &str = "level,mode,frames,aligned,per";

impl LongRow {
    pub fn csv(&self) -> String {
        format!("{},{},{},{},{}", self.level, self.mode, self.frames, self.aligned, self.per)
    }
}

#[derive(Clone, Debug)]
pub struct LongEvalConfig {
    pub levels: std::ops::RangeInclusive<usize>,
    pub modes: Vec<RepeatMode>,
    pub pause_frames: usize,
    pub pause_symbol: usize,
    pub slack: usize,
    pub mass: f64,
    pub seed: u64,
}

/// Forced alignment and decoding at each concatenation level and mode.
pub fn eval_long(
    bundle: &ModelBundle,
    raw: &[Utterance],
    norm: NormalizerConfig,
    beam: &BeamConfig,
    map: &SymbolMap,
    cfg: &LongEvalConfig,
) -> Result<Vec<LongRow>> {
    let pipeline = bundle
        .pipeline
        .as_ref()
        .ok_or_else(|| Error::Config("long-utterance evaluation needs a model with a feature pipeline".into()))?;
    let mut rows = Vec::new();
    for &mode in &cfg.modes {
        for level in cfg.levels.clone() {
            let utts = concatenations(pipeline, raw, level, mode, cfg.pause_frames, cfg.pause_symbol, cfg.seed)?;
            let aligned = align_dataset(&bundle.model, &utts, norm, cfg.slack, cfg.mass)?;
            let report = decode_dataset(&bundle.model, &utts, norm, beam, map)?;
            let row = LongRow {
                level,
                mode,
                frames: utts.iter().map(Utterance::frames).sum(),
                aligned: aligned.iter().map(|(r, _)| r.verdict.correct_steps).sum(),
                per: report.per,
            };
            log::info!("{}", row.csv());
            rows.push(row);
        }
    }
    Ok(rows)
}

/// Finite-difference check of the teacher-forced loss of a randomly drawn
/// model on a random input. `corrupt` adds 1 to the first analytic gradient
/// entry of the named parameter, to show that the check catches it.
pub fn check_model_gradients(
    dims: &ModelDims,
    smoothing: bool,
    frames: usize,
    seed: u64,
    step: f64,
    tol: f64,
    corrupt: Option<&str>,
) -> Result<GradCheckReport> {
    dims.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 0.9).expect("positive std");
    let mut params = dims.declare()?;
    for p in params.iter_mut() {
        for v in p.value.data_mut() {
            *v = normal.sample(&mut rng);
        }
    }
    let x = Tensor::new(vec![frames, dims.d_in], (0..frames * dims.d_in).map(|_| normal.sample(&mut rng)).collect())?;
    let mut y: Vec<usize> = (0..3)
        .map(|_| loop {
            let s = rng.random_range(0..dims.vocab);
            if s != dims.eos {
                break s;
            }
        })
        .collect();
    y.push(dims.eos);
    let model = Arsg::from_params(dims.clone(), params.clone())?;
    let norm = NormalizerConfig::new(if smoothing { Normalizer::Smoothing } else { Normalizer::Softmax });
    let f = |tape: &mut Tape, p: &ParamSet| model.nll_on_tape(tape, p, &x, &y, &norm);
    let mut analytic = gradcheck::analytic_gradients(&f, &params)?;
    if let Some(name) = corrupt {
        let g = analytic
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("no parameter named {name}")))?;
        g.data_mut()[0] += 1.0;
    }
    gradcheck::compare_with_numeric(&f, &params, &analytic, step, tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Segment, NormStats};

    fn raw(id: &str, t: usize, sym: usize) -> Utterance {
        Utterance {
            id: id.into(),
            features: Tensor::new(vec![t, 2], (0..2 * t).map(|v| v as f64).collect()).unwrap(),
            targets: vec![sym],
            segments: Some(vec![Segment { symbol: sym, start: 0, end: t - 1 }]),
        }
    }

    fn pipeline() -> FeaturePipeline {
        FeaturePipeline {
            deltas: false,
            stats: NormStats { mean: vec![0.0; 2], std: vec![1.0; 2] },
            pause: Some(vec![9.0, 9.0]),
        }
    }

    #[test]
    fn concatenation_levels() {
        let utts = vec![raw("a", 2, 3), raw("b", 3, 4), raw("c", 1, 5)];
        let p = pipeline();
        let l1 = concatenations(&p, &utts, 1, RepeatMode::Mixed, 2, 2, 1).unwrap();
        for (c, u) in l1.iter().zip(&utts) {
            assert_eq!(c.features.rows(), u.frames() + 1);
            assert_eq!(c.targets, u.targets);
        }
        let same = concatenations(&p, &utts, 3, RepeatMode::Same, 2, 2, 1).unwrap();
        assert_eq!(same[1].targets, vec![4, 2, 4, 2, 4]);
        assert_eq!(same[1].frames(), 3 * 3 + 2 * 2 + 1);
        assert_eq!(same[1].id, "b+b+b");
        let m1 = concatenations(&p, &utts, 4, RepeatMode::Mixed, 0, 2, 9).unwrap();
        let m2 = concatenations(&p, &utts, 4, RepeatMode::Mixed, 0, 2, 9).unwrap();
        assert_eq!(m1, m2);
        for (c, u) in m1.iter().zip(&utts) {
            assert_eq!(c.targets.len(), 4);
            assert_eq!(c.targets[0], u.targets[0]);
        }
    }

    #[test]
    fn model_gradient_check_catches_corruption() {
        let dims = ModelDims {
            d_in: 3,
            enc_hidden: 2,
            enc_layers: 1,
            n_att: 3,
            conv: Some(crate::attention::ConvShape { k: 2, r: 3 }),
            gen_hidden: 3,
            d_emb: 2,
            maxout_units: 2,
            maxout_pool: 2,
            vocab: 4,
            eos: 0,
        };
        let ok = check_model_gradients(&dims, false, 5, 1, 1e-5, 1e-4, None).unwrap();
        assert!(ok.passed(), "{:?}", ok.failures().collect::<Vec<_>>());
        let bad = check_model_gradients(&dims, false, 5, 1, 1e-5, 1e-4, Some("gen.out.b")).unwrap();
        let names: Vec<_> = bad.failures().map(|c| c.name.as_str()).collect();
        assert_eq!(names, vec!["gen.out.b"]);
    }

    #[test]
    fn csv_row_format() {
        let r = LongRow { level: 2, mode: RepeatMode::Mixed, frames: 10, aligned: 7, per: 0.25 };
        assert_eq!(r.csv(), "2,mixed,10,7,0.25");
        assert_eq!(LONG_CSV_HEADER.split(',').count(), 5);
    }
}
