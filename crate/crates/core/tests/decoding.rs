use arsg::attention::{ConvShape, Normalizer, NormalizerConfig};
use arsg::decoding::{decode_features, BeamConfig};
use arsg::model::{Arsg, ModelDims};
use arsg::training::init_params;
use arsg::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn dims(conv: bool) -> ModelDims {
    ModelDims {
        d_in: 3,
        enc_hidden: 4,
        enc_layers: 1,
        n_att: 5,
        conv: conv.then_some(ConvShape { k: 2, r: 3 }),
        gen_hidden: 5,
        d_emb: 3,
        maxout_units: 4,
        maxout_pool: 2,
        vocab: 5,
        eos: 0,
    }
}

fn random_model(conv: bool, seed: u64) -> Arsg {
    let d = dims(conv);
    let params = init_params(&d, 0.8, seed).unwrap();
    Arsg::from_params(d, params).unwrap()
}

fn features(frames: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = Normal::new(0.0, 1.0).unwrap();
    Tensor::new(vec![frames, 3], (0..frames * 3).map(|_| n.sample(&mut rng)).collect()).unwrap()
}

#[test]
fn beam_log_prob_is_the_teacher_forced_score() {
    let beam = BeamConfig {
        max_len: Some(12),
        ..BeamConfig::fixed(4)
    };
    let mut checked = 0;
    for seed in 0..6 {
        for conv in [false, true] {
            for norm in [
                NormalizerConfig::new(Normalizer::Softmax),
                NormalizerConfig::new(Normalizer::Smoothing),
                NormalizerConfig::new(Normalizer::Softmax).with_window(Some(2)),
                NormalizerConfig::new(Normalizer::TopK(3)),
            ] {
                let model = random_model(conv, seed);
                let x = features(9, seed + 100);
                let Ok(d) = decode_features(&model, &x, norm, &beam) else { continue };
                let mut y = d.symbols.clone();
                y.push(0);
                let nll = model.nll(&x, &y, &norm).unwrap();
                assert!((d.log_prob + nll).abs() < 1e-9, "{} vs {}", d.log_prob, -nll);
                checked += 1;
            }
        }
    }
    assert!(checked >= 24, "only {checked} decodes finished");
}

#[test]
fn windowed_decoding_scores_at_most_the_window() {
    let model = random_model(true, 3);
    let beam = BeamConfig {
        max_len: Some(10),
        ..BeamConfig::fixed(2)
    };
    let mut checked = 0;
    for frames in [10, 40, 80] {
        let x = features(frames, 7);
        let full = decode_features(&model, &x, NormalizerConfig::new(Normalizer::Softmax), &beam);
        let win = decode_features(&model, &x, NormalizerConfig::new(Normalizer::Softmax).with_window(Some(3)), &beam);
        if let (Ok(f), Ok(w)) = (full, win) {
            assert_eq!(f.stats.max_evaluations_per_expansion, frames);
            assert_eq!(f.stats.score_evaluations, frames * f.stats.expansions);
            assert!(w.stats.max_evaluations_per_expansion <= 7);
            checked += 1;
        }
    }
    assert!(checked >= 2);
}
