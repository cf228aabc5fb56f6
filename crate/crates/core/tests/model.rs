use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use viact_core::data::{synth_generate, SynthConfig};
use viact_core::geometry::{spread_contour, PointSet, SpreadConfig};
use viact_core::mae::{copy_encoder, mae_loss, make_mask, Mae, MaeConfig};
use viact_core::model::{
    class_token_attention, min_max_normalize, ModelConfig, TokenSource, ViAct,
};
use viact_core::nn::Ctx;
use viact_core::tensor::checkpoint::{self, GraphKind};
use viact_core::tokenizer::{grid_points, PosEmbedding};
use viact_core::{Error, Tape, Tensor};

fn random_points(n: usize, frames: usize, extent: f32, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..frames * n * 2)
        .map(|_| rng.random_range(0.0..extent - 1.0))
        .collect();
    Tensor::new(&[frames, n, 2], data).unwrap()
}

fn random_frames(shape: &[usize], seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random()).collect()).unwrap()
}

#[test]
fn full_size_parameter_count() {
    let cfg = ModelConfig::tiny();
    assert_eq!(cfg.num_params(), 5_837_953);
    let (_, store) = ViAct::new::<f32>(cfg, 0).unwrap();
    assert_eq!(store.num_scalars(), 5_837_953);
}

#[test]
fn contour_spreads_to_84_points() {
    let contour = PointSet::new(
        (0..21)
            .map(|i| {
                let phi = -1.4 + 0.14 * i as f32;
                [112.0 + 40.0 * phi.sin(), 170.0 - 110.0 * phi.cos()]
            })
            .collect(),
    )
    .unwrap();
    let spread = spread_contour(&contour, &SpreadConfig::default(), (224, 224)).unwrap();
    assert_eq!(spread.len(), 84);
    assert_eq!(grid_points(224, 224, 16).unwrap().len(), 196);
}

#[test]
fn full_size_sequence_lengths() {
    let cfg = ModelConfig::tiny();
    let (model, store) = ViAct::new::<f32>(cfg, 1).unwrap();
    let tape = Tape::inference();
    let cx = Ctx::eval(&tape, &store);
    let frames = tape.constant(random_frames(&[1, 18, 224, 224], 2));
    let points = random_points(84, 18, 224.0, 3)
        .reshape(&[1, 18, 84, 2])
        .unwrap();
    let out = model
        .forward(
            &cx,
            TokenSource::Anatomical,
            frames,
            Some(tape.constant(points)),
            true,
        )
        .unwrap();
    assert_eq!(out.frame_sequence_len, 85);
    assert_eq!(out.temporal_sequence_len, 19);
    assert_eq!(out.frame_attention.unwrap().shape(), &[18, 3, 85, 85]);

    let tape = Tape::inference();
    let cx = Ctx::eval(&tape, &store);
    let one = tape.constant(random_frames(&[1, 18, 224, 224], 4));
    let grid = model
        .forward(&cx, TokenSource::Grid, one, None, false)
        .unwrap();
    assert_eq!(grid.frame_sequence_len, 197);
}

#[test]
fn mae_encoder_sees_21_of_84_tokens() {
    let (mae, store) = Mae::new::<f32>(ModelConfig::tiny(), MaeConfig::default(), 0).unwrap();
    let tape = Tape::inference();
    let cx = Ctx::eval(&tape, &store);
    let plans = vec![make_mask(84, 0.75, 9).unwrap()];
    let out = mae
        .forward(
            &cx,
            TokenSource::Anatomical,
            tape.constant(random_frames(&[1, 224, 224], 1)),
            Some(tape.constant(random_points(84, 1, 224.0, 2))),
            &plans,
        )
        .unwrap();
    assert_eq!(out.encoder_tokens, 21);
    assert_eq!(out.decoder_tokens, 84);
    assert_eq!(out.recon.shape(), vec![1, 63, 256]);
}

#[test]
fn loss_ignores_visible_reconstructions() {
    let cfg = ModelConfig::desk();
    let (mae, store) = Mae::new::<f64>(cfg, MaeConfig::desk(), 3).unwrap();
    let tape = Tape::new();
    let cx = Ctx::eval(&tape, &store);
    let plans: Vec<_> = (0..2)
        .map(|i| make_mask(84, 0.75, 40 + i).unwrap())
        .collect();
    let frames = random_frames(&[2, 64, 64], 5).cast::<f64>();
    let points = random_points(84, 2, 64.0, 6).cast::<f64>();
    let out = mae
        .forward(
            &cx,
            TokenSource::Anatomical,
            tape.constant(frames),
            Some(tape.constant(points)),
            &plans,
        )
        .unwrap();
    tape.retain_grad(out.prediction);
    let loss = mae_loss(out.recon, out.targets).unwrap();
    let grads = tape.backward(loss);
    let g = grads.wrt(out.prediction).unwrap();
    let jj = 64;
    for (f, plan) in plans.iter().enumerate() {
        for &i in &plan.visible {
            let row = &g.data()[(f * 84 + i) * jj..(f * 84 + i + 1) * jj];
            assert!(row.iter().all(|&v| v == 0.0), "frame {f} token {i}");
        }
        let masked_nonzero = plan
            .masked
            .iter()
            .filter(|&&i| {
                g.data()[(f * 84 + i) * jj..(f * 84 + i + 1) * jj]
                    .iter()
                    .any(|&v| v != 0.0)
            })
            .count();
        assert_eq!(masked_nonzero, plan.masked.len());
    }
}

fn frame_cls(
    model: &ViAct,
    store: &viact_core::ParamStore<f32>,
    tokens: Tensor<f32>,
) -> Tensor<f32> {
    let tape = Tape::inference();
    let cx = Ctx::eval(&tape, store);
    model
        .encode_frames(&cx, tape.constant(tokens), false)
        .unwrap()
        .cls
        .value()
}

#[test]
fn frame_encoding_is_permutation_invariant() {
    for variant in PosEmbedding::ALL {
        let cfg = ModelConfig {
            pos_embedding: variant,
            ..ModelConfig::tiny()
        };
        let (model, store) = ViAct::new::<f32>(cfg, 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for trial in 0..20 {
            let (tokens, theta) = {
                let tape = Tape::inference();
                let cx = Ctx::eval(&tape, &store);
                let frames = tape.constant(random_frames(&[1, 224, 224], trial));
                let pts = tape.constant(random_points(84, 1, 224.0, 100 + trial));
                let batch = model
                    .frame_encoder
                    .tokens(&cx, TokenSource::Anatomical, frames, Some(pts))
                    .unwrap();
                let v = batch.tokens.value();
                let theta = model
                    .encode_frames(&cx, batch.tokens, false)
                    .unwrap()
                    .cls
                    .value();
                (v, theta)
            };
            let mut perm: Vec<usize> = (0..84).collect();
            perm.shuffle(&mut rng);
            let k = tokens.shape()[2];
            let mut shuffled = Vec::with_capacity(84 * k);
            for &i in &perm {
                shuffled.extend_from_slice(&tokens.data()[i * k..(i + 1) * k]);
            }
            let again = frame_cls(&model, &store, Tensor::new(&[1, 84, k], shuffled).unwrap());
            let d = theta.max_abs_diff(&again);
            assert!(d < 1e-5, "{variant} trial {trial}: {d}");
        }
    }
}

#[test]
fn point_order_does_not_matter_for_absolute_embeddings() {
    let (model, store) = ViAct::new::<f32>(ModelConfig::desk(), 2).unwrap();
    let frames = random_frames(&[1, 8, 64, 64], 1);
    let points = random_points(84, 8, 64.0, 2);
    let mut perm: Vec<usize> = (0..84).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(3));
    let mut shuffled = Vec::new();
    for t in 0..8 {
        for &i in &perm {
            let o = (t * 84 + i) * 2;
            shuffled.extend_from_slice(&points.data()[o..o + 2]);
        }
    }
    let logit = |pts: Tensor<f32>| {
        let tape = Tape::inference();
        let cx = Ctx::eval(&tape, &store);
        let out = model
            .forward(
                &cx,
                TokenSource::Anatomical,
                tape.constant(frames.clone()),
                Some(tape.constant(pts.reshape(&[1, 8, 84, 2]).unwrap())),
                false,
            )
            .unwrap();
        out.logits.value().item()
    };
    let a = logit(points.clone());
    let b = logit(Tensor::new(&[8, 84, 2], shuffled).unwrap());
    assert!((a - b).abs() < 1e-5);
}

#[test]
fn attention_scores_at_init_are_near_uniform() {
    let (model, store) = ViAct::new::<f32>(ModelConfig::tiny(), 0).unwrap();
    let tape = Tape::inference();
    let cx = Ctx::eval(&tape, &store);
    let clips = synth_generate(1, 1, 0, &SynthConfig::default()).unwrap();
    let c = &clips[0];
    let out = model
        .forward(
            &cx,
            TokenSource::Anatomical,
            tape.constant(
                c.frames_tensor::<f32>()
                    .reshape(&[1, 18, 224, 224])
                    .unwrap(),
            ),
            Some(tape.constant(c.points_tensor::<f32>().reshape(&[1, 18, 84, 2]).unwrap())),
            true,
        )
        .unwrap();
    let scores = class_token_attention(&out.frame_attention.unwrap(), 0).unwrap();
    assert_eq!(scores.len(), 18);
    for row in &scores {
        assert_eq!(row.len(), 84);
        let (lo, hi) = row
            .iter()
            .fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        assert!(hi - lo < 0.1);
        let n = min_max_normalize(row);
        assert!(n.iter().all(|v| (0.0..=1.0).contains(v)));
    }
    assert_eq!(min_max_normalize(&[0.3]), vec![1.0]);
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let (_, store) = ViAct::new::<f32>(ModelConfig::desk(), 4).unwrap();
    checkpoint::save(&path, &store, GraphKind::Classifier).unwrap();
    let ck = checkpoint::load(&path).unwrap();
    assert_eq!(ck.kind, GraphKind::Classifier);
    let (_, mut fresh) = ViAct::new::<f32>(ModelConfig::desk(), 5).unwrap();
    assert_eq!(ck.load_into(&mut fresh, true).unwrap(), store.len());
    for ((_, a), (_, b)) in store.iter().zip(fresh.iter()) {
        assert_eq!(a.name, b.name);
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.value), bits(&b.value));
    }

    let (_, mut wider) = ViAct::new::<f32>(
        ModelConfig {
            embed_dim: 96,
            ..ModelConfig::desk()
        },
        0,
    )
    .unwrap();
    assert!(ck.load_into(&mut wider, true).is_err());

    let mut bytes = std::fs::read(&path).unwrap();
    bytes[0] = b'X';
    assert!(matches!(
        checkpoint::read_checkpoint(&mut bytes.as_slice()),
        Err(Error::Format { .. })
    ));
}

#[test]
fn pretrained_encoder_transfers_by_name() {
    let (_, pre) = Mae::new::<f32>(ModelConfig::desk(), MaeConfig::desk(), 1).unwrap();
    let (_, mut cls) = ViAct::new::<f32>(ModelConfig::desk(), 2).unwrap();
    let copied = copy_encoder(&pre, &mut cls).unwrap();
    let encoder_names: Vec<_> = cls
        .iter()
        .filter(|(_, e)| e.name.starts_with("encoder."))
        .collect();
    assert_eq!(copied, encoder_names.len());
    for (_, e) in encoder_names {
        assert_eq!(&e.value, pre.by_name(&e.name).unwrap(), "{}", e.name);
    }
    assert!(cls.by_name("decoder.head.weight").is_none());

    let (_, mut other) = ViAct::new::<f32>(
        ModelConfig {
            mlp_hidden: 64,
            ..ModelConfig::desk()
        },
        2,
    )
    .unwrap();
    assert!(matches!(
        copy_encoder(&pre, &mut other),
        Err(Error::Config(_))
    ));
}
