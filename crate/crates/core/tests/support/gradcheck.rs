//! Central finite differences against tape gradients, in f64.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use viact_core::geometry::{bilinear_sample, expand_to_grid, sample_patches};
use viact_core::model::{ModelConfig, TokenSource, ViAct};
use viact_core::nn::Ctx;
use viact_core::tokenizer::{relative_to_apex, sincos_embed, PosEmbedding};
use viact_core::{ParamStore, Tape, Tensor, Var};

pub const STEP: f64 = 1e-6;

/// Numerical gradient of `f` at `x`.
pub fn finite_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `max_i |a_i - n_i| / max(|a_i|, |n_i|, 1e-3·max|n|)`. The floor keeps
/// entries that are numerically zero from dominating.
pub fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e-3 * scale).max(1e-12);
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub seed: u64,
    pub rel_err: f64,
}

pub type Graph = dyn for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Var<'t, f64>;

/// Gradient of `Σ R ⊙ f(inputs)` w.r.t. every input, with `R` a fixed
/// random tensor so no output entry cancels.
pub fn check_inputs(name: &str, seed: u64, inputs: &[Tensor<f64>], f: &Graph) -> Vec<Check> {
    let weights = {
        let tape = Tape::new();
        let vars: Vec<_> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let shape = f(&tape, &vars).shape();
        random(&shape, seed ^ 0xA5A5, -1.0, 1.0)
    };
    let loss = |tape: &Tape<f64>, vars: &[Var<'_, f64>]| -> f64 {
        let out = f(tape, vars);
        out.mul(tape.constant(weights.clone()))
            .unwrap()
            .sum_all()
            .value()
            .item()
    };
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&tape, &vars)
        .mul(tape.constant(weights.clone()))
        .unwrap()
        .sum_all();
    let grads = tape.backward(out);
    (0..inputs.len())
        .map(|i| {
            let analytic = grads
                .wrt(vars[i])
                .map(|g| g.to_f64_vec())
                .unwrap_or_else(|| vec![0.0; inputs[i].numel()]);
            let numeric = finite_difference(
                |x| {
                    let tape = Tape::new();
                    let vars: Vec<_> = inputs
                        .iter()
                        .enumerate()
                        .map(|(j, t)| {
                            if j == i {
                                tape.constant(Tensor::new(t.shape(), x.to_vec()).unwrap())
                            } else {
                                tape.constant(t.clone())
                            }
                        })
                        .collect();
                    loss(&tape, &vars)
                },
                inputs[i].data(),
                STEP,
            );
            Check {
                name: if inputs.len() > 1 {
                    format!("{name}[{i}]")
                } else {
                    name.to_string()
                },
                seed,
                rel_err: rel_error(&analytic, &numeric),
            }
        })
        .collect()
}

pub fn random(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Coordinates in `[lo, hi)` whose fractional part stays clear of the
/// sampler's kinks at integers.
pub fn off_grid(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let base = rng.random_range(lo..hi).floor().min(hi - 1.0);
            base + rng.random_range(0.05..0.95)
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

/// Every differentiable primitive of the tensor core.
pub fn primitive_checks(seed: u64) -> Vec<Check> {
    let r = |shape: &[usize], k: u64| random(shape, seed * 1000 + k, -1.5, 1.5);
    let pos = |shape: &[usize], k: u64| random(shape, seed * 1000 + k, 0.5, 2.0);
    let mut out = Vec::new();
    let mut run = |name: &str, inputs: Vec<Tensor<f64>>, f: &Graph| {
        out.extend(check_inputs(name, seed, &inputs, f));
    };
    run("add", vec![r(&[3, 4], 1), r(&[3, 4], 2)], &|_, v| {
        v[0].add(v[1]).unwrap()
    });
    run(
        "add_broadcast",
        vec![r(&[2, 3, 4], 1), r(&[4], 2)],
        &|_, v| v[0].add(v[1]).unwrap(),
    );
    run(
        "sub_broadcast",
        vec![r(&[2, 3, 4], 1), r(&[3, 4], 2)],
        &|_, v| v[0].sub(v[1]).unwrap(),
    );
    run("mul", vec![r(&[3, 4], 1), r(&[3, 4], 2)], &|_, v| {
        v[0].mul(v[1]).unwrap()
    });
    run(
        "mul_broadcast",
        vec![r(&[2, 3, 4], 1), r(&[4], 2)],
        &|_, v| v[0].mul(v[1]).unwrap(),
    );
    run("scale", vec![r(&[5], 1)], &|_, v| v[0].scale(-0.7));
    run("matmul", vec![r(&[3, 4], 1), r(&[4, 5], 2)], &|_, v| {
        v[0].matmul(v[1]).unwrap()
    });
    run(
        "matmul_shared_rhs",
        vec![r(&[2, 3, 4], 1), r(&[4, 2], 2)],
        &|_, v| v[0].matmul(v[1]).unwrap(),
    );
    run(
        "matmul_shared_lhs",
        vec![r(&[3, 4], 1), r(&[2, 4, 2], 2)],
        &|_, v| v[0].matmul(v[1]).unwrap(),
    );
    run(
        "matmul_batched",
        vec![r(&[2, 2, 3, 4], 1), r(&[2, 2, 4, 3], 2)],
        &|_, v| v[0].matmul(v[1]).unwrap(),
    );
    run(
        "linear",
        vec![r(&[2, 3, 4], 1), r(&[4, 5], 2), r(&[5], 3)],
        &|_, v| v[0].linear(v[1], v[2]).unwrap(),
    );
    run("reshape", vec![r(&[2, 6], 1)], &|_, v| {
        v[0].reshape(&[3, 4]).unwrap()
    });
    run("permute", vec![r(&[2, 3, 4], 1)], &|_, v| {
        v[0].permute(&[2, 0, 1]).unwrap()
    });
    run("permute_inner", vec![r(&[2, 3, 4, 2], 1)], &|_, v| {
        v[0].permute(&[0, 2, 1, 3]).unwrap()
    });
    run("transpose", vec![r(&[2, 3, 4], 1)], &|_, v| {
        v[0].transpose().unwrap()
    });
    run("narrow", vec![r(&[3, 5, 2], 1)], &|_, v| {
        v[0].narrow(1, 1, 3).unwrap()
    });
    run("index_select", vec![r(&[4, 3], 1)], &|_, v| {
        v[0].index_select(0, &[2, 0, 2, 3]).unwrap()
    });
    run("index_select_inner", vec![r(&[2, 4, 3], 1)], &|_, v| {
        v[0].index_select(1, &[3, 1]).unwrap()
    });
    run("expand_leading", vec![r(&[3], 1)], &|_, v| {
        v[0].expand_leading(&[2, 2])
    });
    run("sum_all", vec![r(&[3, 4], 1)], &|_, v| v[0].sum_all());
    run("mean_all", vec![r(&[3, 4], 1)], &|_, v| v[0].mean_all());
    run("sum_axis", vec![r(&[2, 3, 4], 1)], &|_, v| {
        v[0].sum_axis(1).unwrap()
    });
    run("softmax_last", vec![r(&[3, 5], 1)], &|_, v| {
        v[0].softmax(1).unwrap()
    });
    run("softmax_inner", vec![r(&[2, 4, 3], 1)], &|_, v| {
        v[0].softmax(1).unwrap()
    });
    run(
        "layernorm",
        vec![r(&[3, 6], 1), pos(&[6], 2), r(&[6], 3)],
        &|_, v| v[0].layernorm(v[1], v[2], 1e-6).unwrap(),
    );
    run("gelu", vec![r(&[3, 5], 1)], &|_, v| v[0].gelu());
    run("sigmoid", vec![r(&[3, 5], 1)], &|_, v| v[0].sigmoid());
    let targets = random(&[6], seed * 1000 + 9, 0.0, 1.0).map(|t| t.round());
    run("bce_with_logits", vec![r(&[6], 1)], &move |_, v| {
        v[0].bce_with_logits(&targets).unwrap()
    });
    run("mse", vec![r(&[3, 4], 1), r(&[3, 4], 2)], &|_, v| {
        v[0].mse(v[1]).unwrap()
    });
    run(
        "concat",
        vec![r(&[2, 1, 3], 1), r(&[2, 2, 3], 2)],
        &|t, v| t.concat(&[v[0], v[1]], 1).unwrap(),
    );
    run("dropout", vec![r(&[4, 5], 1)], &move |_, v| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        v[0].dropout(0.3, &mut rng)
    });
    run(
        "sincos_embed",
        vec![random(&[3, 2], seed * 1000 + 1, 0.0, 60.0)],
        &|_, v| sincos_embed(v[0], 8).unwrap(),
    );
    run("relative_to_apex", vec![r(&[2, 4, 2], 1)], &|_, v| {
        relative_to_apex(v[0], 1).unwrap()
    });
    out
}

/// Bilinear sampler and patch extraction w.r.t. image and coordinates.
pub fn sampler_checks(seed: u64) -> Vec<Check> {
    let (f, h, w) = (2, 7, 9);
    let frames = random(&[f, h, w], seed * 7 + 1, 0.0, 1.0);
    let coords = {
        let x = off_grid(&[f, 5, 1], seed * 7 + 2, 0.0, (w - 1) as f64);
        let y = off_grid(&[f, 5, 1], seed * 7 + 3, 0.0, (h - 1) as f64);
        let data = x
            .data()
            .iter()
            .zip(y.data())
            .flat_map(|(&a, &b)| [a, b])
            .collect();
        Tensor::new(&[f, 5, 2], data).unwrap()
    };
    let centers = {
        let x = off_grid(&[f, 3, 1], seed * 7 + 4, 1.0, (w - 2) as f64);
        let y = off_grid(&[f, 3, 1], seed * 7 + 5, 1.0, (h - 2) as f64);
        let data = x
            .data()
            .iter()
            .zip(y.data())
            .flat_map(|(&a, &b)| [a, b])
            .collect();
        Tensor::new(&[f, 3, 2], data).unwrap()
    };
    let mut out = check_inputs(
        "bilinear_sample",
        seed,
        &[frames.clone(), coords],
        &|_, v| bilinear_sample(v[0], v[1]).unwrap(),
    );
    out.extend(check_inputs(
        "expand_to_grid",
        seed,
        std::slice::from_ref(&centers),
        &|_, v| expand_to_grid(v[0], 2).unwrap(),
    ));
    out.extend(check_inputs(
        "sample_patches",
        seed,
        &[frames, centers],
        &|_, v| sample_patches(v[0], v[1], 2).unwrap(),
    ));
    out
}

pub fn tiny_config(pos: PosEmbedding) -> ModelConfig {
    ModelConfig {
        embed_dim: 8,
        heads: 2,
        encoder_blocks: 1,
        temporal_blocks: 1,
        mlp_hidden: 16,
        patch_size: 2,
        frames: 2,
        dropout: 0.0,
        pos_embedding: pos,
        apex_index: 1,
    }
}

/// Two 8×8 clips of two frames with four points each.
pub fn tiny_clips(seed: u64) -> (Tensor<f64>, Tensor<f64>, Tensor<f64>) {
    let frames = random(&[2, 2, 8, 8], seed * 11 + 1, 0.0, 1.0);
    let points = off_grid(&[2, 2, 4, 2], seed * 11 + 2, 1.0, 6.0);
    let labels = Tensor::new(&[2], vec![0.0, 1.0]).unwrap();
    (frames, points, labels)
}

fn tiny_loss(
    model: &ViAct,
    store: &ParamStore<f64>,
    frames: &Tensor<f64>,
    points: &Tensor<f64>,
    labels: &Tensor<f64>,
) -> f64 {
    let tape = Tape::new();
    let cx = Ctx::eval(&tape, store);
    let out = model
        .forward(
            &cx,
            TokenSource::Anatomical,
            tape.constant(frames.clone()),
            Some(tape.constant(points.clone())),
            false,
        )
        .unwrap();
    out.logits.bce_with_logits(labels).unwrap().value().item()
}

/// End-to-end classifier: every parameter, the frames and the points.
pub fn tiny_model_check(seed: u64, pos: PosEmbedding) -> Check {
    let (model, store) = ViAct::new::<f64>(tiny_config(pos), seed).unwrap();
    // widen the init so the check is not dominated by near-zero weights
    let mut store = store;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    for id in ids {
        for v in store.value_mut(id) {
            *v += rng.random_range(-0.3..0.3);
        }
    }
    let (frames, points, labels) = tiny_clips(seed);

    let tape = Tape::new();
    let cx = Ctx::eval(&tape, &store);
    let fv = tape.leaf(frames.clone());
    let pv = tape.leaf(points.clone());
    let out = model
        .forward(&cx, TokenSource::Anatomical, fv, Some(pv), false)
        .unwrap();
    let loss = out.logits.bce_with_logits(&labels).unwrap();
    let grads = tape.backward(loss);

    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for (id, e) in store.iter() {
        let a = grads
            .param(id)
            .map(|g| g.to_f64_vec())
            .unwrap_or_else(|| vec![0.0; e.value.numel()]);
        let n = finite_difference(
            |x| {
                let mut s = store.clone();
                s.set(id, Tensor::new(e.value.shape(), x.to_vec()).unwrap())
                    .unwrap();
                tiny_loss(&model, &s, &frames, &points, &labels)
            },
            e.value.data(),
            STEP,
        );
        analytic.extend(a);
        numeric.extend(n);
    }
    analytic.extend(grads.wrt(fv).unwrap().to_f64_vec());
    numeric.extend(finite_difference(
        |x| {
            tiny_loss(
                &model,
                &store,
                &Tensor::new(frames.shape(), x.to_vec()).unwrap(),
                &points,
                &labels,
            )
        },
        frames.data(),
        STEP,
    ));
    analytic.extend(grads.wrt(pv).unwrap().to_f64_vec());
    numeric.extend(finite_difference(
        |x| {
            tiny_loss(
                &model,
                &store,
                &frames,
                &Tensor::new(points.shape(), x.to_vec()).unwrap(),
                &labels,
            )
        },
        points.data(),
        STEP,
    ));
    Check {
        name: format!("tiny_model_{pos}"),
        seed,
        rel_err: rel_error(&analytic, &numeric),
    }
}
