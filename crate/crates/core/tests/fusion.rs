use avfuse_core::fusion::{
    build_audio_tokens, fuse_audio_ensemble, train_step, AdvancedConfig, AdvancedFusionModel, AudioEnsembleFusion,
    BasicConfig, BasicFusionModel, EnsembleEmbedding, FusionExample, TokenLayout, TokenNorm, Trainable,
};
use avfuse_core::tensor::{finite_diff_check_extended, Graph, NodeId, Objective, ParamSet, Real, Tensor};
use avfuse_core::timebase::AlignedWindow;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type M = Vec<Vec<f64>>;

fn rand_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize, s: f64) -> Tensor {
    Tensor::from_fn(r, c, |_, _| rng.random_range(-s..s))
}

fn to_m(t: &Tensor) -> M {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

// ---- scalar reference building blocks ----

fn param<'a>(ps: &'a ParamSet, name: &str) -> &'a Tensor {
    ps.by_name(name).unwrap_or_else(|| panic!("missing parameter {name}"))
}

fn linear(x: &M, ps: &ParamSet, name: &str, bias: bool) -> M {
    let w = param(ps, &format!("{name}.weight"));
    let b = bias.then(|| param(ps, &format!("{name}.bias")));
    x.iter()
        .map(|row| {
            (0..w.cols())
                .map(|j| {
                    let mut s = b.map_or(0.0, |b| b.data()[j]);
                    for (k, &xv) in row.iter().enumerate() {
                        s += xv * w.at(k, j);
                    }
                    s
                })
                .collect()
        })
        .collect()
}

fn add(a: &M, b: &M) -> M {
    a.iter().zip(b).map(|(r, s)| r.iter().zip(s).map(|(x, y)| x + y).collect()).collect()
}

fn layer_norm(x: &M, ps: &ParamSet, name: &str) -> M {
    let g = param(ps, &format!("{name}.gamma")).data();
    let b = param(ps, &format!("{name}.beta")).data();
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let r = 1.0 / (var + 1e-5).sqrt();
            row.iter().enumerate().map(|(j, v)| (v - mean) * r * g[j] + b[j]).collect()
        })
        .collect()
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

fn ffn(x: &M, ps: &ParamSet, name: &str) -> M {
    let h: M = linear(x, ps, &format!("{name}.fc1"), true)
        .into_iter()
        .map(|r| r.into_iter().map(gelu).collect())
        .collect();
    linear(&h, ps, &format!("{name}.fc2"), true)
}

/// Multi-head attention by explicit loops; returns output and per-head weights.
fn mha(xq: &M, xkv: &M, ps: &ParamSet, name: &str, heads: usize) -> (M, Vec<M>) {
    let q = linear(xq, ps, &format!("{name}.q"), true);
    let k = linear(xkv, ps, &format!("{name}.k"), false);
    let v = linear(xkv, ps, &format!("{name}.v"), true);
    let d = q[0].len();
    let dh = d / heads;
    let mut joined = vec![vec![0.0; d]; q.len()];
    let mut all_w = Vec::new();
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        let mut w = vec![vec![0.0; k.len()]; q.len()];
        for i in 0..q.len() {
            let scores: Vec<f64> = (0..k.len())
                .map(|j| cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = scores.iter().map(|s| (s - max).exp()).sum();
            for j in 0..k.len() {
                w[i][j] = (scores[j] - max).exp() / z;
            }
            for c in cols.clone() {
                joined[i][c] = (0..k.len()).map(|j| w[i][j] * v[j][c]).sum();
            }
        }
        all_w.push(w);
    }
    (linear(&joined, ps, &format!("{name}.o"), true), all_w)
}

fn mean_rows(x: &M) -> Vec<f64> {
    let n = x.len() as f64;
    (0..x[0].len()).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n).collect()
}

fn basic_oracle(model: &BasicFusionModel, visual: &Tensor, audio: &Tensor) -> Vec<f64> {
    let ps = model.param_set();
    let c = model.config();
    let mut x = add(&linear(&to_m(visual), ps, "visual_proj", true), &linear(&to_m(audio), ps, "audio_proj", true));
    for l in 0..c.layers {
        let (a, _) = mha(&x, &x, ps, &format!("layer{l}.attn"), c.heads);
        x = layer_norm(&add(&x, &a), ps, &format!("layer{l}.norm1"));
        let f = ffn(&x, ps, &format!("layer{l}.ffn"));
        x = layer_norm(&add(&x, &f), ps, &format!("layer{l}.norm2"));
    }
    linear(&vec![mean_rows(&x)], ps, "head", true).remove(0)
}

fn fuse_oracle(ps: &ParamSet, emb: &EnsembleEmbedding) -> Vec<f64> {
    let w = param(ps, "ensemble.weight");
    let b = param(ps, "ensemble.bias").data();
    let x: Vec<f64> = emb.parts().concat();
    (0..w.rows()).map(|i| b[i] + (0..x.len()).map(|k| w.at(i, k) * x[k]).sum::<f64>()).collect()
}

struct AdvancedRef {
    motion: Vec<f64>,
    event: Vec<f64>,
    weights: Vec<M>,
}

fn advanced_oracle(model: &AdvancedFusionModel, visual: &Tensor, audio: &Tensor, fused: &[f64]) -> AdvancedRef {
    let ps = model.param_set();
    let c = model.config();
    let t = visual.rows();
    let pos = |name: &str| -> M { to_m(param(ps, name))[..t].to_vec() };
    let mut v = add(&linear(&to_m(visual), ps, "visual_proj", true), &pos("visual_pos"));
    let mut a = add(&linear(&to_m(audio), ps, "audio_proj", true), &pos("audio_pos"));
    a = add(&a, &vec![fused.to_vec(); t]);
    let mut weights = Vec::new();
    for l in 0..c.layers {
        let (va, wv) = mha(&v, &a, ps, &format!("layer{l}.visual_attn"), c.heads);
        let (av, wa) = mha(&a, &v, ps, &format!("layer{l}.audio_attn"), c.heads);
        weights.extend(wv);
        weights.extend(wa);
        v = layer_norm(&add(&v, &va), ps, &format!("layer{l}.visual_norm1"));
        a = layer_norm(&add(&a, &av), ps, &format!("layer{l}.audio_norm1"));
        v = layer_norm(&add(&v, &ffn(&v, ps, &format!("layer{l}.visual_ffn"))), ps, &format!("layer{l}.visual_norm2"));
        a = layer_norm(&add(&a, &ffn(&a, ps, &format!("layer{l}.audio_ffn"))), ps, &format!("layer{l}.audio_norm2"));
    }
    let pooled = [mean_rows(&v), mean_rows(&a)].concat();
    AdvancedRef {
        motion: linear(&vec![pooled.clone()], ps, "motion_head", true).remove(0),
        event: linear(&vec![pooled], ps, "event_head", true).remove(0),
        weights,
    }
}

fn small_advanced(seed: u64) -> AdvancedConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let heads = rng.random_range(1..3);
    AdvancedConfig {
        visual_dim: 4,
        audio_dim: 5,
        hidden: heads * rng.random_range(2..4),
        layers: rng.random_range(1..3),
        heads,
        ffn: rng.random_range(3..7),
        max_len: 4,
        motion_classes: 2,
        event_classes: 32,
        ensemble_dim: rng.random_range(2..5),
    }
}

fn small_basic(seed: u64) -> BasicConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let heads = rng.random_range(1..3);
    BasicConfig {
        visual_dim: 3,
        audio_dim: 4,
        hidden: heads * rng.random_range(2..4),
        layers: rng.random_range(1..3),
        heads,
        ffn: rng.random_range(3..7),
        classes: 2,
    }
}

fn random_embedding(rng: &mut ChaCha8Rng, n: usize) -> EnsembleEmbedding {
    let mut v = || (0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
    EnsembleEmbedding { general: v(), speech: v(), scene: v() }
}

// ---- ensemble fusion ----

#[test]
fn ensemble_zero_inputs_zero_bias_give_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let f = AudioEnsembleFusion::from_parts(rand_tensor(&mut rng, 256, 2304, 0.1), Tensor::zeros(&[256])).unwrap();
    let out = fuse_audio_ensemble(&f, &[0.0; 768], &[0.0; 768], &[0.0; 768]).unwrap();
    assert_eq!(out, vec![0.0; 256]);
}

#[test]
fn ensemble_selection_matrix_picks_first_coordinates() {
    let w = Tensor::from_fn(256, 2304, |i, j| if i == j { 1.0 } else { 0.0 });
    let f = AudioEnsembleFusion::from_parts(w, Tensor::zeros(&[256])).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let e = random_embedding(&mut rng, 768);
    let out = f.fuse(&e.general, &e.speech, &e.scene).unwrap();
    assert_eq!(out, e.general[..256].to_vec());
}

#[test]
fn ensemble_matches_dot_product_oracle() {
    let f = AudioEnsembleFusion::new(42);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let e = random_embedding(&mut rng, 768);
    let out = f.fuse(&e.general, &e.speech, &e.scene).unwrap();
    let want = fuse_oracle(f.params(), &e);
    assert_eq!(out.len(), 256);
    for (a, b) in out.iter().zip(&want) {
        assert!((a - b).abs() < 1e-10);
    }
}

// ---- basic model ----

#[test]
fn basic_matches_scalar_reference() {
    for seed in 0..5 {
        let model = BasicFusionModel::new(BasicConfig::default(), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let t = rng.random_range(1..11);
        let v = rand_tensor(&mut rng, t, 3, 2.0);
        let a = rand_tensor(&mut rng, t, 4, 2.0);
        let out = model.forward(&v, &a).unwrap();
        let want = basic_oracle(&model, &v, &a);
        assert_eq!(out.logits.len(), 2);
        for (x, y) in out.logits.iter().zip(&want) {
            assert!((x - y).abs() < 1e-8, "{x} vs {y}");
        }
        for layer in &out.attention {
            assert_eq!(layer.len(), 4);
            for w in layer {
                for i in 0..t {
                    assert!((w.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
                }
            }
        }
    }
}

#[test]
fn basic_single_token_pooling_is_identity() {
    let model = BasicFusionModel::new(BasicConfig::default(), 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let v = rand_tensor(&mut rng, 1, 3, 1.0);
    let a = rand_tensor(&mut rng, 1, 4, 1.0);
    let out = model.forward(&v, &a).unwrap();
    // with one token every attention row is [1]
    for layer in &out.attention {
        for w in layer {
            assert_eq!(w.data(), &[1.0]);
        }
    }
    let want = basic_oracle(&model, &v, &a);
    for (x, y) in out.logits.iter().zip(&want) {
        assert!((x - y).abs() < 1e-8);
    }
}

#[test]
fn basic_is_permutation_invariant() {
    let model = BasicFusionModel::new(BasicConfig::default(), 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let v = rand_tensor(&mut rng, 6, 3, 1.0);
    let a = rand_tensor(&mut rng, 6, 4, 1.0);
    let perm = [3, 0, 5, 1, 4, 2];
    let pv = Tensor::from_fn(6, 3, |i, j| v.at(perm[i], j));
    let pa = Tensor::from_fn(6, 4, |i, j| a.at(perm[i], j));
    let x = model.forward(&v, &a).unwrap().logits;
    let y = model.forward(&pv, &pa).unwrap().logits;
    for (p, q) in x.iter().zip(&y) {
        assert!((p - q).abs() < 1e-12);
    }
}

#[test]
fn basic_rejects_bad_token_counts() {
    let model = BasicFusionModel::new(BasicConfig::default(), 1).unwrap();
    assert!(model.forward(&Tensor::zeros(&[2, 3]), &Tensor::zeros(&[3, 4])).is_err());
    assert!(model.forward(&Tensor::zeros(&[0, 3]), &Tensor::zeros(&[0, 4])).is_err());
}

// ---- advanced model ----

#[test]
fn advanced_matches_scalar_reference() {
    for seed in 0..3 {
        let model = AdvancedFusionModel::new(AdvancedConfig::default(), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let t = rng.random_range(1..11);
        let v = rand_tensor(&mut rng, t, 4, 2.0);
        let a = rand_tensor(&mut rng, t, 5, 2.0);
        let e = random_embedding(&mut rng, 768);
        let fused = model.fuse_audio(&e).unwrap();
        let want_fused = fuse_oracle(model.param_set(), &e);
        for (x, y) in fused.iter().zip(&want_fused) {
            assert!((x - y).abs() < 1e-10);
        }
        let out = model.forward(&v, &a, &fused).unwrap();
        let want = advanced_oracle(&model, &v, &a, &fused);
        assert_eq!(out.motion_logits.len(), 2);
        assert_eq!(out.event_logits.len(), 32);
        for (x, y) in out.motion_logits.iter().zip(&want.motion).chain(out.event_logits.iter().zip(&want.event)) {
            assert!((x - y).abs() < 1e-8, "{x} vs {y}");
        }
        let got_w: Vec<&Tensor> = out
            .visual_attention
            .iter()
            .zip(&out.audio_attention)
            .flat_map(|(v, a)| v.iter().chain(a))
            .collect();
        assert_eq!(got_w.len(), want.weights.len());
        for (w, rw) in got_w.iter().zip(&want.weights) {
            for (i, want_row) in rw.iter().enumerate().take(t) {
                assert!((w.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
                for (j, want) in want_row.iter().enumerate().take(t) {
                    assert!((w.at(i, j) - want).abs() < 1e-10);
                }
            }
        }
        let joint = model.forward_with_embedding(&v, &a, &e).unwrap();
        for (x, y) in joint.event_logits.iter().zip(&out.event_logits) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn advanced_zero_parameters_return_head_biases() {
    let config = AdvancedConfig { hidden: 16, heads: 4, ffn: 32, ensemble_dim: 8, ..Default::default() };
    let mut model = AdvancedFusionModel::new(config, 3).unwrap();
    let names: Vec<String> = model.param_set().names().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for (name, t) in names.iter().zip(model.param_set_mut().tensors_mut()) {
        let keep = name == "motion_head.bias" || name == "event_head.bias";
        for x in t.data_mut() {
            *x = if keep { rng.random_range(-1.0..1.0) } else { 0.0 };
        }
    }
    let out = model
        .forward(&Tensor::zeros(&[3, 4]), &Tensor::zeros(&[3, 5]), &[0.0; 16])
        .unwrap();
    assert_eq!(out.motion_logits, model.param_set().by_name("motion_head.bias").unwrap().data());
    assert_eq!(out.event_logits, model.param_set().by_name("event_head.bias").unwrap().data());
}

/// With one token every attention weight is exactly 1, so each attention
/// block is `o(v(context))` and the layer is a residual MLP stack.
#[test]
fn advanced_single_token_closed_form() {
    let config = AdvancedConfig { hidden: 8, heads: 2, ffn: 12, layers: 2, ensemble_dim: 4, ..Default::default() };
    let model = AdvancedFusionModel::new(config, 11).unwrap();
    let ps = model.param_set();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let v0 = rand_tensor(&mut rng, 1, 4, 1.0);
    let a0 = rand_tensor(&mut rng, 1, 5, 1.0);
    let fused: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();

    let pos = |name: &str| vec![param(ps, name).row(0).to_vec()];
    let mut v = add(&linear(&to_m(&v0), ps, "visual_proj", true), &pos("visual_pos"));
    let mut a = add(&add(&linear(&to_m(&a0), ps, "audio_proj", true), &pos("audio_pos")), &vec![fused.clone()]);
    for l in 0..2 {
        let va = linear(&linear(&a, ps, &format!("layer{l}.visual_attn.v"), true), ps, &format!("layer{l}.visual_attn.o"), true);
        let av = linear(&linear(&v, ps, &format!("layer{l}.audio_attn.v"), true), ps, &format!("layer{l}.audio_attn.o"), true);
        v = layer_norm(&add(&v, &va), ps, &format!("layer{l}.visual_norm1"));
        a = layer_norm(&add(&a, &av), ps, &format!("layer{l}.audio_norm1"));
        v = layer_norm(&add(&v, &ffn(&v, ps, &format!("layer{l}.visual_ffn"))), ps, &format!("layer{l}.visual_norm2"));
        a = layer_norm(&add(&a, &ffn(&a, ps, &format!("layer{l}.audio_ffn"))), ps, &format!("layer{l}.audio_norm2"));
    }
    let pooled = vec![[v[0].clone(), a[0].clone()].concat()];
    let motion = linear(&pooled, ps, "motion_head", true).remove(0);

    let out = model.forward(&v0, &a0, &fused).unwrap();
    for layer in out.visual_attention.iter().chain(&out.audio_attention) {
        for w in layer {
            assert_eq!(w.data(), &[1.0]);
        }
    }
    for (x, y) in out.motion_logits.iter().zip(&motion) {
        assert!((x - y).abs() < 1e-10);
    }
}

#[test]
fn advanced_shape_errors() {
    let config = AdvancedConfig { hidden: 8, heads: 2, ffn: 8, ensemble_dim: 4, max_len: 4, ..Default::default() };
    let model = AdvancedFusionModel::new(config, 1).unwrap();
    let (v, a) = (Tensor::zeros(&[3, 4]), Tensor::zeros(&[3, 5]));
    assert!(model.forward(&v, &a, &[0.0; 7]).is_err());
    assert!(model.forward(&v, &Tensor::zeros(&[2, 5]), &[0.0; 8]).is_err());
    assert!(model.forward(&Tensor::zeros(&[5, 4]), &Tensor::zeros(&[5, 5]), &[0.0; 8]).is_err());
}

// ---- gradients ----

fn basic_example(rng: &mut ChaCha8Rng, t: usize) -> FusionExample {
    FusionExample {
        visual: rand_tensor(rng, t, 3, 1.5),
        audio: rand_tensor(rng, t, 4, 1.5),
        motion: rng.random_range(0..2),
        event: 0,
        ensemble: None,
    }
}

fn advanced_example(rng: &mut ChaCha8Rng, t: usize, e: usize) -> FusionExample {
    FusionExample {
        visual: rand_tensor(rng, t, 4, 1.5),
        audio: rand_tensor(rng, t, 5, 1.5),
        motion: rng.random_range(0..2),
        event: rng.random_range(0..32),
        ensemble: Some(random_embedding(rng, e)),
    }
}

struct BatchLoss<'a, M> {
    model: &'a M,
    batch: &'a [FusionExample],
}

impl<M: Trainable> Objective for BatchLoss<'_, M> {
    fn build<T: Real>(&self, g: &mut Graph<'_, T>, p: &[NodeId]) -> avfuse_core::Result<NodeId> {
        self.model.batch_loss(g, p, self.batch)
    }
}

// The reference side runs in double-double, so the step only has to keep the
// truncation term well below the 1e-8 floor.
const FULL_MODEL_STEP: f64 = 1e-6;

#[test]
fn full_models_pass_finite_differences() {
    let mut worst = 0.0f64;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(5000 + seed);
        let model = BasicFusionModel::new(small_basic(seed), seed).unwrap();
        let t = rng.random_range(2..4);
        let batch = vec![basic_example(&mut rng, t), basic_example(&mut rng, t)];
        let r = finite_diff_check_extended(&BatchLoss { model: &model, batch: &batch }, model.param_set().tensors(), FULL_MODEL_STEP).unwrap();
        assert!(r.max_rel_error < 1e-4, "basic seed {seed}: {r:?}");
        worst = worst.max(r.max_rel_error);

        let config = small_advanced(seed);
        let model = AdvancedFusionModel::new(config, seed).unwrap();
        let t = rng.random_range(2..5);
        let batch = vec![advanced_example(&mut rng, t, config.ensemble_dim)];
        let r = finite_diff_check_extended(&BatchLoss { model: &model, batch: &batch }, model.param_set().tensors(), FULL_MODEL_STEP).unwrap();
        assert!(r.max_rel_error < 1e-4, "advanced seed {seed}: {r:?}");
        worst = worst.max(r.max_rel_error);
    }
    eprintln!("worst relative error {worst:e}");
}

// ---- training ----

#[test]
fn zero_learning_rate_leaves_parameters() {
    let mut model = BasicFusionModel::new(small_basic(1), 1).unwrap();
    let before = model.param_set().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let loss = train_step(&mut model, &[basic_example(&mut rng, 3)], 0.0).unwrap();
    assert!(loss.is_finite() && loss > 0.0);
    assert_eq!(model.param_set(), &before);
}

#[test]
fn invalid_labels_are_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut model = BasicFusionModel::new(small_basic(2), 2).unwrap();
    let mut ex = basic_example(&mut rng, 2);
    ex.motion = 2;
    assert!(train_step(&mut model, &[ex], 0.1).is_err());

    let config = small_advanced(3);
    let mut model = AdvancedFusionModel::new(config, 3).unwrap();
    let mut ex = advanced_example(&mut rng, 2, config.ensemble_dim);
    ex.event = 32;
    assert!(train_step(&mut model, &[ex], 0.1).is_err());
}

#[test]
fn repeated_example_loss_decreases() {
    let mut model = BasicFusionModel::new(BasicConfig::default(), 21).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let ex = basic_example(&mut rng, 10);
    let losses: Vec<f64> = (0..200).map(|_| train_step(&mut model, std::slice::from_ref(&ex), 0.05).unwrap()).collect();
    for i in 0..losses.len() - 50 {
        assert!(losses[i + 50] < losses[i], "step {i}: {} -> {}", losses[i], losses[i + 50]);
    }
    let final_loss = train_step(&mut model, std::slice::from_ref(&ex), 0.0).unwrap();
    assert!(final_loss < 0.1, "final loss {final_loss}");
}

/// Moving sequences: many confident boxes and strong texture; static: zeros.
fn separable_set(rng: &mut ChaCha8Rng, n: usize) -> Vec<FusionExample> {
    (0..n)
        .map(|i| {
            let moving = i % 2 == 1;
            let t = 5;
            let visual = Tensor::from_fn(t, 3, |_, _| if moving { 1.0 + rng.random_range(0.0..0.5) } else { 0.0 });
            let audio = rand_tensor(rng, t, 4, 1.0);
            FusionExample { visual, audio, motion: moving as usize, event: 0, ensemble: None }
        })
        .collect()
}

#[test]
fn separable_set_reaches_95_percent() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let data = separable_set(&mut rng, 40);
    let mut model = BasicFusionModel::new(BasicConfig::default(), 31).unwrap();
    let accuracy = |m: &BasicFusionModel| {
        data.iter().filter(|ex| m.predict(&ex.visual, &ex.audio).unwrap() == ex.motion).count() as f64 / data.len() as f64
    };
    let mut reached = None;
    for step in 0..500 {
        train_step(&mut model, &data, 0.05).unwrap();
        if step % 10 == 9 && accuracy(&model) >= 0.95 {
            reached = Some(step + 1);
            break;
        }
    }
    assert!(reached.is_some(), "accuracy {}", accuracy(&model));
}

// ---- token invariances ----

fn windows(samples: &[f64], n: usize) -> Vec<AlignedWindow> {
    let len = samples.len() / n;
    (0..n)
        .map(|i| AlignedWindow { frame_index: i, samples: samples[i * len..(i + 1) * len].to_vec(), pad_left: 0, pad_right: 0 })
        .collect()
}

#[test]
fn motion_prediction_ignores_audio_gain() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let samples: Vec<f64> = (0..32000)
        .map(|i| 0.3 * (i as f64 * 0.2).sin() + rng.random_range(-0.05..0.05))
        .collect();
    let model = BasicFusionModel::new(BasicConfig::default(), 41).unwrap();
    let base = build_audio_tokens(&windows(&samples, 10), 16_000).unwrap();
    let norm = TokenNorm::identity(TokenLayout::Basic);
    let v = rand_tensor(&mut rng, 10, 3, 1.0);
    let reference = model.predict(&v, &norm.audio_tensor(&base).unwrap()).unwrap();
    let mut energies = Vec::new();
    for gain in [0.1, 0.5, 2.0, 3.7] {
        let scaled: Vec<f64> = samples.iter().map(|s| s * gain).collect();
        let tokens = build_audio_tokens(&windows(&scaled, 10), 16_000).unwrap();
        for (a, b) in tokens.iter().zip(&base) {
            assert!((a.centroid_hz - b.centroid_hz).abs() < 1e-6 * b.centroid_hz.max(1.0));
            assert_eq!(a.zcr, b.zcr);
        }
        assert_eq!(model.predict(&v, &norm.audio_tensor(&tokens).unwrap()).unwrap(), reference);
        energies.push(tokens[0].energy);
    }
    assert!(energies.windows(2).all(|w| w[1] > w[0]), "{energies:?}");
}

