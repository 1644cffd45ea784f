use mwe_core::data::{synthetic_items, to_samples, SyntheticSpec};
use mwe_core::fusion::{
    argmax, fuse, loss, prepare_samples, train, ClassScheme, FusionModel, Mode, ModelConfig, Regularization,
    TrainConfig, WoundClass,
};
use mwe_core::location::{attention_scores, LocConfig};
use mwe_core::numerics::{grad_check_params, matmul, Graph, ParamStore, Tensor};
use mwe_core::transformer::scaled_dot_attention;
use mwe_core::vision::{vit_forward, PatchConfig, ViTParams, VitConfig, WaveletMode};
use mwe_core::wavelet::{WaveletFamily, WaveletSpec};
use mwe_core::Execution;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn desk_vit() -> VitConfig {
    VitConfig {
        patch: PatchConfig::new(16, 4, 3, 16).unwrap(),
        depth: 2,
        heads: 2,
        mlp_ratio: 2,
        wavelet: Some(WaveletSpec::new(WaveletFamily::Haar, 1)),
        wavelet_mode: WaveletMode::Concat,
    }
}

fn desk_model(mode: Mode) -> ModelConfig {
    ModelConfig {
        mode,
        vit: desk_vit(),
        loc: LocConfig {
            d_model: 16,
            depth: 2,
            heads: 2,
            mlp_ratio: 2,
        },
    }
}

/// Explicit score matrix and row softmax.
fn two_step_attention(q: &Tensor, k: &Tensor) -> Vec<f64> {
    let (n, m, d) = (q.rows(), k.rows(), q.cols());
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let scores: Vec<f64> = (0..m)
            .map(|j| (0..d).map(|c| q.data()[i * d + c] * k.data()[j * d + c]).sum::<f64>() / (d as f64).sqrt())
            .collect();
        let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = scores.iter().map(|s| (s - top).exp()).sum();
        for j in 0..m {
            out[i * m + j] = (scores[j] - top).exp() / z;
        }
    }
    out
}

#[test]
fn location_attention_matches_two_step_oracle_and_composes() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (q, k, v) = (random(&[9, 4], &mut rng), random(&[9, 4], &mut rng), random(&[9, 6], &mut rng));
    let mut g = Graph::new();
    let (qv, kv, vv) = (g.constant(q.clone()), g.constant(k.clone()), g.constant(v.clone()));
    let a = attention_scores(&mut g, qv, kv).unwrap();
    let weights = g.value(a).clone();
    for (x, y) in weights.data().iter().zip(two_step_attention(&q, &k)) {
        assert!((x - y).abs() <= 1e-12);
    }
    for r in 0..9 {
        let s: f64 = weights.data()[r * 9..(r + 1) * 9].iter().sum();
        assert!((s - 1.0).abs() <= 1e-12);
    }
    let fused = scaled_dot_attention(&mut g, qv, kv, vv).unwrap();
    let composed = matmul(&weights, &v).unwrap();
    assert!(g.value(fused).max_abs_diff(&composed) <= 1e-12);
}

#[test]
fn vit_latent_probe_gradient_matches_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut store = ParamStore::new();
    let p = ViTParams::init(&mut store, desk_vit(), &mut rng).unwrap();
    let img = random(&[16, 16, 3], &mut rng);
    let w = random(&[1, 16], &mut rng);
    let err = grad_check_params(
        &store,
        |g| {
            let latent = vit_forward(g, &img, &p)?;
            let wv = g.constant(w.clone());
            let prod = g.mul(latent, wv)?;
            g.sum(prod)
        },
        1e-5,
        Execution::Parallel,
    )
    .unwrap();
    assert!(err < 1e-4, "relative error {err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fuse_follows_index_arithmetic(a in 1usize..20, b in 1usize..20, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (v, t) = (random(&[1, a], &mut rng), random(&[1, b], &mut rng));
        let mut g = Graph::new();
        let (vv, tv) = (g.constant(v.clone()), g.constant(t.clone()));
        let f = fuse(&mut g, vv, tv).unwrap();
        let out = g.value(f).data();
        prop_assert_eq!(out.len(), a + b);
        for i in 0..a + b {
            let want = if i < a { v.data()[i] } else { t.data()[i - a] };
            prop_assert_eq!(out[i], want);
        }
    }

    #[test]
    fn loss_is_negative_log_probability(k in 2usize..7, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let logits = random(&[1, k], &mut rng).map(|x| 4.0 * x);
        let label = rng.random_range(0..k);
        let z: f64 = logits.data().iter().map(|x| x.exp()).sum();
        let oracle = -(logits.data()[label].exp() / z).ln();
        let store = ParamStore::new();
        let mut g = Graph::with_params(&store);
        let l = g.constant(logits);
        let out = loss(&mut g, l, label, &store, Regularization::default()).unwrap();
        prop_assert!((g.value(out).item() - oracle).abs() <= 1e-12);
    }

    #[test]
    fn argmax_matches_a_scan(values in proptest::collection::vec(-5i32..5, 1..12)) {
        let xs: Vec<f64> = values.iter().map(|&v| f64::from(v)).collect();
        let mut best = 0;
        for i in 0..xs.len() {
            if xs[i] > xs[best] {
                best = i;
            }
        }
        prop_assert_eq!(argmax(&xs), best);
    }

    #[test]
    fn scheme_index_is_a_bijection(mask in 1u8..64) {
        prop_assume!(mask.count_ones() >= 2);
        let classes: Vec<WoundClass> = (0..6).filter(|b| mask & (1 << b) != 0).map(|b| WoundClass::ALL[b]).collect();
        let s = ClassScheme::new(&classes).unwrap();
        for i in 0..s.k() {
            prop_assert_eq!(s.index_of(s.class(i)), Some(i));
        }
        for c in WoundClass::ALL {
            prop_assert_eq!(s.index_of(c).is_some(), classes.contains(&c));
        }
    }
}

fn overfit_setup(mode: Mode) -> (FusionModel, Vec<mwe_core::fusion::Example>) {
    let scheme = ClassScheme::wound_types();
    let items = synthetic_items(&SyntheticSpec {
        per_class: 8,
        image_size: 16,
        seed: 3,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let model = FusionModel::new(desk_model(mode), scheme.clone(), 7).unwrap();
    let samples = to_samples(&items, &scheme, mode).unwrap();
    let ex = prepare_samples(&model, &samples, Execution::Parallel).unwrap();
    (model, ex)
}

#[test]
fn first_epochs_reduce_loss_and_runs_repeat() {
    let cfg = TrainConfig {
        lr: 0.01,
        batch_size: 8,
        epochs: 5,
        seed: 2,
        ..TrainConfig::default()
    };
    let (mut a, ex) = overfit_setup(Mode::ImageLocation);
    let mut b = a.clone();
    let ha = train(&mut a, &ex, &cfg, Execution::Parallel).unwrap();
    let hb = train(&mut b, &ex, &cfg, Execution::Parallel).unwrap();
    let l = ha.losses();
    assert!(l[0] > *l.last().unwrap(), "{l:?}");
    assert_eq!(ha, hb);
    assert_eq!(a.store.flatten(), b.store.flatten());
}
