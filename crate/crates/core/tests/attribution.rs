use attrex::attribution::{
    deeplift, deeplift_contributions, fit_surrogate, gradcam, gradcam_from_parts, layer_rules, lime, lime_with_samples,
    load_archive, lrp, lrp_relevances, normalize_map, occlusion, random_attribution, save_archive, window_starts,
    AttributionArchive, AttributionMap, DeepLiftConfig, ExplainContext, Explainer, GradCamConfig, LimeConfig,
    LrpConfig, LrpRule, Method, MethodConfig, MethodId, OcclusionConfig,
};
use attrex::model::{ConvLayer, DenseLayer, Layer, ModelGraph};
use attrex::perturb::{segment_grid, BaselineSpec};
use attrex::{Error, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_input(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(0.0..1.0))
}

fn zero_biases(m: &ModelGraph) -> ModelGraph {
    let layers = m
        .layers()
        .iter()
        .cloned()
        .map(|mut l| {
            match &mut l {
                Layer::Conv(c) => c.bias.data_mut().fill(0.0),
                Layer::Dense(d) => d.bias.data_mut().fill(0.0),
                _ => {}
            }
            l
        })
        .collect();
    ModelGraph::new(m.input_shape(), layers, m.seed()).unwrap()
}

fn dense_model(weights: &[f64], bias: f64) -> ModelGraph {
    let n = weights.len();
    let layers = vec![
        Layer::Flatten,
        Layer::Dense(DenseLayer {
            weights: Tensor::new(vec![1, n], weights.to_vec()).unwrap(),
            bias: Tensor::new(vec![1], vec![bias]).unwrap(),
        }),
    ];
    ModelGraph::new([1, 1, n], layers, 0).unwrap()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

#[test]
fn window_starts_reach_the_border() {
    assert_eq!(window_starts(64, 25, 5), vec![0, 5, 10, 15, 20, 25, 30, 35, 40]);
    assert_eq!(window_starts(10, 10, 3), vec![0]);
    assert_eq!(window_starts(7, 3, 2), vec![0, 2, 4]);
    assert_eq!(window_starts(8, 3, 2), vec![0, 2, 4, 6]);
}

#[test]
fn occlusion_matches_brute_force() {
    let model = ModelGraph::tiny_cnn([3, 9, 9], 3, 4).unwrap();
    let x = random_input(&[3, 9, 9], 5);
    let cfg = OcclusionConfig {
        window: (4, 3),
        stride: (2, 3),
        baseline: BaselineSpec::black(),
    };
    let maps = occlusion(&model, &x, &[0, 2], &cfg).unwrap();
    let base = model.probabilities(&x).unwrap();
    let mut sums = vec![vec![0.0; 81]; 2];
    let mut counts = vec![0.0; 81];
    let starts = |len: usize, win: usize, stride: usize| {
        let mut v = Vec::new();
        let mut t = 0;
        loop {
            v.push(t);
            if t + win >= len {
                break v;
            }
            t += stride;
        }
    };
    for top in starts(9, 4, 2) {
        for left in starts(9, 3, 3) {
            let mut xp = x.clone();
            let mut covered = vec![false; 81];
            for i in top..(top + 4).min(9) {
                for j in left..(left + 3).min(9) {
                    covered[i * 9 + j] = true;
                    for c in 0..3 {
                        xp.data_mut()[c * 81 + i * 9 + j] = 0.0;
                    }
                }
            }
            let p = model.probabilities(&xp).unwrap();
            for q in 0..81 {
                if covered[q] {
                    counts[q] += 1.0;
                    sums[0][q] += base[0] - p[0];
                    sums[1][q] += base[2] - p[2];
                }
            }
        }
    }
    for (k, map) in maps.iter().enumerate() {
        for q in 0..81 {
            assert!(close(map.data()[q], sums[k][q] / counts[q], 1e-12));
        }
    }
    assert_eq!(maps[1].class_index, 2);
    assert_eq!(maps[1].method_id, "occlusion");
}

#[test]
fn occlusion_of_whole_image_is_constant_drop() {
    let model = ModelGraph::tiny_cnn([3, 8, 8], 2, 1).unwrap();
    let x = random_input(&[3, 8, 8], 2);
    let cfg = OcclusionConfig {
        window: (8, 8),
        stride: (1, 1),
        baseline: BaselineSpec::black(),
    };
    let map = occlusion(&model, &x, &[1], &cfg).unwrap().remove(0);
    let drop = model.probabilities(&x).unwrap()[1] - model.probabilities(&Tensor::zeros(&[3, 8, 8])).unwrap()[1];
    assert!(map.data().iter().all(|&v| v == drop));
}

#[test]
fn occlusion_rejects_oversized_window() {
    let model = ModelGraph::tiny_cnn([3, 8, 8], 2, 1).unwrap();
    let cfg = OcclusionConfig {
        window: (9, 2),
        ..OcclusionConfig::default()
    };
    let err = occlusion(&model, &random_input(&[3, 8, 8], 0), &[0], &cfg).unwrap_err();
    assert!(matches!(err, Error::InvalidArgument(_)));
}

#[test]
fn surrogate_recovers_exact_linear_target() {
    let z: Vec<Vec<bool>> = (0..8).map(|k| (0..3).map(|b| k >> b & 1 == 1).collect()).collect();
    let y: Vec<f64> = z
        .iter()
        .map(|r| 0.3 + 2.0 * f64::from(u8::from(r[0])) - f64::from(u8::from(r[1])) + 0.5 * f64::from(u8::from(r[2])))
        .collect();
    let w: Vec<f64> = (0..8).map(|k| 0.2 + k as f64 * 0.1).collect();
    let fit = fit_surrogate(&z, &y, &w, 0.0).unwrap();
    assert!(close(fit.intercept, 0.3, 1e-10));
    for (b, e) in fit.coefficients.iter().zip([2.0, -1.0, 0.5]) {
        assert!(close(*b, e, 1e-10));
    }
}

/// Solves `(XᵀWX + Λ) β = XᵀWy` by Gaussian elimination with an unpenalized intercept column.
fn ridge_oracle(z: &[Vec<bool>], y: &[f64], w: &[f64], lambda: f64) -> Vec<f64> {
    let m = z[0].len() + 1;
    let mut a = vec![vec![0.0; m + 1]; m];
    for ((row, &yi), &wi) in z.iter().zip(y).zip(w) {
        let x: Vec<f64> = std::iter::once(1.0).chain(row.iter().map(|&b| if b { 1.0 } else { 0.0 })).collect();
        for i in 0..m {
            for j in 0..m {
                a[i][j] += wi * x[i] * x[j];
            }
            a[i][m] += wi * x[i] * yi;
        }
    }
    for (i, row) in a.iter_mut().enumerate().skip(1) {
        row[i] += lambda;
    }
    for col in 0..m {
        let piv = (col..m).max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs())).unwrap();
        a.swap(col, piv);
        for r in 0..m {
            if r != col {
                let f = a[r][col] / a[col][col];
                for k in col..=m {
                    a[r][k] -= f * a[col][k];
                }
            }
        }
    }
    (0..m).map(|i| a[i][m] / a[i][i]).collect()
}

#[test]
fn lime_two_segments_matches_closed_form() {
    let model = ModelGraph::tiny_cnn([3, 6, 6], 2, 9).unwrap();
    let x = random_input(&[3, 6, 6], 3);
    let seg = segment_grid(6, 6, 1, 2).unwrap();
    let z = vec![vec![true, true], vec![true, false], vec![false, true], vec![false, false]];
    let cfg = LimeConfig {
        kernel_width: 3.0,
        ridge_lambda: 0.05,
        ..LimeConfig::default()
    };
    let maps = lime_with_samples(&model, &x, &[1], &seg, &z, &cfg).unwrap();
    let mut y = Vec::new();
    let mut w = Vec::new();
    for row in &z {
        let mut xp = x.clone();
        let mut d2 = 0.0;
        for c in 0..3 {
            for i in 0..6 {
                for j in 0..6 {
                    let s = usize::from(j >= 3);
                    if !row[s] {
                        let v = &mut xp.data_mut()[c * 36 + i * 6 + j];
                        d2 += *v * *v;
                        *v = 0.0;
                    }
                }
            }
        }
        y.push(model.probabilities(&xp).unwrap()[1]);
        w.push((-d2 / 9.0).exp());
    }
    let beta = ridge_oracle(&z, &y, &w, 0.05);
    let map = &maps[0];
    assert!(close(map.values.at2(0, 0), beta[1], 1e-9));
    assert!(close(map.values.at2(5, 5), beta[2], 1e-9));
}

#[test]
fn lime_on_constant_model_is_zero() {
    let m = ModelGraph::tiny_cnn([3, 16, 16], 2, 1).unwrap();
    let zero = ModelGraph::new(
        [3, 16, 16],
        m.layers()
            .iter()
            .cloned()
            .map(|mut l| {
                l.params_mut().into_iter().for_each(|t| t.data_mut().fill(0.0));
                l
            })
            .collect(),
        0,
    )
    .unwrap();
    let cfg = LimeConfig {
        samples: 60,
        segments: 6,
        ..LimeConfig::default()
    };
    let map = lime(&zero, &random_input(&[3, 16, 16], 4), &[0], &cfg, 3).unwrap().remove(0);
    assert!(map.data().iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn lime_is_seeded() {
    let model = ModelGraph::tiny_cnn([3, 16, 16], 2, 1).unwrap();
    let x = random_input(&[3, 16, 16], 8);
    let cfg = LimeConfig {
        samples: 50,
        segments: 6,
        ..LimeConfig::default()
    };
    let a = lime(&model, &x, &[0, 1], &cfg, 10).unwrap();
    let b = lime(&model, &x, &[0, 1], &cfg, 10).unwrap();
    let c = lime(&model, &x, &[0, 1], &cfg, 11).unwrap();
    assert_eq!(a, b);
    assert_ne!(a[0].data(), c[0].data());
}

#[test]
fn gradcam_of_linear_probe_is_scaled_input() {
    // conv 1×1 identity → GAP → dense(w): the CAM is ReLU(w / HW · x).
    let layers = vec![
        Layer::Conv(ConvLayer {
            weights: Tensor::full(&[1, 1, 1, 1], 1.0),
            bias: Tensor::zeros(&[1]),
            stride: 1,
            pad: 0,
        }),
        Layer::GlobalAvgPool,
        Layer::Dense(DenseLayer {
            weights: Tensor::new(vec![2, 1], vec![3.0, -2.0]).unwrap(),
            bias: Tensor::zeros(&[2]),
        }),
    ];
    let model = ModelGraph::new([1, 4, 5], layers, 0).unwrap();
    let x = random_input(&[1, 4, 5], 1);
    let pos = gradcam(&model, &x, 0, &GradCamConfig::default()).unwrap();
    for (m, v) in pos.data().iter().zip(x.data()) {
        assert!(close(*m, 3.0 / 20.0 * v, 1e-12));
    }
    let neg = gradcam(&model, &x, 1, &GradCamConfig::default()).unwrap();
    assert!(neg.data().iter().all(|&v| v == 0.0));
}

#[test]
fn gradcam_is_nonnegative_and_checks_layer() {
    let model = ModelGraph::tiny_cnn([3, 16, 16], 3, 2).unwrap();
    let x = random_input(&[3, 16, 16], 3);
    for c in 0..3 {
        let map = gradcam(&model, &x, c, &GradCamConfig::default()).unwrap();
        assert_eq!(map.values.shape(), &[16, 16]);
        assert!(map.data().iter().all(|&v| v >= 0.0));
    }
    let early = gradcam(&model, &x, 0, &GradCamConfig { layer: Some(0) }).unwrap();
    assert!(early.data().iter().all(|&v| v >= 0.0));
    let err = gradcam(&model, &x, 0, &GradCamConfig { layer: Some(1) }).unwrap_err();
    assert!(matches!(err, Error::LayerNotConv(1)));
}

#[test]
fn gradcam_parts_reject_shape_mismatch() {
    let a = Tensor::zeros(&[2, 3, 3]);
    let g = Tensor::zeros(&[2, 3, 4]);
    assert!(gradcam_from_parts(&a, &g, 6, 6).is_err());
}

#[test]
fn lrp_dense_closed_form() {
    let w = [0.5, -1.5, 2.0];
    let b = 0.2;
    let model = dense_model(&w, b);
    let x = Tensor::new(vec![1, 1, 3], vec![1.0, 0.4, 0.3]).unwrap();
    let y = 0.5 - 0.6 + 0.6 + b;
    let zero = LrpConfig {
        uniform_rule: Some(LrpRule::Zero),
        ..LrpConfig::default()
    };
    // Bias left out of the denominator: all of y reaches the inputs.
    let r = lrp(&model, &x, 0, &zero).unwrap();
    for ((r, xi), wi) in r.data().iter().zip(x.data()).zip(w) {
        assert!(close(*r, xi * wi * y / (y - b), 1e-12));
    }
    let with_bias = lrp(&model, &x, 0, &LrpConfig { include_bias: true, ..zero }).unwrap();
    for ((r, xi), wi) in with_bias.data().iter().zip(x.data()).zip(w) {
        assert!(close(*r, xi * wi, 1e-12));
    }
    // One parameterized layer falls in the first third: the γ rule.
    let gamma = lrp(&model, &x, 0, &LrpConfig::default()).unwrap();
    let wg: Vec<f64> = w.iter().map(|v| v + 0.25 * v.max(0.0)).collect();
    let zg: f64 = x.data().iter().zip(&wg).map(|(a, b)| a * b).sum();
    for ((r, xi), wi) in gamma.data().iter().zip(x.data()).zip(&wg) {
        assert!(close(*r, xi * wi / zg * y, 1e-12));
    }
}

#[test]
fn lrp_epsilon_absorbs_relevance() {
    let model = dense_model(&[1.0, 1.0], 0.0);
    let x = Tensor::new(vec![1, 1, 2], vec![1.0, 2.0]).unwrap();
    let cfg = LrpConfig {
        uniform_rule: Some(LrpRule::Epsilon),
        epsilon_scale: 0.25,
        ..LrpConfig::default()
    };
    // A single output has zero spread, so ε vanishes.
    let r = lrp(&model, &x, 0, &cfg).unwrap();
    assert!(close(r.data()[0], 1.0, 1e-12) && close(r.data()[1], 2.0, 1e-12));
}

#[test]
fn composite_rules_follow_thirds() {
    let tiny = ModelGraph::tiny_cnn([3, 8, 8], 2, 0).unwrap();
    let rules: Vec<LrpRule> = layer_rules(&tiny, &LrpConfig::default()).into_iter().flatten().collect();
    assert_eq!(rules, vec![LrpRule::Gamma, LrpRule::Epsilon, LrpRule::Zero]);
    let mut layers = vec![Layer::Flatten];
    layers.extend((0..4).map(|_| Layer::dense(4, 4)));
    let deep = ModelGraph::new([1, 1, 4], layers, 0).unwrap();
    let rules: Vec<LrpRule> = layer_rules(&deep, &LrpConfig::default()).into_iter().flatten().collect();
    assert_eq!(rules, vec![LrpRule::Gamma, LrpRule::Gamma, LrpRule::Epsilon, LrpRule::Zero]);
}

#[test]
fn lrp_zero_rule_conserves_relevance_per_layer() {
    let model = zero_biases(&ModelGraph::tiny_cnn([3, 16, 16], 3, 6).unwrap());
    let x = random_input(&[3, 16, 16], 7);
    let cfg = LrpConfig {
        uniform_rule: Some(LrpRule::Zero),
        ..LrpConfig::default()
    };
    let rel = lrp_relevances(&model, &x, 1, &cfg).unwrap();
    let y = model.logits(&x).unwrap()[1];
    for r in &rel {
        assert!((r.sum() - y).abs() <= 1e-9 * y.abs().max(1.0), "{} vs {y}", r.sum());
    }
}

#[test]
fn lrp_zero_input_gives_zero_map() {
    let model = ModelGraph::tiny_cnn([3, 8, 8], 2, 3).unwrap();
    let map = lrp(&model, &Tensor::zeros(&[3, 8, 8]), 0, &LrpConfig::default()).unwrap();
    assert!(map.data().iter().all(|&v| v == 0.0));
}

#[test]
fn deeplift_at_baseline_is_zero() {
    let model = ModelGraph::tiny_cnn([3, 8, 8], 2, 3).unwrap();
    let map = deeplift(&model, &Tensor::zeros(&[3, 8, 8]), 1, &DeepLiftConfig::default()).unwrap();
    assert!(map.data().iter().all(|&v| v == 0.0));
}

#[test]
fn deeplift_on_linear_model_is_gradient_times_delta() {
    let w = [0.7, -0.2, 1.1, 0.0];
    let model = dense_model(&w, 0.4);
    let x = Tensor::new(vec![1, 1, 4], vec![0.3, 0.9, 0.5, 0.2]).unwrap();
    let cfg = DeepLiftConfig {
        baseline: BaselineSpec::constant(0.1),
    };
    let c = deeplift_contributions(&model, &x, 0, &cfg).unwrap();
    for ((c, xi), wi) in c.data().iter().zip(x.data()).zip(w) {
        assert!(close(*c, wi * (xi - 0.1), 1e-12));
    }
}

#[test]
fn lrp_and_deeplift_check_class() {
    let model = ModelGraph::tiny_cnn([3, 8, 8], 2, 3).unwrap();
    let x = random_input(&[3, 8, 8], 0);
    assert!(matches!(lrp(&model, &x, 2, &LrpConfig::default()), Err(Error::InvalidClass { .. })));
    assert!(matches!(deeplift(&model, &x, 5, &DeepLiftConfig::default()), Err(Error::InvalidClass { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn deeplift_sums_to_logit_delta(seed in 0u64..1000, mean_baseline in any::<bool>()) {
        let model = ModelGraph::tiny_cnn([3, 12, 12], 3, seed).unwrap();
        let x = random_input(&[3, 12, 12], seed + 1);
        let cfg = DeepLiftConfig {
            baseline: if mean_baseline { BaselineSpec::mean() } else { BaselineSpec::black() },
        };
        let reference = attrex::attribution::deeplift_reference(&x, &cfg).unwrap();
        for c in 0..3 {
            let map = deeplift(&model, &x, c, &cfg).unwrap();
            let delta = model.logits(&x).unwrap()[c] - model.logits(&reference).unwrap()[c];
            prop_assert!((map.values.sum() - delta).abs() <= 1e-6, "{} vs {}", map.values.sum(), delta);
        }
    }

    #[test]
    fn composite_lrp_conserves_without_epsilon(seed in 0u64..1000) {
        let model = ModelGraph::tiny_cnn([3, 12, 12], 2, seed).unwrap();
        let x = random_input(&[3, 12, 12], seed + 7);
        let y = model.logits(&x).unwrap()[0];
        let cfg = LrpConfig { epsilon_scale: 0.0, ..LrpConfig::default() };
        let r = lrp(&model, &x, 0, &cfg).unwrap().values.sum();
        prop_assert!((r - y).abs() <= 1e-9 * y.abs().max(1.0), "{} vs {}", r, y);
        let absorbed = lrp(&model, &x, 0, &LrpConfig::default()).unwrap().values.sum();
        prop_assert!(absorbed.is_finite());
    }

    #[test]
    fn normalized_maps_span_unit_interval(values in prop::collection::vec(-5.0f64..5.0, 4..40)) {
        let n = values.len();
        let map = AttributionMap::new(Tensor::new(vec![1, n], values).unwrap(), 0, "x");
        let norm = normalize_map(&map);
        prop_assert!(norm.normalized);
        prop_assert!(norm.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        if map.values.max() > map.values.min() {
            prop_assert_eq!(norm.values.min(), 0.0);
            prop_assert_eq!(norm.values.max(), 1.0);
        }
    }
}

#[test]
fn normalize_examples() {
    let map = AttributionMap::new(Tensor::new(vec![1, 3], vec![1.0, 3.0, 5.0]).unwrap(), 0, "m");
    assert_eq!(normalize_map(&map).data(), &[0.0, 0.5, 1.0]);
    let flat = AttributionMap::new(Tensor::full(&[2, 2], -1.0), 0, "m");
    assert_eq!(normalize_map(&flat).data(), &[0.5; 4]);
}

#[test]
fn random_map_is_class_independent_uniform() {
    let ctx = ExplainContext {
        dataset_id: 3,
        sample_id: 17,
        seed: 0,
    };
    let a = random_attribution(64, 64, 0, &ctx);
    let b = random_attribution(64, 64, 4, &ctx);
    assert_eq!(a.data(), b.data());
    assert!((a.values.mean() - 0.5).abs() < 0.02);
    assert!(a.data().iter().all(|v| (0.0..1.0).contains(v)));
    let other = random_attribution(64, 64, 0, &ExplainContext { sample_id: 18, ..ctx });
    assert_ne!(a.data(), other.data());
}

#[test]
fn method_dispatch_matches_direct_calls() {
    let model = ModelGraph::tiny_cnn([3, 16, 16], 2, 1).unwrap();
    let x = random_input(&[3, 16, 16], 1);
    let cfg = MethodConfig::default();
    let ctx = ExplainContext::default();
    let via = Method::new(MethodId::Lrp, &cfg).explain(&model, &x, 1, &ctx).unwrap();
    assert_eq!(via, lrp(&model, &x, 1, &cfg.lrp).unwrap());
    let err = Method::new(MethodId::Gradcam, &cfg).explain(&model, &x, 2, &ctx).unwrap_err();
    assert!(matches!(err, Error::InvalidClass { index: 2, .. }));
    for id in MethodId::ALL {
        assert_eq!(id.as_str().parse::<MethodId>().unwrap(), id);
    }
    assert!("saliency".parse::<MethodId>().is_err());
}

#[test]
fn archive_round_trip_and_checksum() {
    let mut archive = AttributionArchive::new(4, 3);
    for s in 0..3u64 {
        for m in ["lrp", "random"] {
            let mut map = AttributionMap::new(random_input(&[4, 3], s), 1, m);
            map.normalized = s == 1;
            archive.push(s, map).unwrap();
        }
    }
    assert!(archive.push(0, AttributionMap::new(Tensor::zeros(&[3, 3]), 0, "lrp")).is_err());
    let dir = tempfile::tempdir().unwrap();
    save_archive(&archive, dir.path()).unwrap();
    let back = load_archive(dir.path()).unwrap();
    assert_eq!(back.entries.len(), 6);
    for e in &archive.entries {
        assert_eq!(back.get(e.sample_id, 1, &e.map.method_id), Some(&e.map));
    }
    assert_eq!(back.methods(), vec!["lrp".to_string(), "random".to_string()]);

    let blob = dir.path().join("attributions_lrp.bin");
    let mut bytes = std::fs::read(&blob).unwrap();
    bytes[5] ^= 1;
    std::fs::write(&blob, bytes).unwrap();
    assert!(matches!(load_archive(dir.path()), Err(Error::ChecksumMismatch { .. })));
}
