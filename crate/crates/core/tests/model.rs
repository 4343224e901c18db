use attrex::model::{
    bce_with_logits, from_bytes, load_model, save_model, to_bytes, train, Layer, ModelGraph,
    Prediction, TrainConfig,
};
use attrex::numerics::dense;
use attrex::{Error, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_input(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(0.0..1.0))
}

fn linear_model(n: usize, classes: usize, seed: u64) -> ModelGraph {
    let m = ModelGraph::new([1, 1, n], vec![Layer::Flatten, Layer::dense(classes, n)], seed).unwrap();
    m.randomize_parameters(seed)
}

#[test]
fn zero_network_gives_half_probabilities() {
    let m = ModelGraph::tiny_cnn([3, 16, 16], 4, 3).unwrap();
    let layers: Vec<Layer> = m
        .layers()
        .iter()
        .cloned()
        .map(|mut l| {
            for t in l.params_mut() {
                t.data_mut().fill(0.0);
            }
            l
        })
        .collect();
    let zero = ModelGraph::new([3, 16, 16], layers, 0).unwrap();
    let p = zero.predict_multilabel(&random_input(&[3, 16, 16], 1)).unwrap();
    assert_eq!(p.logits, vec![0.0; 4]);
    assert_eq!(p.probabilities, vec![0.5; 4]);
    assert_eq!(p.labels, vec![true; 4]);
}

#[test]
fn forward_is_bitwise_deterministic() {
    let m = ModelGraph::tiny_cnn([3, 20, 20], 5, 11).unwrap();
    let x = random_input(&[3, 20, 20], 2);
    let a = m.logits(&x).unwrap();
    let b = m.logits(&x).unwrap();
    assert_eq!(a, b);
    let (p, t) = m.forward(&x, true).unwrap();
    assert_eq!(p.logits, a);
    assert_eq!(t.unwrap().len(), m.layers().len());
}

#[test]
fn single_dense_model_matches_dense_kernel() {
    let m = linear_model(6, 3, 5);
    let x = random_input(&[1, 1, 6], 9);
    let Layer::Dense(d) = &m.layers()[1] else { unreachable!() };
    let expected = dense(&x.clone().reshape(&[6]).unwrap(), &d.weights, &d.bias).unwrap();
    assert_eq!(m.logits(&x).unwrap(), expected.data());
}

#[test]
fn forward_rejects_wrong_shape() {
    let m = ModelGraph::tiny_cnn([3, 16, 16], 2, 0).unwrap();
    assert!(matches!(
        m.logits(&Tensor::zeros(&[3, 16, 15])),
        Err(Error::ShapeMismatch(_))
    ));
}

#[test]
fn linear_gradient_is_weight_row() {
    let m = linear_model(5, 3, 1);
    let x = random_input(&[1, 1, 5], 3);
    let g = m.backward(&m.trace(&x).unwrap(), 2).unwrap();
    let Layer::Dense(d) = &m.layers()[1] else { unreachable!() };
    assert_eq!(g.input.data(), &d.weights.data()[10..15]);
    assert!(matches!(
        m.backward(&m.trace(&x).unwrap(), 3),
        Err(Error::InvalidClass { index: 3, num_classes: 3 })
    ));
}

#[test]
fn dead_relu_blocks_gradient() {
    let mut dense1 = Layer::dense(2, 2);
    if let Layer::Dense(d) = &mut dense1 {
        d.weights = Tensor::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]);
        d.bias = Tensor::new(vec![2], vec![-10.0, 0.0]).unwrap();
    }
    let mut dense2 = Layer::dense(1, 2);
    if let Layer::Dense(d) = &mut dense2 {
        d.weights = Tensor::from_rows(&[&[3.0, 4.0]]);
    }
    let m = ModelGraph::new([1, 1, 2], vec![Layer::Flatten, dense1, Layer::Relu, dense2], 0).unwrap();
    let x = Tensor::new(vec![1, 1, 2], vec![0.5, 0.5]).unwrap();
    let g = m.backward(&m.trace(&x).unwrap(), 0).unwrap();
    assert_eq!(g.input.data(), &[0.0, 4.0]);
    assert_eq!(g.layer_outputs[2].data(), &[3.0, 4.0]);
    assert_eq!(g.layer_outputs[1].data(), &[0.0, 4.0]);
}

/// Central differences of one logit with respect to every input element.
fn finite_difference(m: &ModelGraph, x: &Tensor, class: usize, h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut plus = x.clone();
            plus.data_mut()[i] += h;
            let mut minus = x.clone();
            minus.data_mut()[i] -= h;
            (m.logits(&plus).unwrap()[class] - m.logits(&minus).unwrap()[class]) / (2.0 * h)
        })
        .collect()
}

#[test]
fn gradient_matches_finite_differences() {
    for seed in 0..6u64 {
        let m = ModelGraph::tiny_cnn([2, 8, 8], 3, seed).unwrap();
        let x = random_input(&[2, 8, 8], 100 + seed);
        let class = (seed % 3) as usize;
        let g = m.backward(&m.trace(&x).unwrap(), class).unwrap();
        let fd = finite_difference(&m, &x, class, 1e-5);
        let err: f64 = g.input.data().iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(err <= 1e-4 * scale, "seed {seed}: {err} vs {scale}");
    }
}

#[test]
fn activation_gradients_are_consistent_with_input_gradient() {
    // Backpropagating from an intermediate gradient must reproduce the input gradient.
    let m = ModelGraph::tiny_cnn([3, 12, 12], 2, 4).unwrap();
    let x = random_input(&[3, 12, 12], 4);
    let t = m.trace(&x).unwrap();
    let g = m.backward(&t, 1).unwrap();
    assert_eq!(g.layer_outputs.len(), m.layers().len());
    // Dense is linear: d logit / d (GAP output) is its weight row.
    let Layer::Dense(d) = &m.layers()[7] else { unreachable!() };
    assert_eq!(g.layer_outputs[6].data(), &d.weights.data()[32..64]);
    assert_eq!(g.layer_outputs[7].data(), &[0.0, 1.0]);
}

#[test]
fn prediction_threshold_is_inclusive() {
    assert_eq!(Prediction::from_logits(vec![0.0, 0.0]).labels, vec![true, true]);
    assert_eq!(Prediction::from_logits(vec![-5.0, 5.0]).labels, vec![false, true]);
}

#[test]
fn predict_matches_forward() {
    let m = ModelGraph::tiny_cnn([3, 16, 16], 5, 8).unwrap();
    let x = random_input(&[3, 16, 16], 8);
    let (p, _) = m.forward(&x, false).unwrap();
    assert_eq!(m.predict_multilabel(&x).unwrap(), p);
    let labels: Vec<bool> = p.probabilities.iter().map(|&q| q >= 0.5).collect();
    assert_eq!(p.labels, labels);
}

fn toy_set(n: usize) -> (Vec<Tensor>, Vec<Vec<bool>>) {
    let images = (0..n).map(|i| random_input(&[3, 8, 8], i as u64)).collect();
    let labels = (0..n).map(|i| vec![i % 2 == 0, i % 3 == 0]).collect();
    (images, labels)
}

#[test]
fn zero_learning_rate_leaves_parameters() {
    let m = ModelGraph::tiny_cnn([3, 8, 8], 2, 1).unwrap();
    let (x, y) = toy_set(6);
    let cfg = TrainConfig { epochs: 2, lr: 0.0, batch: 4, ..Default::default() };
    let (trained, losses) = train(&m, &x, &y, &cfg).unwrap();
    assert_eq!(trained, m);
    assert_eq!(losses.len(), 2);
}

#[test]
fn training_memorizes_single_sample() {
    let m = ModelGraph::tiny_cnn([3, 8, 8], 3, 2).unwrap();
    let x = vec![random_input(&[3, 8, 8], 5)];
    let y = vec![vec![true, false, true]];
    let cfg = TrainConfig { epochs: 200, lr: 0.1, momentum: 0.9, batch: 1, seed: 3 };
    let (trained, losses) = train(&m, &x, &y, &cfg).unwrap();
    let final_loss = bce_with_logits(&trained.logits(&x[0]).unwrap(), &y[0]);
    assert!(final_loss < 0.01, "loss {final_loss}, history tail {:?}", &losses[190..]);
}

#[test]
fn training_is_deterministic() {
    let m = ModelGraph::tiny_cnn([3, 8, 8], 2, 1).unwrap();
    let (x, y) = toy_set(10);
    let cfg = TrainConfig { epochs: 3, lr: 0.05, batch: 3, seed: 9, ..Default::default() };
    let a = train(&m, &x, &y, &cfg).unwrap();
    let b = train(&m, &x, &y, &cfg).unwrap();
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
}

#[test]
fn training_reports_divergence() {
    let m = ModelGraph::tiny_cnn([3, 8, 8], 2, 1).unwrap();
    let (x, y) = toy_set(4);
    let cfg = TrainConfig { epochs: 20, lr: 1e30, batch: 2, ..Default::default() };
    assert!(matches!(train(&m, &x, &y, &cfg), Err(Error::Divergence { .. })));
}

#[test]
fn randomization_properties() {
    let m = ModelGraph::tiny_cnn([3, 16, 16], 3, 1).unwrap();
    let before = m.clone();
    let r1 = m.randomize_parameters(77);
    let r2 = m.randomize_parameters(77);
    assert_eq!(m, before);
    assert_eq!(r1, r2);
    for (a, b) in m.layers().iter().zip(r1.layers()) {
        let sa: Vec<_> = a.params().iter().map(|t| t.shape().to_vec()).collect();
        let sb: Vec<_> = b.params().iter().map(|t| t.shape().to_vec()).collect();
        assert_eq!(sa, sb);
    }
    let probes: Vec<Tensor> = (0..5).map(|i| random_input(&[3, 16, 16], 40 + i)).collect();
    let dist: f64 = probes
        .iter()
        .map(|p| {
            let a = m.logits(p).unwrap();
            let b = r1.logits(p).unwrap();
            a.iter().zip(&b).map(|(u, v)| (u - v).abs()).sum::<f64>()
        })
        .sum::<f64>()
        / probes.len() as f64;
    assert!(dist > 0.0);
}

#[test]
fn perturbation_properties() {
    let m = ModelGraph::tiny_cnn([3, 16, 16], 3, 1).unwrap();
    assert_eq!(m.perturb_parameters(0.0, 5).unwrap(), m);
    assert_eq!(m.perturb_parameters(0.1, 5).unwrap(), m.perturb_parameters(0.1, 5).unwrap());
    assert!(m.perturb_parameters(-1.0, 5).is_err());
    let probe = random_input(&[3, 16, 16], 3);
    let base = m.logits(&probe).unwrap();
    let deviation = |std: f64, seed: u64| -> f64 {
        let l = m.perturb_parameters(std, seed).unwrap().logits(&probe).unwrap();
        l.iter().zip(&base).map(|(a, b)| (a - b).abs()).sum()
    };
    let monotone = (0..10)
        .filter(|&s| {
            let d: Vec<f64> = [1e-4, 1e-2, 1.0].iter().map(|&std| deviation(std, s)).collect();
            d[0] < d[1] && d[1] < d[2]
        })
        .count();
    assert!(monotone > 5, "monotone in {monotone}/10 seeds");
}

#[test]
fn save_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bin");
    let m = ModelGraph::tiny_cnn([3, 16, 16], 4, 12).unwrap();
    save_model(&m, &path).unwrap();
    let loaded = load_model(&path).unwrap();
    assert_eq!(loaded, m);
    assert_eq!(to_bytes(&loaded), std::fs::read(&path).unwrap());
}

#[test]
fn truncated_blob_is_corrupt() {
    let m = ModelGraph::tiny_cnn([3, 16, 16], 4, 12).unwrap();
    let bytes = to_bytes(&m);
    match from_bytes(&bytes[..bytes.len() - 3]) {
        Err(Error::CorruptModel { layer: Some(7), .. }) => {}
        other => panic!("unexpected {other:?}"),
    }
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(matches!(from_bytes(&extra), Err(Error::CorruptModel { layer: None, .. })));
}

#[test]
fn header_shape_mismatch_is_corrupt() {
    let m = ModelGraph::tiny_cnn([3, 16, 16], 4, 12).unwrap();
    let bytes = to_bytes(&m);
    let split = bytes.iter().position(|&b| b == 0).unwrap();
    let header = String::from_utf8(bytes[..split].to_vec()).unwrap();
    let edited = header.replacen("[32,16,3,3]", "[32,15,3,3]", 1);
    assert_ne!(edited, header);
    let mut bad = edited.into_bytes();
    bad.extend_from_slice(&bytes[split..]);
    assert!(matches!(from_bytes(&bad), Err(Error::CorruptModel { layer: Some(3), .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn labels_monotone_in_logits(z in -20.0f64..20.0, bump in 0.0f64..10.0) {
        let lo = Prediction::from_logits(vec![z]);
        let hi = Prediction::from_logits(vec![z + bump]);
        prop_assert!(!lo.labels[0] || hi.labels[0]);
        prop_assert!(lo.probabilities[0] > 0.0 && lo.probabilities[0] < 1.0);
    }

    #[test]
    fn linear_gradient_is_input_independent(seed in 0u64..1000) {
        let m = linear_model(4, 2, seed);
        let a = m.backward(&m.trace(&random_input(&[1, 1, 4], seed)).unwrap(), 0).unwrap();
        let b = m.backward(&m.trace(&random_input(&[1, 1, 4], seed + 1)).unwrap(), 0).unwrap();
        prop_assert_eq!(a.input, b.input);
    }
}
