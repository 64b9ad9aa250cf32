use super::*;

fn mini<T: Real>(seed: u64) -> Network<T> {
    build_network(Preset::Mini, [3, 257, 32], 6, seed).unwrap()
}

fn pseudo_input(len: usize, seed: u64) -> Vec<f64> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn tensor(shape: [usize; 3], seed: u64) -> RdTensor {
    let mut t = RdTensor::zeros(shape[0], shape[1], shape[2]);
    for (v, x) in t.data.iter_mut().zip(pseudo_input(shape.iter().product(), seed)) {
        *v = x as f32;
    }
    t
}

#[test]
fn full_preset_shape_chain() {
    let plan = preset_plan(Preset::Full, [3, 227, 227], 6).unwrap();
    let shape_of = |name: &str| plan.iter().find(|(l, _)| l.name == name).unwrap().1;
    assert_eq!(shape_of("conv1"), [96, 55, 55]);
    assert_eq!(shape_of("pool1"), [96, 27, 27]);
    assert_eq!(shape_of("pool2"), [256, 13, 13]);
    assert_eq!(shape_of("conv5"), [256, 13, 13]);
    assert_eq!(shape_of("pool5"), [256, 6, 6]);
    let kernels: Vec<usize> = plan
        .iter()
        .filter_map(|(l, _)| match l.kind {
            LayerKind::Conv { out_channels, .. } => Some(out_channels),
            _ => None,
        })
        .collect();
    assert_eq!(kernels, [96, 256, 384, 384, 256]);
    let fc: Vec<usize> = plan
        .iter()
        .filter_map(|(l, _)| match l.kind {
            LayerKind::FullyConnected { units } => Some(units),
            _ => None,
        })
        .collect();
    assert_eq!(fc, [4096, 4096, 6]);
    let relus = plan.iter().filter(|(l, _)| l.kind == LayerKind::Relu).count();
    assert_eq!(relus, 7);
}

#[test]
fn full_preset_rejects_other_inputs() {
    assert!(build_network::<f32>(Preset::Full, [3, 257, 32], 6, 0).is_err());
    assert!(build_network::<f32>(Preset::Mini, [1, 257, 32], 6, 0).is_err());
}

#[test]
fn mini_preset_outputs_six_probabilities() {
    let net: Network<f32> = mini(3);
    assert_eq!(net.num_classes(), 6);
    let (probs, _) = net.forward(&tensor([3, 257, 32], 1), Mode::Eval, 0).unwrap();
    assert_eq!(probs.len(), 6);
    let sum: f64 = probs.iter().map(|p| p.as_f64()).sum();
    assert!((sum - 1.0).abs() < 1e-6);
    assert!(probs.iter().all(|&p| p > 0.0 && p < 1.0));
}

#[test]
fn depth_mismatch_names_layer() {
    let mut layers = preset_layers(Preset::Mini, [3, 257, 32], 6);
    if let LayerKind::Conv { in_channels, .. } = &mut layers[4].kind {
        *in_channels = 8;
    }
    match Network::<f32>::from_layers(layers, [3, 257, 32], 0) {
        Err(Error::Layer { layer, .. }) => assert_eq!(layer, "conv2"),
        other => panic!("expected layer error, got {other:?}"),
    }
    let mut layers = preset_layers(Preset::Mini, [3, 257, 32], 6);
    layers.pop();
    assert!(Network::<f32>::from_layers(layers, [3, 257, 32], 0).is_err());
}

#[test]
fn initialization_is_seeded() {
    let a: Network<f32> = mini(5);
    assert_eq!(a, mini(5));
    assert_ne!(a.params(), mini::<f32>(6).params());
    let conv1 = a.params()[0].as_ref().unwrap();
    assert_eq!(conv1.weight_shape, [16, 3, 5, 5]);
    let n = conv1.weight.len() as f64;
    let var = conv1.weight.iter().map(|&w| (w as f64).powi(2)).sum::<f64>() / n;
    // He init: variance 2 / 75.
    assert!((var / (2.0 / 75.0) - 1.0).abs() < 0.2, "variance {var}");
    assert!(conv1.bias.iter().all(|&b| b == 0.0));
}

#[test]
fn shape_mismatch_is_error() {
    let net: Network<f32> = mini(0);
    assert!(net.forward(&tensor([3, 256, 32], 0), Mode::Eval, 0).is_err());
    assert!(net.predict(&tensor([3, 257, 33], 0)).is_err());
}

#[test]
fn one_by_one_identity_conv() {
    let g = ops::ConvGeom {
        in_channels: 2,
        height: 3,
        width: 4,
        kernel: 1,
        stride: 1,
        padding: 0,
        out_height: 3,
        out_width: 4,
    };
    let input = pseudo_input(24, 2);
    let mut out = vec![0.0; 24];
    ops::conv_forward(&input, &g, &[1.0, 0.0, 0.0, 1.0], &[0.0, 0.0], &mut out);
    assert_eq!(out, input);
}

#[test]
fn loss_values() {
    let uniform = vec![1.0f64 / 6.0; 6];
    let (loss, grad) = loss_and_grad(&uniform, 2);
    assert!((loss - 6f64.ln()).abs() < 1e-12);
    assert!((grad[2] + 5.0 / 6.0).abs() < 1e-12);
    let sure = [0.0, 1.0, 0.0, 0.0, 0.0, 0.0];
    let (loss, grad) = loss_and_grad(&sure, 1);
    assert_eq!(loss, 0.0);
    assert!(grad.iter().all(|&g| g == 0.0));
    let (loss, _) = loss_and_grad(&[1.0f64, 0.0], 1);
    assert!((loss - 1e-12f64.ln().abs()).abs() < 1e-9);
}

#[test]
fn logit_gradient_matches_finite_differences() {
    let logits = [0.3, -1.2, 2.0, 0.0, 0.7, -0.4];
    let loss = |z: &[f64]| -ops::softmax(z)[4].ln();
    let (_, grad) = loss_and_grad(&ops::softmax(&logits), 4);
    for i in 0..6 {
        let h = 1e-5;
        let (mut up, mut down) = (logits, logits);
        up[i] += h;
        down[i] -= h;
        let numeric = (loss(&up) - loss(&down)) / (2.0 * h);
        assert!((numeric - grad[i]).abs() < 1e-6, "logit {i}");
    }
}

#[test]
fn zero_logit_gradient_gives_zero_gradients() {
    let net: Network<f32> = mini(1);
    let (_, cache) = net.forward(&tensor([3, 257, 32], 4), Mode::Train, 9).unwrap();
    let grads = net.backward(&cache, &[0.0; 6]).unwrap();
    assert!(grads.values().all(|g| g == 0.0));
}

#[test]
fn stale_cache_is_rejected() {
    let mut net: Network<f32> = mini(1);
    let (probs, cache) = net.forward(&tensor([3, 257, 32], 4), Mode::Eval, 0).unwrap();
    let (_, d) = loss_and_grad(&probs, 0);
    assert!(net.backward(&cache, &d).is_ok());
    net.params_mut()[0].as_mut().unwrap().bias[0] = 0.5;
    assert!(matches!(net.backward(&cache, &d), Err(Error::StaleCache { .. })));
}

#[test]
fn train_mode_is_deterministic_per_seed() {
    let net: Network<f32> = mini(2);
    let t = tensor([3, 257, 32], 8);
    let (a, _) = net.sample_gradients(&t, 3, Mode::Train, 11).unwrap();
    let (b, ga) = net.sample_gradients(&t, 3, Mode::Train, 11).unwrap();
    let (_, gb) = net.sample_gradients(&t, 3, Mode::Train, 11).unwrap();
    assert_eq!(a, b);
    assert_eq!(ga, gb);
    let (c, _) = net.sample_gradients(&t, 3, Mode::Train, 12).unwrap();
    assert_ne!(a, c);
    let e1 = net.forward(&t, Mode::Eval, 1).unwrap().0;
    let e2 = net.forward(&t, Mode::Eval, 2).unwrap().0;
    assert_eq!(e1, e2);
}

#[test]
fn inverted_dropout_preserves_mean() {
    let layers = vec![
        LayerSpec::new("fc1", LayerKind::FullyConnected { units: 4 }),
        LayerSpec::new("drop1", LayerKind::Dropout { rate: 0.5 }),
        LayerSpec::new("prob", LayerKind::Softmax),
    ];
    let net = Network::<f64>::from_layers(layers, [3, 1, 1], 0).unwrap();
    let input = vec![0.4, -1.0, 2.0];
    let (_, eval) = net.forward_raw(input.clone(), Mode::Eval, 0).unwrap();
    assert_eq!(eval.layer_input(1), eval.layer_input(2));

    let n = 10_000;
    let pre = eval.layer_input(1).to_vec();
    let mut sum = vec![0.0; 4];
    let mut sq = vec![0.0; 4];
    for s in 0..n {
        let (_, c) = net.forward_raw(input.clone(), Mode::Train, s).unwrap();
        for (k, &y) in c.layer_input(2).iter().enumerate() {
            sum[k] += y;
            sq[k] += y * y;
        }
    }
    for k in 0..4 {
        let mean = sum[k] / n as f64;
        let var = sq[k] / n as f64 - mean * mean;
        let se = (var / n as f64).sqrt();
        assert!((mean - pre[k]).abs() < 3.0 * se, "unit {k}: {mean} vs {}", pre[k]);
    }
}

#[test]
fn predict_ties_go_to_lowest_index() {
    assert_eq!(argmax(&[0.9, 0.02, 0.02, 0.02, 0.02, 0.02]), 0);
    assert_eq!(argmax(&[0.1, 0.4, 0.1, 0.4, 0.0, 0.0]), 1);
    assert_eq!(argmax(&[0.0, 0.0, 0.0, 0.0, 0.0, 1.0]), 5);
}

#[test]
fn predict_is_shift_invariant() {
    let mut net: Network<f64> = mini(4);
    let t = tensor([3, 257, 32], 3);
    let (class, scores) = net.predict(&t).unwrap();
    let last = net.layers().len() - 2;
    for b in &mut net.params_mut()[last].as_mut().unwrap().bias {
        *b += 7.5;
    }
    let (shifted, shifted_scores) = net.predict(&t).unwrap();
    assert_eq!(class, shifted);
    for (a, b) in scores.iter().zip(&shifted_scores) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn cast_roundtrip() {
    let net: Network<f32> = mini(1);
    let back: Network<f32> = net.cast::<f64>().cast();
    assert_eq!(net.params(), back.params());
    assert_eq!(net.precision(), Precision::Standard);
    assert_eq!(net.cast::<f64>().precision(), Precision::High);
}

#[test]
fn dropout_rate_can_be_changed() {
    let mut net: Network<f32> = mini(1);
    net.set_dropout_rate(0.0).unwrap();
    let t = tensor([3, 257, 32], 3);
    let train = net.forward(&t, Mode::Train, 5).unwrap().0;
    let eval = net.forward(&t, Mode::Eval, 5).unwrap().0;
    assert_eq!(train, eval);
    assert!(net.set_dropout_rate(1.0).is_err());
}

#[test]
fn batch_gradient_is_sum_of_samples() {
    let net: Network<f64> = mini(2);
    let ts: Vec<RdTensor> = (0..3).map(|s| tensor([3, 257, 32], s)).collect();
    let batch: Vec<(&RdTensor, usize)> = ts.iter().zip([0, 4, 5]).collect();
    let (loss, grads) = batch_gradients(&net, &batch, Mode::Eval, 0).unwrap();
    let mut expect_loss = 0.0;
    let mut expect = net.zero_gradients();
    for (t, c) in &batch {
        let (l, g) = net.sample_gradients(t, *c, Mode::Eval, 0).unwrap();
        expect_loss += l / 3.0;
        expect.add_assign(&g);
    }
    assert!((loss - expect_loss).abs() < 1e-12);
    for (a, b) in grads.values().zip(expect.values()) {
        assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
    }
    let again = batch_gradients(&net, &batch, Mode::Eval, 0).unwrap().1;
    assert_eq!(grads, again);
}

#[test]
fn gradient_check_high_precision() {
    let net: Network<f64> = mini(7);
    let input = pseudo_input(3 * 257 * 32, 1);
    let r = gradient_check(&net, &input, 2, 1e-4, 200, 3).unwrap();
    assert!(r.checked >= 200, "{r:?}");
    assert!(r.max_rel_error < 1e-5, "{r:?}");
}

#[test]
fn gradient_check_standard_precision() {
    let net: Network<f32> = mini(7);
    let input = pseudo_input(3 * 257 * 32, 1);
    let r = gradient_check(&net, &input, 2, 1e-4, 200, 3).unwrap();
    assert!(r.checked >= 200, "{r:?}");
    assert!(r.max_rel_error < 1e-3, "{r:?}");
}

#[test]
fn gradient_check_linear_net() {
    let layers = vec![
        LayerSpec::new(
            "conv1",
            LayerKind::Conv {
                in_channels: 3,
                out_channels: 4,
                kernel: 3,
                stride: 1,
                padding: 1,
            },
        ),
        LayerSpec::new("fc2", LayerKind::FullyConnected { units: 6 }),
        LayerSpec::new("prob", LayerKind::Softmax),
    ];
    let net = Network::<f64>::from_layers(layers, [3, 9, 8], 5).unwrap();
    let input = pseudo_input(3 * 9 * 8, 2);
    let r = gradient_check(&net, &input, 0, 1e-4, 200, 1).unwrap();
    assert_eq!(r.skipped, 0);
    assert!(r.checked >= 200);
    assert!(r.max_rel_error < 1e-7, "{r:?}");
}
