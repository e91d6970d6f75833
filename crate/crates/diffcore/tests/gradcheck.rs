use advkit_diff::gradcheck::{
    compare_with_finite_differences, finite_diff_check, CheckOptions, Coordinate, Objective,
};
use advkit_diff::{Activation, DiffError, Graph, LayerSpec, PoolKind, StftSpec, Tensor, WindowKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_batch(n: usize, c: usize, t: usize, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(vec![n, c, t], |_| rng.random_range(-1.0..1.0))
}

/// Gives BatchNorm layers non-trivial affine parameters and running stats.
fn perturb_norms(g: &mut Graph<f64>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for li in 0..g.nodes().len() {
        if matches!(g.nodes()[li].spec(), LayerSpec::BatchNorm { .. }) {
            let len = g.nodes()[li].params()[0].len();
            let mk = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| {
                Tensor::from_fn(vec![len], |_| rng.random_range(lo..hi))
            };
            g.set_param(li, 0, mk(&mut rng, 0.5, 1.5)).unwrap();
            g.set_param(li, 1, mk(&mut rng, -0.5, 0.5)).unwrap();
            g.set_buffer(li, 0, mk(&mut rng, -0.2, 0.2)).unwrap();
            g.set_buffer(li, 1, mk(&mut rng, 0.5, 2.0)).unwrap();
        }
    }
}

fn ce_objective(g: &Graph<f64>, n: usize) -> Objective {
    let k = g.output_shape().len();
    Objective::CrossEntropy { labels: (0..n).map(|i| i % k).collect(), class_weights: None }
}

fn check(specs: Vec<LayerSpec>, c: usize, t: usize, seed: u64) -> f64 {
    let mut g = Graph::<f64>::build(c, t, specs, seed).unwrap();
    perturb_norms(&mut g, seed + 1);
    let x = random_batch(2, c, t, seed + 2);
    let obj = ce_objective(&g, 2);
    let report = finite_diff_check(&g, &x, &obj, &CheckOptions::default()).unwrap();
    assert!(
        report.passed(),
        "max_rel_err {} at {:?}",
        report.max_rel_err,
        report.worst_coordinate
    );
    report.max_rel_err
}

fn head(k: usize) -> Vec<LayerSpec> {
    vec![LayerSpec::Flatten, LayerSpec::dense(k)]
}

fn with_head(mut body: Vec<LayerSpec>) -> Vec<LayerSpec> {
    body.extend(head(3));
    body
}

#[test]
fn conv_gradients_match_finite_differences() {
    check(with_head(vec![LayerSpec::conv_same(3, [1, 5])]), 4, 16, 1);
    check(with_head(vec![LayerSpec::conv(4, [2, 3])]), 4, 16, 2);
    let strided = LayerSpec::Conv2d(advkit_diff::Conv2dSpec {
        out_channels: 4,
        kernel: [2, 3],
        stride: [2, 2],
        padding: [1, 0, 2, 1],
        groups: 1,
        bias: true,
    });
    check(with_head(vec![strided]), 5, 16, 3);
}

#[test]
fn grouped_conv_gradients_match_finite_differences() {
    check(
        with_head(vec![
            LayerSpec::conv_same(4, [1, 3]).without_bias(),
            LayerSpec::conv(8, [4, 1]).grouped(4).without_bias(),
            LayerSpec::conv(8, [1, 1]).grouped(2),
        ]),
        4,
        12,
        4,
    );
}

#[test]
fn activation_gradients_match_finite_differences() {
    for (i, f) in [Activation::Elu, Activation::Relu, Activation::Square].into_iter().enumerate() {
        check(with_head(vec![LayerSpec::conv(3, [1, 3]), LayerSpec::act(f)]), 4, 12, 10 + i as u64);
    }
    check(
        vec![LayerSpec::Flatten, LayerSpec::dense(5), LayerSpec::act(Activation::Softmax), LayerSpec::dense(3)],
        3,
        8,
        14,
    );
    check(
        with_head(vec![
            LayerSpec::conv(3, [1, 3]),
            LayerSpec::act(Activation::Square),
            LayerSpec::pool(PoolKind::Avg, [1, 4], [1, 2]),
            LayerSpec::act(Activation::Log),
        ]),
        4,
        16,
        15,
    );
}

#[test]
fn pool_gradients_match_finite_differences() {
    check(with_head(vec![LayerSpec::conv(3, [1, 3]), LayerSpec::pool(PoolKind::Max, [2, 3], [1, 3])]), 4, 16, 20);
    check(with_head(vec![LayerSpec::conv(3, [1, 3]), LayerSpec::pool(PoolKind::Avg, [2, 2], [2, 2])]), 4, 16, 21);
}

#[test]
fn norm_dropout_gradients_match_finite_differences() {
    check(
        with_head(vec![
            LayerSpec::conv(3, [1, 3]),
            LayerSpec::batch_norm(),
            LayerSpec::dropout(0.5),
        ]),
        4,
        16,
        30,
    );
    check(
        vec![LayerSpec::Flatten, LayerSpec::dense(6), LayerSpec::batch_norm(), LayerSpec::dense(2)],
        3,
        8,
        31,
    );
}

#[test]
fn fixed_front_end_gradients_match_finite_differences() {
    let specs = vec![
        LayerSpec::ChannelMix { out_rows: 3 },
        LayerSpec::Stft(StftSpec { window_len: 16, hop: 4, window: WindowKind::Hann }),
        LayerSpec::conv_same(2, [3, 3]),
        LayerSpec::Flatten,
        LayerSpec::dense(2),
    ];
    let mut g = Graph::<f64>::build(4, 32, specs, 40).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    g.set_buffer(0, 0, Tensor::from_fn(vec![3, 4], |_| rng.random_range(-1.0..1.0))).unwrap();
    let x = random_batch(2, 4, 32, 42);
    let obj = ce_objective(&g, 2);
    let opts = CheckOptions { tolerance: 1e-4, ..CheckOptions::default() };
    let report = finite_diff_check(&g, &x, &obj, &opts).unwrap();
    assert!(report.passed(), "{report:?}");
}

#[test]
fn random_three_layer_graph_matches_central_differences() {
    let specs = vec![
        LayerSpec::conv_same(4, [1, 5]),
        LayerSpec::act(Activation::Elu),
        LayerSpec::conv(2, [4, 1]),
        LayerSpec::Flatten,
        LayerSpec::dense(3),
    ];
    let e = check(specs, 4, 32, 50);
    assert!(e <= 1e-5);
}

#[test]
fn injected_fault_is_reported_at_that_layer() {
    let specs = vec![
        LayerSpec::conv_same(3, [1, 5]),
        LayerSpec::act(Activation::Elu),
        LayerSpec::Flatten,
        LayerSpec::dense(2),
    ];
    let g = Graph::<f64>::build(4, 16, specs, 60).unwrap();
    let x = random_batch(2, 4, 16, 61);
    let obj = ce_objective(&g, 2);
    let trace = g.forward(&x).unwrap();
    let (_, dout) = obj.evaluate(trace.output().unwrap()).unwrap();
    let mut grads = g.backward(&trace, &dout, true).unwrap();
    for t in &mut grads.params[3] {
        t.scale(2.0);
    }
    let report = compare_with_finite_differences(&g, &x, &obj, &grads, &CheckOptions::default()).unwrap();
    assert!(!report.passed());
    assert!(matches!(report.worst_coordinate, Some(Coordinate::Param { layer: 3, .. })));
}

#[test]
fn empty_batch_is_rejected() {
    let g = Graph::<f64>::build(2, 4, head(2), 0).unwrap();
    let x = Tensor::<f64>::zeros(vec![0, 2, 4]);
    let obj = Objective::CrossEntropy { labels: vec![], class_weights: None };
    assert!(matches!(
        finite_diff_check(&g, &x, &obj, &CheckOptions::default()),
        Err(DiffError::EmptyBatch)
    ));
}
