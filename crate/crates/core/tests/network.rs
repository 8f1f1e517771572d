use proptest::prelude::*;
use rand::Rng;

use xbar::dataset::{Dataset, Split};
use xbar::device::{DeviceKind, DeviceVariation, SoftBoundParams};
use xbar::exec::Execution;
use xbar::network::{
    softmax, train, Activation, AnalogDevice, DeviceSpec, FloatLayer, Layer, Network, TrainerConfig,
};
use xbar::rng::stream_rng;
use xbar::tile::{AnalogConfig, CrossbarTile, InitSpec, PulseUpdateConfig, TileConfig};

const SIZES: [usize; 4] = [6, 4, 3, 2];

fn random_weights(rows: usize, cols: usize, seed: u64) -> Vec<f64> {
    let mut rng = stream_rng(seed, rows as u64 * 31 + cols as u64);
    (0..rows * cols).map(|_| rng.random_range(-0.9..0.9)).collect()
}

fn float_net(activation: Activation) -> Network {
    let layers = SIZES
        .windows(2)
        .enumerate()
        .map(|(l, s)| Layer::Float(FloatLayer::new(s[0] + 1, s[1], random_weights(s[0] + 1, s[1], l as u64)).unwrap()))
        .collect();
    Network::from_layers(layers, activation, true).unwrap()
}

fn ideal_analog_net(activation: Activation) -> Network {
    let layers = SIZES
        .windows(2)
        .enumerate()
        .map(|(l, s)| {
            let mut t = CrossbarTile::new(TileConfig {
                rows: s[0] + 1,
                cols: s[1],
                nominal: SoftBoundParams::balanced(0.01, 10.0).unwrap(),
                kind: DeviceKind::SoftBound,
                variation: DeviceVariation::none(),
                analog: AnalogConfig::ideal(),
                pulse: PulseUpdateConfig::default(),
                init: InitSpec::Constant(0.0),
                seed: l as u64,
            })
            .unwrap();
            t.program_effective(&random_weights(s[0] + 1, s[1], l as u64)).unwrap();
            Layer::Analog(t)
        })
        .collect();
    Network::from_layers(layers, activation, true).unwrap()
}

fn check_gradients(mut net: Network) {
    let image = [0.1, 0.9, 0.4, 0.0, 0.7, 0.3];
    let label = 1;
    let mut rng = stream_rng(0, 0);
    let (_, grads) = net.loss_and_gradients(&image, label, &mut rng).unwrap();
    let h = 1e-6;
    for l in 0..grads.len() {
        let w0 = net.layers()[l].weights().to_vec();
        for k in 0..w0.len() {
            let mut w = w0.clone();
            w[k] = w0[k] + h;
            net.layers_mut()[l].set_weights(&w).unwrap();
            let plus = net.loss(&image, label, &mut rng).unwrap();
            w[k] = w0[k] - h;
            net.layers_mut()[l].set_weights(&w).unwrap();
            let minus = net.loss(&image, label, &mut rng).unwrap();
            net.layers_mut()[l].set_weights(&w0).unwrap();
            let fd = (plus - minus) / (2.0 * h);
            let g = grads[l][k];
            let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-8);
            assert!(rel < 1e-4, "layer {l} weight {k}: analytic {g} vs numeric {fd}");
        }
    }
}

#[test]
fn float_gradients_match_finite_differences() {
    check_gradients(float_net(Activation::Sigmoid));
    check_gradients(float_net(Activation::Tanh));
}

#[test]
fn ideal_analog_gradients_match_finite_differences() {
    check_gradients(ideal_analog_net(Activation::Sigmoid));
    check_gradients(ideal_analog_net(Activation::Tanh));
}

#[test]
fn float_step_moves_weights_along_negative_gradient() {
    let mut net = float_net(Activation::Sigmoid);
    let image = [0.2, 0.5, 0.9, 0.1, 0.0, 0.6];
    let mut rng = stream_rng(1, 0);
    let (_, grads) = net.loss_and_gradients(&image, 0, &mut rng).unwrap();
    let before: Vec<Vec<f64>> = net.layers().iter().map(|l| l.weights().to_vec()).collect();
    let lr = 0.05;
    net.train_step(&image, 0, lr, &mut rng).unwrap();
    for (l, layer) in net.layers().iter().enumerate() {
        for (k, w) in layer.weights().iter().enumerate() {
            let want = before[l][k] - lr * grads[l][k];
            assert!((w - want).abs() < 1e-12, "layer {l} weight {k}");
        }
    }
}

fn toy_data(n: usize, split: Split) -> Dataset {
    // Two classes separated by which half of the image is bright.
    let mut pixels = Vec::with_capacity(n * 16);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = (i % 2) as u8;
        for p in 0..16 {
            let bright = (p < 8) == (label == 0);
            pixels.push(if bright { 200 + (i * 7 + p) as u8 % 50 } else { (i * 3 + p) as u8 % 40 });
        }
        labels.push(label);
    }
    Dataset::from_raw(pixels, labels, 4, 4, split).unwrap()
}

fn toy_config(device: DeviceSpec, execution: Execution) -> TrainerConfig {
    TrainerConfig {
        layer_sizes: vec![16, 8, 6, 2],
        device,
        epochs: 4,
        lr0: 0.1,
        decay_every: 2,
        seed: 17,
        execution,
        ..TrainerConfig::default()
    }
}

#[test]
fn training_is_deterministic_and_follows_the_schedule() {
    let (tr, te) = (toy_data(60, Split::Train), toy_data(20, Split::Test));
    let analog = DeviceSpec::Analog(AnalogDevice {
        zero_shift: true,
        calibration_pairs: 50,
        ..AnalogDevice::default()
    });
    let run = |exec| {
        let cfg = toy_config(analog.clone(), exec);
        let mut net = Network::build(&cfg).unwrap().network;
        train(&mut net, &tr, &te, &cfg).unwrap()
    };
    let a = run(Execution::Sequential);
    assert_eq!(a, run(Execution::Sequential));
    assert_eq!(a, run(Execution::Parallel));
    let lrs: Vec<f64> = a.iter().map(|r| r.lr).collect();
    assert_eq!(lrs, vec![0.1, 0.1, 0.05, 0.05]);
    for w in a.windows(2) {
        assert!(w[1].samples_seen > w[0].samples_seen);
    }
    for r in &a {
        let e = r.test_error_pct.unwrap();
        assert!((0.0..=100.0).contains(&e));
    }
}

#[test]
fn float_training_learns_the_toy_task() {
    let (tr, te) = (toy_data(200, Split::Train), toy_data(40, Split::Test));
    let mut cfg = toy_config(DeviceSpec::Float, Execution::Sequential);
    cfg.epochs = 10;
    let mut net = Network::build(&cfg).unwrap().network;
    let records = train(&mut net, &tr, &te, &cfg).unwrap();
    assert_eq!(records.last().unwrap().test_error_pct, Some(0.0));
}

proptest! {
    #[test]
    fn softmax_is_a_distribution(v in proptest::collection::vec(-50.0f64..50.0, 1..20)) {
        let mut p = v.clone();
        softmax(&mut p);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn lr_schedule_halves_every_ten_epochs(e in 0usize..100) {
        let cfg = TrainerConfig::default();
        prop_assert_eq!(cfg.lr_at(e), 0.01 * 0.5f64.powi((e / 10) as i32));
    }

    #[test]
    fn forward_probabilities_sum_to_one(x in proptest::collection::vec(0.0f64..=1.0, 6)) {
        let net = float_net(Activation::Sigmoid);
        let p = net.forward_pass(&x, &mut stream_rng(0, 0)).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
