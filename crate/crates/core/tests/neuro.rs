use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spikefed::codec::decode_rate;
use spikefed::neuro::{
    relaxed_spike, surrogate_value, Layer, LifConfig, LifNeuron, NormConfig, Phase, RunMode,
    TemporalNorm,
};
use spikefed::vfl::cross_entropy;
use spikefed::zoo::{build_model, BuildOptions, TopologySpec};
use spikefed::Tensor;

fn binary_frames(shape: &[usize], steps: usize, density: f64, seed: u64) -> Vec<Tensor<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..steps)
        .map(|_| Tensor::from_fn(shape, |_| (rng.random::<f64>() < density) as u8 as f64))
        .collect()
}

/// Mean cross-entropy of the decoded rates, and its gradient with respect to
/// the accumulated output.
fn objective(
    net: &mut spikefed::neuro::Network<f64>,
    frames: &[Tensor<f64>],
    labels: &[usize],
) -> (f64, Tensor<f64>) {
    let steps = frames.len();
    let acc = net.forward(frames, RunMode::RELAXED_TRAIN).unwrap();
    let (rates, _) = decode_rate(&acc, steps).unwrap();
    let (loss, mut grad) = cross_entropy(&rates, labels).unwrap();
    grad.scale_in_place(1.0 / steps as f64);
    (loss, grad)
}

/// Worst relative disagreement between backpropagated and central-difference
/// gradients over every parameter entry.
fn worst_gradient_error(spec: &TopologySpec, steps: usize, batch: usize) -> (f64, usize) {
    let mut model = build_model::<f64>(spec, &BuildOptions::spiking(steps), 3).unwrap();
    let net = &mut model.network;
    let mut shape = vec![batch];
    shape.extend_from_slice(&spec.input);
    let frames = binary_frames(&shape, steps, 0.4, 17);
    let labels: Vec<usize> = (0..batch).map(|i| i % spec.classes()).collect();

    let (_, g) = objective(net, &frames, &labels);
    net.zero_grad();
    net.backward(&g, false).unwrap();
    let analytic: Vec<Tensor<f64>> = net.params().iter().map(|p| p.grad.clone()).collect();

    let h = 1e-3;
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (pi, grads) in analytic.iter().enumerate() {
        for i in 0..grads.len() {
            let orig = net.params()[pi].value.data()[i];
            net.params_mut()[pi].value.data_mut()[i] = orig + h;
            let (up, _) = objective(net, &frames, &labels);
            net.params_mut()[pi].value.data_mut()[i] = orig - h;
            let (down, _) = objective(net, &frames, &labels);
            net.params_mut()[pi].value.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = grads.data()[i];
            let scale = a.abs().max(numeric.abs());
            if scale > 0.0 {
                worst = worst.max((a - numeric).abs() / scale);
            }
            checked += 1;
        }
    }
    (worst, checked)
}

#[test]
fn two_layer_gradients_match_finite_differences() {
    let spec = TopologySpec::parse("toy", [1, 4, 4], "conv:4, linear:3").unwrap();
    let (worst, checked) = worst_gradient_error(&spec, 4, 6);
    assert_eq!(checked, 36 + 4 * 4 + 64 * 3);
    assert!(worst <= 1e-3, "worst relative error {worst:e}");
}

#[test]
fn residual_gradients_match_finite_differences() {
    let spec = TopologySpec::parse("toy-res", [2, 3, 3], "res:3:proj, linear:2").unwrap();
    let (worst, _) = worst_gradient_error(&spec, 3, 5);
    assert!(worst <= 1e-3, "worst relative error {worst:e}");
}

#[test]
fn zero_output_gradient_gives_zero_parameter_gradients() {
    let spec = TopologySpec::parse("toy", [1, 4, 4], "conv:4, pool, linear:3").unwrap();
    let mut model = build_model::<f64>(&spec, &BuildOptions::spiking(3), 0).unwrap();
    let frames = binary_frames(&[4, 1, 4, 4], 3, 0.5, 1);
    model.network.forward(&frames, RunMode::TRAIN).unwrap();
    model.network.zero_grad();
    let grads = model
        .network
        .backward(&Tensor::zeros(&[4, 3]), true)
        .unwrap()
        .unwrap();
    assert!(grads.iter().all(|g| g.data().iter().all(|&v| v == 0.0)));
    for p in model.network.params() {
        assert!(p.grad.data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn integrator_limit_accumulates_input() {
    let cfg = LifConfig::new(1.0, 1e30, 5).unwrap();
    let mut lif = LifNeuron::<f64>::new(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut running = vec![0.0; 6];
    for t in 0..5 {
        let x = Tensor::from_fn(&[2, 3], |_| rng.random_range(-1.0..1.0));
        let s = lif.step(&x, t, RunMode::TRAIN).unwrap();
        assert!(s.data().iter().all(|&v| v == 0.0));
        for (r, v) in running.iter_mut().zip(x.data()) {
            *r += v;
        }
        for (m, r) in lif.membrane().unwrap().data().iter().zip(&running) {
            assert!((m - r).abs() < 1e-12);
        }
    }
    assert_eq!(lif.tape().len(), 5);
}

#[test]
fn surrogate_integrates_to_one_and_is_the_relaxed_derivative() {
    for &(thr, w) in &[(1.0, 1.0), (0.5, 0.25), (2.0, 3.0)] {
        let (lo, hi, n) = (thr - 2.0 * w, thr + 2.0 * w, 4000);
        let dx = (hi - lo) / n as f64;
        let area: f64 = (0..n)
            .map(|i| {
                let a = lo + i as f64 * dx;
                0.5 * (surrogate_value(a, thr, w) + surrogate_value(a + dx, thr, w)) * dx
            })
            .sum();
        assert!((area - 1.0).abs() < 1e-6, "area {area}");
        for i in 0..50 {
            let v = lo + 0.013 + i as f64 * (hi - lo) / 50.0;
            let h = 1e-6;
            let fd = (relaxed_spike(v + h, thr, w) - relaxed_spike(v - h, thr, w)) / (2.0 * h);
            assert!((fd - surrogate_value(v, thr, w)).abs() < 1e-6);
        }
    }
}

#[test]
fn train_mode_normalisation_is_standardised() {
    let (c, steps) = (5, 4);
    let mut norm = TemporalNorm::<f64>::new(c, steps, false, NormConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for t in 0..steps {
        let z = Tensor::from_fn(&[32, c, 3, 3], |i| {
            let ch = (i / 9) % c;
            ch as f64 * 2.0 + (ch + 1) as f64 * rng.random_range(-1.0..1.0)
        });
        norm.forward_step(&z, t, Phase::Train).unwrap();
        let zhat = norm.normalized(t).unwrap();
        for ch in 0..c {
            let vals: Vec<f64> = zhat
                .data()
                .iter()
                .enumerate()
                .filter(|(i, _)| (i / 9) % c == ch)
                .map(|(_, &v)| v)
                .collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-5);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }
    assert!(norm.running_var().data().iter().all(|&v| v >= 0.0));
}

/// Network spike counters agree with a recount of the spikes each LIF
/// population recorded, and every recorded spike is exactly 0 or 1.
#[test]
fn spike_counts_match_recorded_trains() {
    let spec = TopologySpec::parse("toy", [2, 6, 6], "conv:4, conv:4, pool, linear:3").unwrap();
    let mut model = build_model::<f32>(&spec, &BuildOptions::spiking(6), 1).unwrap();
    let frames: Vec<Tensor<f32>> = binary_frames(&[8, 2, 6, 6], 6, 0.6, 5)
        .iter()
        .map(|f| f.cast())
        .collect();
    let mut total = 0;
    for _ in 0..2 {
        model.network.forward(&frames, RunMode::TRAIN).unwrap();
        for layer in model.network.layers() {
            if let Layer::Unit(u) = layer {
                let tape = u.neuron.as_lif().unwrap().tape();
                assert_eq!(tape.len(), 6);
                for s in &tape.spikes {
                    assert!(s.is_binary());
                    total += s.data().iter().filter(|&&v| v == 1.0).count() as u64;
                }
            }
        }
    }
    assert!(total > 0);
    assert_eq!(model.network.spike_count(), total);
}
