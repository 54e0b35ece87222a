use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spikefed::neuro::RunMode;
use spikefed::vfl::ConcatTop;
use spikefed::zoo::{build_model, split_model, BuildOptions, PresetRegistry, TopologySpec};
use spikefed::Tensor;

fn vgg_mini(input: [usize; 3], classes: usize) -> TopologySpec {
    PresetRegistry::default()
        .get("vgg-mini")
        .unwrap()
        .topology(input, classes)
        .unwrap()
}

fn spike_frames(shape: &[usize], steps: usize, seed: u64) -> Vec<Tensor<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..steps)
        .map(|_| Tensor::from_fn(shape, |_| (rng.random::<f32>() < 0.5) as u8 as f32))
        .collect()
}

/// vgg-mini on 3x16x16 with 4 classes: conv 3->8, pool, conv 8->16,
/// conv 16->16, pool, linear 16*4*4 -> 4.
#[test]
fn vgg_mini_parameter_count_closed_form() {
    let spec = vgg_mini([3, 16, 16], 4);
    let convs = 3 * 8 * 9 + 8 * 16 * 9 + 16 * 16 * 9;
    let norm_channels = 8 + 16 + 16;
    let head = 16 * 4 * 4 * 4;

    let t = 10;
    let snn = build_model::<f32>(&spec, &BuildOptions::spiking(t), 0).unwrap();
    assert_eq!(snn.network.param_count(), convs + t * norm_channels + head);

    let ann = build_model::<f32>(&spec, &BuildOptions::ann(), 0).unwrap();
    assert_eq!(ann.network.param_count(), convs + 2 * norm_channels + head);
}

/// Every bottom duplicates the convolutional stack; the head's fan-in is the
/// concatenated width, which for left/right halves equals the monolithic
/// flatten width.
#[test]
fn split_preserves_parameters_up_to_duplication() {
    let spec = vgg_mini([3, 16, 16], 4);
    let t = 6;
    let per_bottom = 3 * 8 * 9 + 8 * 16 * 9 + 16 * 16 * 9 + t * (8 + 16 + 16);
    let opts = BuildOptions::spiking(t);
    for k in [1usize, 2, 4] {
        let inputs = vec![[3, 16, 16 / k]; k];
        let split = split_model::<f32>(&spec, spec.default_cut(), &inputs, &opts, 0).unwrap();
        for b in &split.bottoms {
            assert_eq!(b.network.param_count(), per_bottom);
        }
        let width: usize = split.bottoms.iter().map(|b| b.network.output_width()).sum();
        assert_eq!(width, 16 * 4 * 4);
        assert_eq!(split.bottoms[0].network.output_width() * k, width);
        assert_eq!(split.top.network.param_count(), width * 4);
        let mono = build_model::<f32>(&spec, &opts, 0)
            .unwrap()
            .network
            .param_count();
        assert_eq!(
            k * per_bottom + split.top.network.param_count(),
            mono + (k - 1) * per_bottom
        );
    }
}

/// With one bottom that sees the whole image, the split model and the
/// monolithic model share weights, and a linear head gives the same scores
/// whether it sees per-step inputs or their replayed average.
#[test]
fn single_bottom_split_matches_monolithic_forward() {
    let spec = vgg_mini([3, 16, 16], 4);
    let opts = BuildOptions::spiking(8);
    let mut mono = build_model::<f32>(&spec, &opts, 5).unwrap();
    let split = split_model::<f32>(&spec, spec.default_cut(), &[[3, 16, 16]], &opts, 5).unwrap();
    let mut bottom = split.bottoms.into_iter().next().unwrap();
    let width = bottom.network.output_width();
    let mut top = ConcatTop::new(split.top, vec![width]).unwrap();

    let frames = spike_frames(&[6, 3, 16, 16], 8, 2);
    let want = mono.network.forward(&frames, RunMode::TRAIN).unwrap();
    let o = bottom.network.forward(&frames, RunMode::TRAIN).unwrap();
    let got = top.combine(&[o], RunMode::TRAIN).unwrap();
    assert_eq!(got.shape(), want.shape());
    for (a, b) in got.data().iter().zip(want.data()) {
        assert!((a - b).abs() <= 1e-5 * b.abs().max(1.0), "{a} vs {b}");
    }
}

#[test]
fn presets_build_for_both_regimes() {
    let reg = PresetRegistry::default();
    for name in ["vgg-mini", "res-mini"] {
        let spec = reg.get(name).unwrap().topology([3, 16, 16], 10).unwrap();
        let mut snn = build_model::<f32>(&spec, &BuildOptions::spiking(2), 1).unwrap();
        let out = snn
            .network
            .forward(&spike_frames(&[2, 3, 16, 16], 2, 0), RunMode::TRAIN)
            .unwrap();
        assert_eq!(out.shape(), &[2, 10]);
        let mut ann = build_model::<f32>(&spec, &BuildOptions::ann(), 1).unwrap();
        let out = ann
            .network
            .forward(&spike_frames(&[2, 3, 16, 16], 1, 0), RunMode::TRAIN)
            .unwrap();
        assert_eq!(out.shape(), &[2, 10]);
    }
}
