//! Rate coding: pixels in `[0, 1]` become Bernoulli spike trains, and
//! accumulated output potentials become firing rates and class decisions.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output function (Steele, Lea & Flood constants).
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based random stream.
///
/// Draw `n` is the `n`-th output of a SplitMix64 generator seeded with
/// `seed`: `mix64(seed + (n + 1) * 0x9E3779B97F4A7C15)`. Because any draw can
/// be addressed directly by its counter, work may be split across threads in
/// any order without changing the values produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngStream {
    seed: u64,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Child stream keyed by `tag`. Deriving through a sequence of tags
    /// (e.g. client, epoch, batch) gives statistically independent streams.
    pub fn derive(&self, tag: u64) -> Self {
        Self {
            seed: mix64(self.seed ^ mix64(tag.wrapping_add(GOLDEN_GAMMA))),
        }
    }

    pub fn derive_path(&self, tags: &[u64]) -> Self {
        tags.iter().fold(*self, |s, &t| s.derive(t))
    }

    pub fn bits(&self, counter: u64) -> u64 {
        mix64(
            self.seed
                .wrapping_add(counter.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)),
        )
    }

    /// Uniform draw in `[0, 1)` with 53 bits of resolution.
    pub fn uniform(&self, counter: u64) -> f64 {
        (self.bits(counter) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// A binary spike train: one frame per simulation step, each frame shaped
/// like the encoded input.
#[derive(Clone, Debug, PartialEq)]
pub struct SpikeTrain<F = f32> {
    frames: Vec<Tensor<F>>,
}

impl<F: Real> SpikeTrain<F> {
    pub fn from_frames(frames: Vec<Tensor<F>>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::invalid("spike train needs at least one step"))?;
        if frames.iter().any(|f| f.shape() != first.shape()) {
            return Err(Error::shape("spike_train", "frames differ in shape"));
        }
        if frames.iter().any(|f| !f.is_binary()) {
            return Err(Error::invalid("spike train values must be 0 or 1"));
        }
        Ok(Self { frames })
    }

    pub fn steps(&self) -> usize {
        self.frames.len()
    }

    pub fn frames(&self) -> &[Tensor<F>] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<Tensor<F>> {
        self.frames
    }

    /// All frames stacked as `[T, ...frame shape]`.
    pub fn values(&self) -> Tensor<F> {
        let mut shape = vec![self.frames.len()];
        shape.extend_from_slice(self.frames[0].shape());
        let data = self
            .frames
            .iter()
            .flat_map(|f| f.data().iter().copied())
            .collect();
        Tensor::new(shape, data).expect("frames share a shape")
    }

    pub fn spike_count(&self) -> u64 {
        self.frames
            .iter()
            .map(|f| f.data().iter().filter(|&&v| v == F::one()).count() as u64)
            .sum()
    }
}

/// Bernoulli-per-step realisation of Poisson rate coding: element `e` spikes
/// at step `t` iff `rng.uniform(t * n + e) < intensity`, where `n` is the
/// number of elements in `pixels`.
pub fn poisson_encode<F: Real>(
    pixels: &Tensor<F>,
    steps: usize,
    rng: &RngStream,
) -> Result<SpikeTrain<F>> {
    if steps == 0 {
        return Err(Error::invalid("time steps must be at least 1"));
    }
    if let Some(bad) = pixels
        .data()
        .iter()
        .find(|&&p| !(p >= F::zero() && p <= F::one()))
    {
        return Err(Error::invalid(format!(
            "pixel intensity {bad} outside [0, 1]; normalise inputs before encoding"
        )));
    }
    let n = pixels.len() as u64;
    let probs: Vec<f64> = pixels.data().iter().map(|p| p.as_f64()).collect();
    let frames = (0..steps)
        .into_par_iter()
        .map(|t| {
            let base = t as u64 * n;
            let data = probs
                .iter()
                .enumerate()
                .map(|(e, &p)| {
                    if rng.uniform(base + e as u64) < p {
                        F::one()
                    } else {
                        F::zero()
                    }
                })
                .collect();
            Tensor::new(pixels.shape().to_vec(), data).expect("same shape as pixels")
        })
        .collect();
    Ok(SpikeTrain { frames })
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<F: Real>(row: &[F]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Turns last-layer potentials accumulated over `steps` into average rates
/// and per-sample class predictions.
pub fn decode_rate<F: Real>(
    accumulated: &Tensor<F>,
    steps: usize,
) -> Result<(Tensor<F>, Vec<usize>)> {
    if steps == 0 {
        return Err(Error::invalid("time steps must be at least 1"));
    }
    if accumulated.rank() != 2 {
        return Err(Error::shape(
            "decode_rate",
            format!("expected [batch, classes], got {:?}", accumulated.shape()),
        ));
    }
    let inv = F::one() / F::lit(steps as f64);
    let rates = accumulated.map(|v| v * inv);
    let classes = accumulated.dim(1);
    let predictions = accumulated.data().chunks(classes).map(argmax).collect();
    Ok((rates, predictions))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extreme_intensities_are_deterministic() {
        let rng = RngStream::new(7);
        let zeros = Tensor::<f32>::zeros(&[2, 3]);
        let ones = Tensor::<f32>::full(&[2, 3], 1.0);
        let a = poisson_encode(&zeros, 50, &rng).unwrap();
        let b = poisson_encode(&ones, 50, &rng).unwrap();
        assert_eq!(a.spike_count(), 0);
        assert_eq!(b.spike_count(), 50 * 6);
    }

    #[test]
    fn encoding_prepends_time_axis() {
        let px = Tensor::<f32>::full(&[4, 3, 2, 2], 0.5);
        let train = poisson_encode(&px, 6, &RngStream::new(1)).unwrap();
        assert_eq!(train.values().shape(), &[6, 4, 3, 2, 2]);
        assert!(train.values().is_binary());
    }

    #[test]
    fn out_of_range_pixels_are_rejected() {
        let px = Tensor::<f32>::full(&[1], 255.0);
        assert!(poisson_encode(&px, 1, &RngStream::new(0)).is_err());
        let neg = Tensor::<f32>::full(&[1], -0.1);
        assert!(poisson_encode(&neg, 1, &RngStream::new(0)).is_err());
        assert!(poisson_encode(&Tensor::<f32>::zeros(&[1]), 0, &RngStream::new(0)).is_err());
    }

    #[test]
    fn same_seed_same_train() {
        let px = Tensor::from_fn(&[3, 5], |i| i as f32 / 15.0);
        let a = poisson_encode(&px, 20, &RngStream::new(99)).unwrap();
        let b = poisson_encode(&px, 20, &RngStream::new(99)).unwrap();
        let c = poisson_encode(&px, 20, &RngStream::new(100)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn first_splitmix_outputs_match_reference() {
        // Reference sequence for SplitMix64 seeded with 0.
        let rng = RngStream::new(0);
        assert_eq!(rng.bits(0), 0xE220_A839_7B1D_CDAF);
        assert_eq!(rng.bits(1), 0x6E78_9E6A_A1B9_65F4);
    }

    #[test]
    fn decode_hand_example() {
        let acc = Tensor::<f32>::new(vec![1, 3], vec![1.0, 5.0, 2.0]).unwrap();
        let (rates, pred) = decode_rate(&acc, 10).unwrap();
        assert_eq!(rates.data(), &[0.1, 0.5, 0.2]);
        assert_eq!(pred, vec![1]);
    }

    #[test]
    fn decode_ties_go_low() {
        let acc = Tensor::<f32>::zeros(&[1, 3]);
        assert_eq!(decode_rate(&acc, 1).unwrap().1, vec![0]);
        let acc = Tensor::<f32>::new(vec![1, 4], vec![0.0, 2.0, 2.0, 1.0]).unwrap();
        assert_eq!(decode_rate(&acc, 1).unwrap().1, vec![1]);
    }

    #[test]
    fn decode_rejects_zero_steps() {
        assert!(decode_rate(&Tensor::<f32>::zeros(&[1, 2]), 0).is_err());
    }
}
