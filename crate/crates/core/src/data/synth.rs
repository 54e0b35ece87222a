use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const INSIDE: f32 = 0.75;
const OUTSIDE: f32 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthConfig {
    pub samples: usize,
    pub classes: usize,
    pub height: usize,
    pub width: usize,
    /// Peak-to-peak amplitude of the uniform pixel noise.
    pub noise: f32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            samples: 2000,
            classes: 4,
            height: 16,
            width: 16,
            noise: 0.5,
            seed: 0,
        }
    }
}

/// [`synth_with`] at the default noise level.
pub fn synth_dataset(
    samples: usize,
    classes: usize,
    height: usize,
    width: usize,
    seed: u64,
) -> Result<Dataset> {
    synth_with(&SynthConfig {
        samples,
        classes,
        height,
        width,
        seed,
        ..SynthConfig::default()
    })
}

/// Three-channel images on a grid of `ceil(sqrt(C))` columns: class `c`
/// lights cell `c` (row-major) at 0.75 against a 0.25 background, plus
/// uniform noise, clamped to `[0, 1]`. Labels cycle through the classes.
pub fn synth_with(cfg: &SynthConfig) -> Result<Dataset> {
    let c = cfg.classes;
    if c < 2 {
        return Err(Error::invalid("synthetic data needs at least 2 classes"));
    }
    if !(0.0..=1.0).contains(&cfg.noise) {
        return Err(Error::invalid("noise amplitude must lie in [0, 1]"));
    }
    let cols = (c as f64).sqrt().ceil() as usize;
    let rows = c.div_ceil(cols);
    let (cell_h, cell_w) = (cfg.height / rows, cfg.width / cols);
    if cell_h == 0 || cell_w == 0 {
        return Err(Error::invalid(format!(
            "{}x{} images cannot hold a {rows}x{cols} class grid",
            cfg.height, cfg.width
        )));
    }
    let plane = cfg.height * cfg.width;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut data = Vec::with_capacity(cfg.samples * 3 * plane);
    let labels: Vec<usize> = (0..cfg.samples).map(|i| i % c).collect();
    for &label in &labels {
        let (r0, c0) = ((label / cols) * cell_h, (label % cols) * cell_w);
        for _ in 0..3 {
            for r in 0..cfg.height {
                for col in 0..cfg.width {
                    let lit = (r0..r0 + cell_h).contains(&r) && (c0..c0 + cell_w).contains(&col);
                    let base = if lit { INSIDE } else { OUTSIDE };
                    let u: f32 = rng.random();
                    data.push((base + cfg.noise * (u - 0.5)).clamp(0.0, 1.0));
                }
            }
        }
    }
    let images = Tensor::new(vec![cfg.samples, 3, cfg.height, cfg.width], data)?;
    Dataset::new(images, labels, c)
}
