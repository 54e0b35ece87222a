//! Operation counts and the MAC/AC energy model.
//!
//! A conventional network pays one multiply-accumulate per operation. A
//! spiking network only accumulates, and only when a spike arrives, so its
//! cost scales with the measured spike rate and the number of time steps.
//! Memory and peripheral-circuit energy are not modelled.

use crate::error::{Error, Result};
use crate::neuro::EnergyProbe;
use crate::tensor::conv_output_extent;

/// Per-operation energies for 32-bit arithmetic on a 45 nm process, held in
/// integer femtojoules so that derived values are exact.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EnergyConstants {
    mult_fj: u64,
    add_fj: u64,
    ac_fj: u64,
}

impl Default for EnergyConstants {
    fn default() -> Self {
        Self {
            mult_fj: 3_100,
            add_fj: 100,
            ac_fj: 100,
        }
    }
}

impl EnergyConstants {
    pub fn from_femtojoules(mult_fj: u64, add_fj: u64, ac_fj: u64) -> Self {
        Self {
            mult_fj,
            add_fj,
            ac_fj,
        }
    }

    pub fn e_mult(&self) -> f64 {
        self.mult_fj as f64 / 1000.0
    }

    pub fn e_add(&self) -> f64 {
        self.add_fj as f64 / 1000.0
    }

    /// Multiply-accumulate: always `e_mult + e_add`.
    pub fn e_mac(&self) -> f64 {
        self.mac_fj() as f64 / 1000.0
    }

    pub fn e_ac(&self) -> f64 {
        self.ac_fj as f64 / 1000.0
    }

    fn mac_fj(&self) -> u64 {
        self.mult_fj + self.add_fj
    }
}

/// `((N_I - k + 2p) / s + 1)^2 * I * k^2 * O`, with the division floored the
/// same way [`crate::tensor::conv2d`] sizes its output.
pub fn ops_conv(
    n_i: usize,
    k: usize,
    padding: usize,
    stride: usize,
    in_channels: usize,
    out_channels: usize,
) -> Result<u64> {
    ops_conv_rect(n_i, n_i, k, padding, stride, in_channels, out_channels)
}

/// [`ops_conv`] for an `h x w` feature map.
pub fn ops_conv_rect(
    h: usize,
    w: usize,
    k: usize,
    padding: usize,
    stride: usize,
    in_channels: usize,
    out_channels: usize,
) -> Result<u64> {
    let extent = |n: usize| {
        conv_output_extent(n, k, padding, stride).ok_or_else(|| {
            Error::invalid(format!(
                "conv geometry invalid: input {n}, kernel {k}, padding {padding}, stride {stride}"
            ))
        })
    };
    let (mh, mw) = (extent(h)? as u64, extent(w)? as u64);
    Ok(mh * mw * in_channels as u64 * (k * k) as u64 * out_channels as u64)
}

pub fn ops_fc(inputs: u64, outputs: u64) -> u64 {
    inputs * outputs
}

/// `OPS * E_MAC`, in picojoules.
pub fn energy_ann(ops: u64, c: &EnergyConstants) -> f64 {
    (ops as f64 * c.mac_fj() as f64) / 1000.0
}

/// `OPS * R * T * E_AC`, in picojoules.
pub fn energy_snn(ops: u64, rate: f64, steps: usize, c: &EnergyConstants) -> f64 {
    (ops as f64 * steps as f64 * c.ac_fj as f64) * rate / 1000.0
}

/// `R = N_S / (N_d * N_n)`; zero when nothing was observed.
pub fn spike_rate(spikes: f64, samples: u64, neurons: u64) -> f64 {
    let denom = samples as f64 * neurons as f64;
    if denom == 0.0 {
        0.0
    } else {
        spikes / denom
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerEnergy {
    pub layer: String,
    pub ops: u64,
    /// Spike events delivered to the layer (`N_S`).
    pub spikes: f64,
    /// Presynaptic neurons per sample (`N_n`).
    pub neurons: u64,
    /// Samples seen (`N_d`).
    pub samples: u64,
    pub rate: f64,
    pub e_ann_pj: f64,
    pub e_snn_pj: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EnergyLedger {
    pub steps: usize,
    pub rows: Vec<LayerEnergy>,
}

impl EnergyLedger {
    pub fn new(steps: usize) -> Self {
        Self {
            steps,
            rows: Vec::new(),
        }
    }

    /// Appends one row per probe, naming each `"{prefix}{probe}"`.
    pub fn record(&mut self, prefix: &str, probes: &[EnergyProbe], constants: &EnergyConstants) {
        for p in probes {
            let neurons = p.neurons as u64;
            let rate = spike_rate(p.activity, p.samples, neurons);
            self.rows.push(LayerEnergy {
                layer: format!("{prefix}{}", p.name),
                ops: p.ops,
                spikes: p.activity,
                neurons,
                samples: p.samples,
                rate,
                e_ann_pj: energy_ann(p.ops, constants),
                e_snn_pj: energy_snn(p.ops, rate, self.steps, constants),
            });
        }
    }

    /// Network-wide aggregate: sums of counts and energies, with the rate
    /// recomputed from the summed counts.
    pub fn total(&self) -> LayerEnergy {
        let ops = self.rows.iter().map(|r| r.ops).sum();
        let spikes = self.rows.iter().map(|r| r.spikes).sum();
        let neurons = self.rows.iter().map(|r| r.neurons).sum();
        let samples = self.rows.iter().map(|r| r.samples).max().unwrap_or(0);
        LayerEnergy {
            layer: "all".into(),
            ops,
            spikes,
            neurons,
            samples,
            rate: spike_rate(spikes, samples, neurons),
            e_ann_pj: self.rows.iter().map(|r| r.e_ann_pj).sum(),
            e_snn_pj: self.rows.iter().map(|r| r.e_snn_pj).sum(),
        }
    }
}
