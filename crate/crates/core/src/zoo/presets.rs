use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::neuro::Regime;
use crate::zoo::{LayerSpec, SkipKind, TopologySpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    Vgg,
    ResNet,
}

/// A named topology that adapts to the input shape and class count.
pub trait ModelPreset: Send + Sync {
    fn name(&self) -> &'static str;
    fn family(&self) -> Family;
    fn layers(&self, classes: usize) -> Vec<LayerSpec>;

    fn topology(&self, input: [usize; 3], classes: usize) -> Result<TopologySpec> {
        TopologySpec::new(self.name(), input, self.layers(classes))
    }

    fn default_lr(&self, regime: Regime) -> f64 {
        match (regime, self.family()) {
            (Regime::Ann, _) => 0.001,
            (Regime::Spiking, Family::Vgg) => 0.1,
            (Regime::Spiking, Family::ResNet) => 0.02,
        }
    }
}

struct VggMini;
struct ResMini;
struct Vgg9;
struct ResNet18;

impl ModelPreset for VggMini {
    fn name(&self) -> &'static str {
        "vgg-mini"
    }
    fn family(&self) -> Family {
        Family::Vgg
    }
    fn layers(&self, classes: usize) -> Vec<LayerSpec> {
        use LayerSpec as L;
        vec![
            L::conv(8),
            L::pool(),
            L::conv(16),
            L::conv(16),
            L::pool(),
            L::linear(classes),
        ]
    }
}

impl ModelPreset for ResMini {
    fn name(&self) -> &'static str {
        "res-mini"
    }
    fn family(&self) -> Family {
        Family::ResNet
    }
    fn layers(&self, classes: usize) -> Vec<LayerSpec> {
        use LayerSpec as L;
        vec![
            L::residual(8, SkipKind::Projection),
            L::pool(),
            L::residual(16, SkipKind::Projection),
            L::pool(),
            L::linear(classes),
        ]
    }
}

impl ModelPreset for Vgg9 {
    fn name(&self) -> &'static str {
        "vgg9"
    }
    fn family(&self) -> Family {
        Family::Vgg
    }
    fn layers(&self, classes: usize) -> Vec<LayerSpec> {
        use LayerSpec as L;
        vec![
            L::conv(64),
            L::conv(64),
            L::pool(),
            L::conv(128),
            L::conv(128),
            L::pool(),
            L::conv(256),
            L::conv(256),
            L::conv(256),
            L::pool(),
            L::linear(1024),
            L::linear(classes),
        ]
    }
}

impl ModelPreset for ResNet18 {
    fn name(&self) -> &'static str {
        "resnet18"
    }
    fn family(&self) -> Family {
        Family::ResNet
    }
    fn layers(&self, classes: usize) -> Vec<LayerSpec> {
        use LayerSpec as L;
        use SkipKind::{Identity, Projection};
        vec![
            L::conv(64),
            L::residual(64, Identity),
            L::residual(64, Identity),
            L::pool(),
            L::residual(128, Projection),
            L::residual(128, Identity),
            L::pool(),
            L::residual(256, Projection),
            L::residual(256, Identity),
            L::pool(),
            L::residual(512, Projection),
            L::residual(512, Identity),
            L::linear(classes),
        ]
    }
}

#[derive(Clone)]
pub struct PresetRegistry {
    presets: BTreeMap<&'static str, Arc<dyn ModelPreset>>,
}

impl Default for PresetRegistry {
    fn default() -> Self {
        let mut r = Self {
            presets: BTreeMap::new(),
        };
        r.register(Arc::new(VggMini));
        r.register(Arc::new(ResMini));
        r.register(Arc::new(Vgg9));
        r.register(Arc::new(ResNet18));
        r
    }
}

impl PresetRegistry {
    pub fn register(&mut self, preset: Arc<dyn ModelPreset>) {
        self.presets.insert(preset.name(), preset);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn ModelPreset>> {
        self.presets.get(name).cloned().ok_or_else(|| {
            Error::invalid(format!(
                "unknown model preset `{name}` (known: {})",
                self.names().join(", ")
            ))
        })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.presets.keys().copied().collect()
    }
}
