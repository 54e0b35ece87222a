//! Layer-stack descriptions, named presets, and their construction into
//! monolithic, local, or bottom/top split networks.

mod build;
mod presets;
mod topology;

pub use build::{
    build_local_model, build_model, split_model, BuildOptions, FragmentRole, ModelFragment,
    SplitModel,
};
pub use presets::{Family, ModelPreset, PresetRegistry};
pub use topology::{LayerSpec, SkipKind, TopologySpec};
