//! The full model bundle: backbone plus scaffolding configuration, and
//! parameter initialization across all namespaces.

use crate::backbone::{Backbone, BackboneConfig};
use crate::error::Result;
use crate::numerics::store::ParamStore;
use crate::scaffold::{Scaffolding, TextDecoderConfig, VisualProjectorConfig};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct VitalConfig {
    pub backbone: BackboneConfig,
    pub decoder: TextDecoderConfig,
    pub visual: VisualProjectorConfig,
}

impl Default for VitalConfig {
    fn default() -> Self {
        Self {
            backbone: BackboneConfig::default(),
            decoder: TextDecoderConfig::default(),
            visual: VisualProjectorConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct VitalModel {
    pub config: VitalConfig,
    pub backbone: Backbone,
    pub scaffold: Scaffolding,
}

impl VitalModel {
    pub fn new(config: VitalConfig) -> Result<Self> {
        let backbone = Backbone::new(config.backbone.clone())?;
        let scaffold = Scaffolding::new(
            config.decoder.clone(),
            config.visual.clone(),
            config.backbone.hidden,
            config.backbone.vocab,
        )?;
        Ok(Self {
            config,
            backbone,
            scaffold,
        })
    }

    /// Fresh parameters for every namespace: frozen backbone base, trainable
    /// adapters, trainable scaffolding.
    pub fn init_params<F: Real>(&self, seed: u64) -> ParamStore<F> {
        let mut store = ParamStore::new();
        self.backbone.init_params(&mut store, seed);
        self.scaffold.init_params(&mut store, seed);
        store
    }
}
