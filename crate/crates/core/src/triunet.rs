//! TriUNet: two networks run side by side on the same input, their raw
//! logits are concatenated along channels, and a third network maps the
//! concatenation to the final logits. The three parts form one model and
//! train together from a single loss.

use divseg_nn::{Adam, Graph, ParamStore, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::backbones::{Architecture, ModelSpec, NetworkSpec, Registry, SegmentationNetwork};
use crate::loss::DiceConfig;
use crate::pipeline::train_step;
use crate::raster::LabelMask;
use crate::{Error, Result};

/// Parameter-name prefixes of the three parts.
pub const SUBNETS: [&str; 3] = ["net_a", "net_b", "net_c"];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriUNetSpec {
    pub net_a: NetworkSpec,
    pub net_b: NetworkSpec,
    pub net_c: NetworkSpec,
}

impl TriUNetSpec {
    /// Three UNets shaped like `template`; seeds are `seed`, `seed + 1`,
    /// `seed + 2` so the parallel pair starts from different weights.
    pub fn from_template(template: &NetworkSpec) -> Self {
        let seed = template.seed;
        let unet = |s: u64| NetworkSpec {
            arch_id: "unet".into(),
            seed: s,
            ..template.clone()
        };
        let net_a = unet(seed);
        let net_b = unet(seed.wrapping_add(1));
        let net_c = NetworkSpec {
            in_channels: net_a.classes + net_b.classes,
            ..unet(seed.wrapping_add(2))
        };
        Self {
            net_a,
            net_b,
            net_c,
        }
    }

    /// Channel arithmetic between the three parts.
    pub fn validate(&self) -> Result<()> {
        for s in [&self.net_a, &self.net_b, &self.net_c] {
            s.validate()?;
        }
        if self.net_a.in_channels != self.net_b.in_channels {
            return Err(Error::Config(format!(
                "net_b.in_channels: expected {} (same as net_a), got {}",
                self.net_a.in_channels, self.net_b.in_channels
            )));
        }
        let expected = self.net_a.classes + self.net_b.classes;
        if self.net_c.in_channels != expected {
            return Err(Error::Config(format!(
                "net_c.in_channels: expected {expected} (net_a.classes {} + net_b.classes {}), got {}",
                self.net_a.classes, self.net_b.classes, self.net_c.in_channels
            )));
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct TriUNet {
    net_a: Box<dyn Architecture>,
    net_b: Box<dyn Architecture>,
    net_c: Box<dyn Architecture>,
}

impl TriUNet {
    pub fn build(registry: &Registry, spec: &TriUNetSpec) -> Result<SegmentationNetwork> {
        spec.validate()?;
        let mut store = ParamStore::new();
        let net_a = registry.build_into(&spec.net_a, &mut store, "net_a.")?;
        let net_b = registry.build_into(&spec.net_b, &mut store, "net_b.")?;
        let net_c = registry.build_into(&spec.net_c, &mut store, "net_c.")?;
        Ok(SegmentationNetwork::from_parts(
            ModelSpec::TriUNet(spec.clone()),
            Box::new(TriUNet {
                net_a,
                net_b,
                net_c,
            }),
            store,
        ))
    }

    /// Forward returning `(V1, V2, logits)`.
    pub fn forward_parts(
        &self,
        g: &mut Graph,
        store: &mut ParamStore,
        x: Var,
    ) -> Result<(Var, Var, Var)> {
        let v1 = self.net_a.forward(g, store, x)?;
        let v2 = self.net_b.forward(g, store, x)?;
        let cat = g.concat(&[v1, v2])?;
        let out = self.net_c.forward(g, store, cat)?;
        Ok((v1, v2, out))
    }
}

impl Architecture for TriUNet {
    fn forward(&self, g: &mut Graph, store: &mut ParamStore, x: Var) -> Result<Var> {
        Ok(self.forward_parts(g, store, x)?.2)
    }
}

/// Build a TriUNet with the default registry.
pub fn build_triunet(spec: &TriUNetSpec) -> Result<SegmentationNetwork> {
    TriUNet::build(&Registry::with_defaults(), spec)
}

/// Which part a parameter belongs to, from its name.
pub fn subnet_of(param_name: &str) -> Option<&'static str> {
    SUBNETS
        .iter()
        .copied()
        .find(|s| param_name.strip_prefix(s).is_some_and(|r| r.starts_with('.')))
}

/// One optimisation step of the whole composite from a single Dice loss.
/// Returns the loss evaluated at the pre-step forward pass.
pub fn end_to_end_step(
    net: &mut SegmentationNetwork,
    batch: &Tensor,
    gts: &[LabelMask],
    dice: &DiceConfig,
    optimizer: &mut Adam,
    lr: f64,
) -> Result<f64> {
    train_step(net, batch, gts, dice, optimizer, lr)
}
