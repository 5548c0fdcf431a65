//! Registry of segmentation network builders sharing one forward contract:
//! a batch `N x C x H x W` in, logits `N x K x H x W` out.
//!
//! Built-in architectures: `unet`, `unetpp`, `fpn`, `deeplabv3`,
//! `deeplabv3plus`. Each is a compact, randomly initialised variant sized by
//! [`NetworkSpec::depth`] and [`NetworkSpec::base_width`].

mod deeplab;
mod fpn;
mod unet;
mod unetpp;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use divseg_nn::{Graph, ParamStore, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::raster::{batch_to_logits, images_to_batch, ImageTensor, LogitMap};
use crate::triunet::{TriUNet, TriUNetSpec};
use crate::{Error, Result};

pub use deeplab::{DeepLabV3, DeepLabV3Plus};
pub use fpn::Fpn;
pub use unet::UNet;
pub use unetpp::UNetPlusPlus;

/// Identifiers of the built-in architectures.
pub const BUILTIN_ARCHS: [&str; 5] = ["unet", "unetpp", "fpn", "deeplabv3", "deeplabv3plus"];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub arch_id: String,
    pub in_channels: usize,
    pub classes: usize,
    /// Number of encoder downsampling levels.
    pub depth: usize,
    /// Channels at the first encoder level; doubles per level.
    pub base_width: usize,
    pub seed: u64,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self {
            arch_id: "unet".into(),
            in_channels: 3,
            classes: 2,
            depth: 4,
            base_width: 16,
            seed: 0,
        }
    }
}

impl NetworkSpec {
    pub fn new(arch_id: impl Into<String>) -> Self {
        Self {
            arch_id: arch_id.into(),
            ..Self::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: usize, min: usize| {
            Err(Error::Config(format!(
                "network `{}`: {what} must be at least {min}, got {v}",
                self.arch_id
            )))
        };
        if self.in_channels < 1 {
            return bad("in_channels", self.in_channels, 1);
        }
        if self.classes < 2 {
            return bad("classes", self.classes, 2);
        }
        if self.depth < 1 {
            return bad("depth", self.depth, 1);
        }
        if self.base_width < 1 {
            return bad("base_width", self.base_width, 1);
        }
        if self.depth > 10 {
            return Err(Error::Config(format!(
                "network `{}`: depth {} is unreasonably large",
                self.arch_id, self.depth
            )));
        }
        Ok(())
    }

    /// Spatial dims fed to the network must be multiples of this.
    pub fn divisor(&self) -> usize {
        1 << self.depth
    }

    /// Channels at encoder level `i`.
    pub(crate) fn width(&self, level: usize) -> usize {
        self.base_width << level
    }
}

/// A forward computation over parameters held in a [`ParamStore`].
pub trait Architecture: Send + Sync + fmt::Debug {
    fn forward(&self, g: &mut Graph, store: &mut ParamStore, x: Var) -> Result<Var>;
}

/// Creates an architecture, registering its parameters in `store` under
/// `prefix` and drawing initial values from `rng`.
pub type ArchBuilder = Arc<
    dyn Fn(&NetworkSpec, &mut ParamStore, &str, &mut ChaCha8Rng) -> Result<Box<dyn Architecture>>
        + Send
        + Sync,
>;

/// What a network was built from; stored in checkpoints to rebuild it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelSpec {
    Backbone(NetworkSpec),
    #[serde(rename = "triunet")]
    TriUNet(TriUNetSpec),
}

impl ModelSpec {
    pub fn name(&self) -> &str {
        match self {
            ModelSpec::Backbone(s) => &s.arch_id,
            ModelSpec::TriUNet(_) => "triunet",
        }
    }

    pub fn in_channels(&self) -> usize {
        match self {
            ModelSpec::Backbone(s) => s.in_channels,
            ModelSpec::TriUNet(t) => t.net_a.in_channels,
        }
    }

    pub fn classes(&self) -> usize {
        match self {
            ModelSpec::Backbone(s) => s.classes,
            ModelSpec::TriUNet(t) => t.net_c.classes,
        }
    }

    pub fn divisor(&self) -> usize {
        match self {
            ModelSpec::Backbone(s) => s.divisor(),
            ModelSpec::TriUNet(t) => t
                .net_a
                .divisor()
                .max(t.net_b.divisor())
                .max(t.net_c.divisor()),
        }
    }
}

/// A built network: structure plus the parameters it owns.
pub struct SegmentationNetwork {
    spec: ModelSpec,
    arch: Box<dyn Architecture>,
    store: ParamStore,
}

impl fmt::Debug for SegmentationNetwork {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SegmentationNetwork")
            .field("spec", &self.spec)
            .field("scalars", &self.store.num_scalars())
            .finish()
    }
}

impl SegmentationNetwork {
    pub(crate) fn from_parts(spec: ModelSpec, arch: Box<dyn Architecture>, store: ParamStore) -> Self {
        Self { spec, arch, store }
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn in_channels(&self) -> usize {
        self.spec.in_channels()
    }

    pub fn classes(&self) -> usize {
        self.spec.classes()
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Validate an `N x C x H x W` input shape against this network.
    pub fn check_input(&self, shape: [usize; 4]) -> Result<()> {
        let [n, c, h, w] = shape;
        if n == 0 {
            return Err(Error::Shape("empty batch".into()));
        }
        if c != self.in_channels() {
            return Err(Error::Shape(format!(
                "network expects {} input channels, got {c}",
                self.in_channels()
            )));
        }
        let d = self.spec.divisor();
        for (name, v) in [("height", h), ("width", w)] {
            if v == 0 || v % d != 0 {
                return Err(Error::Shape(format!(
                    "input {name} {v} is not a positive multiple of {d}"
                )));
            }
        }
        Ok(())
    }

    /// Record a forward pass on `g`; `x` must already be on the tape.
    pub fn forward_graph(&mut self, g: &mut Graph, x: Var) -> Result<Var> {
        self.check_input(g.value(x).shape())?;
        let y = self.arch.forward(g, &mut self.store, x)?;
        if !g.value(y).all_finite() {
            return Err(Error::NonFinite(format!(
                "{} produced non-finite logits",
                self.spec.name()
            )));
        }
        Ok(y)
    }

    /// Logits for a batch; `training` selects batch-norm batch statistics.
    pub fn forward(&mut self, batch: &Tensor, training: bool) -> Result<Tensor> {
        let mut g = Graph::new(training);
        let x = g.input(batch.clone());
        let y = self.forward_graph(&mut g, x)?;
        Ok(g.into_value(y))
    }

    /// Evaluation-mode logits for same-sized images.
    pub fn predict_logits(&mut self, images: &[ImageTensor]) -> Result<Vec<LogitMap>> {
        let batch = images_to_batch(images)?;
        let out = self.forward(&batch, false)?;
        batch_to_logits(&out)
    }
}

/// Architecture builders keyed by id.
#[derive(Clone, Default)]
pub struct Registry {
    builders: BTreeMap<String, ArchBuilder>,
}

impl fmt::Debug for Registry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.builders.keys()).finish()
    }
}

fn boxed<A: Architecture + 'static>(a: A) -> Box<dyn Architecture> {
    Box::new(a)
}

impl Registry {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Registry holding every built-in architecture.
    pub fn with_defaults() -> Self {
        let mut r = Self::empty();
        let add = |r: &mut Self, id: &str, b: ArchBuilder| {
            r.register_arch(id, b).expect("built-in ids are distinct")
        };
        add(
            &mut r,
            "unet",
            Arc::new(|s, st, p, rng| UNet::new(s, st, p, rng).map(boxed)),
        );
        add(
            &mut r,
            "unetpp",
            Arc::new(|s, st, p, rng| UNetPlusPlus::new(s, st, p, rng).map(boxed)),
        );
        add(
            &mut r,
            "fpn",
            Arc::new(|s, st, p, rng| Fpn::new(s, st, p, rng).map(boxed)),
        );
        add(
            &mut r,
            "deeplabv3",
            Arc::new(|s, st, p, rng| DeepLabV3::new(s, st, p, rng).map(boxed)),
        );
        add(
            &mut r,
            "deeplabv3plus",
            Arc::new(|s, st, p, rng| DeepLabV3Plus::new(s, st, p, rng).map(boxed)),
        );
        r
    }

    pub fn register_arch(&mut self, arch_id: impl Into<String>, builder: ArchBuilder) -> Result<()> {
        let id = arch_id.into();
        if self.builders.contains_key(&id) {
            return Err(Error::Config(format!(
                "architecture `{id}` is already registered"
            )));
        }
        self.builders.insert(id, builder);
        Ok(())
    }

    /// Registered ids in sorted order.
    pub fn ids(&self) -> Vec<&str> {
        self.builders.keys().map(String::as_str).collect()
    }

    pub fn contains(&self, arch_id: &str) -> bool {
        self.builders.contains_key(arch_id)
    }

    /// Build one architecture into an existing store (used for composites).
    pub(crate) fn build_into(
        &self,
        spec: &NetworkSpec,
        store: &mut ParamStore,
        prefix: &str,
    ) -> Result<Box<dyn Architecture>> {
        spec.validate()?;
        let builder = self.builders.get(&spec.arch_id).ok_or_else(|| {
            Error::Config(format!(
                "unknown architecture `{}` (registered: {})",
                spec.arch_id,
                self.ids().join(", ")
            ))
        })?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        builder(spec, store, prefix, &mut rng)
    }

    pub fn build_network(&self, spec: &NetworkSpec) -> Result<SegmentationNetwork> {
        let mut store = ParamStore::new();
        let arch = self.build_into(spec, &mut store, "")?;
        Ok(SegmentationNetwork::from_parts(
            ModelSpec::Backbone(spec.clone()),
            arch,
            store,
        ))
    }

    /// Build either a single backbone or a composite.
    pub fn build(&self, spec: &ModelSpec) -> Result<SegmentationNetwork> {
        match spec {
            ModelSpec::Backbone(s) => self.build_network(s),
            ModelSpec::TriUNet(t) => TriUNet::build(self, t),
        }
    }
}
