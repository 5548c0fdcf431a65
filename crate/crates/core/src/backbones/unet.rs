//! Compact UNet: double-conv encoder stages with 2x2 max pooling, a
//! bottleneck, and a decoder that halves channels (1x1 conv), upsamples
//! (nearest) and fuses the matching encoder skip.

use divseg_nn::{Conv2d, DoubleConv, Graph, ParamStore, Var};
use rand_chacha::ChaCha8Rng;

use super::{Architecture, NetworkSpec};
use crate::Result;

#[derive(Debug)]
pub struct UNet {
    encoder: Vec<DoubleConv>,
    bottleneck: DoubleConv,
    reduce: Vec<Conv2d>,
    decoder: Vec<DoubleConv>,
    head: Conv2d,
}

impl UNet {
    pub fn new(
        spec: &NetworkSpec,
        store: &mut ParamStore,
        prefix: &str,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let depth = spec.depth;
        let mut encoder = Vec::with_capacity(depth);
        let mut in_c = spec.in_channels;
        for level in 0..depth {
            let w = spec.width(level);
            encoder.push(DoubleConv::new(store, &format!("{prefix}enc{level}"), in_c, w, 1, rng)?);
            in_c = w;
        }
        let bottleneck = DoubleConv::new(
            store,
            &format!("{prefix}bottleneck"),
            in_c,
            spec.width(depth),
            1,
            rng,
        )?;
        let mut reduce = Vec::with_capacity(depth);
        let mut decoder = Vec::with_capacity(depth);
        for level in (0..depth).rev() {
            let w = spec.width(level);
            reduce.push(Conv2d::new(
                store,
                &format!("{prefix}up{level}"),
                spec.width(level + 1),
                w,
                1,
                1,
                true,
                rng,
            )?);
            decoder.push(DoubleConv::new(store, &format!("{prefix}dec{level}"), 2 * w, w, 1, rng)?);
        }
        let head = Conv2d::new(
            store,
            &format!("{prefix}head"),
            spec.width(0),
            spec.classes,
            1,
            1,
            true,
            rng,
        )?;
        Ok(Self {
            encoder,
            bottleneck,
            reduce,
            decoder,
            head,
        })
    }
}

impl Architecture for UNet {
    fn forward(&self, g: &mut Graph, store: &mut ParamStore, x: Var) -> Result<Var> {
        let mut skips = Vec::with_capacity(self.encoder.len());
        let mut h = x;
        for stage in &self.encoder {
            let f = stage.forward(g, store, h)?;
            skips.push(f);
            h = g.max_pool2(f)?;
        }
        h = self.bottleneck.forward(g, store, h)?;
        for ((reduce, stage), skip) in self.reduce.iter().zip(&self.decoder).zip(skips.iter().rev()) {
            // 1x1 conv commutes with nearest upsampling; run it at low resolution.
            let r = reduce.forward(g, store, h)?;
            let up = g.upsample_nearest(r, 2, 2);
            let cat = g.concat(&[up, *skip])?;
            h = stage.forward(g, store, cat)?;
        }
        self.head.forward(g, store, h).map_err(Into::into)
    }
}
