//! Feature pyramid network: the UNet encoder, a top-down pathway with 1x1
//! lateral connections, a 3x3 head on every pyramid level, and a summed
//! merge at half resolution followed by bilinear upsampling.

use divseg_nn::{Conv2d, ConvBnRelu, DoubleConv, Graph, ParamStore, Var};
use rand_chacha::ChaCha8Rng;

use super::{Architecture, NetworkSpec};
use crate::Result;

#[derive(Debug)]
pub struct Fpn {
    encoder: Vec<DoubleConv>,
    /// Laterals for levels `1..=depth`, indexed by `level - 1`.
    lateral: Vec<Conv2d>,
    heads: Vec<ConvBnRelu>,
    merge: ConvBnRelu,
    classifier: Conv2d,
}

impl Fpn {
    pub fn new(
        spec: &NetworkSpec,
        store: &mut ParamStore,
        prefix: &str,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let depth = spec.depth;
        let pyramid = 4 * spec.base_width;
        let seg = 2 * spec.base_width;
        let mut encoder = Vec::with_capacity(depth + 1);
        let mut in_c = spec.in_channels;
        for level in 0..=depth {
            let w = spec.width(level);
            encoder.push(DoubleConv::new(store, &format!("{prefix}enc{level}"), in_c, w, 1, rng)?);
            in_c = w;
        }
        let mut lateral = Vec::with_capacity(depth);
        let mut heads = Vec::with_capacity(depth);
        for level in 1..=depth {
            lateral.push(Conv2d::new(
                store,
                &format!("{prefix}lateral{level}"),
                spec.width(level),
                pyramid,
                1,
                1,
                true,
                rng,
            )?);
            heads.push(ConvBnRelu::new(
                store,
                &format!("{prefix}seg{level}"),
                pyramid,
                seg,
                3,
                1,
                rng,
            )?);
        }
        let merge = ConvBnRelu::new(store, &format!("{prefix}merge"), seg, seg, 3, 1, rng)?;
        let classifier = Conv2d::new(
            store,
            &format!("{prefix}head"),
            seg,
            spec.classes,
            1,
            1,
            true,
            rng,
        )?;
        Ok(Self {
            encoder,
            lateral,
            heads,
            merge,
            classifier,
        })
    }
}

impl Architecture for Fpn {
    fn forward(&self, g: &mut Graph, store: &mut ParamStore, x: Var) -> Result<Var> {
        let [_, _, height, width] = g.value(x).shape();
        let mut feats = Vec::with_capacity(self.encoder.len());
        let mut h = x;
        for (level, stage) in self.encoder.iter().enumerate() {
            if level > 0 {
                h = g.max_pool2(h)?;
            }
            h = stage.forward(g, store, h)?;
            feats.push(h);
        }
        let depth = self.lateral.len();
        let mut merged: Option<Var> = None;
        let mut top: Option<Var> = None;
        for level in (1..=depth).rev() {
            let lat = self.lateral[level - 1].forward(g, store, feats[level])?;
            let p = match top {
                Some(t) => {
                    let up = g.upsample_nearest(t, 2, 2);
                    g.add(lat, up)?
                }
                None => lat,
            };
            top = Some(p);
            let s = self.heads[level - 1].forward(g, store, p)?;
            let factor = 1 << (level - 1);
            let s = if factor > 1 {
                g.upsample_nearest(s, factor, factor)
            } else {
                s
            };
            merged = Some(match merged {
                Some(m) => g.add(m, s)?,
                None => s,
            });
        }
        let m = self.merge.forward(g, store, merged.expect("depth >= 1"))?;
        let logits = self.classifier.forward(g, store, m)?;
        Ok(g.resize_bilinear(logits, height, width))
    }
}
