//! DeepLabv3 and DeepLabv3+.
//!
//! The encoder downsamples by pooling for at most three levels (output
//! stride 8); deeper levels keep the resolution and grow the dilation
//! instead. Atrous spatial pyramid pooling runs five parallel branches
//! (1x1, three dilated 3x3, image pooling). v3 upsamples the ASPP logits
//! directly; v3+ first fuses them with stride-2 encoder features.

use divseg_nn::{Conv2d, ConvBnRelu, DoubleConv, Graph, ParamStore, Var};
use rand_chacha::ChaCha8Rng;

use super::{Architecture, NetworkSpec};
use crate::Result;

const MAX_POOLED_LEVELS: usize = 3;
const ATROUS_RATES: [usize; 3] = [2, 4, 6];

#[derive(Debug)]
struct DilatedEncoder {
    stages: Vec<DoubleConv>,
    pooled_levels: usize,
}

impl DilatedEncoder {
    fn new(
        spec: &NetworkSpec,
        store: &mut ParamStore,
        prefix: &str,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let pooled_levels = spec.depth.min(MAX_POOLED_LEVELS);
        let mut stages = Vec::with_capacity(spec.depth + 1);
        let mut in_c = spec.in_channels;
        for level in 0..=spec.depth {
            let dilation = if level > pooled_levels {
                1 << (level - pooled_levels)
            } else {
                1
            };
            let w = spec.width(level);
            stages.push(DoubleConv::new(
                store,
                &format!("{prefix}enc{level}"),
                in_c,
                w,
                dilation,
                rng,
            )?);
            in_c = w;
        }
        Ok(Self {
            stages,
            pooled_levels,
        })
    }

    /// Features of every level.
    fn forward(&self, g: &mut Graph, store: &mut ParamStore, x: Var) -> Result<Vec<Var>> {
        let mut out = Vec::with_capacity(self.stages.len());
        let mut h = x;
        for (level, stage) in self.stages.iter().enumerate() {
            if level > 0 && level <= self.pooled_levels {
                h = g.max_pool2(h)?;
            }
            h = stage.forward(g, store, h)?;
            out.push(h);
        }
        Ok(out)
    }
}

#[derive(Debug)]
struct Aspp {
    pointwise: ConvBnRelu,
    atrous: Vec<ConvBnRelu>,
    pooling: ConvBnRelu,
    project: ConvBnRelu,
}

impl Aspp {
    fn new(
        store: &mut ParamStore,
        prefix: &str,
        in_c: usize,
        out_c: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let pointwise = ConvBnRelu::new(store, &format!("{prefix}aspp.b0"), in_c, out_c, 1, 1, rng)?;
        let atrous = ATROUS_RATES
            .iter()
            .enumerate()
            .map(|(i, &r)| {
                ConvBnRelu::new(store, &format!("{prefix}aspp.b{}", i + 1), in_c, out_c, 3, r, rng)
            })
            .collect::<divseg_nn::Result<Vec<_>>>()?;
        let pooling = ConvBnRelu::new(store, &format!("{prefix}aspp.pool"), in_c, out_c, 1, 1, rng)?;
        let project = ConvBnRelu::new(
            store,
            &format!("{prefix}aspp.project"),
            out_c * (ATROUS_RATES.len() + 2),
            out_c,
            1,
            1,
            rng,
        )?;
        Ok(Self {
            pointwise,
            atrous,
            pooling,
            project,
        })
    }

    fn forward(&self, g: &mut Graph, store: &mut ParamStore, x: Var) -> Result<Var> {
        let [_, _, h, w] = g.value(x).shape();
        let mut branches = vec![self.pointwise.forward(g, store, x)?];
        for b in &self.atrous {
            branches.push(b.forward(g, store, x)?);
        }
        let pooled = g.global_avg_pool(x);
        let pooled = self.pooling.forward(g, store, pooled)?;
        branches.push(g.upsample_nearest(pooled, h, w));
        let cat = g.concat(&branches)?;
        Ok(self.project.forward(g, store, cat)?)
    }
}

fn aspp_width(spec: &NetworkSpec) -> usize {
    4 * spec.base_width
}

#[derive(Debug)]
pub struct DeepLabV3 {
    encoder: DilatedEncoder,
    aspp: Aspp,
    refine: ConvBnRelu,
    classifier: Conv2d,
}

impl DeepLabV3 {
    pub fn new(
        spec: &NetworkSpec,
        store: &mut ParamStore,
        prefix: &str,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let encoder = DilatedEncoder::new(spec, store, prefix, rng)?;
        let a = aspp_width(spec);
        let aspp = Aspp::new(store, prefix, spec.width(spec.depth), a, rng)?;
        let refine = ConvBnRelu::new(store, &format!("{prefix}refine"), a, a, 3, 1, rng)?;
        let classifier = Conv2d::new(
            store,
            &format!("{prefix}head"),
            a,
            spec.classes,
            1,
            1,
            true,
            rng,
        )?;
        Ok(Self {
            encoder,
            aspp,
            refine,
            classifier,
        })
    }
}

impl Architecture for DeepLabV3 {
    fn forward(&self, g: &mut Graph, store: &mut ParamStore, x: Var) -> Result<Var> {
        let [_, _, h, w] = g.value(x).shape();
        let feats = self.encoder.forward(g, store, x)?;
        let y = self.aspp.forward(g, store, *feats.last().expect("depth >= 1"))?;
        let y = self.refine.forward(g, store, y)?;
        let y = self.classifier.forward(g, store, y)?;
        Ok(g.resize_bilinear(y, h, w))
    }
}

#[derive(Debug)]
pub struct DeepLabV3Plus {
    encoder: DilatedEncoder,
    aspp: Aspp,
    low_level: ConvBnRelu,
    low_level_index: usize,
    fuse: DoubleConv,
    classifier: Conv2d,
}

impl DeepLabV3Plus {
    pub fn new(
        spec: &NetworkSpec,
        store: &mut ParamStore,
        prefix: &str,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let encoder = DilatedEncoder::new(spec, store, prefix, rng)?;
        let a = aspp_width(spec);
        let aspp = Aspp::new(store, prefix, spec.width(spec.depth), a, rng)?;
        // stride-2 features when they exist below the ASPP input
        let low_level_index = if spec.depth >= 2 { 1 } else { 0 };
        let low = spec.base_width;
        let low_level = ConvBnRelu::new(
            store,
            &format!("{prefix}decoder.low"),
            spec.width(low_level_index),
            low,
            1,
            1,
            rng,
        )?;
        let fuse = DoubleConv::new(store, &format!("{prefix}decoder.fuse"), a + low, a, 1, rng)?;
        let classifier = Conv2d::new(
            store,
            &format!("{prefix}head"),
            a,
            spec.classes,
            1,
            1,
            true,
            rng,
        )?;
        Ok(Self {
            encoder,
            aspp,
            low_level,
            low_level_index,
            fuse,
            classifier,
        })
    }
}

impl Architecture for DeepLabV3Plus {
    fn forward(&self, g: &mut Graph, store: &mut ParamStore, x: Var) -> Result<Var> {
        let [_, _, h, w] = g.value(x).shape();
        let feats = self.encoder.forward(g, store, x)?;
        let y = self.aspp.forward(g, store, *feats.last().expect("depth >= 1"))?;
        let low = self.low_level.forward(g, store, feats[self.low_level_index])?;
        let [_, _, lh, lw] = g.value(low).shape();
        let y = g.resize_bilinear(y, lh, lw);
        let cat = g.concat(&[y, low])?;
        let y = self.fuse.forward(g, store, cat)?;
        let y = self.classifier.forward(g, store, y)?;
        Ok(g.resize_bilinear(y, h, w))
    }
}
