//! UNet++ with dense nested skips. Node `X[i][j]` sits at level `i`
//! (resolution `/2^i`); `X[i][0]` is the encoder, and every `X[i][j]` with
//! `j >= 1` fuses all `X[i][0..j]` with the upsampled `X[i+1][j-1]`.

use divseg_nn::{Conv2d, DoubleConv, Graph, ParamStore, Var};
use rand_chacha::ChaCha8Rng;

use super::{Architecture, NetworkSpec};
use crate::Result;

#[derive(Debug)]
struct NestedNode {
    up: Conv2d,
    block: DoubleConv,
}

#[derive(Debug)]
pub struct UNetPlusPlus {
    depth: usize,
    encoder: Vec<DoubleConv>,
    /// `nested[i][j - 1]` builds `X[i][j]`.
    nested: Vec<Vec<NestedNode>>,
    head: Conv2d,
}

impl UNetPlusPlus {
    pub fn new(
        spec: &NetworkSpec,
        store: &mut ParamStore,
        prefix: &str,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let depth = spec.depth;
        let mut encoder = Vec::with_capacity(depth + 1);
        let mut in_c = spec.in_channels;
        for level in 0..=depth {
            let w = spec.width(level);
            encoder.push(DoubleConv::new(store, &format!("{prefix}x{level}_0"), in_c, w, 1, rng)?);
            in_c = w;
        }
        let mut nested = Vec::with_capacity(depth);
        for level in 0..depth {
            let w = spec.width(level);
            let mut row = Vec::new();
            for j in 1..=depth - level {
                let name = format!("{prefix}x{level}_{j}");
                row.push(NestedNode {
                    up: Conv2d::new(
                        store,
                        &format!("{name}.up"),
                        spec.width(level + 1),
                        w,
                        1,
                        1,
                        true,
                        rng,
                    )?,
                    block: DoubleConv::new(store, &name, (j + 1) * w, w, 1, rng)?,
                });
            }
            nested.push(row);
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
            depth,
            encoder,
            nested,
            head,
        })
    }
}

impl Architecture for UNetPlusPlus {
    fn forward(&self, g: &mut Graph, store: &mut ParamStore, x: Var) -> Result<Var> {
        // grid[i][j] = X[i][j]
        let mut grid: Vec<Vec<Var>> = vec![Vec::new(); self.depth + 1];
        let mut h = x;
        for (level, stage) in self.encoder.iter().enumerate() {
            if level > 0 {
                h = g.max_pool2(h)?;
            }
            h = stage.forward(g, store, h)?;
            grid[level].push(h);
        }
        for j in 1..=self.depth {
            for level in 0..=self.depth - j {
                let node = &self.nested[level][j - 1];
                let below = grid[level + 1][j - 1];
                let r = node.up.forward(g, store, below)?;
                let up = g.upsample_nearest(r, 2, 2);
                let mut inputs = grid[level][..j].to_vec();
                inputs.push(up);
                let cat = g.concat(&inputs)?;
                let out = node.block.forward(g, store, cat)?;
                grid[level].push(out);
            }
        }
        let top = grid[0][self.depth];
        self.head.forward(g, store, top).map_err(Into::into)
    }
}
