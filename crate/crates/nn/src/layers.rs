//! Parameterised building blocks that record onto a [`Graph`].

use rand::Rng;

use crate::graph::{Graph, Var};
use crate::params::{BufferId, ParamId, ParamStore};
use crate::{Result, Tensor};

/// Square, stride-1, same-padded convolution.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub dilation: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        dilation: usize,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let weight = store.add_kaiming(
            format!("{name}.weight"),
            [out_channels, in_channels, kernel, kernel],
            rng,
        )?;
        let bias = if bias {
            Some(store.add_param(format!("{name}.bias"), Tensor::zeros([out_channels, 1, 1, 1]))?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            dilation,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        g.conv2d(store, x, self.weight, self.bias, self.dilation)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: BufferId,
    pub running_var: BufferId,
}

impl BatchNorm2d {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        let shape = [channels, 1, 1, 1];
        Ok(Self {
            gamma: store.add_param(format!("{name}.gamma"), Tensor::full(shape, 1.0))?,
            beta: store.add_param(format!("{name}.beta"), Tensor::zeros(shape))?,
            running_mean: store.add_buffer(format!("{name}.running_mean"), Tensor::zeros(shape))?,
            running_var: store.add_buffer(format!("{name}.running_var"), Tensor::full(shape, 1.0))?,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &mut ParamStore, x: Var) -> Result<Var> {
        g.batch_norm(
            store,
            x,
            self.gamma,
            self.beta,
            self.running_mean,
            self.running_var,
        )
    }
}

/// conv (no bias) -> batch norm -> ReLU.
#[derive(Clone, Debug)]
pub struct ConvBnRelu {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
}

impl ConvBnRelu {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        dilation: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::new(
                store,
                &format!("{name}.conv"),
                in_channels,
                out_channels,
                kernel,
                dilation,
                false,
                rng,
            )?,
            bn: BatchNorm2d::new(store, &format!("{name}.bn"), out_channels)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &mut ParamStore, x: Var) -> Result<Var> {
        let y = self.conv.forward(g, store, x)?;
        let y = self.bn.forward(g, store, y)?;
        Ok(g.relu(y))
    }
}

/// Two stacked 3x3 [`ConvBnRelu`] blocks, the basic UNet stage.
#[derive(Clone, Debug)]
pub struct DoubleConv {
    pub first: ConvBnRelu,
    pub second: ConvBnRelu,
}

impl DoubleConv {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        dilation: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            first: ConvBnRelu::new(
                store,
                &format!("{name}.0"),
                in_channels,
                out_channels,
                3,
                dilation,
                rng,
            )?,
            second: ConvBnRelu::new(
                store,
                &format!("{name}.1"),
                out_channels,
                out_channels,
                3,
                dilation,
                rng,
            )?,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &mut ParamStore, x: Var) -> Result<Var> {
        let y = self.first.forward(g, store, x)?;
        self.second.forward(g, store, y)
    }
}
