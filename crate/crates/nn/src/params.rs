//! Named trainable parameters and non-trainable buffers.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::{NnError, Result, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BufferId(pub(crate) usize);

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

#[derive(Clone, Debug)]
pub struct Buffer {
    pub name: String,
    pub value: Tensor,
}

/// Owns every array of a network. Names are dotted paths such as
/// `enc0.conv1.weight`; the prefix before the last dot is the parameter group.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    buffers: Vec<Buffer>,
    by_name: BTreeMap<String, ParamId>,
    buffers_by_name: BTreeMap<String, BufferId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_param(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) || self.buffers_by_name.contains_key(&name) {
            return Err(NnError::Config(format!("duplicate array name `{name}`")));
        }
        let id = ParamId(self.params.len());
        let grad = Tensor::zeros(value.shape());
        self.by_name.insert(name.clone(), id);
        self.params.push(Param { name, value, grad });
        Ok(id)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor) -> Result<BufferId> {
        let name = name.into();
        if self.by_name.contains_key(&name) || self.buffers_by_name.contains_key(&name) {
            return Err(NnError::Config(format!("duplicate array name `{name}`")));
        }
        let id = BufferId(self.buffers.len());
        self.buffers_by_name.insert(name.clone(), id);
        self.buffers.push(Buffer { name, value });
        Ok(id)
    }

    /// Kaiming-normal initialised parameter (`std = sqrt(2 / fan_in)`).
    pub fn add_kaiming<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: [usize; 4],
        rng: &mut R,
    ) -> Result<ParamId> {
        let fan_in = (shape[1] * shape[2] * shape[3]).max(1);
        let std = (2.0 / fan_in as f32).sqrt();
        let normal = Normal::new(0.0f32, std).expect("finite std");
        let data = (0..shape.iter().product::<usize>())
            .map(|_| normal.sample(rng))
            .collect();
        self.add_param(name, Tensor::from_vec(shape, data)?)
    }

    #[inline]
    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    #[inline]
    pub fn param_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    #[inline]
    pub fn buffer(&self, id: BufferId) -> &Buffer {
        &self.buffers[id.0]
    }

    #[inline]
    pub fn buffer_mut(&mut self, id: BufferId) -> &mut Buffer {
        &mut self.buffers[id.0]
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn buffers(&self) -> &[Buffer] {
        &self.buffers
    }

    pub fn param_id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn buffer_id(&self, name: &str) -> Option<BufferId> {
        self.buffers_by_name.get(name).copied()
    }

    /// Total number of trainable scalars.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// Distinct parameter groups, in registration order.
    pub fn groups(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for p in &self.params {
            let g = group_of(&p.name).to_string();
            if out.last() != Some(&g) && !out.contains(&g) {
                out.push(g);
            }
        }
        out
    }

    /// Overwrite values from `other`, matching arrays by name and shape.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        for p in &mut self.params {
            let src = other
                .param_id(&p.name)
                .map(|id| &other.param(id).value)
                .ok_or_else(|| NnError::Config(format!("missing parameter `{}`", p.name)))?;
            if src.shape() != p.value.shape() {
                return Err(NnError::Shape(format!(
                    "parameter `{}` has shape {:?}, source has {:?}",
                    p.name,
                    p.value.shape(),
                    src.shape()
                )));
            }
            p.value = src.clone();
        }
        for b in &mut self.buffers {
            let src = other
                .buffer_id(&b.name)
                .map(|id| &other.buffer(id).value)
                .ok_or_else(|| NnError::Config(format!("missing buffer `{}`", b.name)))?;
            if src.shape() != b.value.shape() {
                return Err(NnError::Shape(format!(
                    "buffer `{}` has shape {:?}, source has {:?}",
                    b.name,
                    b.value.shape(),
                    src.shape()
                )));
            }
            b.value = src.clone();
        }
        Ok(())
    }
}

/// `enc0.conv1.weight` -> `enc0.conv1`.
pub fn group_of(name: &str) -> &str {
    name.rsplit_once('.').map(|(g, _)| g).unwrap_or(name)
}
