//! On-disk checkpoints.
//!
//! A checkpoint is a directory holding `meta.toml` and a weights file in
//! the `DSNARR01` array format. `meta.toml` keys:
//!
//! | key          | meaning                                            |
//! |--------------|----------------------------------------------------|
//! | `arch_id`    | model name (`unet`, ..., `triunet`)                |
//! | `epoch`      | 1-based epoch the weights come from                |
//! | `train_loss` | mean training loss of that epoch                   |
//! | `working_size` | input side length used in training (optional)    |
//! | `weights`    | weights file name, relative to the directory       |
//! | `[model]`    | full model spec, tagged by `kind`                  |
//! | `[validation]` | target-class metrics on the validation split     |
//!
//! Array names are the parameter and buffer names of the network, e.g.
//! `enc0.0.conv.weight`; TriUNet names carry a `net_a.`, `net_b.` or
//! `net_c.` prefix.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use divseg_nn::{read_arrays, write_arrays, NamedArray};
use serde::{Deserialize, Serialize};

use crate::backbones::{ModelSpec, Registry, SegmentationNetwork};
use crate::metrics::ClassMetrics;
use crate::{Error, Result};

pub const META_FILE: &str = "meta.toml";
pub const WEIGHTS_FILE: &str = "weights.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub arch_id: String,
    pub epoch: usize,
    pub train_loss: f64,
    pub working_size: Option<usize>,
    pub weights: String,
    pub model: ModelSpec,
    pub validation: Option<ClassMetrics>,
}

/// A saved checkpoint: its directory plus metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub dir: PathBuf,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn save(
        dir: impl AsRef<Path>,
        net: &SegmentationNetwork,
        epoch: usize,
        train_loss: f64,
        validation: Option<ClassMetrics>,
        working_size: Option<usize>,
    ) -> Result<Self> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let store = net.params();
        let arrays: Vec<NamedArray> = store
            .params()
            .iter()
            .map(|p| NamedArray {
                name: p.name.clone(),
                tensor: p.value.clone(),
            })
            .chain(store.buffers().iter().map(|b| NamedArray {
                name: b.name.clone(),
                tensor: b.value.clone(),
            }))
            .collect();
        let wpath = dir.join(WEIGHTS_FILE);
        let f = File::create(&wpath).map_err(|e| Error::io(&wpath, e))?;
        write_arrays(BufWriter::new(f), &arrays).map_err(|e| match e {
            divseg_nn::NnError::Io(io) => Error::io(&wpath, io),
            other => Error::from(other),
        })?;
        let meta = CheckpointMeta {
            arch_id: net.spec().name().to_string(),
            epoch,
            train_loss,
            working_size,
            weights: WEIGHTS_FILE.to_string(),
            model: net.spec().clone(),
            validation,
        };
        let text = toml::to_string(&meta).map_err(|e| Error::Internal(e.to_string()))?;
        let mpath = dir.join(META_FILE);
        std::fs::write(&mpath, text).map_err(|e| Error::io(&mpath, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            meta,
        })
    }

    pub fn read_meta(dir: impl AsRef<Path>) -> Result<CheckpointMeta> {
        let path = dir.as_ref().join(META_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        toml::from_str(&text).map_err(|e| Error::decode(&path, e.to_string()))
    }

    /// Rebuild the network described by the metadata and fill its weights.
    pub fn load(dir: impl AsRef<Path>, registry: &Registry) -> Result<(SegmentationNetwork, Self)> {
        let dir = dir.as_ref();
        let meta = Self::read_meta(dir)?;
        let mut net = registry.build(&meta.model)?;
        let wpath = dir.join(&meta.weights);
        let f = File::open(&wpath).map_err(|e| Error::io(&wpath, e))?;
        let arrays = read_arrays(BufReader::new(f))
            .map_err(|e| Error::decode(&wpath, e.to_string()))?;
        let mut by_name: BTreeMap<String, NamedArray> =
            arrays.into_iter().map(|a| (a.name.clone(), a)).collect();
        let store = net.params_mut();
        let mut take = |name: &str, shape: [usize; 4]| -> Result<divseg_nn::Tensor> {
            let a = by_name
                .remove(name)
                .ok_or_else(|| Error::decode(&wpath, format!("missing array `{name}`")))?;
            if a.tensor.shape() != shape {
                return Err(Error::decode(
                    &wpath,
                    format!(
                        "array `{name}` has shape {:?}, network expects {shape:?}",
                        a.tensor.shape()
                    ),
                ));
            }
            Ok(a.tensor)
        };
        for p in store.params_mut() {
            p.value = take(&p.name, p.value.shape())?;
        }
        let buffer_names: Vec<(String, [usize; 4])> = store
            .buffers()
            .iter()
            .map(|b| (b.name.clone(), b.value.shape()))
            .collect();
        for (name, shape) in buffer_names {
            let id = store.buffer_id(&name).expect("listed buffer");
            store.buffer_mut(id).value = take(&name, shape)?;
        }
        if let Some(extra) = by_name.keys().next() {
            return Err(Error::decode(
                &wpath,
                format!("unexpected array `{extra}` for a {}", meta.arch_id),
            ));
        }
        Ok((
            net,
            Self {
                dir: dir.to_path_buf(),
                meta,
            },
        ))
    }

    pub fn load_network(dir: impl AsRef<Path>, registry: &Registry) -> Result<SegmentationNetwork> {
        Ok(Self::load(dir, registry)?.0)
    }
}
