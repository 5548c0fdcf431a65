use divseg_nn::{Adam, Graph, Tensor};

use crate::backbones::SegmentationNetwork;
use crate::loss::{batch_dice_loss_grad, DiceConfig};
use crate::raster::{batch_to_logits, softmax_backward, softmax_over_classes, LabelMask, ProbMap};
use crate::{Error, Result};

/// Forward in training mode, batch Dice loss on the target channel of the
/// per-pixel softmax, backward through the whole network, one Adam update.
/// Returns the loss of the forward pass that preceded the update.
pub fn train_step(
    net: &mut SegmentationNetwork,
    batch: &Tensor,
    gts: &[LabelMask],
    dice: &DiceConfig,
    optimizer: &mut Adam,
    lr: f64,
) -> Result<f64> {
    if gts.len() != batch.batch() {
        return Err(Error::InvalidInput(format!(
            "{} masks for a batch of {}",
            gts.len(),
            batch.batch()
        )));
    }
    let mut g = Graph::new(true);
    let x = g.input(batch.clone());
    let y = net.forward_graph(&mut g, x)?;
    let logits = batch_to_logits(g.value(y))?;
    let probs = logits
        .iter()
        .map(softmax_over_classes)
        .collect::<Result<Vec<ProbMap>>>()?;
    let dg = batch_dice_loss_grad(&probs, gts, dice)?;
    if !dg.loss.is_finite() {
        return Err(Error::NonFinite(format!("loss is {}", dg.loss)));
    }
    let mut seed = Tensor::zeros(g.value(y).shape());
    for (i, (p, dp)) in probs.iter().zip(&dg.grads).enumerate() {
        let dz = softmax_backward(p, dp);
        for (s, v) in seed.item_mut(i).iter_mut().zip(&dz) {
            *s = *v as f32;
        }
    }
    let store = net.params_mut();
    store.zero_grads();
    g.backward(y, seed, store)?;
    optimizer.step(store, lr as f32);
    Ok(dg.loss)
}
