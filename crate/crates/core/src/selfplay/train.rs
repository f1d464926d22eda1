use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::mtp::{SearchConfig, SppoSign};
use crate::preference::{sppo_grad, sppo_loss, PreferencePair, SppoInputs};
use crate::synthlab::{Gradient, SyntheticWorld, ToyTranslator};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub eta: f64,
    pub sign: SppoSign,
    pub learning_rate: f64,
    /// Pairs per gradient step.
    pub batch_size: usize,
}

impl TrainConfig {
    pub fn from_search(cfg: &SearchConfig, learning_rate: f64, batch_size: usize) -> Self {
        Self { eta: cfg.eta, sign: cfg.sppo_sign, learning_rate, batch_size }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub pairs: usize,
    pub steps: usize,
    /// Mean loss under the frozen model, i.e. before any step.
    pub loss_before: f64,
    pub loss_after: f64,
}

fn inputs(
    world: &SyntheticWorld,
    theta: &ToyTranslator,
    pre: &[(f64, f64)],
    pairs: &[PreferencePair],
    i: usize,
) -> Result<SppoInputs> {
    let p = &pairs[i];
    Ok(SppoInputs {
        logp_theta_w: theta.logprob(world, &p.source.text, &p.chosen, &p.direction)?,
        logp_pre_w: pre[i].0,
        logp_theta_l: theta.logprob(world, &p.source.text, &p.rejected, &p.direction)?,
        logp_pre_l: pre[i].1,
        p_w: p.win_rate,
    })
}

fn mean_loss(
    world: &SyntheticWorld,
    theta: &ToyTranslator,
    pre: &[(f64, f64)],
    pairs: &[PreferencePair],
    cfg: &TrainConfig,
) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..pairs.len() {
        total += sppo_loss(&inputs(world, theta, pre, pairs, i)?, cfg.eta, cfg.sign);
    }
    Ok(total / pairs.len() as f64)
}

/// Gradient of the mean loss over `pairs[range]` with respect to the logits.
pub fn batch_gradient(
    world: &SyntheticWorld,
    theta: &ToyTranslator,
    pre: &[(f64, f64)],
    pairs: &[PreferencePair],
    range: std::ops::Range<usize>,
    cfg: &TrainConfig,
) -> Result<Gradient> {
    let scale = 1.0 / range.len() as f64;
    let mut grad = Gradient::default();
    for i in range {
        let x = inputs(world, theta, pre, pairs, i)?;
        let g = sppo_grad(&x, cfg.eta, cfg.sign);
        let p = &pairs[i];
        theta.accumulate_logprob_grad(world, &p.source.text, &p.chosen, &p.direction, g.d_theta_w * scale, &mut grad)?;
        theta.accumulate_logprob_grad(world, &p.source.text, &p.rejected, &p.direction, g.d_theta_l * scale, &mut grad)?;
    }
    Ok(grad)
}

/// One epoch of minibatch gradient descent on the mean SPPO loss, with the
/// reference policy frozen at `model`.
pub fn train_round(
    pairs: &[PreferencePair],
    world: &SyntheticWorld,
    model: &ToyTranslator,
    cfg: &TrainConfig,
) -> Result<(ToyTranslator, TrainReport)> {
    if pairs.is_empty() {
        return Ok((model.clone(), TrainReport::default()));
    }
    let pre: Vec<(f64, f64)> = pairs
        .iter()
        .map(|p| {
            Ok((
                model.logprob(world, &p.source.text, &p.chosen, &p.direction)?,
                model.logprob(world, &p.source.text, &p.rejected, &p.direction)?,
            ))
        })
        .collect::<Result<_>>()?;
    let mut theta = model.clone();
    let loss_before = mean_loss(world, &theta, &pre, pairs, cfg)?;
    let batch = cfg.batch_size.max(1);
    let mut steps = 0;
    for start in (0..pairs.len()).step_by(batch) {
        let range = start..(start + batch).min(pairs.len());
        let grad = batch_gradient(world, &theta, &pre, pairs, range, cfg)?;
        theta.apply_gradient(&grad, cfg.learning_rate);
        steps += 1;
    }
    let loss_after = mean_loss(world, &theta, &pre, pairs, cfg)?;
    Ok((theta, TrainReport { pairs: pairs.len(), steps, loss_before, loss_after }))
}
