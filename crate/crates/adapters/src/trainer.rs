use peftlab_autograd::{AdamState, Graph};
use peftlab_model::{ForwardOptions, LinearHook, Mode, TransformerModel};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{AdapterError, Result};
use crate::lora::LoraConfig;
use crate::prefix::{PrefixAdapter, PrefixConfig};
use crate::stack::{AdapterStack, StageRecord};
use crate::LoraAdapter;

/// One training example, already shifted for next-token prediction:
/// position `i` of `input_ids` predicts `target_ids[i]`, and the loss only
/// counts positions where `loss_mask[i]` is true (answer tokens and EOS).
#[derive(Debug, Clone)]
pub struct TrainExample {
    pub input_ids: Vec<u32>,
    pub target_ids: Vec<usize>,
    pub loss_mask: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct TrainParams {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Stop once an epoch's mean loss drops below this, if set.
    pub early_stop_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Prefix,
    Lora,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Prefix => "prefix",
            Stage::Lora => "lora",
        }
    }
}

fn derive_seed(base: u64, tag: u64) -> u64 {
    // splitmix64 over base ^ tag, so sub-streams never collide.
    let mut z = (base ^ tag).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Trains one adapter stage with the base model frozen.
///
/// `stage` selects which adapter is trainable; the other one (if present)
/// is frozen for the duration. Gradients are averaged over each batch and
/// applied with Adam. Returns the per-epoch mean loss trajectory.
pub fn train_stage(
    model: &TransformerModel,
    stack: &mut AdapterStack,
    stage: Stage,
    data: &[TrainExample],
    params: &TrainParams,
) -> Result<Vec<EpochLog>> {
    if data.is_empty() {
        return Err(AdapterError::EmptyDataset);
    }
    match stage {
        Stage::Prefix => {
            let p = stack.prefix.as_mut().ok_or(AdapterError::NothingToTrain)?;
            p.set_frozen(false);
            if let Some(l) = stack.lora.as_mut() {
                l.set_frozen(true);
            }
        }
        Stage::Lora => {
            let l = stack.lora.as_mut().ok_or(AdapterError::NothingToTrain)?;
            l.set_frozen(false);
            if let Some(p) = stack.prefix.as_mut() {
                p.set_frozen(true);
            }
        }
    }
    if stack.trainable_param_count() == 0 {
        return Err(AdapterError::NothingToTrain);
    }

    let mut adam = AdamState::new(params.learning_rate);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(params.seed, 1));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(derive_seed(params.seed, 2));
    let batch_size = params.batch_size.max(1);
    let mut logs = Vec::with_capacity(params.epochs);

    for epoch in 0..params.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut shuffle_rng);

        let mut epoch_loss = 0.0;
        let mut step = 0usize;
        for batch in order.chunks(batch_size) {
            for (_, t) in stack.trainable_tensors_mut() {
                t.zero_grad();
            }
            let mut batch_loss = 0.0;
            for &idx in batch {
                let ex = &data[idx];
                let loss = run_example(model, stack, ex, &mut dropout_rng)?;
                if !loss.is_finite() {
                    return Err(AdapterError::Diverged { stage: stage.name(), epoch, step });
                }
                batch_loss += loss;
            }
            // Summed grads -> batch mean.
            let inv = 1.0 / batch.len() as f64;
            let mut named: Vec<(String, &mut peftlab_autograd::Tensor)> =
                stack.trainable_tensors_mut();
            for (_, t) in named.iter_mut() {
                t.scale_grad(inv);
            }
            adam.step(&mut named)?;
            epoch_loss += batch_loss;
            step += 1;
        }
        let mean_loss = epoch_loss / data.len() as f64;
        logs.push(EpochLog { epoch, mean_loss });
        if params.early_stop_loss.is_some_and(|t| mean_loss < t) {
            break;
        }
    }
    Ok(logs)
}

/// Forward + backward for one example; accumulates grads into the stack's
/// trainable tensors and returns the loss value.
fn run_example(
    model: &TransformerModel,
    stack: &mut AdapterStack,
    ex: &TrainExample,
    dropout_rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let mut g = Graph::new();
    let (past, prefix_ids) = match &mut stack.prefix {
        Some(p) => {
            let (bound, ids) = p.build_past(&mut g)?;
            (Some(bound), ids)
        }
        None => (None, Vec::new()),
    };
    let mut lora_ids = Vec::new();
    let loss_id = {
        let mut hook = stack.lora.as_mut().map(|l| l.bind(&mut g, Some(dropout_rng)));
        if let Some(h) = &hook {
            lora_ids = h.named_ids();
        }
        let bound = model.bind(&mut g);
        let hook_dyn: Option<&mut dyn LinearHook> =
            hook.as_mut().map(|h| h as &mut dyn LinearHook);
        let opts = ForwardOptions { mode: Mode::Train, mask_prefix: false };
        let logits = bound.forward(&mut g, &ex.input_ids, past.as_ref(), &opts, hook_dyn)?;
        g.cross_entropy(logits, &ex.target_ids, &ex.loss_mask)?
    };
    g.backward(loss_id)?;
    for (name, id) in prefix_ids.iter().chain(lora_ids.iter()) {
        if let Some(t) = stack.tensor_mut(name) {
            if t.requires_grad() {
                if let Some(grad) = g.grad(*id) {
                    let grad = grad.to_vec();
                    t.accumulate_grad(&grad)?;
                }
            }
        }
    }
    Ok(g.scalar_value(loss_id)?)
}

/// The staged procedure: train the prefix on the frozen base, bake and
/// freeze it, then train LoRA on the prefix-augmented model with the same
/// frozen base. LoRA is merged only at inference time, by the caller.
pub fn joint_finetune(
    model: &mut TransformerModel,
    data: &[TrainExample],
    prefix_cfg: &PrefixConfig,
    lora_cfg: &LoraConfig,
    prefix_params: &TrainParams,
    lora_params: &TrainParams,
) -> Result<(AdapterStack, Vec<Vec<EpochLog>>)> {
    if data.is_empty() {
        return Err(AdapterError::EmptyDataset);
    }
    crate::stack::freeze_base(model);

    let mut stack = AdapterStack {
        prefix: Some(PrefixAdapter::new(prefix_cfg.clone(), model.config())?),
        lora: None,
        stages: Vec::new(),
    };
    let logs1 = train_stage(model, &mut stack, Stage::Prefix, data, prefix_params)?;
    let prefix = stack.prefix.as_mut().expect("stage 1 installed it");
    prefix.bake()?;
    prefix.set_frozen(true);
    stack.stages.push(StageRecord {
        stage: "prefix".into(),
        epochs_run: logs1.len(),
        final_loss: logs1.last().map_or(f64::NAN, |l| l.mean_loss),
    });

    stack.lora = Some(LoraAdapter::new(lora_cfg.clone(), model)?);
    let logs2 = train_stage(model, &mut stack, Stage::Lora, data, lora_params)?;
    stack.stages.push(StageRecord {
        stage: "lora".into(),
        epochs_run: logs2.len(),
        final_loss: logs2.last().map_or(f64::NAN, |l| l.mean_loss),
    });

    Ok((stack, vec![logs1, logs2]))
}

/// Convenience used by tests and the harness: mean loss of the stack (or
/// bare model) over a dataset, eval mode, no gradient bookkeeping kept.
pub fn mean_loss(
    model: &TransformerModel,
    stack: Option<&AdapterStack>,
    data: &[TrainExample],
) -> Result<f64> {
    if data.is_empty() {
        return Err(AdapterError::EmptyDataset);
    }
    let past = match stack {
        Some(s) => s.past_data()?,
        None => None,
    };
    let mut total = 0.0;
    for ex in data {
        let mut g = Graph::new();
        let bound = model.bind(&mut g);
        let bound_past = past.as_ref().map(|p| p.bind(&mut g));
        let mut hook = stack.and_then(|s| s.lora.as_ref()).map(|l| l.eval_hook());
        let hook_dyn: Option<&mut dyn LinearHook> =
            hook.as_mut().map(|h| h as &mut dyn LinearHook);
        let logits = bound.forward(
            &mut g,
            &ex.input_ids,
            bound_past.as_ref(),
            &ForwardOptions::eval(),
            hook_dyn,
        )?;
        let loss = g.cross_entropy(logits, &ex.target_ids, &ex.loss_mask)?;
        total += g.scalar_value(loss)?;
    }
    Ok(total / data.len() as f64)
}

/// Default reparameterization width when a config leaves it unset.
pub fn default_mlp_hidden(d_prefix: usize) -> usize {
    4 * d_prefix
}
