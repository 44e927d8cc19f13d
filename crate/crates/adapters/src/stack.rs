use peftlab_autograd::Tensor;
use peftlab_model::{generate, PastKeyValues, TransformerModel};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::lora::LoraAdapter;
use crate::prefix::PrefixAdapter;

/// Sets `requires_grad = false` on every base-model tensor. Adapter
/// training relies on this so a step can only move adapter parameters.
pub fn freeze_base(model: &mut TransformerModel) {
    model.freeze();
}

/// Which stage produced an adapter, plus its closing loss. Written into the
/// stack manifest by the harness.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub epochs_run: usize,
    pub final_loss: f64,
}

/// At most one prefix adapter plus at most one LoRA adapter attached to a
/// model.
#[derive(Debug, Clone, Default)]
pub struct AdapterStack {
    pub prefix: Option<PrefixAdapter>,
    pub lora: Option<LoraAdapter>,
    pub stages: Vec<StageRecord>,
}

impl AdapterStack {
    /// Trainable parameters across unfrozen adapters. For a joint stack
    /// with nothing frozen this is exactly prefix count + lora count.
    pub fn trainable_param_count(&self) -> usize {
        let mut total = 0;
        if let Some(p) = &self.prefix {
            if !p.frozen() {
                total += p.param_count();
            }
        }
        if let Some(l) = &self.lora {
            if !l.frozen() {
                total += l.param_count();
            }
        }
        total
    }

    /// Sum over both adapters regardless of freeze state; the accounting
    /// number reported for a joint run.
    pub fn total_adapter_params(&self) -> usize {
        self.prefix.as_ref().map_or(0, |p| p.param_count())
            + self.lora.as_ref().map_or(0, |l| l.param_count())
    }

    /// Mutable view of every unfrozen adapter tensor, by name.
    pub fn trainable_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = Vec::new();
        if let Some(p) = &mut self.prefix {
            if !p.frozen() {
                out.extend(p.named_tensors_mut());
            }
        }
        if let Some(l) = &mut self.lora {
            if !l.frozen() {
                out.extend(l.named_tensors_mut());
            }
        }
        out
    }

    /// Looks up any adapter tensor (frozen or not) by its qualified name.
    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        if name.starts_with("prefix.") {
            self.prefix.as_mut().and_then(|p| p.tensor_mut(name))
        } else if name.starts_with("lora.") {
            self.lora.as_mut().and_then(|l| l.tensor_mut(name))
        } else {
            None
        }
    }

    /// Prefix past in data form, evaluated once; `None` when no prefix is
    /// attached.
    pub fn past_data(&self) -> Result<Option<PastKeyValues>> {
        match &self.prefix {
            Some(p) => Ok(Some(p.past_data()?)),
            None => Ok(None),
        }
    }

    /// Greedy generation through the adapter path: prefix past is computed
    /// once and reused across steps, LoRA rides its projection hook (no
    /// dropout in eval mode).
    pub fn generate(
        &self,
        model: &TransformerModel,
        prompt: &[u32],
        max_new_tokens: usize,
    ) -> Result<Vec<u32>> {
        let past = self.past_data()?;
        let mut hook = self.lora.as_ref().map(|l| l.eval_hook());
        let hook_dyn: Option<&mut dyn peftlab_model::LinearHook> =
            hook.as_mut().map(|h| h as &mut dyn peftlab_model::LinearHook);
        Ok(generate(model, prompt, max_new_tokens, past.as_ref(), hook_dyn)?)
    }
}
