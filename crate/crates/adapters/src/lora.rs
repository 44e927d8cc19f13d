use std::collections::BTreeMap;

use peftlab_autograd::{Graph, NodeId, Tensor};
use peftlab_model::{LinearHook, Mode, TransformerModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AdapterError, Result};

const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraConfig {
    /// Decomposition rank.
    pub r: usize,
    /// Scaling numerator; the low-rank path is scaled by `alpha / r`.
    pub alpha: f64,
    /// Dropout probability on the low-rank path input (train mode only).
    pub dropout: f64,
    /// Target specs: either full tensor names (`layer.0.attn.wq`) or
    /// per-layer suffixes (`attn.wq`) expanded across all layers.
    pub targets: Vec<String>,
    pub seed: u64,
}

impl LoraConfig {
    /// The conventional default: query and value projections in every layer.
    pub fn default_targets() -> Vec<String> {
        vec!["attn.wq".into(), "attn.wv".into()]
    }
}

/// Trainable count for target matrices of the given `(d_in, d_out)` sizes:
/// each contributes `r * (d_in + d_out)`.
pub fn lora_param_count(r: usize, target_dims: &[(usize, usize)]) -> usize {
    target_dims.iter().map(|&(d_in, d_out)| r * (d_in + d_out)).sum()
}

#[derive(Debug, Clone)]
struct LoraEntry {
    /// Dimension-reduction matrix, `[r, d_in]`, gaussian-initialized.
    a: Tensor,
    /// Dimension-expansion matrix, `[d_out, r]`, zero-initialized.
    b: Tensor,
}

/// Low-rank adaptation over a set of named base matrices.
#[derive(Debug, Clone)]
pub struct LoraAdapter {
    config: LoraConfig,
    /// Resolved full tensor name -> entry, in sorted order.
    entries: BTreeMap<String, LoraEntry>,
    merged: bool,
    frozen: bool,
}

/// Suffixes of model tensors that sit behind a matmul projection and can
/// therefore carry a low-rank side path.
const ADAPTABLE_SUFFIXES: [&str; 6] =
    ["attn.wq", "attn.wk", "attn.wv", "attn.wo", "ff.w1", "ff.w2"];

fn resolve_targets(specs: &[String], model: &TransformerModel) -> Result<Vec<String>> {
    let adaptable: Vec<String> = model
        .named_tensors()
        .iter()
        .filter(|(name, _)| ADAPTABLE_SUFFIXES.iter().any(|s| name.ends_with(s)))
        .map(|(name, _)| name.clone())
        .collect();
    let mut resolved = Vec::new();
    for spec in specs {
        let matches: Vec<&String> = if adaptable.contains(spec) {
            vec![adaptable.iter().find(|n| *n == spec).unwrap()]
        } else {
            adaptable
                .iter()
                .filter(|name| name.ends_with(&format!(".{spec}")))
                .collect()
        };
        if matches.is_empty() {
            return Err(AdapterError::UnknownTarget { name: spec.clone() });
        }
        for m in matches {
            if !resolved.contains(m) {
                resolved.push(m.clone());
            }
        }
    }
    resolved.sort();
    Ok(resolved)
}

impl LoraAdapter {
    /// Resolves the configured targets against `model` and initializes one
    /// `(A, B)` pair per matrix: `A ~ N(0, 0.02)` seeded, `B = 0`, so a
    /// fresh adapter leaves the model's function unchanged.
    pub fn new(config: LoraConfig, model: &TransformerModel) -> Result<Self> {
        let names = resolve_targets(&config.targets, model)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut entries = BTreeMap::new();
        for name in names {
            let w = model.tensor(&name).expect("resolved against this model");
            let shape = w.shape();
            let (d_in, d_out) = (shape[0], shape[1]);
            let a = Tensor::randn(&[config.r, d_in], INIT_STD, &mut rng).with_requires_grad(true);
            let b = Tensor::zeros(&[d_out, config.r]).with_requires_grad(true);
            entries.insert(name, LoraEntry { a, b });
        }
        Ok(Self { config, entries, merged: false, frozen: false })
    }

    pub(crate) fn from_parts(
        config: LoraConfig,
        tensors: BTreeMap<String, (Tensor, Tensor)>,
    ) -> Self {
        let entries = tensors
            .into_iter()
            .map(|(name, (a, b))| (name, LoraEntry { a, b }))
            .collect();
        Self { config, entries, merged: false, frozen: false }
    }

    pub fn config(&self) -> &LoraConfig {
        &self.config
    }

    /// Full names of the matrices this adapter wraps, sorted.
    pub fn target_names(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }

    pub fn scaling(&self) -> f64 {
        if self.config.r == 0 {
            0.0
        } else {
            self.config.alpha / self.config.r as f64
        }
    }

    pub fn merged(&self) -> bool {
        self.merged
    }

    pub fn frozen(&self) -> bool {
        self.frozen
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
        for (_, t) in self.named_tensors_mut() {
            t.set_requires_grad(!frozen);
        }
    }

    pub fn param_count(&self) -> usize {
        let dims: Vec<(usize, usize)> = self
            .entries
            .values()
            .map(|e| (e.a.shape()[1], e.b.shape()[0]))
            .collect();
        lora_param_count(self.config.r, &dims)
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::with_capacity(self.entries.len() * 2);
        for (name, e) in &self.entries {
            out.push((format!("lora.{name}.a"), &e.a));
            out.push((format!("lora.{name}.b"), &e.b));
        }
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::with_capacity(self.entries.len() * 2);
        for (name, e) in &mut self.entries {
            out.push((format!("lora.{name}.a"), &mut e.a));
            out.push((format!("lora.{name}.b"), &mut e.b));
        }
        out
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.named_tensors_mut().into_iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Hook for gradient-free forward passes (evaluation, generation).
    pub fn eval_hook(&self) -> EvalLora<'_> {
        EvalLora { adapter: self }
    }

    /// Registers every `A`/`B` as a leaf of `g` and returns the projection
    /// hook holding their node ids. `rng` drives the dropout masks and is
    /// only touched in train mode.
    pub fn bind<'r>(&mut self, g: &mut Graph, rng: Option<&'r mut ChaCha8Rng>) -> BoundLora<'r> {
        self.bind_with_override(g, rng, None)
    }

    /// Like [`LoraAdapter::bind`] but routes one qualified tensor name
    /// (`lora.<target>.a` / `.b`) through an existing leaf. Gradient checks
    /// probe individual parameters this way.
    pub fn bind_with_override<'r>(
        &mut self,
        g: &mut Graph,
        rng: Option<&'r mut ChaCha8Rng>,
        override_leaf: Option<(&str, NodeId)>,
    ) -> BoundLora<'r> {
        let mut ids = BTreeMap::new();
        for (name, e) in &mut self.entries {
            let reg = |g: &mut Graph, qualified: String, t: &mut Tensor| -> NodeId {
                match override_leaf {
                    Some((n, id)) if n == qualified => id,
                    _ => g.register(t),
                }
            };
            let ia = reg(g, format!("lora.{name}.a"), &mut e.a);
            let ib = reg(g, format!("lora.{name}.b"), &mut e.b);
            ids.insert(name.clone(), (ia, ib));
        }
        BoundLora {
            ids,
            r: self.config.r,
            scaling: self.scaling(),
            dropout: self.config.dropout,
            rng,
        }
    }

    /// Folds `ΔW = (alpha/r) * B·A` into each target weight of `model`.
    ///
    /// The adapter is consumed in the sense that a second merge would add
    /// the update twice, so it errors with [`AdapterError::AlreadyMerged`].
    pub fn merge(&mut self, model: &mut TransformerModel) -> Result<()> {
        if self.merged {
            return Err(AdapterError::AlreadyMerged);
        }
        let scaling = self.scaling();
        for (name, e) in &self.entries {
            let w = model
                .tensor_mut(name)
                .ok_or_else(|| AdapterError::UnknownTarget { name: name.clone() })?;
            let shape = w.shape().to_vec();
            let (d_in, d_out) = (shape[0], shape[1]);
            let r = self.config.r;
            if e.a.shape() != [r, d_in] || e.b.shape() != [d_out, r] {
                return Err(AdapterError::TensorShapeMismatch {
                    name: name.clone(),
                    expected: vec![d_in, d_out],
                    found: w.shape().to_vec(),
                });
            }
            let (va, vb) = (e.a.data(), e.b.data());
            let data = w.data_mut();
            // W[i][o] += scaling * sum_r A[r][i] * B[o][r]
            for i in 0..d_in {
                for o in 0..d_out {
                    let mut s = 0.0;
                    for k in 0..r {
                        s += va[k * d_in + i] * vb[o * r + k];
                    }
                    data[i * d_out + o] += scaling * s;
                }
            }
        }
        self.merged = true;
        Ok(())
    }
}

/// Gradient-free [`LinearHook`] for evaluation and generation. Inserts the
/// `A`/`B` values as constants into whatever graph each projection runs in,
/// so one hook serves the fresh graph built for every decoding step.
pub struct EvalLora<'a> {
    adapter: &'a LoraAdapter,
}

impl LinearHook for EvalLora<'_> {
    fn project(
        &mut self,
        g: &mut Graph,
        weight_name: &str,
        x: NodeId,
        w: NodeId,
        _mode: Mode,
    ) -> peftlab_autograd::Result<NodeId> {
        let base = g.matmul(x, w)?;
        let Some(e) = self.adapter.entries.get(weight_name) else {
            return Ok(base);
        };
        if self.adapter.config.r == 0 {
            return Ok(base);
        }
        let a = g.constant(e.a.shape(), e.a.data().to_vec())?;
        let b = g.constant(e.b.shape(), e.b.data().to_vec())?;
        let a_t = g.transpose(a)?;
        let xa = g.matmul(x, a_t)?;
        let b_t = g.transpose(b)?;
        let xab = g.matmul(xa, b_t)?;
        let scaled = g.scale(xab, self.adapter.scaling())?;
        g.add(base, scaled)
    }
}

/// [`LinearHook`] that adds the scaled low-rank path beside targeted
/// projections: `y = x·W + (alpha/r) · dropout(x)·Aᵀ·Bᵀ`.
pub struct BoundLora<'r> {
    ids: BTreeMap<String, (NodeId, NodeId)>,
    r: usize,
    scaling: f64,
    dropout: f64,
    rng: Option<&'r mut ChaCha8Rng>,
}

impl BoundLora<'_> {
    /// `(name, node)` pairs of the registered adapter parameters, for grad
    /// collection after backward.
    pub fn named_ids(&self) -> Vec<(String, NodeId)> {
        let mut out = Vec::with_capacity(self.ids.len() * 2);
        for (name, &(a, b)) in &self.ids {
            out.push((format!("lora.{name}.a"), a));
            out.push((format!("lora.{name}.b"), b));
        }
        out
    }
}

impl LinearHook for BoundLora<'_> {
    fn project(
        &mut self,
        g: &mut Graph,
        weight_name: &str,
        x: NodeId,
        w: NodeId,
        mode: Mode,
    ) -> peftlab_autograd::Result<NodeId> {
        let base = g.matmul(x, w)?;
        let Some(&(a, b)) = self.ids.get(weight_name) else {
            return Ok(base);
        };
        if self.r == 0 {
            return Ok(base); // degenerate rank: adapter is inert
        }
        let mut inp = x;
        if mode == Mode::Train && self.dropout > 0.0 {
            if let Some(rng) = self.rng.as_deref_mut() {
                inp = g.dropout(x, self.dropout, rng)?;
            }
        }
        let a_t = g.transpose(a)?;
        let xa = g.matmul(inp, a_t)?;
        let b_t = g.transpose(b)?;
        let xab = g.matmul(xa, b_t)?;
        let scaled = g.scale(xab, self.scaling)?;
        g.add(base, scaled)
    }
}
