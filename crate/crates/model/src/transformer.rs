use peftlab_autograd::{Graph, NodeId, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::error::{ModelError, Result};

const INIT_STD: f64 = 0.02;

/// Train/eval switch. The base model itself is deterministic either way;
/// the mode is forwarded to projection hooks so adapter dropout can key off
/// it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Replaces the plain `y = x @ W` projection for named weight matrices.
/// This is the seam low-rank adapters plug into.
pub trait LinearHook {
    fn project(
        &mut self,
        g: &mut Graph,
        weight_name: &str,
        x: NodeId,
        w: NodeId,
        mode: Mode,
    ) -> peftlab_autograd::Result<NodeId>;
}

/// Per-layer prefix key/value blocks in plain data form, each
/// `[prefix_len, d_model]` row-major. Heads are column slices of width
/// `d_model / n_heads`.
#[derive(Debug, Clone, PartialEq)]
pub struct PastKeyValues {
    pub prefix_len: usize,
    pub d_model: usize,
    /// One `(key, value)` pair per layer.
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl PastKeyValues {
    pub fn new(prefix_len: usize, d_model: usize, layers: Vec<(Vec<f64>, Vec<f64>)>) -> Result<Self> {
        let expected = prefix_len * d_model;
        for (i, (k, v)) in layers.iter().enumerate() {
            if k.len() != expected || v.len() != expected {
                return Err(ModelError::PastShapeMismatch {
                    detail: format!(
                        "layer {i}: key/value have {}/{} elements, expected {expected}",
                        k.len(),
                        v.len()
                    ),
                });
            }
        }
        Ok(Self { prefix_len, d_model, layers })
    }

    /// Inserts the blocks as frozen leaves of `g`.
    pub fn bind(&self, g: &mut Graph) -> BoundPast {
        let shape = [self.prefix_len, self.d_model];
        let layers = self
            .layers
            .iter()
            .map(|(k, v)| {
                let ik = g.constant(&shape, k.clone()).expect("validated shape");
                let iv = g.constant(&shape, v.clone()).expect("validated shape");
                (ik, iv)
            })
            .collect();
        BoundPast { prefix_len: self.prefix_len, layers }
    }

    /// The `[prefix_len, head_dim]` key/value block of one head, as copies.
    pub fn head_block(&self, layer: usize, head: usize, n_heads: usize) -> (Vec<f64>, Vec<f64>) {
        let head_dim = self.d_model / n_heads;
        let (k, v) = &self.layers[layer];
        let mut hk = Vec::with_capacity(self.prefix_len * head_dim);
        let mut hv = Vec::with_capacity(self.prefix_len * head_dim);
        for row in 0..self.prefix_len {
            let base = row * self.d_model + head * head_dim;
            hk.extend_from_slice(&k[base..base + head_dim]);
            hv.extend_from_slice(&v[base..base + head_dim]);
        }
        (hk, hv)
    }
}

/// Past key/values already inserted into a live graph. Prefix-tuning
/// training builds this directly from graph ops so gradients can flow into
/// the prefix parameters.
#[derive(Debug, Clone)]
pub struct BoundPast {
    pub prefix_len: usize,
    /// One `(key, value)` node pair per layer, each `[prefix_len, d_model]`.
    pub layers: Vec<(NodeId, NodeId)>,
}

#[derive(Debug, Clone)]
pub struct ForwardOptions {
    pub mode: Mode,
    /// Diagnostic switch: keep the past blocks in the score matrix but mask
    /// them out of every attention softmax. Used to verify that a prefix
    /// influences the model only through attention.
    pub mask_prefix: bool,
}

impl ForwardOptions {
    pub fn eval() -> Self {
        Self { mode: Mode::Eval, mask_prefix: false }
    }

    pub fn train() -> Self {
        Self { mode: Mode::Train, mask_prefix: false }
    }
}

#[derive(Debug, Clone)]
struct LayerWeights {
    wq: Tensor,
    wk: Tensor,
    wv: Tensor,
    wo: Tensor,
    w1: Tensor,
    w2: Tensor,
    ln1_gain: Tensor,
    ln1_bias: Tensor,
    ln2_gain: Tensor,
    ln2_bias: Tensor,
}

/// The toy decoder. All weights are f64 tensors addressable by stable
/// names (`layer.0.attn.wq`, ...); the output projection is the transposed
/// token embedding and contributes no extra parameters.
#[derive(Debug, Clone)]
pub struct TransformerModel {
    config: ModelConfig,
    tok_emb: Tensor,
    pos_emb: Tensor,
    layers: Vec<LayerWeights>,
    final_ln_gain: Tensor,
    final_ln_bias: Tensor,
}

impl TransformerModel {
    /// Builds a model with seeded normal weights: layer matrices at
    /// std 0.02, embeddings at std `1/sqrt(d_model)`, unit layer-norm gains
    /// and zero biases. All tensors start with `requires_grad = true`.
    ///
    /// The embedding scale matters because the output head is the tied,
    /// frozen embedding behind a final layer norm: the hidden state is
    /// unit-variance, so the embedding norm bounds every reachable logit.
    /// At 0.02 the bound is well under one nat and no adapter could fit
    /// anything; at `1/sqrt(d)` the head spans a usable logit range.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.d_model;
        let emb_std = 1.0 / (d as f64).sqrt();
        let grad = |t: Tensor| t.with_requires_grad(true);
        let tok_emb = grad(Tensor::randn(&[config.vocab_size, d], emb_std, &mut rng));
        let pos_emb = grad(Tensor::randn(&[config.max_seq_len, d], emb_std, &mut rng));
        let mut layers = Vec::with_capacity(config.n_layers);
        for _ in 0..config.n_layers {
            layers.push(LayerWeights {
                wq: grad(Tensor::randn(&[d, d], INIT_STD, &mut rng)),
                wk: grad(Tensor::randn(&[d, d], INIT_STD, &mut rng)),
                wv: grad(Tensor::randn(&[d, d], INIT_STD, &mut rng)),
                wo: grad(Tensor::randn(&[d, d], INIT_STD, &mut rng)),
                w1: grad(Tensor::randn(&[d, config.d_ff], INIT_STD, &mut rng)),
                w2: grad(Tensor::randn(&[config.d_ff, d], INIT_STD, &mut rng)),
                ln1_gain: grad(Tensor::full(&[d], 1.0)),
                ln1_bias: grad(Tensor::zeros(&[d])),
                ln2_gain: grad(Tensor::full(&[d], 1.0)),
                ln2_bias: grad(Tensor::zeros(&[d])),
            });
        }
        Ok(Self {
            config,
            tok_emb,
            pos_emb,
            layers,
            final_ln_gain: grad(Tensor::full(&[d], 1.0)),
            final_ln_bias: grad(Tensor::zeros(&[d])),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Stable (name, tensor) pairs in checkpoint order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![
            ("tok_emb".into(), &self.tok_emb),
            ("pos_emb".into(), &self.pos_emb),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("layer.{i}.attn.wq"), &l.wq));
            out.push((format!("layer.{i}.attn.wk"), &l.wk));
            out.push((format!("layer.{i}.attn.wv"), &l.wv));
            out.push((format!("layer.{i}.attn.wo"), &l.wo));
            out.push((format!("layer.{i}.ff.w1"), &l.w1));
            out.push((format!("layer.{i}.ff.w2"), &l.w2));
            out.push((format!("layer.{i}.ln1.gain"), &l.ln1_gain));
            out.push((format!("layer.{i}.ln1.bias"), &l.ln1_bias));
            out.push((format!("layer.{i}.ln2.gain"), &l.ln2_gain));
            out.push((format!("layer.{i}.ln2.bias"), &l.ln2_bias));
        }
        out.push(("final_ln.gain".into(), &self.final_ln_gain));
        out.push(("final_ln.bias".into(), &self.final_ln_bias));
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = vec![
            ("tok_emb".into(), &mut self.tok_emb),
            ("pos_emb".into(), &mut self.pos_emb),
        ];
        for (i, l) in self.layers.iter_mut().enumerate() {
            out.push((format!("layer.{i}.attn.wq"), &mut l.wq));
            out.push((format!("layer.{i}.attn.wk"), &mut l.wk));
            out.push((format!("layer.{i}.attn.wv"), &mut l.wv));
            out.push((format!("layer.{i}.attn.wo"), &mut l.wo));
            out.push((format!("layer.{i}.ff.w1"), &mut l.w1));
            out.push((format!("layer.{i}.ff.w2"), &mut l.w2));
            out.push((format!("layer.{i}.ln1.gain"), &mut l.ln1_gain));
            out.push((format!("layer.{i}.ln1.bias"), &mut l.ln1_bias));
            out.push((format!("layer.{i}.ln2.gain"), &mut l.ln2_gain));
            out.push((format!("layer.{i}.ln2.bias"), &mut l.ln2_bias));
        }
        out.push(("final_ln.gain".into(), &mut self.final_ln_gain));
        out.push(("final_ln.bias".into(), &mut self.final_ln_bias));
        out
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.named_tensors().into_iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.named_tensors_mut()
            .into_iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    /// Total parameter count by summing every tensor's element count.
    /// Matches [`count_params`] for the model's own config (tested).
    pub fn param_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Sets `requires_grad = false` on every model tensor.
    pub fn freeze(&mut self) {
        for (_, t) in self.named_tensors_mut() {
            t.set_requires_grad(false);
        }
    }

    /// Registers every weight as a leaf of `g` (tracking gradient per each
    /// tensor's `requires_grad`) and returns the bound handle used to run
    /// forward passes. The model itself is not touched, so a frozen model
    /// can be bound from many threads at once.
    pub fn bind(&self, g: &mut Graph) -> BoundModel {
        let ids = self
            .named_tensors()
            .into_iter()
            .map(|(name, t)| (name, g.leaf(t)))
            .collect();
        BoundModel { config: self.config.clone(), ids }
    }
}

/// Closed-form parameter count:
/// `vocab*d + max_seq*d + n_layers*(4*d^2 + 2*d*d_ff + 4*d) + 2*d`
/// (embeddings, per-layer attention + feed-forward + two norms, final norm;
/// the tied output projection adds nothing).
pub fn count_params(config: &ModelConfig) -> usize {
    let d = config.d_model;
    let per_layer = 4 * d * d + 2 * d * config.d_ff + 4 * d;
    config.vocab_size * d + config.max_seq_len * d + config.n_layers * per_layer + 2 * d
}

/// A model registered into one graph: weight node ids plus the forward
/// pass over them.
pub struct BoundModel {
    config: ModelConfig,
    ids: Vec<(String, NodeId)>,
}

impl BoundModel {
    pub fn node_id(&self, name: &str) -> Option<NodeId> {
        self.ids.iter().find(|(n, _)| n == name).map(|(_, id)| *id)
    }

    fn id(&self, name: &str) -> NodeId {
        self.node_id(name).expect("weight name comes from the fixed layout")
    }

    pub fn ids(&self) -> &[(String, NodeId)] {
        &self.ids
    }

    /// Redirects one weight name to a different leaf. Gradient checks use
    /// this to route a probe tensor through the forward pass in place of
    /// the model's own copy.
    pub fn override_node(&mut self, name: &str, id: NodeId) -> bool {
        match self.ids.iter_mut().find(|(n, _)| n == name) {
            Some((_, slot)) => {
                *slot = id;
                true
            }
            None => false,
        }
    }

    /// Runs the decoder over `tokens`, producing `[t, vocab]` logits.
    ///
    /// Position `i` attends to every past (prefix) position plus token
    /// positions `<= i`. With `past = None` this is plain causal attention.
    pub fn forward(
        &self,
        g: &mut Graph,
        tokens: &[u32],
        past: Option<&BoundPast>,
        opts: &ForwardOptions,
        mut hook: Option<&mut dyn LinearHook>,
    ) -> Result<NodeId> {
        let cfg = &self.config;
        let t = tokens.len();
        let p = past.map_or(0, |b| b.prefix_len);
        if t == 0 {
            return Err(ModelError::EmptyPrompt);
        }
        if t > cfg.max_seq_len || p + t > cfg.max_seq_len {
            return Err(ModelError::SequenceTooLong {
                tokens: t,
                prefix: p,
                max_seq_len: cfg.max_seq_len,
            });
        }
        if let Some(&bad) = tokens.iter().find(|&&id| id as usize >= cfg.vocab_size) {
            return Err(ModelError::TokenOutOfRange { id: bad, vocab_size: cfg.vocab_size });
        }
        if let Some(b) = past {
            if b.layers.len() != cfg.n_layers {
                return Err(ModelError::PastShapeMismatch {
                    detail: format!("{} layers of past, model has {}", b.layers.len(), cfg.n_layers),
                });
            }
            for (i, &(k, v)) in b.layers.iter().enumerate() {
                for id in [k, v] {
                    let s = g.shape(id);
                    if s != [p, cfg.d_model] {
                        return Err(ModelError::PastShapeMismatch {
                            detail: format!(
                                "layer {i}: block shape {s:?}, expected [{p}, {}]",
                                cfg.d_model
                            ),
                        });
                    }
                    let _ = v;
                }
            }
        }

        let ids_usize: Vec<usize> = tokens.iter().map(|&i| i as usize).collect();
        let positions: Vec<usize> = (0..t).collect();
        let tok = g.embedding(self.id("tok_emb"), &ids_usize)?;
        let pos = g.embedding(self.id("pos_emb"), &positions)?;
        let mut x = g.add(tok, pos)?;

        let n_heads = cfg.n_heads;
        let head_dim = cfg.head_dim();
        let scale = 1.0 / (head_dim as f64).sqrt();
        let attn_mask = causal_mask(t, p, opts.mask_prefix);

        for layer in 0..cfg.n_layers {
            let pfx = |suffix: &str| format!("layer.{layer}.{suffix}");
            let ln1 = g.layer_norm(x, self.id(&pfx("ln1.gain")), self.id(&pfx("ln1.bias")))?;
            let q = self.project(g, &pfx("attn.wq"), ln1, opts.mode, &mut hook)?;
            let k = self.project(g, &pfx("attn.wk"), ln1, opts.mode, &mut hook)?;
            let v = self.project(g, &pfx("attn.wv"), ln1, opts.mode, &mut hook)?;

            let mut head_outputs = Vec::with_capacity(n_heads);
            for h in 0..n_heads {
                let q_h = g.slice_cols(q, h * head_dim, head_dim)?;
                let mut k_h = g.slice_cols(k, h * head_dim, head_dim)?;
                let mut v_h = g.slice_cols(v, h * head_dim, head_dim)?;
                if let Some(b) = past {
                    let (pk, pv) = b.layers[layer];
                    let pk_h = g.slice_cols(pk, h * head_dim, head_dim)?;
                    let pv_h = g.slice_cols(pv, h * head_dim, head_dim)?;
                    k_h = g.concat_rows(&[pk_h, k_h])?;
                    v_h = g.concat_rows(&[pv_h, v_h])?;
                }
                let k_t = g.transpose(k_h)?;
                let scores = g.matmul(q_h, k_t)?;
                let scaled = g.scale(scores, scale)?;
                let attn = g.masked_softmax(scaled, &attn_mask)?;
                head_outputs.push(g.matmul(attn, v_h)?);
            }
            let ctx = g.concat_cols(&head_outputs)?;
            let attn_out = self.project(g, &pfx("attn.wo"), ctx, opts.mode, &mut hook)?;
            x = g.add(x, attn_out)?;

            let ln2 = g.layer_norm(x, self.id(&pfx("ln2.gain")), self.id(&pfx("ln2.bias")))?;
            let ff1 = self.project(g, &pfx("ff.w1"), ln2, opts.mode, &mut hook)?;
            let act = g.gelu(ff1)?;
            let ff2 = self.project(g, &pfx("ff.w2"), act, opts.mode, &mut hook)?;
            x = g.add(x, ff2)?;
        }

        let final_ln = g.layer_norm(x, self.id("final_ln.gain"), self.id("final_ln.bias"))?;
        let head = g.transpose(self.id("tok_emb"))?;
        Ok(g.matmul(final_ln, head)?)
    }

    fn project(
        &self,
        g: &mut Graph,
        name: &str,
        x: NodeId,
        mode: Mode,
        hook: &mut Option<&mut dyn LinearHook>,
    ) -> Result<NodeId> {
        let w = self.id(name);
        match hook {
            Some(h) => Ok(h.project(g, name, x, w, mode)?),
            None => Ok(g.matmul(x, w)?),
        }
    }
}

/// Row-major `[t, p + t]` mask: token row `i` may see all `p` past columns
/// (unless `mask_prefix`) plus token columns `<= i`.
fn causal_mask(t: usize, p: usize, mask_prefix: bool) -> Vec<bool> {
    let width = p + t;
    let mut mask = vec![false; t * width];
    for i in 0..t {
        for j in 0..width {
            let allowed = if j < p { !mask_prefix } else { j - p <= i };
            mask[i * width + j] = allowed;
        }
    }
    mask
}
