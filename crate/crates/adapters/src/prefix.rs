use peftlab_autograd::{Graph, NodeId, Tensor};
use peftlab_model::{BoundPast, ModelConfig, PastKeyValues};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AdapterError, Result};

const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefixConfig {
    /// Number of virtual tokens.
    pub pre_seq_len: usize,
    /// Width of the compact prefix table rows.
    pub d_prefix: usize,
    /// Hidden width of the reparameterization MLP.
    pub mlp_hidden: usize,
    pub seed: u64,
}

/// Closed-form trainable count of the projected (MLP-active) form:
/// table + first linear (weights and bias) + second linear (weights and
/// bias), where the output width is `n_layers * 2 * d_model`.
pub fn prefix_param_count(
    pre_seq_len: usize,
    d_prefix: usize,
    mlp_hidden: usize,
    n_layers: usize,
    d_model: usize,
) -> usize {
    let out_width = n_layers * 2 * d_model;
    pre_seq_len * d_prefix + (d_prefix * mlp_hidden + mlp_hidden) + (mlp_hidden * out_width + out_width)
}

#[derive(Debug, Clone)]
struct Mlp {
    w1: Tensor, // [d_prefix, mlp_hidden]
    b1: Tensor, // [mlp_hidden]
    w2: Tensor, // [mlp_hidden, n_layers*2*d_model]
    b2: Tensor, // [n_layers*2*d_model]
}

#[derive(Debug, Clone)]
enum Repr {
    /// Training form: compact table pushed through the MLP every forward.
    Projected { table: Tensor, mlp: Mlp },
    /// Post-bake form: the projected output frozen into a plain table of
    /// shape `[pre_seq_len, n_layers*2*d_model]`; the MLP is dropped.
    Baked { table: Tensor },
}

/// Trainable virtual-token prefix with MLP reparameterization.
///
/// The MLP output (or baked table) is split per layer into key and value
/// blocks of `[pre_seq_len, d_model]` each: columns `[l*2d, l*2d+d)` are
/// layer `l`'s keys, `[l*2d+d, (l+1)*2d)` its values.
#[derive(Debug, Clone)]
pub struct PrefixAdapter {
    config: PrefixConfig,
    n_layers: usize,
    d_model: usize,
    repr: Repr,
    frozen: bool,
}

impl PrefixAdapter {
    pub fn new(config: PrefixConfig, model_cfg: &ModelConfig) -> Result<Self> {
        if config.d_prefix == 0 || config.mlp_hidden == 0 {
            return Err(AdapterError::DimensionMismatch {
                detail: "d_prefix and mlp_hidden must be nonzero".into(),
            });
        }
        let out_width = model_cfg.n_layers * 2 * model_cfg.d_model;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let grad = |t: Tensor| t.with_requires_grad(true);
        let table = grad(Tensor::randn(&[config.pre_seq_len, config.d_prefix], INIT_STD, &mut rng));
        let mlp = Mlp {
            w1: grad(Tensor::randn(&[config.d_prefix, config.mlp_hidden], INIT_STD, &mut rng)),
            b1: grad(Tensor::zeros(&[config.mlp_hidden])),
            w2: grad(Tensor::randn(&[config.mlp_hidden, out_width], INIT_STD, &mut rng)),
            b2: grad(Tensor::zeros(&[out_width])),
        };
        Ok(Self {
            config,
            n_layers: model_cfg.n_layers,
            d_model: model_cfg.d_model,
            repr: Repr::Projected { table, mlp },
            frozen: false,
        })
    }

    /// Rebuilds an adapter from checkpoint tensors (used by the loader).
    pub(crate) fn from_parts(
        config: PrefixConfig,
        n_layers: usize,
        d_model: usize,
        table: Tensor,
        mlp: Option<(Tensor, Tensor, Tensor, Tensor)>,
    ) -> Self {
        let repr = match mlp {
            Some((w1, b1, w2, b2)) => Repr::Projected { table, mlp: Mlp { w1, b1, w2, b2 } },
            None => Repr::Baked { table },
        };
        let mut adapter = Self { config, n_layers, d_model, repr, frozen: false };
        adapter.set_frozen(matches!(adapter.repr, Repr::Baked { .. }));
        adapter
    }

    pub fn config(&self) -> &PrefixConfig {
        &self.config
    }

    pub fn pre_seq_len(&self) -> usize {
        self.config.pre_seq_len
    }

    pub fn projection_active(&self) -> bool {
        matches!(self.repr, Repr::Projected { .. })
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

    /// Trainable parameters of the current representation: the stated
    /// closed form while the MLP is active, or the baked table size after
    /// baking.
    pub fn param_count(&self) -> usize {
        match &self.repr {
            Repr::Projected { .. } => prefix_param_count(
                self.config.pre_seq_len,
                self.config.d_prefix,
                self.config.mlp_hidden,
                self.n_layers,
                self.d_model,
            ),
            Repr::Baked { table } => table.numel(),
        }
    }

    /// Parameters retained at inference time: the baked table size, per the
    /// convention that only the projected prefix survives training.
    pub fn retained_param_count(&self) -> usize {
        self.config.pre_seq_len * self.n_layers * 2 * self.d_model
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        match &self.repr {
            Repr::Projected { table, mlp } => vec![
                ("prefix.table".into(), table),
                ("prefix.mlp.w1".into(), &mlp.w1),
                ("prefix.mlp.b1".into(), &mlp.b1),
                ("prefix.mlp.w2".into(), &mlp.w2),
                ("prefix.mlp.b2".into(), &mlp.b2),
            ],
            Repr::Baked { table } => vec![("prefix.baked".into(), table)],
        }
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        match &mut self.repr {
            Repr::Projected { table, mlp } => vec![
                ("prefix.table".into(), table),
                ("prefix.mlp.w1".into(), &mut mlp.w1),
                ("prefix.mlp.b1".into(), &mut mlp.b1),
                ("prefix.mlp.w2".into(), &mut mlp.w2),
                ("prefix.mlp.b2".into(), &mut mlp.b2),
            ],
            Repr::Baked { table } => vec![("prefix.baked".into(), table)],
        }
        .into_iter()
        .map(|(n, t)| (n, &mut *t))
        .collect()
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.named_tensors_mut().into_iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Builds the per-layer past key/value blocks inside `g`, registering
    /// the adapter parameters as leaves so gradients can flow back into
    /// them. Returns the bound past plus the `(name, node)` pairs of the
    /// registered parameters.
    pub fn build_past(&mut self, g: &mut Graph) -> Result<(BoundPast, Vec<(String, NodeId)>)> {
        self.build_past_with_override(g, None)
    }

    /// Like [`PrefixAdapter::build_past`] but routes the named parameter
    /// through an existing leaf instead of registering the adapter's own
    /// copy. Gradient checks probe individual parameters this way.
    pub fn build_past_with_override(
        &mut self,
        g: &mut Graph,
        override_leaf: Option<(&str, NodeId)>,
    ) -> Result<(BoundPast, Vec<(String, NodeId)>)> {
        let d = self.d_model;
        let reg = |g: &mut Graph, name: &str, t: &mut Tensor| -> NodeId {
            match override_leaf {
                Some((n, id)) if n == name => id,
                _ => g.register(t),
            }
        };
        let (projected, ids) = match &mut self.repr {
            Repr::Projected { table, mlp } => {
                let it = reg(g, "prefix.table", table);
                let iw1 = reg(g, "prefix.mlp.w1", &mut mlp.w1);
                let ib1 = reg(g, "prefix.mlp.b1", &mut mlp.b1);
                let iw2 = reg(g, "prefix.mlp.w2", &mut mlp.w2);
                let ib2 = reg(g, "prefix.mlp.b2", &mut mlp.b2);
                let h = g.matmul(it, iw1)?;
                let h = g.add_row(h, ib1)?;
                let a = g.tanh(h)?;
                let out = g.matmul(a, iw2)?;
                let out = g.add_row(out, ib2)?;
                let ids = vec![
                    ("prefix.table".to_string(), it),
                    ("prefix.mlp.w1".to_string(), iw1),
                    ("prefix.mlp.b1".to_string(), ib1),
                    ("prefix.mlp.w2".to_string(), iw2),
                    ("prefix.mlp.b2".to_string(), ib2),
                ];
                (out, ids)
            }
            Repr::Baked { table } => {
                let it = reg(g, "prefix.baked", table);
                (it, vec![("prefix.baked".to_string(), it)])
            }
        };
        let mut layers = Vec::with_capacity(self.n_layers);
        for l in 0..self.n_layers {
            let k = g.slice_cols(projected, l * 2 * d, d)?;
            let v = g.slice_cols(projected, l * 2 * d + d, d)?;
            layers.push((k, v));
        }
        Ok((BoundPast { prefix_len: self.config.pre_seq_len, layers }, ids))
    }

    /// Evaluates the prefix into plain data form, for generation and
    /// evaluation paths where no gradient is needed. Goes through the same
    /// graph ops as [`PrefixAdapter::build_past`], so baked and projected
    /// forms agree bit for bit at bake time.
    pub fn past_data(&self) -> Result<PastKeyValues> {
        let mut scratch = self.clone();
        let mut g = Graph::new();
        let (bound, _) = scratch.build_past(&mut g)?;
        let layers = bound
            .layers
            .iter()
            .map(|&(k, v)| (g.value(k).to_vec(), g.value(v).to_vec()))
            .collect();
        Ok(PastKeyValues::new(self.config.pre_seq_len, self.d_model, layers)?)
    }

    /// Projects the table through the MLP one final time and replaces the
    /// representation with the resulting plain table. No-op when already
    /// baked.
    pub fn bake(&mut self) -> Result<()> {
        if let Repr::Projected { table, mlp } = &self.repr {
            let mut g = Graph::new();
            let it = g.leaf(table);
            let iw1 = g.leaf(&mlp.w1);
            let ib1 = g.leaf(&mlp.b1);
            let iw2 = g.leaf(&mlp.w2);
            let ib2 = g.leaf(&mlp.b2);
            let h = g.matmul(it, iw1)?;
            let h = g.add_row(h, ib1)?;
            let a = g.tanh(h)?;
            let out = g.matmul(a, iw2)?;
            let out = g.add_row(out, ib2)?;
            let out_width = self.n_layers * 2 * self.d_model;
            let baked = Tensor::new(&[self.config.pre_seq_len, out_width], g.value(out).to_vec())?;
            self.repr = Repr::Baked { table: baked };
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model_cfg() -> ModelConfig {
        ModelConfig {
            vocab_size: 260,
            d_model: 16,
            n_layers: 2,
            n_heads: 2,
            d_ff: 32,
            max_seq_len: 64,
            seed: 0,
        }
    }

    fn prefix_cfg() -> PrefixConfig {
        PrefixConfig { pre_seq_len: 4, d_prefix: 16, mlp_hidden: 32, seed: 9 }
    }

    #[test]
    fn param_count_matches_worked_example() {
        // 4*16 + (16*32 + 32) + (32*64 + 64) = 64 + 544 + 2112 = 2720
        assert_eq!(prefix_param_count(4, 16, 32, 2, 16), 2720);
        let adapter = PrefixAdapter::new(prefix_cfg(), &model_cfg()).unwrap();
        assert_eq!(adapter.param_count(), 2720);
    }

    #[test]
    fn param_count_matches_tensor_sizes() {
        let adapter = PrefixAdapter::new(prefix_cfg(), &model_cfg()).unwrap();
        let by_tensors: usize = adapter
            .named_tensors()
            .iter()
            .filter(|(_, t)| t.requires_grad())
            .map(|(_, t)| t.numel())
            .sum();
        assert_eq!(adapter.param_count(), by_tensors);
    }

    #[test]
    fn degenerate_zero_length_prefix_counts_only_the_mlp() {
        let cfg = PrefixConfig { pre_seq_len: 0, ..prefix_cfg() };
        assert_eq!(
            prefix_param_count(0, 16, 32, 2, 16),
            (16 * 32 + 32) + (32 * 64 + 64)
        );
        let adapter = PrefixAdapter::new(cfg, &model_cfg()).unwrap();
        assert_eq!(adapter.param_count(), 544 + 2112);
    }

    #[test]
    fn zero_table_and_weights_reproduce_b2() {
        let mut adapter = PrefixAdapter::new(prefix_cfg(), &model_cfg()).unwrap();
        for name in ["prefix.table", "prefix.mlp.w1", "prefix.mlp.w2"] {
            adapter.tensor_mut(name).unwrap().data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let b2: Vec<f64> = (0..64).map(|i| i as f64 * 0.25).collect();
        adapter
            .tensor_mut("prefix.mlp.b2")
            .unwrap()
            .data_mut()
            .copy_from_slice(&b2);

        let past = adapter.past_data().unwrap();
        let d = 16;
        for l in 0..2 {
            let (k, v) = &past.layers[l];
            for row in 0..4 {
                assert_eq!(&k[row * d..(row + 1) * d], &b2[l * 2 * d..l * 2 * d + d]);
                assert_eq!(&v[row * d..(row + 1) * d], &b2[l * 2 * d + d..(l + 1) * 2 * d]);
            }
        }
    }

    #[test]
    fn past_shape_contract() {
        let adapter = PrefixAdapter::new(prefix_cfg(), &model_cfg()).unwrap();
        let past = adapter.past_data().unwrap();
        assert_eq!(past.prefix_len, 4);
        assert_eq!(past.layers.len(), 2);
        for (k, v) in &past.layers {
            assert_eq!(k.len(), 4 * 16);
            assert_eq!(v.len(), 4 * 16);
        }
        // Per-head view: [n_layers][n_heads][pre_seq_len][head_dim], twice.
        let (hk, hv) = past.head_block(1, 1, 2);
        assert_eq!(hk.len(), 4 * 8);
        assert_eq!(hv.len(), 4 * 8);
    }

    #[test]
    fn baked_table_reproduces_mlp_output_bit_for_bit() {
        let mut adapter = PrefixAdapter::new(prefix_cfg(), &model_cfg()).unwrap();
        let via_mlp = adapter.past_data().unwrap();
        adapter.bake().unwrap();
        assert!(!adapter.projection_active());
        let via_baked = adapter.past_data().unwrap();
        for (a, b) in via_mlp.layers.iter().zip(&via_baked.layers) {
            assert!(a.0.iter().zip(&b.0).all(|(x, y)| x.to_bits() == y.to_bits()));
            assert!(a.1.iter().zip(&b.1).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_eq!(adapter.param_count(), adapter.retained_param_count());
    }

    #[test]
    fn freezing_toggles_requires_grad() {
        let mut adapter = PrefixAdapter::new(prefix_cfg(), &model_cfg()).unwrap();
        adapter.set_frozen(true);
        assert!(adapter.named_tensors().iter().all(|(_, t)| !t.requires_grad()));
        adapter.set_frozen(false);
        assert!(adapter.named_tensors().iter().all(|(_, t)| t.requires_grad()));
    }
}
