use crate::error::Result;
use crate::graph::{Graph, NodeId};
use crate::tensor::Tensor;

/// Compares analytic gradients against central differences.
///
/// `f` must build a scalar loss from the registered input and be
/// deterministic (no fresh dropout masks between calls). Returns the max
/// over elements of `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Graph, NodeId) -> Result<NodeId>,
{
    let mut probe = x.clone();
    probe.set_requires_grad(true);

    let mut g = Graph::new();
    let id = g.register(&mut probe);
    let loss = f(&mut g, id)?;
    g.backward(loss)?;
    let analytic = g.grad(id).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; x.numel()]);

    let eval = |data: &[f64]| -> Result<f64> {
        let t = Tensor::new(x.shape(), data.to_vec())?;
        let mut g = Graph::new();
        let id = g.leaf(&t);
        let loss = f(&mut g, id)?;
        g.scalar_value(loss)
    };

    let mut worst = 0.0f64;
    let base = x.data().to_vec();
    for i in 0..base.len() {
        let mut plus = base.clone();
        let mut minus = base.clone();
        plus[i] += h;
        minus[i] -= h;
        let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * h);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    Ok(worst)
}
