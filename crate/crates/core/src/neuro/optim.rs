use crate::neuro::Param;
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

/// SGD with heavy-ball momentum and L2 weight decay:
/// `v = momentum * v + grad + weight_decay * param; param -= lr * v`.
pub fn sgd_update<'a, F: Real>(
    params: impl IntoIterator<Item = &'a mut Param<F>>,
    cfg: &SgdConfig,
) {
    let lr = F::lit(cfg.lr);
    let mu = F::lit(cfg.momentum);
    let wd = F::lit(cfg.weight_decay);
    for p in params {
        let Param {
            value,
            grad,
            velocity,
        } = p;
        for ((w, &g), v) in value
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(velocity.data_mut())
        {
            *v = mu * *v + g + wd * *w;
            *w -= lr * *v;
        }
    }
}
