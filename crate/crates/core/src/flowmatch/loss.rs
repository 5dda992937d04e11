use ndarray::Array2;

use super::{interpolate, ConditionEmbedding, FlowError, ToyModel, VelocityModel};

/// `|| v(x_t | c) - (x0 - x1) ||^2` at `x_t = interpolate(x0, x1, t)`.
pub fn fm_loss<M: VelocityModel + ?Sized>(
    model: &M,
    x0: &[f64],
    x1: &[f64],
    t: f64,
    cond: &ConditionEmbedding,
) -> Result<f64, FlowError> {
    let x_t = interpolate(x0, x1, t)?;
    let v = model.velocity(&x_t, t, cond)?;
    let loss: f64 = v
        .iter()
        .zip(x0.iter().zip(x1))
        .map(|(&v, (&a, &b))| (v - (a - b)).powi(2))
        .sum();
    if !loss.is_finite() {
        return Err(FlowError::NonFinite("loss"));
    }
    Ok(loss)
}

/// Mean of [`fm_loss`] over `(x0, x1, t, cond)` items.
pub fn fm_loss_batch<M: VelocityModel + ?Sized>(
    model: &M,
    items: &[(&[f64], &[f64], f64, &ConditionEmbedding)],
) -> Result<f64, FlowError> {
    if items.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for &(x0, x1, t, c) in items {
        total += fm_loss(model, x0, x1, t, c)?;
    }
    Ok(total / items.len() as f64)
}

/// [`fm_loss`] for the toy model with its gradient over
/// [`Mlp::flat_params`](super::Mlp::flat_params).
pub fn fm_loss_and_grad(
    model: &ToyModel,
    x0: &[f64],
    x1: &[f64],
    t: f64,
    cond: &ConditionEmbedding,
) -> Result<(f64, Vec<f64>), FlowError> {
    let x_t = interpolate(x0, x1, t)?;
    model.check_inputs(&x_t, cond)?;
    let plane = model.config.pixels();
    let c = model.config.channels;
    let pixels: Vec<usize> = (0..plane).collect();
    let feats = model.features(&cond.pooled, &x_t, t, &pixels);
    let targets = Array2::from_shape_fn((plane, c), |(p, ch)| x0[ch * plane + p] - x1[ch * plane + p]);
    rows_loss_and_grad(model, feats, &targets, 1.0)
}

/// `scale * sum((net(feats) - targets)^2)` and its parameter gradient.
pub(crate) fn rows_loss_and_grad(
    model: &ToyModel,
    feats: Array2<f64>,
    targets: &Array2<f64>,
    scale: f64,
) -> Result<(f64, Vec<f64>), FlowError> {
    let trace = model.net.forward_trace(feats);
    let diff = trace.output() - targets;
    let loss = scale * diff.iter().map(|d| d * d).sum::<f64>();
    if !loss.is_finite() {
        return Err(FlowError::NonFinite("loss"));
    }
    let mut grad = vec![0.0; model.net.num_params()];
    model.net.backward(&trace, diff * (2.0 * scale), &mut grad);
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowmatch::{ClassVocab, ModelConfig};

    /// Predicts a fixed velocity regardless of input.
    struct Constant(Vec<f64>);

    impl VelocityModel for Constant {
        fn state_len(&self) -> usize {
            self.0.len()
        }
        fn velocity(&self, _: &[f64], _: f64, _: &ConditionEmbedding) -> Result<Vec<f64>, FlowError> {
            Ok(self.0.clone())
        }
    }

    #[test]
    fn loss_fixtures() {
        let c = ConditionEmbedding::empty(1);
        let x0 = [0.5, 0.25, 1.0];
        let x1 = [0.3, -0.75, 2.0];
        let perfect = Constant(vec![0.2, 1.0, -1.0]);
        assert_eq!(fm_loss(&perfect, &x0, &x1, 0.3, &c).unwrap(), 0.0);
        let zero = Constant(vec![0.0; 3]);
        assert_eq!(fm_loss(&zero, &x0, &x0, 0.7, &c).unwrap(), 0.0);
        assert_eq!(fm_loss(&zero, &[1.0, 0.0, 0.0], &[0.0; 3], 0.5, &c).unwrap(), 1.0);
        let both = [(&x0[..], &x1[..], 0.1, &c), (&[1.0, 0.0, 0.0][..], &[0.0; 3][..], 0.5, &c)];
        // zero model: |x0 - x1|^2 = 0.04 + 1 + 1, averaged with 1
        assert!((fm_loss_batch(&zero, &both).unwrap() - (2.04 + 1.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn toy_loss_agrees_with_generic_path() {
        let cfg = ModelConfig { hidden: vec![6, 6], ..ModelConfig::new(3, 3, 2, ClassVocab::new(["a"])) };
        let m = ToyModel::new(cfg, 0).unwrap();
        let x0: Vec<f64> = (0..18).map(|i| (i as f64 * 0.37).sin()).collect();
        let x1: Vec<f64> = (0..18).map(|i| (i as f64 * 0.91).cos()).collect();
        let mut c = ConditionEmbedding::empty(1);
        c.pooled = vec![1.0, 0.1, 0.2, 0.6, 0.9];
        let a = fm_loss(&m, &x0, &x1, 0.4, &c).unwrap();
        let (b, _) = fm_loss_and_grad(&m, &x0, &x1, 0.4, &c).unwrap();
        assert!((a - b).abs() < 1e-12 * a.max(1.0));
    }
}
