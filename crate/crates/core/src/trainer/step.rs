use crate::error::{Error, Result};
use crate::model::{Gradients, Scalar, Transformer};
use crate::model::AdapterGrad;

use super::config::OptimizerKind;

/// `A ← A − η_A·G_A`, `B ← B − η_B·G_B` for every adapter. Base weights are
/// not touched.
pub fn lora_plus_step<T: Scalar>(
    model: &mut Transformer<T>,
    grads: &Gradients<T>,
    eta_a: T,
    eta_b: T,
) -> Result<()> {
    let mut pairs = Vec::new();
    {
        let mut adapters = model.adapters_mut();
        let mut gs = grads.iter();
        loop {
            match (adapters.next(), gs.next()) {
                (None, None) => break,
                (Some((slot, ad)), Some((gslot, g))) => {
                    if slot != gslot || ad.a.dim() != g.a.dim() || ad.b.dim() != g.b.dim() {
                        return Err(Error::Shape(format!(
                            "gradient for {} does not match adapter {}",
                            gslot.name(),
                            slot.name()
                        )));
                    }
                    pairs.push((ad, g));
                }
                _ => return Err(Error::Shape("gradient count differs from adapter count".into())),
            }
        }
    }
    for (ad, g) in pairs {
        ad.a.zip_mut_with(&g.a, |w, &d| *w = *w - eta_a * d);
        ad.b.zip_mut_with(&g.b, |w, &d| *w = *w - eta_b * d);
    }
    Ok(())
}

/// Rescale `grads` so its global norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut Gradients<T>, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm {
        grads.scale(T::from_f64(max_norm / norm).unwrap());
    }
    norm
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Per-stage optimizer state.
pub struct Optimizer<T> {
    kind: OptimizerKind,
    moments: Option<(Gradients<T>, Gradients<T>)>,
    t: i32,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind, model: &Transformer<T>) -> Self {
        let moments = match kind {
            OptimizerKind::Sgd => None,
            OptimizerKind::Adam => Some((Gradients::zeros_like(model), Gradients::zeros_like(model))),
        };
        Self { kind, moments, t: 0 }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn apply(&mut self, model: &mut Transformer<T>, grads: &Gradients<T>, eta_a: T, eta_b: T) -> Result<()> {
        let Some((m, v)) = self.moments.as_mut() else {
            return lora_plus_step(model, grads, eta_a, eta_b);
        };
        self.t += 1;
        let c = |x: f64| T::from_f64(x).unwrap();
        let (b1, b2) = (c(BETA1), c(BETA2));
        let corr1 = c(1.0 - BETA1.powi(self.t));
        let corr2 = c(1.0 - BETA2.powi(self.t));
        let mut direction = grads.clone();
        let rows = m.iter_mut().zip(v.iter_mut()).zip(direction.iter_mut());
        for (((_, m), (_, v)), (_, d)) in rows {
            let update = |m: &mut ndarray::Array2<T>, v: &mut ndarray::Array2<T>, d: &mut ndarray::Array2<T>| {
                ndarray::Zip::from(m).and(v).and(d).for_each(|m, v, d| {
                    *m = b1 * *m + (T::one() - b1) * *d;
                    *v = b2 * *v + (T::one() - b2) * *d * *d;
                    *d = (*m / corr1) / ((*v / corr2).sqrt() + c(ADAM_EPS));
                });
            };
            let AdapterGrad { a: ma, b: mb } = m;
            let AdapterGrad { a: va, b: vb } = v;
            update(ma, va, &mut d.a);
            update(mb, vb, &mut d.b);
        }
        lora_plus_step(model, &direction, eta_a, eta_b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{encode_example, AdapterRole, ModelConfig};
    use ndarray::array;

    fn tiny() -> Transformer<f64> {
        let cfg = ModelConfig {
            d_model: 4,
            n_layers: 1,
            n_heads: 1,
            d_ff: 4,
            max_seq_len: 8,
            rank: 1,
            ..ModelConfig::default()
        }
        .with_targets([AdapterRole::Query]);
        Transformer::init(&cfg, 1).unwrap()
    }

    fn set_grads(model: &Transformer<f64>, ga: f64, gb: f64) -> Gradients<f64> {
        let mut g = Gradients::zeros_like(model);
        for (_, x) in g.iter_mut() {
            x.a.fill(ga);
            x.b.fill(gb);
        }
        g
    }

    #[test]
    fn zero_gradients_leave_adapters() {
        let mut m = tiny();
        let before = m.clone();
        let g = set_grads(&m, 0.0, 0.0);
        lora_plus_step(&mut m, &g, 0.1, 1.0).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn single_entry_substitution() {
        let mut m = tiny();
        {
            let (_, ad) = m.adapters_mut().next().unwrap();
            ad.a = array![[1.0], [1.0], [1.0], [1.0]];
        }
        let g = set_grads(&m, 2.0, 0.0);
        lora_plus_step(&mut m, &g, 0.1, 0.1).unwrap();
        let (_, ad) = m.adapters().next().unwrap();
        assert!(ad.a.iter().all(|&v| (v - 0.8).abs() < 1e-15));
    }

    #[test]
    fn ratio_four() {
        let mut m = tiny();
        let before = m.clone();
        let g = set_grads(&m, 1.0, 1.0);
        lora_plus_step(&mut m, &g, 1e-3, 4.0 * 1e-3).unwrap();
        let (_, a0) = before.adapters().next().unwrap();
        let (_, a1) = m.adapters().next().unwrap();
        for (x, y) in a1.a.iter().zip(&a0.a) {
            assert!((x - y + 1e-3).abs() < 1e-15);
        }
        for (x, y) in a1.b.iter().zip(&a0.b) {
            assert!((x - y + 4e-3).abs() < 1e-15);
        }
        assert_eq!(m.layers[0].linears[0].weight, before.layers[0].linears[0].weight);
    }

    #[test]
    fn mismatched_gradients_rejected() {
        let mut m = tiny();
        let other = tiny().without_adapters();
        let g = Gradients::zeros_like(&other);
        assert!(lora_plus_step(&mut m, &g, 0.1, 0.1).is_err());
    }

    #[test]
    fn clipping_caps_norm() {
        let m = tiny();
        let mut g = set_grads(&m, 3.0, 4.0);
        let before = g.global_norm();
        assert_eq!(clip_global_norm(&mut g, 1.0), before);
        assert!((g.global_norm() - 1.0).abs() < 1e-12);
        let mut small = set_grads(&m, 1e-3, 0.0);
        let copy = small.clone();
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small, copy);
    }

    #[test]
    fn adam_first_step_moves_by_rate() {
        let mut m = tiny();
        let ex = encode_example("ab", "c", 8);
        let (_, g) = m.gradients(&[ex]).unwrap();
        let before = m.clone();
        let mut opt = Optimizer::new(OptimizerKind::Adam, &m);
        opt.apply(&mut m, &g, 0.01, 0.01).unwrap();
        let (_, a0) = before.adapters().next().unwrap();
        let (_, a1) = m.adapters().next().unwrap();
        let (_, gr) = g.iter().next().unwrap();
        let mut moved = 0;
        for ((x, y), gv) in a1.b.iter().zip(&a0.b).zip(&gr.b) {
            if gv.abs() > 1e-4 {
                assert!(((y - x) - 0.01 * gv.signum()).abs() < 1e-6);
                moved += 1;
            }
        }
        assert!(moved > 0);
    }
}
