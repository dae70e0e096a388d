use ndarray::{Array2, NdFloat};
use num_traits::FromPrimitive;
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::config::{AdapterRole, ModelConfig};
use crate::error::{Error, Result};
use crate::rng::keyed_rng;

/// Floating-point element type of the model (`f32` for training, `f64`
/// for gradient checks).
pub trait Scalar: NdFloat + FromPrimitive {}

impl<T: NdFloat + FromPrimitive> Scalar for T {}

pub(crate) fn lit<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("representable constant")
}

/// Trainable low-rank factors: `ΔW = A·B` with `A: d×r` and `B: r×k`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter<T> {
    pub a: Array2<T>,
    pub b: Array2<T>,
}

impl<T: Scalar> LoraAdapter<T> {
    /// `A` small uniform keyed on `(seed, name)`, `B` zero.
    pub fn fresh(d: usize, k: usize, rank: usize, seed: u64, name: &str) -> Self {
        let mut rng = keyed_rng(seed, "adapter-init", name);
        let bound = 1.0 / (d as f64).sqrt();
        let dist = Uniform::new(-bound, bound).expect("finite bound");
        Self {
            a: Array2::from_shape_fn((d, rank), |_| lit(dist.sample(&mut rng))),
            b: Array2::zeros((rank, k)),
        }
    }

    pub fn delta(&self) -> Array2<T> {
        self.a.dot(&self.b)
    }
}

/// A frozen weight matrix, optionally with an adapter, applied as
/// `x·W + (x·A)·B`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedLinear<T> {
    pub weight: Array2<T>,
    pub adapter: Option<LoraAdapter<T>>,
}

impl<T: Scalar> AdaptedLinear<T> {
    /// Returns the output and `x·A` (kept for the backward pass).
    pub(crate) fn forward(&self, x: &Array2<T>) -> (Array2<T>, Option<Array2<T>>) {
        let mut y = x.dot(&self.weight);
        let xa = self.adapter.as_ref().map(|ad| {
            let xa = x.dot(&ad.a);
            y += &xa.dot(&ad.b);
            xa
        });
        (y, xa)
    }

    pub(crate) fn apply(&self, x: &Array2<T>) -> Array2<T> {
        self.forward(x).0
    }

    /// `W := W + A·B` (summed in double precision), then `B := 0`. Keeps `A`.
    pub fn fold(&mut self) {
        if let Some(ad) = self.adapter.as_mut() {
            let wide = |m: &Array2<T>| m.mapv(|v| v.to_f64().unwrap());
            let merged = wide(&self.weight) + wide(&ad.a).dot(&wide(&ad.b));
            self.weight = merged.mapv(lit);
            ad.b.fill(T::zero());
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    /// Indexed by [`AdapterRole::LAYER_ROLES`] order.
    pub linears: Vec<AdaptedLinear<T>>,
}

impl<T> Layer<T> {
    pub fn get(&self, role: AdapterRole) -> &AdaptedLinear<T> {
        &self.linears[role.layer_index()]
    }
}

/// The decoder-only transformer: token and position embeddings, pre-norm
/// blocks of causal multi-head attention and a GELU feed-forward, and a
/// final RMS norm followed by the vocabulary projection.
#[derive(Debug, Clone, PartialEq)]
pub struct Transformer<T> {
    pub config: ModelConfig,
    pub tok_emb: Array2<T>,
    pub layers: Vec<Layer<T>>,
    pub head: AdaptedLinear<T>,
}

/// Location of an adapted matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    pub layer: Option<usize>,
    pub role: AdapterRole,
}

impl Slot {
    pub fn name(&self) -> String {
        match self.layer {
            Some(l) => format!("layers.{l}.{}", self.role),
            None => self.role.as_str().to_string(),
        }
    }
}

impl<T: Scalar> Transformer<T> {
    /// Random base model with fresh adapters on the configured targets.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let normal = |std: f64| Normal::new(0.0, std).expect("positive std");
        let matrix = |name: &str, rows: usize, cols: usize, std: f64| -> Array2<T> {
            let mut rng = keyed_rng(seed, "base-init", name);
            let dist = normal(std);
            Array2::from_shape_fn((rows, cols), |_| lit(dist.sample(&mut rng)))
        };
        let linear = |slot: Slot| -> AdaptedLinear<T> {
            let (din, dout) = config.matrix_shape(slot.role);
            let name = slot.name();
            AdaptedLinear {
                weight: matrix(&name, din, dout, 1.0 / (din as f64).sqrt()),
                adapter: config.adapter_targets.contains(&slot.role).then(|| {
                    LoraAdapter::fresh(din, dout, config.rank, seed, &name)
                }),
            }
        };
        let layers = (0..config.n_layers)
            .map(|l| Layer {
                linears: AdapterRole::LAYER_ROLES
                    .iter()
                    .map(|&role| linear(Slot { layer: Some(l), role }))
                    .collect(),
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            tok_emb: matrix("tok_emb", config.vocab_size, d, 1.0),
            layers,
            head: linear(Slot { layer: None, role: AdapterRole::Head }),
        })
    }

    /// Every matrix in canonical order: layers first, then the head.
    pub fn linears(&self) -> impl Iterator<Item = (Slot, &AdaptedLinear<T>)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(l, layer)| {
                AdapterRole::LAYER_ROLES
                    .iter()
                    .zip(&layer.linears)
                    .map(move |(&role, lin)| (Slot { layer: Some(l), role }, lin))
            })
            .chain(std::iter::once((
                Slot { layer: None, role: AdapterRole::Head },
                &self.head,
            )))
    }

    pub fn linears_mut(&mut self) -> impl Iterator<Item = (Slot, &mut AdaptedLinear<T>)> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(l, layer)| {
                AdapterRole::LAYER_ROLES
                    .iter()
                    .zip(layer.linears.iter_mut())
                    .map(move |(&role, lin)| (Slot { layer: Some(l), role }, lin))
            })
            .chain(std::iter::once((
                Slot { layer: None, role: AdapterRole::Head },
                &mut self.head,
            )))
    }

    /// Flat index of a slot in [`Self::linears`] order.
    pub(crate) fn slot_index(&self, slot: Slot) -> usize {
        match slot.layer {
            Some(l) => l * AdapterRole::LAYER_ROLES.len() + slot.role.layer_index(),
            None => self.layers.len() * AdapterRole::LAYER_ROLES.len(),
        }
    }

    pub fn slot_count(&self) -> usize {
        self.layers.len() * AdapterRole::LAYER_ROLES.len() + 1
    }

    pub fn adapters(&self) -> impl Iterator<Item = (Slot, &LoraAdapter<T>)> {
        self.linears().filter_map(|(s, l)| l.adapter.as_ref().map(|a| (s, a)))
    }

    pub fn adapters_mut(&mut self) -> impl Iterator<Item = (Slot, &mut LoraAdapter<T>)> {
        self.linears_mut()
            .filter_map(|(s, l)| l.adapter.as_mut().map(|a| (s, a)))
    }

    /// The same base weights with every adapter removed.
    pub fn without_adapters(&self) -> Self {
        let mut out = self.clone();
        for (_, lin) in out.linears_mut() {
            lin.adapter = None;
        }
        out
    }

    /// Set every `B` to zero.
    pub fn zero_b(&mut self) {
        for (_, ad) in self.adapters_mut() {
            ad.b.fill(T::zero());
        }
    }

    /// Fold every adapter into its base matrix (`W := W + A·B`), then
    /// restart it with a fresh `A` keyed on `seed` and `B = 0`.
    pub fn merge_adapters(&mut self, seed: u64) {
        let rank = self.config.rank;
        for (slot, lin) in self.linears_mut() {
            if lin.adapter.is_some() {
                lin.fold();
                let (d, k) = lin.weight.dim();
                lin.adapter = Some(LoraAdapter::fresh(d, k, rank, seed, &slot.name()));
            }
        }
    }

    /// Element-wise conversion, e.g. `f32` weights to `f64` for checks.
    pub fn cast<U: Scalar>(&self) -> Transformer<U> {
        let conv = |m: &Array2<T>| m.mapv(|x| U::from_f64(x.to_f64().unwrap()).unwrap());
        let conv_lin = |l: &AdaptedLinear<T>| AdaptedLinear {
            weight: conv(&l.weight),
            adapter: l.adapter.as_ref().map(|a| LoraAdapter {
                a: conv(&a.a),
                b: conv(&a.b),
            }),
        };
        Transformer {
            config: self.config.clone(),
            tok_emb: conv(&self.tok_emb),
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    linears: l.linears.iter().map(conv_lin).collect(),
                })
                .collect(),
            head: conv_lin(&self.head),
        }
    }

    /// Randomize every `B` (for tests that need non-trivial adapters).
    pub fn randomize_b(&mut self, rng: &mut impl Rng, scale: f64) {
        let dist = Normal::new(0.0, scale).expect("positive scale");
        for (_, ad) in self.adapters_mut() {
            ad.b.mapv_inplace(|_| lit(dist.sample(rng)));
        }
    }

    pub fn check_shapes(&self) -> Result<()> {
        let c = &self.config;
        let bad = |what: String| Err(Error::Shape(what));
        if self.tok_emb.dim() != (c.vocab_size, c.d_model) {
            return bad(format!("tok_emb {:?}", self.tok_emb.dim()));
        }
        if self.layers.len() != c.n_layers {
            return bad(format!("{} layers, config says {}", self.layers.len(), c.n_layers));
        }
        for (slot, lin) in self.linears() {
            let (d, k) = c.matrix_shape(slot.role);
            if lin.weight.dim() != (d, k) {
                return bad(format!("{} weight {:?}", slot.name(), lin.weight.dim()));
            }
            let should_adapt = c.adapter_targets.contains(&slot.role);
            match &lin.adapter {
                Some(ad) if should_adapt => {
                    if ad.a.dim() != (d, c.rank) || ad.b.dim() != (c.rank, k) {
                        return bad(format!("{} adapter {:?}/{:?}", slot.name(), ad.a.dim(), ad.b.dim()));
                    }
                }
                None if !should_adapt => {}
                _ => return bad(format!("{} adapter presence disagrees with config", slot.name())),
            }
        }
        Ok(())
    }
}
