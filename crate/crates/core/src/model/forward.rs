//! Full-sequence forward pass with an activation cache, the masked
//! cross-entropy loss and hand-derived backpropagation into the adapter
//! factors.

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};

use super::config::AdapterRole;
use super::tokenizer::{Example, Token};
use super::weights::{lit, AdaptedLinear, Scalar, Slot, Transformer};
use crate::error::{Error, Result};

const RMS_EPS: f64 = 1e-5;

/// Row-wise RMS normalization without a learned gain.
pub(crate) fn rms_norm<T: Scalar>(x: &Array2<T>) -> (Array2<T>, Array1<T>) {
    let d = lit::<T>(x.ncols() as f64);
    let eps = lit::<T>(RMS_EPS);
    let inv = x.map_axis(Axis(1), |row| {
        let ms = row.iter().fold(T::zero(), |acc, &v| acc + v * v) / d;
        T::one() / (ms + eps).sqrt()
    });
    let y = x * &inv.view().insert_axis(Axis(1));
    (y, inv)
}

fn rms_norm_backward<T: Scalar>(dy: &Array2<T>, y: &Array2<T>, inv: &Array1<T>) -> Array2<T> {
    let d = lit::<T>(y.ncols() as f64);
    let mut dx = dy.clone();
    for ((mut dx_row, y_row), &s) in dx.outer_iter_mut().zip(y.outer_iter()).zip(inv) {
        let dot = dx_row.iter().zip(&y_row).fold(T::zero(), |a, (&g, &v)| a + g * v) / d;
        Zip::from(&mut dx_row).and(&y_row).for_each(|g, &v| *g = s * (*g - v * dot));
    }
    dx
}

pub(crate) fn gelu<T: Scalar>(u: T) -> T {
    let c = lit::<T>((2.0 / std::f64::consts::PI).sqrt());
    let k = lit::<T>(0.044715);
    let half = lit::<T>(0.5);
    half * u * (T::one() + (c * (u + k * u * u * u)).tanh())
}

fn gelu_grad<T: Scalar>(u: T) -> T {
    let c = lit::<T>((2.0 / std::f64::consts::PI).sqrt());
    let k = lit::<T>(0.044715);
    let half = lit::<T>(0.5);
    let t = (c * (u + k * u * u * u)).tanh();
    half * (T::one() + t) + half * u * (T::one() - t * t) * c * (T::one() + lit::<T>(3.0) * k * u * u)
}

/// Causal softmax of `q·kᵀ·scale − slope·(i − j)` for one head, where `i`
/// is the absolute query position `t + offset` and `j` the key position.
/// Entries with `j > i` are exactly zero.
pub(crate) fn causal_probs<T: Scalar>(
    q: ArrayView2<T>,
    k: ArrayView2<T>,
    scale: T,
    slope: T,
    offset: usize,
) -> Array2<T> {
    let mut p = q.dot(&k.t());
    for (t, mut row) in p.outer_iter_mut().enumerate() {
        let visible = t + offset + 1;
        let pos = lit::<T>((t + offset) as f64);
        let mut max = T::neg_infinity();
        for (j, v) in row.slice_mut(s![..visible]).iter_mut().enumerate() {
            *v = *v * scale - slope * (pos - lit::<T>(j as f64));
            max = max.max(*v);
        }
        let mut sum = T::zero();
        for v in row.slice_mut(s![..visible]).iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.slice_mut(s![..visible]).mapv_inplace(|v| v / sum);
        row.slice_mut(s![visible..]).fill(T::zero());
    }
    p
}

/// Gradients of the loss with respect to one adapter's factors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterGrad<T> {
    pub a: Array2<T>,
    pub b: Array2<T>,
}

/// Gradients for every adapter, aligned with [`Transformer::linears`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    slots: Vec<Option<(Slot, AdapterGrad<T>)>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(model: &Transformer<T>) -> Self {
        Self {
            slots: model
                .linears()
                .map(|(slot, lin)| {
                    lin.adapter.as_ref().map(|ad| {
                        (
                            slot,
                            AdapterGrad {
                                a: Array2::zeros(ad.a.dim()),
                                b: Array2::zeros(ad.b.dim()),
                            },
                        )
                    })
                })
                .collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (Slot, &AdapterGrad<T>)> {
        self.slots.iter().flatten().map(|(s, g)| (*s, g))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (Slot, &mut AdapterGrad<T>)> {
        self.slots.iter_mut().flatten().map(|(s, g)| (*s, g))
    }

    pub fn get(&self, name: &str) -> Option<&AdapterGrad<T>> {
        self.iter().find(|(s, _)| s.name() == name).map(|(_, g)| g)
    }

    fn slot_mut(&mut self, index: usize) -> Option<&mut AdapterGrad<T>> {
        self.slots[index].as_mut().map(|(_, g)| g)
    }

    pub fn len(&self) -> usize {
        self.iter().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn add_assign(&mut self, other: &Gradients<T>) {
        for (mine, theirs) in self.slots.iter_mut().zip(&other.slots) {
            if let (Some((_, m)), Some((_, t))) = (mine, theirs) {
                m.a += &t.a;
                m.b += &t.b;
            }
        }
    }

    pub fn scale(&mut self, factor: T) {
        for (_, g) in self.iter_mut() {
            g.a.mapv_inplace(|v| v * factor);
            g.b.mapv_inplace(|v| v * factor);
        }
    }

    /// L2 norm over every gradient entry.
    pub fn global_norm(&self) -> f64 {
        self.iter()
            .flat_map(|(_, g)| g.a.iter().chain(g.b.iter()))
            .map(|v| {
                let v = v.to_f64().unwrap();
                v * v
            })
            .sum::<f64>()
            .sqrt()
    }
}

struct LinearAct<T> {
    input: Array2<T>,
    xa: Option<Array2<T>>,
}

struct LayerAct<T> {
    n1: Array2<T>,
    inv1: Array1<T>,
    xa_q: Option<Array2<T>>,
    xa_k: Option<Array2<T>>,
    xa_v: Option<Array2<T>>,
    q: Array2<T>,
    k: Array2<T>,
    v: Array2<T>,
    probs: Vec<Array2<T>>,
    out: LinearAct<T>,
    n2: Array2<T>,
    inv2: Array1<T>,
    up_xa: Option<Array2<T>>,
    pre: Array2<T>,
    down: LinearAct<T>,
}

/// Activations kept by [`Transformer::forward_with_cache`].
pub struct ForwardCache<T> {
    layers: Vec<LayerAct<T>>,
    nf: Array2<T>,
    invf: Array1<T>,
    head_xa: Option<Array2<T>>,
}

impl<T: Scalar> AdaptedLinear<T> {
    fn backward(
        &self,
        x: &Array2<T>,
        xa: Option<&Array2<T>>,
        dy: &Array2<T>,
        grad: Option<&mut AdapterGrad<T>>,
    ) -> Array2<T> {
        let mut dx = dy.dot(&self.weight.t());
        if let (Some(ad), Some(xa)) = (&self.adapter, xa) {
            let dy_bt = dy.dot(&ad.b.t());
            if let Some(g) = grad {
                g.b += &xa.t().dot(dy);
                g.a += &x.t().dot(&dy_bt);
            }
            dx += &dy_bt.dot(&ad.a.t());
        }
        dx
    }
}

impl<T: Scalar> Transformer<T> {
    pub(crate) fn check_tokens(&self, tokens: &[Token]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::InvalidArgument("empty token sequence".into()));
        }
        if tokens.len() > self.config.max_seq_len {
            return Err(Error::InvalidArgument(format!(
                "sequence of {} tokens exceeds max_seq_len {}",
                tokens.len(),
                self.config.max_seq_len
            )));
        }
        if let Some(&t) = tokens.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(Error::InvalidArgument(format!("token {t} outside the vocabulary")));
        }
        Ok(())
    }

    pub(crate) fn embed(&self, tokens: &[Token]) -> Array2<T> {
        let d = self.config.d_model;
        let mut x = Array2::zeros((tokens.len(), d));
        for (mut row, &tok) in x.outer_iter_mut().zip(tokens) {
            row.assign(&self.tok_emb.row(tok as usize));
        }
        x
    }

    /// Logits for every position (`positions × vocab`).
    pub fn forward(&self, tokens: &[Token]) -> Result<Array2<T>> {
        Ok(self.forward_with_cache(tokens)?.0)
    }

    pub fn forward_with_cache(&self, tokens: &[Token]) -> Result<(Array2<T>, ForwardCache<T>)> {
        self.check_tokens(tokens)?;
        let c = &self.config;
        let dh = c.head_dim();
        let scale = lit::<T>(1.0 / (dh as f64).sqrt());
        let mut x = self.embed(tokens);
        let mut acts = Vec::with_capacity(self.layers.len());

        for layer in &self.layers {
            let (n1, inv1) = rms_norm(&x);
            let (q, xa_q) = layer.get(AdapterRole::Query).forward(&n1);
            let (k, xa_k) = layer.get(AdapterRole::Key).forward(&n1);
            let (v, xa_v) = layer.get(AdapterRole::Value).forward(&n1);
            let mut ctx = Array2::zeros(x.raw_dim());
            let mut probs = Vec::with_capacity(c.n_heads);
            for h in 0..c.n_heads {
                let cols = s![.., h * dh..(h + 1) * dh];
                let slope = lit::<T>(c.alibi_slope(h));
                let p = causal_probs(q.slice(cols), k.slice(cols), scale, slope, 0);
                ctx.slice_mut(cols).assign(&p.dot(&v.slice(cols)));
                probs.push(p);
            }
            let (attn, out_xa) = layer.get(AdapterRole::Output).forward(&ctx);
            x += &attn;

            let (n2, inv2) = rms_norm(&x);
            let (pre, up_xa) = layer.get(AdapterRole::FfnUp).forward(&n2);
            let hidden = pre.mapv(gelu);
            let (mlp, down_xa) = layer.get(AdapterRole::FfnDown).forward(&hidden);
            x += &mlp;

            acts.push(LayerAct {
                n1,
                inv1,
                xa_q,
                xa_k,
                xa_v,
                q,
                k,
                v,
                probs,
                out: LinearAct { input: ctx, xa: out_xa },
                n2,
                inv2,
                up_xa,
                pre,
                down: LinearAct { input: hidden, xa: down_xa },
            });
        }

        let (nf, invf) = rms_norm(&x);
        let (logits, head_xa) = self.head.forward(&nf);
        Ok((
            logits,
            ForwardCache {
                layers: acts,
                nf,
                invf,
                head_xa,
            },
        ))
    }

    /// Accumulate adapter gradients of `Σ loss` given `∂loss/∂logits`.
    pub fn backward(&self, cache: &ForwardCache<T>, dlogits: &Array2<T>, grads: &mut Gradients<T>) {
        let c = &self.config;
        let dh = c.head_dim();
        let scale = lit::<T>(1.0 / (dh as f64).sqrt());
        let slot = |layer: Option<usize>, role| self.slot_index(Slot { layer, role });

        let dnf = self.head.backward(
            &cache.nf,
            cache.head_xa.as_ref(),
            dlogits,
            grads.slot_mut(slot(None, AdapterRole::Head)),
        );
        let mut dx = rms_norm_backward(&dnf, &cache.nf, &cache.invf);

        for (l, (layer, act)) in self.layers.iter().zip(&cache.layers).enumerate().rev() {
            let lin = |role: AdapterRole| layer.get(role);

            // feed-forward block
            let dhidden = lin(AdapterRole::FfnDown).backward(
                &act.down.input,
                act.down.xa.as_ref(),
                &dx,
                grads.slot_mut(slot(Some(l), AdapterRole::FfnDown)),
            );
            let dpre = Zip::from(&dhidden).and(&act.pre).map_collect(|&g, &u| g * gelu_grad(u));
            let dn2 = lin(AdapterRole::FfnUp).backward(
                &act.n2,
                act.up_xa.as_ref(),
                &dpre,
                grads.slot_mut(slot(Some(l), AdapterRole::FfnUp)),
            );
            dx += &rms_norm_backward(&dn2, &act.n2, &act.inv2);

            // attention block
            let dctx = lin(AdapterRole::Output).backward(
                &act.out.input,
                act.out.xa.as_ref(),
                &dx,
                grads.slot_mut(slot(Some(l), AdapterRole::Output)),
            );
            let mut dq = Array2::zeros(act.q.raw_dim());
            let mut dk = Array2::zeros(act.k.raw_dim());
            let mut dv = Array2::zeros(act.v.raw_dim());
            for (h, p) in act.probs.iter().enumerate() {
                let cols = s![.., h * dh..(h + 1) * dh];
                let dctx_h = dctx.slice(cols);
                let dp = dctx_h.dot(&act.v.slice(cols).t());
                dv.slice_mut(cols).assign(&p.t().dot(&dctx_h));
                let mut ds = dp;
                for (mut ds_row, p_row) in ds.outer_iter_mut().zip(p.outer_iter()) {
                    let dot = ds_row.iter().zip(&p_row).fold(T::zero(), |a, (&g, &pv)| a + g * pv);
                    Zip::from(&mut ds_row)
                        .and(&p_row)
                        .for_each(|g, &pv| *g = pv * (*g - dot) * scale);
                }
                dq.slice_mut(cols).assign(&ds.dot(&act.k.slice(cols)));
                dk.slice_mut(cols).assign(&ds.t().dot(&act.q.slice(cols)));
            }
            let mut dn1 = lin(AdapterRole::Query).backward(
                &act.n1,
                act.xa_q.as_ref(),
                &dq,
                grads.slot_mut(slot(Some(l), AdapterRole::Query)),
            );
            dn1 += &lin(AdapterRole::Key).backward(
                &act.n1,
                act.xa_k.as_ref(),
                &dk,
                grads.slot_mut(slot(Some(l), AdapterRole::Key)),
            );
            dn1 += &lin(AdapterRole::Value).backward(
                &act.n1,
                act.xa_v.as_ref(),
                &dv,
                grads.slot_mut(slot(Some(l), AdapterRole::Value)),
            );
            dx += &rms_norm_backward(&dn1, &act.n1, &act.inv1);
        }
    }

    /// Mean masked cross-entropy over a batch and its adapter gradients.
    ///
    /// The mean runs over every masked position of the batch. Per-example
    /// contributions are reduced in batch order.
    pub fn gradients(&self, batch: &[Example]) -> Result<(T, Gradients<T>)> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let mut grads = Gradients::zeros_like(self);
        let mut total = T::zero();
        let mut count = 0usize;
        for ex in batch {
            let mask = ex.mask();
            if !mask.iter().any(|&m| m) {
                continue;
            }
            let (logits, cache) = self.forward_with_cache(ex.inputs())?;
            let (sum, n, dlogits) = cross_entropy_sum_grad(&logits, ex.targets(), &mask)?;
            self.backward(&cache, &dlogits, &mut grads);
            total += sum;
            count += n;
        }
        if count == 0 {
            return Err(Error::InvalidArgument(
                "loss mask selects no positions in the batch".into(),
            ));
        }
        let inv = T::one() / lit::<T>(count as f64);
        grads.scale(inv);
        Ok((total * inv, grads))
    }

    /// Mean masked loss of a batch without gradients.
    pub fn batch_loss(&self, batch: &[Example]) -> Result<T> {
        let mut total = T::zero();
        let mut count = 0usize;
        for ex in batch {
            let mask = ex.mask();
            if !mask.iter().any(|&m| m) {
                continue;
            }
            let logits = self.forward(ex.inputs())?;
            let (sum, n, _) = cross_entropy_sum_grad(&logits, ex.targets(), &mask)?;
            total += sum;
            count += n;
        }
        if count == 0 {
            return Err(Error::InvalidArgument(
                "loss mask selects no positions in the batch".into(),
            ));
        }
        Ok(total / lit::<T>(count as f64))
    }

    /// Fraction of masked positions whose argmax equals the target, and
    /// the number of masked positions.
    pub fn masked_accuracy(&self, batch: &[Example]) -> Result<(f64, usize)> {
        let mut hit = 0usize;
        let mut count = 0usize;
        for ex in batch {
            let logits = self.forward(ex.inputs())?;
            for ((row, &target), m) in logits.outer_iter().zip(ex.targets()).zip(ex.mask()) {
                if m {
                    count += 1;
                    if argmax(row.iter().copied()) == target as usize {
                        hit += 1;
                    }
                }
            }
        }
        Ok((hit as f64 / count.max(1) as f64, count))
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(values: impl IntoIterator<Item = T>) -> usize {
    let mut best: Option<(usize, T)> = None;
    for (i, v) in values.into_iter().enumerate() {
        match best {
            Some((_, b)) if !(v > b) => {}
            _ => best = Some((i, v)),
        }
    }
    best.map_or(0, |(i, _)| i)
}

fn log_sum_exp<T: Scalar>(row: impl Iterator<Item = T> + Clone) -> T {
    let max = row.clone().fold(T::neg_infinity(), T::max);
    if max.is_infinite() {
        return max;
    }
    max + row.map(|v| (v - max).exp()).fold(T::zero(), |a, b| a + b).ln()
}

/// Sum of masked `-log softmax(logits)[target]`, the masked count, and the
/// gradient of the sum with respect to the logits.
pub(crate) fn cross_entropy_sum_grad<T: Scalar>(
    logits: &Array2<T>,
    targets: &[Token],
    mask: &[bool],
) -> Result<(T, usize, Array2<T>)> {
    if targets.len() != logits.nrows() || mask.len() != logits.nrows() {
        return Err(Error::Shape(format!(
            "{} logit rows, {} targets, {} mask entries",
            logits.nrows(),
            targets.len(),
            mask.len()
        )));
    }
    let mut dlogits = Array2::zeros(logits.raw_dim());
    let mut sum = T::zero();
    let mut count = 0;
    for (t, (row, mut grow)) in logits.outer_iter().zip(dlogits.outer_iter_mut()).enumerate() {
        if !mask[t] {
            continue;
        }
        let target = targets[t] as usize;
        if target >= row.len() {
            return Err(Error::InvalidArgument(format!("target {target} outside the vocabulary")));
        }
        let lse = log_sum_exp(row.iter().copied());
        sum += lse - row[target];
        Zip::from(&mut grow).and(&row).for_each(|g, &v| *g = (v - lse).exp());
        grow[target] -= T::one();
        count += 1;
    }
    Ok((sum, count, dlogits))
}

/// Mean over masked positions of `-log softmax(logits)[target]`.
pub fn loss<T: Scalar>(logits: &Array2<T>, targets: &[Token], mask: &[bool]) -> Result<T> {
    let (sum, count, _) = cross_entropy_sum_grad(logits, targets, mask)?;
    if count == 0 {
        return Err(Error::InvalidArgument("loss mask selects no positions".into()));
    }
    Ok(sum / lit::<T>(count as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::ModelConfig;
    use crate::model::tokenizer::encode_example;
    use rand::SeedableRng;

    fn tiny(targets: &[AdapterRole]) -> ModelConfig {
        ModelConfig {
            d_model: 8,
            n_layers: 2,
            n_heads: 2,
            d_ff: 12,
            max_seq_len: 24,
            rank: 2,
            ..ModelConfig::default()
        }
        .with_targets(targets.iter().copied())
    }

    #[test]
    fn uniform_logits_give_ln_v() {
        let v = 260;
        let logits = Array2::<f64>::zeros((3, v));
        let l = loss(&logits, &[1, 2, 3], &[true, true, true]).unwrap();
        assert!((l - (v as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_logit_gives_zero_loss() {
        let mut logits = Array2::<f32>::zeros((1, 260));
        logits[[0, 7]] = 1e30;
        assert_eq!(loss(&logits, &[7], &[true]).unwrap(), 0.0);
        logits[[0, 7]] = 50.0;
        assert!(loss(&logits, &[7], &[true]).unwrap() < 1e-12);
    }

    #[test]
    fn empty_mask_errors() {
        let logits = Array2::<f64>::zeros((2, 260));
        assert!(loss(&logits, &[1, 2], &[false, false]).is_err());
    }

    #[test]
    fn overlong_input_errors() {
        let m = Transformer::<f64>::init(&tiny(&[AdapterRole::Query]), 1).unwrap();
        assert!(m.forward(&[1; 25]).is_err());
        assert!(m.forward(&[1; 24]).is_ok());
        assert!(m.forward(&[]).is_err());
        assert!(m.forward(&[300]).is_err());
    }

    #[test]
    fn causal() {
        let m = Transformer::<f64>::init(&tiny(&[AdapterRole::Query, AdapterRole::Value]), 2).unwrap();
        let a = m.forward(&[1, 2, 3, 4, 5, 6]).unwrap();
        let b = m.forward(&[1, 2, 3, 4, 6, 5]).unwrap();
        assert_eq!(a.slice(s![..4, ..]), b.slice(s![..4, ..]));
        assert_ne!(a.row(4), b.row(4));
    }

    #[test]
    fn duplicated_batch_gives_single_gradient() {
        let mut m = Transformer::<f64>::init(&tiny(&[AdapterRole::Query, AdapterRole::Value]), 4).unwrap();
        m.randomize_b(&mut rand_chacha::ChaCha8Rng::seed_from_u64(1), 0.1);
        let ex = encode_example("abc", "de", 24);
        let (l1, g1) = m.gradients(std::slice::from_ref(&ex)).unwrap();
        let (l2, g2) = m.gradients(&[ex.clone(), ex]).unwrap();
        assert_eq!(l1, l2);
        assert_eq!(g1, g2);
    }

    #[test]
    fn fully_masked_batch_errors() {
        let m = Transformer::<f64>::init(&tiny(&[AdapterRole::Query]), 4).unwrap();
        let mut ex = encode_example("abc", "de", 24);
        ex.output_start = ex.tokens.len() - 1;
        assert!(m.gradients(&[ex]).is_err());
        assert!(m.gradients(&[]).is_err());
    }

    #[test]
    fn argmax_ties_take_lowest() {
        assert_eq!(argmax([1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax([0.0f32; 4]), 0);
    }
}
