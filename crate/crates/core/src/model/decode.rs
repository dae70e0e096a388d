//! Greedy decoding with a key/value cache.

use ndarray::{s, Array1, Array2};

use super::config::AdapterRole;
use super::forward::{argmax, causal_probs, rms_norm};
use super::tokenizer::{Token, EOS};
use super::weights::{lit, Scalar, Transformer};
use crate::error::{Error, Result};

/// Keys and values of every processed position, per layer.
pub struct KvCache<T> {
    keys: Vec<Array2<T>>,
    values: Vec<Array2<T>>,
    len: usize,
}

impl<T: Scalar> KvCache<T> {
    pub fn new(model: &Transformer<T>) -> Self {
        let shape = (model.config.max_seq_len, model.config.d_model);
        Self {
            keys: (0..model.layers.len()).map(|_| Array2::zeros(shape)).collect(),
            values: (0..model.layers.len()).map(|_| Array2::zeros(shape)).collect(),
            len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

impl<T: Scalar> Transformer<T> {
    /// Run `tokens` after the cached prefix and return logits of the last
    /// new position.
    pub fn extend(&self, cache: &mut KvCache<T>, tokens: &[Token]) -> Result<Array1<T>> {
        self.check_tokens(tokens)?;
        let offset = cache.len;
        let end = offset + tokens.len();
        if end > self.config.max_seq_len {
            return Err(Error::InvalidArgument(format!(
                "sequence of {end} tokens exceeds max_seq_len {}",
                self.config.max_seq_len
            )));
        }
        let dh = self.config.head_dim();
        let scale = lit::<T>(1.0 / (dh as f64).sqrt());
        let mut x = self.embed(tokens);

        for (l, layer) in self.layers.iter().enumerate() {
            let (n1, _) = rms_norm(&x);
            let q = layer.get(AdapterRole::Query).apply(&n1);
            cache.keys[l]
                .slice_mut(s![offset..end, ..])
                .assign(&layer.get(AdapterRole::Key).apply(&n1));
            cache.values[l]
                .slice_mut(s![offset..end, ..])
                .assign(&layer.get(AdapterRole::Value).apply(&n1));
            let mut ctx = Array2::zeros(x.raw_dim());
            for h in 0..self.config.n_heads {
                let cols = h * dh..(h + 1) * dh;
                let k = cache.keys[l].slice(s![..end, cols.clone()]);
                let v = cache.values[l].slice(s![..end, cols.clone()]);
                let slope = lit::<T>(self.config.alibi_slope(h));
                let p = causal_probs(q.slice(s![.., cols.clone()]), k, scale, slope, offset);
                ctx.slice_mut(s![.., cols]).assign(&p.dot(&v));
            }
            x += &layer.get(AdapterRole::Output).apply(&ctx);
            let (n2, _) = rms_norm(&x);
            let hidden = layer.get(AdapterRole::FfnUp).apply(&n2).mapv(super::forward::gelu);
            x += &layer.get(AdapterRole::FfnDown).apply(&hidden);
        }
        cache.len = end;

        let last = x.slice(s![x.nrows() - 1.., ..]).to_owned();
        let (nf, _) = rms_norm(&last);
        Ok(self.head.apply(&nf).row(0).to_owned())
    }

    /// Greedy continuation of `prompt`. Stops after `max_new` tokens, at
    /// `EOS` (not included in the result) or at `max_seq_len`. Ties go to
    /// the lowest token id.
    pub fn greedy_decode(&self, prompt: &[Token], max_new: usize) -> Result<Vec<Token>> {
        self.check_tokens(prompt)?;
        let mut out = Vec::new();
        if max_new == 0 {
            return Ok(out);
        }
        let mut cache = KvCache::new(self);
        let mut logits = self.extend(&mut cache, prompt)?;
        loop {
            let next = argmax(logits.iter().copied()) as Token;
            if next == EOS {
                break;
            }
            out.push(next);
            if out.len() >= max_new || prompt.len() + out.len() >= self.config.max_seq_len {
                break;
            }
            logits = self.extend(&mut cache, &[next])?;
        }
        Ok(out)
    }
}
