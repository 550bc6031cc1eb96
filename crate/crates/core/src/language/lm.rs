use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Standard deviation of the token, position and CLS embeddings at init.
pub const EMBED_INIT_STD: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LmConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub max_context: usize,
    pub vocab_size: usize,
}

impl LmConfig {
    pub fn toy(vocab_size: usize) -> Self {
        Self {
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            ffn_dim: 128,
            max_context: 256,
            vocab_size,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.ffn_dim == 0 || self.max_context == 0 {
            return Err(Error::invalid("language model sizes must be positive"));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::invalid(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.n_heads
            )));
        }
        if self.vocab_size <= super::vocab::UNK {
            return Err(Error::invalid("vocabulary must hold at least the special tokens"));
        }
        Ok(())
    }
}

struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    fn normal<T: Scalar>(&mut self, shape: &[usize], std: f64) -> Tensor<T> {
        let d = Normal::new(0.0, std).expect("positive std");
        let n = shape.iter().product();
        let v = (0..n).map(|_| T::from_f64_lossy(d.sample(&mut self.rng))).collect();
        Tensor::new(shape, v).expect("shape")
    }

    fn linear<T: Scalar>(&mut self, store: &mut ParamStore<T>, name: &str, fan_in: usize, fan_out: usize) -> Result<()> {
        let w = self.normal(&[fan_in, fan_out], 1.0 / (fan_in as f64).sqrt());
        store.insert_param(format!("{name}.weight"), w)?;
        store.insert_param(format!("{name}.bias"), Tensor::zeros(&[fan_out]))?;
        Ok(())
    }
}

fn layer_norm_params<T: Scalar>(store: &mut ParamStore<T>, name: &str, d: usize) -> Result<()> {
    store.insert_param(format!("{name}.weight"), Tensor::ones(&[d]))?;
    store.insert_param(format!("{name}.bias"), Tensor::zeros(&[d]))?;
    Ok(())
}

/// Affine map from encoder features to the model width: `projector.{weight,bias}`.
pub fn init_projector<T: Scalar>(feature_dim: usize, d_model: usize, seed: u64) -> Result<ParamStore<T>> {
    let mut init = Init {
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    let mut store = ParamStore::new();
    init.linear(&mut store, "projector", feature_dim, d_model)?;
    Ok(store)
}

/// Decoder parameters under `lm.`.
pub fn init_lm<T: Scalar>(cfg: &LmConfig, seed: u64) -> Result<ParamStore<T>> {
    cfg.validate()?;
    let mut init = Init {
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    let d = cfg.d_model;
    let mut store = ParamStore::new();
    store.insert_param("lm.token_embedding", init.normal(&[cfg.vocab_size, d], EMBED_INIT_STD))?;
    store.insert_param("lm.position_embedding", init.normal(&[cfg.max_context, d], EMBED_INIT_STD))?;
    store.insert_param("lm.cls", init.normal(&[1, d], EMBED_INIT_STD))?;
    for l in 0..cfg.n_layers {
        let p = format!("lm.layer{l}");
        layer_norm_params(&mut store, &format!("{p}.ln1"), d)?;
        for part in ["query", "key", "value", "output"] {
            init.linear(&mut store, &format!("{p}.attn.{part}"), d, d)?;
        }
        layer_norm_params(&mut store, &format!("{p}.ln2"), d)?;
        init.linear(&mut store, &format!("{p}.ffn.up"), d, cfg.ffn_dim)?;
        init.linear(&mut store, &format!("{p}.ffn.down"), cfg.ffn_dim, d)?;
    }
    layer_norm_params(&mut store, "lm.final_ln", d)?;
    init.linear(&mut store, "lm.head", d, cfg.vocab_size)?;
    Ok(store)
}

fn linear<T: Scalar>(g: &mut Graph<'_, T>, x: Var, name: &str) -> Result<Var> {
    let w = g.p(&format!("{name}.weight"))?;
    let b = g.p(&format!("{name}.bias"))?;
    g.tape.linear(x, w, Some(b))
}

fn layer_norm<T: Scalar>(g: &mut Graph<'_, T>, x: Var, name: &str) -> Result<Var> {
    let w = g.p(&format!("{name}.weight"))?;
    let b = g.p(&format!("{name}.bias"))?;
    g.tape.layer_norm(x, w, b)
}

/// `T×D_v` frame features to `T×d_model` embeddings, one affine map per row.
pub fn project_visual<T: Scalar>(g: &mut Graph<'_, T>, features: Var) -> Result<Var> {
    let (_, dv) = g.tape.value(features).dims2()?;
    let expected = g.store.get("projector.weight")?.shape()[0];
    if dv != expected {
        return Err(Error::dim(format!(
            "projector expects {expected}-dim features, got {dv}"
        )));
    }
    linear(g, features, "projector")
}

fn attention<T: Scalar>(g: &mut Graph<'_, T>, cfg: &LmConfig, x: Var, prefix: &str) -> Result<Var> {
    let q = linear(g, x, &format!("{prefix}.query"))?;
    let k = linear(g, x, &format!("{prefix}.key"))?;
    let v = linear(g, x, &format!("{prefix}.value"))?;
    let dh = cfg.head_dim();
    let scale = T::from_f64_lossy(1.0 / (dh as f64).sqrt());
    let mut heads = Vec::with_capacity(cfg.n_heads);
    for h in 0..cfg.n_heads {
        let qh = g.tape.slice_cols(q, h * dh, dh)?;
        let kh = g.tape.slice_cols(k, h * dh, dh)?;
        let vh = g.tape.slice_cols(v, h * dh, dh)?;
        let kt = g.tape.transpose(kh)?;
        let scores = g.tape.matmul(qh, kt)?;
        let scores = g.tape.scale(scores, scale)?;
        let scores = g.tape.causal_mask(scores)?;
        let weights = g.tape.softmax(scores, 1)?;
        heads.push(g.tape.matmul(weights, vh)?);
    }
    let merged = g.tape.concat_cols(&heads)?;
    linear(g, merged, &format!("{prefix}.output"))
}

/// Final normalized hidden states `L×d_model` of the pre-norm decoder.
pub fn lm_hidden<T: Scalar>(g: &mut Graph<'_, T>, cfg: &LmConfig, embeddings: Var) -> Result<Var> {
    let (len, d) = g.tape.value(embeddings).dims2()?;
    if d != cfg.d_model {
        return Err(Error::dim(format!("embeddings have width {d}, model width is {}", cfg.d_model)));
    }
    if len > cfg.max_context {
        return Err(Error::ContextOverflow {
            len,
            max: cfg.max_context,
        });
    }
    let pos = g.p("lm.position_embedding")?;
    let pos = g.tape.rows(pos, 0, len)?;
    let mut x = g.tape.add(embeddings, pos)?;
    for l in 0..cfg.n_layers {
        let p = format!("lm.layer{l}");
        let h = layer_norm(g, x, &format!("{p}.ln1"))?;
        let h = attention(g, cfg, h, &format!("{p}.attn"))?;
        x = g.tape.add(x, h)?;
        let h = layer_norm(g, x, &format!("{p}.ln2"))?;
        let h = linear(g, h, &format!("{p}.ffn.up"))?;
        let h = g.tape.relu(h)?;
        let h = linear(g, h, &format!("{p}.ffn.down"))?;
        x = g.tape.add(x, h)?;
    }
    layer_norm(g, x, "lm.final_ln")
}

/// Vocabulary logits for each row of `hidden`.
pub fn lm_head<T: Scalar>(g: &mut Graph<'_, T>, hidden: Var) -> Result<Var> {
    linear(g, hidden, "lm.head")
}

/// Logits `L×vocab_size` at every position.
pub fn lm_forward<T: Scalar>(g: &mut Graph<'_, T>, cfg: &LmConfig, embeddings: Var) -> Result<Var> {
    let h = lm_hidden(g, cfg, embeddings)?;
    lm_head(g, h)
}
