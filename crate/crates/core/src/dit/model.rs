use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::DiTConfig;
use super::policy::{BlockPolicy, CacheMode, Cached, Gates, Plain};
use crate::caching::Cache;
use crate::autodiff::{Backend, Eager, Tensor, UnaryKind};
use crate::error::{Error, Result};

/// Timestep plus per-sample class labels for one forward pass. `None` selects
/// the null class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Condition {
    pub timestep: usize,
    pub class_ids: Vec<Option<usize>>,
}

impl Condition {
    pub fn new(timestep: usize, class_ids: Vec<Option<usize>>) -> Self {
        Self { timestep, class_ids }
    }

    pub fn batch(&self) -> usize {
        self.class_ids.len()
    }

    /// Same labels at another timestep.
    pub fn at(&self, timestep: usize) -> Self {
        Self {
            timestep,
            class_ids: self.class_ids.clone(),
        }
    }

    /// Same timestep with every label replaced by the null class.
    pub fn unconditional(&self) -> Self {
        Self {
            timestep: self.timestep,
            class_ids: vec![None; self.class_ids.len()],
        }
    }
}

/// Whether block `i` is an Attention block (even) or an FFN (odd).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockKind {
    Attention,
    Ffn,
}

impl BlockKind {
    pub fn of(i: usize) -> Self {
        if i % 2 == 0 {
            BlockKind::Attention
        } else {
            BlockKind::Ffn
        }
    }
}

#[derive(Clone, Debug)]
struct AttnIdx {
    ln_g: usize,
    ln_b: usize,
    wq: Vec<usize>,
    wk: Vec<usize>,
    wv: Vec<usize>,
    wo: Vec<usize>,
    bo: usize,
}

#[derive(Clone, Debug)]
struct FfnIdx {
    ln_g: usize,
    ln_b: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Clone, Debug)]
struct Layout {
    patch_w: usize,
    patch_b: usize,
    pos: usize,
    time_w1: usize,
    time_b1: usize,
    time_w2: usize,
    time_b2: usize,
    class_table: usize,
    attn: Vec<AttnIdx>,
    ffn: Vec<FfnIdx>,
    final_ln_g: usize,
    final_ln_b: usize,
    final_w: usize,
    final_b: usize,
}

/// Toy DiT noise predictor. Parameters live in a flat named list so that
/// checkpoints and optimizers can walk them in a fixed order.
#[derive(Clone, Debug)]
pub struct DiTModel {
    config: DiTConfig,
    names: Vec<String>,
    params: Vec<Tensor>,
    layout: Layout,
}

struct Builder {
    names: Vec<String>,
    params: Vec<Tensor>,
    rng: ChaCha8Rng,
}

impl Builder {
    fn push(&mut self, name: String, t: Tensor) -> usize {
        self.names.push(name);
        self.params.push(t);
        self.params.len() - 1
    }

    fn normal(&mut self, name: String, shape: &[usize], std: f64) -> usize {
        let dist = Normal::new(0.0, std).expect("positive std");
        let t = Tensor::from_fn(shape, |_| dist.sample(&mut self.rng));
        self.push(name, t)
    }

    /// Fan-in scaled init for a `[fan_in, fan_out]` weight.
    fn linear(&mut self, name: String, fan_in: usize, fan_out: usize) -> usize {
        self.normal(name, &[fan_in, fan_out], 1.0 / (fan_in as f64).sqrt())
    }

    fn fill(&mut self, name: String, shape: &[usize], v: f64) -> usize {
        self.push(name, Tensor::full(shape, v))
    }
}

impl DiTModel {
    pub fn new(config: DiTConfig) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let hidden = d * config.mlp_ratio;
        let dh = config.head_dim();
        let mut b = Builder {
            names: Vec::new(),
            params: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
        };

        let patch_w = b.linear("patch.w".into(), config.patch_dim(), d);
        let patch_b = b.fill("patch.b".into(), &[d], 0.0);
        let pos = b.normal("pos".into(), &[config.tokens(), d], 0.02);
        let time_w1 = b.linear("time.w1".into(), d, d);
        let time_b1 = b.fill("time.b1".into(), &[d], 0.0);
        let time_w2 = b.linear("time.w2".into(), d, d);
        let time_b2 = b.fill("time.b2".into(), &[d], 0.0);
        let class_table = b.normal("class".into(), &[config.n_classes + 1, d], 0.02);

        let mut attn = Vec::with_capacity(config.depth);
        let mut ffn = Vec::with_capacity(config.depth);
        for l in 0..config.depth {
            let ln_g = b.fill(format!("layer{l}.attn.ln_g"), &[d], 1.0);
            let ln_b = b.fill(format!("layer{l}.attn.ln_b"), &[d], 0.0);
            let mut wq = Vec::new();
            let mut wk = Vec::new();
            let mut wv = Vec::new();
            let mut wo = Vec::new();
            for h in 0..config.n_heads {
                wq.push(b.linear(format!("layer{l}.attn.head{h}.wq"), d, dh));
                wk.push(b.linear(format!("layer{l}.attn.head{h}.wk"), d, dh));
                wv.push(b.linear(format!("layer{l}.attn.head{h}.wv"), d, dh));
            }
            // Per-head slices of a [d, d] output projection; fan-in is d overall.
            for h in 0..config.n_heads {
                wo.push(b.normal(format!("layer{l}.attn.head{h}.wo"), &[dh, d], 1.0 / (d as f64).sqrt()));
            }
            let bo = b.fill(format!("layer{l}.attn.bo"), &[d], 0.0);
            attn.push(AttnIdx { ln_g, ln_b, wq, wk, wv, wo, bo });

            let ln_g = b.fill(format!("layer{l}.ffn.ln_g"), &[d], 1.0);
            let ln_b = b.fill(format!("layer{l}.ffn.ln_b"), &[d], 0.0);
            let w1 = b.linear(format!("layer{l}.ffn.w1"), d, hidden);
            let b1 = b.fill(format!("layer{l}.ffn.b1"), &[hidden], 0.0);
            let w2 = b.linear(format!("layer{l}.ffn.w2"), hidden, d);
            let b2 = b.fill(format!("layer{l}.ffn.b2"), &[d], 0.0);
            ffn.push(FfnIdx { ln_g, ln_b, w1, b1, w2, b2 });
        }

        let final_ln_g = b.fill("final.ln_g".into(), &[d], 1.0);
        let final_ln_b = b.fill("final.ln_b".into(), &[d], 0.0);
        let final_w = b.fill("final.w".into(), &[d, config.patch_dim()], 0.0);
        let final_b = b.fill("final.b".into(), &[config.patch_dim()], 0.0);

        Ok(Self {
            config,
            names: b.names,
            params: b.params,
            layout: Layout {
                patch_w,
                patch_b,
                pos,
                time_w1,
                time_b1,
                time_w2,
                time_b2,
                class_table,
                attn,
                ffn,
                final_ln_g,
                final_ln_b,
                final_w,
                final_b,
            },
        })
    }

    pub fn config(&self) -> &DiTConfig {
        &self.config
    }

    pub fn n_blocks(&self) -> usize {
        self.config.n_blocks()
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn n_parameters(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Toggles gradient tracking on every parameter.
    pub fn set_trainable(&mut self, flag: bool) {
        for p in &mut self.params {
            p.set_requires_grad(flag);
            p.zero_grad();
        }
    }

    /// Replaces parameter values, keeping names and shapes.
    pub(crate) fn load_params(&mut self, values: Vec<Tensor>) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::Format(format!(
                "checkpoint has {} parameters, model expects {}",
                values.len(),
                self.params.len()
            )));
        }
        for (i, v) in values.iter().enumerate() {
            if v.shape() != self.params[i].shape() {
                return Err(Error::Format(format!(
                    "parameter {} has shape {:?}, model expects {:?}",
                    self.names[i],
                    v.shape(),
                    self.params[i].shape()
                )));
            }
        }
        self.params = values;
        Ok(())
    }

    /// Multiply-accumulate count of each cacheable block for one image.
    pub fn block_flops(&self) -> Vec<f64> {
        let c = &self.config;
        let (l, d) = (c.tokens() as f64, c.d_model as f64);
        let hidden = d * c.mlp_ratio as f64;
        let attn = 4.0 * l * d * d + 2.0 * l * l * d;
        let ffn = 2.0 * l * d * hidden;
        (0..c.n_blocks())
            .map(|i| match BlockKind::of(i) {
                BlockKind::Attention => 2.0 * attn,
                BlockKind::Ffn => 2.0 * ffn,
            })
            .collect()
    }

    fn check_inputs(&self, x: &Tensor, cond: &Condition) -> Result<usize> {
        let batch = cond.batch();
        let expected = self.config.image_shape(batch);
        if x.shape() != expected.as_slice() {
            return Err(Error::dim("dit input", x.shape(), &expected));
        }
        for id in cond.class_ids.iter().flatten() {
            if *id >= self.config.n_classes {
                return Err(Error::IndexOutOfRange {
                    what: "class id",
                    index: *id,
                    limit: self.config.n_classes,
                });
            }
        }
        Ok(batch)
    }

    /// Teacher path: every block computed fresh, no graph.
    pub fn forward_plain(&self, x: &Tensor, cond: &Condition) -> Result<Tensor> {
        self.forward_with(&mut Eager, x, cond, &mut Plain)
    }

    /// Cached forward for one denoising step. In hard mode blocks with
    /// `r ≤ τ` are served from `cache`; in soft mode every block is computed
    /// and blended with its cached value. Either way a block with `r > τ`
    /// overwrites its cache slot.
    #[allow(clippy::too_many_arguments)]
    pub fn forward_cached<B: Backend>(
        &self,
        be: &mut B,
        x: &Tensor,
        cond: &Condition,
        gates: Gates<'_, B::Value>,
        tau: f64,
        cache: &mut Cache,
        mode: CacheMode,
    ) -> Result<B::Value> {
        let mut policy = Cached::new(gates, tau, cache, mode);
        policy.check(self.n_blocks())?;
        self.forward_with(be, x, cond, &mut policy)
    }

    /// Hard-mode cached forward without a graph.
    pub fn forward_hard(&self, x: &Tensor, cond: &Condition, gates: &[f64], tau: f64, cache: &mut Cache) -> Result<Tensor> {
        self.forward_cached(&mut Eager, x, cond, Gates::Numeric(gates), tau, cache, CacheMode::Hard)
    }

    /// Runs the network, asking `policy` for the output of every block.
    pub fn forward_with<B: Backend, P: BlockPolicy<B> + ?Sized>(
        &self,
        be: &mut B,
        x: &Tensor,
        cond: &Condition,
        policy: &mut P,
    ) -> Result<B::Value> {
        let params = self.bind(be)?;
        self.forward_bound(be, &params, x, cond, policy)
    }

    /// Registers every parameter with the backend, in [`Self::params`] order.
    /// Gradients of the returned values are the parameter gradients.
    pub fn bind<B: Backend>(&self, be: &mut B) -> Result<Vec<B::Value>> {
        self.params.iter().map(|t| be.param(t)).collect()
    }

    /// [`Self::forward_with`] over parameters already bound with [`Self::bind`].
    pub fn forward_bound<B: Backend, P: BlockPolicy<B> + ?Sized>(
        &self,
        be: &mut B,
        params: &[B::Value],
        x: &Tensor,
        cond: &Condition,
        policy: &mut P,
    ) -> Result<B::Value> {
        if params.len() != self.params.len() {
            return Err(Error::dim("bound parameters", &[params.len()], &[self.params.len()]));
        }
        let batch = self.check_inputs(x, cond)?;
        let cfg = &self.config;
        let lay = &self.layout;
        let (l, d) = (cfg.tokens(), cfg.d_model);
        let p = |_: &mut B, i: usize| -> Result<B::Value> { Ok(params[i].clone()) };

        // Patch embedding plus learned positions.
        let patches = be.constant(patchify(x, cfg))?;
        let w = p(be, lay.patch_w)?;
        let h = be.matmul(&patches, &w)?;
        let pb = p(be, lay.patch_b)?;
        let h = be.bias_add(&h, &pb)?;
        let pos = p(be, lay.pos)?;
        let pos = be.gather(&pos, (0..batch * l * d).map(|j| j % (l * d)).collect(), vec![batch, l, d])?;
        let mut h = be.add(&h, &pos)?;

        // Conditioning vector: MLP(sinusoid(t)) + class embedding, shared by all tokens.
        let temb = be.constant(timestep_embedding(cond.timestep, batch, d))?;
        let w1 = p(be, lay.time_w1)?;
        let t1 = be.matmul(&temb, &w1)?;
        let b1 = p(be, lay.time_b1)?;
        let t1 = be.bias_add(&t1, &b1)?;
        let t1 = be.unary(UnaryKind::Gelu, &t1)?;
        let w2 = p(be, lay.time_w2)?;
        let t2 = be.matmul(&t1, &w2)?;
        let b2 = p(be, lay.time_b2)?;
        let t2 = be.bias_add(&t2, &b2)?;
        let table = p(be, lay.class_table)?;
        let class_idx = cond
            .class_ids
            .iter()
            .flat_map(|c| {
                let row = c.unwrap_or(cfg.null_class());
                (0..d).map(move |j| row * d + j)
            })
            .collect();
        let cemb = be.gather(&table, class_idx, vec![batch, d])?;
        let c = be.add(&t2, &cemb)?;
        let c_tok = be.gather(&c, (0..batch * l * d).map(|j| (j / (l * d)) * d + j % d).collect(), vec![batch, l, d])?;

        for i in 0..cfg.n_blocks() {
            let o = policy.block_output(be, i, &[batch, l, d], &mut |be: &mut B| self.block(be, params, i, &h, &c_tok))?;
            h = be.add(&h, &o)?;
        }

        let g = p(be, lay.final_ln_g)?;
        let b = p(be, lay.final_ln_b)?;
        let u = be.layernorm(&h, &g, &b)?;
        let u = be.add(&u, &c_tok)?;
        let fw = p(be, lay.final_w)?;
        let out = be.matmul(&u, &fw)?;
        let fb = p(be, lay.final_b)?;
        let out = be.bias_add(&out, &fb)?;
        be.gather(&out, unpatchify_indices(cfg, batch), cfg.image_shape(batch))
    }

    /// `b_i(h, cs)`: the residual branch of block `i`, without the residual add.
    fn block<B: Backend>(
        &self,
        be: &mut B,
        params: &[B::Value],
        i: usize,
        h: &B::Value,
        c_tok: &B::Value,
    ) -> Result<B::Value> {
        let p = |_: &mut B, j: usize| -> Result<B::Value> { Ok(params[j].clone()) };
        let layer = i / 2;
        match BlockKind::of(i) {
            BlockKind::Attention => {
                let ix = &self.layout.attn[layer];
                let g = p(be, ix.ln_g)?;
                let b = p(be, ix.ln_b)?;
                let u = be.layernorm(h, &g, &b)?;
                let u = be.add(&u, c_tok)?;
                let scale = 1.0 / (self.config.head_dim() as f64).sqrt();
                let mut acc: Option<B::Value> = None;
                for head in 0..self.config.n_heads {
                    let wq = p(be, ix.wq[head])?;
                    let wk = p(be, ix.wk[head])?;
                    let wv = p(be, ix.wv[head])?;
                    let q = be.matmul(&u, &wq)?;
                    let k = be.matmul(&u, &wk)?;
                    let v = be.matmul(&u, &wv)?;
                    let kt = be.transpose(&k)?;
                    let s = be.matmul(&q, &kt)?;
                    let s = be.scale(&s, scale)?;
                    let a = be.softmax(&s)?;
                    let o = be.matmul(&a, &v)?;
                    let wo = p(be, ix.wo[head])?;
                    let o = be.matmul(&o, &wo)?;
                    acc = Some(match acc {
                        None => o,
                        Some(prev) => be.add(&prev, &o)?,
                    });
                }
                let bo = p(be, ix.bo)?;
                be.bias_add(&acc.expect("n_heads > 0"), &bo)
            }
            BlockKind::Ffn => {
                let ix = &self.layout.ffn[layer];
                let g = p(be, ix.ln_g)?;
                let b = p(be, ix.ln_b)?;
                let u = be.layernorm(h, &g, &b)?;
                let u = be.add(&u, c_tok)?;
                let w1 = p(be, ix.w1)?;
                let z = be.matmul(&u, &w1)?;
                let b1 = p(be, ix.b1)?;
                let z = be.bias_add(&z, &b1)?;
                let z = be.unary(UnaryKind::Gelu, &z)?;
                let w2 = p(be, ix.w2)?;
                let z = be.matmul(&z, &w2)?;
                let b2 = p(be, ix.b2)?;
                be.bias_add(&z, &b2)
            }
        }
    }
}

/// `[B, C, H, W]` image to `[B, tokens, C·p·p]` patch rows.
fn patchify(x: &Tensor, cfg: &DiTConfig) -> Tensor {
    let batch = x.shape()[0];
    let idx = patch_indices(cfg, batch);
    let data = idx.iter().map(|&i| x.data()[i]).collect();
    Tensor::from_parts(vec![batch, cfg.tokens(), cfg.patch_dim()], data)
}

/// For each element of the patch layout, its flat index in the image layout.
fn patch_indices(cfg: &DiTConfig, batch: usize) -> Vec<usize> {
    let (c, s, p) = (cfg.channels, cfg.image_size, cfg.patch_size);
    let side = s / p;
    let mut idx = Vec::with_capacity(batch * c * s * s);
    for b in 0..batch {
        for py in 0..side {
            for px in 0..side {
                for ch in 0..c {
                    for dy in 0..p {
                        for dx in 0..p {
                            let (y, x) = (py * p + dy, px * p + dx);
                            idx.push(((b * c + ch) * s + y) * s + x);
                        }
                    }
                }
            }
        }
    }
    idx
}

/// Inverse permutation of [`patch_indices`].
fn unpatchify_indices(cfg: &DiTConfig, batch: usize) -> Vec<usize> {
    let fwd = patch_indices(cfg, batch);
    let mut inv = vec![0; fwd.len()];
    for (patch_pos, &img_pos) in fwd.iter().enumerate() {
        inv[img_pos] = patch_pos;
    }
    inv
}

/// Sinusoidal embedding of `t`, repeated for each batch row: `[batch, d]`.
pub fn timestep_embedding(t: usize, batch: usize, d: usize) -> Tensor {
    let half = d / 2;
    let mut row = vec![0.0; d];
    for k in 0..half {
        let freq = (-(10_000f64.ln()) * k as f64 / half as f64).exp();
        let arg = t as f64 * freq;
        row[k] = arg.cos();
        row[half + k] = arg.sin();
    }
    Tensor::from_parts(vec![batch, d], row.repeat(batch))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> DiTConfig {
        DiTConfig {
            image_size: 4,
            channels: 2,
            patch_size: 2,
            d_model: 8,
            n_heads: 2,
            depth: 1,
            n_classes: 3,
            mlp_ratio: 2,
            seed: 7,
        }
    }

    #[test]
    fn patchify_round_trips() {
        let cfg = tiny();
        let x = Tensor::from_fn(&cfg.image_shape(2), |i| i as f64);
        let p = patchify(&x, &cfg);
        let back = crate::autodiff::ops::gather(&p, &unpatchify_indices(&cfg, 2), &cfg.image_shape(2)).unwrap();
        assert_eq!(back, x);
    }

    #[test]
    fn block_list_alternates() {
        let m = DiTModel::new(tiny()).unwrap();
        assert_eq!(m.n_blocks(), 2);
        assert_eq!(BlockKind::of(0), BlockKind::Attention);
        assert_eq!(BlockKind::of(1), BlockKind::Ffn);
        assert_eq!(m.block_flops().len(), 2);
    }

    #[test]
    fn zero_final_projection_gives_zero_output() {
        let cfg = tiny();
        let m = DiTModel::new(cfg.clone()).unwrap();
        let x = Tensor::from_fn(&cfg.image_shape(2), |i| (i as f64 * 0.37).sin());
        let out = m.forward_plain(&x, &Condition::new(10, vec![Some(0), None])).unwrap();
        assert_eq!(out.shape(), x.shape());
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_bad_shape_and_class() {
        let cfg = tiny();
        let m = DiTModel::new(cfg.clone()).unwrap();
        let x = Tensor::zeros(&cfg.image_shape(1));
        assert!(matches!(
            m.forward_plain(&x, &Condition::new(1, vec![Some(3)])),
            Err(Error::IndexOutOfRange { .. })
        ));
        assert!(matches!(
            m.forward_plain(&x, &Condition::new(1, vec![Some(0), Some(1)])),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn invalid_config_lists_violations() {
        let cfg = DiTConfig {
            image_size: 7,
            d_model: 10,
            n_heads: 4,
            ..DiTConfig::default()
        };
        let v = cfg.violations();
        assert_eq!(v.len(), 2, "{v:?}");
        assert!(DiTModel::new(cfg).is_err());
    }
}
