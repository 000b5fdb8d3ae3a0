use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{patchify, unpatchify, ModelConfig, PosEmbed};
use crate::data::Field;
use crate::error::{Error, Result};
use crate::tensor::{Graph, NodeId, ParamId, ParamStore, Tensor};

const INIT_STD: f64 = 0.02;
const LN_EPS: f64 = 1e-6;
/// Diffusion time is scaled to this range before the sinusoidal features.
const TAU_SCALE: f64 = 1000.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    fn apply(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    }
}

/// Shared linear patch projection, optionally factored through rank `d′`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PatchEmbed {
    Dense(Linear),
    Bottleneck(Linear, Linear),
}

impl PatchEmbed {
    fn apply(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        match self {
            PatchEmbed::Dense(l) => l.apply(g, store, x),
            PatchEmbed::Bottleneck(a, b) => {
                let h = a.apply(g, store, x)?;
                b.apply(g, store, h)
            }
        }
    }

    pub fn linears(&self) -> Vec<Linear> {
        match self {
            PatchEmbed::Dense(l) => vec![*l],
            PatchEmbed::Bottleneck(a, b) => vec![*a, *b],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockIds {
    /// `D → 6D`: shift, scale, gate for attention then for the MLP.
    pub ada: Linear,
    pub qkv: Linear,
    pub proj: Linear,
    pub fc1: Linear,
    pub fc2: Linear,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelIds {
    pub tok_z: PatchEmbed,
    pub tok_hist: PatchEmbed,
    pub tau_mlp: (Linear, Linear),
    pub theta_mlp: (Linear, Linear),
    pub blocks: Vec<BlockIds>,
    /// `D → 2D`: shift and scale before the head.
    pub final_ada: Linear,
    pub head: Linear,
}

#[derive(Clone, Copy)]
enum Init {
    Normal,
    Zero,
}

struct Builder {
    store: ParamStore,
    rng: ChaCha8Rng,
}

impl Builder {
    fn linear(&mut self, name: &str, input: usize, output: usize, init: Init) -> Linear {
        let w = match init {
            Init::Normal => {
                let rng = &mut self.rng;
                Tensor::from_fn(vec![input, output], |_| truncated_normal(rng) * INIT_STD)
            }
            Init::Zero => Tensor::zeros(vec![input, output]),
        };
        Linear {
            w: self.store.add(format!("{name}.w"), w),
            b: self.store.add(format!("{name}.b"), Tensor::zeros(vec![output])),
        }
    }

    fn patch_embed(&mut self, name: &str, input: usize, dim: usize, bottleneck: Option<usize>) -> PatchEmbed {
        match bottleneck {
            None => PatchEmbed::Dense(self.linear(name, input, dim, Init::Normal)),
            Some(r) => PatchEmbed::Bottleneck(
                self.linear(&format!("{name}.down"), input, r, Init::Normal),
                self.linear(&format!("{name}.up"), r, dim, Init::Normal),
            ),
        }
    }
}

fn truncated_normal(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let x: f64 = rng.sample(StandardNormal);
        if x.abs() <= 2.0 {
            return x;
        }
    }
}

/// Sinusoidal features of the diffusion time, cosines then sines.
pub fn tau_features(tau: f64, count: usize) -> Vec<f64> {
    let half = count / 2;
    let freqs: Vec<f64> = (0..half)
        .map(|i| (-(10000f64.ln()) * i as f64 / half as f64).exp())
        .collect();
    let t = tau * TAU_SCALE;
    freqs
        .iter()
        .map(|f| (t * f).cos())
        .chain(freqs.iter().map(|f| (t * f).sin()))
        .collect()
}

/// Upper bound on `|d tau_features / d tau|`.
pub fn tau_features_lipschitz(count: usize) -> f64 {
    let half = count / 2;
    let s: f64 = (0..half)
        .map(|i| (-(10000f64.ln()) * i as f64 / half as f64).exp().powi(2))
        .sum();
    TAU_SCALE * s.sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    cfg: ModelConfig,
    params: ParamStore,
    ids: ModelIds,
    pos: PosEmbed,
}

impl Model {
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.dim;
        let mut b = Builder {
            store: ParamStore::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let tok_z = b.patch_embed("tok_z", cfg.token_dim(), d, cfg.bottleneck);
        let tok_hist = b.patch_embed("tok_hist", cfg.context * cfg.token_dim(), d, cfg.bottleneck);
        let tau_mlp = (
            b.linear("tau.0", cfg.tau_features, d, Init::Normal),
            b.linear("tau.1", d, d, Init::Normal),
        );
        let theta_mlp = (
            b.linear("theta.0", 1, d, Init::Normal),
            b.linear("theta.1", d, d, Init::Normal),
        );
        let blocks = (0..cfg.depth)
            .map(|l| BlockIds {
                ada: b.linear(&format!("block{l}.ada"), d, 6 * d, Init::Zero),
                qkv: b.linear(&format!("block{l}.qkv"), d, 3 * d, Init::Normal),
                proj: b.linear(&format!("block{l}.proj"), d, d, Init::Normal),
                fc1: b.linear(&format!("block{l}.fc1"), d, cfg.mlp_ratio * d, Init::Normal),
                fc2: b.linear(&format!("block{l}.fc2"), cfg.mlp_ratio * d, d, Init::Normal),
            })
            .collect();
        let final_ada = b.linear("final.ada", d, 2 * d, Init::Zero);
        let head = b.linear("head", d, cfg.token_dim(), Init::Zero);
        let (gh, gw) = cfg.grid();
        Ok(Self {
            cfg: cfg.clone(),
            params: b.store,
            ids: ModelIds {
                tok_z,
                tok_hist,
                tau_mlp,
                theta_mlp,
                blocks,
                final_ada,
                head,
            },
            pos: PosEmbed::new(gh, gw, d)?,
        })
    }

    /// Rebinds a parameter set (e.g. from a checkpoint) to the layout of `cfg`.
    pub fn from_params(cfg: &ModelConfig, params: ParamStore) -> Result<Self> {
        let mut m = Self::init(cfg, 0)?;
        if params.len() != m.params.len() {
            return Err(Error::Config(format!(
                "checkpoint has {} tensors, model expects {}",
                params.len(),
                m.params.len()
            )));
        }
        for ((na, ta), (nb, tb)) in params.iter().zip(m.params.iter()) {
            if na != nb || ta.shape() != tb.shape() {
                return Err(Error::Config(format!(
                    "checkpoint tensor {na} {:?} does not match {nb} {:?}",
                    ta.shape(),
                    tb.shape()
                )));
            }
        }
        m.params = params;
        Ok(m)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn ids(&self) -> &ModelIds {
        &self.ids
    }

    pub fn pos_embed(&self) -> &PosEmbed {
        &self.pos
    }

    /// Replaces the positional table; used to isolate the embedding paths.
    pub fn set_pos_embed(&mut self, pos: PosEmbed) -> Result<()> {
        if pos.table().shape() != self.pos.table().shape() {
            return Err(Error::shape("set_pos_embed", "table shape differs"));
        }
        self.pos = pos;
        Ok(())
    }

    fn check_inputs(&self, z: &Field, context: &[Field]) -> Result<()> {
        let want = (self.cfg.channels, self.cfg.height, self.cfg.width);
        if z.shape() != want {
            return Err(Error::shape("model_forward", format!("z is {:?}, expected {want:?}", z.shape())));
        }
        if context.len() != self.cfg.context {
            return Err(Error::shape(
                "model_forward",
                format!("{} context frames, expected {}", context.len(), self.cfg.context),
            ));
        }
        if let Some(f) = context.iter().find(|f| f.shape() != want) {
            return Err(Error::shape("model_forward", format!("context frame is {:?}", f.shape())));
        }
        Ok(())
    }

    /// Token matrix `T0 = Tok_z(z) + Tok_hist(history) + E_pos` on the graph.
    pub fn embed_tokens_graph(&self, g: &mut Graph, z: &Field, context: &[Field]) -> Result<NodeId> {
        self.check_inputs(z, context)?;
        let p = self.cfg.patch;
        let zp = g.constant(patchify(z, p)?);
        let hp = g.constant(patchify(&Field::stack(context)?, p)?);
        let tz = self.ids.tok_z.apply(g, &self.params, zp)?;
        let th = self.ids.tok_hist.apply(g, &self.params, hp)?;
        let pos = g.constant(self.pos.table().clone());
        let s = g.add(tz, th)?;
        g.add(s, pos)
    }

    pub fn embed_tokens(&self, z: &Field, context: &[Field]) -> Result<Tensor> {
        let mut g = Graph::new();
        let t = self.embed_tokens_graph(&mut g, z, context)?;
        Ok(g.value(t).clone())
    }

    /// Global condition `g(tau, theta) = g_tau(tau) + g_theta(theta)` as a `1×D` node.
    pub fn global_condition_graph(&self, g: &mut Graph, tau: f64, theta: f64) -> Result<NodeId> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::Invalid(format!("tau = {tau} outside [0, 1]")));
        }
        let feats = Tensor::new(vec![1, self.cfg.tau_features], tau_features(tau, self.cfg.tau_features))?;
        let f = g.constant(feats);
        let h = self.ids.tau_mlp.0.apply(g, &self.params, f)?;
        let h = g.silu(h);
        let gt = self.ids.tau_mlp.1.apply(g, &self.params, h)?;
        let th = g.constant(Tensor::new(vec![1, 1], vec![theta])?);
        let h = self.ids.theta_mlp.0.apply(g, &self.params, th)?;
        let h = g.silu(h);
        let gth = self.ids.theta_mlp.1.apply(g, &self.params, h)?;
        g.add(gt, gth)
    }

    pub fn global_condition(&self, tau: f64, theta: f64) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let c = self.global_condition_graph(&mut g, tau, theta)?;
        Ok(g.value(c).data().to_vec())
    }

    /// Full forward pass on the graph; returns the `N×(C·P²)` patch output.
    pub fn forward_graph(
        &self,
        g: &mut Graph,
        z: &Field,
        tau: f64,
        context: &[Field],
        theta: f64,
    ) -> Result<NodeId> {
        let d = self.cfg.dim;
        let mut x = self.embed_tokens_graph(g, z, context)?;
        let cond = self.global_condition_graph(g, tau, theta)?;
        let cond = g.silu(cond);

        for (l, blk) in self.ids.blocks.iter().enumerate() {
            let m = blk.ada.apply(g, &self.params, cond)?;
            let part = |g: &mut Graph, i: usize| g.slice_cols(m, i * d, d);
            let (shift1, scale1, gate1) = (part(g, 0)?, part(g, 1)?, part(g, 2)?);
            let (shift2, scale2, gate2) = (part(g, 3)?, part(g, 4)?, part(g, 5)?);

            let h = modulate(g, x, shift1, scale1)?;
            let a = self.attention(g, blk, h)?;
            x = gated_residual(g, x, a, gate1)?;

            let h = modulate(g, x, shift2, scale2)?;
            let h = blk.fc1.apply(g, &self.params, h)?;
            let h = g.gelu(h);
            let h = blk.fc2.apply(g, &self.params, h)?;
            x = gated_residual(g, x, h, gate2)?;

            if !g.value(x).is_finite() {
                return Err(Error::non_finite(format!("activation after block {l}")));
            }
        }

        let m = self.ids.final_ada.apply(g, &self.params, cond)?;
        let shift = g.slice_cols(m, 0, d)?;
        let scale = g.slice_cols(m, d, d)?;
        let h = modulate(g, x, shift, scale)?;
        self.ids.head.apply(g, &self.params, h)
    }

    fn attention(&self, g: &mut Graph, blk: &BlockIds, h: NodeId) -> Result<NodeId> {
        let d = self.cfg.dim;
        let dh = self.cfg.head_dim();
        let qkv = blk.qkv.apply(g, &self.params, h)?;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut heads = Vec::with_capacity(self.cfg.heads);
        for i in 0..self.cfg.heads {
            let q = g.slice_cols(qkv, i * dh, dh)?;
            let k = g.slice_cols(qkv, d + i * dh, dh)?;
            let v = g.slice_cols(qkv, 2 * d + i * dh, dh)?;
            let s = g.matmul_nt(q, k)?;
            let s = g.scale(s, scale);
            let a = g.softmax(s)?;
            heads.push(g.matmul(a, v)?);
        }
        let o = g.concat_cols(&heads)?;
        blk.proj.apply(g, &self.params, o)
    }

    /// Network output `y(z, tau, context, theta)` as a field.
    pub fn forward(&self, z: &Field, tau: f64, context: &[Field], theta: f64) -> Result<Field> {
        let mut g = Graph::new();
        let y = self.forward_graph(&mut g, z, tau, context, theta)?;
        let out = unpatchify(g.value(y), self.cfg.channels, self.cfg.patch, self.cfg.height, self.cfg.width)?;
        if !out.is_finite() {
            return Err(Error::non_finite("model output"));
        }
        Ok(out)
    }
}

/// `LN(x)·(1 + scale) + shift`
fn modulate(g: &mut Graph, x: NodeId, shift: NodeId, scale: NodeId) -> Result<NodeId> {
    let n = g.layer_norm(x, LN_EPS)?;
    let s = g.mul_row(n, scale)?;
    let h = g.add(n, s)?;
    g.add_row(h, shift)
}

/// `x + branch·(1 + gate)`
fn gated_residual(g: &mut Graph, x: NodeId, branch: NodeId, gate: NodeId) -> Result<NodeId> {
    let gb = g.mul_row(branch, gate)?;
    let b = g.add(branch, gb)?;
    g.add(x, b)
}
