//! The detector: entry block E, the shared backbone F applied once per
//! pyramid level, optional top-down combination, and per-level heads.
//!
//! ```text
//!   f_0 = E(x)            f_i = F(f_{i-1}),  i = 1..N
//!   g_1 = f_N             g_{i+1} = U_i(g_i) + f_{N-i}
//! ```
//!
//! Everything is expressed once against [`Backend`], so the same program
//! declares parameters, runs inference, records gradients and counts cost.

pub mod config;
pub mod params;
pub mod s3fd;

pub use config::{ModelConfig, Variant};
pub use params::{ModelParams, ParamDecl};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cost::Planner;
use crate::error::{Error, Result};
use crate::graph::{Backend, Eval};
use crate::tensor::{Activation, ConvSpec, Element, Tensor, NEGATIVE_SLOPE};

/// Background channels collapsed by maxout on the finest classification head.
pub const MAXOUT_BG_CHANNELS: usize = 3;

/// Channels of the regression head: (dx, dy, dw, dh).
pub const REG_CHANNELS: usize = 4;

/// Pyramid feature maps with their strides.
#[derive(Debug, Clone)]
pub struct PyramidFeatures<T: Element> {
    pub maps: Vec<Tensor<T>>,
    pub strides: Vec<usize>,
}

impl<T: Element> PyramidFeatures<T> {
    pub fn spatial_dims(&self) -> Vec<(usize, usize)> {
        self.maps.iter().map(|m| (m.height(), m.width())).collect()
    }
}

/// Head outputs of one level: 2-channel (background, face) logits and
/// 4-channel box deltas.
#[derive(Debug, Clone)]
pub struct HeadOutput<T: Element> {
    pub cls: Tensor<T>,
    pub reg: Tensor<T>,
}

/// Variables produced by one run of the network program.
pub struct NetOutput<V> {
    /// f_1..f_N, finest first.
    pub features: Vec<V>,
    /// g_1..g_N, coarsest first (FPN only).
    pub combined: Vec<V>,
    /// (cls, reg) per level, finest first.
    pub heads: Vec<(V, V)>,
}

struct Unit<'a> {
    prefix: &'a str,
    pass: Option<usize>,
    per_pass_stats: bool,
}

impl<'a> Unit<'a> {
    fn plain(prefix: &'a str) -> Self {
        Unit { prefix, pass: None, per_pass_stats: false }
    }

    fn backbone(prefix: &'a str, pass: usize, cfg: &ModelConfig) -> Self {
        Unit { prefix, pass: Some(pass), per_pass_stats: cfg.bn_per_pass }
    }

    fn label(&self, suffix: &str) -> String {
        match self.pass {
            Some(p) => format!("{}{suffix}#p{p}", self.prefix),
            None => format!("{}{suffix}", self.prefix),
        }
    }

    fn stats(&self) -> String {
        match (self.pass, self.per_pass_stats) {
            (Some(p), true) => format!("{}_bn.p{p}", self.prefix),
            _ => format!("{}_bn", self.prefix),
        }
    }

    /// conv (no bias) -> batch norm -> optional activation.
    fn apply<T: Element, B: Backend<T>>(
        &self,
        b: &mut B,
        x: &B::Var,
        spec: ConvSpec,
        act: Option<Activation>,
    ) -> Result<B::Var> {
        let p = self.prefix;
        let w = b.param(&format!("{p}.weight"), ParamDecl::he(spec.weight_shape()))?;
        let y = b.conv2d(&self.label(""), x, &w, None, &spec)?;
        let c = spec.out_channels;
        let gamma = b.param(&format!("{p}_bn.gamma"), ParamDecl::vector(c, 1.0))?;
        let beta = b.param(&format!("{p}_bn.beta"), ParamDecl::vector(c, 0.0))?;
        let y = b.batch_norm(&self.label("_bn"), &y, &gamma, &beta, &self.stats())?;
        match act {
            None => Ok(y),
            Some(kind) => {
                let slope = if kind.learnable() {
                    Some(b.param(
                        &format!("{p}_act.slope"),
                        ParamDecl::vector(c, NEGATIVE_SLOPE),
                    )?)
                } else {
                    None
                };
                b.activation(&self.label("_act"), &y, kind, slope.as_ref())
            }
        }
    }
}

/// E: 3x3 stride-2 conv from RGB to `width`, BN, ReLU.
pub fn entry<T: Element, B: Backend<T>>(b: &mut B, cfg: &ModelConfig, x: &B::Var) -> Result<B::Var> {
    Unit::plain("entry.conv").apply(b, x, ConvSpec::new(3, cfg.width, 3).stride(2), Some(Activation::Relu))
}

/// One application of the shared backbone F (pass index is 1-based and only
/// affects labels and, with `bn_per_pass`, the running-statistics slot).
pub fn backbone_pass<T: Element, B: Backend<T>>(
    b: &mut B,
    cfg: &ModelConfig,
    x: &B::Var,
    pass: usize,
) -> Result<B::Var> {
    let w = cfg.width;
    let act = Some(cfg.activation);
    let mut h = x.clone();
    for (k, &e) in cfg.expansion.iter().enumerate() {
        let pre = format!("backbone.block{k}");
        let name = |n: &str| format!("{pre}.{n}");
        let (dw, pw, ex, pj) = (name("dw"), name("pw"), name("expand"), name("project"));
        let mk = |prefix| Unit::backbone(prefix, pass, cfg);
        let y = if k == 0 {
            // type (a): depthwise first, no expansion
            let t = mk(&dw).apply(b, &h, ConvSpec::depthwise(w, 3), act)?;
            mk(&pw).apply(b, &t, ConvSpec::pointwise(w, w), None)?
        } else {
            let hid = e * w;
            let t = mk(&ex).apply(b, &h, ConvSpec::pointwise(w, hid), act)?;
            let t = mk(&dw).apply(b, &t, ConvSpec::depthwise(hid, 3), act)?;
            mk(&pj).apply(b, &t, ConvSpec::pointwise(hid, w), None)?
        };
        h = b.add(&format!("{pre}.residual#p{pass}"), &h, &y)?;
    }
    Unit::backbone("backbone.down", pass, cfg).apply(b, &h, ConvSpec::new(w, w, 3).stride(2), act)
}

/// U_i: bilinear x2, then depthwise and pointwise conv blocks with ReLU.
pub fn upsample_block<T: Element, B: Backend<T>>(
    b: &mut B,
    cfg: &ModelConfig,
    index: usize,
    x: &B::Var,
) -> Result<B::Var> {
    let w = cfg.width;
    let up = b.upsample2x(&format!("up{index}.bilinear"), x)?;
    let dw = format!("up{index}.dw");
    let pw = format!("up{index}.pw");
    let t = Unit::plain(&dw).apply(b, &up, ConvSpec::depthwise(w, 3), Some(Activation::Relu))?;
    Unit::plain(&pw).apply(b, &t, ConvSpec::pointwise(w, w), Some(Activation::Relu))
}

/// Classification and regression heads of one level (1-based, finest = 1).
/// The finest level predicts 3 background logits and 1 face logit, reduced
/// to 2 channels by maxout.
pub fn head<T: Element, B: Backend<T>>(
    b: &mut B,
    cfg: &ModelConfig,
    level: usize,
    x: &B::Var,
) -> Result<(B::Var, B::Var)> {
    let w = cfg.width;
    let cls_ch = if level == 1 { MAXOUT_BG_CHANNELS + 1 } else { 2 };
    let conv = |b: &mut B, kind: &str, out: usize| -> Result<B::Var> {
        let spec = ConvSpec::new(w, out, 3).bias(true);
        let name = format!("head{level}.{kind}");
        let wt = b.param(&format!("{name}.weight"), ParamDecl::he(spec.weight_shape()))?;
        let bias = b.param(&format!("{name}.bias"), ParamDecl::vector(out, 0.0))?;
        b.conv2d(&name, x, &wt, Some(&bias), &spec)
    };
    let mut cls = conv(b, "cls", cls_ch)?;
    let reg = conv(b, "reg", REG_CHANNELS)?;
    if level == 1 {
        cls = b.maxout(&format!("head{level}.maxout"), &cls, MAXOUT_BG_CHANNELS)?;
    }
    Ok((cls, reg))
}

/// f_1..f_N (finest first).
pub fn features<T: Element, B: Backend<T>>(b: &mut B, cfg: &ModelConfig, image: &B::Var) -> Result<Vec<B::Var>> {
    let [_, c, h, w] = b.shape(image);
    if c != 3 {
        return Err(Error::shape(format!("expected a 3-channel image, got {c}")));
    }
    cfg.check_input(h, w)?;
    let mut cur = entry(b, cfg, image)?;
    let mut out = Vec::with_capacity(cfg.levels);
    for pass in 1..=cfg.levels {
        cur = backbone_pass(b, cfg, &cur, pass)?;
        out.push(cur.clone());
    }
    Ok(out)
}

/// g_1..g_N (coarsest first) from f_1..f_N (finest first).
pub fn combine<T: Element, B: Backend<T>>(b: &mut B, cfg: &ModelConfig, f: &[B::Var]) -> Result<Vec<B::Var>> {
    let n = f.len();
    let mut g = vec![f[n - 1].clone()];
    for i in 1..n {
        let up = upsample_block(b, cfg, i, &g[i - 1])?;
        let skip = &f[n - 1 - i];
        if b.shape(&up) != b.shape(skip) {
            return Err(Error::shape(format!(
                "U_{i} output {:?} does not match skip {:?}",
                b.shape(&up),
                b.shape(skip)
            )));
        }
        g.push(b.add(&format!("up{i}.skip"), &up, skip)?);
    }
    Ok(g)
}

/// The whole program: image -> features -> (combination) -> heads.
pub fn network<T: Element, B: Backend<T>>(b: &mut B, cfg: &ModelConfig, image: &B::Var) -> Result<NetOutput<B::Var>> {
    cfg.validate()?;
    let features = features(b, cfg, image)?;
    let (combined, sources) = match cfg.variant {
        Variant::Ssd => (Vec::new(), features.clone()),
        Variant::Fpn => {
            let g = combine(b, cfg, &features)?;
            let fine_first = g.iter().rev().cloned().collect();
            (g, fine_first)
        }
    };
    let heads = sources
        .iter()
        .enumerate()
        .map(|(i, x)| head(b, cfg, i + 1, x))
        .collect::<Result<Vec<_>>>()?;
    Ok(NetOutput { features, combined, heads })
}

/// Declares every parameter by planning the network on a minimal input and
/// initializes them (He for conv weights) from `seed`, in declaration order.
pub fn build_model<T: Element>(cfg: &ModelConfig, seed: u64) -> Result<ModelParams<T>> {
    let plan = Planner::plan(cfg, cfg.input_multiple(), cfg.input_multiple())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::new();
    for (name, decl) in plan.decls() {
        params.insert(name.clone(), decl.instantiate(&mut rng));
    }
    for (stats, &c) in plan.stats() {
        params.insert(params::running_mean_name(stats), Tensor::zeros([c, 1, 1, 1]));
        params.insert(params::running_var_name(stats), Tensor::full([c, 1, 1, 1], T::one()));
    }
    Ok(params)
}

fn unwrap_rc<T: Element>(v: std::rc::Rc<Tensor<T>>) -> Tensor<T> {
    std::rc::Rc::try_unwrap(v).unwrap_or_else(|rc| (*rc).clone())
}

/// Runs E and F N times (inference mode).
pub fn iterate_features<T: Element>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    image: &Tensor<T>,
) -> Result<PyramidFeatures<T>> {
    cfg.validate()?;
    let mut ev = Eval::new(params);
    let x = ev.input(image.clone());
    let f = features(&mut ev, cfg, &x)?;
    Ok(PyramidFeatures { maps: f.into_iter().map(unwrap_rc).collect(), strides: cfg.strides() })
}

/// Top-down combination. Input finest first; output coarsest first, with
/// `output[0]` equal to the coarsest input map.
pub fn fpn_combine<T: Element>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    features: &PyramidFeatures<T>,
) -> Result<PyramidFeatures<T>> {
    if features.maps.len() != cfg.levels {
        return Err(Error::shape(format!("{} feature maps for {} levels", features.maps.len(), cfg.levels)));
    }
    let mut ev = Eval::new(params);
    let f: Vec<_> = features.maps.iter().map(|m| ev.input(m.clone())).collect();
    let g = combine(&mut ev, cfg, &f)?;
    Ok(PyramidFeatures {
        maps: g.into_iter().map(unwrap_rc).collect(),
        strides: features.strides.iter().rev().copied().collect(),
    })
}

/// Heads over a pyramid given finest first.
pub fn heads_forward<T: Element>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    pyramid: &PyramidFeatures<T>,
) -> Result<Vec<HeadOutput<T>>> {
    let mut ev = Eval::new(params);
    pyramid
        .maps
        .iter()
        .enumerate()
        .map(|(i, m)| {
            if m.channels() != cfg.width {
                return Err(Error::shape(format!("level {} has {} channels, expected {}", i + 1, m.channels(), cfg.width)));
            }
            let x = ev.input(m.clone());
            let (cls, reg) = head(&mut ev, cfg, i + 1, &x)?;
            Ok(HeadOutput { cls: unwrap_rc(cls), reg: unwrap_rc(reg) })
        })
        .collect()
}

/// Inference forward pass: image batch to per-level head outputs (finest first).
pub fn forward<T: Element>(params: &ModelParams<T>, cfg: &ModelConfig, image: &Tensor<T>) -> Result<Vec<HeadOutput<T>>> {
    let mut ev = Eval::new(params);
    let x = ev.input(image.clone());
    let out = network(&mut ev, cfg, &x)?;
    drop(out.features);
    drop(out.combined);
    Ok(out
        .heads
        .into_iter()
        .map(|(c, r)| HeadOutput { cls: unwrap_rc(c), reg: unwrap_rc(r) })
        .collect())
}
