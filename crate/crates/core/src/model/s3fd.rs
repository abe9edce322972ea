//! Static description of an S3FD detector on a MobileFaceNet backbone, used
//! only as a cost-accounting baseline. It is expressed against [`Backend`]
//! so the same planner counts it.

use crate::cost::{CostReport, Planner};
use crate::error::{Error, Result};
use crate::graph::Backend;
use crate::model::params::ParamDecl;
use crate::tensor::{Activation, ConvSpec, Element, NEGATIVE_SLOPE};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    /// depthwise 3x3 then pointwise projection
    A,
    /// pointwise expansion, depthwise 3x3, pointwise projection
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MfnBlock {
    pub kind: BlockKind,
    pub out_channels: usize,
    pub hidden: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct S3fdDescription {
    pub entry_channels: usize,
    pub entry_stride: usize,
    pub blocks: Vec<MfnBlock>,
    /// 1-based block numbers whose outputs feed a head.
    pub head_after: Vec<usize>,
    /// (channels, stride) of the extra 3x3 layers, each feeding a head.
    pub extras: Vec<(usize, usize)>,
}

pub fn describe_s3fd_mobilefacenet() -> S3fdDescription {
    use BlockKind::*;
    let table: [(BlockKind, usize, usize, usize); 14] = [
        (A, 64, 64, 2),
        (B, 64, 128, 1),
        (B, 64, 128, 1),
        (B, 64, 128, 1),
        (B, 64, 128, 1),
        (B, 64, 128, 2),
        (B, 128, 256, 2),
        (B, 128, 256, 1),
        (B, 128, 256, 1),
        (B, 128, 256, 1),
        (B, 128, 256, 1),
        (B, 128, 256, 1),
        (B, 128, 256, 1),
        (B, 128, 512, 2),
    ];
    S3fdDescription {
        entry_channels: 64,
        entry_stride: 1,
        blocks: table
            .iter()
            .map(|&(kind, out_channels, hidden, stride)| MfnBlock { kind, out_channels, hidden, stride })
            .collect(),
        head_after: vec![6, 7, 14],
        extras: vec![(128, 2), (128, 2), (128, 2)],
    }
}

fn conv_bn<T: Element, B: Backend<T>>(
    b: &mut B,
    name: &str,
    x: &B::Var,
    spec: ConvSpec,
    act: Option<Activation>,
) -> Result<B::Var> {
    let w = b.param(&format!("{name}.weight"), ParamDecl::he(spec.weight_shape()))?;
    let y = b.conv2d(name, x, &w, None, &spec)?;
    let c = spec.out_channels;
    let g = b.param(&format!("{name}_bn.gamma"), ParamDecl::vector(c, 1.0))?;
    let be = b.param(&format!("{name}_bn.beta"), ParamDecl::vector(c, 0.0))?;
    let y = b.batch_norm(&format!("{name}_bn"), &y, &g, &be, &format!("{name}_bn"))?;
    match act {
        None => Ok(y),
        Some(kind) => {
            let slope = if kind.learnable() {
                Some(b.param(&format!("{name}_act.slope"), ParamDecl::vector(c, NEGATIVE_SLOPE))?)
            } else {
                None
            };
            b.activation(&format!("{name}_act"), &y, kind, slope.as_ref())
        }
    }
}

/// Runs the description; returns the (cls, reg) head outputs, finest first.
pub fn program<T: Element, B: Backend<T>>(
    b: &mut B,
    d: &S3fdDescription,
    image: &B::Var,
) -> Result<Vec<(B::Var, B::Var)>> {
    let prelu = Some(Activation::Prelu);
    let entry = ConvSpec::new(3, d.entry_channels, 3).stride(d.entry_stride);
    let mut x = conv_bn(b, "entry", image, entry, prelu)?;
    let mut c = d.entry_channels;
    let mut sources = Vec::new();
    for (i, blk) in d.blocks.iter().enumerate() {
        let n = format!("block{}", i + 1);
        let y = match blk.kind {
            BlockKind::A => {
                let t = conv_bn(b, &format!("{n}.dw"), &x, ConvSpec::depthwise(c, 3).stride(blk.stride), prelu)?;
                conv_bn(b, &format!("{n}.pw"), &t, ConvSpec::pointwise(c, blk.out_channels), None)?
            }
            BlockKind::B => {
                let h = blk.hidden;
                let t = conv_bn(b, &format!("{n}.expand"), &x, ConvSpec::pointwise(c, h), prelu)?;
                let t = conv_bn(b, &format!("{n}.dw"), &t, ConvSpec::depthwise(h, 3).stride(blk.stride), prelu)?;
                conv_bn(b, &format!("{n}.project"), &t, ConvSpec::pointwise(h, blk.out_channels), None)?
            }
        };
        x = if blk.stride == 1 && blk.out_channels == c { b.add(&format!("{n}.residual"), &x, &y)? } else { y };
        c = blk.out_channels;
        if d.head_after.contains(&(i + 1)) {
            sources.push(x.clone());
        }
    }
    for (i, &(out, stride)) in d.extras.iter().enumerate() {
        let spec = ConvSpec::new(c, out, 3).stride(stride);
        x = conv_bn(b, &format!("extra{}", i + 1), &x, spec, Some(Activation::Relu))?;
        c = out;
        sources.push(x.clone());
    }
    let mut heads = Vec::new();
    for (i, src) in sources.iter().enumerate() {
        let level = i + 1;
        let ch = b.shape(src)[1];
        let conv = |b: &mut B, kind: &str, out: usize| -> Result<B::Var> {
            let spec = ConvSpec::new(ch, out, 3).bias(true);
            let name = format!("head{level}.{kind}");
            let w = b.param(&format!("{name}.weight"), ParamDecl::he(spec.weight_shape()))?;
            let bias = b.param(&format!("{name}.bias"), ParamDecl::vector(out, 0.0))?;
            b.conv2d(&name, src, &w, Some(&bias), &spec)
        };
        let cls_ch = if level == 1 { 4 } else { 2 };
        let mut cls = conv(b, "cls", cls_ch)?;
        let reg = conv(b, "reg", 4)?;
        if level == 1 {
            cls = b.maxout(&format!("head{level}.maxout"), &cls, 3)?;
        }
        heads.push((cls, reg));
    }
    Ok(heads)
}

/// Cost of the description on an `h x w` input.
pub fn s3fd_cost(d: &S3fdDescription, h: usize, w: usize) -> Result<CostReport> {
    let total_stride: usize = d.entry_stride
        * d.blocks.iter().map(|b| b.stride).product::<usize>()
        * d.extras.iter().map(|e| e.1).product::<usize>();
    if h % total_stride != 0 || w % total_stride != 0 {
        return Err(Error::Indivisible { h, w, multiple: total_stride });
    }
    let mut p = Planner::new();
    let x = p.input([1, 3, h, w]);
    program::<f32, _>(&mut p, d, &x)?;
    Ok(p.report((h, w)))
}
