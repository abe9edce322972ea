//! Parameter and multiply-add accounting.
//!
//! The [`Planner`] backend runs the network program on shapes only. Each
//! parameter is charged to the first layer that consumes it; every executed
//! op is charged its multiply-adds, so a shared backbone layer shows its
//! parameters once and its compute once per pass.

use std::collections::HashSet;
use std::fmt::Write as _;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::graph::Backend;
use crate::model::params::ParamDecl;
use crate::model::{self, ModelConfig, ModelParams};
use crate::tensor::{Activation, ConvSpec, Element, Shape};

/// Where a layer's multiply-adds come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Conv,
    /// BN, activation, upsample, add and maxout: one madd per output element.
    Elementwise,
}

/// One executed op.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanRow {
    pub layer: String,
    pub pass: Option<usize>,
    pub kind: OpKind,
    pub params: u64,
    pub madds: u64,
}

#[derive(Debug, Clone)]
pub struct PlanVar {
    shape: Shape,
    param: Option<String>,
}

/// Shape-only backend.
#[derive(Debug, Default)]
pub struct Planner {
    decls: IndexMap<String, ParamDecl>,
    stats: IndexMap<String, usize>,
    rows: Vec<PlanRow>,
    charged: HashSet<String>,
}

fn split_label(label: &str) -> (String, Option<usize>) {
    match label.rsplit_once("#p") {
        Some((layer, p)) => match p.parse() {
            Ok(p) => (layer.to_string(), Some(p)),
            Err(_) => (label.to_string(), None),
        },
        None => (label.to_string(), None),
    }
}

fn numel(s: Shape) -> u64 {
    s.iter().map(|&d| d as u64).product()
}

impl Planner {
    pub fn new() -> Self {
        Self::default()
    }

    /// Plans the detector on a `[1, 3, h, w]` input.
    pub fn plan(cfg: &ModelConfig, h: usize, w: usize) -> Result<Planner> {
        let mut p = Planner::new();
        let x = p.input([1, 3, h, w]);
        model::network::<f32, _>(&mut p, cfg, &x)?;
        Ok(p)
    }

    pub fn input(&self, shape: Shape) -> PlanVar {
        PlanVar { shape, param: None }
    }

    /// Declared parameters in first-use order.
    pub fn decls(&self) -> impl Iterator<Item = (&String, &ParamDecl)> {
        self.decls.iter()
    }

    /// Running-statistics slots and their channel counts.
    pub fn stats(&self) -> impl Iterator<Item = (&String, &usize)> {
        self.stats.iter()
    }

    pub fn rows(&self) -> &[PlanRow] {
        &self.rows
    }

    pub fn param_count(&self) -> u64 {
        self.decls.values().map(|d| d.numel() as u64).sum()
    }

    fn charge(&mut self, vars: &[Option<&PlanVar>]) -> u64 {
        let mut total = 0;
        for v in vars.iter().flatten() {
            if let Some(name) = &v.param {
                if self.charged.insert(name.clone()) {
                    total += self.decls[name].numel() as u64;
                }
            }
        }
        total
    }

    fn record(&mut self, label: &str, kind: OpKind, params: u64, madds: u64) {
        let (layer, pass) = split_label(label);
        self.rows.push(PlanRow { layer, pass, kind, params, madds });
    }

    fn feature(shape: Shape) -> PlanVar {
        PlanVar { shape, param: None }
    }

    /// Tallies rows into a report.
    pub fn report(&self, input: (usize, usize)) -> CostReport {
        let mut by_layer: IndexMap<String, CostRow> = IndexMap::new();
        for r in &self.rows {
            let row = by_layer.entry(r.layer.clone()).or_insert_with(|| CostRow {
                name: r.layer.clone(),
                kind: r.kind,
                params: 0,
                pass_madds: Vec::new(),
            });
            row.params += r.params;
            row.pass_madds.push(r.madds);
        }
        CostReport::from_rows(by_layer.into_values().collect(), input)
    }
}

impl<T: Element> Backend<T> for Planner {
    type Var = PlanVar;

    fn shape(&self, v: &PlanVar) -> Shape {
        v.shape
    }

    fn param(&mut self, name: &str, decl: ParamDecl) -> Result<PlanVar> {
        if let Some(prev) = self.decls.get(name) {
            if prev.shape != decl.shape {
                return Err(Error::shape(format!(
                    "parameter `{name}` redeclared as {:?}, was {:?}",
                    decl.shape, prev.shape
                )));
            }
        } else {
            self.decls.insert(name.to_string(), decl);
        }
        Ok(PlanVar { shape: decl.shape, param: Some(name.to_string()) })
    }

    fn conv2d(&mut self, label: &str, x: &PlanVar, w: &PlanVar, b: Option<&PlanVar>, spec: &ConvSpec) -> Result<PlanVar> {
        spec.validate()?;
        let [n, c, h, wd] = x.shape;
        if c != spec.in_channels {
            return Err(Error::shape(format!("{label}: input has {c} channels, conv expects {}", spec.in_channels)));
        }
        if w.shape != spec.weight_shape() {
            return Err(Error::shape(format!("{label}: weight {:?} vs {:?}", w.shape, spec.weight_shape())));
        }
        if spec.has_bias != b.is_some() {
            return Err(Error::shape(format!("{label}: bias presence does not match the spec")));
        }
        let (oh, ow) = spec
            .output_hw(h, wd)
            .ok_or_else(|| Error::shape(format!("{label}: input {h}x{wd} too small")))?;
        let params = self.charge(&[Some(w), b]);
        let madds = n as u64 * spec.madds(oh, ow);
        self.record(label, OpKind::Conv, params, madds);
        Ok(Self::feature([n, spec.out_channels, oh, ow]))
    }

    fn batch_norm(&mut self, label: &str, x: &PlanVar, gamma: &PlanVar, beta: &PlanVar, stats: &str) -> Result<PlanVar> {
        let c = x.shape[1];
        if gamma.shape[0] != c || beta.shape[0] != c {
            return Err(Error::shape(format!("{label}: affine params do not match {c} channels")));
        }
        self.stats.entry(stats.to_string()).or_insert(c);
        let params = self.charge(&[Some(gamma), Some(beta)]);
        self.record(label, OpKind::Elementwise, params, numel(x.shape));
        Ok(Self::feature(x.shape))
    }

    fn activation(&mut self, label: &str, x: &PlanVar, kind: Activation, slope: Option<&PlanVar>) -> Result<PlanVar> {
        if kind.learnable() != slope.is_some() {
            return Err(Error::shape(format!("{label}: slope presence does not match {kind}")));
        }
        if let Some(s) = slope {
            if s.shape[0] != x.shape[1] {
                return Err(Error::shape(format!("{label}: {} slopes for {} channels", s.shape[0], x.shape[1])));
            }
        }
        let params = self.charge(&[slope]);
        self.record(label, OpKind::Elementwise, params, numel(x.shape));
        Ok(Self::feature(x.shape))
    }

    fn upsample2x(&mut self, label: &str, x: &PlanVar) -> Result<PlanVar> {
        let [n, c, h, w] = x.shape;
        let out = [n, c, 2 * h, 2 * w];
        self.record(label, OpKind::Elementwise, 0, numel(out));
        Ok(Self::feature(out))
    }

    fn add(&mut self, label: &str, a: &PlanVar, b: &PlanVar) -> Result<PlanVar> {
        if a.shape != b.shape {
            return Err(Error::shape(format!("{label}: {:?} + {:?}", a.shape, b.shape)));
        }
        self.record(label, OpKind::Elementwise, 0, numel(a.shape));
        Ok(Self::feature(a.shape))
    }

    fn maxout(&mut self, label: &str, x: &PlanVar, bg: usize) -> Result<PlanVar> {
        let [n, c, h, w] = x.shape;
        if c != bg + 1 {
            return Err(Error::shape(format!("{label}: maxout over {bg} background channels needs {} inputs, got {c}", bg + 1)));
        }
        let out = [n, 2, h, w];
        self.record(label, OpKind::Elementwise, 0, numel(out));
        Ok(Self::feature(out))
    }
}

/// Per-layer accounting. Shared backbone layers have one entry in
/// `pass_madds` per executed pass, in pass order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostRow {
    pub name: String,
    pub kind: OpKind,
    pub params: u64,
    pub pass_madds: Vec<u64>,
}

impl CostRow {
    pub fn passes(&self) -> usize {
        self.pass_madds.len()
    }

    pub fn total_madds(&self) -> u64 {
        self.pass_madds.iter().sum()
    }

    fn madds_field(&self) -> String {
        self.pass_madds.iter().map(u64::to_string).collect::<Vec<_>>().join(",")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostReport {
    pub rows: Vec<CostRow>,
    pub total_params: u64,
    pub total_madds: u64,
    pub input: (usize, usize),
}

impl CostReport {
    fn from_rows(rows: Vec<CostRow>, input: (usize, usize)) -> Self {
        let total_params = rows.iter().map(|r| r.params).sum();
        let total_madds = rows.iter().map(CostRow::total_madds).sum();
        CostReport { rows, total_params, total_madds, input }
    }

    /// Same report with the elementwise arithmetic zeroed out. Rows keep
    /// their parameters (BN affine terms, slopes).
    pub fn without_elementwise(&self) -> CostReport {
        let rows = self
            .rows
            .iter()
            .map(|r| {
                let mut r = r.clone();
                if r.kind == OpKind::Elementwise {
                    r.pass_madds.iter_mut().for_each(|m| *m = 0);
                }
                r
            })
            .collect();
        CostReport::from_rows(rows, self.input)
    }

    /// Params and madds of rows whose name starts with `prefix`.
    pub fn share(&self, prefix: &str) -> (u64, u64) {
        self.rows
            .iter()
            .filter(|r| r.name.starts_with(prefix))
            .fold((0, 0), |(p, m), r| (p + r.params, m + r.total_madds()))
    }

    /// Totals per top-level block (text before the first `.`), in order.
    pub fn groups(&self) -> IndexMap<String, (u64, u64)> {
        let mut out: IndexMap<String, (u64, u64)> = IndexMap::new();
        for r in &self.rows {
            let key = r.name.split('.').next().unwrap_or(&r.name);
            let key = key.trim_end_matches(|c: char| c.is_ascii_digit()).to_string();
            let e = out.entry(key).or_default();
            e.0 += r.params;
            e.1 += r.total_madds();
        }
        out
    }

    /// `name params madds_per_pass passes total_madds`, one line per row.
    /// Multi-pass rows list their per-pass madds comma-separated.
    pub fn machine_lines(&self) -> String {
        let mut s = String::new();
        for r in &self.rows {
            let _ = writeln!(s, "{} {} {} {} {}", r.name, r.params, r.madds_field(), r.passes(), r.total_madds());
        }
        s
    }

    pub fn table(&self) -> String {
        let headers = ["layer", "params", "madds/pass", "passes", "total madds"];
        let mut cells: Vec<[String; 5]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.name.clone(),
                    r.params.to_string(),
                    r.madds_field(),
                    r.passes().to_string(),
                    r.total_madds().to_string(),
                ]
            })
            .collect();
        cells.push([
            "total".to_string(),
            self.total_params.to_string(),
            String::new(),
            String::new(),
            self.total_madds.to_string(),
        ]);
        let mut widths = headers.map(|h| h.chars().count());
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.chars().count());
            }
        }
        let mut s = String::new();
        let _ = writeln!(s, "input {}x{}", self.input.0, self.input.1);
        let line = |s: &mut String, row: &[String]| {
            let mut parts = Vec::new();
            for (i, c) in row.iter().enumerate() {
                if i == 0 {
                    parts.push(format!("{c:<w$}", w = widths[i]));
                } else {
                    parts.push(format!("{c:>w$}", w = widths[i]));
                }
            }
            let _ = writeln!(s, "{}", parts.join("  ").trim_end());
        };
        line(&mut s, &headers.map(String::from));
        let rule: Vec<String> = widths.iter().map(|&w| "─".repeat(w)).collect();
        let _ = writeln!(s, "{}", rule.join("  "));
        let last = cells.len() - 1;
        for (i, row) in cells.iter().enumerate() {
            if i == last {
                let _ = writeln!(s, "{}", rule.join("  "));
            }
            line(&mut s, row);
        }
        let _ = writeln!(s);
        for (g, (p, m)) in self.groups() {
            let _ = writeln!(s, "{g:<10} params {p:>10}  madds {m:>14}  ({:.1}%)", pct(m, self.total_madds));
        }
        s
    }
}

fn pct(part: u64, whole: u64) -> f64 {
    if whole == 0 {
        0.0
    } else {
        100.0 * part as f64 / whole as f64
    }
}

/// Unique trainable elements of a built model.
pub fn count_params<T: Element>(params: &ModelParams<T>) -> u64 {
    params.count_params()
}

/// Multiply-adds of one forward pass on an `h x w` image.
pub fn count_madds(cfg: &ModelConfig, h: usize, w: usize) -> Result<CostReport> {
    cfg.validate()?;
    cfg.check_input(h, w)?;
    Ok(Planner::plan(cfg, h, w)?.report((h, w)))
}

/// Parameters the config would declare, without instantiating anything.
pub fn planned_params(cfg: &ModelConfig) -> Result<u64> {
    let m = cfg.input_multiple();
    Ok(Planner::plan(cfg, m, m)?.param_count())
}

pub const MAX_EXPANSION: usize = 6;

/// Searches expansion factors 1..=6 (first block fixed at 1) for the
/// lexicographically smallest list minimizing |params - target|.
pub fn calibrate_expansions(target: u64, skeleton: &ModelConfig) -> Result<Vec<usize>> {
    let depth = skeleton.depth;
    let base_cfg = skeleton.clone().with_expansion(vec![1; depth]);
    base_cfg.validate()?;
    let base = planned_params(&base_cfg)? as i64;
    // blocks are independent, so a block's factor adds a fixed increment
    let mut delta = vec![0i64; MAX_EXPANSION + 1];
    for e in 2..=MAX_EXPANSION {
        let mut ex = vec![1; depth];
        ex[1] = e;
        delta[e] = planned_params(&skeleton.clone().with_expansion(ex))? as i64 - base;
    }
    let free = depth - 1;
    let mut digits = vec![1usize; free];
    let mut best: Option<(i64, Vec<usize>)> = None;
    'search: loop {
        let count = base + digits.iter().map(|&e| delta[e]).sum::<i64>();
        let err = (count - target as i64).abs();
        if best.as_ref().map_or(true, |(b, _)| err < *b) {
            best = Some((err, digits.clone()));
        }
        // odometer, last digit fastest: visits lists in lexicographic order
        let mut i = free;
        loop {
            if i == 0 {
                break 'search;
            }
            i -= 1;
            if digits[i] < MAX_EXPANSION {
                digits[i] += 1;
                continue 'search;
            }
            digits[i] = 1;
        }
    }
    let (_, digits) = best.expect("at least one candidate");
    let mut expansion = vec![1];
    expansion.extend(digits);
    let count = planned_params(&skeleton.clone().with_expansion(expansion.clone()))?;
    if (count as f64 - target as f64).abs() > 0.1 * target as f64 {
        return Err(Error::Unreachable { target, closest: count });
    }
    Ok(expansion)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Variant;

    #[test]
    fn single_conv_madds() {
        let mut p = Planner::new();
        let x = p.input([1, 3, 640, 640]);
        let spec = ConvSpec::new(3, 64, 3).stride(2);
        let w = Backend::<f32>::param(&mut p, "c.weight", ParamDecl::he(spec.weight_shape())).unwrap();
        Backend::<f32>::conv2d(&mut p, "c", &x, &w, None, &spec).unwrap();
        assert_eq!(p.rows()[0].madds, 320 * 320 * 64 * 3 * 9);
        assert_eq!(p.rows()[0].params, 64 * 27);
    }

    #[test]
    fn shared_params_charged_once() {
        let cfg = ModelConfig::preset(Variant::Fpn, 32);
        let r = count_madds(&cfg, 640, 640).unwrap();
        let row = r.rows.iter().find(|r| r.name == "backbone.block0.dw").unwrap();
        assert_eq!(row.passes(), 6);
        assert_eq!(row.params, 32 * 9);
        // pass 1 runs at the entry resolution, before the downsampler
        assert_eq!(row.pass_madds[0], 320 * 320 * 32 * 9);
        assert_eq!(row.pass_madds[1] * 4, row.pass_madds[0]);
        assert_eq!(r.total_params, planned_params(&cfg).unwrap());
    }

    #[test]
    fn totals_are_row_sums() {
        let r = count_madds(&ModelConfig::preset(Variant::Ssd, 48), 640, 640).unwrap();
        assert_eq!(r.total_madds, r.rows.iter().map(|r| r.total_madds()).sum::<u64>());
        let lines = r.machine_lines();
        assert_eq!(lines.lines().count(), r.rows.len());
        let no_ew = r.without_elementwise();
        assert!(no_ew.total_madds < r.total_madds);
        assert_eq!(no_ew.total_params, r.total_params);
    }

    #[test]
    fn labels_split_on_pass() {
        assert_eq!(split_label("a.b#p3"), ("a.b".to_string(), Some(3)));
        assert_eq!(split_label("up1.dw"), ("up1.dw".to_string(), None));
    }

    #[test]
    fn rejects_indivisible_input() {
        assert!(count_madds(&ModelConfig::preset(Variant::Fpn, 32), 600, 640).is_err());
    }

    #[test]
    fn unreachable_target_errors() {
        let sk = ModelConfig::preset(Variant::Fpn, 32);
        assert!(matches!(calibrate_expansions(10, &sk), Err(Error::Unreachable { .. })));
    }
}
