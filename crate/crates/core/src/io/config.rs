//! `key = value` model configuration text.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, Variant};
use crate::tensor::Activation;

const KEYS: [&str; 8] = ["variant", "width", "depth", "activation", "levels", "expansion", "seed", "bn_per_pass"];

/// Parses configuration text. `variant` (default fpn) and `width` (default
/// 32) pick a preset that the remaining keys override. Changing `depth`
/// requires an explicit `expansion` list. `#` starts a comment.
pub fn parse_config(text: &str) -> Result<ModelConfig> {
    let mut kv: BTreeMap<&str, (usize, &str)> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::parse(line_no, "expected `key = value`"))?;
        let (k, v) = (k.trim(), v.trim());
        if !KEYS.contains(&k) {
            return Err(Error::parse(line_no, format!("unknown key `{k}`")));
        }
        if kv.insert(k, (line_no, v)).is_some() {
            return Err(Error::parse(line_no, format!("duplicate key `{k}`")));
        }
    }

    fn num<N: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<N> {
        v.parse().map_err(|_| Error::parse(line, format!("`{key}` expects an unsigned integer, got `{v}`")))
    }
    let with_line = |line: usize| move |e: Error| Error::parse(line, e.to_string());

    let variant = match kv.get("variant") {
        Some(&(l, v)) => v.parse::<Variant>().map_err(with_line(l))?,
        None => Variant::Fpn,
    };
    let width = match kv.get("width") {
        Some(&(l, v)) => num(l, "width", v)?,
        None => 32,
    };
    let mut cfg = ModelConfig::preset(variant, width);
    if let Some(&(l, v)) = kv.get("activation") {
        cfg.activation = v.parse::<Activation>().map_err(with_line(l))?;
    }
    if let Some(&(l, v)) = kv.get("levels") {
        cfg.levels = num(l, "levels", v)?;
    }
    if let Some(&(l, v)) = kv.get("seed") {
        cfg.seed = num(l, "seed", v)?;
    }
    if let Some(&(l, v)) = kv.get("bn_per_pass") {
        cfg.bn_per_pass = match v {
            "true" => true,
            "false" => false,
            _ => return Err(Error::parse(l, format!("`bn_per_pass` expects true or false, got `{v}`"))),
        };
    }
    if let Some(&(l, v)) = kv.get("expansion") {
        let e: Vec<usize> = v.split(',').map(|s| num(l, "expansion", s.trim())).collect::<Result<_>>()?;
        cfg = cfg.with_expansion(e);
    }
    if let Some(&(l, v)) = kv.get("depth") {
        let depth: usize = num(l, "depth", v)?;
        if depth != cfg.depth {
            return Err(Error::parse(l, format!("depth {depth} needs a matching `expansion` list ({} given)", cfg.depth)));
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Inverse of [`parse_config`]; lists every key.
pub fn render_config(cfg: &ModelConfig) -> String {
    let e: Vec<String> = cfg.expansion.iter().map(|x| x.to_string()).collect();
    format!(
        "variant = {}\nwidth = {}\ndepth = {}\nactivation = {}\nlevels = {}\nexpansion = {}\nseed = {}\nbn_per_pass = {}\n",
        cfg.variant,
        cfg.width,
        cfg.depth,
        cfg.activation,
        cfg.levels,
        e.join(","),
        cfg.seed,
        cfg.bn_per_pass
    )
}
