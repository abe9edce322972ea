//! Named parameter store and parameter declarations.

use indexmap::IndexMap;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Element, Shape, Tensor};

/// How a declared parameter is initialized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Zero-mean normal with variance `2 / fan_in`.
    He { fan_in: usize },
    Const(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamDecl {
    pub shape: Shape,
    pub init: Init,
}

impl ParamDecl {
    pub fn he(shape: Shape) -> Self {
        ParamDecl { shape, init: Init::He { fan_in: shape[1] * shape[2] * shape[3] } }
    }

    pub fn vector(len: usize, value: f64) -> Self {
        ParamDecl { shape: [len, 1, 1, 1], init: Init::Const(value) }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn instantiate<T: Element>(&self, rng: &mut impl Rng) -> Tensor<T> {
        match self.init {
            Init::He { fan_in } => {
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
                let data = (0..self.numel()).map(|_| T::lit(normal.sample(rng))).collect();
                Tensor::from_vec(self.shape, data).expect("declared shape")
            }
            Init::Const(v) => Tensor::full(self.shape, T::lit(v)),
        }
    }
}

pub const RUNNING_MEAN: &str = "running_mean";
pub const RUNNING_VAR: &str = "running_var";

pub fn running_mean_name(stats: &str) -> String {
    format!("{stats}.{RUNNING_MEAN}")
}

pub fn running_var_name(stats: &str) -> String {
    format!("{stats}.{RUNNING_VAR}")
}

/// True for BN running statistics, which are state rather than parameters.
pub fn is_running_stat(name: &str) -> bool {
    name.ends_with(RUNNING_MEAN) || name.ends_with(RUNNING_VAR)
}

/// Weight decay applies to conv weights and biases only; BN affine
/// parameters and PReLU slopes are exempt.
pub fn decays(name: &str) -> bool {
    name.ends_with(".weight") || name.ends_with(".bias")
}

/// Ordered map from parameter name to tensor.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelParams<T: Element = f32> {
    tensors: IndexMap<String, Tensor<T>>,
}

impl<T: Element> ModelParams<T> {
    pub fn new() -> Self {
        ModelParams { tensors: IndexMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) -> Option<Tensor<T>> {
        self.tensors.insert(name.into(), t)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.tensors.get(name).ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.tensors.get_mut(name).ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn trainable_names(&self) -> impl Iterator<Item = &str> {
        self.names().filter(|n| !is_running_stat(n))
    }

    /// Element count over unique trainable tensors (running stats excluded).
    pub fn count_params(&self) -> u64 {
        self.iter()
            .filter(|(n, _)| !is_running_stat(n))
            .map(|(_, t)| t.len() as u64)
            .sum()
    }

    pub fn cast<U: Element>(&self) -> ModelParams<U> {
        ModelParams { tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect() }
    }
}
