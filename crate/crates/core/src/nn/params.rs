use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::graph::{Gradients, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

/// Named parameter arrays of one network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSet<T> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Float> Default for ParamSet<T> {
    fn default() -> Self {
        Self {
            tensors: BTreeMap::new(),
        }
    }
}

/// Graph handles of a [`ParamSet`] bound into one [`Graph`].
#[derive(Clone, Debug, Default)]
pub struct Bound {
    vars: HashMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Missing(format!("parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}

impl<T: Float> ParamSet<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.tensors.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    /// Adds every entry of `other` under `prefix`.
    pub fn extend_prefixed(&mut self, prefix: &str, other: ParamSet<T>) {
        for (k, v) in other.tensors {
            self.tensors.insert(format!("{prefix}{k}"), v);
        }
    }

    pub fn cast<U: Float>(&self) -> ParamSet<U> {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(Tensor::all_finite)
    }

    /// He-normal convolution weight `[cout, cin, k, k]` and zero bias.
    pub fn add_conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, rng: &mut impl Rng) {
        let std = (2.0 / (cin * k * k) as f64).sqrt();
        let w = Tensor::from_fn(&[cout, cin, k, k], |_| {
            let z: f64 = StandardNormal.sample(rng);
            T::from_f64(std * z)
        });
        self.insert(format!("{name}.w"), w);
        self.insert(format!("{name}.b"), Tensor::zeros(&[cout]));
    }

    /// Small-uniform dense weight `[din, dout]` and zero bias.
    pub fn add_linear(&mut self, name: &str, din: usize, dout: usize, rng: &mut impl Rng) {
        let bound = 1.0 / (din as f64).sqrt();
        let w = Tensor::from_fn(&[din, dout], |_| T::from_f64(rng.random_range(-bound..bound)));
        self.insert(format!("{name}.w"), w);
        self.insert(format!("{name}.b"), Tensor::zeros(&[dout]));
    }

    pub fn add_layer_norm(&mut self, name: &str, c: usize) {
        self.insert(format!("{name}.gamma"), Tensor::full(&[c], T::ONE));
        self.insert(format!("{name}.beta"), Tensor::zeros(&[c]));
    }

    /// Copies every tensor into `g` as a leaf; trainable leaves receive gradients.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|(k, v)| {
                let var = if trainable {
                    g.param(v.clone())
                } else {
                    g.constant(v.clone())
                };
                (k.clone(), var)
            })
            .collect();
        Bound { vars }
    }

    /// Collects the gradient of every bound parameter (zeros where none flowed).
    pub fn gradients(&self, bound: &Bound, grads: &Gradients<T>) -> Result<ParamSet<T>> {
        let mut out = ParamSet::new();
        for (k, v) in &self.tensors {
            let var = bound.get(k)?;
            let g = grads
                .get(var)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(v.shape()));
            out.insert(k.clone(), g);
        }
        Ok(out)
    }

    /// `self += scale * other`, entrywise over matching names.
    pub fn axpy(&mut self, scale: T, other: &ParamSet<T>) -> Result<()> {
        for (k, v) in self.tensors.iter_mut() {
            let o = other
                .tensors
                .get(k)
                .ok_or_else(|| Error::Missing(format!("parameter {k}")))?;
            for (a, &b) in v.data_mut().iter_mut().zip(o.data()) {
                *a += scale * b;
            }
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> ParamSet<T> {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
                .collect(),
        }
    }
}
