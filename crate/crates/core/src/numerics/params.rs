use std::collections::BTreeMap;

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{RdmError, Result};

pub type GradMap = BTreeMap<String, Tensor>;

/// Named parameters with deterministic (sorted) iteration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(RdmError::contract(format!("duplicate parameter {name}")));
        }
        self.params.insert(name, t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Registers every parameter as a graph leaf.
    pub fn bind(&self, g: &mut Graph) -> BoundParams {
        let vars = self
            .params
            .iter()
            .map(|(name, t)| (name.clone(), g.param(name, t.clone())))
            .collect();
        BoundParams { vars }
    }

    /// Registers every parameter as a constant (inference only).
    pub fn bind_frozen(&self, g: &mut Graph) -> BoundParams {
        let vars = self
            .params
            .iter()
            .map(|(name, t)| (name.clone(), g.constant(t.clone())))
            .collect();
        BoundParams { vars }
    }
}

impl FromIterator<(String, Tensor)> for ParamStore {
    fn from_iter<I: IntoIterator<Item = (String, Tensor)>>(iter: I) -> Self {
        Self {
            params: iter.into_iter().collect(),
        }
    }
}

/// Parameter name → graph variable.
#[derive(Debug, Clone)]
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| RdmError::contract(format!("missing parameter {name}")))
    }
}

/// Adds `src` into `dst` elementwise, inserting missing names.
pub fn accumulate_grads(dst: &mut GradMap, src: GradMap) {
    for (name, g) in src {
        match dst.get_mut(&name) {
            Some(acc) => acc.add_assign(&g),
            None => {
                dst.insert(name, g);
            }
        }
    }
}
