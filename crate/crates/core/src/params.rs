//! Named parameter tensors and their binding into a graph.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::stream;
use crate::tensor::{read_checkpoint, write_checkpoint, Graph, NodeId, Tensor};

/// Parameters keyed by name; iteration order is name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.params.insert(name.into(), t.with_requires_grad(true));
    }

    /// Uniform on ±1/√fan_in, seeded by `(seed, name)` so a parameter's
    /// initial value does not depend on what else is in the store.
    pub fn init_uniform(&mut self, seed: u64, name: &str, shape: Vec<usize>, fan_in: usize) -> Result<()> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let mut rng = stream(seed, name);
        let n = shape.iter().product();
        let values = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        self.insert(name, Tensor::new(shape, values)?);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Adds every parameter to `g` as a gradient-tracking leaf.
    pub fn bind(&self, g: &mut Graph) -> BoundParams {
        BoundParams {
            nodes: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), g.leaf(v.clone())))
                .collect(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        write_checkpoint(std::io::BufWriter::new(f), self.iter())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut store = ParamStore::new();
        for (name, t) in read_checkpoint(std::io::BufReader::new(f))? {
            store.insert(name, t);
        }
        Ok(store)
    }
}

/// Graph nodes of a bound [`ParamStore`].
#[derive(Clone, Debug, Default)]
pub struct BoundParams {
    nodes: BTreeMap<String, NodeId>,
}

impl BoundParams {
    pub fn node(&self, name: &str) -> Result<NodeId> {
        self.nodes
            .get(name)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("parameter `{name}` is not bound")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, NodeId)> {
        self.nodes.iter().map(|(k, v)| (k.as_str(), *v))
    }
}
