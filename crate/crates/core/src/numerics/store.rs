//! Named parameter store. Parameter names are dot-separated and namespaced
//! (`backbone.*`, `adapter.*`, `scaffold.*`); detaching scaffolding is a
//! namespace drop. BTreeMap keeps iteration order canonical everywhere
//! (optimizer sweeps, checkpoints, gradient reduction).

use crate::error::{Error, Result};
use crate::numerics::graph::{GradBuf, Graph, VarId};
use crate::scalar::Real;
use crate::tensor::Tensor;
use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};

/// Namespace prefixes used across the model.
pub const NS_BACKBONE: &str = "backbone.";
pub const NS_ADAPTER: &str = "adapter.";
pub const NS_SCAFFOLD: &str = "scaffold.";

#[derive(Debug, Clone)]
pub struct Param<F> {
    pub value: Tensor<F>,
    pub trainable: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore<F> {
    map: BTreeMap<String, Param<F>>,
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        Self {
            map: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<F>, trainable: bool) {
        let name = name.into();
        assert!(
            !self.map.contains_key(&name),
            "duplicate parameter '{name}'"
        );
        self.map.insert(name, Param { value, trainable });
    }

    pub fn get(&self, name: &str) -> &Tensor<F> {
        &self
            .map
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter '{name}'"))
            .value
    }

    pub fn try_get(&self, name: &str) -> Option<&Tensor<F>> {
        self.map.get(name).map(|p| &p.value)
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor<F> {
        &mut self
            .map
            .get_mut(name)
            .unwrap_or_else(|| panic!("missing parameter '{name}'"))
            .value
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.map.get(name).map(|p| p.trainable).unwrap_or(false)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    pub fn trainable_names(&self) -> Vec<String> {
        self.map
            .iter()
            .filter(|(_, p)| p.trainable)
            .map(|(n, _)| n.clone())
            .collect()
    }

    pub fn names_in_namespace(&self, prefix: &str) -> Vec<String> {
        self.map
            .keys()
            .filter(|n| n.starts_with(prefix))
            .cloned()
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param<F>)> {
        self.map.iter()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn remove_namespace(&mut self, prefix: &str) -> usize {
        let doomed = self.names_in_namespace(prefix);
        for name in &doomed {
            self.map.remove(name);
        }
        doomed.len()
    }

    pub fn value_count(&self, filter: impl Fn(&str, &Param<F>) -> bool) -> usize {
        self.map
            .iter()
            .filter(|(n, p)| filter(n, p))
            .map(|(_, p)| p.value.len())
            .sum()
    }

    pub fn trainable_value_count(&self) -> usize {
        self.value_count(|_, p| p.trainable)
    }
}

/// Forward-pass context: the parameter binding plus train/eval mode. Train
/// mode carries the rng that feeds dropout masks.
pub struct Fwd<'a, F: Real> {
    pub binder: &'a Binder<'a, F>,
    pub train: bool,
    pub rng: Option<&'a RefCell<rand_chacha::ChaCha8Rng>>,
}

impl<'a, F: Real> Fwd<'a, F> {
    pub fn eval(binder: &'a Binder<'a, F>) -> Self {
        Self {
            binder,
            train: false,
            rng: None,
        }
    }

    pub fn train(binder: &'a Binder<'a, F>, rng: &'a RefCell<rand_chacha::ChaCha8Rng>) -> Self {
        Self {
            binder,
            train: true,
            rng: Some(rng),
        }
    }

    pub fn graph(&self) -> &'a Graph<F> {
        self.binder.graph()
    }

    pub fn var(&self, name: &str) -> VarId {
        self.binder.var(name)
    }
}

/// Per-graph binding of store parameters to graph leaves. Repeated lookups
/// of one parameter reuse a single leaf so gradients accumulate correctly.
pub struct Binder<'a, F: Real> {
    graph: &'a Graph<F>,
    store: &'a ParamStore<F>,
    bound: RefCell<HashMap<String, VarId>>,
}

impl<'a, F: Real> Binder<'a, F> {
    pub fn new(graph: &'a Graph<F>, store: &'a ParamStore<F>) -> Self {
        Self {
            graph,
            store,
            bound: RefCell::new(HashMap::new()),
        }
    }

    pub fn graph(&self) -> &'a Graph<F> {
        self.graph
    }

    pub fn store(&self) -> &'a ParamStore<F> {
        self.store
    }

    pub fn var(&self, name: &str) -> VarId {
        if let Some(&id) = self.bound.borrow().get(name) {
            return id;
        }
        let id = self.graph.leaf(self.store.get(name).clone());
        self.bound.borrow_mut().insert(name.to_string(), id);
        id
    }

    /// Names of every parameter this graph has touched.
    pub fn bound_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.bound.borrow().keys().cloned().collect();
        names.sort();
        names
    }

    /// Reads trainable-parameter gradients out of a finished backward pass.
    /// Parameters that never entered this graph simply have no entry.
    pub fn trainable_grads(&self, grads: &GradBuf<F>) -> Result<BTreeMap<String, Tensor<F>>> {
        let mut out = BTreeMap::new();
        for (name, &id) in self.bound.borrow().iter() {
            if !self.store.is_trainable(name) {
                continue;
            }
            if let Some(g) = grads.get(id) {
                g.check_finite(&format!("gradient of {name}"))
                    .map_err(|_| Error::NonFinite(format!("gradient of {name}")))?;
                out.insert(name.clone(), g.clone());
            }
        }
        Ok(out)
    }
}
