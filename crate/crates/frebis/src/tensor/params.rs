use super::buf::{Buf, Real};
use super::graph::{Graph, Var};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

pub struct Param<T> {
    pub name: String,
    pub value: Buf<T>,
}

/// Named parameter tensors, in registration order. The order is the
/// canonical checkpoint / optimizer order.
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn register(&mut self, name: impl Into<String>, value: Buf<T>) -> ParamId {
        let name = name.into();
        assert!(
            !self.params.iter().any(|p| p.name == name),
            "duplicate parameter name {name}"
        );
        self.params.push(Param { name, value });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }
    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Buf<T> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Buf<T> {
        &mut self.params[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn by_name(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Mutable views of every parameter in registration order, for the
    /// optimizer step.
    pub fn values_mut_all(&mut self) -> Vec<&mut Buf<T>> {
        self.params.iter_mut().map(|p| &mut p.value).collect()
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.params.iter().map(|p| p.value.shape()).collect()
    }

    pub fn total_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Leaf every parameter into a graph. `trainable` controls whether the
    /// leaves require gradients (training) or not (inference).
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> ParamBinding {
        let vars = self
            .params
            .iter()
            .map(|p| if trainable { g.leaf(p.value.clone()) } else { g.constant(p.value.clone()) })
            .collect();
        ParamBinding { vars }
    }
}

/// Per-step mapping of parameters to graph leaves.
pub struct ParamBinding {
    vars: Vec<Var>,
}

impl ParamBinding {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Substitute one parameter's graph node, e.g. to gradient-check a
    /// forward pass against a candidate leaf.
    pub fn override_var(&mut self, id: ParamId, v: Var) {
        self.vars[id.0] = v;
    }
}
