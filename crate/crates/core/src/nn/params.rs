use crate::error::{contract_err, Result};
use crate::tensor::{Graph, Tensor, Var};

/// Index of an entry in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Updated by the optimizer.
    Trainable,
    /// State carried between steps but not differentiated (running statistics).
    Buffer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub value: Tensor,
    pub kind: ParamKind,
}

/// Named storage for every parameter and buffer of a model.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, kind: ParamKind) -> Result<ParamId> {
        let name = name.into();
        if self.entries.iter().any(|e| e.name == name) {
            return contract_err(format!("parameter `{name}` registered twice"));
        }
        self.entries.push(ParamEntry { name, value, kind });
        Ok(ParamId(self.entries.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    /// Total number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.kind == ParamKind::Trainable)
            .map(|e| e.value.numel())
            .sum()
    }

    /// Round every value to the nearest `f32`, the precision checkpoints use.
    pub fn round_to_f32(&mut self) {
        for e in &mut self.entries {
            e.value
                .data_mut()
                .iter_mut()
                .for_each(|v| *v = *v as f32 as f64);
        }
    }
}

/// Whether layers use batch statistics (and update running ones) or the
/// stored running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-parameter gradients indexed by [`ParamId`]; `None` for buffers or
/// parameters whose gradient was never produced.
#[derive(Clone, Debug, Default)]
pub struct Gradients(pub Vec<Option<Tensor>>);

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.0.get(id.0).and_then(|g| g.as_ref())
    }
}

/// One forward pass: a fresh graph with every trainable parameter
/// registered as a tracked leaf.
pub struct Session<'p> {
    pub graph: Graph,
    store: &'p mut ParamStore,
    vars: Vec<Option<Var>>,
    mode: Mode,
}

impl<'p> Session<'p> {
    pub fn new(store: &'p mut ParamStore, mode: Mode) -> Self {
        let mut graph = Graph::new();
        let vars = store
            .entries
            .iter()
            .map(|e| (e.kind == ParamKind::Trainable).then(|| graph.variable(e.value.clone())))
            .collect();
        Self {
            graph,
            store,
            vars,
            mode,
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Graph handle of a trainable parameter.
    pub fn param(&self, id: ParamId) -> Var {
        self.vars[id.0].expect("buffer used as a trainable parameter")
    }

    pub fn buffer(&self, id: ParamId) -> &Tensor {
        self.store.get(id)
    }

    pub fn buffer_mut(&mut self, id: ParamId) -> &mut Tensor {
        self.store.get_mut(id)
    }

    /// Collect parameter gradients after [`Graph::backward`].
    pub fn gradients(&self) -> Gradients {
        Gradients(
            self.vars
                .iter()
                .map(|v| v.and_then(|v| self.graph.grad(v)))
                .collect(),
        )
    }
}
