use std::collections::HashMap;
use std::ops::{Deref, DerefMut};

use rand::Rng;

use super::{DiffError, Tape, Tensor, Var};

/// Index of a tensor inside a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of trainable tensors.
#[derive(Clone, Debug, Default)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers `t` under `name`. Names are unique.
    pub fn add(&mut self, name: impl Into<String>, t: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.values.len());
        self.names.push(name);
        self.values.push(t);
        ParamId(self.values.len() - 1)
    }

    /// Registers a tensor drawn uniformly from `[-bound, bound]`.
    pub fn add_uniform(
        &mut self,
        name: impl Into<String>,
        dims: &[usize],
        bound: f64,
        rng: &mut impl Rng,
    ) -> Result<ParamId, DiffError> {
        let mut t = Tensor::zeros(dims)?;
        if bound > 0.0 {
            for v in t.data_mut() {
                *v = rng.random_range(-bound..=bound);
            }
        }
        Ok(self.add(name, t))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// Euclidean norm over every scalar.
    pub fn norm(&self) -> f64 {
        self.values.iter().map(Tensor::norm_sq).sum::<f64>().sqrt()
    }
}

/// A tape plus lazy bindings of parameters to leaves.
pub struct Session<'p> {
    tape: Tape,
    params: &'p ParamSet,
    bound: Vec<Option<Var>>,
    trainable: bool,
}

impl<'p> Session<'p> {
    /// Parameters bound as gradient-receiving leaves.
    pub fn new(params: &'p ParamSet) -> Self {
        Session {
            tape: Tape::new(),
            params,
            bound: vec![None; params.len()],
            trainable: true,
        }
    }

    /// Parameters bound as constants; for evaluation only.
    pub fn frozen(params: &'p ParamSet) -> Self {
        Session {
            trainable: false,
            ..Session::new(params)
        }
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let t = self.params.get(id).clone();
        let v = if self.trainable {
            self.tape.param(t)
        } else {
            self.tape.constant(t)
        };
        self.bound[id.0] = Some(v);
        v
    }

    /// Gradient for every parameter, in [`ParamSet`] order. Parameters the
    /// loss never touched get zeros.
    pub fn backward(self, loss: Var) -> Result<Vec<Tensor>, DiffError> {
        let grads = self.tape.backward(loss)?;
        Ok(self
            .params
            .values()
            .iter()
            .zip(&self.bound)
            .map(|(p, b)| {
                b.and_then(|v| grads.get(v).cloned())
                    .unwrap_or_else(|| Tensor::from_parts(p.shape().clone(), vec![0.0; p.numel()]))
            })
            .collect())
    }
}

impl Deref for Session<'_> {
    type Target = Tape;
    fn deref(&self) -> &Tape {
        &self.tape
    }
}

impl DerefMut for Session<'_> {
    fn deref_mut(&mut self) -> &mut Tape {
        &mut self.tape
    }
}
