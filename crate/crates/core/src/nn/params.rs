use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Gradients, Graph, RunningStats, Var};
use super::tensor::{Scalar, Tensor};
use super::NnError;

#[derive(Debug, Clone, PartialEq)]
pub struct Param<F> {
    pub name: String,
    pub value: Tensor<F>,
    /// Batch-norm running statistics are stored here but never optimized.
    pub trainable: bool,
}

/// Named, ordered collection of model tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<F> {
    params: Vec<Param<F>>,
    index: HashMap<String, usize>,
}

impl<F: Scalar> Default for ParamStore<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<F>, trainable: bool) {
        let name = name.into();
        if let Some(&i) = self.index.get(&name) {
            self.params[i] = Param { name, value, trainable };
            return;
        }
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Param { name, value, trainable });
    }

    /// Uniform in `±sqrt(6 / fan_in)`, the scaled fan-in scheme used for every weight.
    pub fn insert_fan_in(&mut self, name: &str, shape: Vec<usize>, fan_in: usize, rng: &mut ChaCha8Rng) {
        let bound = (6.0 / fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| F::from_f64_lossy(rng.random_range(-bound..bound)))
            .collect();
        self.insert(name, Tensor::new(shape, data).expect("shape product"), true);
    }

    pub fn params(&self) -> &[Param<F>] {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Result<usize, NnError> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| NnError::MissingParam(name.to_string()))
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<F>, NnError> {
        Ok(&self.params[self.index_of(name)?].value)
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<F>, NnError> {
        let i = self.index_of(name)?;
        Ok(&mut self.params[i].value)
    }

    pub fn value_mut(&mut self, index: usize) -> &mut Tensor<F> {
        &mut self.params[index].value
    }

    /// Temporarily detaches the running statistics stored under `prefix.running_{mean,var}`.
    pub fn take_running(&mut self, prefix: &str) -> Result<RunningStats<F>, NnError> {
        let mean = std::mem::replace(self.get_mut(&format!("{prefix}.running_mean"))?, Tensor::zeros(vec![0]));
        let var = std::mem::replace(self.get_mut(&format!("{prefix}.running_var"))?, Tensor::zeros(vec![0]));
        Ok(RunningStats { mean, var })
    }

    pub fn put_running(&mut self, prefix: &str, stats: RunningStats<F>) -> Result<(), NnError> {
        *self.get_mut(&format!("{prefix}.running_mean"))? = stats.mean;
        *self.get_mut(&format!("{prefix}.running_var"))? = stats.var;
        Ok(())
    }

    /// Registers every trainable tensor as a gradient-tracking leaf.
    pub fn bind(&self, graph: &mut Graph<F>) -> Binding {
        let vars = self
            .params
            .iter()
            .map(|p| p.trainable.then(|| graph.leaf(p.value.clone(), true)))
            .collect();
        Binding {
            vars,
            index: self.index.clone(),
        }
    }

    pub fn cast<G: Scalar>(&self) -> ParamStore<G> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    trainable: p.trainable,
                })
                .collect(),
            index: self.index.clone(),
        }
    }

    pub fn total_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}

/// Graph leaves for one forward pass, aligned with the store's order.
pub struct Binding {
    vars: Vec<Option<Var>>,
    index: HashMap<String, usize>,
}

impl Binding {
    pub fn var(&self, name: &str) -> Result<Var, NnError> {
        self.index
            .get(name)
            .and_then(|&i| self.vars[i])
            .ok_or_else(|| NnError::MissingParam(name.to_string()))
    }

    /// Per-parameter gradients in store order; `None` for frozen tensors and unused leaves.
    pub fn gradients<F: Scalar>(&self, grads: &mut Gradients<F>) -> Vec<Option<Tensor<F>>> {
        self.vars.iter().map(|v| v.and_then(|v| grads.take(v))).collect()
    }
}
