use std::sync::{Arc, RwLock};

use crate::tensor::Tensor;

struct ParamInner {
    name: String,
    value: RwLock<Tensor>,
}

/// A named trainable tensor. Cloning yields another handle to the same slot.
#[derive(Clone)]
pub struct Param(Arc<ParamInner>);

impl Param {
    pub fn name(&self) -> &str {
        &self.0.name
    }

    /// Current value as a graph leaf.
    pub fn get(&self) -> Tensor {
        self.0.value.read().expect("param lock poisoned").clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.get().shape().to_vec()
    }

    /// Replaces the stored values, keeping shape and trainability.
    pub fn set_data(&self, data: Vec<f64>) {
        let mut slot = self.0.value.write().expect("param lock poisoned");
        assert_eq!(data.len(), slot.numel(), "parameter {} size change", self.0.name);
        let fresh = Tensor::from_vec(data, slot.shape());
        *slot = if slot.requires_grad() {
            fresh.leaf_requiring_grad()
        } else {
            fresh
        };
    }

    fn set_trainable(&self, trainable: bool) {
        let mut slot = self.0.value.write().expect("param lock poisoned");
        *slot = if trainable {
            slot.leaf_requiring_grad()
        } else {
            slot.detach()
        };
    }
}

impl std::fmt::Debug for Param {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Param({}, {:?})", self.name(), self.shape())
    }
}

/// Ordered collection of the parameters of one network.
#[derive(Default, Clone, Debug)]
pub struct VarStore {
    params: Vec<Param>,
}

/// A flat snapshot of one parameter: name, shape and values.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl VarStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a trainable parameter initialised to `init`.
    pub fn add(&mut self, name: impl Into<String>, init: Tensor) -> Param {
        let name = name.into();
        assert!(
            self.params.iter().all(|p| p.name() != name),
            "duplicate parameter name {name}"
        );
        let p = Param(Arc::new(ParamInner {
            name,
            value: RwLock::new(init.detach().leaf_requiring_grad()),
        }));
        self.params.push(p.clone());
        p
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name() == name)
    }

    /// Current parameter leaves, in registration order.
    pub fn tensors(&self) -> Vec<Tensor> {
        self.params.iter().map(Param::get).collect()
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.get().numel()).sum()
    }

    /// Stops gradient tracking for every parameter.
    pub fn freeze(&self) {
        for p in &self.params {
            p.set_trainable(false);
        }
    }

    pub fn unfreeze(&self) {
        for p in &self.params {
            p.set_trainable(true);
        }
    }

    pub fn snapshot(&self) -> Vec<NamedTensor> {
        self.params
            .iter()
            .map(|p| {
                let t = p.get();
                NamedTensor {
                    name: p.name().to_string(),
                    shape: t.shape().to_vec(),
                    data: t.to_vec(),
                }
            })
            .collect()
    }

    /// Loads values by name; every parameter must be present with its shape.
    pub fn restore(&self, values: &[NamedTensor]) -> Result<(), String> {
        for p in &self.params {
            let v = values
                .iter()
                .find(|v| v.name == p.name())
                .ok_or_else(|| format!("missing parameter {}", p.name()))?;
            if v.shape != p.shape() {
                return Err(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    p.name(),
                    v.shape,
                    p.shape()
                ));
            }
            p.set_data(v.data.clone());
        }
        Ok(())
    }

    /// Copies all values from another store with the same layout.
    pub fn copy_from(&self, other: &VarStore) -> Result<(), String> {
        self.restore(&other.snapshot())
    }
}
