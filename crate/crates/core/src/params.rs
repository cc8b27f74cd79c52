//! Named store of trainable tensors.

use std::collections::HashMap;

use ndarray::Array2;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Params {
    names: Vec<String>,
    tensors: Vec<Array2<f64>>,
    index: HashMap<String, usize>,
}

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor; names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: Array2<f64>) -> usize {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(value.as_standard_layout().into_owned());
        self.names.len() - 1
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.id(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array2<f64>> {
        self.id(name).map(|i| &mut self.tensors[i])
    }

    pub fn tensor(&self, id: usize) -> &Array2<f64> {
        &self.tensors[id]
    }

    pub fn tensor_mut(&mut self, id: usize) -> &mut Array2<f64> {
        &mut self.tensors[id]
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Array2<f64>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.tensors
    }

    /// Total number of trainable scalars.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn zeros_like(&self) -> Vec<Array2<f64>> {
        self.tensors.iter().map(|t| Array2::zeros(t.dim())).collect()
    }
}
