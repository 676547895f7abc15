use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Ordered collection of named parameter arrays.
///
/// Names ending in `.bias` are biases; every other array counts as a weight
/// for regularization and weight statistics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<(String, Tensor)>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> Result<()> {
        let name = name.into();
        if self.entries.iter().any(|(n, _)| *n == name) {
            return Err(Error::Shape(format!("duplicate parameter name {name}")));
        }
        self.entries.push((name, t));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Shape(format!("missing parameter {name}")))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    /// Total number of scalars.
    pub fn count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn is_bias(name: &str) -> bool {
        name.ends_with(".bias")
    }

    /// All non-bias values, flattened in store order.
    pub fn weights_flat(&self) -> Vec<f64> {
        self.entries
            .iter()
            .filter(|(n, _)| !Self::is_bias(n))
            .flat_map(|(_, t)| t.data().iter().copied())
            .collect()
    }

    /// `Σ w²` over non-bias arrays.
    pub fn weight_sum_squares(&self) -> f64 {
        self.entries
            .iter()
            .filter(|(n, _)| !Self::is_bias(n))
            .map(|(_, t)| t.sum_squares())
            .sum()
    }

    /// Sets every value to zero.
    pub fn zero_all(&mut self) {
        for (_, t) in &mut self.entries {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// True when every value is finite.
    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|(_, t)| t.data().iter().all(|v| v.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_exclude_biases() {
        let mut p = ParamStore::new();
        p.insert("conv.weight", Tensor::new(vec![2], vec![1.0, 2.0]).unwrap()).unwrap();
        p.insert("conv.bias", Tensor::new(vec![1], vec![5.0]).unwrap()).unwrap();
        assert_eq!(p.count(), 3);
        assert_eq!(p.weights_flat(), vec![1.0, 2.0]);
        assert_eq!(p.weight_sum_squares(), 5.0);
        assert!(p.insert("conv.bias", Tensor::zeros(vec![1])).is_err());
        assert!(p.get("nope").is_err());
    }
}
