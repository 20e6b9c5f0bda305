//! Named parameter registry shared by every model.
//!
//! Parameters are leaf tensors behind `Rc<RefCell<..>>` handles so the
//! optimizer can swap in updated values while model layers keep their handle.
//! Registration order is fixed and drives checkpoint layout and the
//! deterministic initialization stream.

use alloc::format;
use alloc::rc::Rc;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mathx;
use crate::tensor::Tensor;

pub type ParamHandle = Rc<RefCell<Tensor>>;

pub struct ParamSet {
    entries: Vec<(String, ParamHandle)>,
}

impl ParamSet {
    pub fn new() -> ParamSet {
        ParamSet { entries: Vec::new() }
    }

    pub fn register(&mut self, name: &str, value: Tensor) -> Result<ParamHandle> {
        if self.entries.iter().any(|(n, _)| n == name) {
            return Err(Error::Contract(format!("duplicate parameter name {name}")));
        }
        let leaf = Tensor::build(value.shape(), value.data().to_vec(), true)?;
        let handle = Rc::new(RefCell::new(leaf));
        self.entries.push((name.into(), handle.clone()));
        Ok(handle)
    }

    /// Weight matrix initialized from a truncated normal (sigma 0.02,
    /// bounds +/- 2 sigma).
    pub fn weight(&mut self, name: &str, shape: &[usize], rng: &mut ChaCha8Rng) -> Result<ParamHandle> {
        let n: usize = shape.iter().product();
        let data: Vec<f32> = (0..n).map(|_| mathx::sample_trunc_normal(rng, 0.02)).collect();
        self.register(name, Tensor::new(shape, data)?)
    }

    /// Zero-initialized parameter (biases, layer-norm biases).
    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> Result<ParamHandle> {
        let n: usize = shape.iter().product();
        self.register(name, Tensor::new(shape, vec![0.0; n])?)
    }

    /// One-initialized parameter (layer-norm gains).
    pub fn ones(&mut self, name: &str, shape: &[usize]) -> Result<ParamHandle> {
        let n: usize = shape.iter().product();
        self.register(name, Tensor::new(shape, vec![1.0; n])?)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count across all parameters.
    pub fn num_values(&self) -> usize {
        self.entries.iter().map(|(_, h)| h.borrow().len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamHandle)> {
        self.entries.iter().map(|(n, h)| (n.as_str(), h))
    }

    pub fn get(&self, name: &str) -> Option<&ParamHandle> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, h)| h)
    }

    /// Replace a parameter value in place, keeping shape.
    pub fn set_value(&self, name: &str, data: Vec<f32>) -> Result<()> {
        let handle = self
            .get(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter {name}")))?;
        let shape = handle.borrow().shape().to_vec();
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::shape(
                "set_value",
                format!("{name}: shape {:?} vs {} values", shape, data.len()),
            ));
        }
        *handle.borrow_mut() = Tensor::build(&shape, data, true)?;
        Ok(())
    }
}

impl Default for ParamSet {
    fn default() -> Self {
        ParamSet::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn duplicate_names_rejected() {
        let mut ps = ParamSet::new();
        ps.zeros("a", &[2]).unwrap();
        assert!(ps.zeros("a", &[2]).is_err());
    }

    #[test]
    fn trunc_normal_bounded() {
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let h = ps.weight("w", &[64, 64], &mut rng).unwrap();
        let t = h.borrow();
        assert!(t.data().iter().all(|v| v.abs() <= 0.04 + 1e-9));
        assert!(t.data().iter().any(|v| v.abs() > 0.001));
    }

    #[test]
    fn set_value_checks_shape() {
        let ps = {
            let mut ps = ParamSet::new();
            ps.zeros("a", &[2, 2]).unwrap();
            ps
        };
        assert!(ps.set_value("a", vec![1.0; 3]).is_err());
        assert!(ps.set_value("a", vec![1.0; 4]).is_ok());
        assert_eq!(ps.get("a").unwrap().borrow().data(), &[1.0; 4]);
    }
}
