use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to one named tensor inside a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    offset: usize,
    len: usize,
}

/// Flat registry of named tensors. Gradients use a registry with the same
/// layout (see [`ParamSet::zeros_like`]).
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<S> {
    specs: Vec<TensorSpec>,
    index: HashMap<String, usize>,
    data: Vec<S>,
}

impl<S: Scalar> Default for ParamSet<S> {
    fn default() -> Self {
        ParamSet {
            specs: Vec::new(),
            index: HashMap::new(),
            data: Vec::new(),
        }
    }
}

impl<S: Scalar> ParamSet<S> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, shape: &[usize], values: Vec<S>) -> Result<ParamId> {
        let len = shape.iter().product::<usize>();
        if values.len() != len {
            return Err(Error::Shape(format!(
                "{name}: {} values for shape {shape:?}",
                values.len()
            )));
        }
        if self.index.contains_key(name) {
            return Err(Error::Shape(format!("duplicate tensor {name}")));
        }
        let id = self.specs.len();
        self.specs.push(TensorSpec {
            name: name.to_string(),
            shape: shape.to_vec(),
            offset: self.data.len(),
            len,
        });
        self.index.insert(name.to_string(), id);
        self.data.extend(values);
        Ok(ParamId(id))
    }

    pub fn register_zeros(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        let len = shape.iter().product();
        self.register(name, shape, vec![S::zero(); len])
    }

    pub fn register_filled(&mut self, name: &str, shape: &[usize], value: S) -> Result<ParamId> {
        let len = shape.iter().product();
        self.register(name, shape, vec![value; len])
    }

    /// Uniform in `±sqrt(3 / fan_in)` (unit-variance preserving).
    pub fn register_fan_in<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        shape: &[usize],
        fan_in: usize,
        rng: &mut R,
    ) -> Result<ParamId> {
        let bound = (3.0 / fan_in.max(1) as f64).sqrt();
        let len = shape.iter().product();
        let values = (0..len).map(|_| S::lit(rng.gen_range(-bound..bound))).collect();
        self.register(name, shape, values)
    }

    pub fn zeros_like(&self) -> Self {
        ParamSet {
            specs: self.specs.clone(),
            index: self.index.clone(),
            data: vec![S::zero(); self.data.len()],
        }
    }

    pub fn same_layout(&self, other: &ParamSet<S>) -> bool {
        self.specs == other.specs
    }

    pub fn specs(&self) -> &[TensorSpec] {
        &self.specs
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn get(&self, id: ParamId) -> &[S] {
        let s = &self.specs[id.0];
        &self.data[s.offset..s.offset + s.len]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [S] {
        let s = &self.specs[id.0];
        &mut self.data[s.offset..s.offset + s.len]
    }

    pub fn named(&self, name: &str) -> Option<&[S]> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn flat(&self) -> &[S] {
        &self.data
    }

    pub fn flat_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn num_scalars(&self) -> usize {
        self.data.len()
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|x| *x = S::zero());
    }

    pub fn check_finite(&self) -> Result<()> {
        for s in &self.specs {
            if self.data[s.offset..s.offset + s.len].iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("tensor {}", s.name)));
            }
        }
        Ok(())
    }

    pub fn cast<T: Scalar>(&self) -> ParamSet<T> {
        ParamSet {
            specs: self.specs.clone(),
            index: self.index.clone(),
            data: self.data.iter().map(|&x| T::from(x).expect("cast")).collect(),
        }
    }

    /// Copies values from a registry with identical layout.
    pub fn copy_from(&mut self, other: &ParamSet<S>) -> Result<()> {
        if !self.same_layout(other) {
            return Err(Error::Shape("parameter layouts differ".into()));
        }
        self.data.copy_from_slice(&other.data);
        Ok(())
    }
}
