use super::{Real, Tensor};
use crate::rng::SplitMix64;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub(crate) fn shifted(self, offset: usize) -> Self {
        ParamId(self.0 + offset)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub frozen: bool,
}

impl<T: Real> Parameter<T> {
    pub fn numel(&self) -> usize {
        self.value.numel()
    }
}

/// Registry of all trainable state, in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>, frozen: bool) -> ParamId {
        let grad = Tensor::zeros(value.shape());
        self.params.push(Parameter {
            name: name.into(),
            value,
            grad,
            frozen,
        });
        ParamId(self.params.len() - 1)
    }

    /// Adds a parameter drawn uniformly from `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn add_uniform(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut SplitMix64,
    ) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let value = Tensor::from_fn(shape, |_| T::of(rng.uniform(-bound, bound)));
        self.add(name, value, false)
    }

    /// Moves every parameter of `other` to the end of this store and returns
    /// the offset that maps `other`'s ids into this store.
    pub(crate) fn append(&mut self, other: ParamStore<T>) -> usize {
        let offset = self.params.len();
        self.params.extend(other.params);
        offset
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(T::zero());
        }
    }

    pub fn set_frozen(&mut self, id: ParamId, frozen: bool) {
        let p = &mut self.params[id.0];
        p.frozen = frozen;
        if frozen {
            p.grad.fill(T::zero());
        }
    }

    pub fn freeze_all(&mut self) {
        for id in self.ids().collect::<Vec<_>>() {
            self.set_frozen(id, true);
        }
    }

    /// `(total, trainable)` scalar counts.
    pub fn count(&self) -> (usize, usize) {
        self.params.iter().fold((0, 0), |(t, tr), p| {
            (t + p.numel(), tr + if p.frozen { 0 } else { p.numel() })
        })
    }

    /// Copies of every value tensor, in registration order.
    pub fn snapshot(&self) -> Vec<Tensor<T>> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    pub fn restore(&mut self, values: &[Tensor<T>]) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::shape(
                "restore",
                format!("{} tensors for {} parameters", values.len(), self.params.len()),
            ));
        }
        for (p, v) in self.params.iter_mut().zip(values) {
            if p.value.shape() != v.shape() {
                return Err(Error::shape(
                    "restore",
                    format!("`{}`: {:?} vs {:?}", p.name, p.value.shape(), v.shape()),
                ));
            }
            p.value = v.clone();
        }
        Ok(())
    }
}
