use std::collections::HashMap;
use std::rc::Rc;

use rand::Rng;
use sha2::{Digest, Sha256};

use crate::array::Array;
use crate::float::Float;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub value: Rc<Array<T>>,
    pub trainable: bool,
}

/// Ordered, named collection of parameter arrays.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    index: HashMap<String, ParamId>,
}

impl<T: Float> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array<T>) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = ParamId(self.params.len());
        self.index.insert(name.clone(), id);
        self.params.push(Param {
            name,
            value: Rc::new(value),
            trainable: true,
        });
        id
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Array<T> {
        &self.params[id.0].value
    }

    pub fn rc(&self, id: ParamId) -> &Rc<Array<T>> {
        &self.params[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.params[id.0].trainable
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.params[id.0].trainable = trainable;
    }

    pub fn freeze_all(&mut self) {
        for p in &mut self.params {
            p.trainable = false;
        }
    }

    /// Replaces a parameter value; the shape must not change.
    pub fn set(&mut self, id: ParamId, value: Array<T>) {
        assert_eq!(
            self.params[id.0].value.shape(),
            value.shape(),
            "shape change for {}",
            self.params[id.0].name
        );
        self.params[id.0].value = Rc::new(value);
    }

    /// In-place mutable access (clones if a tape still holds the value).
    pub fn get_mut(&mut self, id: ParamId) -> &mut Array<T> {
        Rc::make_mut(&mut self.params[id.0].value)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// SHA-256 over names, shapes and exact values.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.params {
            h.update(p.name.as_bytes());
            for &d in p.value.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for v in p.value.data() {
                h.update(v.to_f64c().to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn cast<U: Float>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: Rc::new(p.value.cast()),
                    trainable: p.trainable,
                })
                .collect(),
            index: self.index.clone(),
        }
    }
}

/// Uniform initialization in `[-bound, bound]`.
pub fn uniform<T: Float, R: Rng>(rng: &mut R, shape: &[usize], bound: f64) -> Array<T> {
    Array::from_fn(shape, |_| T::from_f64c(rng.gen_range(-bound..=bound)))
}

/// Helper that registers parameters under a dotted name prefix.
pub struct ParamBuilder<'a, T, R> {
    store: &'a mut ParamStore<T>,
    rng: &'a mut R,
    prefix: String,
}

impl<'a, T: Float, R: Rng> ParamBuilder<'a, T, R> {
    pub fn new(store: &'a mut ParamStore<T>, rng: &'a mut R) -> Self {
        Self {
            store,
            rng,
            prefix: String::new(),
        }
    }

    pub fn sub<'b>(&'b mut self, name: &str) -> ParamBuilder<'b, T, R> {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        ParamBuilder {
            store: self.store,
            rng: self.rng,
            prefix,
        }
    }

    pub fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    pub fn add(&mut self, name: &str, value: Array<T>) -> ParamId {
        let full = self.full_name(name);
        self.store.add(full, value)
    }

    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> ParamId {
        let v = uniform(self.rng, shape, bound);
        self.add(name, v)
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> ParamId {
        self.add(name, Array::zeros(shape))
    }

    pub fn full(&mut self, name: &str, shape: &[usize], v: f64) -> ParamId {
        self.add(name, Array::full(shape, T::from_f64c(v)))
    }

    pub fn rng(&mut self) -> &mut R {
        self.rng
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn builder_prefixes_and_fingerprint() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        {
            let mut b = ParamBuilder::new(&mut store, &mut rng);
            let mut enc = b.sub("enc");
            let mut c = enc.sub("conv");
            c.uniform("weight", &[2, 3], 0.5);
            c.zeros("bias", &[2]);
        }
        assert!(store.id_of("enc.conv.weight").is_some());
        assert_eq!(store.num_scalars(), 8);
        let f1 = store.fingerprint();
        let id = store.id_of("enc.conv.bias").unwrap();
        store.get_mut(id).data_mut()[0] = 1e-7;
        assert_ne!(f1, store.fingerprint());
    }
}
