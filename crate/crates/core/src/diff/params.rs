use std::collections::BTreeMap;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform on `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    FanIn(usize),
    Uniform(f64),
}

/// Named parameter matrices in registration order.
///
/// Initial values are drawn from a seeded stream and rounded to `f32`, so a
/// freshly built store survives a trip through the `f32` checkpoint format
/// unchanged.
#[derive(Debug, Clone)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Mat>,
    by_name: BTreeMap<String, ParamId>,
    seed: u64,
    rng: ChaCha8Rng,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
            by_name: BTreeMap::new(),
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn add(&mut self, name: impl Into<String>, shape: (usize, usize), init: Init) -> ParamId {
        let name = name.into();
        assert!(!self.by_name.contains_key(&name), "duplicate parameter '{name}'");
        let value = match init {
            Init::Zeros => Array2::zeros(shape),
            Init::Ones => Array2::ones(shape),
            Init::FanIn(fan_in) => {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                self.uniform(shape, bound)
            }
            Init::Uniform(bound) => self.uniform(shape, bound),
        };
        let id = ParamId(self.values.len());
        self.names.push(name.clone());
        self.values.push(value);
        self.by_name.insert(name, id);
        id
    }

    fn uniform(&mut self, shape: (usize, usize), bound: f64) -> Mat {
        let rng = &mut self.rng;
        Array2::from_shape_simple_fn(shape, || {
            let u: f64 = rng.random_range(-bound..bound);
            u as f32 as f64
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn value(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.values[id.0]
    }

    pub fn set(&mut self, id: ParamId, value: Mat) {
        assert_eq!(self.values[id.0].dim(), value.dim(), "shape change for '{}'", self.names[id.0]);
        self.values[id.0] = value;
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Mat::len).sum()
    }

    /// Rounds every value to the nearest `f32`.
    pub fn round_to_f32(&mut self) {
        for v in &mut self.values {
            v.mapv_inplace(|x| x as f32 as f64);
        }
    }
}

impl PartialEq for ParamStore {
    fn eq(&self, other: &Self) -> bool {
        self.names == other.names && self.values == other.values
    }
}

/// Gradient buffer shaped like a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    values: Vec<Mat>,
}

impl Grads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            values: store.values.iter().map(|v| Array2::zeros(v.dim())).collect(),
        }
    }

    pub fn accumulate(&mut self, id: ParamId, g: &Mat) {
        self.values[id.0] += g;
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub(crate) fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.values[id.0]
    }

    pub fn zero(&mut self) {
        for v in &mut self.values {
            v.fill(0.0);
        }
    }

    pub fn scale(&mut self, c: f64) {
        for v in &mut self.values {
            *v *= c;
        }
    }

    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .flat_map(|v| v.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }

    pub(crate) fn iter(&self) -> impl Iterator<Item = &Mat> {
        self.values.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn build(seed: u64) -> ParamStore {
        let mut s = ParamStore::new(seed);
        s.add("w", (4, 3), Init::FanIn(4));
        s.add("b", (1, 3), Init::Zeros);
        s.add("g", (1, 3), Init::Ones);
        s
    }

    #[test]
    fn seeded_init_is_reproducible() {
        assert_eq!(build(3), build(3));
        assert_ne!(build(3), build(4));
    }

    #[test]
    fn init_respects_bounds_and_is_f32_exact() {
        let s = build(1);
        let w = s.value(s.id("w").unwrap());
        assert!(w.iter().all(|x| x.abs() <= 0.5));
        assert!(w.iter().all(|&x| x as f32 as f64 == x));
        assert!(s.value(s.id("b").unwrap()).iter().all(|&x| x == 0.0));
        assert!(s.value(s.id("g").unwrap()).iter().all(|&x| x == 1.0));
        assert_eq!(s.scalar_count(), 18);
    }
}
