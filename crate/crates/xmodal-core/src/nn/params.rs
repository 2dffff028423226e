//! Named parameter storage shared by model components.

use std::collections::BTreeMap;

use ndarray::ArrayD;

/// Flat store of named `f64` parameter tensors.
///
/// Registration order is preserved so optimizer updates and checkpoint
/// serialization are deterministic across runs.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<ArrayD<f64>>,
    index: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a new parameter. Panics on duplicate names: those are
    /// construction bugs, not runtime conditions.
    pub fn register(&mut self, name: &str, value: ArrayD<f64>) {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name: {name}"
        );
        self.index.insert(name.to_string(), self.names.len());
        self.names.push(name.to_string());
        self.values.push(value);
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn idx(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn value(&self, name: &str) -> &ArrayD<f64> {
        let idx = self.index[name];
        &self.values[idx]
    }

    pub fn value_at(&self, idx: usize) -> &ArrayD<f64> {
        &self.values[idx]
    }

    pub fn value_mut_at(&mut self, idx: usize) -> &mut ArrayD<f64> {
        &mut self.values[idx]
    }

    pub fn set(&mut self, name: &str, value: ArrayD<f64>) {
        let idx = self.index[name];
        assert_eq!(
            self.values[idx].shape(),
            value.shape(),
            "shape mismatch setting {name}"
        );
        self.values[idx] = value;
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Iterate `(name, value)` in registration order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &ArrayD<f64>)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.values.iter())
    }
}

/// Weight initialization helpers. All randomness flows through the caller's
/// RNG so model construction is reproducible from a seed.
pub mod init {
    use ndarray::ArrayD;
    use rand::Rng;

    /// Kaiming-uniform for ReLU networks: `U(-b, b)` with `b = sqrt(6 / fan_in)`.
    pub fn kaiming_uniform<R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize) -> ArrayD<f64> {
        assert!(fan_in > 0, "fan_in must be positive");
        let bound = (6.0 / fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        ArrayD::from_shape_vec(ndarray::IxDyn(shape), data).expect("shape/product mismatch")
    }

    pub fn zeros(shape: &[usize]) -> ArrayD<f64> {
        ArrayD::zeros(ndarray::IxDyn(shape))
    }

    pub fn ones(shape: &[usize]) -> ArrayD<f64> {
        ArrayD::ones(ndarray::IxDyn(shape))
    }
}
