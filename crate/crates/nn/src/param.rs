/// A named trainable tensor with its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Vec<f32>,
    pub grad: Vec<f32>,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Vec<f32>) -> Self {
        let grad = vec![0.0; value.len()];
        Param {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zeros(name: impl Into<String>, len: usize) -> Self {
        Param::new(name, vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Anything that owns an ordered set of parameters.
///
/// The order returned by `params` and `params_mut` must agree; optimizers
/// and checkpoints rely on it.
pub trait Model {
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Copy of every parameter value, for best-epoch snapshots.
    fn snapshot(&self) -> Vec<Vec<f32>> {
        self.params().iter().map(|p| p.value.clone()).collect()
    }

    fn restore(&mut self, snapshot: &[Vec<f32>]) {
        let params = self.params_mut();
        assert_eq!(params.len(), snapshot.len(), "snapshot parameter count");
        for (p, v) in params.into_iter().zip(snapshot) {
            assert_eq!(p.value.len(), v.len(), "snapshot length for {}", p.name);
            p.value.copy_from_slice(v);
        }
    }
}
