use super::tensor::Float;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Param<F> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<F>,
}

/// Named parameter tensors in registration order. Gradients use a store of the same layout.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<F> {
    params: Vec<Param<F>>,
}

impl<F: Float> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub(crate) fn push(&mut self, name: String, shape: Vec<usize>, data: Vec<F>) -> ParamId {
        assert_eq!(data.len(), shape.iter().product::<usize>(), "parameter {name} size");
        self.params.push(Param { name, shape, data });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &[F] {
        &self.params[id.0].data
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [F] {
        &mut self.params[id.0].data
    }

    pub(crate) fn split_at_mut(&mut self, mid: usize) -> (&mut [Param<F>], &mut [Param<F>]) {
        self.params.split_at_mut(mid)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<F>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<F>> {
        self.params.iter_mut()
    }

    pub fn find(&self, name: &str) -> Option<&Param<F>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn zeros_like(&self) -> Self {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param { name: p.name.clone(), shape: p.shape.clone(), data: vec![F::zero(); p.data.len()] })
                .collect(),
        }
    }

    pub fn fill_zero(&mut self) {
        for p in &mut self.params {
            p.data.fill(F::zero());
        }
    }

    pub fn cast<G: Float>(&self) -> ParamStore<G> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param { name: p.name.clone(), shape: p.shape.clone(), data: p.data.iter().map(|v| G::of(v.f64())).collect() })
                .collect(),
        }
    }

    /// Euclidean norm over every scalar, accumulated in f64.
    pub fn l2_norm(&self) -> f64 {
        self.params.iter().flat_map(|p| p.data.iter()).map(|v| v.f64() * v.f64()).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, s: F) {
        for p in &mut self.params {
            for v in &mut p.data {
                *v = *v * s;
            }
        }
    }

    /// Same names and shapes in the same order.
    pub fn same_layout<G>(&self, other: &ParamStore<G>) -> bool {
        self.params.len() == other.params.len()
            && self.params.iter().zip(&other.params).all(|(a, b)| a.name == b.name && a.shape == b.shape)
    }
}
