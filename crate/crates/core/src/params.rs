//! Flat parameter tensors shared by fields, networks and the optimizer.

/// Borrowed view of one named parameter tensor.
#[derive(Clone, Debug)]
pub struct TensorView<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

/// Anything holding trainable tensors in a fixed order.
///
/// `tensors` and `tensors_mut` must enumerate the same tensors in the same
/// order; gradient buffers and optimizer moments rely on that.
pub trait Parameters {
    fn tensors(&self) -> Vec<TensorView<'_>>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn zero_grads(&self) -> Grads {
        Grads {
            tensors: self.tensors().iter().map(|t| vec![0.0; t.data.len()]).collect(),
        }
    }

    fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }
}

/// Gradient buffer mirroring a [`Parameters`] implementor tensor by tensor.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Grads {
    pub tensors: Vec<Vec<f64>>,
}

impl Grads {
    pub fn clear(&mut self) {
        for t in &mut self.tensors {
            t.fill(0.0);
        }
    }

    pub fn add_assign(&mut self, other: &Grads) {
        debug_assert_eq!(self.tensors.len(), other.tensors.len());
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().flatten().all(|v| v.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.tensors.iter().flatten().all(|v| *v == 0.0)
    }

    pub fn len(&self) -> usize {
        self.tensors.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
