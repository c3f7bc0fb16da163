use crate::tensor::Tensor;
use roc_core::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BufferId(pub(crate) usize);

/// A trainable tensor with its gradient and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub first_moment: Tensor<T>,
    pub second_moment: Tensor<T>,
    pub step: u64,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let zeros = Tensor::zeros(value.shape());
        Parameter {
            name: name.into(),
            grad: zeros.clone(),
            first_moment: zeros.clone(),
            second_moment: zeros,
            value,
            step: 0,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }
}

/// Owns a model's parameters and non-trainable state (batch-norm running
/// statistics), addressed by registration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    buffers: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new(), buffers: Vec::new() }
    }

    pub fn add_param(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        self.params.push(Parameter::new(name, value));
        ParamId(self.params.len() - 1)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor<T>) -> BufferId {
        self.buffers.push((name.into(), value));
        BufferId(self.buffers.len() - 1)
    }

    pub fn param(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn buffer(&self, id: BufferId) -> &Tensor<T> {
        &self.buffers[id.0].1
    }

    pub fn buffer_mut(&mut self, id: BufferId) -> &mut Tensor<T> {
        &mut self.buffers[id.0].1
    }

    pub fn params(&self) -> &[Parameter<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter<T>] {
        &mut self.params
    }

    pub fn buffers(&self) -> &[(String, Tensor<T>)] {
        &self.buffers
    }

    pub fn buffers_mut(&mut self) -> &mut [(String, Tensor<T>)] {
        &mut self.buffers
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + use<T> {
        (0..self.params.len()).map(ParamId)
    }

    /// Total trainable scalar count.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(Parameter::zero_grad);
    }
}
