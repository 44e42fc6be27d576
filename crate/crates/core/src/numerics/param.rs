use super::tensor::Tensor;

/// What a named tensor is, for regularization and optimizer bookkeeping.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Learnable weight matrix or kernel; subject to L1/L2 penalties.
    Weight,
    /// Learnable bias vector.
    Bias,
    /// Learnable batch-norm scale/shift.
    Norm,
    /// Learnable scalar such as the GIN self-weight.
    Scalar,
    /// Persistent non-learnable state (batch-norm running statistics).
    Buffer,
}

impl ParamKind {
    pub fn is_learnable(self) -> bool {
        self != ParamKind::Buffer
    }

    pub fn is_penalized(self) -> bool {
        self == ParamKind::Weight
    }
}

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
    pub kind: ParamKind,
}

/// Anything owning named tensors. Implementations push their tensors with a
/// dotted name under `prefix`.
pub trait Module {
    fn collect_params(&self, prefix: &str, out: &mut Vec<Param>);

    fn params(&self) -> Vec<Param> {
        let mut out = Vec::new();
        self.collect_params("", &mut out);
        out
    }

    fn learnable_params(&self) -> Vec<Param> {
        self.params()
            .into_iter()
            .filter(|p| p.kind.is_learnable())
            .collect()
    }

    fn zero_grad(&self) {
        for p in self.params() {
            p.tensor.zero_grad();
        }
    }
}

pub fn join_name(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Total number of learnable scalars.
pub fn count_learnable(params: &[Param]) -> usize {
    params
        .iter()
        .filter(|p| p.kind.is_learnable())
        .map(|p| p.tensor.numel())
        .sum()
}
