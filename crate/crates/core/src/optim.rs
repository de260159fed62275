use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Plain gradient descent: `p ← p − lr·g` for each parameter tensor.
pub fn sgd_step(params: &mut [&mut Tensor], grads: &[&Tensor], lr: f64) -> Result<()> {
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::Parameter(format!("learning rate must be finite and non-negative, got {lr}")));
    }
    if params.len() != grads.len() {
        return Err(Error::dim("param count", params.len(), grads.len()));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.dims() != g.dims() {
            return Err(Error::dim(
                "grad",
                format!("{:?}", p.dims()),
                format!("{:?}", g.dims()),
            ));
        }
    }
    for (p, g) in params.iter_mut().zip(grads) {
        p.axpy(-lr, g)?;
    }
    Ok(())
}
