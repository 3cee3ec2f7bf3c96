use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Central-difference estimate of `∂f/∂param`, one element at a time.
pub fn finite_difference_grad<T, F>(mut f: F, param: &Tensor<T>, eps: f64) -> Result<Tensor<T>>
where
    T: Element,
    F: FnMut(&Tensor<T>) -> Result<f64>,
{
    if !(eps > 0.0) {
        return Err(Error::invalid("finite-difference step must be > 0"));
    }
    let mut probe = param.clone();
    let mut grad = Vec::with_capacity(param.numel());
    for i in 0..param.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = T::of(orig.as_f64() + eps);
        let plus = f(&probe)?;
        probe.data_mut()[i] = T::of(orig.as_f64() - eps);
        let minus = f(&probe)?;
        probe.data_mut()[i] = orig;
        grad.push(T::of((plus - minus) / (2.0 * eps)));
    }
    Tensor::new(param.shape().to_vec(), grad)
}

/// `max_i |a_i - b_i| / max(|a_i|, |b_i|, floor)`.
///
/// `floor` keeps components whose true value is at roundoff level from
/// dominating the ratio.
pub fn max_relative_error<T: Element>(analytic: &Tensor<T>, numeric: &Tensor<T>, floor: f64) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape(), "gradient shapes differ");
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| {
            let (a, n) = (a.as_f64(), n.as_f64());
            (a - n).abs() / a.abs().max(n.abs()).max(floor)
        })
        .fold(0.0, f64::max)
}
