use super::{Real, Tape, Tensor, TensorError, Var};

/// Compares reverse-mode gradients of the scalar function `f` at `x` against
/// central differences `(f(x+εeᵢ) − f(x−εeᵢ)) / 2ε`.
///
/// Returns the largest relative error over all components, with denominator
/// `max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_difference_check<T, F>(f: F, x: &Tensor<T>, eps: T) -> Result<f64, TensorError>
where
    T: Real,
    F: Fn(&mut Tape<T>, Var) -> Result<Var, TensorError>,
{
    let mut tape = Tape::new();
    let xv = tape.param(x.clone())?;
    let loss = f(&mut tape, xv)?;
    let analytic = tape.backward(loss)?.wrt(xv);

    let eval = |data: Vec<T>| -> Result<f64, TensorError> {
        let mut t = Tape::new();
        let v = t.param(Tensor {
            shape: x.shape.clone(),
            data,
        })?;
        let out = f(&mut t, v)?;
        t.value(out)
            .first()
            .copied()
            .and_then(|y| y.to_f64())
            .ok_or(TensorError::NotScalar(t.shape(out).to_vec()))
    };

    let mut worst = 0.0f64;
    for i in 0..x.data.len() {
        let mut plus = x.data.clone();
        plus[i] = plus[i] + eps;
        let mut minus = x.data.clone();
        minus[i] = minus[i] - eps;
        // use the actually representable step
        let step = (plus[i] - minus[i]).to_f64().unwrap_or(0.0);
        let numeric = (eval(plus)? - eval(minus)?) / step;
        let a = analytic[i].to_f64().unwrap_or(f64::NAN);
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}
