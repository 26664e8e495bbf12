use super::{Gradients, NumericsError, Parameters, Tensor};
use crate::checkpoint::SeededRng;

/// Denominators below `RELATIVE_ERROR_FLOOR × max(1, |f(θ)|)` are clamped, so
/// near-zero gradients are compared against the loss scale.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-3;

/// Central difference `(f(θ + h·e_i) − f(θ − h·e_i)) / 2h` for one coordinate.
pub fn finite_difference_at<F>(
    f: &F,
    params: &Parameters,
    name: &str,
    index: usize,
    h: f64,
) -> Result<f64, NumericsError>
where
    F: Fn(&Parameters) -> Result<f64, NumericsError>,
{
    if h <= 0.0 {
        return Err(NumericsError::Config(format!("step {h} must be positive")));
    }
    let base = params.get(name).ok_or_else(|| NumericsError::Config(format!("unknown parameter {name}")))?;
    if index >= base.len() {
        return Err(NumericsError::Index(format!("{name}[{index}] of {}", base.len())));
    }
    let shifted = |delta: f64| -> Result<f64, NumericsError> {
        let mut p = params.clone();
        let t = p.get_mut(name).expect("checked above");
        let mut data = t.data().to_vec();
        data[index] += delta;
        *t = Tensor::with_dtype(t.shape().to_vec(), data, t.dtype())?;
        f(&p)
    };
    Ok((shifted(h)? - shifted(-h)?) / (2.0 * h))
}

/// Central-difference gradient of `f` at every coordinate of every parameter.
pub fn finite_difference_gradient<F>(f: F, params: &Parameters, h: f64) -> Result<Gradients, NumericsError>
where
    F: Fn(&Parameters) -> Result<f64, NumericsError>,
{
    let mut out = Gradients::new();
    for (name, t) in params.iter() {
        let data = (0..t.len()).map(|i| finite_difference_at(&f, params, name, i, h)).collect::<Result<Vec<_>, _>>()?;
        out.insert(name.clone(), Tensor::with_dtype(t.shape().to_vec(), data, t.dtype())?);
    }
    Ok(out)
}

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// `n` coordinates drawn uniformly over all parameter entries, with replacement.
pub fn sample_coordinates(params: &Parameters, n: usize, rng: &mut SeededRng) -> Vec<(String, usize)> {
    let flat: Vec<(String, usize)> =
        params.iter().flat_map(|(name, t)| (0..t.len()).map(move |i| (name.clone(), i))).collect();
    if flat.is_empty() {
        return Vec::new();
    }
    (0..n).map(|_| flat[rng.bounded(flat.len() as u64) as usize].clone()).collect()
}

/// Largest [`relative_error`] between `analytic` and central differences of `f` at `coords`.
pub fn max_relative_error<F>(
    f: F,
    analytic: &Gradients,
    params: &Parameters,
    coords: &[(String, usize)],
    h: f64,
) -> Result<f64, NumericsError>
where
    F: Fn(&Parameters) -> Result<f64, NumericsError>,
{
    let floor = RELATIVE_ERROR_FLOOR * f(params)?.abs().max(1.0);
    let mut worst = 0.0f64;
    for (name, i) in coords {
        let a = analytic.get(name).ok_or_else(|| NumericsError::Config(format!("no gradient for {name}")))?;
        let n = finite_difference_at(&f, params, name, *i, h)?;
        worst = worst.max(relative_error(a.data()[*i], n, floor));
    }
    Ok(worst)
}
