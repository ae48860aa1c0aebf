use crate::error::{Error, Result};

/// Central-difference gradient `(f(p + h·eᵢ) − f(p − h·eᵢ)) / 2h`.
pub fn finite_difference_gradient<F>(f: F, point: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    let mut probe = point.to_vec();
    let mut grad = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        probe[i] = point[i] + step;
        let up = f(&probe);
        probe[i] = point[i] - step;
        let down = f(&probe);
        probe[i] = point[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFiniteProbe { coordinate: i });
        }
        grad.push((up - down) / (2.0 * step));
    }
    Ok(grad)
}

/// |a − b| / max(|a|, |b|, floor). The floor keeps near-zero comparisons absolute.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Largest [`relative_error`] over two equally long vectors.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| relative_error(*x, *y, floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let g = finite_difference_gradient(|p| p[0] * p[0], &[3.0], 1e-6).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn constant_is_flat() {
        let g = finite_difference_gradient(|_| 4.2, &[1.0, -2.0, 0.5], 1e-6).unwrap();
        assert_eq!(g, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn non_finite_probe_names_coordinate() {
        let f = |p: &[f64]| p[0] + p[1].ln();
        match finite_difference_gradient(f, &[1.0, 1e-4], 1e-3) {
            Err(Error::NonFiniteProbe { coordinate }) => assert_eq!(coordinate, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_step() {
        assert!(finite_difference_gradient(|p| p[0], &[1.0], 0.0).is_err());
    }
}
