//! Central-difference gradient checking.

use crate::error::Result;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct FiniteDiffReport {
    /// `max_i |analytic_i − numeric_i| / max(1, |analytic_i|)` over finite coordinates.
    pub max_rel_error: f64,
    /// Coordinate attaining `max_rel_error`.
    pub worst_coord: Option<usize>,
    /// Coordinates where the function (or the analytic gradient) was not finite.
    pub non_finite: Vec<usize>,
    pub checked: usize,
}

impl FiniteDiffReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.non_finite.is_empty() && self.max_rel_error <= tol
    }
}

/// Compares the analytic gradient returned by `f` against central
/// differences with step `step` at every coordinate of `point`.
pub fn finite_diff_check<T, F>(f: F, point: &Tensor<T>, step: f64) -> Result<FiniteDiffReport>
where
    T: Real,
    F: FnMut(&Tensor<T>) -> Result<(T, Tensor<T>)>,
{
    let coords: Vec<usize> = (0..point.len()).collect();
    finite_diff_check_coords(f, point, step, &coords)
}

/// Like [`finite_diff_check`] restricted to a subset of coordinates.
pub fn finite_diff_check_coords<T, F>(
    mut f: F,
    point: &Tensor<T>,
    step: f64,
    coords: &[usize],
) -> Result<FiniteDiffReport>
where
    T: Real,
    F: FnMut(&Tensor<T>) -> Result<(T, Tensor<T>)>,
{
    let (_, analytic) = f(point)?;
    let mut report = FiniteDiffReport {
        max_rel_error: 0.0,
        worst_coord: None,
        non_finite: Vec::new(),
        checked: coords.len(),
    };
    let h = T::from_f64_lossy(step);
    let mut probe = point.clone();
    for &i in coords {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = f(&probe).map(|(v, _)| v.as_f64());
        probe.data_mut()[i] = orig - h;
        let minus = f(&probe).map(|(v, _)| v.as_f64());
        probe.data_mut()[i] = orig;
        let a = analytic.data()[i].as_f64();
        let (Ok(plus), Ok(minus)) = (plus, minus) else {
            report.non_finite.push(i);
            continue;
        };
        // use the actually representable step in the denominator
        let span = ((orig + h) - (orig - h)).as_f64();
        let numeric = (plus - minus) / span;
        if !numeric.is_finite() || !a.is_finite() {
            report.non_finite.push(i);
            continue;
        }
        let err = (a - numeric).abs() / a.abs().max(1.0);
        if report.worst_coord.is_none() || err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_coord = Some(i);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Graph;

    fn square(x: &Tensor<f64>) -> Result<(f64, Tensor<f64>)> {
        let v = x.data()[0];
        Ok((v * v, Tensor::scalar(2.0 * v)))
    }

    #[test]
    fn square_at_three() {
        let r = finite_diff_check(square, &Tensor::scalar(3.0), 1e-6).unwrap();
        assert!(r.max_rel_error <= 1e-9, "{r:?}");
    }

    #[test]
    fn abs_kink_is_reported() {
        // analytic derivative uses the +1 convention at 0; central differences see 0
        let abs = |x: &Tensor<f64>| -> Result<(f64, Tensor<f64>)> {
            let v = x.data()[0];
            Ok((v.abs(), Tensor::scalar(if v >= 0.0 { 1.0 } else { -1.0 })))
        };
        let r = finite_diff_check(abs, &Tensor::scalar(0.0), 1e-6).unwrap();
        assert!(r.max_rel_error >= 0.99, "{r:?}");
        assert!(!r.passes(1e-5));
    }

    #[test]
    fn relu_kink_is_reported() {
        let relu = |x: &Tensor<f64>| -> Result<(f64, Tensor<f64>)> {
            let mut g = Graph::<f64>::new();
            let a = g.input("x");
            let r = g.relu(a);
            let s = g.sum(r);
            g.output("s", s);
            let v = g.forward([("x", x)])?["s"].data()[0];
            let grad = g.backward("s")?.remove("x").unwrap();
            Ok((v, grad))
        };
        let r = finite_diff_check(relu, &Tensor::scalar(0.0), 1e-6).unwrap();
        assert!((r.max_rel_error - 0.5).abs() < 1e-9, "{r:?}");
    }

    #[test]
    fn non_finite_evaluations_listed() {
        let f = |x: &Tensor<f64>| -> Result<(f64, Tensor<f64>)> {
            let v = x.data()[0];
            Ok((v.ln(), Tensor::scalar(1.0 / v)))
        };
        let r = finite_diff_check(f, &Tensor::scalar(0.0), 1e-6).unwrap();
        assert_eq!(r.non_finite, vec![0]);
    }
}
