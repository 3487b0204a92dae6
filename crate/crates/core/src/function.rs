/// A real-valued function on R^d, the common currency of estimators and
/// ground-truth drift components.
pub trait ScalarField: Send + Sync {
    fn value(&self, x: &[f64]) -> f64;
}

impl<F> ScalarField for F
where
    F: Fn(&[f64]) -> f64 + Send + Sync,
{
    fn value(&self, x: &[f64]) -> f64 {
        self(x)
    }
}

/// True iff every coordinate lies in [0, 1].
pub fn in_unit_cube(x: &[f64]) -> bool {
    x.iter().all(|&v| (0.0..=1.0).contains(&v))
}

/// Indicator-restricted view `f · 1_{[0,1]^d}`.
pub struct CubeRestricted<F>(pub F);

impl<F: ScalarField> ScalarField for CubeRestricted<F> {
    fn value(&self, x: &[f64]) -> f64 {
        if in_unit_cube(x) {
            self.0.value(x)
        } else {
            0.0
        }
    }
}
