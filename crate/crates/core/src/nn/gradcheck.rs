//! Central finite-difference gradient checking.
//!
//! Relative error per coordinate is `|a - n| / max(|a|, |n|, 1e-8)` where `a`
//! is the analytic and `n` the numeric derivative.

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
const DENOM_FLOOR: f64 = 1e-8;

/// A scalar function with an analytic gradient.
pub trait Differentiable {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Coordinate with the largest relative error.
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

#[derive(Debug, Clone)]
pub struct GradCheck {
    pub step: f64,
    /// Restrict the check to these coordinates; `None` checks all of them.
    pub coordinates: Option<Vec<usize>>,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            step: DEFAULT_STEP,
            coordinates: None,
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(DENOM_FLOOR)
}

impl GradCheck {
    pub fn with_coordinates(mut self, coordinates: Vec<usize>) -> Self {
        self.coordinates = Some(coordinates);
        self
    }

    pub fn run<F>(&self, mut f: F, x: &[f64], analytic: &[f64]) -> GradCheckReport
    where
        F: FnMut(&[f64]) -> f64,
    {
        assert_eq!(x.len(), analytic.len(), "gradient length must match input");
        let coords: Vec<usize> = match &self.coordinates {
            Some(c) => c.clone(),
            None => (0..x.len()).collect(),
        };
        let mut probe = x.to_vec();
        let mut report = GradCheckReport {
            max_rel_error: 0.0,
            worst_index: 0,
            worst_analytic: 0.0,
            worst_numeric: 0.0,
            checked: 0,
        };
        for &i in &coords {
            let orig = probe[i];
            probe[i] = orig + self.step;
            let plus = f(&probe);
            probe[i] = orig - self.step;
            let minus = f(&probe);
            probe[i] = orig;
            let numeric = (plus - minus) / (2.0 * self.step);
            let err = relative_error(analytic[i], numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.checked == 1 {
                report.max_rel_error = err;
                report.worst_index = i;
                report.worst_analytic = analytic[i];
                report.worst_numeric = numeric;
            }
        }
        report
    }

    pub fn check<D: Differentiable + ?Sized>(&self, op: &D, x: &[f64]) -> GradCheckReport {
        let analytic = op.gradient(x);
        self.run(|v| op.value(v), x, &analytic)
    }
}

/// Checks `op` at `x` with the default step and reports whether it passes `tolerance`.
pub fn grad_check<D: Differentiable + ?Sized>(
    op: &D,
    x: &[f64],
    tolerance: f64,
) -> (bool, GradCheckReport) {
    let report = GradCheck::default().check(op, x);
    (report.passed(tolerance), report)
}
