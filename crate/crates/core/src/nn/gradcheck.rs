//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Which coordinates of the parameter vector are perturbed.
#[derive(Debug, Clone, Copy)]
pub enum Coordinates {
    All,
    Sample { count: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// Smallest denominator of [`relative_error`]. Central differences of an O(1)
/// objective at `delta = 1e-4` carry roundoff near 1e-12, so gradients that
/// are exactly zero must not be compared relative to anything smaller.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares the analytic gradient returned by `f` at `params` against central
/// differences with step `delta`.
///
/// `f` returns `(value, gradient)`; only the value is used at perturbed points.
pub fn grad_check<F>(
    mut f: F,
    params: &[f64],
    delta: f64,
    coords: Coordinates,
) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let (value, analytic) = f(params)?;
    if !value.is_finite() {
        return Err(Error::NonFinite("grad_check objective".into()));
    }
    if analytic.len() != params.len() {
        return Err(Error::shape(format!(
            "gradient of length {} for {} parameters",
            analytic.len(),
            params.len()
        )));
    }
    let indices: Vec<usize> = match coords {
        Coordinates::All => (0..params.len()).collect(),
        Coordinates::Sample { count, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut idx = sample(&mut rng, params.len(), count.min(params.len())).into_vec();
            idx.sort_unstable();
            idx
        }
    };

    let mut point = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: indices.len(),
    };
    for (n, &i) in indices.iter().enumerate() {
        let orig = point[i];
        point[i] = orig + delta;
        let (plus, _) = f(&point)?;
        point[i] = orig - delta;
        let (minus, _) = f(&point)?;
        point[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!("grad_check objective at coordinate {i}")));
        }
        let numeric = (plus - minus) / (2.0 * delta);
        let err = relative_error(analytic[i], numeric);
        if n == 0 || err > report.max_rel_error {
            report = GradCheckReport {
                max_rel_error: err,
                worst_index: i,
                analytic: analytic[i],
                numeric,
                checked: indices.len(),
            };
        }
    }
    Ok(report)
}
