//! Central finite-difference gradient checking.
//!
//! The checker only evaluates the forward loss, so it stays independent of the
//! analytic backward rules it is used to verify.

use crate::error::Result;
use crate::nn::{Gradients, ParamId, ParameterStore};

/// Relative error `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[derive(Clone, Debug)]
pub struct GradMismatch {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst: Option<GradMismatch>,
    pub failures: Vec<GradMismatch>,
    /// Scalars skipped because every step crossed a region boundary.
    pub boundary: Vec<(String, usize)>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Denominator floor of the relative error for near-zero gradients.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { step: 1e-5, tolerance: 1e-4, floor: 1e-4 }
    }
}

/// Compares `analytic` against central differences of `loss` for every scalar
/// of every parameter accepted by `filter`.
pub fn check_gradients<F>(
    store: &mut ParameterStore,
    analytic: &Gradients,
    cfg: GradCheckConfig,
    filter: impl Fn(&ParameterStore, ParamId) -> bool,
    mut loss: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParameterStore) -> Result<f64>,
{
    check_gradients_in_region(store, analytic, cfg, filter, |s| Ok((loss(s)?, ())))
}

/// Like [`check_gradients`] for losses that are smooth only piecewise. `loss`
/// also returns a region key (e.g. the retrieved index sets). When either
/// difference point leaves the region of the unperturbed parameters the step
/// is shrunk tenfold, at most four times; a scalar that still straddles a
/// boundary is listed in [`GradCheckReport::boundary`] instead of compared.
pub fn check_gradients_in_region<F, R>(
    store: &mut ParameterStore,
    analytic: &Gradients,
    cfg: GradCheckConfig,
    filter: impl Fn(&ParameterStore, ParamId) -> bool,
    mut loss: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParameterStore) -> Result<(f64, R)>,
    R: PartialEq,
{
    let mut report = GradCheckReport::default();
    let (_, base) = loss(store)?;
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        if !filter(store, id) {
            continue;
        }
        let n = store.value(id).data().len();
        for i in 0..n {
            let orig = store.value(id).data()[i];
            let mut step = cfg.step;
            let mut numeric = None;
            for _ in 0..5 {
                store.value_mut(id).data_mut()[i] = orig + step;
                let (plus, rp) = loss(store)?;
                store.value_mut(id).data_mut()[i] = orig - step;
                let (minus, rm) = loss(store)?;
                store.value_mut(id).data_mut()[i] = orig;
                if rp == base && rm == base {
                    numeric = Some((plus - minus) / (2.0 * step));
                    break;
                }
                step /= 10.0;
            }
            let Some(numeric) = numeric else {
                report.boundary.push((store.name(id).to_string(), i));
                continue;
            };
            let a = analytic.get(id).map_or(0.0, |g| g.data()[i]);
            let rel = relative_error(a, numeric, cfg.floor);
            report.checked += 1;
            let m = GradMismatch { param: store.name(id).to_string(), index: i, analytic: a, numeric, rel_error: rel };
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some(m.clone());
            }
            if rel >= cfg.tolerance {
                report.failures.push(m);
            }
        }
    }
    Ok(report)
}
