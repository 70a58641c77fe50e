//! Central finite-difference gradient checking.

use super::params::{ParamId, ParamStore, Session};
use super::tape::Var;
use crate::error::{Error, Result};

/// Below this magnitude the relative error is measured against the floor
/// instead, so roundoff in near-zero gradients does not dominate.
pub const RELATIVE_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub coords_checked: usize,
    pub frozen: bool,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.max_rel_error <= self.tol)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Compares analytic gradients of the scalar built by `f` against central
/// differences for every coordinate of every trainable parameter in `store`.
/// Frozen parameters are reported with error 0.
pub fn grad_check<F>(store: &mut ParamStore, eps: f64, tol: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Session<'_>) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::contract(format!("eps must be positive, got {eps}")));
    }
    let analytic = {
        let mut session = Session::new(store);
        let out = f(&mut session)?;
        session.backward(out)?;
        session.gradients()
    };

    let eval = |store: &ParamStore| -> Result<f64> {
        let mut session = Session::new(store);
        let out = f(&mut session)?;
        Ok(session.tape.value(out).item())
    };

    let ids: Vec<ParamId> = store.ids().collect();
    let mut params = Vec::with_capacity(ids.len());
    for id in ids {
        let name = store.name(id).to_string();
        if store.is_frozen(id) {
            params.push(ParamCheck {
                name,
                max_rel_error: 0.0,
                coords_checked: 0,
                frozen: true,
            });
            continue;
        }
        let numel = store.get(id).len();
        let grad = analytic.get(id).map(<[f64]>::to_vec).unwrap_or(vec![0.0; numel]);
        let mut worst: f64 = 0.0;
        for k in 0..numel {
            let orig = store.get(id).values()[k];
            store.get_mut(id).values_mut()[k] = orig + eps;
            let plus = eval(store);
            store.get_mut(id).values_mut()[k] = orig - eps;
            let minus = eval(store);
            store.get_mut(id).values_mut()[k] = orig;
            let numeric = (plus? - minus?) / (2.0 * eps);
            worst = worst.max(relative_error(grad[k], numeric));
        }
        params.push(ParamCheck {
            name,
            max_rel_error: worst,
            coords_checked: numel,
            frozen: false,
        });
    }
    Ok(GradCheckReport { params, tol })
}
