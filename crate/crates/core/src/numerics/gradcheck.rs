//! Central-difference gradient checker. Validates every module's analytic
//! gradients; run in 64-bit mode where finite differences have headroom.

use crate::error::{Error, Result};
use crate::numerics::store::ParamStore;
use crate::scalar::Real;
use crate::tensor::Tensor;
use std::collections::BTreeMap;

pub type GradMap<F> = BTreeMap<String, Tensor<F>>;

/// A loss evaluation: scalar value plus analytic gradients for the trainable
/// parameters that participated.
pub type LossEval<F> = (F, GradMap<F>);

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub worst_index: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub per_param: Vec<ParamCheck>,
    pub max_rel_err: f64,
    pub worst_param: String,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tol
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "grad_check: {} params, max rel err {:.3e} (tol {:.1e}) at '{}' -> {}",
            self.per_param.len(),
            self.max_rel_err,
            self.tol,
            self.worst_param,
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

/// Gradients below this magnitude on both sides are not compared
/// relatively: the central-difference noise floor (machine epsilon times
/// the loss magnitude over the step) sits around 1e-9, so relative errors
/// under this band measure the oracle, not the implementation.
const ZERO_BAND: f64 = 1e-6;

fn rel_err(fd: f64, an: f64) -> f64 {
    let scale = fd.abs().max(an.abs());
    if scale < ZERO_BAND {
        0.0
    } else {
        (fd - an).abs() / scale
    }
}

/// Checks analytic gradients of `loss` against central differences for each
/// named parameter. `loss` must be deterministic; the analytic map may omit
/// a checked name, in which case its gradient is compared against zero
/// (the frozen-parameter contract).
pub fn grad_check<F: Real>(
    loss: &mut dyn FnMut(&ParamStore<F>) -> Result<LossEval<F>>,
    params: &ParamStore<F>,
    check: &[String],
    h: F,
    tol: f64,
) -> Result<GradCheckReport> {
    let (base_value, analytic) = loss(params)?;
    if !base_value.is_finite() {
        return Err(Error::NonFinite("grad_check base loss".into()));
    }
    let mut store = params.clone();
    let mut per_param = Vec::with_capacity(check.len());
    for name in check {
        let n = params.get(name).len();
        let mut worst = (0.0f64, 0usize);
        for idx in 0..n {
            let orig = store.get(name).data()[idx];
            store.get_mut(name).data_mut()[idx] = orig + h;
            let (up, _) = loss(&store)?;
            store.get_mut(name).data_mut()[idx] = orig - h;
            let (down, _) = loss(&store)?;
            store.get_mut(name).data_mut()[idx] = orig;
            if !up.is_finite() || !down.is_finite() {
                return Err(Error::NonFinite(format!(
                    "grad_check: loss non-finite perturbing {name}[{idx}]"
                )));
            }
            let fd = (up.as_f64() - down.as_f64()) / (2.0 * h.as_f64());
            let an = analytic
                .get(name)
                .map(|g| g.data()[idx].as_f64())
                .unwrap_or(0.0);
            let e = rel_err(fd, an);
            if e > worst.0 {
                worst = (e, idx);
            }
        }
        per_param.push(ParamCheck {
            name: name.clone(),
            max_rel_err: worst.0,
            worst_index: worst.1,
        });
    }
    let (max_rel_err, worst_param) = per_param
        .iter()
        .map(|p| (p.max_rel_err, p.name.clone()))
        .fold((0.0, String::from("-")), |acc, cur| {
            if cur.0 > acc.0 {
                cur
            } else {
                acc
            }
        });
    Ok(GradCheckReport {
        per_param,
        max_rel_err,
        worst_param,
        tol,
    })
}

/// Convenience wrapper for losses expressed as graph constructions: each
/// evaluation rebuilds the graph from the store, and analytic gradients come
/// from the backward pass.
pub fn grad_check_graph<F: Real>(
    build: &dyn Fn(&crate::numerics::store::Binder<F>) -> Result<crate::numerics::graph::VarId>,
    params: &ParamStore<F>,
    check: &[String],
    h: F,
    tol: f64,
) -> Result<GradCheckReport> {
    let mut loss = |p: &ParamStore<F>| -> Result<LossEval<F>> {
        let g = crate::numerics::graph::Graph::new();
        let b = crate::numerics::store::Binder::new(&g, p);
        let root = build(&b)?;
        let value = g.scalar(root);
        let grads = g.backward(root);
        let gm = b.trainable_grads(&grads)?;
        Ok((value, gm))
    };
    grad_check(&mut loss, params, check, h, tol)
}
