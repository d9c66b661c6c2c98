//! The recurrent latent loop: `z_k = step(z_{k-1})` over the shared cache,
//! with strict train-inference parity. The trainer and the inference path
//! call the same function; there is no teacher forcing, no scheduled
//! sampling, and no parallel computation across steps.

use crate::backbone::{Backbone, KvCache, PrefixEncoding};
use crate::error::{Error, Result};
use crate::model::VitalModel;
use crate::numerics::graph::{Graph, VarId};
use crate::numerics::store::{Binder, Fwd, ParamStore, NS_SCAFFOLD};
use crate::image::ToyImage;
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Ordered latent states produced by the loop, with provenance.
#[derive(Debug, Clone)]
pub struct LatentTrace<F> {
    pub states: Vec<Tensor<F>>,
    pub train_mode: bool,
}

impl<F: Real> LatentTrace<F> {
    pub fn depth(&self) -> usize {
        self.states.len()
    }

    pub fn check_finite(&self) -> Result<()> {
        for (k, z) in self.states.iter().enumerate() {
            z.check_finite(&format!("latent state z_{}", k + 1))?;
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct LoopOut<F> {
    /// Graph nodes for z_1..z_K (for loss construction).
    pub vars: Vec<VarId>,
    pub trace: LatentTrace<F>,
}

/// Runs `K` single-token latent steps starting from the prefix state,
/// enriching the cache in place by exactly `K` positions.
pub fn run_latent_loop<F: Real>(
    backbone: &Backbone,
    fwd: &Fwd<F>,
    prefix: &PrefixEncoding,
    cache: &mut KvCache,
    k: usize,
) -> Result<LoopOut<F>> {
    if cache.len() != prefix.len {
        return Err(Error::Argument(format!(
            "latent loop requires a cache holding exactly the prefix ({} cached, prefix {})",
            cache.len(),
            prefix.len
        )));
    }
    let g = fwd.graph();
    let mut vars = Vec::with_capacity(k);
    let mut states = Vec::with_capacity(k);
    let mut z = prefix.z0;
    for _ in 0..k {
        z = backbone.forward_step(fwd, cache, z)?;
        vars.push(z);
        states.push(g.value(z));
    }
    let trace = LatentTrace {
        states,
        train_mode: fwd.train,
    };
    trace.check_finite()?;
    Ok(LoopOut { vars, trace })
}

/// Function-pointer type for the latent loop, used to assert that training
/// and inference share the same loop entity.
pub type LatentLoopFn<F> = fn(
    &Backbone,
    &Fwd<'_, F>,
    &PrefixEncoding,
    &mut KvCache,
    usize,
) -> Result<LoopOut<F>>;

pub fn latent_loop_fn<F: Real>() -> LatentLoopFn<F> {
    run_latent_loop::<F>
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeployMode {
    /// The store must not contain scaffolding namespaces.
    Deployed,
    /// Scaffolding may be loaded; it is still never touched on this path.
    Tolerant,
}

/// End-to-end inference: prefix encoding, latent loop, greedy answer
/// decoding. Asserts that no scaffolding parameter was touched.
pub fn run_full_inference<F: Real>(
    model: &VitalModel,
    store: &ParamStore<F>,
    image: &ToyImage,
    question: &[usize],
    k: usize,
    max_answer_len: usize,
    mode: DeployMode,
) -> Result<(Vec<usize>, LatentTrace<F>)> {
    if mode == DeployMode::Deployed {
        let leftovers = store.names_in_namespace(NS_SCAFFOLD);
        if !leftovers.is_empty() {
            return Err(Error::Contamination(format!(
                "deployed store still holds {} scaffolding parameters (e.g. {})",
                leftovers.len(),
                leftovers[0]
            )));
        }
    }
    let g = Graph::<F>::inference();
    let binder = Binder::new(&g, store);
    let fwd = Fwd::eval(&binder);
    let prefix = model.backbone.encode_prefix(&fwd, image, question)?;
    let mut cache = prefix.cache.snapshot();
    let loop_fn: LatentLoopFn<F> = latent_loop_fn::<F>();
    let out = loop_fn(&model.backbone, &fwd, &prefix, &mut cache, k)?;
    let z_final = out.vars.last().copied().unwrap_or(prefix.z0);
    let answer = model.backbone.decode_answer(
        &fwd,
        &mut cache,
        z_final,
        max_answer_len,
        crate::data::vocab::EOS,
    )?;
    let touched = binder.bound_names();
    if let Some(bad) = touched.iter().find(|n| n.starts_with(NS_SCAFFOLD)) {
        return Err(Error::Contamination(format!(
            "inference touched scaffolding parameter '{bad}'"
        )));
    }
    Ok((answer, out.trace))
}
