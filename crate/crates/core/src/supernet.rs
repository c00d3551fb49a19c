//! Weight-sharing hypernetwork: one parameter set per (block, operator)
//! pair, evaluated by compiling a path into a layer program and running it
//! against the shared store.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::{
    backward_with, forward_with, softmax, ActivationCache, LayerSpec, ParamSet, Scalar, Tensor,
};
use crate::space::{compile_path, PathProgram, PathSpec, ProgStep, SpaceSpec};

/// Gradients for the parameters touched by one path. Off-path parameters
/// have no entry at all.
pub type PathGrads<E> = ParamSet<E>;

/// Every parameterized layer in the space, as `(name prefix, layer spec)`,
/// in deterministic order: stem, blocks by index, operators by index, head.
pub fn param_layers(space: &SpaceSpec) -> Vec<(String, LayerSpec)> {
    let mut out = vec![(
        "stem.conv".to_string(),
        LayerSpec::conv2d(space.input_channels, space.stem_channels, 3, space.stem_stride),
    )];
    for (i, block) in space.blocks.iter().enumerate() {
        for (j, _op) in block.ops.iter().enumerate() {
            let path_like = PathProgram {
                steps: op_program(space, i, j),
            };
            for step in path_like.steps {
                if let ProgStep::Layer {
                    param: Some(name),
                    spec,
                    ..
                } = step
                {
                    out.push((name, spec));
                }
            }
        }
    }
    out.push((
        "head.proj".to_string(),
        LayerSpec::conv2d(space.feature_channels, space.head_channels, 1, 1),
    ));
    out.push((
        "head.fc".to_string(),
        LayerSpec::dense(space.head_channels, space.classes),
    ));
    out
}

/// Expected parameter names and tensor dims for a space, weight and bias
/// entries flattened out. The checkpoint loader validates against this.
pub fn param_layers_dims(space: &SpaceSpec) -> Vec<(String, Vec<usize>)> {
    param_layers(space)
        .iter()
        .flat_map(|(prefix, spec)| {
            [
                (format!("{prefix}.weight"), spec.weight_dims().expect("parameterized")),
                (format!("{prefix}.bias"), spec.bias_dims().expect("parameterized")),
            ]
        })
        .collect()
}

/// Program fragment for one (block, operator) pair. Used only to enumerate
/// parameter shapes; full-path programs come from [`compile_path`].
fn op_program(space: &SpaceSpec, block_idx: usize, op_idx: usize) -> Vec<ProgStep> {
    // Compile a path that routes through (block_idx, op_idx) and keep the
    // steps owned by that block's prefix.
    let mut choices = vec![0usize; space.blocks.len()];
    choices[block_idx] = op_idx;
    let program = compile_path(space, &PathSpec::new(choices)).expect("valid synthetic path");
    let prefix = format!("b{block_idx}.o{op_idx}.");
    program
        .steps
        .into_iter()
        .filter(|s| {
            matches!(s, ProgStep::Layer { param: Some(p), .. } if p.starts_with(&prefix))
        })
        .collect()
}

/// Fresh parameters for a list of layers: weights from a fan-in-scaled
/// uniform distribution, biases zero. Draws happen in list order, so the
/// result is a pure function of (layers, rng state, scale).
pub fn init_params<E: Scalar>(
    layers: &[(String, LayerSpec)],
    rng: &mut ChaCha8Rng,
    init_scale: f64,
) -> ParamSet<E> {
    let mut params = ParamSet::new();
    for (prefix, spec) in layers {
        let w_dims = spec.weight_dims().expect("parameterized layer");
        let bound = if spec.fan_in() > 0 {
            init_scale / (spec.fan_in() as f64).sqrt()
        } else {
            init_scale
        };
        let n: usize = w_dims.iter().product();
        let data: Vec<E> = (0..n)
            .map(|_| E::from_f64(rng.random_range(-bound..=bound)))
            .collect();
        params.insert(
            format!("{prefix}.weight"),
            Tensor::new(w_dims, data).expect("consistent dims"),
        );
        params.insert(
            format!("{prefix}.bias"),
            Tensor::zeros(spec.bias_dims().expect("parameterized layer")),
        );
    }
    params
}

/// The shared-weight hypernetwork over a search space.
#[derive(Clone, Debug)]
pub struct Supernet<E: Scalar = f32> {
    pub space: SpaceSpec,
    pub params: ParamSet<E>,
}

impl<E: Scalar> Supernet<E> {
    /// Randomly initialize every operator's parameters.
    pub fn init(space: SpaceSpec, rng: &mut ChaCha8Rng, init_scale: f64) -> Self {
        let layers = param_layers(&space);
        let params = init_params(&layers, rng, init_scale);
        Supernet { space, params }
    }

    /// Evaluate one path on a batch with inherited weights.
    pub fn forward_path(
        &self,
        path: &PathSpec,
        batch: &Tensor<E>,
    ) -> Result<(Tensor<E>, ProgramCaches<E>)> {
        let program = compile_path(&self.space, path)?;
        run_forward(&self.params, &program, batch)
    }

    /// Gradients of the on-path parameters given the logit gradient.
    pub fn backward_path(
        &self,
        path: &PathSpec,
        caches: &ProgramCaches<E>,
        grad_logits: &Tensor<E>,
    ) -> Result<PathGrads<E>> {
        let program = compile_path(&self.space, path)?;
        run_backward(&self.params, &program, caches, grad_logits)
    }

    /// Apply one SGD step to the on-path parameters only.
    pub fn apply_path_grads(&mut self, grads: &PathGrads<E>, lr: E) -> Result<()> {
        crate::numerics::sgd_step(&mut self.params, grads, lr)
    }

    /// Teacher soft targets: softmax of the path's logits. No caches are
    /// produced, so nothing can flow back into the teacher.
    pub fn soft_targets(&self, teacher_path: &PathSpec, batch: &Tensor<E>) -> Result<Tensor<E>> {
        let (logits, _) = self.forward_path(teacher_path, batch)?;
        softmax(&logits)
    }
}

/// Per-step forward state for one program execution.
pub struct ProgramCaches<E: Scalar> {
    steps: Vec<Option<ActivationCache<E>>>,
}

/// Execute a program against a parameter store.
pub fn run_forward<E: Scalar>(
    params: &ParamSet<E>,
    program: &PathProgram,
    x: &Tensor<E>,
) -> Result<(Tensor<E>, ProgramCaches<E>)> {
    let mut cur = x.clone();
    let mut skip_stack: Vec<Tensor<E>> = Vec::new();
    let mut caches = Vec::with_capacity(program.steps.len());
    for step in &program.steps {
        match step {
            ProgStep::Layer { param, spec, .. } => {
                let (w, b) = match param {
                    Some(p) => (
                        Some(params.get(&format!("{p}.weight"))?),
                        Some(params.get(&format!("{p}.bias"))?),
                    ),
                    None => (None, None),
                };
                let (y, cache) = forward_with(spec, w, b, &cur)?;
                cur = y;
                caches.push(Some(cache));
            }
            ProgStep::SaveSkip => {
                skip_stack.push(cur.clone());
                caches.push(None);
            }
            ProgStep::AddSkip => {
                let saved = skip_stack.pop().ok_or(Error::Shape {
                    op: "run_forward",
                    detail: "skip stack underflow".into(),
                })?;
                cur = cur.add(&saved)?;
                caches.push(None);
            }
        }
    }
    if !skip_stack.is_empty() {
        return Err(Error::Shape {
            op: "run_forward",
            detail: "unconsumed skip connection".into(),
        });
    }
    Ok((cur, ProgramCaches { steps: caches }))
}

/// Reverse pass over a program; returns gradients for the program's
/// parameters under their full names.
pub fn run_backward<E: Scalar>(
    params: &ParamSet<E>,
    program: &PathProgram,
    caches: &ProgramCaches<E>,
    grad_out: &Tensor<E>,
) -> Result<PathGrads<E>> {
    if caches.steps.len() != program.steps.len() {
        return Err(Error::Shape {
            op: "run_backward",
            detail: format!(
                "cache for {} steps, program has {}",
                caches.steps.len(),
                program.steps.len()
            ),
        });
    }
    let mut grads = ParamSet::new();
    let mut grad = grad_out.clone();
    let mut skip_grads: Vec<Tensor<E>> = Vec::new();
    for (step, cache) in program.steps.iter().zip(&caches.steps).rev() {
        match step {
            ProgStep::Layer { param, spec, .. } => {
                let cache = cache.as_ref().ok_or(Error::Shape {
                    op: "run_backward",
                    detail: "missing layer cache".into(),
                })?;
                let w = match param {
                    Some(p) => Some(params.get(&format!("{p}.weight"))?),
                    None => None,
                };
                let (gx, gp) = backward_with(spec, w, cache, &grad)?;
                if let (Some(p), Some((gw, gb))) = (param, gp) {
                    grads.insert(format!("{p}.weight"), gw);
                    grads.insert(format!("{p}.bias"), gb);
                }
                grad = gx;
            }
            ProgStep::SaveSkip => {
                // The saved activation fed both branches; fold the skip
                // branch's gradient back in.
                let skip = skip_grads.pop().ok_or(Error::Shape {
                    op: "run_backward",
                    detail: "skip gradient underflow".into(),
                })?;
                grad = grad.add(&skip)?;
            }
            ProgStep::AddSkip => {
                skip_grads.push(grad.clone());
            }
        }
    }
    Ok(grads)
}
