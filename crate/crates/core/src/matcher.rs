//! The matching meta network: scores teacher-student complementarity from
//! logit differences, picks a teacher off the board, and learns from the
//! student's post-update validation loss through a closed-form
//! hypergradient.

use rand_chacha::ChaCha8Rng;

use crate::board::Board;
use crate::error::{Error, Result};
use crate::numerics::{flat_dot, sigmoid, softmax, LayerSpec, ParamSet, Scalar, Tensor};
use crate::space::PathSpec;
use crate::supernet::{init_params, PathGrads, Supernet};

/// Two dense layers: classes -> hidden (ReLU) -> 1, squashed by a sigmoid
/// so the matching degree always lands in (0, 1).
#[derive(Clone, Debug, PartialEq)]
pub struct MetaParams<E: Scalar = f32> {
    pub w1: Tensor<E>,
    pub b1: Tensor<E>,
    pub w2: Tensor<E>,
    pub b2: Tensor<E>,
}

/// Gradient of a scalar objective with respect to every meta parameter.
pub type MetaGrads<E> = MetaParams<E>;

impl<E: Scalar> MetaParams<E> {
    pub fn init(classes: usize, hidden: usize, rng: &mut ChaCha8Rng, init_scale: f64) -> Self {
        let layers = vec![
            ("l1".to_string(), LayerSpec::dense(classes, hidden)),
            ("l2".to_string(), LayerSpec::dense(hidden, 1)),
        ];
        let params: ParamSet<E> = init_params(&layers, rng, init_scale);
        MetaParams {
            w1: params.get("l1.weight").unwrap().clone(),
            b1: params.get("l1.bias").unwrap().clone(),
            w2: params.get("l2.weight").unwrap().clone(),
            b2: params.get("l2.bias").unwrap().clone(),
        }
    }

    pub fn classes(&self) -> usize {
        self.w1.dims()[1]
    }

    pub fn hidden(&self) -> usize {
        self.w1.dims()[0]
    }

    pub fn zeros_like(&self) -> MetaParams<E> {
        MetaParams {
            w1: Tensor::zeros(self.w1.dims().to_vec()),
            b1: Tensor::zeros(self.b1.dims().to_vec()),
            w2: Tensor::zeros(self.w2.dims().to_vec()),
            b2: Tensor::zeros(self.b2.dims().to_vec()),
        }
    }

    /// Flat named view, used by the checkpoint writer.
    pub fn to_param_set(&self) -> ParamSet<E> {
        let mut p = ParamSet::new();
        p.insert("meta.l1.weight", self.w1.clone());
        p.insert("meta.l1.bias", self.b1.clone());
        p.insert("meta.l2.weight", self.w2.clone());
        p.insert("meta.l2.bias", self.b2.clone());
        p
    }

    pub fn from_param_set(params: &ParamSet<E>) -> Result<Self> {
        Ok(MetaParams {
            w1: params.get("meta.l1.weight")?.clone(),
            b1: params.get("meta.l1.bias")?.clone(),
            w2: params.get("meta.l2.weight")?.clone(),
            b2: params.get("meta.l2.bias")?.clone(),
        })
    }

    pub fn bitwise_eq(&self, other: &MetaParams<E>) -> bool {
        self.w1.bitwise_eq(&other.w1)
            && self.b1.bitwise_eq(&other.b1)
            && self.w2.bitwise_eq(&other.w2)
            && self.b2.bitwise_eq(&other.b2)
    }
}

/// Forward state of one score evaluation, kept for the hypergradient.
#[derive(Clone, Debug)]
pub struct ScoreCache<E: Scalar> {
    /// Per-example logit differences (teacher - student), `[batch, classes]`.
    diffs: Tensor<E>,
    /// Post-ReLU hidden activations, `[batch, hidden]`.
    hidden: Tensor<E>,
    /// Pre-sigmoid batch mean.
    pre: E,
}

/// A scored teacher choice.
#[derive(Clone, Debug)]
pub struct MatchScore<E: Scalar> {
    pub rho: E,
    pub teacher_index: usize,
    pub cache: ScoreCache<E>,
}

/// Matching degree of one teacher against one student on a batch.
///
/// The per-example input is the logit difference; the network output is
/// averaged over the batch before the sigmoid.
pub fn score<E: Scalar>(
    meta: &MetaParams<E>,
    teacher_logits: &Tensor<E>,
    student_logits: &Tensor<E>,
) -> Result<(E, ScoreCache<E>)> {
    if teacher_logits.dims() != student_logits.dims() || teacher_logits.dims().len() != 2 {
        return Err(Error::Shape {
            op: "match_score",
            detail: format!(
                "teacher {:?} vs student {:?}",
                teacher_logits.dims(),
                student_logits.dims()
            ),
        });
    }
    let classes = meta.classes();
    let hidden = meta.hidden();
    if teacher_logits.dims()[1] != classes {
        return Err(Error::Shape {
            op: "match_score",
            detail: format!(
                "logit width {} vs meta input {}",
                teacher_logits.dims()[1],
                classes
            ),
        });
    }
    let n = teacher_logits.dims()[0];
    let mut diffs = teacher_logits.clone();
    for (d, &s) in diffs.data_mut().iter_mut().zip(student_logits.data()) {
        *d -= s;
    }
    let mut h = Tensor::zeros(vec![n, hidden]);
    for i in 0..n {
        for j in 0..hidden {
            let mut acc = meta.b1.data()[j];
            for c in 0..classes {
                acc += meta.w1.data()[j * classes + c] * diffs.data()[i * classes + c];
            }
            h.data_mut()[i * hidden + j] = acc.max(E::ZERO);
        }
    }
    let mut sum = E::ZERO;
    for i in 0..n {
        let mut o = meta.b2.data()[0];
        for j in 0..hidden {
            o += meta.w2.data()[j] * h.data()[i * hidden + j];
        }
        sum += o;
    }
    let pre = sum / E::from_f64(n as f64);
    if !pre.is_finite() {
        return Err(Error::NonFinite {
            context: "match score pre-activation".into(),
        });
    }
    let rho = sigmoid(pre);
    Ok((rho, ScoreCache { diffs, hidden: h, pre }))
}

/// Exact gradient of rho with respect to the meta parameters, recomputed
/// from the cached forward state.
fn grad_rho<E: Scalar>(meta: &MetaParams<E>, cache: &ScoreCache<E>) -> MetaGrads<E> {
    let classes = meta.classes();
    let hidden = meta.hidden();
    let n = cache.diffs.dims()[0];
    let rho = sigmoid(cache.pre);
    // d rho / d pre, then 1/n for the batch mean of per-example outputs.
    let common = rho * (E::ONE - rho) / E::from_f64(n as f64);
    let mut g = meta.zeros_like();
    for i in 0..n {
        g.b2.data_mut()[0] += common;
        for j in 0..hidden {
            let hj = cache.hidden.data()[i * hidden + j];
            g.w2.data_mut()[j] += common * hj;
            if hj > E::ZERO {
                let up = common * meta.w2.data()[j];
                g.b1.data_mut()[j] += up;
                for c in 0..classes {
                    g.w1.data_mut()[j * classes + c] += up * cache.diffs.data()[i * classes + c];
                }
            }
        }
    }
    g
}

/// Pick the board entry with the highest matching degree against the
/// student, excluding the student's own path. Returns the score and the
/// chosen teacher's soft targets.
pub fn select_teacher<E: Scalar>(
    meta: &MetaParams<E>,
    board: &Board,
    net: &Supernet<E>,
    student_path: &PathSpec,
    batch: &Tensor<E>,
) -> Result<(MatchScore<E>, Tensor<E>)> {
    let (student_logits, _) = net.forward_path(student_path, batch)?;
    select_teacher_with_logits(meta, board, net, &student_logits, student_path, batch)
}

/// Same as [`select_teacher`] but reuses already computed student logits.
pub fn select_teacher_with_logits<E: Scalar>(
    meta: &MetaParams<E>,
    board: &Board,
    net: &Supernet<E>,
    student_logits: &Tensor<E>,
    student_path: &PathSpec,
    batch: &Tensor<E>,
) -> Result<(MatchScore<E>, Tensor<E>)> {
    let mut best: Option<(MatchScore<E>, Tensor<E>)> = None;
    for (k, entry) in board.entries().iter().enumerate() {
        if &entry.path == student_path {
            continue;
        }
        let (teacher_logits, _) = net.forward_path(&entry.path, batch)?;
        let (rho, cache) = score(meta, &teacher_logits, student_logits)?;
        let take = match &best {
            None => true,
            Some((b, _)) => rho > b.rho,
        };
        if take {
            best = Some((
                MatchScore {
                    rho,
                    teacher_index: k,
                    cache,
                },
                teacher_logits,
            ));
        }
    }
    let (score, teacher_logits) = best.ok_or(Error::NoTeacher)?;
    let soft = softmax(&teacher_logits)?;
    Ok((score, soft))
}

/// Closed-form hypergradient of the post-update validation loss with
/// respect to the meta parameters.
///
/// With `w' = w - eta * (g_ce + rho * g_kd)` and the teacher index held
/// fixed, the chain rule gives `dR/d theta = s * d rho / d theta` where
/// `s = -eta * <grad_w R(w'), g_kd>`. `v` must be the validation loss
/// gradient at the post-update weights, restricted to the student path.
pub fn hypergradient<E: Scalar>(
    meta: &MetaParams<E>,
    cached: &MatchScore<E>,
    v: &PathGrads<E>,
    g_kd: &PathGrads<E>,
    eta: E,
) -> Result<MetaGrads<E>> {
    let s = -eta * flat_dot(v, g_kd)?;
    let mut g = grad_rho(meta, &cached.cache);
    g.w1.scale(s);
    g.b1.scale(s);
    g.w2.scale(s);
    g.b2.scale(s);
    Ok(g)
}

/// One descent step on the meta parameters. A zero learning rate or zero
/// gradients leave the parameters bit-identical.
pub fn meta_step<E: Scalar>(
    meta: &mut MetaParams<E>,
    grads: &MetaGrads<E>,
    meta_lr: E,
) -> Result<()> {
    if meta_lr == E::ZERO {
        return Ok(());
    }
    for (p, g) in [
        (&mut meta.w1, &grads.w1),
        (&mut meta.b1, &grads.b1),
        (&mut meta.w2, &grads.w2),
        (&mut meta.b2, &grads.b2),
    ] {
        if p.dims() != g.dims() {
            return Err(Error::Shape {
                op: "meta_step",
                detail: format!("{:?} vs {:?}", p.dims(), g.dims()),
            });
        }
        for (pv, &gv) in p.data_mut().iter_mut().zip(g.data()) {
            if gv != E::ZERO {
                *pv = *pv - meta_lr * gv;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn meta_with(w1: Vec<f64>, b1: Vec<f64>, w2: Vec<f64>, b2: f64, h: usize, c: usize) -> MetaParams<f64> {
        MetaParams {
            w1: Tensor::new(vec![h, c], w1).unwrap(),
            b1: Tensor::new(vec![h], b1).unwrap(),
            w2: Tensor::new(vec![1, h], w2).unwrap(),
            b2: Tensor::new(vec![1], vec![b2]).unwrap(),
        }
    }

    #[test]
    fn equal_logits_give_rho_half_with_zero_biases() {
        let mut rng = stream(1, "meta_init");
        let meta: MetaParams<f64> = MetaParams::init(3, 8, &mut rng, 1.0);
        let logits = Tensor::new(vec![2, 3], vec![0.4, -1.0, 2.0, 0.0, 0.1, -0.2]).unwrap();
        let (rho, cache) = score(&meta, &logits, &logits).unwrap();
        assert_eq!(rho, 0.5);
        assert_eq!(cache.pre, 0.0);
    }

    #[test]
    fn negating_output_layer_flips_rho() {
        let meta = meta_with(vec![0.7, -0.3], vec![0.1, 0.2], vec![0.5, -0.4], 0.0, 2, 1);
        let t = Tensor::new(vec![2, 1], vec![1.0, -0.5]).unwrap();
        let s = Tensor::new(vec![2, 1], vec![0.2, 0.3]).unwrap();
        let (rho, _) = score(&meta, &t, &s).unwrap();
        let flipped = meta_with(vec![0.7, -0.3], vec![0.1, 0.2], vec![-0.5, 0.4], 0.0, 2, 1);
        let (rho2, _) = score(&flipped, &t, &s).unwrap();
        assert!((rho + rho2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn one_unit_meta_matches_closed_form() {
        // rho = sigmoid(w2 * relu(w1 * d + b1) + b2) on a single example.
        let (w1, b1, w2, b2) = (1.5, 0.25, -0.8, 0.3);
        let meta = meta_with(vec![w1], vec![b1], vec![w2], b2, 1, 1);
        let t = Tensor::new(vec![1, 1], vec![2.0]).unwrap();
        let s = Tensor::new(vec![1, 1], vec![0.5]).unwrap();
        let (rho, _) = score(&meta, &t, &s).unwrap();
        let d: f64 = 2.0 - 0.5;
        let expected = sigmoid(w2 * (w1 * d + b1).max(0.0) + b2);
        assert!((rho - expected).abs() < 1e-12);
    }

    #[test]
    fn score_rejects_shape_mismatch() {
        let mut rng = stream(2, "meta_init");
        let meta: MetaParams<f64> = MetaParams::init(3, 4, &mut rng, 1.0);
        let t = Tensor::zeros(vec![2, 3]);
        let s = Tensor::zeros(vec![2, 2]);
        assert!(score(&meta, &t, &s).is_err());
        let s4 = Tensor::zeros(vec![2, 4]);
        assert!(score(&meta, &s4.clone(), &s4).is_err());
    }

    #[test]
    fn hypergradient_scales_grad_rho() {
        let meta = meta_with(vec![1.0, 0.5], vec![0.0, 0.1], vec![0.4, -0.2], 0.0, 2, 1);
        let t = Tensor::new(vec![1, 1], vec![1.0]).unwrap();
        let s = Tensor::new(vec![1, 1], vec![-1.0]).unwrap();
        let (rho, cache) = score(&meta, &t, &s).unwrap();
        let ms = MatchScore { rho, teacher_index: 0, cache };

        let one = |x: f64| -> PathGrads<f64> {
            let mut p = ParamSet::new();
            p.insert("w", Tensor::new(vec![1], vec![x]).unwrap());
            p
        };
        // Orthogonal v and g_kd: all-zero meta grads.
        let g = hypergradient(&meta, &ms, &one(0.0), &one(5.0), 0.1).unwrap();
        assert!(g.w1.data().iter().all(|&v| v == 0.0));
        assert!(g.b2.data()[0] == 0.0);

        // flat_dot = 1, eta = 0.1: grads equal -0.1 * grad_rho.
        let g1 = hypergradient(&meta, &ms, &one(1.0), &one(1.0), 0.1).unwrap();
        let base = grad_rho(&meta, &ms.cache);
        for (a, b) in g1.w1.data().iter().zip(base.w1.data()) {
            assert!((a - (-0.1) * b).abs() < 1e-12);
        }
    }

    #[test]
    fn meta_step_identity_cases_and_arithmetic() {
        let mut meta = meta_with(vec![1.0], vec![2.0], vec![3.0], 4.0, 1, 1);
        let before = meta.clone();
        let zero = meta.zeros_like();
        meta_step(&mut meta, &zero, 0.5).unwrap();
        assert!(meta.bitwise_eq(&before));

        let grads = meta_with(vec![2.0], vec![4.0], vec![6.0], 8.0, 1, 1);
        meta_step(&mut meta, &grads, 0.0).unwrap();
        assert!(meta.bitwise_eq(&before));

        meta_step(&mut meta, &grads, 0.5).unwrap();
        assert_eq!(meta.w1.data(), &[0.0]);
        assert_eq!(meta.b1.data(), &[0.0]);
        assert_eq!(meta.w2.data(), &[0.0]);
        assert_eq!(meta.b2.data(), &[0.0]);
    }

    #[test]
    fn teacher_selection_argmax_and_exclusion() {
        use crate::board::{Board, BoardEntry, EvalStats};
        use crate::space::{build_space, micro_space_config};

        let space = build_space(&micro_space_config()).unwrap();
        let mut rng = stream(3, "weights_init");
        let net: Supernet<f64> = Supernet::init(space.clone(), &mut rng, 1.0);
        let mut mrng = stream(3, "meta_init");
        let meta: MetaParams<f64> = MetaParams::init(space.classes, 8, &mut mrng, 1.0);
        let batch = Tensor::filled(vec![2, 1, 8, 8], 0.5f64);

        let entry = |choices: Vec<usize>| BoardEntry {
            path: PathSpec::new(choices),
            stats: EvalStats::default(),
            flops: 100,
        };
        // Single eligible teacher: always returned.
        let board = Board::from_entries(vec![entry(vec![1, 1, 1])], 0, 1_000).unwrap();
        let student = PathSpec::new(vec![0, 0, 0]);
        let (ms, soft) = select_teacher(&meta, &board, &net, &student, &batch).unwrap();
        assert_eq!(ms.teacher_index, 0);
        for row in soft.data().chunks(space.classes) {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }

        // The student's own path is excluded even when it is the only entry.
        let board = Board::from_entries(vec![entry(vec![0, 0, 0])], 0, 1_000).unwrap();
        assert!(matches!(
            select_teacher(&meta, &board, &net, &student, &batch),
            Err(Error::NoTeacher)
        ));
    }

    #[test]
    fn argmax_ties_resolve_to_lowest_index_and_survive_monotone_transforms() {
        // Selection keeps the first strict maximum; (0.3, 0.9, 0.9) -> 1.
        let pick = |xs: &[f64]| {
            let mut best = 0;
            for (i, &x) in xs.iter().enumerate() {
                if x > xs[best] {
                    best = i;
                }
            }
            best
        };
        assert_eq!(pick(&[0.3, 0.9, 0.9]), 1);
        let xs = [0.11, 0.72, 0.64, 0.72, 0.3];
        let exp: Vec<f64> = xs.iter().map(|x| x.exp()).collect();
        assert_eq!(pick(&xs), pick(&exp));
    }
}
