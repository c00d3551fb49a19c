use crate::error::{Error, Result};

use super::{Scalar, Tensor};

/// Row-wise softmax of a `[batch, classes]` tensor. The row max is
/// subtracted first, so arbitrarily large logits cannot overflow.
pub fn softmax<E: Scalar>(logits: &Tensor<E>) -> Result<Tensor<E>> {
    if logits.dims().len() != 2 {
        return Err(Error::Shape {
            op: "softmax",
            detail: format!("expected rank 2, got {:?}", logits.dims()),
        });
    }
    logits.check_finite("softmax input")?;
    let cols = logits.dims()[1];
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(cols) {
        let mut m = row[0];
        for &v in row.iter() {
            m = m.max(v);
        }
        let mut sum = E::ZERO;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    Ok(out)
}

/// Mean cross entropy against integer class labels.
///
/// Returns the scalar loss and its gradient with respect to the logits:
/// each row is `softmax(logits) - one_hot(label)` divided by the batch size.
pub fn cross_entropy<E: Scalar>(
    logits: &Tensor<E>,
    labels: &[usize],
) -> Result<(E, Tensor<E>)> {
    if logits.dims().len() != 2 || logits.dims()[0] != labels.len() {
        return Err(Error::Shape {
            op: "cross_entropy",
            detail: format!("logits {:?} vs {} labels", logits.dims(), labels.len()),
        });
    }
    let classes = logits.dims()[1];
    for &y in labels {
        if y >= classes {
            return Err(Error::LabelOutOfRange { label: y, classes });
        }
    }
    let n = labels.len();
    let probs = softmax(logits)?;
    let inv_n = E::from_f64(1.0 / n as f64);
    let mut loss = E::ZERO;
    let mut grad = probs.clone();
    for (r, &y) in labels.iter().enumerate() {
        let p = probs.data()[r * classes + y];
        loss += -(p.ln());
        grad.data_mut()[r * classes + y] -= E::ONE;
    }
    loss = loss * inv_n;
    grad.scale(inv_n);
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            context: "cross_entropy loss".into(),
        });
    }
    Ok((loss, grad))
}

/// Mean cross entropy against soft target distributions.
///
/// `loss = -mean_rows sum_c q_c * ln(softmax(student)_c)`; the gradient rows
/// are `softmax(student) - q` divided by the batch size. Teacher rows must
/// already be normalized.
pub fn soft_cross_entropy<E: Scalar>(
    student_logits: &Tensor<E>,
    teacher_probs: &Tensor<E>,
) -> Result<(E, Tensor<E>)> {
    if student_logits.dims() != teacher_probs.dims() || student_logits.dims().len() != 2 {
        return Err(Error::Shape {
            op: "soft_cross_entropy",
            detail: format!(
                "student {:?} vs teacher {:?}",
                student_logits.dims(),
                teacher_probs.dims()
            ),
        });
    }
    let classes = student_logits.dims()[1];
    for (r, row) in teacher_probs.data().chunks(classes).enumerate() {
        let sum: f64 = row.iter().map(|v| v.to_f64()).sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::UnnormalizedTeacher { row: r, sum });
        }
    }
    let n = student_logits.dims()[0];
    let probs = softmax(student_logits)?;
    let inv_n = E::from_f64(1.0 / n as f64);
    let mut loss = E::ZERO;
    let mut grad = probs.clone();
    for i in 0..probs.len() {
        let q = teacher_probs.data()[i];
        loss += -(q * probs.data()[i].ln());
        grad.data_mut()[i] -= q;
    }
    loss = loss * inv_n;
    grad.scale(inv_n);
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            context: "soft_cross_entropy loss".into(),
        });
    }
    Ok((loss, grad))
}

/// Numerically stable logistic function.
pub fn sigmoid<E: Scalar>(x: E) -> E {
    if x >= E::ZERO {
        E::ONE / (E::ONE + (-x).exp())
    } else {
        let e = x.exp();
        e / (E::ONE + e)
    }
}
