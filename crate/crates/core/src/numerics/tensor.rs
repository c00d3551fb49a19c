use std::collections::BTreeMap;

use crate::error::{Error, Result};

use super::Scalar;

/// Dense row-major tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<E: Scalar = f32> {
    dims: Vec<usize>,
    data: Vec<E>,
}

impl<E: Scalar> Tensor<E> {
    pub fn new(dims: Vec<usize>, data: Vec<E>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::Shape {
                op: "tensor_new",
                detail: format!("dims {:?} imply {} elements, got {}", dims, n, data.len()),
            });
        }
        Ok(Tensor { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let n: usize = dims.iter().product();
        Tensor {
            dims,
            data: vec![E::ZERO; n],
        }
    }

    pub fn filled(dims: Vec<usize>, value: E) -> Self {
        let n: usize = dims.iter().product();
        Tensor {
            dims,
            data: vec![value; n],
        }
    }

    pub fn scalar(value: E) -> Self {
        Tensor {
            dims: vec![1],
            data: vec![value],
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [E] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<E> {
        self.data
    }

    /// Flat offset of `[n, c, h, w]` in an NCHW tensor.
    #[inline]
    pub fn at4(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.dims[1] + c) * self.dims[2] + h) * self.dims[3] + w
    }

    /// Flat offset of `[r, c]` in a 2-d tensor.
    #[inline]
    pub fn at2(&self, r: usize, c: usize) -> usize {
        r * self.dims[1] + c
    }

    pub fn cast<F: Scalar>(&self) -> Tensor<F> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| F::from_f64(v.to_f64())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn check_finite(&self, context: &str) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite {
                context: context.to_string(),
            })
        }
    }

    /// Elementwise sum; shapes must match.
    pub fn add(&self, other: &Tensor<E>) -> Result<Tensor<E>> {
        if self.dims != other.dims {
            return Err(Error::Shape {
                op: "tensor_add",
                detail: format!("{:?} vs {:?}", self.dims, other.dims),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a + b)
            .collect();
        Ok(Tensor {
            dims: self.dims.clone(),
            data,
        })
    }

    /// `self += alpha * other`; shapes must match.
    pub fn axpy(&mut self, alpha: E, other: &Tensor<E>) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::Shape {
                op: "tensor_axpy",
                detail: format!("{:?} vs {:?}", self.dims, other.dims),
            });
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: E) {
        for v in &mut self.data {
            *v = *v * alpha;
        }
    }

    /// Stack two same-shape tensors along a new leading axis of size 2.
    pub fn stack_pair(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
        if a.dims != b.dims {
            return Err(Error::Shape {
                op: "stack_pair",
                detail: format!("{:?} vs {:?}", a.dims, b.dims),
            });
        }
        let mut dims = vec![2];
        dims.extend_from_slice(&a.dims);
        let mut data = Vec::with_capacity(a.data.len() * 2);
        data.extend_from_slice(&a.data);
        data.extend_from_slice(&b.data);
        Ok(Tensor { dims, data })
    }

    /// Row argmax for a `[rows, cols]` tensor; ties resolve to the lowest index.
    pub fn argmax_rows(&self) -> Result<Vec<usize>> {
        if self.dims.len() != 2 {
            return Err(Error::Shape {
                op: "argmax_rows",
                detail: format!("expected rank 2, got {:?}", self.dims),
            });
        }
        let cols = self.dims[1];
        let mut out = Vec::with_capacity(self.dims[0]);
        for row in self.data.chunks(cols) {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            out.push(best);
        }
        Ok(out)
    }

    /// True when both tensors hold exactly the same bit patterns.
    pub fn bitwise_eq(&self, other: &Tensor<E>) -> bool {
        self.dims == other.dims
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.bits() == b.bits())
    }
}

/// Named map from parameter id to tensor.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet<E: Scalar = f32> {
    params: BTreeMap<String, Tensor<E>>,
}

impl<E: Scalar> ParamSet<E> {
    pub fn new() -> Self {
        ParamSet {
            params: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<E>) {
        self.params.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<E>> {
        self.params.get(name).ok_or_else(|| Error::MissingParam {
            name: name.to_string(),
        })
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<E>> {
        self.params.get_mut(name).ok_or_else(|| Error::MissingParam {
            name: name.to_string(),
        })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<E>)> {
        self.params.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn cast<F: Scalar>(&self) -> ParamSet<F> {
        ParamSet {
            params: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params.values().all(|t| t.all_finite())
    }

    /// Total scalar element count across all tensors.
    pub fn element_count(&self) -> usize {
        self.params.values().map(|t| t.len()).sum()
    }

    pub fn zeros_like(&self) -> ParamSet<E> {
        ParamSet {
            params: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.dims().to_vec())))
                .collect(),
        }
    }

    /// `self += alpha * other` over matching keys; `other` must be a subset
    /// shape-compatible with `self`.
    pub fn axpy(&mut self, alpha: E, other: &ParamSet<E>) -> Result<()> {
        for (name, g) in &other.params {
            let p = self.params.get_mut(name).ok_or(Error::MissingParam {
                name: name.clone(),
            })?;
            p.axpy(alpha, g)?;
        }
        Ok(())
    }

    pub fn bitwise_eq(&self, other: &ParamSet<E>) -> bool {
        self.params.len() == other.params.len()
            && self.params.iter().zip(other.params.iter()).all(
                |((ka, ta), (kb, tb))| ka == kb && ta.bitwise_eq(tb),
            )
    }
}

impl<E: Scalar> FromIterator<(String, Tensor<E>)> for ParamSet<E> {
    fn from_iter<I: IntoIterator<Item = (String, Tensor<E>)>>(iter: I) -> Self {
        ParamSet {
            params: iter.into_iter().collect(),
        }
    }
}

/// One SGD step: `p <- p - lr * g` for every parameter named in `grads`.
///
/// Parameters not named in `grads` are left untouched, bit for bit. A zero
/// learning rate is the identity (the update loop is skipped entirely so no
/// `-0.0` sign flips can occur).
pub fn sgd_step<E: Scalar>(params: &mut ParamSet<E>, grads: &ParamSet<E>, lr: E) -> Result<()> {
    if lr < E::ZERO {
        return Err(Error::Config {
            field: "lr".into(),
            message: "learning rate must be non-negative".into(),
        });
    }
    // Validate before mutating so a failed call leaves params unchanged.
    for (name, g) in grads.iter() {
        let p = params.get(name)?;
        if p.dims() != g.dims() {
            return Err(Error::Shape {
                op: "sgd_step",
                detail: format!("{}: {:?} vs {:?}", name, p.dims(), g.dims()),
            });
        }
    }
    if lr == E::ZERO {
        return Ok(());
    }
    for (name, g) in grads.iter() {
        let p = params.get_mut(name)?;
        for (pv, &gv) in p.data_mut().iter_mut().zip(g.data()) {
            *pv = *pv - lr * gv;
        }
    }
    Ok(())
}

/// Sum of elementwise products over two param sets with identical key sets.
pub fn flat_dot<E: Scalar>(a: &ParamSet<E>, b: &ParamSet<E>) -> Result<E> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            op: "flat_dot",
            detail: format!("{} keys vs {} keys", a.len(), b.len()),
        });
    }
    let mut acc = 0.0f64;
    for ((ka, ta), (kb, tb)) in a.iter().zip(b.iter()) {
        if ka != kb {
            return Err(Error::Shape {
                op: "flat_dot",
                detail: format!("key sets differ: {} vs {}", ka, kb),
            });
        }
        if ta.dims() != tb.dims() {
            return Err(Error::Shape {
                op: "flat_dot",
                detail: format!("{}: {:?} vs {:?}", ka, ta.dims(), tb.dims()),
            });
        }
        for (&x, &y) in ta.data().iter().zip(tb.data()) {
            acc += x.to_f64() * y.to_f64();
        }
    }
    Ok(E::from_f64(acc))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pset(entries: &[(&str, Vec<f64>)]) -> ParamSet<f64> {
        entries
            .iter()
            .map(|(name, vals)| {
                (
                    name.to_string(),
                    Tensor::new(vec![vals.len()], vals.clone()).unwrap(),
                )
            })
            .collect()
    }

    #[test]
    fn new_rejects_bad_length() {
        assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn sgd_step_arithmetic() {
        let mut p = pset(&[("w", vec![1.0])]);
        let g = pset(&[("w", vec![2.0])]);
        sgd_step(&mut p, &g, 0.5).unwrap();
        assert_eq!(p.get("w").unwrap().data(), &[0.0]);

        let mut p = pset(&[("w", vec![1.0, 1.0])]);
        let g = pset(&[("w", vec![1.0, -1.0])]);
        sgd_step(&mut p, &g, 1.0).unwrap();
        assert_eq!(p.get("w").unwrap().data(), &[0.0, 2.0]);
    }

    #[test]
    fn sgd_step_zero_lr_is_bitwise_identity() {
        let mut p = pset(&[("w", vec![1.25, -0.0, 3.5e-8])]);
        let before = p.clone();
        let g = pset(&[("w", vec![7.0, -2.0, 1.0])]);
        sgd_step(&mut p, &g, 0.0).unwrap();
        assert!(p.bitwise_eq(&before));
    }

    #[test]
    fn sgd_step_rejects_shape_mismatch() {
        let mut p = pset(&[("w", vec![1.0])]);
        let g = pset(&[("w", vec![1.0, 2.0])]);
        assert!(sgd_step(&mut p, &g, 0.1).is_err());
    }

    #[test]
    fn flat_dot_examples() {
        let a = pset(&[("w", vec![1.0, 2.0])]);
        let b = pset(&[("w", vec![3.0, -1.0])]);
        assert_eq!(flat_dot(&a, &b).unwrap(), 1.0);

        let z = pset(&[("w", vec![0.0, 0.0])]);
        assert_eq!(flat_dot(&a, &z).unwrap(), 0.0);

        let c = pset(&[("w", vec![3.0, 4.0])]);
        assert_eq!(flat_dot(&c, &c).unwrap(), 25.0);
    }

    #[test]
    fn flat_dot_rejects_key_mismatch() {
        let a = pset(&[("w", vec![1.0])]);
        let b = pset(&[("v", vec![1.0])]);
        assert!(flat_dot(&a, &b).is_err());
    }

    #[test]
    fn stack_pair_roundtrip() {
        let a = Tensor::new(vec![2], vec![1.0f32, 2.0]).unwrap();
        let b = Tensor::new(vec![2], vec![3.0f32, 4.0]).unwrap();
        let s = Tensor::stack_pair(&a, &b).unwrap();
        assert_eq!(s.dims(), &[2, 2]);
        assert_eq!(s.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn argmax_breaks_ties_low() {
        let t = Tensor::new(vec![2, 3], vec![1.0f32, 1.0, 0.0, 0.0, 2.0, 2.0]).unwrap();
        assert_eq!(t.argmax_rows().unwrap(), vec![0, 1]);
    }
}
