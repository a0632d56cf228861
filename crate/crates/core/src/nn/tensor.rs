use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use super::NnError;

/// Element type of the engine: `f32` for training, `f64` for gradient checks.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Default + AddAssign + MulAssign + Sum + Debug + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("representable")
    }

    /// `C += A·B` for strided `m×k` and `k×n` operands.
    ///
    /// # Safety
    /// Every element addressed through the pointers and strides must lie in
    /// valid memory, and `c` must not alias `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_acc(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Scalar for f32 {
    unsafe fn gemm_acc(
        m: usize,
        k: usize,
        n: usize,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        unsafe { matrixmultiply::sgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, 1.0, c, rsc, csc) }
    }
}

impl Scalar for f64 {
    unsafe fn gemm_acc(
        m: usize,
        k: usize,
        n: usize,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        unsafe { matrixmultiply::dgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, 1.0, c, rsc, csc) }
    }
}

#[inline]
pub(crate) fn sc<T: Scalar>(v: f64) -> T {
    <T as Scalar>::from_f64(v)
}

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self, NnError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(NnError::Shape(format!(
                "shape {shape:?} needs {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self, NnError> {
        Self::from_vec(shape, self.data)
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum_sq(&self) -> T {
        self.data.iter().map(|&x| x * x).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|x| sc::<U>(x.to_f64().unwrap()))
                .collect(),
        }
    }

    /// Shape as `[B, C, H, W]`, or an error naming `what`.
    pub fn dims4(&self, what: &str) -> Result<[usize; 4], NnError> {
        <[usize; 4]>::try_from(self.shape.as_slice())
            .map_err(|_| NnError::Shape(format!("{what} expects rank-4 input, got {:?}", self.shape)))
    }

    pub fn dims2(&self, what: &str) -> Result<[usize; 2], NnError> {
        <[usize; 2]>::try_from(self.shape.as_slice())
            .map_err(|_| NnError::Shape(format!("{what} expects rank-2 input, got {:?}", self.shape)))
    }
}

/// Concatenates tensors that agree on every axis but axis 1.
pub fn concat_axis1<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>, NnError> {
    let first = parts
        .first()
        .ok_or_else(|| NnError::Shape("concat of nothing".into()))?;
    let batch = first.shape[0];
    let inner: usize = first.shape[2..].iter().product();
    for p in parts {
        if p.shape.len() != first.shape.len() || p.shape[0] != batch || p.shape[2..] != first.shape[2..] {
            return Err(NnError::Shape(format!(
                "cannot concatenate {:?} with {:?}",
                p.shape, first.shape
            )));
        }
    }
    let total: usize = parts.iter().map(|p| p.shape[1]).sum();
    let mut shape = first.shape.clone();
    shape[1] = total;
    let mut data = Vec::with_capacity(batch * total * inner);
    for b in 0..batch {
        for p in parts {
            let block = p.shape[1] * inner;
            data.extend_from_slice(&p.data[b * block..(b + 1) * block]);
        }
    }
    Tensor::from_vec(&shape, data)
}

/// Inverse of [`concat_axis1`] given the axis-1 extents of the parts.
pub fn split_axis1<T: Scalar>(t: &Tensor<T>, sizes: &[usize]) -> Result<Vec<Tensor<T>>, NnError> {
    if sizes.iter().sum::<usize>() != t.shape[1] {
        return Err(NnError::Shape(format!(
            "split sizes {sizes:?} do not cover axis of {}",
            t.shape[1]
        )));
    }
    let batch = t.shape[0];
    let inner: usize = t.shape[2..].iter().product();
    let mut outs: Vec<Vec<T>> = sizes
        .iter()
        .map(|s| Vec::with_capacity(batch * s * inner))
        .collect();
    let row = t.shape[1] * inner;
    for b in 0..batch {
        let mut offset = b * row;
        for (out, s) in outs.iter_mut().zip(sizes) {
            out.extend_from_slice(&t.data[offset..offset + s * inner]);
            offset += s * inner;
        }
    }
    outs.into_iter()
        .zip(sizes)
        .map(|(data, &s)| {
            let mut shape = t.shape.clone();
            shape[1] = s;
            Tensor::from_vec(&shape, data)
        })
        .collect()
}

#[inline]
pub(crate) fn axpy<T: Scalar>(y: &mut [T], a: T, x: &[T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let chunks = a.len() / 8;
    for k in 0..chunks {
        let (x, y) = (&a[k * 8..k * 8 + 8], &b[k * 8..k * 8 + 8]);
        for ((a, &xv), &yv) in acc.iter_mut().zip(x).zip(y) {
            *a += xv * yv;
        }
    }
    let mut s = T::zero();
    for a in acc {
        s += a;
    }
    for k in chunks * 8..a.len() {
        s += a[k] * b[k];
    }
    s
}
