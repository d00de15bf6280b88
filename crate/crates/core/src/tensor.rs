//! Dense row-major tensors and the raw `SGT1` tensor file format.
//!
//! Layout of a raw tensor file (all integers little-endian):
//!
//! | bytes      | content                          |
//! |------------|----------------------------------|
//! | 4          | magic `SGT1`                     |
//! | 1          | dtype code (0 = f32, 1 = f64)    |
//! | 1          | number of dimensions `n`         |
//! | 8 * n      | dimensions as `u64`              |
//! | remainder  | payload, row-major               |

use std::fmt::{Debug, Display};
use std::io::{Read, Write};

use num_traits::Float;

use crate::error::{shape_err, Error, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"SGT1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(DType::F32),
            1 => Ok(DType::F64),
            other => Err(Error::Format(format!("unknown dtype code {other}"))),
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// Floating point element type. Implemented for `f32` (training) and `f64`
/// (gradient checks).
pub trait Real:
    Float + Default + Debug + Display + Send + Sync + std::iter::Sum + 'static
{
    const DTYPE: DType;

    fn of(x: f64) -> Self;

    fn as_f64(self) -> f64;

    /// `c = alpha * a * b + beta * c` with arbitrary strides, `a` is m×k, `b` is k×n.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: usize,
        csa: usize,
        b: &[Self],
        rsb: usize,
        csb: usize,
        beta: Self,
        c: &mut [Self],
        rsc: usize,
        csc: usize,
    );

    fn write_le<W: Write>(self, w: &mut W) -> std::io::Result<()>;

    fn read_le<R: Read>(r: &mut R) -> std::io::Result<Self>;
}

fn span(rows: usize, cols: usize, rs: usize, cs: usize) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * rs + (cols - 1) * cs + 1
    }
}

macro_rules! impl_real {
    ($t:ty, $dtype:expr, $gemm:path) => {
        impl Real for $t {
            const DTYPE: DType = $dtype;

            #[inline]
            fn of(x: f64) -> Self {
                x as $t
            }

            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: usize,
                csa: usize,
                b: &[Self],
                rsb: usize,
                csb: usize,
                beta: Self,
                c: &mut [Self],
                rsc: usize,
                csc: usize,
            ) {
                assert!(a.len() >= span(m, k, rsa, csa), "gemm: lhs buffer too small");
                assert!(b.len() >= span(k, n, rsb, csb), "gemm: rhs buffer too small");
                assert!(c.len() >= span(m, n, rsc, csc), "gemm: output buffer too small");
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: the asserts above bound every index the kernel touches.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa as isize,
                        csa as isize,
                        b.as_ptr(),
                        rsb as isize,
                        csb as isize,
                        beta,
                        c.as_mut_ptr(),
                        rsc as isize,
                        csc as isize,
                    );
                }
            }

            fn write_le<W: Write>(self, w: &mut W) -> std::io::Result<()> {
                w.write_all(&self.to_le_bytes())
            }

            fn read_le<R: Read>(r: &mut R) -> std::io::Result<Self> {
                let mut buf = [0u8; std::mem::size_of::<$t>()];
                r.read_exact(&mut buf)?;
                Ok(<$t>::from_le_bytes(buf))
            }
        }
    };
}

impl_real!(f32, DType::F32, matrixmultiply::sgemm);
impl_real!(f64, DType::F64, matrixmultiply::dgemm);

/// N-dimensional dense array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(shape_err(format!(
                "shape {shape:?} holds {numel} elements but {} were given",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let numel = shape.iter().product();
        Tensor { shape, data: vec![value; numel] }
    }

    pub fn scalar(value: T) -> Self {
        Tensor { shape: Vec::new(), data: vec![value] }
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> T) -> Self {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        Tensor { shape, data: (0..numel).map(&mut f).collect() }
    }

    pub fn from_f64(shape: impl Into<Vec<usize>>, data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| T::of(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
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

    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    /// Shape of a 4-D tensor as `(b, c, h, w)`.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [b, c, h, w] => Ok((b, c, h, w)),
            _ => Err(shape_err(format!("expected a 4-D tensor, got {:?}", self.shape))),
        }
    }

    fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank mismatch");
        index.iter().zip(&self.shape).fold(0, |acc, (&i, &d)| {
            assert!(i < d, "index {index:?} out of bounds for {:?}", self.shape);
            acc * d + i
        })
    }

    pub fn get(&self, index: &[usize]) -> T {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: T) {
        let o = self.offset(index);
        self.data[o] = value;
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }

    /// Element-wise `self += other`.
    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    /// Stacks equally-shaped tensors along a new leading axis.
    pub fn stack(parts: &[Tensor<T>]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| shape_err("cannot stack zero tensors"))?;
        let mut data = Vec::with_capacity(first.numel() * parts.len());
        for p in parts {
            if p.shape != first.shape {
                return Err(shape_err(format!(
                    "cannot stack {:?} with {:?}",
                    p.shape, first.shape
                )));
            }
            data.extend_from_slice(&p.data);
        }
        let mut shape = vec![parts.len()];
        shape.extend_from_slice(&first.shape);
        Ok(Tensor { shape, data })
    }

    /// Slice `index` of the leading axis.
    pub fn index0(&self, index: usize) -> Self {
        let inner: usize = self.shape[1..].iter().product();
        Tensor {
            shape: self.shape[1..].to_vec(),
            data: self.data[index * inner..(index + 1) * inner].to_vec(),
        }
    }

    pub fn write_raw<W: Write>(&self, w: &mut W) -> Result<()> {
        if self.shape.len() > u8::MAX as usize {
            return Err(shape_err("too many dimensions for the raw format"));
        }
        w.write_all(TENSOR_MAGIC)?;
        w.write_all(&[T::DTYPE.code(), self.shape.len() as u8])?;
        for &d in &self.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in &self.data {
            v.write_le(w)?;
        }
        Ok(())
    }

    pub fn to_raw_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(6 + 8 * self.ndim() + self.numel() * T::DTYPE.size());
        self.write_raw(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    /// Reads a raw tensor whose stored dtype must match `T`.
    pub fn read_raw<R: Read>(r: &mut R) -> Result<Self> {
        let (dtype, shape) = read_header(r)?;
        if dtype != T::DTYPE {
            return Err(Error::Format(format!(
                "tensor stored as {dtype:?}, expected {:?}",
                T::DTYPE
            )));
        }
        read_payload(r, shape)
    }
}

fn read_header<R: Read>(r: &mut R) -> Result<(DType, Vec<usize>)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != TENSOR_MAGIC {
        return Err(Error::Format(format!("bad tensor magic {magic:?}")));
    }
    let mut head = [0u8; 2];
    r.read_exact(&mut head)?;
    let dtype = DType::from_code(head[0])?;
    let mut shape = Vec::with_capacity(head[1] as usize);
    for _ in 0..head[1] {
        let mut d = [0u8; 8];
        r.read_exact(&mut d)?;
        let d = u64::from_le_bytes(d);
        shape.push(usize::try_from(d).map_err(|_| Error::Format(format!("dimension {d} too large")))?);
    }
    Ok((dtype, shape))
}

fn read_payload<T: Real, R: Read>(r: &mut R, shape: Vec<usize>) -> Result<Tensor<T>> {
    let numel = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format("tensor size overflows".into()))?;
    let mut data = Vec::with_capacity(numel.min(1 << 24));
    for _ in 0..numel {
        data.push(T::read_le(r)?);
    }
    Tensor::new(shape, data)
}

/// A raw tensor of either precision, as read from disk.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    pub fn read_raw<R: Read>(r: &mut R) -> Result<Self> {
        let (dtype, shape) = read_header(r)?;
        Ok(match dtype {
            DType::F32 => AnyTensor::F32(read_payload(r, shape)?),
            DType::F64 => AnyTensor::F64(read_payload(r, shape)?),
        })
    }

    pub fn write_raw<W: Write>(&self, w: &mut W) -> Result<()> {
        match self {
            AnyTensor::F32(t) => t.write_raw(w),
            AnyTensor::F64(t) => t.write_raw(w),
        }
    }

    pub fn to_f32(&self) -> Tensor<f32> {
        match self {
            AnyTensor::F32(t) => t.clone(),
            AnyTensor::F64(t) => t.cast(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.shape(),
            AnyTensor::F64(t) => t.shape(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_mismatched_length() {
        assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn header_layout_is_fixed() {
        let t = Tensor::<f32>::new(vec![2], vec![1.0, -2.0]).unwrap();
        let bytes = t.to_raw_bytes();
        assert_eq!(&bytes[..4], b"SGT1");
        assert_eq!(bytes[4], 0);
        assert_eq!(bytes[5], 1);
        assert_eq!(&bytes[6..14], &2u64.to_le_bytes());
        assert_eq!(&bytes[14..18], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 22);
    }

    #[test]
    fn dtype_mismatch_is_rejected() {
        let t = Tensor::<f64>::zeros(vec![3]);
        let bytes = t.to_raw_bytes();
        assert!(Tensor::<f32>::read_raw(&mut &bytes[..]).is_err());
        assert!(matches!(AnyTensor::read_raw(&mut &bytes[..]).unwrap(), AnyTensor::F64(_)));
    }

    #[test]
    fn truncated_payload_is_an_error() {
        let bytes = Tensor::<f32>::zeros(vec![4]).to_raw_bytes();
        assert!(Tensor::<f32>::read_raw(&mut &bytes[..bytes.len() - 1]).is_err());
    }

    proptest! {
        #[test]
        fn raw_round_trip_is_bit_exact(
            dims in proptest::collection::vec(1usize..5, 0..4),
            seed in any::<u64>(),
        ) {
            let numel: usize = dims.iter().product();
            let data: Vec<f64> = (0..numel)
                .map(|i| f64::from_bits(seed.wrapping_mul(i as u64 + 1).rotate_left(17) >> 2))
                .collect();
            let t = Tensor::<f64>::new(dims.clone(), data).unwrap();
            let bytes = t.to_raw_bytes();
            let back = Tensor::<f64>::read_raw(&mut &bytes[..]).unwrap();
            prop_assert_eq!(back.shape(), t.shape());
            for (a, b) in back.data().iter().zip(t.data()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
            prop_assert_eq!(back.to_raw_bytes(), bytes);
        }
    }
}
