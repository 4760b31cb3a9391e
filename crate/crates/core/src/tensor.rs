//! Width-tagged signed integer tensors.
//!
//! Every element of an [`IntTensor`] lies in the signed range of its
//! [`BitWidth`]. Arithmetic that can grow values runs in `i64` and is
//! saturated back to the declared width on write-back.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::cost::{OpCounter, OpKind};
use crate::error::{Error, Result};

/// Number of significant bits of a signed integer, sign bit included.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct BitWidth(u8);

impl BitWidth {
    pub const MIN_BITS: u32 = 2;
    pub const MAX_BITS: u32 = 32;

    pub const W2: BitWidth = BitWidth(2);
    pub const W8: BitWidth = BitWidth(8);
    pub const W16: BitWidth = BitWidth(16);
    pub const W32: BitWidth = BitWidth(32);

    pub fn new(bits: u32) -> Result<Self> {
        if (Self::MIN_BITS..=Self::MAX_BITS).contains(&bits) {
            Ok(BitWidth(bits as u8))
        } else {
            Err(Error::InvalidBitWidth(bits))
        }
    }

    #[inline]
    pub const fn bits(self) -> u32 {
        self.0 as u32
    }

    #[inline]
    pub const fn min_value(self) -> i64 {
        -(1i64 << (self.0 - 1))
    }

    #[inline]
    pub const fn max_value(self) -> i64 {
        (1i64 << (self.0 - 1)) - 1
    }

    #[inline]
    pub const fn contains(self, v: i64) -> bool {
        v >= self.min_value() && v <= self.max_value()
    }

    /// Clamp `v` into range. The result always fits in `i32`.
    #[inline]
    pub fn clamp(self, v: i64) -> i32 {
        v.clamp(self.min_value(), self.max_value()) as i32
    }
}

impl TryFrom<u32> for BitWidth {
    type Error = Error;

    fn try_from(bits: u32) -> Result<Self> {
        BitWidth::new(bits)
    }
}

impl From<BitWidth> for u32 {
    fn from(w: BitWidth) -> u32 {
        w.bits()
    }
}

impl fmt::Display for BitWidth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}b", self.0)
    }
}

/// Row-major signed integer tensor with a declared bit width.
///
/// A tensor may additionally be declared binary (all elements 0 or 1);
/// multiplications against binary tensors are tallied as B-MUL.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct IntTensor {
    shape: Vec<usize>,
    width: BitWidth,
    binary: bool,
    data: Vec<i32>,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl IntTensor {
    pub fn zeros(shape: &[usize], width: BitWidth) -> Self {
        IntTensor {
            shape: shape.to_vec(),
            width,
            binary: false,
            data: vec![0; numel(shape)],
        }
    }

    /// Build from data that must already be within `width`.
    pub fn from_vec(shape: &[usize], width: BitWidth, data: Vec<i32>) -> Result<Self> {
        if data.len() != numel(shape) {
            return Err(Error::DataLength {
                shape: shape.to_vec(),
                len: data.len(),
            });
        }
        if let Some(&bad) = data.iter().find(|&&e| !width.contains(e as i64)) {
            return Err(Error::OutOfRange {
                value: bad as i64,
                bits: width.bits(),
            });
        }
        Ok(IntTensor {
            shape: shape.to_vec(),
            width,
            binary: false,
            data,
        })
    }

    /// Build a 0/1 tensor. Binary tensors carry a 2-bit width.
    pub fn binary(shape: &[usize], data: Vec<i32>) -> Result<Self> {
        if let Some(&bad) = data.iter().find(|&&e| e != 0 && e != 1) {
            return Err(Error::NotBinary(bad));
        }
        let mut t = Self::from_vec(shape, BitWidth::W2, data)?;
        t.binary = true;
        Ok(t)
    }

    /// Saturating write-back of wide values; clamped elements are counted.
    pub fn from_wide(
        shape: &[usize],
        width: BitWidth,
        wide: &[i64],
        counter: &mut OpCounter,
    ) -> Result<Self> {
        if wide.len() != numel(shape) {
            return Err(Error::DataLength {
                shape: shape.to_vec(),
                len: wide.len(),
            });
        }
        let mut clamped = 0u64;
        let data = wide
            .iter()
            .map(|&v| {
                if !width.contains(v) {
                    clamped += 1;
                }
                width.clamp(v)
            })
            .collect();
        counter.record_saturations(clamped);
        Ok(IntTensor {
            shape: shape.to_vec(),
            width,
            binary: false,
            data,
        })
    }

    /// Raw constructor for kernels that have already enforced the range.
    pub(crate) fn from_parts(shape: Vec<usize>, width: BitWidth, binary: bool, data: Vec<i32>) -> Self {
        debug_assert_eq!(data.len(), numel(&shape));
        debug_assert!(data.iter().all(|&e| width.contains(e as i64)));
        debug_assert!(!binary || data.iter().all(|&e| e == 0 || e == 1));
        IntTensor {
            shape,
            width,
            binary,
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn width(&self) -> BitWidth {
        self.width
    }

    pub fn is_binary(&self) -> bool {
        self.binary
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[i32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<i32> {
        self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [i32] {
        &mut self.data
    }

    pub fn get(&self, index: &[usize]) -> Option<i32> {
        if index.len() != self.shape.len() {
            return None;
        }
        let mut flat = 0;
        for (&i, &d) in index.iter().zip(self.shape.iter()) {
            if i >= d {
                return None;
            }
            flat = flat * d + i;
        }
        Some(self.data[flat])
    }

    /// Same data under a new shape with equal element count.
    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if numel(shape) != self.data.len() {
            return Err(Error::shape(&self.shape, shape, "reshape"));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|e| *e = 0);
    }

    /// Element-wise `floor(e / 2^k)`; width is unchanged.
    pub fn shift_right_arith(&self, k: u32) -> IntTensor {
        assert!(k < 32, "shift amount {k} out of range");
        IntTensor {
            shape: self.shape.clone(),
            width: self.width,
            binary: self.binary && k == 0,
            data: self.data.iter().map(|&e| e >> k).collect(),
        }
    }

    /// Element-wise clamp into `width`; the result carries `width`.
    pub fn saturate(&self, width: BitWidth) -> IntTensor {
        IntTensor {
            shape: self.shape.clone(),
            width,
            binary: false,
            data: self.data.iter().map(|&e| width.clamp(e as i64)).collect(),
        }
    }

    pub fn max_abs(&self) -> i64 {
        self.data.iter().map(|&e| (e as i64).abs()).max().unwrap_or(0)
    }
}

/// Integer matrix product `a × b` with an `i64` accumulator.
///
/// `a` is `[M, K]`; `b` is `[K]` (giving `[M]`) or `[K, N]` (giving `[M, N]`).
/// The result is saturated to 32 bits. Each scalar product is one MUL (or
/// B-MUL if either operand is binary) plus one ADD.
pub fn matmul_counted(a: &IntTensor, b: &IntTensor, counter: &mut OpCounter) -> Result<IntTensor> {
    let (m, k) = match a.shape() {
        [m, k] => (*m, *k),
        _ => return Err(Error::shape(a.shape(), b.shape(), "matmul lhs must be rank 2")),
    };
    let (kb, n, out_shape) = match b.shape() {
        [kb] => (*kb, 1, vec![m]),
        [kb, n] => (*kb, *n, vec![m, *n]),
        _ => return Err(Error::shape(a.shape(), b.shape(), "matmul rhs must be rank 1 or 2")),
    };
    if kb != k {
        return Err(Error::shape(a.shape(), b.shape(), "matmul inner dimensions"));
    }

    let mut wide = vec![0i64; m * n];
    let ad = a.data();
    let bd = b.data();
    for i in 0..m {
        let row = &ad[i * k..(i + 1) * k];
        let out = &mut wide[i * n..(i + 1) * n];
        for (p, &av) in row.iter().enumerate() {
            if av == 0 {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            for (o, &bv) in out.iter_mut().zip(brow.iter()) {
                *o += av as i64 * bv as i64;
            }
        }
    }

    let products = (m * n * k) as u64;
    let kind = if a.is_binary() || b.is_binary() {
        OpKind::BMul
    } else {
        OpKind::Mul
    };
    counter.record(kind, products);
    counter.record(OpKind::Add, products);
    IntTensor::from_wide(&out_shape, BitWidth::W32, &wide, counter)
}
