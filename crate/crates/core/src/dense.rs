//! Fully-connected non-local block `X_aug = λ h(A(X) X W) + X`.
//!
//! This is the quadratic-cost reference the latent layer is checked and timed
//! against. [`dense_forward`] materializes `A`; [`dense_forward_streamed`]
//! forms it one row block at a time so that benchmarks can go past the
//! materialization cap with the same operation count.

use crate::affinity::{dense_affinity, guarded_degree, DenseVariant};
use crate::error::{Error, Result};
use crate::scalar::{sum, Scalar};
use crate::tensor::{Activation, Matrix};

/// Largest `N` for which the affinity is materialized.
pub const DENSE_CAP: usize = 8192;

/// Rows per block in [`dense_forward_streamed`].
pub const STREAM_BLOCK: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct DenseNonLocalParams<T> {
    /// `c x c` message map.
    pub w_msg: Matrix<T>,
    pub variant: DenseVariant,
    pub activation: Activation,
    pub lambda: T,
}

impl<T: Scalar> DenseNonLocalParams<T> {
    pub fn validate(&self, channels: usize) -> Result<()> {
        if self.w_msg.shape() != (channels, channels) {
            return Err(Error::Shape {
                op: "dense w_msg",
                lhs: self.w_msg.shape(),
                rhs: (channels, channels),
            });
        }
        if !self.w_msg.is_finite() || !self.lambda.is_finite() {
            return Err(Error::NonFinite("dense parameters".into()));
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.w_msg.len() + 1
    }
}

/// Intermediates of [`dense_forward_trace`].
#[derive(Clone, Debug)]
pub struct DenseTrace<T> {
    /// `A(X)`, `N x N`.
    pub affinity: Matrix<T>,
    /// `X W`.
    pub messages: Matrix<T>,
    /// `A X W`.
    pub pre: Matrix<T>,
    /// `X̃ = h(A X W)`.
    pub context: Matrix<T>,
    pub output: Matrix<T>,
}

pub fn dense_forward_trace<T: Scalar>(
    x: &Matrix<T>,
    p: &DenseNonLocalParams<T>,
    cap: usize,
) -> Result<DenseTrace<T>> {
    p.validate(x.cols())?;
    if x.rows() > cap {
        return Err(Error::TooLarge {
            what: "dense non-local forward",
            n: x.rows(),
            cap,
        });
    }
    let affinity = dense_affinity(x, p.variant)?.matrix;
    let messages = x.matmul(&p.w_msg)?;
    let pre = affinity.matmul(&messages)?;
    let context = pre.activate(p.activation);
    let mut output = x.clone();
    output.add_scaled(&context, p.lambda)?;
    Ok(DenseTrace {
        affinity,
        messages,
        pre,
        context,
        output,
    })
}

/// Materialized dense forward, refusing `N > DENSE_CAP`.
pub fn dense_forward<T: Scalar>(x: &Matrix<T>, p: &DenseNonLocalParams<T>) -> Result<Matrix<T>> {
    Ok(dense_forward_trace(x, p, DENSE_CAP)?.output)
}

/// Same result as [`dense_forward`] with `O(block · N)` extra memory.
pub fn dense_forward_streamed<T: Scalar>(
    x: &Matrix<T>,
    p: &DenseNonLocalParams<T>,
    block: usize,
) -> Result<Matrix<T>> {
    p.validate(x.cols())?;
    let block = block.max(1);
    let n = x.rows();
    let messages = x.matmul(&p.w_msg)?;
    let mut output = x.clone();
    let mut start = 0;
    while start < n {
        let end = (start + block).min(n);
        let rows = x.row_block(start, end);
        let mut a = rows.matmul_nt(x)?;
        if p.variant == DenseVariant::Lap {
            for i in 0..a.rows() {
                let r = a.row_mut(i);
                let deg = guarded_degree(sum(r.iter().copied()));
                r.iter_mut().for_each(|v| *v /= deg);
            }
        }
        let ctx = a.matmul(&messages)?;
        for i in 0..ctx.rows() {
            let out = output.row_mut(start + i);
            for (o, &v) in out.iter_mut().zip(ctx.row(i)) {
                *o += p.lambda * p.activation.apply(v);
            }
        }
        start = end;
    }
    Ok(output)
}

/// Operation count of the dense forward, two per multiply-add:
/// `2N²c (X Xᵀ) + 2Nc² (X W) + 2N²c (A · XW)`, plus `N²` divisions for `A_lap`.
pub fn dense_flops(n: usize, c: usize, variant: DenseVariant) -> Result<u64> {
    if n == 0 || c == 0 {
        return Err(Error::Config("dense_flops: dimensions must be positive".into()));
    }
    let (n, c) = (n as u64, c as u64);
    let nn = n.checked_mul(n).ok_or(Error::Overflow)?;
    let gram = nn.checked_mul(2 * c).ok_or(Error::Overflow)?;
    let msg = n
        .checked_mul(c)
        .and_then(|v| v.checked_mul(2 * c))
        .ok_or(Error::Overflow)?;
    let norm = if variant == DenseVariant::Lap { nn } else { 0 };
    [gram, msg, gram, norm]
        .iter()
        .try_fold(0u64, |acc, &t| acc.checked_add(t))
        .ok_or(Error::Overflow)
}
