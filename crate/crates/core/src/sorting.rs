//! Sorting as a parameter-free network layer.
//!
//! Two operators, both ascending:
//!
//! * **hard sort**: a stable permutation. Its Jacobian is the permutation
//!   matrix itself (exact wherever the entries are distinct), so the backward
//!   pass scatters the incoming gradient back to the source positions.
//! * **soft sort**: the Euclidean projection of a scaled anchor sequence onto
//!   the permutahedron of the input, computed in `O(T log T)` as one sort
//!   plus one pool-adjacent-violators (PAV) isotonic regression. The usual
//!   formulation is descending; running it on `−x` and negating back gives
//!   the ascending form used here:
//!
//!   ```text
//!   u = sort_asc(x),   a_j = −(T − j)/ε  (j = 0..T−1)
//!   soft_sort(x) = a − iso_inc(a − u)
//!   ```
//!
//!   Within each PAV block the isotonic fit is the block mean, so the
//!   Jacobian with respect to `u` is block-diagonal with constant averaging
//!   blocks and the backward pass is `O(T)`. When every gap of `u` is at most
//!   `1/ε` no block pools and the output equals the hard sort exactly; as
//!   `ε → 0⁺` this holds for any input.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum SortMode {
    #[default]
    Hard,
    Soft {
        epsilon: f64,
    },
}

impl SortMode {
    pub const DEFAULT_EPSILON: f64 = 0.1;

    pub fn soft(epsilon: f64) -> Result<Self> {
        check_epsilon(epsilon)?;
        Ok(SortMode::Soft { epsilon })
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            SortMode::Hard => Ok(()),
            SortMode::Soft { epsilon } => check_epsilon(epsilon),
        }
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && epsilon.is_finite() {
        Ok(())
    } else {
        Err(Error::Range {
            what: "soft sort epsilon",
            value: epsilon,
        })
    }
}

/// Stable ascending sort. `perm[j]` is the input position that lands at
/// output position `j`; equal values keep their input order.
pub fn hard_sort<S: Scalar>(x: &[S]) -> (Vec<S>, Vec<usize>) {
    let mut perm: Vec<usize> = (0..x.len()).collect();
    perm.sort_by(|&i, &j| x[i].partial_cmp(&x[j]).unwrap_or(Ordering::Equal));
    let sorted = perm.iter().map(|&i| x[i]).collect();
    (sorted, perm)
}

/// Routes `grad_out[j]` back to input position `perm[j]`.
pub fn hard_sort_backward<S: Scalar>(grad_out: &[S], perm: &[usize]) -> Result<Vec<S>> {
    if grad_out.len() != perm.len() {
        return Err(Error::shape("hard_sort_backward", (grad_out.len(), 1), (perm.len(), 1)));
    }
    let mut grad_in = vec![S::zero(); perm.len()];
    for (&g, &src) in grad_out.iter().zip(perm) {
        grad_in[src] = g;
    }
    Ok(grad_in)
}

/// A maximal run `start..end` pooled to a common value by PAV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PavBlock<S> {
    pub start: usize,
    pub end: usize,
    pub mean: S,
}

/// Block partition of `0..len` produced by [`isotonic_increasing`]. Blocks
/// are contiguous, cover the range, and have strictly increasing means.
#[derive(Debug, Clone, PartialEq)]
pub struct PavBlocks<S> {
    blocks: Vec<PavBlock<S>>,
    len: usize,
}

impl<S: Scalar> PavBlocks<S> {
    pub fn blocks(&self) -> &[PavBlock<S>] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn singletons(len: usize, values: &[S]) -> Self {
        Self {
            blocks: (0..len)
                .map(|i| PavBlock {
                    start: i,
                    end: i + 1,
                    mean: values[i],
                })
                .collect(),
            len,
        }
    }

    /// Multiplies `v` by the Jacobian of the isotonic fit (block averaging,
    /// which is symmetric).
    pub fn average(&self, v: &[S]) -> Result<Vec<S>> {
        if v.len() != self.len {
            return Err(Error::State(format!(
                "PAV blocks cover {} entries but the gradient has {}",
                self.len,
                v.len()
            )));
        }
        let mut out = vec![S::zero(); self.len];
        for b in &self.blocks {
            let slice = &v[b.start..b.end];
            let mean = slice.iter().copied().sum::<S>() / S::of_usize(slice.len());
            out[b.start..b.end].iter_mut().for_each(|o| *o = mean);
        }
        Ok(out)
    }
}

/// Least-squares nondecreasing fit of `y` (unit weights) by pool adjacent
/// violators. Returns the fit and its block structure.
pub fn isotonic_increasing<S: Scalar>(y: &[S]) -> (Vec<S>, PavBlocks<S>) {
    // Stack of (start, end, sum); a block's mean is sum / (end - start).
    let mut stack: Vec<(usize, usize, S)> = Vec::with_capacity(y.len());
    for (i, &value) in y.iter().enumerate() {
        let mut block = (i, i + 1, value);
        while let Some(&(start, end, sum)) = stack.last() {
            let prev_mean = sum / S::of_usize(end - start);
            let cur_mean = block.2 / S::of_usize(block.1 - block.0);
            if prev_mean < cur_mean {
                break;
            }
            stack.pop();
            block = (start, block.1, sum + block.2);
        }
        stack.push(block);
    }
    let mut fit = Vec::with_capacity(y.len());
    let blocks: Vec<PavBlock<S>> = stack
        .into_iter()
        .map(|(start, end, sum)| {
            let mean = sum / S::of_usize(end - start);
            fit.extend(std::iter::repeat_n(mean, end - start));
            PavBlock { start, end, mean }
        })
        .collect();
    (fit, PavBlocks { blocks, len: y.len() })
}

/// What the backward pass of [`soft_sort`] needs from the forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftSortTape<S> {
    pub perm: Vec<usize>,
    pub blocks: PavBlocks<S>,
}

/// Ascending soft sort with regularisation strength `epsilon > 0`.
pub fn soft_sort<S: Scalar>(x: &[S], epsilon: f64) -> Result<(Vec<S>, SoftSortTape<S>)> {
    check_epsilon(epsilon)?;
    let (sorted, perm) = hard_sort(x);
    let t = x.len();
    let anchors: Vec<S> = (0..t).map(|j| S::of(-((t - j) as f64) / epsilon)).collect();
    let residual: Vec<S> = anchors.iter().zip(&sorted).map(|(&a, &u)| a - u).collect();
    let (fit, blocks) = isotonic_increasing(&residual);
    let out = anchors.iter().zip(&fit).map(|(&a, &v)| a - v).collect();
    Ok((out, SoftSortTape { perm, blocks }))
}

/// Vector-Jacobian product of [`soft_sort`]: average `grad_out` within each
/// PAV block, then scatter through the sorting permutation.
pub fn soft_sort_backward<S: Scalar>(grad_out: &[S], tape: &SoftSortTape<S>) -> Result<Vec<S>> {
    if tape.perm.len() != tape.blocks.len() {
        return Err(Error::State("soft sort tape is inconsistent".into()));
    }
    let averaged = tape.blocks.average(grad_out)?;
    hard_sort_backward(&averaged, &tape.perm)
}

/// Per-row record of a sort, kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub enum SortTape<S> {
    Hard(Vec<usize>),
    Soft(SoftSortTape<S>),
}

/// Sorts every row of `x` (one sample per row, quantile levels along the
/// columns).
pub fn sort_rows<S: Scalar>(x: &Matrix<S>, mode: SortMode) -> Result<(Matrix<S>, Vec<SortTape<S>>)> {
    let mut out = Matrix::zeros(x.rows(), x.cols());
    let mut tapes = Vec::with_capacity(x.rows());
    for i in 0..x.rows() {
        let (row, tape) = match mode {
            SortMode::Hard => {
                let (s, p) = hard_sort(x.row(i));
                (s, SortTape::Hard(p))
            }
            SortMode::Soft { epsilon } => {
                let (s, t) = soft_sort(x.row(i), epsilon)?;
                (s, SortTape::Soft(t))
            }
        };
        out.row_mut(i).copy_from_slice(&row);
        tapes.push(tape);
    }
    Ok((out, tapes))
}

/// Row-wise hard sort for evaluation, without tapes.
pub fn sort_rows_hard<S: Scalar>(x: &Matrix<S>) -> Matrix<S> {
    let mut out = x.clone();
    for i in 0..out.rows() {
        out.row_mut(i)
            .sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    }
    out
}

pub fn sort_rows_backward<S: Scalar>(grad_out: &Matrix<S>, tapes: &[SortTape<S>]) -> Result<Matrix<S>> {
    if grad_out.rows() != tapes.len() {
        return Err(Error::State(format!(
            "{} sort tapes for a gradient with {} rows",
            tapes.len(),
            grad_out.rows()
        )));
    }
    let mut grad_in = Matrix::zeros(grad_out.rows(), grad_out.cols());
    for (i, tape) in tapes.iter().enumerate() {
        let g = match tape {
            SortTape::Hard(perm) => hard_sort_backward(grad_out.row(i), perm)?,
            SortTape::Soft(t) => soft_sort_backward(grad_out.row(i), t)?,
        };
        grad_in.row_mut(i).copy_from_slice(&g);
    }
    Ok(grad_in)
}

pub fn is_nondecreasing<S: Scalar>(row: &[S]) -> bool {
    row.windows(2).all(|w| w[0] <= w[1])
}
