use super::matrix::Matrix;
use crate::error::{ForgeError, Result};
use crate::scalar::Scalar;

/// Average pooling over windows of `k` consecutive rows. The last window may
/// be partial.
pub fn pool<T: Scalar>(features: &Matrix<T>, k: usize) -> Result<Matrix<T>> {
    if k == 0 {
        return Err(ForgeError::config("vq.pool_window", "must be >= 1"));
    }
    if features.rows() == 0 {
        return Err(ForgeError::invalid("cannot pool an empty sequence"));
    }
    let (t, d) = (features.rows(), features.cols());
    let out_rows = t.div_ceil(k);
    let mut out = Matrix::zeros(out_rows, d);
    for j in 0..out_rows {
        let (start, end) = (j * k, ((j + 1) * k).min(t));
        let inv = T::one() / T::from_usize(end - start).unwrap();
        let o = out.row_mut(j);
        for i in start..end {
            for (acc, &x) in o.iter_mut().zip(features.row(i)) {
                *acc += x;
            }
        }
        o.iter_mut().for_each(|x| *x *= inv);
    }
    Ok(out)
}

/// `mask[i][j]` is true iff position `i` may attend to `j`, i.e. `j` lies in
/// the same or an earlier block.
pub fn block_causal_mask(seq_len: usize, block: usize) -> Result<Vec<Vec<bool>>> {
    if block == 0 {
        return Err(ForgeError::config("block", "must be >= 1"));
    }
    Ok((0..seq_len)
        .map(|i| (0..seq_len).map(|j| j / block <= i / block).collect())
        .collect())
}
