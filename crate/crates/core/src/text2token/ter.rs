use crate::corpus::TokenId;
use crate::error::{ForgeError, Result};

/// Levenshtein distance over token ids (unit costs).
pub fn edit_distance(a: &[TokenId], b: &[TokenId]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, &x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Token error rate: `edit_distance(ref, hyp) / |ref|`. May exceed 1.
pub fn token_error_rate(reference: &[TokenId], hypothesis: &[TokenId]) -> Result<f64> {
    if reference.is_empty() {
        return Err(ForgeError::invalid("token error rate needs a non-empty reference"));
    }
    Ok(edit_distance(reference, hypothesis) as f64 / reference.len() as f64)
}
