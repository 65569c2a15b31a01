use crate::error::{Error, Result};

/// Evenly spaced canonical view indices `round(i·n/j)`, `i = 0..j`, ascending and distinct.
pub fn subsample_indices(n: usize, j: usize) -> Result<Vec<usize>> {
    if j == 0 || j > n {
        return Err(Error::Config(format!("cannot select {j} of {n} views")));
    }
    let mut idx: Vec<usize> = (0..j).map(|i| ((i * n) as f64 / j as f64).round() as usize).collect();
    idx.dedup();
    Ok(idx)
}

/// Selects `j` of the `rows.len() / dim` view rows.
pub fn subsample_views(rows: &[f32], dim: usize, j: usize) -> Result<Vec<f32>> {
    let n = rows.len() / dim;
    let idx = subsample_indices(n, j)?;
    Ok(idx.iter().flat_map(|&i| rows[i * dim..(i + 1) * dim].iter().copied()).collect())
}
