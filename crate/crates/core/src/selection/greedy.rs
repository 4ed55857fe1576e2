use crate::error::{Error, Result};
use crate::kernels::KernelMatrix;

/// Picks `p` distinct columns of the kernel greedily. Work proceeds in
/// rounds: within a round every row is served once, always taking the
/// largest remaining entry among rows not yet served (ties to the lowest row,
/// then column); its column is consumed. A new round starts once every row
/// has been served. Returns dataset indices from the column map.
pub fn select_pool(kernel: &KernelMatrix, p: usize) -> Result<Vec<usize>> {
    let v = &kernel.values;
    let (rows, cols) = v.dim();
    if rows == 0 || cols == 0 {
        return Err(Error::Empty("kernel matrix"));
    }
    if p > cols {
        return Err(Error::invalid(format!("pool of {p} from {cols} columns")));
    }
    let mut col_free = vec![true; cols];
    let mut served = vec![false; rows];
    let mut picks = Vec::with_capacity(p);
    while picks.len() < p {
        if served.iter().all(|&s| s) {
            served.iter_mut().for_each(|s| *s = false);
        }
        let mut best: Option<(usize, usize)> = None;
        let mut best_v = f64::NEG_INFINITY;
        for r in (0..rows).filter(|&r| !served[r]) {
            let row = v.row(r);
            for c in (0..cols).filter(|&c| col_free[c]) {
                if best.is_none() || row[c] > best_v {
                    best = Some((r, c));
                    best_v = row[c];
                }
            }
        }
        let (r, c) = best.expect("free column remains");
        served[r] = true;
        col_free[c] = false;
        picks.push(kernel.col_index()[c]);
    }
    Ok(picks)
}
