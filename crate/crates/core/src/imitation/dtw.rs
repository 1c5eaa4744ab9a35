use crate::error::{ensure_dim, KirasError, Result};

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Classic dynamic time warping with Euclidean frame cost and unit steps.
pub fn dtw_distance<A: AsRef<[f64]>, B: AsRef<[f64]>>(a: &[A], b: &[B]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(KirasError::InvalidArgument("DTW needs non-empty sequences".into()));
    }
    let dim = a[0].as_ref().len();
    for f in a {
        ensure_dim("DTW frame", dim, f.as_ref().len())?;
    }
    for f in b {
        ensure_dim("DTW frame", dim, f.as_ref().len())?;
    }
    let m = b.len();
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut cur = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for fa in a {
        cur[0] = f64::INFINITY;
        for j in 1..=m {
            let best = prev[j - 1].min(prev[j]).min(cur[j - 1]);
            cur[j] = euclid(fa.as_ref(), b[j - 1].as_ref()) + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m])
}
