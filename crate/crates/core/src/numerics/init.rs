use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

/// Random `(rows, cols)` matrix with orthonormal rows or columns (whichever
/// is shorter), scaled by `gain`.
pub fn orthogonal<R: Rng + ?Sized>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Array2<f64> {
    // Orthonormalise the columns of a tall matrix, then transpose if needed.
    let (tall, short) = if rows >= cols { (rows, cols) } else { (cols, rows) };
    let mut a = Array2::<f64>::from_shape_simple_fn((tall, short), || rng.sample(StandardNormal));
    for j in 0..short {
        for k in 0..j {
            let proj = a.column(j).dot(&a.column(k));
            let col_k = a.column(k).to_owned();
            a.column_mut(j).scaled_add(-proj, &col_k);
        }
        let norm = a.column(j).dot(&a.column(j)).sqrt();
        if norm > 1e-12 {
            a.column_mut(j).mapv_inplace(|x| x / norm);
        }
    }
    let q = if rows >= cols { a } else { a.reversed_axes().as_standard_layout().to_owned() };
    q * gain
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn columns_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(r, c) in &[(8, 3), (3, 8), (5, 5)] {
            let q = orthogonal(r, c, 1.0, &mut rng);
            assert_eq!(q.dim(), (r, c));
            let gram = if r >= c { q.t().dot(&q) } else { q.dot(&q.t()) };
            for i in 0..gram.nrows() {
                for j in 0..gram.ncols() {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((gram[[i, j]] - want).abs() < 1e-10);
                }
            }
        }
    }
}
