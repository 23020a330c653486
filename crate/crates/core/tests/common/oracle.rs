//! Reference Glasso solver for tiny problems. Maximizes `logdet W` over the
//! box `|W - T|_inf <= lambda` (the dual problem) by exact coordinate ascent
//! and returns `Theta = W^-1`. Slow but independent of the library solver.
//!
//! The diagonal sits at its upper bound `T_ii + lambda` since `det W` is
//! increasing in each diagonal entry. For an off-diagonal pair `W_ij = W_ji = w`,
//! `det W` is a concave quadratic in `w`, so each step is a clamped vertex.

use nalgebra::DMatrix;

fn det_with(w: &mut DMatrix<f64>, i: usize, j: usize, v: f64) -> f64 {
    w[(i, j)] = v;
    w[(j, i)] = v;
    w.determinant()
}

pub fn glasso_oracle(t: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    let d = t.nrows();
    assert!(d <= 3, "oracle is meant for d <= 3");
    let mut w = t + DMatrix::identity(d, d) * lambda;
    assert!(w.determinant() > 0.0, "T + lambda I must be positive definite");
    for _ in 0..1_000_000 {
        let mut moved: f64 = 0.0;
        for j in 0..d {
            for i in 0..j {
                let cur = w[(i, j)];
                let d0 = det_with(&mut w, i, j, 0.0);
                let dp = det_with(&mut w, i, j, 1.0);
                let dm = det_with(&mut w, i, j, -1.0);
                let gamma = 0.5 * (dp + dm) - d0;
                let beta = 0.5 * (dp - dm);
                let (lo, hi) = (t[(i, j)] - lambda, t[(i, j)] + lambda);
                let next = if gamma < 0.0 {
                    (-beta / (2.0 * gamma)).clamp(lo, hi)
                } else if beta >= 0.0 {
                    hi
                } else {
                    lo
                };
                det_with(&mut w, i, j, next);
                moved = moved.max((next - cur).abs());
            }
        }
        if moved < 1e-15 {
            break;
        }
    }
    w.try_inverse().unwrap()
}
