//! Central finite differences for embeddings `ω ↦ f(ω) ∈ R^m`.
//!
//! Step per coordinate is `max(1e-5, 1e-5·|ω_a|)`. Mixed second derivatives use
//! the four corner points of the 9-point cross stencil, pure ones the three
//! points on the axis.

use nalgebra::{DMatrix, DVector};

pub const REL_STEP: f64 = 1e-5;

pub fn step(x: f64) -> f64 {
    REL_STEP.max(REL_STEP * x.abs())
}

/// `m × d` Jacobian, column `a` is `∂_a f`.
pub fn jacobian<F>(f: F, omega: &DVector<f64>) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let d = omega.len();
    let mut cols = Vec::with_capacity(d);
    for a in 0..d {
        let h = step(omega[a]);
        let mut plus = omega.clone();
        let mut minus = omega.clone();
        plus[a] += h;
        minus[a] -= h;
        cols.push((f(&plus) - f(&minus)) / (2.0 * h));
    }
    DMatrix::from_columns(&cols)
}

/// Second derivatives `∂_a ∂_b f`, returned as a symmetric `d × d` table of m-vectors.
pub fn hessian_vec<F>(f: F, omega: &DVector<f64>) -> Vec<Vec<DVector<f64>>>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let d = omega.len();
    let center = f(omega);
    let shifted = |da: (usize, f64), db: Option<(usize, f64)>| {
        let mut p = omega.clone();
        p[da.0] += da.1;
        if let Some((b, hb)) = db {
            p[b] += hb;
        }
        f(&p)
    };
    let mut out = vec![vec![DVector::zeros(center.len()); d]; d];
    for a in 0..d {
        let ha = step(omega[a]);
        let pure = (shifted((a, ha), None) - &center * 2.0 + shifted((a, -ha), None)) / (ha * ha);
        out[a][a] = pure;
        for b in (a + 1)..d {
            let hb = step(omega[b]);
            let mixed =
                (shifted((a, ha), Some((b, hb))) - shifted((a, ha), Some((b, -hb))) - shifted((a, -ha), Some((b, hb)))
                    + shifted((a, -ha), Some((b, -hb))))
                    / (4.0 * ha * hb);
            out[a][b] = mixed.clone();
            out[b][a] = mixed;
        }
    }
    out
}

/// Gradient of a scalar function.
pub fn gradient<F>(f: F, omega: &DVector<f64>) -> DVector<f64>
where
    F: Fn(&DVector<f64>) -> f64,
{
    let j = jacobian(|w| DVector::from_element(1, f(w)), omega);
    j.row(0).transpose()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_derivatives() {
        let f = |w: &DVector<f64>| DVector::from_vec(vec![w[0] * w[0] * w[1], w[1].sin()]);
        let w = DVector::from_vec(vec![0.7, -0.3]);
        let j = jacobian(f, &w);
        assert!((j[(0, 0)] - 2.0 * 0.7 * -0.3).abs() < 1e-9);
        assert!((j[(0, 1)] - 0.49).abs() < 1e-9);
        assert!((j[(1, 1)] - (-0.3f64).cos()).abs() < 1e-9);
        let h = hessian_vec(f, &w);
        assert!((h[0][0][0] - 2.0 * -0.3).abs() < 1e-4);
        assert!((h[0][1][0] - 1.4).abs() < 1e-5);
        assert_eq!(h[0][1], h[1][0]);
        assert!((h[1][1][1] + (-0.3f64).sin()).abs() < 1e-4);
    }
}
