//! Fixed quadrature rules used by the circle oracles and the risk harness.

use nalgebra::{DMatrix, SymmetricEigen};

/// Nodes of the periodic trapezoid rule on `[0, 2π)`; each has weight `2π/k`.
pub fn periodic_nodes(k: usize) -> impl Iterator<Item = f64> {
    let h = std::f64::consts::TAU / k as f64;
    (0..k).map(move |i| i as f64 * h)
}

/// Composite trapezoid rule on `[lo, hi]` with `k ≥ 2` nodes.
pub fn trapezoid(lo: f64, hi: f64, k: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(k >= 2);
    let h = (hi - lo) / (k - 1) as f64;
    let nodes = (0..k).map(|i| lo + i as f64 * h).collect();
    let weights = (0..k).map(|i| if i == 0 || i == k - 1 { 0.5 * h } else { h }).collect();
    (nodes, weights)
}

/// Gauss–Hermite rule for the standard normal weight `e^{−x²/2}/√(2π)`
/// (Golub–Welsch on the probabilists' Hermite recurrence). Weights sum to 1.
#[derive(Clone, Debug)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    pub fn new(k: usize) -> Self {
        assert!(k >= 1);
        let jacobi = DMatrix::from_fn(k, k, |i, j| {
            if i + 1 == j || j + 1 == i {
                (i.max(j) as f64).sqrt()
            } else {
                0.0
            }
        });
        let eig = SymmetricEigen::new(jacobi);
        let mut pairs: Vec<(f64, f64)> = (0..k)
            .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        Self {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1 / total).collect(),
        }
    }

    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(x, w)| w * f(*x)).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hermite_moments() {
        let gh = GaussHermite::new(20);
        assert!((gh.expect(|_| 1.0) - 1.0).abs() < 1e-14);
        assert!(gh.expect(|x| x).abs() < 1e-13);
        assert!((gh.expect(|x| x * x) - 1.0).abs() < 1e-13);
        assert!((gh.expect(|x| x.powi(4)) - 3.0).abs() < 1e-12);
        // E[cos x] = e^{-1/2}
        assert!((gh.expect(f64::cos) - (-0.5f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn trapezoid_integrates_linear_exactly() {
        let (x, w) = trapezoid(-1.0, 3.0, 11);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * (2.0 * x + 1.0)).sum();
        assert!((s - 12.0).abs() < 1e-13);
    }
}
