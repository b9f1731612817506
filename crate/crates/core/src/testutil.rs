//! Random instances and finite-difference helpers for unit tests.

use rand::Rng;

use crate::lattice::{softmax_rows, DistributionLattice, LogitLattice};
use crate::matrix::Matrix;

pub fn random_logits<R: Rng>(rng: &mut R, frames: usize, width: usize, scale: f64) -> LogitLattice {
    let data = (0..frames * width).map(|_| rng.random_range(-scale..scale)).collect();
    LogitLattice::new(Matrix::from_vec(frames, width, data)).unwrap()
}

pub fn random_dist<R: Rng>(rng: &mut R, frames: usize, width: usize) -> DistributionLattice {
    softmax_rows(&random_logits(rng, frames, width, 2.0))
}

/// Central finite differences of `f` with respect to every logit.
pub fn fd_logit_grad(logits: &LogitLattice, h: f64, mut f: impl FnMut(&LogitLattice) -> f64) -> Matrix {
    let base = logits.values().clone();
    let mut out = Matrix::zeros(base.rows(), base.cols());
    for t in 0..base.rows() {
        for k in 0..base.cols() {
            let mut plus = base.clone();
            plus.add_at(t, k, h);
            let mut minus = base.clone();
            minus.add_at(t, k, -h);
            let fp = f(&LogitLattice::new(plus).unwrap());
            let fm = f(&LogitLattice::new(minus).unwrap());
            out.set(t, k, (fp - fm) / (2.0 * h));
        }
    }
    out
}

pub fn assert_close_rel(analytic: &Matrix, numeric: &Matrix, rel_tol: f64, abs_floor: f64) {
    assert!(analytic.same_shape(numeric));
    for (i, (a, n)) in analytic.as_slice().iter().zip(numeric.as_slice()).enumerate() {
        let diff = (a - n).abs();
        let rel = diff / a.abs().max(n.abs()).max(1e-12);
        assert!(rel <= rel_tol || diff <= abs_floor, "entry {i}: analytic {a} vs numeric {n}");
    }
}
