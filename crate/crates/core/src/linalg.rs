//! Small dense complex-matrix helpers for the scheme oracle.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::pauli::column_action;

pub type Mat = DMatrix<Complex64>;

pub fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

pub fn identity(dim: usize) -> Mat {
    Mat::identity(dim, dim)
}

pub fn real_trace(m: &Mat) -> f64 {
    m.trace().re
}

pub fn kron(a: &Mat, b: &Mat) -> Mat {
    a.kronecker(b)
}

/// Largest entrywise modulus of `a - b`.
pub fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
    (a - b).iter().fold(0.0f64, |m, v| m.max(v.norm()))
}

/// `|v><v|`
pub fn projector(v: &nalgebra::DVector<Complex64>) -> Mat {
    v * v.adjoint()
}

/// `|i><j|` in dimension `dim`.
pub fn unit(dim: usize, i: usize, j: usize) -> Mat {
    let mut m = Mat::zeros(dim, dim);
    m[(i, j)] = c(1.0);
    m
}

/// Smallest eigenvalue of a Hermitian matrix (the Hermitian part is used).
pub fn min_eigenvalue(m: &Mat) -> f64 {
    let h = (m + m.adjoint()) * c(0.5);
    h.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
}

pub fn max_eigenvalue(m: &Mat) -> f64 {
    let h = (m + m.adjoint()) * c(0.5);
    h.symmetric_eigenvalues().iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// `Tr(P_b rho)` for a Pauli given by masks, acting on the last `log2(dim_s)`
/// qubits of a matrix of dimension `dim_a * dim_s` (partial over nothing: the
/// ancilla is traced together with the system).
pub fn pauli_expectation(x: u64, z: u64, rho: &Mat) -> Complex64 {
    // Tr(P rho) = sum_k <k|P rho|k> = sum_k sum_j P_{k j} rho_{j k}
    let dim = rho.nrows();
    let mut acc = Complex64::new(0.0, 0.0);
    for j in 0..dim {
        let (row, phase) = column_action(x, z, j);
        acc += phase * rho[(j, row)];
    }
    acc
}

/// `(I_A ⊗ P) rho (I_A ⊗ P)` where the system is the low `dim_s` block index.
pub fn conjugate_by_pauli(x: u64, z: u64, dim_s: usize, rho: &Mat) -> Mat {
    let dim = rho.nrows();
    let mut out = Mat::zeros(dim, dim);
    // P|k> = ph_k |k'>, so (P rho P^dag)_{k' l'} = ph_k conj(ph_l) rho_{k l}
    let cols: Vec<(usize, Complex64)> = (0..dim)
        .map(|k| {
            let (a, s) = (k / dim_s, k % dim_s);
            let (row, ph) = column_action(x, z, s);
            (a * dim_s + row, ph)
        })
        .collect();
    for k in 0..dim {
        let (kk, pk) = cols[k];
        for l in 0..dim {
            let (ll, pl) = cols[l];
            out[(kk, ll)] = pk * pl.conj() * rho[(k, l)];
        }
    }
    out
}

/// Columns of a Haar-random `rows x cols` isometry (`rows >= cols`).
pub fn random_isometry<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Mat {
    let g = Mat::from_fn(rows, cols, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(re, im)
    });
    let qr = g.qr();
    let (q, r) = (qr.q(), qr.r());
    // fix column phases so the distribution is Haar
    let mut q = q.columns(0, cols).into_owned();
    for j in 0..cols {
        let d = r[(j, j)];
        if d.norm() > 0.0 {
            let ph = d / d.norm();
            for i in 0..rows {
                q[(i, j)] *= ph;
            }
        }
    }
    q
}

pub fn random_unitary<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Mat {
    random_isometry(dim, dim, rng)
}

/// Random density matrix of the given rank (rank 1 gives a Haar pure state).
pub fn random_density<R: Rng + ?Sized>(dim: usize, rank: usize, rng: &mut R) -> Mat {
    let g = Mat::from_fn(dim, rank.max(1), |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(re, im)
    });
    let rho = &g * g.adjoint();
    let t = real_trace(&rho);
    rho / c(t)
}
