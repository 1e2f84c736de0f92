//! The n-qubit Pauli group modulo phase, stored as a pair of bit masks.
//!
//! Qubit 1 (the leftmost letter) occupies the most significant position
//! everywhere: in the masks, in the canonical index and in the computational
//! basis index used by [`PauliString::to_matrix`]. The canonical index
//! interleaves the masks as `a_{x,1} a_{z,1} ... a_{x,n} a_{z,n}`, so qubit `k`
//! (counted from the right, starting at 0) owns index bits `2k+1` (X) and `2k` (Z).

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Largest qubit count a [`PauliString`] can hold (the canonical index is a `u64`).
pub const MAX_PAULI_QUBITS: usize = 32;

/// Largest qubit count [`PauliString::to_matrix`] will render.
pub const MAX_MATRIX_QUBITS: usize = 6;

const Z_LANES: u64 = 0x5555_5555_5555_5555;
const X_LANES: u64 = 0xAAAA_AAAA_AAAA_AAAA;

/// Symplectic product of two canonical indices: 1 iff the Paulis anticommute.
#[inline]
pub fn symplectic_index(a: usize, b: usize) -> u32 {
    let b = b as u64;
    let swapped = ((b & Z_LANES) << 1) | ((b & X_LANES) >> 1);
    ((a as u64) & swapped).count_ones() & 1
}

/// `(-1)^{<a,b>}` as a float.
#[inline]
pub fn commutation_sign(a: usize, b: usize) -> f64 {
    if symplectic_index(a, b) == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Number of non-identity tensor factors of a canonical index.
#[inline]
pub fn weight_index(a: usize) -> u32 {
    let a = a as u64;
    ((a | (a >> 1)) & Z_LANES).count_ones()
}

/// Splits a canonical index into `(x_mask, z_mask)`.
pub fn split_index(index: usize) -> (u64, u64) {
    let index = index as u64;
    let (mut x, mut z) = (0u64, 0u64);
    for k in 0..MAX_PAULI_QUBITS {
        z |= ((index >> (2 * k)) & 1) << k;
        x |= ((index >> (2 * k + 1)) & 1) << k;
    }
    (x, z)
}

fn join_masks(x: u64, z: u64) -> usize {
    let mut index = 0u64;
    for k in 0..MAX_PAULI_QUBITS {
        index |= ((z >> k) & 1) << (2 * k);
        index |= ((x >> k) & 1) << (2 * k + 1);
    }
    index as usize
}

/// A Pauli operator on `n` qubits, modulo phase.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PauliString {
    n: usize,
    x_bits: u64,
    z_bits: u64,
}

impl PauliString {
    pub fn identity(n: usize) -> Result<Self> {
        Self::from_masks(n, 0, 0)
    }

    pub fn from_masks(n: usize, x_bits: u64, z_bits: u64) -> Result<Self> {
        if n > MAX_PAULI_QUBITS {
            return Err(Error::TooManyQubits {
                what: "Pauli string",
                n,
                cap: MAX_PAULI_QUBITS,
            });
        }
        let mask = low_mask(n);
        if x_bits & !mask != 0 || z_bits & !mask != 0 {
            return Err(Error::OutOfRange(format!(
                "mask bits set above qubit count {n}"
            )));
        }
        Ok(Self { n, x_bits, z_bits })
    }

    pub fn from_index(n: usize, index: usize) -> Result<Self> {
        if n > MAX_PAULI_QUBITS {
            return Err(Error::TooManyQubits {
                what: "Pauli string",
                n,
                cap: MAX_PAULI_QUBITS,
            });
        }
        if n < MAX_PAULI_QUBITS && (index as u64) >> (2 * n) != 0 {
            return Err(Error::OutOfRange(format!(
                "index {index} out of range for {n} qubits"
            )));
        }
        let (x, z) = split_index(index);
        Ok(Self {
            n,
            x_bits: x,
            z_bits: z,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn x_bits(&self) -> u64 {
        self.x_bits
    }

    pub fn z_bits(&self) -> u64 {
        self.z_bits
    }

    pub fn index(&self) -> usize {
        join_masks(self.x_bits, self.z_bits)
    }

    pub fn is_identity(&self) -> bool {
        self.x_bits == 0 && self.z_bits == 0
    }

    fn check_same(&self, other: &Self) -> Result<()> {
        if self.n != other.n {
            return Err(Error::DimensionMismatch {
                left: self.n,
                right: other.n,
            });
        }
        Ok(())
    }

    /// `sum_k (a_{x,k} b_{z,k} + a_{z,k} b_{x,k}) mod 2`.
    pub fn symplectic_product(&self, other: &Self) -> Result<u8> {
        self.check_same(other)?;
        let ones = (self.x_bits & other.z_bits).count_ones() + (self.z_bits & other.x_bits).count_ones();
        Ok((ones & 1) as u8)
    }

    pub fn commutes_with(&self, other: &Self) -> Result<bool> {
        Ok(self.symplectic_product(other)? == 0)
    }

    pub fn weight(&self) -> usize {
        (self.x_bits | self.z_bits).count_ones() as usize
    }

    /// Phaseless product.
    pub fn multiply(&self, other: &Self) -> Result<Self> {
        self.check_same(other)?;
        Ok(Self {
            n: self.n,
            x_bits: self.x_bits ^ other.x_bits,
            z_bits: self.z_bits ^ other.z_bits,
        })
    }

    /// Column action of the Hermitian representative on a computational basis
    /// state: `P |k> = phase * |row>`.
    #[inline]
    pub fn column(&self, k: usize) -> (usize, Complex64) {
        column_action(self.x_bits, self.z_bits, k)
    }

    /// Dense `2^n x 2^n` matrix of `⊗_k i^{x_k z_k} X^{x_k} Z^{z_k}`.
    pub fn to_matrix(&self) -> Result<DMatrix<Complex64>> {
        if self.n > MAX_MATRIX_QUBITS {
            return Err(Error::TooManyQubits {
                what: "dense Pauli matrix",
                n: self.n,
                cap: MAX_MATRIX_QUBITS,
            });
        }
        let dim = 1usize << self.n;
        let mut m = DMatrix::zeros(dim, dim);
        for k in 0..dim {
            let (row, phase) = self.column(k);
            m[(row, k)] = phase;
        }
        Ok(m)
    }
}

/// `P|k> = i^{|x&z|} (-1)^{|z&k|} |k xor x>` with qubit 1 as the top bit of `k`.
#[inline]
pub(crate) fn column_action(x: u64, z: u64, k: usize) -> (usize, Complex64) {
    let ys = (x & z).count_ones() & 3;
    let flips = (z & k as u64).count_ones() & 1;
    // i^ys * (-1)^flips
    let quarter = (ys + 2 * flips) & 3;
    let phase = match quarter {
        0 => Complex64::new(1.0, 0.0),
        1 => Complex64::new(0.0, 1.0),
        2 => Complex64::new(-1.0, 0.0),
        _ => Complex64::new(0.0, -1.0),
    };
    ((k as u64 ^ x) as usize, phase)
}

fn low_mask(n: usize) -> u64 {
    if n >= 64 {
        u64::MAX
    } else {
        (1u64 << n) - 1
    }
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for q in 0..self.n {
            let bit = self.n - 1 - q;
            let x = (self.x_bits >> bit) & 1;
            let z = (self.z_bits >> bit) & 1;
            let c = match (x, z) {
                (0, 0) => 'I',
                (1, 0) => 'X',
                (1, 1) => 'Y',
                _ => 'Z',
            };
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

impl FromStr for PauliString {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let letters: Vec<char> = s.trim().chars().collect();
        let n = letters.len();
        if n == 0 || n > MAX_PAULI_QUBITS {
            return Err(Error::BadLabel(s.to_string()));
        }
        let (mut x, mut z) = (0u64, 0u64);
        for (q, c) in letters.iter().enumerate() {
            let bit = n - 1 - q;
            let (xb, zb) = match c.to_ascii_uppercase() {
                'I' => (0, 0),
                'X' => (1, 0),
                'Y' => (1, 1),
                'Z' => (0, 1),
                _ => return Err(Error::BadLabel(s.to_string())),
            };
            x |= xb << bit;
            z |= zb << bit;
        }
        Self::from_masks(n, x, z)
    }
}
