//! Pauli channels in both representations and the transform between them.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pauli::{symplectic_index, PauliString};

/// Default cap on dense `4^n` arrays; 4^13 doubles is about half a gigabyte.
pub const DEFAULT_MAX_CHANNEL_QUBITS: usize = 13;

/// Absolute tolerance used by [`PauliChannel::validate`] when none is given.
pub const DEFAULT_TOLERANCE: f64 = 1e-9;

/// Returns `n` when `len == 4^n`.
pub fn qubits_for_len(len: usize) -> Result<usize> {
    if len == 0 || !len.is_power_of_two() || !len.trailing_zeros().is_multiple_of(2) {
        return Err(Error::BadLength(len));
    }
    Ok(len.trailing_zeros() as usize / 2)
}

/// In-place unnormalized symplectic Walsh-Hadamard transform,
/// `out_b = sum_a in_a (-1)^{<a,b>}`, as one 4-point butterfly per qubit.
pub fn symplectic_wht(values: &mut [f64]) -> Result<()> {
    let n = qubits_for_len(values.len())?;
    // 4x4 kernel on one qubit's (x, z) pair
    let mut kernel = [[0.0f64; 4]; 4];
    for (i, row) in kernel.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = if symplectic_index(i, j) == 0 { 1.0 } else { -1.0 };
        }
    }
    for q in 0..n {
        let stride = 1usize << (2 * q);
        let block = stride * 4;
        for base in (0..values.len()).step_by(block) {
            for off in 0..stride {
                let idx = [
                    base + off,
                    base + off + stride,
                    base + off + 2 * stride,
                    base + off + 3 * stride,
                ];
                let v = idx.map(|i| values[i]);
                for (r, &dst) in idx.iter().enumerate() {
                    values[dst] = kernel[r][0] * v[0]
                        + kernel[r][1] * v[1]
                        + kernel[r][2] * v[2]
                        + kernel[r][3] * v[3];
                }
            }
        }
    }
    Ok(())
}

/// `lambda_b = sum_a p_a (-1)^{<a,b>}`.
pub fn eigenvalues_from_error_rates(error_rates: &[f64]) -> Result<Vec<f64>> {
    let mut out = error_rates.to_vec();
    symplectic_wht(&mut out)?;
    Ok(out)
}

/// `p_a = 4^{-n} sum_b lambda_b (-1)^{<a,b>}`.
pub fn error_rates_from_eigenvalues(eigenvalues: &[f64]) -> Result<Vec<f64>> {
    let mut out = eigenvalues.to_vec();
    symplectic_wht(&mut out)?;
    let scale = 1.0 / out.len() as f64;
    out.iter_mut().for_each(|v| *v *= scale);
    Ok(out)
}

/// Outcome of [`PauliChannel::validate`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValidityReport {
    pub trace_preserving: bool,
    pub eigenvalues_bounded: bool,
    pub completely_positive: bool,
    pub lambda_identity: f64,
    pub max_abs_eigenvalue: f64,
    pub min_error_rate: f64,
    pub error_rate_sum: f64,
}

impl ValidityReport {
    pub fn is_valid(&self) -> bool {
        self.trace_preserving && self.eigenvalues_bounded && self.completely_positive
    }

    pub fn failures(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if !self.trace_preserving {
            out.push("trace preservation (lambda_0 != 1)");
        }
        if !self.eigenvalues_bounded {
            out.push("eigenvalue range (|lambda_b| > 1)");
        }
        if !self.completely_positive {
            out.push("complete positivity (some p_a < 0)");
        }
        out
    }
}

/// `+1` or `-1` attached to a hypothesis channel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }

    pub const BOTH: [Sign; 2] = [Sign::Plus, Sign::Minus];
}

/// An n-qubit Pauli channel holding both error rates and eigenvalues.
///
/// Both arrays are filled at construction and never mutated afterwards.
#[derive(Clone, Debug, PartialEq)]
pub struct PauliChannel {
    n: usize,
    error_rates: Vec<f64>,
    eigenvalues: Vec<f64>,
}

impl PauliChannel {
    fn check_cap(n: usize) -> Result<()> {
        if n > DEFAULT_MAX_CHANNEL_QUBITS {
            return Err(Error::TooManyQubits {
                what: "dense channel",
                n,
                cap: DEFAULT_MAX_CHANNEL_QUBITS,
            });
        }
        Ok(())
    }

    pub fn from_error_rates(error_rates: Vec<f64>) -> Result<Self> {
        let n = qubits_for_len(error_rates.len())?;
        Self::check_cap(n)?;
        let eigenvalues = eigenvalues_from_error_rates(&error_rates)?;
        Ok(Self {
            n,
            error_rates,
            eigenvalues,
        })
    }

    pub fn from_eigenvalues(eigenvalues: Vec<f64>) -> Result<Self> {
        let n = qubits_for_len(eigenvalues.len())?;
        Self::check_cap(n)?;
        let error_rates = error_rates_from_eigenvalues(&eigenvalues)?;
        Ok(Self {
            n,
            error_rates,
            eigenvalues,
        })
    }

    pub fn identity(n: usize) -> Result<Self> {
        Self::check_cap(n)?;
        let mut p = vec![0.0; 1 << (2 * n)];
        p[0] = 1.0;
        Self::from_error_rates(p)
    }

    /// The completely depolarizing channel `Lambda_0`.
    pub fn completely_depolarizing(n: usize) -> Result<Self> {
        Self::check_cap(n)?;
        let mut lambda = vec![0.0; 1 << (2 * n)];
        lambda[0] = 1.0;
        Self::from_eigenvalues(lambda)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.error_rates.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn error_rates(&self) -> &[f64] {
        &self.error_rates
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvalue(&self, b: usize) -> f64 {
        self.eigenvalues[b]
    }

    pub fn validate(&self, tol: f64) -> ValidityReport {
        let lambda_identity = self.eigenvalues[0];
        let max_abs_eigenvalue = self.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let min_error_rate = self.error_rates.iter().copied().fold(f64::INFINITY, f64::min);
        let error_rate_sum: f64 = self.error_rates.iter().sum();
        ValidityReport {
            trace_preserving: (lambda_identity - 1.0).abs() <= tol,
            eigenvalues_bounded: max_abs_eigenvalue <= 1.0 + tol,
            completely_positive: min_error_rate >= -tol,
            lambda_identity,
            max_abs_eigenvalue,
            min_error_rate,
            error_rate_sum,
        }
    }

    /// Signed geometric mean of the eigenvalues indexed by `block`.
    pub fn geometric_mean_fidelity(&self, block: &[usize]) -> Result<f64> {
        let mut values = Vec::with_capacity(block.len());
        for &b in block {
            if b == 0 || b >= self.len() {
                return Err(Error::OutOfRange(format!(
                    "block index {b} is not a non-identity Pauli on {} qubits",
                    self.n
                )));
            }
            values.push(self.eigenvalues[b]);
        }
        Ok(signed_geometric_mean(&values))
    }
}

/// `sgn(prod v) |prod v|^{1/len}`, with 0 whenever any factor is 0.
pub fn signed_geometric_mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    if values.contains(&0.0) {
        return 0.0;
    }
    let negatives = values.iter().filter(|&&v| v < 0.0).count();
    let log_mag: f64 = values.iter().map(|v| v.abs().ln()).sum::<f64>() / values.len() as f64;
    let mag = log_mag.exp();
    if negatives % 2 == 1 {
        -mag
    } else {
        mag
    }
}

fn check_eps0(eps0: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&eps0) {
        return Err(Error::OutOfRange(format!("eps0 = {eps0} outside [0, 1]")));
    }
    Ok(())
}

/// Eigenvalues of `Lambda_{B,s}` without range checks: `lambda_0 = 1` and
/// `lambda_b = s eps0 / |B|` on `B`. Lets callers probe invalid strengths.
pub fn coarse_hypothesis_eigenvalues(n: usize, block: &[usize], sign: Sign, eps0: f64) -> Result<Vec<f64>> {
    let len = 1usize << (2 * n);
    if block.is_empty() {
        return Err(Error::OutOfRange("empty block".into()));
    }
    let distinct: BTreeSet<usize> = block.iter().copied().collect();
    if distinct.len() != block.len() {
        return Err(Error::OutOfRange("block has repeated indices".into()));
    }
    let mut lambda = vec![0.0; len];
    lambda[0] = 1.0;
    let value = sign.value() * eps0 / block.len() as f64;
    for &b in block {
        if b == 0 || b >= len {
            return Err(Error::OutOfRange(format!(
                "block index {b} is not a non-identity Pauli on {n} qubits"
            )));
        }
        lambda[b] = value;
    }
    Ok(lambda)
}

/// `Lambda_{a,s}`: `lambda_0 = 1`, `lambda_a = s eps0`, every other eigenvalue 0.
pub fn hypothesis_channel(n: usize, a: &PauliString, sign: Sign, eps0: f64) -> Result<PauliChannel> {
    if a.n() != n {
        return Err(Error::DimensionMismatch { left: n, right: a.n() });
    }
    if a.is_identity() {
        return Err(Error::OutOfRange("hypothesis Pauli must not be the identity".into()));
    }
    check_eps0(eps0)?;
    PauliChannel::check_cap(n)?;
    PauliChannel::from_eigenvalues(coarse_hypothesis_eigenvalues(n, &[a.index()], sign, eps0)?)
}

/// `Lambda_{B,s}`: `lambda_b = s eps0 / |B|` for `b` in the block.
pub fn coarse_hypothesis_channel(n: usize, block: &[usize], sign: Sign, eps0: f64) -> Result<PauliChannel> {
    check_eps0(eps0)?;
    PauliChannel::check_cap(n)?;
    PauliChannel::from_eigenvalues(coarse_hypothesis_eigenvalues(n, block, sign, eps0)?)
}

/// A partition of the non-identity Paulis into disjoint blocks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    n: usize,
    blocks: Vec<Vec<usize>>,
}

impl Partition {
    pub fn new(n: usize, blocks: Vec<Vec<usize>>) -> Result<Self> {
        if n > DEFAULT_MAX_CHANNEL_QUBITS {
            return Err(Error::TooManyQubits {
                what: "partition",
                n,
                cap: DEFAULT_MAX_CHANNEL_QUBITS,
            });
        }
        let len = 1usize << (2 * n);
        let mut seen = vec![false; len];
        for block in &blocks {
            if block.is_empty() {
                return Err(Error::InvalidPartition("empty block".into()));
            }
            for &b in block {
                if b == 0 {
                    return Err(Error::InvalidPartition("identity inside a block".into()));
                }
                if b >= len {
                    return Err(Error::InvalidPartition(format!("index {b} out of range")));
                }
                if seen[b] {
                    return Err(Error::InvalidPartition(format!("index {b} appears twice")));
                }
                seen[b] = true;
            }
        }
        if let Some(missing) = (1..len).find(|&b| !seen[b]) {
            return Err(Error::InvalidPartition(format!("index {missing} not covered")));
        }
        Ok(Self { n, blocks })
    }

    /// Every non-identity Pauli in its own block.
    pub fn singletons(n: usize) -> Result<Self> {
        let len = 1usize << (2 * n);
        Self::new(n, (1..len).map(|b| vec![b]).collect())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    /// Largest block size `C`.
    pub fn max_block_size(&self) -> usize {
        self.blocks.iter().map(Vec::len).max().unwrap_or(0)
    }
}

/// Which array a channel file stores.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    ErrorRates,
    Eigenvalues,
}

/// On-disk channel: `{ "n", "representation", "values" }` in canonical index order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelFile {
    pub n: usize,
    pub representation: Representation,
    pub values: Vec<f64>,
}

impl ChannelFile {
    pub fn from_channel(channel: &PauliChannel, representation: Representation) -> Self {
        let values = match representation {
            Representation::ErrorRates => channel.error_rates().to_vec(),
            Representation::Eigenvalues => channel.eigenvalues().to_vec(),
        };
        Self {
            n: channel.n(),
            representation,
            values,
        }
    }

    pub fn to_channel(&self) -> Result<PauliChannel> {
        let n = qubits_for_len(self.values.len())?;
        if n != self.n {
            return Err(Error::DimensionMismatch { left: self.n, right: n });
        }
        match self.representation {
            Representation::ErrorRates => PauliChannel::from_error_rates(self.values.clone()),
            Representation::Eigenvalues => PauliChannel::from_eigenvalues(self.values.clone()),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Loads a channel file and validates it at `tol`.
pub fn load_channel(path: &Path, tol: f64) -> Result<(PauliChannel, ValidityReport)> {
    let channel = ChannelFile::load(path)?.to_channel()?;
    let report = channel.validate(tol);
    Ok((channel, report))
}

/// On-disk partition: `{ "n", "blocks": [[indices]...] }`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionFile {
    pub n: usize,
    pub blocks: Vec<Vec<usize>>,
}

impl PartitionFile {
    pub fn to_partition(&self) -> Result<Partition> {
        Partition::new(self.n, self.blocks.clone())
    }

    pub fn load(path: &Path) -> Result<Partition> {
        let text = std::fs::read_to_string(path)?;
        let file: PartitionFile = serde_json::from_str(&text)?;
        file.to_partition()
    }
}

impl From<&Partition> for PartitionFile {
    fn from(p: &Partition) -> Self {
        Self {
            n: p.n(),
            blocks: p.blocks().to_vec(),
        }
    }
}
