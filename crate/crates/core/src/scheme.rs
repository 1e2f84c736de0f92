//! Classical-memory-assisted schemes: adaptive quantum instruments interleaved
//! with channel uses, simulated exactly on dense density matrices.
//!
//! A scheme of depth `N` produces an outcome history `o_0 .. o_N`:
//! `o_0` labels the initial ensemble member, `o_1 .. o_{N-1}` come from the
//! instruments placed after each of the first `N - 1` channel uses, and `o_N`
//! comes from the final POVM. The instrument for step `t` is looked up by the
//! prefix `o_{<t}` (length `t`), the POVM by `o_{<N}` (length `N`).

use std::collections::BTreeMap;
use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::PauliChannel;
use crate::error::{Error, Result};
use crate::linalg::{c, conjugate_by_pauli, identity, max_abs_diff, min_eigenvalue, real_trace, Mat};
use crate::pauli::{column_action, split_index};

/// Largest qubit count simulated densely by this module.
pub const MAX_SCHEME_QUBITS: usize = 4;

/// Default cap on the number of leaves of an enumerated history tree.
pub const DEFAULT_MAX_LEAVES: usize = 100_000;

/// Probability (or trace) below which a branch is treated as unreachable.
pub const PRUNE_THRESHOLD: f64 = 1e-14;

/// Tolerance for completeness and positivity checks on instruments.
pub const INSTRUMENT_TOLERANCE: f64 = 1e-9;

pub type History = Vec<usize>;

fn check_square(m: &Mat, dim: usize, what: &str) -> Result<()> {
    if m.nrows() != dim || m.ncols() != dim {
        return Err(Error::InvalidInstrument(format!(
            "{what}: expected {dim}x{dim}, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

/// One completely positive, trace-non-increasing branch given by Kraus operators.
#[derive(Clone, Debug, PartialEq)]
pub struct KrausBranch {
    dim: usize,
    kraus: Vec<Mat>,
}

impl KrausBranch {
    pub fn new(dim: usize, kraus: Vec<Mat>) -> Result<Self> {
        for k in &kraus {
            check_square(k, dim, "Kraus operator")?;
        }
        Ok(Self { dim, kraus })
    }

    /// The zero map (no Kraus operators).
    pub fn zero(dim: usize) -> Self {
        Self { dim, kraus: Vec::new() }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            dim,
            kraus: vec![identity(dim)],
        }
    }

    /// Single-Kraus branch `rho -> K rho K^dag`.
    pub fn single(kraus: Mat) -> Result<Self> {
        let dim = kraus.nrows();
        Self::new(dim, vec![kraus])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kraus(&self) -> &[Mat] {
        &self.kraus
    }

    /// Multiplies the map by `weight >= 0`.
    pub fn scaled(&self, weight: f64) -> Self {
        let s = c(weight.max(0.0).sqrt());
        Self {
            dim: self.dim,
            kraus: self.kraus.iter().map(|k| k * s).collect(),
        }
    }

    pub fn apply(&self, rho: &Mat) -> Mat {
        let mut out = Mat::zeros(self.dim, self.dim);
        for k in &self.kraus {
            out += k * rho * k.adjoint();
        }
        out
    }

    /// `E = sum_j K_j^dag K_j`.
    pub fn povm_element(&self) -> Mat {
        let mut e = Mat::zeros(self.dim, self.dim);
        for k in &self.kraus {
            e += k.adjoint() * k;
        }
        e
    }

    pub fn is_cptni(&self, tol: f64) -> bool {
        let e = self.povm_element();
        crate::linalg::max_eigenvalue(&e) <= 1.0 + tol
    }

    /// Pauli transfer matrix entry `Tr[P_a C(P_b)] / 2^n` on canonical indices.
    pub fn ptm_entry(&self, a: usize, b: usize) -> f64 {
        let (bx, bz) = split_index(b);
        let mut pb = Mat::zeros(self.dim, self.dim);
        for k in 0..self.dim {
            let (row, ph) = column_action(bx, bz, k);
            pb[(row, k)] = ph;
        }
        let image = self.apply(&pb);
        let (ax, az) = split_index(a);
        crate::linalg::pauli_expectation(ax, az, &image).re / self.dim as f64
    }
}

/// The POVM element associated with a branch.
pub fn povm_element_of(branch: &KrausBranch) -> Mat {
    branch.povm_element()
}

fn is_proportional_to_identity(e: &Mat, tol: f64) -> bool {
    let dim = e.nrows();
    let scalar = real_trace(e) / dim as f64;
    scalar >= -tol && max_abs_diff(e, &(identity(dim) * c(scalar))) <= tol
}

/// One outcome of applying an instrument.
#[derive(Clone, Debug)]
pub struct InstrumentOutcome {
    pub outcome: usize,
    pub probability: f64,
    pub state: Mat,
}

/// A quantum instrument; outcome labels are branch positions.
#[derive(Clone, Debug, PartialEq)]
pub struct Instrument {
    dim: usize,
    branches: Vec<KrausBranch>,
}

impl Instrument {
    /// Checks every branch is CPTNI and the branches sum to a CPTP map.
    pub fn new(branches: Vec<KrausBranch>) -> Result<Self> {
        let Some(first) = branches.first() else {
            return Err(Error::InvalidInstrument("no branches".into()));
        };
        let dim = first.dim();
        let mut total = Mat::zeros(dim, dim);
        for (o, b) in branches.iter().enumerate() {
            if b.dim() != dim {
                return Err(Error::InvalidInstrument(format!("branch {o} has dimension {}", b.dim())));
            }
            if !b.is_cptni(INSTRUMENT_TOLERANCE) {
                return Err(Error::InvalidInstrument(format!("branch {o} is not trace non-increasing")));
            }
            total += b.povm_element();
        }
        let dev = max_abs_diff(&total, &identity(dim));
        if dev > INSTRUMENT_TOLERANCE {
            return Err(Error::InvalidInstrument(format!(
                "branches do not sum to a trace-preserving map (deviation {dev:e})"
            )));
        }
        Ok(Self { dim, branches })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            dim,
            branches: vec![KrausBranch::identity(dim)],
        }
    }

    /// Projective measurement in the computational basis.
    pub fn computational_measurement(dim: usize) -> Self {
        let branches = (0..dim)
            .map(|i| KrausBranch::single(crate::linalg::unit(dim, i, i)).expect("square"))
            .collect();
        Self { dim, branches }
    }

    /// Projective measurement onto the columns of `basis`, grouped into
    /// `groups` consecutive blocks; the post-state is the projected state.
    pub fn projective(basis: &Mat, groups: &[usize]) -> Result<Self> {
        let dim = basis.nrows();
        if groups.iter().sum::<usize>() != dim {
            return Err(Error::InvalidInstrument("group sizes must sum to the dimension".into()));
        }
        let mut start = 0;
        let mut branches = Vec::new();
        for &g in groups {
            let cols = basis.columns(start, g);
            branches.push(KrausBranch::single(cols * cols.adjoint())?);
            start += g;
        }
        Self::new(branches)
    }

    /// Outcome `o` with probability `weights[o]`, followed by the given unitary.
    pub fn random_unitary_mixture(weights: &[f64], unitaries: &[Mat]) -> Result<Self> {
        if weights.len() != unitaries.len() {
            return Err(Error::InvalidInstrument("weights and unitaries differ in length".into()));
        }
        let branches = weights
            .iter()
            .zip(unitaries)
            .map(|(&w, u)| KrausBranch::single(u * c(w.max(0.0).sqrt())))
            .collect::<Result<Vec<_>>>()?;
        Self::new(branches)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn branches(&self) -> &[KrausBranch] {
        &self.branches
    }

    pub fn len(&self) -> usize {
        self.branches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.branches.is_empty()
    }

    pub fn povm_elements(&self) -> Vec<Mat> {
        self.branches.iter().map(KrausBranch::povm_element).collect()
    }

    /// True iff every branch's POVM element is within `tol` of `c I`, `c >= 0`.
    pub fn is_trivial(&self, tol: f64) -> bool {
        self.branches
            .iter()
            .all(|b| is_proportional_to_identity(&b.povm_element(), tol))
    }

    /// Outcomes with nonzero probability and their normalized post-states.
    pub fn apply(&self, rho: &Mat) -> Result<Vec<InstrumentOutcome>> {
        check_square(rho, self.dim, "state")?;
        let mut out = Vec::new();
        for (outcome, b) in self.branches.iter().enumerate() {
            let image = b.apply(rho);
            let probability = real_trace(&image);
            if probability > PRUNE_THRESHOLD {
                out.push(InstrumentOutcome {
                    outcome,
                    probability,
                    state: image / c(probability),
                });
            }
        }
        Ok(out)
    }
}

/// Free-function form of [`Instrument::apply`].
pub fn apply_instrument(instr: &Instrument, rho: &Mat) -> Result<Vec<InstrumentOutcome>> {
    instr.apply(rho)
}

/// Free-function form of [`Instrument::is_trivial`].
pub fn is_trivial_instrument(instr: &Instrument, tol: f64) -> bool {
    instr.is_trivial(tol)
}

/// A final measurement: positive operators summing to the identity.
#[derive(Clone, Debug, PartialEq)]
pub struct Povm {
    dim: usize,
    elements: Vec<Mat>,
}

impl Povm {
    pub fn new(elements: Vec<Mat>) -> Result<Self> {
        let Some(first) = elements.first() else {
            return Err(Error::InvalidInstrument("POVM without elements".into()));
        };
        let dim = first.nrows();
        let mut total = Mat::zeros(dim, dim);
        for (k, e) in elements.iter().enumerate() {
            check_square(e, dim, "POVM element")?;
            if max_abs_diff(e, &e.adjoint()) > INSTRUMENT_TOLERANCE || min_eigenvalue(e) < -INSTRUMENT_TOLERANCE {
                return Err(Error::InvalidInstrument(format!("POVM element {k} is not positive")));
            }
            total += e;
        }
        let dev = max_abs_diff(&total, &identity(dim));
        if dev > INSTRUMENT_TOLERANCE {
            return Err(Error::InvalidInstrument(format!("POVM does not sum to identity (deviation {dev:e})")));
        }
        Ok(Self { dim, elements })
    }

    pub fn trivial(dim: usize) -> Self {
        Self {
            dim,
            elements: vec![identity(dim)],
        }
    }

    pub fn computational(dim: usize) -> Self {
        Self {
            dim,
            elements: (0..dim).map(|i| crate::linalg::unit(dim, i, i)).collect(),
        }
    }

    /// Projective POVM onto the columns of a unitary `basis`.
    pub fn from_basis(basis: &Mat) -> Result<Self> {
        let dim = basis.nrows();
        let elements = (0..dim)
            .map(|j| {
                let v = basis.column(j);
                v * v.adjoint()
            })
            .collect();
        Self::new(elements)
    }

    pub fn from_instrument(instr: &Instrument) -> Self {
        Self {
            dim: instr.dim(),
            elements: instr.povm_elements(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn elements(&self) -> &[Mat] {
        &self.elements
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn is_trivial(&self, tol: f64) -> bool {
        self.elements.iter().all(|e| is_proportional_to_identity(e, tol))
    }
}

/// Applies a Pauli channel through its eigenvalues: each Pauli coefficient
/// `Tr(P_b rho)` is scaled by `lambda_b`.
pub fn apply_channel(channel: &PauliChannel, rho: &Mat) -> Result<Mat> {
    let n = channel.n();
    if n > MAX_SCHEME_QUBITS {
        return Err(Error::TooManyQubits {
            what: "dense channel application",
            n,
            cap: MAX_SCHEME_QUBITS,
        });
    }
    let dim = 1usize << n;
    check_square(rho, dim, "state").map_err(|_| Error::DimensionMismatch {
        left: dim,
        right: rho.nrows(),
    })?;
    let mut out = Mat::zeros(dim, dim);
    let scale = 1.0 / dim as f64;
    for (b, &lambda) in channel.eigenvalues().iter().enumerate() {
        if lambda == 0.0 {
            continue;
        }
        let (x, z) = split_index(b);
        let coeff = crate::linalg::pauli_expectation(x, z, rho) * c(lambda * scale);
        for k in 0..dim {
            let (row, ph) = column_action(x, z, k);
            out[(row, k)] += coeff * ph;
        }
    }
    Ok(out)
}

/// Applies `1_A ⊗ Lambda` through the Kraus form `sum_a p_a P_a . P_a`, with
/// the system as the low `2^n` block of the index.
pub fn apply_channel_kraus(channel: &PauliChannel, rho: &Mat) -> Result<Mat> {
    let dim_s = 1usize << channel.n();
    let dim = rho.nrows();
    if !dim.is_multiple_of(dim_s) || rho.ncols() != dim {
        return Err(Error::DimensionMismatch { left: dim_s, right: dim });
    }
    let mut out = Mat::zeros(dim, dim);
    for (a, &p) in channel.error_rates().iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let (x, z) = split_index(a);
        out += conjugate_by_pauli(x, z, dim_s, rho) * c(p);
    }
    Ok(out)
}

/// An adaptive scheme stored as explicit tables keyed by outcome history.
#[derive(Clone, Debug, PartialEq)]
pub struct SchemePolicy {
    n: usize,
    depth: usize,
    initial: Vec<Mat>,
    instruments: BTreeMap<History, Instrument>,
    povms: BTreeMap<History, Povm>,
}

impl SchemePolicy {
    /// Builds and validates a policy. `initial` holds sub-normalized states whose
    /// traces sum to one; every reachable history must have a table entry.
    pub fn new(
        n: usize,
        depth: usize,
        initial: Vec<Mat>,
        instruments: BTreeMap<History, Instrument>,
        povms: BTreeMap<History, Povm>,
    ) -> Result<Self> {
        if n > MAX_SCHEME_QUBITS {
            return Err(Error::TooManyQubits {
                what: "scheme",
                n,
                cap: MAX_SCHEME_QUBITS,
            });
        }
        if depth == 0 {
            return Err(Error::InvalidScheme("depth must be at least 1".into()));
        }
        let dim = 1usize << n;
        if initial.is_empty() {
            return Err(Error::InvalidScheme("empty initial ensemble".into()));
        }
        let mut total = 0.0;
        for (o, rho) in initial.iter().enumerate() {
            check_square(rho, dim, "initial state").map_err(|e| Error::InvalidScheme(e.to_string()))?;
            if max_abs_diff(rho, &rho.adjoint()) > INSTRUMENT_TOLERANCE || min_eigenvalue(rho) < -INSTRUMENT_TOLERANCE {
                return Err(Error::InvalidScheme(format!("initial state {o} is not positive")));
            }
            total += real_trace(rho);
        }
        if (total - 1.0).abs() > INSTRUMENT_TOLERANCE {
            return Err(Error::InvalidScheme(format!("initial ensemble has trace {total}")));
        }
        for (h, instr) in &instruments {
            if h.is_empty() || h.len() >= depth {
                return Err(Error::InvalidScheme(format!("instrument keyed by history {h:?} outside steps 1..{}", depth - 1)));
            }
            if instr.dim() != dim {
                return Err(Error::InvalidScheme(format!("instrument at {h:?} has dimension {}", instr.dim())));
            }
        }
        for (h, povm) in &povms {
            if h.len() != depth {
                return Err(Error::InvalidScheme(format!("POVM keyed by history {h:?} of length != {depth}")));
            }
            if povm.dim() != dim {
                return Err(Error::InvalidScheme(format!("POVM at {h:?} has dimension {}", povm.dim())));
            }
        }
        let policy = Self {
            n,
            depth,
            initial,
            instruments,
            povms,
        };
        policy.check_reachable_entries()?;
        Ok(policy)
    }

    /// The same instruments at every history: `steps[t-1]` after channel use `t`.
    pub fn oblivious(n: usize, initial: Vec<Mat>, steps: Vec<Instrument>, povm: Povm) -> Result<Self> {
        let depth = steps.len() + 1;
        let mut instruments = BTreeMap::new();
        let mut frontier: Vec<History> = (0..initial.len())
            .filter(|&o| real_trace(&initial[o]) > PRUNE_THRESHOLD)
            .map(|o| vec![o])
            .collect();
        for instr in &steps {
            let mut next = Vec::new();
            for h in frontier {
                for (o, b) in instr.branches().iter().enumerate() {
                    if !b.kraus().is_empty() && real_trace(&b.povm_element()) > PRUNE_THRESHOLD {
                        let mut child = h.clone();
                        child.push(o);
                        next.push(child);
                    }
                }
                instruments.insert(h, instr.clone());
            }
            frontier = next;
        }
        let povms = frontier.into_iter().map(|h| (h, povm.clone())).collect();
        Self::new(n, depth, initial, instruments, povms)
    }

    fn check_reachable_entries(&self) -> Result<()> {
        let mut missing = None;
        self.walk_structure(&mut |h, kind| {
            if missing.is_none() {
                let present = match kind {
                    NodeKind::Instrument => self.instruments.contains_key(h),
                    NodeKind::Povm => self.povms.contains_key(h),
                };
                if !present {
                    missing = Some(h.clone());
                }
            }
        });
        match missing {
            Some(h) => Err(Error::InvalidScheme(format!("no table entry for reachable history {h:?}"))),
            None => Ok(()),
        }
    }

    /// Visits every structurally reachable node (independent of the channel).
    fn walk_structure(&self, visit: &mut dyn FnMut(&History, NodeKind)) {
        let mut stack: Vec<History> = (0..self.initial.len())
            .filter(|&o| real_trace(&self.initial[o]) > PRUNE_THRESHOLD)
            .map(|o| vec![o])
            .collect();
        while let Some(h) = stack.pop() {
            if h.len() == self.depth {
                visit(&h, NodeKind::Povm);
                continue;
            }
            visit(&h, NodeKind::Instrument);
            if let Some(instr) = self.instruments.get(&h) {
                for (o, b) in instr.branches().iter().enumerate() {
                    if real_trace(&b.povm_element()) > PRUNE_THRESHOLD {
                        let mut child = h.clone();
                        child.push(o);
                        stack.push(child);
                    }
                }
            }
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        1 << self.n
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn initial(&self) -> &[Mat] {
        &self.initial
    }

    pub fn instruments(&self) -> &BTreeMap<History, Instrument> {
        &self.instruments
    }

    pub fn povms(&self) -> &BTreeMap<History, Povm> {
        &self.povms
    }

    pub fn instrument(&self, history: &[usize]) -> Option<&Instrument> {
        self.instruments.get(history)
    }

    pub fn povm(&self, history: &[usize]) -> Option<&Povm> {
        self.povms.get(history)
    }

    /// Number of structurally reachable leaves (full histories).
    pub fn leaf_count(&self) -> usize {
        let mut count = 0;
        self.walk_structure(&mut |h, kind| {
            if kind == NodeKind::Povm {
                count += self.povms.get(h).map_or(0, Povm::len);
            }
        });
        count
    }

    /// Inserts a trivial identity instrument: the returned policy has depth
    /// `depth + 1`, with an extra channel use and an identity instrument
    /// (single outcome 0) after channel use `step` (1-based, `1..=depth`).
    ///
    /// Histories are extended with the extra outcome 0 at position `step`.
    pub fn with_identity_inserted(&self, step: usize) -> Result<Self> {
        if step == 0 || step > self.depth {
            return Err(Error::InvalidScheme(format!("insertion step {step} outside 1..={}", self.depth)));
        }
        let widen = |h: &History| -> History {
            let mut out = h.clone();
            out.insert(step, 0);
            out
        };
        let mut instruments: BTreeMap<History, Instrument> = self.instruments.iter().map(|(h, i)| {
            if h.len() >= step { (widen(h), i.clone()) } else { (h.clone(), i.clone()) }
        }).collect();
        let mut extra = Vec::new();
        self.walk_structure(&mut |h, _| {
            if h.len() == step {
                extra.push(h.clone());
            }
        });
        for h in extra {
            instruments.insert(h, Instrument::identity(self.dim()));
        }
        let povms = self.povms.iter().map(|(h, p)| (widen(h), p.clone())).collect();
        Self::new(self.n, self.depth + 1, self.initial.clone(), instruments, povms)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum NodeKind {
    Instrument,
    Povm,
}

/// Worst-case number of non-trivial instruments along any path, counting the
/// final POVM when it is not proportional to the identity element-wise.
pub fn count_measurements(policy: &SchemePolicy) -> usize {
    count_measurements_with(policy, INSTRUMENT_TOLERANCE)
}

pub fn count_measurements_with(policy: &SchemePolicy, tol: f64) -> usize {
    fn go(policy: &SchemePolicy, h: &mut History, tol: f64) -> usize {
        if h.len() == policy.depth {
            return policy.povms.get(h.as_slice()).map_or(0, |p| usize::from(!p.is_trivial(tol)));
        }
        let Some(instr) = policy.instruments.get(h.as_slice()) else {
            return 0;
        };
        let here = usize::from(!instr.is_trivial(tol));
        let mut best = 0;
        for (o, b) in instr.branches().iter().enumerate() {
            if real_trace(&b.povm_element()) > PRUNE_THRESHOLD {
                h.push(o);
                best = best.max(go(policy, h, tol));
                h.pop();
            }
        }
        here + best
    }
    let mut best = 0;
    for (o, rho) in policy.initial.iter().enumerate() {
        if real_trace(rho) > PRUNE_THRESHOLD {
            best = best.max(go(policy, &mut vec![o], tol));
        }
    }
    best
}

/// Exact distribution over full outcome histories.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Distribution {
    entries: BTreeMap<History, f64>,
}

impl Distribution {
    pub fn from_entries(entries: BTreeMap<History, f64>) -> Self {
        Self { entries }
    }

    pub fn entries(&self) -> &BTreeMap<History, f64> {
        &self.entries
    }

    pub fn prob(&self, history: &[usize]) -> f64 {
        self.entries.get(history).copied().unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.entries.values().sum()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `(self + other) / 2`.
    pub fn mix(&self, other: &Self) -> Self {
        let mut entries = BTreeMap::new();
        for (h, p) in self.entries.iter().chain(other.entries.iter()) {
            *entries.entry(h.clone()).or_insert(0.0) += 0.5 * p;
        }
        Self { entries }
    }

    /// Half the l1 distance.
    pub fn tvd(&self, other: &Self) -> f64 {
        let mut sum = 0.0;
        for (h, p) in &self.entries {
            sum += (p - other.prob(h)).abs();
        }
        for (h, q) in &other.entries {
            if !self.entries.contains_key(h) {
                sum += q.abs();
            }
        }
        0.5 * sum
    }

    /// Largest absolute probability difference over all histories.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let mut m = 0.0f64;
        for (h, p) in &self.entries {
            m = m.max((p - other.prob(h)).abs());
        }
        for (h, q) in &other.entries {
            if !self.entries.contains_key(h) {
                m = m.max(q.abs());
            }
        }
        m
    }
}

/// Exact outcome law `Pr[o | Lambda]` by enumerating the history tree.
pub fn run_scheme_exact(policy: &SchemePolicy, channel: &PauliChannel) -> Result<Distribution> {
    run_scheme_exact_capped(policy, channel, DEFAULT_MAX_LEAVES)
}

pub fn run_scheme_exact_capped(policy: &SchemePolicy, channel: &PauliChannel, max_leaves: usize) -> Result<Distribution> {
    if channel.n() != policy.n {
        return Err(Error::DimensionMismatch { left: policy.n, right: channel.n() });
    }
    let leaves = policy.leaf_count();
    if leaves > max_leaves {
        return Err(Error::TreeTooLarge { estimate: leaves, cap: max_leaves });
    }
    let mut entries = BTreeMap::new();
    // unnormalized states: the trace is the probability of the prefix
    let mut stack: Vec<(History, Mat)> = policy
        .initial
        .iter()
        .enumerate()
        .filter(|(_, rho)| real_trace(rho) > PRUNE_THRESHOLD)
        .map(|(o, rho)| (vec![o], rho.clone()))
        .collect();
    while let Some((h, rho)) = stack.pop() {
        let after = apply_channel(channel, &rho)?;
        if h.len() == policy.depth {
            let povm = policy.povms.get(&h).ok_or_else(|| Error::InvalidScheme(format!("missing POVM at {h:?}")))?;
            for (k, e) in povm.elements().iter().enumerate() {
                let p = (e * &after).trace().re;
                if p > PRUNE_THRESHOLD {
                    let mut full = h.clone();
                    full.push(k);
                    entries.insert(full, p);
                }
            }
            continue;
        }
        let instr = policy
            .instruments
            .get(&h)
            .ok_or_else(|| Error::InvalidScheme(format!("missing instrument at {h:?}")))?;
        for (o, b) in instr.branches().iter().enumerate() {
            let image = b.apply(&after);
            if real_trace(&image) > PRUNE_THRESHOLD {
                let mut child = h.clone();
                child.push(o);
                stack.push((child, image));
            }
        }
    }
    Ok(Distribution { entries })
}

fn sample_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().map(|w| w.max(0.0)).sum();
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        last = i;
        if u < w {
            return i;
        }
        u -= w;
    }
    last
}

/// Draws one outcome history; deterministic given `seed`.
pub fn run_scheme_sampled(policy: &SchemePolicy, channel: &PauliChannel, seed: u64) -> Result<History> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    run_scheme_sampled_with(policy, channel, &mut rng)
}

pub fn run_scheme_sampled_with<R: Rng + ?Sized>(policy: &SchemePolicy, channel: &PauliChannel, rng: &mut R) -> Result<History> {
    if channel.n() != policy.n {
        return Err(Error::DimensionMismatch { left: policy.n, right: channel.n() });
    }
    let weights: Vec<f64> = policy.initial.iter().map(real_trace).collect();
    let o0 = sample_index(&weights, rng);
    let mut rho = &policy.initial[o0] / c(weights[o0]);
    let mut h = vec![o0];
    loop {
        let after = apply_channel(channel, &rho)?;
        if h.len() == policy.depth {
            let povm = policy.povms.get(&h).ok_or_else(|| Error::InvalidScheme(format!("missing POVM at {h:?}")))?;
            let probs: Vec<f64> = povm.elements().iter().map(|e| (e * &after).trace().re).collect();
            h.push(sample_index(&probs, rng));
            return Ok(h);
        }
        let instr = policy
            .instruments
            .get(&h)
            .ok_or_else(|| Error::InvalidScheme(format!("missing instrument at {h:?}")))?;
        let outcomes = instr.apply(&after)?;
        let probs: Vec<f64> = outcomes.iter().map(|o| o.probability).collect();
        let pick = &outcomes[sample_index(&probs, rng)];
        h.push(pick.outcome);
        rho = pick.state.clone();
    }
}

/// One step of the scalar recurrence for `mu = Tr(P_a rho)` under `Lambda_{a,s}`:
/// `mu' = (c_{a0} + s eps0 mu c_{aa}) / (c_{00} + s eps0 mu c_{0a})`.
#[allow(clippy::too_many_arguments)]
pub fn mu_recurrence_step(mu: f64, c00: f64, ca0: f64, caa: f64, c0a: f64, sign: f64, eps0: f64) -> Result<f64> {
    let denom = c00 + sign * eps0 * mu * c0a;
    if denom.abs() <= PRUNE_THRESHOLD {
        return Err(Error::ZeroProbability(denom));
    }
    Ok((ca0 + sign * eps0 * mu * caa) / denom)
}

// ---------------------------------------------------------------------------
// Separable schemes and the compilers in both directions.

/// A scheme on system ⊗ ancilla whose every operation is an explicit sum of
/// product terms. The ancilla is the high factor of the tensor index.
#[derive(Clone, Debug)]
pub struct SeparableScheme {
    n: usize,
    dim_a: usize,
    depth: usize,
    initial: Vec<(Mat, Mat)>,
    channels: Vec<Vec<(KrausBranch, KrausBranch)>>,
    povm: Vec<Vec<(Mat, Mat)>>,
}

impl SeparableScheme {
    /// `initial`: pairs `(sigma_j, gamma_j)`; `channels[t-1]`: terms
    /// `(A_{t,j}, B_{t,j})`; `povm[k]`: terms `(M_{k,j}, N_{k,j})`.
    pub fn new(
        n: usize,
        dim_a: usize,
        initial: Vec<(Mat, Mat)>,
        channels: Vec<Vec<(KrausBranch, KrausBranch)>>,
        povm: Vec<Vec<(Mat, Mat)>>,
    ) -> Result<Self> {
        if n > MAX_SCHEME_QUBITS {
            return Err(Error::TooManyQubits { what: "separable scheme", n, cap: MAX_SCHEME_QUBITS });
        }
        let dim_s = 1usize << n;
        let bad = |m: String| Error::InvalidScheme(m);
        let psd = |m: &Mat| max_abs_diff(m, &m.adjoint()) <= INSTRUMENT_TOLERANCE && min_eigenvalue(m) >= -INSTRUMENT_TOLERANCE;
        let mut trace = 0.0;
        for (j, (s, g)) in initial.iter().enumerate() {
            check_square(s, dim_a, "ancilla state").map_err(|e| bad(e.to_string()))?;
            check_square(g, dim_s, "system state").map_err(|e| bad(e.to_string()))?;
            if !psd(s) || !psd(g) {
                return Err(bad(format!("initial term {j} is not positive")));
            }
            trace += real_trace(s) * real_trace(g);
        }
        if (trace - 1.0).abs() > INSTRUMENT_TOLERANCE {
            return Err(bad(format!("initial state has trace {trace}")));
        }
        for (t, terms) in channels.iter().enumerate() {
            let mut total = Mat::zeros(dim_a * dim_s, dim_a * dim_s);
            for (j, (a, b)) in terms.iter().enumerate() {
                if a.dim() != dim_a || b.dim() != dim_s {
                    return Err(bad(format!("channel {} term {j} has wrong dimensions", t + 1)));
                }
                if !a.is_cptni(INSTRUMENT_TOLERANCE) || !b.is_cptni(INSTRUMENT_TOLERANCE) {
                    return Err(bad(format!("channel {} term {j} is not CPTNI", t + 1)));
                }
                total += a.povm_element().kronecker(&b.povm_element());
            }
            if max_abs_diff(&total, &identity(dim_a * dim_s)) > INSTRUMENT_TOLERANCE {
                return Err(bad(format!("channel {} is not trace preserving", t + 1)));
            }
        }
        let mut total = Mat::zeros(dim_a * dim_s, dim_a * dim_s);
        for (k, terms) in povm.iter().enumerate() {
            for (j, (m, nn)) in terms.iter().enumerate() {
                check_square(m, dim_a, "ancilla POVM factor").map_err(|e| bad(e.to_string()))?;
                check_square(nn, dim_s, "system POVM factor").map_err(|e| bad(e.to_string()))?;
                if !psd(m) || !psd(nn) {
                    return Err(bad(format!("POVM outcome {k} term {j} is not positive")));
                }
                total += m.kronecker(nn);
            }
        }
        if max_abs_diff(&total, &identity(dim_a * dim_s)) > INSTRUMENT_TOLERANCE {
            return Err(bad("final POVM does not sum to identity".into()));
        }
        Ok(Self { n, dim_a, depth: channels.len() + 1, initial, channels, povm })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim_a(&self) -> usize {
        self.dim_a
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn outcome_count(&self) -> usize {
        self.povm.len()
    }

    /// `Pr[k | Lambda]` by dense simulation on ancilla ⊗ system.
    pub fn run_exact(&self, channel: &PauliChannel) -> Result<Vec<f64>> {
        if channel.n() != self.n {
            return Err(Error::DimensionMismatch { left: self.n, right: channel.n() });
        }
        let dim = self.dim_a << self.n;
        let mut rho = Mat::zeros(dim, dim);
        for (s, g) in &self.initial {
            rho += s.kronecker(g);
        }
        for t in 0..self.depth {
            rho = apply_channel_kraus(channel, &rho)?;
            if t + 1 < self.depth {
                let mut next = Mat::zeros(dim, dim);
                for (a, b) in &self.channels[t] {
                    for ka in a.kraus() {
                        for kb in b.kraus() {
                            let k = ka.kronecker(kb);
                            next += &k * &rho * k.adjoint();
                        }
                    }
                }
                rho = next;
            }
        }
        Ok(self
            .povm
            .iter()
            .map(|terms| {
                terms
                    .iter()
                    .map(|(m, nn)| (m.kronecker(nn) * &rho).trace().re)
                    .sum()
            })
            .collect())
    }
}

/// Result of compiling a separable scheme into a classical-memory-assisted one.
#[derive(Clone, Debug)]
pub struct CompiledSeparable {
    pub policy: SchemePolicy,
    /// `final_labels[o_N] = (k, j_N)`.
    pub final_labels: Vec<(usize, usize)>,
    pub outcome_count: usize,
}

impl CompiledSeparable {
    /// Traces out the classical registers: distribution over the separable outcome `k`.
    pub fn marginal(&self, dist: &Distribution) -> Vec<f64> {
        let mut out = vec![0.0; self.outcome_count];
        for (h, p) in dist.entries() {
            let last = *h.last().expect("nonempty history");
            out[self.final_labels[last].0] += p;
        }
        out
    }
}

fn apply_branch_chain(tau: &Mat, branch: &KrausBranch) -> Mat {
    branch.apply(tau)
}

/// Keeps the separable scheme's ancilla as classical indices `j_{0:t}`; the
/// branch weights are ratios of ancilla traces.
pub fn compile_separable_to_cma(sep: &SeparableScheme) -> Result<CompiledSeparable> {
    let dim_s = 1usize << sep.n;
    let final_labels: Vec<(usize, usize)> = sep
        .povm
        .iter()
        .enumerate()
        .flat_map(|(k, terms)| (0..terms.len()).map(move |j| (k, j)))
        .collect();

    let initial: Vec<Mat> = sep
        .initial
        .iter()
        .map(|(s, g)| {
            let ts = real_trace(s);
            if ts > PRUNE_THRESHOLD {
                g * c(ts)
            } else {
                Mat::zeros(dim_s, dim_s)
            }
        })
        .collect();

    let mut instruments = BTreeMap::new();
    let mut povms = BTreeMap::new();
    // (history, unnormalized ancilla state)
    let mut stack: Vec<(History, Mat)> = sep
        .initial
        .iter()
        .enumerate()
        .filter(|(_, (s, g))| real_trace(s) > PRUNE_THRESHOLD && real_trace(g) > PRUNE_THRESHOLD)
        .map(|(j, (s, _))| (vec![j], s.clone()))
        .collect();
    while let Some((h, tau)) = stack.pop() {
        let denom = real_trace(&tau);
        if h.len() == sep.depth {
            let elements = final_labels
                .iter()
                .map(|&(k, j)| {
                    let (m, nn) = &sep.povm[k][j];
                    let w = ((m * &tau).trace().re / denom).max(0.0);
                    nn * c(w)
                })
                .collect();
            povms.insert(h, Povm::new(elements)?);
            continue;
        }
        let terms = &sep.channels[h.len() - 1];
        let mut branches = Vec::with_capacity(terms.len());
        for (j, (a, b)) in terms.iter().enumerate() {
            let next = apply_branch_chain(&tau, a);
            let w = real_trace(&next) / denom;
            if w > PRUNE_THRESHOLD && real_trace(&b.povm_element()) > PRUNE_THRESHOLD {
                branches.push(b.scaled(w));
                let mut child = h.clone();
                child.push(j);
                stack.push((child, next));
            } else {
                branches.push(KrausBranch::zero(dim_s));
            }
        }
        instruments.insert(h, Instrument::new(branches)?);
    }
    let policy = SchemePolicy::new(sep.n, sep.depth, initial, instruments, povms)?;
    Ok(CompiledSeparable {
        policy,
        final_labels,
        outcome_count: sep.povm.len(),
    })
}

/// Result of embedding a classical-memory-assisted scheme into a separable one.
#[derive(Clone, Debug)]
pub struct CompiledCma {
    pub scheme: SeparableScheme,
    /// Outcome alphabet sizes of `o_0 .. o_N`; registers `A_0 .. A_{N-1}` use the first `N`.
    pub alphabet: Vec<usize>,
}

impl CompiledCma {
    /// Mixed-radix decoding of a separable outcome into the history `o_{0:N}`.
    pub fn history_of(&self, k: usize) -> History {
        let mut out = vec![0; self.alphabet.len()];
        let mut rest = k;
        for (slot, &size) in out.iter_mut().zip(&self.alphabet).rev() {
            *slot = rest % size;
            rest /= size;
        }
        out
    }

    pub fn register_dim(&self) -> usize {
        self.scheme.dim_a()
    }
}

fn encode(digits: &[usize], radices: &[usize]) -> usize {
    digits.iter().zip(radices).fold(0, |acc, (&d, &r)| acc * r + d)
}

fn all_tuples(radices: &[usize]) -> Vec<Vec<usize>> {
    let total: usize = radices.iter().product();
    (0..total)
        .map(|mut k| {
            let mut out = vec![0; radices.len()];
            for (slot, &r) in out.iter_mut().zip(radices).rev() {
                *slot = k % r;
                k /= r;
            }
            out
        })
        .collect()
}

/// Stores the classical registers in an ancilla of dimension
/// `prod_{t<N} |alphabet_t|`; every operation is diagonal in the registers.
pub fn compile_cma_to_separable(policy: &SchemePolicy) -> Result<CompiledCma> {
    let depth = policy.depth;
    let dim_s = policy.dim();
    let mut alphabet = vec![1usize; depth + 1];
    alphabet[0] = policy.initial.len();
    for (h, instr) in &policy.instruments {
        alphabet[h.len()] = alphabet[h.len()].max(instr.len());
    }
    for povm in policy.povms.values() {
        alphabet[depth] = alphabet[depth].max(povm.len());
    }
    let regs = &alphabet[..depth];
    let dim_a: usize = regs.iter().product();

    // ancilla operator mapping register digits: digits < t fixed to `prefix`,
    // digit t sent from `from` to `to`, digits > t untouched
    let register_map = |prefix: &[usize], t: usize, from: usize, to: usize| -> Mat {
        let mut m = Mat::zeros(dim_a, dim_a);
        for digits in all_tuples(regs) {
            if digits[..t] == *prefix && digits[t] == from {
                let mut target = digits.clone();
                target[t] = to;
                m[(encode(&target, regs), encode(&digits, regs))] = Complex64::new(1.0, 0.0);
            }
        }
        m
    };

    let mut initial = Vec::with_capacity(policy.initial.len());
    for (o0, rho) in policy.initial.iter().enumerate() {
        let mut digits = vec![0; depth];
        digits[0] = o0;
        let sigma = crate::linalg::unit(dim_a, encode(&digits, regs), encode(&digits, regs));
        let t = real_trace(rho);
        // sub-normalized states are split into a normalized system factor and a weighted ancilla factor
        if t > PRUNE_THRESHOLD {
            initial.push((sigma * c(t), rho / c(t)));
        }
    }

    let mut channels = Vec::with_capacity(depth.saturating_sub(1));
    for t in 1..depth {
        let mut terms = Vec::new();
        for prefix in all_tuples(&regs[..t]) {
            let fallback;
            let instr = match policy.instruments.get(&prefix) {
                Some(i) => i,
                None => {
                    fallback = Instrument::identity(dim_s);
                    &fallback
                }
            };
            for (o, branch) in instr.branches().iter().enumerate() {
                let kraus = (0..regs[t]).map(|m| register_map(&prefix, t, m, o)).collect();
                terms.push((KrausBranch::new(dim_a, kraus)?, branch.clone()));
            }
        }
        channels.push(terms);
    }

    let mut povm = Vec::new();
    for prefix in all_tuples(regs) {
        let idx = encode(&prefix, regs);
        let proj = crate::linalg::unit(dim_a, idx, idx);
        for o in 0..alphabet[depth] {
            let element = match policy.povms.get(&prefix) {
                Some(p) if o < p.len() => p.elements()[o].clone(),
                Some(_) => Mat::zeros(dim_s, dim_s),
                None if o == 0 => identity(dim_s),
                None => Mat::zeros(dim_s, dim_s),
            };
            povm.push(vec![(proj.clone(), element)]);
        }
    }
    let scheme = SeparableScheme::new(policy.n, dim_a, initial, channels, povm)?;
    Ok(CompiledCma { scheme, alphabet })
}

// ---------------------------------------------------------------------------
// JSON scheme files.

/// `[[ [re, im], ... ], ...]`, row major.
pub type MatrixJson = Vec<Vec<[f64; 2]>>;

pub fn matrix_to_json(m: &Mat) -> MatrixJson {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
        .collect()
}

pub fn matrix_from_json(rows: &MatrixJson) -> Result<Mat> {
    let dim = rows.len();
    if dim == 0 || rows.iter().any(|r| r.len() != dim) {
        return Err(Error::InvalidScheme("matrix must be square and nonempty".into()));
    }
    Ok(Mat::from_fn(dim, dim, |i, j| Complex64::new(rows[i][j][0], rows[i][j][1])))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstrumentEntry {
    pub history: History,
    /// One list of Kraus operators per outcome.
    pub branches: Vec<Vec<MatrixJson>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PovmEntry {
    pub history: History,
    pub elements: Vec<MatrixJson>,
}

/// On-disk scheme description.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeFile {
    pub n: usize,
    pub depth: usize,
    pub initial: Vec<MatrixJson>,
    pub instruments: Vec<InstrumentEntry>,
    pub povms: Vec<PovmEntry>,
}

impl SchemeFile {
    pub fn from_policy(policy: &SchemePolicy) -> Self {
        Self {
            n: policy.n,
            depth: policy.depth,
            initial: policy.initial.iter().map(matrix_to_json).collect(),
            instruments: policy
                .instruments
                .iter()
                .map(|(h, instr)| InstrumentEntry {
                    history: h.clone(),
                    branches: instr
                        .branches()
                        .iter()
                        .map(|b| b.kraus().iter().map(matrix_to_json).collect())
                        .collect(),
                })
                .collect(),
            povms: policy
                .povms
                .iter()
                .map(|(h, p)| PovmEntry {
                    history: h.clone(),
                    elements: p.elements().iter().map(matrix_to_json).collect(),
                })
                .collect(),
        }
    }

    pub fn to_policy(&self) -> Result<SchemePolicy> {
        let dim = 1usize << self.n.min(MAX_SCHEME_QUBITS + 1);
        let initial = self.initial.iter().map(matrix_from_json).collect::<Result<Vec<_>>>()?;
        let mut instruments = BTreeMap::new();
        for entry in &self.instruments {
            let branches = entry
                .branches
                .iter()
                .map(|ks| {
                    let kraus = ks.iter().map(matrix_from_json).collect::<Result<Vec<_>>>()?;
                    KrausBranch::new(dim, kraus)
                })
                .collect::<Result<Vec<_>>>()?;
            if instruments.insert(entry.history.clone(), Instrument::new(branches)?).is_some() {
                return Err(Error::InvalidScheme(format!("duplicate instrument for {:?}", entry.history)));
            }
        }
        let mut povms = BTreeMap::new();
        for entry in &self.povms {
            let elements = entry.elements.iter().map(matrix_from_json).collect::<Result<Vec<_>>>()?;
            if povms.insert(entry.history.clone(), Povm::new(elements)?).is_some() {
                return Err(Error::InvalidScheme(format!("duplicate POVM for {:?}", entry.history)));
            }
        }
        SchemePolicy::new(self.n, self.depth, initial, instruments, povms)
    }

    pub fn load(path: &Path) -> Result<SchemePolicy> {
        let text = std::fs::read_to_string(path)?;
        let file: SchemeFile = serde_json::from_str(&text)?;
        file.to_policy()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{hypothesis_channel, Sign};
    use crate::linalg::{projector, random_density, unit};
    use crate::pauli::PauliString;
    use nalgebra::DVector;

    fn plus_state() -> Mat {
        let v = DVector::from_vec(vec![c(1.0 / 2f64.sqrt()), c(1.0 / 2f64.sqrt())]);
        projector(&v)
    }

    fn hadamard() -> Mat {
        let s = 1.0 / 2f64.sqrt();
        Mat::from_row_slice(2, 2, &[c(s), c(s), c(s), c(-s)])
    }

    fn pauli(s: &str) -> PauliString {
        s.parse().unwrap()
    }

    #[test]
    fn channel_application_examples() {
        let mut rng = <ChaCha8Rng as SeedableRng>::seed_from_u64(1);
        let rho = random_density(4, 2, &mut rng);
        let id = PauliChannel::identity(2).unwrap();
        assert!(max_abs_diff(&apply_channel(&id, &rho).unwrap(), &rho) < 1e-12);
        let dep = PauliChannel::completely_depolarizing(2).unwrap();
        assert!(max_abs_diff(&apply_channel(&dep, &rho).unwrap(), &(identity(4) * c(0.25))) < 1e-12);

        // only the X component of |+><+| survives, scaled by lambda_X
        let ch = hypothesis_channel(1, &pauli("Z"), Sign::Plus, 0.3).unwrap();
        let out = apply_channel(&ch, &plus_state()).unwrap();
        assert!(max_abs_diff(&out, &(identity(2) * c(0.5))) < 1e-12);
        let ch = hypothesis_channel(1, &pauli("X"), Sign::Plus, 0.3).unwrap();
        let out = apply_channel(&ch, &plus_state()).unwrap();
        let x = pauli("X").to_matrix().unwrap();
        let expect = (identity(2) + x * c(0.3)) * c(0.5);
        assert!(max_abs_diff(&out, &expect) < 1e-12);
        assert!(max_abs_diff(&apply_channel_kraus(&ch, &plus_state()).unwrap(), &expect) < 1e-12);
        assert!(apply_channel(&ch, &identity(4)).is_err());
    }

    #[test]
    fn coefficient_route_matches_kraus_route() {
        let mut rng = <ChaCha8Rng as SeedableRng>::seed_from_u64(5);
        for n in 1..=2 {
            let ch = crate::random::random_pauli_channel(n, &mut rng).unwrap();
            let rho = random_density(1 << n, 2, &mut rng);
            let a = apply_channel(&ch, &rho).unwrap();
            let b = apply_channel_kraus(&ch, &rho).unwrap();
            assert!(max_abs_diff(&a, &b) < 1e-12);
        }
    }

    #[test]
    fn instrument_examples() {
        let rho = plus_state();
        let id = Instrument::identity(2);
        let out = id.apply(&rho).unwrap();
        assert_eq!(out.len(), 1);
        assert!((out[0].probability - 1.0).abs() < 1e-12);
        assert!(max_abs_diff(&out[0].state, &rho) < 1e-12);

        let z = Instrument::computational_measurement(2);
        let out = z.apply(&rho).unwrap();
        assert_eq!(out.len(), 2);
        assert!(out.iter().all(|o| (o.probability - 0.5).abs() < 1e-12));

        let zero = Instrument::computational_measurement(2).apply(&unit(2, 0, 0)).unwrap();
        assert_eq!(zero.len(), 1, "zero-probability outcome omitted");
    }

    #[test]
    fn povm_element_examples() {
        assert!(max_abs_diff(&KrausBranch::identity(2).povm_element(), &identity(2)) < 1e-15);
        // K = |0><+|
        let k = Mat::from_row_slice(2, 2, &[c(1.0 / 2f64.sqrt()), c(1.0 / 2f64.sqrt()), c(0.0), c(0.0)]);
        let e = povm_element_of(&KrausBranch::single(k.clone()).unwrap());
        assert!(max_abs_diff(&e, &plus_state()) < 1e-12);
        let mut rng = <ChaCha8Rng as SeedableRng>::seed_from_u64(2);
        for _ in 0..10 {
            let instr = crate::random::random_instrument(4, &mut rng);
            let rho = random_density(4, 2, &mut rng);
            for b in instr.branches() {
                let lhs = (b.povm_element() * &rho).trace().re;
                let rhs = real_trace(&b.apply(&rho));
                assert!((lhs - rhs).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn triviality_examples() {
        assert!(Instrument::identity(2).is_trivial(1e-9));
        assert!(!Instrument::computational_measurement(2).is_trivial(1e-9));
        let coin = Instrument::new(vec![KrausBranch::identity(2).scaled(0.5), KrausBranch::identity(2).scaled(0.5)]).unwrap();
        assert!(coin.is_trivial(1e-9));
    }

    #[test]
    fn invalid_instruments_rejected() {
        assert!(Instrument::new(vec![]).is_err());
        assert!(Instrument::new(vec![KrausBranch::identity(2).scaled(0.5)]).is_err());
        assert!(Instrument::new(vec![KrausBranch::identity(2), KrausBranch::identity(2)]).is_err());
        assert!(Povm::new(vec![identity(2) * c(2.0), identity(2) * c(-1.0)]).is_err());
    }

    fn single_step(initial: Mat, povm: Povm) -> SchemePolicy {
        SchemePolicy::oblivious(1, vec![initial], vec![], povm).unwrap()
    }

    #[test]
    fn exact_run_examples() {
        let p = single_step(unit(2, 0, 0), Povm::computational(2));
        let d = run_scheme_exact(&p, &PauliChannel::identity(1).unwrap()).unwrap();
        assert!((d.prob(&[0, 0]) - 1.0).abs() < 1e-12);

        let eps0 = 0.3;
        let p = single_step(plus_state(), Povm::from_basis(&hadamard()).unwrap());
        let ch = hypothesis_channel(1, &pauli("X"), Sign::Plus, eps0).unwrap();
        let d = run_scheme_exact(&p, &ch).unwrap();
        assert!((d.prob(&[0, 0]) - (1.0 + eps0) / 2.0).abs() < 1e-12);
        let ch = hypothesis_channel(1, &pauli("Z"), Sign::Plus, eps0).unwrap();
        let d = run_scheme_exact(&p, &ch).unwrap();
        assert!((d.prob(&[0, 0]) - 0.5).abs() < 1e-12);
        assert!((d.total() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sampled_runs_match_exact_distribution() {
        let mut rng = <ChaCha8Rng as SeedableRng>::seed_from_u64(11);
        let policy = crate::random::random_policy(1, 2, &mut rng).unwrap();
        let ch = crate::random::random_pauli_channel(1, &mut rng).unwrap();
        let exact = run_scheme_exact(&policy, &ch).unwrap();
        let (target, p) = exact.entries().iter().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
        let shots = 100_000;
        let mut hits = 0usize;
        let mut sampler = <ChaCha8Rng as SeedableRng>::seed_from_u64(99);
        for _ in 0..shots {
            if &run_scheme_sampled_with(&policy, &ch, &mut sampler).unwrap() == target {
                hits += 1;
            }
        }
        let freq = hits as f64 / shots as f64;
        let sigma = (p * (1.0 - p) / shots as f64).sqrt();
        assert!((freq - p).abs() <= 4.0 * sigma + 1e-12, "freq {freq} vs {p}");
    }

    #[test]
    fn sampled_runs_are_reproducible() {
        let mut rng = <ChaCha8Rng as SeedableRng>::seed_from_u64(4);
        let policy = crate::random::random_policy(1, 3, &mut rng).unwrap();
        let ch = crate::random::random_pauli_channel(1, &mut rng).unwrap();
        for seed in [0u64, 1, 2] {
            let a = run_scheme_sampled(&policy, &ch, seed).unwrap();
            let b = run_scheme_sampled(&policy, &ch, seed).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.len(), policy.depth() + 1);
        }
    }

    #[test]
    fn disjoint_seeds_are_uncorrelated() {
        // Pearson correlation of an indicator across paired runs with different seeds
        let policy = single_step(plus_state(), Povm::computational(2));
        let ch = PauliChannel::identity(1).unwrap();
        let runs = 4000;
        let xs: Vec<f64> = (0..runs).map(|i| run_scheme_sampled(&policy, &ch, 2 * i).unwrap()[1] as f64).collect();
        let ys: Vec<f64> = (0..runs).map(|i| run_scheme_sampled(&policy, &ch, 2 * i + 1).unwrap()[1] as f64).collect();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let (mx, my) = (mean(&xs), mean(&ys));
        let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / runs as f64;
        let sx = (xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>() / runs as f64).sqrt();
        let sy = (ys.iter().map(|y| (y - my).powi(2)).sum::<f64>() / runs as f64).sqrt();
        let r = cov / (sx * sy);
        assert!(r.abs() < 4.0 / (runs as f64).sqrt(), "correlation {r}");
    }

    #[test]
    fn measurement_counts() {
        let trivial = SchemePolicy::oblivious(1, vec![unit(2, 0, 0)], vec![Instrument::identity(2); 2], Povm::trivial(2)).unwrap();
        assert_eq!(count_measurements(&trivial), 0);
        let proj = SchemePolicy::oblivious(1, vec![plus_state()], vec![Instrument::computational_measurement(2); 2], Povm::computational(2)).unwrap();
        assert_eq!(count_measurements(&proj), 3);

        // branch 0 measures again, branch 1 does nothing and ends trivially
        let mut instruments = BTreeMap::new();
        instruments.insert(vec![0], Instrument::computational_measurement(2));
        instruments.insert(vec![0, 0], Instrument::computational_measurement(2));
        instruments.insert(vec![0, 1], Instrument::identity(2));
        let mut povms = BTreeMap::new();
        for o in 0..2 {
            povms.insert(vec![0, 0, o], Povm::trivial(2));
        }
        povms.insert(vec![0, 1, 0], Povm::trivial(2));
        let adaptive = SchemePolicy::new(1, 3, vec![plus_state()], instruments, povms).unwrap();
        assert_eq!(count_measurements(&adaptive), 2);
    }

    #[test]
    fn inserting_identity_keeps_counts() {
        let mut rng = <ChaCha8Rng as SeedableRng>::seed_from_u64(8);
        for _ in 0..10 {
            let p = crate::random::random_policy(1, 2, &mut rng).unwrap();
            for step in 1..=p.depth() {
                let q = p.with_identity_inserted(step).unwrap();
                assert_eq!(count_measurements(&q), count_measurements(&p));
            }
        }
    }

    #[test]
    fn missing_entries_rejected() {
        let mut instruments = BTreeMap::new();
        instruments.insert(vec![0], Instrument::computational_measurement(2));
        let mut povms = BTreeMap::new();
        povms.insert(vec![0, 0], Povm::trivial(2));
        assert!(SchemePolicy::new(1, 2, vec![plus_state()], instruments, povms).is_err());
    }

    #[test]
    fn too_many_leaves_rejected() {
        let p = SchemePolicy::oblivious(1, vec![plus_state()], vec![Instrument::computational_measurement(2); 3], Povm::computational(2)).unwrap();
        match run_scheme_exact_capped(&p, &PauliChannel::identity(1).unwrap(), 8) {
            Err(Error::TreeTooLarge { estimate, cap }) => assert_eq!((estimate, cap), (16, 8)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn mu_recurrence_examples() {
        let eps0 = 0.25;
        for sign in [1.0, -1.0] {
            assert!((mu_recurrence_step(0.6, 1.0, 0.0, 1.0, 0.0, sign, eps0).unwrap() - sign * eps0 * 0.6).abs() < 1e-15);
            assert_eq!(mu_recurrence_step(0.3, 0.5, 0.5, 0.0, 0.0, sign, eps0).unwrap(), 1.0);
        }
        assert!(matches!(mu_recurrence_step(1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.1), Err(Error::ZeroProbability(_))));
    }

    #[test]
    fn mu_recurrence_matches_dense_update() {
        let mut rng = <ChaCha8Rng as SeedableRng>::seed_from_u64(21);
        let a = pauli("Y");
        let pa = a.to_matrix().unwrap();
        for _ in 0..20 {
            let instr = crate::random::random_instrument(2, &mut rng);
            let rho = random_density(2, 1, &mut rng);
            for sign in Sign::BOTH {
                let eps0 = 0.3;
                let ch = hypothesis_channel(1, &a, sign, eps0).unwrap();
                let mu = (&pa * &rho).trace().re;
                let after = apply_channel(&ch, &rho).unwrap();
                for b in instr.branches() {
                    let out = b.apply(&after);
                    let t = real_trace(&out);
                    if t < 1e-10 {
                        continue;
                    }
                    let dense = (&pa * &out).trace().re / t;
                    let ai = a.index();
                    let rec = mu_recurrence_step(mu, b.ptm_entry(0, 0), b.ptm_entry(ai, 0), b.ptm_entry(ai, ai), b.ptm_entry(0, ai), sign.value(), eps0).unwrap();
                    assert!((dense - rec).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn scheme_file_round_trip() {
        let mut rng = <ChaCha8Rng as SeedableRng>::seed_from_u64(6);
        let p = crate::random::random_policy(1, 2, &mut rng).unwrap();
        let json = serde_json::to_string(&SchemeFile::from_policy(&p)).unwrap();
        let back: SchemeFile = serde_json::from_str(&json).unwrap();
        let q = back.to_policy().unwrap();
        let ch = crate::random::random_pauli_channel(1, &mut rng).unwrap();
        let (d1, d2) = (run_scheme_exact(&p, &ch).unwrap(), run_scheme_exact(&q, &ch).unwrap());
        assert!(d1.max_abs_diff(&d2) < 1e-12);
        assert!(serde_json::from_str::<SchemeFile>(r#"{"n":1,"depth":1,"initial":[],"instruments":[],"povms":[],"extra":1}"#).is_err());
    }

    #[test]
    fn trivial_ancilla_compiles_to_system_scheme() {
        let mut rng = <ChaCha8Rng as SeedableRng>::seed_from_u64(12);
        let p = crate::random::random_policy(1, 1, &mut rng).unwrap();
        let compiled = compile_cma_to_separable(&p).unwrap();
        let ch = crate::random::random_pauli_channel(1, &mut rng).unwrap();
        let sep = compiled.scheme.run_exact(&ch).unwrap();
        let cma = run_scheme_exact(&p, &ch).unwrap();
        for (k, prob) in sep.iter().enumerate() {
            assert!((prob - cma.prob(&compiled.history_of(k))).abs() < 1e-12);
        }
        assert_eq!(compiled.register_dim(), compiled.alphabet[..p.depth()].iter().product::<usize>());
    }
}
