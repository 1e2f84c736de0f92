//! Random generators for channels, instruments and schemes used as test
//! workloads.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution as _, Exp1};

use crate::channel::{Partition, PauliChannel};
use crate::error::Result;
use crate::linalg::{c, random_density, random_isometry, random_unitary, Mat};
use crate::scheme::{History, Instrument, KrausBranch, Povm, SchemePolicy, SeparableScheme};

/// Largest number of outcomes a random instrument may have.
pub const MAX_RANDOM_OUTCOMES: usize = 3;

/// A random Pauli channel with exponentially distributed error-rate weights.
pub fn random_pauli_channel<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<PauliChannel> {
    let len = 1usize << (2 * n);
    let mut rates: Vec<f64> = (0..len)
        .map(|_| {
            let w: f64 = Exp1.sample(rng);
            w
        })
        .collect();
    // skew toward the identity so eigenvalues are not all tiny
    rates[0] += len as f64 * rng.random::<f64>();
    let total: f64 = rates.iter().sum();
    rates.iter_mut().for_each(|p| *p /= total);
    PauliChannel::from_error_rates(rates)
}

/// Random instrument from a Haar isometry `V: C^d -> C^{k d r}` cut into
/// `k` outcomes with `r` Kraus operators each.
pub fn random_isometry_instrument<R: Rng + ?Sized>(dim: usize, outcomes: usize, rank: usize, rng: &mut R) -> Instrument {
    let v = random_isometry(outcomes * rank * dim, dim, rng);
    let branches = (0..outcomes)
        .map(|o| {
            let kraus = (0..rank)
                .map(|r| v.rows((o * rank + r) * dim, dim).into_owned())
                .collect();
            KrausBranch::new(dim, kraus).expect("square blocks")
        })
        .collect();
    Instrument::new(branches).expect("isometry blocks form an instrument")
}

/// Projective measurement in a Haar-random basis with random grouping.
pub fn random_projective_instrument<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Instrument {
    let basis = random_unitary(dim, rng);
    let outcomes = rng.random_range(1..=dim.min(MAX_RANDOM_OUTCOMES));
    let mut groups = vec![1; outcomes];
    for _ in outcomes..dim {
        let g = rng.random_range(0..outcomes);
        groups[g] += 1;
    }
    Instrument::projective(&basis, &groups).expect("valid grouping")
}

/// Draws one of: identity, random unitary, projective, isometry fragments.
pub fn random_instrument<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Instrument {
    match rng.random_range(0..4) {
        0 => Instrument::identity(dim),
        1 => Instrument::new(vec![KrausBranch::single(random_unitary(dim, rng)).expect("square")]).expect("unitary"),
        2 => random_projective_instrument(dim, rng),
        _ => {
            let outcomes = rng.random_range(1..=MAX_RANDOM_OUTCOMES);
            let rank = rng.random_range(1..=2);
            random_isometry_instrument(dim, outcomes, rank, rng)
        }
    }
}

pub fn random_povm<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Povm {
    Povm::from_instrument(&random_instrument(dim, rng))
}

/// Random initial ensemble with at most [`MAX_RANDOM_OUTCOMES`] members.
pub fn random_ensemble<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<Mat> {
    let members = rng.random_range(1..=MAX_RANDOM_OUTCOMES);
    let mut weights: Vec<f64> = (0..members).map(|_| 0.05 + rng.random::<f64>()).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    weights
        .into_iter()
        .map(|w| random_density(dim, rng.random_range(1..=2), rng) * c(w))
        .collect()
}

/// Random partition of the non-identity indices into blocks of at most
/// `max_block` elements.
pub fn random_partition<R: Rng + ?Sized>(n: usize, max_block: usize, rng: &mut R) -> Result<Partition> {
    let mut indices: Vec<usize> = (1..(1usize << (2 * n))).collect();
    indices.shuffle(rng);
    let mut blocks = Vec::new();
    let mut rest = indices.as_slice();
    while !rest.is_empty() {
        let size = rng.random_range(1..=max_block.max(1)).min(rest.len());
        let (head, tail) = rest.split_at(size);
        let mut block = head.to_vec();
        block.sort_unstable();
        blocks.push(block);
        rest = tail;
    }
    Partition::new(n, blocks)
}

/// A fully adaptive random policy: independent instruments at every history.
pub fn random_policy<R: Rng + ?Sized>(n: usize, depth: usize, rng: &mut R) -> Result<SchemePolicy> {
    let dim = 1usize << n;
    let initial = random_ensemble(dim, rng);
    let mut instruments = BTreeMap::new();
    let mut povms = BTreeMap::new();
    let mut stack: Vec<History> = (0..initial.len()).map(|o| vec![o]).collect();
    while let Some(h) = stack.pop() {
        if h.len() == depth {
            povms.insert(h, random_povm(dim, rng));
            continue;
        }
        let instr = random_instrument(dim, rng);
        for o in 0..instr.len() {
            let mut child = h.clone();
            child.push(o);
            stack.push(child);
        }
        instruments.insert(h, instr);
    }
    SchemePolicy::new(n, depth, initial, instruments, povms)
}

fn random_channel_branch<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> KrausBranch {
    let instr = random_isometry_instrument(dim, 1, rng.random_range(1..=2), rng);
    instr.branches()[0].clone()
}

/// Random separable scheme. Each intermediate operation is either "measure
/// the ancilla, then act on the system" or the mirror image, so it is
/// trace preserving and separable by construction.
pub fn random_separable_scheme<R: Rng + ?Sized>(n: usize, dim_a: usize, depth: usize, rng: &mut R) -> Result<SeparableScheme> {
    let dim_s = 1usize << n;
    let members = rng.random_range(1..=MAX_RANDOM_OUTCOMES);
    let mut weights: Vec<f64> = (0..members).map(|_| 0.05 + rng.random::<f64>()).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    let initial = weights
        .into_iter()
        .map(|w| (random_density(dim_a, 1, rng) * c(w), random_density(dim_s, rng.random_range(1..=2), rng)))
        .collect();

    let mut channels = Vec::with_capacity(depth.saturating_sub(1));
    for _ in 1..depth {
        let outcomes = rng.random_range(1..=MAX_RANDOM_OUTCOMES);
        let rank = rng.random_range(1..=2);
        let terms = if rng.random::<bool>() {
            let instr = random_isometry_instrument(dim_a, outcomes, rank, rng);
            instr
                .branches()
                .iter()
                .map(|a| (a.clone(), random_channel_branch(dim_s, rng)))
                .collect()
        } else {
            let instr = random_isometry_instrument(dim_s, outcomes, rank, rng);
            instr
                .branches()
                .iter()
                .map(|b| (random_channel_branch(dim_a, rng), b.clone()))
                .collect()
        };
        channels.push(terms);
    }

    // ancilla POVM {M_j}, then a system POVM chosen by j
    let anc = random_povm(dim_a, rng);
    let outcomes = rng.random_range(1..=MAX_RANDOM_OUTCOMES);
    let mut povm: Vec<Vec<(Mat, Mat)>> = vec![Vec::new(); outcomes];
    for m in anc.elements() {
        let sys = Povm::from_instrument(&random_isometry_instrument(dim_s, outcomes, 1, rng));
        for (k, e) in sys.elements().iter().enumerate() {
            povm[k].push((m.clone(), e.clone()));
        }
    }
    SeparableScheme::new(n, dim_a, initial, channels, povm)
}
