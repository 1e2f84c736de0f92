//! Covers of the non-identity Paulis by maximal commuting subgroups.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pauli::symplectic_index;

/// Largest `n` for the greedy strategy.
pub const MAX_GREEDY_QUBITS: usize = 4;

/// Largest `n` where every maximal subgroup is enumerated.
pub const MAX_EXHAUSTIVE_QUBITS: usize = 3;

/// Largest `n` for the product strategy (`3^n` groups of `2^n` elements).
pub const MAX_PRODUCT_QUBITS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoverStrategy {
    Greedy,
    Product,
}

/// A maximal abelian subgroup (modulo phases), given by `n` generators.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CommutingGroup {
    n: usize,
    generators: Vec<usize>,
    elements: Vec<usize>,
}

fn span(generators: &[usize]) -> Vec<usize> {
    let mut elements = vec![0usize];
    for &g in generators {
        let extra: Vec<usize> = elements.iter().map(|e| e ^ g).collect();
        elements.extend(extra);
    }
    elements.sort_unstable();
    elements
}

/// Picks a basis of the span of `elements` greedily.
fn basis_of(elements: &[usize]) -> Vec<usize> {
    let mut basis = Vec::new();
    let mut spanned: BTreeSet<usize> = BTreeSet::from([0]);
    for &e in elements {
        if !spanned.contains(&e) {
            basis.push(e);
            let extra: Vec<usize> = spanned.iter().map(|s| s ^ e).collect();
            spanned.extend(extra);
        }
    }
    basis
}

impl CommutingGroup {
    /// Builds the group and validates commutation, independence and maximality.
    pub fn from_generators(n: usize, generators: Vec<usize>) -> Result<Self> {
        let len = 1usize << (2 * n);
        if generators.len() != n {
            return Err(Error::InvalidCover(format!("{} generators for n = {n}", generators.len())));
        }
        for (i, &g) in generators.iter().enumerate() {
            if g == 0 || g >= len {
                return Err(Error::InvalidCover(format!("generator {g} is not a non-identity Pauli")));
            }
            for &h in &generators[..i] {
                if symplectic_index(g, h) != 0 {
                    return Err(Error::InvalidCover(format!("generators {g} and {h} anticommute")));
                }
            }
        }
        let elements = span(&generators);
        let distinct: BTreeSet<usize> = elements.iter().copied().collect();
        if distinct.len() != 1 << n {
            return Err(Error::InvalidCover("generators are not independent".into()));
        }
        Ok(Self { n, generators, elements })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn generators(&self) -> &[usize] {
        &self.generators
    }

    /// All `2^n` elements including the identity, sorted.
    pub fn elements(&self) -> &[usize] {
        &self.elements
    }

    pub fn contains(&self, a: usize) -> bool {
        self.elements.binary_search(&a).is_ok()
    }
}

/// Checks every group and that the union covers all non-identity Paulis.
pub fn validate_cover(n: usize, groups: &[CommutingGroup]) -> Result<()> {
    let len = 1usize << (2 * n);
    let mut covered = vec![false; len];
    for g in groups {
        if g.n != n {
            return Err(Error::InvalidCover(format!("group on {} qubits in an n = {n} cover", g.n)));
        }
        CommutingGroup::from_generators(n, g.generators.clone())?;
        for (i, &a) in g.elements.iter().enumerate() {
            for &b in &g.elements[..i] {
                if symplectic_index(a, b) != 0 {
                    return Err(Error::InvalidCover(format!("{a} and {b} anticommute")));
                }
            }
            covered[a] = true;
        }
    }
    if let Some(a) = (1..len).find(|&a| !covered[a]) {
        return Err(Error::InvalidCover(format!("Pauli {a} is not covered")));
    }
    Ok(())
}

/// The `3^n` groups generated by one single-qubit Pauli per qubit.
pub fn product_cover(n: usize) -> Result<Vec<CommutingGroup>> {
    if n == 0 || n > MAX_PRODUCT_QUBITS {
        return Err(Error::TooManyQubits {
            what: "product cover",
            n,
            cap: MAX_PRODUCT_QUBITS,
        });
    }
    let count = 3usize.pow(n as u32);
    (0..count)
        .map(|mut choice| {
            // letters 1, 2, 3 in the two index bits of qubit k
            let generators = (0..n)
                .map(|k| {
                    let letter = choice % 3 + 1;
                    choice /= 3;
                    letter << (2 * k)
                })
                .collect();
            CommutingGroup::from_generators(n, generators)
        })
        .collect()
}

/// Every maximal abelian subgroup, as sorted element lists (`n <= 3`).
pub fn all_maximal_subgroups(n: usize) -> Result<Vec<Vec<usize>>> {
    if n == 0 || n > MAX_EXHAUSTIVE_QUBITS {
        return Err(Error::TooManyQubits {
            what: "exhaustive subgroup enumeration",
            n,
            cap: MAX_EXHAUSTIVE_QUBITS,
        });
    }
    let len = 1usize << (2 * n);
    let mut found = BTreeSet::new();
    fn extend(n: usize, len: usize, elements: Vec<usize>, last: usize, found: &mut BTreeSet<Vec<usize>>) {
        if elements.len() == 1 << n {
            found.insert(elements);
            return;
        }
        // generators added in increasing order and outside the current span
        for v in (last + 1)..len {
            if elements.binary_search(&v).is_ok() || elements.iter().any(|&e| symplectic_index(e, v) != 0) {
                continue;
            }
            let mut next = elements.clone();
            next.extend(elements.iter().map(|e| e ^ v));
            next.sort_unstable();
            extend(n, len, next, v, found);
        }
    }
    extend(n, len, vec![0], 0, &mut found);
    Ok(found.into_iter().collect())
}

/// Smallest set of subgroups partitioning the non-identity Paulis, by
/// depth-first exact-cover search (`n <= 3`).
fn exact_cover(n: usize) -> Result<Vec<Vec<usize>>> {
    let groups = all_maximal_subgroups(n)?;
    let len = 1usize << (2 * n);
    let mut by_element: Vec<Vec<usize>> = vec![Vec::new(); len];
    for (gi, g) in groups.iter().enumerate() {
        for &e in &g[1..] {
            by_element[e].push(gi);
        }
    }
    fn search(
        groups: &[Vec<usize>],
        by_element: &[Vec<usize>],
        covered: &mut Vec<bool>,
        chosen: &mut Vec<usize>,
    ) -> bool {
        let Some(first) = (1..covered.len()).find(|&e| !covered[e]) else {
            return true;
        };
        for &gi in &by_element[first] {
            let g = &groups[gi];
            if g[1..].iter().any(|&e| covered[e]) {
                continue;
            }
            g[1..].iter().for_each(|&e| covered[e] = true);
            chosen.push(gi);
            if search(groups, by_element, covered, chosen) {
                return true;
            }
            chosen.pop();
            g[1..].iter().for_each(|&e| covered[e] = false);
        }
        false
    }
    let mut covered = vec![false; len];
    let mut chosen = Vec::new();
    if !search(&groups, &by_element, &mut covered, &mut chosen) {
        return Err(Error::InvalidCover(format!("no disjoint cover found at n = {n}")));
    }
    Ok(chosen.into_iter().map(|gi| groups[gi].clone()).collect())
}

/// Randomized greedy: each new group starts from an uncovered Pauli and is
/// extended by commuting Paulis, preferring uncovered ones.
fn randomized_greedy(n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let len = 1usize << (2 * n);
    let mut covered = vec![false; len];
    covered[0] = true;
    let mut out = Vec::new();
    while covered.iter().any(|c| !c) {
        let mut uncovered: Vec<usize> = (1..len).filter(|&a| !covered[a]).collect();
        let mut others: Vec<usize> = (1..len).filter(|&a| covered[a]).collect();
        uncovered.shuffle(rng);
        others.shuffle(rng);
        let mut elements = vec![0usize];
        // prefer candidates that add the most uncovered elements
        for pool in [&uncovered, &others] {
            for &v in pool.iter() {
                if elements.len() == 1 << n {
                    break;
                }
                if elements.contains(&v) || elements.iter().any(|&e| symplectic_index(e, v) != 0) {
                    continue;
                }
                let extra: Vec<usize> = elements.iter().map(|e| e ^ v).collect();
                elements.extend(extra);
            }
        }
        elements.sort_unstable();
        for &e in &elements {
            covered[e] = true;
        }
        out.push(elements);
    }
    out
}

/// Restarts of [`randomized_greedy`] kept for the `n = 4` search.
pub const GREEDY_RESTARTS: usize = 64;

/// A cover by maximal commuting subgroups. Greedy is exact (disjoint,
/// `2^n + 1` groups) for `n <= 3` and randomized for `n = 4`; `seed` only
/// affects the randomized case.
pub fn commuting_cover(n: usize, strategy: CoverStrategy, seed: u64) -> Result<Vec<CommutingGroup>> {
    let element_sets = match strategy {
        CoverStrategy::Product => return product_cover(n),
        CoverStrategy::Greedy if n == 0 || n > MAX_GREEDY_QUBITS => {
            return Err(Error::TooManyQubits {
                what: "greedy cover",
                n,
                cap: MAX_GREEDY_QUBITS,
            })
        }
        CoverStrategy::Greedy if n <= MAX_EXHAUSTIVE_QUBITS => exact_cover(n)?,
        CoverStrategy::Greedy => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..GREEDY_RESTARTS)
                .map(|_| randomized_greedy(n, &mut rng))
                .min_by_key(Vec::len)
                .expect("at least one restart")
        }
    };
    let groups = element_sets
        .iter()
        .map(|els| CommutingGroup::from_generators(n, basis_of(&els[1..])))
        .collect::<Result<Vec<_>>>()?;
    validate_cover(n, &groups)?;
    Ok(groups)
}
