//! Exact average total-variation distances between the null channel and the
//! hypothesis families, and numerical checks of the TVD budget.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::bounds::f_of;
use crate::channel::{coarse_hypothesis_channel, hypothesis_channel, Partition, PauliChannel, Sign};
use crate::error::{Error, Result};
use crate::linalg::{c, pauli_expectation, real_trace, Mat};
use crate::pauli::{split_index, PauliString};
use crate::scheme::{
    apply_channel, count_measurements, mu_recurrence_step, run_scheme_exact, Distribution, History, SchemePolicy,
    PRUNE_THRESHOLD,
};

/// Largest `eps0` the TVD budget is proved for.
pub const MAX_EPS0: f64 = 1.0 / 3.0;

/// Numerical slack allowed when comparing exact quantities to their bounds.
pub const CERTIFY_TOLERANCE: f64 = 1e-12;

/// Step factors below this are reported as suspicious.
pub const SMALL_FACTOR: f64 = 0.01;

#[derive(Clone, Debug, PartialEq)]
pub enum FamilyKind {
    /// `Lambda_{a,s}` with `a` uniform over the `4^n - 1` non-identity Paulis.
    Pointwise,
    /// `Lambda_{B,s}` with `B` drawn with probability `|B| / (4^n - 1)`.
    Coarse(Partition),
}

#[derive(Clone, Debug, PartialEq)]
pub struct HypothesisFamily {
    n: usize,
    eps0: f64,
    kind: FamilyKind,
}

/// One hypothesis with its prior weight and support.
#[derive(Clone, Debug)]
pub struct Member {
    pub weight: f64,
    pub block: Vec<usize>,
}

impl HypothesisFamily {
    pub fn pointwise(n: usize, eps0: f64) -> Result<Self> {
        check_eps0(eps0)?;
        Ok(Self {
            n,
            eps0,
            kind: FamilyKind::Pointwise,
        })
    }

    pub fn coarse(partition: Partition, eps0: f64) -> Result<Self> {
        check_eps0(eps0)?;
        Ok(Self {
            n: partition.n(),
            eps0,
            kind: FamilyKind::Coarse(partition),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn eps0(&self) -> f64 {
        self.eps0
    }

    pub fn kind(&self) -> &FamilyKind {
        &self.kind
    }

    /// Hypotheses with their prior weights (summing to one).
    pub fn members(&self) -> Vec<Member> {
        let total = ((1usize << (2 * self.n)) - 1) as f64;
        match &self.kind {
            FamilyKind::Pointwise => (1..(1usize << (2 * self.n)))
                .map(|a| Member {
                    weight: 1.0 / total,
                    block: vec![a],
                })
                .collect(),
            FamilyKind::Coarse(p) => p
                .blocks()
                .iter()
                .map(|b| Member {
                    weight: b.len() as f64 / total,
                    block: b.clone(),
                })
                .collect(),
        }
    }

    pub fn null_channel(&self) -> Result<PauliChannel> {
        PauliChannel::completely_depolarizing(self.n)
    }

    pub fn channel(&self, block: &[usize], sign: Sign) -> Result<PauliChannel> {
        if block.len() == 1 {
            hypothesis_channel(self.n, &PauliString::from_index(self.n, block[0])?, sign, self.eps0)
        } else {
            coarse_hypothesis_channel(self.n, block, sign, self.eps0)
        }
    }

    /// `2^n / (4^n - 1)`.
    pub fn scale(&self) -> f64 {
        let d = (1u64 << self.n) as f64;
        d / (d * d - 1.0)
    }
}

fn check_eps0(eps0: f64) -> Result<()> {
    if !(0.0..=MAX_EPS0 + 1e-15).contains(&eps0) {
        return Err(Error::OutOfRange(format!("eps0 = {eps0} outside [0, 1/3]")));
    }
    Ok(())
}

fn check_sizes(policy: &SchemePolicy, family: &HypothesisFamily) -> Result<()> {
    if policy.n() != family.n() {
        return Err(Error::DimensionMismatch {
            left: policy.n(),
            right: family.n(),
        });
    }
    Ok(())
}

/// `E_{member} TVD(p_0, E_s p_{member,s})`, mixing over `s` inside the distance.
pub fn avg_tvd(policy: &SchemePolicy, family: &HypothesisFamily) -> Result<f64> {
    Ok(per_member_tvd(policy, family)?.iter().map(|(w, t)| w * t).sum())
}

/// `(weight, TVD)` for every member, in member order.
pub fn per_member_tvd(policy: &SchemePolicy, family: &HypothesisFamily) -> Result<Vec<(f64, f64)>> {
    check_sizes(policy, family)?;
    let p0 = run_scheme_exact(policy, &family.null_channel()?)?;
    family
        .members()
        .par_iter()
        .map(|m| {
            let plus = run_scheme_exact(policy, &family.channel(&m.block, Sign::Plus)?)?;
            let minus = run_scheme_exact(policy, &family.channel(&m.block, Sign::Minus)?)?;
            Ok((m.weight, p0.tvd(&plus.mix(&minus))))
        })
        .collect()
}

/// Success probability of the best player in the two-action game, computed
/// as `E_member sum_o max(p_0(o), q(o)) / 2` from the exact distributions.
pub fn optimal_game_success(policy: &SchemePolicy, family: &HypothesisFamily) -> Result<f64> {
    check_sizes(policy, family)?;
    let p0 = run_scheme_exact(policy, &family.null_channel()?)?;
    let mut total = 0.0;
    for m in family.members() {
        let plus = run_scheme_exact(policy, &family.channel(&m.block, Sign::Plus)?)?;
        let minus = run_scheme_exact(policy, &family.channel(&m.block, Sign::Minus)?)?;
        let q = plus.mix(&minus);
        let mut keys: Vec<&History> = p0.entries().keys().collect();
        keys.extend(q.entries().keys().filter(|h| !p0.entries().contains_key(*h)));
        let best: f64 = keys.iter().map(|h| p0.prob(h).max(q.prob(h))).sum();
        total += m.weight * 0.5 * best;
    }
    Ok(total)
}

/// `N_meas * eps0^2 * 2^n / (4^n - 1) * (1 + 2 sqrt(f(eps0)))`.
pub fn tvd_budget(policy: &SchemePolicy, family: &HypothesisFamily) -> Result<f64> {
    check_sizes(policy, family)?;
    budget_for(count_measurements(policy), family.n(), family.eps0())
}

pub fn budget_for(n_meas: usize, n: usize, eps0: f64) -> Result<f64> {
    check_eps0(eps0)?;
    let d = (1u64 << n) as f64;
    Ok(n_meas as f64 * eps0 * eps0 * d / (d * d - 1.0) * (1.0 + 2.0 * f_of(eps0)?.sqrt()))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CertificationReport {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
    pub slack: f64,
    pub n_meas: usize,
    /// Smallest per-step likelihood factor `Pr_{hyp}[o_t | o_<t] / Pr_0[o_t | o_<t]`.
    pub min_step_factor: f64,
}

impl CertificationReport {
    pub fn small_factor(&self) -> bool {
        self.min_step_factor < SMALL_FACTOR
    }
}

/// Compares the exact average TVD with the budget.
pub fn certify_inequality(policy: &SchemePolicy, family: &HypothesisFamily) -> Result<CertificationReport> {
    let lhs = avg_tvd(policy, family)?;
    let rhs = tvd_budget(policy, family)?;
    let min_step_factor = min_step_factor(policy, family)?;
    Ok(CertificationReport {
        lhs,
        rhs,
        holds: lhs <= rhs + CERTIFY_TOLERANCE,
        slack: rhs - lhs,
        n_meas: count_measurements(policy),
        min_step_factor,
    })
}

/// Per-node data collected while walking the history tree under one channel.
struct Node {
    history: History,
    /// normalized state fed into the next channel use
    state: Mat,
}

/// Walks every history with nonzero probability under `channel`, calling
/// `visit` with the normalized input state of each channel use, and
/// `step` with the (Kraus POVM element, channel output) of each outcome.
fn walk(
    policy: &SchemePolicy,
    channel: &PauliChannel,
    visit: &mut dyn FnMut(&Node),
    step: &mut dyn FnMut(&Node, &Mat, &Mat, usize),
) -> Result<()> {
    let mut stack: Vec<Node> = policy
        .initial()
        .iter()
        .enumerate()
        .filter(|(_, rho)| real_trace(rho) > PRUNE_THRESHOLD)
        .map(|(o, rho)| Node {
            history: vec![o],
            state: rho / c(real_trace(rho)),
        })
        .collect();
    while let Some(node) = stack.pop() {
        visit(&node);
        let after = apply_channel(channel, &node.state)?;
        if node.history.len() == policy.depth() {
            if let Some(povm) = policy.povm(&node.history) {
                for (k, e) in povm.elements().iter().enumerate() {
                    step(&node, e, &after, k);
                }
            }
            continue;
        }
        let Some(instr) = policy.instrument(&node.history) else {
            continue;
        };
        for (o, b) in instr.branches().iter().enumerate() {
            let e = b.povm_element();
            step(&node, &e, &after, o);
            let image = b.apply(&after);
            let t = real_trace(&image);
            if t > PRUNE_THRESHOLD {
                let mut history = node.history.clone();
                history.push(o);
                stack.push(Node {
                    history,
                    state: image / c(t),
                });
            }
        }
    }
    Ok(())
}

/// Smallest ratio `Tr(E Lambda(rho)) / Tr(E Lambda_0(rho))` over every
/// hypothesis, sign, history and outcome with `Tr E > 0`.
pub fn min_step_factor(policy: &SchemePolicy, family: &HypothesisFamily) -> Result<f64> {
    check_sizes(policy, family)?;
    let dim = policy.dim() as f64;
    let per_member: Vec<f64> = family
        .members()
        .par_iter()
        .map(|m| {
            let mut best = f64::INFINITY;
            for sign in Sign::BOTH {
                let ch = family.channel(&m.block, sign)?;
                walk(policy, &ch, &mut |_| {}, &mut |_, e, after, _| {
                    let null = real_trace(e) / dim;
                    if null > PRUNE_THRESHOLD {
                        best = best.min((e * after).trace().re / null);
                    }
                })?;
            }
            Ok(best)
        })
        .collect::<Result<_>>()?;
    Ok(per_member.into_iter().fold(f64::INFINITY, f64::min))
}

/// Largest `|mu_dense - mu_recurrence|` over every branch, both signs, for
/// the pointwise hypothesis `a`.
pub fn mu_trajectory_check(policy: &SchemePolicy, a: &PauliString, eps0: f64) -> Result<f64> {
    if a.n() != policy.n() {
        return Err(Error::DimensionMismatch {
            left: policy.n(),
            right: a.n(),
        });
    }
    let ai = a.index();
    let (ax, az) = split_index(ai);
    let mut worst = 0.0f64;
    for sign in Sign::BOTH {
        let ch = hypothesis_channel(policy.n(), a, sign, eps0)?;
        for (o, rho) in policy.initial().iter().enumerate() {
            let t = real_trace(rho);
            if t <= PRUNE_THRESHOLD {
                continue;
            }
            let state = rho / c(t);
            let mu = pauli_expectation(ax, az, &state).re;
            // (history, dense state, recurrence value)
            let mut stack = vec![(vec![o], state, mu)];
            while let Some((h, state, mu_rec)) = stack.pop() {
                let mu_dense = pauli_expectation(ax, az, &state).re;
                worst = worst.max((mu_dense - mu_rec).abs());
                if h.len() == policy.depth() {
                    continue;
                }
                let Some(instr) = policy.instrument(&h) else {
                    continue;
                };
                let after = apply_channel(&ch, &state)?;
                for (o, b) in instr.branches().iter().enumerate() {
                    let image = b.apply(&after);
                    let p = real_trace(&image);
                    if p <= PRUNE_THRESHOLD {
                        continue;
                    }
                    let next = mu_recurrence_step(
                        mu_rec,
                        b.ptm_entry(0, 0),
                        b.ptm_entry(ai, 0),
                        b.ptm_entry(ai, ai),
                        b.ptm_entry(0, ai),
                        sign.value(),
                        eps0,
                    );
                    let Ok(next) = next else {
                        continue;
                    };
                    let mut child = h.clone();
                    child.push(o);
                    stack.push((child, image / c(p), next));
                }
            }
        }
    }
    Ok(worst)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SecondMomentReport {
    /// `2 / (1 - 2 eps0 - eps0^2) * 2^n / (4^n - 1)`.
    pub bound: f64,
    /// `2^n / (4^n - 1)`, the bound at the first channel use.
    pub initial_bound: f64,
    /// Largest averaged second moment over histories of length one.
    pub initial_value: f64,
    /// Largest averaged second moment over all histories and both signs.
    pub max_value: f64,
    pub nodes_checked: usize,
    pub holds: bool,
}

/// Checks `E mu^2 <= 2/(1-2eps0-eps0^2) * 2^n/(4^n-1)` at every history, where
/// the average runs over the family's prior and, for coarse families, over
/// `b` in the block.
pub fn second_moment_check(policy: &SchemePolicy, family: &HypothesisFamily) -> Result<SecondMomentReport> {
    check_sizes(policy, family)?;
    let eps0 = family.eps0();
    let scale = family.scale();
    let bound = 2.0 / (1.0 - 2.0 * eps0 - eps0 * eps0) * scale;
    let members = family.members();
    // per member and sign: history -> E_{b in B} mu_b^2
    let sums: Vec<[BTreeMap<History, f64>; 2]> = members
        .par_iter()
        .map(|m| {
            let mut out: [BTreeMap<History, f64>; 2] = [BTreeMap::new(), BTreeMap::new()];
            for (si, sign) in Sign::BOTH.into_iter().enumerate() {
                let ch = family.channel(&m.block, sign)?;
                let slot = &mut out[si];
                walk(
                    policy,
                    &ch,
                    &mut |node| {
                        let mean: f64 = m
                            .block
                            .iter()
                            .map(|&b| {
                                let (x, z) = split_index(b);
                                pauli_expectation(x, z, &node.state).re.powi(2)
                            })
                            .sum::<f64>()
                            / m.block.len() as f64;
                        slot.insert(node.history.clone(), mean);
                    },
                    &mut |_, _, _, _| {},
                )?;
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let mut totals: [BTreeMap<History, f64>; 2] = [BTreeMap::new(), BTreeMap::new()];
    for (m, per_sign) in members.iter().zip(&sums) {
        for si in 0..2 {
            for (h, v) in &per_sign[si] {
                *totals[si].entry(h.clone()).or_insert(0.0) += m.weight * v;
            }
        }
    }
    let mut max_value = 0.0f64;
    let mut initial_value = 0.0f64;
    let mut nodes_checked = 0;
    for t in &totals {
        for (h, &v) in t {
            nodes_checked += 1;
            max_value = max_value.max(v);
            if h.len() == 1 {
                initial_value = initial_value.max(v);
            }
        }
    }
    let holds = max_value <= bound + CERTIFY_TOLERANCE && initial_value <= scale + CERTIFY_TOLERANCE;
    Ok(SecondMomentReport {
        bound,
        initial_bound: scale,
        initial_value,
        max_value,
        nodes_checked,
        holds,
    })
}

/// `(member, plus, minus)` distributions for one hypothesis pair.
pub type MemberDistributions = (Member, Distribution, Distribution);

/// Exact distributions under the null channel and every `(member, sign)`.
pub fn family_distributions(
    policy: &SchemePolicy,
    family: &HypothesisFamily,
) -> Result<(Distribution, Vec<MemberDistributions>)> {
    check_sizes(policy, family)?;
    let p0 = run_scheme_exact(policy, &family.null_channel()?)?;
    let rest = family
        .members()
        .into_par_iter()
        .map(|m| {
            let plus = run_scheme_exact(policy, &family.channel(&m.block, Sign::Plus)?)?;
            let minus = run_scheme_exact(policy, &family.channel(&m.block, Sign::Minus)?)?;
            Ok((m, plus, minus))
        })
        .collect::<Result<_>>()?;
    Ok((p0, rest))
}
