//! Stochastic simulators and estimators for concrete learning protocols.
//!
//! Everything here is Pauli-frame algebra on canonical indices: a Pauli error
//! `b` flips the sign of a stabilizer `g` iff they anticommute, so no state
//! vectors are ever built.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution as _;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::channel::{error_rates_from_eigenvalues, hypothesis_channel, signed_geometric_mean, Partition, PauliChannel, Sign};
use crate::cover::CommutingGroup;
use crate::error::{Error, Result};
use crate::pauli::{commutation_sign, weight_index, PauliString};

/// Independent single-qubit depolarizing noise on every qubit of the Bell pairs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseModel {
    p_depol: f64,
}

impl NoiseModel {
    pub fn new(p_depol: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p_depol) {
            return Err(Error::OutOfRange(format!("depolarizing probability {p_depol} outside [0, 1]")));
        }
        Ok(Self { p_depol })
    }

    pub fn noiseless() -> Self {
        Self { p_depol: 0.0 }
    }

    pub fn from_bell_fidelity(fidelity: f64) -> Result<Self> {
        Self::new(p_from_fidelity(fidelity)?)
    }

    pub fn p(&self) -> f64 {
        self.p_depol
    }

    pub fn bell_fidelity(&self) -> f64 {
        fidelity_from_p(self.p_depol).expect("validated")
    }

    /// `(1 - p)^{2|b|}`: attenuation of eigenvalue `b` by noise on both halves.
    pub fn attenuation(&self, b: usize) -> f64 {
        (1.0 - self.p_depol).powi(2 * weight_index(b) as i32)
    }
}

/// `F = (1 + 3 (1 - p)^2) / 4`.
pub fn fidelity_from_p(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::OutOfRange(format!("depolarizing probability {p} outside [0, 1]")));
    }
    Ok((1.0 + 3.0 * (1.0 - p).powi(2)) / 4.0)
}

/// `p = 1 - sqrt((4F - 1) / 3)`.
pub fn p_from_fidelity(fidelity: f64) -> Result<f64> {
    if !(0.25..=1.0).contains(&fidelity) {
        return Err(Error::OutOfRange(format!("Bell fidelity {fidelity} outside [1/4, 1]")));
    }
    Ok(1.0 - ((4.0 * fidelity - 1.0) / 3.0).sqrt())
}

/// Law of the Bell-measurement outcome: the inverse transform of the
/// attenuated eigenvalues `lambda_b (1-p)^{2|b|}`.
pub fn bell_outcome_distribution_exact(channel: &PauliChannel, noise: NoiseModel) -> Result<Vec<f64>> {
    let attenuated: Vec<f64> = channel
        .eigenvalues()
        .iter()
        .enumerate()
        .map(|(b, l)| l * noise.attenuation(b))
        .collect();
    error_rates_from_eigenvalues(&attenuated)
}

/// Draws Bell-sampling outcomes by composing the channel error with the
/// preparation noise on the system and ancilla halves.
#[derive(Clone, Debug)]
pub struct BellSampler {
    n: usize,
    errors: WeightedIndex<f64>,
    noise: NoiseModel,
}

impl BellSampler {
    pub fn new(channel: &PauliChannel, noise: NoiseModel) -> Result<Self> {
        let weights: Vec<f64> = channel.error_rates().iter().map(|p| p.max(0.0)).collect();
        let errors = WeightedIndex::new(&weights).map_err(|e| Error::OutOfRange(format!("error rates: {e}")))?;
        Ok(Self {
            n: channel.n(),
            errors,
            noise,
        })
    }

    fn depolarizing<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let p = self.noise.p();
        if p == 0.0 {
            return 0;
        }
        let mut d = 0usize;
        for k in 0..self.n {
            if rng.random::<f64>() < 0.75 * p {
                d |= rng.random_range(1..4usize) << (2 * k);
            }
        }
        d
    }

    /// Canonical index of one outcome. The ancilla's Pauli is carried onto
    /// the system by the Bell identity; transposition only changes phases.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let b = self.errors.sample(rng);
        b ^ self.depolarizing(rng) ^ self.depolarizing(rng)
    }

    pub fn sample_many<R: Rng + ?Sized>(&self, shots: usize, rng: &mut R) -> Vec<usize> {
        (0..shots).map(|_| self.sample(rng)).collect()
    }
}

pub fn bell_sample<R: Rng + ?Sized>(channel: &PauliChannel, noise: NoiseModel, rng: &mut R) -> Result<PauliString> {
    let idx = BellSampler::new(channel, noise)?.sample(rng);
    PauliString::from_index(channel.n(), idx)
}

/// Per-sample estimator `(1-p)^{-2|b|} (-1)^{<a,b>}`.
pub fn ea_single_estimate(a: usize, b: usize, noise: NoiseModel) -> f64 {
    commutation_sign(a, b) / noise.attenuation(b)
}

/// Mean of the per-sample estimators for target `b`.
pub fn ea_estimate(samples: &[usize], b: usize, noise: NoiseModel) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::OutOfRange("no samples".into()));
    }
    let sum: f64 = samples.iter().map(|&a| commutation_sign(a, b)).sum();
    Ok(sum / samples.len() as f64 / noise.attenuation(b))
}

/// Estimates for every target from one sample list.
pub fn ea_estimate_all(n: usize, samples: &[usize], noise: NoiseModel) -> Result<Vec<f64>> {
    (0..1usize << (2 * n)).map(|b| ea_estimate(samples, b, noise)).collect()
}

/// Exact expectation of the estimator under the outcome law.
pub fn ea_expectation(distribution: &[f64], b: usize, noise: NoiseModel) -> f64 {
    distribution
        .iter()
        .enumerate()
        .map(|(a, p)| p * ea_single_estimate(a, b, noise))
        .sum()
}

fn check_eps_delta(eps: f64, delta: f64) -> Result<()> {
    if !(eps > 0.0 && eps < 1.0) || !(delta > 0.0 && delta < 1.0) {
        return Err(Error::OutOfRange(format!("eps = {eps}, delta = {delta} must lie in (0, 1)")));
    }
    Ok(())
}

/// Hoeffding count `ceil(2 eps^-2 (1-p)^{-4|b|} ln(2/delta))`.
pub fn ea_sample_count(eps: f64, delta: f64, weight: usize, p: f64) -> Result<u64> {
    check_eps_delta(eps, delta)?;
    NoiseModel::new(p)?;
    if p == 1.0 && weight > 0 {
        return Err(Error::OutOfRange("fully depolarized pairs carry no information".into()));
    }
    let n = 2.0 / (eps * eps) * (1.0 - p).powi(-4 * weight as i32) * (2.0 / delta).ln();
    if !n.is_finite() || n > u64::MAX as f64 {
        return Err(Error::OutOfRange(format!("sample count {n} does not fit in 64 bits")));
    }
    Ok(n.ceil() as u64)
}

/// Per-group shot count of the ancilla-free protocol.
pub fn af_shots_per_group(eps: f64, delta: f64) -> Result<u64> {
    ea_sample_count(eps, delta, 0, 0.0)
}

/// `Pr[s = -1] = sum_{<a,b> = 1} p_b` for the ancilla-free single shot.
pub fn af_flip_probability(channel: &PauliChannel, a: usize) -> f64 {
    channel
        .error_rates()
        .iter()
        .enumerate()
        .filter(|(b, _)| commutation_sign(a, *b) < 0.0)
        .map(|(_, p)| p)
        .sum()
}

/// Prepare a `+1` eigenstate of `P_a`, apply the channel, read the sign.
pub fn af_estimate_eigenvalue<R: Rng + ?Sized>(channel: &PauliChannel, a: &PauliString, shots: usize, rng: &mut R) -> Result<f64> {
    if a.is_identity() {
        return Err(Error::OutOfRange("target must not be the identity".into()));
    }
    if a.n() != channel.n() {
        return Err(Error::DimensionMismatch {
            left: channel.n(),
            right: a.n(),
        });
    }
    if shots == 0 {
        return Err(Error::OutOfRange("shots must be positive".into()));
    }
    let sampler = BellSampler::new(channel, NoiseModel::noiseless())?;
    let ai = a.index();
    let sum: f64 = (0..shots).map(|_| commutation_sign(ai, sampler.errors.sample(rng))).sum();
    Ok(sum / shots as f64)
}

/// Result of running the ancilla-free protocol over a cover.
#[derive(Clone, Debug, PartialEq)]
pub struct AfEstimates {
    /// One entry per canonical index; the identity is 1.
    pub estimates: Vec<f64>,
    /// Shots contributing to each estimate.
    pub shots_per_target: Vec<u64>,
    pub shots_per_group: u64,
    pub total_shots: u64,
}

/// Measures every group of `cover` simultaneously for `shots_per_group`
/// shots; each eigenvalue averages all groups containing it.
pub fn af_estimate_all_with_shots<R: Rng + ?Sized>(
    channel: &PauliChannel,
    shots_per_group: u64,
    cover: &[CommutingGroup],
    rng: &mut R,
) -> Result<AfEstimates> {
    let n = channel.n();
    if shots_per_group == 0 {
        return Err(Error::OutOfRange("shots must be positive".into()));
    }
    crate::cover::validate_cover(n, cover)?;
    let sampler = BellSampler::new(channel, NoiseModel::noiseless())?;
    let len = 1usize << (2 * n);
    let mut sums = vec![0.0; len];
    let mut counts = vec![0u64; len];
    for group in cover {
        for _ in 0..shots_per_group {
            let b = sampler.errors.sample(rng);
            for &e in group.elements() {
                sums[e] += commutation_sign(e, b);
            }
        }
        for &e in group.elements() {
            counts[e] += shots_per_group;
        }
    }
    let estimates = sums
        .iter()
        .zip(&counts)
        .enumerate()
        .map(|(a, (s, &c))| if a == 0 { 1.0 } else { s / c as f64 })
        .collect();
    Ok(AfEstimates {
        estimates,
        shots_per_target: counts,
        shots_per_group,
        total_shots: shots_per_group * cover.len() as u64,
    })
}

pub fn af_estimate_all<R: Rng + ?Sized>(
    channel: &PauliChannel,
    eps: f64,
    delta: f64,
    cover: &[CommutingGroup],
    rng: &mut R,
) -> Result<AfEstimates> {
    af_estimate_all_with_shots(channel, af_shots_per_group(eps, delta)?, cover, rng)
}

/// Block estimates: ancilla-free eigenvalue estimates clipped to `[-1, 1]`
/// and combined by the signed geometric mean.
pub fn coarse_estimate<R: Rng + ?Sized>(
    channel: &PauliChannel,
    partition: &Partition,
    shots_per_group: u64,
    cover: &[CommutingGroup],
    rng: &mut R,
) -> Result<Vec<f64>> {
    if partition.n() != channel.n() {
        return Err(Error::DimensionMismatch {
            left: channel.n(),
            right: partition.n(),
        });
    }
    let af = af_estimate_all_with_shots(channel, shots_per_group, cover, rng)?;
    Ok(combine_blocks(&af.estimates, partition))
}

/// Signed geometric mean of clipped per-Pauli estimates over each block.
pub fn combine_blocks(estimates: &[f64], partition: &Partition) -> Vec<f64> {
    partition
        .blocks()
        .iter()
        .map(|block| {
            let clipped: Vec<f64> = block.iter().map(|&b| estimates[b].clamp(-1.0, 1.0)).collect();
            signed_geometric_mean(&clipped)
        })
        .collect()
}

/// One row of protocol output.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EstimateRecord {
    pub protocol: String,
    pub n: usize,
    pub target: String,
    pub shots: u64,
    pub estimate: f64,
    pub truth: Option<f64>,
    pub error: Option<f64>,
    pub seed: u64,
}

// ---------------------------------------------------------------------------
// The distinguishing game.

/// A learner that consumes channel copies before learning which eigenvalue
/// will be queried; `run` returns an estimate for every canonical index.
pub trait Player: Sync {
    fn name(&self) -> &str;
    fn run(&self, channel: &PauliChannel, rng: &mut ChaCha8Rng) -> Result<Vec<f64>>;
}

/// Reads the eigenvalues directly.
pub struct TruthOracle;

impl Player for TruthOracle {
    fn name(&self) -> &str {
        "truth"
    }

    fn run(&self, channel: &PauliChannel, _rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        Ok(channel.eigenvalues().to_vec())
    }
}

/// Always reports eigenvalue 0, i.e. always guesses the null channel.
pub struct IgnoreSamples;

impl Player for IgnoreSamples {
    fn name(&self) -> &str {
        "ignore"
    }

    fn run(&self, channel: &PauliChannel, _rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        Ok(vec![0.0; channel.len()])
    }
}

/// Bell sampling with a fixed shot budget.
pub struct EaPlayer {
    pub shots: usize,
    pub noise: NoiseModel,
}

impl Player for EaPlayer {
    fn name(&self) -> &str {
        "ea"
    }

    fn run(&self, channel: &PauliChannel, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        let samples = BellSampler::new(channel, self.noise)?.sample_many(self.shots, rng);
        ea_estimate_all(channel.n(), &samples, self.noise)
    }
}

/// Ancilla-free measurement of every group of a cover.
pub struct AfPlayer {
    pub cover: Vec<CommutingGroup>,
    pub shots_per_group: u64,
}

impl Player for AfPlayer {
    fn name(&self) -> &str {
        "af"
    }

    fn run(&self, channel: &PauliChannel, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        Ok(af_estimate_all_with_shots(channel, self.shots_per_group, &self.cover, rng)?.estimates)
    }
}

/// Nearest of `{-eps0, 0, +eps0}`: thresholds at `±eps0 / 2`.
pub fn classify(estimate: f64, eps0: f64) -> i8 {
    if estimate > eps0 / 2.0 {
        1
    } else if estimate < -eps0 / 2.0 {
        -1
    } else {
        0
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct GameCell {
    pub a: usize,
    pub s: i8,
    pub trials: u64,
    pub wins: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GameReport {
    pub player: String,
    pub n: usize,
    pub eps0: f64,
    pub trials: u64,
    pub wins: u64,
    pub success_rate: f64,
    /// Binomial standard error of the success rate.
    pub sigma: f64,
    pub breakdown: Vec<GameCell>,
}

/// Outcome of a single round.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Round {
    pub a: usize,
    pub s: i8,
    pub null_action: bool,
    pub win: bool,
}

/// One round with its own random stream.
pub fn play_round(n: usize, eps0: f64, player: &dyn Player, rng: &mut ChaCha8Rng) -> Result<Round> {
    let len = 1usize << (2 * n);
    let a = rng.random_range(1..len);
    let sign = if rng.random::<bool>() { Sign::Plus } else { Sign::Minus };
    let null_action = rng.random::<bool>();
    let channel = if null_action {
        PauliChannel::completely_depolarizing(n)?
    } else {
        hypothesis_channel(n, &PauliString::from_index(n, a)?, sign, eps0)?
    };
    let estimates = player.run(&channel, rng)?;
    let truth = if null_action { 0 } else { sign.value() as i8 };
    Ok(Round {
        a,
        s: sign.value() as i8,
        null_action,
        win: classify(estimates[a], eps0) == truth,
    })
}

/// Plays `trials` rounds; round `t` uses stream `t` of the master seed.
pub fn lecam_game(n: usize, eps0: f64, player: &dyn Player, trials: u64, seed: u64) -> Result<GameReport> {
    if !(eps0 > 0.0 && eps0 <= 1.0 / 3.0 + 1e-15) {
        return Err(Error::OutOfRange(format!("eps0 = {eps0} outside (0, 1/3]")));
    }
    if trials == 0 {
        return Err(Error::OutOfRange("trials must be positive".into()));
    }
    let rounds: Vec<Round> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t);
            play_round(n, eps0, player, &mut rng)
        })
        .collect::<Result<_>>()?;
    let mut cells: BTreeMap<(usize, i8), GameCell> = BTreeMap::new();
    let mut wins = 0;
    for r in &rounds {
        let cell = cells.entry((r.a, r.s)).or_insert_with(|| GameCell {
            a: r.a,
            s: r.s,
            ..GameCell::default()
        });
        cell.trials += 1;
        cell.wins += u64::from(r.win);
        wins += u64::from(r.win);
    }
    let rate = wins as f64 / trials as f64;
    Ok(GameReport {
        player: player.name().to_string(),
        n,
        eps0,
        trials,
        wins,
        success_rate: rate,
        sigma: (rate * (1.0 - rate) / trials as f64).sqrt(),
        breakdown: cells.into_values().collect(),
    })
}
