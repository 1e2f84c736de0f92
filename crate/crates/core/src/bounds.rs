//! Closed-form sample-complexity bounds and crossover analysis.
//!
//! Every formula is also available in log space so curves stay finite far
//! beyond the range where `2^n` fits comfortably in a float.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest `n` scanned by [`crossover`].
pub const CROSSOVER_MAX_N: usize = 1000;

/// `f(eps0) = 1/2 [ (2/(1-eps0^2))^2 + 8 / ((1-eps0)^2 (1-2eps0-eps0^2)) ]`.
pub fn f_of(eps0: f64) -> Result<f64> {
    if !(0.0..=1.0 / 3.0 + 1e-15).contains(&eps0) {
        return Err(Error::OutOfRange(format!("f(eps0) needs 0 <= eps0 <= 1/3, got {eps0}")));
    }
    let a = 2.0 / (1.0 - eps0 * eps0);
    let b = 8.0 / ((1.0 - eps0).powi(2) * (1.0 - 2.0 * eps0 - eps0 * eps0));
    Ok(0.5 * (a * a + b))
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v < 1.0) {
        return Err(Error::OutOfRange(format!("{name} = {v} outside (0, 1)")));
    }
    Ok(())
}

/// `ln((4^n - 1) / 2^n)`.
fn ln_dimension_factor(n: usize) -> f64 {
    let n = n as f64;
    n * std::f64::consts::LN_2 + (-(-2.0 * n * std::f64::consts::LN_2).exp()).ln_1p()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EfMode {
    /// `(4^n-1) / (12 (1 + 2 sqrt(f(2 eps))) 2^n eps^2)`.
    Exact,
    /// `0.01 (4^n-1) / (2^n eps^2)`, the curve drawn in the comparison figure.
    Plotted,
    /// `0.005 (4^n-1) / (2^n eps^2)`.
    Simplified,
}

/// `ln` of the constant multiplying `(4^n-1)/(2^n eps^2 C^2)`.
fn ln_constant(mode: EfMode, eps0: f64) -> Result<f64> {
    Ok(match mode {
        EfMode::Exact => -(12.0 * (1.0 + 2.0 * f_of(eps0)?.sqrt())).ln(),
        EfMode::Plotted => 0.01f64.ln(),
        EfMode::Simplified => 0.005f64.ln(),
    })
}

/// `ln` of the entanglement-free lower bound.
pub fn ln_ef_lower_bound(n: usize, eps: f64, mode: EfMode) -> Result<f64> {
    ln_coarse_lower_bound(n, eps, 1, mode)
}

/// Lower bound on measurements for ancilla-free learning of every eigenvalue to `eps`.
pub fn ef_lower_bound(n: usize, eps: f64, mode: EfMode) -> Result<f64> {
    Ok(ln_ef_lower_bound(n, eps, mode)?.exp())
}

pub fn ln_coarse_lower_bound(n: usize, eps: f64, c: usize, mode: EfMode) -> Result<f64> {
    if c == 0 {
        return Err(Error::OutOfRange("block cardinality C must be at least 1".into()));
    }
    let cf = c as f64;
    if !(eps > 0.0 && eps <= 1.0 / (6.0 * cf) + 1e-15) {
        return Err(Error::OutOfRange(format!("eps = {eps} outside (0, 1/(6C)] with C = {c}")));
    }
    let eps0 = (2.0 * cf * eps).min(1.0 / 3.0);
    Ok(ln_constant(mode, eps0)? + ln_dimension_factor(n) - 2.0 * (eps * cf).ln())
}

/// Lower bound for learning block-averaged eigenvalues, largest block size `c`.
pub fn coarse_lower_bound(n: usize, eps: f64, c: usize, mode: EfMode) -> Result<f64> {
    Ok(ln_coarse_lower_bound(n, eps, c, mode)?.exp())
}

/// The earlier ancilla-free bound `(2^n - 1)^{1/3} / 6`.
pub fn af_previous_lower_bound(n: usize) -> Result<f64> {
    Ok(ln_af_previous_lower_bound(n)?.exp())
}

pub fn ln_af_previous_lower_bound(n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::OutOfRange("n must be at least 1".into()));
    }
    // ln(2^n - 1) = n ln 2 + ln(1 - 2^-n)
    let nf = n as f64;
    let ln = nf * std::f64::consts::LN_2 + (-(-nf * std::f64::consts::LN_2).exp()).ln_1p();
    Ok(ln / 3.0 - 6f64.ln())
}

/// Squared per-qubit Bell-pair contraction `(1-p)^2 = (4F - 1) / 3`.
pub fn bell_contraction(fidelity: f64) -> Result<f64> {
    if !(fidelity > 0.25 && fidelity <= 1.0) {
        return Err(Error::OutOfRange(format!("Bell fidelity {fidelity} outside (1/4, 1]")));
    }
    Ok((4.0 * fidelity - 1.0) / 3.0)
}

/// `ln` of `2 eps^-2 ((4F-1)/3)^{-2n} ln(2/delta)` before rounding up.
pub fn ln_ea_upper_bound(n: usize, eps: f64, delta: f64, fidelity: f64) -> Result<f64> {
    check_unit("eps", eps)?;
    check_unit("delta", delta)?;
    let q = bell_contraction(fidelity)?;
    Ok(2f64.ln() - 2.0 * eps.ln() - 2.0 * n as f64 * q.ln() + (2.0 / delta).ln().ln())
}

/// Shots sufficient for the entanglement-assisted protocol with weight-`n`
/// targets, rounded up. Returned as an integer-valued float (it exceeds
/// `u64` for large `n` at low fidelity); `inf` when it overflows.
pub fn ea_upper_bound(n: usize, eps: f64, delta: f64, fidelity: f64) -> Result<f64> {
    Ok(ln_ea_upper_bound(n, eps, delta, fidelity)?.exp().ceil())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundVariant {
    EfExact,
    EfPlotted,
    EfSimplified,
    Coarse,
    AfPrevious,
    EaUpper,
}

impl BoundVariant {
    pub fn tag(self) -> &'static str {
        match self {
            Self::EfExact => "ef_exact",
            Self::EfPlotted => "ef_plotted",
            Self::EfSimplified => "ef_simplified",
            Self::Coarse => "coarse",
            Self::AfPrevious => "af_previous",
            Self::EaUpper => "ea_upper",
        }
    }

    pub fn is_upper(self) -> bool {
        self == Self::EaUpper
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundQuery {
    pub n: usize,
    pub eps: f64,
    pub delta: f64,
    pub fidelity: Option<f64>,
    pub block_size: Option<usize>,
    pub variant: BoundVariant,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundResult {
    pub query: BoundQuery,
    pub value: f64,
    pub formula: &'static str,
}

pub fn ln_evaluate(q: &BoundQuery) -> Result<f64> {
    match q.variant {
        BoundVariant::EfExact => ln_ef_lower_bound(q.n, q.eps, EfMode::Exact),
        BoundVariant::EfPlotted => ln_ef_lower_bound(q.n, q.eps, EfMode::Plotted),
        BoundVariant::EfSimplified => ln_ef_lower_bound(q.n, q.eps, EfMode::Simplified),
        BoundVariant::Coarse => ln_coarse_lower_bound(q.n, q.eps, q.block_size.unwrap_or(1), EfMode::Exact),
        BoundVariant::AfPrevious => ln_af_previous_lower_bound(q.n),
        BoundVariant::EaUpper => ln_ea_upper_bound(q.n, q.eps, q.delta, q.fidelity.unwrap_or(1.0)),
    }
}

pub fn evaluate(q: &BoundQuery) -> Result<BoundResult> {
    let ln = ln_evaluate(q)?;
    let value = if q.variant.is_upper() { ln.exp().ceil() } else { ln.exp() };
    Ok(BoundResult {
        query: q.clone(),
        value,
        formula: q.variant.tag(),
    })
}

/// Which lower bound a crossover compares against the EA upper bound.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LowerVariant {
    Previous,
    Improved,
    Exact,
}

impl LowerVariant {
    pub fn ln_value(self, n: usize, eps: f64) -> Result<f64> {
        match self {
            Self::Previous => ln_af_previous_lower_bound(n),
            Self::Improved => ln_ef_lower_bound(n, eps, EfMode::Plotted),
            Self::Exact => ln_ef_lower_bound(n, eps, EfMode::Exact),
        }
    }

    /// Asymptotic per-qubit growth factor.
    pub fn rate(self) -> f64 {
        match self {
            Self::Previous => 2f64.powf(1.0 / 3.0),
            Self::Improved | Self::Exact => 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CrossoverResult {
    /// Smallest `n` with lower bound > EA upper bound, if any up to the scan limit.
    pub n_cross: Option<usize>,
    pub lower_rate: f64,
    pub upper_rate: f64,
    pub scanned_to: usize,
}

/// `ln(lower / upper)` at `n`, with the upper bound rounded up as a shot count.
pub fn ln_advantage_ratio(n: usize, fidelity: f64, eps: f64, delta: f64, lower: LowerVariant) -> Result<f64> {
    let ln_upper = ln_ea_upper_bound(n, eps, delta, fidelity)?;
    // rounding only matters while the count is small
    let ln_upper = if ln_upper < 700.0 { ln_upper.exp().ceil().ln() } else { ln_upper };
    Ok(lower.ln_value(n, eps)? - ln_upper)
}

pub fn advantage_ratio(n: usize, fidelity: f64, eps: f64, delta: f64, lower: LowerVariant) -> Result<f64> {
    Ok(ln_advantage_ratio(n, fidelity, eps, delta, lower)?.exp())
}

/// Scans `n = 1..=1000` for the first `n` where the lower bound exceeds the
/// EA upper bound. Stops early once the gap is widening in the upper bound's
/// favour and its rate dominates.
pub fn crossover(fidelity: f64, eps: f64, delta: f64, lower: LowerVariant) -> Result<CrossoverResult> {
    let upper_rate = 1.0 / bell_contraction(fidelity)?.powi(2);
    let lower_rate = lower.rate();
    let mut prev = f64::NEG_INFINITY;
    for n in 1..=CROSSOVER_MAX_N {
        let ln_ratio = ln_advantage_ratio(n, fidelity, eps, delta, lower)?;
        if ln_ratio > 0.0 {
            return Ok(CrossoverResult {
                n_cross: Some(n),
                lower_rate,
                upper_rate,
                scanned_to: n,
            });
        }
        if lower_rate <= upper_rate && n > 1 && ln_ratio < prev {
            return Ok(CrossoverResult {
                n_cross: None,
                lower_rate,
                upper_rate,
                scanned_to: n,
            });
        }
        prev = ln_ratio;
    }
    Ok(CrossoverResult {
        n_cross: None,
        lower_rate,
        upper_rate,
        scanned_to: CROSSOVER_MAX_N,
    })
}

/// One row of the comparison curve.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurveRow {
    pub n: usize,
    pub ef_exact: f64,
    pub ef_plotted: f64,
    pub af_previous: f64,
    #[serde(serialize_with = "serialize_count")]
    pub ea_upper: f64,
}

/// Writes integer-valued floats below `2^53` as integers.
fn serialize_count<S: serde::Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() && v.fract() == 0.0 && v.abs() < 9.007_199_254_740_992e15 {
        s.serialize_i64(*v as i64)
    } else {
        s.serialize_f64(*v)
    }
}

pub fn curve(n_max: usize, eps: f64, delta: f64, fidelity: f64) -> Result<Vec<CurveRow>> {
    (1..=n_max)
        .map(|n| {
            Ok(CurveRow {
                n,
                ef_exact: ef_lower_bound(n, eps, EfMode::Exact)?,
                ef_plotted: ef_lower_bound(n, eps, EfMode::Plotted)?,
                af_previous: af_previous_lower_bound(n)?,
                ea_upper: ea_upper_bound(n, eps, delta, fidelity)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn f_examples() {
        assert_eq!(f_of(0.0).unwrap(), 6.0);
        let third = f_of(1.0 / 3.0).unwrap();
        assert!((third - 43.03125).abs() < 1e-9 && third < 44.0);
        assert!((f_of(0.2).unwrap() - 13.3309).abs() < 1e-4);
        assert!(f_of(0.34).is_err());
        assert!(f_of(-0.01).is_err());
    }

    #[test]
    fn ef_examples() {
        let s = ef_lower_bound(1, 1.0 / 6.0, EfMode::Simplified).unwrap();
        assert!(close(s, 0.27, 1e-12), "{s}");
        assert!(ef_lower_bound(1, 0.17, EfMode::Exact).is_err());
        for n in 5..=100 {
            let exact = ef_lower_bound(n, 0.1, EfMode::Exact).unwrap();
            assert!(exact >= 0.01 * 2f64.powi(n as i32) / 0.01);
        }
    }

    #[test]
    fn coarse_examples() {
        // 0.005 * (15/4) / (0.0025 * 4)
        let s = coarse_lower_bound(2, 0.05, 2, EfMode::Simplified).unwrap();
        assert!(close(s, 1.875, 1e-12), "{s}");
        for n in 1..=20 {
            for &eps in &[0.01, 0.1, 1.0 / 6.0] {
                let a = coarse_lower_bound(n, eps, 1, EfMode::Exact).unwrap();
                let b = ef_lower_bound(n, eps, EfMode::Exact).unwrap();
                assert!(close(a, b, 1e-12));
            }
        }
        assert!(coarse_lower_bound(2, 0.1, 2, EfMode::Exact).is_err());
    }

    #[test]
    fn previous_bound_examples() {
        assert!(close(af_previous_lower_bound(1).unwrap(), 1.0 / 6.0, 1e-12));
        assert!(close(af_previous_lower_bound(10).unwrap(), 1023f64.cbrt() / 6.0, 1e-12));
        assert!((af_previous_lower_bound(10).unwrap() - 1.6794).abs() < 1e-4);
        let r = af_previous_lower_bound(203).unwrap() / af_previous_lower_bound(200).unwrap();
        assert!((r - 2.0).abs() < 1e-9);
    }

    #[test]
    fn ea_upper_examples() {
        for n in [1, 5, 50, 500] {
            assert_eq!(ea_upper_bound(n, 0.1, 1.0 / 3.0, 1.0).unwrap(), 359.0);
        }
        let growth = 1.0 / bell_contraction(0.95).unwrap().powi(2);
        assert!((growth - 1.148).abs() < 5e-4, "{growth}");
        assert!(ea_upper_bound(3, 0.1, 1.0 / 3.0, 0.25).is_err());
        assert!(ea_upper_bound(3, 0.1, 1.0 / 3.0, 0.25 + 1e-12).unwrap() > 1e20);
    }

    #[test]
    fn crossover_rates() {
        let r = crossover(0.90, 0.1, 1.0 / 3.0, LowerVariant::Previous).unwrap();
        assert_eq!(r.n_cross, None);
        assert!((r.upper_rate - 1.3311).abs() < 1e-3);
        assert!(crossover(0.90, 0.1, 1.0 / 3.0, LowerVariant::Improved).unwrap().n_cross.is_some());
    }

    proptest! {
        #[test]
        fn f_is_increasing(a in 0.0f64..(1.0 / 3.0), b in 0.0f64..(1.0 / 3.0)) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(f_of(lo).unwrap() <= f_of(hi).unwrap());
        }

        #[test]
        fn exact_dominates_simplified(n in 1usize..=30, eps in 1e-4f64..(1.0 / 6.0)) {
            let e = ef_lower_bound(n, eps, EfMode::Exact).unwrap();
            let s = ef_lower_bound(n, eps, EfMode::Simplified).unwrap();
            prop_assert!(e / s >= 1.0);
        }

        #[test]
        fn coarse_exact_dominates_simplified(n in 1usize..=30, c in 1usize..=8, t in 0.01f64..1.0) {
            let eps = t / (6.0 * c as f64);
            let e = coarse_lower_bound(n, eps, c, EfMode::Exact).unwrap();
            let s = coarse_lower_bound(n, eps, c, EfMode::Simplified).unwrap();
            prop_assert!(e >= s);
        }

        #[test]
        fn ea_upper_monotone(n in 1usize..=60, f1 in 0.3f64..1.0, f2 in 0.3f64..1.0) {
            let (lo, hi) = if f1 <= f2 { (f1, f2) } else { (f2, f1) };
            prop_assert!(ea_upper_bound(n, 0.1, 1.0 / 3.0, hi).unwrap() <= ea_upper_bound(n, 0.1, 1.0 / 3.0, lo).unwrap());
            prop_assert!(ea_upper_bound(n, 0.1, 1.0 / 3.0, lo).unwrap() <= ea_upper_bound(n + 1, 0.1, 1.0 / 3.0, lo).unwrap());
        }

        #[test]
        fn crossover_monotone_in_fidelity(f1 in 0.5f64..1.0, f2 in 0.5f64..1.0) {
            let (lo, hi) = if f1 <= f2 { (f1, f2) } else { (f2, f1) };
            for v in [LowerVariant::Previous, LowerVariant::Improved] {
                let a = crossover(lo, 0.1, 1.0 / 3.0, v).unwrap().n_cross.unwrap_or(usize::MAX);
                let b = crossover(hi, 0.1, 1.0 / 3.0, v).unwrap().n_cross.unwrap_or(usize::MAX);
                prop_assert!(b <= a);
            }
        }
    }
}
