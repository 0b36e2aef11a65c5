//! Continued fractions, convergents and the Liouville exponent β(α).
//!
//! A [`Frequency`] keeps its partial quotients and convergents as exact
//! integers. Distances ‖kα‖ for k below the last stored denominator are
//! computed from the integer convergent plus the (tiny) tail α − p_N/q_N,
//! which keeps them accurate far below the f64 resolution of α itself.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hexfloat;

/// Largest denominator we store; keeps p/q exact in f64 and k·p in i128.
const MAX_DENOMINATOR: u64 = 1 << 53;
/// Quotients are trusted only while |α − p_k/q_k| stays above this floor.
const PRECISION_FLOOR: f64 = 1.0 / (1u64 << 50) as f64;
/// A single quotient this large at the precision floor is the footprint of
/// a rational number rounded to f64.
const RATIONAL_QUOTIENT: u64 = 1 << 16;

/// Distance to the nearest integer, ‖x‖_{ℝ/ℤ}.
pub fn norm_dist(x: f64) -> f64 {
    (x - x.round()).abs()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frequency {
    value: f64,
    quotients: Vec<u64>,
    /// (p_k, q_k) for k = 0..=N, starting at 0/1.
    convergents: Vec<(u64, u64)>,
    /// α − p_N/q_N.
    tail: f64,
    truncated: bool,
    synth: Option<SynthInfo>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthInfo {
    pub target_beta: f64,
    /// Index n of the first convergent q_n whose successor follows the growth law.
    pub first_growth: usize,
    pub levels_requested: usize,
    pub levels_built: usize,
}

fn convergents_of(quotients: &[u64]) -> Result<Vec<(u64, u64)>> {
    let mut out = vec![(0u64, 1u64)];
    let (mut p2, mut q2) = (1u128, 0u128);
    let (mut p1, mut q1) = (0u128, 1u128);
    for &a in quotients {
        if a == 0 {
            return Err(Error::InvalidArgument("partial quotients must be positive".into()));
        }
        let p = a as u128 * p1 + p2;
        let q = a as u128 * q1 + q2;
        if q > MAX_DENOMINATOR as u128 {
            return Err(Error::InvalidArgument(format!("denominator overflow at quotient {a}")));
        }
        out.push((p as u64, q as u64));
        (p2, q2, p1, q1) = (p1, q1, p, q);
    }
    Ok(out)
}

/// α − p_N/q_N given the next complete quotient x_{N+1}.
fn tail_from_complete_quotient(convergents: &[(u64, u64)], next: f64) -> f64 {
    let n = convergents.len() - 1;
    let q_n = convergents[n].1 as f64;
    let q_prev = if n == 0 { 0.0 } else { convergents[n - 1].1 as f64 };
    let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
    sign / (q_n * (q_n * next + q_prev))
}

impl Frequency {
    /// Builds a frequency from partial quotients a_1..a_N. `next_complete`
    /// is the complete quotient x_{N+1} = [a_{N+1}; a_{N+2}, …] when the tail
    /// is known (e.g. φ for the golden mean); `None` pins α = p_N/q_N.
    pub fn from_quotients(quotients: &[u64], next_complete: Option<f64>) -> Result<Self> {
        if quotients.is_empty() {
            return Err(Error::InvalidArgument("need at least one partial quotient".into()));
        }
        let convergents = convergents_of(quotients)?;
        let tail = next_complete.map_or(0.0, |x| tail_from_complete_quotient(&convergents, x));
        let (p, q) = *convergents.last().unwrap();
        Ok(Frequency {
            value: p as f64 / q as f64 + tail,
            quotients: quotients.to_vec(),
            convergents,
            tail,
            truncated: false,
            synth: None,
        })
    }

    /// (√5 − 1)/2 = [0; 1, 1, 1, …].
    pub fn golden(depth: usize) -> Self {
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        Self::from_quotients(&vec![1; depth.clamp(1, 75)], Some(phi)).expect("golden quotients")
    }

    /// √2 − 1 = [0; 2, 2, 2, …].
    pub fn sqrt2_minus_1(depth: usize) -> Self {
        Self::from_quotients(&vec![2; depth.clamp(1, 40)], Some(1.0 + 2f64.sqrt())).expect("silver quotients")
    }

    pub fn value(&self) -> f64 {
        self.value
    }
    pub fn quotients(&self) -> &[u64] {
        &self.quotients
    }
    pub fn convergents(&self) -> &[(u64, u64)] {
        &self.convergents
    }
    pub fn truncated(&self) -> bool {
        self.truncated
    }
    pub fn synth_info(&self) -> Option<&SynthInfo> {
        self.synth.as_ref()
    }
    pub fn depth(&self) -> usize {
        self.quotients.len()
    }
    /// Last (deepest) stored denominator.
    pub fn max_denominator(&self) -> u64 {
        self.convergents.last().unwrap().1
    }

    /// Convergents p/q with 2 ≤ q ≤ `q_max`, deduplicated, in increasing q.
    pub fn convergents_up_to(&self, q_max: u64) -> Vec<(u64, u64)> {
        let mut out: Vec<(u64, u64)> = Vec::new();
        for &(p, q) in &self.convergents {
            if q >= 2 && q <= q_max && out.last().map_or(true, |l| l.1 != q) {
                out.push((p, q));
            }
        }
        out
    }

    /// ‖kα‖, exact up to the stored tail for |k| < q_N.
    pub fn dist(&self, k: i64) -> f64 {
        let (p, q) = *self.convergents.last().unwrap();
        let kk = k.unsigned_abs();
        if kk >= q {
            return norm_dist(k as f64 * self.value);
        }
        let kp = kk as i128 * p as i128;
        let r = kp.rem_euclid(q as i128);
        let num = if 2 * r > q as i128 { r - q as i128 } else { r };
        let x = num as f64 / q as f64 + kk as f64 * self.tail;
        norm_dist(x)
    }

    /// Flat text record `value_hex, beta_estimate, a1 a2 a3 …`.
    pub fn to_record(&self, beta_estimate: f64) -> String {
        let qs: Vec<String> = self.quotients.iter().map(|a| a.to_string()).collect();
        format!("{}, {}, {}", hexfloat::format(self.value), beta_estimate, qs.join(" "))
    }

    /// Parses a record written by [`Frequency::to_record`]; returns the
    /// frequency and the stored β estimate.
    pub fn from_record(line: &str) -> Result<(Self, f64)> {
        let mut parts = line.splitn(3, ',');
        let (v, b, a) = match (parts.next(), parts.next(), parts.next()) {
            (Some(v), Some(b), Some(a)) => (v, b, a),
            _ => return Err(Error::Parse(format!("frequency record needs 3 fields: `{line}`"))),
        };
        let value = hexfloat::parse(v)?;
        let beta: f64 = b.trim().parse().map_err(|_| Error::Parse(format!("bad beta `{b}`")))?;
        let quotients = a
            .split_whitespace()
            .map(|t| t.parse::<u64>().map_err(|_| Error::Parse(format!("bad quotient `{t}`"))))
            .collect::<Result<Vec<_>>>()?;
        let mut f = Self::from_quotients(&quotients, None)?;
        let (p, q) = *f.convergents.last().unwrap();
        f.tail = value - p as f64 / q as f64;
        f.value = value;
        Ok((f, beta))
    }
}

/// Continued-fraction expansion of `alpha`, computed exactly from the binary
/// value of the f64. Stops early (setting `truncated`) once the next
/// convergent would be finer than the precision floor.
pub fn expand_cf(alpha: f64, depth: usize) -> Result<Frequency> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0,1), got {alpha}")));
    }
    if depth == 0 {
        return Err(Error::InvalidArgument("depth must be positive".into()));
    }
    let bits = alpha.to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i64 - 1075;
    let mant = (bits & ((1u64 << 52) - 1)) | (1u64 << 52);
    if -exp > 125 {
        return Err(Error::InvalidArgument("alpha too small for exact expansion".into()));
    }
    // alpha = num / den exactly
    let (mut num, mut den) = (mant as u128, 1u128 << (-exp));
    let shift = num.trailing_zeros().min(den.trailing_zeros());
    num >>= shift;
    den >>= shift;

    let mut quotients = Vec::new();
    let (mut q_prev, mut q_cur) = (0u128, 1u128);
    let mut truncated = false;
    while quotients.len() < depth {
        if num == 0 {
            return Err(Error::RationalInput(format!("{alpha} has a terminating expansion {quotients:?}")));
        }
        let a = den / num;
        let r = den % num;
        let q_next = a * q_cur + q_prev;
        let floor_hit = (q_next as f64) * (q_cur as f64) * PRECISION_FLOOR > 1.0
            || q_next > MAX_DENOMINATOR as u128;
        if floor_hit {
            if a > RATIONAL_QUOTIENT as u128 {
                return Err(Error::RationalInput(format!(
                    "{alpha}: partial quotient {a} overflows after {quotients:?}"
                )));
            }
            truncated = true;
            break;
        }
        quotients.push(a as u64);
        (den, num) = (num, r);
        (q_prev, q_cur) = (q_cur, q_next);
    }
    let convergents = convergents_of(&quotients)?;
    let tail = if num == 0 {
        0.0
    } else {
        tail_from_complete_quotient(&convergents, den as f64 / num as f64)
    };
    Ok(Frequency { value: alpha, quotients, convergents, tail, truncated, synth: None })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaEstimate {
    pub beta: f64,
    /// (k, −ln‖kα‖/k) at each new running maximum.
    pub witnesses: Vec<(u64, f64)>,
    /// Examined window [k_lo, k_max].
    pub window: (u64, u64),
    /// Witness ratios strictly increasing across the window: β may be infinite.
    pub growing: bool,
}

fn beta_ratio(freq: &Frequency, k: u64) -> f64 {
    -freq.dist(k as i64).ln() / k as f64
}

/// Lower end of the β window: the largest convergent denominator ≤ k_max/10.
/// Anchoring the window at a convergent guarantees the maximum over the
/// window sits on a convergent denominator (best-approximation property).
fn beta_window(freq: &Frequency, k_max: u64) -> Result<u64> {
    if k_max < 1 {
        return Err(Error::InvalidArgument("k_max must be positive".into()));
    }
    if k_max >= freq.max_denominator() {
        return Err(Error::InsufficientDepth { needed: k_max, have: freq.max_denominator() });
    }
    let anchor = (k_max / 10).max(1);
    Ok(freq.convergents.iter().map(|c| c.1).filter(|&q| q <= anchor).max().unwrap_or(1))
}

/// Finite-range estimate of β(α) = limsup −ln‖kα‖/k, evaluated on the
/// convergent denominators inside the window [k_lo, k_max].
pub fn estimate_beta(freq: &Frequency, k_max: u64) -> Result<BetaEstimate> {
    let k_lo = beta_window(freq, k_max)?;
    let mut ks: Vec<u64> = freq.convergents.iter().map(|c| c.1).filter(|&q| q >= k_lo && q <= k_max).collect();
    ks.dedup();
    Ok(collect_estimate(freq, ks.into_iter(), (k_lo, k_max), true))
}

/// Brute-force scan of every k in the same window; used to cross-check
/// [`estimate_beta`].
pub fn estimate_beta_brute(freq: &Frequency, k_max: u64) -> Result<BetaEstimate> {
    let k_lo = beta_window(freq, k_max)?;
    Ok(collect_estimate(freq, k_lo..=k_max, (k_lo, k_max), false))
}

fn collect_estimate(freq: &Frequency, ks: impl Iterator<Item = u64>, window: (u64, u64), track_growth: bool) -> BetaEstimate {
    let mut beta = f64::NEG_INFINITY;
    let mut witnesses = Vec::new();
    let mut last = f64::NEG_INFINITY;
    let mut increasing = 0usize;
    let mut growing = track_growth;
    for k in ks {
        let r = beta_ratio(freq, k);
        if r > beta {
            beta = r;
            witnesses.push((k, r));
        }
        if track_growth {
            if r > last {
                increasing += 1;
            } else {
                growing = false;
            }
            last = r;
        }
    }
    BetaEstimate { beta: beta.max(0.0), witnesses, window, growing: growing && increasing >= 3 }
}

/// Liouville-type frequency with β ≈ `target_beta`.
///
/// A seeded prefix of quotients in {1, 2} runs until q_n ≥ ln2/(0.05β);
/// from there each level picks q_{n+1} ∈ [e^{βq_n}, 2e^{βq_n}]. Denominators
/// beyond 2^53 are not representable and stop the build with `truncated`.
pub fn synth_liouville(target_beta: f64, levels: usize, seed: u64) -> Result<Frequency> {
    if !(target_beta > 0.0 && target_beta.is_finite()) {
        return Err(Error::InvalidArgument(format!("target beta must be positive, got {target_beta}")));
    }
    if levels < 3 {
        return Err(Error::InvalidArgument("need at least 3 levels".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q_start = (std::f64::consts::LN_2 / (0.05 * target_beta)).ceil() as u64;
    let mut quotients: Vec<u64> = Vec::new();
    let (mut q_prev, mut q_cur) = (0u64, 1u64);
    while q_cur < q_start {
        let a: u64 = rng.gen_range(1..=2);
        quotients.push(a);
        (q_prev, q_cur) = (q_cur, a * q_cur + q_prev);
    }
    let first_growth = quotients.len();
    let mut built = 0;
    while built < levels {
        let target = (target_beta * q_cur as f64).exp();
        if !(target < MAX_DENOMINATOR as f64 / 2.0) {
            break;
        }
        let mut a = ((target - q_prev as f64) / q_cur as f64).ceil().max(1.0) as u64;
        while ((a * q_cur + q_prev) as f64) < target {
            a += 1;
        }
        quotients.push(a);
        (q_prev, q_cur) = (q_cur, a * q_cur + q_prev);
        built += 1;
    }
    let mut f = Frequency::from_quotients(&quotients, None)?;
    f.truncated = built < levels;
    f.synth = Some(SynthInfo { target_beta, first_growth, levels_requested: levels, levels_built: built });
    Ok(f)
}

/// ‖kα‖ for k ≠ 0.
pub fn small_divisor(freq: &Frequency, k: i64) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidArgument("small divisor needs k != 0".into()));
    }
    Ok(freq.dist(k))
}

/// ‖kα‖·e^{2β|k|}: the empirical C(α) in ‖kα‖ ≥ C(α)e^{−2β|k|}.
pub fn small_divisor_ratio(freq: &Frequency, k: i64, beta: f64) -> Result<f64> {
    Ok(small_divisor(freq, k)? * (2.0 * beta * k.unsigned_abs() as f64).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn norm_dist_examples() {
        assert_eq!(norm_dist(0.5), 0.5);
        assert_eq!(norm_dist(3.25), 0.25);
        // 1 − 1e−9 itself carries a rounding error of ~1e−16
        assert!((norm_dist(1.0 - 1e-9) - 1e-9).abs() < 2e-16);
    }

    #[test]
    fn golden_expansion_is_fibonacci() {
        let f = expand_cf((5f64.sqrt() - 1.0) / 2.0, 10).unwrap();
        assert_eq!(f.quotients(), &[1; 10]);
        let qs: Vec<u64> = f.convergents().iter().skip(1).map(|c| c.1).collect();
        assert_eq!(qs, vec![1, 2, 3, 5, 8, 13, 21, 34, 55, 89]);
    }

    #[test]
    fn silver_expansion() {
        let f = expand_cf(2f64.sqrt() - 1.0, 6).unwrap();
        assert_eq!(f.quotients(), &[2; 6]);
    }

    #[test]
    fn rational_inputs_rejected() {
        assert!(matches!(expand_cf(0.5, 5), Err(Error::RationalInput(_))));
        assert!(matches!(expand_cf(0.375, 5), Err(Error::RationalInput(_))));
        assert!(matches!(expand_cf(0.3, 6), Err(Error::RationalInput(_))));
        // shallow depth on the rounded 0.3 is still fine
        assert_eq!(expand_cf(0.3, 1).unwrap().quotients(), &[3]);
    }

    #[test]
    fn deep_golden_truncates_at_precision_floor() {
        let f = expand_cf((5f64.sqrt() - 1.0) / 2.0, 200).unwrap();
        assert!(f.truncated());
        assert!(f.depth() > 30 && f.depth() < 60);
        assert!(f.quotients().iter().all(|&a| a == 1));
    }

    #[test]
    fn convergent_invariants() {
        for f in [Frequency::golden(40), Frequency::sqrt2_minus_1(30), expand_cf(0.7236067977499789, 30).unwrap()] {
            let c = f.convergents();
            for k in 1..c.len() - 1 {
                let (p0, q0) = c[k - 1];
                let (p1, q1) = c[k];
                let (_, q2) = c[k + 1];
                let det = p1 as i128 * q0 as i128 - p0 as i128 * q1 as i128;
                assert_eq!(det.abs(), 1);
                assert_eq!(q2, f.quotients()[k] * q1 + q0);
                let d = f.dist(q1 as i64);
                assert!(d < 1.0 / q2 as f64 && d > 1.0 / (q2 + q1) as f64, "k={k} d={d}");
                if (q1 as f64) * (q2 as f64) < 1e12 {
                    assert!((f.value() - p1 as f64 / q1 as f64).abs() < 1.0 / (q1 as f64 * q2 as f64));
                }
            }
        }
    }

    #[test]
    fn golden_beta_is_small() {
        let f = Frequency::golden(40);
        let b = estimate_beta(&f, 10_000).unwrap();
        assert!(b.beta <= 0.01, "{b:?}");
        assert!(!b.growing);
    }

    #[test]
    fn shortcut_matches_brute_force() {
        for f in [
            Frequency::golden(40),
            Frequency::sqrt2_minus_1(30),
            expand_cf(std::f64::consts::E - 2.0, 40).unwrap(),
            expand_cf(std::f64::consts::PI - 3.0, 40).unwrap(),
            synth_liouville(0.5, 4, 3).unwrap(),
        ] {
            for k_max in [50u64, 777, 10_000] {
                let a = estimate_beta(&f, k_max).unwrap();
                let b = estimate_beta_brute(&f, k_max).unwrap();
                assert_eq!(a.beta, b.beta, "k_max={k_max} {:?}", f.quotients());
            }
        }
    }

    #[test]
    fn liouville_hits_target() {
        for (beta, seed) in [(0.5, 1u64), (0.3, 7), (0.2, 11)] {
            let f = synth_liouville(beta, 4, seed).unwrap();
            let est = estimate_beta(&f, 10_000).unwrap();
            assert!((est.beta - beta).abs() <= 0.1 * beta, "beta={beta} est={est:?}");
            let info = f.synth_info().unwrap();
            let c = f.convergents();
            for n in info.first_growth..info.first_growth + info.levels_built {
                let qn = c[n].1 as f64;
                let r = (c[n + 1].1 as f64).ln() / qn;
                assert!(r >= beta - 1e-12 && r <= beta + std::f64::consts::LN_2 / qn, "n={n} r={r}");
            }
        }
    }

    #[test]
    fn liouville_truncates_and_is_deterministic() {
        let a = synth_liouville(0.3, 4, 42).unwrap();
        let b = synth_liouville(0.3, 4, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.value().to_bits(), b.value().to_bits());
        assert!(a.truncated());
        assert!(synth_liouville(0.0, 4, 1).is_err());
        assert!(synth_liouville(0.3, 2, 1).is_err());
    }

    #[test]
    fn small_divisor_examples() {
        let f = Frequency::golden(40);
        let c = f.convergents();
        for n in 3..20 {
            let d = small_divisor(&f, c[n].1 as i64).unwrap();
            let inv = 1.0 / c[n + 1].1 as f64;
            assert!(d > inv / 2.0 && d < 2.0 * inv);
        }
        let g = expand_cf(0.3, 1).unwrap();
        assert!((small_divisor(&g, 1).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(small_divisor(&f, 17).unwrap(), small_divisor(&f, -17).unwrap());
        assert!(small_divisor(&f, 0).is_err());
    }

    #[test]
    fn record_roundtrip() {
        let f = synth_liouville(0.5, 3, 9).unwrap();
        let line = f.to_record(0.5);
        let (g, beta) = Frequency::from_record(&line).unwrap();
        assert_eq!(beta, 0.5);
        assert_eq!(g.value().to_bits(), f.value().to_bits());
        assert_eq!(g.quotients(), f.quotients());
    }
}
