//! Spectra of periodic approximants α = p/q, gap labels, gap-decay fits,
//! homogeneity, gap separation and Hölder continuity of ρ.
//!
//! For each phase θ the spectrum of the q-periodic operator is a union of q
//! bands whose edges are the eigenvalues of the periodic and antiperiodic
//! q×q problems. Sorting those 2q values s₁ ≤ … ≤ s_{2q}, band j is
//! [s_{2j−1}, s_{2j}]. The band structure is the union over θ.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arithmetic::{norm_dist, Frequency};
use crate::cocycle::Cocycle;
use crate::error::{Error, Result};
use crate::fourier::ScalarMap;
use crate::linalg::{cyclic_count, DD};

pub const BISECTION_TOL: f64 = 1e-13;
pub const MERGE_TOL: f64 = 10.0 * BISECTION_TOL;
pub const DEFAULT_RHO_TOL: f64 = 1e-3;
pub const DEFAULT_RHO_ITERATIONS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Precision {
    Double,
    /// Double-double pivots in the Sturm counts and bisection to full f64 resolution.
    Extended,
}

/// How the IDS at a gap maps to the label m in 2ρ ≡ mα.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelConvention {
    /// N(E) = 1 − 2ρ(E): IDS j/q ≡ −mp/q.
    OneMinusTwoRho,
    /// N(E) = 2ρ(E): IDS j/q ≡ mp/q.
    TwoRho,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandOptions {
    /// θ samples over [0, 1). The discriminant has period 1/q in θ, so
    /// only the max(4, ⌈samples/q⌉) distinct phases in [0, 1/q) are computed.
    pub theta_samples: usize,
    pub precision: Precision,
    /// Golden-section refinement of each extremal edge in θ.
    pub refine: bool,
}

impl BandOptions {
    pub fn for_q(q: u64) -> Self {
        BandOptions { theta_samples: (4 * q as usize).max(8), precision: Precision::Double, refine: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandStructure {
    pub p: u64,
    pub q: u64,
    pub lambda: f64,
    pub potential: ScalarMap,
    /// Band j (0-based) as the union over θ: [min s_{2j+1}, max s_{2j+2}].
    pub band_edges: Vec<(f64, f64)>,
    pub theta_samples: usize,
    pub precision: Precision,
    /// Gap indices whose θ-refinement moved an edge by more than half the gap width.
    pub unresolved: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRecord {
    pub m: i64,
    pub e_minus: f64,
    pub e_plus: f64,
    pub width: f64,
    /// IDS j/q in the gap.
    pub ids_num: u64,
    pub ids_den: u64,
    /// ‖2ρ(E_mid) − m p/q‖ on the approximant.
    pub rho_resid: f64,
    /// |m|·|α − p/q|: how far mα drifts from the approximant's label.
    pub irrational_drift: f64,
    pub flagged: bool,
}

fn check_coprime(p: u64, q: u64) -> Result<()> {
    fn gcd(a: u64, b: u64) -> u64 {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }
    if q == 0 || gcd(p, q) != 1 {
        return Err(Error::InvalidArgument(format!("{p}/{q} is not a reduced fraction")));
    }
    Ok(())
}

/// sup |f| on ℝ, bounded by the ℓ¹ norm of the coefficients.
fn sup_bound(f: &ScalarMap) -> f64 {
    f.l1()
}

/// [−2 − |λ|·sup|f| − 1, 2 + |λ|·sup|f| + 1].
pub fn bracket(lambda: f64, f: &ScalarMap) -> (f64, f64) {
    let r = 3.0 + lambda.abs() * sup_bound(f);
    (-r, r)
}

/// Diagonal λf(θ + np/q), n = 0..q−1.
pub fn diagonal(lambda: f64, f: &ScalarMap, p: u64, q: u64, theta: f64) -> Vec<f64> {
    (0..q)
        .map(|n| {
            let x = theta + ((n as u128 * p as u128) % q as u128) as f64 / q as f64;
            lambda * f.eval_real(x).re
        })
        .collect()
}

/// Sorted eigenvalues for q ≤ 2, corner = ±1.
fn small_eigenvalues(diag: &[f64], corner: f64) -> Vec<f64> {
    match diag.len() {
        1 => vec![diag[0] + 2.0 * corner],
        2 => {
            let off = 1.0 + corner;
            let m = (diag[0] + diag[1]) / 2.0;
            let r = (((diag[0] - diag[1]) / 2.0).powi(2) + off * off).sqrt();
            vec![m - r, m + r]
        }
        _ => unreachable!(),
    }
}

/// Count of eigenvalues below e for the periodic (corner 1) or antiperiodic (corner −1) problem.
fn count_below(diag: &[f64], corner: f64, e: f64, precision: Precision) -> usize {
    if diag.len() <= 2 {
        return small_eigenvalues(diag, corner).iter().filter(|&&v| v < e).count();
    }
    match precision {
        Precision::Double => cyclic_count::<f64>(diag, corner, e),
        Precision::Extended => cyclic_count::<DD>(diag, corner, e),
    }
}

fn bisect(diag: &[f64], corner: f64, k: usize, mut lo: f64, mut hi: f64, precision: Precision) -> f64 {
    loop {
        let mid = 0.5 * (lo + hi);
        let done = match precision {
            Precision::Double => hi - lo <= BISECTION_TOL,
            Precision::Extended => mid <= lo || mid >= hi,
        };
        if done {
            return mid;
        }
        if count_below(diag, corner, mid, precision) > k {
            hi = mid;
        } else {
            lo = mid;
        }
    }
}

/// All q eigenvalues, found by recursive splitting on counts.
fn all_eigenvalues(diag: &[f64], corner: f64, precision: Precision) -> Vec<f64> {
    let q = diag.len();
    if q <= 2 {
        return small_eigenvalues(diag, corner);
    }
    let lo = diag.iter().cloned().fold(f64::INFINITY, f64::min) - 2.0 - 1e-9;
    let hi = diag.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 2.0 + 1e-9;
    let mut out = vec![0.0; q];
    // (lo, hi, count below lo, count below hi)
    let mut stack = vec![(lo, hi, 0usize, q)];
    while let Some((a, b, ca, cb)) = stack.pop() {
        if ca == cb {
            continue;
        }
        if cb - ca == 1 {
            out[ca] = bisect(diag, corner, ca, a, b, precision);
            continue;
        }
        let mid = 0.5 * (a + b);
        let small = match precision {
            Precision::Double => b - a <= BISECTION_TOL,
            Precision::Extended => mid <= a || mid >= b,
        };
        if small {
            for slot in out.iter_mut().take(cb).skip(ca) {
                *slot = mid;
            }
            continue;
        }
        let cm = count_below(diag, corner, mid, precision);
        stack.push((a, mid, ca, cm));
        stack.push((mid, b, cm, cb));
    }
    out
}

/// The 2q sorted band edges at phase θ.
pub fn edges_at(lambda: f64, f: &ScalarMap, p: u64, q: u64, theta: f64, precision: Precision) -> Vec<f64> {
    let diag = diagonal(lambda, f, p, q, theta);
    let mut s = all_eigenvalues(&diag, 1.0, precision);
    s.extend(all_eigenvalues(&diag, -1.0, precision));
    s.sort_by(f64::total_cmp);
    s
}

/// Single edge s_i(θ) (0-based index into the sorted 2q list), by
/// bisection on the combined periodic + antiperiodic count.
fn edge_at(lambda: f64, f: &ScalarMap, p: u64, q: u64, theta: f64, i: usize, precision: Precision) -> f64 {
    let diag = diagonal(lambda, f, p, q, theta);
    let count = |e: f64| count_below(&diag, 1.0, e, precision) + count_below(&diag, -1.0, e, precision);
    if q <= 2 {
        let mut s = small_eigenvalues(&diag, 1.0);
        s.extend(small_eigenvalues(&diag, -1.0));
        s.sort_by(f64::total_cmp);
        return s[i];
    }
    let mut lo = diag.iter().cloned().fold(f64::INFINITY, f64::min) - 2.0 - 1e-9;
    let mut hi = diag.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 2.0 + 1e-9;
    loop {
        let mid = 0.5 * (lo + hi);
        let done = match precision {
            Precision::Double => hi - lo <= BISECTION_TOL,
            Precision::Extended => mid <= lo || mid >= hi,
        };
        if done {
            return mid;
        }
        if count(mid) > i {
            hi = mid;
        } else {
            lo = mid;
        }
    }
}

fn golden_extremum(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, maximize: bool) -> (f64, f64) {
    let sgn = if maximize { 1.0 } else { -1.0 };
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (sgn * f(c), sgn * f(d));
    for _ in 0..40 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = sgn * f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = sgn * f(d);
        }
    }
    if fc > fd {
        (c, sgn * fc)
    } else {
        (d, sgn * fd)
    }
}

/// Band structure of H with α = p/q, as the union over θ of the per-phase bands.
pub fn band_structure(lambda: f64, f: &ScalarMap, p: u64, q: u64, opts: &BandOptions) -> Result<BandStructure> {
    check_coprime(p, q)?;
    if !f.is_real() {
        return Err(Error::InvalidArgument("potential must be real".into()));
    }
    let m = opts.theta_samples.div_ceil(q as usize).max(4);
    let thetas: Vec<f64> = (0..m).map(|i| i as f64 / (m as f64 * q as f64)).collect();
    let slices: Vec<Vec<f64>> =
        thetas.par_iter().map(|&t| edges_at(lambda, f, p, q, t, opts.precision)).collect();
    let n = 2 * q as usize;
    let mut ext = Vec::with_capacity(n);
    for i in 0..n {
        let maximize = i % 2 == 1;
        let (mut best_j, mut best) = (0usize, slices[0][i]);
        for (j, s) in slices.iter().enumerate() {
            if (maximize && s[i] > best) || (!maximize && s[i] < best) {
                best = s[i];
                best_j = j;
            }
        }
        ext.push((best_j, best));
    }
    let sampled: Vec<f64> = ext.iter().map(|e| e.1).collect();
    let refined: Vec<f64> = if opts.refine && m >= 3 {
        (0..n)
            .into_par_iter()
            .map(|i| {
                let maximize = i % 2 == 1;
                let h = 1.0 / (m as f64 * q as f64);
                let t0 = thetas[ext[i].0];
                let (_, v) = golden_extremum(
                    |t| edge_at(lambda, f, p, q, t, i, opts.precision),
                    t0 - h,
                    t0 + h,
                    maximize,
                );
                if maximize {
                    v.max(sampled[i])
                } else {
                    v.min(sampled[i])
                }
            })
            .collect()
    } else {
        sampled.clone()
    };
    let band_edges: Vec<(f64, f64)> = (0..q as usize).map(|j| (refined[2 * j], refined[2 * j + 1])).collect();
    let mut unresolved = Vec::new();
    for j in 1..q as usize {
        let w_ref = refined[2 * j] - refined[2 * j - 1];
        let w_s = sampled[2 * j] - sampled[2 * j - 1];
        if w_ref > MERGE_TOL && (w_s - w_ref).abs() > 0.5 * w_ref {
            unresolved.push(j);
        }
    }
    Ok(BandStructure {
        p,
        q,
        lambda,
        potential: f.clone(),
        band_edges,
        theta_samples: opts.theta_samples,
        precision: opts.precision,
        unresolved,
    })
}

impl BandStructure {
    pub fn merge_tol(&self) -> f64 {
        match self.precision {
            Precision::Double => MERGE_TOL,
            Precision::Extended => 1e-15,
        }
    }

    /// Disjoint sorted intervals of the union.
    pub fn bands(&self) -> Vec<(f64, f64)> {
        let mut out: Vec<(f64, f64)> = Vec::new();
        for &(a, b) in &self.band_edges {
            match out.last_mut() {
                Some(last) if a - last.1 <= self.merge_tol() => last.1 = last.1.max(b),
                _ => out.push((a, b)),
            }
        }
        out
    }

    pub fn measure(&self) -> f64 {
        self.bands().iter().map(|(a, b)| b - a).sum()
    }

    pub fn e_min(&self) -> f64 {
        self.band_edges[0].0
    }

    pub fn e_max(&self) -> f64 {
        self.band_edges.last().unwrap().1
    }

    /// Open gaps as (j, E⁻, E⁺): j bands lie below the gap.
    pub fn gaps(&self) -> Vec<(usize, f64, f64)> {
        (1..self.band_edges.len())
            .filter_map(|j| {
                let lo = self.band_edges[j - 1].1;
                let hi = self.band_edges[j].0;
                (hi - lo > self.merge_tol()).then_some((j, lo, hi))
            })
            .collect()
    }

    /// IDS j/q at an energy in a gap (or outside the spectrum).
    pub fn ids(&self, e: f64) -> Result<(u64, u64)> {
        let mut j = 0u64;
        for &(a, b) in &self.band_edges {
            if e > b {
                j += 1;
            } else if e >= a {
                return Err(Error::InvalidArgument(format!("E = {e} lies in band [{a}, {b}]")));
            }
        }
        Ok((j, self.q))
    }

    pub fn ids_of(lambda: f64, f: &ScalarMap, p: u64, q: u64, e: f64) -> Result<(u64, u64)> {
        band_structure(lambda, f, p, q, &BandOptions::for_q(q))?.ids(e)
    }

    /// Stable content string for hashing/caching.
    pub fn cache_key(lambda: f64, f: &ScalarMap, p: u64, q: u64, opts: &BandOptions) -> String {
        let coeffs: Vec<String> = f
            .coeffs()
            .map(|(k, c)| format!("{k}:{}:{}", crate::hexfloat::format(c.re), crate::hexfloat::format(c.im)))
            .collect();
        format!(
            "bands|{}|{}|{p}/{q}|{}|{:?}|{}",
            crate::hexfloat::format(lambda),
            coeffs.join(","),
            opts.theta_samples,
            opts.precision,
            opts.refine
        )
    }
}

fn mod_inverse(p: u64, q: u64) -> u64 {
    if q == 1 {
        return 0;
    }
    let (mut t, mut new_t) = (0i128, 1i128);
    let (mut r, mut new_r) = (q as i128, (p % q) as i128);
    while new_r != 0 {
        let quo = r / new_r;
        (t, new_t) = (new_t, t - quo * new_t);
        (r, new_r) = (new_r, r - quo * new_r);
    }
    t.rem_euclid(q as i128) as u64
}

/// Label m with |m| ≤ q/2 for IDS j/q at α = p/q.
pub fn label_for_ids(j: u64, p: u64, q: u64, convention: LabelConvention) -> i64 {
    let pinv = mod_inverse(p, q) as i128;
    let q = q as i128;
    let target = match convention {
        LabelConvention::OneMinusTwoRho => -(j as i128),
        LabelConvention::TwoRho => j as i128,
    };
    let m = (target * pinv).rem_euclid(q);
    (if 2 * m > q { m - q } else { m }) as i64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelOptions {
    pub convention: LabelConvention,
    pub rho_iterations: usize,
    pub rho_tol: f64,
}

impl Default for LabelOptions {
    fn default() -> Self {
        LabelOptions {
            convention: LabelConvention::OneMinusTwoRho,
            rho_iterations: DEFAULT_RHO_ITERATIONS,
            rho_tol: DEFAULT_RHO_TOL,
        }
    }
}

/// Labels every open gap; rho_check runs the approximant cocycle at the gap midpoint.
pub fn label_gaps(bs: &BandStructure, freq: &Frequency, opts: &LabelOptions) -> Result<Vec<GapRecord>> {
    let alpha_q = bs.p as f64 / bs.q as f64;
    let drift_per_label = (freq.value() - alpha_q).abs();
    let gaps = bs.gaps();
    let records: Vec<Result<GapRecord>> = gaps
        .par_iter()
        .map(|&(j, lo, hi)| {
            let m = label_for_ids(j as u64, bs.p, bs.q, opts.convention);
            let mid = 0.5 * (lo + hi);
            let c = Cocycle::schrodinger(alpha_q, bs.lambda, bs.potential.clone(), mid)?;
            let rho = c.rotation_number(opts.rho_iterations, 0.0)?;
            let rho_resid = norm_dist(2.0 * rho.rho - m as f64 * alpha_q);
            Ok(GapRecord {
                m,
                e_minus: lo,
                e_plus: hi,
                width: hi - lo,
                ids_num: j as u64,
                ids_den: bs.q,
                rho_resid,
                irrational_drift: m.unsigned_abs() as f64 * drift_per_label,
                flagged: rho_resid > opts.rho_tol,
            })
        })
        .collect();
    records.into_iter().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub gamma: f64,
    pub intercept: f64,
    /// Max |ln w − (intercept − γ|m|)| over the fitted points.
    pub residual: f64,
    /// Root-mean-square of the same deviations.
    pub rms: f64,
    pub used: Vec<(u64, f64)>,
    /// Labels dropped because their gap is collapsed.
    pub excluded: Vec<u64>,
}

/// Least squares of ln(width) against |m|.
pub fn gap_decay_fit(points: &[(u64, f64)]) -> Result<DecayFit> {
    let used: Vec<(u64, f64)> = points.iter().cloned().filter(|p| p.1 > 0.0).collect();
    let excluded: Vec<u64> = points.iter().filter(|p| p.1 <= 0.0).map(|p| p.0).collect();
    if used.len() < 4 {
        return Err(Error::NotEnoughData(format!("need >= 4 nonzero widths, have {}", used.len())));
    }
    let n = used.len() as f64;
    let xs: Vec<f64> = used.iter().map(|p| p.0 as f64).collect();
    let ys: Vec<f64> = used.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::NotEnoughData("all labels identical".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let devs: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).abs()).collect();
    let residual = devs.iter().cloned().fold(0.0, f64::max);
    let rms = (devs.iter().map(|d| d * d).sum::<f64>() / n).sqrt();
    Ok(DecayFit { gamma: -slope, intercept, residual, rms, used, excluded })
}

/// Widths of the gaps with labels 1..=max_label from a labeled set, choosing
/// the wider gap when ±m both occur (0 when absent).
pub fn widths_by_label(records: &[GapRecord], max_label: u64) -> Vec<(u64, f64)> {
    (1..=max_label)
        .map(|m| {
            let w = records
                .iter()
                .filter(|r| r.m.unsigned_abs() == m)
                .map(|r| r.width)
                .fold(0.0, f64::max);
            (m, w)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomogeneityReport {
    pub min_ratio: f64,
    pub argmin: f64,
    pub samples: usize,
}

/// Leb((E−σ, E+σ) ∩ bands)/σ for a sorted disjoint band list.
pub fn local_ratio(bands: &[(f64, f64)], prefix: &[f64], e: f64, sigma: f64) -> f64 {
    let measure_below = |x: f64| -> f64 {
        // measure of bands ∩ (−∞, x]
        let idx = bands.partition_point(|b| b.1 <= x);
        let mut m = prefix[idx];
        if idx < bands.len() && bands[idx].0 < x {
            m += x - bands[idx].0;
        }
        m
    };
    ((measure_below(e + sigma) - measure_below(e - sigma)) / sigma).clamp(0.0, 2.0)
}

/// Minimum local ratio over band endpoints and `e_samples` points spread
/// uniformly over the band measure.
pub fn homogeneity_scan(bs: &BandStructure, sigma: f64, e_samples: usize) -> Result<HomogeneityReport> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument("sigma must be positive".into()));
    }
    let bands = bs.bands();
    Ok(homogeneity_of(&bands, sigma, e_samples))
}

/// Cumulative band measure: prefix[i] = Σ_{j<i} |band j|.
pub fn measure_prefix(bands: &[(f64, f64)]) -> Vec<f64> {
    let mut prefix = vec![0.0];
    for b in bands {
        prefix.push(prefix.last().unwrap() + (b.1 - b.0));
    }
    prefix
}

/// Band endpoints plus `e_samples` points spread uniformly over the band measure.
pub fn sample_points(bands: &[(f64, f64)], prefix: &[f64], e_samples: usize) -> Vec<f64> {
    let total = *prefix.last().unwrap();
    let mut points: Vec<f64> = bands.iter().flat_map(|b| [b.0, b.1]).collect();
    for i in 0..e_samples {
        let target = total * (i as f64 + 0.5) / e_samples as f64;
        let idx = prefix.partition_point(|&p| p <= target).saturating_sub(1).min(bands.len() - 1);
        points.push(bands[idx].0 + (target - prefix[idx]));
    }
    points
}

pub fn homogeneity_of(bands: &[(f64, f64)], sigma: f64, e_samples: usize) -> HomogeneityReport {
    let prefix = measure_prefix(bands);
    let points = sample_points(bands, &prefix, e_samples);
    let mut best = (f64::INFINITY, 0.0);
    for &e in &points {
        let r = local_ratio(bands, &prefix, e, sigma);
        if r < best.0 {
            best = (r, e);
        }
    }
    HomogeneityReport { min_ratio: best.0, argmin: best.1, samples: points.len() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationReport {
    /// (m, m', dist, dist·e^{8β|m'|}) for |m'| ≥ |m|.
    pub pairs: Vec<(i64, i64, f64, f64)>,
    /// (m, dist(G_m, G₀), dist·e^{8β|m|}).
    pub to_outside: Vec<(i64, f64, f64)>,
    /// Empirical c⋆: smallest weighted distance.
    pub c_star: f64,
    pub all_positive: bool,
}

fn interval_dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    (b.0 - a.1).max(a.0 - b.1).max(0.0)
}

pub fn gap_separation_check(records: &[GapRecord], beta: f64, e_min: f64, e_max: f64) -> Result<SeparationReport> {
    if records.len() < 2 {
        return Err(Error::NotEnoughData("need at least two gaps".into()));
    }
    let mut pairs = Vec::new();
    let mut c_star = f64::INFINITY;
    let mut all_positive = true;
    for (i, a) in records.iter().enumerate() {
        for (j, b) in records.iter().enumerate() {
            if i == j || b.m.unsigned_abs() < a.m.unsigned_abs() || (b.m.unsigned_abs() == a.m.unsigned_abs() && j < i) {
                continue;
            }
            let d = interval_dist((a.e_minus, a.e_plus), (b.e_minus, b.e_plus));
            let w = d * (8.0 * beta * b.m.unsigned_abs() as f64).exp();
            all_positive &= d > 0.0;
            c_star = c_star.min(w);
            pairs.push((a.m, b.m, d, w));
        }
    }
    let mut to_outside = Vec::new();
    for r in records {
        let d = (r.e_minus - e_min).min(e_max - r.e_plus);
        let w = d * (8.0 * beta * r.m.unsigned_abs() as f64).exp();
        all_positive &= d > 0.0;
        c_star = c_star.min(w);
        to_outside.push((r.m, d, w));
    }
    Ok(SeparationReport { pairs, to_outside, c_star, all_positive })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolderReport {
    pub max_ratio: f64,
    pub argmax: (f64, f64),
    pub energies: usize,
    /// Largest rotation-number error bar among the samples.
    pub rho_error: f64,
}

/// max |ρ(E₁) − ρ(E₂)|/|E₁ − E₂|^{1/2} over all pairs of `n_energies`
/// equispaced energies in the bracketing interval, |ΔE| ≥ 1e−10.
pub fn holder_check(lambda: f64, f: &ScalarMap, alpha: f64, n_energies: usize, iterations: usize) -> Result<HolderReport> {
    if n_energies < 2 {
        return Err(Error::InvalidArgument("need at least 2 energies".into()));
    }
    let (lo, hi) = bracket(lambda, f);
    let es: Vec<f64> = (0..n_energies).map(|i| lo + (hi - lo) * i as f64 / (n_energies - 1) as f64).collect();
    let rhos: Vec<Result<(f64, f64)>> = es
        .par_iter()
        .map(|&e| {
            let r = Cocycle::schrodinger(alpha, lambda, f.clone(), e)?.rotation_number(iterations, 0.0)?;
            Ok((r.rho, r.error_bar))
        })
        .collect();
    let rhos = rhos.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(holder_from_samples(&es, &rhos))
}

pub fn holder_from_samples(es: &[f64], rhos: &[(f64, f64)]) -> HolderReport {
    let mut best = (0.0, (es[0], es[0]));
    for i in 0..es.len() {
        for j in i + 1..es.len() {
            let de = (es[j] - es[i]).abs();
            if de < 1e-10 {
                continue;
            }
            let r = (rhos[j].0 - rhos[i].0).abs() / de.sqrt();
            if r > best.0 {
                best = (r, (es[i], es[j]));
            }
        }
    }
    let rho_error = rhos.iter().map(|r| r.1).fold(0.0, f64::max);
    HolderReport { max_ratio: best.0, argmax: best.1, energies: es.len(), rho_error }
}

/// Hausdorff distance between two unions of closed intervals.
pub fn hausdorff(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    let dist_to = |x: f64, set: &[(f64, f64)]| -> f64 {
        set.iter().map(|&(l, h)| if x < l { l - x } else if x > h { x - h } else { 0.0 }).fold(f64::INFINITY, f64::min)
    };
    // sup over a set of the distance to the other set is attained at an
    // endpoint or at a midpoint between two consecutive intervals of the other
    let directed = |s: &[(f64, f64)], t: &[(f64, f64)]| -> f64 {
        let mut cands: Vec<f64> = s.iter().flat_map(|i| [i.0, i.1]).collect();
        for w in t.windows(2) {
            let m = 0.5 * (w[0].1 + w[1].0);
            if s.iter().any(|&(l, h)| l <= m && m <= h) {
                cands.push(m);
            }
        }
        cands.into_iter().map(|x| dist_to(x, t)).fold(0.0, f64::max)
    };
    directed(a, b).max(directed(b, a))
}
