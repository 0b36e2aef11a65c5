//! Aubry-dual long-range operator, Bloch waves at gap edges and the
//! vector U built from them.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arithmetic::norm_dist;
use crate::cocycle::Cocycle;
use crate::error::{Error, Result};
use crate::fourier::{CVec2, Period, ScalarMap, VecMap, C64};
use crate::linalg::HermitianBand;

pub const DEFAULT_TRUNCATION: usize = 256;
pub const MAX_TRUNCATION: usize = 4096;
pub const DEFAULT_THETA_GRID: usize = 256;
pub const DEFAULT_N_MAX: i64 = 64;
pub const RESIDUAL_GRID: usize = 1024;
/// Coefficients below this are treated as noise in decay fits.
pub const DECAY_FLOOR: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlochOptions {
    /// Starting truncation N (matrix size 2N+1).
    pub truncation: usize,
    pub max_truncation: usize,
    pub theta_grid: usize,
    /// Largest |ñ| tried for resonant phases.
    pub n_max: i64,
    /// Largest accepted |E_found − E_requested|.
    pub energy_tol: f64,
    pub residual_tol: f64,
    /// Eigenvalue change and tail mass thresholds for the doubling policy.
    pub converge_tol: f64,
}

impl Default for BlochOptions {
    fn default() -> Self {
        BlochOptions {
            truncation: DEFAULT_TRUNCATION,
            max_truncation: MAX_TRUNCATION,
            theta_grid: DEFAULT_THETA_GRID,
            n_max: DEFAULT_N_MAX,
            energy_tol: 1e-3,
            residual_tol: 1e-6,
            converge_tol: 1e-10,
        }
    }
}

/// Least-squares slope of ln|û_k| against |k| beyond `onset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoefficientDecay {
    pub rate: f64,
    pub intercept: f64,
    pub onset: usize,
    pub used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlochSolution {
    /// Eigenvalue of the dual operator actually solved for.
    pub energy: f64,
    pub requested_energy: f64,
    /// θ(E) in [0, 1/2].
    pub theta: f64,
    pub truncation: usize,
    /// û_k at index k + N, with û₀ = 1.
    pub u_hat: Vec<C64>,
    pub n_tilde: Option<i64>,
    pub duality_residual: f64,
    pub decay: Option<CoefficientDecay>,
    /// θ was mapped to 1 − θ (with û_k → conj û_{−k}) to land in [0, 1/2].
    pub reflected: bool,
}

impl BlochSolution {
    pub fn coeff(&self, k: i64) -> C64 {
        let n = self.truncation as i64;
        if k.abs() > n {
            C64::new(0.0, 0.0)
        } else {
            self.u_hat[(k + n) as usize]
        }
    }

    /// u(x) = Σ û_k e^{2πikx}.
    pub fn u_map(&self) -> ScalarMap {
        ScalarMap::from_coeffs(self.u_hat.clone(), Period::One, false).expect("odd length")
    }

    pub fn max_abs(&self) -> f64 {
        self.u_hat.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Σ_{|k| > m} |û_k|.
    pub fn tail_mass(&self, m: usize) -> f64 {
        let n = self.truncation as i64;
        (-n..=n).filter(|k| k.unsigned_abs() as usize > m).map(|k| self.coeff(k).norm()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Resonance {
    pub n_tilde: i64,
    /// ‖2θ − ñα‖.
    pub defect: f64,
}

/// U, Û = e^{iπñx}U and the sign in A(x)Û(x) = ±Û(x+α).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlochFrame {
    pub u: VecMap,
    pub u_hat: VecMap,
    pub n_tilde: i64,
    pub sign: i8,
    pub residual: f64,
    pub residual_re: f64,
    pub residual_im: f64,
}

fn frac(x: f64) -> f64 {
    let r = x.rem_euclid(1.0);
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

fn circle_dist(a: f64, b: f64) -> f64 {
    norm_dist(a - b)
}

/// Ĥ_θ restricted to sites n ∈ [−N, N]: off-diagonals λf̂_k, diagonal
/// 2cos2π(θ+nα) + λf̂₀.
pub fn dual_matrix(lambda: f64, f: &ScalarMap, alpha: f64, theta: f64, n: usize) -> HermitianBand {
    let b = f.band_limit();
    let dim = 2 * n + 1;
    let mut h = HermitianBand::zeros(dim, b.min(dim - 1));
    let f0 = f.coeff(0).re;
    for i in 0..dim {
        let site = i as f64 - n as f64;
        let d = 2.0 * (2.0 * PI * (theta + site * alpha)).cos() + lambda * f0;
        h.set(i, 0, C64::new(d, 0.0));
        for k in 1..=b.min(i) {
            h.set(i, k, f.coeff(k as i64) * lambda);
        }
    }
    h
}

/// Eigenvalue counting function of the truncated dual operator, averaged
/// over `thetas` equally spaced phases and normalized by 2N+1.
pub fn dual_ids(lambda: f64, f: &ScalarMap, alpha: f64, e: f64, n: usize, thetas: usize) -> f64 {
    let total: usize = (0..thetas)
        .into_par_iter()
        .map(|j| dual_matrix(lambda, f, alpha, j as f64 / thetas as f64, n).count_below(e))
        .collect::<Vec<_>>()
        .iter()
        .sum();
    total as f64 / (thetas * (2 * n + 1)) as f64
}

struct Pair {
    value: f64,
    vector: Vec<C64>,
}

fn argmax(v: &[C64]) -> usize {
    let mut best = 0;
    for (i, z) in v.iter().enumerate() {
        if z.norm() > v[best].norm() {
            best = i;
        }
    }
    best
}

/// The eigenvalue of `h` nearest `target`, with its eigenvector.
fn nearest_pair(h: &HermitianBand, target: f64) -> Pair {
    let c = h.count_below(target);
    let cands: Vec<usize> = [c.checked_sub(1), Some(c)].into_iter().flatten().filter(|&k| k < h.dim()).collect();
    let (value, _) = cands
        .iter()
        .map(|&k| {
            let v = h.eigenvalue(k);
            (v, (v - target).abs())
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("nonempty matrix");
    Pair { value, vector: h.eigenvector(value) }
}

/// Nearest eigenpair to `target` whose vector carries at least half its
/// peak weight on the central site.
fn centered_pair(h: &HermitianBand, target: f64) -> Option<Pair> {
    let c = h.count_below(target);
    let mut cands: Vec<(f64, f64)> = (c.saturating_sub(3)..(c + 3).min(h.dim()))
        .map(|k| {
            let v = h.eigenvalue(k);
            (v, (v - target).abs())
        })
        .collect();
    cands.sort_by(|a, b| a.1.total_cmp(&b.1));
    let mid = h.dim() / 2;
    for (value, _) in cands {
        let vector = h.eigenvector(value);
        let peak = vector[argmax(&vector)].norm();
        if vector[mid].norm() >= 0.5 * peak {
            return Some(Pair { value, vector });
        }
    }
    None
}

/// Bloch solution Ĥ_θ û = E û at truncation N.
///
/// Phases on a grid locate an eigenvalue near E; the state is recentred on
/// site 0, then resonant phases θ = (ñα + j)/2 nearby are tried, since gap
/// edges are attained exactly there. If none lies within `energy_tol`, the
/// branch through E is followed to its root instead (E inside a band).
pub fn find_bloch(lambda: f64, f: &ScalarMap, alpha: f64, e: f64, n: usize, opts: &BlochOptions) -> Result<BlochSolution> {
    if n < 4 * f.band_limit().max(1) {
        return Err(Error::InvalidArgument(format!("truncation {n} below 4 × band width {}", f.band_limit())));
    }
    let grid = opts.theta_grid.max(8);
    let scan: Vec<(f64, f64)> = (0..grid)
        .into_par_iter()
        .map(|j| {
            let th = j as f64 / grid as f64;
            let h = dual_matrix(lambda, f, alpha, th, n);
            let c = h.count_below(e);
            let d = [c.checked_sub(1), Some(c)]
                .into_iter()
                .flatten()
                .filter(|&k| k < h.dim())
                .map(|k| (h.eigenvalue(k) - e).abs())
                .fold(f64::INFINITY, f64::min);
            (th, d)
        })
        .collect();
    let (mut theta0, _) = scan.iter().copied().min_by(|a, b| a.1.total_cmp(&b.1)).expect("grid");
    let pair = nearest_pair(&dual_matrix(lambda, f, alpha, theta0, n), e);
    let site = argmax(&pair.vector) as i64 - n as i64;
    theta0 = frac(theta0 + site as f64 * alpha);

    let window = 4.0 / grid as f64;
    let mut best: Option<(f64, i64, Pair)> = None;
    for nt in -opts.n_max..=opts.n_max {
        for j in 0..2 {
            let th = frac((nt as f64 * alpha + j as f64) / 2.0);
            if circle_dist(th, theta0) > window {
                continue;
            }
            let h = dual_matrix(lambda, f, alpha, th, n);
            if let Some(p) = centered_pair(&h, e) {
                let d = (p.value - e).abs();
                if d <= opts.energy_tol && best.as_ref().is_none_or(|b| d < (b.2.value - e).abs()) {
                    best = Some((th, nt, p));
                }
            }
        }
    }
    let (theta, n_tilde, pair) = match best {
        Some((th, nt, p)) => (th, Some(nt), p),
        None => {
            let (th, p) = follow_root(lambda, f, alpha, e, n, theta0, window)?;
            (th, None, p)
        }
    };
    finalize(lambda, f, alpha, e, n, theta, n_tilde, pair)
}

/// Bisection on θ ↦ (centred eigenvalue − E) over θ₀ ± w.
fn follow_root(lambda: f64, f: &ScalarMap, alpha: f64, e: f64, n: usize, theta0: f64, w: f64) -> Result<(f64, Pair)> {
    let g = |th: f64| -> Option<f64> { centered_pair(&dual_matrix(lambda, f, alpha, th, n), e).map(|p| p.value - e) };
    let steps = 16;
    let pts: Vec<f64> = (0..=steps).map(|i| theta0 - w + 2.0 * w * i as f64 / steps as f64).collect();
    let vals: Vec<Option<f64>> = pts.iter().map(|&t| g(t)).collect();
    // bracket closest to θ₀
    let mut brackets: Vec<(f64, f64, f64)> = Vec::new();
    for i in 0..steps {
        if let (Some(a), Some(b)) = (vals[i], vals[i + 1]) {
            if a == 0.0 {
                brackets.push((pts[i], pts[i], a));
            } else if a * b < 0.0 {
                brackets.push((pts[i], pts[i + 1], a));
            }
        }
    }
    brackets.sort_by(|x, y| (0.5 * (x.0 + x.1) - theta0).abs().total_cmp(&(0.5 * (y.0 + y.1) - theta0).abs()));
    let (mut lo, mut hi, mut g_lo) = *brackets
        .first()
        .ok_or_else(|| Error::NoBloch(format!("no dual eigenvalue reaches E = {e} near θ = {theta0:.6}")))?;
    for _ in 0..200 {
        if hi - lo <= 1e-15 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        match g(mid) {
            Some(v) if v == 0.0 => {
                lo = mid;
                hi = mid;
            }
            Some(v) if (v < 0.0) == (g_lo < 0.0) => {
                lo = mid;
                g_lo = v;
            }
            Some(_) => hi = mid,
            None => break,
        }
    }
    let th = frac(0.5 * (lo + hi));
    let p = centered_pair(&dual_matrix(lambda, f, alpha, th, n), e)
        .ok_or_else(|| Error::NoBloch(format!("lost the centred branch at θ = {th}")))?;
    Ok((th, p))
}

#[allow(clippy::too_many_arguments)]
fn finalize(
    lambda: f64,
    f: &ScalarMap,
    alpha: f64,
    e: f64,
    n: usize,
    mut theta: f64,
    mut n_tilde: Option<i64>,
    mut pair: Pair,
) -> Result<BlochSolution> {
    // recentre on the peak closest to site 0 so that |û_k| ≤ |û₀|
    let peak = pair.vector[argmax(&pair.vector)].norm();
    let ni = n as i64;
    let k0 = (-ni..=ni)
        .filter(|&k| pair.vector[(k + ni) as usize].norm() >= (1.0 - 1e-9) * peak)
        .min_by_key(|&k| (k.abs(), k))
        .expect("peak exists");
    if k0 != 0 {
        theta = frac(theta + k0 as f64 * alpha);
        n_tilde = n_tilde.map(|nt| nt + 2 * k0);
        pair = centered_pair(&dual_matrix(lambda, f, alpha, theta, n), pair.value)
            .ok_or_else(|| Error::NoBloch("recentred state not found".into()))?;
    }
    let mut u: Vec<C64> = pair.vector;
    let mut reflected = false;
    if theta > 0.5 {
        theta = frac(1.0 - theta);
        u = u.iter().rev().map(|z| z.conj()).collect();
        n_tilde = n_tilde.map(|nt| -nt);
        reflected = true;
    }
    let u0 = u[n];
    if u0.norm() < 1e-12 {
        return Err(Error::NoBloch(format!("û₀ = {u0} cannot be normalized")));
    }
    for z in u.iter_mut() {
        *z /= u0;
    }
    let mut sol = BlochSolution {
        energy: pair.value,
        requested_energy: e,
        theta,
        truncation: n,
        u_hat: u,
        n_tilde,
        duality_residual: 0.0,
        decay: None,
        reflected,
    };
    sol.duality_residual = duality_residual(&sol, lambda, f, alpha, RESIDUAL_GRID);
    let onset = n_tilde.map(|nt| 3 * nt.unsigned_abs() as usize).unwrap_or(0).max(1);
    sol.decay = decay_fit(&sol, onset);
    Ok(sol)
}

/// Bloch solution with the truncation doubled until the eigenvalue moves by
/// less than `converge_tol` and the mass beyond N/2 is below it.
pub fn find_bloch_adaptive(lambda: f64, f: &ScalarMap, alpha: f64, e: f64, opts: &BlochOptions) -> Result<BlochSolution> {
    let mut n = opts.truncation.max(4 * f.band_limit().max(1));
    let mut prev = find_bloch(lambda, f, alpha, e, n, opts)?;
    while 2 * n <= opts.max_truncation {
        n *= 2;
        let next = find_bloch(lambda, f, alpha, e, n, opts)?;
        if (next.energy - prev.energy).abs() < opts.converge_tol && next.tail_mass(n / 2) < opts.converge_tol {
            return Ok(next);
        }
        prev = next;
    }
    Err(Error::NotConverged(format!(
        "Bloch solution still moving at N = {n} (tail mass {:.3e})",
        prev.tail_mass(n / 2)
    )))
}

/// sup_x |(E − λf(x))e^{2πiθ}u(x) − u(x−α) − e^{4πiθ}u(x+α)|, the first row
/// of S(x)U(x) − e^{2πiθ}U(x+α); the second row vanishes identically.
pub fn duality_residual(sol: &BlochSolution, lambda: f64, f: &ScalarMap, alpha: f64, grid: usize) -> f64 {
    let u = sol.u_map();
    let at = u.sample_line(0.0, grid);
    let minus = u.shift(-alpha).sample_line(0.0, grid);
    let plus = u.shift(alpha).sample_line(0.0, grid);
    let fx = f.sample_line(0.0, grid);
    let ph = C64::from_polar(1.0, 2.0 * PI * sol.theta);
    (0..grid)
        .map(|j| {
            let v = sol.energy - lambda * fx[j].re;
            (at[j] * ph * v - minus[j] - plus[j] * ph * ph).norm()
        })
        .fold(0.0, f64::max)
}

/// Slope of ln|û_k| against |k| for |k| ≥ onset, above the noise floor.
pub fn decay_fit(sol: &BlochSolution, onset: usize) -> Option<CoefficientDecay> {
    let n = sol.truncation as i64;
    let pts: Vec<(f64, f64)> = (-n..=n)
        .filter(|k| k.unsigned_abs() as usize >= onset)
        .map(|k| (k.abs() as f64, sol.coeff(k).norm()))
        .filter(|&(_, a)| a > DECAY_FLOOR)
        .map(|(x, a)| (x, a.ln()))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let rate = sxy / sxx;
    Some(CoefficientDecay { rate, intercept: my - rate * mx, onset, used: pts.len() })
}

/// The integer |ñ| ≤ n_max minimizing ‖2θ − ñα‖, if below `tol`
/// (ties go to the smaller |ñ|, then to ñ > 0).
pub fn detect_resonance(sol: &BlochSolution, alpha: f64, n_max: i64, tol: f64) -> Option<Resonance> {
    let mut best: Option<Resonance> = None;
    for nt in 0..=n_max {
        for cand in [nt, -nt] {
            let d = norm_dist(2.0 * sol.theta - cand as f64 * alpha);
            if best.is_none_or(|b| d < b.defect) {
                best = Some(Resonance { n_tilde: cand, defect: d });
            }
            if nt == 0 {
                break;
            }
        }
    }
    best.filter(|r| r.defect < tol)
}

/// |m| / |ñ|, the measured constant in |m| ≤ C|ñ|.
pub fn label_ratio(m: i64, n_tilde: i64) -> Option<f64> {
    (n_tilde != 0).then(|| m.unsigned_abs() as f64 / n_tilde.unsigned_abs() as f64)
}

/// ℜV(z) = (V(z) + conj V(conj z))/2 coefficientwise.
pub fn real_part(v: &VecMap) -> VecMap {
    let src = v.clone();
    v.map_coeffs(|k, c| (c + src.coeff(-k).map(|z| z.conj())) * C64::new(0.5, 0.0), true)
}

/// ℑV(z) = (V(z) − conj V(conj z))/(2i) coefficientwise.
pub fn imag_part(v: &VecMap) -> VecMap {
    let src = v.clone();
    v.map_coeffs(|k, c| (c - src.coeff(-k).map(|z| z.conj())) * C64::new(0.0, -0.5), true)
}

/// sup over a grid of [0, P) of ‖A(x)W(x) − s·W(x+α)‖.
pub fn invariance_residual(cocycle: &Cocycle, w: &VecMap, sign: f64, grid: usize) -> f64 {
    let alpha = cocycle.alpha();
    let pl = w.period().length();
    let at = w.sample_line(0.0, grid);
    let next = w.shift(alpha).sample_line(0.0, grid);
    (0..grid)
        .map(|j| {
            let x = pl * j as f64 / grid as f64;
            let a = cocycle.matrix_at(x).map(|v| C64::new(v, 0.0));
            (a * at[j] - next[j] * C64::new(sign, 0.0)).norm()
        })
        .fold(0.0, f64::max)
}

/// U(x) = (e^{2πiθ}u(x), u(x−α)) and Û(x) = e^{iπñx}U(x) on ℝ/2ℤ, with the
/// sign s of A(x)Û(x) = sÛ(x+α), s = e^{2πiθ − iπñα} rounded to ±1.
pub fn assemble_u(sol: &BlochSolution, lambda: f64, f: &ScalarMap, alpha: f64, tol: f64) -> Result<BlochFrame> {
    let n_tilde = sol.n_tilde.ok_or_else(|| Error::NoBloch("no resonance ñ attached to the Bloch solution".into()))?;
    let ph = C64::from_polar(1.0, 2.0 * PI * sol.theta);
    let n = sol.truncation as i64;
    let pairs: Vec<(i64, CVec2)> = (-n..=n)
        .map(|k| {
            let c = sol.coeff(k);
            (k, CVec2::new(ph * c, c * C64::from_polar(1.0, -2.0 * PI * k as f64 * alpha)))
        })
        .collect();
    let u = VecMap::from_pairs(&pairs, Period::One, false);
    let hat_pairs: Vec<(i64, CVec2)> = pairs.iter().map(|&(k, c)| (2 * k + n_tilde, c)).collect();
    let u_hat = VecMap::from_pairs(&hat_pairs, Period::Two, false);
    let phase = C64::from_polar(1.0, 2.0 * PI * sol.theta - PI * n_tilde as f64 * alpha);
    let sign: i8 = if phase.re >= 0.0 { 1 } else { -1 };
    let cocycle = Cocycle::schrodinger(alpha, lambda, f.clone(), sol.energy)?;
    let s = sign as f64;
    let grid = 2 * RESIDUAL_GRID;
    let residual = invariance_residual(&cocycle, &u_hat, s, grid);
    let residual_re = invariance_residual(&cocycle, &real_part(&u_hat), s, grid);
    let residual_im = invariance_residual(&cocycle, &imag_part(&u_hat), s, grid);
    if residual > tol {
        return Err(Error::Residual { what: "A(x)Û(x) = ±Û(x+α)".into(), residual, tolerance: tol });
    }
    Ok(BlochFrame { u, u_hat, n_tilde, sign, residual, residual_re, residual_im })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arithmetic::Frequency;
    use crate::spectrum::{band_structure, BandOptions};

    fn golden() -> f64 {
        Frequency::golden(40).value()
    }

    #[test]
    fn dual_matrix_shapes() {
        let alpha = golden();
        let h = dual_matrix(0.0, &ScalarMap::amo(), alpha, 0.2, 10);
        for i in 0..21 {
            let want = 2.0 * (2.0 * PI * (0.2 + (i as f64 - 10.0) * alpha)).cos();
            assert_eq!(h.get(i, i).re, want);
            if i > 0 {
                assert_eq!(h.get(i, i - 1), C64::new(0.0, 0.0));
            }
        }
        let h = dual_matrix(0.3, &ScalarMap::amo(), alpha, 0.2, 10);
        let d = h.to_dense();
        assert_eq!(d, d.adjoint());
        assert_eq!(d[(5, 4)], C64::new(0.3, 0.0));
        assert_eq!(d[(5, 3)], C64::new(0.0, 0.0));
    }

    #[test]
    fn free_bloch_is_a_delta() {
        let alpha = golden();
        let e = 2.0 * (2.0 * PI * 0.3).cos();
        let sol = find_bloch(0.0, &ScalarMap::amo(), alpha, e, 64, &BlochOptions::default()).unwrap();
        assert!((sol.theta - 0.3).abs() < 1e-12, "theta {}", sol.theta);
        for k in -64..=64i64 {
            let want = if k == 0 { 1.0 } else { 0.0 };
            assert!((sol.coeff(k) - C64::new(want, 0.0)).norm() < 1e-12);
        }
        assert!(sol.duality_residual < 1e-12);
    }

    #[test]
    fn resonance_examples() {
        let alpha = golden();
        let mut sol = find_bloch(0.0, &ScalarMap::amo(), alpha, 1.0, 16, &BlochOptions::default()).unwrap();
        sol.theta = alpha / 2.0;
        assert_eq!(detect_resonance(&sol, alpha, 10, 1e-9).unwrap().n_tilde, 1);
        sol.theta = 0.0;
        assert_eq!(detect_resonance(&sol, alpha, 10, 1e-9).unwrap().n_tilde, 0);
        sol.theta = 0.123;
        assert!(detect_resonance(&sol, alpha, 3, 1e-6).is_none());
        assert_eq!(label_ratio(3, -2), Some(1.5));
        assert_eq!(label_ratio(3, 0), None);
    }

    #[test]
    fn free_frame_is_constant_with_plus_sign() {
        let alpha = golden();
        let sol = find_bloch(0.0, &ScalarMap::amo(), alpha, 2.0, 32, &BlochOptions::default()).unwrap();
        assert_eq!(sol.n_tilde, Some(0));
        assert!(sol.theta.abs() < 1e-15);
        let fr = assemble_u(&sol, 0.0, &ScalarMap::amo(), alpha, 1e-12).unwrap();
        assert_eq!(fr.sign, 1);
        assert!(fr.residual < 1e-13);
        let nonconst: f64 = fr.u_hat.coeffs().filter(|(k, _)| *k != 0).map(|(_, c)| c.norm()).sum();
        assert!(nonconst < 1e-13);
        assert_eq!(fr.u_hat.period(), Period::Two);
        assert_eq!(fr.u.period(), Period::One);
    }

    fn first_gap_upper_edge(lambda: f64) -> f64 {
        // widest gap of the 144/233 approximant
        let bs = band_structure(lambda, &ScalarMap::amo(), 144, 233, &BandOptions::for_q(233)).unwrap();
        let (_, _, hi) = bs.gaps().into_iter().max_by(|a, b| (a.2 - a.1).total_cmp(&(b.2 - b.1))).unwrap();
        hi
    }

    #[test]
    fn amo_edge_bloch_solution() {
        let alpha = golden();
        let lambda = 0.25;
        let e = first_gap_upper_edge(lambda);
        let opts = BlochOptions::default();
        let sol = find_bloch(lambda, &ScalarMap::amo(), alpha, e, 128, &opts).unwrap();
        assert!(sol.max_abs() <= 1.0 + 1e-6);
        assert!(sol.duality_residual < 1e-6, "residual {}", sol.duality_residual);
        let res = detect_resonance(&sol, alpha, 64, 1e-6).expect("resonant phase");
        assert_eq!(Some(res.n_tilde), sol.n_tilde);
        assert!(res.defect < 1e-6);
        let d1 = sol.decay.unwrap().rate;
        let sol2 = find_bloch(lambda, &ScalarMap::amo(), alpha, e, 256, &opts).unwrap();
        let d2 = sol2.decay.unwrap().rate;
        assert!(d1 < 0.0 && d2 < 0.0);
        assert!((d1 - d2).abs() < 0.05 * d1.abs(), "decay rates {d1} vs {d2}");
        assert!((sol.energy - sol2.energy).abs() < 1e-10);

        let fr = assemble_u(&sol, lambda, &ScalarMap::amo(), alpha, 1e-6).unwrap();
        assert!(fr.residual_re < 1e-6 && fr.residual_im < 1e-6);
    }

    #[test]
    fn bloch_is_deterministic() {
        let alpha = golden();
        let e = first_gap_upper_edge(0.25);
        let opts = BlochOptions::default();
        let a = find_bloch(0.25, &ScalarMap::amo(), alpha, e, 64, &opts).unwrap();
        let b = find_bloch(0.25, &ScalarMap::amo(), alpha, e, 64, &opts).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dual_counting_matches_ids() {
        let lambda = 0.4;
        let f = ScalarMap::amo();
        let bs = band_structure(lambda, &f, 144, 233, &BandOptions::for_q(233)).unwrap();
        let alpha = golden();
        let n = 200;
        for e in [-1.7, -0.4, 0.3, 1.1] {
            // inside band i the IDS lies in [i/q, (i+1)/q]
            let below = bs.band_edges.iter().filter(|b| b.1 < e).count();
            let inside = bs.band_edges.iter().any(|b| b.0 <= e && e <= b.1);
            let ids = (below as f64 + if inside { 0.5 } else { 0.0 }) / 233.0;
            let dual = dual_ids(lambda, &f, alpha, e, n, 16);
            assert!((dual - ids).abs() < 2.0 / (2 * n + 1) as f64 + 0.5 / 233.0, "E={e}: {dual} vs {ids}");
        }
    }
}
