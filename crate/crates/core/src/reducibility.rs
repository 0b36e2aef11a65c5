//! Reduction of a Schrödinger cocycle at a gap edge to a parabolic constant,
//! and the two averaging steps for the perturbed cocycle at E + ε.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::cocycle::{degree_of, Cocycle, Conjugacy, Mat2};
use crate::duality::BlochFrame;
use crate::error::{Error, Result};
use crate::fourier::{mul, op_norm, CMat2, Coeff, FourierMap, MatMap, Period, ScalarMap, VecMap, C64};

pub const DIVISOR_CUTOFF: f64 = 1e-12;
/// Largest accepted ‖εY‖_δ.
pub const ADMISSIBLE_EPS_Y: f64 = 0.5;
pub const CHECK_GRID: usize = 4096;
pub const BAND_CAP: usize = 2048;
/// Relative size below which trailing coefficients are dropped.
pub const TRIM_REL: f64 = 1e-17;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParabolicForm {
    pub sign: i8,
    pub mu: f64,
}

impl ParabolicForm {
    pub fn new(sign: i8, mu: f64) -> Self {
        assert!(sign == 1 || sign == -1);
        ParabolicForm { sign, mu }
    }

    /// [[s, μ], [0, s]].
    pub fn matrix(&self) -> Mat2 {
        let s = self.sign as f64;
        Mat2::new(s, self.mu, 0.0, s)
    }

    /// sμ, the coefficient after factoring out the sign: P = s[[1, sμ], [0, 1]].
    pub fn mu_prime(&self) -> f64 {
        self.sign as f64 * self.mu
    }

    pub fn is_collapsed(&self, tol: f64) -> bool {
        self.mu.abs() <= tol
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReductionOptions {
    pub divisor_cutoff: f64,
    /// Smallest accepted inf ‖V‖ on the real line.
    pub inf_tol: f64,
    /// Off-normal-form residual above which the reduction is flagged.
    pub residual_tol: f64,
    /// l in the iterate cross-check of μ.
    pub iterate_l: usize,
    pub band_cap: usize,
}

impl Default for ReductionOptions {
    fn default() -> Self {
        ReductionOptions { divisor_cutoff: DIVISOR_CUTOFF, inf_tol: 1e-8, residual_tol: 1e-8, iterate_l: 1000, band_cap: BAND_CAP }
    }
}

fn c(v: f64) -> C64 {
    C64::new(v, 0.0)
}

fn to_c(m: &Mat2) -> CMat2 {
    m.map(c)
}

fn to_r(m: &CMat2) -> Mat2 {
    m.map(|z| z.re)
}

pub fn entry(m: &MatMap, i: usize, j: usize) -> ScalarMap {
    m.map_coeffs(|_, a| a[(i, j)], m.is_real())
}

pub fn component(v: &VecMap, i: usize) -> ScalarMap {
    v.map_coeffs(|_, a| a[i], v.is_real())
}

/// Matrix map with the given scalar entries (same period).
pub fn from_entries(e: [&ScalarMap; 4]) -> Result<MatMap> {
    let period = e[0].period();
    if e.iter().any(|m| m.period() != period) {
        return Err(Error::PeriodMismatch("matrix entries".into()));
    }
    let n = e.iter().map(|m| m.band_limit()).max().unwrap_or(0) as i64;
    let pairs: Vec<(i64, CMat2)> =
        (-n..=n).map(|k| (k, CMat2::new(e[0].coeff(k), e[1].coeff(k), e[2].coeff(k), e[3].coeff(k)))).collect();
    let mut m = MatMap::from_pairs(&pairs, period, e.iter().all(|m| m.is_real()));
    m.set_tail(e.iter().map(|m| m.tail()).sum());
    Ok(m)
}

/// Drops trailing coefficients below `rel` times the largest one.
pub fn trimmed<T: Coeff>(m: &FourierMap<T>, rel: f64) -> FourierMap<T> {
    let max = m.coeffs().map(|(_, c)| c.norm()).fold(0.0, f64::max);
    let keep = m.coeffs().filter(|(_, c)| c.norm() > rel * max).map(|(k, _)| k.unsigned_abs() as usize).max().unwrap_or(0);
    m.truncate(keep)
}

/// |e^{2πikα/P} − 1|.
fn divisor(k: i64, alpha: f64, period: Period) -> C64 {
    C64::from_polar(1.0, 2.0 * PI * k as f64 * alpha / period.length()) - c(1.0)
}

/// φ with s(φ(x+α) − φ(x)) = ν(x) − [ν] and [φ] = 0, i.e.
/// φ̂_k = sν̂_k/(e^{2πikα} − 1). Errors on the first needed divisor below
/// `cutoff`.
pub fn solve_homological_scalar(nu: &ScalarMap, alpha: f64, sign: i8, cutoff: f64) -> Result<ScalarMap> {
    let s = sign as f64;
    let mut min_div = f64::INFINITY;
    let mut pairs = Vec::new();
    let mut ks: Vec<i64> = nu.coeffs().map(|(k, _)| k).filter(|&k| k != 0).collect();
    ks.sort_by_key(|k| (k.abs(), *k));
    for k in ks {
        let v = nu.coeff(k);
        if v == c(0.0) {
            continue;
        }
        let d = divisor(k, alpha, nu.period());
        if d.norm() < cutoff {
            return Err(Error::SmallDivisor { k, divisor: d.norm(), entry: None });
        }
        min_div = min_div.min(d.norm());
        pairs.push((k, v * s / d));
    }
    let mut phi = ScalarMap::from_pairs(&pairs, nu.period(), nu.is_real());
    if min_div.is_finite() {
        phi.set_tail(nu.tail() / min_div);
    }
    Ok(phi)
}

/// sup over a grid of |s(φ(x+α) − φ(x)) − (ν(x) − [ν])|.
pub fn scalar_residual(phi: &ScalarMap, nu: &ScalarMap, alpha: f64, sign: i8, grid: usize) -> f64 {
    let s = sign as f64;
    let a = phi.sample_line(0.0, grid);
    let b = phi.shift(alpha).sample_line(0.0, grid);
    let v = nu.sample_line(0.0, grid);
    let mean = nu.average();
    (0..grid).map(|j| ((b[j] - a[j]) * s - (v[j] - mean)).norm()).fold(0.0, f64::max)
}

/// Y with Y(x+α)P − PY(x) = P̃ − [P̃] and [Y] = 0, entry 21 first, then
/// 11 and 22 through μ, then 12. For P = s[[1, μ'], [0, 1]] the equation is
/// solved with μ' and right side sP̃. Returns Y and the smallest divisor used.
pub fn solve_homological_parabolic(pt: &MatMap, p: ParabolicForm, alpha: f64, cutoff: f64) -> Result<(MatMap, f64)> {
    let s = p.sign as f64;
    let mu = p.mu_prime();
    let period = pt.period();
    let n = pt.band_limit() as i64;
    let mut min_div = f64::INFINITY;
    let mut pairs = Vec::with_capacity(2 * n as usize);
    for k in (-n..=n).filter(|&k| k != 0) {
        let rhs = pt.coeff(k) * c(s);
        if rhs == CMat2::zeros() {
            continue;
        }
        let e = C64::from_polar(1.0, 2.0 * PI * k as f64 * alpha / period.length());
        let d = e - c(1.0);
        let (p11, p12, p21, p22) = (rhs[(0, 0)], rhs[(0, 1)], rhs[(1, 0)], rhs[(1, 1)]);
        if d.norm() < cutoff {
            let entry = if p21 != c(0.0) { "21" } else if p11 != c(0.0) { "11" } else if p22 != c(0.0) { "22" } else { "12" };
            return Err(Error::SmallDivisor { k, divisor: d.norm(), entry: Some(entry) });
        }
        if mu != 0.0 && p21 != c(0.0) && d.norm_sqr() < cutoff {
            return Err(Error::SmallDivisor { k, divisor: d.norm_sqr(), entry: Some("11") });
        }
        min_div = min_div.min(d.norm());
        let y21 = p21 / d;
        let y11 = (p21 * mu + d * p11) / (d * d);
        let y22 = (d * p22 - e * p21 * mu) / (d * d);
        let y12 = (p12 + (y22 - e * y11) * mu) / d;
        pairs.push((k, CMat2::new(y11, y12, y21, y22)));
    }
    let mut y = MatMap::from_pairs(&pairs, period, pt.is_real());
    if min_div.is_finite() {
        y.set_tail(pt.tail() * (1.0 + mu.abs() / min_div) / min_div);
    }
    Ok((y, min_div))
}

/// sup‖Y(x+α)P − PY(x) − (P̃ − [P̃])‖ over a grid, relative to ‖P̃‖ℓ¹.
pub fn parabolic_residual(y: &MatMap, p: ParabolicForm, pt: &MatMap, alpha: f64, grid: usize) -> f64 {
    let pm = to_c(&p.matrix());
    let a = y.sample_line(0.0, grid);
    let b = y.shift(alpha).sample_line(0.0, grid);
    let t = pt.sample_line(0.0, grid);
    let mean = pt.average();
    let scale = pt.l1().max(f64::MIN_POSITIVE);
    (0..grid).map(|j| op_norm(&(b[j] * pm - pm * a[j] - (t[j] - mean)))).fold(0.0, f64::max) / scale
}

/// e^M for a complex 2×2 matrix in closed form:
/// e^{tI + N} = e^t(cosh(r)I + sinh(r)/r·N), r² = −det N.
pub fn expm(m: &CMat2) -> CMat2 {
    let t = (m[(0, 0)] + m[(1, 1)]) * 0.5;
    let n = m - CMat2::identity() * t;
    let r2 = -(n[(0, 0)] * n[(1, 1)] - n[(0, 1)] * n[(1, 0)]);
    let r = r2.sqrt();
    let (ch, sh) = if r.norm() < 1e-4 {
        // series to beyond double precision for |r| < 1e−4
        (c(1.0) + r2 / 2.0 + r2 * r2 / 24.0, c(1.0) + r2 / 6.0 + r2 * r2 / 120.0)
    } else {
        (r.cosh(), r.sinh() / r)
    };
    (CMat2::identity() * ch + n * sh) * t.exp()
}

/// Principal logarithm of a real 2×2 matrix with det > 0 and no eigenvalue
/// on (−∞, 0]: L = ½ln(det)I + (r/sinh r)(M̃ − cosh(r)I), M̃ = M/√det.
pub fn logm(m: &Mat2) -> Result<Mat2> {
    let det = m.determinant();
    if det <= 0.0 {
        return Err(Error::InvalidArgument(format!("log of a matrix with det {det}")));
    }
    let sd = det.sqrt();
    let mt = m / sd;
    let half_tr = 0.5 * mt.trace();
    if half_tr <= -1.0 {
        return Err(Error::InvalidArgument(format!("trace {:.6} outside the principal branch", 2.0 * half_tr)));
    }
    // r = arccosh(half_tr) (imaginary for elliptic matrices); r/sinh r is real
    let ratio = if (half_tr - 1.0).abs() < 1e-8 {
        let u = half_tr - 1.0;
        // r² ≈ 2u − u²/3 near r = 0; r/sinh r = 1 − r²/6 + 7r⁴/360
        let r2 = 2.0 * u - u * u / 3.0;
        1.0 - r2 / 6.0 + 7.0 * r2 * r2 / 360.0
    } else if half_tr > 1.0 {
        let r = half_tr.acosh();
        r / r.sinh()
    } else {
        let r = half_tr.acos();
        r / r.sin()
    };
    let n = (mt - Mat2::identity() * half_tr) * ratio;
    Ok(n + Mat2::identity() * det.ln() * 0.5)
}

/// Largest of the mode-ñ averages of ℜÛ and ℑÛ over ℝ/2ℤ decides V;
/// ties go to the real part.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VSelection {
    pub real_part: bool,
    pub criterion_re: f64,
    pub criterion_im: f64,
}

/// ‖∫_{ℝ/2ℤ} e^{−ñπix}V(x)dx‖ = 2‖V̂_ñ‖ for a period-2 map.
pub fn selection_criterion(v: &VecMap, n_tilde: i64) -> f64 {
    2.0 * v.coeff(n_tilde).norm()
}

pub fn select_v(frame: &BlochFrame) -> Result<(VecMap, VSelection)> {
    let re = crate::duality::real_part(&frame.u_hat);
    let im = crate::duality::imag_part(&frame.u_hat);
    let cr = selection_criterion(&re, frame.n_tilde);
    let ci = selection_criterion(&im, frame.n_tilde);
    let real_part = cr >= ci;
    let best = cr.max(ci);
    if best < 2f64.sqrt() * (1.0 - 1e-9) {
        return Err(Error::NoBloch(format!("neither ℜÛ ({cr:.6}) nor ℑÛ ({ci:.6}) reaches √2")));
    }
    let v = if real_part { re } else { im };
    Ok((trimmed(&v, TRIM_REL), VSelection { real_part, criterion_re: cr, criterion_im: ci }))
}

/// Frame diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameReport {
    pub inf_v: f64,
    pub argmin_v: f64,
    pub sup_v: f64,
    pub r_norm: f64,
}

/// R⁽¹⁾(x) = [V(x), TV(x)/‖V(x)‖²], T(x, y) = (−y, x); det R⁽¹⁾ = 1.
pub fn build_frame(v: &VecMap, inf_tol: f64, band_cap: usize) -> Result<(Conjugacy, FrameReport)> {
    if !v.is_real() {
        return Err(Error::InvalidArgument("V must be real on ℝ".into()));
    }
    let grid = (8 * v.band_limit() + 256).next_power_of_two().max(1024);
    let pl = v.period().length();
    let vals = v.sample_line(0.0, grid);
    let mut inf_v = f64::INFINITY;
    let mut argmin_v = 0.0;
    let mut sup_v = 0.0f64;
    for (j, w) in vals.iter().enumerate() {
        let nrm = w.map(|z| z.re).norm();
        if nrm < inf_v {
            inf_v = nrm;
            argmin_v = pl * j as f64 / grid as f64;
        }
        sup_v = sup_v.max(nrm);
    }
    if inf_v < inf_tol {
        return Err(Error::Singular { x: argmin_v, detail: format!("‖V‖ = {inf_v:.3e} below {inf_tol:.1e}") });
    }
    let v1 = component(v, 0);
    let v2 = component(v, 1);
    let mut band = (4 * v.band_limit() + 64).min(band_cap);
    let inv = loop {
        let g = ScalarMap::from_fn(
            |x| {
                let a = v1.eval_real(x);
                let b = v2.eval_real(x);
                c(1.0) / (a * a + b * b)
            },
            band,
            v.period(),
            true,
        );
        if g.tail() < 1e-14 * g.l1() || band >= band_cap {
            break g;
        }
        band = (2 * band).min(band_cap);
    };
    let limit = band_cap;
    let r12 = mul(&v2, &inv, limit)?.scale(c(-1.0));
    let r22 = mul(&v1, &inv, limit)?;
    let r = from_entries([&v1, &r12, &v2, &r22])?;
    let r = trimmed(&r, TRIM_REL);
    let r_norm = r.sample_line(0.0, grid).iter().map(op_norm).fold(0.0, f64::max);
    let conj = Conjugacy::new(r, 1e-8)?;
    Ok((conj, FrameReport { inf_v, argmin_v, sup_v, r_norm }))
}

/// sup over the grid of ‖B(x) − P‖ for B = R⁻¹(x+α)A(x)R(x).
pub fn normal_form_residual(cocycle: &Cocycle, r: &MatMap, p: &Mat2, grid: usize) -> f64 {
    let alpha = cocycle.alpha();
    let at = r.sample_line(0.0, grid);
    let next = r.shift(alpha).sample_line(0.0, grid);
    let pl = r.period().length();
    let pc = to_c(p);
    (0..grid)
        .map(|j| {
            let x = pl * j as f64 / grid as f64;
            let ry = next[j];
            let inv = CMat2::new(ry[(1, 1)], -ry[(0, 1)], -ry[(1, 0)], ry[(0, 0)]) / ry.determinant();
            op_norm(&(inv * to_c(&cocycle.matrix_at(x)) * at[j] - pc))
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionReport {
    pub selection: VSelection,
    pub frame: FrameReport,
    /// sup of the non-ν part of R⁽¹⁾⁻¹(x+α)A(x)R⁽¹⁾(x) − [[s, ·], [0, s]].
    pub frame_residual: f64,
    pub off_normal_residual: f64,
    pub flagged: bool,
    pub mu_iterate: f64,
    pub mu_rel_diff: f64,
    pub iterate_l: usize,
    /// sμ > 0, the expected sign at an upper gap edge.
    pub mu_prime_positive: bool,
    pub r_norm: f64,
    pub phi_band: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reduction {
    pub conjugacy: Conjugacy,
    pub form: ParabolicForm,
    pub nu: ScalarMap,
    pub phi: ScalarMap,
    pub report: ReductionReport,
}

/// μ from the l-th iterate: R⁻¹(x+lα)A_l(x)R(x) = [[s^l, l s^{l−1} μ], [0, s^l]],
/// averaged over a few phases.
pub fn mu_from_iterate(cocycle: &Cocycle, r: &MatMap, sign: i8, l: usize) -> f64 {
    let alpha = cocycle.alpha();
    let s = sign as f64;
    let pts = 8;
    let mut acc = 0.0;
    for j in 0..pts {
        let x = (j as f64 + 0.25) / pts as f64;
        let (m, log) = cocycle.transfer_real(l, x);
        let al = m * log.exp();
        let ry = to_r(&r.eval_real(x + l as f64 * alpha));
        let rx = to_r(&r.eval_real(x));
        let inv = Mat2::new(ry[(1, 1)], -ry[(0, 1)], -ry[(1, 0)], ry[(0, 0)]) / ry.determinant();
        let b = inv * al * rx;
        acc += b[(0, 1)] / (l as f64 * s.powi(l as i32 - 1));
    }
    acc / pts as f64
}

/// Reduces (α, A^E) at a gap edge: V from Û, frame R⁽¹⁾, the homological
/// equation for the off-diagonal ν, R = R⁽¹⁾[[1, φ], [0, 1]], μ = [ν].
pub fn reduce_at_edge(cocycle: &Cocycle, frame: &BlochFrame, opts: &ReductionOptions) -> Result<Reduction> {
    let alpha = cocycle.alpha();
    let (v, selection) = select_v(frame)?;
    let (r1, frame_report) = build_frame(&v, opts.inf_tol, opts.band_cap)?;
    let b = cocycle.conjugate(&r1.r)?;
    let bm = b.as_matmap();
    let s = frame.sign;
    let sf = s as f64;
    let grid = CHECK_GRID;
    let samples = bm.sample_line(0.0, grid);
    let frame_residual = samples
        .iter()
        .map(|m| (m[(0, 0)] - c(sf)).norm().max(m[(1, 0)].norm()).max((m[(1, 1)] - c(sf)).norm()))
        .fold(0.0, f64::max);
    let nu = trimmed(&entry(&bm, 0, 1).with_real(true), TRIM_REL);
    let phi = solve_homological_scalar(&nu, alpha, s, opts.divisor_cutoff)?;
    let mu = nu.average().re;
    let form = ParabolicForm::new(s, mu);
    let phi2 = phi.to_period_two();
    let r11 = entry(&r1.r, 0, 0);
    let r21 = entry(&r1.r, 1, 0);
    let r12 = mul(&phi2, &r11, opts.band_cap)?.add(&entry(&r1.r, 0, 1))?;
    let r22 = mul(&phi2, &r21, opts.band_cap)?.add(&entry(&r1.r, 1, 1))?;
    let r = trimmed(&from_entries([&r11, &r12, &r21, &r22])?, TRIM_REL);
    let off_normal_residual = normal_form_residual(cocycle, &r, &form.matrix(), grid);
    let conjugacy = Conjugacy::new(r, 1e-8)?;
    let mu_iterate = mu_from_iterate(cocycle, &conjugacy.r, s, opts.iterate_l);
    let mu_rel_diff = (mu_iterate - mu).abs() / mu.abs().max(f64::MIN_POSITIVE);
    let r_norm = conjugacy.r.sample_line(0.0, grid).iter().map(op_norm).fold(0.0, f64::max);
    let report = ReductionReport {
        selection,
        frame: frame_report,
        frame_residual,
        off_normal_residual,
        flagged: off_normal_residual > opts.residual_tol,
        mu_iterate,
        mu_rel_diff,
        iterate_l: opts.iterate_l,
        mu_prime_positive: form.mu_prime() > 0.0,
        r_norm,
        phi_band: phi.band_limit(),
    };
    Ok(Reduction { conjugacy, form, nu, phi, report })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AverageIdentities {
    pub r11_sq: f64,
    pub r11_r12: f64,
    pub r12_sq: f64,
    pub r21_sq: f64,
    /// sup of the defects in R₂₁(x+α) = sR₁₁(x), R₂₂(x+α) = sR₁₂(x) − μR₁₁(x)
    /// and R₁₁(x+α)R₁₂(x) − R₁₂(x+α)R₁₁(x) = s + sμR₁₁(x+α)R₁₁(x).
    pub shift_residual: f64,
    pub shift_ok: bool,
    /// 1/(2‖R‖₀).
    pub r11_sq_lower: f64,
    pub r11_r21_ok: bool,
    /// [R₁₁²][R₁₂²] − [R₁₁R₁₂]².
    pub wronskian: f64,
    pub wronskian_positive: bool,
}

fn mean_of_product(a: &ScalarMap, b: &ScalarMap) -> f64 {
    // [ab] = Σ a_k b_{−k}
    a.coeffs().map(|(k, x)| x * b.coeff(-k)).sum::<C64>().re
}

pub fn average_identities(r: &MatMap, p: ParabolicForm, alpha: f64) -> AverageIdentities {
    let (r11, r12, r21, r22) = (entry(r, 0, 0), entry(r, 0, 1), entry(r, 1, 0), entry(r, 1, 1));
    let s = p.sign as f64;
    let mu = p.mu;
    let grid = CHECK_GRID;
    let a11 = r11.sample_line(0.0, grid);
    let a12 = r12.sample_line(0.0, grid);
    let n11 = r11.shift(alpha).sample_line(0.0, grid);
    let n12 = r12.shift(alpha).sample_line(0.0, grid);
    let n21 = r21.shift(alpha).sample_line(0.0, grid);
    let n22 = r22.shift(alpha).sample_line(0.0, grid);
    let mut res = 0.0f64;
    for j in 0..grid {
        let d1 = (n21[j] - a11[j] * s).norm();
        let d2 = (n22[j] - a12[j] * s + a11[j] * mu).norm();
        let d3 = (n11[j] * a12[j] - n12[j] * a11[j] - c(s) - n11[j] * a11[j] * (s * mu)).norm();
        res = res.max(d1).max(d2).max(d3);
    }
    let r11_sq = mean_of_product(&r11, &r11);
    let r11_r12 = mean_of_product(&r11, &r12);
    let r12_sq = mean_of_product(&r12, &r12);
    let r21_sq = mean_of_product(&r21, &r21);
    let r_norm = r.sample_line(0.0, grid).iter().map(op_norm).fold(0.0, f64::max);
    let lower = 1.0 / (2.0 * r_norm);
    let wronskian = r11_sq * r12_sq - r11_r12 * r11_r12;
    AverageIdentities {
        r11_sq,
        r11_r12,
        r12_sq,
        r21_sq,
        shift_residual: res,
        shift_ok: res <= 1e-9,
        r11_sq_lower: lower,
        r11_r21_ok: (r11_sq - r21_sq).abs() <= 1e-9 * r11_sq.max(1.0) && r11_sq >= lower,
        wronskian,
        wronskian_positive: wronskian > 0.0,
    }
}

/// P̃ with R⁻¹(x+α)A^{E+ε}(x)R(x) = P + εP̃(x):
/// P̃ = s[[R₁₁R₁₂ − μ'R₁₁², R₁₂² − μ'R₁₁R₁₂], [−R₁₁², −R₁₁R₁₂]], μ' = sμ.
/// The result is 1-periodic even when R is 2-periodic.
pub fn perturbation_matrix(r: &MatMap, p: ParabolicForm, limit: usize) -> Result<MatMap> {
    let s = c(p.sign as f64);
    let mu = c(p.mu_prime());
    let r11 = entry(r, 0, 0);
    let r12 = entry(r, 0, 1);
    let q11: ScalarMap = mul(&r11, &r11, limit)?;
    let q12: ScalarMap = mul(&r11, &r12, limit)?;
    let q22: ScalarMap = mul(&r12, &r12, limit)?;
    let e11 = q12.sub(&q11.scale(mu))?.scale(s);
    let e12 = q22.sub(&q12.scale(mu))?.scale(s);
    let e21 = q11.scale(-s);
    let e22 = q12.scale(-s);
    let m = from_entries([&e11, &e12, &e21, &e22])?;
    trimmed(&m, TRIM_REL).to_period_one()
}

/// sup‖R⁻¹(x+α)A^{E+ε}(x)R(x) − P − εP̃(x)‖ relative to ε‖P̃‖ℓ¹.
pub fn perturbation_residual(cocycle: &Cocycle, r: &MatMap, p: ParabolicForm, pt: &MatMap, eps: f64, grid: usize) -> Result<f64> {
    let energy = match cocycle.map() {
        crate::cocycle::CocycleMap::Schrodinger { energy, .. } => *energy,
        _ => return Err(Error::InvalidArgument("perturbation needs a Schrödinger cocycle".into())),
    };
    let shifted = cocycle.with_energy(energy + eps)?;
    let pl = r.period().length();
    let at = r.sample_line(0.0, grid);
    let next = r.shift(cocycle.alpha()).sample_line(0.0, grid);
    let pm = to_c(&p.matrix());
    let mut worst = 0.0f64;
    for j in 0..grid {
        let x = pl * j as f64 / grid as f64;
        let ry = next[j];
        let inv = CMat2::new(ry[(1, 1)], -ry[(0, 1)], -ry[(1, 0)], ry[(0, 0)]) / ry.determinant();
        let lhs = inv * to_c(&shifted.matrix_at(x)) * at[j];
        let rhs = pm + pt.eval_real(x.rem_euclid(1.0)) * c(eps);
        worst = worst.max(op_norm(&(lhs - rhs)));
    }
    Ok(worst / (eps.abs() * pt.l1()).max(f64::MIN_POSITIVE))
}

/// ε_m = −2μ'[R₁₁²]/([R₁₁²][R₁₂²] − [R₁₁R₁₂]²).
pub fn gap_edge_epsilon(avg: &AverageIdentities, p: ParabolicForm) -> Result<f64> {
    if p.mu == 0.0 {
        return Ok(0.0);
    }
    if avg.wronskian <= 0.0 {
        return Err(Error::InvalidArgument(format!("nonpositive denominator {}", avg.wronskian)));
    }
    Ok(-2.0 * p.mu_prime() * avg.r11_sq / avg.wronskian)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AveragingReport {
    pub eps: f64,
    /// Strip width on which the step's norms are measured.
    pub delta: f64,
    /// ‖R_step − I‖_δ.
    pub r_minus_identity: f64,
    /// ‖P_next − P_current‖.
    pub p_shift: f64,
    /// ‖P̃_next‖_δ.
    pub ptilde_next: f64,
    /// sup over ℝ of the remaining perturbation ε^{j+1}‖P̃_next‖.
    pub residual: f64,
    /// ‖εY‖_δ (ε² at step two).
    pub eps_y: f64,
    pub divisor_min: f64,
    /// Defect of the conjugation identity at off-grid points, relative.
    pub identity_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveragingStep {
    pub p_next: Mat2,
    pub ptilde_next: MatMap,
    pub y: MatMap,
    pub report: AveragingReport,
}

fn line_sup_matrix(vals: impl Iterator<Item = CMat2>) -> f64 {
    vals.map(|m| op_norm(&m)).fold(0.0, f64::max)
}

/// One conjugation by e^{tY}: (C + tP̃) ↦ C + t[P̃] + t·ε·P̃_next, where Y
/// solves the homological equation for the parabolic P, t = ε^order.
#[allow(clippy::too_many_arguments)]
fn average_once(
    p: ParabolicForm,
    current: &Mat2,
    pt: &MatMap,
    eps: f64,
    order: i32,
    alpha: f64,
    delta: f64,
    cutoff: f64,
) -> Result<AveragingStep> {
    let t = eps.powi(order);
    let (y, divisor_min) = solve_homological_parabolic(pt, p, alpha, cutoff)?;
    let lines: Vec<f64> = if delta == 0.0 { vec![0.0] } else { vec![delta, -delta] };
    let grid = (8 * pt.band_limit() + 256).next_power_of_two().max(1024);
    let mut eps_y = 0.0f64;
    let mut r_minus_identity = 0.0f64;
    for &h in &lines {
        let vals = y.sample_line(h, grid);
        eps_y = eps_y.max(line_sup_matrix(vals.iter().map(|m| m * c(t))));
        r_minus_identity = r_minus_identity.max(line_sup_matrix(vals.iter().map(|m| expm(&(m * c(t))) - CMat2::identity())));
    }
    if eps_y > ADMISSIBLE_EPS_Y {
        return Err(Error::Inadmissible(format!("‖εY‖ = {eps_y:.3e} on |Im z| ≤ {delta} exceeds {ADMISSIBLE_EPS_Y}")));
    }
    let mean = to_r(&pt.average());
    let p_next = current + mean * t;
    let cur = to_c(current);
    let pn = to_c(&p_next);
    let scale = t * eps;
    let conj_at = |x: f64| -> CMat2 {
        let ey = expm(&(y.eval_real(x) * c(t)));
        let ey_next_inv = expm(&(y.eval_real(x + alpha) * c(-t)));
        ey_next_inv * (cur + pt.eval_real(x) * c(t)) * ey
    };
    let band = (4 * pt.band_limit() + 32).min(BAND_CAP);
    let m = (4 * band + 4).next_power_of_two();
    let samples: Vec<CMat2> = (0..m).map(|j| (conj_at(j as f64 / m as f64) - pn) / c(scale)).collect();
    let ptilde_next = MatMap::from_samples(&samples, band, Period::One, true);
    let mut identity_residual = 0.0f64;
    let probes = 257;
    for j in 0..probes {
        let x = (j as f64 + 0.5) / probes as f64;
        let lhs = conj_at(x);
        let rhs = pn + ptilde_next.eval_real(x) * c(scale);
        identity_residual = identity_residual.max(op_norm(&(lhs - rhs)));
    }
    identity_residual /= op_norm(&pn);
    let mut ptilde_sup = 0.0f64;
    for &h in &lines {
        ptilde_sup = ptilde_sup.max(line_sup_matrix(ptilde_next.sample_line(h, grid).into_iter()));
    }
    let residual = scale.abs() * line_sup_matrix(ptilde_next.sample_line(0.0, grid).into_iter());
    let report = AveragingReport {
        eps,
        delta,
        r_minus_identity,
        p_shift: (p_next - current).norm(),
        ptilde_next: ptilde_sup,
        residual,
        eps_y,
        divisor_min,
        identity_residual,
    };
    Ok(AveragingStep { p_next, ptilde_next, y, report })
}

/// Step one: R₁ = e^{εY}, P₁ = P + ε[P̃], R₁⁻¹(x+α)(P + εP̃)R₁ = P₁ + ε²P̃₁.
pub fn averaging_step(p: ParabolicForm, pt: &MatMap, eps: f64, alpha: f64, delta: f64, cutoff: f64) -> Result<AveragingStep> {
    average_once(p, &p.matrix(), pt, eps, 1, alpha, delta, cutoff)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoubleStep {
    pub first: AveragingStep,
    pub second: AveragingStep,
    pub p2: Mat2,
    /// 𝔓 = [[0, μ'], [0, 0]].
    pub frak_p: Mat2,
    /// Derivative of log at P in the direction s[P̃].
    pub frak_p1: Mat2,
    /// (log(sP₂) − 𝔓 − ε𝔓₁)/ε².
    pub frak_p2: Mat2,
    /// sup_x ‖ℜ_ε(x)‖ with e^{𝔓+ε𝔓₁+ε²𝔓₂+ε³ℜ_ε} = s(P₂ + ε³P̃₂).
    pub remainder: f64,
    /// R₁R₂ sampled back to a Fourier map.
    pub composite: MatMap,
    pub degree_composite: i64,
}

/// d/dε log(I + N + εB) at ε = 0 for nilpotent N: B − (NB + BN)/2 + NBN/3.
pub fn log_derivative(n: &Mat2, b: &Mat2) -> Mat2 {
    b - (n * b + b * n) * 0.5 + n * b * n / 3.0
}

/// 𝔓₁ from the averages in closed form (s-normalized frame).
pub fn frak_p1_closed(avg: &AverageIdentities, p: ParabolicForm) -> Mat2 {
    let mu = p.mu_prime();
    let b = Mat2::new(
        avg.r11_r12 - mu * avg.r11_sq,
        avg.r12_sq - mu * avg.r11_r12,
        -avg.r11_sq,
        -avg.r11_r12,
    );
    log_derivative(&Mat2::new(0.0, mu, 0.0, 0.0), &b)
}

/// 𝔓₁ with the (1,2) entry truncated at first order in μ':
/// [[[R₁₁R₁₂] − μ'[R₁₁²]/2, [R₁₂²] − μ'[R₁₁R₁₂]], [−[R₁₁²], −[R₁₁R₁₂] + μ'[R₁₁²]/2]].
/// Differs from the exact derivative by μ'²[R₁₁²]/6 in the (1,2) entry.
pub fn frak_p1_first_order(avg: &AverageIdentities, p: ParabolicForm) -> Mat2 {
    let mu = p.mu_prime();
    Mat2::new(
        avg.r11_r12 - 0.5 * mu * avg.r11_sq,
        avg.r12_sq - mu * avg.r11_r12,
        -avg.r11_sq,
        -avg.r11_r12 + 0.5 * mu * avg.r11_sq,
    )
}

/// Finite-difference 𝔓₁ = d/dε log(s(P + ε[P̃])) by central differences.
pub fn frak_p1_numeric(p: ParabolicForm, mean_pt: &Mat2, h: f64) -> Result<Mat2> {
    let s = p.sign as f64;
    let plus = logm(&((p.matrix() + mean_pt * h) * s))?;
    let minus = logm(&((p.matrix() - mean_pt * h) * s))?;
    Ok((plus - minus) / (2.0 * h))
}

/// Both averaging steps: the first on the strip δ, the second on the real
/// line, each solving the homological equation for the parabolic P.
pub fn double_step(p: ParabolicForm, pt: &MatMap, eps: f64, alpha: f64, delta: f64, cutoff: f64) -> Result<DoubleStep> {
    let first = averaging_step(p, pt, eps, alpha, delta, cutoff)?;
    let second = average_once(p, &first.p_next, &first.ptilde_next, eps, 2, alpha, 0.0, cutoff)?;
    let s = p.sign as f64;
    let mu = p.mu_prime();
    let frak_p = Mat2::new(0.0, mu, 0.0, 0.0);
    let mean = to_r(&pt.average()) * s;
    let frak_p1 = log_derivative(&frak_p, &mean);
    let p2 = second.p_next;
    let log_p2 = logm(&(p2 * s))?;
    let frak_p2 = (log_p2 - frak_p - frak_p1 * eps) / (eps * eps);
    let e3 = eps.powi(3);
    let grid = 1024;
    let mut remainder = 0.0f64;
    for j in 0..grid {
        let x = j as f64 / grid as f64;
        let full = (p2 + to_r(&second.ptilde_next.eval_real(x)) * e3) * s;
        let l = logm(&full)?;
        remainder = remainder.max(((l - log_p2) / e3).norm());
    }
    let band = (first.y.band_limit() + second.y.band_limit()).max(1) * 4 + 32;
    let band = band.min(BAND_CAP);
    let m = (4 * band + 4).next_power_of_two();
    let samples: Vec<CMat2> = (0..m)
        .map(|j| {
            let x = j as f64 / m as f64;
            expm(&(first.y.eval_real(x) * c(eps))) * expm(&(second.y.eval_real(x) * c(eps * eps)))
        })
        .collect();
    let composite = MatMap::from_samples(&samples, band, Period::One, true);
    let degree_composite = degree_of(&composite)?;
    Ok(DoubleStep { first, second, p2, frak_p, frak_p1, frak_p2, remainder, composite, degree_composite })
}

/// Q with Q⁻¹DQ = [[0, −√Δ], [√Δ, 0]] for D = [[D₁, D₂], [D₃, −D₁]],
/// Δ = det D > 0, D₂ < 0.
pub fn elliptic_normalize(d: &Mat2) -> Result<(Mat2, f64)> {
    let delta = d.determinant();
    let d1 = d[(0, 0)];
    let d2 = d[(0, 1)];
    if delta <= 0.0 {
        return Err(Error::InvalidArgument(format!("det D = {delta} is not positive")));
    }
    if d2 >= 0.0 {
        return Err(Error::InvalidArgument(format!("D₂ = {d2} is not negative")));
    }
    let q4 = delta.powf(0.25);
    let sq = (-d2).sqrt();
    let q = Mat2::new(0.0, sq / q4, -q4 / sq, d1 / (q4 * sq));
    Ok((q, delta.sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationShift {
    pub rho_edge: f64,
    pub rho_shifted: f64,
    pub err_edge: f64,
    pub err_shifted: f64,
    pub differs: bool,
}

/// ρ at E and at E + ε; `differs` when they separate beyond both error bars.
pub fn rotation_shift_check(cocycle: &Cocycle, eps: f64, iterations: usize) -> Result<RotationShift> {
    let energy = match cocycle.map() {
        crate::cocycle::CocycleMap::Schrodinger { energy, .. } => *energy,
        _ => return Err(Error::InvalidArgument("rotation shift needs a Schrödinger cocycle".into())),
    };
    let a = cocycle.rotation_number_with(iterations, 0.0, f64::INFINITY)?;
    let b = cocycle.with_energy(energy + eps)?.rotation_number_with(iterations, 0.0, f64::INFINITY)?;
    let differs = eps != 0.0 && (a.rho - b.rho).abs() > a.error_bar + b.error_bar;
    Ok(RotationShift { rho_edge: a.rho, rho_shifted: b.rho, err_edge: a.error_bar, err_shifted: b.error_bar, differs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arithmetic::Frequency;
    use crate::duality::{assemble_u, find_bloch, BlochOptions};
    use crate::spectrum::{band_structure, BandOptions};

    fn golden() -> f64 {
        Frequency::golden(40).value()
    }

    fn mat_map(e: [ScalarMap; 4]) -> MatMap {
        from_entries([&e[0], &e[1], &e[2], &e[3]]).unwrap()
    }

    fn zero() -> ScalarMap {
        ScalarMap::zero(Period::One)
    }

    fn sample_ptilde() -> MatMap {
        mat_map([
            ScalarMap::trig(0.1, &[0.3, -0.05], &[0.2]),
            ScalarMap::trig(-0.2, &[0.1], &[0.0, 0.07]),
            ScalarMap::trig(0.4, &[-0.25, 0.1], &[0.15]),
            ScalarMap::trig(0.0, &[0.05], &[-0.3, 0.02]),
        ])
    }

    #[test]
    fn scalar_constant_gives_zero() {
        let nu = ScalarMap::constant(c(3.0), Period::One, true);
        let phi = solve_homological_scalar(&nu, golden(), 1, DIVISOR_CUTOFF).unwrap();
        assert_eq!(phi.l1(), 0.0);
    }

    #[test]
    fn scalar_cosine_coefficients() {
        let alpha = golden();
        let nu = ScalarMap::cos();
        let phi = solve_homological_scalar(&nu, alpha, 1, DIVISOR_CUTOFF).unwrap();
        for k in [-1i64, 1] {
            // oracle: ½/(e^{2πikα} − 1) from the polar form directly
            let th = 2.0 * PI * k as f64 * alpha;
            let d = C64::new(th.cos() - 1.0, th.sin());
            assert!((phi.coeff(k) - c(0.5) / d).norm() < 1e-15);
        }
        assert!(scalar_residual(&phi, &nu, alpha, 1, CHECK_GRID) <= 1e-10 * 1.0);
        let neg = solve_homological_scalar(&nu, alpha, -1, DIVISOR_CUTOFF).unwrap();
        assert!(scalar_residual(&neg, &nu, alpha, -1, CHECK_GRID) <= 1e-10);
    }

    #[test]
    fn scalar_breach_names_k() {
        let alpha = 0.5 + 1e-14;
        let nu = ScalarMap::trig(0.0, &[0.0, 1.0], &[]);
        match solve_homological_scalar(&nu, alpha, 1, DIVISOR_CUTOFF) {
            Err(Error::SmallDivisor { k, .. }) => assert_eq!(k.abs(), 2),
            other => panic!("expected breach, got {other:?}"),
        }
    }

    #[test]
    fn parabolic_zero_input() {
        let pt = MatMap::zero(Period::One);
        let (y, _) = solve_homological_parabolic(&pt, ParabolicForm::new(1, 0.3), golden(), DIVISOR_CUTOFF).unwrap();
        assert_eq!(y.l1(), 0.0);
    }

    #[test]
    fn parabolic_decouples_when_mu_vanishes() {
        let alpha = golden();
        let pt = sample_ptilde();
        for sign in [1i8, -1] {
            let (y, _) = solve_homological_parabolic(&pt, ParabolicForm::new(sign, 0.0), alpha, DIVISOR_CUTOFF).unwrap();
            for (i, j) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                let oracle = solve_homological_scalar(&entry(&pt, i, j), alpha, sign, DIVISOR_CUTOFF).unwrap();
                let diff = entry(&y, i, j).sub(&oracle).unwrap().l1();
                assert!(diff < 1e-14, "entry {i}{j}: {diff}");
            }
        }
    }

    #[test]
    fn parabolic_single_harmonic() {
        let alpha = golden();
        let mu = 0.1;
        let pt = mat_map([zero(), zero(), ScalarMap::cos(), zero()]);
        let p = ParabolicForm::new(1, mu);
        let (y, _) = solve_homological_parabolic(&pt, p, alpha, DIVISOR_CUTOFF).unwrap();
        for k in [-1i64, 1] {
            let th = 2.0 * PI * k as f64 * alpha;
            let d = C64::new(th.cos() - 1.0, th.sin());
            let want = c(0.5 * mu) / (d * d);
            assert!((y.coeff(k)[(0, 0)] - want).norm() < 1e-14);
        }
        assert!(parabolic_residual(&y, p, &pt, alpha, CHECK_GRID) < 1e-9);
    }

    #[test]
    fn parabolic_residual_both_signs() {
        let alpha = golden();
        let pt = sample_ptilde();
        for p in [ParabolicForm::new(1, 0.37), ParabolicForm::new(-1, -0.21)] {
            let (y, _) = solve_homological_parabolic(&pt, p, alpha, DIVISOR_CUTOFF).unwrap();
            assert!(parabolic_residual(&y, p, &pt, alpha, CHECK_GRID) < 1e-9);
        }
    }

    #[test]
    fn exp_log_roundtrip() {
        for m in [
            Mat2::new(0.1, 0.4, -0.3, -0.1),
            Mat2::new(0.0, 1e-3, 0.0, 0.0),
            Mat2::new(0.2, 0.0, 0.0, -0.2),
            Mat2::new(0.3, 1.2, -0.9, -0.3),
            Mat2::new(0.0, 1e-9, -1e-9, 0.0),
        ] {
            let e = to_r(&expm(&to_c(&m)));
            assert!((e.determinant() - 1.0).abs() < 1e-14);
            let l = logm(&e).unwrap();
            assert!((l - m).norm() < 1e-12, "{m} -> {l}");
        }
        assert!(logm(&Mat2::new(-1.0, 0.5, 0.0, -1.0)).is_err());
    }

    #[test]
    fn averaging_trivial_cases() {
        let alpha = golden();
        let p = ParabolicForm::new(1, 0.2);
        let step = averaging_step(p, &MatMap::zero(Period::One), 1e-2, alpha, 0.05, DIVISOR_CUTOFF).unwrap();
        assert_eq!(step.p_next, p.matrix());
        assert_eq!(step.report.r_minus_identity, 0.0);
        assert!(step.report.residual < 1e-15);

        let k = Mat2::new(0.1, 0.2, -0.3, -0.1);
        let pt = MatMap::constant(to_c(&k), Period::One, true);
        let step = averaging_step(p, &pt, 1e-2, alpha, 0.05, DIVISOR_CUTOFF).unwrap();
        assert_eq!(step.y.l1(), 0.0);
        assert_eq!(step.p_next, p.matrix() + k * 1e-2);
    }

    #[test]
    fn averaging_residual_scales_quadratically() {
        let alpha = golden();
        let p = ParabolicForm::new(1, 0.3);
        let pt = sample_ptilde();
        let a = averaging_step(p, &pt, 1e-2, alpha, 0.05, DIVISOR_CUTOFF).unwrap();
        let b = averaging_step(p, &pt, 1e-3, alpha, 0.05, DIVISOR_CUTOFF).unwrap();
        assert!(a.report.identity_residual < 1e-9 && b.report.identity_residual < 1e-9);
        let ratio = a.report.residual / b.report.residual;
        assert!((50.0..=200.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn double_step_pieces() {
        let alpha = golden();
        let p = ParabolicForm::new(1, 0.3);
        let z = double_step(p, &MatMap::zero(Period::One), 1e-2, alpha, 0.05, DIVISOR_CUTOFF).unwrap();
        assert_eq!(z.frak_p1, Mat2::zeros());
        assert!(z.frak_p2.norm() < 1e-9 && z.remainder < 1e-9);

        let pt = sample_ptilde();
        let a = double_step(p, &pt, 1e-2, alpha, 0.05, DIVISOR_CUTOFF).unwrap();
        let b = double_step(p, &pt, 1e-3, alpha, 0.05, DIVISOR_CUTOFF).unwrap();
        let ratio = a.second.report.residual / b.second.report.residual;
        assert!((1000.0 / 3.0..=3000.0).contains(&ratio), "ratio {ratio}");
        let numeric = frak_p1_numeric(p, &to_r(&pt.average()), 1e-5).unwrap();
        assert!((numeric - a.frak_p1).norm() < 1e-6, "{numeric} vs {}", a.frak_p1);
        assert_eq!(a.degree_composite, 0);
    }

    #[test]
    fn frame_examples() {
        let v = VecMap::constant(crate::fourier::CVec2::new(c(1.0), c(0.0)), Period::Two, true);
        let (conj, rep) = build_frame(&v, 1e-8, BAND_CAP).unwrap();
        assert!((conj.r.average() - CMat2::identity()).norm() < 1e-15);
        assert!((rep.r_norm - 1.0).abs() < 1e-12);

        // (cos πx, sin πx) scaled by 2 + cos 2πx
        let v = VecMap::from_fn(
            |x| {
                let r = 2.0 + (2.0 * PI * x).cos();
                crate::fourier::CVec2::new(c(r * (PI * x).cos()), c(r * (PI * x).sin()))
            },
            8,
            Period::Two,
            true,
        );
        let (conj, rep) = build_frame(&v, 1e-8, BAND_CAP).unwrap();
        for m in conj.r.sample_line(0.0, 512) {
            assert!((m.determinant() - c(1.0)).norm() < 1e-10);
        }
        assert!(rep.r_norm <= rep.sup_v + 1.0 / rep.inf_v + 1e-9);
        assert_eq!(conj.degree, 1);

        let v = VecMap::from_fn(|x| crate::fourier::CVec2::new(c((PI * x).cos()), c(0.0)), 4, Period::Two, true);
        assert!(matches!(build_frame(&v, 1e-8, BAND_CAP), Err(Error::Singular { .. })));
    }

    #[test]
    fn free_edge_reduction() {
        let alpha = golden();
        let sol = find_bloch(0.0, &ScalarMap::amo(), alpha, 2.0, 16, &BlochOptions::default()).unwrap();
        let fr = assemble_u(&sol, 0.0, &ScalarMap::amo(), alpha, 1e-10).unwrap();
        let cocycle = Cocycle::free(alpha, 2.0);
        let red = reduce_at_edge(&cocycle, &fr, &ReductionOptions::default()).unwrap();
        // [[1, −½], [1, ½]]⁻¹ [[2, −1], [1, 0]] [[1, −½], [1, ½]] = [[1, −1], [0, 1]]
        assert_eq!(red.form.sign, 1);
        assert!((red.form.mu + 1.0).abs() < 1e-12);
        assert!(red.report.off_normal_residual < 1e-12);
        assert!(red.report.mu_rel_diff < 1e-6);
        let avg = average_identities(&red.conjugacy.r, red.form, alpha);
        assert!(avg.shift_ok && avg.r11_r21_ok);
        // a constant frame saturates Cauchy–Schwarz
        assert!(avg.wronskian.abs() < 1e-15);
        assert!(avg.r11_r12 * avg.r11_r12 <= avg.r11_sq * avg.r12_sq);
    }

    #[test]
    fn identity_frame_averages_and_perturbation() {
        let r = MatMap::constant(CMat2::identity(), Period::One, true);
        let p = ParabolicForm::new(1, 0.0);
        let avg = average_identities(&r, p, golden());
        assert_eq!((avg.r11_sq, avg.r11_r12, avg.r12_sq), (1.0, 0.0, 0.0));
        let pt = perturbation_matrix(&r, p, 64).unwrap();
        assert_eq!(to_r(&pt.average()), Mat2::new(0.0, 0.0, -1.0, 0.0));
        assert_eq!(pt.band_limit(), 0);
        // R = I is no reduction: R₂₁(x+α) = R₁₁(x) fails
        assert!(!avg.shift_ok);
    }

    #[test]
    fn perturbation_is_tangent_to_sl2() {
        let p = ParabolicForm::new(-1, 0.3);
        let pinv = p.matrix().try_inverse().unwrap();
        for r in [MatMap::constant(CMat2::identity(), Period::One, true), crate::cocycle::rotation_map(2)] {
            let pt = perturbation_matrix(&r, p, 64).unwrap();
            for m in pt.sample_line(0.0, 64) {
                assert!((pinv * to_r(&m)).trace().abs() < 1e-12);
            }
            assert!(to_r(&pt.average()).trace().abs() > 0.1);
        }
    }

    #[test]
    fn gap_edge_epsilon_examples() {
        let mut avg = average_identities(&MatMap::constant(CMat2::identity(), Period::One, true), ParabolicForm::new(1, 0.0), golden());
        avg.r12_sq = 1.0;
        avg.wronskian = 1.0;
        assert_eq!(gap_edge_epsilon(&avg, ParabolicForm::new(1, 0.0)).unwrap(), 0.0);
        let e = gap_edge_epsilon(&avg, ParabolicForm::new(1, 0.01)).unwrap();
        assert!((e + 0.02).abs() < 1e-15);
        let mut bad = avg;
        bad.wronskian = 0.0;
        assert!(gap_edge_epsilon(&bad, ParabolicForm::new(1, 0.01)).is_err());
    }

    fn rotation_generator(q: &Mat2, d: &Mat2) -> Mat2 {
        q.try_inverse().unwrap() * d * q
    }

    #[test]
    fn elliptic_examples() {
        let d = Mat2::new(0.0, -1.0, 1.0, 0.0);
        let (q, sd) = elliptic_normalize(&d).unwrap();
        assert_eq!(sd, 1.0);
        assert!((rotation_generator(&q, &d) - Mat2::new(0.0, -1.0, 1.0, 0.0)).norm() < 1e-12);
        let d = Mat2::new(0.0, -4.0, 1.0, 0.0);
        let (q, sd) = elliptic_normalize(&d).unwrap();
        assert_eq!(sd, 2.0);
        assert!((q.determinant() - 1.0).abs() < 1e-12);
        assert!((rotation_generator(&q, &d) - Mat2::new(0.0, -2.0, 2.0, 0.0)).norm() < 1e-12);
        let d = Mat2::new(0.3, -0.5, 0.7, -0.3);
        let (q, sd) = elliptic_normalize(&d).unwrap();
        assert!((rotation_generator(&q, &d) - Mat2::new(0.0, -sd, sd, 0.0)).norm() < 1e-12);
        assert!(elliptic_normalize(&Mat2::new(1.0, 0.0, 0.0, -1.0)).is_err());
        assert!(elliptic_normalize(&Mat2::new(0.0, 1.0, -1.0, 0.0)).is_err());
    }

    #[test]
    fn collapsed_shift_is_false() {
        let cocycle = Cocycle::amo(golden(), 0.25, 0.3);
        let r = rotation_shift_check(&cocycle, 0.0, 2000).unwrap();
        assert!(!r.differs);
        assert_eq!(r.rho_edge, r.rho_shifted);
    }

    fn widest_gap(lambda: f64) -> (f64, f64) {
        let bs = band_structure(lambda, &ScalarMap::amo(), 144, 233, &BandOptions::for_q(233)).unwrap();
        let (_, lo, hi) = bs.gaps().into_iter().max_by(|a, b| (a.2 - a.1).total_cmp(&(b.2 - b.1))).unwrap();
        (lo, hi)
    }

    #[test]
    fn amo_edge_reduction() {
        let alpha = golden();
        let lambda = 0.25;
        let f = ScalarMap::amo();
        let (lo, hi) = widest_gap(lambda);
        let sol = find_bloch(lambda, &f, alpha, hi, 128, &BlochOptions::default()).unwrap();
        let fr = assemble_u(&sol, lambda, &f, alpha, 1e-6).unwrap();
        let cocycle = Cocycle::amo(alpha, lambda, sol.energy);
        let red = reduce_at_edge(&cocycle, &fr, &ReductionOptions::default()).unwrap();
        let rep = &red.report;
        assert!(rep.selection.criterion_re.max(rep.selection.criterion_im) >= 2f64.sqrt());
        assert!(rep.off_normal_residual < 1e-8, "off-normal {}", rep.off_normal_residual);
        assert!(rep.mu_rel_diff < 1e-6, "μ {} vs {}", red.form.mu, rep.mu_iterate);
        assert!(rep.mu_prime_positive);
        let avg = average_identities(&red.conjugacy.r, red.form, alpha);
        assert!(avg.shift_ok, "shift residual {}", avg.shift_residual);
        assert!(avg.r11_r21_ok && avg.wronskian_positive);

        let pt = perturbation_matrix(&red.conjugacy.r, red.form, BAND_CAP).unwrap();
        let res = perturbation_residual(&cocycle, &red.conjugacy.r, red.form, &pt, 1e-4, 1024).unwrap();
        assert!(res < 1e-8, "perturbation residual {res}");

        let exact = frak_p1_closed(&avg, red.form);
        let numeric = frak_p1_numeric(red.form, &to_r(&pt.average()), 1e-5).unwrap();
        assert!((exact - numeric).norm() < 1e-6, "{exact} vs {numeric}");
        let gap = exact - frak_p1_first_order(&avg, red.form);
        let mu = red.form.mu_prime();
        assert!((gap[(0, 1)] - mu * mu * avg.r11_sq / 6.0).abs() < 1e-12);
        assert!(gap[(0, 0)].abs() + gap[(1, 0)].abs() + gap[(1, 1)].abs() < 1e-12);

        let eps = gap_edge_epsilon(&avg, red.form).unwrap();
        assert!(eps < 0.0);
        assert!(sol.energy + eps <= lo + 1e-9, "E⁺ + ε = {} vs E⁻ = {lo}", sol.energy + eps);
        let shift = rotation_shift_check(&cocycle, eps, 100_000).unwrap();
        assert!(shift.differs);
        assert!(shift.rho_shifted >= shift.rho_edge);
        assert_eq!(red.conjugacy.degree, degree_of(&red.conjugacy.r).unwrap());
    }
}
