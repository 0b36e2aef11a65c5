//! Quasi-periodic SL(2) cocycles (α, A): transfer products, Lyapunov
//! exponents, fibered rotation numbers, conjugation and degrees.
//!
//! Rotation numbers are measured in turns per step with the counterclockwise
//! orientation, so that the constant rotation R_θ has rotation number θ and
//! the free Schrödinger cocycle at E = 2cos 2πρ has rotation number ρ.

use std::f64::consts::{PI, TAU};

use nalgebra::Matrix2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fourier::{op_norm, CMat2, MatMap, Period, ScalarMap, C64, DEFAULT_BAND_LIMIT};

pub type Mat2 = Matrix2<f64>;

const RENORM_EVERY: usize = 32;
const PHI_TABLE: usize = 4096;
pub const DEFAULT_ROTATION_ITERATIONS: usize = 1_000_000;
pub const DEFAULT_ROTATION_THRESHOLD: f64 = 1e-4;

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// R_θ: counterclockwise rotation by 2πθ.
pub fn rotation(theta: f64) -> Mat2 {
    let (s, c) = (TAU * theta).sin_cos();
    Mat2::new(c, -s, s, c)
}

pub fn crotation(theta: f64) -> CMat2 {
    rotation(theta).map(|v| C64::new(v, 0.0))
}

/// Wraps an angle to (−π, π].
pub fn wrap_angle(t: f64) -> f64 {
    let r = t.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CocycleMap {
    /// S(x) = [[E − λf(x), −1], [1, 0]].
    Schrodinger { lambda: f64, potential: ScalarMap, energy: f64 },
    General(MatMap),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cocycle {
    alpha: f64,
    map: CocycleMap,
    /// Continuous lift of the first-column angle on a uniform x-grid
    /// (general cocycles only).
    phi_table: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationReport {
    /// Average lifted angle per step, in turns.
    pub raw: f64,
    /// raw mod 1, folded into [0, 1/2].
    pub rho: f64,
    /// |first half − second half| + 1/N.
    pub error_bar: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthPoint {
    pub k: usize,
    /// ln sup_{|Im z| = η} ‖A_k(z)‖.
    pub log_norm: f64,
}

impl Cocycle {
    pub fn schrodinger(alpha: f64, lambda: f64, potential: ScalarMap, energy: f64) -> Result<Self> {
        if !potential.is_real() {
            return Err(Error::InvalidArgument("potential must be real-valued".into()));
        }
        if potential.period() != Period::One {
            return Err(Error::PeriodMismatch("potential must be 1-periodic".into()));
        }
        Ok(Cocycle { alpha, map: CocycleMap::Schrodinger { lambda, potential, energy }, phi_table: None })
    }

    /// Almost Mathieu cocycle, f = 2cos 2πx.
    pub fn amo(alpha: f64, lambda: f64, energy: f64) -> Self {
        Self::schrodinger(alpha, lambda, ScalarMap::amo(), energy).expect("amo potential")
    }

    pub fn free(alpha: f64, energy: f64) -> Self {
        Self::amo(alpha, 0.0, energy)
    }

    /// General cocycle; A must be 1-periodic, real on ℝ, with det ≡ 1 and
    /// homotopic to the identity.
    pub fn general(alpha: f64, a: MatMap) -> Result<Self> {
        let a = a.to_period_one()?;
        let mut c = Cocycle { alpha, map: CocycleMap::General(a), phi_table: None };
        for j in 0..64 {
            let x = j as f64 / 64.0;
            let d = c.matrix_at(x).determinant();
            if (d - 1.0).abs() > 1e-8 {
                return Err(Error::InvalidArgument(format!("det A({x}) = {d}, expected 1")));
            }
        }
        let mut table = Vec::with_capacity(PHI_TABLE + 1);
        let mut prev = 0.0;
        for j in 0..=PHI_TABLE {
            let m = c.matrix_at(j as f64 / PHI_TABLE as f64);
            let raw = m[(1, 0)].atan2(m[(0, 0)]);
            let lifted = if j == 0 { raw } else { prev + wrap_angle(raw - prev) };
            if j > 0 && (lifted - prev).abs() > PI / 2.0 {
                return Err(Error::InvalidArgument("first column of A turns too fast to lift".into()));
            }
            table.push(lifted);
            prev = lifted;
        }
        if (table[PHI_TABLE] - table[0]).abs() > PI {
            return Err(Error::Inadmissible("A is not homotopic to the identity".into()));
        }
        c.phi_table = Some(table);
        Ok(c)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn map(&self) -> &CocycleMap {
        &self.map
    }

    pub fn with_alpha(&self, alpha: f64) -> Self {
        Cocycle { alpha, ..self.clone() }
    }

    /// Same cocycle at another energy (Schrödinger only).
    pub fn with_energy(&self, e: f64) -> Result<Self> {
        match &self.map {
            CocycleMap::Schrodinger { lambda, potential, .. } => Self::schrodinger(self.alpha, *lambda, potential.clone(), e),
            CocycleMap::General(_) => Err(Error::InvalidArgument("energy shift needs a Schrödinger cocycle".into())),
        }
    }

    /// A as a 2×2 Fourier map.
    pub fn as_matmap(&self) -> MatMap {
        match &self.map {
            CocycleMap::General(m) => m.clone(),
            CocycleMap::Schrodinger { lambda, potential, energy } => {
                let c = |v: f64| C64::new(v, 0.0);
                let mut m: MatMap =
                    potential.map_coeffs(|_, f| CMat2::new(f * (-lambda), c(0.0), c(0.0), c(0.0)), true);
                let constant =
                    MatMap::constant(CMat2::new(c(*energy), c(-1.0), c(1.0), c(0.0)), Period::One, true);
                m = m.add(&constant).expect("same period");
                m
            }
        }
    }

    pub fn matrix_at(&self, x: f64) -> Mat2 {
        match &self.map {
            CocycleMap::Schrodinger { lambda, potential, energy } => {
                let v = energy - lambda * potential.eval_real(x).re;
                Mat2::new(v, -1.0, 1.0, 0.0)
            }
            CocycleMap::General(m) => m.eval_real(x).map(|z| z.re),
        }
    }

    pub fn cmatrix_at(&self, z: C64) -> Result<CMat2> {
        match &self.map {
            CocycleMap::Schrodinger { lambda, potential, energy } => {
                let v = C64::new(*energy, 0.0) - potential.eval(z)? * *lambda;
                let c = |v: f64| C64::new(v, 0.0);
                Ok(CMat2::new(v, c(-1.0), c(1.0), c(0.0)))
            }
            CocycleMap::General(m) => m.eval(z),
        }
    }

    /// A_k(z) = A(z+(k−1)α)···A(z) as (M, s) with A_k = e^s·M.
    pub fn transfer(&self, k: usize, z: C64) -> Result<(CMat2, f64)> {
        if k == 0 {
            return Err(Error::InvalidArgument("transfer needs k >= 1".into()));
        }
        let mut m = CMat2::identity();
        let mut log = KahanSum::default();
        for l in 0..k {
            m = self.cmatrix_at(z + self.alpha * l as f64)? * m;
            if (l + 1) % RENORM_EVERY == 0 {
                let s = op_norm(&m);
                m /= C64::new(s, 0.0);
                log.add(s.ln());
            }
        }
        Ok((m, log.value()))
    }

    /// Real-axis transfer product, same scaling convention.
    pub fn transfer_real(&self, k: usize, x: f64) -> (Mat2, f64) {
        let mut m = Mat2::identity();
        let mut log = KahanSum::default();
        for l in 0..k {
            m = self.matrix_at(x + self.alpha * l as f64) * m;
            if (l + 1) % RENORM_EVERY == 0 {
                let s = m.norm();
                m /= s;
                log.add(s.ln());
            }
        }
        (m, log.value())
    }

    /// Average over `phases` equispaced x of (1/k) ln‖A_k(x)‖.
    pub fn lyapunov(&self, k: usize, phases: usize) -> Result<f64> {
        if k == 0 || phases == 0 {
            return Err(Error::InvalidArgument("lyapunov needs k, phases >= 1".into()));
        }
        let mut acc = 0.0;
        for j in 0..phases {
            let (m, s) = self.transfer_real(k, j as f64 / phases as f64);
            acc += (s + op_norm(&m.map(|v| C64::new(v, 0.0))).ln()) / k as f64;
        }
        Ok(acc / phases as f64)
    }

    /// Continuous lift of the angle of the first column of A(x).
    fn first_column_angle(&self, x: f64, a: &Mat2) -> f64 {
        let raw = a[(1, 0)].atan2(a[(0, 0)]);
        match &self.phi_table {
            None => raw,
            Some(table) => {
                let t = x.rem_euclid(1.0) * PHI_TABLE as f64;
                let j = (t.floor() as usize).min(PHI_TABLE - 1);
                let w = t - j as f64;
                let guess = table[j] * (1.0 - w) + table[j + 1] * w;
                raw + TAU * ((guess - raw) / TAU).round()
            }
        }
    }

    /// Lifted angle increment of the projective action of A(x) at angle t.
    /// A = R_φ·T with T upper triangular with positive diagonal; the T part
    /// moves angles by less than π and fixes the horizontal axis.
    fn angle_step(&self, x: f64, t: f64) -> f64 {
        let a = self.matrix_at(x);
        let phi = self.first_column_angle(x, &a);
        let (s, c) = phi.sin_cos();
        let (vs, vc) = t.sin_cos();
        // T·v with T = R_{−φ} A
        let w0 = c * (a[(0, 0)] * vc + a[(0, 1)] * vs) + s * (a[(1, 0)] * vc + a[(1, 1)] * vs);
        let w1 = -s * (a[(0, 0)] * vc + a[(0, 1)] * vs) + c * (a[(1, 0)] * vc + a[(1, 1)] * vs);
        phi + wrap_angle(w1.atan2(w0) - t)
    }

    /// Fibered rotation number by Birkhoff averaging of the lifted angle
    /// along the orbit of `x0`, starting from the horizontal direction.
    pub fn rotation_number(&self, iterations: usize, x0: f64) -> Result<RotationReport> {
        self.rotation_number_with(iterations, x0, DEFAULT_ROTATION_THRESHOLD)
    }

    pub fn rotation_number_with(&self, iterations: usize, x0: f64, threshold: f64) -> Result<RotationReport> {
        if iterations < 2 {
            return Err(Error::InvalidArgument("need at least 2 iterations".into()));
        }
        let half = iterations / 2;
        let mut first = KahanSum::default();
        let mut second = KahanSum::default();
        let mut t = 0.0f64;
        let mut x = x0.rem_euclid(1.0);
        for n in 0..iterations {
            let d = self.angle_step(x, t);
            if n < half {
                first.add(d);
            } else {
                second.add(d);
            }
            t = (t + d).rem_euclid(TAU);
            x += self.alpha;
            if x >= 1.0 {
                x -= 1.0;
            }
        }
        let total = first.value() + second.value();
        let raw = total / (TAU * iterations as f64);
        let r1 = first.value() / (TAU * half as f64);
        let r2 = second.value() / (TAU * (iterations - half) as f64);
        let error_bar = (r1 - r2).abs() + 1.0 / iterations as f64;
        Ok(RotationReport { raw, rho: fold_rotation(raw), error_bar, iterations, converged: error_bar <= threshold })
    }

    /// B(x) = R(x+α)^{-1} A(x) R(x), resampled as a Fourier map.
    pub fn conjugate(&self, r: &MatMap) -> Result<Cocycle> {
        let a = self.as_matmap();
        let n_r = match r.period() {
            Period::One => r.band_limit(),
            Period::Two => r.band_limit().div_ceil(2),
        };
        let n = (a.band_limit() + 2 * n_r + 8).min(DEFAULT_BAND_LIMIT);
        let m = (4 * n + 4).next_power_of_two();
        let mut samples = Vec::with_capacity(m);
        for j in 0..m {
            let x = j as f64 / m as f64;
            let rx = r.eval_real(x);
            let ry = r.eval_real(x + self.alpha);
            let det = ry[(0, 0)] * ry[(1, 1)] - ry[(0, 1)] * ry[(1, 0)];
            if det.norm() < 1e-8 {
                return Err(Error::Singular { x: x + self.alpha, detail: format!("det R = {det}") });
            }
            let inv = CMat2::new(ry[(1, 1)], -ry[(0, 1)], -ry[(1, 0)], ry[(0, 0)]) / det;
            samples.push(inv * a.eval_real(x) * rx);
        }
        let b = MatMap::from_samples(&samples, n, Period::One, a.is_real() && r.is_real());
        Cocycle::general(self.alpha, b)
    }

    /// ln of the strip norm of A_k on |Im z| = η for k on a doubling schedule up to K.
    pub fn strip_growth(&self, eta: f64, k_max: usize, grid: usize) -> Result<Vec<GrowthPoint>> {
        let mut ks = Vec::new();
        let mut k = 1;
        while k < k_max {
            ks.push(k);
            k *= 2;
        }
        ks.push(k_max.max(1));
        let lines: Vec<f64> = if eta == 0.0 { vec![0.0] } else { vec![eta, -eta] };
        let mut out = Vec::with_capacity(ks.len());
        for k in ks {
            let mut best = f64::NEG_INFINITY;
            for &y in &lines {
                for j in 0..grid {
                    let (m, s) = self.transfer(k, C64::new(j as f64 / grid as f64, y))?;
                    best = best.max(s + op_norm(&m).ln());
                }
            }
            out.push(GrowthPoint { k, log_norm: best });
        }
        Ok(out)
    }
}

/// A PSL(2,ℝ)-valued conjugacy with its degree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conjugacy {
    pub r: MatMap,
    pub degree: i64,
}

impl Conjugacy {
    /// Checks det R ≈ 1 on a grid and computes the degree.
    pub fn new(r: MatMap, det_tol: f64) -> Result<Self> {
        let pl = r.period().length();
        for j in 0..256 {
            let x = pl * j as f64 / 256.0;
            let d = r.eval_real(x).determinant();
            if (d.re - 1.0).abs() > det_tol || d.im.abs() > det_tol {
                return Err(Error::InvalidArgument(format!("det R({x}) = {d}, expected 1")));
            }
        }
        let degree = degree_of(&r)?;
        Ok(Conjugacy { r, degree })
    }
}

/// raw mod 1 folded to [0, 1/2].
pub fn fold_rotation(raw: f64) -> f64 {
    let r = raw.rem_euclid(1.0);
    if r > 0.5 {
        1.0 - r
    } else {
        r
    }
}

/// Winding number in RP¹ of x ↦ R(x)v over x ∈ [0, 1], in half turns.
/// R_x has degree 2 and the period-2 map R_{x/2} has degree 1.
pub fn degree_of(r: &MatMap) -> Result<i64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut attempts = 0;
    let mut angle0: f64 = 0.25;
    loop {
        attempts += 1;
        let v = [angle0.cos(), angle0.sin()];
        if let Some(d) = winding(r, v) {
            return Ok(d);
        }
        if attempts >= 3 {
            return Err(Error::DegreeUndefined { attempts });
        }
        angle0 = rng.gen_range(0.0..PI);
    }
}

fn winding(r: &MatMap, v: [f64; 2]) -> Option<i64> {
    let dir = |x: f64| -> Option<f64> {
        let m = r.eval_real(x);
        let w0 = m[(0, 0)].re * v[0] + m[(0, 1)].re * v[1];
        let w1 = m[(1, 0)].re * v[0] + m[(1, 1)].re * v[1];
        if w0.hypot(w1) < 1e-10 {
            None
        } else {
            Some(w1.atan2(w0))
        }
    };
    let base = match r.period() {
        Period::One => 8 * r.band_limit() + 64,
        Period::Two => 4 * r.band_limit() + 64,
    };
    let mut total = 0.0;
    let mut prev = dir(0.0)?;
    let h = 1.0 / base as f64;
    for j in 1..=base {
        // bisect steps whose direction jumps more than π/4
        let mut stack = vec![((j - 1) as f64 * h, j as f64 * h)];
        while let Some((a, b)) = stack.pop() {
            let next = dir(b)?;
            let d = wrap_angle(next - prev);
            if d.abs() > PI / 4.0 && b - a > 1e-9 {
                stack.push(((a + b) / 2.0, b));
                stack.push((a, (a + b) / 2.0));
                continue;
            }
            total += d;
            prev = next;
        }
    }
    let half_turns = total / PI;
    let k = half_turns.round();
    if (half_turns - k).abs() > 1e-6 {
        return None;
    }
    Some(k as i64)
}

/// Period-2 map x ↦ R_{k x / 2} of degree k.
pub fn rotation_map(k: i64) -> MatMap {
    let c = |re: f64, im: f64| C64::new(re, im);
    // R_t = ½(e^{2πit}(I − iJ) + e^{−2πit}(I + iJ)), J = [[0,−1],[1,0]]
    let plus = CMat2::new(c(0.5, 0.0), c(0.0, 0.5), c(0.0, -0.5), c(0.5, 0.0));
    let minus = CMat2::new(c(0.5, 0.0), c(0.0, -0.5), c(0.0, 0.5), c(0.5, 0.0));
    if k == 0 {
        return MatMap::constant(CMat2::identity(), Period::One, true);
    }
    if k % 2 == 0 {
        MatMap::from_pairs(&[(k / 2, plus), (-k / 2, minus)], Period::One, true)
    } else {
        MatMap::from_pairs(&[(k, plus), (-k, minus)], Period::Two, true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const GOLDEN: f64 = 0.618_033_988_749_894_9;

    fn close(a: &CMat2, b: &Mat2, tol: f64) -> bool {
        (0..2).all(|i| (0..2).all(|j| (a[(i, j)] - C64::new(b[(i, j)], 0.0)).norm() <= tol))
    }

    #[test]
    fn transfer_examples() {
        let c = Cocycle::amo(GOLDEN, 0.7, 0.3);
        let z = C64::new(0.17, 0.0);
        let (m, s) = c.transfer(1, z).unwrap();
        assert_eq!(s, 0.0);
        assert!(close(&m, &c.matrix_at(0.17), 1e-15));
        let f = Cocycle::free(GOLDEN, 2.0);
        let (m, s) = f.transfer(2, C64::new(0.4, 0.0)).unwrap();
        assert_eq!(s, 0.0);
        assert!(close(&m, &Mat2::new(3.0, -2.0, 2.0, -1.0), 1e-15));
        // an energy inside the spectrum keeps A_k well conditioned
        let (m, s) = Cocycle::amo(GOLDEN, 0.3, 0.0).transfer(1000, z).unwrap();
        assert!(s < 20.0, "{s}");
        let det = (m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)]) * (2.0 * s).exp();
        assert!((det - C64::new(1.0, 0.0)).norm() < 1e-10, "{det} {s}");
    }

    #[test]
    fn lyapunov_examples() {
        assert!(Cocycle::free(GOLDEN, 0.0).lyapunov(2000, 8).unwrap().abs() < 1e-3);
        let l = Cocycle::free(GOLDEN, 3.0).lyapunov(5000, 4).unwrap();
        assert!((l - ((3.0 + 5f64.sqrt()) / 2.0).ln()).abs() < 1e-3);
        let l = Cocycle::amo(GOLDEN, 2.0, 0.0).lyapunov(20000, 16).unwrap();
        assert!((l - 2f64.ln()).abs() < 5e-2, "{l}");
    }

    #[test]
    fn rotation_examples() {
        let r = Cocycle::free(GOLDEN, 0.0).rotation_number(DEFAULT_ROTATION_ITERATIONS, 0.0).unwrap();
        assert!((r.rho - 0.25).abs() < 1e-6, "{r:?}");
        let r = Cocycle::free(GOLDEN, -2.0).rotation_number(DEFAULT_ROTATION_ITERATIONS, 0.0).unwrap();
        assert!((r.rho - 0.5).abs() < 1e-6, "{r:?}");
        let e = 2.0 * (TAU * 0.3).cos();
        let r = Cocycle::free(GOLDEN, e).rotation_number(DEFAULT_ROTATION_ITERATIONS, 0.0).unwrap();
        assert!((r.rho - 0.3).abs() < 1e-6, "{r:?}");
        assert!(r.converged);
    }

    #[test]
    fn rotation_is_monotone_in_energy() {
        let mut prev: Option<RotationReport> = None;
        for j in 0..=40 {
            let e = -3.2 + 6.4 * j as f64 / 40.0;
            let r = Cocycle::amo(GOLDEN, 0.8, e).rotation_number(100_000, 0.1).unwrap();
            if let Some(p) = prev {
                assert!(r.rho <= p.rho + r.error_bar + p.error_bar, "E={e}: {r:?} after {p:?}");
            }
            prev = Some(r);
        }
    }

    #[test]
    fn general_matches_schrodinger() {
        let s = Cocycle::amo(GOLDEN, 0.6, 0.9);
        let g = Cocycle::general(GOLDEN, s.as_matmap()).unwrap();
        let a = s.rotation_number(100_000, 0.0).unwrap();
        let b = g.rotation_number(100_000, 0.0).unwrap();
        assert!((a.raw - b.raw).abs() < 1e-12);
    }

    #[test]
    fn degree_examples() {
        let one = MatMap::constant(CMat2::identity(), Period::One, true);
        assert_eq!(degree_of(&one).unwrap(), 0);
        assert_eq!(degree_of(&MatMap::constant(crotation(0.3), Period::One, true)).unwrap(), 0);
        assert_eq!(degree_of(&rotation_map(2)).unwrap(), 2);
        assert_eq!(degree_of(&rotation_map(1)).unwrap(), 1);
        assert_eq!(degree_of(&rotation_map(-3)).unwrap(), -3);
        let x = 0.37;
        assert!(close(&rotation_map(2).eval_real(x), &rotation(x), 1e-15));
        assert!(close(&rotation_map(1).eval_real(x), &rotation(x / 2.0), 1e-15));
        let zero = MatMap::zero(Period::One);
        assert!(matches!(degree_of(&zero), Err(Error::DegreeUndefined { .. })));
    }

    #[test]
    fn conjugate_examples() {
        let a = Cocycle::amo(GOLDEN, 0.5, 0.4);
        let id = MatMap::constant(CMat2::identity(), Period::One, true);
        let b = a.conjugate(&id).unwrap();
        for (k, c) in a.as_matmap().coeffs() {
            assert!((b.as_matmap().coeff(k) - c).norm() < 1e-13);
        }
        let rc = MatMap::constant(crotation(0.2), Period::One, true);
        let b = a.conjugate(&rc).unwrap();
        let x = 0.3;
        let expect = rotation(-0.2) * a.matrix_at(x) * rotation(0.2);
        assert!((b.matrix_at(x) - expect).norm() < 1e-13);
        let ra = a.rotation_number(200_000, 0.0).unwrap();
        let rb = b.rotation_number(200_000, 0.0).unwrap();
        assert!((ra.rho - rb.rho).abs() < ra.error_bar + rb.error_bar);
    }

    #[test]
    fn conjugation_shifts_rotation_by_degree() {
        for d in [2i64, 1, -2, 4] {
            let a = Cocycle::free(GOLDEN, 0.5);
            let b = a.conjugate(&rotation_map(d)).unwrap();
            let ra = a.rotation_number(200_000, 0.0).unwrap();
            let rb = b.rotation_number(200_000, 0.0).unwrap();
            let gap = 2.0 * ra.raw - 2.0 * rb.raw - d as f64 * GOLDEN;
            assert!(crate::norm_dist(gap) <= 2.0 * (ra.error_bar + rb.error_bar), "d={d} gap={gap}");
        }
    }

    #[test]
    fn rotation_lipschitz_near_constant() {
        let theta = 0.21;
        let mut ratios = Vec::new();
        for eps in [1e-2, 1e-3, 1e-4] {
            // A = R_θ·exp(ε·cos(2πx)·H), H = diag(1,−1), det 1
            let pert = |x: f64| {
                let t = eps * (TAU * x).cos();
                rotation(theta) * Mat2::new(t.exp(), 0.0, 0.0, (-t).exp())
            };
            let a = MatMap::from_fn(|x| pert(x).map(|v| C64::new(v, 0.0)), 64, Period::One, true);
            let c = Cocycle::general(GOLDEN, a).unwrap();
            let sup = (0..256).map(|j| (pert(j as f64 / 256.0) - rotation(theta)).norm()).fold(0.0, f64::max);
            let r = c.rotation_number(400_000, 0.0).unwrap();
            ratios.push((r.raw - theta).abs() / sup);
        }
        let c = ratios.iter().cloned().fold(0.0, f64::max);
        assert!(c < 1.0, "{ratios:?}");
    }

    #[test]
    fn strip_growth_examples() {
        let id = Cocycle::general(GOLDEN, MatMap::constant(CMat2::identity(), Period::One, true)).unwrap();
        for p in id.strip_growth(0.1, 64, 8).unwrap() {
            assert!(p.log_norm.abs() < 1e-12);
        }
        let ell = Cocycle::free(GOLDEN, 1.2).strip_growth(0.0, 10_000, 2).unwrap();
        assert!(ell.iter().all(|p| p.log_norm < 2.0));
        let hyp = Cocycle::free(GOLDEN, 3.0).strip_growth(0.0, 4096, 2).unwrap();
        let (a, b) = (hyp[hyp.len() - 2], hyp[hyp.len() - 1]);
        let slope = (b.log_norm - a.log_norm) / (b.k - a.k) as f64;
        assert!((slope - ((3.0 + 5f64.sqrt()) / 2.0).ln()).abs() < 1e-3);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn cocycle_property(j in 1usize..100, k in 1usize..100, x in 0.0f64..1.0, e in -3.0f64..3.0, lam in 0.0f64..3.0) {
            let c = Cocycle::amo(GOLDEN, lam, e);
            let z = C64::new(x, 0.0);
            let (m, s) = c.transfer(j + k, z).unwrap();
            let (mj, sj) = c.transfer(j, z + GOLDEN * k as f64).unwrap();
            let (mk, sk) = c.transfer(k, z).unwrap();
            let prod = (mj * mk) * C64::new((sj + sk - s).exp(), 0.0);
            prop_assert!(op_norm(&(prod - m)) <= 1e-9 * op_norm(&m));
        }
    }
}
