//! Truncated Fourier series of 1- or 2-periodic analytic maps.
//!
//! A map of period P is `Σ_{|k|≤N} c_k e^{2πikz/P}`. Coefficients may be
//! scalars, 2-vectors or 2×2 matrices over ℂ. Each map carries `tail`, a bound
//! on the real-axis sup norm of everything that was discarded to reach band
//! limit N (zero for maps given by finitely many exact coefficients).

use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use nalgebra::{Matrix2, Vector2};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hexfloat;

pub type C64 = Complex64;
pub type CVec2 = Vector2<C64>;
pub type CMat2 = Matrix2<C64>;

pub const DEFAULT_BAND_LIMIT: usize = 512;
pub const DEFAULT_STRIP_GRID: usize = 2048;
const STRIP_GRID_MAX: usize = 1 << 20;
const STRIP_REL_CHANGE: f64 = 1e-10;
/// Relative tolerance on the estimated tail before eval refuses a point.
pub const EVAL_TAIL_TOL: f64 = 1e-8;
const TRIM_REL: f64 = 1e-16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Period {
    One,
    Two,
}

impl Period {
    pub fn length(self) -> f64 {
        match self {
            Period::One => 1.0,
            Period::Two => 2.0,
        }
    }
}

/// Values a Fourier coefficient can take.
pub trait Coeff: Copy + Add<Output = Self> + Sub<Output = Self> + Neg<Output = Self> + Mul<C64, Output = Self> {
    const DIM: usize;
    fn zero() -> Self;
    /// Components in row-major order.
    fn components(&self) -> Vec<C64>;
    fn from_components(c: &[C64]) -> Self;
    /// Euclidean norm for scalars and vectors, operator 2-norm for matrices.
    fn norm(&self) -> f64;
    fn conj(&self) -> Self;
}

impl Coeff for C64 {
    const DIM: usize = 1;
    fn zero() -> Self {
        C64::new(0.0, 0.0)
    }
    fn components(&self) -> Vec<C64> {
        vec![*self]
    }
    fn from_components(c: &[C64]) -> Self {
        c[0]
    }
    fn norm(&self) -> f64 {
        Complex64::norm(*self)
    }
    fn conj(&self) -> Self {
        Complex64::conj(self)
    }
}

impl Coeff for CVec2 {
    const DIM: usize = 2;
    fn zero() -> Self {
        CVec2::zeros()
    }
    fn components(&self) -> Vec<C64> {
        vec![self[0], self[1]]
    }
    fn from_components(c: &[C64]) -> Self {
        CVec2::new(c[0], c[1])
    }
    fn norm(&self) -> f64 {
        (self[0].norm_sqr() + self[1].norm_sqr()).sqrt()
    }
    fn conj(&self) -> Self {
        self.map(|z| z.conj())
    }
}

impl Coeff for CMat2 {
    const DIM: usize = 4;
    fn zero() -> Self {
        CMat2::zeros()
    }
    fn components(&self) -> Vec<C64> {
        vec![self[(0, 0)], self[(0, 1)], self[(1, 0)], self[(1, 1)]]
    }
    fn from_components(c: &[C64]) -> Self {
        CMat2::new(c[0], c[1], c[2], c[3])
    }
    fn norm(&self) -> f64 {
        op_norm(self)
    }
    fn conj(&self) -> Self {
        self.map(|z| z.conj())
    }
}

/// Largest singular value of a complex 2×2 matrix.
pub fn op_norm(m: &CMat2) -> f64 {
    let s = m.iter().map(|z| z.norm_sqr()).sum::<f64>();
    let det = (m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)]).norm();
    let disc = (s * s - 4.0 * det * det).max(0.0).sqrt();
    ((s + disc) / 2.0).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierMap<T> {
    /// c_k stored at index k + N.
    coeffs: Vec<T>,
    band_limit: usize,
    period: Period,
    real: bool,
    tail: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StripNormReport {
    pub delta: f64,
    pub value: f64,
    pub grid: usize,
    /// Largest value seen on the real axis during the same sweep.
    pub real_axis: f64,
}

pub type ScalarMap = FourierMap<C64>;
pub type VecMap = FourierMap<CVec2>;
pub type MatMap = FourierMap<CMat2>;

fn fft_plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    let mut planner = FftPlanner::new();
    if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    }
}

impl<T: Coeff> FourierMap<T> {
    /// Map from coefficients c_{−N}..c_N (length 2N+1).
    pub fn from_coeffs(coeffs: Vec<T>, period: Period, real: bool) -> Result<Self> {
        if coeffs.len() % 2 != 1 {
            return Err(Error::InvalidArgument(format!("need 2N+1 coefficients, got {}", coeffs.len())));
        }
        let band_limit = coeffs.len() / 2;
        Ok(FourierMap { coeffs, band_limit, period, real, tail: 0.0 })
    }

    /// Map from sparse (k, c_k) pairs.
    pub fn from_pairs(pairs: &[(i64, T)], period: Period, real: bool) -> Self {
        let n = pairs.iter().map(|p| p.0.unsigned_abs() as usize).max().unwrap_or(0);
        let mut coeffs = vec![T::zero(); 2 * n + 1];
        for &(k, c) in pairs {
            coeffs[(k + n as i64) as usize] = coeffs[(k + n as i64) as usize] + c;
        }
        FourierMap { coeffs, band_limit: n, period, real, tail: 0.0 }
    }

    pub fn constant(c: T, period: Period, real: bool) -> Self {
        Self::from_pairs(&[(0, c)], period, real)
    }

    pub fn zero(period: Period) -> Self {
        Self::constant(T::zero(), period, true)
    }

    /// Samples `f` on an equispaced grid and keeps |k| ≤ `band_limit`.
    /// Coefficients below 1e−16 of the largest are dropped and the band
    /// limit shrinks to the last surviving one. The aliasing/truncation
    /// estimate from the unused FFT modes is recorded as the tail.
    pub fn from_fn(f: impl Fn(f64) -> T, band_limit: usize, period: Period, real: bool) -> Self {
        let m = (4 * band_limit + 4).next_power_of_two();
        let pl = period.length();
        let samples: Vec<T> = (0..m).map(|j| f(pl * j as f64 / m as f64)).collect();
        Self::from_samples(&samples, band_limit, period, real)
    }

    /// Same as [`FourierMap::from_fn`] for samples at x_j = jP/M, M = `samples.len()`.
    pub fn from_samples(samples: &[T], band_limit: usize, period: Period, real: bool) -> Self {
        let m = samples.len();
        assert!(m > 2 * band_limit, "need more samples than 2N+1");
        let fft = fft_plan(m, false);
        let mut comps: Vec<Vec<C64>> = (0..T::DIM)
            .map(|d| samples.iter().map(|s| s.components()[d]).collect())
            .collect();
        for c in comps.iter_mut() {
            fft.process(c);
        }
        let scale = C64::new(1.0 / m as f64, 0.0);
        let at = |k: i64| -> T {
            let idx = k.rem_euclid(m as i64) as usize;
            let v: Vec<C64> = comps.iter().map(|c| c[idx] * scale).collect();
            T::from_components(&v)
        };
        let n = band_limit as i64;
        let mut coeffs: Vec<T> = (-n..=n).map(at).collect();
        let mut tail = 0.0;
        for k in (n + 1)..=((m as i64 - 1) / 2) {
            tail += at(k).norm() + at(-k).norm();
        }
        let max = coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max);
        for c in coeffs.iter_mut() {
            if c.norm() < TRIM_REL * max {
                *c = T::zero();
            }
        }
        let mut map = FourierMap { coeffs, band_limit, period, real, tail };
        map.shrink();
        map
    }

    /// Drops zero coefficients at the band edge.
    fn shrink(&mut self) {
        let n = self.band_limit;
        let mut keep = 0;
        for k in (0..=n).rev() {
            if self.coeffs[n + k].norm() != 0.0 || self.coeffs[n - k].norm() != 0.0 {
                keep = k;
                break;
            }
        }
        if keep < n {
            self.coeffs = self.coeffs[n - keep..=n + keep].to_vec();
            self.band_limit = keep;
        }
    }

    pub fn band_limit(&self) -> usize {
        self.band_limit
    }
    pub fn period(&self) -> Period {
        self.period
    }
    pub fn is_real(&self) -> bool {
        self.real
    }
    pub fn tail(&self) -> f64 {
        self.tail
    }
    pub fn set_tail(&mut self, tail: f64) {
        self.tail = tail;
    }
    pub fn with_real(mut self, real: bool) -> Self {
        self.real = real;
        self
    }

    pub fn coeff(&self, k: i64) -> T {
        if k.unsigned_abs() as usize > self.band_limit {
            T::zero()
        } else {
            self.coeffs[(k + self.band_limit as i64) as usize]
        }
    }

    pub fn coeffs(&self) -> impl Iterator<Item = (i64, T)> + '_ {
        let n = self.band_limit as i64;
        self.coeffs.iter().enumerate().map(move |(i, c)| (i as i64 - n, *c))
    }

    /// Checks coeff(−k) = conj(coeff(k)) to `rel` relative to the largest coefficient.
    pub fn is_real_within(&self, rel: f64) -> bool {
        let max = self.coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max);
        let n = self.band_limit as i64;
        (0..=n).all(|k| (self.coeff(-k) - self.coeff(k).conj()).norm() <= rel * max.max(f64::MIN_POSITIVE))
    }

    /// Σ c_k e^{2πikz/P} with no reliability check.
    pub fn eval_unchecked(&self, z: C64) -> T {
        let w = (C64::new(0.0, 2.0 * PI / self.period.length()) * z).exp();
        // Horner from both ends around k = 0
        let n = self.band_limit;
        let mut pos = T::zero();
        for k in (1..=n).rev() {
            pos = (pos + self.coeffs[n + k]) * w;
        }
        let winv = w.inv();
        let mut neg = T::zero();
        for k in (1..=n).rev() {
            neg = (neg + self.coeffs[n - k]) * winv;
        }
        self.coeffs[n] + pos + neg
    }

    /// Bound on the error of evaluating the truncated series at height `y`.
    /// Exact maps (tail 0) are reliable everywhere; otherwise the discarded
    /// part and the outermost retained modes are grown to height |y|.
    pub fn tail_estimate(&self, y: f64) -> f64 {
        if self.tail == 0.0 {
            return 0.0;
        }
        let n = self.band_limit as f64;
        let g = (2.0 * PI * y.abs() / self.period.length()).exp();
        let edge = self.coeff(self.band_limit as i64).norm() + self.coeff(-(self.band_limit as i64)).norm();
        (self.tail * g + edge) * g.powf(n)
    }

    pub fn eval(&self, z: C64) -> Result<T> {
        let v = self.eval_unchecked(z);
        let t = self.tail_estimate(z.im);
        if t > EVAL_TAIL_TOL * v.norm().max(1.0) {
            return Err(Error::OutsideStrip { tail: t, imag: z.im });
        }
        Ok(v)
    }

    pub fn eval_real(&self, x: f64) -> T {
        self.eval_unchecked(C64::new(x, 0.0))
    }

    /// Values on the line Im z = y at x_j = jP/M via one inverse FFT per component.
    pub fn sample_line(&self, y: f64, m: usize) -> Vec<T> {
        let pl = self.period.length();
        let mut comps = vec![vec![C64::new(0.0, 0.0); m]; T::DIM];
        for (k, c) in self.coeffs() {
            let damp = (-2.0 * PI * k as f64 * y / pl).exp();
            let idx = k.rem_euclid(m as i64) as usize;
            for (d, v) in c.components().into_iter().enumerate() {
                comps[d][idx] += v * damp;
            }
        }
        let fft = fft_plan(m, true);
        for c in comps.iter_mut() {
            fft.process(c);
        }
        (0..m)
            .map(|j| {
                let v: Vec<C64> = comps.iter().map(|c| c[j]).collect();
                T::from_components(&v)
            })
            .collect()
    }

    /// Largest sample on Im z = ±δ, polished by golden-section search
    /// around the best few grid points so that coarse grids cannot miss
    /// a peak that falls between nodes.
    fn line_sup(&self, delta: f64, m: usize) -> f64 {
        let pl = self.period.length();
        let h = pl / m as f64;
        let mut best = 0.0f64;
        let lines: &[f64] = if delta == 0.0 { &[0.0] } else { &[delta, -delta] };
        for &y in lines {
            let vals: Vec<f64> = self.sample_line(y, m).iter().map(|v| v.norm()).collect();
            let mut idx: Vec<usize> = (0..m).collect();
            idx.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));
            for &j in idx.iter().take(4) {
                best = best.max(vals[j]);
                let f = |x: f64| self.eval_unchecked(C64::new(x, y)).norm();
                best = best.max(golden_max(f, (j as f64 - 1.0) * h, (j as f64 + 1.0) * h));
            }
        }
        best
    }

    /// sup_{|Im z| ≤ δ} ‖map(z)‖ from the two boundary lines, with the grid
    /// doubled from `grid` until the value settles to 1e−10 relative.
    pub fn strip_norm(&self, delta: f64, grid: usize) -> Result<StripNormReport> {
        if !(delta >= 0.0) {
            return Err(Error::InvalidArgument(format!("strip width must be nonnegative, got {delta}")));
        }
        let t = self.tail_estimate(delta);
        let mut m = grid.max(8);
        let mut value = self.line_sup(delta, m);
        loop {
            if m >= STRIP_GRID_MAX {
                break;
            }
            let next = self.line_sup(delta, 2 * m);
            m *= 2;
            let done = (next - value).abs() <= STRIP_REL_CHANGE * next.max(f64::MIN_POSITIVE);
            value = next;
            if done {
                break;
            }
        }
        if t > EVAL_TAIL_TOL * value.max(1.0) {
            return Err(Error::OutsideStrip { tail: t, imag: delta });
        }
        let real_axis = self.line_sup(0.0, m);
        Ok(StripNormReport { delta, value, grid: m, real_axis })
    }

    /// Σ ‖c_k‖ e^{2π|k|δ/P}: cheap upper bound on the strip norm.
    pub fn weighted_l1(&self, delta: f64) -> f64 {
        let pl = self.period.length();
        self.coeffs().map(|(k, c)| c.norm() * (2.0 * PI * k.unsigned_abs() as f64 * delta / pl).exp()).sum::<f64>()
            + self.tail_estimate(delta)
    }

    /// [v] = coefficient of k = 0.
    pub fn average(&self) -> T {
        self.coeff(0)
    }

    /// x ↦ map(x + α).
    pub fn shift(&self, alpha: f64) -> Self {
        let pl = self.period.length();
        let coeffs = self
            .coeffs()
            .map(|(k, c)| c * C64::from_polar(1.0, 2.0 * PI * k as f64 * alpha / pl))
            .collect();
        FourierMap { coeffs, ..self.clone() }
    }

    pub fn scale(&self, s: C64) -> Self {
        let coeffs = self.coeffs.iter().map(|c| *c * s).collect();
        let real = self.real && s.im == 0.0;
        FourierMap { coeffs, real, tail: self.tail * s.norm(), ..self.clone() }
    }

    pub fn map_coeffs<U: Coeff>(&self, f: impl Fn(i64, T) -> U, real: bool) -> FourierMap<U> {
        FourierMap {
            coeffs: self.coeffs().map(|(k, c)| f(k, c)).collect(),
            band_limit: self.band_limit,
            period: self.period,
            real,
            tail: self.tail,
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip(other, |a, b| a - b)
    }

    fn zip(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        check_period(self.period, other.period)?;
        let n = self.band_limit.max(other.band_limit) as i64;
        let coeffs = (-n..=n).map(|k| f(self.coeff(k), other.coeff(k))).collect();
        Ok(FourierMap {
            coeffs,
            band_limit: n as usize,
            period: self.period,
            real: self.real && other.real,
            tail: self.tail + other.tail,
        })
    }

    /// Truncates to |k| ≤ n, adding the discarded ℓ¹ mass to the tail.
    pub fn truncate(&self, n: usize) -> Self {
        if n >= self.band_limit {
            return self.clone();
        }
        let dropped: f64 = self.coeffs().filter(|(k, _)| k.unsigned_abs() as usize > n).map(|(_, c)| c.norm()).sum();
        let m = self.band_limit;
        FourierMap {
            coeffs: self.coeffs[m - n..=m + n].to_vec(),
            band_limit: n,
            period: self.period,
            real: self.real,
            tail: self.tail + dropped,
        }
    }

    /// Real-axis sup bound Σ‖c_k‖ + tail.
    pub fn l1(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm()).sum::<f64>() + self.tail
    }

    /// Period-2 view of a period-1 map (c_k moves to 2k).
    pub fn to_period_two(&self) -> Self {
        if self.period == Period::Two {
            return self.clone();
        }
        let pairs: Vec<(i64, T)> = self.coeffs().map(|(k, c)| (2 * k, c)).collect();
        let mut m = Self::from_pairs(&pairs, Period::Two, self.real);
        m.tail = self.tail;
        m
    }

    /// Period-1 map from a period-2 map with only even modes.
    pub fn to_period_one(&self) -> Result<Self> {
        if self.period == Period::One {
            return Ok(self.clone());
        }
        let odd: f64 = self.coeffs().filter(|(k, _)| k % 2 != 0).map(|(_, c)| c.norm()).sum();
        let max = self.coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max);
        if odd > 1e-12 * max.max(1.0) {
            return Err(Error::PeriodMismatch(format!("odd modes of total size {odd:.3e}")));
        }
        let pairs: Vec<(i64, T)> = self.coeffs().filter(|(k, _)| k % 2 == 0).map(|(k, c)| (k / 2, c)).collect();
        let mut m = Self::from_pairs(&pairs, Period::One, self.real);
        m.tail = self.tail + odd;
        Ok(m)
    }

    /// Text dump, one line per k: `k` followed by re/im hex-float pairs.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (k, c) in self.coeffs() {
            out.push_str(&k.to_string());
            for z in c.components() {
                out.push(' ');
                out.push_str(&hexfloat::format(z.re));
                out.push(' ');
                out.push_str(&hexfloat::format(z.im));
            }
            out.push('\n');
        }
        out
    }

    pub fn parse_dump(text: &str, period: Period, real: bool) -> Result<Self> {
        let mut pairs = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() != 1 + 2 * T::DIM {
                return Err(Error::Parse(format!("expected {} fields: `{line}`", 1 + 2 * T::DIM)));
            }
            let k: i64 = toks[0].parse().map_err(|_| Error::Parse(format!("bad index `{}`", toks[0])))?;
            let mut comps = Vec::with_capacity(T::DIM);
            for d in 0..T::DIM {
                comps.push(C64::new(hexfloat::parse(toks[1 + 2 * d])?, hexfloat::parse(toks[2 + 2 * d])?));
            }
            pairs.push((k, T::from_components(&comps)));
        }
        Ok(Self::from_pairs(&pairs, period, real))
    }
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..60 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    fc.max(fd)
}

fn check_period(a: Period, b: Period) -> Result<()> {
    if a != b {
        return Err(Error::PeriodMismatch(format!("{a:?} vs {b:?}")));
    }
    Ok(())
}

/// Product a·b truncated at `limit`; the discarded mass goes into the tail.
pub fn mul<A, B, O>(a: &FourierMap<A>, b: &FourierMap<B>, limit: usize) -> Result<FourierMap<O>>
where
    A: Coeff + Mul<B, Output = O>,
    B: Coeff,
    O: Coeff,
{
    check_period(a.period, b.period)?;
    let full = a.band_limit + b.band_limit;
    let mut coeffs = vec![O::zero(); 2 * full + 1];
    for (i, ca) in a.coeffs() {
        for (j, cb) in b.coeffs() {
            let idx = (i + j + full as i64) as usize;
            coeffs[idx] = coeffs[idx] + ca * cb;
        }
    }
    let tail = a.l1() * b.tail + b.l1() * a.tail + a.tail * b.tail;
    let prod = FourierMap { coeffs, band_limit: full, period: a.period, real: a.real && b.real, tail };
    Ok(prod.truncate(limit))
}

/// Pointwise product of a matrix map with a scalar map.
pub fn scale_by(m: &MatMap, s: &ScalarMap, limit: usize) -> Result<MatMap> {
    let sm: MatMap = s.map_coeffs(|_, c| CMat2::identity() * c, s.is_real());
    mul(&sm, m, limit)
}

impl ScalarMap {
    /// 2cos(2πx), the almost Mathieu potential.
    pub fn amo() -> Self {
        let one = C64::new(1.0, 0.0);
        Self::from_pairs(&[(-1, one), (1, one)], Period::One, true)
    }

    /// cos(2πx).
    pub fn cos() -> Self {
        let h = C64::new(0.5, 0.0);
        Self::from_pairs(&[(-1, h), (1, h)], Period::One, true)
    }

    /// Trigonometric polynomial Σ_k (a_k cos 2πkx + b_k sin 2πkx), k ≥ 1, plus `a0`.
    pub fn trig(a0: f64, cos: &[f64], sin: &[f64]) -> Self {
        let mut pairs = vec![(0, C64::new(a0, 0.0))];
        for (i, &a) in cos.iter().enumerate() {
            let k = i as i64 + 1;
            pairs.push((k, C64::new(a / 2.0, 0.0)));
            pairs.push((-k, C64::new(a / 2.0, 0.0)));
        }
        for (i, &b) in sin.iter().enumerate() {
            let k = i as i64 + 1;
            pairs.push((k, C64::new(0.0, -b / 2.0)));
            pairs.push((-k, C64::new(0.0, b / 2.0)));
        }
        Self::from_pairs(&pairs, Period::One, true)
    }
}
