//! Small numerical kernels: double-double arithmetic and Sturm counts for
//! periodic Jacobi matrices.

use std::ops::{Add, Div, Mul, Neg, Sub};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::fourier::C64;

/// Unevaluated sum hi + lo with |lo| ≤ ulp(hi)/2 (about 106 significant bits).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DD {
    pub hi: f64,
    pub lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl DD {
    pub const fn new(x: f64) -> Self {
        DD { hi: x, lo: 0.0 }
    }
    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }
    pub fn is_sign_negative(self) -> bool {
        self.hi < 0.0 || (self.hi == 0.0 && self.lo < 0.0)
    }
    pub fn abs(self) -> Self {
        if self.is_sign_negative() {
            -self
        } else {
            self
        }
    }
}

impl From<f64> for DD {
    fn from(x: f64) -> Self {
        DD::new(x)
    }
}

impl Neg for DD {
    type Output = DD;
    fn neg(self) -> DD {
        DD { hi: -self.hi, lo: -self.lo }
    }
}

impl Add for DD {
    type Output = DD;
    fn add(self, o: DD) -> DD {
        let (s, e) = two_sum(self.hi, o.hi);
        let (t, f) = two_sum(self.lo, o.lo);
        let (s, e) = quick_two_sum(s, e + t);
        let (hi, lo) = quick_two_sum(s, e + f);
        DD { hi, lo }
    }
}

impl Sub for DD {
    type Output = DD;
    fn sub(self, o: DD) -> DD {
        self + (-o)
    }
}

impl Mul for DD {
    type Output = DD;
    fn mul(self, o: DD) -> DD {
        let (p, e) = two_prod(self.hi, o.hi);
        let e = e + (self.hi * o.lo + self.lo * o.hi);
        let (hi, lo) = quick_two_sum(p, e);
        DD { hi, lo }
    }
}

impl Div for DD {
    type Output = DD;
    fn div(self, o: DD) -> DD {
        let q1 = self.hi / o.hi;
        let r = self - o * DD::new(q1);
        let q2 = r.hi / o.hi;
        let r = r - o * DD::new(q2);
        let q3 = r.hi / o.hi;
        let (hi, lo) = quick_two_sum(q1, q2);
        DD { hi, lo } + DD::new(q3)
    }
}

/// Arithmetic used by the Sturm count, so the same code runs in f64 and DD.
pub trait Pivot: Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self> {
    fn from_f64(x: f64) -> Self;
    fn negative(self) -> bool;
    fn is_zero(self) -> bool;
    fn magnitude(self) -> f64;
    /// Exact multiplication by 2^k.
    fn ldexp(self, k: i32) -> Self;
}

impl Pivot for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn negative(self) -> bool {
        self < 0.0
    }
    fn is_zero(self) -> bool {
        self == 0.0
    }
    fn magnitude(self) -> f64 {
        self.abs()
    }
    fn ldexp(self, k: i32) -> Self {
        self * 2f64.powi(k)
    }
}

impl Pivot for DD {
    fn from_f64(x: f64) -> Self {
        DD::new(x)
    }
    fn negative(self) -> bool {
        self.is_sign_negative()
    }
    fn is_zero(self) -> bool {
        self.hi == 0.0 && self.lo == 0.0
    }
    fn magnitude(self) -> f64 {
        self.hi.abs()
    }
    fn ldexp(self, k: i32) -> Self {
        let f = 2f64.powi(k);
        DD { hi: self.hi * f, lo: self.lo * f }
    }
}

/// Sturm count of the open chain: eigenvalues below `e` of the tridiagonal
/// matrix with diagonal `diag` and unit off-diagonals.
pub fn chain_count<P: Pivot>(diag: &[f64], e: f64) -> usize {
    // a zero pivot is replaced by a relative-size one (counts for E shifted by ~ulp)
    let scale = diag.iter().fold(2.0 + e.abs(), |m, &d| m.max(d.abs()));
    let tiny = P::from_f64(f64::EPSILON * scale);
    let one = P::from_f64(1.0);
    let mut count = 0;
    let mut d = one;
    for (i, &a) in diag.iter().enumerate() {
        let mut next = P::from_f64(a) - P::from_f64(e);
        if i > 0 {
            next = next - one / d;
        }
        d = if next.is_zero() { tiny } else { next };
        if d.negative() {
            count += 1;
        }
    }
    count
}

/// Δ(E) − 2c with Δ the trace of the one-period transfer matrix, returned
/// with the size of the largest entry met along the product (for error bounds).
fn discriminant_diff<P: Pivot>(diag: &[f64], e: f64, c: f64) -> (P, f64) {
    let zero = P::from_f64(0.0);
    let one = P::from_f64(1.0);
    let (mut m00, mut m01, mut m10, mut m11) = (one, zero, zero, one);
    let mut k = 0i32;
    let mut big = 1.0f64;
    for (i, &a) in diag.iter().enumerate() {
        let t = P::from_f64(e) - P::from_f64(a);
        // [[t, −1], [1, 0]]·M
        let (n00, n01) = (t * m00 - m10, t * m01 - m11);
        (m10, m11) = (m00, m01);
        (m00, m01) = (n00, n01);
        if i % 16 == 15 || i + 1 == diag.len() {
            let top = m00.magnitude().max(m01.magnitude()).max(m10.magnitude()).max(m11.magnitude());
            big = big.max(top * 2f64.powi(k.min(900)));
            if top > 2f64.powi(100) {
                m00 = m00.ldexp(-100);
                m01 = m01.ldexp(-100);
                m10 = m10.ldexp(-100);
                m11 = m11.ldexp(-100);
                k += 100;
            }
        }
    }
    let tr = m00 + m11;
    if k > 900 {
        (tr, f64::INFINITY)
    } else {
        (tr.ldexp(k) - P::from_f64(2.0 * c), big)
    }
}

fn sign_of<P: Pivot>(x: P) -> i32 {
    if x.is_zero() {
        0
    } else if x.negative() {
        -1
    } else {
        1
    }
}

/// Sign of Δ(E) − 2c. Double precision is trusted only when the result
/// clears its rounding bound; near a root (in particular the double roots
/// of closed gaps) the product is redone in double-double.
fn discriminant_sign<P: Pivot>(diag: &[f64], e: f64, c: f64) -> i32 {
    let (d, big) = discriminant_diff::<P>(diag, e, c);
    let bound = 16.0 * diag.len() as f64 * f64::EPSILON * big * (2.0 + e.abs());
    if d.magnitude() > bound || big.is_infinite() {
        return sign_of(d);
    }
    let (dd, _) = discriminant_diff::<DD>(diag, e, c);
    sign_of(dd)
}

/// Number of eigenvalues below `e` of the q×q symmetric matrix with diagonal
/// `diag`, unit off-diagonals and corner entries H[0][q−1] = H[q−1][0] = `corner`
/// (the periodic/antiperiodic Schrödinger problem for q ≥ 3).
///
/// The inertia of H − E is that of the leading (q−1)-chain plus the sign of
/// the Schur complement s = det(H − E)/det(T − E), and
/// det(E − H) = Δ(E) − 2·corner with Δ the discriminant.
pub fn cyclic_count<P: Pivot>(diag: &[f64], corner: f64, e: f64) -> usize {
    let q = diag.len();
    debug_assert!(q >= 3);
    let ct = chain_count::<P>(&diag[..q - 1], e);
    let above = (q - 1 - ct) as i32;
    let sign_det_et = if above % 2 == 0 { 1 } else { -1 };
    let s = -discriminant_sign::<P>(diag, e, corner) * sign_det_et;
    ct + usize::from(s < 0)
}

/// Hermitian band matrix stored by rows: `lower[i][d]` = H[i][i−d], 0 ≤ d ≤ b.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianBand {
    n: usize,
    b: usize,
    lower: Vec<C64>,
}

impl HermitianBand {
    pub fn zeros(n: usize, b: usize) -> Self {
        HermitianBand { n, b, lower: vec![C64::new(0.0, 0.0); n * (b + 1)] }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.b
    }

    /// Sets H[i][i−d] (and its conjugate mirror); the diagonal must be real.
    pub fn set(&mut self, i: usize, d: usize, v: C64) {
        assert!(d <= self.b && d <= i);
        self.lower[i * (self.b + 1) + d] = v;
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        if i >= j {
            let d = i - j;
            if d > self.b {
                C64::new(0.0, 0.0)
            } else {
                self.lower[i * (self.b + 1) + d]
            }
        } else {
            self.get(j, i).conj()
        }
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    /// Gershgorin interval containing the spectrum.
    pub fn gershgorin(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..self.n {
            let lo_j = i.saturating_sub(self.b);
            let hi_j = (i + self.b).min(self.n - 1);
            let r: f64 = (lo_j..=hi_j).filter(|&j| j != i).map(|j| self.get(i, j).norm()).sum();
            let c = self.get(i, i).re;
            lo = lo.min(c - r);
            hi = hi.max(c + r);
        }
        (lo, hi)
    }

    /// Number of eigenvalues below `e`, from the inertia of an LDLᴴ
    /// factorization of H − e (zero pivots nudged to a relative ulp).
    pub fn count_below(&self, e: f64) -> usize {
        let (n, b) = (self.n, self.b);
        let (g_lo, g_hi) = self.gershgorin();
        let scale = g_lo.abs().max(g_hi.abs()).max(1.0);
        let tiny = f64::EPSILON * scale;
        let w = b + 1;
        // l[i*w + d] = L[i][i−d] for d ≥ 1
        let mut l = vec![C64::new(0.0, 0.0); n * w];
        let mut dvals = vec![0.0f64; n];
        let mut count = 0;
        for j in 0..n {
            let mut dj = self.get(j, j).re - e;
            for k in j.saturating_sub(b)..j {
                dj -= l[j * w + (j - k)].norm_sqr() * dvals[k];
            }
            if dj == 0.0 {
                dj = tiny;
            }
            dvals[j] = dj;
            if dj < 0.0 {
                count += 1;
            }
            for i in j + 1..(j + b + 1).min(n) {
                let mut s = self.get(i, j);
                for k in i.saturating_sub(b)..j {
                    s -= l[i * w + (i - k)] * l[j * w + (j - k)].conj() * dvals[k];
                }
                l[i * w + (i - j)] = s / dj;
            }
        }
        count
    }

    /// k-th smallest eigenvalue (0-based) by bisection on the inertia count.
    pub fn eigenvalue(&self, k: usize) -> f64 {
        assert!(k < self.n);
        let (mut lo, mut hi) = self.gershgorin();
        lo -= 1e-12;
        hi += 1e-12;
        let tol = 4.0 * f64::EPSILON * lo.abs().max(hi.abs()).max(1.0);
        while hi - lo > tol {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.count_below(mid) > k {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Eigenvector for an eigenvalue estimate `sigma` by inverse iteration,
    /// normalized to unit ℓ² norm.
    pub fn eigenvector(&self, sigma: f64) -> Vec<C64> {
        let lu = BandLu::factor(self, sigma);
        let n = self.n;
        let mut rng = ChaCha8Rng::seed_from_u64(0x1b10c4);
        let mut x: Vec<C64> = (0..n).map(|_| C64::new(rng.gen_range(-1.0..1.0), 0.0)).collect();
        for _ in 0..4 {
            x = lu.solve(&x);
            let norm = x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            for z in x.iter_mut() {
                *z /= norm;
            }
        }
        x
    }
}

/// LU factorization with partial pivoting of H − σ for a band matrix.
/// Row i is stored as a window over columns [i−b, i+2b].
struct BandLu {
    n: usize,
    b: usize,
    rows: Vec<Vec<C64>>,
    /// Row swapped into position i at step i, and the eliminated multipliers.
    pivots: Vec<usize>,
    mult: Vec<Vec<C64>>,
}

impl BandLu {
    fn factor(h: &HermitianBand, sigma: f64) -> Self {
        let (n, b) = (h.n, h.b);
        let width = 3 * b + 1;
        let zero = C64::new(0.0, 0.0);
        let mut rows: Vec<Vec<C64>> = (0..n)
            .map(|i| {
                let mut r = vec![zero; width];
                for j in i.saturating_sub(b)..(i + b + 1).min(n) {
                    let mut v = h.get(i, j);
                    if i == j {
                        v -= sigma;
                    }
                    r[j + b - i] = v;
                }
                r
            })
            .collect();
        let (g_lo, g_hi) = h.gershgorin();
        let scale = g_lo.abs().max(g_hi.abs()).max(1.0);
        let mut pivots = vec![0; n];
        let mut mult = vec![Vec::new(); n];
        for i in 0..n {
            let last = (i + b).min(n - 1);
            let mut best = i;
            let mut best_val = rows[i][b].norm();
            for r in i + 1..=last {
                let v = rows[r][i + b - r].norm();
                if v > best_val {
                    best = r;
                    best_val = v;
                }
            }
            pivots[i] = best;
            if best != i {
                // windows are column-relative: index = col − row + b
                let shift = best - i;
                let mut moved = vec![zero; width];
                for (idx, &v) in rows[best].iter().enumerate() {
                    if v != zero {
                        moved[idx + shift] = v;
                    }
                }
                let mut back = vec![zero; width];
                for (idx, &v) in rows[i].iter().enumerate() {
                    if v != zero {
                        back[idx - shift] = v;
                    }
                }
                rows[i] = moved;
                rows[best] = back;
            }
            if rows[i][b] == zero {
                rows[i][b] = C64::new(f64::EPSILON * scale, 0.0);
            }
            let piv = rows[i][b];
            let mut m = Vec::with_capacity(last - i);
            for r in i + 1..=last {
                let off = i + b - r;
                let f = rows[r][off] / piv;
                m.push(f);
                if f != zero {
                    for c in i..(i + 2 * b + 1).min(n) {
                        let src = rows[i][c + b - i];
                        let dst = c + b - r;
                        rows[r][dst] -= f * src;
                    }
                }
                rows[r][off] = zero;
            }
            mult[i] = m;
        }
        BandLu { n, b, rows, pivots, mult }
    }

    fn solve(&self, rhs: &[C64]) -> Vec<C64> {
        let (n, b) = (self.n, self.b);
        let mut y = rhs.to_vec();
        for i in 0..n {
            y.swap(i, self.pivots[i]);
            for (t, &f) in self.mult[i].iter().enumerate() {
                let r = i + 1 + t;
                let yi = y[i];
                y[r] -= f * yi;
            }
        }
        let mut x = vec![C64::new(0.0, 0.0); n];
        for i in (0..n).rev() {
            let mut s = y[i];
            for c in i + 1..(i + 2 * b + 1).min(n) {
                s -= self.rows[i][c + b - i] * x[c];
            }
            x[i] = s / self.rows[i][b];
        }
        x
    }
}
