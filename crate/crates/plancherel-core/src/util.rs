//! Shared numeric utilities: complex Γ, compensated summation, a tiny
//! least-squares fit for s→0⁺ extrapolation, and exact factorials.

use alloc::vec::Vec;
use core::cmp::Ordering;
use num_bigint::BigInt;
use num_rational::BigRational;
// `Float` supplies the f64 transcendentals without `std`; in test builds the
// inherent `std` methods shadow it, so the import looks unused there.
#[cfg_attr(test, allow(unused_imports))]
use num_traits::{Float, One};

use crate::C64;

pub const PI: f64 = core::f64::consts::PI;

/// Complex Γ via the Lanczos approximation (g = 7, 9 terms, the GSL/Wikipedia
/// coefficient set), with the reflection formula for Re z < 1/2.
/// Relative accuracy is ~1e-13 on the strip used here (|Im z| ≤ ~60,
/// arguments kept away from the poles by the callers).
pub fn cgamma(z: C64) -> C64 {
    const P: [f64; 9] = [
        0.99999999999980993,
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    if z.re < 0.5 {
        // Γ(z)Γ(1-z) = π / sin(πz)
        let pi = C64::new(PI, 0.0);
        return pi / ((pi * z).sin() * cgamma(C64::new(1.0, 0.0) - z));
    }
    let x = z - 1.0;
    let mut t = C64::new(P[0], 0.0);
    for (i, &p) in P.iter().enumerate().skip(1) {
        t += p / (x + i as f64);
    }
    let w = x + 7.5;
    (2.0 * PI).sqrt() * w.powc(x + 0.5) * (-w).exp() * t
}

/// Γ_ℝ(z) = π^{-z/2} Γ(z/2), the standard Archimedean L-factor atom.
pub fn gamma_r(z: C64) -> C64 {
    C64::new(PI, 0.0).powc(-z / 2.0) * cgamma(z / 2.0)
}

/// Dawson's integral `D(x) = e^{−x²} ∫_0^x e^{u²} du`, by Rybicki's sampled
/// Hilbert-transform rule `D(x) ≈ (1/√π) Σ_{k odd} e^{−(x−kh)²}/k`.
/// The rule's aliasing error decays like `e^{−(π/2h)²}`; `h = 1/4` puts it
/// below `1e−17`, and the Gaussian factor limits the sum to the odd nodes
/// within `|x − kh| ≤ 6.5` (the tail beyond contributes `< e^{−42}`).
pub fn dawson(x: f64) -> f64 {
    const H: f64 = 0.25;
    const WINDOW: f64 = 6.5;
    let lo = ((x - WINDOW) / H).ceil() as i64;
    let hi = ((x + WINDOW) / H).floor() as i64;
    let mut k = if lo % 2 == 0 { lo + 1 } else { lo };
    let mut acc = KahanSum::new();
    while k <= hi {
        let d = x - k as f64 * H;
        acc.add((-d * d).exp() / k as f64);
        k += 2;
    }
    acc.value() / PI.sqrt()
}

/// The Faddeeva function `w(z) = e^{−z²}·erfc(−iz)` on the closed upper
/// half-plane (`Im z ≥ 0`), accurate to ~1e−12 relative. Three regimes:
///
/// * near the real axis (`Im z < 1/2`, `|Re z| ≤ 29/4`): Taylor expansion in
///   the imaginary offset from the real-axis value
///   `w(x) = e^{−x²} + (2i/√π)·D(x)`, with derivatives from the recurrence
///   `w^{(k+1)} = −2x·w^{(k)} − 2k·w^{(k−1)}`;
/// * large modulus (`|z| ≥ 29/4`): the asymptotic Laurent series
///   `w(z) = (i/√π)·z^{−1}·Σ_m (2m−1)!!/(2z²)^m` (the `e^{−z²}` part is
///   below `e^{−52}` here when the Taylor branch did not apply);
/// * otherwise: the midpoint-sampled Hilbert integral
///   `w(z) = (i/π)∫ e^{−u²}/(z−u) du ≈ (ih/π) Σ_k e^{−u_k²}/(z−u_k)` with
///   `u_k = (k+1/2)h` and `h` small enough that the `e^{−2π·Im z/h}`
///   aliasing is negligible.
pub fn wofz_upper(z: C64) -> C64 {
    debug_assert!(z.im >= 0.0, "defined on the upper half-plane");
    let (x, y) = (z.re, z.im);
    let norm2 = x * x + y * y;
    if y < 0.5 && x.abs() <= 7.25 {
        // w(x) on the real axis, then Taylor in iy. Terms grow until
        // k ≈ 2xy and then die factorially; 64 terms bound the tail by
        // (2·7.25·0.5)^k/k! < 1e−30.
        let w0 = C64::new((-x * x).exp(), 2.0 / PI.sqrt() * dawson(x));
        let w1 = -2.0 * x * w0 + C64::new(0.0, 2.0 / PI.sqrt());
        let mut prev = w0;
        let mut cur = w1;
        let mut factor = C64::one(); // (iy)^k / k!
        let iy = C64::new(0.0, y);
        let mut acc = w0;
        for k in 1..64 {
            factor *= iy / k as f64;
            acc += cur * factor;
            if cur.norm_sqr() * factor.norm_sqr() < 1e-34 * acc.norm_sqr() {
                break;
            }
            let next = -2.0 * (x * cur + k as f64 * prev);
            prev = cur;
            cur = next;
        }
        acc
    } else if norm2 >= 52.5625 {
        let inv2zz = 0.5 / (z * z);
        let mut term = C64::one();
        let mut acc = C64::one();
        for m in 0..26 {
            term *= (2 * m + 1) as f64 * inv2zz;
            acc += term;
            if term.norm_sqr() < 1e-34 * acc.norm_sqr() {
                break;
            }
        }
        C64::new(0.0, 1.0 / PI.sqrt()) / z * acc
    } else {
        // Midpoint grid keeps every sample at distance ≥ Im z from the pole;
        // h is set so the periodization error e^{−2π·Im z/h} stays below
        // 1e−18 of the Gaussian mass.
        let h = (2.0 * PI * y / 42.0).min(0.25);
        let hi = (6.5 / h) as i64;
        let mut acc = KahanSumC::new();
        let mut k = -hi - 1;
        while k <= hi {
            let u = (k as f64 + 0.5) * h;
            acc.add((-u * u).exp() / (z - u));
            k += 1;
        }
        C64::new(0.0, h / PI) * acc.value()
    }
}

/// Compensated (Kahan) summation in a fixed, caller-determined order, so
/// quadrature results are bit-reproducible across runs.
#[derive(Clone, Copy, Debug, Default)]
pub struct KahanSum {
    sum: f64,
    carry: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let y = x - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}

/// Kahan summation for complex values (componentwise).
#[derive(Clone, Copy, Debug, Default)]
pub struct KahanSumC {
    re: KahanSum,
    im: KahanSum,
}

impl KahanSumC {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, z: C64) {
        self.re.add(z.re);
        self.im.add(z.im);
    }

    pub fn value(&self) -> C64 {
        C64::new(self.re.value(), self.im.value())
    }
}

/// Least-squares fit of samples (s_j, I_j) to the model
/// I(s) ≈ A + B·s + C·s·log(1/s), returning (A, B, C).
///
/// This is the extrapolation model used by the s→0⁺ product-kernel limits;
/// it is empirical (the s·log term absorbs the slowly-decaying tail the
/// product kernels produce) and callers report the raw grid next to the
/// fitted value.
pub fn fit_limit(samples: &[(f64, f64)]) -> (f64, f64, f64) {
    assert!(samples.len() >= 3, "need at least 3 samples to fit");
    // Normal equations for the 3-parameter linear model; the basis is
    // b0 = 1, b1 = s, b2 = s·ln(1/s).
    let mut m = [[0.0f64; 3]; 3];
    let mut r = [0.0f64; 3];
    for &(s, v) in samples {
        let b = [1.0, s, s * (1.0 / s).ln()];
        accumulate(&mut m, &mut r, &b, v);
    }
    let x = solve(m, r);
    (x[0], x[1], x[2])
}

/// Four-term variant of [`fit_limit`] with an additional s² column:
/// I(s) ≈ A + B·s + C·s·log(1/s) + D·s², returning (A, B, C, D).
///
/// The residual-distribution sequences carry a visible quadratic correction
/// (their vanishing branch decays to zero through values of size O(s·log s),
/// so an unmodelled s² term dominates the intercept error); the extra column
/// removes it. Needs at least 4 samples, in practice 6.
pub fn fit_limit4(samples: &[(f64, f64)]) -> (f64, f64, f64, f64) {
    assert!(samples.len() >= 4, "need at least 4 samples to fit");
    let mut m = [[0.0f64; 4]; 4];
    let mut r = [0.0f64; 4];
    for &(s, v) in samples {
        let b = [1.0, s, s * (1.0 / s).ln(), s * s];
        accumulate(&mut m, &mut r, &b, v);
    }
    let x = solve(m, r);
    (x[0], x[1], x[2], x[3])
}

/// Complex-valued version of [`fit_limit`] (fits real and imaginary parts
/// independently); returns the three complex coefficients.
pub fn fit_limit_c(samples: &[(f64, C64)]) -> (C64, C64, C64) {
    let re: Vec<(f64, f64)> = samples.iter().map(|&(s, v)| (s, v.re)).collect();
    let im: Vec<(f64, f64)> = samples.iter().map(|&(s, v)| (s, v.im)).collect();
    let (ar, br, cr) = fit_limit(&re);
    let (ai, bi, ci) = fit_limit(&im);
    (
        C64::new(ar, ai),
        C64::new(br, bi),
        C64::new(cr, ci),
    )
}

/// Complex-valued version of [`fit_limit4`]; returns only the extrapolated
/// constant term.
pub fn fit_limit4_c(samples: &[(f64, C64)]) -> C64 {
    let re: Vec<(f64, f64)> = samples.iter().map(|&(s, v)| (s, v.re)).collect();
    let im: Vec<(f64, f64)> = samples.iter().map(|&(s, v)| (s, v.im)).collect();
    C64::new(fit_limit4(&re).0, fit_limit4(&im).0)
}

/// Adds one sample's contribution to the normal equations.
fn accumulate<const N: usize>(m: &mut [[f64; N]; N], r: &mut [f64; N], b: &[f64; N], v: f64) {
    for i in 0..N {
        for j in 0..N {
            m[i][j] += b[i] * b[j];
        }
        r[i] += b[i] * v;
    }
}

/// Solve an N×N linear system by Gaussian elimination with partial pivoting.
fn solve<const N: usize>(mut m: [[f64; N]; N], mut r: [f64; N]) -> [f64; N] {
    for col in 0..N {
        let pivot = (col..N)
            .max_by(|&a, &b| m[a][col].abs().partial_cmp(&m[b][col].abs()).unwrap())
            .unwrap();
        m.swap(col, pivot);
        r.swap(col, pivot);
        assert!(m[col][col] != 0.0, "singular fit system");
        for row in (col + 1)..N {
            let f = m[row][col] / m[col][col];
            for k in col..N {
                m[row][k] -= f * m[col][k];
            }
            r[row] -= f * r[col];
        }
    }
    let mut x = [0.0f64; N];
    for row in (0..N).rev() {
        let mut acc = r[row];
        for k in (row + 1)..N {
            acc -= m[row][k] * x[k];
        }
        x[row] = acc / m[row][row];
    }
    x
}

/// The default extrapolation grid s_j = 0.2·2^{-j}, j = 0..5.
pub fn default_s_grid() -> Vec<f64> {
    (0..6).map(|j| 0.2 * 0.5f64.powi(j)).collect()
}

/// Exact n! as an arbitrary-precision integer.
pub fn factorial_big(n: usize) -> BigInt {
    let mut acc = BigInt::one();
    for k in 2..=n {
        acc *= BigInt::from(k);
    }
    acc
}

/// n! as u128; the combinatorial layers only ever need n ≤ 34.
pub fn factorial_u128(n: usize) -> u128 {
    (2..=n as u128).product::<u128>().max(1)
}

/// Exact rational → f64 (num-rational's conversion, split out because the
/// numeric layers use it in many places).
pub fn rat_to_f64(r: &BigRational) -> f64 {
    use num_traits::ToPrimitive;
    r.to_f64().expect("rational out of f64 range")
}

/// Exact rational → complex.
pub fn rat_to_c64(r: &BigRational) -> C64 {
    C64::new(rat_to_f64(r), 0.0)
}

/// Convenience constructor for small rationals.
pub fn rat(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

/// Convenience constructor for small integers as rationals.
pub fn rat_int(n: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(n))
}

/// Exact q^k for integer (possibly negative) k.
pub fn rat_pow(q: &BigRational, k: i64) -> BigRational {
    if k >= 0 {
        num_traits::pow::pow(q.clone(), k as usize)
    } else {
        num_traits::pow::pow(q.clone(), (-k) as usize)
            .recip()
    }
}

/// Total-order wrapper for f64 so float-keyed maps (twist bookkeeping in the
/// formal γ algebra) have a canonical ordering. NaNs are rejected at
/// construction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrdF64(pub f64);

impl OrdF64 {
    pub fn new(x: f64) -> Self {
        assert!(!x.is_nan(), "NaN is not an admissible twist/shift");
        // Normalize -0.0 so it keys identically to 0.0.
        Self(if x == 0.0 { 0.0 } else { x })
    }
}

impl Eq for OrdF64 {}

impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}
