//! Local L-, ε- and γ-factor arithmetic for characters of a field `F` and
//! of a quadratic extension `E/F`, in the two regimes the rest of the crate
//! consumes:
//!
//! * **p-adic** (residue size `q`, extension unramified with `q_E = q²` or
//!   ramified with `q_E = q`): every supported factor is an exact rational
//!   function of `T = q^{−s}` with Gaussian-rational coefficients, carried
//!   in the canonical shape `c · q^{parity/2} · T^k · N(T)/D(T)`. Products,
//!   inverses, the substitution `s ↦ 1−s`, vanishing orders at `s = 0` and
//!   regularized leading values are all exact.
//! * **Archimedean** (`F = ℝ`, `E = ℂ`): factors are finite products of
//!   atoms `(π^{−z/2}Γ(z/2))^{±1}` with `z = ±s + shift`, together with a
//!   constant and an exponential `Q^{s−1/2}`. Poles and zeros at `s = 0` are
//!   detected symbolically from the atom arguments; only off-pole evaluation
//!   touches floating point.
//!
//! The additive character is fixed once: conductor exponent `0` p-adically
//! and `x ↦ e^{2πix}` on ℝ (with `ψ_ℂ = ψ∘Tr`). Against this choice the
//! ε-constants of the catalogue are `1` for unramified p-adic characters,
//! `(−i)^δ` for `sign^δ` on ℝ and `(−i)^{|k|}` for the weight-`k` character
//! of ℂ. The opposite sign convention (`+i` throughout) is available as a
//! field-level switch; phase-dependent outputs are relative to it. With the
//! defaults, `λ_{ℂ/ℝ} = −i` and the unramified p-adic `λ_{E/F} = 1`, and
//! `λ⁴ = 1` holds exactly in every configuration.
//!
//! Ramified p-adic quadratic characters are not computed from first
//! principles (that would require Gauss sums): the field description accepts
//! a user-supplied ε-monomial for them, validated to be a fourth root of
//! unity, and every dependent quantity is exact relative to it.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use num_rational::BigRational;
#[cfg_attr(test, allow(unused_imports))]
use num_traits::Float;
use num_traits::{One, Zero};

use crate::util::{gamma_r, rat_int, rat_pow, rat_to_c64, PI};
use crate::C64;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

/// Error type of the factor layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Error {
    /// Malformed input (non-prime-power residue size, character/field
    /// mismatch, empty product, …).
    Invalid(String),
    /// Product or comparison of factors over different fields.
    FieldMismatch,
    /// A ramified quadratic character needs a user-supplied ε-monomial.
    RamifiedNeedsEpsilon,
    /// The factor has a pole at `s = 0` (non-tempered input to the
    /// regularized value).
    PoleAtZero,
    /// The abelian product hit a pole or a zero at step `k`; finite
    /// non-vanishing is guaranteed for genuine inputs, so this signals a bug.
    PoleHit { k: usize },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Invalid(msg) => write!(f, "invalid input: {msg}"),
            Error::FieldMismatch => write!(f, "factors live over different fields"),
            Error::RamifiedNeedsEpsilon => {
                write!(f, "ramified character requires a user-supplied epsilon factor")
            }
            Error::PoleAtZero => write!(f, "factor has a pole at s = 0"),
            Error::PoleHit { k } => {
                write!(f, "abelian product hit a pole or zero at step {k}")
            }
        }
    }
}

pub type Result<T> = core::result::Result<T, Error>;

// ---------------------------------------------------------------------------
// Gaussian rationals
// ---------------------------------------------------------------------------

/// An exact complex number `re + i·im` with rational parts — the coefficient
/// domain of every p-adic factor (closed under the ε-constants `±1, ±i` of
/// the supported catalogue).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GaussRat {
    pub re: BigRational,
    pub im: BigRational,
}

impl GaussRat {
    pub fn new(re: BigRational, im: BigRational) -> Self {
        Self { re, im }
    }

    pub fn from_rat(re: BigRational) -> Self {
        Self { re, im: BigRational::zero() }
    }

    pub fn from_int(n: i64) -> Self {
        Self::from_rat(rat_int(n))
    }

    pub fn zero() -> Self {
        Self::from_int(0)
    }

    pub fn one() -> Self {
        Self::from_int(1)
    }

    /// The imaginary unit.
    pub fn i() -> Self {
        Self::new(BigRational::zero(), BigRational::one())
    }

    pub fn is_zero(&self) -> bool {
        self.re.is_zero() && self.im.is_zero()
    }

    pub fn is_one(&self) -> bool {
        self.re.is_one() && self.im.is_zero()
    }

    pub fn conj(&self) -> Self {
        Self::new(self.re.clone(), -self.im.clone())
    }

    pub fn add(&self, other: &Self) -> Self {
        Self::new(&self.re + &other.re, &self.im + &other.im)
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self::new(&self.re - &other.re, &self.im - &other.im)
    }

    pub fn neg(&self) -> Self {
        Self::new(-self.re.clone(), -self.im.clone())
    }

    pub fn mul(&self, other: &Self) -> Self {
        Self::new(
            &self.re * &other.re - &self.im * &other.im,
            &self.re * &other.im + &self.im * &other.re,
        )
    }

    pub fn scale(&self, r: &BigRational) -> Self {
        Self::new(&self.re * r, &self.im * r)
    }

    /// Multiplicative inverse; panics on zero (callers check).
    pub fn inv(&self) -> Self {
        let n = &self.re * &self.re + &self.im * &self.im;
        assert!(!n.is_zero(), "inverse of zero");
        Self::new(&self.re / &n, -(&self.im / &n))
    }

    pub fn div(&self, other: &Self) -> Self {
        self.mul(&other.inv())
    }

    pub fn pow(&self, k: i64) -> Self {
        let base = if k < 0 { self.inv() } else { self.clone() };
        let mut acc = Self::one();
        for _ in 0..k.unsigned_abs() {
            acc = acc.mul(&base);
        }
        acc
    }

    pub fn to_c64(&self) -> C64 {
        C64::new(rat_to_c64(&self.re).re, rat_to_c64(&self.im).re)
    }
}

impl fmt::Display for GaussRat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.im.is_zero() {
            write!(f, "{}", self.re)
        } else if self.re.is_zero() {
            write!(f, "{}i", self.im)
        } else {
            write!(f, "({} + {}i)", self.re, self.im)
        }
    }
}

// ---------------------------------------------------------------------------
// Fields and characters
// ---------------------------------------------------------------------------

/// A p-adic quadratic extension is either unramified (`q_E = q²`) or
/// ramified (`q_E = q`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExtKind {
    Unramified,
    Ramified,
}

/// The base field `F` together with its fixed quadratic extension `E` and
/// the fixed additive character.
#[derive(Clone, Debug, PartialEq)]
pub enum FieldData {
    /// `F = ℝ`, `E = ℂ`, `ψ(x) = e^{2πix}`. With `eps_conj` the ε-constants
    /// of the catalogue are conjugated (`+i` convention).
    Archimedean { eps_conj: bool },
    Padic {
        /// Residue field size of `F` (a prime power ≥ 2).
        q: u64,
        ext: ExtKind,
        /// Conductor exponent of ψ (default 0). Supported for base-field
        /// characters; extension-side factors require 0.
        psi_conductor: i64,
        /// ε-monomial `(c, n)` of the ramified quadratic character, meaning
        /// `ε(s, η, ψ) = c·q^{n(s−1/2)}`; `c` must be a fourth root of
        /// unity. Required exactly when `ext` is ramified and η is used.
        eta_eps: Option<(GaussRat, i64)>,
    },
}

fn is_prime_power(mut n: u64) -> bool {
    if n < 2 {
        return false;
    }
    let mut p = 2u64;
    while p * p <= n {
        if n % p == 0 {
            while n % p == 0 {
                n /= p;
            }
            return n == 1;
        }
        p += 1;
    }
    true // n itself is prime
}

impl FieldData {
    /// `F = ℝ` with the default ε-convention.
    pub fn real() -> Self {
        FieldData::Archimedean { eps_conj: false }
    }

    pub fn padic_unramified(q: u64) -> Result<Self> {
        Self::padic(q, ExtKind::Unramified, 0, None)
    }

    pub fn padic_ramified(q: u64, eta_eps: (GaussRat, i64)) -> Result<Self> {
        Self::padic(q, ExtKind::Ramified, 0, Some(eta_eps))
    }

    pub fn padic(
        q: u64,
        ext: ExtKind,
        psi_conductor: i64,
        eta_eps: Option<(GaussRat, i64)>,
    ) -> Result<Self> {
        if !is_prime_power(q) {
            return Err(Error::Invalid(format!("residue size {q} is not a prime power")));
        }
        if let Some((c, _)) = &eta_eps {
            if !c.pow(4).is_one() {
                return Err(Error::Invalid(String::from(
                    "epsilon constant of the quadratic character must be a fourth root of unity",
                )));
            }
        }
        Ok(FieldData::Padic { q, ext, psi_conductor, eta_eps })
    }

    fn eps_sign(&self) -> f64 {
        match self {
            FieldData::Archimedean { eps_conj: false } => -1.0,
            FieldData::Archimedean { eps_conj: true } => 1.0,
            FieldData::Padic { .. } => 0.0,
        }
    }

    /// The `k`-th admissible unitary twist exponent: `k·π/(2·log q)` on
    /// p-adic data (the exact quarter-turn grid of
    /// [`GammaFactor::shift_imaginary`]), and simply `k` on Archimedean data,
    /// where every real exponent is admissible.
    pub fn grid_twist(&self, k: i64) -> f64 {
        match self {
            FieldData::Padic { q, .. } => k as f64 * PI / (2.0 * (*q as f64).ln()),
            FieldData::Archimedean { .. } => k as f64,
        }
    }
}

/// A character of `F^×` or `E^×` in the supported catalogue.
///
/// * `Real`: `x ↦ sign(x)^δ·|x|^u` on ℝ.
/// * `Complex`: `z ↦ (z/|z|)^k·|z|_ℂ^u` on ℂ (`|z|_ℂ = z·z̄`).
/// * `PadicBase`: `x ↦ η^δ(x)·|x|^u` on `F` with η the unramified quadratic
///   character attached to `E/F` (or the ramified one on ramified data) and
///   integer `u`, keeping the factor exact.
/// * `PadicExt`: unramified character of `E^×`, Satake value `±q_E^{−u}`;
///   the quadratic flag is the unramified quadratic character of `E^×`
///   (the standard extension η′ of η in the unramified case).
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CharData {
    Real { sign: bool, u: C64 },
    Complex { weight: i64, u: C64 },
    PadicBase { eta: bool, u: i64 },
    PadicExt { quadratic: bool, u: i64 },
}

impl CharData {
    /// The trivial character of the base field (p-adic form).
    pub fn padic_trivial() -> Self {
        CharData::PadicBase { eta: false, u: 0 }
    }

    /// η_{E/F} as a character of `F^×`.
    pub fn padic_eta() -> Self {
        CharData::PadicBase { eta: true, u: 0 }
    }

    /// The sign character of ℝ^×.
    pub fn sign() -> Self {
        CharData::Real { sign: true, u: C64::new(0.0, 0.0) }
    }

    pub fn real_trivial() -> Self {
        CharData::Real { sign: false, u: C64::new(0.0, 0.0) }
    }

    /// χ^{−1}.
    pub fn inverse(&self) -> Self {
        match *self {
            CharData::Real { sign, u } => CharData::Real { sign, u: -u },
            CharData::Complex { weight, u } => CharData::Complex { weight: -weight, u: -u },
            CharData::PadicBase { eta, u } => CharData::PadicBase { eta, u: -u },
            CharData::PadicExt { quadratic, u } => CharData::PadicExt { quadratic, u: -u },
        }
    }

    /// The Galois twist `χ∘σ` (identity except on ℂ, where it flips the
    /// weight; unramified p-adic characters are Galois-invariant).
    pub fn galois_conjugate(&self) -> Self {
        match *self {
            CharData::Complex { weight, u } => CharData::Complex { weight: -weight, u },
            other => other,
        }
    }

    /// Pointwise product of two characters of the same group.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        match (*self, *other) {
            (CharData::Real { sign: a, u }, CharData::Real { sign: b, u: v }) => {
                Ok(CharData::Real { sign: a ^ b, u: u + v })
            }
            (CharData::Complex { weight: a, u }, CharData::Complex { weight: b, u: v }) => {
                Ok(CharData::Complex { weight: a + b, u: u + v })
            }
            (CharData::PadicBase { eta: a, u }, CharData::PadicBase { eta: b, u: v }) => {
                Ok(CharData::PadicBase { eta: a ^ b, u: u + v })
            }
            (
                CharData::PadicExt { quadratic: a, u },
                CharData::PadicExt { quadratic: b, u: v },
            ) => Ok(CharData::PadicExt { quadratic: a ^ b, u: u + v }),
            _ => Err(Error::Invalid(String::from("characters live on different groups"))),
        }
    }

    /// Restriction of an extension-field character to `F^×` (`|x|_E = |x|²`
    /// for `x ∈ F` in both extension kinds, so the exponent doubles; the
    /// unramified quadratic restricts to η in the unramified case and to the
    /// trivial character in the ramified one).
    pub fn restrict(&self, ext: ExtKind) -> Result<Self> {
        match *self {
            CharData::Complex { weight, u } => {
                Ok(CharData::Real { sign: weight % 2 != 0, u: 2.0 * u })
            }
            CharData::PadicExt { quadratic, u } => Ok(CharData::PadicBase {
                eta: quadratic && ext == ExtKind::Unramified,
                u: 2 * u,
            }),
            _ => Err(Error::Invalid(String::from("restriction needs an extension character"))),
        }
    }

    fn is_extension(&self) -> bool {
        matches!(self, CharData::Complex { .. } | CharData::PadicExt { .. })
    }
}

// ---------------------------------------------------------------------------
// Polynomial helpers over GaussRat
// ---------------------------------------------------------------------------

type Poly = Vec<GaussRat>;

fn pstrip(p: &mut Poly) {
    while p.len() > 1 && p.last().map_or(false, GaussRat::is_zero) {
        p.pop();
    }
}

fn pmul(a: &Poly, b: &Poly) -> Poly {
    let mut out = vec![GaussRat::zero(); a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        if x.is_zero() {
            continue;
        }
        for (j, y) in b.iter().enumerate() {
            out[i + j] = out[i + j].add(&x.mul(y));
        }
    }
    pstrip(&mut out);
    out
}

fn plow(p: &Poly) -> usize {
    p.iter().position(|c| !c.is_zero()).unwrap_or(0)
}

fn pscale(p: &Poly, c: &GaussRat) -> Poly {
    p.iter().map(|x| x.mul(c)).collect()
}

fn peval_c64(p: &Poly, t: C64) -> C64 {
    let mut acc = C64::new(0.0, 0.0);
    for c in p.iter().rev() {
        acc = acc * t + c.to_c64();
    }
    acc
}

fn peval_g(p: &Poly, t: &GaussRat) -> GaussRat {
    let mut acc = GaussRat::zero();
    for c in p.iter().rev() {
        acc = acc.mul(t).add(c);
    }
    acc
}

/// Divides by `(1 − T)`, returning `None` when the remainder is nonzero.
fn pdiv_one_minus_t(p: &Poly) -> Option<Poly> {
    // (1 − T)·Q = P means q_j = p_j + q_{j−1}; the last cumulative sum is
    // P(1) and must vanish.
    let mut out = Vec::with_capacity(p.len().saturating_sub(1));
    let mut carry = GaussRat::zero();
    for (j, c) in p.iter().enumerate() {
        carry = carry.add(c);
        if j + 1 < p.len() {
            out.push(carry.clone());
        }
    }
    if carry.is_zero() {
        if out.is_empty() {
            out.push(GaussRat::zero());
        }
        Some(out)
    } else {
        None
    }
}

// ---------------------------------------------------------------------------
// The factor objects
// ---------------------------------------------------------------------------

/// An exact p-adic factor `c · q^{half/2} · T^{t_pow} · N(T)/D(T)` in
/// `T = q^{−s}`, kept normalized: `N(0) = D(0) = 1` and `half ∈ {0, 1}`
/// (the even part of the half-power is folded into `c`).
#[derive(Clone, Debug, PartialEq)]
pub struct PadicGamma {
    q: u64,
    c: GaussRat,
    half: i64,
    t_pow: i64,
    num: Poly,
    den: Poly,
}

impl PadicGamma {
    fn rat_q(&self) -> BigRational {
        rat_int(self.q as i64)
    }

    fn normalized(mut self) -> Self {
        pstrip(&mut self.num);
        pstrip(&mut self.den);
        let kn = plow(&self.num);
        if kn > 0 {
            self.num.drain(..kn);
            self.t_pow += kn as i64;
        }
        let kd = plow(&self.den);
        if kd > 0 {
            self.den.drain(..kd);
            self.t_pow -= kd as i64;
        }
        let n0 = self.num[0].clone();
        let d0 = self.den[0].clone();
        assert!(!d0.is_zero(), "zero denominator polynomial");
        self.c = self.c.mul(&n0).div(&d0);
        self.num = pscale(&self.num, &n0.inv());
        self.den = pscale(&self.den, &d0.inv());
        // fold the even part of the half-power of q into the constant
        let whole = self.half.div_euclid(2);
        self.half = self.half.rem_euclid(2);
        if whole != 0 {
            self.c = self.c.scale(&rat_pow(&self.rat_q(), whole));
        }
        self
    }

    fn mul(&self, other: &Self) -> Result<Self> {
        if self.q != other.q {
            return Err(Error::FieldMismatch);
        }
        Ok(Self {
            q: self.q,
            c: self.c.mul(&other.c),
            half: self.half + other.half,
            t_pow: self.t_pow + other.t_pow,
            num: pmul(&self.num, &other.num),
            den: pmul(&self.den, &other.den),
        }
        .normalized())
    }

    fn inverse(&self) -> Self {
        Self {
            q: self.q,
            c: self.c.inv(),
            half: -self.half,
            t_pow: -self.t_pow,
            num: self.den.clone(),
            den: self.num.clone(),
        }
        .normalized()
    }

    /// The substitution `s ↦ 1−s`, i.e. `T ↦ q^{−1}·T^{−1}`.
    fn compose_one_minus_s(&self) -> Self {
        let flip = |p: &Poly| -> Poly {
            let d = p.len() - 1;
            (0..=d)
                .map(|j| p[d - j].scale(&rat_pow(&self.rat_q(), -((d - j) as i64))))
                .collect()
        };
        let dn = (self.num.len() - 1) as i64;
        let dd = (self.den.len() - 1) as i64;
        // T^{t} turns into q^{−t}·T^{−t}
        let c = self.c.scale(&rat_pow(&self.rat_q(), -self.t_pow));
        Self {
            q: self.q,
            c,
            half: self.half,
            t_pow: -self.t_pow - dn + dd,
            num: flip(&self.num),
            den: flip(&self.den),
        }
        .normalized()
    }

    fn conj_psi(&self) -> Self {
        let mut out = self.clone();
        out.c = out.c.conj();
        out
    }

    /// The substitution `T ↦ (−i)^k·T`, i.e. the exact unitary shift
    /// `s ↦ s + i·kπ/(2·log q)` on the quarter-turn grid.
    fn twist_quarter(&self, k: i64) -> Self {
        let u = GaussRat::i().neg().pow(k.rem_euclid(4));
        let scale = |p: &Poly| -> Poly {
            p.iter()
                .enumerate()
                .map(|(j, c)| c.mul(&u.pow(j as i64)))
                .collect()
        };
        Self {
            q: self.q,
            c: self.c.mul(&u.pow(self.t_pow)),
            half: self.half,
            t_pow: self.t_pow,
            num: scale(&self.num),
            den: scale(&self.den),
        }
        .normalized()
    }

    fn is_one(&self) -> bool {
        self.c.is_one() && self.half == 0 && self.t_pow == 0 && self.num == self.den
    }

    fn eval(&self, s: C64) -> C64 {
        let lnq = (self.q as f64).ln();
        let t = (-s * lnq).exp();
        self.c.to_c64()
            * (self.half as f64 * 0.5 * lnq).exp()
            * t.powi(self.t_pow as i32)
            * peval_c64(&self.num, t)
            / peval_c64(&self.den, t)
    }

    /// Exact evaluation at a Gaussian-rational value of `T`; `None` when the
    /// value is irrational (odd half-power) or hits a pole of the expression.
    fn eval_exact_t(&self, t: &GaussRat) -> Option<GaussRat> {
        if self.half != 0 || (self.t_pow < 0 && t.is_zero()) {
            return None;
        }
        let d = peval_g(&self.den, t);
        if d.is_zero() {
            return None;
        }
        Some(self.c.mul(&t.pow(self.t_pow)).mul(&peval_g(&self.num, t)).div(&d))
    }

    /// `(order of vanishing at s = 0, leading value lim ζ^n γ)`.
    fn star_zero(&self) -> Result<(i64, GaussRat)> {
        let strip_ones = |p: &Poly| -> (i64, Poly) {
            let mut k = 0;
            let mut cur = p.clone();
            while let Some(next) = pdiv_one_minus_t(&cur) {
                cur = next;
                k += 1;
            }
            (k, cur)
        };
        let (kn, n1) = strip_ones(&self.num);
        let (kd, d1) = strip_ones(&self.den);
        let order = kn - kd;
        if order < 0 {
            return Err(Error::PoleAtZero);
        }
        if self.half != 0 {
            // catalogue characters and their products always carry even
            // half-powers; an odd one (user-supplied odd-exponent ε) has an
            // irrational leading value that GaussRat cannot represent
            return Err(Error::Invalid(String::from(
                "leading value is an odd power of sqrt(q); not representable exactly",
            )));
        }
        let one = GaussRat::one();
        let dv = peval_g(&d1, &one);
        if dv.is_zero() {
            return Err(Error::PoleAtZero);
        }
        // ζ_F(s)^n cancels (1−T)^order exactly, so the limit is the
        // evaluation of what is left at T = 1 (T^{t_pow} contributes 1).
        Ok((order, self.c.mul(&peval_g(&n1, &one)).div(&dv)))
    }
}

impl fmt::Display for PadicGamma {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ppoly = |p: &Poly, f: &mut fmt::Formatter<'_>| -> fmt::Result {
            let mut first = true;
            for (j, c) in p.iter().enumerate() {
                if c.is_zero() {
                    continue;
                }
                if !first {
                    write!(f, " + ")?;
                }
                first = false;
                match j {
                    0 => write!(f, "{c}")?,
                    1 if c.is_one() => write!(f, "T")?,
                    1 => write!(f, "{c}*T")?,
                    _ if c.is_one() => write!(f, "T^{j}")?,
                    _ => write!(f, "{c}*T^{j}")?,
                }
            }
            if first {
                write!(f, "0")?;
            }
            Ok(())
        };
        write!(f, "{}", self.c)?;
        if self.half != 0 {
            write!(f, " * q^(1/2)")?;
        }
        if self.t_pow != 0 {
            write!(f, " * T^{}", self.t_pow)?;
        }
        write!(f, " * (")?;
        ppoly(&self.num, f)?;
        write!(f, ")/(")?;
        ppoly(&self.den, f)?;
        write!(f, ")  [T = {}^(-s)]", self.q)
    }
}

/// One Archimedean atom `(π^{−z/2}Γ(z/2))^{power}` with `z = slope·s + shift`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Atom {
    pub slope: i32,
    pub shift: C64,
    pub power: i32,
}

/// An Archimedean factor `c · Q^{s−1/2} · ∏ atoms`.
#[derive(Clone, Debug, PartialEq)]
pub struct ArchGamma {
    c: C64,
    ln_q: f64,
    atoms: Vec<Atom>,
}

impl ArchGamma {
    fn merge(mut self) -> Self {
        let mut out: Vec<Atom> = Vec::new();
        for a in self.atoms.drain(..) {
            if let Some(b) = out
                .iter_mut()
                .find(|b| b.slope == a.slope && b.shift == a.shift)
            {
                b.power += a.power;
            } else {
                out.push(a);
            }
        }
        out.retain(|a| a.power != 0);
        self.atoms = out;
        self
    }

    fn mul(&self, other: &Self) -> Self {
        let mut atoms = self.atoms.clone();
        atoms.extend_from_slice(&other.atoms);
        Self { c: self.c * other.c, ln_q: self.ln_q + other.ln_q, atoms }.merge()
    }

    fn inverse(&self) -> Self {
        Self {
            c: 1.0 / self.c,
            ln_q: -self.ln_q,
            atoms: self
                .atoms
                .iter()
                .map(|a| Atom { power: -a.power, ..*a })
                .collect(),
        }
    }

    fn compose_one_minus_s(&self) -> Self {
        Self {
            c: self.c,
            ln_q: -self.ln_q,
            atoms: self
                .atoms
                .iter()
                .map(|a| Atom {
                    slope: -a.slope,
                    shift: a.shift + a.slope as f64,
                    power: a.power,
                })
                .collect(),
        }
        .merge()
    }

    fn conj_psi(&self) -> Self {
        Self { c: self.c.conj(), ln_q: self.ln_q, atoms: self.atoms.clone() }
    }

    /// The substitution `s ↦ s + i·dx`: each atom argument moves by
    /// `slope·i·dx` and the exponential prefactor contributes a constant.
    fn shift_imag(&self, dx: f64) -> Self {
        let delta = C64::new(0.0, dx);
        Self {
            c: self.c * (self.ln_q * delta).exp(),
            ln_q: self.ln_q,
            atoms: self
                .atoms
                .iter()
                .map(|a| Atom { shift: a.shift + a.slope as f64 * delta, ..*a })
                .collect(),
        }
    }

    fn eval(&self, s: C64) -> C64 {
        let mut v = self.c * ((s - 0.5) * self.ln_q).exp();
        for a in &self.atoms {
            v *= gamma_r(a.slope as f64 * s + a.shift).powi(a.power);
        }
        v
    }

    /// Is `shift` a nonpositive even integer (a pole of `Γ(z/2)` at `s=0`)?
    /// Returns the index `m` with `shift = −2m`.
    fn pole_index(shift: C64) -> Option<u32> {
        if shift.im != 0.0 || shift.re > 0.0 {
            return None;
        }
        let half = -shift.re / 2.0;
        if half.fract() == 0.0 {
            Some(half as u32)
        } else {
            None
        }
    }

    /// `(order of vanishing at s = 0, leading value lim ζ^n γ)` with the
    /// pole bookkeeping done symbolically on the atom arguments.
    fn star_zero(&self) -> Result<(i64, C64)> {
        let mut order: i64 = 0;
        let mut lead = self.c * (-0.5 * self.ln_q).exp();
        for a in &self.atoms {
            if let Some(m) = Self::pole_index(a.shift) {
                // π^{−z/2}Γ(z/2) ≈ [2·π^m·(−1)^m/(m!·slope)]·s^{−1} near 0
                order -= a.power as i64;
                let mut fact = 1.0f64;
                for j in 1..=m {
                    fact *= j as f64;
                }
                let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
                let k = 2.0 * PI.powi(m as i32) * sign / (fact * a.slope as f64);
                lead *= C64::new(k, 0.0).powi(a.power);
            } else {
                lead *= gamma_r(a.shift).powi(a.power);
            }
        }
        if order < 0 {
            return Err(Error::PoleAtZero);
        }
        // ζ_ℝ(s) ~ 2/s, so the regularization contributes 2^order.
        Ok((order, lead * (2.0f64).powi(order as i32)))
    }
}

/// A local γ-factor (or any product of L-type atoms of the same shape).
#[derive(Clone, Debug, PartialEq)]
pub enum GammaFactor {
    Padic(PadicGamma),
    Arch(ArchGamma),
}

/// Regularized data at `s = 0`: the vanishing order `n` and the value
/// `γ*(0) = lim ζ_F(s)^n·γ(s)`, exact where the representation allows.
#[derive(Clone, Debug, PartialEq)]
pub struct StarZero {
    pub order: i64,
    pub value: C64,
    pub exact: Option<GaussRat>,
}

impl GammaFactor {
    /// Pointwise evaluation at `s` (off poles).
    pub fn eval(&self, s: C64) -> C64 {
        match self {
            GammaFactor::Padic(g) => g.eval(s),
            GammaFactor::Arch(g) => g.eval(s),
        }
    }

    /// The factor of a direct sum: pointwise product.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        match (self, other) {
            (GammaFactor::Padic(a), GammaFactor::Padic(b)) => {
                Ok(GammaFactor::Padic(a.mul(b)?))
            }
            (GammaFactor::Arch(a), GammaFactor::Arch(b)) => Ok(GammaFactor::Arch(a.mul(b))),
            _ => Err(Error::FieldMismatch),
        }
    }

    pub fn inverse(&self) -> Self {
        match self {
            GammaFactor::Padic(g) => GammaFactor::Padic(g.inverse()),
            GammaFactor::Arch(g) => GammaFactor::Arch(g.inverse()),
        }
    }

    /// The factor at `1−s` (contragredient side of the functional equation).
    pub fn compose_one_minus_s(&self) -> Self {
        match self {
            GammaFactor::Padic(g) => GammaFactor::Padic(g.compose_one_minus_s()),
            GammaFactor::Arch(g) => GammaFactor::Arch(g.compose_one_minus_s()),
        }
    }

    /// The factor with respect to `ψ^{−1}` (conjugated ε-constant; the
    /// L-parts do not depend on ψ).
    pub fn conj_psi(&self) -> Self {
        match self {
            GammaFactor::Padic(g) => GammaFactor::Padic(g.conj_psi()),
            GammaFactor::Arch(g) => GammaFactor::Arch(g.conj_psi()),
        }
    }

    /// Exact constant-one test (p-adic factors only; Archimedean callers
    /// compare numerically).
    pub fn is_one(&self) -> bool {
        match self {
            GammaFactor::Padic(g) => g.is_one(),
            GammaFactor::Arch(g) => {
                g.atoms.is_empty() && g.ln_q == 0.0 && g.c == C64::new(1.0, 0.0)
            }
        }
    }

    /// Multiply by an exact Gaussian-rational constant (λ-powers).
    pub fn scale_exact(&self, k: &GaussRat) -> Self {
        match self {
            GammaFactor::Padic(g) => {
                let mut out = g.clone();
                out.c = out.c.mul(k);
                GammaFactor::Padic(out)
            }
            GammaFactor::Arch(g) => {
                let mut out = g.clone();
                out.c *= k.to_c64();
                GammaFactor::Arch(out)
            }
        }
    }

    /// The factor of the unitarily twisted character: since
    /// `γ(s, χ·|·|^{i·dx}) = γ(s + i·dx, χ)`, shifting the argument realizes
    /// the twist. Archimedean factors accept any real `dx`. P-adic factors
    /// stay exact, which confines `dx` to the quarter-turn grid
    /// `(π/(2·log q))·ℤ`, where `q^{−i·dx} = (−i)^k` is a Gaussian unit;
    /// off-grid shifts are rejected.
    pub fn shift_imaginary(&self, dx: f64) -> Result<Self> {
        match self {
            GammaFactor::Arch(g) => Ok(GammaFactor::Arch(g.shift_imag(dx))),
            GammaFactor::Padic(g) => {
                let steps = dx * (g.q as f64).ln() / (PI / 2.0);
                let k = steps.round();
                if (steps - k).abs() > 1e-9 * steps.abs().max(1.0) {
                    return Err(Error::Invalid(format!(
                        "p-adic unitary shift {dx} is off the quarter-turn grid pi/(2 log {})",
                        g.q
                    )));
                }
                Ok(GammaFactor::Padic(g.twist_quarter(k as i64)))
            }
        }
    }

    /// Exact evaluation of a p-adic factor at a rational value of
    /// `T = q^{−s}`.
    pub fn eval_exact_t(&self, t: &GaussRat) -> Option<GaussRat> {
        match self {
            GammaFactor::Padic(g) => g.eval_exact_t(t),
            GammaFactor::Arch(_) => None,
        }
    }

    /// Vanishing order and regularized value at `s = 0`.
    pub fn star_zero(&self) -> Result<StarZero> {
        match self {
            GammaFactor::Padic(g) => {
                let (order, v) = g.star_zero()?;
                Ok(StarZero { order, value: v.to_c64(), exact: Some(v) })
            }
            GammaFactor::Arch(g) => {
                let (order, v) = g.star_zero()?;
                Ok(StarZero { order, value: v, exact: None })
            }
        }
    }

    /// Rendering; p-adic factors print as rational functions in
    /// `T = q^{−s}`.
    pub fn render(&self) -> String {
        match self {
            GammaFactor::Padic(g) => format!("{g}"),
            GammaFactor::Arch(g) => {
                let mut s = format!("{}", g.c);
                if g.ln_q != 0.0 {
                    s.push_str(&format!(" * exp({}(s - 1/2))", g.ln_q));
                }
                for a in &g.atoms {
                    s.push_str(&format!(
                        " * G_R({}s + {})^{}",
                        a.slope, a.shift, a.power
                    ));
                }
                s
            }
        }
    }
}

// ---------------------------------------------------------------------------
// ζ and the catalogue γ-factors
// ---------------------------------------------------------------------------

/// The local ζ-function: `(1−q^{−s})^{−1}` p-adically, `π^{−s/2}Γ(s/2)` over
/// ℝ. In both cases `ζ_F(s) ~ (s·log q_F)^{−1}` as `s → 0` with the
/// convention `q_ℝ = e^{1/2}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ZetaFactor {
    Padic { q: u64 },
    Arch,
}

impl ZetaFactor {
    pub fn eval(&self, s: C64) -> C64 {
        match *self {
            ZetaFactor::Padic { q } => {
                1.0 / (1.0 - (-s * (q as f64).ln()).exp())
            }
            ZetaFactor::Arch => gamma_r(s),
        }
    }

    /// `log q_F` of the normalization `ζ_F(s) ~ (s·log q_F)^{−1}`.
    pub fn log_q(&self) -> f64 {
        match *self {
            ZetaFactor::Padic { q } => (q as f64).ln(),
            ZetaFactor::Arch => 0.5,
        }
    }
}

/// The ζ-factor of the base field.
pub fn zeta(field: &FieldData) -> ZetaFactor {
    match field {
        FieldData::Archimedean { .. } => ZetaFactor::Arch,
        FieldData::Padic { q, .. } => ZetaFactor::Padic { q: *q },
    }
}

/// Builds the unramified p-adic γ-factor with Satake value `α` over residue
/// size `q_eff` (`q` or `q²`), in the base variable `T = q^{−s}` with
/// extension degree `e` (`T_eff = T^e`):
/// `γ(s) = ε·L(1−s,χ^{−1})/L(s,χ) = −α·q_eff·T_eff·(1−α·T_eff)/(1−q_eff·α·T_eff)`.
fn unramified_gamma(q: u64, e: u32, alpha: GaussRat) -> PadicGamma {
    let q_eff = rat_pow(&rat_int(q as i64), e as i64);
    let mut num = vec![GaussRat::zero(); e as usize + 1];
    num[0] = GaussRat::one();
    num[e as usize] = alpha.neg();
    let mut den = vec![GaussRat::zero(); e as usize + 1];
    den[0] = GaussRat::one();
    den[e as usize] = alpha.scale(&q_eff).neg();
    PadicGamma {
        q,
        c: alpha.scale(&q_eff).neg(),
        half: 0,
        t_pow: e as i64,
        num,
        den,
    }
    .normalized()
}

/// `i^k` as a float ε-sign power: `(sign·i)^k` with `sign = ±1`.
fn i_pow(sign: f64, k: i64) -> C64 {
    let unit = C64::new(0.0, sign);
    let mut acc = C64::new(1.0, 0.0);
    for _ in 0..k.rem_euclid(4) {
        acc *= unit;
    }
    acc
}

/// The Tate γ-factor `γ(s, χ, ψ)` of a catalogue character (with respect to
/// `ψ_E = ψ∘Tr` when χ lives on the extension).
///
/// Conventions (fixed throughout): p-adic unramified ε = 1 at conductor 0,
/// with a conductor-`d` character contributing `χ(ϖ)^d·q^{d(1/2−s)}`;
/// `ε(s, sign^δ) = (−i)^δ` and `ε(s, weight k) = (−i)^{|k|}` — or their
/// conjugates under the alternative convention flag.
pub fn tate_gamma(chi: &CharData, field: &FieldData) -> Result<GammaFactor> {
    match (chi, field) {
        (CharData::Real { sign, u }, FieldData::Archimedean { .. }) => {
            let d = if *sign { 1.0 } else { 0.0 };
            Ok(GammaFactor::Arch(ArchGamma {
                c: i_pow(field.eps_sign(), if *sign { 1 } else { 0 }),
                ln_q: 0.0,
                atoms: vec![
                    Atom { slope: -1, shift: C64::new(1.0 + d, 0.0) - u, power: 1 },
                    Atom { slope: 1, shift: C64::new(d, 0.0) + u, power: -1 },
                ],
            }))
        }
        (CharData::Complex { weight, u }, FieldData::Archimedean { .. }) => {
            // L(s,χ) = Γ_ℂ(s + u + |k|/2) with Γ_ℂ(z) = Γ_ℝ(z)Γ_ℝ(z+1)
            let a = C64::new(weight.unsigned_abs() as f64 / 2.0, 0.0);
            Ok(GammaFactor::Arch(ArchGamma {
                c: i_pow(field.eps_sign(), weight.unsigned_abs() as i64),
                ln_q: 0.0,
                atoms: vec![
                    Atom { slope: -1, shift: C64::new(1.0, 0.0) - u + a, power: 1 },
                    Atom { slope: -1, shift: C64::new(2.0, 0.0) - u + a, power: 1 },
                    Atom { slope: 1, shift: *u + a, power: -1 },
                    Atom { slope: 1, shift: C64::new(1.0, 0.0) + *u + a, power: -1 },
                ],
            }))
        }
        (
            CharData::PadicBase { eta, u },
            FieldData::Padic { q, ext, psi_conductor, eta_eps },
        ) => {
            if *eta && *ext == ExtKind::Ramified {
                // ramified quadratic: γ = ε only (the L-parts are 1)
                let (c, n) = eta_eps.clone().ok_or(Error::RamifiedNeedsEpsilon)?;
                if *u != 0 || *psi_conductor != 0 {
                    return Err(Error::Invalid(String::from(
                        "twists and nonzero conductors are unsupported on the ramified \
                         quadratic character",
                    )));
                }
                return Ok(GammaFactor::Padic(
                    PadicGamma {
                        q: *q,
                        c,
                        half: -n,
                        t_pow: -n,
                        num: vec![GaussRat::one()],
                        den: vec![GaussRat::one()],
                    }
                    .normalized(),
                ));
            }
            let base = rat_pow(&rat_int(*q as i64), -*u);
            let alpha = if *eta {
                GaussRat::from_rat(-base)
            } else {
                GaussRat::from_rat(base)
            };
            let mut g = unramified_gamma(*q, 1, alpha.clone());
            if *psi_conductor != 0 {
                let d = *psi_conductor;
                g.c = g.c.mul(&alpha.pow(d));
                g.half += d;
                g.t_pow += d;
                g = g.normalized();
            }
            Ok(GammaFactor::Padic(g))
        }
        (
            CharData::PadicExt { quadratic, u },
            FieldData::Padic { q, ext, psi_conductor, .. },
        ) => {
            if *psi_conductor != 0 {
                return Err(Error::Invalid(String::from(
                    "extension-side factors require the conductor-zero additive character",
                )));
            }
            let e: u32 = match ext {
                ExtKind::Unramified => 2,
                ExtKind::Ramified => 1,
            };
            let base = rat_pow(&rat_int(*q as i64), -(e as i64) * *u);
            let alpha = if *quadratic {
                if *ext == ExtKind::Ramified {
                    return Err(Error::RamifiedNeedsEpsilon);
                }
                GaussRat::from_rat(-base)
            } else {
                GaussRat::from_rat(base)
            };
            Ok(GammaFactor::Padic(unramified_gamma(*q, e, alpha)))
        }
        _ => Err(Error::Invalid(String::from("character and field kinds do not match"))),
    }
}

/// `λ_{E/F}(ψ) = γ(1/2, η_{E/F}, ψ)`, exact in every configuration: `∓i`
/// over ℝ (by the ε-convention), `1` for unramified p-adic data (the L-parts
/// cancel at `s = 1/2`), and the user-supplied ε-constant for ramified data.
pub fn lambda_factor(field: &FieldData) -> Result<GaussRat> {
    match field {
        FieldData::Archimedean { eps_conj } => {
            Ok(if *eps_conj { GaussRat::i() } else { GaussRat::i().neg() })
        }
        FieldData::Padic { ext: ExtKind::Unramified, .. } => Ok(GaussRat::one()),
        FieldData::Padic { ext: ExtKind::Ramified, eta_eps, .. } => {
            let (c, _) = eta_eps.clone().ok_or(Error::RamifiedNeedsEpsilon)?;
            Ok(c)
        }
    }
}

/// The γ-factor over `F` of the induced representation `Ind_{E}^{F} χ`,
/// computed through inductivity in degree zero:
/// `γ(s, Ind χ, ψ) = λ_{E/F}(ψ)·γ(s, χ, ψ_E)`.
pub fn induced_gamma(chi: &CharData, field: &FieldData) -> Result<GammaFactor> {
    if !chi.is_extension() {
        return Err(Error::Invalid(String::from("induction needs an extension character")));
    }
    let lambda = lambda_factor(field)?;
    Ok(tate_gamma(chi, field)?.scale_exact(&lambda))
}

/// Vanishing order at `s = 0` and the regularized value
/// `γ*(0) = lim_{s→0} ζ_F(s)^n·γ(s)`; errors on non-tempered input (a pole
/// at the center).
pub fn gamma_star_zero(g: &GammaFactor) -> Result<StarZero> {
    g.star_zero()
}

/// Product of a non-empty list of factors over the same field.
pub fn product(gs: &[GammaFactor]) -> Result<GammaFactor> {
    let (first, rest) = gs
        .split_first()
        .ok_or_else(|| Error::Invalid(String::from("empty product")))?;
    let mut acc = first.clone();
    for g in rest {
        acc = acc.mul(g)?;
    }
    Ok(acc)
}

/// Outcome of the abelian γ-product: the value, exact where representable.
#[derive(Clone, Debug, PartialEq)]
pub struct AbelianProduct {
    pub value: C64,
    pub exact: Option<GaussRat>,
}

/// `∏_{k=1}^n γ(1−k, η^k, ψ)` with `η^k = η` for odd `k` and trivial for
/// even `k` — the normalization constant of the abelian unipotent theory.
/// Finite and nonzero for every `n ≥ 1`; hitting a pole or zero reports
/// which step did it (a bug signal, not a legitimate outcome).
pub fn abelian_gamma_product(n: usize, field: &FieldData) -> Result<AbelianProduct> {
    if n == 0 {
        return Err(Error::Invalid(String::from("the product needs n >= 1")));
    }
    let mut value = C64::new(1.0, 0.0);
    let mut exact = Some(GaussRat::one());
    for k in 1..=n {
        let odd = k % 2 == 1;
        let chi = match field {
            FieldData::Archimedean { .. } => CharData::Real { sign: odd, u: C64::new(0.0, 0.0) },
            FieldData::Padic { .. } => CharData::PadicBase { eta: odd, u: 0 },
        };
        let g = tate_gamma(&chi, field)?;
        let s0 = 1.0 - k as f64;
        match &g {
            GammaFactor::Padic(pg) => {
                // T = q^{k−1}, an exact integer power
                let t = GaussRat::from_rat(rat_pow(&rat_int(pg.q as i64), k as i64 - 1));
                match pg.eval_exact_t(&t) {
                    Some(v) if !v.is_zero() => {
                        value *= v.to_c64();
                        exact = exact.map(|e| e.mul(&v));
                    }
                    Some(_) => return Err(Error::PoleHit { k }),
                    None => {
                        // odd half-power (ramified user ε): numeric value
                        let v = g.eval(C64::new(s0, 0.0));
                        if !v.is_finite() || v.norm() == 0.0 {
                            return Err(Error::PoleHit { k });
                        }
                        value *= v;
                        exact = None;
                    }
                }
            }
            GammaFactor::Arch(ag) => {
                // symbolic pole/zero screen on the atom arguments at s0
                for a in &ag.atoms {
                    let z0 = a.slope as f64 * s0 + a.shift.re;
                    if a.shift.im == 0.0 && z0 <= 0.0 && (z0 / 2.0).fract() == 0.0 {
                        return Err(Error::PoleHit { k });
                    }
                }
                let v = g.eval(C64::new(s0, 0.0));
                if !v.is_finite() || v.norm() == 0.0 {
                    return Err(Error::PoleHit { k });
                }
                value *= v;
                exact = None;
            }
        }
    }
    Ok(AbelianProduct { value, exact })
}

/// The exact functional-equation product
/// `γ(s, χ, ψ)·γ(1−s, χ^{−1}, ψ^{−1})`, which must be the constant `1`.
pub fn involution_product(chi: &CharData, field: &FieldData) -> Result<GammaFactor> {
    let g = tate_gamma(chi, field)?;
    let partner = tate_gamma(&chi.inverse(), field)?
        .conj_psi()
        .compose_one_minus_s();
    g.mul(&partner)
}
