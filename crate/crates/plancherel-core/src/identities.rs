//! The six rational-function families and their two exact theorems: the
//! Weyl-group symmetrization identities and the starred limit identities on
//! the fixed-point subspaces.
//!
//! Three flavours of family, each with a symmetric and an asymmetric member:
//!
//! * `PS(m, n)`, `m >= n >= 0`, in variables `x1..xm, xs1..xsn`;
//! * `QT(p)`, `p >= 1`, in variables `y1..yp`;
//! * `RU(q)`, `q >= 1`, in variables `z1..zq`.
//!
//! The symmetric member equals `1/|W'|` times the sum of the asymmetric
//! member over the full symmetry group `W` (a product of symmetric groups
//! acting by variable permutation), where `W'` is the stabilizer subgroup
//! with a closed-form order. After the diagonal shift `x -> x + s/2`, the
//! family restricted to the pairing subspace `V` vanishes to a fixed order
//! `N` in `s`, and `lim_{s->0} s^N · family` equals the restriction of an
//! explicitly cancelled "starred" variant — a polynomial on `V`.
//!
//! Every verification here is exact: the symmetrization identity is decided
//! as a polynomial identity over a common denominator, the starred limits by
//! exact one-variable limits at random rational points of `V` plus exact
//! cross-multiplied equality of the cancelled forms.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use itertools::Itertools;
use num_bigint::BigInt;
use num_rational::BigRational;
use rand::Rng;

use crate::ratfun::{self, MultiPoly, RatFun, VarImage};

/// Errors from the identity layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Error {
    Rat(ratfun::Error),
    /// The symmetry group is larger than the enumeration cap.
    GroupTooLarge { order: u128, cap: u128 },
    /// Random point sampling kept hitting the polar divisor.
    ResampleExhausted { attempts: usize },
    /// The starred restriction failed to be a polynomial.
    NotPolynomialOnSubspace,
    /// Ill-formed family sizes.
    InvalidSpec(String),
}

impl From<ratfun::Error> for Error {
    fn from(e: ratfun::Error) -> Self {
        Error::Rat(e)
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Rat(e) => write!(f, "{e}"),
            Error::GroupTooLarge { order, cap } => {
                write!(f, "symmetry group has order {order}, enumeration cap is {cap}")
            }
            Error::ResampleExhausted { attempts } => {
                write!(f, "gave up after {attempts} resamples on the polar divisor")
            }
            Error::NotPolynomialOnSubspace => {
                write!(f, "starred restriction is not a polynomial on the subspace")
            }
            Error::InvalidSpec(msg) => write!(f, "invalid family spec: {msg}"),
        }
    }
}

pub type Result<T> = core::result::Result<T, Error>;

/// Which of the three family flavours, with its sizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FamilySpec {
    /// Two-sided family in `m` plain and `n` starred variables, `m >= n`.
    PS { m: usize, n: usize },
    /// One-sided family with pairing `y_k <-> y_{p+1-k}`.
    QT { p: usize },
    /// One-sided family with pairing and diagonal factors `2z_k`.
    RU { q: usize },
}

/// Symmetric (`P`/`Q`/`R`) or asymmetric (`S`/`T`/`U`) member of a family.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Symmetric,
    Asymmetric,
}

/// Default cap on the enumerated symmetry-group order (10!).
pub const DEFAULT_GROUP_CAP: u128 = 3_628_800;

/// The sign exponent `eps(k) = (k(k-1)/2 - floor(k/2)) / 2` of the
/// asymmetric one-sided families; always a nonnegative integer.
pub fn epsilon_exponent(k: usize) -> u64 {
    let k = k as u64;
    let raw = k * (k - 1) / 2 - k / 2;
    debug_assert!(raw % 2 == 0, "eps(k) must be an integer");
    raw / 2
}

impl FamilySpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            FamilySpec::PS { m, n } => {
                if n > m {
                    return Err(Error::InvalidSpec(format!("PS needs m >= n, got m={m}, n={n}")));
                }
            }
            FamilySpec::QT { p } => {
                if p == 0 {
                    return Err(Error::InvalidSpec("QT needs p >= 1".into()));
                }
            }
            FamilySpec::RU { q } => {
                if q == 0 {
                    return Err(Error::InvalidSpec("RU needs q >= 1".into()));
                }
            }
        }
        Ok(())
    }

    /// Number of ambient variables.
    pub fn nvars(&self) -> usize {
        match *self {
            FamilySpec::PS { m, n } => m + n,
            FamilySpec::QT { p } => p,
            FamilySpec::RU { q } => q,
        }
    }

    /// Canonical variable names (`x1..xm, xs1..xsn` / `y1..` / `z1..`).
    pub fn var_names(&self) -> Vec<String> {
        match *self {
            FamilySpec::PS { m, n } => (1..=m)
                .map(|j| format!("x{j}"))
                .chain((1..=n).map(|k| format!("xs{k}")))
                .collect(),
            FamilySpec::QT { p } => (1..=p).map(|j| format!("y{j}")).collect(),
            FamilySpec::RU { q } => (1..=q).map(|j| format!("z{j}")).collect(),
        }
    }

    /// The vanishing order `N` of the shifted family on the subspace `V`.
    pub fn limit_exponent(&self) -> i64 {
        match *self {
            FamilySpec::PS { n, .. } => n as i64,
            FamilySpec::QT { p } => (p / 2) as i64,
            FamilySpec::RU { q } => q.div_ceil(2) as i64,
        }
    }

    /// Dimension of the subspace `V` (number of surviving coordinates).
    pub fn free_nvars(&self) -> usize {
        match *self {
            FamilySpec::PS { m, .. } => m,
            FamilySpec::QT { p } => p.div_ceil(2),
            FamilySpec::RU { q } => q / 2,
        }
    }

    /// `|W|`, the order of the full symmetry group.
    pub fn w_order(&self) -> u128 {
        use crate::util::factorial_u128 as fact;
        match *self {
            FamilySpec::PS { m, n } => fact(m) * fact(n),
            FamilySpec::QT { p } => fact(p),
            FamilySpec::RU { q } => fact(q),
        }
    }

    /// `|W'|`, the order of the stabilizer subgroup, in closed form.
    pub fn wprime_order(&self) -> u128 {
        use crate::util::factorial_u128 as fact;
        match *self {
            FamilySpec::PS { m, n } => fact(n) * fact(m - n),
            FamilySpec::QT { p } => fact(p / 2) << (p / 2),
            FamilySpec::RU { q } => fact(q / 2) << (q / 2),
        }
    }

    /// Signed images describing the restriction to `V`:
    /// `xs_k -> -x_k` (PS), `y_{p+1-k} -> -y_k` (QT),
    /// `z_{q+1-k} -> -z_k` with middle coordinate 0 for odd `q` (RU).
    pub fn restriction_images(&self) -> Vec<VarImage> {
        match *self {
            FamilySpec::PS { m, n } => (0..m)
                .map(VarImage::Keep)
                .chain((0..n).map(VarImage::Neg))
                .collect(),
            FamilySpec::QT { p } => (0..p)
                .map(|i| {
                    if i < p.div_ceil(2) {
                        VarImage::Keep(i)
                    } else {
                        VarImage::Neg(p - 1 - i)
                    }
                })
                .collect(),
            FamilySpec::RU { q } => (0..q)
                .map(|i| {
                    if i < q / 2 {
                        VarImage::Keep(i)
                    } else if 2 * i + 1 == q {
                        VarImage::Zero
                    } else {
                        VarImage::Neg(q - 1 - i)
                    }
                })
                .collect(),
        }
    }

    /// Images for a function that has been through [`RatFun::shift_s`]: the
    /// original variables restrict as in [`FamilySpec::restriction_images`]
    /// and the appended `s` survives as the new last variable.
    pub fn shifted_restriction_images(&self) -> (Vec<VarImage>, usize) {
        let free = self.free_nvars();
        let mut images = self.restriction_images();
        images.push(VarImage::Keep(free));
        (images, free + 1)
    }

    /// Streams the elements of `W` as permutations of the ambient variables
    /// (PS permutes plain and starred blocks independently).
    fn for_each_weyl(&self, mut f: impl FnMut(&[usize])) {
        match *self {
            FamilySpec::PS { m, n } => {
                for sigma in (0..m).permutations(m) {
                    for tau in (0..n).permutations(n) {
                        let mut w: Vec<usize> = Vec::with_capacity(m + n);
                        w.extend_from_slice(&sigma);
                        w.extend(tau.iter().map(|&t| m + t));
                        f(&w);
                    }
                }
            }
            FamilySpec::QT { p } => {
                for w in (0..p).permutations(p) {
                    f(&w);
                }
            }
            FamilySpec::RU { q } => {
                for w in (0..q).permutations(q) {
                    f(&w);
                }
            }
        }
    }

    /// Collects `W` as a vector (guarded by the enumeration cap).
    pub fn weyl_elements(&self, cap: u128) -> Result<Vec<Vec<usize>>> {
        let order = self.w_order();
        if order > cap {
            return Err(Error::GroupTooLarge { order, cap });
        }
        let mut out = Vec::with_capacity(order as usize);
        self.for_each_weyl(|w| out.push(w.to_vec()));
        Ok(out)
    }

    /// Closed-form membership test for the stabilizer `W'`.
    pub fn is_in_wprime(&self, w: &[usize]) -> bool {
        match *self {
            FamilySpec::PS { m, n } => (0..n).all(|i| w[i] == w[m + i] - m),
            FamilySpec::QT { p } => (0..p).all(|i| w[p - 1 - i] == p - 1 - w[i]),
            FamilySpec::RU { q } => (0..q).all(|i| w[q - 1 - i] == q - 1 - w[i]),
        }
    }
}

/// Linear factor `X_a - X_b`.
fn diff(nvars: usize, a: usize, b: usize) -> MultiPoly {
    MultiPoly::linear(nvars, &[(1, a), (-1, b)])
}

/// Linear factor `X_a + X_b` (equal indices give `2·X_a`).
fn sum(nvars: usize, a: usize, b: usize) -> MultiPoly {
    if a == b {
        MultiPoly::linear(nvars, &[(2, a)])
    } else {
        MultiPoly::linear(nvars, &[(1, a), (1, b)])
    }
}

/// A family member in fully factored form:
/// `sign · ∏ (X_a − X_b) / ∏ (X_a + X_b)`.
///
/// Every numerator factor of every member is a plain difference of two
/// variables and every denominator factor a plain sum, so both lists are
/// recorded as index pairs. This is the single source of truth for the
/// family definitions: the exact builders expand it into polynomials and
/// the quadrature layer compiles it into floating-point kernels.
pub(crate) struct Parts {
    pub(crate) sign: i64,
    /// Pairs `(a, b)` meaning the factor `X_a − X_b`.
    pub(crate) diff_pairs: Vec<(usize, usize)>,
    /// Pairs `(a, b)` with `a <= b`, meaning the factor `X_a + X_b`
    /// (equal indices give `2·X_a`).
    pub(crate) den_pairs: Vec<(usize, usize)>,
}

/// The full denominator catalog of the symmetric member: every admissible
/// sum factor, as ordered index pairs.
fn den_catalog(spec: &FamilySpec) -> Vec<(usize, usize)> {
    match *spec {
        FamilySpec::PS { m, n } => (0..m)
            .flat_map(|j| (0..n).map(move |k| (j, m + k)))
            .collect(),
        FamilySpec::QT { p } => (0..p).tuple_combinations().collect(),
        FamilySpec::RU { q } => (0..q)
            .flat_map(|j| (j..q).map(move |k| (j, k)))
            .collect(),
    }
}

pub(crate) fn parts(spec: &FamilySpec, variant: Variant) -> Parts {
    match (*spec, variant) {
        (FamilySpec::PS { m, n }, Variant::Symmetric) => {
            let mut num = Vec::new();
            for j in 0..m {
                for k in 0..m {
                    if j != k {
                        num.push((j, k));
                    }
                }
            }
            for j in 0..n {
                for k in 0..n {
                    if j != k {
                        num.push((m + j, m + k));
                    }
                }
            }
            Parts { sign: 1, diff_pairs: num, den_pairs: den_catalog(spec) }
        }
        (FamilySpec::PS { m, n }, Variant::Asymmetric) => {
            let mut num = Vec::new();
            for (j, k) in (0..n).tuple_combinations() {
                num.push((m + j, m + k));
            }
            for (j, k) in (0..m).tuple_combinations() {
                num.push((j, k));
            }
            // the reversed-orientation factors among the unpaired block
            for k in n..m {
                for j in (k + 1)..m {
                    num.push((j, k));
                }
            }
            let den = (0..n).map(|k| (k, m + k)).collect();
            Parts { sign: 1, diff_pairs: num, den_pairs: den }
        }
        (FamilySpec::QT { p }, Variant::Symmetric) => {
            let mut num = Vec::new();
            for j in 0..p {
                for k in 0..p {
                    if j != k {
                        num.push((j, k));
                    }
                }
            }
            Parts { sign: 1, diff_pairs: num, den_pairs: den_catalog(spec) }
        }
        (FamilySpec::QT { p }, Variant::Asymmetric) => {
            let mut num = Vec::new();
            for (j, k) in (0..p).tuple_combinations() {
                num.push((j, k));
            }
            for k in 0..p / 2 {
                num.push((p - 1 - k, k));
            }
            let sign = if epsilon_exponent(p) % 2 == 0 { 1 } else { -1 };
            let den = (0..p / 2).map(|k| (k, p - 1 - k)).collect();
            Parts { sign, diff_pairs: num, den_pairs: den }
        }
        (FamilySpec::RU { q }, Variant::Symmetric) => {
            let mut num = Vec::new();
            for j in 0..q {
                for k in 0..q {
                    if j != k {
                        num.push((j, k));
                    }
                }
            }
            Parts { sign: 1, diff_pairs: num, den_pairs: den_catalog(spec) }
        }
        (FamilySpec::RU { q }, Variant::Asymmetric) => {
            let mut num = Vec::new();
            for (j, k) in (0..q).tuple_combinations() {
                num.push((j, k));
            }
            let sign = if epsilon_exponent(q) % 2 == 0 { 1 } else { -1 };
            let mut den: Vec<(usize, usize)> =
                (0..q / 2).map(|k| (k, q - 1 - k)).collect();
            den.extend((0..q.div_ceil(2)).map(|k| (k, k)));
            Parts { sign, diff_pairs: num, den_pairs: den }
        }
    }
}

/// Starred variants in pre-cancelled form: the starring multiplier (the
/// product of paired sum factors) is cancelled against the denominator at
/// construction time, so the restriction to `V` is well defined.
pub(crate) fn starred_parts(spec: &FamilySpec, variant: Variant) -> Parts {
    let base = parts(spec, variant);
    let cancelled: Vec<(usize, usize)> = match *spec {
        FamilySpec::PS { m, n } => (0..n).map(|k| (k, m + k)).collect(),
        FamilySpec::QT { p } => (0..p / 2).map(|k| (k, p - 1 - k)).collect(),
        FamilySpec::RU { q } => (0..q.div_ceil(2))
            .map(|k| (k.min(q - 1 - k), k.max(q - 1 - k)))
            .collect(),
    };
    let mut den = base.den_pairs.clone();
    for pair in &cancelled {
        let pos = den
            .iter()
            .position(|p| p == pair)
            .expect("starring multiplier must divide the denominator");
        den.swap_remove(pos);
    }
    Parts { sign: base.sign, diff_pairs: base.diff_pairs, den_pairs: den }
}

fn expand_product(nvars: usize, factors: &[MultiPoly]) -> MultiPoly {
    let mut acc = MultiPoly::one(nvars);
    for f in factors {
        acc = acc.mul(f).expect("same ring");
    }
    acc
}

fn parts_to_ratfun(spec: &FamilySpec, p: &Parts) -> RatFun {
    let nv = spec.nvars();
    let num_factors: Vec<MultiPoly> =
        p.diff_pairs.iter().map(|&(a, b)| diff(nv, a, b)).collect();
    let mut num = expand_product(nv, &num_factors);
    if p.sign < 0 {
        num = num.neg();
    }
    let den_factors: Vec<MultiPoly> =
        p.den_pairs.iter().map(|&(a, b)| sum(nv, a, b)).collect();
    let den = expand_product(nv, &den_factors);
    RatFun::new(num, den).expect("family denominators are nonzero")
}

/// Builds a family member as an exact rational function.
pub fn build(spec: &FamilySpec, variant: Variant) -> Result<RatFun> {
    spec.validate()?;
    Ok(parts_to_ratfun(spec, &parts(spec, variant)))
}

/// Builds the starred variant in its cancelled form (restrictable to `V`).
pub fn build_starred(spec: &FamilySpec, variant: Variant) -> Result<RatFun> {
    spec.validate()?;
    Ok(parts_to_ratfun(spec, &starred_parts(spec, variant)))
}

/// Outcome of the exact symmetrization check.
///
/// Both compared sides carry a common factor: the product of the in-block
/// difference factors (which every group translate multiplies by its sign)
/// times the full denominator catalog. Since the polynomial ring is an
/// integral domain, the identity holds if and only if it holds after that
/// common factor is cancelled, and `lhs`/`rhs` record the cancelled sides:
/// `lhs` is the orbit sum divided by `|W'|` and the common factor, `rhs` is
/// the symmetric member divided by the same.
#[derive(Clone, Debug)]
pub struct SymmetrizationReport {
    pub holds: bool,
    pub w_order: u128,
    pub wprime_order: u128,
    /// `(1/|W'|) Σ_w w·asym`, divided by the common factor.
    pub lhs: RatFun,
    /// The symmetric member, divided by the same common factor.
    pub rhs: RatFun,
}

/// The asymmetric member factored for the orbit sum: `sign · delta · extra /
/// prod(den_pairs)`, where `delta` is the product of in-block difference
/// factors (so `w·delta = sgn(w)·delta` for every `w` in the group) and
/// `extra` is the small remaining numerator.
struct AsymSplit {
    sign: i64,
    delta: MultiPoly,
    extra: MultiPoly,
    den_pairs: Vec<(usize, usize)>,
}

fn asym_split(spec: &FamilySpec) -> AsymSplit {
    let nv = spec.nvars();
    let base = parts(spec, Variant::Asymmetric);
    let mut delta_factors = Vec::new();
    let mut extra_factors = Vec::new();
    match *spec {
        FamilySpec::PS { m, n } => {
            for (j, k) in (0..m).tuple_combinations() {
                delta_factors.push(diff(nv, j, k));
            }
            for (j, k) in (0..n).tuple_combinations() {
                delta_factors.push(diff(nv, m + j, m + k));
            }
            for k in n..m {
                for j in (k + 1)..m {
                    extra_factors.push(diff(nv, j, k));
                }
            }
        }
        FamilySpec::QT { p } => {
            for (j, k) in (0..p).tuple_combinations() {
                delta_factors.push(diff(nv, j, k));
            }
            for k in 0..p / 2 {
                extra_factors.push(diff(nv, p - 1 - k, k));
            }
        }
        FamilySpec::RU { q } => {
            for (j, k) in (0..q).tuple_combinations() {
                delta_factors.push(diff(nv, j, k));
            }
        }
    }
    AsymSplit {
        sign: base.sign,
        delta: expand_product(nv, &delta_factors),
        extra: expand_product(nv, &extra_factors),
        den_pairs: base.den_pairs,
    }
}

/// Sign of a permutation given as an image list, by inversion count.
fn perm_sign(w: &[usize]) -> i64 {
    let mut inversions = 0usize;
    for i in 0..w.len() {
        for j in (i + 1)..w.len() {
            if w[i] > w[j] {
                inversions += 1;
            }
        }
    }
    if inversions % 2 == 0 {
        1
    } else {
        -1
    }
}

/// Verifies `sym = (1/|W'|) Σ_{w in W} w·asym` exactly.
///
/// The orbit sum is cleared of denominators against the symmetric member's
/// full denominator catalog (every translate's denominator is a
/// subproduct), and the sign-equivariant in-block difference product is
/// cancelled from both sides; what remains is a small polynomial identity
/// decided by canonical forms. Translates are grouped by which catalog
/// factors their denominators use, so each group costs one complement
/// multiplication instead of one per element.
pub fn verify_symmetrization(spec: &FamilySpec) -> Result<SymmetrizationReport> {
    verify_symmetrization_with_cap(spec, DEFAULT_GROUP_CAP)
}

pub fn verify_symmetrization_with_cap(
    spec: &FamilySpec,
    cap: u128,
) -> Result<SymmetrizationReport> {
    spec.validate()?;
    let order = spec.w_order();
    if order > cap {
        return Err(Error::GroupTooLarge { order, cap });
    }
    let nv = spec.nvars();
    let catalog = den_catalog(spec);
    let index_of: BTreeMap<(usize, usize), usize> =
        catalog.iter().enumerate().map(|(i, &p)| (p, i)).collect();
    let catalog_factors: Vec<MultiPoly> =
        catalog.iter().map(|&(a, b)| sum(nv, a, b)).collect();

    let split = asym_split(spec);

    // Group the signed translates of the small numerator rest by which
    // catalog factors each translate's denominator uses.
    let mut by_used: BTreeMap<Vec<usize>, MultiPoly> = BTreeMap::new();
    let mut err: Option<ratfun::Error> = None;
    spec.for_each_weyl(|w| {
        if err.is_some() {
            return;
        }
        let translated = match split.extra.permute(w) {
            Ok(t) => t,
            Err(e) => {
                err = Some(e);
                return;
            }
        };
        let signed = if perm_sign(w) < 0 { translated.neg() } else { translated };
        let mut used: Vec<usize> = split
            .den_pairs
            .iter()
            .map(|&(a, b)| {
                let (wa, wb) = (w[a], w[b]);
                index_of[&(wa.min(wb), wa.max(wb))]
            })
            .collect();
        used.sort_unstable();
        let entry = by_used.entry(used).or_insert_with(|| MultiPoly::zero(nv));
        *entry = entry.add(&signed).expect("same ring");
    });
    if let Some(e) = err {
        return Err(e.into());
    }

    let mut total = MultiPoly::zero(nv);
    for (used, class_sum) in &by_used {
        if class_sum.is_zero() {
            continue;
        }
        let mut prod = class_sum.clone();
        for (i, f) in catalog_factors.iter().enumerate() {
            if !used.contains(&i) {
                prod = prod.mul(f).expect("same ring");
            }
        }
        total = total.add(&prod).expect("same ring");
    }
    if split.sign < 0 {
        total = total.neg();
    }

    // The symmetric numerator is the squared in-block difference product up
    // to the sign collected when pairing each (j,k) factor with its (k,j)
    // mirror, so after cancelling one delta the right side is
    // |W'|·(-1)^pairs·delta.
    let choose2 = |k: usize| k * k.saturating_sub(1) / 2;
    let pair_count = match *spec {
        FamilySpec::PS { m, n } => choose2(m) + choose2(n),
        FamilySpec::QT { p } => choose2(p),
        FamilySpec::RU { q } => choose2(q),
    };
    let wprime = spec.wprime_order();
    let mut rhs_poly = split
        .delta
        .scalar_mul(&BigRational::from_integer(BigInt::from(wprime)));
    if pair_count % 2 == 1 {
        rhs_poly = rhs_poly.neg();
    }
    let holds = total == rhs_poly;

    let inv_wprime = BigRational::from_integer(BigInt::from(wprime)).recip();
    Ok(SymmetrizationReport {
        holds,
        w_order: order,
        wprime_order: wprime,
        lhs: RatFun::from_poly(total.scalar_mul(&inv_wprime)),
        rhs: RatFun::from_poly(rhs_poly.scalar_mul(&inv_wprime)),
    })
}

/// Outcome of the starred-limit check.
#[derive(Clone, Debug)]
pub struct StarredLimitReport {
    pub holds: bool,
    pub limit_exponent: i64,
    pub points_checked: usize,
    /// The starred restriction as an exact polynomial on `V`.
    pub polynomial: MultiPoly,
}

fn random_rational(rng: &mut impl Rng) -> BigRational {
    let num = loop {
        let n: i64 = rng.gen_range(-20..=20);
        if n != 0 {
            break n;
        }
    };
    let den: i64 = rng.gen_range(1..=20);
    crate::util::rat(num, den)
}

/// Values of the ambient variables at a point of `V` described by its free
/// coordinates.
fn ambient_values(images: &[VarImage], point: &[BigRational]) -> Vec<BigRational> {
    images
        .iter()
        .map(|im| match *im {
            VarImage::Keep(t) => point[t].clone(),
            VarImage::Neg(t) => -point[t].clone(),
            VarImage::Zero => BigRational::from_integer(0.into()),
        })
        .collect()
}

/// Evaluates the family member with the ambient variables pinned to a point
/// of `V` and the shift parameter `s` kept symbolic, giving an exact
/// one-variable rational function of `s`.
fn shifted_on_v_at_point(
    spec: &FamilySpec,
    variant: Variant,
    point: &[BigRational],
) -> Result<RatFun> {
    let nv = spec.nvars();
    // Assignment for the shifted ring: all original variables pinned, the
    // appended `s` left free.
    let mut assignment: Vec<Option<BigRational>> =
        ambient_values(&spec.restriction_images(), point)
            .into_iter()
            .map(Some)
            .collect();
    assignment.push(None);

    let p = parts(spec, variant);
    let mut num = MultiPoly::one(1);
    for &(a, b) in &p.diff_pairs {
        let f1 = diff(nv, a, b).shift_half_s().eval_partial(&assignment);
        num = num.mul(&f1)?;
    }
    if p.sign < 0 {
        num = num.neg();
    }
    let mut den = MultiPoly::one(1);
    for &(a, b) in &p.den_pairs {
        let f1 = sum(nv, a, b).shift_half_s().eval_partial(&assignment);
        den = den.mul(&f1)?;
    }
    Ok(RatFun::new(num, den)?)
}

/// Evaluates the cancelled starred member at a point of `V`, factor by
/// factor (no expanded polynomials involved).
fn starred_value_at(
    spec: &FamilySpec,
    variant: Variant,
    values: &[BigRational],
) -> Result<BigRational> {
    let nv = spec.nvars();
    let p = starred_parts(spec, variant);
    let mut den_val = BigRational::from_integer(1.into());
    for &(a, b) in &p.den_pairs {
        den_val *= sum(nv, a, b).eval::<BigRational>(values);
    }
    if den_val == BigRational::from_integer(0.into()) {
        return Err(ratfun::Error::PoleAtPoint.into());
    }
    let mut num_val = BigRational::from_integer(p.sign.into());
    for &(a, b) in &p.diff_pairs {
        num_val *= values[a].clone() - values[b].clone();
    }
    Ok(num_val / den_val)
}

/// Verifies the starred-limit identities:
///
/// (a) `lim_{s->0} s^N · (shifted family)` on `V` equals the cancelled
///     starred member, checked exactly at `npoints` random rational points
///     of `V` for both the symmetric and asymmetric member;
/// (b) the two starred restrictions agree — globally, by comparing their
///     canonical polynomial forms on `V`;
/// (c) the starred restriction is a polynomial on `V` (the restricted
///     denominator divides the restricted numerator exactly); the
///     polynomial is returned in the report and re-checked at each sampled
///     point against the factor-by-factor value.
///
/// Points that land on the polar divisor are resampled, up to 10 attempts
/// each.
pub fn verify_starred_limits(
    spec: &FamilySpec,
    npoints: usize,
    rng: &mut impl Rng,
) -> Result<StarredLimitReport> {
    spec.validate()?;
    let nexp = spec.limit_exponent();
    let free = spec.free_nvars();
    let images = spec.restriction_images();

    let polynomial = build_starred(spec, Variant::Symmetric)?
        .restrict(&images, free)?
        .polynomial_form()
        .ok_or(Error::NotPolynomialOnSubspace)?;
    let polynomial_asym = build_starred(spec, Variant::Asymmetric)?
        .restrict(&images, free)?
        .polynomial_form()
        .ok_or(Error::NotPolynomialOnSubspace)?;
    let mut holds = polynomial == polynomial_asym;

    let mut checked = 0;
    while checked < npoints {
        let mut attempts = 0;
        let point_result = loop {
            let point: Vec<BigRational> = (0..free).map(|_| random_rational(rng)).collect();
            match check_point(spec, nexp, &images, &polynomial, &point) {
                Ok(ok) => break Ok(ok),
                Err(Error::Rat(ratfun::Error::PoleAtPoint))
                | Err(Error::Rat(ratfun::Error::ResidualPole { .. })) => {
                    attempts += 1;
                    if attempts >= 10 {
                        break Err(Error::ResampleExhausted { attempts });
                    }
                }
                Err(e) => break Err(e),
            }
        };
        holds &= point_result?;
        checked += 1;
    }

    Ok(StarredLimitReport { holds, limit_exponent: nexp, points_checked: checked, polynomial })
}

fn check_point(
    spec: &FamilySpec,
    nexp: i64,
    images: &[VarImage],
    polynomial: &MultiPoly,
    point: &[BigRational],
) -> Result<bool> {
    // Exact limits of the shifted members along s at this point.
    let limit_sym = shifted_on_v_at_point(spec, Variant::Symmetric, point)?
        .limit_s_power(nexp)?
        .eval_rat(&[])?;
    let limit_asym = shifted_on_v_at_point(spec, Variant::Asymmetric, point)?
        .limit_s_power(nexp)?
        .eval_rat(&[])?;
    let values = ambient_values(images, point);
    let starred_sym = starred_value_at(spec, Variant::Symmetric, &values)?;
    let starred_asym = starred_value_at(spec, Variant::Asymmetric, &values)?;
    let poly_val = polynomial.eval::<BigRational>(point);
    Ok(limit_sym == starred_sym
        && limit_asym == starred_asym
        && starred_sym == starred_asym
        && poly_val == starred_sym)
}
