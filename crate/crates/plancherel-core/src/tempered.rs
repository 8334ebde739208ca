//! Tempered-parameter combinatorics for the quadratic base-change setting:
//! registries of discrete blocks with γ-factor tables, base change and its
//! image criterion, component-group and Weyl-group orders, assembled
//! adjoint and Asai factors, Plancherel densities, formal degrees, and the
//! explicit rank-one normalization constants.
//!
//! The module never constructs representations. A block is an opaque label
//! with a dimension, an Asai classification, and γ handles; every operation
//! consumes only this data plus real unitary twists. Three handle sources
//! coexist in a [`BlockRegistry`]:
//!
//! * **catalogue** — dimension-one blocks made from extension-field
//!   characters of the [`localfactors`](crate::localfactors) catalogue
//!   derive every handle (pair, conjugate-pair, Asai) from Tate factors and
//!   inductivity, with the quadratic-induction constant λ included so that
//!   assembled factors live over the base field;
//! * **supplied** — explicitly registered [`GammaFactor`]s for blocks
//!   outside the catalogue;
//! * **formal** — opaque symbols: assemblies return exponent vectors
//!   ([`FormalProduct`]), so the combinatorial content of the product
//!   formulas is checkable without analytic input.
//!
//! Conventions: a parameter entry `(τ, x)` is the twist of the block by
//! `|det|_E^{ix}`. Twists shift γ-arguments — diagonal adjoint terms are
//! twist-invariant, pair terms shift by the twist difference, cross Asai
//! terms by the sum, diagonal Asai terms by twice the twist. P-adic
//! assemblies stay exact, which confines p-adic twists to the quarter-turn
//! grid `π/(2·log q)·ℤ` (see [`GammaFactor::shift_imaginary`] and
//! [`FieldData::grid_twist`]).
//!
//! A unitary-side parameter stores its linear data *through the twisted
//! base change*: the anchor blocks are the constituents the image sees, so
//! the adjoint/Asai quotient applies to the stored entries verbatim and the
//! unstable twist is only recorded as a flag (on the dimension-one
//! catalogue it renames blocks by a fixed character twist; at the formal
//! level it is the identity).

use alloc::collections::btree_map::Entry as MapEntry;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

#[cfg_attr(test, allow(unused_imports))]
use num_traits::Float;

use crate::localfactors::{
    induced_gamma, lambda_factor, tate_gamma, CharData, Error, ExtKind, FieldData, GammaFactor,
    GaussRat, Result, StarZero,
};
use crate::pvlimits::{DiagonalBlock, PairedBlock, SpectralConfig, TwoSidedBlock};
use crate::util::{factorial_u128, rat, OrdF64};
use crate::C64;

// ---------------------------------------------------------------------------
// Blocks and parameters
// ---------------------------------------------------------------------------

/// Asai classification of a discrete block: `Generic` (τ ≇ τ*), `Plus`
/// (τ ≃ τ* with nonvanishing central Asai value), `Minus` (τ ≃ τ* with a
/// central Asai zero — exactly the base-change image condition for discrete
/// blocks).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AsaiType {
    Generic,
    Plus,
    Minus,
}

/// A discrete block: opaque id, dimension, Asai classification, and the id
/// of the conjugate-dual partner (`star == id` unless the block is generic).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DiscreteBlock {
    pub id: String,
    pub dim: u32,
    pub asai_type: AsaiType,
    pub star: String,
}

/// One induced factor of a parameter: a registered block id together with
/// its unitary twist exponent (the block twisted by `|det|_E^{i·twist}`).
#[derive(Clone, Debug, PartialEq)]
pub struct GlEntry {
    pub block: String,
    pub twist: f64,
}

impl GlEntry {
    pub fn new(block: &str, twist: f64) -> Self {
        Self { block: String::from(block), twist }
    }
}

/// A tempered parameter on the linear side: a multiset of twisted blocks.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct TemperedParamGL {
    pub entries: Vec<GlEntry>,
}

/// A tempered parameter on the unitary side: twisted blocks inducing from
/// the linear factors, plus the discrete part described through its twisted
/// base change — the anchor, a list of pairwise-distinct minus-type blocks.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct TemperedParamU {
    pub gl: Vec<GlEntry>,
    pub anchor: Vec<String>,
}

/// Convenience constructor for linear-side parameters.
pub fn gl_param(entries: &[(&str, f64)]) -> TemperedParamGL {
    TemperedParamGL { entries: entries.iter().map(|(b, x)| GlEntry::new(b, *x)).collect() }
}

/// Convenience constructor for unitary-side parameters.
pub fn u_param(gl: &[(&str, f64)], anchor: &[&str]) -> TemperedParamU {
    TemperedParamU {
        gl: gl.iter().map(|(b, x)| GlEntry::new(b, *x)).collect(),
        anchor: anchor.iter().map(|a| String::from(*a)).collect(),
    }
}

/// Result of base change: the linear-side parameter (for each entry `(τ,x)`
/// both `(τ,x)` and `(τ*,−x)`, plus the anchors at twist zero) together with
/// a flag recording whether the unstable twist is nontrivial (even rank).
/// The listed entries already are the constituents the twisted base change
/// produces, so downstream assemblies consume them verbatim.
#[derive(Clone, Debug, PartialEq)]
pub struct BcImage {
    pub param: TemperedParamGL,
    pub eta_twist: bool,
}

// ---------------------------------------------------------------------------
// Formal γ-symbol products
// ---------------------------------------------------------------------------

/// The three γ-handle kinds a block table carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum HandleKind {
    /// `γ(s, τ_a × τ_b^∨)` — the pair factor; for `a = b` this is the
    /// adjoint factor of the block.
    Pair,
    /// `γ(s, τ_a × τ_b^c)` — the conjugate-pair factor, symmetric in `a, b`.
    ConjPair,
    /// `γ(s, τ_a, As)` — the Asai factor, stored with `b = a`.
    Asai,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct FormalKey {
    kind: HandleKind,
    a: String,
    b: String,
    shift: OrdF64,
}

/// A product of γ-symbols with integer exponents: the formal-mode value of
/// the assembled factors. Keys are (kind, block pair, imaginary shift);
/// conjugate-pair keys are unordered.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct FormalProduct {
    factors: BTreeMap<FormalKey, i64>,
}

impl FormalProduct {
    /// The empty product.
    pub fn one() -> Self {
        Self::default()
    }

    fn key(kind: HandleKind, a: &str, b: &str, shift: f64) -> FormalKey {
        let (a, b) = if kind == HandleKind::ConjPair && b < a { (b, a) } else { (a, b) };
        FormalKey { kind, a: String::from(a), b: String::from(b), shift: OrdF64::new(shift) }
    }

    /// Multiply by `symbol^exp`.
    pub fn push(&mut self, kind: HandleKind, a: &str, b: &str, shift: f64, exp: i64) {
        if exp == 0 {
            return;
        }
        match self.factors.entry(Self::key(kind, a, b, shift)) {
            MapEntry::Occupied(mut o) => {
                *o.get_mut() += exp;
                if *o.get() == 0 {
                    o.remove();
                }
            }
            MapEntry::Vacant(v) => {
                v.insert(exp);
            }
        }
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (k, e) in &other.factors {
            match out.factors.entry(k.clone()) {
                MapEntry::Occupied(mut o) => {
                    *o.get_mut() += e;
                    if *o.get() == 0 {
                        o.remove();
                    }
                }
                MapEntry::Vacant(v) => {
                    v.insert(*e);
                }
            }
        }
        out
    }

    pub fn inverse(&self) -> Self {
        Self { factors: self.factors.iter().map(|(k, e)| (k.clone(), -e)).collect() }
    }

    /// True when every symbol cancelled.
    pub fn is_one(&self) -> bool {
        self.factors.is_empty()
    }

    /// The exponent of one symbol (zero when absent).
    pub fn exponent(&self, kind: HandleKind, a: &str, b: &str, shift: f64) -> i64 {
        self.factors.get(&Self::key(kind, a, b, shift)).copied().unwrap_or(0)
    }

    /// Number of distinct surviving symbols.
    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn render(&self) -> String {
        format!("{self}")
    }
}

impl fmt::Display for FormalProduct {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.factors.is_empty() {
            return write!(f, "1");
        }
        let mut first = true;
        for (k, e) in &self.factors {
            if !first {
                write!(f, " * ")?;
            }
            first = false;
            let x = k.shift.0;
            let arg = if x == 0.0 {
                String::from("s")
            } else if x > 0.0 {
                format!("s+{x}i")
            } else {
                format!("s-{}i", -x)
            };
            match k.kind {
                HandleKind::Pair => write!(f, "gamma({arg}, {} x dual({}))", k.a, k.b)?,
                HandleKind::ConjPair => write!(f, "gamma({arg}, {} x conj({}))", k.a, k.b)?,
                HandleKind::Asai => write!(f, "gamma({arg}, As({}))", k.a)?,
            }
            if *e != 1 {
                write!(f, "^{e}")?;
            }
        }
        Ok(())
    }
}

/// An assembled γ-factor: an explicit factor over the base field, or the
/// symbol product when the registry is formal.
#[derive(Clone, Debug, PartialEq)]
pub enum Assembly {
    Factor(GammaFactor),
    Formal(FormalProduct),
}

impl Assembly {
    /// The explicit factor (explicit registries only).
    pub fn factor(&self) -> Result<&GammaFactor> {
        match self {
            Assembly::Factor(g) => Ok(g),
            Assembly::Formal(_) => Err(Error::Invalid(String::from(
                "formal assembly carries no explicit factor",
            ))),
        }
    }

    /// The symbol product (formal registries only).
    pub fn formal(&self) -> Result<&FormalProduct> {
        match self {
            Assembly::Formal(p) => Ok(p),
            Assembly::Factor(_) => Err(Error::Invalid(String::from(
                "explicit assembly carries no formal symbols",
            ))),
        }
    }

    /// Vanishing order and regularized value at the center.
    pub fn star_zero(&self) -> Result<StarZero> {
        self.factor()?.star_zero()
    }
}

// ---------------------------------------------------------------------------
// Density / degree / phase outputs
// ---------------------------------------------------------------------------

/// Plancherel density of a linear-side parameter over the central quotient:
/// the regularized adjoint value with one ζ-type line removed, scaled by the
/// λ-power and the component-group order.
#[derive(Clone, Debug, PartialEq)]
pub enum Density {
    Value { star_order: i64, value: C64, exact: Option<GaussRat> },
    Formula(String),
}

/// Formal degree of a discrete unitary-side parameter.
#[derive(Clone, Debug, PartialEq)]
pub enum Degree {
    Value(f64),
    Formula(String),
}

/// Output of the phase solver: the normalizing phase `c` (the conjugate
/// phase of the regularized adjoint value) and the sign `c₁` solved from the
/// definitional product given the central sign `ω(−1)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SigmaPhase {
    pub c: C64,
    pub c1: C64,
}

/// Trace-zero element data for the rank-one normalization constant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TauChoice {
    /// `τ = i·t` on `E = ℂ` with `t` real nonzero.
    Imag { t: f64 },
    /// Unramified p-adic `τ` described by its `E`-valuation (the unramified
    /// extension of the quadratic character sees only the valuation).
    Valuation { v: i64 },
}

/// The rank-one normalization constant together with its asserted modulus
/// `|τ|_E^{n(n−1)/4}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KappaV {
    pub value: C64,
    pub modulus: f64,
}

// ---------------------------------------------------------------------------
// Registry
// ---------------------------------------------------------------------------

/// Registry of discrete blocks over a fixed base field, or over no field at
/// all in formal mode. Registration is single-threaded and precedes the
/// read-only query phase.
#[derive(Clone, Debug)]
pub struct BlockRegistry {
    field: Option<FieldData>,
    blocks: BTreeMap<String, DiscreteBlock>,
    chars: BTreeMap<String, CharData>,
    supplied: BTreeMap<(HandleKind, String, String), GammaFactor>,
}

type Term = (HandleKind, String, String, f64);

impl BlockRegistry {
    /// A registry computing explicit factors over `field`.
    pub fn explicit(field: FieldData) -> Self {
        Self { field: Some(field), blocks: BTreeMap::new(), chars: BTreeMap::new(), supplied: BTreeMap::new() }
    }

    /// A registry whose assemblies are exponent vectors of opaque symbols.
    pub fn formal() -> Self {
        Self { field: None, blocks: BTreeMap::new(), chars: BTreeMap::new(), supplied: BTreeMap::new() }
    }

    pub fn is_formal(&self) -> bool {
        self.field.is_none()
    }

    pub fn field(&self) -> Option<&FieldData> {
        self.field.as_ref()
    }

    /// Look up a registered block.
    pub fn block(&self, id: &str) -> Result<&DiscreteBlock> {
        self.blocks.get(id).ok_or_else(|| Error::Invalid(format!("unknown block {id}")))
    }

    fn insert_block(&mut self, b: DiscreteBlock) -> Result<()> {
        if b.id.is_empty() {
            return Err(Error::Invalid(String::from("block id must be nonempty")));
        }
        if b.dim == 0 {
            return Err(Error::Invalid(format!("block {} must have positive dimension", b.id)));
        }
        if self.blocks.contains_key(&b.id) {
            return Err(Error::Invalid(format!("block {} is already registered", b.id)));
        }
        self.blocks.insert(b.id.clone(), b);
        Ok(())
    }

    /// Register an opaque self-conjugate-dual block (plus or minus type).
    /// In an explicit registry its handles must be supplied via
    /// [`set_handle`](Self::set_handle); in a formal one it is a symbol.
    pub fn register_block(&mut self, id: &str, dim: u32, asai: AsaiType) -> Result<()> {
        if asai == AsaiType::Generic {
            return Err(Error::Invalid(String::from(
                "generic blocks come in conjugate-dual pairs; use register_pair",
            )));
        }
        self.insert_block(DiscreteBlock {
            id: String::from(id),
            dim,
            asai_type: asai,
            star: String::from(id),
        })
    }

    /// Register a conjugate-dual pair of opaque generic blocks.
    pub fn register_pair(&mut self, a: &str, b: &str, dim: u32) -> Result<()> {
        if a == b {
            return Err(Error::Invalid(String::from(
                "a conjugate-dual pair needs two distinct ids",
            )));
        }
        self.insert_block(DiscreteBlock {
            id: String::from(a),
            dim,
            asai_type: AsaiType::Generic,
            star: String::from(b),
        })?;
        if let Err(e) = self.insert_block(DiscreteBlock {
            id: String::from(b),
            dim,
            asai_type: AsaiType::Generic,
            star: String::from(a),
        }) {
            self.blocks.remove(a);
            return Err(e);
        }
        Ok(())
    }

    fn ext_kind(&self) -> Result<ExtKind> {
        match self.field.as_ref() {
            Some(FieldData::Padic { ext, .. }) => Ok(*ext),
            // the complex-side restriction ignores the kind
            Some(FieldData::Archimedean { .. }) => Ok(ExtKind::Unramified),
            None => Err(Error::Invalid(String::from("formal registry has no base field"))),
        }
    }

    /// Classify a catalogue character and validate that it is an untwisted
    /// extension-side character of the registry field.
    fn admit_character(&self, chi: &CharData) -> Result<AsaiType> {
        let field = self.field.as_ref().ok_or_else(|| {
            Error::Invalid(String::from("formal registries have no character catalogue"))
        })?;
        match (chi, field) {
            (CharData::Complex { u, .. }, FieldData::Archimedean { .. })
                if *u == C64::new(0.0, 0.0) => {}
            (CharData::PadicExt { u: 0, .. }, FieldData::Padic { .. }) => {}
            (CharData::Complex { .. }, FieldData::Archimedean { .. })
            | (CharData::PadicExt { .. }, FieldData::Padic { .. }) => {
                return Err(Error::Invalid(String::from(
                    "catalogue blocks are untwisted; unitary twists belong to parameter entries",
                )));
            }
            _ => {
                return Err(Error::Invalid(String::from(
                    "block characters live on the extension field of the registry",
                )));
            }
        }
        if chi.galois_conjugate().inverse() != *chi {
            return Err(Error::Invalid(String::from(
                "catalogue characters are conjugate-self-dual",
            )));
        }
        // plus/minus according to the central Asai value of the restriction
        let sz = tate_gamma(&chi.restrict(self.ext_kind()?)?, field)?.star_zero()?;
        Ok(if sz.order > 0 { AsaiType::Minus } else { AsaiType::Plus })
    }

    /// Register a dimension-one block backed by a catalogue character; all
    /// three handle kinds are derived on demand. Returns the recomputed
    /// Asai classification.
    pub fn register_character(&mut self, id: &str, chi: CharData) -> Result<AsaiType> {
        let asai = self.admit_character(&chi)?;
        self.insert_block(DiscreteBlock {
            id: String::from(id),
            dim: 1,
            asai_type: asai,
            star: String::from(id),
        })?;
        self.chars.insert(String::from(id), chi);
        Ok(asai)
    }

    /// Register a catalogue character with a declared classification; the
    /// recomputed type must agree or registration fails without side
    /// effects.
    pub fn register_character_declared(
        &mut self,
        id: &str,
        chi: CharData,
        declared: AsaiType,
    ) -> Result<()> {
        let derived = self.admit_character(&chi)?;
        if derived != declared {
            return Err(Error::Invalid(format!(
                "declared type {declared:?} for block {id} contradicts the recomputed type {derived:?}"
            )));
        }
        self.insert_block(DiscreteBlock {
            id: String::from(id),
            dim: 1,
            asai_type: derived,
            star: String::from(id),
        })?;
        self.chars.insert(String::from(id), chi);
        Ok(())
    }

    /// Attach an explicit γ handle to registered blocks (non-catalogue
    /// data). Conjugate-pair handles are stored under the unordered key;
    /// Asai handles attach to a single block.
    pub fn set_handle(
        &mut self,
        kind: HandleKind,
        a: &str,
        b: &str,
        g: GammaFactor,
    ) -> Result<()> {
        let field = self.field.as_ref().ok_or_else(|| {
            Error::Invalid(String::from("formal registries take no explicit handles"))
        })?;
        let kind_ok = matches!(
            (&g, field),
            (GammaFactor::Padic(_), FieldData::Padic { .. })
                | (GammaFactor::Arch(_), FieldData::Archimedean { .. })
        );
        if !kind_ok {
            return Err(Error::FieldMismatch);
        }
        self.block(a)?;
        self.block(b)?;
        if kind == HandleKind::Asai && a != b {
            return Err(Error::Invalid(String::from("Asai handles attach to a single block")));
        }
        let (a, b) = if kind == HandleKind::ConjPair && b < a { (b, a) } else { (a, b) };
        self.supplied.insert((kind, String::from(a), String::from(b)), g);
        Ok(())
    }

    /// Resolve a handle: supplied table first, then the character catalogue.
    fn handle(&self, kind: HandleKind, a: &str, b: &str) -> Result<GammaFactor> {
        let (a, b) = if kind == HandleKind::ConjPair && b < a { (b, a) } else { (a, b) };
        if let Some(g) = self.supplied.get(&(kind, String::from(a), String::from(b))) {
            return Ok(g.clone());
        }
        if let (Some(field), Some(ca), Some(cb)) =
            (self.field.as_ref(), self.chars.get(a), self.chars.get(b))
        {
            return match kind {
                HandleKind::Pair => induced_gamma(&ca.mul(&cb.inverse())?, field),
                HandleKind::ConjPair => induced_gamma(&ca.mul(&cb.galois_conjugate())?, field),
                HandleKind::Asai => tate_gamma(&ca.restrict(self.ext_kind()?)?, field),
            };
        }
        Err(Error::Invalid(format!("missing gamma handle {kind:?}({a}, {b})")))
    }

    /// The label of a catalogue block twisted by the fixed unstable
    /// character extending the quadratic base character (an involution on
    /// the p-adic unramified catalogue, a weight shift on the complex one).
    /// Errors when the twisted block is not registered.
    pub fn eta_twist_label(&self, id: &str) -> Result<String> {
        self.block(id)?;
        if self.is_formal() {
            // identity at the formal level
            return Ok(String::from(id));
        }
        let field = self.field.as_ref().unwrap();
        let chi = self.chars.get(id).ok_or_else(|| {
            Error::Invalid(format!("block {id} has no catalogue character to twist"))
        })?;
        let eta_ext = match field {
            FieldData::Archimedean { .. } => CharData::Complex { weight: 1, u: C64::new(0.0, 0.0) },
            FieldData::Padic { .. } => CharData::PadicExt { quadratic: true, u: 0 },
        };
        let twisted = chi.mul(&eta_ext)?;
        for (other, c) in &self.chars {
            if *c == twisted {
                return Ok(other.clone());
            }
        }
        Err(Error::Invalid(format!("the unstable twist of block {id} is not registered")))
    }

    // -- ranks and validation ------------------------------------------------

    /// Total dimension of a linear-side parameter.
    pub fn rank_gl(&self, pi: &TemperedParamGL) -> Result<u32> {
        let mut n = 0u32;
        for e in &pi.entries {
            n += self.block(&e.block)?.dim;
        }
        Ok(n)
    }

    fn check_u(&self, sigma: &TemperedParamU) -> Result<()> {
        if sigma.gl.is_empty() && sigma.anchor.is_empty() {
            return Err(Error::Invalid(String::from("empty parameter")));
        }
        for e in &sigma.gl {
            self.block(&e.block)?;
        }
        let mut seen: Vec<&str> = Vec::new();
        for a in &sigma.anchor {
            let b = self.block(a)?;
            if b.asai_type != AsaiType::Minus {
                return Err(Error::Invalid(format!("anchor block {a} is not minus-type")));
            }
            if seen.contains(&a.as_str()) {
                return Err(Error::Invalid(format!("anchor block {a} repeats")));
            }
            seen.push(a);
        }
        Ok(())
    }

    /// Rank of the unitary-side parameter: twice the linear part plus the
    /// anchor dimensions.
    pub fn rank_u(&self, sigma: &TemperedParamU) -> Result<u32> {
        self.check_u(sigma)?;
        let mut n = 0u32;
        for e in &sigma.gl {
            n += 2 * self.block(&e.block)?.dim;
        }
        for a in &sigma.anchor {
            n += self.block(a)?.dim;
        }
        Ok(n)
    }

    // -- base change ----------------------------------------------------------

    /// Base change to the linear side at rank `n` (which must equal the
    /// parameter's rank).
    pub fn bc(&self, sigma: &TemperedParamU, n: u32) -> Result<BcImage> {
        let rank = self.rank_u(sigma)?;
        if rank != n {
            return Err(Error::Invalid(format!("parameter has rank {rank}, not {n}")));
        }
        let mut entries = Vec::new();
        for e in &sigma.gl {
            let star = self.block(&e.block)?.star.clone();
            entries.push(e.clone());
            entries.push(GlEntry { block: star, twist: -e.twist });
        }
        for a in &sigma.anchor {
            entries.push(GlEntry { block: a.clone(), twist: 0.0 });
        }
        Ok(BcImage { param: TemperedParamGL { entries }, eta_twist: n % 2 == 0 })
    }

    /// The image criterion with witness: the multiset must pair up as
    /// `{(τ,x), (τ*,−x)}` with leftovers exactly distinct minus-type blocks
    /// at twist zero. Returns the preimage when the shape matches.
    pub fn in_bc_image(&self, pi: &TemperedParamGL) -> Result<Option<TemperedParamU>> {
        if pi.entries.is_empty() {
            return Err(Error::Invalid(String::from("empty parameter")));
        }
        let mut counts: BTreeMap<(String, OrdF64), usize> = BTreeMap::new();
        for e in &pi.entries {
            self.block(&e.block)?;
            *counts.entry((e.block.clone(), OrdF64::new(e.twist))).or_insert(0) += 1;
        }
        let keys: Vec<(String, OrdF64)> = counts.keys().cloned().collect();
        let mut gl = Vec::new();
        let mut anchor = Vec::new();
        for key in keys {
            let Some(c) = counts.remove(&key) else { continue };
            let star = self.block(&key.0)?.star.clone();
            let partner = (star, OrdF64::new(-key.1 .0));
            if partner == key {
                // self-paired position: even part splits into pairs, an odd
                // leftover must be a minus block (a legal anchor)
                for _ in 0..c / 2 {
                    gl.push(GlEntry { block: key.0.clone(), twist: key.1 .0 });
                }
                if c % 2 == 1 {
                    if self.block(&key.0)?.asai_type != AsaiType::Minus {
                        return Ok(None);
                    }
                    anchor.push(key.0.clone());
                }
            } else {
                match counts.remove(&partner) {
                    Some(pc) if pc == c => {}
                    _ => return Ok(None),
                }
                let canon = if (partner.0.as_str(), partner.1) < (key.0.as_str(), key.1) {
                    GlEntry { block: partner.0.clone(), twist: partner.1 .0 }
                } else {
                    GlEntry { block: key.0.clone(), twist: key.1 .0 }
                };
                for _ in 0..c {
                    gl.push(canon.clone());
                }
            }
        }
        anchor.sort();
        Ok(Some(TemperedParamU { gl, anchor }))
    }

    /// Canonical form of a unitary-side parameter: each linear entry in its
    /// smaller orientation (the entry or its conjugate-dual flip), entries
    /// and anchors sorted.
    pub fn canonical_u(&self, sigma: &TemperedParamU) -> Result<TemperedParamU> {
        self.check_u(sigma)?;
        let mut gl: Vec<GlEntry> = Vec::new();
        for e in &sigma.gl {
            let star = self.block(&e.block)?.star.clone();
            let flipped = (star, OrdF64::new(-e.twist));
            let this = (e.block.clone(), OrdF64::new(e.twist));
            let pick = if (flipped.0.as_str(), flipped.1) < (this.0.as_str(), this.1) {
                flipped
            } else {
                this
            };
            gl.push(GlEntry { block: pick.0, twist: pick.1 .0 });
        }
        gl.sort_by(|a, b| {
            (a.block.as_str(), OrdF64::new(a.twist)).cmp(&(b.block.as_str(), OrdF64::new(b.twist)))
        });
        let mut anchor = sigma.anchor.clone();
        anchor.sort();
        Ok(TemperedParamU { gl, anchor })
    }

    /// Equality of unitary-side parameters up to reordering and flips.
    pub fn u_equivalent(&self, a: &TemperedParamU, b: &TemperedParamU) -> Result<bool> {
        Ok(self.canonical_u(a)? == self.canonical_u(b)?)
    }

    // -- component groups and Weyl groups --------------------------------------

    /// Component-group order on the linear side: the product of `2·dim`
    /// over *distinct* (block, twist) constituents.
    pub fn s_group_order_gl(&self, pi: &TemperedParamGL) -> Result<u128> {
        if pi.entries.is_empty() {
            return Err(Error::Invalid(String::from("empty parameter")));
        }
        let mut support: BTreeSet<(String, OrdF64)> = BTreeSet::new();
        for e in &pi.entries {
            self.block(&e.block)?;
            support.insert((e.block.clone(), OrdF64::new(e.twist)));
        }
        let mut out: u128 = 1;
        for (b, _) in &support {
            let d = self.block(b)?.dim as u128;
            out = out
                .checked_mul(2 * d)
                .ok_or_else(|| Error::Invalid(String::from("component-group order overflow")))?;
        }
        Ok(out)
    }

    /// Component-group order on the unitary side: `2^{#anchors}` times the
    /// product of `2·dim` over distinct linear constituents.
    pub fn s_group_order_u(&self, sigma: &TemperedParamU) -> Result<u128> {
        self.check_u(sigma)?;
        let mut out: u128 = 1u128
            .checked_shl(sigma.anchor.len() as u32)
            .ok_or_else(|| Error::Invalid(String::from("component-group order overflow")))?;
        let mut support: BTreeSet<(String, OrdF64)> = BTreeSet::new();
        for e in &sigma.gl {
            support.insert((e.block.clone(), OrdF64::new(e.twist)));
        }
        for (b, _) in &support {
            let d = self.block(b)?.dim as u128;
            out = out
                .checked_mul(2 * d)
                .ok_or_else(|| Error::Invalid(String::from("component-group order overflow")))?;
        }
        Ok(out)
    }

    /// Weyl-group order on the linear side: `∏ mult!` over distinct
    /// (block, twist) constituents.
    pub fn weyl_order_gl(&self, pi: &TemperedParamGL) -> Result<u128> {
        if pi.entries.is_empty() {
            return Err(Error::Invalid(String::from("empty parameter")));
        }
        let mut counts: BTreeMap<(String, OrdF64), usize> = BTreeMap::new();
        for e in &pi.entries {
            self.block(&e.block)?;
            *counts.entry((e.block.clone(), OrdF64::new(e.twist))).or_insert(0) += 1;
        }
        let mut out: u128 = 1;
        for c in counts.values() {
            out = out
                .checked_mul(factorial_u128(*c))
                .ok_or_else(|| Error::Invalid(String::from("Weyl order overflow")))?;
        }
        Ok(out)
    }

    /// Weyl-group order on the unitary side. Linear entries pool by block
    /// *class* (conjugate-dual orbits, twists forgotten — the group acts on
    /// the twist coordinates): a generic class of multiplicity `m`
    /// contributes `m!`, a self-conjugate class `m!·2^m`; anchors contribute
    /// nothing.
    pub fn weyl_order_u(&self, sigma: &TemperedParamU) -> Result<u128> {
        self.check_u(sigma)?;
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for e in &sigma.gl {
            let b = self.block(&e.block)?;
            let class = if b.star < b.id { b.star.clone() } else { b.id.clone() };
            *counts.entry(class).or_insert(0) += 1;
        }
        let mut out: u128 = 1;
        for (class, m) in &counts {
            let self_conj = self.block(class)?.star == *class;
            let mut f = factorial_u128(*m);
            if self_conj {
                f = f
                    .checked_mul(
                        1u128.checked_shl(*m as u32).ok_or_else(|| {
                            Error::Invalid(String::from("Weyl order overflow"))
                        })?,
                    )
                    .ok_or_else(|| Error::Invalid(String::from("Weyl order overflow")))?;
            }
            out = out
                .checked_mul(f)
                .ok_or_else(|| Error::Invalid(String::from("Weyl order overflow")))?;
        }
        Ok(out)
    }

    /// The spectral configuration whose family structure matches the
    /// parameter (scales are block dimensions): a balanced two-sided family
    /// per generic class, a paired family of size `2m` per plus class, a
    /// diagonal family of size `2m` (`+1` when anchored) per minus class,
    /// and a singleton diagonal family per remaining anchor.
    pub fn induced_config(&self, sigma: &TemperedParamU) -> Result<SpectralConfig> {
        self.check_u(sigma)?;
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for e in &sigma.gl {
            let b = self.block(&e.block)?;
            let class = if b.star < b.id { b.star.clone() } else { b.id.clone() };
            *counts.entry(class).or_insert(0) += 1;
        }
        let mut anchors: BTreeSet<String> = sigma.anchor.iter().cloned().collect();
        let mut two_sided = Vec::new();
        let mut paired = Vec::new();
        let mut diagonal = Vec::new();
        for (class, m) in &counts {
            let b = self.block(class)?;
            let scale = b.dim as usize;
            match b.asai_type {
                AsaiType::Generic => two_sided.push(TwoSidedBlock { m: *m, n: *m, scale }),
                AsaiType::Plus => paired.push(PairedBlock { p: 2 * m, scale }),
                AsaiType::Minus => {
                    let extra = usize::from(anchors.remove(class));
                    diagonal.push(DiagonalBlock { q: 2 * m + extra, scale });
                }
            }
        }
        for a in &anchors {
            let scale = self.block(a)?.dim as usize;
            diagonal.push(DiagonalBlock { q: 1, scale });
        }
        SpectralConfig::new(two_sided, paired, diagonal)
            .map_err(|e| Error::Invalid(format!("induced configuration: {e}")))
    }

    // -- assemblies -------------------------------------------------------------

    /// The adjoint factor expanded over entries: one twist-invariant
    /// diagonal term per entry plus both ordered cross terms per pair,
    /// shifted by the twist difference.
    fn adjoint_terms(&self, pi: &TemperedParamGL) -> Result<Vec<Term>> {
        if pi.entries.is_empty() {
            return Err(Error::Invalid(String::from("empty parameter")));
        }
        let mut out = Vec::new();
        for e in &pi.entries {
            self.block(&e.block)?;
            out.push((HandleKind::Pair, e.block.clone(), e.block.clone(), 0.0));
        }
        for (i, a) in pi.entries.iter().enumerate() {
            for (j, b) in pi.entries.iter().enumerate() {
                if i != j {
                    out.push((HandleKind::Pair, a.block.clone(), b.block.clone(), a.twist - b.twist));
                }
            }
        }
        Ok(out)
    }

    /// The Asai factor expanded over entries: one diagonal term per entry
    /// shifted by twice the twist, plus one conjugate-pair term per
    /// unordered pair shifted by the twist sum.
    fn asai_terms(&self, pi: &TemperedParamGL) -> Result<Vec<Term>> {
        if pi.entries.is_empty() {
            return Err(Error::Invalid(String::from("empty parameter")));
        }
        let mut out = Vec::new();
        for e in &pi.entries {
            self.block(&e.block)?;
            out.push((HandleKind::Asai, e.block.clone(), e.block.clone(), 2.0 * e.twist));
        }
        for (i, a) in pi.entries.iter().enumerate() {
            for b in pi.entries.iter().skip(i + 1) {
                out.push((HandleKind::ConjPair, a.block.clone(), b.block.clone(), a.twist + b.twist));
            }
        }
        Ok(out)
    }

    fn assemble(&self, terms: &[Term]) -> Result<Assembly> {
        if self.is_formal() {
            let mut p = FormalProduct::one();
            for (kind, a, b, shift) in terms {
                p.push(*kind, a, b, *shift, 1);
            }
            return Ok(Assembly::Formal(p));
        }
        let mut acc: Option<GammaFactor> = None;
        for (kind, a, b, shift) in terms {
            let h = self.handle(*kind, a, b)?.shift_imaginary(*shift)?;
            acc = Some(match acc {
                None => h,
                Some(g) => g.mul(&h)?,
            });
        }
        Ok(Assembly::Factor(acc.expect("terms nonempty")))
    }

    /// Assembled adjoint factor of a linear-side parameter.
    pub fn adjoint_gamma(&self, pi: &TemperedParamGL) -> Result<Assembly> {
        self.assemble(&self.adjoint_terms(pi)?)
    }

    /// Assembled Asai factor of a linear-side parameter.
    pub fn asai_gamma(&self, pi: &TemperedParamGL) -> Result<Assembly> {
        self.assemble(&self.asai_terms(pi)?)
    }

    /// Adjoint factor of a unitary-side parameter: the adjoint/Asai
    /// quotient of its base change. The stored entries already realize the
    /// twisted base change, so the quotient applies to them verbatim. The
    /// vanishing order at the center must be nonnegative for tempered
    /// input; a pole signals an inconsistent γ table.
    pub fn adjoint_gamma_u(&self, sigma: &TemperedParamU) -> Result<Assembly> {
        let n = self.rank_u(sigma)?;
        let img = self.bc(sigma, n)?;
        let ad = self.assemble(&self.adjoint_terms(&img.param)?)?;
        let asai = self.assemble(&self.asai_terms(&img.param)?)?;
        match (ad, asai) {
            (Assembly::Formal(a), Assembly::Formal(b)) => Ok(Assembly::Formal(a.mul(&b.inverse()))),
            (Assembly::Factor(a), Assembly::Factor(b)) => {
                let q = a.mul(&b.inverse())?;
                match q.star_zero() {
                    Err(Error::PoleAtZero) => Err(Error::Invalid(String::from(
                        "adjoint/Asai quotient has a pole at the center (inconsistent gamma table)",
                    ))),
                    // value-representability issues surface when the caller
                    // asks for the value; the order is already nonnegative
                    _ => Ok(Assembly::Factor(q)),
                }
            }
            _ => unreachable!("one registry produces one assembly kind"),
        }
    }

    /// The combinatorial central vanishing order of the Asai factor in
    /// general position: one per minus-type entry at twist zero plus one
    /// per unordered pair `{i,j}` with `τ_j ≃ τ_i*` and `x_i + x_j = 0`.
    /// On p-adic data the discrete twist grid can create extra periodic
    /// coincidences (same-class twist sums landing on a half turn); those
    /// configurations fall outside the predictor's domain.
    pub fn asai_order_predicted(&self, pi: &TemperedParamGL) -> Result<i64> {
        if pi.entries.is_empty() {
            return Err(Error::Invalid(String::from("empty parameter")));
        }
        let mut order = 0i64;
        for e in &pi.entries {
            let b = self.block(&e.block)?;
            if b.asai_type == AsaiType::Minus && OrdF64::new(e.twist) == OrdF64::new(0.0) {
                order += 1;
            }
        }
        for (i, a) in pi.entries.iter().enumerate() {
            for b in pi.entries.iter().skip(i + 1) {
                let star = &self.block(&a.block)?.star;
                if *star == b.block && OrdF64::new(a.twist + b.twist) == OrdF64::new(0.0) {
                    order += 1;
                }
            }
        }
        Ok(order)
    }

    // -- densities, degrees, phases ----------------------------------------------

    /// Plancherel density of a linear-side parameter over the central
    /// quotient: `λ^{−n²}·γ*(0, Ad-bar)/|S_π|`, where the reduced adjoint
    /// removes one trivial-character line from the assembled adjoint.
    pub fn plancherel_density(&self, pi: &TemperedParamGL) -> Result<Density> {
        let s_order = self.s_group_order_gl(pi)?;
        let n = self.rank_gl(pi)? as i64;
        if self.is_formal() {
            return Ok(Density::Formula(format!(
                "lambda^(-{}) * gammastar(0, Ad-bar) / {}",
                n * n,
                s_order
            )));
        }
        let field = self.field.as_ref().unwrap();
        let ad = self.adjoint_gamma(pi)?.factor()?.clone();
        let one_f = match field {
            FieldData::Archimedean { .. } => CharData::real_trivial(),
            FieldData::Padic { .. } => CharData::padic_trivial(),
        };
        let bar = ad.mul(&tate_gamma(&one_f, field)?.inverse())?;
        let lam = lambda_factor(field)?;
        let sz = bar.scale_exact(&lam.pow(-(n * n))).star_zero()?;
        let value = sz.value / s_order as f64;
        let exact = match i64::try_from(s_order) {
            Ok(s) => sz.exact.map(|e| e.scale(&rat(1, s))),
            Err(_) => None,
        };
        Ok(Density::Value { star_order: sz.order, value, exact })
    }

    /// Formal degree of a discrete unitary-side parameter (anchors only):
    /// `|γ(0, Ad)| / |S_σ|`. A nonzero central order means the input is not
    /// discrete.
    pub fn formal_degree(&self, sigma: &TemperedParamU) -> Result<Degree> {
        self.check_u(sigma)?;
        if !sigma.gl.is_empty() {
            return Err(Error::Invalid(String::from(
                "formal degree needs a discrete parameter (anchors only)",
            )));
        }
        let s = self.s_group_order_u(sigma)?;
        if self.is_formal() {
            return Ok(Degree::Formula(format!("|gamma(0, Ad)| / {s}")));
        }
        let sz = self.adjoint_gamma_u(sigma)?.star_zero()?;
        if sz.order != 0 {
            return Err(Error::Invalid(format!(
                "adjoint factor vanishes to order {} at the center; the parameter is not discrete",
                sz.order
            )));
        }
        Ok(Degree::Value(sz.value.norm() / s as f64))
    }

    /// The normalizing phase of the regularized adjoint value, together
    /// with the sign solved from the definitional product
    /// `c = λ^{−n(n+1)/2}·c₁·ω(−1)^{1−n}·η(−1)^{n(n−1)²/2}` given the
    /// central sign `ω(−1)` (η(−1) is λ² by the quadratic ε identity).
    pub fn c_sigma_phase(&self, sigma: &TemperedParamU, omega_minus_one: i32) -> Result<SigmaPhase> {
        if omega_minus_one != 1 && omega_minus_one != -1 {
            return Err(Error::Invalid(String::from("central sign must be +1 or -1")));
        }
        let field = self
            .field
            .as_ref()
            .ok_or_else(|| Error::Invalid(String::from("phases need an explicit registry")))?;
        let n = self.rank_u(sigma)? as i64;
        let sz = self.adjoint_gamma_u(sigma)?.star_zero()?;
        if sz.value.norm() == 0.0 {
            return Err(Error::Invalid(String::from(
                "vanishing regularized adjoint value; no phase to normalize",
            )));
        }
        let c = (sz.value / sz.value.norm()).conj();
        let lam = lambda_factor(field)?;
        // λ⁴ = 1, so the inverse η(−1)-power folds into a positive one
        let unit = lam.pow(n * (n + 1) / 2 + n * (n - 1) * (n - 1)).to_c64();
        let omega_pow = if (n - 1) % 2 == 0 { 1.0 } else { omega_minus_one as f64 };
        let c1 = c * unit * omega_pow;
        if (c1.norm() - 1.0).abs() > 1e-9 || c1.im.abs() > 1e-9 {
            return Err(Error::Invalid(String::from(
                "phase relation did not close to a sign; inconsistent input data",
            )));
        }
        Ok(SigmaPhase { c, c1 })
    }
}

/// The rank-one normalization constant
/// `(η′((−1)^{n+1}τ)·λ)^{n(n+1)/2}·|τ|_E^{n(n−1)/4}·η(disc)^n` for a
/// hermitian space of dimension `n` with discriminant sign `±1` and a
/// trace-zero element `τ`. The fixed unstable character is the weight-one
/// unitary character on the complex side and the unramified quadratic
/// extension on the p-adic side (where it sees only the valuation).
/// Ramified p-adic data is not supported.
pub fn kappa_v(n: u32, disc_sign: i32, field: &FieldData, tau: TauChoice) -> Result<KappaV> {
    if n == 0 {
        return Err(Error::Invalid(String::from("the hermitian space has positive dimension")));
    }
    if disc_sign != 1 && disc_sign != -1 {
        return Err(Error::Invalid(String::from("discriminant sign must be +1 or -1")));
    }
    let lam = lambda_factor(field)?.to_c64();
    let e = (n as i64) * (n as i64 + 1) / 2;
    let (eta_tau, abs_e_tau): (C64, f64) = match (field, tau) {
        (FieldData::Archimedean { .. }, TauChoice::Imag { t }) => {
            if t == 0.0 {
                return Err(Error::Invalid(String::from("the trace-zero element is nonzero")));
            }
            // η′(z) = z/|z|; the argument (−1)^{n+1}·i·t is purely imaginary
            let sgn = if t > 0.0 { 1.0 } else { -1.0 };
            let flip = if n % 2 == 0 { -1.0 } else { 1.0 };
            (C64::new(0.0, sgn * flip), t * t)
        }
        (FieldData::Padic { ext: ExtKind::Ramified, .. }, _) => {
            return Err(Error::Invalid(String::from(
                "ramified extensions are outside the supported catalogue",
            )));
        }
        (FieldData::Padic { q, .. }, TauChoice::Valuation { v }) => {
            // (−1)^{n+1} is a unit, invisible to the unramified character
            let sgn = if v % 2 == 0 { 1.0 } else { -1.0 };
            (C64::new(sgn, 0.0), (*q as f64).powf(-2.0 * v as f64))
        }
        _ => {
            return Err(Error::Invalid(String::from(
                "trace-zero data does not match the field kind",
            )));
        }
    };
    let phase = (eta_tau * lam).powi(e as i32);
    let modulus = abs_e_tau.powf((n as f64) * (n as f64 - 1.0) / 4.0);
    let disc = if disc_sign == 1 { 1.0 } else { (-1.0f64).powi(n as i32) };
    let value = phase * modulus * disc;
    debug_assert!((phase.norm() - 1.0).abs() < 1e-12, "phase part must be a root of unity");
    Ok(KappaV { value, modulus })
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
