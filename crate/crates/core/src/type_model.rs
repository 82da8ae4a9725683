//! Types of blocks of `N` symbols, the typed random model they induce, and
//! the finite atomic measures every other module computes with.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};

use crate::error::{check_cap, invalid, Error, Result};
use crate::ifs_core::{Ifs1, Word};

/// Default coalescing tolerance, relative to the support diameter.
pub const COALESCE_REL_TOL: f64 = 1e-12;

/// Probabilities below this are reported as underflowed.
pub const UNDERFLOW_THRESHOLD: f64 = 1e-300;

/// Cap on the number of types of a typed system.
pub const DEFAULT_TYPE_CAP: u128 = 1_000_000;

/// Cap on the number of words enumerated for a single type.
pub const DEFAULT_WORD_CAP: u128 = 10_000_000;

/// A finite probability measure on the line: sorted, coalesced atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomicMeasure {
    atoms: Vec<(f64, f64)>,
    tol: f64,
}

/// Result of comparing two atomic measures atom by atom.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Comparison {
    /// Largest weight discrepancy; unmatched atoms count with their full weight.
    pub max_weight_diff: f64,
    pub max_position_diff: f64,
    pub unmatched: usize,
}

impl AtomicMeasure {
    /// Builds a measure from raw atoms, merging atoms closer than
    /// `1e−12·diameter`.
    pub fn new(atoms: Vec<(f64, f64)>) -> Result<Self> {
        Self::with_rel_tol(atoms, COALESCE_REL_TOL)
    }

    pub fn with_rel_tol(mut atoms: Vec<(f64, f64)>, rel_tol: f64) -> Result<Self> {
        if atoms.is_empty() {
            return invalid("an atomic measure needs at least one atom");
        }
        if let Some(&(x, w)) = atoms.iter().find(|(x, w)| !x.is_finite() || !(*w > 0.0) || !w.is_finite()) {
            return invalid(format!("bad atom ({x}, {w})"));
        }
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        if (total - 1.0).abs() > 1e-10 {
            return invalid(format!("atom weights sum to {total}"));
        }
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        let diameter = atoms[atoms.len() - 1].0 - atoms[0].0;
        let tol = rel_tol * diameter;
        Ok(AtomicMeasure { atoms: coalesce_sorted(atoms, tol), tol })
    }

    pub fn dirac(x: f64) -> Self {
        AtomicMeasure { atoms: vec![(x, 1.0)], tol: 0.0 }
    }

    /// Uniform measure on a multiset of points.
    pub fn uniform(points: &[f64]) -> Result<Self> {
        let w = 1.0 / points.len().max(1) as f64;
        AtomicMeasure::new(points.iter().map(|&x| (x, w)).collect())
    }

    /// `Σ w_k ν_k`.
    pub fn mixture(parts: &[(f64, &AtomicMeasure)]) -> Result<Self> {
        let atoms = parts
            .iter()
            .flat_map(|(w, m)| m.atoms.iter().map(move |&(x, a)| (x, w * a)))
            .filter(|a| a.1 > 0.0)
            .collect();
        AtomicMeasure::new(atoms)
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Absolute coalescing tolerance used at construction.
    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.1).sum()
    }

    pub fn mean(&self) -> f64 {
        self.atoms.iter().map(|&(x, w)| x * w).sum()
    }

    pub fn variance(&self) -> f64 {
        let mu = self.mean();
        self.atoms.iter().map(|&(x, w)| w * (x - mu) * (x - mu)).sum()
    }

    pub fn min(&self) -> f64 {
        self.atoms[0].0
    }

    pub fn max(&self) -> f64 {
        self.atoms[self.atoms.len() - 1].0
    }

    pub fn diameter(&self) -> f64 {
        self.max() - self.min()
    }

    /// `ν((−∞, x])`.
    pub fn cdf(&self, x: f64) -> f64 {
        let k = self.atoms.partition_point(|a| a.0 <= x);
        self.atoms[..k].iter().map(|a| a.1).sum()
    }

    pub fn translate(&self, by: f64) -> Self {
        AtomicMeasure { atoms: self.atoms.iter().map(|&(x, w)| (x + by, w)).collect(), tol: self.tol }
    }

    /// Push-forward under `x ↦ r·x` for `r > 0`.
    pub fn scale_push(&self, r: f64) -> Self {
        AtomicMeasure { atoms: self.atoms.iter().map(|&(x, w)| (r * x, w)).collect(), tol: self.tol * r }
    }

    /// Convolution, with the product atom count checked against `cap`.
    pub fn convolve(&self, other: &AtomicMeasure, cap: u128) -> Result<Self> {
        let needed = self.len() as u128 * other.len() as u128;
        check_cap("convolution atoms", needed, cap)?;
        let mut atoms = Vec::with_capacity(needed as usize);
        for &(x, a) in &self.atoms {
            for &(y, b) in &other.atoms {
                atoms.push((x + y, a * b));
            }
        }
        renormalised(atoms)
    }

    /// Atom-by-atom comparison after sorting: positions within the larger
    /// of the two coalescing tolerances (and `pos_tol`) are matched.
    pub fn compare(&self, other: &AtomicMeasure, pos_tol: f64) -> Comparison {
        let tol = pos_tol.max(self.tol).max(other.tol);
        let (a, b) = (&self.atoms, &other.atoms);
        let (mut i, mut j) = (0, 0);
        let mut out = Comparison { max_weight_diff: 0.0, max_position_diff: 0.0, unmatched: 0 };
        while i < a.len() || j < b.len() {
            if i < a.len() && j < b.len() && (a[i].0 - b[j].0).abs() <= tol {
                out.max_weight_diff = out.max_weight_diff.max((a[i].1 - b[j].1).abs());
                out.max_position_diff = out.max_position_diff.max((a[i].0 - b[j].0).abs());
                i += 1;
                j += 1;
            } else if j >= b.len() || (i < a.len() && a[i].0 < b[j].0) {
                out.max_weight_diff = out.max_weight_diff.max(a[i].1);
                out.unmatched += 1;
                i += 1;
            } else {
                out.max_weight_diff = out.max_weight_diff.max(b[j].1);
                out.unmatched += 1;
                j += 1;
            }
        }
        out
    }
}

fn coalesce_sorted(atoms: Vec<(f64, f64)>, tol: f64) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(atoms.len());
    let mut anchor = f64::NEG_INFINITY;
    for (x, w) in atoms {
        match out.last_mut() {
            Some(last) if x - anchor <= tol => last.1 += w,
            _ => {
                anchor = x;
                out.push((x, w));
            }
        }
    }
    out
}

/// Rescales products of weights back to exact unit mass before validation;
/// long products drift by a few ulps.
fn renormalised(mut atoms: Vec<(f64, f64)>) -> Result<AtomicMeasure> {
    let total: f64 = atoms.iter().map(|a| a.1).sum();
    if (total - 1.0).abs() > 1e-10 {
        return invalid(format!("atom weights sum to {total}"));
    }
    for a in &mut atoms {
        a.1 /= total;
    }
    AtomicMeasure::new(atoms)
}

/// A multiplicity vector `(N_1, …, N_m)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TypeVec {
    pub counts: Vec<usize>,
}

impl TypeVec {
    pub fn new(counts: Vec<usize>) -> Self {
        TypeVec { counts }
    }

    /// Block length `N = Σ N_k`.
    pub fn block_len(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn alphabet(&self) -> usize {
        self.counts.len()
    }
}

impl std::fmt::Display for TypeVec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.counts.iter().map(|c| c.to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

/// Symbol frequencies of a word over an alphabet of size `m`.
pub fn type_of(w: &Word, m: usize) -> Result<TypeVec> {
    let mut counts = vec![0; m];
    for &s in w.symbols() {
        if s >= m {
            return invalid(format!("symbol {s} out of range for {m} maps"));
        }
        counts[s] += 1;
    }
    Ok(TypeVec { counts })
}

/// `C(N + m − 1, m − 1)`.
pub fn type_count(m: usize, n: usize) -> BigUint {
    binomial(n + m - 1, m - 1)
}

pub fn binomial(n: usize, k: usize) -> BigUint {
    if k > n {
        return BigUint::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigUint::one();
    for i in 0..k {
        acc *= n - i;
        acc /= i + 1;
    }
    acc
}

/// All types of length `m` summing to `n`, in ascending lexicographic order.
pub fn enumerate_types(m: usize, n: usize) -> Vec<TypeVec> {
    fn rec(m: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<TypeVec>) {
        if cur.len() + 1 == m {
            cur.push(left);
            out.push(TypeVec { counts: cur.clone() });
            cur.pop();
            return;
        }
        for c in 0..=left {
            cur.push(c);
            rec(m, left - c, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if m > 0 {
        rec(m, n, &mut Vec::with_capacity(m), &mut out);
    }
    out
}

/// `N! / (N_1! ⋯ N_m!)`, exact.
pub fn multiplicity(tau: &TypeVec) -> BigUint {
    let mut acc = BigUint::one();
    let mut so_far = 0;
    for &c in &tau.counts {
        so_far += c;
        acc *= binomial(so_far, c);
    }
    acc
}

fn big_ln(x: &BigUint) -> f64 {
    match x.to_f64() {
        Some(v) if v.is_finite() => v.ln(),
        _ => {
            let bits = x.bits();
            let shift = bits - 64;
            let top = (x >> shift).to_f64().unwrap_or(f64::MAX);
            top.ln() + shift as f64 * std::f64::consts::LN_2
        }
    }
}

/// `m(τ) p_1^{N_1} ⋯ p_m^{N_m}`, evaluated in log space.
pub fn type_probability(tau: &TypeVec, p: &[f64]) -> Result<f64> {
    if tau.counts.len() != p.len() {
        return invalid(format!("type has {} entries but p has {}", tau.counts.len(), p.len()));
    }
    let log_word: f64 = tau.counts.iter().zip(p).map(|(&c, &pk)| c as f64 * pk.ln()).sum();
    Ok((big_ln(&multiplicity(tau)) + log_word).exp())
}

/// Per-type data of a typed system.
#[derive(Debug, Clone, PartialEq)]
pub struct TypeInfo {
    pub tau: TypeVec,
    pub q: f64,
    pub multiplicity: BigUint,
    pub multiplicity_f64: f64,
    pub lambda: f64,
    /// `q < 1e−300`: the probability is not representable faithfully.
    pub underflow: bool,
}

/// A random model: finitely many (or lazily many) types drawn i.i.d.,
/// each carrying an atomic measure and a contraction.
pub trait RandomModel: Sync {
    fn type_count(&self) -> usize;
    fn probability(&self, t: usize) -> f64;
    fn contraction(&self, t: usize) -> f64;
    /// `m(τ)` as a float (may exceed integer range for retyped models).
    fn map_count(&self, t: usize) -> f64;
    fn eta(&self, t: usize) -> Result<AtomicMeasure>;
    /// Bound on `|x|` over atoms of every `η(τ)`.
    fn translation_bound(&self) -> f64;
    fn max_contraction(&self) -> f64;
    /// Inverse CDF: the type selected by a uniform variate in `[0, 1)`.
    fn type_from_uniform(&self, u: f64) -> usize;
}

/// The model induced by blocks of length `N` of a fixed system.
#[derive(Debug)]
pub struct TypedSystem {
    base: Ifs1,
    block: usize,
    infos: Vec<TypeInfo>,
    cumulative: Vec<f64>,
    etas: Vec<OnceLock<Result<AtomicMeasure>>>,
    word_cap: u128,
}

impl TypedSystem {
    pub fn new(ifs: &Ifs1, block: usize) -> Result<Self> {
        Self::with_caps(ifs, block, DEFAULT_TYPE_CAP, DEFAULT_WORD_CAP)
    }

    pub fn with_caps(ifs: &Ifs1, block: usize, type_cap: u128, word_cap: u128) -> Result<Self> {
        if block == 0 {
            return invalid("block length N must be at least 1");
        }
        let m = ifs.len();
        let count = type_count(m, block).to_u128().unwrap_or(u128::MAX);
        check_cap("types", count, type_cap)?;
        let ratios = ifs.ratios();
        let infos: Vec<TypeInfo> = enumerate_types(m, block)
            .into_iter()
            .map(|tau| {
                let q = type_probability(&tau, ifs.weights())?;
                let mult = multiplicity(&tau);
                let lambda = tau.counts.iter().zip(&ratios).map(|(&c, &l)| l.powi(c as i32)).product();
                Ok(TypeInfo {
                    multiplicity_f64: mult.to_f64().unwrap_or(f64::INFINITY),
                    multiplicity: mult,
                    q,
                    lambda,
                    underflow: q < UNDERFLOW_THRESHOLD,
                    tau,
                })
            })
            .collect::<Result<_>>()?;
        let mut acc = 0.0;
        let cumulative = infos
            .iter()
            .map(|i| {
                acc += i.q;
                acc
            })
            .collect();
        let etas = (0..infos.len()).map(|_| OnceLock::new()).collect();
        Ok(TypedSystem { base: ifs.clone(), block, infos, cumulative, etas, word_cap })
    }

    pub fn base(&self) -> &Ifs1 {
        &self.base
    }

    pub fn block_len(&self) -> usize {
        self.block
    }

    pub fn infos(&self) -> &[TypeInfo] {
        &self.infos
    }

    pub fn info(&self, t: usize) -> &TypeInfo {
        &self.infos[t]
    }

    /// Index of a type vector, if it belongs to this system.
    pub fn index_of(&self, tau: &TypeVec) -> Option<usize> {
        self.infos.binary_search_by(|i| i.tau.cmp(tau)).ok()
    }

    /// `ψ_j^τ(0)` for every word of type `t`, as a multiset in
    /// lexicographic word order.
    pub fn translations(&self, t: usize) -> Result<Vec<f64>> {
        let info = &self.infos[t];
        check_cap(
            "words of one type",
            info.multiplicity.to_u128().unwrap_or(u128::MAX),
            self.word_cap,
        )?;
        let ratios = self.base.ratios();
        let trans = self.base.translations();
        let mut counts = info.tau.counts.clone();
        Ok(multiset_points(&mut counts, &ratios, &trans))
    }

    /// Total-mass and `Σ m(τ) = m^N` bookkeeping as exact integers.
    pub fn total_multiplicity(&self) -> BigUint {
        self.infos.iter().map(|i| &i.multiplicity).sum()
    }

    pub fn simdim(&self) -> Result<f64> {
        let rows: Vec<(f64, f64, f64)> = self.infos.iter().map(|i| (i.q, i.multiplicity_f64, i.lambda)).collect();
        model_similarity_dimension(&rows)
    }
}

fn multiset_points(counts: &mut [usize], ratios: &[f64], trans: &[f64]) -> Vec<f64> {
    if counts.iter().all(|&c| c == 0) {
        return vec![0.0];
    }
    let mut out = Vec::new();
    for k in 0..counts.len() {
        if counts[k] == 0 {
            continue;
        }
        counts[k] -= 1;
        let rest = multiset_points(counts, ratios, trans);
        counts[k] += 1;
        out.extend(rest.into_iter().map(|r| trans[k] + ratios[k] * r));
    }
    out
}

fn inverse_cdf(cumulative: &[f64], u: f64) -> usize {
    let total = cumulative[cumulative.len() - 1];
    cumulative.partition_point(|&c| c <= u * total).min(cumulative.len() - 1)
}

impl RandomModel for TypedSystem {
    fn type_count(&self) -> usize {
        self.infos.len()
    }

    fn probability(&self, t: usize) -> f64 {
        self.infos[t].q
    }

    fn contraction(&self, t: usize) -> f64 {
        self.infos[t].lambda
    }

    fn map_count(&self, t: usize) -> f64 {
        self.infos[t].multiplicity_f64
    }

    fn eta(&self, t: usize) -> Result<AtomicMeasure> {
        self.etas[t]
            .get_or_init(|| self.translations(t).and_then(|pts| AtomicMeasure::uniform(&pts)))
            .clone()
    }

    fn translation_bound(&self) -> f64 {
        let l = self.base.ratio_max();
        self.base.translation_max() * (1.0 - l.powi(self.block as i32)) / (1.0 - l)
    }

    fn max_contraction(&self) -> f64 {
        self.infos.iter().map(|i| i.lambda).fold(0.0, f64::max)
    }

    fn type_from_uniform(&self, u: f64) -> usize {
        inverse_cdf(&self.cumulative, u)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RetypeKind {
    /// Atoms of the last block only.
    Small,
    /// Convolution of the first `s − 1` blocks, the last contributing only
    /// its contraction.
    Big,
}

/// The model on `s`-tuples of types. Tuples are indexed in mixed radix with
/// the first block as the most significant digit.
#[derive(Debug)]
pub struct RetypedSystem<'a> {
    base: &'a TypedSystem,
    s: usize,
    kind: RetypeKind,
    count: usize,
    cache: Mutex<HashMap<usize, AtomicMeasure>>,
    atom_cap: u128,
}

impl<'a> RetypedSystem<'a> {
    pub fn new(base: &'a TypedSystem, s: usize, kind: RetypeKind) -> Result<Self> {
        if s < 2 {
            return invalid("split period s must be at least 2");
        }
        let count = (base.type_count() as u128)
            .checked_pow(s as u32)
            .filter(|&c| c <= usize::MAX as u128)
            .ok_or_else(|| Error::Overflow(format!("{}^{s} retyped types", base.type_count())))?
            as usize;
        Ok(RetypedSystem { base, s, kind, count, cache: Mutex::new(HashMap::new()), atom_cap: 1_000_000 })
    }

    pub fn split(&self) -> usize {
        self.s
    }

    pub fn kind(&self) -> RetypeKind {
        self.kind
    }

    /// The tuple `(ω_1, …, ω_s)` of base types behind index `t`.
    pub fn tuple(&self, mut t: usize) -> Vec<usize> {
        let r = self.base.type_count();
        let mut out = vec![0; self.s];
        for slot in out.iter_mut().rev() {
            *slot = t % r;
            t /= r;
        }
        out
    }

    pub fn index_of(&self, tuple: &[usize]) -> usize {
        let r = self.base.type_count();
        tuple.iter().fold(0, |acc, &d| acc * r + d)
    }

    fn build_eta(&self, tuple: &[usize]) -> Result<AtomicMeasure> {
        match self.kind {
            RetypeKind::Small => self.base.eta(tuple[self.s - 1]),
            RetypeKind::Big => {
                let mut acc = AtomicMeasure::dirac(0.0);
                let mut scale = 1.0;
                for &w in &tuple[..self.s - 1] {
                    acc = acc.convolve(&self.base.eta(w)?.scale_push(scale), self.atom_cap)?;
                    scale *= self.base.contraction(w);
                }
                Ok(acc)
            }
        }
    }
}

impl RandomModel for RetypedSystem<'_> {
    fn type_count(&self) -> usize {
        self.count
    }

    fn probability(&self, t: usize) -> f64 {
        self.tuple(t).iter().map(|&w| self.base.probability(w)).product()
    }

    fn contraction(&self, t: usize) -> f64 {
        self.tuple(t).iter().map(|&w| self.base.contraction(w)).product()
    }

    fn map_count(&self, t: usize) -> f64 {
        let tuple = self.tuple(t);
        match self.kind {
            RetypeKind::Small => self.base.map_count(tuple[self.s - 1]),
            RetypeKind::Big => tuple[..self.s - 1].iter().map(|&w| self.base.map_count(w)).product(),
        }
    }

    fn eta(&self, t: usize) -> Result<AtomicMeasure> {
        if let Some(m) = self.cache.lock().expect("eta cache poisoned").get(&t) {
            return Ok(m.clone());
        }
        let m = self.build_eta(&self.tuple(t))?;
        self.cache.lock().expect("eta cache poisoned").insert(t, m.clone());
        Ok(m)
    }

    fn translation_bound(&self) -> f64 {
        let b = self.base.translation_bound();
        match self.kind {
            RetypeKind::Small => b,
            RetypeKind::Big => {
                let l = self.base.max_contraction();
                (0..self.s - 1).map(|k| b * l.powi(k as i32)).sum()
            }
        }
    }

    fn max_contraction(&self) -> f64 {
        self.base.max_contraction().powi(self.s as i32)
    }

    fn type_from_uniform(&self, mut u: f64) -> usize {
        // sequential conditional inverse CDF on the product law
        let cum = &self.base.cumulative;
        let total = cum[cum.len() - 1];
        let mut tuple = Vec::with_capacity(self.s);
        for _ in 0..self.s {
            let k = inverse_cdf(cum, u);
            let lo = if k == 0 { 0.0 } else { cum[k - 1] };
            let width = cum[k] - lo;
            u = if width > 0.0 { ((u * total - lo) / width).clamp(0.0, 1.0 - f64::EPSILON) } else { 0.0 };
            tuple.push(k);
        }
        self.index_of(&tuple)
    }
}

/// `Σ q log(1/m) / Σ q log λ` over `(q, m, λ)` rows.
pub fn model_similarity_dimension(rows: &[(f64, f64, f64)]) -> Result<f64> {
    if rows.is_empty() {
        return invalid("no types");
    }
    if let Some(r) = rows.iter().find(|r| !(r.1 >= 1.0) || !(r.2 > 0.0 && r.2 < 1.0) || !(r.0 >= 0.0)) {
        return invalid(format!("bad type row {r:?}"));
    }
    let total: f64 = rows.iter().map(|r| r.0).sum();
    if (total - 1.0).abs() > 1e-10 {
        return invalid(format!("type probabilities sum to {total}"));
    }
    if rows.iter().all(|r| r.1 == 1.0) {
        return invalid("degenerate model: every type has a single map (dimension 0)");
    }
    let num: f64 = rows.iter().map(|&(q, m, _)| -q * m.ln()).sum();
    let den: f64 = rows.iter().map(|&(q, _, l)| q * l.ln()).sum();
    Ok(num / den)
}

/// Similarity dimension of any model, enumerating its types under `cap`.
pub fn similarity_dimension_of(model: &impl RandomModel, cap: u128) -> Result<f64> {
    check_cap("types", model.type_count() as u128, cap)?;
    let rows: Vec<(f64, f64, f64)> = (0..model.type_count())
        .map(|t| (model.probability(t), model.map_count(t), model.contraction(t)))
        .collect();
    model_similarity_dimension(&rows)
}
