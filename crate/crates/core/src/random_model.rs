//! Type sequences `ω`, truncated random measures `η^ω`, the small/big split
//! and Monte Carlo sampling from the infinite convolution.
//!
//! Every random draw comes from a ChaCha stream keyed by
//! `(seed, purpose, index)`, and draw `i` of a stream is read at a fixed
//! word offset. Results therefore do not depend on scheduling, and a
//! longer prefix extends a shorter one.

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::type_model::{AtomicMeasure, RandomModel};

/// Default cap on the number of atoms of a product before coalescing.
pub const DEFAULT_ATOM_CAP: u128 = 1_000_000;

/// Hard limit on the sampled depth of a single Monte Carlo draw.
pub const MAX_SAMPLE_DEPTH: usize = 100_000;

/// Identifies an independent random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub purpose: &'static str,
    pub index: u64,
}

impl StreamKey {
    pub fn new(seed: u64, purpose: &'static str, index: u64) -> Self {
        StreamKey { seed, purpose, index }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        let tag = self.purpose.as_bytes();
        let n = tag.len().min(24);
        key[8..8 + n].copy_from_slice(&tag[..n]);
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(self.index);
        rng
    }

    /// The `i`-th uniform variate in `[0, 1)` of this stream.
    pub fn uniform_at(&self, i: u64) -> f64 {
        let mut rng = self.rng();
        rng.set_word_pos(2 * i as u128);
        unit_f64(rng.next_u64())
    }

    /// Uniform variates `[start, start + len)`.
    pub fn uniforms(&self, start: u64, len: usize) -> Vec<f64> {
        let mut rng = self.rng();
        rng.set_word_pos(2 * start as u128);
        (0..len).map(|_| unit_f64(rng.next_u64())).collect()
    }
}

fn unit_f64(x: u64) -> f64 {
    (x >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// A finite prefix `(ω_1, …, ω_n)` of a type sequence, as indices into a
/// model's type list. Prefixes drawn with [`sample_types`] remember their
/// stream and can be extended consistently.
#[derive(Debug, Clone, PartialEq)]
pub struct OmegaPrefix {
    blocks: Vec<usize>,
    key: Option<StreamKey>,
}

impl OmegaPrefix {
    /// A hand-built prefix; it cannot be extended.
    pub fn from_blocks(blocks: Vec<usize>) -> Self {
        OmegaPrefix { blocks, key: None }
    }

    pub fn blocks(&self) -> &[usize] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn key(&self) -> Option<StreamKey> {
        self.key
    }

    /// Extends the prefix to length `n` from its own stream.
    pub fn extend_to(&mut self, model: &impl RandomModel, n: usize) -> Result<()> {
        if n <= self.blocks.len() {
            return Ok(());
        }
        let Some(key) = self.key else {
            return invalid(format!(
                "prefix of length {} has no stream to extend to length {n}",
                self.blocks.len()
            ));
        };
        let us = key.uniforms(self.blocks.len() as u64, n - self.blocks.len());
        self.blocks.extend(us.into_iter().map(|u| model.type_from_uniform(u)));
        Ok(())
    }

    /// The first `n` blocks, extending if needed.
    pub fn prefix(&self, model: &impl RandomModel, n: usize) -> Result<OmegaPrefix> {
        let mut out = self.clone();
        out.extend_to(model, n)?;
        out.blocks.truncate(n);
        Ok(out)
    }
}

/// `n` i.i.d. types drawn from the model's law.
pub fn sample_types(model: &impl RandomModel, key: StreamKey, n: usize) -> Result<OmegaPrefix> {
    if n == 0 {
        return invalid("omega prefix length must be at least 1");
    }
    let mut omega = OmegaPrefix { blocks: Vec::new(), key: Some(key) };
    omega.extend_to(model, n)?;
    Ok(omega)
}

/// Which factors `n` (one-based) of `η^ω` take part in a product.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactorFilter {
    All,
    /// `s | n`.
    Small(usize),
    /// `s ∤ n`.
    Big(usize),
}

impl FactorFilter {
    pub fn includes(&self, n: usize) -> bool {
        match *self {
            FactorFilter::All => true,
            FactorFilter::Small(s) => n.is_multiple_of(s),
            FactorFilter::Big(s) => !n.is_multiple_of(s),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            FactorFilter::Small(s) | FactorFilter::Big(s) if s < 2 => {
                invalid("split period s must be at least 2")
            }
            _ => Ok(()),
        }
    }
}

/// How far an infinite product is followed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Truncation {
    /// Exactly the blocks present in the prefix.
    Prefix,
    /// Extend until the discarded tail has diameter bound below `tol`.
    Tail(f64),
}

/// Scaling `λ(ω|_{n−1})` of every factor `n = 1..=len`.
pub fn prefix_scalings(model: &impl RandomModel, blocks: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(blocks.len());
    let mut scale = 1.0;
    for &b in blocks {
        out.push(scale);
        scale *= model.contraction(b);
    }
    out
}

/// Depth `n` after which the tail `Σ_{k>n} λ(ω|_{k−1}) |η(ω_k)|` is below
/// `tol`, using the geometric bound `T·λ(ω|_n)/(1 − λ_sup)`.
pub fn tail_depth(model: &impl RandomModel, omega: &mut OmegaPrefix, tol: f64) -> Result<usize> {
    if !(tol > 0.0) {
        return invalid("tail tolerance must be positive");
    }
    let bound = model.translation_bound() / (1.0 - model.max_contraction());
    let mut scale = 1.0;
    let mut n = 0;
    while scale * bound >= tol {
        if n >= MAX_SAMPLE_DEPTH {
            return Err(Error::CapExceeded { what: "truncation depth", needed: n as u128 + 1, cap: MAX_SAMPLE_DEPTH as u128, advice: None });
        }
        omega.extend_to(model, n + 1)?;
        scale *= model.contraction(omega.blocks[n]);
        n += 1;
    }
    Ok(n)
}

/// The finite convolution `⍟_{n ≤ |ω|, n ∈ filter} [λ(ω|_{n−1})]_♯ η(ω_n)`.
pub fn filtered_atoms(model: &impl RandomModel, omega: &OmegaPrefix, filter: FactorFilter, cap: u128) -> Result<AtomicMeasure> {
    filter.validate()?;
    let scalings = prefix_scalings(model, &omega.blocks);
    let mut acc = AtomicMeasure::dirac(0.0);
    for (n, (&b, &scale)) in omega.blocks.iter().zip(&scalings).enumerate() {
        if !filter.includes(n + 1) {
            continue;
        }
        let factor = model.eta(b)?.scale_push(scale);
        acc = acc.convolve(&factor, cap).map_err(with_sampler_advice)?;
    }
    Ok(acc)
}

fn with_sampler_advice(e: Error) -> Error {
    match e {
        Error::CapExceeded { what, needed, cap, .. } => Error::CapExceeded {
            what,
            needed,
            cap,
            advice: Some("use sample_points for Monte Carlo draws instead"),
        },
        other => other,
    }
}

/// `η^ω` truncated to the prefix.
pub fn eta_omega_atoms(model: &impl RandomModel, omega: &OmegaPrefix) -> Result<AtomicMeasure> {
    filtered_atoms(model, omega, FactorFilter::All, DEFAULT_ATOM_CAP)
}

/// `(η_small, η_big)`: factors with `s | n` and with `s ∤ n`, each keeping
/// the original prefix scalings.
pub fn split_small_big(model: &impl RandomModel, omega: &OmegaPrefix, s: usize) -> Result<(AtomicMeasure, AtomicMeasure)> {
    Ok((
        filtered_atoms(model, omega, FactorFilter::Small(s), DEFAULT_ATOM_CAP)?,
        filtered_atoms(model, omega, FactorFilter::Big(s), DEFAULT_ATOM_CAP)?,
    ))
}

fn pick_atom(measure: &AtomicMeasure, u: f64) -> f64 {
    let atoms = measure.atoms();
    let mut acc = 0.0;
    for &(x, w) in atoms {
        acc += w;
        if u < acc {
            return x;
        }
    }
    atoms[atoms.len() - 1].0
}

/// `count` independent draws from the (filtered) random measure `η^ω`.
///
/// Draw `d` uses its own stream `(seed, "points", d)`, so results are
/// identical whether draws run serially or in parallel.
pub fn sample_points(
    model: &impl RandomModel,
    omega: &OmegaPrefix,
    trunc: Truncation,
    filter: FactorFilter,
    count: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    filter.validate()?;
    let mut omega = omega.clone();
    let depth = match trunc {
        Truncation::Prefix => omega.len(),
        Truncation::Tail(tol) => tail_depth(model, &mut omega, tol)?,
    };
    let blocks = &omega.blocks[..depth];
    let scalings = prefix_scalings(model, blocks);
    let mut factors = Vec::new();
    for (n, (&b, &scale)) in blocks.iter().zip(&scalings).enumerate() {
        if filter.includes(n + 1) {
            factors.push((model.eta(b)?, scale));
        }
    }
    let out = (0..count as u64)
        .map(|d| {
            let us = StreamKey::new(seed, "points", d).uniforms(0, factors.len());
            factors.iter().zip(us).map(|((eta, scale), u)| scale * pick_atom(eta, u)).sum()
        })
        .collect();
    Ok(out)
}
